#include "vmedit/codec.hpp"

#include <algorithm>

#include "vmedit/ops.hpp"

namespace vmedit {

CodecKind codec_from_name(const std::string& name) {
    if (name == "identity") return CodecKind::identity;
    if (name == "avgpool2") return CodecKind::avgpool2;
    throw ConfigError("unknown codec '" + name + "'");
}

const char* codec_name(CodecKind k) {
    return k == CodecKind::identity ? "identity" : "avgpool2";
}

Tensor Codec::encode(const Tensor& frames) const {
    if (frames.rank() != 4) throw ShapeError("codec: expected [F,C,H,W]");
    Tensor x = frames;
    if (kind == CodecKind::avgpool2) x = avg_pool2(x);
    return add_scalar(scale(x, 2.0f), -1.0f);
}

Tensor Codec::decode(const Tensor& z) const {
    if (z.rank() != 4) throw ShapeError("codec: expected [F,C,H,W]");
    NoGradGuard ng;
    Tensor x = add_scalar(scale(z, 0.5f), 0.5f);
    if (kind == CodecKind::avgpool2) x = upsample_nearest2(x);
    std::vector<float> d(x.data().begin(), x.data().end());
    for (auto& v : d) v = std::clamp(v, 0.0f, 1.0f);
    return Tensor::from_data(x.shape(), std::move(d));
}

std::int64_t Codec::latent_height(std::int64_t pixel_h) const {
    return kind == CodecKind::avgpool2 ? pixel_h / 2 : pixel_h;
}

std::int64_t Codec::latent_width(std::int64_t pixel_w) const {
    return kind == CodecKind::avgpool2 ? pixel_w / 2 : pixel_w;
}

}  // namespace vmedit
