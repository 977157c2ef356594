#pragma once

#include "vmedit/tensor.hpp"

namespace vmedit {

// Fixed (non-learned) pixel <-> latent mapping. `identity` keeps the pixel
// grid and only recenters values; `avgpool2` additionally halves the
// resolution (decode upsamples back, lossy).
enum class CodecKind { identity, avgpool2 };

CodecKind codec_from_name(const std::string& name);
const char* codec_name(CodecKind k);

struct Codec {
    CodecKind kind = CodecKind::identity;

    // frames in [0,1] -> latents in [-1,1]
    Tensor encode(const Tensor& frames) const;
    // latents -> frames clamped to [0,1]; no gradient tape
    Tensor decode(const Tensor& z) const;

    std::int64_t latent_height(std::int64_t pixel_h) const;
    std::int64_t latent_width(std::int64_t pixel_w) const;
};

}  // namespace vmedit
