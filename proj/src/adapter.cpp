#include "vmedit/adapter.hpp"

#include <algorithm>
#include <cmath>

namespace vmedit {

Tensor sinusoidal_timestep(int t, std::int64_t dim) {
    if (dim < 2 || dim % 2 != 0) throw ConfigError("timestep embedding width must be even, >= 2");
    std::int64_t half = dim / 2;
    std::vector<float> d(static_cast<std::size_t>(dim));
    for (std::int64_t i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                               static_cast<double>(half));
        d[i] = static_cast<float>(std::sin(t * freq));
        d[half + i] = static_cast<float>(std::cos(t * freq));
    }
    return Tensor::from_data({dim}, std::move(d));
}

MaBlock MaBlock::create(ParamRegistry& reg, const std::string& name, std::int64_t d,
                        std::int64_t frames, int heads, float gain) {
    ParamRegistry::Scope scope(reg, name);
    MaBlock b;
    b.heads = heads;
    b.gain = gain;
    b.self_w = AttentionWeights::create(reg, "self", ParamGroup::motion_adapter, d, d, heads);
    b.cross_wq = reg.create_xavier("cross.wq", ParamGroup::motion_adapter, {d, d}, d, d);
    b.cross_wk = reg.create_xavier("cross.wk", ParamGroup::motion_adapter, {d, d}, d, d);
    b.cross_wv = reg.create_xavier("cross.wv", ParamGroup::motion_adapter, {d, d}, d, d);
    b.temp_w = AttentionWeights::create(reg, "temporal", ParamGroup::motion_adapter, d, d, heads);
    b.pos = reg.create_const("temporal.pos", ParamGroup::motion_adapter, {frames, d}, 0.0f);
    b.wz = reg.create_const("out_proj", ParamGroup::motion_adapter, {d, d}, 0.0f);
    // tied query/key init, same reasoning as in the denoiser blocks
    std::copy(b.self_w.wq.data().begin(), b.self_w.wq.data().end(), b.self_w.wk.raw().begin());
    std::copy(b.temp_w.wq.data().begin(), b.temp_w.wq.data().end(), b.temp_w.wk.raw().begin());
    return b;
}

FrameTokens MaBlock::apply(const FrameTokens& f_cn, const FrameTokens& z_u) const {
    if (f_cn.data.shape() != z_u.data.shape())
        throw ShapeError("ma_block: control tokens " + shape_str(f_cn.data.shape()) +
                         " vs stream tokens " + shape_str(z_u.data.shape()));
    FrameTokens z1 = self_attention(f_cn, self_w);
    Tensor q = linear(z1.data, cross_wq, Tensor());
    Tensor k = linear(z_u.data, cross_wk, Tensor());
    Tensor v = linear(z_u.data, cross_wv, Tensor());
    Tensor z2 = scaled_dot_attention(q, k, v, heads);  // no output projection here
    FrameTokens z3 = temporal_attention({z2}, temp_w, pos);
    return {add(z_u.data, scale(linear(z3.data, wz, Tensor()), gain))};
}

MotionAdapter::MotionAdapter(ParamRegistry& reg, AdapterConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.site_channels.empty() && cfg_.frames < 1)
        throw ConfigError("motion adapter: empty config");
    ParamRegistry::Scope scope(reg, "adapter");
    std::int64_t cin = 3;
    for (std::size_t i = 0; i < cfg_.site_channels.size(); ++i) {
        std::int64_t co = cfg_.site_channels[i];
        std::string tag = "enc" + std::to_string(i);
        conv_w_.push_back(reg.create_xavier(tag + ".w", ParamGroup::control, {co, cin, 3, 3},
                                            cin * 9, co * 9));
        conv_b_.push_back(reg.create_const(tag + ".b", ParamGroup::control, {co}, 0.0f));
        time_w_.push_back(reg.create_xavier(tag + ".time", ParamGroup::control,
                                            {cfg_.time_width, co}, cfg_.time_width, co));
        prompt_w_.push_back(reg.create_xavier(tag + ".prompt", ParamGroup::control,
                                              {cfg_.prompt_width, co}, cfg_.prompt_width, co));
        blocks_.push_back(MaBlock::create(reg, "ma" + std::to_string(i), co, cfg_.frames,
                                          cfg_.heads, cfg_.gain));
        cin = co;
    }
}

ControlFeatures MotionAdapter::encode_control(const Tensor& raster, int t,
                                              const Tensor& prompt_embed) const {
    if (raster.rank() != 4 || raster.dim(0) != cfg_.frames || raster.dim(1) != 3 ||
        raster.dim(2) != cfg_.height || raster.dim(3) != cfg_.width)
        throw ConfigError("encode_control: raster " + shape_str(raster.shape()) +
                          " does not match configured [" + std::to_string(cfg_.frames) + ",3," +
                          std::to_string(cfg_.height) + "," + std::to_string(cfg_.width) + "]");
    if (prompt_embed.rank() != 2 || prompt_embed.dim(1) != cfg_.prompt_width)
        throw ConfigError("encode_control: prompt embed width mismatch");

    Tensor t_embed = reshape(sinusoidal_timestep(t, cfg_.time_width), {1, cfg_.time_width});
    std::int64_t m = prompt_embed.dim(0);
    Tensor pool = Tensor::full({1, m}, 1.0f / static_cast<float>(m));
    Tensor p_embed = matmul(pool, prompt_embed);  // [1, prompt_width]

    ControlFeatures out;
    Tensor h = raster;
    for (std::size_t i = 0; i < conv_w_.size(); ++i) {
        int stride = (i == 0) ? 1 : 2;
        h = conv2d(h, conv_w_[i], conv_b_[i], stride, 1);
        std::int64_t co = cfg_.site_channels[i];
        Tensor tb = reshape(linear(t_embed, time_w_[i], Tensor()), {co});
        Tensor pb = reshape(linear(p_embed, prompt_w_[i], Tensor()), {co});
        h = silu(add_channel_bias(add_channel_bias(h, tb), pb));
        out.sites.push_back(FrameTokens::from_chw(h));
    }
    return out;
}

void MotionAdapter::begin_forward(const Tensor& raster, int t, const Tensor& prompt_embed) {
    cached_ = encode_control(raster, t, prompt_embed);
    has_cache_ = true;
}

void MotionAdapter::clear() {
    cached_ = {};
    has_cache_ = false;
}

FrameTokens MotionAdapter::apply(int site, const FrameTokens& z_u) {
    if (!has_cache_) throw ContractError("motion adapter: apply() before begin_forward()");
    if (site < 0 || site >= sites()) throw ContractError("motion adapter: bad site index");
    ++evals_;
    return blocks_[static_cast<std::size_t>(site)].apply(cached_.sites[static_cast<std::size_t>(site)],
                                                         z_u);
}

}  // namespace vmedit
