#pragma once

#include <vector>

#include "vmedit/attention.hpp"
#include "vmedit/params.hpp"

namespace vmedit {

// Sinusoidal position code for a scalar timestep, [dim], constant.
Tensor sinusoidal_timestep(int t, std::int64_t dim);

// Per-site control features, outermost resolution first.
struct ControlFeatures {
    std::vector<FrameTokens> sites;
};

// Hook the denoiser calls at each configured injection site. Site indices
// follow encoder order (0 = full latent resolution).
struct AdapterHook {
    virtual ~AdapterHook() = default;
    virtual int sites() const = 0;
    virtual FrameTokens apply(int site, const FrameTokens& z_u) = 0;
};

// One motion-attention block: self attention over control tokens, cross
// attention reading the denoiser stream (queries from control), temporal
// attention, then a zero-initialized projection added back residually.
struct MaBlock {
    AttentionWeights self_w;
    Tensor cross_wq, cross_wk, cross_wv;
    AttentionWeights temp_w;
    Tensor pos;  // [F, d] temporal position embedding
    Tensor wz;   // [d, d] zero at init
    int heads = 1;
    float gain = 1.0f;  // multiplier on the injected residual (see UNetConfig::branch_gain)

    static MaBlock create(ParamRegistry& reg, const std::string& name, std::int64_t d,
                          std::int64_t frames, int heads, float gain = 1.0f);

    FrameTokens apply(const FrameTokens& f_cn, const FrameTokens& z_u) const;
};

struct AdapterConfig {
    std::int64_t frames = 8;
    std::int64_t height = 16, width = 16;          // control raster resolution
    std::vector<std::int64_t> site_channels = {32, 64, 128};
    int heads = 4;
    std::int64_t prompt_width = 32;
    std::int64_t time_width = 32;
    float gain = 1.0f;
};

// Control branch plus one MaBlock per injection site. encode_control runs a
// small strided conv stack whose resolutions mirror the denoiser encoder.
class MotionAdapter : public AdapterHook {
public:
    MotionAdapter(ParamRegistry& reg, AdapterConfig cfg);

    ControlFeatures encode_control(const Tensor& raster, int t, const Tensor& prompt_embed) const;

    // Caches control features for the apply() calls of one forward pass.
    void begin_forward(const Tensor& raster, int t, const Tensor& prompt_embed);
    void clear();

    int sites() const override { return static_cast<int>(cfg_.site_channels.size()); }
    FrameTokens apply(int site, const FrameTokens& z_u) override;

    std::int64_t evaluations() const { return evals_; }
    const AdapterConfig& config() const { return cfg_; }
    const std::vector<MaBlock>& blocks() const { return blocks_; }

private:
    AdapterConfig cfg_;
    std::vector<Tensor> conv_w_, conv_b_;      // one conv per site
    std::vector<Tensor> time_w_, prompt_w_;    // per-site channel biases
    std::vector<MaBlock> blocks_;
    ControlFeatures cached_;
    bool has_cache_ = false;
    std::int64_t evals_ = 0;
};

}  // namespace vmedit
