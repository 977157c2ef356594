#pragma once

#include "vmedit/ops.hpp"
#include "vmedit/params.hpp"
#include "vmedit/tensor.hpp"

namespace vmedit {

// Q/K/V/O projections for one attention layer. Key/value side reads
// `d_ctx`-wide tokens (equal to d_model for self attention).
struct AttentionWeights {
    Tensor wq, wk, wv, wo;
    int heads = 1;

    static AttentionWeights create(ParamRegistry& reg, const std::string& name, ParamGroup group,
                                   std::int64_t d_model, std::int64_t d_ctx, int heads);
};

// Token view of a latent clip: F frames of N = H*W tokens, d_model wide.
struct FrameTokens {
    Tensor data;  // [F, N, d_model]

    std::int64_t frames() const { return data.dim(0); }
    std::int64_t tokens() const { return data.dim(1); }
    std::int64_t width() const { return data.dim(2); }

    static FrameTokens from_chw(const Tensor& x);           // [F,C,H,W] -> tokens
    Tensor to_chw(std::int64_t h, std::int64_t w) const;    // lossless inverse
};

// softmax(Q K^T / sqrt(d_head)) V over the last two axes, batched; the
// head split divides the feature axis.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads);

// Per-frame attention; Q, K, V all from the frame's own tokens.
FrameTokens self_attention(const FrameTokens& x, const AttentionWeights& w);

// Queries from x, keys/values from a shared context [M, d_ctx].
FrameTokens cross_attention(const FrameTokens& x, const Tensor& context, const AttentionWeights& w);

// Attention across frames at each spatial index, with learned per-frame
// position embeddings [F, d_model] added to the inputs.
FrameTokens temporal_attention(const FrameTokens& x, const AttentionWeights& w, const Tensor& pos_emb);

// Keys/values for frame i come from concat(z_{i-1}, z_{i+1}) with clamped
// boundaries: frame 1 uses (z_1, z_2), frame F uses (z_{F-1}, z_F), F=1
// uses (z_1, z_1). With `literal_eq9` the value context is the printed
// asymmetric variant concat(z_{i-1}, z_i) instead.
FrameTokens recurrent_causal_attention(const FrameTokens& x, const AttentionWeights& w,
                                       bool literal_eq9 = false);

}  // namespace vmedit
