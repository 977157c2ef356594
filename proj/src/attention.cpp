#include "vmedit/attention.hpp"

#include <cmath>

namespace vmedit {

AttentionWeights AttentionWeights::create(ParamRegistry& reg, const std::string& name,
                                          ParamGroup group, std::int64_t d_model,
                                          std::int64_t d_ctx, int heads) {
    if (heads < 1 || d_model % heads != 0)
        throw ConfigError("attention: width " + std::to_string(d_model) + " not divisible by heads " +
                          std::to_string(heads));
    ParamRegistry::Scope scope(reg, name);
    AttentionWeights w;
    w.heads = heads;
    w.wq = reg.create_xavier("wq", group, {d_model, d_model}, d_model, d_model);
    w.wk = reg.create_xavier("wk", group, {d_ctx, d_model}, d_ctx, d_model);
    w.wv = reg.create_xavier("wv", group, {d_ctx, d_model}, d_ctx, d_model);
    w.wo = reg.create_xavier("wo", group, {d_model, d_model}, d_model, d_model);
    return w;
}

FrameTokens FrameTokens::from_chw(const Tensor& x) { return {chw_to_tokens(x)}; }

Tensor FrameTokens::to_chw(std::int64_t h, std::int64_t w) const {
    return tokens_to_chw(data, h, w);
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
    if (q.dim(-1) != k.dim(-1) || k.shape() != v.shape())
        throw ShapeError("attention: Q " + shape_str(q.shape()) + " K " + shape_str(k.shape()) +
                         " V " + shape_str(v.shape()) + " widths inconsistent");
    std::int64_t d = q.dim(-1);
    if (heads < 1 || d % heads != 0)
        throw ConfigError("attention: width not divisible by heads");
    Tensor qh = split_heads(q, heads);
    Tensor kh = split_heads(k, heads);
    Tensor vh = split_heads(v, heads);
    float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(d / heads));
    Tensor logits = scale(matmul(qh, transpose_last2(kh)), inv_sqrt_d);
    Tensor probs = softmax_lastdim(logits);
    return merge_heads(matmul(probs, vh));
}

namespace {

Tensor project_out(const Tensor& attn, const AttentionWeights& w) {
    return linear(attn, w.wo, Tensor());
}

}  // namespace

FrameTokens self_attention(const FrameTokens& x, const AttentionWeights& w) {
    Tensor q = linear(x.data, w.wq, Tensor());
    Tensor k = linear(x.data, w.wk, Tensor());
    Tensor v = linear(x.data, w.wv, Tensor());
    return {project_out(scaled_dot_attention(q, k, v, w.heads), w)};
}

FrameTokens cross_attention(const FrameTokens& x, const Tensor& context, const AttentionWeights& w) {
    if (context.rank() != 2 || context.dim(1) != w.wk.dim(0))
        throw ShapeError("cross_attention: context " + shape_str(context.shape()) +
                         " does not match key projection " + shape_str(w.wk.shape()));
    Tensor q = linear(x.data, w.wq, Tensor());          // [F,N,d]
    Tensor k = linear(context, w.wk, Tensor());         // [M,d], shared across frames
    Tensor v = linear(context, w.wv, Tensor());
    Tensor qh = split_heads(q, w.heads);                // [F,h,N,dh]
    Tensor kh = split_heads(k, w.heads);                // [h,M,dh] broadcast over F
    Tensor vh = split_heads(v, w.heads);
    float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(q.dim(-1) / w.heads));
    Tensor probs = softmax_lastdim(scale(matmul(qh, transpose_last2(kh)), inv_sqrt_d));
    return {project_out(merge_heads(matmul(probs, vh)), w)};
}

FrameTokens temporal_attention(const FrameTokens& x, const AttentionWeights& w, const Tensor& pos_emb) {
    Tensor with_pos = add_axis0_bias(x.data, pos_emb);  // [F,N,d] + [F,d]
    Tensor cols = transpose01(with_pos);                // [N,F,d]
    Tensor q = linear(cols, w.wq, Tensor());
    Tensor k = linear(cols, w.wk, Tensor());
    Tensor v = linear(cols, w.wv, Tensor());
    Tensor attn = scaled_dot_attention(q, k, v, w.heads);
    return {transpose01(project_out(attn, w))};
}

FrameTokens recurrent_causal_attention(const FrameTokens& x, const AttentionWeights& w,
                                       bool literal_eq9) {
    std::int64_t F = x.frames();
    std::vector<std::int64_t> prev(static_cast<std::size_t>(F)), next(static_cast<std::size_t>(F)),
        self_idx(static_cast<std::size_t>(F));
    for (std::int64_t i = 0; i < F; ++i) {
        prev[i] = (i == 0) ? 0 : i - 1;
        next[i] = (i == F - 1) ? F - 1 : i + 1;
        self_idx[i] = i;
    }
    Tensor ctx_k = concat(gather_axis0(x.data, prev), gather_axis0(x.data, next), 1);  // [F,2N,d]
    Tensor ctx_v = literal_eq9
                       ? concat(gather_axis0(x.data, prev), gather_axis0(x.data, self_idx), 1)
                       : ctx_k;
    Tensor q = linear(x.data, w.wq, Tensor());
    Tensor k = linear(ctx_k, w.wk, Tensor());
    Tensor v = linear(ctx_v, w.wv, Tensor());
    return {project_out(scaled_dot_attention(q, k, v, w.heads), w)};
}

}  // namespace vmedit
