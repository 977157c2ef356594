#pragma once

#include <vector>

#include "vmedit/tensor.hpp"

namespace vmedit {

// Elementwise (same shape unless noted).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor add_scalar(const Tensor& a, float s);
Tensor silu(const Tensor& x);

// Batched matrix product [..,m,k] x [..,k,n] -> [..,m,n]; leading batch
// extents broadcast numpy-style (right aligned, size-1 expands).
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor transpose_last2(const Tensor& x);
// Swap the first two axes of a rank-3 tensor.
Tensor transpose01(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
// Concatenate two tensors of equal rank along `axis`.
Tensor concat(const Tensor& a, const Tensor& b, int axis);
// Select rows along axis 0; indices may repeat (backward scatter-adds).
Tensor gather_axis0(const Tensor& x, const std::vector<std::int64_t>& idx);

Tensor softmax_lastdim(const Tensor& x);

// x [..,in] * w [in,out] + b [out]; pass undefined b to skip the bias.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// x [F,C,H,W], w [Co,C,kh,kw], b [Co] (optional).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding);

// Per (frame, group) normalization of [F,C,H,W] with affine gain/bias [C].
Tensor group_norm(const Tensor& x, int groups, const Tensor& gain, const Tensor& bias);

// Normalization over the last axis with affine gain/bias [d].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor mse_loss(const Tensor& a, const Tensor& b);

// x [F,C,H,W] + b [C], broadcast over F,H,W.
Tensor add_channel_bias(const Tensor& x, const Tensor& b);
// x [A,B,d] + e [A,d], broadcast over axis 1.
Tensor add_axis0_bias(const Tensor& x, const Tensor& e);

// [..,m,d] -> [..,h,m,d/h] and back.
Tensor split_heads(const Tensor& x, int heads);
Tensor merge_heads(const Tensor& x);

// [F,C,H,W] <-> [F,H*W,C] token layout.
Tensor chw_to_tokens(const Tensor& x);
Tensor tokens_to_chw(const Tensor& x, std::int64_t h, std::int64_t w);

Tensor avg_pool2(const Tensor& x);
Tensor upsample_nearest2(const Tensor& x);

// Row lookup: table [V,d], ids -> [M,d]; backward scatter-adds into table.
Tensor embedding(const Tensor& table, const std::vector<std::int64_t>& ids);

}  // namespace vmedit
