#include "vmedit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace vmedit {

namespace {

using detail::Node;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

std::vector<float>& pgrad(Node& n, std::size_t i) {
    n.parents[i]->ensure_grad();
    return n.parents[i]->grad;
}

const std::vector<float>& pval(Node& n, std::size_t i) { return n.parents[i]->value; }

float sigmoidf(float x) { return 1.0f / (1.0f + std::exp(-x)); }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    std::vector<float> out(a.data().begin(), a.data().end());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.data()[i];
    return detail::make_op("add", a.shape(), std::move(out), {a, b}, [](Node& n) {
        auto& ga = pgrad(n, 0);
        auto& gb = pgrad(n, 1);
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            ga[i] += n.grad[i];
            gb[i] += n.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    std::vector<float> out(a.data().begin(), a.data().end());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.data()[i];
    return detail::make_op("sub", a.shape(), std::move(out), {a, b}, [](Node& n) {
        auto& ga = pgrad(n, 0);
        auto& gb = pgrad(n, 1);
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            ga[i] += n.grad[i];
            gb[i] -= n.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    std::vector<float> out(a.data().begin(), a.data().end());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.data()[i];
    return detail::make_op("mul", a.shape(), std::move(out), {a, b}, [](Node& n) {
        auto& ga = pgrad(n, 0);
        auto& gb = pgrad(n, 1);
        const auto& av = pval(n, 0);
        const auto& bv = pval(n, 1);
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            ga[i] += n.grad[i] * bv[i];
            gb[i] += n.grad[i] * av[i];
        }
    });
}

Tensor scale(const Tensor& a, float s) {
    std::vector<float> out(a.data().begin(), a.data().end());
    for (auto& v : out) v *= s;
    return detail::make_op("scale", a.shape(), std::move(out), {a}, [s](Node& n) {
        auto& ga = pgrad(n, 0);
        for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] * s;
    });
}

Tensor add_scalar(const Tensor& a, float s) {
    std::vector<float> out(a.data().begin(), a.data().end());
    for (auto& v : out) v += s;
    return detail::make_op("add_scalar", a.shape(), std::move(out), {a}, [](Node& n) {
        auto& ga = pgrad(n, 0);
        for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i];
    });
}

Tensor silu(const Tensor& x) {
    std::vector<float> out(x.data().begin(), x.data().end());
    for (auto& v : out) v = v * sigmoidf(v);
    return detail::make_op("silu", x.shape(), std::move(out), {x}, [](Node& n) {
        auto& gx = pgrad(n, 0);
        const auto& xv = pval(n, 0);
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            float s = sigmoidf(xv[i]);
            gx[i] += n.grad[i] * s * (1.0f + xv[i] * (1.0f - s));
        }
    });
}

namespace {

// Right-aligned broadcast of two batch-dim lists.
struct BatchPlan {
    Shape out_batch;
    std::int64_t count = 1;
    // Per out-batch-dim stride (in units of whole matrices) into a and b.
    std::vector<std::int64_t> a_stride, b_stride;
};

BatchPlan make_batch_plan(const Shape& a, const Shape& b) {
    Shape ab(a.begin(), a.end() - 2), bb(b.begin(), b.end() - 2);
    std::size_t r = std::max(ab.size(), bb.size());
    BatchPlan p;
    p.out_batch.resize(r);
    p.a_stride.assign(r, 0);
    p.b_stride.assign(r, 0);
    // Own row-major strides in matrix units.
    std::vector<std::int64_t> sa(ab.size(), 1), sb(bb.size(), 1);
    for (int i = static_cast<int>(ab.size()) - 2; i >= 0; --i) sa[i] = sa[i + 1] * ab[i + 1];
    for (int i = static_cast<int>(bb.size()) - 2; i >= 0; --i) sb[i] = sb[i + 1] * bb[i + 1];
    for (std::size_t i = 0; i < r; ++i) {
        std::int64_t da = (i + ab.size() >= r) ? ab[i + ab.size() - r] : 1;
        std::int64_t db = (i + bb.size() >= r) ? bb[i + bb.size() - r] : 1;
        if (da != db && da != 1 && db != 1)
            throw ShapeError("matmul: batch extents not broadcastable " + shape_str(a) + " vs " + shape_str(b));
        p.out_batch[i] = std::max(da, db);
        if (i + ab.size() >= r && da != 1) p.a_stride[i] = sa[i + ab.size() - r];
        if (i + bb.size() >= r && db != 1) p.b_stride[i] = sb[i + bb.size() - r];
        p.count *= p.out_batch[i];
    }
    return p;
}

void batch_offsets(const BatchPlan& p, std::int64_t flat, std::int64_t& oa, std::int64_t& ob) {
    oa = 0;
    ob = 0;
    for (int i = static_cast<int>(p.out_batch.size()) - 1; i >= 0; --i) {
        std::int64_t idx = flat % p.out_batch[i];
        flat /= p.out_batch[i];
        oa += idx * p.a_stride[i];
        ob += idx * p.b_stride[i];
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() < 2)
        throw ShapeError("matmul: operands must have rank >= 2, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    std::int64_t m = a.dim(-2), k = a.dim(-1), k2 = b.dim(-2), nn = b.dim(-1);
    if (k != k2)
        throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    BatchPlan plan = make_batch_plan(a.shape(), b.shape());
    Shape out_shape = plan.out_batch;
    out_shape.push_back(m);
    out_shape.push_back(nn);
    std::vector<float> out(static_cast<std::size_t>(plan.count * m * nn), 0.0f);
    const float* A = a.data().data();
    const float* B = b.data().data();
    for (std::int64_t bi = 0; bi < plan.count; ++bi) {
        std::int64_t oa, ob;
        batch_offsets(plan, bi, oa, ob);
        const float* ab = A + oa * m * k;
        const float* bb = B + ob * k * nn;
        float* cb = out.data() + bi * m * nn;
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t p = 0; p < k; ++p) {
                float av = ab[i * k + p];
                const float* br = bb + p * nn;
                float* cr = cb + i * nn;
                for (std::int64_t j = 0; j < nn; ++j) cr[j] += av * br[j];
            }
    }
    return detail::make_op("matmul", std::move(out_shape), std::move(out), {a, b},
                           [plan, m, k, nn](Node& n) {
        auto& ga = pgrad(n, 0);
        auto& gb = pgrad(n, 1);
        const auto& av = pval(n, 0);
        const auto& bv = pval(n, 1);
        for (std::int64_t bi = 0; bi < plan.count; ++bi) {
            std::int64_t oa, ob;
            batch_offsets(plan, bi, oa, ob);
            const float* ab = av.data() + oa * m * k;
            const float* bb = bv.data() + ob * k * nn;
            float* gab = ga.data() + oa * m * k;
            float* gbb = gb.data() + ob * k * nn;
            const float* gc = n.grad.data() + bi * m * nn;
            // dA += dC * B^T
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t p = 0; p < k; ++p) {
                    const float* gr = gc + i * nn;
                    const float* br = bb + p * nn;
                    float acc = 0.0f;
                    for (std::int64_t j = 0; j < nn; ++j) acc += gr[j] * br[j];
                    gab[i * k + p] += acc;
                }
            // dB += A^T * dC
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t p = 0; p < k; ++p) {
                    float x = ab[i * k + p];
                    const float* gr = gc + i * nn;
                    float* gbr = gbb + p * nn;
                    for (std::int64_t j = 0; j < nn; ++j) gbr[j] += x * gr[j];
                }
        }
    });
}

Tensor transpose_last2(const Tensor& x) {
    if (x.rank() < 2) throw ShapeError("transpose_last2: rank must be >= 2");
    std::int64_t m = x.dim(-2), nn = x.dim(-1);
    std::int64_t batch = x.numel() / (m * nn);
    Shape out_shape = x.shape();
    std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);
    std::vector<float> out(static_cast<std::size_t>(x.numel()));
    const float* X = x.data().data();
    for (std::int64_t b = 0; b < batch; ++b)
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < nn; ++j)
                out[b * m * nn + j * m + i] = X[b * m * nn + i * nn + j];
    return detail::make_op("transpose_last2", std::move(out_shape), std::move(out), {x},
                           [m, nn, batch](Node& n) {
        auto& gx = pgrad(n, 0);
        for (std::int64_t b = 0; b < batch; ++b)
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t j = 0; j < nn; ++j)
                    gx[b * m * nn + i * nn + j] += n.grad[b * m * nn + j * m + i];
    });
}

Tensor transpose01(const Tensor& x) {
    if (x.rank() != 3) throw ShapeError("transpose01: rank-3 tensor required, got " + shape_str(x.shape()));
    std::int64_t a = x.dim(0), b = x.dim(1), d = x.dim(2);
    std::vector<float> out(static_cast<std::size_t>(x.numel()));
    const float* X = x.data().data();
    for (std::int64_t i = 0; i < a; ++i)
        for (std::int64_t j = 0; j < b; ++j)
            std::memcpy(out.data() + (j * a + i) * d, X + (i * b + j) * d, sizeof(float) * d);
    return detail::make_op("transpose01", {b, a, d}, std::move(out), {x}, [a, b, d](Node& n) {
        auto& gx = pgrad(n, 0);
        for (std::int64_t i = 0; i < a; ++i)
            for (std::int64_t j = 0; j < b; ++j) {
                const float* g = n.grad.data() + (j * a + i) * d;
                float* t = gx.data() + (i * b + j) * d;
                for (std::int64_t c = 0; c < d; ++c) t[c] += g[c];
            }
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel())
        throw ShapeError("reshape: element count mismatch " + shape_str(x.shape()) + " -> " + shape_str(shape));
    std::vector<float> out(x.data().begin(), x.data().end());
    return detail::make_op("reshape", std::move(shape), std::move(out), {x}, [](Node& n) {
        auto& gx = pgrad(n, 0);
        for (std::size_t i = 0; i < n.grad.size(); ++i) gx[i] += n.grad[i];
    });
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
    if (a.rank() != b.rank()) throw ShapeError("concat: rank mismatch");
    int r = a.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ShapeError("concat: axis out of range");
    for (int i = 0; i < r; ++i)
        if (i != axis && a.dim(i) != b.dim(i))
            throw ShapeError("concat: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                             " differ off axis " + std::to_string(axis));
    Shape out_shape = a.shape();
    out_shape[axis] += b.dim(axis);
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= a.dim(i);
    for (int i = axis + 1; i < r; ++i) inner *= a.dim(i);
    std::int64_t na = a.dim(axis) * inner, nb = b.dim(axis) * inner;
    std::vector<float> out(static_cast<std::size_t>(a.numel() + b.numel()));
    for (std::int64_t o = 0; o < outer; ++o) {
        std::memcpy(out.data() + o * (na + nb), a.data().data() + o * na, sizeof(float) * na);
        std::memcpy(out.data() + o * (na + nb) + na, b.data().data() + o * nb, sizeof(float) * nb);
    }
    return detail::make_op("concat", std::move(out_shape), std::move(out), {a, b},
                           [outer, na, nb](Node& n) {
        auto& ga = pgrad(n, 0);
        auto& gb = pgrad(n, 1);
        for (std::int64_t o = 0; o < outer; ++o) {
            const float* g = n.grad.data() + o * (na + nb);
            for (std::int64_t i = 0; i < na; ++i) ga[o * na + i] += g[i];
            for (std::int64_t i = 0; i < nb; ++i) gb[o * nb + i] += g[na + i];
        }
    });
}

Tensor gather_axis0(const Tensor& x, const std::vector<std::int64_t>& idx) {
    if (x.rank() < 1) throw ShapeError("gather_axis0: rank must be >= 1");
    std::int64_t rows = x.dim(0);
    std::int64_t inner = x.numel() / rows;
    for (auto i : idx)
        if (i < 0 || i >= rows) throw ShapeError("gather_axis0: index out of range");
    Shape out_shape = x.shape();
    out_shape[0] = static_cast<std::int64_t>(idx.size());
    std::vector<float> out(idx.size() * static_cast<std::size_t>(inner));
    for (std::size_t r = 0; r < idx.size(); ++r)
        std::memcpy(out.data() + r * inner, x.data().data() + idx[r] * inner, sizeof(float) * inner);
    return detail::make_op("gather_axis0", std::move(out_shape), std::move(out), {x},
                           [idx, inner](Node& n) {
        auto& gx = pgrad(n, 0);
        for (std::size_t r = 0; r < idx.size(); ++r) {
            const float* g = n.grad.data() + r * inner;
            float* t = gx.data() + idx[r] * inner;
            for (std::int64_t i = 0; i < inner; ++i) t[i] += g[i];
        }
    });
}

Tensor softmax_lastdim(const Tensor& x) {
    if (x.rank() < 1 || x.dim(-1) < 1) throw ShapeError("softmax_lastdim: last extent must be >= 1");
    std::int64_t d = x.dim(-1);
    std::int64_t rows = x.numel() / d;
    std::vector<float> out(static_cast<std::size_t>(x.numel()));
    const float* X = x.data().data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const float* xr = X + r * d;
        float* yr = out.data() + r * d;
        float mx = xr[0];
        for (std::int64_t i = 1; i < d; ++i) mx = std::max(mx, xr[i]);
        if (std::isnan(mx)) throw NumericError("softmax_lastdim: NaN input");
        double s = 0.0;
        for (std::int64_t i = 0; i < d; ++i) {
            yr[i] = std::exp(xr[i] - mx);
            s += yr[i];
        }
        float inv = static_cast<float>(1.0 / s);
        for (std::int64_t i = 0; i < d; ++i) yr[i] *= inv;
    }
    return detail::make_op("softmax_lastdim", x.shape(), std::move(out), {x}, [d, rows](Node& n) {
        auto& gx = pgrad(n, 0);
        for (std::int64_t r = 0; r < rows; ++r) {
            const float* y = n.value.data() + r * d;
            const float* g = n.grad.data() + r * d;
            double dot = 0.0;
            for (std::int64_t i = 0; i < d; ++i) dot += static_cast<double>(g[i]) * y[i];
            for (std::int64_t i = 0; i < d; ++i)
                gx[r * d + i] += y[i] * (g[i] - static_cast<float>(dot));
        }
    });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() < 1 || w.rank() != 2)
        throw ShapeError("linear: need x rank >= 1 and 2-D weight, got " + shape_str(x.shape()) + " and " + shape_str(w.shape()));
    std::int64_t in = w.dim(0), outc = w.dim(1);
    if (x.dim(-1) != in)
        throw ShapeError("linear: input width " + shape_str(x.shape()) + " does not match weight " + shape_str(w.shape()));
    if (b.defined() && (b.rank() != 1 || b.dim(0) != outc))
        throw ShapeError("linear: bias shape " + shape_str(b.shape()) + " does not match weight " + shape_str(w.shape()));
    std::int64_t rows = x.numel() / in;
    Shape out_shape = x.shape();
    out_shape.back() = outc;
    std::vector<float> out(static_cast<std::size_t>(rows * outc), 0.0f);
    const float* X = x.data().data();
    const float* W = w.data().data();
    for (std::int64_t r = 0; r < rows; ++r) {
        float* yr = out.data() + r * outc;
        if (b.defined()) std::memcpy(yr, b.data().data(), sizeof(float) * outc);
        const float* xr = X + r * in;
        for (std::int64_t i = 0; i < in; ++i) {
            float xv = xr[i];
            const float* wr = W + i * outc;
            for (std::int64_t j = 0; j < outc; ++j) yr[j] += xv * wr[j];
        }
    }
    std::vector<Tensor> parents = b.defined() ? std::vector<Tensor>{x, w, b} : std::vector<Tensor>{x, w};
    return detail::make_op("linear", std::move(out_shape), std::move(out), std::move(parents),
                           [rows, in, outc](Node& n) {
        auto& gx = pgrad(n, 0);
        auto& gw = pgrad(n, 1);
        const auto& xv = pval(n, 0);
        const auto& wv = pval(n, 1);
        bool has_b = n.parents.size() == 3;
        float* gb = has_b ? pgrad(n, 2).data() : nullptr;
        for (std::int64_t r = 0; r < rows; ++r) {
            const float* g = n.grad.data() + r * outc;
            const float* xr = xv.data() + r * in;
            for (std::int64_t i = 0; i < in; ++i) {
                const float* wr = wv.data() + i * outc;
                float* gwr = gw.data() + i * outc;
                float acc = 0.0f;
                float xvv = xr[i];
                for (std::int64_t j = 0; j < outc; ++j) {
                    acc += g[j] * wr[j];
                    gwr[j] += xvv * g[j];
                }
                gx[r * in + i] += acc;
            }
            if (gb)
                for (std::int64_t j = 0; j < outc; ++j) gb[j] += g[j];
        }
    });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding) {
    if (x.rank() != 4 || w.rank() != 4)
        throw ShapeError("conv2d: need [F,C,H,W] input and [Co,C,kh,kw] kernel, got " + shape_str(x.shape()) +
                         " and " + shape_str(w.shape()));
    std::int64_t F = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    std::int64_t Co = w.dim(0), Ci = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    if (C != Ci)
        throw ShapeError("conv2d: channel mismatch, input " + shape_str(x.shape()) + " vs kernel " + shape_str(w.shape()));
    if (stride < 1 || padding < 0) throw ConfigError("conv2d: invalid stride/padding");
    std::int64_t Ho = (H + 2 * padding - kh) / stride + 1;
    std::int64_t Wo = (W + 2 * padding - kw) / stride + 1;
    if (Ho < 1 || Wo < 1) throw ShapeError("conv2d: kernel does not fit padded input");
    if (b.defined() && (b.rank() != 1 || b.dim(0) != Co))
        throw ShapeError("conv2d: bias shape " + shape_str(b.shape()) + " does not match Co=" + std::to_string(Co));
    std::vector<float> out(static_cast<std::size_t>(F * Co * Ho * Wo), 0.0f);
    const float* X = x.data().data();
    const float* K = w.data().data();
    for (std::int64_t f = 0; f < F; ++f)
        for (std::int64_t co = 0; co < Co; ++co) {
            float bias = b.defined() ? b.data()[co] : 0.0f;
            float* yb = out.data() + ((f * Co + co) * Ho) * Wo;
            for (std::int64_t i = 0; i < Ho * Wo; ++i) yb[i] = bias;
            for (std::int64_t c = 0; c < C; ++c) {
                const float* xb = X + ((f * C + c) * H) * W;
                const float* kb = K + ((co * C + c) * kh) * kw;
                for (std::int64_t oy = 0; oy < Ho; ++oy)
                    for (std::int64_t ky = 0; ky < kh; ++ky) {
                        std::int64_t iy = oy * stride + ky - padding;
                        if (iy < 0 || iy >= H) continue;
                        const float* xrow = xb + iy * W;
                        const float* krow = kb + ky * kw;
                        float* yrow = yb + oy * Wo;
                        for (std::int64_t ox = 0; ox < Wo; ++ox) {
                            std::int64_t ix0 = ox * stride - padding;
                            float acc = 0.0f;
                            for (std::int64_t kx = 0; kx < kw; ++kx) {
                                std::int64_t ix = ix0 + kx;
                                if (ix < 0 || ix >= W) continue;
                                acc += xrow[ix] * krow[kx];
                            }
                            yrow[ox] += acc;
                        }
                    }
            }
        }
    std::vector<Tensor> parents = b.defined() ? std::vector<Tensor>{x, w, b} : std::vector<Tensor>{x, w};
    return detail::make_op("conv2d", {F, Co, Ho, Wo}, std::move(out), std::move(parents),
                           [F, C, H, W, Co, kh, kw, Ho, Wo, stride, padding](Node& n) {
        auto& gx = pgrad(n, 0);
        auto& gw = pgrad(n, 1);
        const auto& xv = pval(n, 0);
        const auto& wv = pval(n, 1);
        bool has_b = n.parents.size() == 3;
        float* gb = has_b ? pgrad(n, 2).data() : nullptr;
        for (std::int64_t f = 0; f < F; ++f)
            for (std::int64_t co = 0; co < Co; ++co) {
                const float* gyb = n.grad.data() + ((f * Co + co) * Ho) * Wo;
                if (gb) {
                    float acc = 0.0f;
                    for (std::int64_t i = 0; i < Ho * Wo; ++i) acc += gyb[i];
                    gb[co] += acc;
                }
                for (std::int64_t c = 0; c < C; ++c) {
                    const float* xb = xv.data() + ((f * C + c) * H) * W;
                    const float* kb = wv.data() + ((co * C + c) * kh) * kw;
                    float* gxb = gx.data() + ((f * C + c) * H) * W;
                    float* gkb = gw.data() + ((co * C + c) * kh) * kw;
                    for (std::int64_t oy = 0; oy < Ho; ++oy)
                        for (std::int64_t ky = 0; ky < kh; ++ky) {
                            std::int64_t iy = oy * stride + ky - padding;
                            if (iy < 0 || iy >= H) continue;
                            const float* xrow = xb + iy * W;
                            float* gxrow = gxb + iy * W;
                            const float* krow = kb + ky * kw;
                            float* gkrow = gkb + ky * kw;
                            const float* gyrow = gyb + oy * Wo;
                            for (std::int64_t ox = 0; ox < Wo; ++ox) {
                                float g = gyrow[ox];
                                if (g == 0.0f) continue;
                                std::int64_t ix0 = ox * stride - padding;
                                for (std::int64_t kx = 0; kx < kw; ++kx) {
                                    std::int64_t ix = ix0 + kx;
                                    if (ix < 0 || ix >= W) continue;
                                    gxrow[ix] += g * krow[kx];
                                    gkrow[kx] += g * xrow[ix];
                                }
                            }
                        }
                }
            }
    });
}

Tensor group_norm(const Tensor& x, int groups, const Tensor& gain, const Tensor& bias) {
    if (x.rank() != 4) throw ShapeError("group_norm: [F,C,H,W] input required, got " + shape_str(x.shape()));
    std::int64_t F = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (groups < 1 || C % groups != 0)
        throw ConfigError("group_norm: channels " + std::to_string(C) + " not divisible by groups " + std::to_string(groups));
    if (gain.rank() != 1 || gain.dim(0) != C || bias.rank() != 1 || bias.dim(0) != C)
        throw ShapeError("group_norm: affine parameters must be [C]");
    const double eps = 1e-5;
    std::int64_t cpg = C / groups;
    std::int64_t gsz = cpg * H * W;
    std::vector<float> out(static_cast<std::size_t>(x.numel()));
    std::vector<float> mean(static_cast<std::size_t>(F * groups)), istd(static_cast<std::size_t>(F * groups));
    const float* X = x.data().data();
    for (std::int64_t f = 0; f < F; ++f)
        for (std::int64_t g = 0; g < groups; ++g) {
            const float* base = X + (f * C + g * cpg) * H * W;
            double s = 0.0, s2 = 0.0;
            for (std::int64_t i = 0; i < gsz; ++i) {
                s += base[i];
                s2 += static_cast<double>(base[i]) * base[i];
            }
            double mu = s / gsz;
            double var = s2 / gsz - mu * mu;
            if (var < 0) var = 0;
            double inv = 1.0 / std::sqrt(var + eps);
            mean[f * groups + g] = static_cast<float>(mu);
            istd[f * groups + g] = static_cast<float>(inv);
            for (std::int64_t c = 0; c < cpg; ++c) {
                float gn = gain.data()[g * cpg + c];
                float bn = bias.data()[g * cpg + c];
                const float* xr = base + c * H * W;
                float* yr = out.data() + (f * C + g * cpg + c) * H * W;
                for (std::int64_t i = 0; i < H * W; ++i)
                    yr[i] = static_cast<float>((xr[i] - mu) * inv) * gn + bn;
            }
        }
    return detail::make_op("group_norm", x.shape(), std::move(out), {x, gain, bias},
                           [F, C, H, W, groups, cpg, gsz, mean, istd](Node& n) {
        auto& gx = pgrad(n, 0);
        auto& gg = pgrad(n, 1);
        auto& gb = pgrad(n, 2);
        const auto& xv = pval(n, 0);
        const auto& gainv = pval(n, 1);
        for (std::int64_t f = 0; f < F; ++f)
            for (std::int64_t g = 0; g < groups; ++g) {
                float mu = mean[f * groups + g];
                float inv = istd[f * groups + g];
                const float* base = xv.data() + (f * C + g * cpg) * H * W;
                const float* gr = n.grad.data() + (f * C + g * cpg) * H * W;
                // Group reductions of gamma*dy and gamma*dy*yhat.
                double sg = 0.0, sgy = 0.0;
                for (std::int64_t c = 0; c < cpg; ++c) {
                    float gn = gainv[g * cpg + c];
                    const float* xr = base + c * H * W;
                    const float* grr = gr + c * H * W;
                    for (std::int64_t i = 0; i < H * W; ++i) {
                        float yh = (xr[i] - mu) * inv;
                        sg += static_cast<double>(gn) * grr[i];
                        sgy += static_cast<double>(gn) * grr[i] * yh;
                    }
                }
                float mg = static_cast<float>(sg / gsz);
                float mgy = static_cast<float>(sgy / gsz);
                for (std::int64_t c = 0; c < cpg; ++c) {
                    float gn = gainv[g * cpg + c];
                    const float* xr = base + c * H * W;
                    const float* grr = gr + c * H * W;
                    float* gxr = gx.data() + (f * C + g * cpg + c) * H * W;
                    double dgn = 0.0, dbn = 0.0;
                    for (std::int64_t i = 0; i < H * W; ++i) {
                        float yh = (xr[i] - mu) * inv;
                        gxr[i] += (gn * grr[i] - mg - yh * mgy) * inv;
                        dgn += static_cast<double>(grr[i]) * yh;
                        dbn += grr[i];
                    }
                    gg[g * cpg + c] += static_cast<float>(dgn);
                    gb[g * cpg + c] += static_cast<float>(dbn);
                }
            }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
    if (x.rank() < 1) throw ShapeError("layer_norm: rank must be >= 1");
    std::int64_t d = x.dim(-1);
    if (gain.rank() != 1 || gain.dim(0) != d || bias.rank() != 1 || bias.dim(0) != d)
        throw ShapeError("layer_norm: affine parameters must be [d]");
    const double eps = 1e-5;
    std::int64_t rows = x.numel() / d;
    std::vector<float> out(static_cast<std::size_t>(x.numel()));
    std::vector<float> mean(static_cast<std::size_t>(rows)), istd(static_cast<std::size_t>(rows));
    const float* X = x.data().data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const float* xr = X + r * d;
        double s = 0.0, s2 = 0.0;
        for (std::int64_t i = 0; i < d; ++i) {
            s += xr[i];
            s2 += static_cast<double>(xr[i]) * xr[i];
        }
        double mu = s / d;
        double var = s2 / d - mu * mu;
        if (var < 0) var = 0;
        double inv = 1.0 / std::sqrt(var + eps);
        mean[r] = static_cast<float>(mu);
        istd[r] = static_cast<float>(inv);
        float* yr = out.data() + r * d;
        for (std::int64_t i = 0; i < d; ++i)
            yr[i] = static_cast<float>((xr[i] - mu) * inv) * gain.data()[i] + bias.data()[i];
    }
    return detail::make_op("layer_norm", x.shape(), std::move(out), {x, gain, bias},
                           [rows, d, mean, istd](Node& n) {
        auto& gx = pgrad(n, 0);
        auto& gg = pgrad(n, 1);
        auto& gb = pgrad(n, 2);
        const auto& xv = pval(n, 0);
        const auto& gainv = pval(n, 1);
        for (std::int64_t r = 0; r < rows; ++r) {
            const float* xr = xv.data() + r * d;
            const float* gr = n.grad.data() + r * d;
            float mu = mean[r], inv = istd[r];
            double sg = 0.0, sgy = 0.0;
            for (std::int64_t i = 0; i < d; ++i) {
                float yh = (xr[i] - mu) * inv;
                sg += static_cast<double>(gainv[i]) * gr[i];
                sgy += static_cast<double>(gainv[i]) * gr[i] * yh;
            }
            float mg = static_cast<float>(sg / d);
            float mgy = static_cast<float>(sgy / d);
            for (std::int64_t i = 0; i < d; ++i) {
                float yh = (xr[i] - mu) * inv;
                gx[r * d + i] += (gainv[i] * gr[i] - mg - yh * mgy) * inv;
                gg[i] += gr[i] * yh;
                gb[i] += gr[i];
            }
        }
    });
}

namespace {

Tensor with_scalar_hi(Tensor t, double v) {
    t.node()->scalar_hi = v;
    t.node()->has_scalar_hi = true;
    return t;
}

}  // namespace

Tensor sum_all(const Tensor& x) {
    double s = 0.0;
    for (float v : x.data()) s += v;
    return with_scalar_hi(detail::make_op("sum_all", {}, {static_cast<float>(s)}, {x}, [](Node& n) {
        auto& gx = pgrad(n, 0);
        float g = n.grad[0];
        for (auto& v : gx) v += g;
    }), s);
}

Tensor mean_all(const Tensor& x) {
    double s = 0.0;
    for (float v : x.data()) s += v;
    std::int64_t cnt = x.numel();
    return with_scalar_hi(detail::make_op("mean_all", {}, {static_cast<float>(s / cnt)}, {x}, [cnt](Node& n) {
        auto& gx = pgrad(n, 0);
        float g = n.grad[0] / static_cast<float>(cnt);
        for (auto& v : gx) v += g;
    }), s / cnt);
}

Tensor mse_loss(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mse_loss");
    double s = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        double d = static_cast<double>(a.data()[i]) - b.data()[i];
        s += d * d;
    }
    std::int64_t cnt = a.numel();
    double hi = s / cnt;
    return with_scalar_hi(detail::make_op("mse_loss", {}, {static_cast<float>(s / cnt)}, {a, b}, [cnt](Node& n) {
        auto& ga = pgrad(n, 0);
        auto& gb = pgrad(n, 1);
        const auto& av = pval(n, 0);
        const auto& bv = pval(n, 1);
        float g = 2.0f * n.grad[0] / static_cast<float>(cnt);
        for (std::size_t i = 0; i < av.size(); ++i) {
            float d = av[i] - bv[i];
            ga[i] += g * d;
            gb[i] -= g * d;
        }
    }), hi);
}

Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
    if (x.rank() != 4 || b.rank() != 1 || b.dim(0) != x.dim(1))
        throw ShapeError("add_channel_bias: need [F,C,H,W] + [C], got " + shape_str(x.shape()) + " and " + shape_str(b.shape()));
    std::int64_t F = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
    std::vector<float> out(x.data().begin(), x.data().end());
    for (std::int64_t f = 0; f < F; ++f)
        for (std::int64_t c = 0; c < C; ++c) {
            float bv = b.data()[c];
            float* p = out.data() + (f * C + c) * hw;
            for (std::int64_t i = 0; i < hw; ++i) p[i] += bv;
        }
    return detail::make_op("add_channel_bias", x.shape(), std::move(out), {x, b}, [F, C, hw](Node& n) {
        auto& gx = pgrad(n, 0);
        auto& gb = pgrad(n, 1);
        for (std::int64_t f = 0; f < F; ++f)
            for (std::int64_t c = 0; c < C; ++c) {
                const float* g = n.grad.data() + (f * C + c) * hw;
                float acc = 0.0f;
                for (std::int64_t i = 0; i < hw; ++i) {
                    gx[(f * C + c) * hw + i] += g[i];
                    acc += g[i];
                }
                gb[c] += acc;
            }
    });
}

Tensor add_axis0_bias(const Tensor& x, const Tensor& e) {
    if (x.rank() != 3 || e.rank() != 2 || e.dim(0) != x.dim(0) || e.dim(1) != x.dim(2))
        throw ShapeError("add_axis0_bias: need [A,B,d] + [A,d], got " + shape_str(x.shape()) + " and " + shape_str(e.shape()));
    std::int64_t A = x.dim(0), B = x.dim(1), d = x.dim(2);
    std::vector<float> out(x.data().begin(), x.data().end());
    for (std::int64_t a = 0; a < A; ++a) {
        const float* er = e.data().data() + a * d;
        for (std::int64_t bb = 0; bb < B; ++bb) {
            float* p = out.data() + (a * B + bb) * d;
            for (std::int64_t i = 0; i < d; ++i) p[i] += er[i];
        }
    }
    return detail::make_op("add_axis0_bias", x.shape(), std::move(out), {x, e}, [A, B, d](Node& n) {
        auto& gx = pgrad(n, 0);
        auto& ge = pgrad(n, 1);
        for (std::int64_t a = 0; a < A; ++a)
            for (std::int64_t bb = 0; bb < B; ++bb) {
                const float* g = n.grad.data() + (a * B + bb) * d;
                float* ger = ge.data() + a * d;
                float* gxr = gx.data() + (a * B + bb) * d;
                for (std::int64_t i = 0; i < d; ++i) {
                    gxr[i] += g[i];
                    ger[i] += g[i];
                }
            }
    });
}

Tensor split_heads(const Tensor& x, int heads) {
    if (x.rank() < 2) throw ShapeError("split_heads: rank must be >= 2");
    std::int64_t m = x.dim(-2), d = x.dim(-1);
    if (heads < 1 || d % heads != 0)
        throw ConfigError("split_heads: width " + std::to_string(d) + " not divisible by heads " + std::to_string(heads));
    std::int64_t dh = d / heads;
    std::int64_t batch = x.numel() / (m * d);
    Shape out_shape(x.shape().begin(), x.shape().end() - 2);
    out_shape.push_back(heads);
    out_shape.push_back(m);
    out_shape.push_back(dh);
    std::vector<float> out(static_cast<std::size_t>(x.numel()));
    const float* X = x.data().data();
    for (std::int64_t b = 0; b < batch; ++b)
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t h = 0; h < heads; ++h)
                std::memcpy(out.data() + ((b * heads + h) * m + i) * dh,
                            X + (b * m + i) * d + h * dh, sizeof(float) * dh);
    return detail::make_op("split_heads", std::move(out_shape), std::move(out), {x},
                           [batch, m, d, dh, heads](Node& n) {
        auto& gx = pgrad(n, 0);
        for (std::int64_t b = 0; b < batch; ++b)
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t h = 0; h < heads; ++h) {
                    const float* g = n.grad.data() + ((b * heads + h) * m + i) * dh;
                    float* t = gx.data() + (b * m + i) * d + h * dh;
                    for (std::int64_t c = 0; c < dh; ++c) t[c] += g[c];
                }
    });
}

Tensor merge_heads(const Tensor& x) {
    if (x.rank() < 3) throw ShapeError("merge_heads: rank must be >= 3");
    std::int64_t heads = x.dim(-3), m = x.dim(-2), dh = x.dim(-1);
    std::int64_t batch = x.numel() / (heads * m * dh);
    std::int64_t d = heads * dh;
    Shape out_shape(x.shape().begin(), x.shape().end() - 3);
    out_shape.push_back(m);
    out_shape.push_back(d);
    std::vector<float> out(static_cast<std::size_t>(x.numel()));
    const float* X = x.data().data();
    for (std::int64_t b = 0; b < batch; ++b)
        for (std::int64_t h = 0; h < heads; ++h)
            for (std::int64_t i = 0; i < m; ++i)
                std::memcpy(out.data() + (b * m + i) * d + h * dh,
                            X + ((b * heads + h) * m + i) * dh, sizeof(float) * dh);
    return detail::make_op("merge_heads", std::move(out_shape), std::move(out), {x},
                           [batch, heads, m, dh, d](Node& n) {
        auto& gx = pgrad(n, 0);
        for (std::int64_t b = 0; b < batch; ++b)
            for (std::int64_t h = 0; h < heads; ++h)
                for (std::int64_t i = 0; i < m; ++i) {
                    const float* g = n.grad.data() + (b * m + i) * d + h * dh;
                    float* t = gx.data() + ((b * heads + h) * m + i) * dh;
                    for (std::int64_t c = 0; c < dh; ++c) t[c] += g[c];
                }
    });
}

Tensor chw_to_tokens(const Tensor& x) {
    if (x.rank() != 4) throw ShapeError("chw_to_tokens: [F,C,H,W] required, got " + shape_str(x.shape()));
    std::int64_t F = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
    std::vector<float> out(static_cast<std::size_t>(x.numel()));
    const float* X = x.data().data();
    for (std::int64_t f = 0; f < F; ++f)
        for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t i = 0; i < hw; ++i)
                out[(f * hw + i) * C + c] = X[(f * C + c) * hw + i];
    return detail::make_op("chw_to_tokens", {F, hw, C}, std::move(out), {x}, [F, C, hw](Node& n) {
        auto& gx = pgrad(n, 0);
        for (std::int64_t f = 0; f < F; ++f)
            for (std::int64_t c = 0; c < C; ++c)
                for (std::int64_t i = 0; i < hw; ++i)
                    gx[(f * C + c) * hw + i] += n.grad[(f * hw + i) * C + c];
    });
}

Tensor tokens_to_chw(const Tensor& x, std::int64_t h, std::int64_t w) {
    if (x.rank() != 3 || x.dim(1) != h * w)
        throw ShapeError("tokens_to_chw: [F,H*W,C] required with matching H,W, got " + shape_str(x.shape()));
    std::int64_t F = x.dim(0), C = x.dim(2), hw = h * w;
    std::vector<float> out(static_cast<std::size_t>(x.numel()));
    const float* X = x.data().data();
    for (std::int64_t f = 0; f < F; ++f)
        for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t i = 0; i < hw; ++i)
                out[(f * C + c) * hw + i] = X[(f * hw + i) * C + c];
    return detail::make_op("tokens_to_chw", {F, C, h, w}, std::move(out), {x}, [F, C, hw](Node& n) {
        auto& gx = pgrad(n, 0);
        for (std::int64_t f = 0; f < F; ++f)
            for (std::int64_t c = 0; c < C; ++c)
                for (std::int64_t i = 0; i < hw; ++i)
                    gx[(f * hw + i) * C + c] += n.grad[(f * C + c) * hw + i];
    });
}

Tensor avg_pool2(const Tensor& x) {
    if (x.rank() != 4 || x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0)
        throw ShapeError("avg_pool2: [F,C,H,W] with even H,W required, got " + shape_str(x.shape()));
    std::int64_t F = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    std::int64_t Ho = H / 2, Wo = W / 2;
    std::vector<float> out(static_cast<std::size_t>(F * C * Ho * Wo));
    const float* X = x.data().data();
    for (std::int64_t fc = 0; fc < F * C; ++fc)
        for (std::int64_t y = 0; y < Ho; ++y)
            for (std::int64_t xx = 0; xx < Wo; ++xx) {
                const float* p = X + fc * H * W + 2 * y * W + 2 * xx;
                out[fc * Ho * Wo + y * Wo + xx] = 0.25f * (p[0] + p[1] + p[W] + p[W + 1]);
            }
    return detail::make_op("avg_pool2", {F, C, Ho, Wo}, std::move(out), {x}, [F, C, H, W, Ho, Wo](Node& n) {
        auto& gx = pgrad(n, 0);
        for (std::int64_t fc = 0; fc < F * C; ++fc)
            for (std::int64_t y = 0; y < Ho; ++y)
                for (std::int64_t xx = 0; xx < Wo; ++xx) {
                    float g = 0.25f * n.grad[fc * Ho * Wo + y * Wo + xx];
                    float* p = gx.data() + fc * H * W + 2 * y * W + 2 * xx;
                    p[0] += g;
                    p[1] += g;
                    p[W] += g;
                    p[W + 1] += g;
                }
    });
}

Tensor upsample_nearest2(const Tensor& x) {
    if (x.rank() != 4) throw ShapeError("upsample_nearest2: [F,C,H,W] required, got " + shape_str(x.shape()));
    std::int64_t F = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    std::int64_t Ho = H * 2, Wo = W * 2;
    std::vector<float> out(static_cast<std::size_t>(F * C * Ho * Wo));
    const float* X = x.data().data();
    for (std::int64_t fc = 0; fc < F * C; ++fc)
        for (std::int64_t y = 0; y < Ho; ++y)
            for (std::int64_t xx = 0; xx < Wo; ++xx)
                out[fc * Ho * Wo + y * Wo + xx] = X[fc * H * W + (y / 2) * W + (xx / 2)];
    return detail::make_op("upsample_nearest2", {F, C, Ho, Wo}, std::move(out), {x},
                           [F, C, H, W, Ho, Wo](Node& n) {
        auto& gx = pgrad(n, 0);
        for (std::int64_t fc = 0; fc < F * C; ++fc)
            for (std::int64_t y = 0; y < Ho; ++y)
                for (std::int64_t xx = 0; xx < Wo; ++xx)
                    gx[fc * H * W + (y / 2) * W + (xx / 2)] += n.grad[fc * Ho * Wo + y * Wo + xx];
    });
}

Tensor embedding(const Tensor& table, const std::vector<std::int64_t>& ids) {
    if (table.rank() != 2) throw ShapeError("embedding: [V,d] table required, got " + shape_str(table.shape()));
    std::int64_t V = table.dim(0), d = table.dim(1);
    for (auto i : ids)
        if (i < 0 || i >= V) throw ContractError("embedding: token id out of range");
    std::int64_t M = static_cast<std::int64_t>(ids.size());
    if (M == 0) throw ContractError("embedding: empty id list");
    std::vector<float> out(static_cast<std::size_t>(M * d));
    for (std::int64_t r = 0; r < M; ++r)
        std::memcpy(out.data() + r * d, table.data().data() + ids[r] * d, sizeof(float) * d);
    return detail::make_op("embedding", {M, d}, std::move(out), {table}, [ids, d](Node& n) {
        auto& gt = pgrad(n, 0);
        for (std::size_t r = 0; r < ids.size(); ++r) {
            const float* g = n.grad.data() + r * d;
            float* t = gt.data() + ids[r] * d;
            for (std::int64_t i = 0; i < d; ++i) t[i] += g[i];
        }
    });
}

}  // namespace vmedit
