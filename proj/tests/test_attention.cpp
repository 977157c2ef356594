#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "support/gradcheck.hpp"
#include "vmedit/attention.hpp"
#include "vmedit/rng.hpp"

using namespace vmedit;
using vmedit::testing::gradcheck;

namespace {

Tensor randn(Shape shape, CounterRng& rng, float scl = 1.0f) {
    std::vector<float> d(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& v : d) v = rng.normal_f() * scl;
    return Tensor::from_data(std::move(shape), std::move(d));
}

// Double-precision reference attention, independent of the tensor ops.
std::vector<double> naive_attention(const float* q, const float* k, const float* v,
                                    std::int64_t m, std::int64_t n, std::int64_t d, int heads) {
    std::int64_t dh = d / heads;
    std::vector<double> out(static_cast<std::size_t>(m * d), 0.0);
    for (int h = 0; h < heads; ++h)
        for (std::int64_t i = 0; i < m; ++i) {
            std::vector<double> logits(static_cast<std::size_t>(n));
            double mx = -1e300;
            for (std::int64_t j = 0; j < n; ++j) {
                double s = 0;
                for (std::int64_t c = 0; c < dh; ++c)
                    s += static_cast<double>(q[i * d + h * dh + c]) * k[j * d + h * dh + c];
                logits[j] = s / std::sqrt(static_cast<double>(dh));
                mx = std::max(mx, logits[j]);
            }
            double z = 0;
            for (auto& l : logits) {
                l = std::exp(l - mx);
                z += l;
            }
            for (std::int64_t j = 0; j < n; ++j)
                for (std::int64_t c = 0; c < dh; ++c)
                    out[i * d + h * dh + c] += logits[j] / z * v[j * d + h * dh + c];
        }
    return out;
}

std::vector<double> apply_proj(const std::vector<double>& x, const Tensor& w,
                               std::int64_t rows, std::int64_t d) {
    std::vector<double> out(static_cast<std::size_t>(rows * d), 0.0);
    for (std::int64_t i = 0; i < rows; ++i)
        for (std::int64_t a = 0; a < d; ++a)
            for (std::int64_t b = 0; b < d; ++b)
                out[i * d + b] += x[i * d + a] * w.data()[a * d + b];
    return out;
}

std::vector<float> project_rows(const Tensor& x, const Tensor& w) {
    // x [rows, din] * w [din, dout] in plain loops
    std::int64_t rows = x.numel() / x.dim(-1), din = x.dim(-1), dout = w.dim(1);
    std::vector<float> out(static_cast<std::size_t>(rows * dout), 0.0f);
    for (std::int64_t i = 0; i < rows; ++i)
        for (std::int64_t a = 0; a < din; ++a)
            for (std::int64_t b = 0; b < dout; ++b)
                out[i * dout + b] += x.data()[i * din + a] * w.data()[a * dout + b];
    return out;
}

}  // namespace

TEST_CASE("scaled dot attention with a single key returns V regardless of Q") {
    CounterRng rng(1);
    Tensor q = randn({3, 4}, rng);
    Tensor k = randn({1, 4}, rng);
    Tensor v = randn({1, 4}, rng);
    Tensor out = scaled_dot_attention(q, k, v, 2);
    for (int i = 0; i < 3; ++i)
        for (int c = 0; c < 4; ++c)
            CHECK(out.data()[i * 4 + c] == doctest::Approx(v.data()[c]).epsilon(1e-6));
}

TEST_CASE("identical keys and values collapse to the common value") {
    CounterRng rng(2);
    Tensor q = randn({2, 4}, rng);
    std::vector<float> row{0.3f, -1.2f, 0.7f, 2.0f};
    std::vector<float> kd, vd;
    for (int j = 0; j < 5; ++j) {
        kd.insert(kd.end(), row.begin(), row.end());
        vd.insert(vd.end(), row.begin(), row.end());
    }
    Tensor k = Tensor::from_data({5, 4}, kd);
    Tensor v = Tensor::from_data({5, 4}, vd);
    Tensor out = scaled_dot_attention(q, k, v, 1);
    for (int i = 0; i < 2; ++i)
        for (int c = 0; c < 4; ++c)
            CHECK(out.data()[i * 4 + c] == doctest::Approx(row[c]).epsilon(1e-6));
}

TEST_CASE("scaled dot attention gradcheck") {
    CounterRng rng(3);
    Tensor q = randn({3, 4}, rng, 0.5f);
    Tensor k = randn({5, 4}, rng, 0.5f);
    Tensor v = randn({5, 4}, rng, 0.5f);
    Tensor w = randn({3, 4}, rng);
    auto res = gradcheck([&] { return sum_all(mul(scaled_dot_attention(q, k, v, 2), w)); }, {q, k, v});
    CHECK(res.ok());
}

TEST_CASE("head divisibility enforced") {
    Tensor q = Tensor::zeros({2, 6});
    CHECK_THROWS_AS(scaled_dot_attention(q, q, q, 4), ConfigError);
}

TEST_CASE("self attention matches per-frame oracle") {
    CounterRng rng(4);
    ParamRegistry reg(9);
    auto w = AttentionWeights::create(reg, "attn", ParamGroup::spatial_rca, 8, 8, 2);
    FrameTokens x{randn({3, 5, 8}, rng, 0.6f)};
    FrameTokens out = self_attention(x, w);
    REQUIRE(out.data.shape() == x.data.shape());

    for (std::int64_t f = 0; f < 3; ++f) {
        Tensor frame = Tensor::from_data({5, 8},
            std::vector<float>(x.data.data().begin() + f * 40, x.data.data().begin() + (f + 1) * 40));
        auto q = project_rows(frame, w.wq);
        auto k = project_rows(frame, w.wk);
        auto v = project_rows(frame, w.wv);
        auto ref = naive_attention(q.data(), k.data(), v.data(), 5, 5, 8, 2);
        auto refp = apply_proj(ref, w.wo, 5, 8);
        for (std::int64_t i = 0; i < 40; ++i)
            CHECK(std::abs(out.data.data()[f * 40 + i] - refp[i]) < 1e-5);
    }
}

TEST_CASE("self attention one token per frame passes value through projections") {
    CounterRng rng(5);
    ParamRegistry reg(10);
    auto w = AttentionWeights::create(reg, "attn", ParamGroup::spatial_rca, 4, 4, 1);
    FrameTokens x{randn({2, 1, 4}, rng)};
    FrameTokens out = self_attention(x, w);
    for (std::int64_t f = 0; f < 2; ++f) {
        Tensor tok = Tensor::from_data({1, 4},
            std::vector<float>(x.data.data().begin() + f * 4, x.data.data().begin() + (f + 1) * 4));
        auto expect = project_rows(Tensor::from_data({1, 4}, project_rows(tok, w.wv)), w.wo);
        for (int c = 0; c < 4; ++c)
            CHECK(out.data.data()[f * 4 + c] == doctest::Approx(expect[c]).epsilon(1e-5));
    }
}

TEST_CASE("self attention is permutation equivariant within a frame") {
    CounterRng rng(6);
    ParamRegistry reg(11);
    auto w = AttentionWeights::create(reg, "attn", ParamGroup::spatial_rca, 8, 8, 2);
    FrameTokens x{randn({1, 4, 8}, rng)};
    FrameTokens out = self_attention(x, w);
    std::vector<std::int64_t> perm{2, 0, 3, 1};
    std::vector<float> pd(32);
    for (int i = 0; i < 4; ++i)
        std::memcpy(pd.data() + i * 8, x.data.data().data() + perm[i] * 8, 8 * sizeof(float));
    FrameTokens pout = self_attention({Tensor::from_data({1, 4, 8}, pd)}, w);
    for (int i = 0; i < 4; ++i)
        for (int c = 0; c < 8; ++c)
            CHECK(pout.data.data()[i * 8 + c] == doctest::Approx(out.data.data()[perm[i] * 8 + c]).epsilon(1e-6));
}

TEST_CASE("cross attention single context row broadcasts one value") {
    CounterRng rng(7);
    ParamRegistry reg(12);
    auto w = AttentionWeights::create(reg, "attn", ParamGroup::cross, 8, 6, 2);
    FrameTokens x{randn({2, 3, 8}, rng)};
    Tensor ctx = randn({1, 6}, rng);
    FrameTokens out = cross_attention(x, ctx, w);
    auto vrow = project_rows(ctx, w.wv);
    auto expect = project_rows(Tensor::from_data({1, 8}, vrow), w.wo);
    for (std::int64_t i = 0; i < 6; ++i)
        for (int c = 0; c < 8; ++c)
            CHECK(out.data.data()[i * 8 + c] == doctest::Approx(expect[c]).epsilon(1e-5));

    // duplicated row behaves like the single-row case
    std::vector<float> dup(ctx.data().begin(), ctx.data().end());
    dup.insert(dup.end(), ctx.data().begin(), ctx.data().end());
    FrameTokens out2 = cross_attention(x, Tensor::from_data({2, 6}, dup), w);
    for (std::int64_t i = 0; i < out.data.numel(); ++i)
        CHECK(std::abs(out2.data.data()[i] - out.data.data()[i]) < 1e-6f);
}

TEST_CASE("cross attention width mismatch rejected") {
    ParamRegistry reg(13);
    auto w = AttentionWeights::create(reg, "attn", ParamGroup::cross, 8, 6, 2);
    FrameTokens x{Tensor::zeros({1, 2, 8})};
    CHECK_THROWS_AS(cross_attention(x, Tensor::zeros({3, 5}), w), ShapeError);
}

TEST_CASE("cross attention gradcheck through x and context") {
    CounterRng rng(8);
    ParamRegistry reg(14);
    auto w = AttentionWeights::create(reg, "attn", ParamGroup::cross, 4, 6, 2);
    Tensor xd = randn({2, 3, 4}, rng, 0.5f);
    Tensor ctx = randn({3, 6}, rng, 0.5f);
    Tensor mask = randn({2, 3, 4}, rng);
    auto res = gradcheck([&] {
        return sum_all(mul(cross_attention({xd}, ctx, w).data, mask));
    }, {xd, ctx, w.wq, w.wk, w.wv, w.wo}, 1e-2f, 1e-4, 1e-3, 30);
    CHECK(res.ok());
}

TEST_CASE("temporal attention equals per-column oracle") {
    CounterRng rng(9);
    ParamRegistry reg(15);
    auto w = AttentionWeights::create(reg, "attn", ParamGroup::temporal, 8, 8, 2);
    Tensor pos = Tensor::zeros({4, 8});
    FrameTokens x{randn({4, 3, 8}, rng, 0.7f)};
    FrameTokens out = temporal_attention(x, w, pos);
    REQUIRE(out.data.shape() == x.data.shape());

    for (std::int64_t col = 0; col < 3; ++col) {
        std::vector<float> colv(4 * 8);
        for (int f = 0; f < 4; ++f)
            std::memcpy(colv.data() + f * 8, x.data.data().data() + (f * 3 + col) * 8, 8 * sizeof(float));
        Tensor ct = Tensor::from_data({4, 8}, colv);
        auto q = project_rows(ct, w.wq);
        auto k = project_rows(ct, w.wk);
        auto v = project_rows(ct, w.wv);
        auto ref = naive_attention(q.data(), k.data(), v.data(), 4, 4, 8, 2);
        auto refp = apply_proj(ref, w.wo, 4, 8);
        for (int f = 0; f < 4; ++f)
            for (int c = 0; c < 8; ++c)
                CHECK(std::abs(out.data.data()[(f * 3 + col) * 8 + c] - refp[f * 8 + c]) < 1e-5);
    }
}

TEST_CASE("temporal attention with identical frames and zero positions is frame-symmetric") {
    CounterRng rng(10);
    ParamRegistry reg(16);
    auto w = AttentionWeights::create(reg, "attn", ParamGroup::temporal, 8, 8, 2);
    Tensor pos = Tensor::zeros({3, 8});
    Tensor frame = randn({1, 5, 8}, rng);
    std::vector<float> rep;
    for (int f = 0; f < 3; ++f) rep.insert(rep.end(), frame.data().begin(), frame.data().end());
    FrameTokens out = temporal_attention({Tensor::from_data({3, 5, 8}, rep)}, w, pos);
    for (std::int64_t i = 0; i < 40; ++i) {
        CHECK(out.data.data()[i] == doctest::Approx(out.data.data()[40 + i]).epsilon(1e-6));
        CHECK(out.data.data()[i] == doctest::Approx(out.data.data()[80 + i]).epsilon(1e-6));
    }
}

TEST_CASE("RCA duplication identity for identical frames") {
    CounterRng rng(11);
    ParamRegistry reg(17);
    auto w = AttentionWeights::create(reg, "attn", ParamGroup::spatial_rca, 8, 8, 2);
    Tensor frame = randn({1, 6, 8}, rng);
    std::vector<float> rep;
    for (int f = 0; f < 4; ++f) rep.insert(rep.end(), frame.data().begin(), frame.data().end());
    FrameTokens x{Tensor::from_data({4, 6, 8}, rep)};
    FrameTokens rca = recurrent_causal_attention(x, w);
    FrameTokens sa = self_attention({frame}, w);
    for (int f = 0; f < 4; ++f)
        for (std::int64_t i = 0; i < 48; ++i)
            CHECK(std::abs(rca.data.data()[f * 48 + i] - sa.data.data()[i]) < 1e-6f);

    // F=1 reduces to the same identity
    FrameTokens one = recurrent_causal_attention({frame}, w);
    for (std::int64_t i = 0; i < 48; ++i)
        CHECK(std::abs(one.data.data()[i] - sa.data.data()[i]) < 1e-6f);
}

TEST_CASE("RCA matches standalone concatenation oracle including boundaries") {
    CounterRng rng(12);
    ParamRegistry reg(18);
    auto w = AttentionWeights::create(reg, "attn", ParamGroup::spatial_rca, 8, 8, 2);
    std::int64_t F = 3, N = 4, d = 8;
    FrameTokens x{randn({F, N, d}, rng, 0.6f)};
    FrameTokens out = recurrent_causal_attention(x, w);

    auto frame_of = [&](std::int64_t f) {
        return Tensor::from_data({N, d},
            std::vector<float>(x.data.data().begin() + f * N * d, x.data.data().begin() + (f + 1) * N * d));
    };
    // boundary rules: frame 0 -> (z0, z1); frame 1 -> (z0, z2); frame 2 -> (z1, z2)
    std::int64_t ctx_pairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};
    for (std::int64_t f = 0; f < F; ++f) {
        Tensor qf = frame_of(f);
        std::vector<float> ctx;
        for (int half = 0; half < 2; ++half) {
            Tensor cf = frame_of(ctx_pairs[f][half]);
            ctx.insert(ctx.end(), cf.data().begin(), cf.data().end());
        }
        Tensor ctx_t = Tensor::from_data({2 * N, d}, ctx);
        auto q = project_rows(qf, w.wq);
        auto k = project_rows(ctx_t, w.wk);
        auto v = project_rows(ctx_t, w.wv);
        auto ref = naive_attention(q.data(), k.data(), v.data(), N, 2 * N, d, 2);
        auto refp = apply_proj(ref, w.wo, N, d);
        for (std::int64_t i = 0; i < N * d; ++i)
            CHECK(std::abs(out.data.data()[f * N * d + i] - refp[i]) < 1e-5);
    }
}

TEST_CASE("RCA literal-eq9 variant uses (prev, self) value context") {
    CounterRng rng(13);
    ParamRegistry reg(19);
    auto w = AttentionWeights::create(reg, "attn", ParamGroup::spatial_rca, 4, 4, 1);
    FrameTokens x{randn({3, 2, 4}, rng)};
    FrameTokens lit = recurrent_causal_attention(x, w, true);
    FrameTokens sym = recurrent_causal_attention(x, w, false);
    REQUIRE(lit.data.shape() == sym.data.shape());
    bool differs = false;
    for (std::int64_t i = 0; i < lit.data.numel(); ++i)
        if (lit.data.data()[i] != sym.data.data()[i]) differs = true;
    CHECK(differs);
}

TEST_CASE("RCA locality: frames beyond +-1 have bit-zero influence") {
    CounterRng rng(14);
    ParamRegistry reg(20);
    auto w = AttentionWeights::create(reg, "attn", ParamGroup::spatial_rca, 8, 8, 2);
    Tensor base = randn({5, 3, 8}, rng);
    FrameTokens out1 = recurrent_causal_attention({base}, w);
    std::vector<float> pert(base.data().begin(), base.data().end());
    for (std::int64_t i = 4 * 24; i < 5 * 24; ++i) pert[i] += 10.0f;  // frame 4
    FrameTokens out2 = recurrent_causal_attention({Tensor::from_data({5, 3, 8}, pert)}, w);
    // frames 0..2 untouched bit-for-bit; frame 3 and 4 change
    CHECK(std::memcmp(out1.data.data().data(), out2.data.data().data(), sizeof(float) * 3 * 24) == 0);
    bool f3_changed = false;
    for (std::int64_t i = 3 * 24; i < 4 * 24; ++i)
        if (out1.data.data()[i] != out2.data.data()[i]) f3_changed = true;
    CHECK(f3_changed);
}

TEST_CASE("attention ops preserve shape and pass gradcheck on small shapes") {
    CounterRng rng(15);
    ParamRegistry reg(21);
    auto w = AttentionWeights::create(reg, "attn", ParamGroup::spatial_rca, 4, 4, 2);
    auto wt = AttentionWeights::create(reg, "tattn", ParamGroup::temporal, 4, 4, 2);
    Tensor pos = reg.create_const("pos", ParamGroup::temporal, {3, 4}, 0.0f);
    Tensor xd = randn({3, 2, 4}, rng, 0.5f);
    Tensor mask = randn({3, 2, 4}, rng);
    auto res = gradcheck([&] {
        FrameTokens h = recurrent_causal_attention({xd}, w);
        h = temporal_attention(h, wt, pos);
        return sum_all(mul(h.data, mask));
    }, {xd, w.wq, w.wk, w.wv, w.wo, wt.wq, wt.wo, pos}, 1e-2f, 1e-4, 1e-3, 24);
    CHECK(res.ok());
}
