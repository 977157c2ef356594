#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "support/gradcheck.hpp"
#include "vmedit/ops.hpp"
#include "vmedit/rng.hpp"
#include "vmedit/schedule.hpp"

using namespace vmedit;

namespace {

Tensor randn(Shape shape, CounterRng& rng) {
    std::vector<float> d(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& v : d) v = rng.normal_f();
    return Tensor::from_data(std::move(shape), std::move(d));
}

// Independent left-to-right product of (1 - beta_i) with betas recomputed
// from the endpoints.
double alpha_bar_oracle(int T, double b0, double b1, int t) {
    double run = 1.0;
    for (int i = 0; i < t; ++i) {
        double b = (T == 1) ? b0 : b0 + (b1 - b0) * static_cast<double>(i) / (T - 1);
        run *= 1.0 - b;
    }
    return run;
}

}  // namespace

TEST_CASE("linear schedule basics") {
    auto s1 = make_linear_schedule(1, 0.5, 0.5);
    CHECK(s1.alpha_bar(1) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(s1.alpha_bar(0) == 1.0);

    auto s = make_linear_schedule(1000, 1e-4, 0.02);
    double oracle = alpha_bar_oracle(1000, 1e-4, 0.02, 1000);
    CHECK(std::abs(s.alpha_bar(1000) - oracle) / oracle < 1e-7);
    CHECK(s.alpha_bar(1000) == doctest::Approx(4.04e-5).epsilon(2e-3));
    // betas strictly increasing, endpoints inclusive
    CHECK(s.betas.front() == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(s.betas.back() == doctest::Approx(0.02).epsilon(1e-12));
    for (int i = 1; i < 1000; ++i) CHECK(s.betas[i] > s.betas[i - 1]);
}

TEST_CASE("alpha_bar monotone for random valid schedules") {
    CounterRng rng(100);
    for (int trial = 0; trial < 100; ++trial) {
        int T = 1 + static_cast<int>(rng.below(500));
        double b0 = 1e-5 + rng.uniform() * 0.01;
        double b1 = b0 + rng.uniform() * (0.5 - b0);
        auto s = make_linear_schedule(T, b0, b1);
        double prev = 1.0;
        for (int t = 1; t <= T; ++t) {
            CHECK(s.alpha_bar(t) < prev);
            prev = s.alpha_bar(t);
        }
        CHECK(s.alpha_bar(T) < s.alpha_bar(1));
        CHECK(s.alpha_bar(1) < 1.0);
    }
}

TEST_CASE("schedule tables bit-reproducible") {
    auto a = make_linear_schedule(777, 3e-4, 0.015);
    auto b = make_linear_schedule(777, 3e-4, 0.015);
    CHECK(a.betas == b.betas);
    CHECK(a.alpha_bars == b.alpha_bars);
}

TEST_CASE("invalid schedule configs") {
    CHECK_THROWS_AS(make_linear_schedule(0, 1e-4, 0.02), ConfigError);
    CHECK_THROWS_AS(make_linear_schedule(10, 0.0, 0.02), ConfigError);
    CHECK_THROWS_AS(make_linear_schedule(10, 0.03, 0.02), ConfigError);
    CHECK_THROWS_AS(make_linear_schedule(10, 1e-4, 1.0), ConfigError);
}

TEST_CASE("add_noise endpoints and linearity") {
    auto s = make_linear_schedule(100, 1e-4, 0.02);
    CounterRng rng(1);
    Tensor z0 = randn({2, 3, 4, 4}, rng);
    Tensor eps = randn({2, 3, 4, 4}, rng);
    Tensor at0 = add_noise(z0, eps, 0, s);
    for (std::int64_t i = 0; i < z0.numel(); ++i) CHECK(at0.data()[i] == z0.data()[i]);

    Tensor zzero = Tensor::zeros({2, 3, 4, 4});
    Tensor att = add_noise(zzero, eps, 50, s);
    float c = static_cast<float>(std::sqrt(1.0 - s.alpha_bar(50)));
    for (std::int64_t i = 0; i < eps.numel(); ++i)
        CHECK(att.data()[i] == doctest::Approx(eps.data()[i] * c).epsilon(1e-6));

    CHECK_THROWS_AS(add_noise(z0, eps, 101, s), ContractError);
}

TEST_CASE("add_noise empirical variance matches 1-alpha_bar") {
    auto s = make_linear_schedule(100, 1e-3, 0.05);
    CounterRng rng(2);
    int t = 60;
    const int n = 100000;
    Tensor zero = Tensor::zeros({1});
    double s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        Tensor eps = Tensor::from_data({1}, {rng.normal_f()});
        double v = add_noise(zero, eps, t, s).data()[0];
        s2 += v * v;
    }
    double expect = 1.0 - s.alpha_bar(t);
    CHECK(std::abs(s2 / n - expect) / expect < 0.02);
}

TEST_CASE("ddim single-step algebra") {
    auto s = make_linear_schedule(1000, 1e-4, 0.02);
    CounterRng rng(3);
    Tensor z0 = randn({1, 2, 4, 4}, rng);
    Tensor eps = randn({1, 2, 4, 4}, rng);
    int t = 400;

    // eps_pred = 0, t_prev = 0: z_t / sqrt(ab_t)
    Tensor z_t = add_noise(z0, eps, t, s);
    Tensor zhat = ddim_sample_step(z_t, Tensor::zeros(z_t.shape()), t, 0, s);
    float inv = static_cast<float>(1.0 / std::sqrt(s.alpha_bar(t)));
    for (std::int64_t i = 0; i < z_t.numel(); ++i)
        CHECK(zhat.data()[i] == doctest::Approx(z_t.data()[i] * inv).epsilon(1e-5));

    // exact reconstruction when eps_pred equals the true noise
    Tensor rec = ddim_sample_step(z_t, eps, t, 0, s);
    for (std::int64_t i = 0; i < z0.numel(); ++i)
        CHECK(rec.data()[i] == doctest::Approx(z0.data()[i]).epsilon(2e-5));

    CHECK_THROWS_AS(ddim_sample_step(z_t, eps, 100, 200, s), ContractError);
    CHECK_THROWS_AS(ddim_invert_step(z_t, eps, 200, 100, s), ContractError);
}

TEST_CASE("invert then sample is identity for fixed eps_pred") {
    auto s = make_linear_schedule(1000, 1e-4, 0.02);
    CounterRng rng(4);
    Tensor z = randn({1, 3, 4, 4}, rng);
    Tensor e = randn({1, 3, 4, 4}, rng);

    // plug-in: eps_pred = 0 scales by sqrt(ab_t/ab_prev)
    Tensor up = ddim_invert_step(z, Tensor::zeros(z.shape()), 100, 200, s);
    float c = static_cast<float>(std::sqrt(s.alpha_bar(200) / s.alpha_bar(100)));
    for (std::int64_t i = 0; i < z.numel(); ++i)
        CHECK(up.data()[i] == doctest::Approx(z.data()[i] * c).epsilon(1e-6));

    Tensor there = ddim_invert_step(z, e, 240, 460, s);
    Tensor back = ddim_sample_step(there, e, 460, 240, s);
    for (std::int64_t i = 0; i < z.numel(); ++i)
        CHECK(std::abs(back.data()[i] - z.data()[i]) < 1e-5f);
}

TEST_CASE("full trajectory round trip with constant-eps model") {
    auto s = make_linear_schedule(1000, 1e-4, 0.02);
    auto plan = DdimStepPlan::uniform(s, 50);
    CHECK(plan.timesteps.front() == 1000);
    for (std::size_t i = 1; i < plan.timesteps.size(); ++i)
        CHECK(plan.timesteps[i] < plan.timesteps[i - 1]);

    CounterRng rng(5);
    Tensor z0 = randn({2, 3, 4, 4}, rng);
    Tensor ce = randn({2, 3, 4, 4}, rng);
    EpsFn model = [&](const Tensor&, int) { return ce; };
    Tensor zstar = invert_loop(z0, model, plan, s);
    Tensor rec = sample_loop(zstar, model, plan, s);
    for (std::int64_t i = 0; i < z0.numel(); ++i)
        CHECK(std::abs(rec.data()[i] - z0.data()[i]) < 1e-4f);
}

TEST_CASE("invert_loop with zero-eps model telescopes") {
    auto s = make_linear_schedule(200, 1e-4, 0.02);
    auto plan = DdimStepPlan::uniform(s, 10);
    CounterRng rng(6);
    Tensor z0 = randn({1, 1, 2, 2}, rng);
    EpsFn zero = [](const Tensor& z, int) { return Tensor::zeros(z.shape()); };
    Tensor zstar = invert_loop(z0, zero, plan, s);
    float c = static_cast<float>(std::sqrt(s.alpha_bar(plan.timesteps.front())));
    for (std::int64_t i = 0; i < z0.numel(); ++i)
        CHECK(zstar.data()[i] == doctest::Approx(z0.data()[i] * c).epsilon(1e-5));
}

TEST_CASE("model shape mismatch rejected in loops") {
    auto s = make_linear_schedule(100, 1e-4, 0.02);
    auto plan = DdimStepPlan::uniform(s, 5);
    Tensor z0 = Tensor::zeros({1, 1, 2, 2});
    EpsFn bad = [](const Tensor&, int) { return Tensor::zeros({1, 1, 2, 3}); };
    CHECK_THROWS_AS(invert_loop(z0, bad, plan, s), ShapeError);
}

TEST_CASE("denoise_loss oracle and expectation") {
    auto s = make_linear_schedule(100, 1e-4, 0.02);
    CounterRng rng(7);
    Tensor z0 = randn({1, 2, 4, 4}, rng);

    // oracle model that returns the true noise: loss must be ~0
    // (recover eps from z_t and z0 in closed form)
    int captured_t = 0;
    EpsFn oracle = [&](const Tensor& z_t, int t) {
        captured_t = t;
        double ab = s.alpha_bar(t);
        std::vector<float> e(static_cast<std::size_t>(z_t.numel()));
        for (std::int64_t i = 0; i < z_t.numel(); ++i)
            e[i] = static_cast<float>((z_t.data()[i] - std::sqrt(ab) * z0.data()[i]) / std::sqrt(1.0 - ab));
        return Tensor::from_data(z_t.shape(), std::move(e));
    };
    for (int i = 0; i < 5; ++i) CHECK(denoise_loss(oracle, z0, s, rng).item() < 1e-9f);
    CHECK(captured_t >= 1);
    CHECK(captured_t <= 100);

    // zero model: expected loss is the unit Gaussian energy
    EpsFn zero = [](const Tensor& z, int) { return Tensor::zeros(z.shape()); };
    double acc = 0.0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) acc += denoise_loss(zero, z0, s, rng).item_hi();
    CHECK(std::abs(acc / n - 1.0) < 0.05);
}

TEST_CASE("denoise_loss is differentiable through the model") {
    auto s = make_linear_schedule(50, 1e-3, 0.02);
    CounterRng rng(8);
    Tensor z0 = randn({1, 1, 2, 2}, rng);
    Tensor w = randn({4, 4}, rng);
    // tiny linear model over flattened latent
    auto make_loss = [&] {
        CounterRng draw(99);  // frozen draw so fd sees a fixed function
        EpsFn model = [&](const Tensor& z, int) {
            return reshape(linear(reshape(z, {1, 4}), w, Tensor()), z.shape());
        };
        return denoise_loss(model, z0, s, draw);
    };
    auto res = vmedit::testing::gradcheck(make_loss, {w});
    CHECK(res.ok());
}

TEST_CASE("schedule dump has one line per step") {
    auto s = make_linear_schedule(5, 1e-4, 0.02);
    std::string d = dump_schedule(s);
    int lines = 0;
    for (char c : d)
        if (c == '\n') ++lines;
    CHECK(lines == 6);
    CHECK(d.find("alpha_bar") != std::string::npos);
}
