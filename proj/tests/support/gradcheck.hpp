#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <span>
#include <vector>

#include "vmedit/tensor.hpp"

namespace vmedit::testing {

// Central finite differences against reverse-mode gradients.
// `f` must rebuild its graph on every call, reading the current values of
// the listed inputs, and return a scalar loss tensor.
struct GradcheckResult {
    // Worst |fd - ad| / (atol + rtol*(|fd| + |ad|)); below 1 passes, i.e.
    // relative error < rtol with an absolute floor of atol.
    double max_score = 0.0;
    double worst_fd = 0.0, worst_ad = 0.0;
    std::int64_t checked = 0;
    bool ok() const { return checked > 0 && max_score < 1.0; }
};

inline GradcheckResult gradcheck(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                                 float h = 1e-2f, double atol = 1e-4, double rtol = 1e-3,
                                 std::size_t max_coords_per_input = 0) {
    for (auto& t : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    {
        Tensor loss = f();
        backward(loss);
    }
    GradcheckResult res;
    for (auto& t : inputs) {
        std::span<float> vals = t.raw();
        std::span<const float> g = t.grad();
        std::size_t n = vals.size();
        std::size_t step = 1;
        if (max_coords_per_input > 0 && n > max_coords_per_input) step = n / max_coords_per_input;
        for (std::size_t i = 0; i < n; i += step) {
            float keep = vals[i];
            double lp, lm, lp2, lm2;
            {
                NoGradGuard no_grad;
                vals[i] = keep + h;
                lp = f().item_hi();
                vals[i] = keep - h;
                lm = f().item_hi();
                vals[i] = keep + h / 2;
                lp2 = f().item_hi();
                vals[i] = keep - h / 2;
                lm2 = f().item_hi();
                vals[i] = keep;
            }
            // Richardson pair: cancels the O(h^2) truncation term, so h can
            // stay large enough to ride above float32 evaluation noise
            double fd1 = (lp - lm) / (2.0 * static_cast<double>(h));
            double fd2 = (lp2 - lm2) / (static_cast<double>(h));
            double fd = (4.0 * fd2 - fd1) / 3.0;
            double ad = g[i];
            double score = std::abs(fd - ad) / (atol + rtol * (std::abs(fd) + std::abs(ad)));
            if (score > res.max_score) {
                res.max_score = score;
                res.worst_fd = fd;
                res.worst_ad = ad;
            }
            ++res.checked;
        }
        t.zero_grad();
        t.set_requires_grad(false);
    }
    return res;
}

}  // namespace vmedit::testing
