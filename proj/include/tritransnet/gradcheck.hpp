#pragma once

// Central finite-difference gradient oracle. Rebuilds the forward graph per
// probe, so it stays independent of any single recorded tape.

#include <functional>
#include <random>
#include <vector>

#include "tritransnet/tensor.hpp"

namespace ttn {

struct GradCheckOptions {
    double h = 1e-4;
    long max_coords_per_tensor = 0;  // 0 = all coordinates
    unsigned long long seed = 0;     // coordinate sampling
};

// `build` must evaluate a scalar from the current contents of `leaves`.
// Returns max over probed coordinates of |analytic - fd| / max(1, |fd|).
inline double grad_check(const std::function<Tensor<double>()>& build,
                         std::vector<Tensor<double>>& leaves,
                         GradCheckOptions opt = {}) {
    for (auto& l : leaves) {
        l.set_requires_grad(true);
        l.zero_grad();
    }
    Tensor<double> out = build();
    if (!std::isfinite(out.item()))
        throw NumericError("grad_check: non-finite evaluation at base point");
    out.backward();

    Rng rng(opt.seed);
    double worst = 0.0;
    for (size_t li = 0; li < leaves.size(); ++li) {
        auto& leaf = leaves[li];
        std::vector<long> coords;
        long n = leaf.size();
        if (opt.max_coords_per_tensor > 0 && n > opt.max_coords_per_tensor) {
            std::uniform_int_distribution<long> d(0, n - 1);
            for (long i = 0; i < opt.max_coords_per_tensor; ++i) coords.push_back(d(rng));
        } else {
            coords.resize(n);
            for (long i = 0; i < n; ++i) coords[i] = i;
        }
        for (long c : coords) {
            double orig = leaf.vec()[c];
            double fp, fm;
            {
                NoGradGuard ng;
                leaf.vec()[c] = orig + opt.h;
                fp = build().item();
                leaf.vec()[c] = orig - opt.h;
                fm = build().item();
                leaf.vec()[c] = orig;
            }
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw NumericError("grad_check: non-finite evaluation at leaf " +
                                   std::to_string(li) + " coordinate " + std::to_string(c));
            double fd = (fp - fm) / (2.0 * opt.h);
            double analytic = leaf.grad()[c];
            double err = std::abs(analytic - fd) / std::max(1.0, std::abs(fd));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace ttn
