#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "metasel/tensor.hpp"

namespace metasel::testing {

/// Central-difference gradient of a scalar function of `x`'s values.
/// `f` must read x's storage afresh on every call.
inline std::vector<double> numeric_gradient(Tensor x, const std::function<double()>& f, double step = 1e-6) {
    std::vector<double> g(x.size());
    auto d = x.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double orig = d[i];
        d[i] = orig + step;
        const double up = f();
        d[i] = orig - step;
        const double down = f();
        d[i] = orig;
        g[i] = (up - down) / (2.0 * step);
    }
    return g;
}

/// Largest elementwise relative error, with a floor on the denominator so that
/// components which are zero analytically are judged on absolute scale.
inline double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                                 double floor = 1e-3) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
    }
    return worst;
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad = true, double lo = -1.0,
                            double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(shape_size(shape));
    for (auto& x : v) x = u(rng);
    return Tensor(std::move(shape), std::move(v), requires_grad);
}

}  // namespace metasel::testing
