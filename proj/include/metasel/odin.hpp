#pragma once

// ODIN out-of-distribution scores: temperature-scaled maximum softmax taken
// at an input nudged in the direction that raises that softmax.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "metasel/dataset.hpp"
#include "metasel/errors.hpp"
#include "metasel/models.hpp"
#include "metasel/rng.hpp"
#include "metasel/tensor.hpp"

namespace metasel {

struct OdinConfig {
    double temperature = 1000.0;
    double epsilon = 0.0014;

    void validate() const {
        if (!(temperature > 0.0)) throw ConfigError("odin: temperature must be > 0");
        if (!(epsilon >= 0.0)) throw ConfigError("odin: epsilon must be >= 0");
    }
};

struct OdinCalibration {
    double threshold = 0.0;
    double achieved_tpr = 0.0;
    double achieved_fpr = 0.0;
};

inline constexpr double kOdinTargetTpr = 0.95;

inline double max_scaled_softmax(const Tensor& logits, double temperature) {
    auto p = softmax(scale(logits, 1.0 / temperature).data());
    return *std::max_element(p.begin(), p.end());
}

/// Gradient w.r.t. the input of -log softmax(logits(x)/T)[predicted class].
inline std::vector<double> odin_input_gradient(const Classifier& m, const Tensor& x, double temperature) {
    Tensor xin = x.clone();
    xin.set_requires_grad(true);
    Tape tape;
    auto logits = m.logits(xin, &tape);
    const std::size_t predicted = argmax(logits.data());
    auto loss = softmax_cross_entropy(scale(logits, 1.0 / temperature, &tape), predicted, &tape);
    tape.backward(loss);
    return std::vector<double>(xin.grad().begin(), xin.grad().end());
}

/// Input moved by epsilon against the loss gradient's sign, clipped to [0, 1].
inline Tensor odin_perturb(const Classifier& m, const Tensor& x, const OdinConfig& cfg) {
    if (cfg.epsilon == 0.0) return x;
    auto g = odin_input_gradient(m, x, cfg.temperature);
    std::vector<double> out(x.data().begin(), x.data().end());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double sign = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
        out[i] = std::clamp(out[i] - cfg.epsilon * sign, 0.0, 1.0);
    }
    return Tensor(x.shape(), std::move(out));
}

/// Higher means more in-distribution; lies in (0, 1].
inline double odin_score(const Classifier& m, const Tensor& x, const OdinConfig& cfg) {
    cfg.validate();
    return max_scaled_softmax(m.logits(odin_perturb(m, x, cfg)), cfg.temperature);
}

inline std::vector<double> odin_scores(const Classifier& m, const Dataset& d, const OdinConfig& cfg) {
    std::vector<double> out;
    out.reserve(d.size());
    for (const auto& x : d.inputs) out.push_back(odin_score(m, x, cfg));
    return out;
}

/// Threshold at the 95% true-positive rate on in-distribution scores: the
/// largest t with at least 95% of id_scores >= t.
inline OdinCalibration calibrate_threshold(std::span<const double> id_scores, std::span<const double> ood_scores) {
    if (id_scores.empty() || ood_scores.empty()) throw DataError("calibrate_threshold: empty score list");
    std::vector<double> sorted(id_scores.begin(), id_scores.end());
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    const double n = static_cast<double>(sorted.size());
    auto needed = static_cast<std::size_t>(std::ceil(kOdinTargetTpr * n - 1e-9));
    needed = std::clamp<std::size_t>(needed, 1, sorted.size());
    OdinCalibration cal;
    cal.threshold = sorted[needed - 1];
    auto at_or_above = [&](std::span<const double> s) {
        return static_cast<double>(std::count_if(s.begin(), s.end(), [&](double v) { return v >= cal.threshold; })) /
               static_cast<double>(s.size());
    };
    cal.achieved_tpr = at_or_above(id_scores);
    cal.achieved_fpr = at_or_above(ood_scores);
    return cal;
}

/// Scores strictly below the threshold are out-of-distribution.
inline bool is_in_distribution(double score, const OdinCalibration& cal) { return score >= cal.threshold; }

/// Label-free OOD proxy: every image with its pixels randomly permuted.
inline Dataset shuffle_pixels(const Dataset& d, std::uint64_t seed) {
    Dataset out;
    out.num_classes = d.num_classes;
    out.role = d.role;
    out.labels = d.labels;
    for (std::size_t i = 0; i < d.size(); ++i) {
        std::vector<double> px(d.inputs[i].data().begin(), d.inputs[i].data().end());
        Rng rng(derive_seed(seed, {0x6f6f64ULL, i}));
        std::shuffle(px.begin(), px.end(), rng);
        out.inputs.emplace_back(d.inputs[i].shape(), std::move(px));
    }
    return out;
}

}  // namespace metasel
