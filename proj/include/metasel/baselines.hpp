#pragma once

// Baseline prioritizers. Every score follows "higher = more suspicious".

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "metasel/dataset.hpp"
#include "metasel/errors.hpp"
#include "metasel/eval.hpp"
#include "metasel/models.hpp"
#include "metasel/rng.hpp"

namespace metasel {

// ---------------------------------------------------------------------------
// Probability-based scores

inline void check_probabilities(std::span<const double> p) {
    if (p.empty()) throw DataError("empty probability vector");
    double s = 0.0;
    for (double v : p) {
        if (!(v >= 0.0)) throw DataError("probability vector has a negative or NaN entry");
        s += v;
    }
    if (std::abs(s - 1.0) > 1e-9) throw DataError("probability vector sums to " + std::to_string(s));
}

inline double gini(std::span<const double> p) {
    check_probabilities(p);
    double sq = 0.0;
    for (double v : p) sq += v * v;
    return 1.0 - sq;
}

inline double vanilla(std::span<const double> p) {
    check_probabilities(p);
    return 1.0 - *std::max_element(p.begin(), p.end());
}

/// 1 - (p_m - p_n) with p_m, p_n the two largest probabilities.
inline double margin_suspiciousness(std::span<const double> p) {
    if (p.size() < 2) throw ConfigError("margin needs at least two classes");
    check_probabilities(p);
    double first = -1.0, second = -1.0;
    for (double v : p) {
        if (v > first) {
            second = first;
            first = v;
        } else if (v > second) {
            second = v;
        }
    }
    return 1.0 - (first - second);
}

// ---------------------------------------------------------------------------
// Nearest neighbors

enum class Metric { euclidean, cosine };

inline double distance(std::span<const double> a, std::span<const double> b, Metric metric) {
    if (a.size() != b.size()) throw DimensionError("distance between vectors of different length");
    if (metric == Metric::euclidean) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
        return std::sqrt(s);
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 1.0;
    return 1.0 - dot / std::sqrt(na * nb);
}

/// Exact brute-force k-nearest-neighbor search over a fixed reference set.
class NeighborIndex {
   public:
    NeighborIndex(std::vector<std::vector<double>> refs, std::size_t k, Metric metric = Metric::euclidean)
        : refs_(std::move(refs)), k_(k), metric_(metric) {
        if (k_ < 1) throw ConfigError("neighbor index: k must be >= 1");
        if (refs_.empty()) throw DataError("neighbor index: no reference vectors");
    }

    std::size_t size() const { return refs_.size(); }
    const std::vector<double>& ref(std::size_t i) const { return refs_.at(i); }

    struct Hit {
        std::size_t index;
        double distance;
    };

    /// Up to k nearest references, closest first, ties by index. `exclude`
    /// removes one reference (the query itself when searching within a set).
    std::vector<Hit> query(std::span<const double> v, std::optional<std::size_t> exclude = std::nullopt) const {
        std::vector<Hit> all;
        all.reserve(refs_.size());
        for (std::size_t i = 0; i < refs_.size(); ++i) {
            if (exclude && *exclude == i) continue;
            all.push_back({i, distance(v, refs_[i], metric_)});
        }
        if (all.empty()) throw DataError("neighbor index: no candidate neighbors");
        const std::size_t k = std::min(k_, all.size());
        auto less = [](const Hit& a, const Hit& b) {
            if (a.distance != b.distance) return a.distance < b.distance;
            return a.index < b.index;
        };
        std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), less);
        all.resize(k);
        return all;
    }

   private:
    std::vector<std::vector<double>> refs_;
    std::size_t k_;
    Metric metric_;
};

/// alpha * p_m + (1 - alpha) * mean(neighbors).
inline std::vector<double> nns_smooth(std::span<const double> p_m, const std::vector<std::vector<double>>& neighbors,
                                      double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("nns: alpha must lie in [0, 1]");
    if (neighbors.empty()) throw DataError("nns: empty neighbor list");
    std::vector<double> mean(p_m.size(), 0.0);
    for (const auto& nb : neighbors) {
        if (nb.size() != p_m.size()) throw DimensionError("nns: neighbor distribution has the wrong length");
        for (std::size_t i = 0; i < nb.size(); ++i) mean[i] += nb[i];
    }
    std::vector<double> out(p_m.size());
    const double inv = 1.0 / static_cast<double>(neighbors.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = alpha * p_m[i] + (1.0 - alpha) * mean[i] * inv;
    return out;
}

struct NnsConfig {
    std::size_t k = 10;
    double alpha = 0.5;
    Metric metric = Metric::euclidean;
};

/// Gini of the smoothed distribution, with neighbors drawn from the test
/// set itself (the query excluded) by distance between traces.
inline std::vector<double> nns_scores(const std::vector<std::vector<double>>& probs,
                                      const std::vector<std::vector<double>>& traces, const NnsConfig& cfg) {
    if (probs.size() != traces.size()) throw DimensionError("nns: probs and traces differ in count");
    NeighborIndex index(traces, cfg.k, cfg.metric);
    std::vector<double> out;
    out.reserve(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) {
        std::vector<std::vector<double>> nb;
        for (const auto& h : index.query(traces[i], i)) nb.push_back(probs[h.index]);
        out.push_back(gini(nns_smooth(probs[i], nb, cfg.alpha)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// DATIS

struct LabeledNeighbor {
    std::vector<double> latent;
    std::size_t label = 0;
};

/// Distance-weighted label support p*_c = sum exp(-d^2 / tau) [y = c] / sum
/// exp(-d^2 / tau) over the given neighbors.
inline std::vector<double> datis_support(std::span<const double> z, const std::vector<LabeledNeighbor>& neighbors,
                                         double tau, std::size_t num_classes) {
    if (neighbors.empty()) throw ConfigError("datis: k must be >= 1");
    if (!(tau > 0.0)) throw ConfigError("datis: tau must be > 0");
    std::vector<double> d2;
    for (const auto& nb : neighbors) {
        if (nb.label >= num_classes) throw IndexError("datis: neighbor label out of range");
        const double d = distance(z, nb.latent, Metric::euclidean);
        d2.push_back(d * d);
    }
    // The common factor exp(-min d^2 / tau) cancels, which keeps far neighbors from underflowing to 0 / 0.
    const double base = *std::min_element(d2.begin(), d2.end());
    std::vector<double> support(num_classes, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < neighbors.size(); ++i) {
        const double w = std::exp(-(d2[i] - base) / tau);
        support[neighbors[i].label] += w;
        total += w;
    }
    for (auto& s : support) s /= total;
    return support;
}

/// p*_n / p*_m with m the predicted class and n the best-supported other
/// class; +inf when the prediction has no support at all.
inline double datis(std::span<const double> z, std::size_t predicted, const std::vector<LabeledNeighbor>& neighbors,
                    double tau, std::size_t num_classes) {
    if (num_classes < 2) throw ConfigError("datis: needs at least two classes");
    if (predicted >= num_classes) throw IndexError("datis: predicted class out of range");
    auto p = datis_support(z, neighbors, tau, num_classes);
    double other = 0.0;
    for (std::size_t c = 0; c < num_classes; ++c)
        if (c != predicted) other = std::max(other, p[c]);
    if (p[predicted] == 0.0) return std::numeric_limits<double>::infinity();
    return other / p[predicted];
}

struct DatisConfig {
    std::size_t k = 10;
    double tau = 1.0;
};

inline std::vector<double> datis_scores(const std::vector<std::vector<double>>& test_latents,
                                        std::span<const std::size_t> predicted,
                                        const std::vector<std::vector<double>>& train_latents,
                                        std::span<const std::size_t> train_labels, std::size_t num_classes,
                                        const DatisConfig& cfg) {
    if (train_latents.size() != train_labels.size()) throw DimensionError("datis: training latents and labels differ");
    NeighborIndex index(train_latents, cfg.k);
    std::vector<double> out;
    out.reserve(test_latents.size());
    for (std::size_t i = 0; i < test_latents.size(); ++i) {
        std::vector<LabeledNeighbor> nb;
        for (const auto& h : index.query(test_latents[i])) nb.push_back({train_latents[h.index], train_labels[h.index]});
        out.push_back(datis(test_latents[i], predicted[i], nb, cfg.tau, num_classes));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Surprise adequacy

/// Gaussian KDE with bandwidth matrix H = Scott factor^2 * sample covariance.
class GaussianKde {
   public:
    GaussianKde() = default;

    explicit GaussianKde(const Eigen::MatrixXd& points) : points_(points) {  // rows are samples
        const auto n = points.rows(), d = points.cols();
        if (n < 2) throw DataError("kde needs at least two points");
        if (d < 1) throw DataError("kde needs at least one dimension");
        const Eigen::RowVectorXd mean = points.colwise().mean();
        const Eigen::MatrixXd centered = points.rowwise() - mean;
        const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
        const double factor = std::pow(static_cast<double>(n), -1.0 / (static_cast<double>(d) + 4.0));
        init(cov * factor * factor);
    }

    GaussianKde(const Eigen::MatrixXd& points, const Eigen::MatrixXd& bandwidth) : points_(points) {
        if (points.rows() < 1) throw DataError("kde needs at least one point");
        init(bandwidth);
    }

    const Eigen::MatrixXd& bandwidth() const { return bandwidth_; }

    double log_density(const Eigen::VectorXd& x) const {
        if (x.size() != points_.cols()) throw DimensionError("kde query has the wrong dimension");
        const auto n = points_.rows();
        std::vector<double> terms(static_cast<std::size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i) {
            const Eigen::VectorXd diff = x - points_.row(i).transpose();
            const Eigen::VectorXd y = llt_.matrixL().solve(diff);
            terms[static_cast<std::size_t>(i)] = -0.5 * y.squaredNorm();
        }
        const double m = *std::max_element(terms.begin(), terms.end());
        double s = 0.0;
        for (double t : terms) s += std::exp(t - m);
        return m + std::log(s) - std::log(static_cast<double>(n)) - log_norm_;
    }

   private:
    void init(const Eigen::MatrixXd& bandwidth) {
        bandwidth_ = bandwidth;
        llt_.compute(bandwidth_);
        if (llt_.info() != Eigen::Success) {
            throw NumericError("kde bandwidth matrix is singular (dimension " + std::to_string(bandwidth_.rows()) +
                               ", smallest diagonal " + std::to_string(bandwidth_.diagonal().minCoeff()) + ")");
        }
        const Eigen::MatrixXd l = llt_.matrixL();
        double logdet = 0.0;
        for (Eigen::Index i = 0; i < l.rows(); ++i) logdet += 2.0 * std::log(l(i, i));
        const double pi = std::acos(-1.0);
        log_norm_ = 0.5 * (static_cast<double>(bandwidth_.rows()) * std::log(2.0 * pi) + logdet);
    }

    Eigen::MatrixXd points_;
    Eigen::MatrixXd bandwidth_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
    double log_norm_ = 0.0;
};

struct SAConfig {
    double lsa_variance_threshold = 1e-5;  // trace dimensions below this variance are ignored by LSA
    double mdsa_ridge = 1e-6;
};

/// Reference activation traces grouped by class, with per-class statistics.
class SAReference {
   public:
    static SAReference build(const std::vector<std::vector<double>>& traces, std::span<const std::size_t> labels,
                             std::size_t num_classes, const SAConfig& cfg = {}) {
        if (traces.size() != labels.size()) throw DimensionError("sa reference: traces and labels differ in count");
        if (traces.empty()) throw DataError("sa reference: no traces");
        SAReference ref;
        ref.dim_ = traces.front().size();
        ref.by_class_.resize(num_classes);
        for (std::size_t i = 0; i < traces.size(); ++i) {
            if (labels[i] >= num_classes) throw IndexError("sa reference: label out of range");
            if (traces[i].size() != ref.dim_) throw DimensionError("sa reference: traces differ in length");
            ref.by_class_[labels[i]].push_back(traces[i]);
        }
        ref.classes_.resize(num_classes);
        for (std::size_t c = 0; c < num_classes; ++c) ref.prepare(c, cfg);
        return ref;
    }

    std::size_t num_classes() const { return by_class_.size(); }
    std::size_t dim() const { return dim_; }
    const std::vector<std::vector<double>>& traces(std::size_t c) const { return by_class_.at(c); }

    /// Nearest same-class distance over the distance from that neighbor to
    /// the nearest trace of another class.
    double dsa(std::span<const double> trace, std::size_t predicted) const {
        check(trace, predicted);
        const auto& same = by_class_[predicted];
        if (same.empty()) throw DataError("dsa: no reference traces for class " + std::to_string(predicted));
        std::size_t best = 0;
        double dist_a = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < same.size(); ++i) {
            const double d = distance(trace, same[i], Metric::euclidean);
            if (d < dist_a) {
                dist_a = d;
                best = i;
            }
        }
        double dist_b = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < by_class_.size(); ++c) {
            if (c == predicted) continue;
            for (const auto& t : by_class_[c]) dist_b = std::min(dist_b, distance(same[best], t, Metric::euclidean));
        }
        if (std::isinf(dist_b)) throw DataError("dsa: no reference traces outside class " + std::to_string(predicted));
        if (dist_b == 0.0) return dist_a == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
        return dist_a / dist_b;
    }

    /// Negative log KDE density under the predicted class's traces.
    double lsa(std::span<const double> trace, std::size_t predicted) const {
        check(trace, predicted);
        const auto& cs = classes_[predicted];
        if (!cs.kde) throw NumericError("lsa unavailable for class " + std::to_string(predicted) + ": " + cs.kde_error);
        Eigen::VectorXd x(static_cast<Eigen::Index>(cs.kept_dims.size()));
        for (std::size_t j = 0; j < cs.kept_dims.size(); ++j) x(static_cast<Eigen::Index>(j)) = trace[cs.kept_dims[j]];
        return -cs.kde->log_density(x);
    }

    /// Mahalanobis distance to the predicted class mean, covariance + ridge * I.
    double mdsa(std::span<const double> trace, std::size_t predicted) const {
        check(trace, predicted);
        const auto& cs = classes_[predicted];
        if (by_class_[predicted].empty()) throw DataError("mdsa: no reference traces for class " + std::to_string(predicted));
        if (!cs.cov_ok) throw NumericError("mdsa: covariance of class " + std::to_string(predicted) + " is not invertible");
        Eigen::VectorXd diff(static_cast<Eigen::Index>(dim_));
        for (std::size_t j = 0; j < dim_; ++j) diff(static_cast<Eigen::Index>(j)) = trace[j] - cs.mean(static_cast<Eigen::Index>(j));
        return std::sqrt(std::max(0.0, diff.dot(cs.cov_llt.solve(diff))));
    }

   private:
    struct ClassStats {
        Eigen::VectorXd mean;
        Eigen::LLT<Eigen::MatrixXd> cov_llt;
        bool cov_ok = false;
        std::vector<std::size_t> kept_dims;
        std::optional<GaussianKde> kde;
        std::string kde_error;
    };

    void check(std::span<const double> trace, std::size_t predicted) const {
        if (trace.size() != dim_) throw DimensionError("sa: trace has the wrong dimension");
        if (predicted >= by_class_.size()) throw IndexError("sa: predicted class out of range");
    }

    void prepare(std::size_t c, const SAConfig& cfg) {
        const auto& t = by_class_[c];
        auto& cs = classes_[c];
        if (t.empty()) {
            cs.kde_error = "no reference traces";
            return;
        }
        const auto n = static_cast<Eigen::Index>(t.size()), d = static_cast<Eigen::Index>(dim_);
        Eigen::MatrixXd m(n, d);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < d; ++j) m(i, j) = t[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        cs.mean = m.colwise().mean().transpose();
        const Eigen::MatrixXd centered = m.rowwise() - cs.mean.transpose();
        Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
        if (n > 1) cov = centered.transpose() * centered / static_cast<double>(n - 1);
        cs.cov_llt.compute(cov + cfg.mdsa_ridge * Eigen::MatrixXd::Identity(d, d));
        cs.cov_ok = cs.cov_llt.info() == Eigen::Success;

        if (n < 2) {
            cs.kde_error = "fewer than two reference traces";
            return;
        }
        for (Eigen::Index j = 0; j < d; ++j)
            if (cov(j, j) > cfg.lsa_variance_threshold) cs.kept_dims.push_back(static_cast<std::size_t>(j));
        if (cs.kept_dims.empty()) {
            cs.kde_error = "every trace dimension has variance below the threshold";
            return;
        }
        Eigen::MatrixXd kept(n, static_cast<Eigen::Index>(cs.kept_dims.size()));
        for (std::size_t j = 0; j < cs.kept_dims.size(); ++j)
            kept.col(static_cast<Eigen::Index>(j)) = m.col(static_cast<Eigen::Index>(cs.kept_dims[j]));
        try {
            cs.kde.emplace(kept);
        } catch (const NumericError& e) {
            cs.kde_error = e.what();
        }
    }

    std::size_t dim_ = 0;
    std::vector<std::vector<std::vector<double>>> by_class_;
    std::vector<ClassStats> classes_;
};

// ---------------------------------------------------------------------------
// Deep-ensemble meta-model baseline

/// Two-or-more feature logistic regression fitted by Newton iterations with a
/// small L2 penalty on the weights (not the intercept).
class LogisticRegression {
   public:
    void fit(const std::vector<std::vector<double>>& x, std::span<const int> y, double l2 = 1e-6,
             std::size_t max_iter = 100) {
        if (x.empty() || x.size() != y.size()) throw DataError("logistic regression: bad training data");
        std::size_t pos = 0;
        for (int v : y) pos += v == 1;
        if (pos == 0 || pos == y.size()) throw DataError("logistic regression: training labels contain a single class");
        const auto n = static_cast<Eigen::Index>(x.size()), d = static_cast<Eigen::Index>(x.front().size());
        mean_ = Eigen::VectorXd::Zero(d);
        scale_ = Eigen::VectorXd::Ones(d);
        for (const auto& row : x)
            for (Eigen::Index j = 0; j < d; ++j) mean_(j) += row[static_cast<std::size_t>(j)] / static_cast<double>(n);
        for (Eigen::Index j = 0; j < d; ++j) {
            double ss = 0.0;
            for (const auto& row : x) ss += std::pow(row[static_cast<std::size_t>(j)] - mean_(j), 2);
            const double sd = std::sqrt(ss / static_cast<double>(n));
            scale_(j) = sd > 1e-12 ? sd : 1.0;
        }
        Eigen::MatrixXd a(n, d + 1);
        Eigen::VectorXd t(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            a(i, 0) = 1.0;
            for (Eigen::Index j = 0; j < d; ++j) a(i, j + 1) = (x[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] - mean_(j)) / scale_(j);
            t(i) = y[static_cast<std::size_t>(i)];
        }
        Eigen::MatrixXd penalty = l2 * Eigen::MatrixXd::Identity(d + 1, d + 1);
        penalty(0, 0) = 0.0;
        w_ = Eigen::VectorXd::Zero(d + 1);
        for (std::size_t it = 0; it < max_iter; ++it) {
            const Eigen::VectorXd z = a * w_;
            Eigen::VectorXd p(n), s(n);
            for (Eigen::Index i = 0; i < n; ++i) {
                p(i) = sigmoid(z(i));
                s(i) = std::max(p(i) * (1.0 - p(i)), 1e-12);
            }
            const Eigen::VectorXd grad = a.transpose() * (p - t) + penalty * w_;
            const Eigen::MatrixXd hess = a.transpose() * s.asDiagonal() * a + penalty +
                                         1e-9 * Eigen::MatrixXd::Identity(d + 1, d + 1);
            const Eigen::VectorXd step = hess.ldlt().solve(grad);
            if (!step.allFinite()) throw NumericError("logistic regression: Newton step is not finite");
            w_ -= step;
            if (step.norm() < 1e-10) break;
        }
    }

    double predict_proba(std::span<const double> x) const {
        if (static_cast<Eigen::Index>(x.size()) != mean_.size()) throw DimensionError("logistic regression: wrong width");
        double z = w_(0);
        for (Eigen::Index j = 0; j < mean_.size(); ++j) z += w_(j + 1) * (x[static_cast<std::size_t>(j)] - mean_(j)) / scale_(j);
        return sigmoid(z);
    }

   private:
    Eigen::VectorXd mean_, scale_, w_;
};

struct EnsembleConfig {
    std::size_t members = 5;
    TrainConfig train{10, 0.01, 0.9, 32, 0};
};

/// Number of members whose prediction differs from the model under test.
inline std::size_t variation_count(std::size_t mut_prediction, std::span<const std::size_t> member_predictions) {
    std::size_t n = 0;
    for (auto p : member_predictions) n += p != mut_prediction;
    return n;
}

/// Trains `members` same-architecture models from distinct seeds on
/// `member_train`, fits a logistic model on (gini, variation count) over
/// `logistic_train` labeled by the MUT's correctness, and returns the
/// predicted misclassification probability of each `target_test` input.
inline std::vector<double> ensemble_metamodel_scores(const Classifier& mut, const Dataset& member_train,
                                                     const Dataset& logistic_train, const Dataset& target_test,
                                                     const EnsembleConfig& cfg) {
    if (cfg.members < 1) throw ConfigError("ensemble: members must be >= 1");
    std::vector<Classifier> members;
    for (std::size_t e = 0; e < cfg.members; ++e) {
        TrainConfig tc = cfg.train;
        tc.seed = derive_seed(cfg.train.seed, {0x656e73ULL, e});
        Classifier init(mut.network().reinitialized(derive_seed(tc.seed, {0x696e6974ULL})));
        members.push_back(fit(init, member_train, tc));
    }
    auto features = [&](const Tensor& x, std::size_t& mut_pred) {
        auto f = mut.forward_full(x);
        mut_pred = f.predicted;
        std::vector<std::size_t> preds;
        for (const auto& m : members) preds.push_back(m.predict(x));
        return std::vector<double>{gini(f.probs.data()), static_cast<double>(variation_count(f.predicted, preds))};
    };
    std::vector<std::vector<double>> x;
    std::vector<int> y;
    for (std::size_t i = 0; i < logistic_train.size(); ++i) {
        std::size_t pred = 0;
        x.push_back(features(logistic_train.inputs[i], pred));
        y.push_back(pred != logistic_train.labels[i] ? 1 : 0);
    }
    LogisticRegression lr;
    lr.fit(x, y);
    std::vector<double> out;
    out.reserve(target_test.size());
    for (const auto& in : target_test.inputs) {
        std::size_t pred = 0;
        out.push_back(lr.predict_proba(features(in, pred)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Uniform adapter

/// Model-under-test outputs on the target test set plus the reference data
/// each baseline needs. Unused members may stay empty.
struct BaselineInputs {
    std::size_t num_classes = 0;
    std::vector<std::vector<double>> probs;   // per test input
    std::vector<std::vector<double>> traces;  // deepest hidden layer, per test input
    std::vector<std::size_t> predicted;
    const SAReference* sa = nullptr;
    std::vector<std::vector<double>> train_traces;  // labeled training latents for DATIS
    std::vector<std::size_t> train_labels;
    NnsConfig nns;
    DatisConfig datis;
    std::vector<double> precomputed;  // scores of methods computed elsewhere (ensemble)
};

inline const std::vector<std::string>& baseline_methods() {
    static const std::vector<std::string> m{"gini", "vanilla", "margin", "dsa",  "lsa",
                                            "mdsa", "nns",     "datis",  "ensemble"};
    return m;
}

inline std::vector<double> baseline_scores(const std::string& method, const BaselineInputs& in) {
    const std::size_t n = in.probs.size();
    std::vector<double> s;
    s.reserve(n);
    auto need_sa = [&]() -> const SAReference& {
        if (in.sa == nullptr) throw ConfigError(method + " needs an SA reference");
        return *in.sa;
    };
    if (method == "gini") {
        for (const auto& p : in.probs) s.push_back(gini(p));
    } else if (method == "vanilla") {
        for (const auto& p : in.probs) s.push_back(vanilla(p));
    } else if (method == "margin") {
        for (const auto& p : in.probs) s.push_back(margin_suspiciousness(p));
    } else if (method == "dsa") {
        for (std::size_t i = 0; i < n; ++i) s.push_back(need_sa().dsa(in.traces[i], in.predicted[i]));
    } else if (method == "lsa") {
        for (std::size_t i = 0; i < n; ++i) s.push_back(need_sa().lsa(in.traces[i], in.predicted[i]));
    } else if (method == "mdsa") {
        for (std::size_t i = 0; i < n; ++i) s.push_back(need_sa().mdsa(in.traces[i], in.predicted[i]));
    } else if (method == "nns") {
        s = nns_scores(in.probs, in.traces, in.nns);
    } else if (method == "datis") {
        s = datis_scores(in.traces, in.predicted, in.train_traces, in.train_labels, in.num_classes, in.datis);
    } else if (method == "ensemble") {
        if (in.precomputed.size() != n) throw ConfigError("ensemble scores were not computed");
        s = in.precomputed;
    } else {
        throw ConfigError("unknown method '" + method + "'");
    }
    return s;
}

inline Ranking rank_with(const std::string& method, const BaselineInputs& in, const std::string& subject = {}) {
    return Ranking::from_scores(baseline_scores(method, in), method, subject);
}

}  // namespace metasel
