#pragma once

// Prioritization metrics (TRC, APFD, improvement), budget sweeps, the
// Wilcoxon signed-rank test, and per-subject summary tables.

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

#include "metasel/csv.hpp"
#include "metasel/errors.hpp"

namespace metasel {

struct RankEntry {
    std::size_t id = 0;
    double score = 0.0;
};

/// Inputs ordered from most to least suspicious. Ties keep ascending id.
struct Ranking {
    std::string method;
    std::string subject;
    std::vector<RankEntry> entries;

    std::size_t size() const { return entries.size(); }

    /// Ranks ids 0..n-1 by descending score. NaN scores are rejected; +inf is
    /// the maximal score.
    static Ranking from_scores(std::span<const double> scores, std::string method = {}, std::string subject = {}) {
        std::vector<std::size_t> ids(scores.size());
        std::iota(ids.begin(), ids.end(), std::size_t{0});
        return from_scores(scores, ids, std::move(method), std::move(subject));
    }

    static Ranking from_scores(std::span<const double> scores, std::span<const std::size_t> ids,
                               std::string method = {}, std::string subject = {}) {
        if (scores.size() != ids.size()) throw DimensionError("ranking: scores and ids differ in length");
        Ranking r{std::move(method), std::move(subject), {}};
        r.entries.reserve(scores.size());
        for (std::size_t i = 0; i < scores.size(); ++i) {
            if (std::isnan(scores[i])) throw NumericError("ranking: NaN score for id " + std::to_string(ids[i]));
            r.entries.push_back({ids[i], scores[i]});
        }
        std::sort(r.entries.begin(), r.entries.end(), [](const RankEntry& a, const RankEntry& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.id < b.id;
        });
        std::vector<std::size_t> sorted_ids(ids.begin(), ids.end());
        std::sort(sorted_ids.begin(), sorted_ids.end());
        auto dup = std::adjacent_find(sorted_ids.begin(), sorted_ids.end());
        if (dup != sorted_ids.end()) throw DataError("ranking: duplicate id " + std::to_string(*dup));
        return r;
    }

    std::vector<std::size_t> order() const {
        std::vector<std::size_t> out;
        out.reserve(entries.size());
        for (const auto& e : entries) out.push_back(e.id);
        return out;
    }
};

/// Which test inputs the model under test gets wrong.
class MisclassificationOracle {
   public:
    MisclassificationOracle() = default;
    explicit MisclassificationOracle(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
        for (auto b : bits_) total_ += b != 0;
    }

    static MisclassificationOracle from_predictions(std::span<const std::size_t> predicted,
                                                    std::span<const std::size_t> labels) {
        if (predicted.size() != labels.size()) throw DimensionError("oracle: predictions and labels differ in length");
        std::vector<std::uint8_t> bits(predicted.size());
        for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = predicted[i] != labels[i];
        return MisclassificationOracle(std::move(bits));
    }

    std::size_t size() const { return bits_.size(); }
    std::size_t total() const { return total_; }
    bool misclassified(std::size_t id) const {
        if (id >= bits_.size()) throw IndexError("oracle: id " + std::to_string(id) + " out of range");
        return bits_[id] != 0;
    }

   private:
    std::vector<std::uint8_t> bits_;
    std::size_t total_ = 0;
};

namespace detail {
inline void check_budget(const Ranking& r, const MisclassificationOracle& o, std::size_t b) {
    if (r.size() != o.size()) throw DimensionError("ranking and oracle cover different test sets");
    if (b < 1 || b > r.size()) {
        throw ConfigError("budget " + std::to_string(b) + " outside [1, " + std::to_string(r.size()) + "]");
    }
}
}  // namespace detail

/// Misclassified inputs among the first b, over min(b, total misclassified).
inline double trc(const Ranking& r, const MisclassificationOracle& o, std::size_t b) {
    detail::check_budget(r, o, b);
    if (o.total() == 0) throw UndefinedMetricError("TRC undefined: the test set has no misclassified inputs");
    std::size_t found = 0;
    for (std::size_t i = 0; i < b; ++i) found += o.misclassified(r.entries[i].id);
    return static_cast<double>(found) / static_cast<double>(std::min(b, o.total()));
}

/// 1 - sum(o_i) / (b * Mis_T) + 1 / (2b), with o_i the 1-based positions of
/// the Mis_T misclassified inputs within the first b.
inline double apfd(const Ranking& r, const MisclassificationOracle& o, std::size_t b) {
    detail::check_budget(r, o, b);
    double positions = 0.0;
    std::size_t found = 0;
    for (std::size_t i = 0; i < b; ++i) {
        if (o.misclassified(r.entries[i].id)) {
            positions += static_cast<double>(i + 1);
            ++found;
        }
    }
    if (found == 0) throw UndefinedMetricError("APFD undefined: no misclassified input within the budget");
    const double bd = static_cast<double>(b);
    return 1.0 - positions / (bd * static_cast<double>(found)) + 1.0 / (2.0 * bd);
}

/// Relative TRC gain in percent; zero when the reference is already perfect.
inline double improvement(double trc_candidate, double trc_reference) {
    if (trc_reference >= 1.0) return 0.0;
    return (trc_candidate - trc_reference) / (1.0 - trc_reference) * 100.0;
}

/// max(1, round-half-up(fraction * n)).
inline std::size_t budget_count(double fraction, std::size_t n) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("budget fraction must lie in (0, 1]");
    const double raw = std::floor(fraction * static_cast<double>(n) + 0.5 + 1e-9);
    return std::clamp<std::size_t>(static_cast<std::size_t>(raw), 1, std::max<std::size_t>(n, 1));
}

inline const std::vector<double>& default_budget_percents() {
    static const std::vector<double> pct{1, 3, 5, 10, 15, 20, 30, 40, 50, 60, 70, 80, 90, 100};
    return pct;
}

struct TrcPoint {
    double fraction = 0.0;
    std::size_t count = 0;
    double trc = 0.0;
    double apfd = std::numeric_limits<double>::quiet_NaN();  // NaN when the prefix holds no fault
};

using TrcCurve = std::vector<TrcPoint>;

inline TrcCurve trc_curve(const Ranking& r, const MisclassificationOracle& o, std::span<const double> fractions) {
    TrcCurve out;
    for (double f : fractions) {
        TrcPoint p;
        p.fraction = f;
        p.count = budget_count(f, r.size());
        p.trc = trc(r, o, p.count);
        try {
            p.apfd = apfd(r, o, p.count);
        } catch (const UndefinedMetricError&) {
        }
        out.push_back(p);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank test

enum class Alternative { two_sided, greater, less };

struct WilcoxonResult {
    double statistic = 0.0;  // W+, the rank sum of positive differences a - b
    double p_value = 1.0;
    std::size_t n = 0;       // nonzero differences
    bool exact = false;
};

inline constexpr std::size_t kWilcoxonExactMaxN = 20;

struct SignedRanks {
    std::vector<double> ranks;     // average ranks of |d|, aligned with positive
    std::vector<bool> positive;
    double tie_term = 0.0;         // sum over tie groups of t^3 - t
};

/// Drops zero differences and assigns average ranks to tied magnitudes.
inline SignedRanks signed_ranks(std::span<const double> diffs) {
    std::vector<double> d;
    for (double v : diffs)
        if (v != 0.0) d.push_back(v);
    SignedRanks out;
    std::vector<std::size_t> idx(d.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return std::abs(d[a]) < std::abs(d[b]); });
    out.ranks.assign(d.size(), 0.0);
    out.positive.assign(d.size(), false);
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && std::abs(d[idx[j + 1]]) == std::abs(d[idx[i]])) ++j;
        const double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        const double t = static_cast<double>(j - i + 1);
        out.tie_term += t * t * t - t;
        for (std::size_t k = i; k <= j; ++k) out.ranks[idx[k]] = avg;
        i = j + 1;
    }
    for (std::size_t i = 0; i < d.size(); ++i) out.positive[i] = d[i] > 0.0;
    return out;
}

namespace detail {
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }
}  // namespace detail

/// Exact null distribution of W+ by counting sign assignments. Ranks are
/// doubled so tied half-ranks stay integral.
inline double wilcoxon_exact_p(const SignedRanks& sr, Alternative alt) {
    const std::size_t n = sr.ranks.size();
    std::vector<std::uint64_t> r2(n);
    std::uint64_t total = 0, w2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
        r2[i] = static_cast<std::uint64_t>(std::llround(sr.ranks[i] * 2.0));
        total += r2[i];
        if (sr.positive[i]) w2 += r2[i];
    }
    std::vector<std::uint64_t> ways(total + 1, 0);
    ways[0] = 1;
    for (auto r : r2)
        for (std::uint64_t s = total; s + 1 > r; --s) ways[s] += ways[s - r];
    std::uint64_t ge = 0, le = 0;
    for (std::uint64_t s = 0; s <= total; ++s) {
        if (s >= w2) ge += ways[s];
        if (s <= w2) le += ways[s];
    }
    const double denom = std::ldexp(1.0, static_cast<int>(n));
    const double p_ge = static_cast<double>(ge) / denom;
    const double p_le = static_cast<double>(le) / denom;
    switch (alt) {
        case Alternative::greater: return p_ge;
        case Alternative::less: return p_le;
        case Alternative::two_sided: break;
    }
    return std::min(1.0, 2.0 * std::min(p_ge, p_le));
}

/// Normal approximation with tie-corrected variance and continuity correction.
inline double wilcoxon_normal_p(const SignedRanks& sr, Alternative alt) {
    const double n = static_cast<double>(sr.ranks.size());
    double w = 0.0;
    for (std::size_t i = 0; i < sr.ranks.size(); ++i)
        if (sr.positive[i]) w += sr.ranks[i];
    const double mean = n * (n + 1.0) / 4.0;
    const double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - sr.tie_term / 48.0;
    if (!(var > 0.0)) throw DegenerateError("wilcoxon: zero variance");
    const double sd = std::sqrt(var);
    switch (alt) {
        case Alternative::greater: return 1.0 - detail::normal_cdf((w - mean - 0.5) / sd);
        case Alternative::less: return detail::normal_cdf((w - mean + 0.5) / sd);
        case Alternative::two_sided: break;
    }
    const double z = std::max(0.0, std::abs(w - mean) - 0.5) / sd;
    return std::min(1.0, 2.0 * (1.0 - detail::normal_cdf(z)));
}

/// Paired test on differences a - b. `greater` tests whether a tends to exceed b.
inline WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b,
                                           Alternative alt = Alternative::two_sided) {
    if (a.size() != b.size()) throw DimensionError("wilcoxon: paired samples differ in length");
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
    auto sr = signed_ranks(d);
    if (sr.ranks.empty()) throw DegenerateError("wilcoxon: all paired differences are zero");
    WilcoxonResult res;
    res.n = sr.ranks.size();
    for (std::size_t i = 0; i < res.n; ++i)
        if (sr.positive[i]) res.statistic += sr.ranks[i];
    res.exact = res.n <= kWilcoxonExactMaxN;
    res.p_value = res.exact ? wilcoxon_exact_p(sr, alt) : wilcoxon_normal_p(sr, alt);
    return res;
}

// ---------------------------------------------------------------------------
// Summaries

struct SubjectInfo {
    std::string name;  // {source}_{corruption}_{severity}
    std::string corruption;
    int severity = 0;
};

struct MethodCurve {
    std::string method;
    TrcCurve curve;
};

struct SubjectResult {
    SubjectInfo subject;
    std::vector<MethodCurve> methods;  // same budgets for every method
};

inline double percent_of(double fraction) { return std::round(fraction * 1e6) / 1e4; }

/// Long-format curve table: one row per (subject, method, budget).
inline csv::Table curve_table(std::span<const SubjectResult> results) {
    csv::Table t({"subject", "method", "severity", "corruption", "budget_pct", "budget_count", "trc", "apfd"});
    for (const auto& s : results)
        for (const auto& m : s.methods)
            for (const auto& p : m.curve) {
                t.add({s.subject.name, m.method, std::to_string(s.subject.severity), s.subject.corruption,
                       csv::fmt(percent_of(p.fraction)), std::to_string(p.count), csv::fmt(p.trc), csv::fmt(p.apfd)});
            }
    return t;
}

struct SummaryRow {
    std::string subject;
    std::string corruption;
    double budget_pct = 0.0;
    double improvement_pct = 0.0;
    std::string second_best_method;
    double trc_candidate = 0.0;
    double trc_second_best = 0.0;
};

/// Per (subject, budget): the best baseline (the highest TRC among methods
/// other than `candidate`, first listed wins ties) and the candidate's
/// improvement over it.
inline std::vector<SummaryRow> summarize(std::span<const SubjectResult> results,
                                         const std::string& candidate = "metasel") {
    std::vector<SummaryRow> rows;
    for (const auto& s : results) {
        if (s.methods.size() < 2) throw ConfigError("summarize needs at least two methods for " + s.subject.name);
        const MethodCurve* cand = nullptr;
        for (const auto& m : s.methods)
            if (m.method == candidate) cand = &m;
        if (cand == nullptr) throw ConfigError("summarize: method '" + candidate + "' missing for " + s.subject.name);
        for (std::size_t bi = 0; bi < cand->curve.size(); ++bi) {
            SummaryRow row;
            row.subject = s.subject.name;
            row.corruption = s.subject.corruption;
            row.budget_pct = percent_of(cand->curve[bi].fraction);
            row.trc_candidate = cand->curve[bi].trc;
            double best = -1.0;
            for (const auto& m : s.methods) {
                if (&m == cand) continue;
                if (m.curve.size() != cand->curve.size()) throw DimensionError("summarize: budget lists differ");
                if (m.curve[bi].trc > best) {
                    best = m.curve[bi].trc;
                    row.second_best_method = m.method;
                }
            }
            row.trc_second_best = best;
            row.improvement_pct = improvement(row.trc_candidate, best);
            rows.push_back(row);
        }
    }
    return rows;
}

inline csv::Table summary_table(std::span<const SummaryRow> rows) {
    csv::Table t({"subject", "corruption", "budget_pct", "improvement_pct", "second_best_method"});
    for (const auto& r : rows) {
        t.add({r.subject, r.corruption, csv::fmt(r.budget_pct), csv::fmt(r.improvement_pct), r.second_best_method});
    }
    return t;
}

/// Linear-interpolated quantile (q in [0, 1]) of an unsorted sample.
inline double quantile(std::vector<double> v, double q) {
    if (v.empty()) throw DataError("quantile of an empty sample");
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline double median(std::vector<double> v) { return quantile(std::move(v), 0.5); }

/// TRC distribution per (method, budget) across subjects.
inline csv::Table distribution_table(std::span<const SubjectResult> results) {
    std::map<std::pair<std::string, double>, std::vector<double>> groups;
    std::vector<std::string> method_order;
    for (const auto& s : results)
        for (const auto& m : s.methods) {
            if (std::find(method_order.begin(), method_order.end(), m.method) == method_order.end()) {
                method_order.push_back(m.method);
            }
            for (const auto& p : m.curve) groups[{m.method, percent_of(p.fraction)}].push_back(p.trc);
        }
    csv::Table t({"method", "budget_pct", "n", "q1", "median", "q3"});
    for (const auto& method : method_order)
        for (const auto& [key, vals] : groups) {
            if (key.first != method) continue;
            t.add({method, csv::fmt(key.second), std::to_string(vals.size()), csv::fmt(quantile(vals, 0.25)),
                   csv::fmt(median(vals)), csv::fmt(quantile(vals, 0.75))});
        }
    return t;
}

}  // namespace metasel
