#pragma once

// Slow, direct reimplementations used as test oracles. They deliberately take
// different routes from the library code (pairwise sums, full sorts, long
// double, closed-form inverses) so that a shared mistake is unlikely.

#include <algorithm>
#include <cstdint>
#include <cmath>
#include <numeric>
#include <vector>

namespace metasel::oracle {

using Vec = std::vector<double>;

inline long double sq_dist(const Vec& a, const Vec& b) {
    long double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (static_cast<long double>(a[i]) - b[i]) * (static_cast<long double>(a[i]) - b[i]);
    return s;
}

/// 1 - sum p_i^2 written as the off-diagonal sum of p_i p_j (valid when sum p = 1).
inline double gini(const Vec& p) {
    long double s = 0;
    for (std::size_t i = 0; i < p.size(); ++i)
        for (std::size_t j = 0; j < p.size(); ++j)
            if (i != j) s += static_cast<long double>(p[i]) * p[j];
    return static_cast<double>(s);
}

inline double vanilla(Vec p) {
    std::sort(p.begin(), p.end());
    return 1.0 - p.back();
}

inline double margin(Vec p) {
    std::sort(p.begin(), p.end(), std::greater<>());
    return 1.0 - (p[0] - p[1]);
}

/// Indices of the k nearest refs to q (euclidean), ties by index, skipping `skip`.
inline std::vector<std::size_t> knn(const std::vector<Vec>& refs, const Vec& q, std::size_t k, long skip = -1) {
    std::vector<std::pair<long double, std::size_t>> all;
    for (std::size_t i = 0; i < refs.size(); ++i)
        if (static_cast<long>(i) != skip) all.emplace_back(sq_dist(refs[i], q), i);
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < std::min(k, all.size()); ++i) out.push_back(all[i].second);
    return out;
}

inline double nns(const std::vector<Vec>& probs, const std::vector<Vec>& traces, std::size_t i, std::size_t k,
                  double alpha) {
    auto nb = knn(traces, traces[i], k, static_cast<long>(i));
    Vec smoothed(probs[i].size());
    for (std::size_t c = 0; c < smoothed.size(); ++c) {
        long double m = 0;
        for (auto j : nb) m += probs[j][c];
        smoothed[c] = static_cast<double>(alpha * probs[i][c] + (1.0L - alpha) * m / nb.size());
    }
    return gini(smoothed);
}

/// DATIS from the unshifted weights exp(-d^2 / tau) in long double.
inline double datis(const Vec& z, std::size_t predicted, const std::vector<Vec>& latents,
                    const std::vector<std::size_t>& labels, double tau, std::size_t num_classes) {
    std::vector<long double> support(num_classes, 0.0L);
    long double total = 0;
    for (std::size_t i = 0; i < latents.size(); ++i) {
        const long double w = std::exp(-sq_dist(z, latents[i]) / tau);
        support[labels[i]] += w;
        total += w;
    }
    long double best_other = 0;
    for (std::size_t c = 0; c < num_classes; ++c)
        if (c != predicted) best_other = std::max(best_other, support[c] / total);
    const long double pm = support[predicted] / total;
    if (pm == 0) return INFINITY;
    return static_cast<double>(best_other / pm);
}

inline double euclid(const Vec& a, const Vec& b) {
    double s = 0;
    for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
    return std::sqrt(s);
}

/// DSA by the full pairwise distance matrix. Distances use plain double
/// arithmetic so the comparison can be exact.
inline double dsa(const std::vector<Vec>& traces, const std::vector<std::size_t>& labels, const Vec& x,
                  std::size_t predicted) {
    const std::size_t n = traces.size();
    std::vector<std::vector<double>> dm(n, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) dm[i][j] = euclid(traces[i], traces[j]);
    std::size_t a = n;
    double dist_a = INFINITY;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] != predicted) continue;
        const double d = euclid(x, traces[i]);
        if (d < dist_a) {
            dist_a = d;
            a = i;
        }
    }
    double dist_b = INFINITY;
    for (std::size_t j = 0; j < n; ++j)
        if (labels[j] != predicted) dist_b = std::min(dist_b, dm[a][j]);
    return dist_a / dist_b;
}

/// Negative log of a 1-D Gaussian mixture with Scott bandwidth, summed directly.
inline double lsa_1d(const Vec& pts, double x) {
    const double n = static_cast<double>(pts.size());
    long double mean = 0;
    for (double p : pts) mean += p;
    mean /= n;
    long double var = 0;
    for (double p : pts) var += (p - mean) * (p - mean);
    var /= (n - 1);
    const long double h2 = var * std::pow(n, -2.0 / 5.0);
    const long double pi = std::acos(-1.0L);
    long double dens = 0;
    for (double p : pts) dens += std::exp(-(x - p) * (x - p) / (2 * h2)) / std::sqrt(2 * pi * h2);
    return -static_cast<double>(std::log(dens / n));
}

/// Mahalanobis distance in 2-D with the covariance inverted by hand.
inline double mdsa_2d(const std::vector<Vec>& pts, const Vec& x, double ridge) {
    const double n = static_cast<double>(pts.size());
    double mx = 0, my = 0;
    for (const auto& p : pts) {
        mx += p[0];
        my += p[1];
    }
    mx /= n;
    my /= n;
    double a = 0, b = 0, d = 0;
    for (const auto& p : pts) {
        a += (p[0] - mx) * (p[0] - mx);
        b += (p[0] - mx) * (p[1] - my);
        d += (p[1] - my) * (p[1] - my);
    }
    a = a / (n - 1) + ridge;
    b /= (n - 1);
    d = d / (n - 1) + ridge;
    const double det = a * d - b * b;
    const double u = x[0] - mx, v = x[1] - my;
    return std::sqrt((d * u * u - 2 * b * u * v + a * v * v) / det);
}

// --- ranking metrics, by scanning an explicit id order -----------------------

inline double trc(const std::vector<std::size_t>& order, const std::vector<int>& mis, std::size_t b) {
    int total = 0, found = 0;
    for (int m : mis) total += m;
    for (std::size_t i = 0; i < b; ++i) found += mis[order[i]];
    return static_cast<double>(found) / static_cast<double>(std::min<std::size_t>(b, static_cast<std::size_t>(total)));
}

inline double apfd(const std::vector<std::size_t>& order, const std::vector<int>& mis, std::size_t b) {
    std::vector<double> pos;
    for (std::size_t i = 0; i < b; ++i)
        if (mis[order[i]]) pos.push_back(static_cast<double>(i + 1));
    double s = 0;
    for (double p : pos) s += p / static_cast<double>(b);
    return 1.0 - s / static_cast<double>(pos.size()) + 0.5 / static_cast<double>(b);
}

inline double improvement(double cand, double ref) { return ref == 1.0 ? 0.0 : 100.0 * (cand - ref) / (1.0 - ref); }

// --- Wilcoxon by enumerating every sign assignment ---------------------------

struct WilcoxonOracle {
    double w_plus;
    double p_greater, p_less, p_two_sided;
};

inline WilcoxonOracle wilcoxon(const Vec& diffs) {
    Vec d;
    for (double v : diffs)
        if (v != 0.0) d.push_back(v);
    const std::size_t n = d.size();
    Vec rank(n);
    for (std::size_t i = 0; i < n; ++i) {
        double below = 0, equal = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (std::abs(d[j]) < std::abs(d[i])) below += 1;
            if (std::abs(d[j]) == std::abs(d[i])) equal += 1;
        }
        rank[i] = below + (equal + 1) / 2;
    }
    double w = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (d[i] > 0) w += rank[i];
    std::uint64_t ge = 0, le = 0;
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
        double s = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (mask >> i & 1) s += rank[i];
        ge += s >= w;
        le += s <= w;
    }
    const double total = static_cast<double>(std::uint64_t{1} << n);
    WilcoxonOracle o{w, ge / total, le / total, 0.0};
    o.p_two_sided = std::min(1.0, 2.0 * std::min(o.p_greater, o.p_less));
    return o;
}

}  // namespace metasel::oracle
