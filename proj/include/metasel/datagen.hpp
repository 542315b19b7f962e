#pragma once

// Synthetic glyph datasets, severity-indexed corruptions, stratified splits,
// IDX ingestion and the "MSDS" dataset cache.
//
// MSDS layout (little-endian):
//   "MSDS" | u32 version (=1) | u32 num_classes | u32 count | u32 H | u32 W |
//   count x u16 labels | count*H*W x f32 pixels (row-major, image by image)

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "metasel/binary_io.hpp"
#include "metasel/dataset.hpp"
#include "metasel/errors.hpp"
#include "metasel/rng.hpp"
#include "metasel/tensor.hpp"

namespace metasel {

inline constexpr std::size_t kGlyphSize = 16;

enum class Corruption { brightness, saturate, spatter, contrast, gaussian_noise, jpeg_like, speckle_noise };

inline constexpr std::array<Corruption, 7> kAllCorruptions = {
    Corruption::brightness, Corruption::saturate,  Corruption::spatter,       Corruption::contrast,
    Corruption::gaussian_noise, Corruption::jpeg_like, Corruption::speckle_noise};

inline std::string corruption_name(Corruption c) {
    switch (c) {
        case Corruption::brightness: return "brightness";
        case Corruption::saturate: return "saturate";
        case Corruption::spatter: return "spatter";
        case Corruption::contrast: return "contrast";
        case Corruption::gaussian_noise: return "gaussian_noise";
        case Corruption::jpeg_like: return "jpeg_like";
        case Corruption::speckle_noise: return "speckle_noise";
    }
    return "unknown";
}

inline Corruption parse_corruption(const std::string& s) {
    for (auto c : kAllCorruptions)
        if (corruption_name(c) == s) return c;
    throw ConfigError("unknown corruption '" + s + "'");
}

struct ShiftSpec {
    Corruption corruption = Corruption::gaussian_noise;
    int severity = 3;
    std::uint64_t seed = 0;

    void validate() const {
        if (severity < 1 || severity > 5) {
            throw ConfigError("severity must be in [1, 5], got " + std::to_string(severity));
        }
    }
};

/// Parameter used by `corruption` at severity 1..5.
inline double severity_parameter(Corruption c, int severity) {
    static constexpr std::array<double, 5> gaussian{0.02, 0.05, 0.10, 0.18, 0.30};
    static constexpr std::array<double, 5> speckle{0.05, 0.10, 0.20, 0.35, 0.50};
    static constexpr std::array<double, 5> brightness{0.05, 0.10, 0.20, 0.30, 0.45};
    static constexpr std::array<double, 5> contrast{0.9, 0.75, 0.6, 0.45, 0.3};
    static constexpr std::array<double, 5> gamma{0.9, 0.75, 0.6, 0.45, 0.3};
    static constexpr std::array<double, 5> spatter{0.02, 0.05, 0.10, 0.15, 0.22};
    static constexpr std::array<double, 5> jpeg{1, 2, 4, 6, 8};
    if (severity < 1 || severity > 5) throw ConfigError("severity must be in [1, 5]");
    const auto i = static_cast<std::size_t>(severity - 1);
    switch (c) {
        case Corruption::gaussian_noise: return gaussian[i];
        case Corruption::speckle_noise: return speckle[i];
        case Corruption::brightness: return brightness[i];
        case Corruption::contrast: return contrast[i];
        case Corruption::saturate: return gamma[i];
        case Corruption::spatter: return spatter[i];
        case Corruption::jpeg_like: return jpeg[i];
    }
    throw ConfigError("unknown corruption");
}

// ---------------------------------------------------------------------------
// Splits

namespace detail {

// Max-flow rounding of a real class x split allocation table: every cell ends
// at floor or ceil of its ideal value, rows sum to the class sizes and columns
// to their integer targets. Falls back to greedy fix-up if no such table exists.
inline std::vector<std::vector<std::size_t>> round_allocation(const std::vector<std::size_t>& rows,
                                                              const std::vector<double>& fractions,
                                                              const std::vector<std::size_t>& col_targets) {
    const std::size_t R = rows.size(), K = fractions.size();
    std::vector<std::vector<std::size_t>> cell(R, std::vector<std::size_t>(K));
    std::vector<std::vector<bool>> frac_part(R, std::vector<bool>(K));
    std::vector<long> row_need(R), col_need(K);
    for (std::size_t k = 0; k < K; ++k) col_need[k] = static_cast<long>(col_targets[k]);
    for (std::size_t r = 0; r < R; ++r) {
        row_need[r] = static_cast<long>(rows[r]);
        for (std::size_t k = 0; k < K; ++k) {
            const double ideal = fractions[k] * static_cast<double>(rows[r]);
            const double fl = std::floor(ideal + 1e-9);
            cell[r][k] = static_cast<std::size_t>(fl);
            frac_part[r][k] = ideal - fl > 1e-9;
            row_need[r] -= static_cast<long>(cell[r][k]);
            col_need[k] -= static_cast<long>(cell[r][k]);
        }
    }
    // Bipartite flow: source -> row (row_need) -> cell (cap 1 if fractional) -> col (col_need) -> sink.
    // Augment with DFS; graph is tiny.
    std::vector<std::vector<int>> used(R, std::vector<int>(K, 0));
    std::vector<long> row_left = row_need, col_left = col_need;
    auto augment = [&]() {
        // BFS over rows/cols alternating: row r can send to col k if cell fractional and unused,
        // col k can push back to row r' if used[r'][k].
        std::vector<int> prev_row(K, -1), prev_col(R, -1);
        std::vector<bool> seen_row(R, false), seen_col(K, false);
        std::vector<std::size_t> frontier;
        for (std::size_t r = 0; r < R; ++r)
            if (row_left[r] > 0) {
                seen_row[r] = true;
                frontier.push_back(r);
            }
        while (!frontier.empty()) {
            std::vector<std::size_t> next;
            for (auto r : frontier) {
                for (std::size_t k = 0; k < K; ++k) {
                    if (seen_col[k] || !frac_part[r][k] || used[r][k]) continue;
                    seen_col[k] = true;
                    prev_row[k] = static_cast<int>(r);
                    if (col_left[k] > 0) {
                        // unwind
                        std::size_t kk = k;
                        while (true) {
                            const auto rr = static_cast<std::size_t>(prev_row[kk]);
                            used[rr][kk] = 1;
                            if (prev_col[rr] < 0) {
                                --row_left[rr];
                                break;
                            }
                            const auto pk = static_cast<std::size_t>(prev_col[rr]);
                            used[rr][pk] = 0;
                            kk = pk;
                        }
                        --col_left[k];
                        return true;
                    }
                    for (std::size_t r2 = 0; r2 < R; ++r2) {
                        if (seen_row[r2] || !used[r2][k]) continue;
                        seen_row[r2] = true;
                        prev_col[r2] = static_cast<int>(k);
                        next.push_back(r2);
                    }
                }
            }
            frontier = std::move(next);
        }
        return false;
    };
    while (augment()) {
    }
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t k = 0; k < K; ++k) cell[r][k] += static_cast<std::size_t>(used[r][k]);
    // Greedy fix-up for whatever the flow could not place.
    for (std::size_t r = 0; r < R; ++r) {
        while (row_left[r] > 0) {
            std::size_t best = 0;
            for (std::size_t k = 1; k < K; ++k)
                if (col_left[k] > col_left[best]) best = k;
            ++cell[r][best];
            --col_left[best];
            --row_left[r];
        }
    }
    return cell;
}

}  // namespace detail

/// Disjoint seeded stratified splits. Split k receives round(f_k * N) items;
/// each class contributes floor or ceil of f_k times its size wherever possible.
inline std::vector<Dataset> split(const Dataset& d, const std::vector<double>& fractions, std::uint64_t seed) {
    if (fractions.empty()) throw ConfigError("split: no fractions given");
    double total = 0.0;
    for (double f : fractions) {
        if (!(f > 0.0)) throw ConfigError("split: fractions must be positive");
        total += f;
    }
    if (total > 1.0 + 1e-9) throw ConfigError("split: fractions sum to more than 1");
    const std::size_t N = d.size();
    std::vector<double> fr = fractions;
    std::vector<std::size_t> targets;
    std::size_t assigned = 0;
    for (double f : fractions) {
        targets.push_back(static_cast<std::size_t>(std::floor(f * static_cast<double>(N) + 0.5)));
        assigned += targets.back();
    }
    if (assigned > N) {  // rounding overshoot when fractions sum to 1
        for (std::size_t k = targets.size(); k-- > 0 && assigned > N;) {
            --targets[k];
            --assigned;
        }
    }
    const double rest = std::max(0.0, 1.0 - total);
    fr.push_back(rest);
    targets.push_back(N - assigned);

    std::vector<std::vector<std::size_t>> by_class(d.num_classes);
    for (std::size_t i = 0; i < N; ++i) by_class[d.labels[i]].push_back(i);
    std::vector<std::size_t> rows;
    for (auto& v : by_class) rows.push_back(v.size());
    auto alloc = detail::round_allocation(rows, fr, targets);

    Rng rng(derive_seed(seed, {0x73706c6974ULL}));
    std::vector<std::vector<std::size_t>> members(fractions.size());
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto idx = by_class[c];
        std::shuffle(idx.begin(), idx.end(), rng);
        std::size_t pos = 0;
        for (std::size_t k = 0; k < fractions.size(); ++k) {
            for (std::size_t j = 0; j < alloc[c][k]; ++j) members[k].push_back(idx[pos++]);
        }
    }
    std::vector<Dataset> out;
    for (std::size_t k = 0; k < fractions.size(); ++k) {
        if (members[k].empty()) throw ConfigError("split: fraction " + std::to_string(fractions[k]) + " is empty");
        std::sort(members[k].begin(), members[k].end());
        out.push_back(d.subset(members[k], d.role));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Glyph rendering

namespace detail {

inline double seg_dist(double px, double py, double ax, double ay, double bx, double by) {
    const double vx = bx - ax, vy = by - ay;
    const double t = std::clamp(((px - ax) * vx + (py - ay) * vy) / (vx * vx + vy * vy), 0.0, 1.0);
    return std::hypot(px - ax - t * vx, py - ay - t * vy);
}

// Distance from (u, v) (shape frame, unit radius) to the glyph of `family`;
// 0 inside filled regions.
inline double family_distance(std::size_t family, double u, double v, double half_width) {
    switch (family % 8) {
        case 0:  // filled disc
            return std::max(0.0, std::hypot(u, v) - 0.8);
        case 1:  // ring
            return std::max(0.0, std::abs(std::hypot(u, v) - 0.8) - half_width);
        case 2: {  // square outline
            const double d = std::max(std::abs(u), std::abs(v));
            return std::max(0.0, std::abs(d - 0.75) - half_width);
        }
        case 3:  // plus
            return std::max(0.0, std::min(seg_dist(u, v, -0.9, 0, 0.9, 0), seg_dist(u, v, 0, -0.9, 0, 0.9)) -
                                     half_width);
        case 4:  // diagonal cross
            return std::max(0.0, std::min(seg_dist(u, v, -0.7, -0.7, 0.7, 0.7), seg_dist(u, v, -0.7, 0.7, 0.7, -0.7)) -
                                     half_width);
        case 5:  // two horizontal bars
            return std::max(0.0, std::min(seg_dist(u, v, -0.8, -0.45, 0.8, -0.45), seg_dist(u, v, -0.8, 0.45, 0.8, 0.45)) -
                                     half_width);
        case 6:  // two vertical bars
            return std::max(0.0, std::min(seg_dist(u, v, -0.45, -0.8, -0.45, 0.8), seg_dist(u, v, 0.45, -0.8, 0.45, 0.8)) -
                                     half_width);
        default: {  // triangle outline
            const double d = std::min({seg_dist(u, v, 0, -0.85, 0.8, 0.6), seg_dist(u, v, 0.8, 0.6, -0.8, 0.6),
                                       seg_dist(u, v, -0.8, 0.6, 0, -0.85)});
            return std::max(0.0, d - half_width);
        }
    }
}

inline void render_glyph(std::size_t cls, Rng& rng, std::span<double> px) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> n01(0.0, 1.0);
    const std::size_t family = cls % 8;
    const std::size_t variant = cls / 8;
    const double half_width = (variant % 2 == 0 ? 0.12 : 0.22) + 0.28 * u01(rng);
    const double scale = 3.2 + 3.2 * u01(rng);  // pixels per unit radius
    const double angle = (u01(rng) - 0.5) * 1.2;
    const double cx = 7.5 + (u01(rng) - 0.5) * 4.0, cy = 7.5 + (u01(rng) - 0.5) * 4.0;
    const double ink = 0.35 + 0.65 * u01(rng);
    const double ca = std::cos(angle), sa = std::sin(angle);
    // Variants beyond the first pair add a marker dot at one of six positions.
    const std::size_t marker = variant / 2;
    const double mang = static_cast<double>(marker) * std::numbers::pi / 3.0;
    const double mx = 1.05 * std::cos(mang), my = 1.05 * std::sin(mang);
    const double softness = 0.9 / scale;
    for (std::size_t y = 0; y < kGlyphSize; ++y) {
        for (std::size_t x = 0; x < kGlyphSize; ++x) {
            const double dx = (static_cast<double>(x) - cx) / scale, dy = (static_cast<double>(y) - cy) / scale;
            const double uu = ca * dx + sa * dy, vv = -sa * dx + ca * dy;
            double d = family_distance(family, uu, vv, half_width);
            if (marker > 0) d = std::min(d, std::max(0.0, std::hypot(uu - mx, vv - my) - 0.18));
            const double v = ink * std::clamp(1.0 - d / softness, 0.0, 1.0);
            px[y * kGlyphSize + x] = v;
        }
    }
    // Clutter: a faint stray stroke on some images, plus sensor noise.
    for (int stroke = 0; stroke < 2; ++stroke) {
        if (u01(rng) >= 0.45) continue;
        const double ax = u01(rng) * 16, ay = u01(rng) * 16, bx = u01(rng) * 16, by = u01(rng) * 16;
        const double amp = 0.3 + 0.5 * u01(rng);
        for (std::size_t y = 0; y < kGlyphSize; ++y)
            for (std::size_t x = 0; x < kGlyphSize; ++x) {
                const double d = seg_dist(static_cast<double>(x), static_cast<double>(y), ax, ay, bx, by);
                px[y * kGlyphSize + x] = std::max(px[y * kGlyphSize + x], amp * std::clamp(1.0 - d, 0.0, 1.0));
            }
    }
    for (auto& v : px) v = std::clamp(v + 0.08 * n01(rng), 0.0, 1.0);
}

// Pixels are stored at float precision so that cache round-trips are exact.
inline void quantize(std::span<double> px) {
    for (auto& v : px) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace detail

/// Procedurally rendered 16x16 grayscale glyphs, one shape family per class,
/// with jittered pose, scale, stroke and ink. Classes are grouped in order.
inline Dataset gen_source(std::size_t num_classes, std::size_t per_class_count, std::uint64_t seed) {
    if (num_classes < 2 || num_classes > 100) throw ConfigError("gen_source: num_classes must be in [2, 100]");
    if (per_class_count < 1) throw ConfigError("gen_source: per_class_count must be >= 1");
    Dataset d;
    d.num_classes = num_classes;
    d.role = Role::source_train;
    for (std::size_t c = 0; c < num_classes; ++c) {
        for (std::size_t i = 0; i < per_class_count; ++i) {
            Rng rng(derive_seed(seed, {c, i}));
            std::vector<double> px(kGlyphSize * kGlyphSize);
            detail::render_glyph(c, rng, px);
            detail::quantize(px);
            d.inputs.emplace_back(Shape{1, kGlyphSize, kGlyphSize}, std::move(px));
            d.labels.push_back(c);
        }
    }
    return d;
}

// ---------------------------------------------------------------------------
// Corruptions

namespace detail {

// Orthonormal 4-point DCT-II basis.
inline const std::array<std::array<double, 4>, 4>& dct4() {
    static const auto basis = [] {
        std::array<std::array<double, 4>, 4> b{};
        for (std::size_t k = 0; k < 4; ++k)
            for (std::size_t n = 0; n < 4; ++n) {
                const double s = k == 0 ? std::sqrt(0.25) : std::sqrt(0.5);
                b[k][n] = s * std::cos(std::numbers::pi * (2.0 * n + 1.0) * k / 8.0);
            }
        return b;
    }();
    return basis;
}

// Zigzag order of a 4x4 block, low frequency first.
inline constexpr std::array<std::size_t, 16> kZigzag4 = {0, 1, 4, 8, 5, 2, 3, 6, 9, 12, 13, 10, 7, 11, 14, 15};

inline void jpeg_like(std::span<double> px, std::size_t h, std::size_t w, std::size_t zeroed) {
    const auto& B = dct4();
    for (std::size_t by = 0; by + 4 <= h; by += 4)
        for (std::size_t bx = 0; bx + 4 <= w; bx += 4) {
            double blk[4][4], coef[4][4], tmp[4][4];
            for (std::size_t y = 0; y < 4; ++y)
                for (std::size_t x = 0; x < 4; ++x) blk[y][x] = px[(by + y) * w + bx + x];
            for (std::size_t k = 0; k < 4; ++k)
                for (std::size_t x = 0; x < 4; ++x) {
                    tmp[k][x] = 0;
                    for (std::size_t n = 0; n < 4; ++n) tmp[k][x] += B[k][n] * blk[n][x];
                }
            for (std::size_t k = 0; k < 4; ++k)
                for (std::size_t l = 0; l < 4; ++l) {
                    coef[k][l] = 0;
                    for (std::size_t n = 0; n < 4; ++n) coef[k][l] += tmp[k][n] * B[l][n];
                }
            for (std::size_t z = 0; z < zeroed && z < 16; ++z) {
                const std::size_t idx = kZigzag4[15 - z];
                coef[idx / 4][idx % 4] = 0.0;
            }
            for (std::size_t n = 0; n < 4; ++n)
                for (std::size_t l = 0; l < 4; ++l) {
                    tmp[n][l] = 0;
                    for (std::size_t k = 0; k < 4; ++k) tmp[n][l] += B[k][n] * coef[k][l];
                }
            for (std::size_t n = 0; n < 4; ++n)
                for (std::size_t m = 0; m < 4; ++m) {
                    double v = 0;
                    for (std::size_t l = 0; l < 4; ++l) v += tmp[n][l] * B[l][m];
                    px[(by + n) * w + bx + m] = v;
                }
        }
}

inline void spatter(std::span<double> px, std::size_t h, std::size_t w, double coverage, Rng& rng) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const auto target = static_cast<std::size_t>(std::ceil(coverage * static_cast<double>(h * w)));
    std::vector<bool> covered(h * w, false);
    std::size_t count = 0;
    while (count < target) {
        const double cx = u01(rng) * static_cast<double>(w), cy = u01(rng) * static_cast<double>(h);
        const double r = 0.7 + 1.3 * u01(rng);
        const double shade = u01(rng);
        for (std::size_t y = 0; y < h && count < target; ++y)
            for (std::size_t x = 0; x < w && count < target; ++x) {
                const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
                if (dx * dx + dy * dy > r * r) continue;
                px[y * w + x] = shade;
                if (!covered[y * w + x]) {
                    covered[y * w + x] = true;
                    ++count;
                }
            }
    }
}

}  // namespace detail

/// Applies `c` with an explicit parameter (noise sigma, offset, contrast scale,
/// gamma exponent, spatter coverage fraction, or zeroed DCT coefficients) to
/// one image in place. Output is clipped to [0, 1].
inline void corrupt_image(std::span<double> px, std::size_t h, std::size_t w, Corruption c, double param, Rng& rng) {
    std::normal_distribution<double> n01(0.0, 1.0);
    switch (c) {
        case Corruption::gaussian_noise:
            for (auto& v : px) v += param * n01(rng);
            break;
        case Corruption::speckle_noise:
            for (auto& v : px) v += v * param * n01(rng);
            break;
        case Corruption::brightness:
            for (auto& v : px) v += param;
            break;
        case Corruption::contrast: {
            const double mean = std::accumulate(px.begin(), px.end(), 0.0) / static_cast<double>(px.size());
            for (auto& v : px) v = (v - mean) * param + mean;
            break;
        }
        case Corruption::saturate:
            for (auto& v : px) v = std::pow(std::max(v, 0.0), param);
            break;
        case Corruption::spatter: detail::spatter(px, h, w, param, rng); break;
        case Corruption::jpeg_like: detail::jpeg_like(px, h, w, static_cast<std::size_t>(param)); break;
    }
    for (auto& v : px) v = std::clamp(v, 0.0, 1.0);
}

/// Corrupted copy of `d` with an explicit parameter; labels unchanged.
inline Dataset corrupt_with_parameter(const Dataset& d, Corruption c, double param, std::uint64_t seed, Role role) {
    Dataset out;
    out.num_classes = d.num_classes;
    out.role = role;
    out.labels = d.labels;
    out.inputs.reserve(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        const auto& x = d.inputs[i];
        for (double v : x.data()) {
            if (v < 0.0 || v > 1.0) throw DataError("corrupt: input " + std::to_string(i) + " has pixels outside [0, 1]");
        }
        std::vector<double> px(x.data().begin(), x.data().end());
        Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(c), i}));
        const std::size_t h = x.rank() >= 2 ? x.dim(x.rank() - 2) : 1;
        const std::size_t w = x.shape().back();
        corrupt_image(px, h, w, c, param, rng);
        detail::quantize(px);
        out.inputs.emplace_back(x.shape(), std::move(px));
    }
    return out;
}

inline Dataset corrupt(const Dataset& d, const ShiftSpec& spec, Role role = Role::target_test) {
    spec.validate();
    return corrupt_with_parameter(d, spec.corruption, severity_parameter(spec.corruption, spec.severity), spec.seed,
                                  role);
}

// ---------------------------------------------------------------------------
// IDX ingestion and MSDS cache

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

inline Dataset parse_idx(std::vector<char> image_bytes, std::vector<char> label_bytes, Role role = Role::source_train) {
    io::ByteReader img(std::move(image_bytes));
    io::ByteReader lab(std::move(label_bytes));
    const auto im = img.u32_be();
    if (im != kIdxImagesMagic) throw FormatError("IDX images: bad magic", 0);
    const auto lm = lab.u32_be();
    if (lm != kIdxLabelsMagic) throw FormatError("IDX labels: bad magic", 0);
    const auto n = img.u32_be();
    const auto h = img.u32_be();
    const auto w = img.u32_be();
    const auto nl = lab.u32_be();
    if (n != nl) {
        throw FormatError("IDX image count " + std::to_string(n) + " != label count " + std::to_string(nl), 4);
    }
    if (h == 0 || w == 0) throw FormatError("IDX images: zero-sized dimension", 8);
    Dataset d;
    d.role = role;
    std::size_t max_label = 0;
    for (std::uint32_t i = 0; i < n; ++i) {
        std::vector<double> px(std::size_t{h} * w);
        for (auto& v : px) v = static_cast<double>(static_cast<float>(img.u8() / 255.0));
        d.inputs.emplace_back(Shape{1, h, w}, std::move(px));
        d.labels.push_back(lab.u8());
        max_label = std::max(max_label, d.labels.back());
    }
    d.num_classes = n == 0 ? 0 : max_label + 1;
    if (d.num_classes == 1) d.num_classes = 2;
    return d;
}

inline Dataset ingest_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                          Role role = Role::source_train) {
    return parse_idx(io::read_file(images_path), io::read_file(labels_path), role);
}

inline std::vector<char> dataset_to_bytes(const Dataset& d) {
    d.validate();
    if (d.empty()) throw DataError("cannot cache an empty dataset");
    const auto& s = d.input_shape();
    if (s.size() != 3 || s[0] != 1) throw DataError("cache holds single-channel [1 x H x W] images only");
    io::ByteWriter wr;
    wr.bytes("MSDS");
    wr.u32(1);
    wr.u32(static_cast<std::uint32_t>(d.num_classes));
    wr.u32(static_cast<std::uint32_t>(d.size()));
    wr.u32(static_cast<std::uint32_t>(s[1]));
    wr.u32(static_cast<std::uint32_t>(s[2]));
    for (auto l : d.labels) wr.u16(static_cast<std::uint16_t>(l));
    for (const auto& x : d.inputs)
        for (double v : x.data()) wr.f32(static_cast<float>(v));
    return wr.buffer();
}

inline Dataset dataset_from_bytes(std::vector<char> bytes, Role role) {
    io::ByteReader r(std::move(bytes));
    if (r.remaining() < 4 || r.bytes(4) != "MSDS") throw FormatError("bad magic, expected \"MSDS\"", 0);
    const auto version = r.u32();
    if (version != 1) throw UnsupportedVersionError("unsupported MSDS version " + std::to_string(version), 4);
    Dataset d;
    d.role = role;
    d.num_classes = r.u32();
    const auto n = r.u32();
    const auto h = r.u32();
    const auto w = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) d.labels.push_back(r.u16());
    for (std::uint32_t i = 0; i < n; ++i) {
        std::vector<double> px(std::size_t{h} * w);
        for (auto& v : px) v = r.f32();
        d.inputs.emplace_back(Shape{1, h, w}, std::move(px));
    }
    if (r.remaining() != 0) throw FormatError("trailing bytes after pixels", r.offset());
    d.validate();
    return d;
}

inline void save_dataset(const Dataset& d, const std::filesystem::path& path) {
    io::write_file_atomic(path, dataset_to_bytes(d));
}

inline Dataset load_dataset(const std::filesystem::path& path, Role role) {
    return dataset_from_bytes(io::read_file(path), role);
}

}  // namespace metasel
