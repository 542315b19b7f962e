#pragma once

// The misclassification meta-model: training-set augmentation with
// ODIN-filtered source inputs, a small conv1d network over the three logit
// channels plus scalar features, feature-group ablations, and persistence.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"

#include "metasel/binary_io.hpp"
#include "metasel/dataset.hpp"
#include "metasel/errors.hpp"
#include "metasel/eval.hpp"
#include "metasel/features.hpp"
#include "metasel/models.hpp"
#include "metasel/network.hpp"
#include "metasel/odin.hpp"
#include "metasel/rng.hpp"
#include "metasel/tensor.hpp"

namespace metasel {

enum class AblationVariant { full, v1, v2, v3, v4, v5, v6, v7 };

inline constexpr std::array<AblationVariant, 8> kAllVariants{
    AblationVariant::full, AblationVariant::v1, AblationVariant::v2, AblationVariant::v3,
    AblationVariant::v4,   AblationVariant::v5, AblationVariant::v6, AblationVariant::v7};

inline std::string variant_name(AblationVariant v) {
    static const char* names[] = {"FULL", "V1", "V2", "V3", "V4", "V5", "V6", "V7"};
    return names[static_cast<int>(v)];
}

inline AblationVariant parse_variant(const std::string& s) {
    for (auto v : kAllVariants)
        if (variant_name(v) == s) return v;
    throw ConfigError("unknown ablation variant '" + s + "'");
}

/// Active feature groups. Logit channels are L_S, L_T, |L_S - L_T| (C wide
/// each); scalars are diff_test, ODIN_S, ODIN_T.
struct FeatureMask {
    bool ls = true, lt = true, d = true;
    bool diff = true, odin_s = true, odin_t = true;

    std::size_t channels() const { return std::size_t{ls} + lt + d; }
    std::size_t scalars() const { return std::size_t{diff} + odin_s + odin_t; }
    std::size_t width(std::size_t num_classes) const { return channels() * num_classes + scalars(); }

    bool operator==(const FeatureMask&) const = default;
};

inline FeatureMask mask_for(AblationVariant v) {
    FeatureMask m;
    switch (v) {
        case AblationVariant::full: break;
        case AblationVariant::v1: m.d = false; break;
        case AblationVariant::v2: m.diff = false; break;
        case AblationVariant::v3: m.odin_s = false; break;
        case AblationVariant::v4: m.odin_s = m.odin_t = false; break;
        case AblationVariant::v5: m.ls = m.d = false; break;
        case AblationVariant::v6: m.ls = m.lt = m.d = false; break;
        case AblationVariant::v7: m.ls = m.d = m.diff = m.odin_s = false; break;
    }
    return m;
}

/// Per-channel and per-scalar standardization, fitted on the training records.
struct Normalization {
    std::vector<double> channel_mean, channel_std;  // one per active logit channel
    std::vector<double> scalar_mean, scalar_std;    // one per active scalar
};

struct MetaTrainConfig {
    TrainConfig train{200, 0.01, 0.9, 32, 0};  // epochs is the early-stopping cap
    std::size_t patience = 10;
    double validation_fraction = 0.2;
    std::size_t hidden = 32;
    std::size_t kernels = 8;
    std::size_t kernel_width = 3;

    void validate() const {
        train.validate();
        if (patience < 1) throw ConfigError("meta config: patience must be >= 1");
        if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
            throw ConfigError("meta config: validation_fraction must be in (0, 1)");
        }
        if (hidden < 1 || kernels < 1 || kernel_width < 1) throw ConfigError("meta config: layer sizes must be >= 1");
    }
};

namespace detail {
inline std::vector<const std::vector<double>*> active_channels(const FeatureRecord& r, const FeatureMask& m) {
    std::vector<const std::vector<double>*> out;
    if (m.ls) out.push_back(&r.logits_source);
    if (m.lt) out.push_back(&r.logits_target);
    if (m.d) out.push_back(&r.logit_abs_diff);
    return out;
}

inline std::vector<double> active_scalars(const FeatureRecord& r, const FeatureMask& m) {
    std::vector<double> out;
    if (m.diff) out.push_back(static_cast<double>(r.diff_test));
    if (m.odin_s) out.push_back(r.odin_source);
    if (m.odin_t) out.push_back(r.odin_target);
    return out;
}

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / static_cast<double>(v.size()));
    return {mean, sd > 1e-12 ? sd : 1.0};
}
}  // namespace detail

class MetaModel {
   public:
    MetaModel() = default;

    AblationVariant variant() const { return variant_; }
    const FeatureMask& mask() const { return mask_; }
    std::size_t num_classes() const { return num_classes_; }
    std::size_t input_width() const { return mask_.width(num_classes_); }
    const Network& network() const { return net_; }
    const Normalization& normalization() const { return norm_; }

    OdinConfig odin;
    double calibration_threshold = 0.0;
    std::size_t epochs_trained = 0;

    /// Builds the untrained network for `variant` over C-class records.
    static MetaModel create(AblationVariant variant, std::size_t num_classes, const MetaTrainConfig& cfg,
                            std::uint64_t seed) {
        MetaModel mm;
        mm.variant_ = variant;
        mm.mask_ = mask_for(variant);
        mm.num_classes_ = num_classes;
        auto u32 = [](std::size_t v) { return static_cast<std::uint32_t>(v); };
        const std::size_t ch = mm.mask_.channels(), sc = mm.mask_.scalars();
        std::vector<Layer> layers;
        std::size_t fc_in = 0;
        if (ch == 0) {
            layers.push_back({LayerKind::input, {u32(sc)}, {}});
            fc_in = sc;
        } else {
            const std::size_t kw = std::min(cfg.kernel_width, num_classes);
            layers.push_back({LayerKind::input, {u32(ch), u32(num_classes)}, {}});
            layers.push_back({LayerKind::conv1d, {u32(cfg.kernels), u32(ch), u32(kw)}, {}});
            layers.push_back({LayerKind::relu, {}, {}});
            layers.push_back({LayerKind::flatten, {}, {}});
            fc_in = cfg.kernels * (num_classes - kw + 1);
            if (sc > 0) {
                layers.push_back({LayerKind::concat, {u32(sc)}, {}});
                fc_in += sc;
            }
        }
        layers.push_back({LayerKind::dense, {u32(fc_in), u32(cfg.hidden)}, {}});
        layers.push_back({LayerKind::relu, {}, {}});
        layers.push_back({LayerKind::dense, {u32(cfg.hidden), 1}, {}});
        layers.push_back({LayerKind::sigmoid, {}, {}});
        mm.net_ = Network::create(std::move(layers), seed);
        return mm;
    }

    /// Fits standardization statistics on `records`.
    void fit_normalization(const std::vector<FeatureRecord>& records) {
        if (records.empty()) throw DataError("cannot fit normalization on zero records");
        norm_ = {};
        for (std::size_t c = 0; c < mask_.channels(); ++c) {
            std::vector<double> vals;
            for (const auto& r : records) {
                check_record(r);
                const auto& chan = *detail::active_channels(r, mask_)[c];
                vals.insert(vals.end(), chan.begin(), chan.end());
            }
            auto [m, s] = detail::mean_std(vals);
            norm_.channel_mean.push_back(m);
            norm_.channel_std.push_back(s);
        }
        std::size_t slot = 0;
        auto add_scalar = [&](bool active, bool standardize) {
            if (!active) return;
            std::vector<double> vals;
            for (const auto& r : records) vals.push_back(detail::active_scalars(r, mask_)[slot]);
            auto [m, s] = standardize ? detail::mean_std(vals) : std::pair<double, double>{0.0, 1.0};
            norm_.scalar_mean.push_back(m);
            norm_.scalar_std.push_back(s);
            ++slot;
        };
        add_scalar(mask_.diff, false);
        add_scalar(mask_.odin_s, true);
        add_scalar(mask_.odin_t, true);
    }

    struct Encoded {
        Tensor channels;  // [active channels x C], empty when no channel is active
        Tensor scalars;   // [active scalars]
    };

    Encoded encode(const FeatureRecord& r) const {
        check_record(r);
        Encoded e;
        const auto chans = detail::active_channels(r, mask_);
        if (!chans.empty()) {
            std::vector<double> data;
            data.reserve(chans.size() * num_classes_);
            for (std::size_t c = 0; c < chans.size(); ++c)
                for (double v : *chans[c]) data.push_back((v - norm_.channel_mean[c]) / norm_.channel_std[c]);
            e.channels = Tensor({chans.size(), num_classes_}, std::move(data));
        }
        auto sc = detail::active_scalars(r, mask_);
        for (std::size_t i = 0; i < sc.size(); ++i) sc[i] = (sc[i] - norm_.scalar_mean[i]) / norm_.scalar_std[i];
        e.scalars = Tensor::vector(std::move(sc));
        return e;
    }

    /// Pre-sigmoid output.
    Tensor logit(const Encoded& e, Tape* tape = nullptr) const {
        if (mask_.channels() == 0) return net_.forward_logit(e.scalars, tape);
        return net_.forward_logit(e.channels, tape, mask_.scalars() > 0 ? &e.scalars : nullptr);
    }

    /// Estimated probability that the target model misclassifies the input.
    double score(const FeatureRecord& r) const { return sigmoid(logit(encode(r)).item()); }

    std::vector<double> score_all(const std::vector<FeatureRecord>& records) const {
        std::vector<double> out;
        out.reserve(records.size());
        for (const auto& r : records) out.push_back(score(r));
        return out;
    }

    Network& mutable_network() { return net_; }

    nlohmann::json sidecar() const {
        nlohmann::json j;
        j["variant"] = variant_name(variant_);
        j["num_classes"] = num_classes_;
        j["feature_mask"] = {{"ls", mask_.ls},         {"lt", mask_.lt},         {"d", mask_.d},
                             {"diff_test", mask_.diff}, {"odin_s", mask_.odin_s}, {"odin_t", mask_.odin_t}};
        j["normalization"] = {{"channel_mean", norm_.channel_mean},
                              {"channel_std", norm_.channel_std},
                              {"scalar_mean", norm_.scalar_mean},
                              {"scalar_std", norm_.scalar_std}};
        j["odin"] = {{"temperature", odin.temperature}, {"epsilon", odin.epsilon}};
        j["calibration_threshold"] = calibration_threshold;
        j["epochs_trained"] = epochs_trained;
        return j;
    }

    /// Writes the weights to `path` and the sidecar to `path` with ".json" appended.
    void save(const std::filesystem::path& path) const {
        net_.save(path);
        io::write_text_atomic(sidecar_path(path), sidecar().dump(2) + "\n");
    }

    static MetaModel load(const std::filesystem::path& path) {
        MetaModel mm;
        mm.net_ = Network::load(path);
        const auto bytes = io::read_file(sidecar_path(path));
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(bytes.begin(), bytes.end());
            mm.variant_ = parse_variant(j.at("variant").get<std::string>());
            mm.num_classes_ = j.at("num_classes").get<std::size_t>();
            const auto& fm = j.at("feature_mask");
            mm.mask_ = {fm.at("ls").get<bool>(),        fm.at("lt").get<bool>(),     fm.at("d").get<bool>(),
                        fm.at("diff_test").get<bool>(), fm.at("odin_s").get<bool>(), fm.at("odin_t").get<bool>()};
            const auto& n = j.at("normalization");
            mm.norm_.channel_mean = n.at("channel_mean").get<std::vector<double>>();
            mm.norm_.channel_std = n.at("channel_std").get<std::vector<double>>();
            mm.norm_.scalar_mean = n.at("scalar_mean").get<std::vector<double>>();
            mm.norm_.scalar_std = n.at("scalar_std").get<std::vector<double>>();
            mm.odin.temperature = j.at("odin").at("temperature").get<double>();
            mm.odin.epsilon = j.at("odin").at("epsilon").get<double>();
            mm.calibration_threshold = j.at("calibration_threshold").get<double>();
            mm.epochs_trained = j.value("epochs_trained", std::size_t{0});
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(std::string("bad meta-model sidecar: ") + e.what(), 0);
        }
        if (mm.mask_ != mask_for(mm.variant_)) throw FormatError("sidecar feature mask does not match its variant", 0);
        if (mm.norm_.channel_mean.size() != mm.mask_.channels() ||
            mm.norm_.scalar_mean.size() != mm.mask_.scalars()) {
            throw FormatError("sidecar normalization does not match the feature mask", 0);
        }
        return mm;
    }

    static std::filesystem::path sidecar_path(const std::filesystem::path& path) {
        auto p = path;
        p += ".json";
        return p;
    }

   private:
    void check_record(const FeatureRecord& r) const {
        if (r.logits_source.size() != num_classes_ || r.logits_target.size() != num_classes_ ||
            r.logit_abs_diff.size() != num_classes_) {
            throw ConfigError("feature record has " + std::to_string(r.logits_target.size()) +
                              " classes, meta-model expects " + std::to_string(num_classes_));
        }
    }

    AblationVariant variant_ = AblationVariant::full;
    FeatureMask mask_;
    std::size_t num_classes_ = 0;
    Network net_;
    Normalization norm_;
};

/// Records for all of `train_t` plus the `test_s` inputs whose target-model
/// ODIN score reaches the calibration threshold.
inline std::vector<FeatureRecord> build_training_set(const Dataset& train_t, const Dataset& test_s,
                                                     const Classifier& m_s, const Classifier& m_t,
                                                     const OdinConfig& odin, const OdinCalibration& cal) {
    auto out = extract_batch(m_s, m_t, train_t, odin);
    for (std::size_t i = 0; i < test_s.size(); ++i) {
        auto r = extract(m_s, m_t, test_s.inputs[i], odin, test_s.labels.at(i), i);
        if (is_in_distribution(r.odin_target, cal)) out.push_back(std::move(r));
    }
    if (out.empty()) throw DataError("meta-model training set is empty");
    return out;
}

/// Inverse-frequency weighted binary cross-entropy, SGD with momentum, and
/// early stopping on a seeded 80/20 split of `records`. The best weights seen
/// on the validation part are kept.
inline MetaModel train_metamodel(const std::vector<FeatureRecord>& records, AblationVariant variant,
                                 const MetaTrainConfig& cfg) {
    cfg.validate();
    if (records.empty()) throw DataError("meta-model: no training records");
    std::size_t positives = 0;
    for (const auto& r : records) {
        if (!r.label) throw DataError("meta-model: unlabeled training record " + std::to_string(r.input_id));
        positives += *r.label == 1;
    }
    if (positives == 0 || positives == records.size()) {
        throw DataError("meta-model: training records contain a single class");
    }

    const std::uint64_t seed = cfg.train.seed;
    MetaModel mm = MetaModel::create(variant, records.front().num_classes(), cfg, derive_seed(seed, {0x6d696eULL}));
    mm.fit_normalization(records);

    // Stratified internal split.
    std::vector<std::size_t> fit_idx, val_idx;
    Rng split_rng(derive_seed(seed, {0x6d73706cULL}));
    for (int cls : {0, 1}) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < records.size(); ++i)
            if (*records[i].label == cls) members.push_back(i);
        std::shuffle(members.begin(), members.end(), split_rng);
        auto n_val = static_cast<std::size_t>(std::floor(cfg.validation_fraction * members.size() + 0.5));
        if (n_val >= members.size()) n_val = members.size() - 1;
        val_idx.insert(val_idx.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_val));
        fit_idx.insert(fit_idx.end(), members.begin() + static_cast<std::ptrdiff_t>(n_val), members.end());
    }
    std::sort(fit_idx.begin(), fit_idx.end());
    std::sort(val_idx.begin(), val_idx.end());

    std::size_t fit_pos = 0;
    for (auto i : fit_idx) fit_pos += *records[i].label == 1;
    const double n_fit = static_cast<double>(fit_idx.size());
    const double w_pos = fit_pos ? n_fit / (2.0 * static_cast<double>(fit_pos)) : 1.0;
    const double w_neg = fit_pos < fit_idx.size() ? n_fit / (2.0 * static_cast<double>(fit_idx.size() - fit_pos)) : 1.0;
    auto weight = [&](int label) { return label == 1 ? w_pos : w_neg; };

    std::vector<MetaModel::Encoded> enc;
    enc.reserve(records.size());
    for (const auto& r : records) enc.push_back(mm.encode(r));

    auto val_loss = [&]() {
        double total = 0.0;
        for (auto i : val_idx) {
            total += sigmoid_bce(mm.logit(enc[i]), *records[i].label, weight(*records[i].label)).item();
        }
        return total / static_cast<double>(val_idx.size());
    };

    mm.mutable_network().set_requires_grad(true);
    Sgd opt(mm.network().params(), cfg.train.learning_rate, cfg.train.momentum);
    for (auto& p : mm.network().params()) p.ensure_grad();
    Rng order_rng(derive_seed(seed, {0x6d6f7264ULL}));

    Network best = mm.network().clone();
    double best_loss = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;
    for (std::size_t epoch = 0; epoch < cfg.train.epochs; ++epoch) {
        mm.epochs_trained = epoch + 1;
        std::shuffle(fit_idx.begin(), fit_idx.end(), order_rng);
        sgd_epoch(opt, fit_idx, cfg.train.batch_size, [&](std::size_t i, Tape& tape) {
            return sigmoid_bce(mm.logit(enc[i], &tape), *records[i].label, weight(*records[i].label), &tape);
        });
        if (val_idx.empty()) {
            best = mm.network().clone();
            continue;
        }
        const double loss = val_loss();
        if (!std::isfinite(loss)) throw NumericError("meta-model: validation loss diverged at epoch " +
                                                      std::to_string(epoch));
        if (loss < best_loss) {
            best_loss = loss;
            best = mm.network().clone();
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    mm.mutable_network() = std::move(best);
    mm.mutable_network().set_requires_grad(false);
    return mm;
}

/// Orders target inputs by meta-model score, most likely misclassified first.
inline Ranking rank_records(const MetaModel& mm, const std::vector<FeatureRecord>& records,
                            const std::string& method = "metasel", const std::string& subject = {}) {
    std::vector<double> scores;
    std::vector<std::size_t> ids;
    for (const auto& r : records) {
        scores.push_back(mm.score(r));
        ids.push_back(r.input_id);
    }
    return Ranking::from_scores(scores, ids, method, subject);
}

inline Ranking rank_targets(const MetaModel& mm, const Dataset& target_test, const Classifier& m_s,
                            const Classifier& m_t, const OdinConfig& odin) {
    return rank_records(mm, extract_batch(m_s, m_t, target_test, odin, false));
}

}  // namespace metasel
