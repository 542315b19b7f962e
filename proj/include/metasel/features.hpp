#pragma once

// Per-input feature records built from a pre-trained / fine-tuned model pair.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "metasel/csv.hpp"
#include "metasel/dataset.hpp"
#include "metasel/errors.hpp"
#include "metasel/models.hpp"
#include "metasel/odin.hpp"

namespace metasel {

struct FeatureRecord {
    std::size_t input_id = 0;
    std::vector<double> logits_source;  // L_S
    std::vector<double> logits_target;  // L_T
    std::vector<double> logit_abs_diff; // |L_S - L_T|
    int diff_test = 0;                  // 1 when both models predict the same class
    double odin_source = 0.0;
    double odin_target = 0.0;
    std::optional<int> label;           // 1 = misclassified by the target model

    std::size_t num_classes() const { return logits_target.size(); }
    /// Count of numeric features: three logit channels plus three scalars.
    std::size_t width() const { return 3 * num_classes() + 3; }
};

namespace detail {
inline void check_pair(const Classifier& m_s, const Classifier& m_t) {
    if (m_s.num_classes() != m_t.num_classes()) {
        throw ConfigError("model pair disagrees on class count: " + std::to_string(m_s.num_classes()) + " vs " +
                          std::to_string(m_t.num_classes()));
    }
    if (m_s.input_shape() != m_t.input_shape()) {
        throw DimensionError("model pair disagrees on input shape: " + shape_str(m_s.input_shape()) + " vs " +
                             shape_str(m_t.input_shape()));
    }
}
}  // namespace detail

inline int differential_test(const Classifier& m_s, const Classifier& m_t, const Tensor& x) {
    detail::check_pair(m_s, m_t);
    return m_s.predict(x) == m_t.predict(x) ? 1 : 0;
}

inline FeatureRecord extract(const Classifier& m_s, const Classifier& m_t, const Tensor& x, const OdinConfig& odin,
                             std::optional<std::size_t> ground_truth = std::nullopt, std::size_t input_id = 0) {
    detail::check_pair(m_s, m_t);
    FeatureRecord r;
    r.input_id = input_id;
    auto ls = m_s.logits(x);
    auto lt = m_t.logits(x);
    r.logits_source.assign(ls.data().begin(), ls.data().end());
    r.logits_target.assign(lt.data().begin(), lt.data().end());
    r.logit_abs_diff.resize(r.logits_target.size());
    for (std::size_t i = 0; i < r.logit_abs_diff.size(); ++i) {
        r.logit_abs_diff[i] = std::abs(r.logits_source[i] - r.logits_target[i]);
    }
    const std::size_t pred_t = argmax(r.logits_target);
    r.diff_test = argmax(r.logits_source) == pred_t ? 1 : 0;
    r.odin_source = odin_score(m_s, x, odin);
    r.odin_target = odin_score(m_t, x, odin);
    if (ground_truth) r.label = pred_t != *ground_truth ? 1 : 0;
    return r;
}

/// One record per input in dataset order; ids are dataset indices and
/// labels come from the dataset's ground truth.
inline std::vector<FeatureRecord> extract_batch(const Classifier& m_s, const Classifier& m_t, const Dataset& d,
                                                const OdinConfig& odin, bool with_labels = true) {
    std::vector<FeatureRecord> out;
    out.reserve(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        std::optional<std::size_t> gt;
        if (with_labels) gt = d.labels.at(i);
        out.push_back(extract(m_s, m_t, d.inputs[i], odin, gt, i));
    }
    return out;
}

inline csv::Table feature_table(const std::vector<FeatureRecord>& records) {
    const std::size_t c = records.empty() ? 0 : records.front().num_classes();
    std::vector<std::string> header{"id"};
    for (const char* prefix : {"ls_", "lt_", "d_"})
        for (std::size_t i = 0; i < c; ++i) header.push_back(prefix + std::to_string(i));
    for (const char* h : {"diff_test", "odin_s", "odin_t", "label"}) header.emplace_back(h);
    csv::Table t(header);
    for (const auto& r : records) {
        if (r.num_classes() != c) throw DimensionError("feature records disagree on class count");
        std::vector<std::string> row{std::to_string(r.input_id)};
        for (const auto* ch : {&r.logits_source, &r.logits_target, &r.logit_abs_diff})
            for (double v : *ch) row.push_back(csv::fmt(v));
        row.push_back(std::to_string(r.diff_test));
        row.push_back(csv::fmt(r.odin_source));
        row.push_back(csv::fmt(r.odin_target));
        row.push_back(r.label ? std::to_string(*r.label) : std::string());
        t.add(std::move(row));
    }
    return t;
}

inline void write_features_csv(const std::filesystem::path& path, const std::vector<FeatureRecord>& records) {
    feature_table(records).save(path);
}

}  // namespace metasel
