#pragma once

// End-to-end experiments: configuration, the per-subject pipeline (source
// model, fine-tuning, ODIN calibration, meta-model, baselines, metrics), and
// the four commands behind the command-line tool.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "metasel/baselines.hpp"
#include "metasel/binary_io.hpp"
#include "metasel/csv.hpp"
#include "metasel/datagen.hpp"
#include "metasel/dataset.hpp"
#include "metasel/errors.hpp"
#include "metasel/eval.hpp"
#include "metasel/features.hpp"
#include "metasel/metamodel.hpp"
#include "metasel/models.hpp"
#include "metasel/odin.hpp"
#include "metasel/rng.hpp"

namespace metasel {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

struct DatasetSpec {
    std::string name = "glyph";
    std::size_t num_classes = 4;
    std::size_t per_class = 800;
    std::vector<double> source_split{0.6, 0.4};  // source train, source test
    std::string idx_images;                      // ingest these instead of generating glyphs
    std::string idx_labels;
};

struct ShiftGroup {
    Corruption corruption = Corruption::gaussian_noise;
    std::vector<int> severities;
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    DatasetSpec dataset;
    std::vector<ShiftGroup> shifts;
    std::size_t n_s = 600;
    Arch arch = Arch::conv_small;
    TrainConfig source_train{15, 0.01, 0.9, 32, 0};
    TrainConfig finetune{10, 0.003, 0.9, 32, 0};
    MetaTrainConfig meta;
    EnsembleConfig ensemble;
    OdinConfig odin;
    NnsConfig nns;
    DatisConfig datis;
    SAConfig sa;
    std::vector<std::string> methods{"metasel", "gini", "vanilla", "margin", "dsa",
                                     "lsa",     "mdsa", "nns",     "datis",  "ensemble"};
    std::vector<double> budgets{1, 3, 5, 10, 15, 20, 30, 40, 50, 60, 70, 80, 90, 100};  // percent
    std::vector<double> ablation_budgets{1, 3, 5, 10};
    std::vector<std::string> variants{"FULL", "V1", "V2", "V3", "V4", "V5", "V6", "V7"};
    std::size_t workers = 1;

    void validate() const {
        if (dataset.num_classes < 2) throw ConfigError("dataset.num_classes must be >= 2");
        if (dataset.idx_images.empty() != dataset.idx_labels.empty()) {
            throw ConfigError("dataset.idx_images and dataset.idx_labels must be given together");
        }
        if (dataset.idx_images.empty() && dataset.per_class < 1) throw ConfigError("dataset.per_class must be >= 1");
        if (dataset.source_split.size() != 2) throw ConfigError("dataset.source_split needs two fractions");
        if (shifts.empty()) throw ConfigError("shifts must list at least one corruption");
        for (const auto& s : shifts) {
            if (s.severities.empty()) throw ConfigError("shifts: " + corruption_name(s.corruption) + " has no severities");
            for (int v : s.severities) ShiftSpec{s.corruption, v, 0}.validate();
        }
        if (n_s < 1) throw ConfigError("n_s must be >= 1");
        source_train.validate();
        finetune.validate();
        meta.validate();
        ensemble.train.validate();
        odin.validate();
        if (nns.k < 1 || datis.k < 1) throw ConfigError("nns.k and datis.k must be >= 1");
        if (!(nns.alpha >= 0.0 && nns.alpha <= 1.0)) throw ConfigError("nns.alpha must lie in [0, 1]");
        if (!(datis.tau > 0.0)) throw ConfigError("datis.tau must be > 0");
        if (methods.empty()) throw ConfigError("methods must not be empty");
        std::set<std::string> seen;
        for (const auto& m : methods) {
            const auto& known = baseline_methods();
            if (m != "metasel" && std::find(known.begin(), known.end(), m) == known.end()) {
                throw ConfigError("methods: unknown method '" + m + "'");
            }
            if (!seen.insert(m).second) throw ConfigError("methods: '" + m + "' listed twice");
        }
        auto check_budgets = [](const std::vector<double>& b, const char* what) {
            if (b.empty()) throw ConfigError(std::string(what) + " must not be empty");
            for (double v : b)
                if (!(v > 0.0 && v <= 100.0)) throw ConfigError(std::string(what) + " must lie in (0, 100]");
        };
        check_budgets(budgets, "budgets");
        check_budgets(ablation_budgets, "ablation_budgets");
        for (const auto& v : variants) parse_variant(v);
        if (workers < 1) throw ConfigError("workers must be >= 1");
    }
};

namespace detail {

inline void read_train(const json& j, TrainConfig& t) {
    if (j.contains("epochs")) t.epochs = j.at("epochs").get<std::size_t>();
    if (j.contains("learning_rate")) t.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("momentum")) t.momentum = j.at("momentum").get<double>();
    if (j.contains("batch_size")) t.batch_size = j.at("batch_size").get<std::size_t>();
}

inline json write_train(const TrainConfig& t) {
    return {{"epochs", t.epochs}, {"learning_rate", t.learning_rate}, {"momentum", t.momentum},
            {"batch_size", t.batch_size}};
}

}  // namespace detail

/// Parses a config document. `seed`, `dataset` and `shifts` are required;
/// everything else has a default.
inline ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c;
    std::string field;
    try {
        if (!j.is_object()) throw ConfigError("config must be a JSON object");
        for (const char* key : {"seed", "dataset", "shifts"})
            if (!j.contains(key)) throw ConfigError(std::string("config is missing required field '") + key + "'");
        field = "seed";
        c.seed = j.at("seed").get<std::uint64_t>();
        field = "dataset";
        const auto& d = j.at("dataset");
        if (d.contains("name")) c.dataset.name = d.at("name").get<std::string>();
        if (d.contains("num_classes")) c.dataset.num_classes = d.at("num_classes").get<std::size_t>();
        if (d.contains("per_class")) c.dataset.per_class = d.at("per_class").get<std::size_t>();
        if (d.contains("source_split")) c.dataset.source_split = d.at("source_split").get<std::vector<double>>();
        if (d.contains("idx_images")) c.dataset.idx_images = d.at("idx_images").get<std::string>();
        if (d.contains("idx_labels")) c.dataset.idx_labels = d.at("idx_labels").get<std::string>();
        field = "shifts";
        for (const auto& s : j.at("shifts")) {
            if (!s.contains("corruption")) throw ConfigError("config is missing required field 'shifts[].corruption'");
            if (!s.contains("severities")) throw ConfigError("config is missing required field 'shifts[].severities'");
            c.shifts.push_back({parse_corruption(s.at("corruption").get<std::string>()),
                                s.at("severities").get<std::vector<int>>()});
        }
        field = "n_s";
        if (j.contains("n_s")) c.n_s = j.at("n_s").get<std::size_t>();
        field = "arch";
        if (j.contains("arch")) c.arch = parse_arch(j.at("arch").get<std::string>());
        field = "train";
        if (j.contains("train")) {
            const auto& t = j.at("train");
            if (t.contains("source")) detail::read_train(t.at("source"), c.source_train);
            if (t.contains("finetune")) detail::read_train(t.at("finetune"), c.finetune);
            if (t.contains("ensemble")) detail::read_train(t.at("ensemble"), c.ensemble.train);
            if (t.contains("meta")) {
                const auto& m = t.at("meta");
                detail::read_train(m, c.meta.train);
                if (m.contains("patience")) c.meta.patience = m.at("patience").get<std::size_t>();
                if (m.contains("validation_fraction")) c.meta.validation_fraction = m.at("validation_fraction").get<double>();
                if (m.contains("hidden")) c.meta.hidden = m.at("hidden").get<std::size_t>();
                if (m.contains("kernels")) c.meta.kernels = m.at("kernels").get<std::size_t>();
                if (m.contains("kernel_width")) c.meta.kernel_width = m.at("kernel_width").get<std::size_t>();
            }
        }
        field = "ensemble";
        if (j.contains("ensemble") && j.at("ensemble").contains("members")) {
            c.ensemble.members = j.at("ensemble").at("members").get<std::size_t>();
        }
        field = "odin";
        if (j.contains("odin")) {
            const auto& o = j.at("odin");
            if (o.contains("temperature")) c.odin.temperature = o.at("temperature").get<double>();
            if (o.contains("epsilon")) c.odin.epsilon = o.at("epsilon").get<double>();
        }
        field = "nns";
        if (j.contains("nns")) {
            const auto& o = j.at("nns");
            if (o.contains("k")) c.nns.k = o.at("k").get<std::size_t>();
            if (o.contains("alpha")) c.nns.alpha = o.at("alpha").get<double>();
            if (o.contains("metric")) {
                const auto m = o.at("metric").get<std::string>();
                if (m != "euclidean" && m != "cosine") throw ConfigError("nns.metric must be euclidean or cosine");
                c.nns.metric = m == "cosine" ? Metric::cosine : Metric::euclidean;
            }
        }
        field = "datis";
        if (j.contains("datis")) {
            const auto& o = j.at("datis");
            if (o.contains("k")) c.datis.k = o.at("k").get<std::size_t>();
            if (o.contains("tau")) c.datis.tau = o.at("tau").get<double>();
        }
        field = "sa";
        if (j.contains("sa")) {
            const auto& o = j.at("sa");
            if (o.contains("lsa_variance_threshold")) c.sa.lsa_variance_threshold = o.at("lsa_variance_threshold").get<double>();
            if (o.contains("mdsa_ridge")) c.sa.mdsa_ridge = o.at("mdsa_ridge").get<double>();
        }
        field = "methods";
        if (j.contains("methods")) c.methods = j.at("methods").get<std::vector<std::string>>();
        field = "budgets";
        if (j.contains("budgets")) c.budgets = j.at("budgets").get<std::vector<double>>();
        field = "ablation_budgets";
        if (j.contains("ablation_budgets")) c.ablation_budgets = j.at("ablation_budgets").get<std::vector<double>>();
        field = "variants";
        if (j.contains("variants")) c.variants = j.at("variants").get<std::vector<std::string>>();
        field = "workers";
        if (j.contains("workers")) c.workers = j.at("workers").get<std::size_t>();
    } catch (const json::exception& e) {
        throw ConfigError("config field '" + field + "' is malformed: " + e.what());
    }
    c.validate();
    return c;
}

inline json config_to_json(const ExperimentConfig& c) {
    json shifts = json::array();
    for (const auto& s : c.shifts) shifts.push_back({{"corruption", corruption_name(s.corruption)}, {"severities", s.severities}});
    json meta = detail::write_train(c.meta.train);
    meta["patience"] = c.meta.patience;
    meta["validation_fraction"] = c.meta.validation_fraction;
    meta["hidden"] = c.meta.hidden;
    meta["kernels"] = c.meta.kernels;
    meta["kernel_width"] = c.meta.kernel_width;
    json dataset = {{"name", c.dataset.name},
                    {"num_classes", c.dataset.num_classes},
                    {"per_class", c.dataset.per_class},
                    {"source_split", c.dataset.source_split}};
    if (!c.dataset.idx_images.empty()) {
        dataset["idx_images"] = c.dataset.idx_images;
        dataset["idx_labels"] = c.dataset.idx_labels;
    }
    return {{"seed", c.seed},
            {"dataset", dataset},
            {"shifts", shifts},
            {"n_s", c.n_s},
            {"arch", arch_name(c.arch)},
            {"train",
             {{"source", detail::write_train(c.source_train)},
              {"finetune", detail::write_train(c.finetune)},
              {"ensemble", detail::write_train(c.ensemble.train)},
              {"meta", meta}}},
            {"ensemble", {{"members", c.ensemble.members}}},
            {"odin", {{"temperature", c.odin.temperature}, {"epsilon", c.odin.epsilon}}},
            {"nns", {{"k", c.nns.k}, {"alpha", c.nns.alpha}, {"metric", c.nns.metric == Metric::cosine ? "cosine" : "euclidean"}}},
            {"datis", {{"k", c.datis.k}, {"tau", c.datis.tau}}},
            {"sa", {{"lsa_variance_threshold", c.sa.lsa_variance_threshold}, {"mdsa_ridge", c.sa.mdsa_ridge}}},
            {"methods", c.methods},
            {"budgets", c.budgets},
            {"ablation_budgets", c.ablation_budgets},
            {"variants", c.variants}};
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    json j;
    try {
        j = json::parse(bytes.begin(), bytes.end());
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Pipeline

struct SubjectKey {
    Corruption corruption;
    int severity;
};

inline std::string subject_name(const std::string& source, Corruption c, int severity) {
    return source + "_" + corruption_name(c) + "_" + std::to_string(severity);
}

inline std::vector<SubjectKey> subject_keys(const ExperimentConfig& cfg) {
    std::vector<SubjectKey> out;
    for (const auto& s : cfg.shifts)
        for (int v : s.severities) out.push_back({s.corruption, v});
    return out;
}

inline constexpr std::uint64_t kStreamData = 0x64617461ULL;
inline constexpr std::uint64_t kStreamSplit = 0x73706c74ULL;
inline constexpr std::uint64_t kStreamSource = 0x73726300ULL;
inline constexpr std::uint64_t kStreamSubject = 0x7375626aULL;

struct SourceData {
    Dataset train, test;
};

inline SourceData make_source_data(const ExperimentConfig& cfg) {
    Dataset all;
    if (!cfg.dataset.idx_images.empty()) {
        all = ingest_idx(cfg.dataset.idx_images, cfg.dataset.idx_labels);
    } else {
        all = gen_source(cfg.dataset.num_classes, cfg.dataset.per_class, derive_seed(cfg.seed, {kStreamData}));
    }
    auto parts = split(all, cfg.dataset.source_split, derive_seed(cfg.seed, {kStreamSplit}));
    parts[0].role = Role::source_train;
    parts[1].role = Role::source_test;
    return {std::move(parts[0]), std::move(parts[1])};
}

struct TargetData {
    Dataset train, test;
};

/// Independent corruption draws over the source train and test images.
inline TargetData make_target_data(const ExperimentConfig& cfg, const SourceData& src, SubjectKey key) {
    const auto c = static_cast<std::uint64_t>(key.corruption);
    const auto s = static_cast<std::uint64_t>(key.severity);
    ShiftSpec train_spec{key.corruption, key.severity, derive_seed(cfg.seed, {kStreamSubject, c, s, 1})};
    ShiftSpec test_spec{key.corruption, key.severity, derive_seed(cfg.seed, {kStreamSubject, c, s, 2})};
    return {corrupt(src.train, train_spec, Role::target_train), corrupt(src.test, test_spec, Role::target_test)};
}

inline Classifier train_source_model(const ExperimentConfig& cfg, const SourceData& src) {
    TrainConfig tc = cfg.source_train;
    tc.seed = derive_seed(cfg.seed, {kStreamSource});
    return train(cfg.arch, src.train, tc);
}

/// Everything computed for one (corruption, severity) subject.
struct SubjectRun {
    SubjectInfo info;
    FinetuneReport admissibility;
    bool admissible = false;
    Classifier m_t;
    Dataset train_t;     // fine-tuning sample
    Dataset validation;  // held-out target validation split
    Dataset target_test;
    OdinCalibration calibration;
    std::vector<FeatureRecord> meta_train;
    std::vector<FeatureRecord> test_records;
    MisclassificationOracle oracle;
    std::size_t source_records_kept = 0;
};

inline std::uint64_t subject_seed(const ExperimentConfig& cfg, SubjectKey key, std::uint64_t stream) {
    return derive_seed(cfg.seed, {kStreamSubject, static_cast<std::uint64_t>(key.corruption),
                                  static_cast<std::uint64_t>(key.severity), stream});
}

/// Fine-tunes and checks admissibility. Later stages run only when admissible.
inline SubjectRun prepare_subject(const ExperimentConfig& cfg, const SourceData& src, const Classifier& m_s,
                                  SubjectKey key) {
    SubjectRun run;
    run.info = {subject_name(cfg.dataset.name, key.corruption, key.severity), corruption_name(key.corruption),
                key.severity};
    auto target = make_target_data(cfg, src, key);
    TrainConfig ft = cfg.finetune;
    ft.seed = subject_seed(cfg, key, 10);
    auto res = finetune(m_s, target.train, cfg.n_s, ft);
    run.admissibility = res.report;
    run.admissible = res.report.admissible;
    run.m_t = std::move(res.model);
    run.train_t = std::move(res.sample);
    run.validation = std::move(res.validation);
    run.target_test = std::move(target.test);
    if (!run.admissible) return run;

    auto id_scores = odin_scores(run.m_t, run.validation, cfg.odin);
    auto ood = shuffle_pixels(run.validation, subject_seed(cfg, key, 11));
    auto ood_scores = odin_scores(run.m_t, ood, cfg.odin);
    run.calibration = calibrate_threshold(id_scores, ood_scores);

    run.meta_train = build_training_set(run.train_t, src.test, m_s, run.m_t, cfg.odin, run.calibration);
    run.source_records_kept = run.meta_train.size() - run.train_t.size();
    run.test_records = extract_batch(m_s, run.m_t, run.target_test, cfg.odin, false);

    std::vector<std::size_t> predicted;
    for (const auto& r : run.test_records) predicted.push_back(argmax(r.logits_target));
    run.oracle = MisclassificationOracle::from_predictions(predicted, run.target_test.labels);
    return run;
}

inline MetaModel train_subject_metamodel(const ExperimentConfig& cfg, const SubjectRun& run, AblationVariant v,
                                         SubjectKey key) {
    MetaTrainConfig mc = cfg.meta;
    mc.train.seed = subject_seed(cfg, key, 20);
    auto mm = train_metamodel(run.meta_train, v, mc);
    mm.odin = cfg.odin;
    mm.calibration_threshold = run.calibration.threshold;
    return mm;
}

/// Model-under-test outputs and reference structures for the baselines.
struct BaselineContext {
    BaselineInputs inputs;
    std::optional<SAReference> sa;
};

inline BaselineContext make_baseline_context(const ExperimentConfig& cfg, const SubjectRun& run, SubjectKey key,
                                             const std::vector<std::string>& methods) {
    BaselineContext ctx;
    auto& in = ctx.inputs;
    in.num_classes = run.m_t.num_classes();
    in.nns = cfg.nns;
    in.datis = cfg.datis;
    for (const auto& x : run.target_test.inputs) {
        auto f = run.m_t.forward_full(x);
        in.probs.emplace_back(f.probs.data().begin(), f.probs.data().end());
        in.traces.emplace_back(f.trace.data().begin(), f.trace.data().end());
        in.predicted.push_back(f.predicted);
    }
    std::vector<std::vector<double>> sa_traces;
    std::vector<std::size_t> sa_labels;
    for (std::size_t i = 0; i < run.train_t.size(); ++i) {
        auto f = run.m_t.forward_full(run.train_t.inputs[i]);
        std::vector<double> tr(f.trace.data().begin(), f.trace.data().end());
        in.train_traces.push_back(tr);
        in.train_labels.push_back(run.train_t.labels[i]);
        if (f.predicted == run.train_t.labels[i]) {
            sa_traces.push_back(std::move(tr));
            sa_labels.push_back(run.train_t.labels[i]);
        }
    }
    auto uses = [&](const char* m) { return std::find(methods.begin(), methods.end(), m) != methods.end(); };
    if (uses("dsa") || uses("lsa") || uses("mdsa")) {
        ctx.sa = SAReference::build(sa_traces, sa_labels, in.num_classes, cfg.sa);
    }
    if (uses("ensemble")) {
        EnsembleConfig ec = cfg.ensemble;
        ec.train.seed = subject_seed(cfg, key, 30);
        in.precomputed = ensemble_metamodel_scores(run.m_t, run.train_t, run.validation, run.target_test, ec);
    }
    return ctx;
}

inline std::vector<double> fractions_of(const std::vector<double>& percents) {
    std::vector<double> f;
    for (double p : percents) f.push_back(p / 100.0);
    return f;
}

struct SubjectOutcome {
    SubjectInfo info;
    FinetuneReport admissibility;
    bool admissible = false;
    OdinCalibration calibration;
    std::size_t meta_train_size = 0;
    std::size_t source_records_kept = 0;
    std::size_t mis_total = 0;
    std::vector<Ranking> rankings;
    SubjectResult result;
    std::string reject_reason;
};

/// Full method comparison for one subject.
inline SubjectOutcome evaluate_subject(const ExperimentConfig& cfg, const SourceData& src, const Classifier& m_s,
                                       SubjectKey key, const std::filesystem::path& model_dir = {}) {
    auto run = prepare_subject(cfg, src, m_s, key);
    SubjectOutcome out;
    out.info = run.info;
    out.admissibility = run.admissibility;
    out.admissible = run.admissible;
    if (!run.admissible) {
        out.reject_reason = "inadmissible fine-tuning";
        return out;
    }
    out.calibration = run.calibration;
    out.meta_train_size = run.meta_train.size();
    out.source_records_kept = run.source_records_kept;
    out.mis_total = run.oracle.total();
    if (run.oracle.total() == 0) {
        out.admissible = false;
        out.reject_reason = "no misclassified target test inputs";
        return out;
    }
    auto ctx = make_baseline_context(cfg, run, key, cfg.methods);
    if (ctx.sa) ctx.inputs.sa = &*ctx.sa;
    const auto fractions = fractions_of(cfg.budgets);
    out.result.subject = run.info;
    for (const auto& method : cfg.methods) {
        Ranking r;
        if (method == "metasel") {
            auto mm = train_subject_metamodel(cfg, run, AblationVariant::full, key);
            if (!model_dir.empty()) mm.save(model_dir / (run.info.name + "_metasel.msel"));
            r = rank_records(mm, run.test_records, "metasel", run.info.name);
        } else {
            r = rank_with(method, ctx.inputs, run.info.name);
        }
        out.result.methods.push_back({method, trc_curve(r, run.oracle, fractions)});
        out.rankings.push_back(std::move(r));
    }
    if (!model_dir.empty()) run.m_t.save(model_dir / (run.info.name + "_target.msel"));
    return out;
}

struct AblationOutcome {
    SubjectInfo info;
    bool admissible = false;
    FinetuneReport admissibility;
    std::string reject_reason;
    std::vector<std::pair<std::string, TrcCurve>> variants;  // (variant name, curve)
};

inline AblationOutcome ablate_subject(const ExperimentConfig& cfg, const SourceData& src, const Classifier& m_s,
                                      SubjectKey key) {
    auto run = prepare_subject(cfg, src, m_s, key);
    AblationOutcome out;
    out.info = run.info;
    out.admissible = run.admissible;
    out.admissibility = run.admissibility;
    if (!run.admissible) {
        out.reject_reason = "inadmissible fine-tuning";
        return out;
    }
    if (run.oracle.total() == 0) {
        out.admissible = false;
        out.reject_reason = "no misclassified target test inputs";
        return out;
    }
    const auto fractions = fractions_of(cfg.ablation_budgets);
    for (const auto& name : cfg.variants) {
        auto mm = train_subject_metamodel(cfg, run, parse_variant(name), key);
        auto r = rank_records(mm, run.test_records, name, run.info.name);
        out.variants.emplace_back(name, trc_curve(r, run.oracle, fractions));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Commands

/// Runs fn(i) for i in [0, n) on up to `workers` threads. The first
/// exception is rethrown after all threads finish.
inline void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
    workers = std::max<std::size_t>(1, std::min(workers, n));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

inline void write_failed_marker(const std::filesystem::path& dir, const std::string& message) {
    io::write_text_atomic(dir / "FAILED", message + "\n");
}

inline void clear_failed_marker(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::remove(dir / "FAILED", ec);
}

/// Writes source and target dataset caches under out/data.
inline std::vector<std::filesystem::path> cmd_gen_data(const ExperimentConfig& cfg, const std::filesystem::path& out) {
    const auto dir = out / "data";
    std::vector<std::filesystem::path> written;
    auto src = make_source_data(cfg);
    save_dataset(src.train, dir / "source_train.msds");
    save_dataset(src.test, dir / "source_test.msds");
    written.push_back(dir / "source_train.msds");
    written.push_back(dir / "source_test.msds");
    const auto keys = subject_keys(cfg);
    std::vector<std::vector<std::filesystem::path>> per(keys.size());
    parallel_for(keys.size(), cfg.workers, [&](std::size_t i) {
        auto t = make_target_data(cfg, src, keys[i]);
        const auto name = subject_name(cfg.dataset.name, keys[i].corruption, keys[i].severity);
        save_dataset(t.train, dir / "targets" / (name + "_train.msds"));
        save_dataset(t.test, dir / "targets" / (name + "_test.msds"));
        per[i] = {dir / "targets" / (name + "_train.msds"), dir / "targets" / (name + "_test.msds")};
    });
    for (const auto& p : per) written.insert(written.end(), p.begin(), p.end());
    json manifest = {{"command", "gen-data"}, {"config", config_to_json(cfg)}, {"files", json::array()}};
    for (const auto& p : written) manifest["files"].push_back(std::filesystem::relative(p, dir).string());
    io::write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
    return written;
}

inline csv::Table admissibility_table(const std::vector<SubjectInfo>& info, const std::vector<FinetuneReport>& reports,
                                      const std::vector<std::string>& reasons) {
    csv::Table t({"subject", "corruption", "severity", "n_s", "acc_pretrained", "acc_finetuned", "acc_scratch",
                  "admissible", "reason"});
    for (std::size_t i = 0; i < info.size(); ++i) {
        const auto& r = reports[i];
        t.add({info[i].name, info[i].corruption, std::to_string(info[i].severity), std::to_string(r.n_s),
               csv::fmt(r.acc_pretrained_on_target), csv::fmt(r.acc_finetuned_on_target),
               csv::fmt(r.acc_scratch_on_target), reasons[i].empty() ? "1" : "0", reasons[i]});
    }
    return t;
}

struct RunSummary {
    std::vector<SubjectOutcome> subjects;  // every subject, admissible or not
    std::filesystem::path dir;
};

/// The full comparison. Writes under out/run:
///   rankings/<subject>/<method>.csv, curves.csv, summary.csv, trc_table.csv,
///   distribution.csv, calibration.csv, admissibility.csv, rejects.csv,
///   models/, manifest.json; FAILED on error.
inline RunSummary cmd_run(const ExperimentConfig& cfg, const std::filesystem::path& out) {
    RunSummary summary;
    summary.dir = out / "run";
    const auto& dir = summary.dir;
    std::filesystem::create_directories(dir);
    clear_failed_marker(dir);
    try {
        auto src = make_source_data(cfg);
        auto m_s = train_source_model(cfg, src);
        m_s.save(dir / "models" / "source.msel");
        const auto keys = subject_keys(cfg);
        summary.subjects.resize(keys.size());
        parallel_for(keys.size(), cfg.workers, [&](std::size_t i) {
            summary.subjects[i] = evaluate_subject(cfg, src, m_s, keys[i], dir / "models");
        });

        std::vector<SubjectInfo> info;
        std::vector<FinetuneReport> reports;
        std::vector<std::string> reasons;
        std::vector<SubjectResult> results;
        csv::Table rejects({"subject", "reason", "acc_pretrained", "acc_finetuned", "acc_scratch"});
        csv::Table calib({"subject", "threshold", "achieved_tpr", "achieved_fpr", "meta_train_size",
                          "source_records_kept", "mis_total"});
        for (const auto& s : summary.subjects) {
            info.push_back(s.info);
            reports.push_back(s.admissibility);
            reasons.push_back(s.admissible ? "" : s.reject_reason);
            if (!s.admissible) {
                rejects.add({s.info.name, s.reject_reason, csv::fmt(s.admissibility.acc_pretrained_on_target),
                             csv::fmt(s.admissibility.acc_finetuned_on_target),
                             csv::fmt(s.admissibility.acc_scratch_on_target)});
                continue;
            }
            results.push_back(s.result);
            calib.add({s.info.name, csv::fmt(s.calibration.threshold), csv::fmt(s.calibration.achieved_tpr),
                       csv::fmt(s.calibration.achieved_fpr), std::to_string(s.meta_train_size),
                       std::to_string(s.source_records_kept), std::to_string(s.mis_total)});
            for (const auto& r : s.rankings) {
                csv::Table rt({"rank", "id", "score"});
                for (std::size_t k = 0; k < r.entries.size(); ++k) {
                    rt.add({std::to_string(k + 1), std::to_string(r.entries[k].id), csv::fmt(r.entries[k].score)});
                }
                rt.save(dir / "rankings" / s.info.name / (r.method + ".csv"));
            }
        }
        admissibility_table(info, reports, reasons).save(dir / "admissibility.csv");
        rejects.save(dir / "rejects.csv");
        calib.save(dir / "calibration.csv");
        curve_table(results).save(dir / "curves.csv");
        distribution_table(results).save(dir / "distribution.csv");

        // Wide table: TRC of every method per (subject, budget).
        std::vector<std::string> header{"subject", "corruption", "severity", "budget_pct"};
        for (const auto& m : cfg.methods) header.push_back(m);
        csv::Table wide(header);
        for (const auto& r : results)
            for (std::size_t b = 0; b < cfg.budgets.size(); ++b) {
                std::vector<std::string> row{r.subject.name, r.subject.corruption, std::to_string(r.subject.severity),
                                             csv::fmt(cfg.budgets[b])};
                for (const auto& m : r.methods) row.push_back(csv::fmt(m.curve[b].trc));
                wide.add(std::move(row));
            }
        wide.save(dir / "trc_table.csv");

        const bool has_metasel =
            std::find(cfg.methods.begin(), cfg.methods.end(), "metasel") != cfg.methods.end();
        if (has_metasel && cfg.methods.size() >= 2) {
            summary_table(summarize(results, "metasel")).save(dir / "summary.csv");
        } else {
            summary_table({}).save(dir / "summary.csv");
        }

        json manifest = {{"command", "run"},
                         {"config", config_to_json(cfg)},
                         {"subjects", json::array()},
                         {"rejected", json::array()}};
        for (const auto& s : summary.subjects) manifest[s.admissible ? "subjects" : "rejected"].push_back(s.info.name);
        io::write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
    } catch (const std::exception& e) {
        write_failed_marker(dir, e.what());
        throw;
    }
    return summary;
}

struct AblationSummary {
    std::vector<AblationOutcome> subjects;
    std::filesystem::path dir;
};

/// FULL and V1..V7 per subject. Writes out/ablate/ablation.csv (long
/// format), ablation_summary.csv (median/quartiles per variant and budget),
/// admissibility.csv, rejects.csv, manifest.json.
inline AblationSummary cmd_ablate(const ExperimentConfig& cfg, const std::filesystem::path& out) {
    AblationSummary summary;
    summary.dir = out / "ablate";
    const auto& dir = summary.dir;
    std::filesystem::create_directories(dir);
    clear_failed_marker(dir);
    try {
        auto src = make_source_data(cfg);
        auto m_s = train_source_model(cfg, src);
        const auto keys = subject_keys(cfg);
        summary.subjects.resize(keys.size());
        parallel_for(keys.size(), cfg.workers,
                     [&](std::size_t i) { summary.subjects[i] = ablate_subject(cfg, src, m_s, keys[i]); });

        csv::Table rows({"subject", "corruption", "severity", "variant", "reference", "budget_pct", "budget_count", "trc"});
        csv::Table rejects({"subject", "reason", "acc_pretrained", "acc_finetuned", "acc_scratch"});
        std::vector<SubjectInfo> info;
        std::vector<FinetuneReport> reports;
        std::vector<std::string> reasons;
        std::map<std::pair<std::string, double>, std::vector<double>> groups;
        for (const auto& s : summary.subjects) {
            info.push_back(s.info);
            reports.push_back(s.admissibility);
            reasons.push_back(s.admissible ? "" : s.reject_reason);
            if (!s.admissible) {
                rejects.add({s.info.name, s.reject_reason, csv::fmt(s.admissibility.acc_pretrained_on_target),
                             csv::fmt(s.admissibility.acc_finetuned_on_target),
                             csv::fmt(s.admissibility.acc_scratch_on_target)});
                continue;
            }
            for (const auto& [name, curve] : s.variants)
                for (const auto& p : curve) {
                    rows.add({s.info.name, s.info.corruption, std::to_string(s.info.severity), name,
                              name == "FULL" ? "1" : "0", csv::fmt(percent_of(p.fraction)), std::to_string(p.count),
                              csv::fmt(p.trc)});
                    groups[{name, percent_of(p.fraction)}].push_back(p.trc);
                }
        }
        rows.save(dir / "ablation.csv");
        rejects.save(dir / "rejects.csv");
        admissibility_table(info, reports, reasons).save(dir / "admissibility.csv");
        csv::Table dist({"variant", "reference", "budget_pct", "n", "q1", "median", "q3"});
        for (const auto& name : cfg.variants) {
            std::vector<double> pooled;
            for (const auto& [key, vals] : groups) {
                if (key.first != name) continue;
                pooled.insert(pooled.end(), vals.begin(), vals.end());
                dist.add({name, name == "FULL" ? "1" : "0", csv::fmt(key.second), std::to_string(vals.size()),
                          csv::fmt(quantile(vals, 0.25)), csv::fmt(median(vals)), csv::fmt(quantile(vals, 0.75))});
            }
            if (!pooled.empty()) {
                dist.add({name, name == "FULL" ? "1" : "0", "all", std::to_string(pooled.size()),
                          csv::fmt(quantile(pooled, 0.25)), csv::fmt(median(pooled)), csv::fmt(quantile(pooled, 0.75))});
            }
        }
        dist.save(dir / "ablation_summary.csv");
        json manifest = {{"command", "ablate"}, {"config", config_to_json(cfg)}};
        io::write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
    } catch (const std::exception& e) {
        write_failed_marker(dir, e.what());
        throw;
    }
    return summary;
}

/// Aggregates a finished run from its CSVs alone: out/report/aggregate.csv
/// (TRC per method per subject and budget), wilcoxon.csv (the candidate
/// against each baseline over pooled pairs), report.txt.
inline std::filesystem::path cmd_report(const std::filesystem::path& results_dir, const std::filesystem::path& out,
                                        const std::string& candidate = "metasel") {
    const auto curves_path = results_dir / "curves.csv";
    if (!std::filesystem::exists(curves_path)) {
        throw IoError("no completed run in " + results_dir.string() + " (curves.csv missing)");
    }
    const auto dir = out / "report";
    auto curves = csv::Table::load(curves_path);
    if (curves.rows().empty()) throw IoError("curves.csv in " + results_dir.string() + " holds no rows");
    const auto c_subject = curves.column("subject"), c_method = curves.column("method"),
               c_budget = curves.column("budget_pct"), c_trc = curves.column("trc");
    std::vector<std::string> methods;
    std::vector<std::pair<std::string, std::string>> cells;  // (subject, budget) in file order
    std::map<std::pair<std::string, std::string>, std::map<std::string, double>> trc;
    for (const auto& row : curves.rows()) {
        const auto& m = row[c_method];
        if (std::find(methods.begin(), methods.end(), m) == methods.end()) methods.push_back(m);
        std::pair<std::string, std::string> cell{row[c_subject], row[c_budget]};
        if (!trc.count(cell)) cells.push_back(cell);
        trc[cell][m] = csv::parse_double(row[c_trc]);
    }
    std::vector<std::string> header{"subject", "budget_pct"};
    header.insert(header.end(), methods.begin(), methods.end());
    csv::Table agg(header);
    for (const auto& cell : cells) {
        std::vector<std::string> row{cell.first, cell.second};
        for (const auto& m : methods) row.push_back(trc[cell].count(m) ? csv::fmt(trc[cell][m]) : "nan");
        agg.add(std::move(row));
    }
    agg.save(dir / "aggregate.csv");

    csv::Table wil({"baseline", "n_pairs", "n_nonzero", "statistic", "p_two_sided", "p_greater", "exact"});
    std::string text = "subjects x budgets: " + std::to_string(cells.size()) + "\n";
    const bool has_candidate = std::find(methods.begin(), methods.end(), candidate) != methods.end();
    if (has_candidate) {
        for (const auto& m : methods) {
            if (m == candidate) continue;
            std::vector<double> a, b;
            for (const auto& cell : cells) {
                if (!trc[cell].count(m) || !trc[cell].count(candidate)) continue;
                a.push_back(trc[cell][candidate]);
                b.push_back(trc[cell][m]);
            }
            try {
                auto two = wilcoxon_signed_rank(a, b, Alternative::two_sided);
                auto one = wilcoxon_signed_rank(a, b, Alternative::greater);
                wil.add({m, std::to_string(a.size()), std::to_string(two.n), csv::fmt(two.statistic),
                         csv::fmt(two.p_value), csv::fmt(one.p_value), two.exact ? "1" : "0"});
                text += candidate + " vs " + m + ": p(two-sided) = " + csv::fmt(two.p_value) +
                        ", p(" + candidate + " > " + m + ") = " + csv::fmt(one.p_value) + "\n";
            } catch (const DegenerateError&) {
                wil.add({m, std::to_string(a.size()), "0", "nan", "nan", "nan", "0"});
                text += candidate + " vs " + m + ": all paired differences are zero\n";
            }
        }
    }
    wil.save(dir / "wilcoxon.csv");
    io::write_text_atomic(dir / "report.txt", text);
    return dir;
}

}  // namespace metasel
