#pragma once

// Source (pre-trained) and target (fine-tuned) classifiers: architectures,
// seeded SGD training, fine-tuning with admissibility checks, persistence.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "metasel/datagen.hpp"
#include "metasel/dataset.hpp"
#include "metasel/errors.hpp"
#include "metasel/network.hpp"
#include "metasel/rng.hpp"
#include "metasel/tensor.hpp"

namespace metasel {

struct TrainConfig {
    std::size_t epochs = 10;
    double learning_rate = 0.01;
    double momentum = 0.9;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;

    void validate() const {
        if (epochs < 1) throw ConfigError("train config: epochs must be >= 1");
        if (!(learning_rate > 0.0)) throw ConfigError("train config: learning_rate must be > 0");
        if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
        if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train config: momentum must be in [0, 1)");
    }
};

enum class Arch { mlp_small, conv_small };

inline Arch parse_arch(const std::string& s) {
    if (s == "mlp_small" || s == "mlp-small") return Arch::mlp_small;
    if (s == "conv_small" || s == "conv-small") return Arch::conv_small;
    throw ConfigError("unknown architecture '" + s + "'");
}

inline std::string arch_name(Arch a) { return a == Arch::mlp_small ? "mlp_small" : "conv_small"; }

struct ForwardFull {
    Tensor logits;
    Tensor probs;
    std::size_t predicted = 0;
    Tensor trace;  // activations of the deepest hidden layer
};

inline std::size_t argmax(std::span<const double> v) {
    return static_cast<std::size_t>(std::distance(v.begin(), std::max_element(v.begin(), v.end())));
}

class Classifier {
   public:
    Classifier() = default;

    explicit Classifier(Network net) : net_(std::move(net)) {
        if (net_.side_width() != 0) throw ConfigError("a classifier cannot take side inputs");
        if (net_.output_size() < 2) throw ConfigError("a classifier needs at least two classes");
        if (net_.layers().back().kind != LayerKind::dense) {
            throw ConfigError("a classifier must end in a dense logit layer");
        }
    }

    std::size_t num_classes() const { return net_.output_size(); }
    Shape input_shape() const { return net_.input_shape(); }
    const Network& network() const { return net_; }
    Network& mutable_network() { return net_; }

    Tensor logits(const Tensor& x, Tape* tape = nullptr, Tensor* trace = nullptr) const {
        return net_.forward(x, tape, nullptr, trace);
    }

    ForwardFull forward_full(const Tensor& x) const {
        ForwardFull out;
        out.logits = logits(x, nullptr, &out.trace);
        out.probs = Tensor::vector(softmax(out.logits));
        out.predicted = argmax(out.logits.data());
        return out;
    }

    std::size_t predict(const Tensor& x) const { return argmax(logits(x).data()); }

    Classifier clone() const { return Classifier(net_.clone()); }

    void save(const std::filesystem::path& path) const { net_.save(path); }
    static Classifier load(const std::filesystem::path& path) { return Classifier(Network::load(path)); }

   private:
    Network net_;
};

/// MLP-small: flatten -> 64 -> relu -> C.  Conv-small: conv 3x3x8 -> relu ->
/// flatten -> 32 -> relu -> C.  Inputs are channel-first [1 x H x W].
inline Classifier make_classifier(Arch arch, const Shape& input_shape, std::size_t num_classes,
                                  std::uint64_t seed) {
    if (input_shape.size() != 3) throw ConfigError("classifier input must be [channels x H x W]");
    auto u32 = [](std::size_t v) { return static_cast<std::uint32_t>(v); };
    std::vector<Layer> layers;
    layers.push_back({LayerKind::input, {u32(input_shape[0]), u32(input_shape[1]), u32(input_shape[2])}, {}});
    if (arch == Arch::mlp_small) {
        layers.push_back({LayerKind::flatten, {}, {}});
        layers.push_back({LayerKind::dense, {u32(shape_size(input_shape)), 64}, {}});
        layers.push_back({LayerKind::relu, {}, {}});
        layers.push_back({LayerKind::dense, {64, u32(num_classes)}, {}});
    } else {
        const std::size_t conv_out = 8 * (input_shape[1] - 2) * (input_shape[2] - 2);
        layers.push_back({LayerKind::conv2d, {8, u32(input_shape[0]), 3, 3}, {}});
        layers.push_back({LayerKind::relu, {}, {}});
        layers.push_back({LayerKind::flatten, {}, {}});
        layers.push_back({LayerKind::dense, {u32(conv_out), 32}, {}});
        layers.push_back({LayerKind::relu, {}, {}});
        layers.push_back({LayerKind::dense, {32, u32(num_classes)}, {}});
    }
    return Classifier(Network::create(std::move(layers), seed));
}

/// One pass of minibatch SGD over `order`; `loss_at(i, tape)` returns the
/// scalar loss of item i. Returns the mean loss.
inline double sgd_epoch(Sgd& opt, const std::vector<std::size_t>& order, std::size_t batch_size,
                        const std::function<Tensor(std::size_t, Tape&)>& loss_at) {
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t end = std::min(order.size(), start + batch_size);
        const double inv = 1.0 / static_cast<double>(end - start);
        for (std::size_t j = start; j < end; ++j) {
            Tape tape;
            auto loss = loss_at(order[j], tape);
            total += loss.item();
            tape.backward(loss, inv);
        }
        opt.step();
    }
    return order.empty() ? 0.0 : total / static_cast<double>(order.size());
}

/// Continues SGD training of a private copy of `start` on `data`.
inline Classifier fit(const Classifier& start, const Dataset& data, const TrainConfig& cfg) {
    cfg.validate();
    if (data.empty()) throw DataError("cannot train on an empty dataset");
    data.validate();
    if (data.num_classes > start.num_classes()) {
        throw DataError("dataset has " + std::to_string(data.num_classes) + " classes, model has " +
                        std::to_string(start.num_classes()));
    }
    if (data.input_shape() != start.input_shape()) {
        throw DimensionError("dataset inputs " + shape_str(data.input_shape()) + " do not match model input " +
                             shape_str(start.input_shape()));
    }
    Classifier model = start.clone();
    model.mutable_network().set_requires_grad(true);
    Sgd opt(model.network().params(), cfg.learning_rate, cfg.momentum);
    for (auto& p : model.network().params()) p.ensure_grad();
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(cfg.seed, {0x7472616eULL}));
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        sgd_epoch(opt, order, cfg.batch_size, [&](std::size_t i, Tape& tape) {
            return softmax_cross_entropy(model.logits(data.inputs[i], &tape), data.labels[i], &tape);
        });
    }
    model.mutable_network().set_requires_grad(false);
    return model;
}

/// Initializes `arch` from cfg.seed and trains it on `data`.
inline Classifier train(Arch arch, const Dataset& data, const TrainConfig& cfg) {
    cfg.validate();
    if (data.empty()) throw DataError("cannot train on an empty dataset");
    data.validate();
    auto init = make_classifier(arch, data.input_shape(), data.num_classes, derive_seed(cfg.seed, {0x696e6974ULL}));
    return fit(init, data, cfg);
}

inline double accuracy(const Classifier& m, const Dataset& d) {
    if (d.empty()) throw DataError("accuracy of an empty dataset");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < d.size(); ++i) hits += m.predict(d.inputs[i]) == d.labels[i];
    return static_cast<double>(hits) / static_cast<double>(d.size());
}

struct FinetuneReport {
    double acc_pretrained_on_target = 0.0;
    double acc_finetuned_on_target = 0.0;
    double acc_scratch_on_target = 0.0;
    std::size_t n_s = 0;
    bool admissible = false;
};

struct FinetuneResult {
    Classifier model;
    FinetuneReport report;
    Dataset sample;      // the n_s inputs the model was fine-tuned on (role target_train)
    Dataset validation;  // held-out target split used for the admissibility check
};

/// Holds out a seeded, stratified 20% of `target_train` for validation, draws
/// an n_s sample from the rest, and continues training a copy of `pretrained`
/// on it. A same-architecture model trained from scratch on the sample is
/// the reference for admissibility.
inline FinetuneResult finetune(const Classifier& pretrained, const Dataset& target_train, std::size_t n_s,
                               const TrainConfig& cfg) {
    cfg.validate();
    if (n_s == 0) throw ConfigError("finetune: n_s must be >= 1");
    if (n_s > target_train.size()) {
        throw ConfigError("finetune: n_s = " + std::to_string(n_s) + " exceeds target training set of " +
                          std::to_string(target_train.size()));
    }
    auto parts = split(target_train, {0.2, 0.8}, derive_seed(cfg.seed, {0x76616cULL}));
    Dataset validation = std::move(parts[0]);
    validation.role = Role::validation;
    const Dataset& pool = parts[1];
    if (n_s > pool.size()) {
        throw ConfigError("finetune: n_s = " + std::to_string(n_s) + " exceeds the " + std::to_string(pool.size()) +
                          " inputs left after holding out validation");
    }
    std::vector<std::size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(derive_seed(cfg.seed, {0x73616d70ULL}));
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(n_s);
    std::sort(idx.begin(), idx.end());
    Dataset sample = pool.subset(idx, Role::target_train);

    FinetuneResult out;
    out.model = fit(pretrained, sample, cfg);
    Classifier scratch(pretrained.network().reinitialized(derive_seed(cfg.seed, {0x736372ULL})));
    scratch = fit(scratch, sample, cfg);

    auto& r = out.report;
    r.n_s = n_s;
    r.acc_pretrained_on_target = accuracy(pretrained, validation);
    r.acc_finetuned_on_target = accuracy(out.model, validation);
    r.acc_scratch_on_target = accuracy(scratch, validation);
    r.admissible = r.acc_finetuned_on_target > r.acc_scratch_on_target &&
                   r.acc_finetuned_on_target > r.acc_pretrained_on_target;
    out.sample = std::move(sample);
    out.validation = std::move(validation);
    return out;
}

}  // namespace metasel
