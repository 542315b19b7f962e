#pragma once

// Feed-forward networks built from a short list of layer kinds, plus the
// "MSEL" binary weight format shared by classifiers and meta-models.
//
// MSEL layout (little-endian):
//   "MSEL" | u32 version (=1) | u32 layer count |
//   per layer: u8 kind tag, u32 dim count, dim count x u32 dims |
//   all parameter tensors as f64, in layer order (weight then bias).
// The first layer is always `input`, whose dims are the input shape.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "metasel/binary_io.hpp"
#include "metasel/errors.hpp"
#include "metasel/rng.hpp"
#include "metasel/tensor.hpp"

namespace metasel {

enum class LayerKind : std::uint8_t {
    input = 0,
    dense = 1,    // dims {in, out}; params W[in x out], b[out]
    relu = 2,
    flatten = 3,
    conv2d = 4,   // dims {out_c, in_c, kh, kw}; params K, b[out_c]
    conv1d = 5,   // dims {out_c, in_c, k}; params K, b[out_c]
    concat = 6,   // dims {side width}; appends the side vector to the flattened activations
    sigmoid = 7,
};

inline bool valid_layer_kind(std::uint8_t tag) { return tag <= static_cast<std::uint8_t>(LayerKind::sigmoid); }

struct Layer {
    LayerKind kind;
    std::vector<std::uint32_t> dims;
    std::vector<Tensor> params;
};

class Network {
   public:
    Network() = default;

    /// Builds parameter tensors for `layers` (params left empty) and checks the
    /// shape chain. Weights are He-uniform from `seed`, biases zero.
    static Network create(std::vector<Layer> layers, std::uint64_t seed) {
        Network net;
        net.layers_ = std::move(layers);
        net.allocate_params();
        net.check();
        net.initialize(seed);
        return net;
    }

    const std::vector<Layer>& layers() const { return layers_; }
    Shape input_shape() const {
        Shape s;
        for (auto d : layers_.front().dims) s.push_back(d);
        return s;
    }
    std::size_t output_size() const { return output_size_; }
    std::size_t side_width() const { return side_width_; }

    std::vector<Tensor> params() const {
        std::vector<Tensor> out;
        for (const auto& l : layers_)
            for (const auto& p : l.params) out.push_back(p);
        return out;
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& p : params()) n += p.size();
        return n;
    }

    void set_requires_grad(bool on) {
        for (auto& p : params()) {
            p.set_requires_grad(on);
            if (!on) p.clear_grad();
        }
    }

    Network clone() const {
        Network net = *this;
        for (auto& l : net.layers_)
            for (auto& p : l.params) p = p.clone();
        return net;
    }

    /// Same architecture, fresh weights.
    Network reinitialized(std::uint64_t seed) const {
        Network net = clone();
        net.initialize(seed);
        return net;
    }

    /// Runs the network. `side` feeds a concat layer; `trace`, when given,
    /// receives the activations entering the final dense layer.
    Tensor forward(const Tensor& x, Tape* tape = nullptr, const Tensor* side = nullptr,
                   Tensor* trace = nullptr) const {
        return run(x, tape, side, trace, layers_.size());
    }

    /// Like forward, but stops short of a trailing sigmoid layer.
    Tensor forward_logit(const Tensor& x, Tape* tape = nullptr, const Tensor* side = nullptr) const {
        const bool ends_sigmoid = layers_.back().kind == LayerKind::sigmoid;
        return run(x, tape, side, nullptr, layers_.size() - (ends_sigmoid ? 1 : 0));
    }

    std::vector<char> to_bytes() const {
        io::ByteWriter w;
        w.bytes("MSEL");
        w.u32(kFormatVersion);
        w.u32(static_cast<std::uint32_t>(layers_.size()));
        for (const auto& l : layers_) {
            w.u8(static_cast<std::uint8_t>(l.kind));
            w.u32(static_cast<std::uint32_t>(l.dims.size()));
            for (auto d : l.dims) w.u32(d);
        }
        for (const auto& p : params())
            for (double v : p.data()) w.f64(v);
        return w.buffer();
    }

    static Network from_bytes(std::vector<char> bytes) {
        io::ByteReader r(std::move(bytes));
        if (r.remaining() < 4 || r.bytes(4) != "MSEL") throw FormatError("bad magic, expected \"MSEL\"", 0);
        const std::size_t vpos = r.offset();
        const auto version = r.u32();
        if (version != kFormatVersion) {
            throw UnsupportedVersionError("unsupported MSEL version " + std::to_string(version), vpos);
        }
        const auto count = r.u32();
        if (count == 0 || count > 4096) throw FormatError("implausible layer count " + std::to_string(count), 8);
        Network net;
        for (std::uint32_t i = 0; i < count; ++i) {
            const std::size_t at = r.offset();
            const auto tag = r.u8();
            if (!valid_layer_kind(tag)) throw FormatError("unknown layer kind " + std::to_string(tag), at);
            const auto ndims = r.u32();
            if (ndims > 8) throw FormatError("implausible dim count " + std::to_string(ndims), at + 1);
            Layer l{static_cast<LayerKind>(tag), {}, {}};
            for (std::uint32_t d = 0; d < ndims; ++d) l.dims.push_back(r.u32());
            net.layers_.push_back(std::move(l));
        }
        const std::size_t body = r.offset();
        try {
            net.allocate_params();
            net.check();
        } catch (const Error& e) {
            throw FormatError(std::string("inconsistent layer table: ") + e.what(), body);
        }
        for (auto& p : net.params()) {
            auto d = p.mutable_data();
            for (auto& v : d) v = r.f64();
        }
        if (r.remaining() != 0) throw FormatError("trailing bytes after parameters", r.offset());
        return net;
    }

    void save(const std::filesystem::path& path) const {
        auto bytes = to_bytes();
        io::write_file_atomic(path, bytes);
    }

    static Network load(const std::filesystem::path& path) { return from_bytes(io::read_file(path)); }

    static constexpr std::uint32_t kFormatVersion = 1;

   private:
    Tensor run(const Tensor& x, Tape* tape, const Tensor* side, Tensor* trace, std::size_t end) const {
        if (x.shape() != input_shape()) {
            throw DimensionError("network expects input " + shape_str(input_shape()) + ", got " +
                                 shape_str(x.shape()));
        }
        Tensor h = x;
        for (std::size_t i = 1; i < end; ++i) {
            const auto& l = layers_[i];
            if (i == last_dense_ && trace) *trace = h;
            switch (l.kind) {
                case LayerKind::dense:
                    h = add_row_bias(matmul(h, l.params[0], tape), l.params[1], tape);
                    break;
                case LayerKind::relu: h = relu(h, tape); break;
                case LayerKind::sigmoid: h = sigmoid(h, tape); break;
                case LayerKind::flatten: h = flatten(h, tape); break;
                case LayerKind::conv2d:
                    h = add_channel_bias(conv(h, l.params[0], 2, tape), l.params[1], tape);
                    break;
                case LayerKind::conv1d:
                    h = add_channel_bias(conv(h, l.params[0], 1, tape), l.params[1], tape);
                    break;
                case LayerKind::concat: {
                    if (side == nullptr || side->size() != l.dims[0]) {
                        throw DimensionError("concat layer expects a side vector of " + std::to_string(l.dims[0]));
                    }
                    h = concat(h.rank() == 1 ? h : flatten(h, tape), *side, tape);
                    break;
                }
                case LayerKind::input: throw StateError("input layer in the middle of a network");
            }
        }
        return h;
    }

    void allocate_params() {
        for (auto& l : layers_) {
            l.params.clear();
            auto need = [&](std::size_t n) {
                if (l.dims.size() != n) {
                    throw ConfigError("layer kind " + std::to_string(static_cast<int>(l.kind)) + " needs " +
                                      std::to_string(n) + " dims, got " + std::to_string(l.dims.size()));
                }
            };
            switch (l.kind) {
                case LayerKind::dense:
                    need(2);
                    l.params = {Tensor::zeros({l.dims[0], l.dims[1]}), Tensor::zeros({l.dims[1]})};
                    break;
                case LayerKind::conv2d:
                    need(4);
                    l.params = {Tensor::zeros({l.dims[0], l.dims[1], l.dims[2], l.dims[3]}),
                                Tensor::zeros({l.dims[0]})};
                    break;
                case LayerKind::conv1d:
                    need(3);
                    l.params = {Tensor::zeros({l.dims[0], l.dims[1], l.dims[2]}), Tensor::zeros({l.dims[0]})};
                    break;
                case LayerKind::concat: need(1); break;
                case LayerKind::relu:
                case LayerKind::sigmoid:
                case LayerKind::flatten: need(0); break;
                case LayerKind::input: break;
            }
        }
    }

    // Walks the shape chain once so that malformed layer tables fail at build time.
    void check() {
        if (layers_.empty() || layers_.front().kind != LayerKind::input) {
            throw ConfigError("network must start with an input layer");
        }
        Shape s = input_shape();
        last_dense_ = 0;
        side_width_ = 0;
        for (std::size_t i = 1; i < layers_.size(); ++i) {
            const auto& l = layers_[i];
            switch (l.kind) {
                case LayerKind::input: throw ConfigError("input layer may only appear first");
                case LayerKind::dense:
                    if (s.size() != 1 || s[0] != l.dims[0]) {
                        throw ConfigError("dense layer " + std::to_string(i) + " expects [" + std::to_string(l.dims[0]) +
                                          "], receives " + shape_str(s));
                    }
                    s = {l.dims[1]};
                    last_dense_ = i;
                    break;
                case LayerKind::relu:
                case LayerKind::sigmoid: break;
                case LayerKind::flatten: s = {shape_size(s)}; break;
                case LayerKind::conv2d:
                    if (s.size() != 3 || s[0] != l.dims[1] || s[1] < l.dims[2] || s[2] < l.dims[3]) {
                        throw ConfigError("conv2d layer " + std::to_string(i) + " does not fit " + shape_str(s));
                    }
                    s = {l.dims[0], s[1] - l.dims[2] + 1, s[2] - l.dims[3] + 1};
                    break;
                case LayerKind::conv1d:
                    if (s.size() != 2 || s[0] != l.dims[1] || s[1] < l.dims[2]) {
                        throw ConfigError("conv1d layer " + std::to_string(i) + " does not fit " + shape_str(s));
                    }
                    s = {l.dims[0], s[1] - l.dims[2] + 1};
                    break;
                case LayerKind::concat:
                    s = {shape_size(s) + l.dims[0]};
                    side_width_ = l.dims[0];
                    break;
            }
        }
        if (s.size() != 1) throw ConfigError("network output must be a vector, got " + shape_str(s));
        if (last_dense_ == 0) throw ConfigError("network has no dense layer");
        output_size_ = s[0];
    }

    void initialize(std::uint64_t seed) {
        Rng rng(seed);
        for (auto& l : layers_) {
            if (l.params.empty()) continue;
            auto& w = l.params[0];
            const std::size_t fan_in = w.size() / (l.kind == LayerKind::dense ? w.dim(1) : w.dim(0));
            const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
            std::uniform_real_distribution<double> u(-bound, bound);
            for (auto& v : w.mutable_data()) v = u(rng);
            for (auto& v : l.params[1].mutable_data()) v = 0.0;
        }
    }

    std::vector<Layer> layers_;
    std::size_t last_dense_ = 0;
    std::size_t output_size_ = 0;
    std::size_t side_width_ = 0;
};

}  // namespace metasel
