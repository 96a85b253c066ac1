#pragma once

#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace msplab {

struct Parameter {
    std::string name;
    Tensor value;  // leaf, requires_grad
};

struct MlpArch {
    std::vector<std::size_t> hidden;  // empty = linear classifier
};

/// conv3x3(conv_channels) -> relu -> 2x2 mean pool -> dense(dense_width) -> relu -> dense(classes)
struct SmallCnnArch {
    std::size_t conv_channels = 8;
    std::size_t dense_width = 32;
};

struct ModelSpec {
    std::variant<MlpArch, SmallCnnArch> architecture;
    Shape input_shape;  // per example, e.g. {16} or {1, 28, 28}
    std::size_t class_count = 0;
    std::uint64_t init_seed = 0;
};

inline std::string describe(const ModelSpec& spec) {
    std::string out;
    if (const auto* mlp = std::get_if<MlpArch>(&spec.architecture)) {
        out = "mlp(";
        for (std::size_t i = 0; i < mlp->hidden.size(); ++i) out += (i ? "," : "") + std::to_string(mlp->hidden[i]);
        out += ")";
    } else {
        const auto& cnn = std::get<SmallCnnArch>(spec.architecture);
        out = "cnn(" + std::to_string(cnn.conv_channels) + "," + std::to_string(cnn.dense_width) + ")";
    }
    return out + " input=" + shape_str(spec.input_shape) + " classes=" + std::to_string(spec.class_count) +
           " init_seed=" + std::to_string(spec.init_seed);
}

class Model {
public:
    explicit Model(ModelSpec spec) : spec_(std::move(spec)) {
        if (spec_.class_count < 2) throw ConfigError("model needs at least 2 classes");
        if (spec_.input_shape.empty() || shape_numel(spec_.input_shape) == 0) {
            throw ConfigError("model input shape must be non-empty");
        }
        RandomStream rng(spec_.init_seed, "init");
        if (const auto* mlp = std::get_if<MlpArch>(&spec_.architecture)) {
            std::size_t fan_in = shape_numel(spec_.input_shape);
            std::size_t layer = 0;
            for (auto width : mlp->hidden) {
                add_dense(rng, "dense" + std::to_string(layer++), fan_in, width);
                fan_in = width;
            }
            add_dense(rng, "dense" + std::to_string(layer), fan_in, spec_.class_count);
        } else {
            const auto& cnn = std::get<SmallCnnArch>(spec_.architecture);
            if (spec_.input_shape.size() != 3) {
                throw ConfigError("small CNN needs [c x h x w] inputs, got " + shape_str(spec_.input_shape));
            }
            const std::size_t c = spec_.input_shape[0], h = spec_.input_shape[1], w = spec_.input_shape[2];
            if (h < 2 || w < 2) throw ConfigError("small CNN needs spatial extent >= 2");
            add_param("conv.kernels", {cnn.conv_channels, c, 3, 3}, he_values(rng, cnn.conv_channels * c * 9, c * 9));
            add_param("conv.bias", {cnn.conv_channels}, std::vector<double>(cnn.conv_channels, 0.0));
            const std::size_t flat = cnn.conv_channels * (h / 2) * (w / 2);
            add_dense(rng, "dense0", flat, cnn.dense_width);
            add_dense(rng, "dense1", cnn.dense_width, spec_.class_count);
        }
        std::set<std::string> names;
        for (const auto& p : params_) {
            if (!names.insert(p.name).second) throw ContractError("duplicate parameter name " + p.name);
        }
    }

    const ModelSpec& spec() const { return spec_; }
    std::vector<Parameter>& parameters() { return params_; }
    const std::vector<Parameter>& parameters() const { return params_; }

    std::size_t input_size() const { return shape_numel(spec_.input_shape); }

    /// Logits [n x classes] for a row-major batch of n examples.
    Tensor forward(const Tensor& batch) const {
        const std::size_t n = batch.numel() / input_size();
        if (n * input_size() != batch.numel()) {
            throw DimensionError("forward: batch " + shape_str(batch.shape()) + " is not a whole number of " +
                                 shape_str(spec_.input_shape) + " examples");
        }
        std::size_t next = 0;
        Tensor h;
        if (std::holds_alternative<MlpArch>(spec_.architecture)) {
            h = batch.rank() == 2 ? batch : reshape(batch, {n, input_size()});
        } else {
            Shape s{n};
            s.insert(s.end(), spec_.input_shape.begin(), spec_.input_shape.end());
            Tensor x = batch.shape() == s ? batch : reshape(batch, s);
            h = relu(conv2d(x, params_[0].value, params_[1].value));
            h = mean_pool2d(h, 2);
            h = reshape(h, {n, h.numel() / n});
            next = 2;
        }
        for (std::size_t i = next; i < params_.size(); i += 2) {
            h = add(matmul(h, params_[i].value), params_[i + 1].value);
            if (i + 2 < params_.size()) h = relu(h);
        }
        return h;
    }

    void zero_grad() {
        for (auto& p : params_) p.value.zero_grad();
    }

    /// Flattened copy of every parameter value, in declaration order.
    std::vector<double> flat_parameters() const {
        std::vector<double> out;
        for (const auto& p : params_) out.insert(out.end(), p.value.data().begin(), p.value.data().end());
        return out;
    }

private:
    static std::vector<double> he_values(RandomStream& rng, std::size_t count, std::size_t fan_in) {
        const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
        std::vector<double> v(count);
        for (auto& x : v) x = rng.normal() * scale;
        return v;
    }

    void add_param(std::string name, Shape shape, std::vector<double> values) {
        params_.push_back({std::move(name), Tensor(std::move(shape), std::move(values), true)});
    }

    void add_dense(RandomStream& rng, const std::string& name, std::size_t in, std::size_t out) {
        add_param(name + ".weight", {in, out}, he_values(rng, in * out, in));
        add_param(name + ".bias", {out}, std::vector<double>(out, 0.0));
    }

    ModelSpec spec_;
    std::vector<Parameter> params_;
};

/// Index of the largest value; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> values) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[best]) best = i;
    return best;
}

} // namespace msplab
