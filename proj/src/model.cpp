#include "cmm/model.hpp"

#include "cmm/errors.hpp"

#include <cmath>
#include <unordered_set>
#include <utility>

namespace cmm {

ActivationKind activation_from_string(const std::string& tag) {
    if (tag == "identity") return ActivationKind::identity;
    if (tag == "relu") return ActivationKind::relu;
    if (tag == "tanh") return ActivationKind::tanh;
    if (tag == "gelu") return ActivationKind::gelu;
    throw Error("unknown activation tag '" + tag + "'");
}

std::string to_string(ActivationKind kind) {
    switch (kind) {
        case ActivationKind::identity: return "identity";
        case ActivationKind::relu: return "relu";
        case ActivationKind::tanh: return "tanh";
        case ActivationKind::gelu: return "gelu";
    }
    throw Error("invalid activation kind");
}

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu_exact(double z) {
    return 0.5 * z * (1.0 + std::erf(z * kInvSqrt2));
}

} // namespace

DenseMatrix apply_activation(ActivationKind kind, const DenseMatrix& z) {
    if (kind == ActivationKind::identity) {
        return z;
    }
    DenseMatrix out = z;
    switch (kind) {
        case ActivationKind::relu:
            for (double& v : out.data()) {
                if (v < 0.0) v = 0.0;
            }
            break;
        case ActivationKind::tanh:
            for (double& v : out.data()) {
                v = std::tanh(v);
            }
            break;
        case ActivationKind::gelu:
            for (double& v : out.data()) {
                v = gelu_exact(v);
            }
            break;
        case ActivationKind::identity:
            break;
    }
    return out;
}

DenseMatrix activation_derivative(ActivationKind kind, const DenseMatrix& z) {
    DenseMatrix out = z;
    switch (kind) {
        case ActivationKind::identity:
            for (double& v : out.data()) {
                v = 1.0;
            }
            break;
        case ActivationKind::relu:
            for (double& v : out.data()) {
                v = v > 0.0 ? 1.0 : 0.0;
            }
            break;
        case ActivationKind::tanh:
            for (double& v : out.data()) {
                const double t = std::tanh(v);
                v = 1.0 - t * t;
            }
            break;
        case ActivationKind::gelu:
            for (double& v : out.data()) {
                const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                v = cdf + v * pdf;
            }
            break;
    }
    return out;
}

SequentialModel::SequentialModel(std::size_t input_dim, std::vector<LinearLayer> layers)
    : input_dim_(input_dim), layers_(std::move(layers)) {
    if (layers_.empty()) {
        throw InvalidModel("model needs at least one layer");
    }
    if (input_dim_ == 0) {
        throw InvalidModel("model input dimension must be positive");
    }

    std::unordered_set<std::string> names;
    std::size_t expected_in = input_dim_;
    for (const LinearLayer& layer : layers_) {
        if (layer.name.empty()) {
            throw InvalidModel("layer name must be non-empty");
        }
        if (!names.insert(layer.name).second) {
            throw InvalidModel("duplicate layer name '" + layer.name + "'");
        }
        if (layer.out_dim() == 0 || layer.weight.cols() == 0) {
            throw InvalidModel("layer '" + layer.name + "' has an empty weight");
        }
        if (layer.in_dim() != expected_in) {
            throw InvalidModel("layer '" + layer.name + "' expects input dim " +
                               std::to_string(layer.in_dim()) + " but receives " +
                               std::to_string(expected_in));
        }
        if (!layer.weight.is_finite()) {
            throw InvalidModel("layer '" + layer.name + "' has non-finite weights");
        }
        expected_in = layer.out_dim();
    }
}

bool SequentialModel::same_architecture(const SequentialModel& other) const noexcept {
    if (input_dim_ != other.input_dim_ || layers_.size() != other.layers_.size()) {
        return false;
    }
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const LinearLayer& a = layers_[l];
        const LinearLayer& b = other.layers_[l];
        if (!a.weight.same_shape(b.weight) || a.has_bias != b.has_bias ||
            a.activation != b.activation) {
            return false;
        }
    }
    return true;
}

ActivationTrace forward_capture(const SequentialModel& model, const DenseMatrix& x) {
    if (x.rows() != model.input_dim()) {
        throw InvalidShape("forward_capture: input has " + std::to_string(x.rows()) +
                           " rows, model expects " + std::to_string(model.input_dim()));
    }

    ActivationTrace trace;
    trace.per_layer_inputs.reserve(model.layer_count());

    DenseMatrix current = x;
    for (const LinearLayer& layer : model.layers()) {
        trace.per_layer_inputs.push_back(current);
        const DenseMatrix z = layer.has_bias ? matmul(layer.weight, current.with_ones_row())
                                             : matmul(layer.weight, current);
        current = apply_activation(layer.activation, z);
    }
    trace.final_output = std::move(current);
    return trace;
}

} // namespace cmm
