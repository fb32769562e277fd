#pragma once

#include "cmm/matrix.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace cmm {

/// Pointwise activation attached to a layer; it is applied to that layer's
/// own output to produce the next layer's input.
enum class ActivationKind { identity, relu, tanh, gelu };

/// Parses one of "identity", "relu", "tanh", "gelu". Throws an Error naming
/// the offending tag otherwise.
ActivationKind activation_from_string(const std::string& tag);
std::string to_string(ActivationKind kind);

/// Elementwise activation map. gelu uses the exact Gaussian CDF form
/// 0.5 * z * (1 + erf(z / sqrt(2))).
DenseMatrix apply_activation(ActivationKind kind, const DenseMatrix& z);

/// Elementwise derivative evaluated at the pre-activation values.
DenseMatrix activation_derivative(ActivationKind kind, const DenseMatrix& z);

struct LinearLayer {
    std::string name;
    DenseMatrix weight;  // out x (in + 1 if has_bias else in)
    bool has_bias = false;
    ActivationKind activation = ActivationKind::identity;

    std::size_t in_dim() const noexcept {
        return weight.cols() - (has_bias ? 1 : 0);
    }
    std::size_t out_dim() const noexcept { return weight.rows(); }
};

/// A strict sequential chain of linear layers with pointwise activations.
/// Immutable after construction; forward passes are pure.
class SequentialModel {
public:
    /// Validates: at least one layer, unique non-empty names, finite weights,
    /// and a consistent dimension chain starting at input_dim.
    SequentialModel(std::size_t input_dim, std::vector<LinearLayer> layers);

    std::size_t input_dim() const noexcept { return input_dim_; }
    std::size_t layer_count() const noexcept { return layers_.size(); }
    std::size_t output_dim() const noexcept { return layers_.back().out_dim(); }
    const std::vector<LinearLayer>& layers() const noexcept { return layers_; }
    const LinearLayer& layer(std::size_t index) const { return layers_.at(index); }

    /// Mutable snapshot of the layers, for building derived models.
    std::vector<LinearLayer> layers_copy() const { return layers_; }

    /// True when the other model has identical layer shapes, bias flags and
    /// activation kinds (names may differ).
    bool same_architecture(const SequentialModel& other) const noexcept;

private:
    std::size_t input_dim_ = 0;
    std::vector<LinearLayer> layers_;
};

/// Inputs seen by every layer during one forward pass. per_layer_inputs[l]
/// is the d_l x n matrix entering layer l; final_output is the last layer's
/// post-activation output.
struct ActivationTrace {
    std::vector<DenseMatrix> per_layer_inputs;
    DenseMatrix final_output;
};

/// Runs the model on X (input_dim x n) and captures every layer input.
ActivationTrace forward_capture(const SequentialModel& model, const DenseMatrix& x);

} // namespace cmm
