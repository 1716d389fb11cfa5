#pragma once
#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace margin {

enum class Activation { relu, identity };
enum class OutputHead { regression_identity, classification_softmax };
enum class LossKind { mse, cross_entropy };

// Flat parameter vector; the single currency shared by training, SWAG
// posteriors, dropout masks and ADF moments.
using ParamVector = std::vector<double>;

// Feed-forward architecture: layer_sizes = {input, hidden..., output}.
struct ModelSpec {
    std::vector<int> layer_sizes;
    Activation activation = Activation::relu;
    OutputHead output_head = OutputHead::regression_identity;
    double dropout_rate = 0.0;  // hidden-layer weight masking, see sample_mask

    int input_dim() const { return layer_sizes.front(); }
    int output_dim() const { return layer_sizes.back(); }
    int num_layers() const { return static_cast<int>(layer_sizes.size()) - 1; }

    void validate() const;  // throws std::invalid_argument
};

// Offsets of one affine layer inside the flat parameter vector. Layout is
// layer-major, weights-then-bias, row-major (fan_out x fan_in) weight
// matrices. Masks, SWAG moments and ADF slices all index by this layout.
struct LayerSlice {
    std::size_t w_off = 0, w_len = 0;
    std::size_t b_off = 0, b_len = 0;
    int fan_in = 0, fan_out = 0;
};

LayerSlice layer_slice(const ModelSpec& spec, int layer);

std::size_t param_dim(const ModelSpec& spec);

// Glorot-uniform weights in [-L, L] with L = sqrt(6 / (fan_in + fan_out));
// biases zero. Deterministic per seed.
ParamVector init_params(const ModelSpec& spec, std::uint64_t seed);

// Deterministic forward pass; softmax applied for the classification head.
std::vector<double> forward(const ModelSpec& spec, std::span<const double> theta,
                            std::span<const double> x);

// One training pair viewed into caller-owned storage.
struct Sample {
    std::span<const double> x;
    std::span<const double> y;
};

// Mean loss over the batch and its exact gradient via backpropagation.
// MSE averages over batch and output dimensions; cross-entropy expects the
// classification head and target probability vectors (one-hot for labels),
// computed fused with log-softmax.
std::pair<double, ParamVector> loss_and_grad(const ModelSpec& spec,
                                             std::span<const double> theta,
                                             std::span<const Sample> batch,
                                             LossKind loss);

}  // namespace margin
