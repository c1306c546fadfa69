#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nvfg/tensor.hpp"

namespace nvfg {

enum class LayerKind { dense, conv2d, relu, global_avg_pool };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    // dense: in/out features. conv2d: in = input channels, out = filter count k.
    std::size_t in = 0;
    std::size_t out = 0;
    std::size_t kernel = 0;
    std::size_t stride = 1;

    static LayerSpec dense(std::size_t in, std::size_t out) { return {LayerKind::dense, in, out, 0, 1}; }
    static LayerSpec conv2d(std::size_t in_channels, std::size_t filters, std::size_t kernel,
                            std::size_t stride = 1) {
        return {LayerKind::conv2d, in_channels, filters, kernel, stride};
    }
    static LayerSpec relu() { return {LayerKind::relu}; }
    static LayerSpec global_avg_pool() { return {LayerKind::global_avg_pool}; }

    bool trainable() const { return kind == LayerKind::dense || kind == LayerKind::conv2d; }

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// A layer stack plus the per-sample input shape it consumes
/// ([features] for dense-first stacks, [channels, height, width] for conv).
struct NetworkSpec {
    Shape input_shape;
    std::vector<LayerSpec> layers;

    /// Throws ConfigError when consecutive layers do not chain.
    void validate() const;
    /// Per-sample shape entering each layer, followed by the output shape.
    std::vector<Shape> layer_shapes() const;
    Shape output_shape() const;
    bool has_global_pool() const;

    friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

std::string param_name(std::size_t layer, const std::string& role);

/// Trainable parameters keyed by "L<layer>.weight" / "L<layer>.bias".
class ParamSet {
public:
    using Map = std::map<std::string, Tensor>;

    Tensor& operator[](const std::string& name) { return tensors_[name]; }
    const Tensor& at(const std::string& name) const;
    bool contains(const std::string& name) const { return tensors_.contains(name); }
    std::size_t size() const { return tensors_.size(); }
    std::size_t scalar_count() const;

    Map::iterator begin() { return tensors_.begin(); }
    Map::iterator end() { return tensors_.end(); }
    Map::const_iterator begin() const { return tensors_.begin(); }
    Map::const_iterator end() const { return tensors_.end(); }

    /// Zero tensors with the same names and shapes.
    ParamSet zeros_like() const;
    /// Throws DimensionError unless names and shapes agree.
    void require_same_layout(const ParamSet& other) const;
    /// Element-wise sum; layouts must match.
    ParamSet plus(const ParamSet& other) const;

    friend bool operator==(const ParamSet&, const ParamSet&) = default;

private:
    Map tensors_;
};

/// Scaled-uniform weights in [-1/sqrt(fan_in), 1/sqrt(fan_in)], zero biases.
ParamSet init_params(const NetworkSpec& spec, std::uint64_t seed);

/// Checks that every trainable layer has weight and bias of the right shape.
void check_params(const NetworkSpec& spec, const ParamSet& params);

struct ForwardCache {
    // Input to each layer, batch axis leading.
    std::vector<Tensor> layer_inputs;
    bool empty() const { return layer_inputs.empty(); }
};

struct ForwardResult {
    Tensor output;
    ForwardCache cache;
};

/// Runs the stack on a [batch, input_shape...] tensor. Output is the raw
/// final-layer activation (no softmax or sigmoid).
ForwardResult forward(const NetworkSpec& spec, const ParamSet& params, const Tensor& batch);

struct Gradients {
    ParamSet params;
    Tensor input;
};

/// Back-propagates dL/d(output) through the cached forward pass.
Gradients backward(const NetworkSpec& spec, const ParamSet& params, const ForwardCache& cache,
                   const Tensor& grad_output);

/// [batch, k, h, w] -> [batch, k], each entry the mean of one activation map.
Tensor global_average_pool(const Tensor& maps);

struct OptimizerState {
    double learning_rate = 0.01;
    double momentum = 0.9;
    ParamSet velocity;
};

OptimizerState make_optimizer(const ParamSet& params, double learning_rate, double momentum);

/// velocity <- momentum * velocity + grad; param <- param - lr * velocity.
/// Gradients are checked for finiteness before anything is modified.
void sgd_step(ParamSet& params, const ParamSet& grads, OptimizerState& state);

using LossFn = std::function<double(const ParamSet&)>;

/// Central differences (loss(p + eps) - loss(p - eps)) / (2 eps) per scalar.
ParamSet finite_difference_grad(const LossFn& loss, const ParamSet& params, double epsilon);

}  // namespace nvfg
