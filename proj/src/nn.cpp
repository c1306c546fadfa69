#include "nvfg/nn.hpp"

#include <cmath>

#include "nvfg/errors.hpp"
#include "nvfg/rng.hpp"

namespace nvfg {

std::string to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::dense: return "dense";
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::relu: return "relu";
        case LayerKind::global_avg_pool: return "global-average-pool";
    }
    return "unknown";
}

LayerKind layer_kind_from_string(const std::string& name) {
    if (name == "dense") return LayerKind::dense;
    if (name == "conv2d") return LayerKind::conv2d;
    if (name == "relu") return LayerKind::relu;
    if (name == "global-average-pool" || name == "gap") return LayerKind::global_avg_pool;
    throw ConfigError("unknown layer kind '" + name + "'");
}

namespace {

std::string layer_label(std::size_t i, const LayerSpec& layer) {
    return "layer " + std::to_string(i) + " (" + to_string(layer.kind) + ")";
}

Shape next_shape(std::size_t i, const LayerSpec& layer, const Shape& in) {
    switch (layer.kind) {
        case LayerKind::dense:
            if (in.size() != 1 || in[0] != layer.in) {
                throw ConfigError(layer_label(i, layer) + " expects [" + std::to_string(layer.in) +
                                  "] but receives " + shape_to_string(in));
            }
            if (layer.out == 0) throw ConfigError(layer_label(i, layer) + " has zero outputs");
            return {layer.out};
        case LayerKind::conv2d: {
            if (in.size() != 3 || in[0] != layer.in) {
                throw ConfigError(layer_label(i, layer) + " expects [" + std::to_string(layer.in) +
                                  ",h,w] but receives " + shape_to_string(in));
            }
            if (layer.out == 0 || layer.kernel == 0 || layer.stride == 0) {
                throw ConfigError(layer_label(i, layer) + " needs filters, kernel and stride >= 1");
            }
            if (layer.kernel > in[1] || layer.kernel > in[2]) {
                throw ConfigError(layer_label(i, layer) + " kernel larger than input " +
                                  shape_to_string(in));
            }
            return {layer.out, (in[1] - layer.kernel) / layer.stride + 1,
                    (in[2] - layer.kernel) / layer.stride + 1};
        }
        case LayerKind::relu:
            return in;
        case LayerKind::global_avg_pool:
            if (in.size() != 3) {
                throw ConfigError(layer_label(i, layer) + " expects [k,h,w] but receives " +
                                  shape_to_string(in));
            }
            return {in[0]};
    }
    throw ConfigError("unknown layer kind");
}

}  // namespace

std::vector<Shape> NetworkSpec::layer_shapes() const {
    if (input_shape.empty() || shape_numel(input_shape) == 0) {
        throw ConfigError("network input shape must be non-empty");
    }
    if (layers.empty()) throw ConfigError("network has no layers");

    std::vector<Shape> shapes{input_shape};
    std::size_t pools = 0;
    std::optional<std::size_t> pool_at;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].kind == LayerKind::global_avg_pool) {
            ++pools;
            pool_at = i;
        }
        shapes.push_back(next_shape(i, layers[i], shapes.back()));
    }
    if (pools > 1) throw ConfigError("at most one global-average-pool layer is allowed");
    if (pool_at) {
        for (std::size_t i = 0; i < *pool_at; ++i) {
            if (layers[i].kind == LayerKind::dense) {
                throw ConfigError("dense layer " + std::to_string(i) +
                                  " precedes the global-average-pool layer");
            }
        }
    }
    return shapes;
}

void NetworkSpec::validate() const { (void)layer_shapes(); }

Shape NetworkSpec::output_shape() const { return layer_shapes().back(); }

bool NetworkSpec::has_global_pool() const {
    for (const auto& layer : layers) {
        if (layer.kind == LayerKind::global_avg_pool) return true;
    }
    return false;
}

std::string param_name(std::size_t layer, const std::string& role) {
    return "L" + std::to_string(layer) + "." + role;
}

const Tensor& ParamSet::at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw UsageError("missing parameter '" + name + "'");
    return it->second;
}

std::size_t ParamSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : tensors_) n += t.numel();
    return n;
}

ParamSet ParamSet::zeros_like() const {
    ParamSet out;
    for (const auto& [name, t] : tensors_) out[name] = Tensor(t.shape());
    return out;
}

void ParamSet::require_same_layout(const ParamSet& other) const {
    if (tensors_.size() != other.tensors_.size()) {
        throw DimensionError("parameter sets differ in size");
    }
    for (const auto& [name, t] : tensors_) {
        auto it = other.tensors_.find(name);
        if (it == other.tensors_.end()) throw DimensionError("parameter '" + name + "' missing");
        if (it->second.shape() != t.shape()) {
            throw DimensionError("parameter '" + name + "' shape " + shape_to_string(t.shape()) +
                                 " vs " + shape_to_string(it->second.shape()));
        }
    }
}

ParamSet ParamSet::plus(const ParamSet& other) const {
    require_same_layout(other);
    ParamSet out = *this;
    for (auto& [name, t] : out.tensors_) {
        const Tensor& rhs = other.at(name);
        for (std::size_t i = 0; i < t.numel(); ++i) t[i] += rhs[i];
    }
    return out;
}

namespace {

Shape weight_shape(const LayerSpec& layer) {
    if (layer.kind == LayerKind::dense) return {layer.out, layer.in};
    return {layer.out, layer.in, layer.kernel, layer.kernel};
}

std::size_t fan_in(const LayerSpec& layer) {
    return layer.kind == LayerKind::dense ? layer.in : layer.in * layer.kernel * layer.kernel;
}

}  // namespace

ParamSet init_params(const NetworkSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    ParamSet params;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& layer = spec.layers[i];
        if (!layer.trainable()) continue;
        const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in(layer)));
        Tensor w(weight_shape(layer));
        for (double& v : w.data()) v = rng.uniform(-scale, scale);
        params[param_name(i, "weight")] = std::move(w);
        params[param_name(i, "bias")] = Tensor(Shape{layer.out});
    }
    return params;
}

void check_params(const NetworkSpec& spec, const ParamSet& params) {
    std::size_t expected = 0;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& layer = spec.layers[i];
        if (!layer.trainable()) continue;
        expected += 2;
        const std::string w = param_name(i, "weight");
        const std::string b = param_name(i, "bias");
        if (!params.contains(w) || !params.contains(b)) {
            throw ConfigError("layer " + std::to_string(i) + " lacks weight or bias parameters");
        }
        if (params.at(w).shape() != weight_shape(layer) ||
            params.at(b).shape() != Shape{layer.out}) {
            throw DimensionError("parameters of layer " + std::to_string(i) +
                                 " do not match its spec");
        }
    }
    if (params.size() != expected) throw ConfigError("parameter set has unexpected entries");
}

// ---------------------------------------------------------------------------
// Layer kernels. Batch axis leads every tensor.

namespace {

Tensor dense_forward(const LayerSpec& layer, const Tensor& w, const Tensor& b, const Tensor& x) {
    const std::size_t batch = x.dim(0);
    Tensor y(Shape{batch, layer.out});
    const double* wp = w.data().data();
    for (std::size_t n = 0; n < batch; ++n) {
        const double* xp = x.data().data() + n * layer.in;
        for (std::size_t o = 0; o < layer.out; ++o) {
            const double* wrow = wp + o * layer.in;
            double acc = 0.0;
            for (std::size_t j = 0; j < layer.in; ++j) acc += wrow[j] * xp[j];
            y[n * layer.out + o] = acc + b[o];
        }
    }
    return y;
}

void dense_backward(const LayerSpec& layer, const Tensor& w, const Tensor& x, const Tensor& gy,
                    Tensor& gw, Tensor& gb, Tensor& gx) {
    const std::size_t batch = x.dim(0);
    gx = Tensor(x.shape());
    for (std::size_t n = 0; n < batch; ++n) {
        const double* xp = x.data().data() + n * layer.in;
        double* gxp = gx.data().data() + n * layer.in;
        for (std::size_t o = 0; o < layer.out; ++o) {
            const double g = gy[n * layer.out + o];
            if (g == 0.0) continue;
            gb[o] += g;
            const double* wrow = w.data().data() + o * layer.in;
            double* gwrow = gw.data().data() + o * layer.in;
            for (std::size_t j = 0; j < layer.in; ++j) {
                gwrow[j] += g * xp[j];
                gxp[j] += g * wrow[j];
            }
        }
    }
}

struct ConvGeometry {
    std::size_t batch, in_c, in_h, in_w, out_c, out_h, out_w, k, s;
};

ConvGeometry conv_geometry(const LayerSpec& layer, const Tensor& x) {
    ConvGeometry g{};
    g.batch = x.dim(0);
    g.in_c = x.dim(1);
    g.in_h = x.dim(2);
    g.in_w = x.dim(3);
    g.out_c = layer.out;
    g.k = layer.kernel;
    g.s = layer.stride;
    g.out_h = (g.in_h - g.k) / g.s + 1;
    g.out_w = (g.in_w - g.k) / g.s + 1;
    return g;
}

Tensor conv_forward(const LayerSpec& layer, const Tensor& w, const Tensor& b, const Tensor& x) {
    const ConvGeometry g = conv_geometry(layer, x);
    Tensor y(Shape{g.batch, g.out_c, g.out_h, g.out_w});
    const double* xp = x.data().data();
    const double* wp = w.data().data();
    double* yp = y.data().data();
    for (std::size_t n = 0; n < g.batch; ++n) {
        for (std::size_t o = 0; o < g.out_c; ++o) {
            for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < g.in_c; ++c) {
                        const double* xc = xp + ((n * g.in_c + c) * g.in_h) * g.in_w;
                        const double* wc = wp + ((o * g.in_c + c) * g.k) * g.k;
                        for (std::size_t ky = 0; ky < g.k; ++ky) {
                            const double* xrow = xc + (oy * g.s + ky) * g.in_w + ox * g.s;
                            const double* wrow = wc + ky * g.k;
                            for (std::size_t kx = 0; kx < g.k; ++kx) acc += wrow[kx] * xrow[kx];
                        }
                    }
                    yp[((n * g.out_c + o) * g.out_h + oy) * g.out_w + ox] = acc + b[o];
                }
            }
        }
    }
    return y;
}

void conv_backward(const LayerSpec& layer, const Tensor& w, const Tensor& x, const Tensor& gy,
                   Tensor& gw, Tensor& gb, Tensor& gx) {
    const ConvGeometry g = conv_geometry(layer, x);
    gx = Tensor(x.shape());
    const double* xp = x.data().data();
    const double* wp = w.data().data();
    const double* gyp = gy.data().data();
    double* gwp = gw.data().data();
    double* gxp = gx.data().data();
    for (std::size_t n = 0; n < g.batch; ++n) {
        for (std::size_t o = 0; o < g.out_c; ++o) {
            for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                    const double grad = gyp[((n * g.out_c + o) * g.out_h + oy) * g.out_w + ox];
                    if (grad == 0.0) continue;
                    gb[o] += grad;
                    for (std::size_t c = 0; c < g.in_c; ++c) {
                        const std::size_t xbase = ((n * g.in_c + c) * g.in_h) * g.in_w;
                        const std::size_t wbase = ((o * g.in_c + c) * g.k) * g.k;
                        for (std::size_t ky = 0; ky < g.k; ++ky) {
                            const std::size_t xrow = xbase + (oy * g.s + ky) * g.in_w + ox * g.s;
                            const std::size_t wrow = wbase + ky * g.k;
                            for (std::size_t kx = 0; kx < g.k; ++kx) {
                                gwp[wrow + kx] += grad * xp[xrow + kx];
                                gxp[xrow + kx] += grad * wp[wrow + kx];
                            }
                        }
                    }
                }
            }
        }
    }
}

Tensor relu_forward(const Tensor& x) {
    Tensor y = x;
    for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
    return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& gy) {
    Tensor gx(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) gx[i] = x[i] > 0.0 ? gy[i] : 0.0;
    return gx;
}

Tensor gap_backward(const Tensor& x, const Tensor& gy) {
    const std::size_t batch = x.dim(0), k = x.dim(1), area = x.dim(2) * x.dim(3);
    Tensor gx(x.shape());
    const double inv = 1.0 / static_cast<double>(area);
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t j = 0; j < k; ++j) {
            const double g = gy[n * k + j] * inv;
            double* dst = gx.data().data() + (n * k + j) * area;
            for (std::size_t a = 0; a < area; ++a) dst[a] = g;
        }
    }
    return gx;
}

}  // namespace

Tensor global_average_pool(const Tensor& maps) {
    if (maps.rank() != 4) {
        throw DimensionError("global_average_pool expects [batch,k,h,w], got " +
                             shape_to_string(maps.shape()));
    }
    const std::size_t batch = maps.dim(0), k = maps.dim(1), area = maps.dim(2) * maps.dim(3);
    if (area == 0) throw DimensionError("global_average_pool over empty maps");
    Tensor out(Shape{batch, k});
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t j = 0; j < k; ++j) {
            const double* src = maps.data().data() + (n * k + j) * area;
            double sum = 0.0;
            for (std::size_t a = 0; a < area; ++a) sum += src[a];
            out[n * k + j] = sum / static_cast<double>(area);
        }
    }
    return out;
}

ForwardResult forward(const NetworkSpec& spec, const ParamSet& params, const Tensor& batch) {
    const std::vector<Shape> shapes = spec.layer_shapes();
    Shape expected{batch.rank() > 0 ? batch.dim(0) : 0};
    expected.insert(expected.end(), spec.input_shape.begin(), spec.input_shape.end());
    if (batch.rank() == 0 || batch.shape() != expected) {
        throw DimensionError("batch shape " + shape_to_string(batch.shape()) +
                             " does not match network input [batch]+" +
                             shape_to_string(spec.input_shape));
    }

    ForwardResult result;
    result.cache.layer_inputs.reserve(spec.layers.size());
    Tensor x = batch;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& layer = spec.layers[i];
        result.cache.layer_inputs.push_back(x);
        switch (layer.kind) {
            case LayerKind::dense:
                x = dense_forward(layer, params.at(param_name(i, "weight")),
                                  params.at(param_name(i, "bias")), x);
                break;
            case LayerKind::conv2d:
                x = conv_forward(layer, params.at(param_name(i, "weight")),
                                 params.at(param_name(i, "bias")), x);
                break;
            case LayerKind::relu:
                x = relu_forward(x);
                break;
            case LayerKind::global_avg_pool:
                x = global_average_pool(x);
                break;
        }
    }
    result.output = std::move(x);
    return result;
}

Gradients backward(const NetworkSpec& spec, const ParamSet& params, const ForwardCache& cache,
                   const Tensor& grad_output) {
    if (cache.empty()) throw UsageError("backward called without a forward cache");
    if (cache.layer_inputs.size() != spec.layers.size()) {
        throw UsageError("forward cache does not belong to this network");
    }
    const std::size_t batch = cache.layer_inputs.front().dim(0);
    Shape out_shape{batch};
    const Shape per_sample = spec.output_shape();
    out_shape.insert(out_shape.end(), per_sample.begin(), per_sample.end());
    if (grad_output.shape() != out_shape) {
        throw DimensionError("output gradient shape " + shape_to_string(grad_output.shape()) +
                             " vs network output " + shape_to_string(out_shape));
    }

    Gradients grads;
    grads.params = params.zeros_like();
    Tensor g = grad_output;
    for (std::size_t step = spec.layers.size(); step-- > 0;) {
        const LayerSpec& layer = spec.layers[step];
        const Tensor& x = cache.layer_inputs[step];
        Tensor gx;
        switch (layer.kind) {
            case LayerKind::dense:
                dense_backward(layer, params.at(param_name(step, "weight")), x, g,
                               grads.params[param_name(step, "weight")],
                               grads.params[param_name(step, "bias")], gx);
                break;
            case LayerKind::conv2d:
                conv_backward(layer, params.at(param_name(step, "weight")), x, g,
                              grads.params[param_name(step, "weight")],
                              grads.params[param_name(step, "bias")], gx);
                break;
            case LayerKind::relu:
                gx = relu_backward(x, g);
                break;
            case LayerKind::global_avg_pool:
                gx = gap_backward(x, g);
                break;
        }
        g = std::move(gx);
    }
    grads.input = std::move(g);
    return grads;
}

OptimizerState make_optimizer(const ParamSet& params, double learning_rate, double momentum) {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("learning rate must be finite and non-negative");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    return OptimizerState{learning_rate, momentum, params.zeros_like()};
}

void sgd_step(ParamSet& params, const ParamSet& grads, OptimizerState& state) {
    params.require_same_layout(grads);
    params.require_same_layout(state.velocity);
    for (const auto& [name, g] : grads) {
        if (!g.all_finite()) throw DivergenceError("non-finite gradient for parameter '" + name + "'");
    }
    for (auto& [name, p] : params) {
        const Tensor& g = grads.at(name);
        Tensor& v = state.velocity[name];
        for (std::size_t i = 0; i < p.numel(); ++i) {
            v[i] = state.momentum * v[i] + g[i];
            p[i] -= state.learning_rate * v[i];
        }
    }
}

ParamSet finite_difference_grad(const LossFn& loss, const ParamSet& params, double epsilon) {
    if (!(epsilon > 0.0)) throw ConfigError("finite-difference step must be positive");
    ParamSet probe = params;
    ParamSet grads = params.zeros_like();
    for (auto& [name, tensor] : probe) {
        Tensor& out = grads[name];
        for (std::size_t i = 0; i < tensor.numel(); ++i) {
            const double original = tensor[i];
            tensor[i] = original + epsilon;
            const double up = loss(probe);
            tensor[i] = original - epsilon;
            const double down = loss(probe);
            tensor[i] = original;
            out[i] = (up - down) / (2.0 * epsilon);
        }
    }
    return grads;
}

}  // namespace nvfg
