#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "kanbench/bspline.hpp"
#include "kanbench/numcore.hpp"

namespace kanbench {

/// One Kolmogorov-Arnold layer. Edge (j, i) carries
///   phi_ji(x) = base_weights(j, i) * silu(x) + spline_ji(x)
/// and output j sums its incoming edges.
struct KanLayer {
    KanLayer(std::size_t in, std::size_t out, SplineSpec s)
        : in_dim(in), out_dim(out), spec(s), edge_splines(in * out, SplineFunction(s)), base_weights(out, in) {}

    std::size_t in_dim;
    std::size_t out_dim;
    SplineSpec spec;
    std::vector<SplineFunction> edge_splines;  // row-major (out, in)
    Matrix base_weights;                       // out x in

    SplineFunction& edge(std::size_t j, std::size_t i) noexcept { return edge_splines[j * in_dim + i]; }
    [[nodiscard]] const SplineFunction& edge(std::size_t j, std::size_t i) const noexcept {
        return edge_splines[j * in_dim + i];
    }

    [[nodiscard]] std::size_t parameter_count() const noexcept {
        return in_dim * out_dim * (spec.basis_count() + 1);
    }

    bool operator==(const KanLayer&) const = default;
};

struct KanNetwork {
    std::vector<KanLayer> layers;

    [[nodiscard]] std::size_t input_dim() const { return layers.front().in_dim; }

    [[nodiscard]] std::vector<std::size_t> dims() const {
        std::vector<std::size_t> d;
        if (layers.empty()) return d;
        d.push_back(layers.front().in_dim);
        for (const auto& l : layers) d.push_back(l.out_dim);
        return d;
    }

    [[nodiscard]] std::size_t parameter_count() const noexcept {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.parameter_count();
        return n;
    }

    /// Throws ShapeError when layer dimensions do not chain to a scalar output.
    void validate() const {
        if (layers.empty()) throw ShapeError("KAN has no layers");
        for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
            if (layers[l].out_dim != layers[l + 1].in_dim) {
                throw ShapeError("KAN layer " + std::to_string(l) + " out_dim " + std::to_string(layers[l].out_dim) +
                                 " != layer " + std::to_string(l + 1) + " in_dim " +
                                 std::to_string(layers[l + 1].in_dim));
            }
        }
        if (layers.back().out_dim != 1) throw ShapeError("KAN final layer must have out_dim 1");
        for (const auto& layer : layers) {
            if (layer.edge_splines.size() != layer.in_dim * layer.out_dim) throw ShapeError("KAN edge count mismatch");
            for (const auto& e : layer.edge_splines) {
                if (!(e.spec() == layer.spec)) throw ShapeError("KAN edge spline does not share the layer spec");
                if (!all_finite(e.coefficients())) throw InputError("KAN coefficient is not finite");
            }
        }
    }

    bool operator==(const KanNetwork&) const = default;
};

/// Gradient storage congruent with a KanNetwork.
struct KanGradients {
    struct Layer {
        std::vector<double> coefficients;  // (out, in, basis) row-major
        Matrix base_weights;
    };
    std::vector<Layer> layers;

    static KanGradients zeros_like(const KanNetwork& net) {
        KanGradients g;
        for (const auto& l : net.layers) {
            g.layers.push_back({std::vector<double>(l.in_dim * l.out_dim * l.spec.basis_count(), 0.0),
                                Matrix(l.out_dim, l.in_dim)});
        }
        return g;
    }

    /// Same ordering as pack_parameters().
    [[nodiscard]] std::vector<double> flat() const {
        std::vector<double> out;
        for (const auto& l : layers) {
            out.insert(out.end(), l.coefficients.begin(), l.coefficients.end());
            out.insert(out.end(), l.base_weights.data().begin(), l.base_weights.data().end());
        }
        return out;
    }
};

struct KanBatch {
    std::vector<std::vector<double>> inputs;
    std::vector<double> targets;
};

struct KanLossGrad {
    double loss = 0.0;
    KanGradients grads;
};

namespace detail {

// Per-input basis cache for one layer evaluation.
struct KanLayerCache {
    std::vector<double> input;
    std::vector<std::size_t> first;  // per input
    std::vector<double> basis;       // in x (k+1)
    std::vector<double> silu_in;     // per input
};

inline void kan_layer_forward(const KanLayer& layer, std::span<const double> x, KanLayerCache& cache,
                              std::vector<double>& out) {
    const std::size_t width = static_cast<std::size_t>(layer.spec.degree()) + 1;
    cache.input.assign(x.begin(), x.end());
    cache.first.resize(layer.in_dim);
    cache.basis.resize(layer.in_dim * width);
    cache.silu_in.resize(layer.in_dim);
    for (std::size_t i = 0; i < layer.in_dim; ++i) {
        cache.first[i] = local_basis_into(layer.spec, x[i], std::span<double>(cache.basis.data() + i * width, width));
        cache.silu_in[i] = silu(x[i]);
    }
    out.assign(layer.out_dim, 0.0);
    for (std::size_t j = 0; j < layer.out_dim; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < layer.in_dim; ++i) {
            acc += layer.base_weights(j, i) * cache.silu_in[i];
            const auto c = layer.edge(j, i).coefficients();
            const double* b = cache.basis.data() + i * width;
            const std::size_t f = cache.first[i];
            for (std::size_t r = 0; r < width; ++r) acc += c[f + r] * b[r];
        }
        out[j] = acc;
    }
}

inline void require_input(const KanNetwork& net, std::span<const double> x) {
    if (net.layers.empty()) throw ShapeError("KAN has no layers");
    if (x.size() != net.input_dim()) {
        throw ShapeError("KAN input length " + std::to_string(x.size()) + " != in_dim " +
                         std::to_string(net.input_dim()));
    }
    if (!all_finite(x)) throw InputError("KAN input contains non-finite values");
}

}  // namespace detail

inline double kan_forward(const KanNetwork& net, std::span<const double> x) {
    detail::require_input(net, x);
    detail::KanLayerCache cache;
    std::vector<double> cur(x.begin(), x.end());
    std::vector<double> next;
    for (const auto& layer : net.layers) {
        detail::kan_layer_forward(layer, cur, cache, next);
        cur.swap(next);
    }
    return cur.front();
}

/// Mean squared error over the batch and its exact gradient with respect
/// to every spline coefficient and base weight.
inline KanLossGrad kan_backward(const KanNetwork& net, const KanBatch& batch) {
    if (batch.inputs.empty()) throw InputError("KAN backward needs a nonempty batch");
    if (batch.inputs.size() != batch.targets.size()) throw ShapeError("KAN batch inputs/targets length mismatch");

    KanLossGrad result{0.0, KanGradients::zeros_like(net)};
    const std::size_t n_layers = net.layers.size();
    std::vector<detail::KanLayerCache> caches(n_layers);
    std::vector<double> cur;
    std::vector<double> next;
    std::vector<double> delta;
    std::vector<double> delta_in;
    std::vector<double> dbasis;
    const double inv_n = 1.0 / static_cast<double>(batch.inputs.size());

    for (std::size_t s = 0; s < batch.inputs.size(); ++s) {
        detail::require_input(net, batch.inputs[s]);
        cur.assign(batch.inputs[s].begin(), batch.inputs[s].end());
        for (std::size_t l = 0; l < n_layers; ++l) {
            detail::kan_layer_forward(net.layers[l], cur, caches[l], next);
            cur.swap(next);
        }
        const double err = cur.front() - batch.targets[s];
        result.loss += err * err * inv_n;

        delta.assign(1, 2.0 * err * inv_n);
        for (std::size_t l = n_layers; l-- > 0;) {
            const KanLayer& layer = net.layers[l];
            const auto& cache = caches[l];
            auto& g = result.grads.layers[l];
            const std::size_t width = static_cast<std::size_t>(layer.spec.degree()) + 1;
            const std::size_t nb = layer.spec.basis_count();
            const bool need_input_grad = l > 0;
            if (need_input_grad) {
                delta_in.assign(layer.in_dim, 0.0);
                dbasis.resize(layer.in_dim * width);
                for (std::size_t i = 0; i < layer.in_dim; ++i) {
                    local_basis_grad_into(layer.spec, cache.input[i],
                                          std::span<double>(dbasis.data() + i * width, width));
                }
            }
            for (std::size_t j = 0; j < layer.out_dim; ++j) {
                const double dj = delta[j];
                if (dj == 0.0) continue;
                for (std::size_t i = 0; i < layer.in_dim; ++i) {
                    g.base_weights(j, i) += dj * cache.silu_in[i];
                    const std::size_t f = cache.first[i];
                    const double* b = cache.basis.data() + i * width;
                    double* gc = g.coefficients.data() + (j * layer.in_dim + i) * nb + f;
                    for (std::size_t r = 0; r < width; ++r) gc[r] += dj * b[r];
                    if (need_input_grad) {
                        const auto c = layer.edge(j, i).coefficients();
                        const double* db = dbasis.data() + i * width;
                        double d_edge = layer.base_weights(j, i) * silu_grad(cache.input[i]);
                        for (std::size_t r = 0; r < width; ++r) d_edge += c[f + r] * db[r];
                        delta_in[i] += dj * d_edge;
                    }
                }
            }
            if (need_input_grad) delta.swap(delta_in);
        }
    }
    return result;
}

/// Spline coefficients ~ N(0, 0.1), base weights ~ N(0, 1/sqrt(in_dim)).
/// `specs` holds one SplineSpec per layer.
inline KanNetwork kan_init(const std::vector<std::size_t>& dims, const std::vector<SplineSpec>& specs, Rng& rng) {
    if (dims.size() < 2) throw InputError("KAN dims need at least an input and an output size");
    for (std::size_t d : dims) {
        if (d == 0) throw InputError("KAN dims must be positive");
    }
    if (dims.back() != 1) throw InputError("KAN final dim must be 1");
    if (specs.size() != dims.size() - 1) throw InputError("KAN needs one spline spec per layer");
    KanNetwork net;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        KanLayer layer(dims[l], dims[l + 1], specs[l]);
        for (auto& e : layer.edge_splines) {
            for (double& c : e.coefficients()) c = rng.normal(0.0, 0.1);
        }
        const double sd = 1.0 / std::sqrt(static_cast<double>(dims[l]));
        for (double& w : layer.base_weights.flat()) w = rng.normal(0.0, sd);
        net.layers.push_back(std::move(layer));
    }
    return net;
}

inline KanNetwork kan_init(const std::vector<std::size_t>& dims, const SplineSpec& spec, Rng& rng) {
    return kan_init(dims, std::vector<SplineSpec>(dims.size() < 2 ? 0 : dims.size() - 1, spec), rng);
}

inline std::vector<double> pack_parameters(const KanNetwork& net) {
    std::vector<double> out;
    out.reserve(net.parameter_count());
    for (const auto& l : net.layers) {
        for (const auto& e : l.edge_splines) out.insert(out.end(), e.coefficients().begin(), e.coefficients().end());
        out.insert(out.end(), l.base_weights.data().begin(), l.base_weights.data().end());
    }
    return out;
}

inline void unpack_parameters(KanNetwork& net, std::span<const double> flat) {
    if (flat.size() != net.parameter_count()) {
        throw ShapeError("KAN parameter vector length " + std::to_string(flat.size()) + " != " +
                         std::to_string(net.parameter_count()));
    }
    std::size_t pos = 0;
    for (auto& l : net.layers) {
        for (auto& e : l.edge_splines) {
            for (double& c : e.coefficients()) c = flat[pos++];
        }
        for (double& w : l.base_weights.flat()) w = flat[pos++];
    }
}

// Checkpoint layout:
// {"kind":"kan","dims":[...],"layers":[{"grid":G,"k":k,"domain":[lo,hi],
//   "coefficients":[...],"base_weights":[...]}]}
inline nlohmann::json to_json(const KanNetwork& net) {
    nlohmann::json j;
    j["kind"] = "kan";
    j["dims"] = net.dims();
    auto layers = nlohmann::json::array();
    for (const auto& l : net.layers) {
        std::vector<double> coeffs;
        for (const auto& e : l.edge_splines) coeffs.insert(coeffs.end(), e.coefficients().begin(), e.coefficients().end());
        layers.push_back({{"grid", l.spec.grid_size()},
                          {"k", l.spec.degree()},
                          {"domain", {l.spec.lo(), l.spec.hi()}},
                          {"coefficients", coeffs},
                          {"base_weights", l.base_weights.data()}});
    }
    j["layers"] = layers;
    return j;
}

inline KanNetwork kan_from_json(const nlohmann::json& j) {
    try {
        if (j.at("kind").get<std::string>() != "kan") throw InputError("checkpoint is not a KAN");
        const auto dims = j.at("dims").get<std::vector<std::size_t>>();
        const auto& layers = j.at("layers");
        if (dims.size() < 2 || layers.size() != dims.size() - 1) throw InputError("KAN checkpoint dims/layers mismatch");
        KanNetwork net;
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const auto& lj = layers[l];
            const auto domain = lj.at("domain").get<std::vector<double>>();
            if (domain.size() != 2) throw InputError("KAN checkpoint domain must have two entries");
            SplineSpec spec(lj.at("grid").get<int>(), lj.at("k").get<int>(), domain[0], domain[1]);
            KanLayer layer(dims[l], dims[l + 1], spec);
            const auto coeffs = lj.at("coefficients").get<std::vector<double>>();
            if (coeffs.size() != layer.edge_splines.size() * spec.basis_count()) {
                throw ShapeError("KAN checkpoint coefficient count mismatch in layer " + std::to_string(l));
            }
            std::size_t pos = 0;
            for (auto& e : layer.edge_splines) {
                for (double& c : e.coefficients()) c = coeffs[pos++];
            }
            layer.base_weights = Matrix(dims[l + 1], dims[l], lj.at("base_weights").get<std::vector<double>>());
            net.layers.push_back(std::move(layer));
        }
        net.validate();
        return net;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("malformed KAN checkpoint: ") + e.what());
    }
}

}  // namespace kanbench
