#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "kanbench/numcore.hpp"

namespace kanbench {

using Sequence = std::vector<std::vector<double>>;

/// Gate weights act on the concatenation [h_{t-1}, x_t].
struct LstmCell {
    LstmCell(std::size_t hidden, std::size_t input)
        : hidden_size(hidden),
          input_size(input),
          W_i(hidden, hidden + input),
          W_f(hidden, hidden + input),
          W_o(hidden, hidden + input),
          W_g(hidden, hidden + input),
          b_i(hidden, 0.0),
          b_f(hidden, 0.0),
          b_o(hidden, 0.0),
          b_g(hidden, 0.0) {}

    std::size_t hidden_size;
    std::size_t input_size;
    Matrix W_i, W_f, W_o, W_g;
    std::vector<double> b_i, b_f, b_o, b_g;

    [[nodiscard]] std::size_t parameter_count() const noexcept {
        return 4 * (hidden_size * (hidden_size + input_size) + hidden_size);
    }

    bool operator==(const LstmCell&) const = default;
};

struct LstmState {
    std::vector<double> h;
    std::vector<double> c;

    static LstmState zeros(std::size_t hidden) { return {std::vector<double>(hidden, 0.0), std::vector<double>(hidden, 0.0)}; }
};

struct LstmNetwork {
    std::vector<LstmCell> cells;
    Matrix head_weights{1, 1};  // hidden x 1
    double head_bias = 0.0;
    Activation head_activation = Activation::linear;

    [[nodiscard]] std::size_t input_size() const { return cells.front().input_size; }
    [[nodiscard]] std::size_t top_hidden() const { return cells.back().hidden_size; }

    [[nodiscard]] std::size_t parameter_count() const noexcept {
        std::size_t n = head_weights.size() + 1;
        for (const auto& c : cells) n += c.parameter_count();
        return n;
    }

    void validate() const {
        if (cells.empty()) throw ShapeError("LSTM has no layers");
        for (std::size_t l = 0; l + 1 < cells.size(); ++l) {
            if (cells[l].hidden_size != cells[l + 1].input_size) {
                throw ShapeError("LSTM layer " + std::to_string(l) + " hidden_size does not feed layer " +
                                 std::to_string(l + 1));
            }
        }
        if (head_weights.rows() != top_hidden() || head_weights.cols() != 1) {
            throw ShapeError("LSTM head weights must be " + Matrix::shape_string(top_hidden(), 1));
        }
    }

    bool operator==(const LstmNetwork&) const = default;
};

struct SequenceBatch {
    std::vector<Sequence> sequences;
    std::vector<double> targets;
};

struct LstmGradients {
    std::vector<LstmCell> cells;
    Matrix head_weights{1, 1};
    double head_bias = 0.0;

    static LstmGradients zeros_like(const LstmNetwork& net) {
        LstmGradients g;
        for (const auto& c : net.cells) g.cells.emplace_back(c.hidden_size, c.input_size);
        g.head_weights = Matrix(net.head_weights.rows(), 1);
        return g;
    }

    [[nodiscard]] std::vector<double> flat() const;
};

struct LstmLossGrad {
    double loss = 0.0;
    LstmGradients grads;
};

namespace detail {

struct LstmStepCache {
    std::vector<double> z;  // [h_prev, x]
    std::vector<double> i, f, o, g;
    std::vector<double> c_prev, c, tanh_c;
};

inline void require_size(std::size_t got, std::size_t want, const char* what) {
    if (got != want) {
        throw ShapeError(std::string(what) + " length " + std::to_string(got) + " != " + std::to_string(want));
    }
}

inline void cell_forward(const LstmCell& cell, std::span<const double> x, const LstmState& state, LstmState& out,
                         LstmStepCache* cache) {
    require_size(x.size(), cell.input_size, "LSTM input");
    require_size(state.h.size(), cell.hidden_size, "LSTM hidden state");
    require_size(state.c.size(), cell.hidden_size, "LSTM cell state");
    const std::size_t H = cell.hidden_size;
    const std::size_t Z = H + cell.input_size;
    LstmStepCache local;
    LstmStepCache& k = cache ? *cache : local;
    k.z.resize(Z);
    std::copy(state.h.begin(), state.h.end(), k.z.begin());
    std::copy(x.begin(), x.end(), k.z.begin() + static_cast<std::ptrdiff_t>(H));
    k.i.resize(H);
    k.f.resize(H);
    k.o.resize(H);
    k.g.resize(H);
    k.c_prev = state.c;
    k.c.resize(H);
    k.tanh_c.resize(H);
    out.h.resize(H);
    out.c.resize(H);
    for (std::size_t u = 0; u < H; ++u) {
        double ai = cell.b_i[u], af = cell.b_f[u], ao = cell.b_o[u], ag = cell.b_g[u];
        const auto wi = cell.W_i.row(u), wf = cell.W_f.row(u), wo = cell.W_o.row(u), wg = cell.W_g.row(u);
        for (std::size_t q = 0; q < Z; ++q) {
            const double zq = k.z[q];
            ai += wi[q] * zq;
            af += wf[q] * zq;
            ao += wo[q] * zq;
            ag += wg[q] * zq;
        }
        k.i[u] = sigmoid(ai);
        k.f[u] = sigmoid(af);
        k.o[u] = sigmoid(ao);
        k.g[u] = std::tanh(ag);
        k.c[u] = k.f[u] * state.c[u] + k.i[u] * k.g[u];
        k.tanh_c[u] = std::tanh(k.c[u]);
    }
    for (std::size_t u = 0; u < H; ++u) {
        out.c[u] = k.c[u];
        out.h[u] = k.o[u] * k.tanh_c[u];
    }
}

}  // namespace detail

/// One LSTM time step:
///   i = s(W_i[h,x] + b_i), f = s(W_f[h,x] + b_f), o = s(W_o[h,x] + b_o),
///   g = tanh(W_g[h,x] + b_g), c' = f*c + i*g, h' = o*tanh(c').
inline LstmState cell_step(const LstmCell& cell, std::span<const double> x, const LstmState& state) {
    LstmState out;
    detail::cell_forward(cell, x, state, out, nullptr);
    return out;
}

inline double lstm_head(const LstmNetwork& net, std::span<const double> h_top) {
    double a = net.head_bias;
    for (std::size_t u = 0; u < h_top.size(); ++u) a += net.head_weights(u, 0) * h_top[u];
    return activate(net.head_activation, a);
}

/// Unrolls every layer from zero state and maps the final top-layer h to a scalar.
inline double lstm_forward(const LstmNetwork& net, const Sequence& sequence) {
    if (sequence.empty()) throw InputError("LSTM forward needs a nonempty sequence");
    net.validate();
    std::vector<std::vector<double>> stream = sequence;
    LstmState next;
    for (const auto& cell : net.cells) {
        LstmState state = LstmState::zeros(cell.hidden_size);
        for (auto& x : stream) {
            detail::cell_forward(cell, x, state, next, nullptr);
            std::swap(state, next);
            x = state.h;
        }
    }
    return lstm_head(net, stream.back());
}

/// Splits a row-major window of `features` columns into a sequence of rows.
inline Sequence to_sequence(std::span<const double> flat, std::size_t features) {
    if (features == 0 || flat.size() % features != 0) throw ShapeError("window length is not a multiple of feature count");
    Sequence seq(flat.size() / features);
    for (std::size_t t = 0; t < seq.size(); ++t) {
        seq[t].assign(flat.begin() + static_cast<std::ptrdiff_t>(t * features),
                      flat.begin() + static_cast<std::ptrdiff_t>((t + 1) * features));
    }
    return seq;
}

/// Mean squared error over the batch with gradients from backpropagation through time.
inline LstmLossGrad lstm_backward(const LstmNetwork& net, const SequenceBatch& batch) {
    if (batch.sequences.empty()) throw InputError("LSTM backward needs a nonempty batch");
    if (batch.sequences.size() != batch.targets.size()) throw ShapeError("LSTM batch sequences/targets length mismatch");
    const std::size_t T = batch.sequences.front().size();
    if (T == 0) throw InputError("LSTM backward needs nonempty sequences");
    for (const auto& s : batch.sequences) {
        if (s.size() != T) throw InputError("ragged LSTM batch: sequence lengths differ");
    }
    net.validate();

    LstmLossGrad result{0.0, LstmGradients::zeros_like(net)};
    const std::size_t L = net.cells.size();
    const double inv_n = 1.0 / static_cast<double>(batch.sequences.size());
    std::vector<std::vector<detail::LstmStepCache>> caches(L, std::vector<detail::LstmStepCache>(T));
    std::vector<std::vector<double>> stream;
    std::vector<std::vector<double>> dh_ext(T);
    LstmState next;

    for (std::size_t s = 0; s < batch.sequences.size(); ++s) {
        stream = batch.sequences[s];
        for (std::size_t l = 0; l < L; ++l) {
            LstmState state = LstmState::zeros(net.cells[l].hidden_size);
            for (std::size_t t = 0; t < T; ++t) {
                detail::cell_forward(net.cells[l], stream[t], state, next, &caches[l][t]);
                std::swap(state, next);
                stream[t] = state.h;
            }
        }
        const auto& h_top = stream.back();
        double pre = net.head_bias;
        for (std::size_t u = 0; u < h_top.size(); ++u) pre += net.head_weights(u, 0) * h_top[u];
        const double y = activate(net.head_activation, pre);
        const double err = y - batch.targets[s];
        result.loss += err * err * inv_n;
        const double dpre = 2.0 * err * inv_n * activate_grad(net.head_activation, pre);

        result.grads.head_bias += dpre;
        for (std::size_t u = 0; u < h_top.size(); ++u) result.grads.head_weights(u, 0) += dpre * h_top[u];

        for (auto& d : dh_ext) d.assign(net.top_hidden(), 0.0);
        for (std::size_t u = 0; u < h_top.size(); ++u) dh_ext[T - 1][u] = dpre * net.head_weights(u, 0);

        for (std::size_t l = L; l-- > 0;) {
            const LstmCell& cell = net.cells[l];
            LstmCell& g = result.grads.cells[l];
            const std::size_t H = cell.hidden_size;
            const std::size_t Z = H + cell.input_size;
            std::vector<double> dh_next(H, 0.0), dc_next(H, 0.0);
            std::vector<double> dai(H), daf(H), dao(H), dag(H), dz(Z);
            std::vector<std::vector<double>> dx(T, std::vector<double>(cell.input_size, 0.0));
            for (std::size_t t = T; t-- > 0;) {
                const auto& k = caches[l][t];
                for (std::size_t u = 0; u < H; ++u) {
                    const double dh = dh_ext[t][u] + dh_next[u];
                    const double dc = dc_next[u] + dh * k.o[u] * (1.0 - k.tanh_c[u] * k.tanh_c[u]);
                    dao[u] = dh * k.tanh_c[u] * k.o[u] * (1.0 - k.o[u]);
                    dai[u] = dc * k.g[u] * k.i[u] * (1.0 - k.i[u]);
                    daf[u] = dc * k.c_prev[u] * k.f[u] * (1.0 - k.f[u]);
                    dag[u] = dc * k.i[u] * (1.0 - k.g[u] * k.g[u]);
                    dc_next[u] = dc * k.f[u];
                }
                std::fill(dz.begin(), dz.end(), 0.0);
                for (std::size_t u = 0; u < H; ++u) {
                    g.b_i[u] += dai[u];
                    g.b_f[u] += daf[u];
                    g.b_o[u] += dao[u];
                    g.b_g[u] += dag[u];
                    auto gi = g.W_i.row(u), gf = g.W_f.row(u), go = g.W_o.row(u), gg = g.W_g.row(u);
                    const auto wi = cell.W_i.row(u), wf = cell.W_f.row(u), wo = cell.W_o.row(u), wg = cell.W_g.row(u);
                    for (std::size_t q = 0; q < Z; ++q) {
                        const double zq = k.z[q];
                        gi[q] += dai[u] * zq;
                        gf[q] += daf[u] * zq;
                        go[q] += dao[u] * zq;
                        gg[q] += dag[u] * zq;
                        dz[q] += wi[q] * dai[u] + wf[q] * daf[u] + wo[q] * dao[u] + wg[q] * dag[u];
                    }
                }
                std::copy(dz.begin(), dz.begin() + static_cast<std::ptrdiff_t>(H), dh_next.begin());
                std::copy(dz.begin() + static_cast<std::ptrdiff_t>(H), dz.end(), dx[t].begin());
            }
            if (l > 0) dh_ext = std::move(dx);
        }
        dh_ext.assign(T, {});
    }
    return result;
}

/// Glorot-uniform gate weights, zero biases except the forget-gate bias (1.0),
/// Glorot-uniform head.
inline LstmNetwork lstm_init(const std::vector<std::size_t>& layer_sizes, std::size_t input_size,
                             Activation head_activation, Rng& rng) {
    if (layer_sizes.empty()) throw InputError("LSTM needs at least one layer");
    if (input_size == 0) throw InputError("LSTM input size must be positive");
    for (std::size_t s : layer_sizes) {
        if (s == 0) throw InputError("LSTM layer sizes must be positive");
    }
    if (head_activation != Activation::linear && head_activation != Activation::tanh) {
        throw InputError("LSTM head activation must be linear or tanh");
    }
    LstmNetwork net;
    std::size_t in = input_size;
    for (std::size_t hidden : layer_sizes) {
        LstmCell cell(hidden, in);
        const double limit = std::sqrt(6.0 / static_cast<double>(hidden + hidden + in));
        for (Matrix* w : {&cell.W_i, &cell.W_f, &cell.W_o, &cell.W_g}) {
            for (double& v : w->flat()) v = rng.uniform(-limit, limit);
        }
        std::fill(cell.b_f.begin(), cell.b_f.end(), 1.0);
        net.cells.push_back(std::move(cell));
        in = hidden;
    }
    net.head_weights = Matrix(in, 1);
    const double limit = std::sqrt(6.0 / static_cast<double>(in + 1));
    for (double& v : net.head_weights.flat()) v = rng.uniform(-limit, limit);
    net.head_activation = head_activation;
    return net;
}

namespace detail {

template <class Visitor>
void visit_lstm_parameters(std::vector<LstmCell>& cells, Matrix& head, double& bias, Visitor&& visit) {
    for (auto& c : cells) {
        for (Matrix* w : {&c.W_i, &c.W_f, &c.W_o, &c.W_g}) {
            for (double& v : w->flat()) visit(v);
        }
        for (auto* b : {&c.b_i, &c.b_f, &c.b_o, &c.b_g}) {
            for (double& v : *b) visit(v);
        }
    }
    for (double& v : head.flat()) visit(v);
    visit(bias);
}

}  // namespace detail

// Flat order per cell: W_i, W_f, W_o, W_g, b_i, b_f, b_o, b_g; then head weights, head bias.
inline std::vector<double> pack_parameters(const LstmNetwork& net) {
    std::vector<double> out;
    out.reserve(net.parameter_count());
    auto copy = net;
    detail::visit_lstm_parameters(copy.cells, copy.head_weights, copy.head_bias, [&](double& v) { out.push_back(v); });
    return out;
}

inline void unpack_parameters(LstmNetwork& net, std::span<const double> flat) {
    if (flat.size() != net.parameter_count()) {
        throw ShapeError("LSTM parameter vector length " + std::to_string(flat.size()) + " != " +
                         std::to_string(net.parameter_count()));
    }
    std::size_t pos = 0;
    detail::visit_lstm_parameters(net.cells, net.head_weights, net.head_bias, [&](double& v) { v = flat[pos++]; });
}

inline std::vector<double> LstmGradients::flat() const {
    std::vector<double> out;
    auto copy = *this;
    detail::visit_lstm_parameters(copy.cells, copy.head_weights, copy.head_bias, [&](double& v) { out.push_back(v); });
    return out;
}

// Checkpoint layout:
// {"kind":"lstm","input_size":F,"layer_sizes":[...],"head_activation":"tanh",
//  "parameters":[flat array in pack_parameters order]}
inline nlohmann::json to_json(const LstmNetwork& net) {
    std::vector<std::size_t> sizes;
    for (const auto& c : net.cells) sizes.push_back(c.hidden_size);
    return {{"kind", "lstm"},
            {"input_size", net.input_size()},
            {"layer_sizes", sizes},
            {"head_activation", to_string(net.head_activation)},
            {"parameters", pack_parameters(net)}};
}

inline LstmNetwork lstm_from_json(const nlohmann::json& j) {
    try {
        if (j.at("kind").get<std::string>() != "lstm") throw InputError("checkpoint is not an LSTM");
        Rng unused(0);
        LstmNetwork net = lstm_init(j.at("layer_sizes").get<std::vector<std::size_t>>(),
                                    j.at("input_size").get<std::size_t>(),
                                    activation_from_string(j.at("head_activation").get<std::string>()), unused);
        unpack_parameters(net, j.at("parameters").get<std::vector<double>>());
        return net;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("malformed LSTM checkpoint: ") + e.what());
    }
}

}  // namespace kanbench
