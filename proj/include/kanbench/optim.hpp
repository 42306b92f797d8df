#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "kanbench/kan.hpp"
#include "kanbench/lstm.hpp"
#include "kanbench/numcore.hpp"

namespace kanbench {

// ---------------------------------------------------------------- Adam

struct AdamState {
    explicit AdamState(std::size_t n, double lr_ = 1e-3, double beta1_ = 0.9, double beta2_ = 0.999,
                       double eps_ = 1e-8)
        : m(n, 0.0), v(n, 0.0), lr(lr_), beta1(beta1_), beta2(beta2_), eps(eps_) {}

    std::size_t step = 0;
    std::vector<double> m;
    std::vector<double> v;
    double lr;
    double beta1;
    double beta2;
    double eps;
};

/// Bias-corrected Adam update, in place.
inline void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads) {
    if (params.size() != state.m.size() || grads.size() != state.m.size()) {
        throw ShapeError("adam_step length mismatch: state " + std::to_string(state.m.size()) + ", params " +
                         std::to_string(params.size()) + ", grads " + std::to_string(grads.size()));
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(state.beta1, t);
    const double bc2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
        const double m_hat = state.m[i] / bc1;
        const double v_hat = state.v[i] / bc2;
        params[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
}

// ---------------------------------------------------------------- L-BFGS

/// Returns the loss at `params` and writes the gradient into `grad`.
using Objective = std::function<double(std::span<const double> params, std::span<double> grad)>;

struct LbfgsOptions {
    std::size_t memory = 10;
    double c1 = 1e-4;
    double c2 = 0.9;
    int max_ls_steps = 25;
    int max_backtracks = 50;
    double curvature_eps = 1e-10;
};

struct LbfgsState {
    struct Pair {
        std::vector<double> s;
        std::vector<double> y;
        double rho;
    };

    LbfgsOptions options;
    std::deque<Pair> memory;
    std::vector<double> prev_params;
    std::vector<double> prev_grad;
    double prev_loss = 0.0;
    bool has_prev = false;
    std::size_t evaluations = 0;
};

struct LbfgsStepResult {
    double step_length = 0.0;
    double loss = 0.0;
    double grad_norm = 0.0;
    bool stalled = false;
    bool used_fallback = false;
    std::vector<double> direction;
};

/// Two-loop recursion: returns -H g with H0 = (s'y / y'y) I from the newest pair.
inline std::vector<double> two_loop_direction(const LbfgsState& state, std::span<const double> grad) {
    std::vector<double> q(grad.begin(), grad.end());
    std::vector<double> alpha(state.memory.size());
    for (std::size_t n = state.memory.size(); n-- > 0;) {
        const auto& p = state.memory[n];
        alpha[n] = p.rho * dot(p.s, q);
        for (std::size_t i = 0; i < q.size(); ++i) q[i] -= alpha[n] * p.y[i];
    }
    if (!state.memory.empty()) {
        const auto& last = state.memory.back();
        const double gamma = dot(last.s, last.y) / dot(last.y, last.y);
        for (double& v : q) v *= gamma;
    }
    for (std::size_t n = 0; n < state.memory.size(); ++n) {
        const auto& p = state.memory[n];
        const double beta = p.rho * dot(p.y, q);
        for (std::size_t i = 0; i < q.size(); ++i) q[i] += p.s[i] * (alpha[n] - beta);
    }
    for (double& v : q) v = -v;
    return q;
}

namespace detail {

struct LinePoint {
    double alpha = 0.0;
    double phi = 0.0;
    double dphi = 0.0;
    std::vector<double> x;
    std::vector<double> g;
};

class LineFunction {
  public:
    LineFunction(const Objective& f, std::span<const double> x0, std::span<const double> d, std::size_t& evals)
        : f_(f), x0_(x0), d_(d), evals_(evals) {}

    LinePoint operator()(double alpha) {
        LinePoint p;
        p.alpha = alpha;
        p.x.resize(x0_.size());
        for (std::size_t i = 0; i < x0_.size(); ++i) p.x[i] = x0_[i] + alpha * d_[i];
        p.g.assign(x0_.size(), 0.0);
        p.phi = f_(p.x, p.g);
        p.dphi = dot(p.g, d_);
        ++evals_;
        ++count;
        return p;
    }

    int count = 0;

  private:
    const Objective& f_;
    std::span<const double> x0_;
    std::span<const double> d_;
    std::size_t& evals_;
};

// Minimizer of the cubic through (a, fa, da), (b, fb, db), safeguarded into
// the middle 80% of the bracket; bisection when the cubic is degenerate.
inline double cubic_step(const LinePoint& a, const LinePoint& b) {
    const double lo = std::min(a.alpha, b.alpha);
    const double hi = std::max(a.alpha, b.alpha);
    const double width = hi - lo;
    const double d1 = a.dphi + b.dphi - 3.0 * (a.phi - b.phi) / (a.alpha - b.alpha);
    const double disc = d1 * d1 - a.dphi * b.dphi;
    double t = 0.5 * (lo + hi);
    if (disc >= 0.0 && std::isfinite(disc)) {
        const double d2 = std::copysign(std::sqrt(disc), b.alpha - a.alpha);
        const double denom = b.dphi - a.dphi + 2.0 * d2;
        if (denom != 0.0) {
            const double cand = b.alpha - (b.alpha - a.alpha) * (b.dphi + d2 - d1) / denom;
            if (std::isfinite(cand)) t = cand;
        }
    }
    return std::clamp(t, lo + 0.1 * width, hi - 0.1 * width);
}

// Strong-Wolfe line search (bracketing + zoom). Returns true and fills `out`
// on success.
inline bool strong_wolfe(LineFunction& line, double phi0, double dphi0, double alpha0, const LbfgsOptions& opt,
                         LinePoint& out) {
    LinePoint prev;
    prev.alpha = 0.0;
    prev.phi = phi0;
    prev.dphi = dphi0;
    double alpha = alpha0;
    const auto armijo = [&](const LinePoint& p) { return p.phi <= phi0 + opt.c1 * p.alpha * dphi0; };
    const auto curvature = [&](const LinePoint& p) { return std::abs(p.dphi) <= -opt.c2 * dphi0; };

    auto zoom = [&](LinePoint lo, LinePoint hi) -> bool {
        while (line.count < opt.max_ls_steps) {
            const double a = cubic_step(lo, hi);
            LinePoint p = line(a);
            if (!std::isfinite(p.phi) || !armijo(p) || p.phi >= lo.phi) {
                hi = std::move(p);
            } else {
                if (curvature(p)) {
                    out = std::move(p);
                    return true;
                }
                if (p.dphi * (hi.alpha - lo.alpha) >= 0.0) hi = lo;
                lo = std::move(p);
            }
            if (std::abs(hi.alpha - lo.alpha) <= 1e-16 * std::max(1.0, std::abs(lo.alpha))) break;
        }
        // Out of budget: accept the best sufficient-decrease point seen.
        if (lo.alpha > 0.0 && armijo(lo) && lo.phi < phi0) {
            out = std::move(lo);
            return true;
        }
        return false;
    };

    for (int i = 0; line.count < opt.max_ls_steps; ++i) {
        LinePoint p = line(alpha);
        if (!std::isfinite(p.phi) || !armijo(p) || (i > 0 && p.phi >= prev.phi)) {
            return zoom(std::move(prev), std::move(p));
        }
        if (curvature(p)) {
            out = std::move(p);
            return true;
        }
        if (p.dphi >= 0.0) return zoom(std::move(p), std::move(prev));
        prev = std::move(p);
        alpha *= 2.0;
    }
    return false;
}

}  // namespace detail

/// One L-BFGS iteration, updating `params` in place. On line-search failure
/// falls back to steepest descent with Armijo backtracking; if that fails too
/// the result is marked stalled and `params` are left unchanged.
inline LbfgsStepResult lbfgs_step(LbfgsState& state, const Objective& loss_and_grad, std::span<double> params) {
    const std::size_t n = params.size();
    if (!state.has_prev || state.prev_params.size() != n ||
        !std::equal(params.begin(), params.end(), state.prev_params.begin())) {
        state.prev_params.assign(params.begin(), params.end());
        state.prev_grad.assign(n, 0.0);
        state.prev_loss = loss_and_grad(state.prev_params, state.prev_grad);
        ++state.evaluations;
        state.has_prev = true;
        if (state.prev_grad.size() != n) throw ShapeError("objective gradient length mismatch");
    }
    if (!std::isfinite(state.prev_loss) || !all_finite(state.prev_grad)) {
        throw InputError("L-BFGS objective returned a non-finite loss or gradient");
    }

    LbfgsStepResult result;
    result.loss = state.prev_loss;
    result.grad_norm = norm2(state.prev_grad);
    if (result.grad_norm == 0.0) {
        result.stalled = true;
        result.direction.assign(n, 0.0);
        return result;
    }

    std::vector<double> d = two_loop_direction(state, state.prev_grad);
    double dphi0 = dot(d, state.prev_grad);
    if (!(dphi0 < 0.0)) {
        state.memory.clear();
        d = two_loop_direction(state, state.prev_grad);
        dphi0 = dot(d, state.prev_grad);
    }
    result.direction = d;

    const double alpha0 = state.memory.empty() ? std::min(1.0, 1.0 / result.grad_norm) : 1.0;
    detail::LinePoint accepted;
    bool ok = false;
    {
        detail::LineFunction line(loss_and_grad, state.prev_params, d, state.evaluations);
        ok = detail::strong_wolfe(line, state.prev_loss, dphi0, alpha0, state.options, accepted);
    }
    if (!ok) {
        result.used_fallback = true;
        state.memory.clear();
        std::vector<double> sd(state.prev_grad);
        for (double& v : sd) v = -v;
        const double dphi_sd = -result.grad_norm * result.grad_norm;
        detail::LineFunction line(loss_and_grad, state.prev_params, sd, state.evaluations);
        double alpha = std::min(1.0, 1.0 / result.grad_norm);
        for (int b = 0; b < state.options.max_backtracks; ++b, alpha *= 0.5) {
            detail::LinePoint p = line(alpha);
            if (std::isfinite(p.phi) && p.phi <= state.prev_loss + state.options.c1 * alpha * dphi_sd &&
                p.phi < state.prev_loss) {
                accepted = std::move(p);
                ok = true;
                break;
            }
        }
        result.direction = sd;
        if (!ok) {
            result.stalled = true;
            return result;
        }
    }

    LbfgsState::Pair pair;
    pair.s.resize(n);
    pair.y.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        pair.s[i] = accepted.x[i] - state.prev_params[i];
        pair.y[i] = accepted.g[i] - state.prev_grad[i];
    }
    const double sy = dot(pair.s, pair.y);
    if (sy > state.options.curvature_eps) {
        pair.rho = 1.0 / sy;
        state.memory.push_back(std::move(pair));
        if (state.memory.size() > state.options.memory) state.memory.pop_front();
    }

    std::copy(accepted.x.begin(), accepted.x.end(), params.begin());
    state.prev_params = std::move(accepted.x);
    state.prev_grad = std::move(accepted.g);
    state.prev_loss = accepted.phi;
    result.step_length = accepted.alpha;
    result.loss = state.prev_loss;
    result.grad_norm = norm2(state.prev_grad);
    return result;
}

// ---------------------------------------------------------------- training

enum class OptimizerKind { adam, lbfgs };

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "lbfgs"; }

struct TrainConfig {
    OptimizerKind optimizer = OptimizerKind::adam;
    int max_epochs = 100;
    double tol = 1e-6;
    int tol_window = 10;
    std::size_t batch_size = 0;  // 0 = full batch; Adam only
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double grad_clip = 0.0;  // global-norm clip for Adam, 0 = off
    LbfgsOptions lbfgs{};
    std::uint64_t seed = 0;
};

struct TrainReport {
    std::vector<double> epoch_rmse;  // [0] is the initial train RMSE
    int epochs_run = 0;
    double wall_seconds = 0.0;
    bool stalled = false;
    bool converged = false;
    std::vector<double> final_parameters;
};

struct TrainingError : Error {
    TrainingError(const std::string& what, int epoch) : Error(what), epoch_(epoch) {}
    [[nodiscard]] int epoch() const noexcept { return epoch_; }

  private:
    int epoch_;
};

inline double batch_mse(const KanNetwork& net, const KanBatch& batch) {
    double acc = 0.0;
    for (std::size_t s = 0; s < batch.inputs.size(); ++s) {
        const double e = kan_forward(net, batch.inputs[s]) - batch.targets[s];
        acc += e * e;
    }
    return acc / static_cast<double>(batch.inputs.size());
}

inline double batch_mse(const LstmNetwork& net, const SequenceBatch& batch) {
    double acc = 0.0;
    for (std::size_t s = 0; s < batch.sequences.size(); ++s) {
        const double e = lstm_forward(net, batch.sequences[s]) - batch.targets[s];
        acc += e * e;
    }
    return acc / static_cast<double>(batch.sequences.size());
}

inline std::size_t batch_size(const KanBatch& b) noexcept { return b.inputs.size(); }
inline std::size_t batch_size(const SequenceBatch& b) noexcept { return b.sequences.size(); }

inline KanBatch subset(const KanBatch& b, std::span<const std::size_t> idx) {
    KanBatch out;
    for (std::size_t i : idx) {
        out.inputs.push_back(b.inputs[i]);
        out.targets.push_back(b.targets[i]);
    }
    return out;
}

inline SequenceBatch subset(const SequenceBatch& b, std::span<const std::size_t> idx) {
    SequenceBatch out;
    for (std::size_t i : idx) {
        out.sequences.push_back(b.sequences[i]);
        out.targets.push_back(b.targets[i]);
    }
    return out;
}

inline double loss_and_flat_grad(const KanNetwork& net, const KanBatch& batch, std::vector<double>& grad) {
    auto r = kan_backward(net, batch);
    grad = r.grads.flat();
    return r.loss;
}

inline double loss_and_flat_grad(const LstmNetwork& net, const SequenceBatch& batch, std::vector<double>& grad) {
    auto r = lstm_backward(net, batch);
    grad = r.grads.flat();
    return r.loss;
}

/// Trains `model` in place on `data` with the configured optimizer. One epoch
/// is one L-BFGS iteration or one Adam pass over the data. Stops early when
/// train RMSE improves by less than `tol` over `tol_window` epochs, or when
/// L-BFGS stalls. Throws TrainingError on a non-finite loss.
template <class Model, class Batch>
TrainReport train(Model& model, const Batch& data, const TrainConfig& config) {
    if (batch_size(data) == 0) throw InputError("training data is empty");
    if (config.max_epochs < 0) throw InputError("max_epochs must be >= 0");
    const auto started = std::chrono::steady_clock::now();
    TrainReport report;
    std::vector<double> params = pack_parameters(model);

    const auto check = [](double loss, int epoch) {
        if (!std::isfinite(loss)) {
            throw TrainingError("non-finite training loss at epoch " + std::to_string(epoch), epoch);
        }
    };
    const double initial = batch_mse(model, data);
    check(initial, 0);
    report.epoch_rmse.push_back(std::sqrt(initial));

    const auto plateaued = [&](int epoch) {
        if (config.tol_window <= 0 || epoch < config.tol_window) return false;
        const auto& r = report.epoch_rmse;
        return r[static_cast<std::size_t>(epoch - config.tol_window)] - r[static_cast<std::size_t>(epoch)] < config.tol;
    };

    if (config.optimizer == OptimizerKind::lbfgs) {
        LbfgsState state;
        state.options = config.lbfgs;
        Model scratch = model;
        Objective objective = [&](std::span<const double> p, std::span<double> g) {
            unpack_parameters(scratch, p);
            std::vector<double> flat;
            const double loss = loss_and_flat_grad(scratch, data, flat);
            std::copy(flat.begin(), flat.end(), g.begin());
            return std::isfinite(loss) ? loss : std::numeric_limits<double>::infinity();
        };
        for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
            const LbfgsStepResult step = lbfgs_step(state, objective, params);
            check(step.loss, epoch);
            if (step.stalled) {
                report.stalled = true;
                break;
            }
            report.epoch_rmse.push_back(std::sqrt(step.loss));
            report.epochs_run = epoch;
            if (plateaued(epoch)) {
                report.converged = true;
                break;
            }
        }
        unpack_parameters(model, params);
    } else {
        AdamState state(params.size(), config.lr, config.beta1, config.beta2, config.eps);
        Rng shuffle_rng(config.seed);
        const std::size_t n = batch_size(data);
        const std::size_t bs = config.batch_size == 0 ? n : std::min(config.batch_size, n);
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::vector<double> grad;
        for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
            if (bs < n) {
                for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[shuffle_rng.index(i + 1)]);
            }
            for (std::size_t start = 0; start < n; start += bs) {
                const std::size_t stop = std::min(n, start + bs);
                double loss = 0.0;
                if (bs == n) {
                    loss = loss_and_flat_grad(model, data, grad);
                } else {
                    const Batch mini = subset(data, std::span<const std::size_t>(order.data() + start, stop - start));
                    loss = loss_and_flat_grad(model, mini, grad);
                }
                check(loss, epoch);
                if (config.grad_clip > 0.0) {
                    const double gn = norm2(grad);
                    if (gn > config.grad_clip) {
                        for (double& g : grad) g *= config.grad_clip / gn;
                    }
                }
                adam_step(state, params, grad);
                unpack_parameters(model, params);
            }
            const double mse = batch_mse(model, data);
            check(mse, epoch);
            report.epoch_rmse.push_back(std::sqrt(mse));
            report.epochs_run = epoch;
            if (plateaued(epoch)) {
                report.converged = true;
                break;
            }
        }
    }

    report.final_parameters = pack_parameters(model);
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return report;
}

}  // namespace kanbench
