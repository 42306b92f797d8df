#pragma once

#include <cmath>
#include <cstddef>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "kanbench/data.hpp"
#include "kanbench/kan.hpp"
#include "kanbench/lstm.hpp"
#include "kanbench/numcore.hpp"

namespace kanbench {

/// Which columns of a window the prediction overwrites in the pseudo-row.
struct ForecastLayout {
    std::size_t target_col = 0;
    std::optional<std::size_t> mirror_col;  // adj_close follows close in copy-forward mode

    static ForecastLayout for_mode(FeatureMode mode, Feature target = Feature::close) {
        ForecastLayout layout;
        if (mode == FeatureMode::close_only) return layout;
        layout.target_col = static_cast<std::size_t>(target);
        if (target == Feature::close) layout.mirror_col = static_cast<std::size_t>(Feature::adj_close);
        if (target == Feature::adj_close) layout.mirror_col = static_cast<std::size_t>(Feature::close);
        return layout;
    }
};

struct ForecastTrace {
    std::size_t horizon = 0;
    std::vector<double> predictions;  // scaled
    std::vector<double> actuals;      // scaled; empty when unknown
    std::string model;
};

struct ForecastError : Error {
    ForecastError(const std::string& what, std::size_t step) : Error(what), step_(step) {}
    [[nodiscard]] std::size_t step() const noexcept { return step_; }

  private:
    std::size_t step_;
};

inline double predict_window(const KanNetwork& net, const Matrix& window) { return kan_forward(net, window.flat()); }

inline double predict_window(const LstmNetwork& net, const Matrix& window) {
    return lstm_forward(net, to_sequence(window.flat(), window.cols()));
}

inline std::string model_tag(const KanNetwork&) { return "kan"; }
inline std::string model_tag(const LstmNetwork&) { return "lstm"; }

/// Predicts H steps ahead by feeding each one-step prediction back in.
/// The pseudo-row copies the last row and replaces the target (and mirror)
/// column with the prediction; the window then slides by one row.
template <class Model>
ForecastTrace iterative_forecast(const Model& model, const Matrix& seed_window, std::size_t horizon,
                                 const ForecastLayout& layout) {
    if (horizon == 0) throw InputError("horizon must be >= 1");
    if (layout.target_col >= seed_window.cols() || (layout.mirror_col && *layout.mirror_col >= seed_window.cols())) {
        throw ShapeError("forecast layout does not fit window " + seed_window.shape());
    }
    ForecastTrace trace;
    trace.horizon = horizon;
    trace.model = model_tag(model);
    trace.predictions.reserve(horizon);
    Matrix window = seed_window;
    const std::size_t rows = window.rows(), cols = window.cols();
    std::vector<double> next(cols);
    for (std::size_t step = 1; step <= horizon; ++step) {
        const double y = predict_window(model, window);
        if (!std::isfinite(y)) {
            throw ForecastError("non-finite prediction at step " + std::to_string(step), step);
        }
        trace.predictions.push_back(y);
        if (step == horizon) break;
        const auto last = window.row(rows - 1);
        std::copy(last.begin(), last.end(), next.begin());
        next[layout.target_col] = y;
        if (layout.mirror_col) next[*layout.mirror_col] = y;
        auto flat = window.flat();
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(cols), flat.end(), flat.begin());
        std::copy(next.begin(), next.end(), flat.end() - static_cast<std::ptrdiff_t>(cols));
    }
    return trace;
}

inline Matrix window_at(const Matrix& scaled, std::size_t start, std::size_t lookback) {
    if (start + lookback > scaled.rows()) throw InputError("window exceeds series");
    Matrix w(lookback, scaled.cols());
    for (std::size_t r = 0; r < lookback; ++r) {
        const auto src = scaled.row(start + r);
        std::copy(src.begin(), src.end(), w.row(r).begin());
    }
    return w;
}

/// Final-step predictions of H-step forecasts from every origin in
/// [first_origin, N - L - H], paired with the actual scaled target.
struct HorizonEvaluation {
    std::vector<std::size_t> origins;
    std::vector<double> predicted;
    std::vector<double> actual;
    ForecastTrace first_trace;  // the full trace from the first origin
};

template <class Model>
HorizonEvaluation evaluate_horizon(const Model& model, const Matrix& scaled, std::size_t first_origin,
                                   std::size_t lookback, std::size_t horizon, const ForecastLayout& layout) {
    HorizonEvaluation ev;
    if (first_origin + lookback + horizon > scaled.rows()) {
        throw InputError("test segment has no origin for horizon " + std::to_string(horizon) + ": need " +
                         std::to_string(first_origin + lookback + horizon) + " rows, have " +
                         std::to_string(scaled.rows()));
    }
    for (std::size_t i = first_origin; i + lookback + horizon <= scaled.rows(); ++i) {
        auto trace = iterative_forecast(model, window_at(scaled, i, lookback), horizon, layout);
        ev.origins.push_back(i);
        ev.predicted.push_back(trace.predictions.back());
        ev.actual.push_back(scaled(i + lookback + horizon - 1, layout.target_col));
        if (i == first_origin) {
            for (std::size_t s = 0; s < horizon; ++s) trace.actuals.push_back(scaled(i + lookback + s, layout.target_col));
            ev.first_trace = std::move(trace);
        }
    }
    return ev;
}

/// Columns: step,predicted_scaled,predicted_price,actual_price (empty when unknown).
inline void write_trace_csv(const ForecastTrace& trace, const MinMaxScaler& scaler, std::size_t target_col,
                            std::ostream& out) {
    out << "step,predicted_scaled,predicted_price,actual_price\n";
    for (std::size_t s = 0; s < trace.predictions.size(); ++s) {
        out << s + 1 << ',' << detail::format_number(trace.predictions[s]) << ','
            << detail::format_number(scaler.inverse(trace.predictions[s], target_col)) << ',';
        if (s < trace.actuals.size()) out << detail::format_number(scaler.inverse(trace.actuals[s], target_col));
        out << '\n';
    }
}

inline void save_trace_csv(const ForecastTrace& trace, const MinMaxScaler& scaler, std::size_t target_col,
                           const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path + "'");
    write_trace_csv(trace, scaler, target_col, out);
    if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace kanbench
