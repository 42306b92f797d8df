#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>

#include "kanbench/numcore.hpp"

namespace kanbench {

struct EvalReport {
    double mse = 0.0;
    double rmse = 0.0;        // scaled units
    double rmse_price = 0.0;  // inverse-scaled units
    std::size_t n = 0;
    double wall_seconds = 0.0;
};

/// sqrt(mean((y - yhat)^2)). Requires equal, nonempty, finite inputs.
inline EvalReport rmse(std::span<const double> actual, std::span<const double> predicted) {
    if (actual.size() != predicted.size()) {
        throw InputError("rmse length mismatch: " + std::to_string(actual.size()) + " vs " +
                         std::to_string(predicted.size()));
    }
    if (actual.empty()) throw InputError("rmse of empty arrays");
    if (!all_finite(actual) || !all_finite(predicted)) throw InputError("rmse inputs must be finite");
    double acc = 0.0;
    for (std::size_t i = 0; i < actual.size(); ++i) {
        const double d = actual[i] - predicted[i];
        acc += d * d;
    }
    EvalReport r;
    r.n = actual.size();
    r.mse = acc / static_cast<double>(r.n);
    r.rmse = std::sqrt(r.mse);
    return r;
}

/// Monotonic wall-clock timer.
class Stopwatch {
  public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}
    void restart() { start_ = std::chrono::steady_clock::now(); }
    [[nodiscard]] double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

  private:
    std::chrono::steady_clock::time_point start_;
};

}  // namespace kanbench
