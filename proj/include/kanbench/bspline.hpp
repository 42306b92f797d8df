#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "kanbench/numcore.hpp"

namespace kanbench {

/// Uniform B-spline grid of `grid_size` interior intervals on [lo, hi],
/// extended by `degree` knots past each end. Knot j sits at lo + (j - k) h.
class SplineSpec {
  public:
    SplineSpec() : SplineSpec(5, 3) {}
    SplineSpec(int grid_size, int degree, double lo = 0.0, double hi = 1.0)
        : grid_size_(grid_size), degree_(degree), lo_(lo), hi_(hi) {
        if (grid_size < 1) throw InputError("spline grid size must be >= 1, got " + std::to_string(grid_size));
        if (degree < 1) throw InputError("spline degree must be >= 1, got " + std::to_string(degree));
        if (!(std::isfinite(lo) && std::isfinite(hi) && lo < hi)) {
            throw InputError("spline domain must satisfy lo < hi");
        }
    }

    [[nodiscard]] int grid_size() const noexcept { return grid_size_; }
    [[nodiscard]] int degree() const noexcept { return degree_; }
    [[nodiscard]] double lo() const noexcept { return lo_; }
    [[nodiscard]] double hi() const noexcept { return hi_; }
    [[nodiscard]] double step() const noexcept { return (hi_ - lo_) / grid_size_; }
    [[nodiscard]] std::size_t basis_count() const noexcept { return static_cast<std::size_t>(grid_size_ + degree_); }
    [[nodiscard]] std::size_t knot_count() const noexcept { return static_cast<std::size_t>(grid_size_ + 2 * degree_ + 1); }

    [[nodiscard]] double knot(std::ptrdiff_t j) const noexcept { return lo_ + static_cast<double>(j - degree_) * step(); }

    [[nodiscard]] std::vector<double> knots() const {
        std::vector<double> t(knot_count());
        for (std::size_t j = 0; j < t.size(); ++j) t[j] = knot(static_cast<std::ptrdiff_t>(j));
        return t;
    }

    [[nodiscard]] double clamp(double x) const noexcept { return std::clamp(x, lo_, hi_); }

    /// Knot interval [t_s, t_{s+1}) containing the clamped x, s in [k, G + k - 1].
    /// The right boundary belongs to the last interior interval.
    [[nodiscard]] std::size_t span(double x) const noexcept {
        const double u = (clamp(x) - lo_) / step();
        auto cell = static_cast<std::ptrdiff_t>(std::floor(u));
        cell = std::clamp<std::ptrdiff_t>(cell, 0, grid_size_ - 1);
        return static_cast<std::size_t>(cell + degree_);
    }

    bool operator==(const SplineSpec&) const = default;

  private:
    int grid_size_;
    int degree_;
    double lo_;
    double hi_;
};

namespace detail {

inline void require_finite(double x) {
    if (!std::isfinite(x)) throw InputError("spline input must be finite");
}

// Nonzero basis values of the given degree on knot span `s` (de Boor's
// triangular scheme). out[r] belongs to basis index s - degree + r.
inline void local_basis(const SplineSpec& spec, std::size_t s, int degree, double x, std::span<double> out) {
    out[0] = 1.0;
    double left[64];
    double right[64];
    const auto si = static_cast<std::ptrdiff_t>(s);
    for (int j = 1; j <= degree; ++j) {
        left[j] = x - spec.knot(si + 1 - j);
        right[j] = spec.knot(si + j) - x;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            const double temp = out[r] / (right[r + 1] + left[j - r]);
            out[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        out[j] = saved;
    }
}

inline void require_supported_degree(const SplineSpec& spec) {
    if (spec.degree() > 63) throw InputError("spline degree above 63 is not supported");
}

}  // namespace detail

/// Writes the k+1 possibly-nonzero basis values at x into `out` and returns
/// the basis index of out[0]. `out` must hold degree + 1 entries.
inline std::size_t local_basis_into(const SplineSpec& spec, double x, std::span<double> out) {
    detail::require_finite(x);
    detail::require_supported_degree(spec);
    const double xc = spec.clamp(x);
    const std::size_t s = spec.span(xc);
    detail::local_basis(spec, s, spec.degree(), xc, out);
    return s - static_cast<std::size_t>(spec.degree());
}

/// Derivatives of the k+1 local basis functions. Zero outside [lo, hi],
/// where the clamped input no longer depends on x. At hi the left-hand
/// derivative is returned.
inline std::size_t local_basis_grad_into(const SplineSpec& spec, double x, std::span<double> out) {
    detail::require_finite(x);
    detail::require_supported_degree(spec);
    const int k = spec.degree();
    const double xc = spec.clamp(x);
    const std::size_t s = spec.span(xc);
    const std::size_t first = s - static_cast<std::size_t>(k);
    std::fill(out.begin(), out.begin() + k + 1, 0.0);
    if (x < spec.lo() || x > spec.hi()) return first;

    // Degree-reduction identity on a uniform grid:
    //   B'_{j,k} = (B_{j,k-1} - B_{j+1,k-1}) / h
    // lower[r] holds B_{s-k+1+r, k-1}.
    double lower[64];
    detail::local_basis(spec, s, k - 1, xc, std::span<double>(lower, static_cast<std::size_t>(k)));
    const double inv_h = 1.0 / spec.step();
    for (int r = 0; r <= k; ++r) {
        const double a = r >= 1 ? lower[r - 1] : 0.0;
        const double b = r < k ? lower[r] : 0.0;
        out[static_cast<std::size_t>(r)] = (a - b) * inv_h;
    }
    return first;
}

/// The k+1 possibly-nonzero basis values at x, starting at basis index `first`.
struct LocalBasis {
    std::size_t first = 0;
    std::vector<double> values;
};

inline LocalBasis local_basis_eval(const SplineSpec& spec, double x) {
    LocalBasis lb;
    lb.values.assign(static_cast<std::size_t>(spec.degree()) + 1, 0.0);
    lb.first = local_basis_into(spec, x, lb.values);
    return lb;
}

inline LocalBasis local_basis_grad(const SplineSpec& spec, double x) {
    LocalBasis lb;
    lb.values.assign(static_cast<std::size_t>(spec.degree()) + 1, 0.0);
    lb.first = local_basis_grad_into(spec, x, lb.values);
    return lb;
}

inline std::vector<double> basis_eval(const SplineSpec& spec, double x) {
    const LocalBasis lb = local_basis_eval(spec, x);
    std::vector<double> out(spec.basis_count(), 0.0);
    std::copy(lb.values.begin(), lb.values.end(), out.begin() + static_cast<std::ptrdiff_t>(lb.first));
    return out;
}

inline std::vector<double> basis_grad(const SplineSpec& spec, double x) {
    const LocalBasis lb = local_basis_grad(spec, x);
    std::vector<double> out(spec.basis_count(), 0.0);
    std::copy(lb.values.begin(), lb.values.end(), out.begin() + static_cast<std::ptrdiff_t>(lb.first));
    return out;
}

/// A univariate spline: coefficients against the basis of `spec`.
class SplineFunction {
  public:
    explicit SplineFunction(SplineSpec spec) : spec_(spec), coefficients_(spec.basis_count(), 0.0) {}
    SplineFunction(SplineSpec spec, std::vector<double> coefficients)
        : spec_(spec), coefficients_(std::move(coefficients)) {
        if (coefficients_.size() != spec_.basis_count()) {
            throw ShapeError("spline expects " + std::to_string(spec_.basis_count()) + " coefficients, got " +
                             std::to_string(coefficients_.size()));
        }
    }

    [[nodiscard]] const SplineSpec& spec() const noexcept { return spec_; }
    [[nodiscard]] std::span<const double> coefficients() const noexcept { return coefficients_; }
    [[nodiscard]] std::span<double> coefficients() noexcept { return coefficients_; }

    double operator()(double x) const {
        const LocalBasis lb = local_basis_eval(spec_, x);
        double acc = 0.0;
        for (std::size_t r = 0; r < lb.values.size(); ++r) acc += coefficients_[lb.first + r] * lb.values[r];
        return acc;
    }

    /// d/dx of the (clamped) spline.
    [[nodiscard]] double derivative(double x) const {
        const LocalBasis lb = local_basis_grad(spec_, x);
        double acc = 0.0;
        for (std::size_t r = 0; r < lb.values.size(); ++r) acc += coefficients_[lb.first + r] * lb.values[r];
        return acc;
    }

    bool operator==(const SplineFunction&) const = default;

  private:
    SplineSpec spec_;
    std::vector<double> coefficients_;
};

inline double spline_eval(const SplineFunction& f, double x) { return f(x); }

}  // namespace kanbench
