#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "kanbench/bspline.hpp"

using namespace kanbench;

namespace {

// Textbook recursive Cox-de Boor on the explicit knot vector; independent of
// the triangular scheme used by the library.
double naive_basis(const std::vector<double>& t, std::size_t j, int k, double x) {
    if (k == 0) return (t[j] <= x && x < t[j + 1]) ? 1.0 : 0.0;
    double left = 0.0, right = 0.0;
    const double d1 = t[j + k] - t[j];
    const double d2 = t[j + k + 1] - t[j + 1];
    if (d1 != 0.0) left = (x - t[j]) / d1 * naive_basis(t, j, k - 1, x);
    if (d2 != 0.0) right = (t[j + k + 1] - x) / d2 * naive_basis(t, j + 1, k - 1, x);
    return left + right;
}

// Solves the normal equations (A'A) c = A'y by Cholesky.
std::vector<double> least_squares(const std::vector<std::vector<double>>& rows, const std::vector<double>& y) {
    const std::size_t n = rows.front().size();
    std::vector<double> m(n * n, 0.0), rhs(n, 0.0);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t i = 0; i < n; ++i) {
            rhs[i] += rows[r][i] * y[r];
            for (std::size_t j = 0; j < n; ++j) m[i * n + j] += rows[r][i] * rows[r][j];
        }
    }
    std::vector<double> l(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = m[i * n + j];
            for (std::size_t q = 0; q < j; ++q) s -= l[i * n + q] * l[j * n + q];
            l[i * n + j] = (i == j) ? std::sqrt(s) : s / l[j * n + j];
        }
    }
    std::vector<double> z(n), c(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = rhs[i];
        for (std::size_t q = 0; q < i; ++q) s -= l[i * n + q] * z[q];
        z[i] = s / l[i * n + i];
    }
    for (std::size_t i = n; i-- > 0;) {
        double s = z[i];
        for (std::size_t q = i + 1; q < n; ++q) s -= l[q * n + i] * c[q];
        c[i] = s / l[i * n + i];
    }
    return c;
}

}  // namespace

TEST(SplineSpec, KnotAndBasisCounts) {
    const SplineSpec spec(7, 3);
    EXPECT_EQ(spec.knot_count(), 7u + 2 * 3 + 1);
    EXPECT_EQ(spec.basis_count(), 10u);
    const auto t = spec.knots();
    EXPECT_DOUBLE_EQ(t[3], 0.0);
    EXPECT_DOUBLE_EQ(t[10], 1.0);
    EXPECT_NEAR(t[0], -3.0 / 7.0, 1e-15);
}

TEST(SplineSpec, RejectsInvalid) {
    EXPECT_THROW(SplineSpec(0, 2), InputError);
    EXPECT_THROW(SplineSpec(3, 0), InputError);
    EXPECT_THROW(SplineSpec(3, 2, 1.0, 1.0), InputError);
}

TEST(BasisEval, LinearHatsAtMidpoint) {
    const auto b = basis_eval(SplineSpec(1, 1), 0.5);
    ASSERT_EQ(b.size(), 2u);
    EXPECT_DOUBLE_EQ(b[0], 0.5);
    EXPECT_DOUBLE_EQ(b[1], 0.5);
}

TEST(BasisEval, MatchesNaiveRecursion) {
    Rng rng(17);
    for (int g = 1; g <= 6; ++g) {
        for (int k = 1; k <= 4; ++k) {
            const SplineSpec spec(g, k);
            const auto t = spec.knots();
            std::vector<double> xs{0.5 / g, 0.0, 0.999999};
            for (int i = 0; i < 30; ++i) xs.push_back(rng.uniform());
            for (double x : xs) {
                const auto b = basis_eval(spec, x);
                for (std::size_t j = 0; j < b.size(); ++j) {
                    EXPECT_NEAR(b[j], naive_basis(t, j, k, x), 1e-12) << "G=" << g << " k=" << k << " x=" << x;
                }
            }
        }
    }
    const SplineSpec spec(3, 2);
    const auto b = basis_eval(spec, 0.5);
    const auto t = spec.knots();
    for (std::size_t j = 0; j < b.size(); ++j) EXPECT_NEAR(b[j], naive_basis(t, j, 2, 0.5), 1e-12);
}

TEST(BasisEval, PartitionOfUnityAndLocalSupport) {
    Rng rng(23);
    for (int g = 1; g <= 10; ++g) {
        for (int k = 1; k <= 5; ++k) {
            const SplineSpec spec(g, k, -1.0, 2.0);
            for (int i = 0; i < 200; ++i) {
                const double x = i == 0 ? spec.lo() : (i == 1 ? spec.hi() : rng.uniform(-1.0, 2.0));
                const auto b = basis_eval(spec, x);
                double sum = 0.0;
                int nonzero = 0;
                for (double v : b) {
                    sum += v;
                    nonzero += v != 0.0;
                }
                EXPECT_LT(std::abs(sum - 1.0), 1e-12);
                EXPECT_LE(nonzero, k + 1);
            }
        }
    }
}

TEST(BasisEval, ClampsOutOfDomain) {
    const SplineSpec spec(4, 3);
    EXPECT_EQ(basis_eval(spec, -0.7), basis_eval(spec, 0.0));
    EXPECT_EQ(basis_eval(spec, 5.0), basis_eval(spec, 1.0));
}

TEST(BasisEval, NonFiniteInputIsError) {
    const SplineSpec spec(4, 3);
    EXPECT_THROW(basis_eval(spec, std::numeric_limits<double>::quiet_NaN()), InputError);
    EXPECT_THROW(basis_eval(spec, std::numeric_limits<double>::infinity()), InputError);
    EXPECT_THROW(basis_grad(spec, std::numeric_limits<double>::quiet_NaN()), InputError);
}

TEST(BasisEval, ContinuousAcrossKnotsForDegreeTwoAndUp) {
    for (int k = 2; k <= 5; ++k) {
        const SplineSpec spec(6, k);
        for (int j = 1; j < 6; ++j) {
            const double knot = static_cast<double>(j) / 6.0;
            const auto a = basis_eval(spec, knot - 1e-9);
            const auto b = basis_eval(spec, knot + 1e-9);
            for (std::size_t q = 0; q < a.size(); ++q) EXPECT_LT(std::abs(a[q] - b[q]), 1e-6);
        }
    }
}

TEST(BasisGrad, SumsToZeroInside) {
    Rng rng(4);
    for (int k = 1; k <= 5; ++k) {
        const SplineSpec spec(5, k);
        for (int i = 0; i < 50; ++i) {
            double sum = 0.0;
            for (double v : basis_grad(spec, rng.uniform())) sum += v;
            EXPECT_NEAR(sum, 0.0, 1e-10);
        }
    }
}

TEST(BasisGrad, MatchesCentralFiniteDifferences) {
    Rng rng(31);
    for (int k = 1; k <= 5; ++k) {
        const SplineSpec spec(7, k);
        int checked = 0;
        while (checked < 100) {
            const double x = rng.uniform(0.01, 0.99);
            if (k == 1) {
                const double u = x * 7.0;
                if (std::abs(u - std::round(u)) < 1e-5) continue;
            }
            const double h = 1e-6;
            const auto g = basis_grad(spec, x);
            const auto up = basis_eval(spec, x + h);
            const auto dn = basis_eval(spec, x - h);
            for (std::size_t j = 0; j < g.size(); ++j) EXPECT_NEAR(g[j], (up[j] - dn[j]) / (2 * h), 1e-5);
            ++checked;
        }
    }
}

TEST(BasisGrad, LinearHatSlopesAtPeakKnot) {
    const SplineSpec spec(4, 1);
    const double delta = spec.step();
    // Basis 2 peaks at knot t_3 = 0.5.
    const auto left = basis_grad(spec, 0.5 - 1e-9);
    const auto right = basis_grad(spec, 0.5 + 1e-9);
    EXPECT_NEAR(left[2], 1.0 / delta, 1e-12);
    EXPECT_NEAR(right[2], -1.0 / delta, 1e-12);
}

TEST(BasisGrad, ZeroOutsideDomain) {
    const SplineSpec spec(4, 3);
    for (double v : basis_grad(spec, -0.1)) EXPECT_EQ(v, 0.0);
    for (double v : basis_grad(spec, 1.1)) EXPECT_EQ(v, 0.0);
}

TEST(SplineEval, ZeroAndConstantCoefficients) {
    const SplineSpec spec(5, 3);
    const SplineFunction zero(spec);
    const SplineFunction constant(spec, std::vector<double>(spec.basis_count(), 2.5));
    Rng rng(2);
    for (int i = 0; i < 100; ++i) {
        const double x = rng.uniform();
        EXPECT_EQ(spline_eval(zero, x), 0.0);
        EXPECT_NEAR(spline_eval(constant, x), 2.5, 1e-12);
    }
}

TEST(SplineEval, LeastSquaresFitOfSine) {
    const SplineSpec spec(10, 3);
    std::vector<std::vector<double>> rows;
    std::vector<double> y;
    for (int i = 0; i < 50; ++i) {
        const double x = static_cast<double>(i) / 49.0;
        rows.push_back(basis_eval(spec, x));
        y.push_back(std::sin(std::numbers::pi * x));
    }
    const SplineFunction fit(spec, least_squares(rows, y));
    double worst = 0.0;
    for (int i = 0; i <= 1000; ++i) {
        const double x = static_cast<double>(i) / 1000.0;
        worst = std::max(worst, std::abs(spline_eval(fit, x) - std::sin(std::numbers::pi * x)));
    }
    EXPECT_LT(worst, 1e-3);
}

TEST(SplineFunction, RejectsWrongCoefficientCount) {
    EXPECT_THROW(SplineFunction(SplineSpec(3, 2), std::vector<double>(4, 0.0)), ShapeError);
}
