#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <thread>
#include <vector>

#include "kanbench/metrics.hpp"

using namespace kanbench;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal(0.0, 3.0);
    return v;
}

}  // namespace

TEST(Rmse, IdenticalIsZero) {
    const std::vector<double> a{1.0, -2.0, 3.5};
    EXPECT_EQ(rmse(a, a).rmse, 0.0);
}

TEST(Rmse, HandArithmetic) {
    const auto r = rmse(std::vector<double>{1.0, 2.0}, std::vector<double>{0.0, 0.0});
    EXPECT_EQ(r.mse, 2.5);
    EXPECT_NEAR(r.rmse, 1.5811388300841898, 1e-15);
    EXPECT_EQ(r.n, 2u);
}

TEST(Rmse, Errors) {
    EXPECT_THROW(rmse(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}), InputError);
    EXPECT_THROW(rmse(std::vector<double>{}, std::vector<double>{}), InputError);
    EXPECT_THROW(rmse(std::vector<double>{NAN}, std::vector<double>{1.0}), InputError);
}

TEST(Rmse, Properties) {
    Rng rng(42);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng.index(40);
        auto a = random_vec(rng, n);
        auto b = random_vec(rng, n);
        const double base = rmse(a, b).rmse;
        const double tol = 1e-12 * std::max(1.0, base);
        EXPECT_NEAR(rmse(b, a).rmse, base, tol);

        const double c = rng.normal(0.0, 10.0);
        auto as = a, bs = b;
        for (auto& x : as) x += c;
        for (auto& x : bs) x += c;
        EXPECT_NEAR(rmse(as, bs).rmse, base, 1e-10 * std::max(1.0, base));

        const double k = rng.normal(0.0, 4.0);
        auto ak = a, bk = b;
        for (auto& x : ak) x *= k;
        for (auto& x : bk) x *= k;
        EXPECT_NEAR(rmse(ak, bk).rmse, std::abs(k) * base, 1e-12 * std::max(1.0, std::abs(k) * base));

        std::vector<std::size_t> perm(n);
        for (std::size_t i = 0; i < n; ++i) perm[i] = i;
        for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.index(i + 1)]);
        std::vector<double> ap(n), bp(n);
        for (std::size_t i = 0; i < n; ++i) {
            ap[i] = a[perm[i]];
            bp[i] = b[perm[i]];
        }
        EXPECT_NEAR(rmse(ap, bp).rmse, base, tol);

        const auto r = rmse(a, b);
        EXPECT_LE(std::abs(r.rmse * r.rmse - r.mse), 1e-15 * r.mse + 1e-300);
    }
}

TEST(Stopwatch, NonNegativeAndMonotone) {
    Stopwatch w;
    const double a = w.seconds();
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
    const double b = w.seconds();
    EXPECT_GE(a, 0.0);
    EXPECT_GE(b, a);
    EXPECT_GE(b, 0.004);
}
