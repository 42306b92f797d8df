#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "gradcheck.hpp"
#include "kanbench/kan.hpp"
#include "kanbench/optim.hpp"

using namespace kanbench;

namespace {

double naive_basis(const std::vector<double>& t, std::size_t j, int k, double x) {
    if (k == 0) return (t[j] <= x && x < t[j + 1]) ? 1.0 : 0.0;
    double left = 0.0, right = 0.0;
    if (t[j + k] != t[j]) left = (x - t[j]) / (t[j + k] - t[j]) * naive_basis(t, j, k - 1, x);
    if (t[j + k + 1] != t[j + 1]) right = (t[j + k + 1] - x) / (t[j + k + 1] - t[j + 1]) * naive_basis(t, j + 1, k - 1, x);
    return left + right;
}

// Loop-nest evaluation straight from the layer definition, using the
// recursive basis and an explicit clamp.
double naive_forward(const KanNetwork& net, std::vector<double> x) {
    for (const auto& layer : net.layers) {
        std::vector<double> y(layer.out_dim, 0.0);
        const auto t = layer.spec.knots();
        for (std::size_t j = 0; j < layer.out_dim; ++j) {
            for (std::size_t i = 0; i < layer.in_dim; ++i) {
                const double xi = x[i];
                double xc = std::min(std::max(xi, layer.spec.lo()), layer.spec.hi());
                if (xc == layer.spec.hi()) xc = std::nextafter(xc, -1e300);
                double spline = 0.0;
                const auto c = layer.edge(j, i).coefficients();
                for (std::size_t b = 0; b < c.size(); ++b) spline += c[b] * naive_basis(t, b, layer.spec.degree(), xc);
                y[j] += layer.base_weights(j, i) * xi / (1.0 + std::exp(-xi)) + spline;
            }
        }
        x = y;
    }
    return x.front();
}

KanBatch random_batch(std::size_t n, std::size_t dim, Rng& rng) {
    KanBatch b;
    for (std::size_t s = 0; s < n; ++s) {
        std::vector<double> x(dim);
        for (double& v : x) v = rng.uniform(0.05, 0.95);
        b.inputs.push_back(x);
        b.targets.push_back(rng.uniform());
    }
    return b;
}

}  // namespace

TEST(KanInit, ShapesAndDeterminism) {
    Rng a(7), b(7);
    const auto n1 = kan_init({6, 10, 1}, SplineSpec(3, 2), a);
    const auto n2 = kan_init({6, 10, 1}, SplineSpec(3, 2), b);
    EXPECT_EQ(n1, n2);
    ASSERT_EQ(n1.layers.size(), 2u);
    EXPECT_EQ(n1.layers[0].out_dim, 10u);
    EXPECT_EQ(n1.layers[0].in_dim, 6u);
    EXPECT_EQ(n1.layers[0].edge_splines.size(), 60u);
    EXPECT_EQ(n1.layers[1].edge_splines.size(), 10u);
    EXPECT_EQ(n1.layers[0].base_weights.rows(), 10u);
    EXPECT_EQ(n1.layers[0].base_weights.cols(), 6u);
    EXPECT_NO_THROW(n1.validate());
}

TEST(KanInit, CoefficientDistribution) {
    Rng rng(99);
    // 10000 edges of one coefficient each would need G + k = 1; use 2000 edges x 5 coefficients.
    const auto net = kan_init({2000, 1}, SplineSpec(2, 3), rng);
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (const auto& e : net.layers[0].edge_splines) {
        for (double c : e.coefficients()) {
            sum += c;
            sq += c * c;
            ++n;
        }
    }
    ASSERT_EQ(n, 10000u);
    EXPECT_LT(std::abs(sum / n), 0.01);
    EXPECT_NEAR(std::sqrt(sq / n), 0.1, 0.005);
    double wsq = 0.0;
    for (double w : net.layers[0].base_weights.flat()) wsq += w * w;
    EXPECT_NEAR(std::sqrt(wsq / 2000.0), 1.0 / std::sqrt(2000.0), 0.2 / std::sqrt(2000.0));
}

TEST(KanInit, RejectsInvalidDims) {
    Rng rng(1);
    EXPECT_THROW(kan_init({3}, SplineSpec(), rng), InputError);
    EXPECT_THROW(kan_init({3, 0, 1}, SplineSpec(), rng), InputError);
    EXPECT_THROW(kan_init({3, 2}, SplineSpec(), rng), InputError);
}

TEST(KanForward, ZeroNetworkGivesZero) {
    Rng rng(1);
    auto net = kan_init({3, 4, 1}, SplineSpec(3, 2), rng);
    unpack_parameters(net, std::vector<double>(net.parameter_count(), 0.0));
    EXPECT_EQ(kan_forward(net, std::vector<double>{0.1, 0.7, 0.3}), 0.0);
}

TEST(KanForward, ConstantSplineSingleEdge) {
    KanNetwork net;
    KanLayer layer(1, 1, SplineSpec(4, 3));
    for (double& c : layer.edge(0, 0).coefficients()) c = -1.75;
    net.layers.push_back(layer);
    for (double x : {0.0, 0.2, 0.5, 0.99, 1.0}) EXPECT_NEAR(kan_forward(net, std::vector<double>{x}), -1.75, 1e-12);
}

TEST(KanForward, MatchesNaiveLoopNest) {
    Rng rng(2024);
    const auto net = kan_init({2, 3, 1}, SplineSpec(3, 2), rng);
    for (int i = 0; i < 50; ++i) {
        std::vector<double> x{rng.uniform(-0.2, 1.2), rng.uniform(-0.2, 1.2)};
        EXPECT_NEAR(kan_forward(net, x), naive_forward(net, x), 1e-12);
    }
}

TEST(KanForward, LinearInCoefficientsWithZeroBase) {
    Rng rng(5);
    const SplineSpec spec(5, 3);
    auto a = kan_init({4, 1}, spec, rng);
    auto b = kan_init({4, 1}, spec, rng);
    for (auto* n : {&a, &b}) {
        for (double& w : n->layers[0].base_weights.flat()) w = 0.0;
    }
    auto sum = a;
    const auto pa = pack_parameters(a), pb = pack_parameters(b);
    std::vector<double> ps(pa.size());
    for (std::size_t i = 0; i < ps.size(); ++i) ps[i] = pa[i] + pb[i];
    unpack_parameters(sum, ps);
    const std::vector<double> x{0.1, 0.4, 0.8, 0.55};
    EXPECT_NEAR(kan_forward(sum, x), kan_forward(a, x) + kan_forward(b, x), 1e-10);
}

TEST(KanForward, ShapeAndInputErrors) {
    Rng rng(5);
    const auto net = kan_init({2, 1}, SplineSpec(), rng);
    EXPECT_THROW(kan_forward(net, std::vector<double>{0.1}), ShapeError);
    EXPECT_THROW(kan_forward(net, std::vector<double>{0.1, std::nan("")}), InputError);
}

TEST(KanBackward, ZeroLossAtExactTargets) {
    Rng rng(8);
    const auto net = kan_init({2, 2, 1}, SplineSpec(3, 2), rng);
    KanBatch batch = random_batch(6, 2, rng);
    for (std::size_t s = 0; s < 6; ++s) batch.targets[s] = kan_forward(net, batch.inputs[s]);
    const auto r = kan_backward(net, batch);
    EXPECT_EQ(r.loss, 0.0);
    for (double g : r.grads.flat()) EXPECT_EQ(g, 0.0);
}

TEST(KanBackward, GradientsMatchFiniteDifferences) {
    for (std::uint64_t seed : {11u, 12u, 13u, 14u, 15u}) {
        Rng rng(seed);
        // Hidden domain wide enough that hidden activations stay away from the clamp.
        auto net = kan_init({2, 2, 1}, {SplineSpec(3, 2), SplineSpec(4, 3, -3.0, 3.0)}, rng);
        const KanBatch batch = random_batch(8, 2, rng);
        const auto r = kan_backward(net, batch);
        auto scratch = net;
        const auto loss = [&](const std::vector<double>& p) {
            unpack_parameters(scratch, p);
            return kan_backward(scratch, batch).loss;
        };
        const auto bad = gradcheck::check_gradient(loss, pack_parameters(net), r.grads.flat());
        for (const auto& m : bad) ADD_FAILURE() << "seed " << seed << " param " << m.index << ": " << m.analytic << " vs " << m.numeric;
    }
}

TEST(KanBackward, DuplicatedBatchIsInvariant) {
    Rng rng(21);
    const auto net = kan_init({3, 2, 1}, SplineSpec(4, 2), rng);
    const KanBatch batch = random_batch(5, 3, rng);
    KanBatch doubled = batch;
    doubled.inputs.insert(doubled.inputs.end(), batch.inputs.begin(), batch.inputs.end());
    doubled.targets.insert(doubled.targets.end(), batch.targets.begin(), batch.targets.end());
    const auto a = kan_backward(net, batch);
    const auto b = kan_backward(net, doubled);
    EXPECT_NEAR(a.loss, b.loss, 1e-14);
    const auto ga = a.grads.flat(), gb = b.grads.flat();
    for (std::size_t i = 0; i < ga.size(); ++i) EXPECT_NEAR(ga[i], gb[i], 1e-14);
}

TEST(KanBackward, EmptyBatchIsError) {
    Rng rng(1);
    const auto net = kan_init({2, 1}, SplineSpec(), rng);
    EXPECT_THROW(kan_backward(net, KanBatch{}), InputError);
}

TEST(KanJson, RoundTripIsBitExact) {
    Rng rng(77);
    const auto net = kan_init({3, 4, 1}, {SplineSpec(3, 2), SplineSpec(5, 3, -2.0, 2.0)}, rng);
    const std::string text = to_json(net).dump();
    const auto back = kan_from_json(nlohmann::json::parse(text));
    EXPECT_EQ(back, net);
    EXPECT_EQ(to_json(back).dump(), text);
}

TEST(KanJson, RejectsMalformed) {
    EXPECT_THROW(kan_from_json(nlohmann::json::parse(R"({"kind":"lstm"})")), InputError);
    EXPECT_THROW(kan_from_json(nlohmann::json::parse(R"({"kind":"kan","dims":[2,1],"layers":[]})")), InputError);
}

TEST(KanTraining, FitsSineWithLbfgs) {
    Rng rng(1);
    auto net = kan_init({1, 5, 1}, SplineSpec(5, 3), rng);
    KanBatch data;
    for (int i = 0; i < 200; ++i) {
        const double x = static_cast<double>(i) / 199.0;
        data.inputs.push_back({x});
        data.targets.push_back(std::sin(2.0 * std::numbers::pi * x));
    }
    TrainConfig cfg;
    cfg.optimizer = OptimizerKind::lbfgs;
    cfg.max_epochs = 100;
    const auto report = train(net, data, cfg);
    EXPECT_LE(report.epochs_run, 100);
    EXPECT_LT(report.epoch_rmse.back(), 0.02);
    EXPECT_NEAR(std::sqrt(batch_mse(net, data)), report.epoch_rmse.back(), 1e-12);
}
