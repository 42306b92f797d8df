#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

#include "kanbench/forecast.hpp"

using namespace kanbench;

namespace {

Matrix random_window(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    Rng rng(seed);
    Matrix m(rows, cols);
    for (double& v : m.flat()) v = rng.uniform();
    return m;
}

KanNetwork tiny_kan(std::size_t lookback, std::size_t features, std::uint64_t seed) {
    Rng rng(seed);
    return kan_init({lookback * features, 3, 1}, SplineSpec(4, 2), rng);
}

LstmNetwork tiny_lstm(std::size_t features, std::uint64_t seed) {
    Rng rng(seed);
    return lstm_init({5}, features, Activation::linear, rng);
}

// Independent chaining: rebuild the window from scratch at every step.
template <class Model>
std::vector<double> manual_chain(const Model& model, const Matrix& seed, std::size_t steps, const ForecastLayout& layout) {
    std::vector<std::vector<double>> rows;
    for (std::size_t r = 0; r < seed.rows(); ++r) rows.emplace_back(seed.row(r).begin(), seed.row(r).end());
    std::vector<double> out;
    for (std::size_t s = 0; s < steps; ++s) {
        std::vector<std::vector<double>> tail(rows.end() - static_cast<std::ptrdiff_t>(seed.rows()), rows.end());
        const double y = predict_window(model, Matrix::from_rows(tail));
        out.push_back(y);
        std::vector<double> next = rows.back();
        next[layout.target_col] = y;
        if (layout.mirror_col) next[*layout.mirror_col] = y;
        rows.push_back(next);
    }
    return out;
}

}  // namespace

TEST(IterativeForecast, HorizonOneEqualsSingleStep) {
    const auto w = random_window(6, 6, 1);
    const auto layout = ForecastLayout::for_mode(FeatureMode::copy_forward);
    const auto kan = tiny_kan(6, 6, 2);
    const auto lstm = tiny_lstm(6, 3);
    EXPECT_EQ(iterative_forecast(kan, w, 1, layout).predictions, std::vector<double>{kan_forward(kan, w.flat())});
    EXPECT_EQ(iterative_forecast(lstm, w, 1, layout).predictions,
              std::vector<double>{lstm_forward(lstm, to_sequence(w.flat(), 6))});
}

TEST(IterativeForecast, ZeroLstmGivesZeros) {
    auto lstm = tiny_lstm(6, 3);
    unpack_parameters(lstm, std::vector<double>(lstm.parameter_count(), 0.0));
    const auto t = iterative_forecast(lstm, random_window(6, 6, 4), 7, ForecastLayout::for_mode(FeatureMode::copy_forward));
    EXPECT_EQ(t.predictions, std::vector<double>(7, 0.0));
    EXPECT_EQ(t.model, "lstm");
}

TEST(IterativeForecast, MatchesManualChaining) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto w = random_window(5, 6, 10 + seed);
        const auto layout = ForecastLayout::for_mode(FeatureMode::copy_forward);
        const auto kan = tiny_kan(5, 6, 20 + seed);
        const auto lstm = tiny_lstm(6, 30 + seed);
        EXPECT_EQ(iterative_forecast(kan, w, 3, layout).predictions, manual_chain(kan, w, 3, layout));
        EXPECT_EQ(iterative_forecast(lstm, w, 3, layout).predictions, manual_chain(lstm, w, 3, layout));
    }
    const auto w1 = random_window(5, 1, 7);
    const auto layout1 = ForecastLayout::for_mode(FeatureMode::close_only);
    const auto kan1 = tiny_kan(5, 1, 8);
    EXPECT_EQ(iterative_forecast(kan1, w1, 3, layout1).predictions, manual_chain(kan1, w1, 3, layout1));
}

TEST(IterativeForecast, PrefixConsistency) {
    const auto w = random_window(4, 6, 5);
    const auto layout = ForecastLayout::for_mode(FeatureMode::copy_forward);
    const auto lstm = tiny_lstm(6, 6);
    const auto kan = tiny_kan(4, 6, 7);
    const auto full_l = iterative_forecast(lstm, w, 60, layout).predictions;
    const auto full_k = iterative_forecast(kan, w, 60, layout).predictions;
    for (std::size_t h : {1u, 2u, 17u, 59u, 60u}) {
        const auto l = iterative_forecast(lstm, w, h, layout).predictions;
        const auto k = iterative_forecast(kan, w, h, layout).predictions;
        EXPECT_TRUE(std::equal(l.begin(), l.end(), full_l.begin()));
        EXPECT_TRUE(std::equal(k.begin(), k.end(), full_k.begin()));
    }
}

TEST(IterativeForecast, MirrorColumnFollowsPrediction) {
    const auto layout = ForecastLayout::for_mode(FeatureMode::copy_forward);
    EXPECT_EQ(layout.target_col, 3u);
    ASSERT_TRUE(layout.mirror_col.has_value());
    EXPECT_EQ(*layout.mirror_col, 4u);
    EXPECT_FALSE(ForecastLayout::for_mode(FeatureMode::close_only).mirror_col.has_value());
}

TEST(IterativeForecast, ErrorsAndNonFinite) {
    const auto w = random_window(4, 6, 5);
    const auto layout = ForecastLayout::for_mode(FeatureMode::copy_forward);
    auto lstm = tiny_lstm(6, 6);
    EXPECT_THROW(iterative_forecast(lstm, w, 0, layout), InputError);
    EXPECT_THROW(iterative_forecast(lstm, random_window(4, 1, 1), 2, layout), ShapeError);
    lstm.head_bias = std::numeric_limits<double>::infinity();
    try {
        iterative_forecast(lstm, w, 3, layout);
        FAIL();
    } catch (const ForecastError& e) {
        EXPECT_EQ(e.step(), 1u);
    }
}

TEST(EvaluateHorizon, OriginsAndActuals) {
    const auto series = gen_synthetic(MarketRegime::preset(RegimeKind::normal, 80, 1));
    PipelineOptions opt;
    opt.lookback = 5;
    const auto p = prepare_dataset(series, opt);
    const auto layout = ForecastLayout::for_mode(opt.feature_mode);
    const auto kan = tiny_kan(5, 6, 3);
    const std::size_t first = p.test.start_rows.front();
    const auto ev = evaluate_horizon(kan, p.scaled, first, 5, 4, layout);
    ASSERT_EQ(ev.origins.size(), 80u - 5u - 4u + 1u - first);
    for (std::size_t j = 0; j < ev.origins.size(); ++j) {
        const std::size_t i = ev.origins[j];
        EXPECT_EQ(ev.actual[j], p.scaled(i + 5 + 3, 3));
        EXPECT_EQ(ev.predicted[j], iterative_forecast(kan, window_at(p.scaled, i, 5), 4, layout).predictions.back());
    }
    EXPECT_EQ(ev.first_trace.actuals.size(), 4u);
    EXPECT_THROW(evaluate_horizon(kan, p.scaled, first, 5, 80, layout), InputError);

    // One-step evaluation reproduces the test split targets.
    const auto one = evaluate_horizon(kan, p.scaled, first, 5, 1, layout);
    EXPECT_EQ(one.actual, p.test.targets);
}

TEST(TraceCsv, ColumnsAndPrices) {
    ForecastTrace t;
    t.horizon = 2;
    t.predictions = {0.5, 0.25};
    t.actuals = {1.0};
    MinMaxScaler s;
    s.min = {100.0};
    s.max = {200.0};
    std::ostringstream out;
    write_trace_csv(t, s, 0, out);
    EXPECT_EQ(out.str(), "step,predicted_scaled,predicted_price,actual_price\n1,0.5,150,200\n2,0.25,125,\n");
}
