#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "json.hpp"
#include "kanbench/data.hpp"
#include "kanbench/forecast.hpp"
#include "kanbench/kan.hpp"
#include "kanbench/lstm.hpp"
#include "kanbench/metrics.hpp"
#include "kanbench/optim.hpp"

#ifndef KANBENCH_VERSION
#define KANBENCH_VERSION "unknown"
#endif

namespace kanbench {

using nlohmann::json;

inline std::string version() { return KANBENCH_VERSION; }

// ---------------------------------------------------------------- configuration

enum class ModelKind { kan, lstm };

inline std::string to_string(ModelKind m) { return m == ModelKind::kan ? "kan" : "lstm"; }

inline ModelKind model_kind_from_string(const std::string& s) {
    if (s == "kan") return ModelKind::kan;
    if (s == "lstm") return ModelKind::lstm;
    throw InputError("unknown model '" + s + "' (expected kan or lstm)");
}

struct LstmSettings {
    std::size_t layers = 2;
    std::size_t units = 10;
    Activation head_activation = Activation::tanh;
};

struct KanSettings {
    int grid = 3;
    int k = 2;
    std::size_t hidden_width = 0;    // 0: derive from width_divisor
    std::size_t width_divisor = 10;  // width = train samples / divisor
    std::size_t width_cap = 64;
    double hidden_lo = -3.0;
    double hidden_hi = 3.0;
};

enum class DataSource { synthetic, csv };

struct DataSettings {
    DataSource source = DataSource::synthetic;
    RegimeKind regime = RegimeKind::normal;
    std::size_t days = 1250;
    std::optional<double> mu;     // overrides the regime preset
    std::optional<double> sigma;
    std::uint64_t seed = 1;
    std::string csv_path;
    std::string label;            // regime label for csv sources
    FeatureMode feature_mode = FeatureMode::copy_forward;
    Feature target = Feature::close;
};

struct ExperimentConfig {
    std::string name = "experiment";
    ModelKind model = ModelKind::lstm;
    LstmSettings lstm;
    KanSettings kan;
    DataSettings data;
    std::size_t lookback = 20;
    std::vector<std::size_t> horizons{1};
    double train_frac = 0.8;
    TrainConfig optimizer;
    std::uint64_t seed = 0;

    [[nodiscard]] std::string regime_label() const {
        if (data.source == DataSource::synthetic) return to_string(data.regime);
        if (!data.label.empty()) return data.label;
        return std::filesystem::path(data.csv_path).stem().string();
    }

    [[nodiscard]] MarketRegime market_regime() const {
        MarketRegime r = MarketRegime::preset(data.regime, data.days, data.seed);
        if (data.mu) r.mu = *data.mu;
        if (data.sigma) r.sigma = *data.sigma;
        return r;
    }
};

/// Optimizer defaults: Adam mini-batches for LSTM, full-batch L-BFGS for KAN.
inline TrainConfig default_optimizer(ModelKind model) {
    TrainConfig t;
    if (model == ModelKind::lstm) {
        t.optimizer = OptimizerKind::adam;
        t.max_epochs = 60;
        t.lr = 5e-3;
        t.batch_size = 32;
        t.tol = 1e-5;
        t.tol_window = 10;
        t.grad_clip = 1.0;
    } else {
        t.optimizer = OptimizerKind::lbfgs;
        t.max_epochs = 60;
        t.tol = 1e-6;
        t.tol_window = 10;
    }
    return t;
}

namespace detail {

inline void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw InputError(where + " must be a JSON object");
    for (const auto& item : j.items()) {
        if (!allowed.count(item.key())) throw InputError("unknown key '" + item.key() + "' in " + where);
    }
}

template <class T>
T get_as(const json& j, const std::string& key, const std::string& where) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw InputError("invalid value for '" + key + "' in " + where);
    }
}

inline std::size_t get_count(const json& j, const std::string& key, const std::string& where) {
    const json& v = j.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
        throw InputError("'" + key + "' in " + where + " must be a non-negative integer");
    }
    return v.get<std::size_t>();
}

inline double get_real(const json& j, const std::string& key, const std::string& where) {
    const json& v = j.at(key);
    if (!v.is_number()) throw InputError("'" + key + "' in " + where + " must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw InputError("'" + key + "' in " + where + " must be finite");
    return d;
}

}  // namespace detail

inline void validate(const ExperimentConfig& c) {
    if (c.name.empty()) throw InputError("name must be nonempty");
    if (c.lookback < 1) throw InputError("lookback must be >= 1");
    if (c.horizons.empty()) throw InputError("horizons must be nonempty");
    for (std::size_t h : c.horizons) {
        if (h < 1) throw InputError("every horizon must be >= 1");
    }
    if (!(c.train_frac > 0.0 && c.train_frac < 1.0)) throw InputError("train_frac must lie in (0, 1)");
    if (c.lstm.layers < 1 || c.lstm.units < 1) throw InputError("lstm layers and units must be >= 1");
    if (c.lstm.head_activation != Activation::linear && c.lstm.head_activation != Activation::tanh) {
        throw InputError("lstm head_activation must be linear or tanh");
    }
    SplineSpec(c.kan.grid, c.kan.k, 0.0, 1.0);
    SplineSpec(c.kan.grid, c.kan.k, c.kan.hidden_lo, c.kan.hidden_hi);
    if (c.kan.width_divisor < 1 || c.kan.width_cap < 1) throw InputError("kan width_divisor and width_cap must be >= 1");
    if (c.data.source == DataSource::synthetic) {
        const std::size_t hmax = *std::max_element(c.horizons.begin(), c.horizons.end());
        c.market_regime().validate(c.lookback, hmax);
    } else if (c.data.csv_path.empty()) {
        throw InputError("data.csv is required when data.source is csv");
    }
    const auto& o = c.optimizer;
    if (o.max_epochs < 0) throw InputError("optimizer.epochs must be >= 0");
    if (o.optimizer == OptimizerKind::adam && !(o.lr > 0.0)) throw InputError("optimizer.lr must be > 0");
    if (!(o.beta1 >= 0.0 && o.beta1 < 1.0 && o.beta2 >= 0.0 && o.beta2 < 1.0)) {
        throw InputError("optimizer betas must lie in [0, 1)");
    }
    if (!(o.eps > 0.0)) throw InputError("optimizer.eps must be > 0");
    if (o.lbfgs.memory < 1) throw InputError("optimizer.memory must be >= 1");
    if (!(0.0 < o.lbfgs.c1 && o.lbfgs.c1 < o.lbfgs.c2 && o.lbfgs.c2 < 1.0)) {
        throw InputError("optimizer line search needs 0 < c1 < c2 < 1");
    }
}

/// Parses and validates a config object. Unknown keys anywhere are rejected.
inline ExperimentConfig config_from_json(const json& j) {
    using detail::get_count;
    using detail::get_real;
    detail::reject_unknown(j, {"name", "model", "lstm", "kan", "data", "lookback", "horizons", "train_frac",
                               "optimizer", "seed"},
                           "config");
    ExperimentConfig c;
    if (!j.contains("model")) throw InputError("config requires 'model'");
    c.model = model_kind_from_string(detail::get_as<std::string>(j, "model", "config"));
    c.optimizer = default_optimizer(c.model);
    if (j.contains("name")) c.name = detail::get_as<std::string>(j, "name", "config");
    if (j.contains("seed")) c.seed = get_count(j, "seed", "config");
    if (j.contains("lookback")) c.lookback = get_count(j, "lookback", "config");
    if (j.contains("train_frac")) c.train_frac = get_real(j, "train_frac", "config");
    if (j.contains("horizons")) {
        const json& h = j.at("horizons");
        if (!h.is_array()) throw InputError("'horizons' must be an array");
        c.horizons.clear();
        for (std::size_t i = 0; i < h.size(); ++i) {
            if (!h[i].is_number_integer() || h[i].get<long long>() < 1) throw InputError("horizons must be integers >= 1");
            c.horizons.push_back(h[i].get<std::size_t>());
        }
    }
    if (j.contains("lstm")) {
        const json& l = j.at("lstm");
        detail::reject_unknown(l, {"layers", "units", "head_activation"}, "lstm");
        if (l.contains("layers")) c.lstm.layers = get_count(l, "layers", "lstm");
        if (l.contains("units")) c.lstm.units = get_count(l, "units", "lstm");
        if (l.contains("head_activation")) {
            c.lstm.head_activation = activation_from_string(detail::get_as<std::string>(l, "head_activation", "lstm"));
        }
    }
    if (j.contains("kan")) {
        const json& k = j.at("kan");
        detail::reject_unknown(k, {"grid", "k", "hidden_width", "width_divisor", "width_cap", "hidden_domain"}, "kan");
        if (k.contains("grid")) c.kan.grid = static_cast<int>(get_count(k, "grid", "kan"));
        if (k.contains("k")) c.kan.k = static_cast<int>(get_count(k, "k", "kan"));
        if (k.contains("hidden_width")) c.kan.hidden_width = get_count(k, "hidden_width", "kan");
        if (k.contains("width_divisor")) c.kan.width_divisor = get_count(k, "width_divisor", "kan");
        if (k.contains("width_cap")) c.kan.width_cap = get_count(k, "width_cap", "kan");
        if (k.contains("hidden_domain")) {
            const json& d = k.at("hidden_domain");
            if (!d.is_array() || d.size() != 2 || !d[0].is_number() || !d[1].is_number()) {
                throw InputError("kan.hidden_domain must be [lo, hi]");
            }
            c.kan.hidden_lo = d[0].get<double>();
            c.kan.hidden_hi = d[1].get<double>();
        }
    }
    if (j.contains("data")) {
        const json& d = j.at("data");
        detail::reject_unknown(d, {"source", "regime", "days", "mu", "sigma", "seed", "csv", "label", "feature_mode",
                                   "target"},
                               "data");
        if (d.contains("source")) {
            const auto s = detail::get_as<std::string>(d, "source", "data");
            if (s == "synthetic") {
                c.data.source = DataSource::synthetic;
            } else if (s == "csv") {
                c.data.source = DataSource::csv;
            } else {
                throw InputError("data.source must be synthetic or csv");
            }
        }
        if (d.contains("regime")) c.data.regime = regime_from_string(detail::get_as<std::string>(d, "regime", "data"));
        if (d.contains("days")) c.data.days = get_count(d, "days", "data");
        if (d.contains("mu") && !d.at("mu").is_null()) c.data.mu = get_real(d, "mu", "data");
        if (d.contains("sigma") && !d.at("sigma").is_null()) c.data.sigma = get_real(d, "sigma", "data");
        if (d.contains("seed")) c.data.seed = get_count(d, "seed", "data");
        if (d.contains("csv")) c.data.csv_path = detail::get_as<std::string>(d, "csv", "data");
        if (d.contains("label")) c.data.label = detail::get_as<std::string>(d, "label", "data");
        if (d.contains("feature_mode")) {
            c.data.feature_mode = feature_mode_from_string(detail::get_as<std::string>(d, "feature_mode", "data"));
        }
        if (d.contains("target")) c.data.target = feature_from_string(detail::get_as<std::string>(d, "target", "data"));
    }
    if (j.contains("optimizer")) {
        const json& o = j.at("optimizer");
        detail::reject_unknown(o, {"kind", "epochs", "lr", "beta1", "beta2", "eps", "batch_size", "tol", "tol_window",
                                   "grad_clip", "memory", "c1", "c2", "max_ls_steps"},
                               "optimizer");
        auto& t = c.optimizer;
        if (o.contains("kind")) {
            const auto k = detail::get_as<std::string>(o, "kind", "optimizer");
            if (k == "adam") {
                t.optimizer = OptimizerKind::adam;
            } else if (k == "lbfgs") {
                t.optimizer = OptimizerKind::lbfgs;
            } else {
                throw InputError("optimizer.kind must be adam or lbfgs");
            }
        }
        if (o.contains("epochs")) t.max_epochs = static_cast<int>(get_count(o, "epochs", "optimizer"));
        if (o.contains("lr")) t.lr = get_real(o, "lr", "optimizer");
        if (o.contains("beta1")) t.beta1 = get_real(o, "beta1", "optimizer");
        if (o.contains("beta2")) t.beta2 = get_real(o, "beta2", "optimizer");
        if (o.contains("eps")) t.eps = get_real(o, "eps", "optimizer");
        if (o.contains("batch_size")) t.batch_size = get_count(o, "batch_size", "optimizer");
        if (o.contains("tol")) t.tol = get_real(o, "tol", "optimizer");
        if (o.contains("tol_window")) t.tol_window = static_cast<int>(get_count(o, "tol_window", "optimizer"));
        if (o.contains("grad_clip")) t.grad_clip = get_real(o, "grad_clip", "optimizer");
        if (o.contains("memory")) t.lbfgs.memory = get_count(o, "memory", "optimizer");
        if (o.contains("c1")) t.lbfgs.c1 = get_real(o, "c1", "optimizer");
        if (o.contains("c2")) t.lbfgs.c2 = get_real(o, "c2", "optimizer");
        if (o.contains("max_ls_steps")) t.lbfgs.max_ls_steps = static_cast<int>(get_count(o, "max_ls_steps", "optimizer"));
    }
    validate(c);
    return c;
}

/// Fully resolved config; config_from_json(config_to_json(c)) == c.
inline json config_to_json(const ExperimentConfig& c) {
    json data = {{"source", c.data.source == DataSource::synthetic ? "synthetic" : "csv"},
                 {"regime", to_string(c.data.regime)},
                 {"days", c.data.days},
                 {"seed", c.data.seed},
                 {"feature_mode", to_string(c.data.feature_mode)},
                 {"target", to_string(c.data.target)}};
    data["mu"] = c.data.mu ? json(*c.data.mu) : json(nullptr);
    data["sigma"] = c.data.sigma ? json(*c.data.sigma) : json(nullptr);
    if (c.data.source == DataSource::csv) {
        data["csv"] = c.data.csv_path;
        data["label"] = c.data.label;
    }
    const auto& o = c.optimizer;
    return {{"name", c.name},
            {"model", to_string(c.model)},
            {"seed", c.seed},
            {"lookback", c.lookback},
            {"horizons", c.horizons},
            {"train_frac", c.train_frac},
            {"lstm",
             {{"layers", c.lstm.layers}, {"units", c.lstm.units}, {"head_activation", to_string(c.lstm.head_activation)}}},
            {"kan",
             {{"grid", c.kan.grid},
              {"k", c.kan.k},
              {"hidden_width", c.kan.hidden_width},
              {"width_divisor", c.kan.width_divisor},
              {"width_cap", c.kan.width_cap},
              {"hidden_domain", {c.kan.hidden_lo, c.kan.hidden_hi}}}},
            {"data", data},
            {"optimizer",
             {{"kind", to_string(o.optimizer)},
              {"epochs", o.max_epochs},
              {"lr", o.lr},
              {"beta1", o.beta1},
              {"beta2", o.beta2},
              {"eps", o.eps},
              {"batch_size", o.batch_size},
              {"tol", o.tol},
              {"tol_window", o.tol_window},
              {"grad_clip", o.grad_clip},
              {"memory", o.lbfgs.memory},
              {"c1", o.lbfgs.c1},
              {"c2", o.lbfgs.c2},
              {"max_ls_steps", o.lbfgs.max_ls_steps}}}};
}

inline json read_json_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw InputError("invalid JSON in '" + path + "': " + e.what());
    }
}

inline void write_text_file(const std::string& path, const std::string& text) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(parent, ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << text;
    if (!out) throw IoError("write failed for '" + path + "'");
}

namespace detail {

// Relative csv paths are taken relative to the file that names them.
inline void resolve_csv_path(ExperimentConfig& c, const std::string& config_path) {
    if (c.data.source != DataSource::csv) return;
    const std::filesystem::path p(c.data.csv_path);
    if (p.is_relative()) c.data.csv_path = (std::filesystem::path(config_path).parent_path() / p).lexically_normal().string();
}

}  // namespace detail

inline ExperimentConfig load_config(const std::string& path) {
    ExperimentConfig c = config_from_json(read_json_file(path));
    detail::resolve_csv_path(c, path);
    return c;
}

/// A matrix file is either an array of configs or {"experiments": [...]}.
inline std::vector<ExperimentConfig> load_matrix(const std::string& path) {
    const json j = read_json_file(path);
    const json* list = &j;
    if (j.is_object()) {
        detail::reject_unknown(j, {"experiments"}, "matrix");
        if (!j.contains("experiments")) throw InputError("matrix requires 'experiments'");
        list = &j.at("experiments");
    }
    if (!list->is_array() || list->empty()) throw InputError("matrix must list at least one experiment");
    std::vector<ExperimentConfig> configs;
    for (std::size_t i = 0; i < list->size(); ++i) {
        try {
            configs.push_back(config_from_json((*list)[i]));
        } catch (const InputError& e) {
            throw InputError("experiment " + std::to_string(i) + ": " + e.what());
        }
        detail::resolve_csv_path(configs.back(), path);
    }
    return configs;
}

// ---------------------------------------------------------------- training

using Model = std::variant<KanNetwork, LstmNetwork>;

inline OhlcvSeries load_series(const ExperimentConfig& c) {
    if (c.data.source == DataSource::csv) return load_csv(c.data.csv_path);
    return gen_synthetic(c.market_regime());
}

/// One-step training data: windows with horizon 1. Longer horizons are
/// evaluated by iterating the one-step model.
inline PreparedData prepare(const ExperimentConfig& c) {
    PipelineOptions opt;
    opt.lookback = c.lookback;
    opt.horizon = 1;
    opt.train_frac = c.train_frac;
    opt.feature_mode = c.data.feature_mode;
    opt.target = c.data.target;
    return prepare_dataset(load_series(c), opt);
}

inline std::size_t kan_hidden_width(const ExperimentConfig& c, std::size_t train_samples) {
    if (c.kan.hidden_width > 0) return c.kan.hidden_width;
    return std::clamp<std::size_t>(train_samples / c.kan.width_divisor, 1, c.kan.width_cap);
}

inline Model build_model(const ExperimentConfig& c, std::size_t features, std::size_t train_samples) {
    Rng rng(c.seed);
    if (c.model == ModelKind::kan) {
        const std::size_t width = kan_hidden_width(c, train_samples);
        return kan_init({c.lookback * features, width, 1},
                        {SplineSpec(c.kan.grid, c.kan.k, 0.0, 1.0),
                         SplineSpec(c.kan.grid, c.kan.k, c.kan.hidden_lo, c.kan.hidden_hi)},
                        rng);
    }
    return lstm_init(std::vector<std::size_t>(c.lstm.layers, c.lstm.units), features, c.lstm.head_activation, rng);
}

inline std::vector<double> predict_all(const Model& model, const WindowedDataset& ds) {
    std::vector<double> out;
    out.reserve(ds.size());
    std::visit(
        [&](const auto& net) {
            using T = std::decay_t<decltype(net)>;
            for (const auto& w : ds.inputs) {
                if constexpr (std::is_same_v<T, KanNetwork>) {
                    out.push_back(kan_forward(net, w));
                } else {
                    out.push_back(lstm_forward(net, to_sequence(w, ds.features)));
                }
            }
        },
        model);
    return out;
}

struct TrainedExperiment {
    PreparedData data;
    Model model;
    TrainReport report;
};

/// Pipeline and training. TrainingError propagates.
inline TrainedExperiment train_experiment(const ExperimentConfig& c) {
    validate(c);
    TrainedExperiment t{prepare(c), LstmNetwork{}, {}};
    t.model = build_model(c, t.data.raw.cols(), t.data.train.size());
    TrainConfig tc = c.optimizer;
    tc.seed = Rng(c.seed).fork(1).next_u64();
    std::visit(
        [&](auto& net) {
            using T = std::decay_t<decltype(net)>;
            if constexpr (std::is_same_v<T, KanNetwork>) {
                t.report = train(net, to_kan_batch(t.data.train), tc);
            } else {
                t.report = train(net, to_sequence_batch(t.data.train), tc);
            }
        },
        t.model);
    return t;
}

inline json model_to_json(const Model& m) {
    return std::visit([](const auto& net) { return to_json(net); }, m);
}

inline Model model_from_json(const json& j) {
    const auto kind = j.value("kind", std::string());
    if (kind == "kan") return kan_from_json(j);
    if (kind == "lstm") return lstm_from_json(j);
    throw InputError("checkpoint model kind must be kan or lstm");
}

inline ForecastTrace forecast_from(const Model& m, const Matrix& seed, std::size_t horizon, const ForecastLayout& layout) {
    return std::visit([&](const auto& net) { return iterative_forecast(net, seed, horizon, layout); }, m);
}

inline HorizonEvaluation evaluate_model_horizon(const Model& m, const PreparedData& p, std::size_t lookback,
                                                std::size_t horizon, const ForecastLayout& layout) {
    const std::size_t first = p.test.start_rows.front();
    return std::visit([&](const auto& net) { return evaluate_horizon(net, p.scaled, first, lookback, horizon, layout); }, m);
}

// ---------------------------------------------------------------- results

struct HorizonResult {
    std::size_t horizon = 0;
    double test_rmse = std::numeric_limits<double>::quiet_NaN();
    double test_rmse_price = std::numeric_limits<double>::quiet_NaN();
    std::size_t n = 0;
    std::vector<double> trace_predicted;  // first test origin, scaled
    std::vector<double> trace_actual;
    std::string error;                    // nonempty when this horizon failed
};

struct Failure {
    std::string stage;
    std::string message;
    int epoch = -1;
    std::size_t step = 0;
};

struct ExperimentResult {
    ExperimentConfig config;
    std::string version = kanbench::version();
    bool ok = true;
    std::optional<Failure> failure;
    std::size_t parameter_count = 0;
    std::size_t train_samples = 0;
    std::size_t test_samples = 0;
    std::size_t dropped_rows = 0;
    int epochs_run = 0;
    bool stalled = false;
    bool converged = false;
    double train_rmse = std::numeric_limits<double>::quiet_NaN();
    double train_rmse_price = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> epoch_rmse;
    std::vector<HorizonResult> horizons;
    double wall_seconds = 0.0;  // training only

    [[nodiscard]] const HorizonResult* at_horizon(std::size_t h) const {
        for (const auto& r : horizons) {
            if (r.horizon == h) return &r;
        }
        return nullptr;
    }
};

namespace detail {

inline json real_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
inline double real_from(const json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

}  // namespace detail

inline json result_to_json(const ExperimentResult& r, bool include_timing = true) {
    json horizons = json::array();
    for (const auto& h : r.horizons) {
        json trace_p = json::array(), trace_a = json::array();
        for (double v : h.trace_predicted) trace_p.push_back(detail::real_or_null(v));
        for (double v : h.trace_actual) trace_a.push_back(detail::real_or_null(v));
        json hj = {{"horizon", h.horizon},
                   {"test_rmse", detail::real_or_null(h.test_rmse)},
                   {"test_rmse_price", detail::real_or_null(h.test_rmse_price)},
                   {"n", h.n},
                   {"trace_predicted", trace_p},
                   {"trace_actual", trace_a}};
        if (!h.error.empty()) hj["error"] = h.error;
        horizons.push_back(hj);
    }
    json curve = json::array();
    for (double v : r.epoch_rmse) curve.push_back(detail::real_or_null(v));
    json j = {{"config", config_to_json(r.config)},
              {"version", r.version},
              {"ok", r.ok},
              {"regime", r.config.regime_label()},
              {"parameter_count", r.parameter_count},
              {"train_samples", r.train_samples},
              {"test_samples", r.test_samples},
              {"dropped_rows", r.dropped_rows},
              {"epochs_run", r.epochs_run},
              {"stalled", r.stalled},
              {"converged", r.converged},
              {"train_rmse", detail::real_or_null(r.train_rmse)},
              {"train_rmse_price", detail::real_or_null(r.train_rmse_price)},
              {"epoch_rmse", curve},
              {"horizons", horizons}};
    if (r.failure) {
        j["failure"] = {{"stage", r.failure->stage},
                        {"message", r.failure->message},
                        {"epoch", r.failure->epoch},
                        {"step", r.failure->step}};
    }
    if (include_timing) j["wall_seconds"] = r.wall_seconds;
    return j;
}

inline ExperimentResult result_from_json(const json& j) {
    try {
        ExperimentResult r;
        r.config = config_from_json(j.at("config"));
        r.version = j.at("version").get<std::string>();
        r.ok = j.at("ok").get<bool>();
        r.parameter_count = j.at("parameter_count").get<std::size_t>();
        r.train_samples = j.at("train_samples").get<std::size_t>();
        r.test_samples = j.at("test_samples").get<std::size_t>();
        r.dropped_rows = j.at("dropped_rows").get<std::size_t>();
        r.epochs_run = j.at("epochs_run").get<int>();
        r.stalled = j.at("stalled").get<bool>();
        r.converged = j.at("converged").get<bool>();
        r.train_rmse = detail::real_from(j.at("train_rmse"));
        r.train_rmse_price = detail::real_from(j.at("train_rmse_price"));
        for (const auto& v : j.at("epoch_rmse")) r.epoch_rmse.push_back(detail::real_from(v));
        for (const auto& hj : j.at("horizons")) {
            HorizonResult h;
            h.horizon = hj.at("horizon").get<std::size_t>();
            h.test_rmse = detail::real_from(hj.at("test_rmse"));
            h.test_rmse_price = detail::real_from(hj.at("test_rmse_price"));
            h.n = hj.at("n").get<std::size_t>();
            for (const auto& v : hj.at("trace_predicted")) h.trace_predicted.push_back(detail::real_from(v));
            for (const auto& v : hj.at("trace_actual")) h.trace_actual.push_back(detail::real_from(v));
            h.error = hj.value("error", std::string());
            r.horizons.push_back(std::move(h));
        }
        if (j.contains("failure")) {
            const auto& f = j.at("failure");
            r.failure = Failure{f.at("stage").get<std::string>(), f.at("message").get<std::string>(),
                                f.at("epoch").get<int>(), f.at("step").get<std::size_t>()};
        }
        r.wall_seconds = j.value("wall_seconds", 0.0);
        return r;
    } catch (const json::exception& e) {
        throw InputError(std::string("malformed result: ") + e.what());
    }
}

/// Serialization without wall-clock fields; identical config and seed give identical bytes.
inline std::string canonical(const ExperimentResult& r) { return result_to_json(r, false).dump(); }

inline std::vector<ExperimentResult> load_results(const std::string& path) {
    const json j = read_json_file(path);
    if (!j.is_array()) throw InputError("results file must hold a JSON array");
    std::vector<ExperimentResult> out;
    for (const auto& item : j) out.push_back(result_from_json(item));
    if (out.empty()) throw InputError("results file is empty");
    return out;
}

inline std::string results_to_string(const std::vector<ExperimentResult>& results) {
    json j = json::array();
    for (const auto& r : results) j.push_back(result_to_json(r));
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------- running

/// Runs pipeline, training and every configured horizon. Failures are
/// recorded in the result; invalid configs still throw.
inline ExperimentResult run_experiment(const ExperimentConfig& c) {
    validate(c);
    ExperimentResult r;
    r.config = c;
    std::optional<TrainedExperiment> t;
    try {
        t = train_experiment(c);
    } catch (const TrainingError& e) {
        r.ok = false;
        r.failure = Failure{"train", e.what(), e.epoch(), 0};
        return r;
    } catch (const Error& e) {
        r.ok = false;
        r.failure = Failure{"data", e.what(), -1, 0};
        return r;
    }
    r.dropped_rows = t->data.dropped_rows;
    r.train_samples = t->data.train.size();
    r.test_samples = t->data.test.size();
    r.parameter_count = std::visit([](const auto& n) { return n.parameter_count(); }, t->model);
    r.wall_seconds = t->report.wall_seconds;
    r.epochs_run = t->report.epochs_run;
    r.stalled = t->report.stalled;
    r.converged = t->report.converged;
    r.epoch_rmse = t->report.epoch_rmse;

    const auto& p = t->data;
    const auto fitted = predict_all(t->model, p.train);
    if (all_finite(fitted)) {
        r.train_rmse = rmse(p.train.targets, fitted).rmse;
        r.train_rmse_price = rmse(scaler_inverse(p.scaler, p.train.targets, p.target_col),
                                  scaler_inverse(p.scaler, fitted, p.target_col))
                                 .rmse;
    }
    const auto layout = ForecastLayout::for_mode(c.data.feature_mode, c.data.target);
    for (std::size_t h : c.horizons) {
        HorizonResult hr;
        hr.horizon = h;
        try {
            const auto ev = evaluate_model_horizon(t->model, p, c.lookback, h, layout);
            const auto e = rmse(ev.actual, ev.predicted);
            hr.test_rmse = e.rmse;
            hr.n = e.n;
            hr.test_rmse_price = rmse(scaler_inverse(p.scaler, ev.actual, p.target_col),
                                      scaler_inverse(p.scaler, ev.predicted, p.target_col))
                                     .rmse;
            hr.trace_predicted = ev.first_trace.predictions;
            hr.trace_actual = ev.first_trace.actuals;
        } catch (const ForecastError& e) {
            hr.error = e.what();
            if (!r.failure) r.failure = Failure{"forecast", e.what(), -1, e.step()};
            r.ok = false;
        } catch (const Error& e) {
            hr.error = e.what();
            if (!r.failure) r.failure = Failure{"forecast", e.what(), -1, 0};
            r.ok = false;
        }
        r.horizons.push_back(std::move(hr));
    }
    return r;
}

/// One row per (experiment, horizon).
struct ComparisonRow {
    std::string model;
    std::string config;
    std::string regime;
    std::size_t horizon = 0;
    double train_rmse = std::numeric_limits<double>::quiet_NaN();
    double test_rmse = std::numeric_limits<double>::quiet_NaN();
    double wall_seconds = 0.0;
    std::optional<double> ratio;  // best KAN test RMSE / best LSTM test RMSE in the (regime, horizon) cell
};

struct MatrixResult {
    std::vector<ExperimentResult> results;
    std::vector<ComparisonRow> rows;
};

inline std::vector<ComparisonRow> comparison_rows(const std::vector<ExperimentResult>& results) {
    std::vector<ComparisonRow> rows;
    for (const auto& r : results) {
        for (std::size_t h : r.config.horizons) {
            ComparisonRow row;
            row.model = to_string(r.config.model);
            row.config = r.config.name;
            row.regime = r.config.regime_label();
            row.horizon = h;
            row.train_rmse = r.train_rmse;
            row.wall_seconds = r.wall_seconds;
            if (const auto* hr = r.at_horizon(h)) row.test_rmse = hr->test_rmse;
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

/// Lowest finite test RMSE per (model, regime, horizon).
inline std::map<std::tuple<std::string, std::string, std::size_t>, std::size_t> best_rows(
    const std::vector<ComparisonRow>& rows) {
    std::map<std::tuple<std::string, std::string, std::size_t>, std::size_t> best;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (!std::isfinite(rows[i].test_rmse)) continue;
        const auto key = std::make_tuple(rows[i].model, rows[i].regime, rows[i].horizon);
        const auto it = best.find(key);
        if (it == best.end() || rows[i].test_rmse < rows[it->second].test_rmse) best[key] = i;
    }
    return best;
}

inline void assign_ratios(std::vector<ComparisonRow>& rows) {
    const auto best = best_rows(rows);
    for (auto& row : rows) {
        const auto k = best.find({"kan", row.regime, row.horizon});
        const auto l = best.find({"lstm", row.regime, row.horizon});
        row.ratio.reset();
        if (k != best.end() && l != best.end() && rows[l->second].test_rmse > 0.0) {
            row.ratio = rows[k->second].test_rmse / rows[l->second].test_rmse;
        }
    }
}

/// Keeps only the best row per (model, regime, horizon). Selecting on test
/// RMSE is optimistic.
inline std::vector<ComparisonRow> select_best(const std::vector<ComparisonRow>& rows) {
    std::vector<std::size_t> keep;
    for (const auto& [key, index] : best_rows(rows)) keep.push_back(index);
    std::sort(keep.begin(), keep.end());
    std::vector<ComparisonRow> out;
    for (std::size_t i : keep) out.push_back(rows[i]);
    assign_ratios(out);
    return out;
}

inline MatrixResult run_matrix(const std::vector<ExperimentConfig>& configs, std::size_t parallelism = 1,
                               bool best_only = false) {
    if (configs.empty()) throw InputError("matrix is empty");
    for (const auto& c : configs) validate(c);
    MatrixResult m;
    m.results.resize(configs.size());
    const std::size_t workers = std::max<std::size_t>(1, std::min(parallelism, configs.size()));
    std::atomic<std::size_t> next{0};
    const auto work = [&] {
        for (std::size_t i = next++; i < configs.size(); i = next++) m.results[i] = run_experiment(configs[i]);
    };
    if (workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    m.rows = comparison_rows(m.results);
    assign_ratios(m.rows);
    if (best_only) m.rows = select_best(m.rows);
    return m;
}

// ---------------------------------------------------------------- reports

inline constexpr std::string_view kReportHeader = "model,config,regime,horizon,train_rmse,test_rmse,wall_seconds,ratio";

namespace detail {

inline std::string fixed4(double v) {
    if (!std::isfinite(v)) return "";
    std::ostringstream s;
    s.imbue(std::locale::classic());
    s << std::fixed << std::setprecision(4) << v;
    return s.str();
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
    }
    return out + "\"";
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                fields.back() += '"';
                ++i;
            } else if (ch == '"') {
                quoted = false;
            } else {
                fields.back() += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            fields.emplace_back();
        } else {
            fields.back() += ch;
        }
    }
    return fields;
}

inline double parse_report_real(const std::string& s, std::size_t line) {
    if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) throw ParseError("bad number '" + s + "'", line);
    return v;
}

}  // namespace detail

/// Four decimals per number; missing values are empty fields.
inline void write_report_csv(const std::vector<ComparisonRow>& rows, std::ostream& out) {
    out << kReportHeader << '\n';
    for (const auto& r : rows) {
        out << detail::csv_field(r.model) << ',' << detail::csv_field(r.config) << ',' << detail::csv_field(r.regime)
            << ',' << r.horizon << ',' << detail::fixed4(r.train_rmse) << ',' << detail::fixed4(r.test_rmse) << ','
            << detail::fixed4(r.wall_seconds) << ',' << (r.ratio ? detail::fixed4(*r.ratio) : "") << '\n';
    }
}

inline std::vector<ComparisonRow> parse_report_csv(std::istream& in) {
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(in, line) || line != kReportHeader) {
        throw ParseError("report header must be '" + std::string(kReportHeader) + "'", line_no);
    }
    std::vector<ComparisonRow> rows;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto f = detail::split_csv_line(line);
        if (f.size() != 8) throw ParseError("expected 8 fields, got " + std::to_string(f.size()), line_no);
        ComparisonRow r;
        r.model = f[0];
        r.config = f[1];
        r.regime = f[2];
        std::size_t h = 0;
        if (std::from_chars(f[3].data(), f[3].data() + f[3].size(), h).ec != std::errc{}) {
            throw ParseError("bad horizon '" + f[3] + "'", line_no);
        }
        r.horizon = h;
        r.train_rmse = detail::parse_report_real(f[4], line_no);
        r.test_rmse = detail::parse_report_real(f[5], line_no);
        r.wall_seconds = detail::parse_report_real(f[6], line_no);
        if (!f[7].empty()) r.ratio = detail::parse_report_real(f[7], line_no);
        rows.push_back(std::move(r));
    }
    return rows;
}

struct RuntimeSummary {
    std::string model;
    std::size_t runs = 0;
    double mean_seconds = 0.0;
    double min_seconds = 0.0;
    double max_seconds = 0.0;
};

/// Training wall-clock per model kind over successful experiments.
inline std::vector<RuntimeSummary> runtime_summary(const std::vector<ExperimentResult>& results) {
    std::vector<RuntimeSummary> out;
    for (const char* model : {"lstm", "kan"}) {
        RuntimeSummary s;
        s.model = model;
        s.min_seconds = std::numeric_limits<double>::infinity();
        double total = 0.0;
        for (const auto& r : results) {
            if (to_string(r.config.model) != model || r.failure) continue;
            ++s.runs;
            total += r.wall_seconds;
            s.min_seconds = std::min(s.min_seconds, r.wall_seconds);
            s.max_seconds = std::max(s.max_seconds, r.wall_seconds);
        }
        if (s.runs == 0) continue;
        s.mean_seconds = total / static_cast<double>(s.runs);
        out.push_back(s);
    }
    return out;
}

inline void write_runtime_csv(const std::vector<RuntimeSummary>& summary, std::ostream& out) {
    out << "model,runs,mean_wall_seconds,min_wall_seconds,max_wall_seconds\n";
    for (const auto& s : summary) {
        out << s.model << ',' << s.runs << ',' << detail::fixed4(s.mean_seconds) << ',' << detail::fixed4(s.min_seconds)
            << ',' << detail::fixed4(s.max_seconds) << '\n';
    }
}

/// Horizon x regime comparison of the best LSTM and KAN rows, then the
/// training-time comparison.
inline void write_report_markdown(const std::vector<ExperimentResult>& results, std::ostream& out) {
    auto rows = comparison_rows(results);
    assign_ratios(rows);
    const auto best = best_rows(rows);
    std::vector<std::size_t> horizons;
    std::vector<std::string> regimes;
    for (const auto& r : rows) {
        if (std::find(horizons.begin(), horizons.end(), r.horizon) == horizons.end()) horizons.push_back(r.horizon);
        if (std::find(regimes.begin(), regimes.end(), r.regime) == regimes.end()) regimes.push_back(r.regime);
    }
    std::sort(horizons.begin(), horizons.end());

    out << "## Test RMSE by horizon and market\n\n";
    out << "| Horizon | Market | LSTM RMSE | KAN RMSE | KAN/LSTM | Best LSTM | Best KAN |\n";
    out << "|---|---|---|---|---|---|---|\n";
    for (std::size_t h : horizons) {
        for (const auto& regime : regimes) {
            const auto l = best.find({"lstm", regime, h});
            const auto k = best.find({"kan", regime, h});
            const auto cell = [&](auto it) { return it == best.end() ? std::string("n/a") : detail::fixed4(rows[it->second].test_rmse); };
            const auto name = [&](auto it) { return it == best.end() ? std::string("-") : rows[it->second].config; };
            std::string ratio = "-";
            if (l != best.end() && k != best.end() && rows[l->second].test_rmse > 0.0) {
                ratio = detail::fixed4(rows[k->second].test_rmse / rows[l->second].test_rmse);
            }
            out << "| " << h << " | " << regime << " | " << cell(l) << " | " << cell(k) << " | " << ratio << " | "
                << name(l) << " | " << name(k) << " |\n";
        }
    }
    out << "\n## Training time\n\n";
    out << "| Model | Runs | Mean seconds | Min seconds | Max seconds |\n";
    out << "|---|---|---|---|---|\n";
    for (const auto& s : runtime_summary(results)) {
        out << "| " << s.model << " | " << s.runs << " | " << detail::fixed4(s.mean_seconds) << " | "
            << detail::fixed4(s.min_seconds) << " | " << detail::fixed4(s.max_seconds) << " |\n";
    }
    std::size_t failures = 0;
    for (const auto& r : results) failures += r.failure ? 1 : 0;
    if (failures > 0) {
        out << "\n## Failures\n\n";
        for (const auto& r : results) {
            if (r.failure) out << "- " << r.config.name << " (" << r.failure->stage << "): " << r.failure->message << "\n";
        }
    }
}

/// Columns: step, actual, predicted (scaled); actual is "?" past the data.
inline void write_trace_gnuplot(const HorizonResult& h, std::ostream& out) {
    out << "# step actual predicted\n";
    for (std::size_t s = 0; s < h.trace_predicted.size(); ++s) {
        out << s + 1 << ' ';
        if (s < h.trace_actual.size()) {
            out << detail::format_number(h.trace_actual[s]);
        } else {
            out << '?';
        }
        out << ' ' << detail::format_number(h.trace_predicted[s]) << '\n';
    }
}

inline std::string trace_file_name(const ExperimentResult& r, std::size_t horizon) {
    std::string stem = r.config.name + "_" + r.config.regime_label() + "_h" + std::to_string(horizon);
    for (char& ch : stem) {
        if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.')) ch = '_';
    }
    return stem + ".dat";
}

enum class ReportFormat { csv, markdown, gnuplot };

inline ReportFormat report_format_from_string(const std::string& s) {
    if (s == "csv") return ReportFormat::csv;
    if (s == "markdown" || s == "md") return ReportFormat::markdown;
    if (s == "gnuplot") return ReportFormat::gnuplot;
    throw InputError("unknown report format '" + s + "'");
}

/// csv and markdown write one file at `path`; gnuplot writes one .dat per
/// (experiment, horizon) into the directory `path`. Returns the files written.
inline std::vector<std::string> emit_report(const std::vector<ExperimentResult>& results, ReportFormat format,
                                            const std::string& path, bool best_only = false) {
    if (results.empty()) throw InputError("no results to report");
    std::vector<std::string> written;
    if (format == ReportFormat::csv) {
        auto rows = comparison_rows(results);
        assign_ratios(rows);
        if (best_only) rows = select_best(rows);
        std::ostringstream s;
        write_report_csv(rows, s);
        write_text_file(path, s.str());
        written.push_back(path);
    } else if (format == ReportFormat::markdown) {
        std::ostringstream s;
        write_report_markdown(results, s);
        write_text_file(path, s.str());
        written.push_back(path);
    } else {
        std::error_code ec;
        std::filesystem::create_directories(path, ec);
        if (!std::filesystem::is_directory(path)) throw IoError("cannot create directory '" + path + "'");
        for (const auto& r : results) {
            for (const auto& h : r.horizons) {
                if (h.trace_predicted.empty()) continue;
                std::ostringstream s;
                write_trace_gnuplot(h, s);
                const auto file = (std::filesystem::path(path) / trace_file_name(r, h.horizon)).string();
                write_text_file(file, s.str());
                written.push_back(file);
            }
        }
    }
    return written;
}

}  // namespace kanbench
