#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kanbench/kan.hpp"
#include "kanbench/lstm.hpp"
#include "kanbench/numcore.hpp"

namespace kanbench {

inline constexpr std::string_view kCsvHeader = "date,open,high,low,close,adj_close,volume";

struct OhlcvRow {
    std::string date;  // ISO-8601 day, YYYY-MM-DD
    double open = 0.0;
    double high = 0.0;
    double low = 0.0;
    double close = 0.0;
    double adj_close = 0.0;
    double volume = 0.0;

    [[nodiscard]] std::array<double, 6> values() const { return {open, high, low, close, adj_close, volume}; }
    [[nodiscard]] bool complete() const {
        for (double v : values()) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }
    bool operator==(const OhlcvRow&) const = default;
};

struct OhlcvSeries {
    std::vector<OhlcvRow> rows;
    [[nodiscard]] std::size_t size() const noexcept { return rows.size(); }
};

// Feature columns in CSV order (date excluded).
enum class Feature : std::size_t { open = 0, high, low, close, adj_close, volume };
inline constexpr std::size_t kFeatureCount = 6;

inline std::string to_string(Feature f) {
    static constexpr std::array<const char*, kFeatureCount> names{"open", "high", "low", "close", "adj_close", "volume"};
    return names[static_cast<std::size_t>(f)];
}

inline Feature feature_from_string(const std::string& s) {
    for (std::size_t i = 0; i < kFeatureCount; ++i) {
        if (to_string(static_cast<Feature>(i)) == s) return static_cast<Feature>(i);
    }
    throw InputError("unknown feature '" + s + "'");
}

namespace detail {

inline bool valid_iso_date(std::string_view s) {
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') return false;
    int y = 0;
    unsigned m = 0, d = 0;
    if (std::from_chars(s.data(), s.data() + 4, y).ptr != s.data() + 4) return false;
    if (std::from_chars(s.data() + 5, s.data() + 7, m).ptr != s.data() + 7) return false;
    if (std::from_chars(s.data() + 8, s.data() + 10, d).ptr != s.data() + 10) return false;
    return std::chrono::year_month_day{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}}.ok();
}

inline double parse_field(std::string_view text, std::size_t line, const char* name) {
    if (text.empty() || text == "NaN" || text == "nan") return std::numeric_limits<double>::quiet_NaN();
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        throw ParseError("cannot parse " + std::string(name) + " value '" + std::string(text) + "'", line);
    }
    return v;
}

inline std::string format_number(double v) {
    if (!std::isfinite(v)) return "";
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

}  // namespace detail

/// Parses the `date,open,high,low,close,adj_close,volume` schema. Missing
/// values (empty or NaN) are kept as NaN for clean() to drop. Rows are
/// returned in date order.
inline OhlcvSeries parse_csv(std::istream& in) {
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw IntegrityError("no rows: input is empty");
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (line != kCsvHeader) {
        throw ParseError("header must be '" + std::string(kCsvHeader) + "', got '" + line + "'", line_no);
    }
    static constexpr std::array<const char*, 6> names{"open", "high", "low", "close", "adj_close", "volume"};
    OhlcvSeries series;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string_view> fields;
        std::string_view rest(line);
        for (;;) {
            const auto comma = rest.find(',');
            fields.push_back(rest.substr(0, comma));
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
        if (fields.size() != 7) {
            throw ParseError("expected 7 fields, got " + std::to_string(fields.size()), line_no);
        }
        if (!detail::valid_iso_date(fields[0])) {
            throw ParseError("invalid date '" + std::string(fields[0]) + "'", line_no);
        }
        OhlcvRow row;
        row.date = std::string(fields[0]);
        double* targets[6] = {&row.open, &row.high, &row.low, &row.close, &row.adj_close, &row.volume};
        for (std::size_t f = 0; f < 6; ++f) *targets[f] = detail::parse_field(fields[f + 1], line_no, names[f]);
        if (row.volume < 0.0) throw ParseError("volume must be >= 0", line_no);
        series.rows.push_back(std::move(row));
    }
    if (series.rows.empty()) throw IntegrityError("no rows");
    std::stable_sort(series.rows.begin(), series.rows.end(),
                     [](const OhlcvRow& a, const OhlcvRow& b) { return a.date < b.date; });
    for (std::size_t i = 1; i < series.rows.size(); ++i) {
        if (series.rows[i].date == series.rows[i - 1].date) {
            throw IntegrityError("duplicate date " + series.rows[i].date);
        }
    }
    return series;
}

inline OhlcvSeries load_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    return parse_csv(in);
}

inline void write_csv(const OhlcvSeries& series, std::ostream& out) {
    out << kCsvHeader << '\n';
    for (const auto& r : series.rows) {
        out << r.date;
        for (double v : r.values()) out << ',' << detail::format_number(v);
        out << '\n';
    }
}

inline void save_csv(const OhlcvSeries& series, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path + "'");
    write_csv(series, out);
    if (!out) throw IoError("write failed for '" + path + "'");
}

struct CleanResult {
    OhlcvSeries series;
    std::size_t dropped = 0;
};

/// Drops every row with a missing or non-finite field.
inline CleanResult clean(const OhlcvSeries& series) {
    CleanResult result;
    for (const auto& r : series.rows) {
        if (r.complete()) {
            result.series.rows.push_back(r);
        } else {
            ++result.dropped;
        }
    }
    if (result.series.rows.empty()) throw IntegrityError("all " + std::to_string(result.dropped) + " rows dropped");
    return result;
}

// ---------------------------------------------------------------- features & scaling

enum class FeatureMode { copy_forward, close_only };

inline std::string to_string(FeatureMode m) { return m == FeatureMode::copy_forward ? "copy_forward" : "close_only"; }

inline FeatureMode feature_mode_from_string(const std::string& s) {
    if (s == "copy_forward") return FeatureMode::copy_forward;
    if (s == "close_only") return FeatureMode::close_only;
    throw InputError("unknown feature mode '" + s + "'");
}

/// Rows x features. copy_forward keeps all six columns; close_only keeps `target` alone.
inline Matrix feature_matrix(const OhlcvSeries& series, FeatureMode mode, Feature target = Feature::close) {
    if (series.rows.empty()) throw InputError("series is empty");
    const std::size_t f = mode == FeatureMode::copy_forward ? kFeatureCount : 1;
    Matrix m(series.size(), f);
    for (std::size_t r = 0; r < series.size(); ++r) {
        const auto v = series.rows[r].values();
        if (mode == FeatureMode::copy_forward) {
            for (std::size_t c = 0; c < f; ++c) m(r, c) = v[c];
        } else {
            m(r, 0) = v[static_cast<std::size_t>(target)];
        }
    }
    return m;
}

/// Per-column min/max fitted on training rows. A constant column maps to 0.5.
struct MinMaxScaler {
    std::vector<double> min;
    std::vector<double> max;

    [[nodiscard]] std::size_t features() const noexcept { return min.size(); }

    static MinMaxScaler fit(const Matrix& train) {
        MinMaxScaler s;
        s.min.assign(train.cols(), std::numeric_limits<double>::infinity());
        s.max.assign(train.cols(), -std::numeric_limits<double>::infinity());
        for (std::size_t r = 0; r < train.rows(); ++r) {
            for (std::size_t c = 0; c < train.cols(); ++c) {
                s.min[c] = std::min(s.min[c], train(r, c));
                s.max[c] = std::max(s.max[c], train(r, c));
            }
        }
        return s;
    }

    [[nodiscard]] double transform(double x, std::size_t feature) const {
        require(feature);
        const double span = max[feature] - min[feature];
        if (span == 0.0) return 0.5;
        return (x - min[feature]) / span;
    }

    [[nodiscard]] double inverse(double v, std::size_t feature) const {
        require(feature);
        const double span = max[feature] - min[feature];
        if (span == 0.0) return min[feature];
        return v * span + min[feature];
    }

    [[nodiscard]] Matrix transform(const Matrix& m) const {
        if (m.cols() != features()) throw ShapeError("scaler fitted on " + std::to_string(features()) + " features, got " + m.shape());
        Matrix out = m;
        for (std::size_t r = 0; r < m.rows(); ++r) {
            for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) = transform(m(r, c), c);
        }
        return out;
    }

    void require(std::size_t feature) const {
        if (feature >= features()) throw InputError("unknown scaler feature index " + std::to_string(feature));
    }

    bool operator==(const MinMaxScaler&) const = default;
};

struct ScaledData {
    Matrix scaled;
    MinMaxScaler scaler;
};

/// Fits on `train` only, then maps `apply`. Values outside the training
/// range fall outside [0, 1]; they are not clamped here.
inline ScaledData scaler_fit_transform(const Matrix& train, const Matrix& apply) {
    MinMaxScaler scaler = MinMaxScaler::fit(train);
    return {scaler.transform(apply), std::move(scaler)};
}

inline std::vector<double> scaler_inverse(const MinMaxScaler& scaler, std::span<const double> scaled, std::size_t feature) {
    scaler.require(feature);
    std::vector<double> out(scaled.size());
    for (std::size_t i = 0; i < scaled.size(); ++i) out[i] = scaler.inverse(scaled[i], feature);
    return out;
}

// ---------------------------------------------------------------- windows

struct WindowedDataset {
    std::size_t lookback = 20;
    std::size_t horizon = 1;
    std::size_t features = 1;
    std::vector<std::vector<double>> inputs;  // lookback x features, row-major
    std::vector<double> targets;
    std::vector<std::size_t> start_rows;      // first input row of each sample
    std::vector<std::size_t> target_rows;

    [[nodiscard]] std::size_t size() const noexcept { return targets.size(); }
};

/// Sample i reads rows [i, i + L) and targets column `target_col` of row i + L + H - 1.
inline WindowedDataset make_windows(const Matrix& scaled, std::size_t target_col, std::size_t lookback,
                                    std::size_t horizon) {
    if (lookback == 0 || horizon == 0) throw InputError("lookback and horizon must be >= 1");
    if (target_col >= scaled.cols()) throw InputError("target column out of range");
    const std::size_t n = scaled.rows();
    if (n < lookback + horizon) {
        throw InputError("series of length " + std::to_string(n) + " is too short: need at least " +
                         std::to_string(lookback + horizon) + " rows for lookback " + std::to_string(lookback) +
                         " and horizon " + std::to_string(horizon));
    }
    WindowedDataset ds;
    ds.lookback = lookback;
    ds.horizon = horizon;
    ds.features = scaled.cols();
    const std::size_t count = n - lookback - horizon + 1;
    for (std::size_t i = 0; i < count; ++i) {
        std::vector<double> window;
        window.reserve(lookback * ds.features);
        for (std::size_t r = i; r < i + lookback; ++r) {
            const auto row = scaled.row(r);
            window.insert(window.end(), row.begin(), row.end());
        }
        ds.inputs.push_back(std::move(window));
        ds.start_rows.push_back(i);
        ds.target_rows.push_back(i + lookback + horizon - 1);
        ds.targets.push_back(scaled(i + lookback + horizon - 1, target_col));
    }
    return ds;
}

namespace detail {

inline WindowedDataset slice(const WindowedDataset& ds, std::size_t begin, std::size_t end) {
    WindowedDataset out;
    out.lookback = ds.lookback;
    out.horizon = ds.horizon;
    out.features = ds.features;
    const auto b = static_cast<std::ptrdiff_t>(begin), e = static_cast<std::ptrdiff_t>(end);
    out.inputs.assign(ds.inputs.begin() + b, ds.inputs.begin() + e);
    out.targets.assign(ds.targets.begin() + b, ds.targets.begin() + e);
    out.start_rows.assign(ds.start_rows.begin() + b, ds.start_rows.begin() + e);
    out.target_rows.assign(ds.target_rows.begin() + b, ds.target_rows.begin() + e);
    return out;
}

}  // namespace detail

inline std::size_t train_count(std::size_t samples, double train_frac) {
    if (!(train_frac > 0.0 && train_frac < 1.0)) throw InputError("train_frac must lie in (0, 1)");
    return static_cast<std::size_t>(std::floor(train_frac * static_cast<double>(samples)));
}

/// First floor(train_frac * n) samples train, the rest test. Never shuffles.
inline std::pair<WindowedDataset, WindowedDataset> chrono_split(const WindowedDataset& ds, double train_frac) {
    const std::size_t n_train = train_count(ds.size(), train_frac);
    if (n_train == 0 || n_train == ds.size()) {
        throw InputError("split of " + std::to_string(ds.size()) + " samples at " + std::to_string(train_frac) +
                         " leaves one side empty");
    }
    return {detail::slice(ds, 0, n_train), detail::slice(ds, n_train, ds.size())};
}

inline KanBatch to_kan_batch(const WindowedDataset& ds) { return {ds.inputs, ds.targets}; }

inline SequenceBatch to_sequence_batch(const WindowedDataset& ds) {
    SequenceBatch b;
    b.targets = ds.targets;
    for (const auto& w : ds.inputs) b.sequences.push_back(to_sequence(w, ds.features));
    return b;
}

// ---------------------------------------------------------------- synthetic data

enum class RegimeKind { normal, volatile_, trending };

inline std::string to_string(RegimeKind k) {
    switch (k) {
        case RegimeKind::normal: return "normal";
        case RegimeKind::volatile_: return "volatile";
        case RegimeKind::trending: return "trending";
    }
    return "normal";
}

inline RegimeKind regime_from_string(const std::string& s) {
    if (s == "normal") return RegimeKind::normal;
    if (s == "volatile") return RegimeKind::volatile_;
    if (s == "trending") return RegimeKind::trending;
    throw InputError("unknown regime '" + s + "'");
}

struct MarketRegime {
    RegimeKind kind = RegimeKind::normal;
    double mu = 0.0003;    // daily drift
    double sigma = 0.01;   // daily volatility
    std::size_t length = 1000;
    std::uint64_t seed = 0;
    double start_price = 100.0;

    /// Default drift/volatility per regime.
    static MarketRegime preset(RegimeKind kind, std::size_t length, std::uint64_t seed) {
        MarketRegime r;
        r.kind = kind;
        r.length = length;
        r.seed = seed;
        switch (kind) {
            case RegimeKind::normal: r.mu = 0.0003; r.sigma = 0.01; break;
            case RegimeKind::volatile_: r.mu = 0.0003; r.sigma = 0.03; break;
            case RegimeKind::trending: r.mu = 0.002; r.sigma = 0.01; break;
        }
        return r;
    }

    void validate(std::size_t lookback = 0, std::size_t horizon = 0) const {
        if (!(sigma > 0.0) || !std::isfinite(sigma)) throw InputError("regime sigma must be > 0");
        if (!std::isfinite(mu)) throw InputError("regime mu must be finite");
        if (!(start_price > 0.0)) throw InputError("regime start_price must be > 0");
        if (length < 1 || length < lookback + horizon + 10) {
            throw InputError("regime length " + std::to_string(length) + " must be >= lookback + horizon + 10 = " +
                             std::to_string(lookback + horizon + 10));
        }
    }
};

/// Geometric Brownian motion close path
///   close_{t+1} = close_t * exp((mu - sigma^2/2) + sigma z_t)
/// on consecutive business days from 2000-01-03. Per day, in draw order:
///   open   = previous close * exp(0.25 sigma u)
///   high   = max(open, close) * exp(0.5 sigma |v|)
///   low    = min(open, close) * exp(-0.5 sigma |w|)
///   volume = exp(ln(1e6) + 0.3 n)
/// with z, u, v, w, n standard normal; adj_close equals close.
inline OhlcvSeries gen_synthetic(const MarketRegime& regime) {
    regime.validate();
    using namespace std::chrono;
    Rng rng(regime.seed);
    OhlcvSeries s;
    s.rows.reserve(regime.length);
    sys_days day{year{2000} / January / 3};
    double prev_close = regime.start_price;
    const double drift = regime.mu - 0.5 * regime.sigma * regime.sigma;
    for (std::size_t t = 0; t < regime.length; ++t) {
        const double z = rng.normal(), u = rng.normal(), v = rng.normal(), w = rng.normal(), n = rng.normal();
        OhlcvRow row;
        const year_month_day ymd{day};
        char buf[16];
        std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                      static_cast<unsigned>(ymd.day()));
        row.date = buf;
        row.close = t == 0 ? regime.start_price : prev_close * std::exp(drift + regime.sigma * z);
        row.open = t == 0 ? regime.start_price : prev_close * std::exp(0.25 * regime.sigma * u);
        row.high = std::max(row.open, row.close) * std::exp(0.5 * regime.sigma * std::abs(v));
        row.low = std::min(row.open, row.close) * std::exp(-0.5 * regime.sigma * std::abs(w));
        row.adj_close = row.close;
        row.volume = std::exp(std::log(1e6) + 0.3 * n);
        prev_close = row.close;
        s.rows.push_back(std::move(row));
        do {
            day += days{1};
        } while (weekday{day} == Saturday || weekday{day} == Sunday);
    }
    return s;
}

// ---------------------------------------------------------------- full pipeline

struct PipelineOptions {
    std::size_t lookback = 20;
    std::size_t horizon = 1;
    double train_frac = 0.8;
    FeatureMode feature_mode = FeatureMode::copy_forward;
    Feature target = Feature::close;
};

struct PreparedData {
    std::size_t dropped_rows = 0;
    Matrix raw;                  // cleaned rows x features, original units
    Matrix scaled;               // same shape, scaled with train-only statistics
    MinMaxScaler scaler;
    std::size_t target_col = 0;  // column of the target in `scaled`
    std::size_t train_rows = 0;  // rows touched by training samples: [0, train_rows)
    WindowedDataset train;
    WindowedDataset test;
};

/// clean -> features -> windows -> chronological split, with the scaler
/// fitted on exactly the rows that training samples read (inputs and targets).
inline PreparedData prepare_dataset(const OhlcvSeries& series, const PipelineOptions& opt) {
    PreparedData p;
    auto cleaned = clean(series);
    p.dropped_rows = cleaned.dropped;
    p.raw = feature_matrix(cleaned.series, opt.feature_mode, opt.target);
    p.target_col = opt.feature_mode == FeatureMode::copy_forward ? static_cast<std::size_t>(opt.target) : 0;
    const std::size_t n = p.raw.rows();
    if (n < opt.lookback + opt.horizon) {
        throw InputError("series of length " + std::to_string(n) + " is too short: need at least " +
                         std::to_string(opt.lookback + opt.horizon) + " rows");
    }
    const std::size_t samples = n - opt.lookback - opt.horizon + 1;
    const std::size_t n_train = train_count(samples, opt.train_frac);
    if (n_train == 0 || n_train == samples) throw InputError("train/test split leaves one side empty");
    p.train_rows = n_train + opt.lookback + opt.horizon - 1;

    Matrix train_block(p.train_rows, p.raw.cols());
    for (std::size_t r = 0; r < p.train_rows; ++r) {
        std::copy(p.raw.row(r).begin(), p.raw.row(r).end(), train_block.row(r).begin());
    }
    auto scaled = scaler_fit_transform(train_block, p.raw);
    p.scaled = std::move(scaled.scaled);
    p.scaler = std::move(scaled.scaler);
    auto windows = make_windows(p.scaled, p.target_col, opt.lookback, opt.horizon);
    auto [train, test] = chrono_split(windows, opt.train_frac);
    p.train = std::move(train);
    p.test = std::move(test);
    return p;
}

}  // namespace kanbench
