#pragma once

#include <algorithm>
#include <filesystem>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "kanbench/bench.hpp"

namespace kanbench {

namespace cli {

inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kFailure = 2;

inline json train_report_json(const TrainReport& r) {
    json curve = json::array();
    for (double v : r.epoch_rmse) curve.push_back(detail::real_or_null(v));
    return {{"epoch_rmse", curve},
            {"epochs_run", r.epochs_run},
            {"wall_seconds", r.wall_seconds},
            {"stalled", r.stalled},
            {"converged", r.converged}};
}

inline void gen_data(const std::string& regime, std::size_t days, std::uint64_t seed, const std::optional<double>& mu,
                     const std::optional<double>& sigma, const std::string& out_path, std::ostream& out) {
    MarketRegime r = MarketRegime::preset(regime_from_string(regime), days, seed);
    if (mu) r.mu = *mu;
    if (sigma) r.sigma = *sigma;
    save_csv(gen_synthetic(r), out_path);
    out << "wrote " << days << " rows to " << out_path << "\n";
}

inline void train_cmd(const std::string& config_path, const std::string& out_path, const std::string& report_path,
                      std::ostream& out) {
    const ExperimentConfig c = load_config(config_path);
    const TrainedExperiment t = train_experiment(c);
    const json report = train_report_json(t.report);
    const json checkpoint = {{"kind", "kanbench-checkpoint"},
                             {"version", version()},
                             {"config", config_to_json(c)},
                             {"model", model_to_json(t.model)},
                             {"train_report", report}};
    write_text_file(out_path, checkpoint.dump(2) + "\n");
    if (!report_path.empty()) write_text_file(report_path, report.dump(2) + "\n");
    out << "trained " << to_string(c.model) << " '" << c.name << "' for " << t.report.epochs_run
        << " epochs, final train RMSE " << detail::fixed4(t.report.epoch_rmse.back()) << "\n";
}

inline void forecast_cmd(const std::string& checkpoint_path, std::size_t horizon, const std::string& out_path,
                         std::ostream& out) {
    const json j = read_json_file(checkpoint_path);
    if (j.value("kind", std::string()) != "kanbench-checkpoint") throw InputError("not a checkpoint file");
    const ExperimentConfig c = config_from_json(j.at("config"));
    const Model model = model_from_json(j.at("model"));
    const PreparedData p = prepare(c);
    const std::size_t origin = p.test.start_rows.front();
    const auto layout = ForecastLayout::for_mode(c.data.feature_mode, c.data.target);
    ForecastTrace trace = forecast_from(model, window_at(p.scaled, origin, c.lookback), horizon, layout);
    for (std::size_t s = 0; s < horizon && origin + c.lookback + s < p.scaled.rows(); ++s) {
        trace.actuals.push_back(p.scaled(origin + c.lookback + s, p.target_col));
    }
    save_trace_csv(trace, p.scaler, p.target_col, out_path);
    out << "wrote " << horizon << "-step forecast to " << out_path << "\n";
}

inline void benchmark_cmd(const std::string& matrix_path, const std::string& out_dir, std::size_t parallel,
                          bool best_only, std::ostream& out) {
    const auto configs = load_matrix(matrix_path);
    const MatrixResult m = run_matrix(configs, parallel, best_only);
    const std::filesystem::path dir(out_dir);
    write_text_file((dir / "results.json").string(), results_to_string(m.results));
    std::ostringstream csv, runtime;
    write_report_csv(m.rows, csv);
    write_text_file((dir / "results.csv").string(), csv.str());
    emit_report(m.results, ReportFormat::markdown, (dir / "report.md").string());
    write_runtime_csv(runtime_summary(m.results), runtime);
    write_text_file((dir / "runtime.csv").string(), runtime.str());
    emit_report(m.results, ReportFormat::gnuplot, (dir / "traces").string());
    std::size_t failures = 0;
    for (const auto& r : m.results) failures += r.failure ? 1 : 0;
    out << "ran " << m.results.size() << " experiments (" << failures << " failed), " << m.rows.size()
        << " rows written to " << out_dir << "\n";
}

inline void report_cmd(const std::string& in_path, const std::string& format, const std::string& out_path,
                       bool best_only, std::ostream& out) {
    const auto results = load_results(in_path);
    const auto files = emit_report(results, report_format_from_string(format), out_path, best_only);
    out << "wrote " << files.size() << " file(s)\n";
}

}  // namespace cli

/// Runs one subcommand. Exit codes: 0 success, 1 usage error, 2 runtime failure.
/// Output files are overwritten.
inline int dispatch(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Benchmark KAN and LSTM forecasters on OHLCV series", "kanbench"};
    app.require_subcommand(1, 1);
    app.set_version_flag("--version", version());

    std::string regime, out_path, config_path, report_path, checkpoint, matrix, out_dir, in_path, format;
    std::size_t days = 1250, horizon = 1, parallel = 1;
    std::uint64_t seed = 0;
    std::optional<double> mu, sigma;
    bool best_only = false;

    auto* gen = app.add_subcommand("gen-data", "Write a synthetic OHLCV series as CSV");
    gen->add_option("--regime", regime, "normal, volatile or trending")->required()
        ->check(CLI::IsMember({"normal", "volatile", "trending"}));
    gen->add_option("--days", days, "Number of trading days")->check(CLI::Range(std::size_t{1}, std::size_t{10000000}));
    gen->add_option("--seed", seed, "Random seed");
    gen->add_option("--mu", mu, "Daily drift override");
    gen->add_option("--sigma", sigma, "Daily volatility override");
    gen->add_option("--out", out_path, "Output CSV path")->required();

    auto* trn = app.add_subcommand("train", "Train one experiment and write a checkpoint");
    trn->add_option("--config", config_path, "Experiment config JSON")->required()->check(CLI::ExistingFile);
    trn->add_option("--out", out_path, "Checkpoint path")->required();
    trn->add_option("--report", report_path, "Training report JSON path");

    auto* fc = app.add_subcommand("forecast", "Iterative forecast from the first test window of a checkpoint");
    fc->add_option("--checkpoint", checkpoint, "Checkpoint JSON")->required()->check(CLI::ExistingFile);
    fc->add_option("--horizon", horizon, "Steps ahead")->required()->check(CLI::Range(std::size_t{1}, std::size_t{100000}));
    fc->add_option("--out", out_path, "Trace CSV path")->required();

    auto* bench = app.add_subcommand("benchmark", "Run an experiment matrix and write all reports");
    bench->add_option("--matrix", matrix, "Matrix JSON")->required()->check(CLI::ExistingFile);
    bench->add_option("--out-dir", out_dir, "Output directory")->required();
    bench->add_option("--parallel", parallel, "Concurrent experiments")->check(CLI::Range(std::size_t{1}, std::size_t{256}));
    bench->add_flag("--select-best", best_only, "Keep the best row per model, market and horizon");

    auto* rep = app.add_subcommand("report", "Render a results.json file");
    rep->add_option("--in", in_path, "results.json from benchmark")->required()->check(CLI::ExistingFile);
    rep->add_option("--format", format, "csv, markdown or gnuplot")->required()
        ->check(CLI::IsMember({"csv", "markdown", "gnuplot"}));
    rep->add_option("--out", out_path, "Output file, or directory for gnuplot")->required();
    rep->add_flag("--select-best", best_only, "Keep the best row per model, market and horizon (csv)");

    if (args.empty()) {
        err << app.help();
        return cli::kUsage;
    }
    try {
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return cli::kOk;
    } catch (const CLI::CallForVersion&) {
        out << version() << "\n";
        return cli::kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return cli::kUsage;
    }

    try {
        if (gen->parsed()) {
            cli::gen_data(regime, days, seed, mu, sigma, out_path, out);
        } else if (trn->parsed()) {
            cli::train_cmd(config_path, out_path, report_path, out);
        } else if (fc->parsed()) {
            cli::forecast_cmd(checkpoint, horizon, out_path, out);
        } else if (bench->parsed()) {
            cli::benchmark_cmd(matrix, out_dir, parallel, best_only, out);
        } else if (rep->parsed()) {
            cli::report_cmd(in_path, format, out_path, best_only, out);
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return cli::kFailure;
    }
    return cli::kOk;
}

inline int dispatch(int argc, char** argv, std::ostream& out, std::ostream& err) {
    return dispatch(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

}  // namespace kanbench
