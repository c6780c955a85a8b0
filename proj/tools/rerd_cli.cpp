// Experiment CLI: run configured samplers, verify the exact-enumeration
// checks, recompute summaries from record streams, and regenerate plots.
//
// Exit codes: 0 success, 1 configuration error, 2 failed verification check.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rerd/rerd.hpp"

namespace fs = std::filesystem;

namespace {

int cmd_run(const std::string& config_path, const std::vector<uint64_t>& seed_override,
            const std::string& out_override, int threads, bool budget_report) {
    rerd::ExperimentConfig config = rerd::load_config(config_path);
    if (!seed_override.empty()) config.seeds = seed_override;
    fs::path out = out_override.empty() ? config.out : fs::path(out_override);
    if (out.empty()) throw rerd::config_error("no output directory: set --out or the config's 'out'");

    const rerd::ExperimentResult result =
        rerd::run_experiment(config, out, threads, &std::cout, budget_report);
    std::cout << "wrote " << (out / "summary.csv").string() << "\n";
    if (result.failed) {
        std::cerr << "error: one or more seed runs failed (see meta.json)\n";
        return 1;
    }
    return 0;
}

int cmd_verify(uint64_t seed, const std::string& out_path, bool quick) {
    rerd::VerifySuiteOptions options;
    options.seed = seed;
    if (quick) {
        options.n_theorem = 20000;
        options.n_oracle = 10000;
        options.n_unguided = 20000;
    }
    const std::vector<rerd::CheckReport> reports = rerd::run_verification_suite(options);

    std::string text;
    bool all_pass = true;
    for (const auto& report : reports) {
        text += report.to_text() + "\n";
        all_pass = all_pass && report.pass;
    }
    std::cout << text;
    if (!out_path.empty()) {
        std::ofstream out(out_path);
        if (!out) throw rerd::config_error("cannot write report: " + out_path);
        out << text;
    }
    return all_pass ? 0 : 2;
}

int cmd_metrics(const std::string& config_path, const std::string& out_dir) {
    const rerd::ExperimentConfig config = rerd::load_config(config_path);
    auto read_all = [](const fs::path& p) -> std::string {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), {});
    };
    const std::string before_summary = read_all(fs::path(out_dir) / "summary.csv");
    const std::string before_traj = read_all(fs::path(out_dir) / "trajectory.csv");

    rerd::recompute_outputs(config, out_dir);

    const bool summary_same = read_all(fs::path(out_dir) / "summary.csv") == before_summary;
    const bool traj_same = read_all(fs::path(out_dir) / "trajectory.csv") == before_traj;
    std::cout << "summary.csv " << (summary_same ? "unchanged" : "updated") << "\n";
    std::cout << "trajectory.csv " << (traj_same ? "unchanged" : "updated") << "\n";
    return 0;
}

int cmd_plot(const std::string& out_dir) {
    const fs::path traj_path = fs::path(out_dir) / "trajectory.csv";
    std::ifstream in(traj_path, std::ios::binary);
    if (!in) throw rerd::config_error("trajectory not found: " + traj_path.string());
    const std::string text(std::istreambuf_iterator<char>(in), {});
    const auto rows = rerd::trajectory_from_csv(text);
    std::ofstream out(fs::path(out_dir) / "plot.svg", std::ios::binary);
    out << rerd::render_trajectory_svg(rows);
    std::cout << "wrote " << (fs::path(out_dir) / "plot.svg").string() << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"reward-guided generation and iterative refinement for masked diffusion"};
    app.require_subcommand(1);

    std::string config_path, out_path;
    std::vector<uint64_t> seeds;
    int threads = 1;
    bool budget_report = false;
    bool quick = false;
    uint64_t verify_seed = 1;

    auto* run = app.add_subcommand("run", "execute an experiment config");
    run->add_option("--config", config_path, "experiment config (json)")->required();
    run->add_option("--seed", seeds, "master seeds (overrides the config)");
    run->add_option("--out", out_path, "output directory (overrides the config)");
    run->add_option("--threads", threads, "concurrent seeds");
    run->add_flag("--budget-report", budget_report, "print kernel-draw budgets");

    auto* verify = app.add_subcommand("verify", "run the exact-enumeration check suite");
    verify->add_option("--seed", verify_seed, "master seed for the checks");
    verify->add_option("--out", out_path, "also write the report to this file");
    verify->add_option("--threads", threads, "accepted for interface parity; checks run serially");
    verify->add_flag("--quick", quick, "smaller sample sizes for a fast smoke pass");

    auto* metrics = app.add_subcommand("metrics", "recompute summaries from record streams");
    metrics->add_option("--config", config_path, "experiment config (json)")->required();
    metrics->add_option("--out", out_path, "run directory with records_*.jsonl")->required();

    auto* plot = app.add_subcommand("plot", "regenerate plot.svg from trajectory.csv");
    plot->add_option("--out", out_path, "run directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(config_path, seeds, out_path, threads, budget_report);
        if (verify->parsed()) return cmd_verify(verify_seed, out_path, quick);
        if (metrics->parsed()) return cmd_metrics(config_path, out_path);
        if (plot->parsed()) return cmd_plot(out_path);
    } catch (const rerd::config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
