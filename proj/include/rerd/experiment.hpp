#pragma once

// Experiment orchestration: run the configured sampler per master seed, write
// one line-delimited record stream per seed, then aggregate cross-seed
// summaries (CSV) and the reward-vs-iteration plot (SVG).
//
// Record streams are byte-identical for a fixed config and seed regardless of
// the thread count: per-seed work is a pure function of the seed, and each
// seed writes its own file. Wall-clock timings live in meta.json, outside the
// record streams, so they never perturb that guarantee.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "rerd/config.hpp"
#include "rerd/errors.hpp"
#include "rerd/guidance.hpp"
#include "rerd/metrics.hpp"
#include "rerd/svg.hpp"
#include "rerd/twisted.hpp"
#include "rerd/verify.hpp"

namespace rerd {

struct RunRecord {
    int iteration = 0;
    int particle = 0;
    std::vector<int32_t> tokens;
    double reward = 0.0;
    double ll = 0.0; // per-token log-likelihood, -inf for zero-probability sequences
    int ancestor = -1;
    uint64_t draws = 0;                                         // cumulative kernel draws
    double wall_ms = std::numeric_limits<double>::quiet_NaN(); // in-memory only, see meta.json
};

inline json record_to_json(const RunRecord& record, const Alphabet& alphabet) {
    json node{{"iteration", record.iteration},
              {"particle", record.particle},
              {"seq", format_sequence(alphabet, SequenceState(record.tokens, 0))},
              {"tokens", record.tokens},
              {"reward", record.reward},
              {"ancestor", record.ancestor},
              {"draws", record.draws}};
    if (record.ll == kNegInf) {
        node["ll"] = nullptr; // zero-probability sentinel
        node["ll_zero_prob"] = true;
    } else {
        node["ll"] = record.ll;
    }
    return node;
}

inline RunRecord record_from_json(const json& node) {
    RunRecord record;
    record.iteration = node.at("iteration").get<int>();
    record.particle = node.at("particle").get<int>();
    record.tokens = node.at("tokens").get<std::vector<int32_t>>();
    record.reward = node.at("reward").get<double>();
    record.ll = node.at("ll").is_null() ? kNegInf : node.at("ll").get<double>();
    record.ancestor = node.at("ancestor").get<int>();
    record.draws = node.at("draws").get<uint64_t>();
    return record;
}

struct SeedRun {
    uint64_t seed = 0;
    std::vector<RunRecord> records;
    uint64_t total_draws = 0;
    double wall_ms = 0.0;
    bool failed = false;
    std::string error;
};

struct SeedStats {
    std::string label; // seed number or "aggregate"
    double p50 = std::numeric_limits<double>::quiet_NaN();
    double p95 = std::numeric_limits<double>::quiet_NaN();
    double mean_ll = std::numeric_limits<double>::quiet_NaN();
    double div_mean_dist = std::numeric_limits<double>::quiet_NaN();
    double div_one_minus = std::numeric_limits<double>::quiet_NaN();
    double feasibility = std::numeric_limits<double>::quiet_NaN();
    double tv_to_target = std::numeric_limits<double>::quiet_NaN();
    double p50_sd = std::numeric_limits<double>::quiet_NaN();
    uint64_t draws = 0;
};

struct RunSummary {
    std::vector<SeedStats> per_seed;
    SeedStats aggregate;
    std::vector<TrajectoryRow> trajectory;
};

namespace detail {

inline double mean_of(const std::vector<double>& values) {
    double acc = 0.0;
    for (double v : values) acc += v;
    return acc / static_cast<double>(values.size());
}

inline double sample_sd(const std::vector<double>& values) {
    if (values.size() < 2) return std::numeric_limits<double>::quiet_NaN();
    const double mu = mean_of(values);
    double acc = 0.0;
    for (double v : values) acc += (v - mu) * (v - mu);
    return std::sqrt(acc / static_cast<double>(values.size() - 1));
}

} // namespace detail

/// Cross-seed summary and per-iteration trajectories, computed purely from
/// the record streams plus the config. The run path and the recompute path
/// share this function, so round trips are exact.
inline RunSummary compute_summary(const ExperimentConfig& config, const std::vector<SeedRun>& runs) {
    RunSummary summary;
    const bool with_constraint = config.constraint.has_value();
    const bool oracle = config.sampler == "oracle";

    std::optional<DistributionTable> target;
    if (oracle)
        target = enumerate_target(config.model, config.effective_reward(), config.params.alpha_select);

    std::vector<SequenceState> pooled_final;
    std::vector<double> seed_p50s, seed_p95s, seed_lls, seed_feas, seed_div, seed_div1;

    for (const auto& run : runs) {
        if (run.failed) continue;
        // group records by iteration
        int last_iter = 0;
        for (const auto& record : run.records) last_iter = std::max(last_iter, record.iteration);

        std::vector<std::vector<const RunRecord*>> by_iter(static_cast<std::size_t>(last_iter) + 1);
        for (const auto& record : run.records)
            by_iter[static_cast<std::size_t>(record.iteration)].push_back(&record);

        for (int s = 0; s <= last_iter; ++s) {
            const auto& group = by_iter[static_cast<std::size_t>(s)];
            if (group.empty()) continue;
            std::vector<double> rewards, lls;
            std::vector<SequenceState> states;
            for (const auto* record : group) {
                rewards.push_back(record->reward);
                lls.push_back(record->ll);
                states.emplace_back(record->tokens, 0);
            }
            TrajectoryRow row;
            row.seed_label = std::to_string(run.seed);
            row.iteration = s;
            row.median_reward = quantile(rewards, 0.5);
            row.p95_reward = quantile(rewards, 0.95);
            row.mean_ll = detail::mean_of(lls);
            row.feasibility = with_constraint ? feasibility_rate(states, *config.constraint)
                                              : std::numeric_limits<double>::quiet_NaN();
            summary.trajectory.push_back(std::move(row));

            if (s == last_iter) {
                SeedStats stats;
                stats.label = std::to_string(run.seed);
                stats.p50 = quantile(rewards, 0.5);
                stats.p95 = quantile(rewards, 0.95);
                stats.mean_ll = detail::mean_of(lls);
                if (const auto div = diversity(states)) {
                    stats.div_mean_dist = div->mean_pairwise_distance;
                    stats.div_one_minus = div->one_minus_distance;
                }
                if (with_constraint) stats.feasibility = feasibility_rate(states, *config.constraint);
                if (target)
                    stats.tv_to_target =
                        tv_distance(empirical_distribution(states, *target).table, *target);
                uint64_t draws = 0;
                for (const auto& record : run.records) draws = std::max(draws, record.draws);
                stats.draws = draws;

                seed_p50s.push_back(stats.p50);
                seed_p95s.push_back(stats.p95);
                seed_lls.push_back(stats.mean_ll);
                if (with_constraint) seed_feas.push_back(stats.feasibility);
                if (!std::isnan(stats.div_mean_dist)) {
                    seed_div.push_back(stats.div_mean_dist);
                    seed_div1.push_back(stats.div_one_minus);
                }
                for (auto& state : states) pooled_final.push_back(std::move(state));
                summary.per_seed.push_back(std::move(stats));
            }
        }
    }

    if (!seed_p50s.empty()) {
        SeedStats agg;
        agg.label = "aggregate";
        agg.p50 = quantile(seed_p50s, 0.5);
        agg.p95 = quantile(seed_p95s, 0.5);
        agg.mean_ll = detail::mean_of(seed_lls);
        if (!seed_div.empty()) {
            agg.div_mean_dist = detail::mean_of(seed_div);
            agg.div_one_minus = detail::mean_of(seed_div1);
        }
        if (!seed_feas.empty()) agg.feasibility = detail::mean_of(seed_feas);
        if (target)
            agg.tv_to_target =
                tv_distance(empirical_distribution(pooled_final, *target).table, *target);
        agg.p50_sd = detail::sample_sd(seed_p50s);
        for (const auto& stats : summary.per_seed) agg.draws += stats.draws;
        summary.aggregate = std::move(agg);

        // aggregate trajectory: per iteration, median across seeds of the
        // per-seed statistics
        int max_iter = 0;
        for (const auto& row : summary.trajectory) max_iter = std::max(max_iter, row.iteration);
        std::vector<TrajectoryRow> aggregate_rows;
        for (int s = 0; s <= max_iter; ++s) {
            std::vector<double> medians, p95s, lls, feas;
            for (const auto& row : summary.trajectory) {
                if (row.iteration != s || row.seed_label == "aggregate") continue;
                medians.push_back(row.median_reward);
                p95s.push_back(row.p95_reward);
                lls.push_back(row.mean_ll);
                if (!std::isnan(row.feasibility)) feas.push_back(row.feasibility);
            }
            if (medians.empty()) continue;
            TrajectoryRow row;
            row.seed_label = "aggregate";
            row.iteration = s;
            row.median_reward = quantile(medians, 0.5);
            row.p95_reward = quantile(p95s, 0.5);
            row.mean_ll = detail::mean_of(lls);
            row.feasibility = feas.empty() ? std::numeric_limits<double>::quiet_NaN()
                                           : detail::mean_of(feas);
            aggregate_rows.push_back(std::move(row));
        }
        summary.trajectory.insert(summary.trajectory.end(), aggregate_rows.begin(),
                                  aggregate_rows.end());
    }
    return summary;
}

inline std::string summary_to_csv(const RunSummary& summary) {
    std::string out = "seed,p50,p95,mean_ll,div_mean_dist,div_one_minus,feasibility,tv_to_target,"
                      "p50_sd,draws\n";
    auto row = [&](const SeedStats& s) {
        out += s.label + "," + detail::csv_num(s.p50) + "," + detail::csv_num(s.p95) + "," +
               detail::csv_num(s.mean_ll) + "," + detail::csv_num(s.div_mean_dist) + "," +
               detail::csv_num(s.div_one_minus) + "," + detail::csv_num(s.feasibility) + "," +
               detail::csv_num(s.tv_to_target) + "," + detail::csv_num(s.p50_sd) + "," +
               std::to_string(s.draws) + "\n";
    };
    for (const auto& s : summary.per_seed) row(s);
    if (!summary.per_seed.empty()) row(summary.aggregate);
    return out;
}

inline std::string trajectory_to_csv(const std::vector<TrajectoryRow>& rows) {
    std::string out = "seed,iteration,median_reward,p95_reward,mean_ll,feasibility\n";
    for (const auto& row : rows)
        out += row.seed_label + "," + std::to_string(row.iteration) + "," +
               detail::csv_num(row.median_reward) + "," + detail::csv_num(row.p95_reward) + "," +
               detail::csv_num(row.mean_ll) + "," + detail::csv_num(row.feasibility) + "\n";
    return out;
}

inline std::vector<TrajectoryRow> trajectory_from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::vector<TrajectoryRow> rows;
    bool header = true;
    while (std::getline(in, line)) {
        if (header) { header = false; continue; }
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::istringstream ls(line);
        std::string field;
        while (std::getline(ls, field, ',')) fields.push_back(field);
        fields.resize(6);
        auto num = [](const std::string& s) {
            return s.empty() ? std::numeric_limits<double>::quiet_NaN() : std::strtod(s.c_str(), nullptr);
        };
        TrajectoryRow row;
        row.seed_label = fields[0];
        row.iteration = static_cast<int>(std::strtol(fields[1].c_str(), nullptr, 10));
        row.median_reward = num(fields[2]);
        row.p95_reward = num(fields[3]);
        row.mean_ll = num(fields[4]);
        row.feasibility = num(fields[5]);
        rows.push_back(std::move(row));
    }
    return rows;
}

namespace detail {

inline std::vector<RunRecord> records_from_history(const ExperimentConfig& config,
                                                   const std::vector<ParticleBatch>& history,
                                                   const std::vector<double>& batch_wall_ms) {
    std::vector<RunRecord> records;
    for (std::size_t s = 0; s < history.size(); ++s) {
        const auto& batch = history[s];
        for (int i = 0; i < batch.size(); ++i) {
            const auto& particle = batch.particles[static_cast<std::size_t>(i)];
            RunRecord record;
            record.iteration = batch.iteration;
            record.particle = i;
            record.tokens = particle.state.tokens;
            record.reward = particle.reward;
            record.ll = loglik(config.model, particle.state);
            record.ancestor = particle.ancestor();
            record.draws = batch.proposal_draws;
            record.wall_ms = s < batch_wall_ms.size()
                                 ? batch_wall_ms[s]
                                 : std::numeric_limits<double>::quiet_NaN();
            records.push_back(std::move(record));
        }
    }
    return records;
}

inline ParticleBatch initial_batch(const ExperimentConfig& config, const NoiseSchedule& schedule,
                                   const RewardFn& reward, uint64_t seed) {
    const InitSpec& init = *config.init;
    switch (init.kind) {
        case InitSpec::Kind::SingleShotSvdd:
            return single_shot_svdd(config.model, reward, schedule, config.params, seed);
        case InitSpec::Kind::SeedData: {
            RngStream rng = RngStream(seed).fork(lanes::kSample);
            std::vector<SequenceState> seeds;
            seeds.reserve(static_cast<std::size_t>(init.count));
            const uint64_t max_attempts = static_cast<uint64_t>(init.count) * 1000;
            uint64_t attempts = 0;
            while (seeds.size() < static_cast<std::size_t>(init.count)) {
                if (++attempts > max_attempts)
                    throw std::runtime_error(
                        "seed-data init: feasible seeds are too rare under the prior");
                SequenceState draw = sample_prior(config.model, rng);
                if (init.feasible_only && config.constraint && !satisfies(*config.constraint, draw))
                    continue;
                seeds.push_back(std::move(draw));
            }
            return init_from_seed_data(seeds, reward, init.alpha, config.params.N, seed);
        }
        case InitSpec::Kind::File: {
            const auto seeds =
                load_sequence_file(init.path, config.model.alphabet(), config.model.length());
            return init_from_seed_data(seeds, reward, init.alpha, config.params.N, seed);
        }
    }
    throw std::logic_error("unreachable");
}

} // namespace detail

/// One sampler execution for one master seed. Exceptions are captured into
/// the run result rather than thrown, so one bad seed cannot take down a
/// multi-seed sweep.
inline SeedRun run_single_seed(const ExperimentConfig& config, uint64_t seed) {
    SeedRun run;
    run.seed = seed;
    const auto started = std::chrono::steady_clock::now();
    auto elapsed_ms = [&] {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started)
            .count();
    };
    try {
        const NoiseSchedule schedule = linear_schedule(config.params.T);
        const RewardFn reward = config.effective_reward();
        std::vector<ParticleBatch> history;
        std::vector<double> wall;

        if (config.sampler == "svdd") {
            history.push_back(single_shot_svdd(config.model, reward, schedule, config.params, seed));
            wall.push_back(elapsed_ms());
        } else if (config.sampler == "smc") {
            history.push_back(single_shot_smc(config.model, reward, schedule, config.params, seed));
            wall.push_back(elapsed_ms());
        } else if (config.sampler == "oracle") {
            const TwistedKernelSampler sampler(config.model, reward, config.params.alpha_select,
                                               schedule);
            ParticleBatch batch;
            batch.provenance = Provenance{"oracle", config.params, seed};
            batch.particles.resize(static_cast<std::size_t>(config.params.N));
            for (std::size_t i = 0; i < batch.particles.size(); ++i) {
                RngStream rng = RngStream(seed).fork(lanes::kSample).fork(i);
                auto& particle = batch.particles[i];
                particle.state = sampler.sample(rng);
                particle.reward = reward(particle.state);
                particle.value = ValueEstimate{particle.reward, ValueMethod::ExactEnumeration,
                                               config.params.alpha_select};
                particle.rng_stream = detail::particle_stream(seed, 0, i).stream();
            }
            batch.proposal_draws = static_cast<uint64_t>(config.params.N) *
                                   static_cast<uint64_t>(schedule.steps());
            history.push_back(std::move(batch));
            wall.push_back(elapsed_ms());
        } else { // ga | rerd
            ParticleBatch batch = detail::initial_batch(config, schedule, reward, seed);
            detail::ensure_rewards(batch, reward);
            batch.provenance.sampler = config.sampler;
            history.push_back(batch);
            wall.push_back(elapsed_ms());
            const int iterations = config.sampler == "rerd"
                                       ? config.params.S
                                       : matched_ga_iterations(config.params);
            for (int s = 0; s < iterations; ++s) {
                batch = config.sampler == "rerd"
                            ? rerd_iteration(batch, config.model, reward, schedule, config.params)
                            : ga_iteration(batch, config.model, reward, schedule, config.params);
                history.push_back(batch);
                wall.push_back(elapsed_ms());
            }
        }

        run.records = detail::records_from_history(config, history, wall);
        run.total_draws = history.back().proposal_draws;
    } catch (const std::exception& e) {
        run.failed = true;
        run.error = e.what();
    }
    run.wall_ms = elapsed_ms();
    return run;
}

inline void write_records_file(const std::filesystem::path& path, const SeedRun& run,
                               const Alphabet& alphabet) {
    std::ofstream out(path);
    if (!out) throw config_error("cannot write record stream: " + path.string());
    for (const auto& record : run.records) out << record_to_json(record, alphabet).dump() << '\n';
}

inline std::vector<RunRecord> read_records_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw config_error("record stream not found: " + path.string());
    std::vector<RunRecord> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        records.push_back(record_from_json(json::parse(line)));
    }
    return records;
}

struct ExperimentResult {
    std::filesystem::path out_dir;
    std::vector<SeedRun> runs;
    RunSummary summary;
    bool failed = false;
};

inline std::filesystem::path records_path(const std::filesystem::path& dir, uint64_t seed) {
    return dir / ("records_" + std::to_string(seed) + ".jsonl");
}

/// Execute the configured sampler for every seed (seeds run concurrently up
/// to `threads`), write per-seed record streams, then the cross-seed summary,
/// trajectory, plot, and meta files.
inline ExperimentResult run_experiment(const ExperimentConfig& config,
                                       const std::filesystem::path& out_dir, int threads = 1,
                                       std::ostream* log = nullptr, bool budget_report = false) {
    if (threads < 1) throw config_error("threads must be >= 1");
    std::filesystem::create_directories(out_dir);

    ExperimentResult result;
    result.out_dir = out_dir;
    result.runs.resize(config.seeds.size());

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= config.seeds.size()) break;
            result.runs[i] = run_single_seed(config, config.seeds[i]);
            if (!result.runs[i].failed) {
                try {
                    write_records_file(records_path(out_dir, config.seeds[i]), result.runs[i],
                                       config.model.alphabet());
                } catch (const std::exception& e) {
                    result.runs[i].failed = true;
                    result.runs[i].error = e.what();
                }
            }
        }
    };
    const std::size_t pool = std::min<std::size_t>(static_cast<std::size_t>(threads),
                                                   config.seeds.size());
    std::vector<std::thread> workers;
    for (std::size_t i = 0; i + 1 < pool; ++i) workers.emplace_back(worker);
    worker();
    for (auto& w : workers) w.join();

    result.summary = compute_summary(config, result.runs);
    {
        std::ofstream out(out_dir / "summary.csv");
        out << summary_to_csv(result.summary);
    }
    {
        std::ofstream out(out_dir / "trajectory.csv");
        out << trajectory_to_csv(result.summary.trajectory);
    }
    {
        std::ofstream out(out_dir / "plot.svg");
        out << render_trajectory_svg(result.summary.trajectory);
    }

    json meta{{"sampler", config.sampler}, {"threads", threads}};
    json seed_meta = json::array();
    for (const auto& run : result.runs) {
        if (run.failed) result.failed = true;
        seed_meta.push_back(json{{"seed", run.seed},
                                 {"wall_ms", run.wall_ms},
                                 {"draws", run.total_draws},
                                 {"failed", run.failed},
                                 {"error", run.error}});
    }
    meta["seeds"] = seed_meta;
    meta["failed"] = result.failed;
    {
        std::ofstream out(out_dir / "meta.json");
        out << meta.dump(2) << '\n';
    }

    if (log) {
        for (const auto& run : result.runs) {
            *log << "seed " << run.seed << ": "
                 << (run.failed ? ("FAILED (" + run.error + ")") : "ok") << ", draws "
                 << run.total_draws << ", " << run.wall_ms << " ms\n";
        }
        if (budget_report) {
            uint64_t total = 0;
            for (const auto& run : result.runs) total += run.total_draws;
            *log << "budget: " << total << " backward-kernel draws across " << result.runs.size()
                 << " seeds\n";
            if (config.sampler == "rerd")
                *log << "budget: matched GA iteration count would be "
                     << matched_ga_iterations(config.params) << "\n";
        }
    }
    return result;
}

/// Recompute summary, trajectory, and plot from the record streams on disk.
inline RunSummary recompute_outputs(const ExperimentConfig& config,
                                    const std::filesystem::path& out_dir) {
    std::vector<SeedRun> runs;
    for (uint64_t seed : config.seeds) {
        SeedRun run;
        run.seed = seed;
        run.records = read_records_file(records_path(out_dir, seed));
        for (const auto& record : run.records) run.total_draws = std::max(run.total_draws, record.draws);
        runs.push_back(std::move(run));
    }
    const RunSummary summary = compute_summary(config, runs);
    {
        std::ofstream out(out_dir / "summary.csv");
        out << summary_to_csv(summary);
    }
    {
        std::ofstream out(out_dir / "trajectory.csv");
        out << trajectory_to_csv(summary.trajectory);
    }
    {
        std::ofstream out(out_dir / "plot.svg");
        out << render_trajectory_svg(summary.trajectory);
    }
    return summary;
}

} // namespace rerd
