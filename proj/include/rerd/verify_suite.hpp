#pragma once

// The standard desk-scale verification battery: a fixed enumerable instance
// plus the invariance, consistency, soft-value, and objective checks run by
// the CLI `verify` subcommand and the acceptance suite.

#include <cmath>
#include <cstdint>
#include <sstream>
#include <vector>

#include "rerd/guidance.hpp"
#include "rerd/twisted.hpp"
#include "rerd/verify.hpp"

namespace rerd {

/// d = 3, K = 3 explicit-joint instance: mildly correlated perturbation of a
/// product distribution. The correlation strength is kept small because the
/// factorized backward kernel fills simultaneously unmasked positions
/// independently; the residual bias stays well inside the TV budgets while
/// the joint-table conditioning path is still exercised.
inline TabularModel verification_joint_model(double coupling = 0.2) {
    const Alphabet abc({"A", "B", "C"});
    const std::vector<std::vector<double>> marginals = {
        {0.5, 0.3, 0.2}, {0.2, 0.5, 0.3}, {0.3, 0.2, 0.5}};
    std::vector<double> probs(27);
    double total = 0.0;
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b)
            for (int c = 0; c < 3; ++c) {
                double p = marginals[0][static_cast<std::size_t>(a)] *
                           marginals[1][static_cast<std::size_t>(b)] *
                           marginals[2][static_cast<std::size_t>(c)];
                p *= std::exp(coupling * ((a == b ? 1.0 : 0.0) + (b == c ? 1.0 : 0.0)));
                probs[static_cast<std::size_t>(a * 9 + b * 3 + c)] = p;
                total += p;
            }
    for (auto& p : probs) p /= total;
    return TabularModel::explicit_joint(abc, 3, std::move(probs));
}

inline RewardSpec verification_pattern_reward() { return RewardSpec::pattern_match({0, 1, 2}); }

/// Factorized companion instance for the identities that hold to numerical
/// precision only when the per-position kernel is the exact joint kernel.
inline TabularModel verification_factorized_model() {
    const Alphabet abc({"A", "B", "C"});
    return TabularModel::factorized(abc, {{0.2, 0.3, 0.5}, {0.6, 0.1, 0.3}, {0.4, 0.4, 0.2}});
}

struct VerifySuiteOptions {
    uint64_t seed = 1;
    uint64_t n_theorem = 200000;
    uint64_t n_oracle = 100000;
    uint64_t n_unguided = 200000;
    int cycles = 5;
    double alpha = 0.5;
    int noise_level = 3; // K_noise on the T = 12 schedule
    int steps = 12;
};

namespace detail {

inline CheckReport report_bound(const std::string& name, const std::string& instance,
                                double statistic, double threshold, uint64_t n = 0) {
    CheckReport report;
    report.name = name;
    report.instance = instance;
    report.n = n;
    report.statistic = statistic;
    report.threshold = threshold;
    report.pass = statistic <= threshold;
    return report;
}

} // namespace detail

/// Exact soft-optimal single shot: terminal samples from the twisted chain
/// against the enumerated target.
inline CheckReport soft_optimal_check(const TabularModel& model, const RewardFn& reward,
                                      double alpha, const NoiseSchedule& schedule, uint64_t n,
                                      uint64_t seed, double tolerance) {
    const DistributionTable target = enumerate_target(model, reward, alpha);
    const TwistedKernelSampler sampler(model, reward, alpha, schedule);
    std::vector<SequenceState> samples;
    samples.reserve(n);
    RngStream root = RngStream(seed).fork(lanes::kSample);
    for (uint64_t i = 0; i < n; ++i) {
        RngStream rng = root.fork(i);
        samples.push_back(sampler.sample(rng));
    }
    const double tv = tv_distance(empirical_distribution(samples, target).table, target);
    std::ostringstream inst;
    inst << to_string(model.kind()) << " d=" << model.length() << " K=" << model.vocab_size()
         << " T=" << schedule.steps() << " alpha=" << alpha;
    return detail::report_bound("soft-optimal-single-shot", inst.str(), tv, tolerance, n);
}

/// Unguided ancestral sampling against the prior.
inline CheckReport unguided_consistency_check(const TabularModel& model,
                                              const NoiseSchedule& schedule, uint64_t n,
                                              uint64_t seed, double tolerance) {
    const DistributionTable prior = enumerate_prior(model);
    std::vector<SequenceState> samples;
    samples.reserve(n);
    RngStream root = RngStream(seed).fork(lanes::kSample);
    for (uint64_t i = 0; i < n; ++i) {
        RngStream rng = root.fork(i);
        samples.push_back(ancestral_sample(model, schedule, rng));
    }
    const double tv = tv_distance(empirical_distribution(samples, prior).table, prior);
    std::ostringstream inst;
    inst << to_string(model.kind()) << " d=" << model.length() << " K=" << model.vocab_size()
         << " T=" << schedule.steps();
    return detail::report_bound("unguided-consistency", inst.str(), tv, tolerance, n);
}

/// v_0(x) = r(x) must hold exactly over the entire grid.
inline CheckReport terminal_value_identity_check(const TabularModel& model, const RewardFn& reward,
                                                 double alpha) {
    double worst = 0.0;
    for (uint64_t i = 0; i < model.grid_size(); ++i) {
        const SequenceState x(model.decode_index(i), 0);
        worst = std::max(worst, std::fabs(exact_soft_value(model, reward, x, alpha).value - reward(x)));
    }
    return detail::report_bound("terminal-value-identity", "all decoded sequences", worst, 0.0,
                                model.grid_size());
}

/// exp(v_t/alpha) = E_{x_{t-1} ~ p_pre}[exp(v_{t-1}/alpha)] over every state
/// and step, checked on an instance whose factorized kernel is exact.
inline CheckReport value_recursion_check(const TabularModel& model, const RewardFn& reward,
                                         double alpha, const NoiseSchedule& schedule,
                                         double tolerance = 1e-9) {
    const int d = model.length();
    const int K = model.vocab_size();
    double worst = 0.0;
    std::vector<int32_t> tokens(static_cast<std::size_t>(d));
    const int patterns = static_cast<int>(detail::checked_pow(static_cast<uint64_t>(K) + 1, d,
                                                              kEnumerationLimit));
    for (int code = 0; code < patterns; ++code) {
        int c = code;
        for (int j = 0; j < d; ++j, c /= (K + 1)) {
            const int digit = c % (K + 1);
            tokens[static_cast<std::size_t>(j)] = digit == 0 ? kMasked : digit - 1;
        }
        for (int t = 1; t <= schedule.steps(); ++t) {
            const SequenceState xt(tokens, t);
            const double lhs = std::exp(exact_soft_value(model, reward, xt, alpha).value / alpha);
            double rhs = 0.0;
            for (const auto& [next, prob] : enumerate_backward_kernel(model, xt, schedule))
                rhs += prob * std::exp(exact_soft_value(model, reward, next, alpha).value / alpha);
            worst = std::max(worst, std::fabs(lhs - rhs) / std::max({1.0, lhs, rhs}));
        }
    }
    return detail::report_bound("value-backward-recursion", "factorized instance", worst, tolerance);
}

/// Soft-value temperature limits: alpha -> inf gives the conditional mean,
/// alpha -> 0+ the best completion, on an instance small enough for the
/// finite-alpha corrections to sit inside the tolerance.
inline CheckReport value_limits_check(double tolerance = 1e-3) {
    const Alphabet ab({"A", "B"});
    const TabularModel model = TabularModel::factorized(ab, {{0.5, 0.5}});
    const RewardFn reward = [](const SequenceState& s) { return s.tokens[0] == 1 ? 0.5 : 0.0; };
    const SequenceState masked({kMasked}, 1);
    const double mean = 0.25, best = 0.5;
    const double high = std::fabs(exact_soft_value(model, reward, masked, 100.0).value - mean);
    const double low = std::fabs(exact_soft_value(model, reward, masked, 1e-3).value - best);
    return detail::report_bound("value-temperature-limits", "uniform d=1 K=2",
                                std::max(high, low), tolerance, 2);
}

/// The whole battery, in acceptance order.
inline std::vector<CheckReport> run_verification_suite(const VerifySuiteOptions& options = {}) {
    const TabularModel joint = verification_joint_model();
    const RewardFn reward = make_reward(verification_pattern_reward());
    const NoiseSchedule schedule = linear_schedule(options.steps);

    std::vector<CheckReport> reports;
    reports.push_back(theorem1_invariance_check(joint, reward, options.alpha, schedule,
                                                options.noise_level, options.n_theorem,
                                                options.cycles, options.seed));
    reports.push_back(
        soft_optimal_check(joint, reward, options.alpha, schedule, options.n_oracle,
                           options.seed + 1, 0.03));
    reports.push_back(
        unguided_consistency_check(joint, schedule, options.n_unguided, options.seed + 2, 0.03));
    reports.push_back(terminal_value_identity_check(joint, reward, options.alpha));

    const TabularModel factorized = verification_factorized_model();
    const RewardFn fact_reward = make_reward(RewardSpec::pattern_match({2, 0, 0}));
    reports.push_back(value_recursion_check(factorized, fact_reward, 0.7, linear_schedule(6)));
    reports.push_back(value_limits_check());

    const ObjectiveReport objective = objective_check(joint, reward, options.alpha, options.seed + 3);
    CheckReport obj_report;
    obj_report.name = "objective-maximizer";
    obj_report.instance = "explicit-joint d=3 K=3";
    obj_report.n = static_cast<uint64_t>(objective.perturbations);
    obj_report.statistic = objective.best_perturbed - objective.target_objective;
    obj_report.threshold = 1e-12;
    obj_report.pass = objective.pass;
    reports.push_back(obj_report);
    return reports;
}

} // namespace rerd
