#pragma once

// Exact enumeration of the target distribution exp(r/alpha) * p_pre, distance
// metrics, and the executable invariance / consistency checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "rerd/diffusion.hpp"
#include "rerd/errors.hpp"
#include "rerd/model.hpp"
#include "rerd/reward.hpp"
#include "rerd/rng.hpp"
#include "rerd/twisted.hpp"

namespace rerd {

/// A distribution over fully decoded sequences with lexicographic support
/// ordering (reports are reproducible byte for byte).
struct DistributionTable {
    std::vector<std::vector<int32_t>> support;
    std::vector<double> probs;
    std::vector<double> cumulative;

    void finalize() {
        cumulative.resize(probs.size());
        double acc = 0.0;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            acc += probs[i];
            cumulative[i] = acc;
        }
    }

    /// Inverse-CDF draw; returns the support index.
    std::size_t sample_index(RngStream& rng) const {
        const double u = rng.next_unit();
        std::size_t idx = static_cast<std::size_t>(
            std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
        if (idx >= probs.size()) idx = probs.size() - 1;
        return idx;
    }

    bool same_support(const DistributionTable& other) const {
        return support == other.support;
    }
};

/// Enumerate p^(alpha)(x) proportional to exp(r(x)/alpha) * p_pre(x) over the
/// whole K^d grid, explicitly normalized. Computed in log space.
inline DistributionTable enumerate_target(const TabularModel& model, const RewardFn& reward,
                                          double alpha) {
    if (!(alpha > 0.0)) throw std::invalid_argument("enumerate_target: alpha must be > 0");
    const uint64_t grid = model.grid_size();
    if (grid > kEnumerationLimit)
        throw resource_limit_error("enumerate_target: K^d exceeds the enumerability guard");

    DistributionTable table;
    table.support.reserve(grid);
    std::vector<double> log_terms;
    log_terms.reserve(grid);
    double max_lt = kNegInf;
    for (uint64_t idx = 0; idx < grid; ++idx) {
        std::vector<int32_t> tokens = model.decode_index(idx);
        const SequenceState x(tokens, 0);
        const double lp = model.log_prob(x);
        const double lt = lp == kNegInf ? kNegInf : lp + reward(x) / alpha;
        max_lt = std::max(max_lt, lt);
        log_terms.push_back(lt);
        table.support.push_back(std::move(tokens));
    }
    if (max_lt == kNegInf) throw std::invalid_argument("enumerate_target: p_pre has empty support");
    double total = 0.0;
    for (double lt : log_terms) total += lt == kNegInf ? 0.0 : std::exp(lt - max_lt);
    table.probs.resize(log_terms.size());
    for (std::size_t i = 0; i < log_terms.size(); ++i)
        table.probs[i] = log_terms[i] == kNegInf ? 0.0 : std::exp(log_terms[i] - max_lt) / total;
    table.finalize();
    return table;
}

/// Enumeration of p_pre itself (the alpha -> inf limit of the target).
inline DistributionTable enumerate_prior(const TabularModel& model) {
    return enumerate_target(model, [](const SequenceState&) { return 0.0; }, 1.0);
}

struct EmpiricalResult {
    DistributionTable table;
    uint64_t overflow = 0; // samples falling outside the reference support
};

/// Frequency table of samples over the reference support. Samples outside the
/// support land in the overflow counter and are reported, not dropped.
inline EmpiricalResult empirical_distribution(const std::vector<SequenceState>& samples,
                                              const DistributionTable& reference) {
    uint64_t base = 1;
    for (const auto& tokens : reference.support)
        for (int32_t tok : tokens) base = std::max<uint64_t>(base, static_cast<uint64_t>(tok) + 1);
    auto encode = [base](const std::vector<int32_t>& tokens) {
        uint64_t key = 0;
        for (int32_t tok : tokens) key = key * base + static_cast<uint64_t>(tok);
        return key;
    };
    std::unordered_map<uint64_t, std::size_t> index;
    index.reserve(reference.support.size());
    for (std::size_t i = 0; i < reference.support.size(); ++i)
        index.emplace(encode(reference.support[i]), i);

    EmpiricalResult out;
    out.table.support = reference.support;
    out.table.probs.assign(reference.probs.size(), 0.0);
    for (const auto& sample : samples) {
        if (!sample.fully_decoded())
            throw std::invalid_argument("empirical_distribution: samples must be decoded");
        auto it = index.find(encode(sample.tokens));
        if (it == index.end()) {
            ++out.overflow;
            continue;
        }
        out.table.probs[it->second] += 1.0;
    }
    const double n = static_cast<double>(samples.size());
    if (n > 0)
        for (auto& p : out.table.probs) p /= n;
    out.table.finalize();
    return out;
}

inline double tv_distance(const DistributionTable& p, const DistributionTable& q) {
    if (!p.same_support(q)) throw std::invalid_argument("tv_distance: support mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < p.probs.size(); ++i) acc += std::fabs(p.probs[i] - q.probs[i]);
    return 0.5 * acc;
}

/// KL(p || q) with the 0 log 0 = 0 convention; +inf sentinel when p puts mass
/// where q has none.
inline double kl_divergence(const DistributionTable& p, const DistributionTable& q) {
    if (!p.same_support(q)) throw std::invalid_argument("kl_divergence: support mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < p.probs.size(); ++i) {
        if (p.probs[i] == 0.0) continue;
        if (q.probs[i] == 0.0) return std::numeric_limits<double>::infinity();
        acc += p.probs[i] * std::log(p.probs[i] / q.probs[i]);
    }
    return acc;
}

/// Expected total-variation distance of the empirical distribution of n
/// i.i.d. draws from `table`: sum_i sqrt(p_i (1-p_i) / n) / 2. Pass / fail
/// thresholds are set at 3x this value (floored), so tolerances track the
/// sampling noise of each instance instead of being hand-tuned.
inline double expected_sampling_tv(const DistributionTable& table, uint64_t n) {
    if (n == 0) throw std::invalid_argument("expected_sampling_tv: n must be > 0");
    double acc = 0.0;
    for (double p : table.probs) acc += std::sqrt(p * (1.0 - p) / static_cast<double>(n));
    return 0.5 * acc;
}

struct CheckReport {
    std::string name;
    std::string instance;
    uint64_t n = 0;
    int cycles = 0;
    double statistic = 0.0;
    double threshold = 0.0;
    bool pass = false;

    std::string to_text() const {
        std::ostringstream os;
        os << (pass ? "PASS" : "FAIL") << "  " << name << "  instance=" << instance << "  n=" << n;
        if (cycles > 0) os << "  cycles=" << cycles;
        os << "  statistic=" << statistic << "  threshold=" << threshold;
        return os.str();
    }
};

/// Invariance check: draw n exact p^(alpha) samples, push each through
/// `cycles` rounds of (noise to level K, exact twisted denoising), and
/// compare the resulting empirical distribution against p^(alpha).
inline CheckReport theorem1_invariance_check(const TabularModel& model, const RewardFn& reward,
                                             double alpha, const NoiseSchedule& schedule,
                                             int noise_level, uint64_t n, int cycles, uint64_t seed,
                                             double tolerance_floor = 0.03) {
    if (noise_level < 1 || noise_level > schedule.steps())
        throw std::invalid_argument("theorem1_invariance_check: noise level out of range");
    if (cycles < 1) throw std::invalid_argument("theorem1_invariance_check: need >= 1 cycle");

    const DistributionTable target = enumerate_target(model, reward, alpha);
    const TwistedKernelSampler sampler(model, reward, alpha, schedule);

    std::vector<SequenceState> terminal;
    terminal.reserve(n);
    RngStream root = RngStream(seed).fork(lanes::kSample);
    for (uint64_t i = 0; i < n; ++i) {
        RngStream rng = root.fork(i);
        SequenceState x(target.support[target.sample_index(rng)], 0);
        for (int c = 0; c < cycles; ++c) {
            x = forward_noise_to(x, noise_level, schedule, rng);
            x = sampler.denoise(std::move(x), rng);
        }
        terminal.push_back(std::move(x));
    }

    const EmpiricalResult empirical = empirical_distribution(terminal, target);
    CheckReport report;
    report.name = "theorem1-invariance";
    std::ostringstream inst;
    inst << to_string(model.kind()) << " d=" << model.length() << " K=" << model.vocab_size()
         << " T=" << schedule.steps() << " K_noise=" << noise_level << " alpha=" << alpha;
    report.instance = inst.str();
    report.n = n;
    report.cycles = cycles;
    report.statistic = tv_distance(empirical.table, target);
    report.threshold = std::max(tolerance_floor, 3.0 * expected_sampling_tv(target, n));
    report.pass = report.statistic <= report.threshold && empirical.overflow == 0;
    return report;
}

/// Check that p^(alpha) maximizes E_p[r] - alpha * KL(p || p_pre) against
/// randomly perturbed distributions on the simplex.
struct ObjectiveReport {
    double target_objective = 0.0;
    double best_perturbed = kNegInf;
    double prior_objective = 0.0;
    int perturbations = 0;
    bool pass = false;
};

inline ObjectiveReport objective_check(const TabularModel& model, const RewardFn& reward,
                                       double alpha, uint64_t seed, int perturbations = 100) {
    const DistributionTable target = enumerate_target(model, reward, alpha);
    const DistributionTable prior = enumerate_prior(model);

    std::vector<double> rewards(target.support.size());
    for (std::size_t i = 0; i < target.support.size(); ++i)
        rewards[i] = reward(SequenceState(target.support[i], 0));

    auto objective = [&](const std::vector<double>& p) {
        double value = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (p[i] == 0.0) continue;
            if (prior.probs[i] == 0.0) return kNegInf;
            value += p[i] * (rewards[i] - alpha * std::log(p[i] / prior.probs[i]));
        }
        return value;
    };

    ObjectiveReport report;
    report.target_objective = objective(target.probs);
    report.prior_objective = objective(prior.probs);
    report.perturbations = perturbations;

    RngStream rng = RngStream(seed).fork(lanes::kSample);
    for (int k = 0; k < perturbations; ++k) {
        std::vector<double> q(target.probs.size());
        double total = 0.0;
        if (k % 2 == 0) {
            // multiplicative perturbation of the target
            const double sigma = 0.05 + 0.5 * rng.next_unit();
            for (std::size_t i = 0; i < q.size(); ++i) {
                q[i] = target.probs[i] * std::exp(sigma * (rng.next_unit() - 0.5));
                total += q[i];
            }
        } else {
            // fresh draw from the simplex over the prior's support
            for (std::size_t i = 0; i < q.size(); ++i) {
                q[i] = prior.probs[i] > 0.0 ? -std::log(1.0 - rng.next_unit()) : 0.0;
                total += q[i];
            }
        }
        for (auto& v : q) v /= total;
        report.best_perturbed = std::max(report.best_perturbed, objective(q));
    }
    report.pass = report.target_objective >= report.best_perturbed - 1e-12;
    return report;
}

} // namespace rerd
