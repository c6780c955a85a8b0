#pragma once

// The samplers: single-shot SVDD-style local importance sampling, single-shot
// SMC, the GA baseline, and the iterative refinement loop (partial noising +
// reward-guided denoising + terminal selection).
//
// Randomness discipline: every draw comes from a counter-based stream keyed
// by (master seed, iteration, particle, step, candidate), so results are
// reproducible regardless of evaluation order. Particles carry their stream
// id; stream ids are reassigned from the slot index at iteration boundaries,
// so duplicates created by resampling diverge again on the next iteration.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rerd/diffusion.hpp"
#include "rerd/errors.hpp"
#include "rerd/model.hpp"
#include "rerd/reward.hpp"
#include "rerd/rng.hpp"

namespace rerd {

namespace lanes {
// Top-level lanes under the master seed.
inline constexpr uint64_t kParticle = 1;
inline constexpr uint64_t kSelect = 2;
inline constexpr uint64_t kInit = 3;
inline constexpr uint64_t kSample = 4;
// Per-particle lanes; step indices occupy [0, T], so sentinels sit high.
inline constexpr uint64_t kNoise = (1ull << 62) + 1;
inline constexpr uint64_t kFinalDecode = (1ull << 62) + 2;
inline constexpr uint64_t kPick = (1ull << 62) + 3;
inline constexpr uint64_t kDecode = (1ull << 62) + 4;
} // namespace lanes

struct GuidanceParams {
    double alpha_is = 0.0;     // IS temperature (0 = argmax)
    double alpha_select = 0.2; // selection / resampling temperature
    int L = 20;                // candidates per IS step
    int N = 10;                // batch size
    int K = 5;                 // refinement noise level (steps)
    int S = 30;                // refinement iterations
    int T = 50;                // total schedule steps
    DecodeMode decode_mode = DecodeMode::Greedy;

    void validate() const {
        if (!(alpha_is >= 0.0) || !std::isfinite(alpha_is))
            throw std::invalid_argument("params: alpha_is must be finite and >= 0");
        if (!(alpha_select >= 0.0) || !std::isfinite(alpha_select))
            throw std::invalid_argument("params: alpha_select must be finite and >= 0");
        if (L < 1) throw std::invalid_argument("params: L must be >= 1");
        if (N < 1) throw std::invalid_argument("params: N must be >= 1");
        if (S < 0) throw std::invalid_argument("params: S must be >= 0");
        if (T < 1) throw std::invalid_argument("params: T must be >= 1");
        if (K < 1 || K > T) throw std::invalid_argument("params: need 1 <= K <= T");
    }
};

struct Particle {
    SequenceState state;
    double reward = std::numeric_limits<double>::quiet_NaN(); // valid only at t = 0
    ValueEstimate value{};
    std::vector<int32_t> lineage; // one ancestor index per resampling survived
    uint64_t rng_stream = 0;

    int ancestor() const { return lineage.empty() ? -1 : lineage.back(); }
};

struct Provenance {
    std::string sampler;
    GuidanceParams params{};
    uint64_t seed = 0;
};

struct ParticleBatch {
    std::vector<Particle> particles;
    int iteration = 0;
    Provenance provenance;
    uint64_t proposal_draws = 0; // cumulative backward-kernel invocations

    int size() const { return static_cast<int>(particles.size()); }

    bool all_decoded() const {
        for (const auto& p : particles)
            if (!p.state.fully_decoded()) return false;
        return true;
    }

    std::vector<double> rewards() const {
        std::vector<double> out;
        out.reserve(particles.size());
        for (const auto& p : particles) out.push_back(p.reward);
        return out;
    }
};

/// Normalized selection weights w_l from values and a temperature:
/// alpha > 0 gives softmax(values / alpha) with max-shift; alpha = 0 is the
/// argmax limit, splitting ties uniformly over the argmax set.
inline std::vector<double> softmax_weights(std::span<const double> values, double alpha) {
    if (values.empty()) throw std::invalid_argument("softmax_weights: empty value list");
    if (!(alpha >= 0.0) || !std::isfinite(alpha))
        throw std::invalid_argument("softmax_weights: alpha must be finite and >= 0");
    double max_value = kNegInf;
    for (double v : values) {
        if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
            throw std::invalid_argument("softmax_weights: values must be finite or -inf");
        max_value = std::max(max_value, v);
    }
    if (max_value == kNegInf)
        throw degenerate_weights_error("softmax_weights: all values are -inf");

    std::vector<double> weights(values.size(), 0.0);
    if (alpha == 0.0) {
        int ties = 0;
        for (double v : values)
            if (v == max_value) ++ties;
        for (std::size_t l = 0; l < values.size(); ++l)
            if (values[l] == max_value) weights[l] = 1.0 / ties;
        return weights;
    }
    double total = 0.0;
    for (std::size_t l = 0; l < values.size(); ++l) {
        if (values[l] == kNegInf) continue;
        weights[l] = std::exp((values[l] - max_value) / alpha);
        total += weights[l];
    }
    for (auto& w : weights) w /= total;
    return weights;
}

/// Value scorer used by the IS step. The stream argument is consumed only in
/// sampled decode mode.
using ValueFn = std::function<ValueEstimate(const SequenceState&, RngStream&)>;

inline ValueFn make_approx_value_fn(const TabularModel& model, RewardFn reward, DecodeMode mode) {
    return [&model, reward = std::move(reward), mode](const SequenceState& xt, RngStream& rng) {
        return approx_value(model, reward, xt, mode, &rng);
    };
}

inline ValueFn make_exact_value_fn(const TabularModel& model, RewardFn reward, double alpha) {
    return [&model, reward = std::move(reward), alpha](const SequenceState& xt, RngStream&) {
        return exact_soft_value(model, reward, xt, alpha);
    };
}

namespace detail {

inline void require_uniform_time(const ParticleBatch& batch, const char* who) {
    if (batch.particles.empty()) throw std::invalid_argument(std::string(who) + ": empty batch");
    for (const auto& p : batch.particles)
        if (p.state.t != batch.particles.front().state.t)
            throw std::invalid_argument(std::string(who) + ": particles are at mixed time steps");
}

/// Multinomial resampling with replacement: n draws from `weights`, lineage
/// appended with the chosen ancestor.
inline std::vector<Particle> resample(const std::vector<Particle>& particles,
                                      const std::vector<double>& weights, RngStream& rng,
                                      std::size_t n) {
    std::vector<Particle> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t a = rng.categorical(weights);
        Particle child = particles[a];
        child.lineage.push_back(static_cast<int32_t>(a));
        out.push_back(std::move(child));
    }
    return out;
}

inline RngStream particle_stream(uint64_t seed, uint64_t iteration, uint64_t index) {
    return RngStream(seed).fork(lanes::kParticle).fork(iteration).fork(index);
}

} // namespace detail

/// One local IS step: per particle independently, draw L candidates from the
/// pre-trained backward kernel, score each with the value function, keep one
/// with probability softmax(value / alpha_is). No cross-particle interaction.
inline ParticleBatch is_step(const ParticleBatch& batch, const TabularModel& model,
                             const NoiseSchedule& schedule, const GuidanceParams& params,
                             const ValueFn& value_fn) {
    detail::require_uniform_time(batch, "is_step");
    const int t = batch.particles.front().state.t;
    if (t < 1) throw std::invalid_argument("is_step: batch must sit at step k+1 >= 1");

    ParticleBatch out = batch;
    for (auto& particle : out.particles) {
        const RngStream base(batch.provenance.seed, particle.rng_stream);
        const RngStream level = base.fork(static_cast<uint64_t>(t));
        const PosteriorTable posterior = exact_posterior(model, particle.state);

        std::vector<SequenceState> candidates;
        std::vector<ValueEstimate> estimates;
        std::vector<double> values;
        candidates.reserve(static_cast<std::size_t>(params.L));
        for (int l = 0; l < params.L; ++l) {
            RngStream cand_rng = level.fork(static_cast<uint64_t>(l));
            SequenceState z = backward_step(particle.state, posterior, schedule, cand_rng);
            RngStream decode_rng = cand_rng.fork(lanes::kDecode);
            ValueEstimate v = value_fn(z, decode_rng);
            values.push_back(v.value);
            estimates.push_back(v);
            candidates.push_back(std::move(z));
        }
        out.proposal_draws += static_cast<uint64_t>(params.L);

        const std::vector<double> weights = softmax_weights(values, params.alpha_is);
        RngStream pick_rng = level.fork(lanes::kPick);
        const std::size_t choice = pick_rng.categorical(weights);
        particle.state = std::move(candidates[choice]);
        particle.value = estimates[choice];
        // at t = 0 the value estimate coincides with the exact reward
        particle.reward = particle.state.t == 0 ? estimates[choice].value
                                                : std::numeric_limits<double>::quiet_NaN();
    }
    return out;
}

/// Batch-wide selection at t = 0: multinomial resampling with replacement
/// from softmax(rewards / alpha_select). Deterministic given the batch's
/// seed and iteration counter.
inline ParticleBatch selection_step(const ParticleBatch& batch, const GuidanceParams& params) {
    detail::require_uniform_time(batch, "selection_step");
    if (!batch.all_decoded()) throw std::invalid_argument("selection_step: batch must be decoded");
    for (const auto& p : batch.particles)
        if (std::isnan(p.reward)) throw std::invalid_argument("selection_step: rewards not computed");

    const std::vector<double> weights = softmax_weights(batch.rewards(), params.alpha_select);
    RngStream rng = RngStream(batch.provenance.seed)
                        .fork(lanes::kSelect)
                        .fork(static_cast<uint64_t>(batch.iteration));
    ParticleBatch out = batch;
    out.particles = detail::resample(batch.particles, weights, rng, batch.particles.size());
    return out;
}

namespace detail {

/// Shared shape of one refinement iteration: partial noising to level K,
/// a caller-supplied denoising pass K -> 1, the final unguided decode
/// 1 -> 0, reward evaluation, and terminal selection.
template <class DenoisePass>
ParticleBatch refinement_iteration(const ParticleBatch& batch, const TabularModel& model,
                                   const RewardFn& reward, const NoiseSchedule& schedule,
                                   const GuidanceParams& params, DenoisePass&& denoise) {
    params.validate();
    require_uniform_time(batch, "refinement");
    if (!batch.all_decoded()) throw std::invalid_argument("refinement: batch must be decoded");

    ParticleBatch work = batch;
    work.iteration = batch.iteration + 1;
    const uint64_t seed = work.provenance.seed;
    for (std::size_t i = 0; i < work.particles.size(); ++i) {
        auto& particle = work.particles[i];
        const RngStream base =
            particle_stream(seed, static_cast<uint64_t>(work.iteration), static_cast<uint64_t>(i));
        particle.rng_stream = base.stream();
        RngStream noise_rng = base.fork(lanes::kNoise);
        particle.state = forward_noise_to(particle.state, params.K, schedule, noise_rng);
        particle.reward = std::numeric_limits<double>::quiet_NaN();
    }

    work = denoise(std::move(work));

    // final decode 1 -> 0 through the unguided pre-trained kernel
    for (auto& particle : work.particles) {
        RngStream rng = RngStream(seed, particle.rng_stream).fork(lanes::kFinalDecode);
        particle.state = backward_step(particle.state, exact_posterior(model, particle.state),
                                       schedule, rng);
        particle.reward = reward(particle.state);
        particle.value = ValueEstimate{particle.reward, ValueMethod::ApproxDecode, 0.0};
    }
    work.proposal_draws += work.particles.size();

    return selection_step(work, params);
}

} // namespace detail

/// One refinement iteration: noise to level K, guided IS denoising for
/// k = K-1..1, unguided final decode, then terminal selection.
inline ParticleBatch rerd_iteration(const ParticleBatch& batch, const TabularModel& model,
                                    const RewardFn& reward, const NoiseSchedule& schedule,
                                    const GuidanceParams& params, const ValueFn* value_fn = nullptr) {
    const ValueFn scorer =
        value_fn ? *value_fn : make_approx_value_fn(model, reward, params.decode_mode);
    return detail::refinement_iteration(
        batch, model, reward, schedule, params, [&](ParticleBatch work) {
            while (work.particles.front().state.t >= 2)
                work = is_step(work, model, schedule, params, scorer);
            return work;
        });
}

/// GA baseline iteration: identical to rerd_iteration except the guided IS
/// pass is replaced by plain unguided backward steps (no candidate scoring).
inline ParticleBatch ga_iteration(const ParticleBatch& batch, const TabularModel& model,
                                  const RewardFn& reward, const NoiseSchedule& schedule,
                                  const GuidanceParams& params) {
    return detail::refinement_iteration(
        batch, model, reward, schedule, params, [&](ParticleBatch work) {
            while (work.particles.front().state.t >= 2) {
                const int t = work.particles.front().state.t;
                for (auto& particle : work.particles) {
                    RngStream rng = RngStream(work.provenance.seed, particle.rng_stream)
                                        .fork(static_cast<uint64_t>(t))
                                        .fork(0);
                    particle.state = backward_step(
                        particle.state, exact_posterior(model, particle.state), schedule, rng);
                }
                work.proposal_draws += work.particles.size();
            }
            return work;
        });
}

namespace detail {

inline void ensure_rewards(ParticleBatch& batch, const RewardFn& reward) {
    for (auto& p : batch.particles) {
        if (!p.state.fully_decoded()) throw std::invalid_argument("run: initial batch must be decoded");
        if (std::isnan(p.reward)) {
            p.reward = reward(p.state);
            p.value = ValueEstimate{p.reward, ValueMethod::ApproxDecode, 0.0};
        }
    }
}

template <class Iterate>
std::vector<ParticleBatch> run_iterations(const ParticleBatch& init, const RewardFn& reward,
                                          const char* sampler, int iterations, Iterate&& iterate) {
    ParticleBatch current = init;
    current.provenance.sampler = sampler;
    ensure_rewards(current, reward);
    std::vector<ParticleBatch> history;
    history.reserve(static_cast<std::size_t>(iterations) + 1);
    history.push_back(current);
    for (int s = 0; s < iterations; ++s) {
        current = iterate(current);
        history.push_back(current);
    }
    return history;
}

} // namespace detail

/// Full refinement run: S iterations from a decoded initial batch. Returns
/// the whole history (S+1 batches, the initial one included).
inline std::vector<ParticleBatch> rerd_run(const ParticleBatch& init, const TabularModel& model,
                                           const RewardFn& reward, const NoiseSchedule& schedule,
                                           const GuidanceParams& params) {
    params.validate();
    return detail::run_iterations(init, reward, "rerd", params.S, [&](const ParticleBatch& batch) {
        return rerd_iteration(batch, model, reward, schedule, params);
    });
}

/// Backward-kernel draws consumed by one refinement iteration.
inline uint64_t rerd_draws_per_iteration(const GuidanceParams& params) {
    return static_cast<uint64_t>(params.N) *
           (static_cast<uint64_t>(params.L) * static_cast<uint64_t>(params.K - 1) + 1);
}

inline uint64_t ga_draws_per_iteration(const GuidanceParams& params) {
    return static_cast<uint64_t>(params.N) * static_cast<uint64_t>(params.K);
}

/// GA iteration count that matches the refinement run's total backward-kernel
/// draw budget.
inline int matched_ga_iterations(const GuidanceParams& params) {
    const double exact = static_cast<double>(params.S) *
                         static_cast<double>(rerd_draws_per_iteration(params)) /
                         static_cast<double>(ga_draws_per_iteration(params));
    return static_cast<int>(std::llround(exact));
}

/// GA baseline run at a matched compute budget (see matched_ga_iterations).
inline std::vector<ParticleBatch> ga_run(const ParticleBatch& init, const TabularModel& model,
                                         const RewardFn& reward, const NoiseSchedule& schedule,
                                         const GuidanceParams& params, int iterations = -1) {
    params.validate();
    const int total = iterations >= 0 ? iterations : matched_ga_iterations(params);
    return detail::run_iterations(init, reward, "ga", total, [&](const ParticleBatch& batch) {
        return ga_iteration(batch, model, reward, schedule, params);
    });
}

/// Single-shot SVDD-style sampler: start fully masked at t = T and apply the
/// local IS step all the way down to t = 0. No terminal selection.
inline ParticleBatch single_shot_svdd(const TabularModel& model, const RewardFn& reward,
                                      const NoiseSchedule& schedule, const GuidanceParams& params,
                                      uint64_t seed, const ValueFn* value_fn = nullptr) {
    params.validate();
    const ValueFn scorer =
        value_fn ? *value_fn : make_approx_value_fn(model, reward, params.decode_mode);

    ParticleBatch batch;
    batch.provenance = Provenance{"svdd", params, seed};
    batch.particles.resize(static_cast<std::size_t>(params.N));
    for (std::size_t i = 0; i < batch.particles.size(); ++i) {
        batch.particles[i].state = SequenceState::fully_masked(model.length(), schedule.steps());
        batch.particles[i].rng_stream = detail::particle_stream(seed, 0, i).stream();
    }
    while (batch.particles.front().state.t >= 1)
        batch = is_step(batch, model, schedule, params, scorer);
    return batch;
}

/// Single-shot SMC: one unguided proposal per particle per step, then
/// multinomial resampling across the batch at every step t = T..1. When
/// `trace` is given it receives the batch after every resampling event.
inline ParticleBatch single_shot_smc(const TabularModel& model, const RewardFn& reward,
                                     const NoiseSchedule& schedule, const GuidanceParams& params,
                                     uint64_t seed, std::vector<ParticleBatch>* trace = nullptr) {
    params.validate();
    const ValueFn scorer = make_approx_value_fn(model, reward, params.decode_mode);

    ParticleBatch batch;
    batch.provenance = Provenance{"smc", params, seed};
    batch.particles.resize(static_cast<std::size_t>(params.N));
    for (std::size_t i = 0; i < batch.particles.size(); ++i)
        batch.particles[i].state = SequenceState::fully_masked(model.length(), schedule.steps());

    for (int t = schedule.steps(); t >= 1; --t) {
        std::vector<double> values(batch.particles.size());
        for (std::size_t i = 0; i < batch.particles.size(); ++i) {
            auto& particle = batch.particles[i];
            RngStream prop_rng =
                detail::particle_stream(seed, 0, i).fork(static_cast<uint64_t>(t));
            particle.rng_stream = prop_rng.stream();
            particle.state = backward_step(particle.state, exact_posterior(model, particle.state),
                                           schedule, prop_rng);
            RngStream decode_rng = prop_rng.fork(lanes::kDecode);
            particle.value = scorer(particle.state, decode_rng);
            values[i] = particle.value.value;
            particle.reward = particle.state.t == 0 ? particle.value.value
                                                    : std::numeric_limits<double>::quiet_NaN();
        }
        batch.proposal_draws += batch.particles.size();

        const std::vector<double> weights = softmax_weights(values, params.alpha_select);
        RngStream res_rng = RngStream(seed).fork(lanes::kSelect).fork(static_cast<uint64_t>(t));
        batch.particles = detail::resample(batch.particles, weights, res_rng, batch.particles.size());
        if (trace) trace->push_back(batch);
    }
    return batch;
}

/// Number of distinct particle states in a batch.
inline int distinct_states(const ParticleBatch& batch) {
    std::vector<const SequenceState*> seen;
    for (const auto& p : batch.particles) {
        bool found = false;
        for (const auto* s : seen)
            if (*s == p.state) { found = true; break; }
        if (!found) seen.push_back(&p.state);
    }
    return static_cast<int>(seen.size());
}

/// Initial designs from seed data: N draws with replacement from the
/// exp(r/alpha)-weighted empirical distribution over the seeds.
inline ParticleBatch init_from_seed_data(const std::vector<SequenceState>& seeds,
                                         const RewardFn& reward, double alpha, int n,
                                         uint64_t master_seed) {
    if (seeds.empty()) throw std::invalid_argument("init_from_seed_data: no seeds");
    if (n < 1) throw std::invalid_argument("init_from_seed_data: need n >= 1");
    std::vector<double> rewards;
    rewards.reserve(seeds.size());
    for (const auto& s : seeds) {
        if (!s.fully_decoded())
            throw std::invalid_argument("init_from_seed_data: seeds must be decoded");
        rewards.push_back(reward(s));
    }
    const std::vector<double> weights = softmax_weights(rewards, alpha);

    ParticleBatch batch;
    batch.provenance = Provenance{"init-seed-data", GuidanceParams{}, master_seed};
    RngStream rng = RngStream(master_seed).fork(lanes::kInit);
    batch.particles.resize(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < batch.particles.size(); ++i) {
        const std::size_t pick = rng.categorical(weights);
        auto& particle = batch.particles[i];
        particle.state = seeds[pick];
        particle.reward = rewards[pick];
        particle.value = ValueEstimate{rewards[pick], ValueMethod::ApproxDecode, 0.0};
        particle.rng_stream = detail::particle_stream(master_seed, 0, i).stream();
    }
    return batch;
}

/// Unguided ancestral sample: fully masked start, exact decoder, backward
/// steps T..1.
inline SequenceState ancestral_sample(const TabularModel& model, const NoiseSchedule& schedule,
                                      RngStream& rng) {
    SequenceState x = SequenceState::fully_masked(model.length(), schedule.steps());
    for (int t = schedule.steps(); t >= 1; --t)
        x = backward_step(x, exact_posterior(model, x), schedule, rng);
    return x;
}

} // namespace rerd
