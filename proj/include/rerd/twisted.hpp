#pragma once

// Exact soft-optimal sampling on enumerable instances: the pre-trained
// backward kernel reweighted by exp(v(x_{t-1}) / alpha) and renormalized,
// where v is the exact soft value. Kernel tables and soft values are
// memoized; the soft value depends on a state only through its decoded
// evidence, never through the time index, so the cache is small.

#include <algorithm>
#include <cstdint>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rerd/diffusion.hpp"
#include "rerd/errors.hpp"
#include "rerd/guidance.hpp"
#include "rerd/model.hpp"
#include "rerd/reward.hpp"
#include "rerd/rng.hpp"

namespace rerd {

namespace detail {

/// Mixed-radix encoding of a possibly-masked state: digit 0 = masked,
/// digit a+1 = token a. Guards against overflow of the (K+1)^d grid.
inline uint64_t encode_masked_state(const SequenceState& x, int vocab_size) {
    const uint64_t base = static_cast<uint64_t>(vocab_size) + 1;
    uint64_t key = 0;
    for (int32_t tok : x.tokens) {
        if (key > (UINT64_MAX - base) / base)
            throw resource_limit_error("state space exceeds the enumerability guard");
        key = key * base + static_cast<uint64_t>(tok == kMasked ? 0 : tok + 1);
    }
    return key;
}

} // namespace detail

/// Enumerate the support of the unguided backward kernel from `xt`: every
/// reachable x_{t-1} together with its exact transition probability.
inline std::vector<std::pair<SequenceState, double>>
enumerate_backward_kernel(const TabularModel& model, const SequenceState& xt,
                          const NoiseSchedule& schedule) {
    const int t = xt.t;
    if (t < 1 || t > schedule.steps())
        throw std::invalid_argument("enumerate_backward_kernel: state time must lie in [1, T]");

    std::vector<std::size_t> masked;
    for (std::size_t j = 0; j < xt.tokens.size(); ++j)
        if (xt.tokens[j] == kMasked) masked.push_back(j);

    const double denom = 1.0 - schedule.alpha_bar(t);
    if (!masked.empty() && denom <= 0.0)
        throw std::invalid_argument("enumerate_backward_kernel: masked position at alpha_bar(t) = 1");
    const double stay = denom > 0.0 ? (1.0 - schedule.alpha_bar(t - 1)) / denom : 0.0;
    const double fill = 1.0 - stay;

    const uint64_t support = detail::checked_pow(static_cast<uint64_t>(model.vocab_size()) + 1,
                                                 static_cast<int>(masked.size()), kEnumerationLimit);
    if (support > kEnumerationLimit)
        throw resource_limit_error("backward kernel support exceeds the enumerability guard");

    const PosteriorTable posterior = masked.empty() ? PosteriorTable{} : exact_posterior(model, xt);

    std::vector<std::pair<SequenceState, double>> out;
    SequenceState current = xt;
    current.t = t - 1;

    auto recurse = [&](auto&& self, std::size_t pos, double prob) -> void {
        if (prob <= 0.0) return;
        if (pos == masked.size()) {
            out.emplace_back(current, prob);
            return;
        }
        const std::size_t j = masked[pos];
        if (stay > 0.0) {
            current.tokens[j] = kMasked;
            self(self, pos + 1, prob * stay);
        }
        const auto& row = posterior.at(static_cast<int>(j));
        for (std::size_t a = 0; a < row.size(); ++a) {
            if (row[a] <= 0.0) continue;
            current.tokens[j] = static_cast<int32_t>(a);
            self(self, pos + 1, prob * fill * row[a]);
        }
        current.tokens[j] = kMasked;
    };
    recurse(recurse, 0, 1.0);
    return out;
}

/// Sampler over sequences following the exactly renormalized twisted kernels
/// p*_t(. | x_t) proportional to exp(v(.)/alpha) * p_pre_t(. | x_t).
///
/// Lazy caches make repeated sampling cheap; instances are not safe for
/// concurrent use.
class TwistedKernelSampler {
public:
    TwistedKernelSampler(const TabularModel& model, RewardFn reward, double alpha,
                         NoiseSchedule schedule)
        : model_(&model), reward_(std::move(reward)), alpha_(alpha), schedule_(std::move(schedule)) {
        if (!(alpha > 0.0)) throw std::invalid_argument("twisted sampler: alpha must be > 0");
        // fail fast when the masked state space cannot be enumerated
        (void)detail::encode_masked_state(SequenceState::fully_masked(model.length(), 0),
                                          model.vocab_size());
    }

    double alpha() const { return alpha_; }
    const NoiseSchedule& schedule() const { return schedule_; }

    /// Exact soft value of a state (cached by decoded evidence).
    double soft_value(const SequenceState& x) const {
        const uint64_t key = detail::encode_masked_state(x, model_->vocab_size());
        if (auto it = value_cache_.find(key); it != value_cache_.end()) return it->second;
        const double v = exact_soft_value(*model_, reward_, x, alpha_).value;
        value_cache_.emplace(key, v);
        return v;
    }

    /// One twisted backward step t -> t-1.
    SequenceState step(const SequenceState& xt, RngStream& rng) const {
        const KernelTable& table = kernel(xt);
        const double u = rng.next_unit();
        std::size_t idx = static_cast<std::size_t>(
            std::upper_bound(table.cumulative.begin(), table.cumulative.end(), u) -
            table.cumulative.begin());
        if (idx >= table.states.size()) idx = table.states.size() - 1;
        return table.states[idx];
    }

    /// Twisted denoising from the state's current level all the way to t = 0.
    SequenceState denoise(SequenceState xt, RngStream& rng) const {
        while (xt.t >= 1) xt = step(xt, rng);
        return xt;
    }

    /// Terminal sample: twisted denoising from the fully masked state at T.
    SequenceState sample(RngStream& rng) const {
        return denoise(SequenceState::fully_masked(model_->length(), schedule_.steps()), rng);
    }

private:
    struct KernelTable {
        std::vector<SequenceState> states;
        std::vector<double> cumulative;
    };

    const KernelTable& kernel(const SequenceState& xt) const {
        const uint64_t state_key = detail::encode_masked_state(xt, model_->vocab_size());
        const uint64_t key =
            state_key * (static_cast<uint64_t>(schedule_.steps()) + 1) + static_cast<uint64_t>(xt.t);
        if (auto it = kernel_cache_.find(key); it != kernel_cache_.end()) return it->second;

        const auto support = enumerate_backward_kernel(*model_, xt, schedule_);
        KernelTable table;
        table.states.reserve(support.size());
        std::vector<double> log_weights;
        log_weights.reserve(support.size());
        double max_lw = kNegInf;
        for (const auto& [state, prob] : support) {
            const double lw = std::log(prob) + soft_value(state) / alpha_;
            log_weights.push_back(lw);
            max_lw = std::max(max_lw, lw);
            table.states.push_back(state);
        }
        if (max_lw == kNegInf)
            throw degenerate_weights_error("twisted kernel: all transitions have zero weight");
        double total = 0.0;
        for (double lw : log_weights) total += std::exp(lw - max_lw);
        table.cumulative.resize(log_weights.size());
        double acc = 0.0;
        for (std::size_t i = 0; i < log_weights.size(); ++i) {
            acc += std::exp(log_weights[i] - max_lw) / total;
            table.cumulative[i] = acc;
        }
        table.cumulative.back() = 1.0;
        return kernel_cache_.emplace(key, std::move(table)).first->second;
    }

    const TabularModel* model_;
    RewardFn reward_;
    double alpha_;
    NoiseSchedule schedule_;
    mutable std::unordered_map<uint64_t, double> value_cache_;
    mutable std::unordered_map<uint64_t, KernelTable> kernel_cache_;
};

/// The oracle sampler over sequences for invariance tests: exact soft values,
/// exactly renormalized twisted kernels, no selection step.
inline TwistedKernelSampler exact_soft_optimal_run(const TabularModel& model, RewardFn reward,
                                                   double alpha, const NoiseSchedule& schedule) {
    return TwistedKernelSampler(model, std::move(reward), alpha, schedule);
}

} // namespace rerd
