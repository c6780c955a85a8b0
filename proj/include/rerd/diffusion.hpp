#pragma once

// Masked-diffusion state representation, noise schedules, and the forward /
// backward kernels, applied position-independently to token sequences.
//
// The forward process replaces tokens with a distinguished mask symbol; the
// backward process fills masks and never touches already-decoded positions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rerd/errors.hpp"
#include "rerd/rng.hpp"

namespace rerd {

/// Sentinel for a masked position.
inline constexpr int32_t kMasked = -1;

/// Token vocabulary plus a distinguished mask symbol. Token indices are
/// stable and contiguous 0..K-1.
struct Alphabet {
    std::vector<std::string> tokens;
    std::string mask = "?";

    Alphabet() = default;
    Alphabet(std::vector<std::string> toks, std::string mask_symbol = "?")
        : tokens(std::move(toks)), mask(std::move(mask_symbol)) {
        if (tokens.size() < 2) throw std::invalid_argument("alphabet: need at least 2 tokens");
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            if (tokens[i] == mask) throw std::invalid_argument("alphabet: mask symbol collides with a token");
            for (std::size_t j = i + 1; j < tokens.size(); ++j)
                if (tokens[i] == tokens[j]) throw std::invalid_argument("alphabet: duplicate token " + tokens[i]);
        }
    }

    int size() const { return static_cast<int>(tokens.size()); }

    int index_of(const std::string& symbol) const {
        for (std::size_t i = 0; i < tokens.size(); ++i)
            if (tokens[i] == symbol) return static_cast<int>(i);
        throw std::invalid_argument("alphabet: unknown token " + symbol);
    }
};

/// Per-step retention probabilities alpha_t and cumulative alpha_bar_t over T
/// steps, with alpha_bar_0 = 1 and alpha_bar non-increasing.
class NoiseSchedule {
public:
    static NoiseSchedule from_alpha_bar(std::vector<double> alpha_bar) {
        if (alpha_bar.size() < 2) throw std::invalid_argument("schedule: need T >= 1");
        if (alpha_bar.front() != 1.0) throw std::invalid_argument("schedule: alpha_bar_0 must be 1");
        const double last = alpha_bar.back();
        if (!(last >= 0.0) || last >= 1.0)
            throw std::invalid_argument("schedule: alpha_bar_T must lie in [0,1)");
        std::vector<double> alpha(alpha_bar.size() - 1);
        for (std::size_t t = 1; t < alpha_bar.size(); ++t) {
            if (alpha_bar[t] < 0.0 || alpha_bar[t] > alpha_bar[t - 1] + 1e-12)
                throw std::invalid_argument("schedule: alpha_bar must be non-increasing in [0,1]");
            alpha[t - 1] = alpha_bar[t - 1] > 0.0 ? alpha_bar[t] / alpha_bar[t - 1] : 0.0;
        }
        return NoiseSchedule(std::move(alpha), std::move(alpha_bar));
    }

    int steps() const { return static_cast<int>(alpha_.size()); }

    /// alpha_t for t in [1, T].
    double alpha(int t) const {
        if (t < 1 || t > steps()) throw std::invalid_argument("schedule: alpha(t) needs 1 <= t <= T");
        return alpha_[static_cast<std::size_t>(t) - 1];
    }

    /// alpha_bar_t for t in [0, T].
    double alpha_bar(int t) const {
        if (t < 0 || t > steps()) throw std::invalid_argument("schedule: alpha_bar(t) needs 0 <= t <= T");
        return alpha_bar_[static_cast<std::size_t>(t)];
    }

private:
    NoiseSchedule(std::vector<double> alpha, std::vector<double> alpha_bar)
        : alpha_(std::move(alpha)), alpha_bar_(std::move(alpha_bar)) {}

    std::vector<double> alpha_;     // alpha_[t-1] = alpha_t
    std::vector<double> alpha_bar_; // alpha_bar_[t], t = 0..T
};

/// Linear schedule: alpha_bar_t = 1 - t/T, so the stationary start state at
/// t = T is fully masked.
inline NoiseSchedule linear_schedule(int steps) {
    if (steps < 1) throw std::invalid_argument("linear_schedule: T must be >= 1");
    std::vector<double> alpha_bar(static_cast<std::size_t>(steps) + 1);
    for (int t = 0; t <= steps; ++t)
        alpha_bar[static_cast<std::size_t>(t)] = 1.0 - static_cast<double>(t) / steps;
    alpha_bar.back() = 0.0;
    return NoiseSchedule::from_alpha_bar(std::move(alpha_bar));
}

/// A length-d token sequence where any subset of positions may be masked,
/// tagged with its diffusion time index. At t = 0 no position is masked.
struct SequenceState {
    std::vector<int32_t> tokens;
    int t = 0;

    SequenceState() = default;
    SequenceState(std::vector<int32_t> toks, int time) : tokens(std::move(toks)), t(time) {}

    static SequenceState fully_masked(int length, int time) {
        return SequenceState(std::vector<int32_t>(static_cast<std::size_t>(length), kMasked), time);
    }

    int length() const { return static_cast<int>(tokens.size()); }

    int masked_count() const {
        return static_cast<int>(std::count(tokens.begin(), tokens.end(), kMasked));
    }

    bool fully_decoded() const { return masked_count() == 0; }

    bool operator==(const SequenceState& other) const = default;
};

/// Per-position token distributions; rows for decoded positions are point
/// masses on the observed token.
struct PosteriorTable {
    std::vector<std::vector<double>> rows; // one row per position, K entries each

    const std::vector<double>& at(int position) const {
        return rows[static_cast<std::size_t>(position)];
    }
};

namespace detail {

inline void check_posterior_row(const std::vector<double>& row) {
    double sum = 0.0;
    for (double p : row) {
        if (!(p >= 0.0)) throw std::invalid_argument("posterior row has a negative or NaN entry");
        sum += p;
    }
    if (std::fabs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("posterior row does not sum to 1");
}

} // namespace detail

/// Jump from a decoded sequence straight to step k: each position is
/// independently retained with probability alpha_bar_k, else masked. This is
/// the closed form of composing k single-step forward kernels.
inline SequenceState forward_noise_to(const SequenceState& x0, int k, const NoiseSchedule& schedule,
                                      RngStream& rng) {
    if (k < 0 || k > schedule.steps())
        throw std::invalid_argument("forward_noise_to: k out of range");
    if (!x0.fully_decoded())
        throw std::invalid_argument("forward_noise_to: input must be fully decoded");
    const double keep = schedule.alpha_bar(k);
    SequenceState out = x0;
    out.t = k;
    for (auto& tok : out.tokens)
        if (!(rng.next_unit() < keep)) tok = kMasked;
    return out;
}

/// One backward step t -> t-1. Decoded positions are copied verbatim; each
/// masked position independently stays masked with probability
/// (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t), else is filled with a token
/// drawn from the decoder posterior for that position.
inline SequenceState backward_step(const SequenceState& xt, const PosteriorTable& posterior,
                                   const NoiseSchedule& schedule, RngStream& rng) {
    const int t = xt.t;
    if (t < 1 || t > schedule.steps())
        throw std::invalid_argument("backward_step: state time must lie in [1, T]");
    if (posterior.rows.size() != xt.tokens.size())
        throw std::invalid_argument("backward_step: posterior size mismatch");

    const double denom = 1.0 - schedule.alpha_bar(t);
    const double stay = denom > 0.0 ? (1.0 - schedule.alpha_bar(t - 1)) / denom : 0.0;

    SequenceState out = xt;
    out.t = t - 1;
    for (std::size_t j = 0; j < out.tokens.size(); ++j) {
        if (out.tokens[j] != kMasked) continue; // Dirac branch
        if (denom <= 0.0)
            throw std::invalid_argument("backward_step: masked position at a step with alpha_bar(t) = 1");
        const auto& row = posterior.at(static_cast<int>(j));
        detail::check_posterior_row(row);
        if (rng.next_unit() < stay) continue;
        out.tokens[j] = static_cast<int32_t>(rng.categorical(row));
    }
    return out;
}

} // namespace rerd
