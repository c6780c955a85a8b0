#pragma once

// Reward functions, constraint wrappers, and soft-value machinery. Samplers
// see rewards as black-box scalar evaluators; no gradients anywhere.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "rerd/diffusion.hpp"
#include "rerd/errors.hpp"
#include "rerd/model.hpp"

namespace rerd {

enum class RewardKind { PatternMatch, MotifCount, Composite };

/// A declarative reward: fraction of positions matching a fixed target
/// (pattern-match, in [0,1]), occurrences of one token (motif-count, in
/// [0,d]), or a weighted sum of sub-rewards (composite).
struct RewardSpec {
    RewardKind kind = RewardKind::PatternMatch;
    std::vector<int32_t> target;                           // pattern-match
    int32_t motif_token = -1;                              // motif-count
    std::vector<std::pair<double, RewardSpec>> components; // composite

    static RewardSpec pattern_match(std::vector<int32_t> target_tokens) {
        RewardSpec spec;
        spec.kind = RewardKind::PatternMatch;
        spec.target = std::move(target_tokens);
        if (spec.target.empty()) throw std::invalid_argument("pattern-match: empty target");
        return spec;
    }

    static RewardSpec motif_count(int32_t token) {
        RewardSpec spec;
        spec.kind = RewardKind::MotifCount;
        spec.motif_token = token;
        if (token < 0) throw std::invalid_argument("motif-count: token index must be >= 0");
        return spec;
    }

    static RewardSpec composite(std::vector<std::pair<double, RewardSpec>> parts) {
        RewardSpec spec;
        spec.kind = RewardKind::Composite;
        spec.components = std::move(parts);
        if (spec.components.empty()) throw std::invalid_argument("composite: no components");
        return spec;
    }
};

inline double eval_reward(const RewardSpec& spec, const SequenceState& x) {
    if (!x.fully_decoded()) throw std::invalid_argument("eval_reward: sequence must be fully decoded");
    switch (spec.kind) {
        case RewardKind::PatternMatch: {
            if (spec.target.size() != x.tokens.size())
                throw std::invalid_argument("eval_reward: target length does not match sequence length");
            int matches = 0;
            for (std::size_t j = 0; j < x.tokens.size(); ++j)
                if (x.tokens[j] == spec.target[j]) ++matches;
            return static_cast<double>(matches) / static_cast<double>(x.tokens.size());
        }
        case RewardKind::MotifCount: {
            int count = 0;
            for (int32_t tok : x.tokens)
                if (tok == spec.motif_token) ++count;
            return static_cast<double>(count);
        }
        case RewardKind::Composite: {
            double total = 0.0;
            for (const auto& [weight, part] : spec.components) total += weight * eval_reward(part, x);
            return total;
        }
    }
    throw std::logic_error("unreachable");
}

enum class ConstraintMode { Indicator, LogBarrier };

struct ConstraintTerm {
    RewardSpec reward;
    double threshold = 0.0;
};

/// Secondary rewards with thresholds: feasible means r2_j(x) < c_j for all j.
struct ConstraintSpec {
    std::vector<ConstraintTerm> terms;
    double barrier_floor = 1e-3;
    ConstraintMode mode = ConstraintMode::LogBarrier;

    void validate() const {
        if (!(barrier_floor > 0.0)) throw std::invalid_argument("constraint: barrier floor must be > 0");
        for (const auto& term : terms)
            if (!std::isfinite(term.threshold))
                throw std::invalid_argument("constraint: thresholds must be finite");
    }
};

inline bool satisfies(const ConstraintSpec& cons, const SequenceState& x) {
    for (const auto& term : cons.terms)
        if (!(eval_reward(term.reward, x) < term.threshold)) return false;
    return true;
}

/// indicator:   r1(x) * prod_j I(r2_j(x) < c_j)
/// log-barrier: r1(x) + sum_j log(max(c_j - r2_j(x), barrier floor))
inline double constrained_reward(const ConstraintSpec& cons, const RewardSpec& primary,
                                 const SequenceState& x) {
    cons.validate();
    const double r1 = eval_reward(primary, x);
    if (cons.mode == ConstraintMode::Indicator)
        return satisfies(cons, x) ? r1 : 0.0;
    double total = r1;
    for (const auto& term : cons.terms)
        total += std::log(std::max(term.threshold - eval_reward(term.reward, x), cons.barrier_floor));
    return total;
}

/// Black-box scalar reward evaluator, the only view samplers get.
using RewardFn = std::function<double(const SequenceState&)>;

inline RewardFn make_reward(RewardSpec spec) {
    return [spec = std::move(spec)](const SequenceState& x) { return eval_reward(spec, x); };
}

inline RewardFn make_constrained_reward(ConstraintSpec cons, RewardSpec primary) {
    cons.validate();
    return [cons = std::move(cons), primary = std::move(primary)](const SequenceState& x) {
        return constrained_reward(cons, primary, x);
    };
}

enum class ValueMethod { ApproxDecode, ExactEnumeration };

/// A look-ahead estimate of the terminal reward from a (partially masked)
/// state. Exact-enumeration values at t = 0 equal the raw reward exactly.
struct ValueEstimate {
    double value = 0.0;
    ValueMethod method = ValueMethod::ApproxDecode;
    double alpha = 0.0;
};

/// Decode-and-score value approximation: the reward of the point decode of
/// the exact posterior. Cheap, and exact once the state is fully decoded.
inline ValueEstimate approx_value(const TabularModel& model, const RewardFn& reward,
                                  const SequenceState& xt, DecodeMode mode = DecodeMode::Greedy,
                                  RngStream* rng = nullptr) {
    SequenceState decoded = xt.fully_decoded()
                                ? SequenceState(xt.tokens, 0)
                                : point_decode(exact_posterior(model, xt), xt, mode, rng);
    return ValueEstimate{reward(decoded), ValueMethod::ApproxDecode, 0.0};
}

/// Exact soft value by enumeration:
///   v(xt) = alpha * log sum_{x0 completes xt} p_pre(x0 | xt) exp(r(x0)/alpha),
/// evaluated in log space so small alpha stays stable. Depends on xt only
/// through its decoded evidence, not its time index.
inline ValueEstimate exact_soft_value(const TabularModel& model, const RewardFn& reward,
                                      const SequenceState& xt, double alpha) {
    if (!(alpha > 0.0)) throw std::invalid_argument("exact_soft_value: alpha must be > 0");
    if (xt.fully_decoded())
        return ValueEstimate{reward(SequenceState(xt.tokens, 0)), ValueMethod::ExactEnumeration, alpha};

    // Accumulate max-shifted terms log p(x0) + r(x0)/alpha and log p(x0);
    // the conditional normalizer cancels in the difference.
    std::vector<double> tilted;
    std::vector<double> plain;
    detail::for_each_completion(model, xt, [&](const std::vector<int32_t>& tokens) {
        const double lp = model.log_prob(SequenceState(tokens, 0));
        if (lp == kNegInf) return;
        const double r = reward(SequenceState(tokens, 0));
        tilted.push_back(lp + r / alpha);
        plain.push_back(lp);
    });
    if (plain.empty()) throw std::invalid_argument("exact_soft_value: evidence has zero probability");

    auto log_sum_exp = [](const std::vector<double>& terms) {
        double m = kNegInf;
        for (double t : terms) m = std::max(m, t);
        double s = 0.0;
        for (double t : terms) s += std::exp(t - m);
        return m + std::log(s);
    };
    const double value = alpha * (log_sum_exp(tilted) - log_sum_exp(plain));
    return ValueEstimate{value, ValueMethod::ExactEnumeration, alpha};
}

} // namespace rerd
