#pragma once

// Ground-truth sequence distributions standing in for a pre-trained diffusion
// model: the exact Bayes-optimal denoiser and exact log-likelihoods are
// computed from explicit probability tables, so there is no learning error
// anywhere in the pipeline.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "rerd/diffusion.hpp"
#include "rerd/errors.hpp"
#include "rerd/rng.hpp"

namespace rerd {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Hard ceiling on the number of sequences any exact enumeration may touch.
inline constexpr uint64_t kEnumerationLimit = 1000000;

enum class ModelKind { ExplicitJoint, FactorizedIndependent, FirstOrderMarkov, MixtureOfProducts };

inline std::string to_string(ModelKind kind) {
    switch (kind) {
        case ModelKind::ExplicitJoint: return "explicit-joint";
        case ModelKind::FactorizedIndependent: return "factorized-independent";
        case ModelKind::FirstOrderMarkov: return "first-order-markov";
        case ModelKind::MixtureOfProducts: return "mixture-of-products";
    }
    throw std::invalid_argument("unknown model kind");
}

namespace detail {

inline void check_distribution(const std::vector<double>& probs, const char* what,
                               double tolerance = 1e-9) {
    double sum = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0)) throw std::invalid_argument(std::string(what) + ": negative or NaN probability");
        sum += p;
    }
    if (std::fabs(sum - 1.0) > tolerance)
        throw std::invalid_argument(std::string(what) + ": probabilities sum to " + std::to_string(sum));
}

inline uint64_t checked_pow(uint64_t base, int exp, uint64_t limit) {
    uint64_t value = 1;
    for (int i = 0; i < exp; ++i) {
        if (value > limit / base) return limit + 1;
        value *= base;
    }
    return value;
}

} // namespace detail

/// An explicit distribution p_pre over complete length-d sequences.
///
/// Kinds:
///   explicit-joint          full table over K^d sequences (guarded)
///   factorized-independent  one marginal per position
///   first-order-markov      initial distribution + K x K transition matrix
///   mixture-of-products     weighted mixture of factorized components
class TabularModel {
public:
    static TabularModel explicit_joint(Alphabet alphabet, int length, std::vector<double> probs) {
        TabularModel m(ModelKind::ExplicitJoint, std::move(alphabet), length);
        const uint64_t support = detail::checked_pow(static_cast<uint64_t>(m.alphabet_.size()),
                                                     length, kEnumerationLimit);
        if (support > kEnumerationLimit)
            throw resource_limit_error("explicit-joint model: K^d exceeds the enumerability guard");
        if (probs.size() != support)
            throw std::invalid_argument("explicit-joint model: table size must be K^d");
        detail::check_distribution(probs, "explicit-joint table");
        m.joint_ = std::move(probs);
        m.joint_cdf_.resize(m.joint_.size());
        std::partial_sum(m.joint_.begin(), m.joint_.end(), m.joint_cdf_.begin());
        return m;
    }

    static TabularModel factorized(Alphabet alphabet, std::vector<std::vector<double>> marginals) {
        TabularModel m(ModelKind::FactorizedIndependent, std::move(alphabet),
                       static_cast<int>(marginals.size()));
        if (marginals.empty()) throw std::invalid_argument("factorized model: need d >= 1");
        for (const auto& row : marginals) {
            if (row.size() != static_cast<std::size_t>(m.alphabet_.size()))
                throw std::invalid_argument("factorized model: marginal size must be K");
            detail::check_distribution(row, "factorized marginal");
        }
        m.marginals_ = std::move(marginals);
        return m;
    }

    static TabularModel markov(Alphabet alphabet, int length, std::vector<double> initial,
                               std::vector<std::vector<double>> transition) {
        TabularModel m(ModelKind::FirstOrderMarkov, std::move(alphabet), length);
        const auto K = static_cast<std::size_t>(m.alphabet_.size());
        if (length < 1) throw std::invalid_argument("markov model: need d >= 1");
        if (initial.size() != K) throw std::invalid_argument("markov model: initial size must be K");
        detail::check_distribution(initial, "markov initial");
        if (transition.size() != K) throw std::invalid_argument("markov model: transition must be K x K");
        for (const auto& row : transition) {
            if (row.size() != K) throw std::invalid_argument("markov model: transition must be K x K");
            detail::check_distribution(row, "markov transition row");
        }
        m.initial_ = std::move(initial);
        m.transition_ = std::move(transition);
        return m;
    }

    static TabularModel mixture(Alphabet alphabet, int length, std::vector<double> weights,
                                std::vector<std::vector<std::vector<double>>> components) {
        TabularModel m(ModelKind::MixtureOfProducts, std::move(alphabet), length);
        if (weights.empty() || weights.size() != components.size())
            throw std::invalid_argument("mixture model: weights and components must align");
        detail::check_distribution(weights, "mixture weights");
        for (const auto& comp : components) {
            if (comp.size() != static_cast<std::size_t>(length))
                throw std::invalid_argument("mixture model: component length mismatch");
            for (const auto& row : comp) {
                if (row.size() != static_cast<std::size_t>(m.alphabet_.size()))
                    throw std::invalid_argument("mixture model: component marginal size must be K");
                detail::check_distribution(row, "mixture component marginal");
            }
        }
        m.mixture_weights_ = std::move(weights);
        m.components_ = std::move(components);
        return m;
    }

    ModelKind kind() const { return kind_; }
    const Alphabet& alphabet() const { return alphabet_; }
    int length() const { return length_; }
    int vocab_size() const { return alphabet_.size(); }

    /// Number of sequences in the support grid (K^d), or kEnumerationLimit+1
    /// when it overflows the guard.
    uint64_t grid_size() const {
        return detail::checked_pow(static_cast<uint64_t>(alphabet_.size()), length_, kEnumerationLimit);
    }

    /// Lexicographic index of a decoded sequence (position 0 most significant).
    uint64_t encode(const std::vector<int32_t>& tokens) const {
        uint64_t idx = 0;
        for (int32_t tok : tokens) {
            if (tok < 0 || tok >= alphabet_.size())
                throw std::invalid_argument("encode: token index out of range");
            idx = idx * static_cast<uint64_t>(alphabet_.size()) + static_cast<uint64_t>(tok);
        }
        return idx;
    }

    std::vector<int32_t> decode_index(uint64_t idx) const {
        std::vector<int32_t> tokens(static_cast<std::size_t>(length_));
        for (int j = length_ - 1; j >= 0; --j) {
            tokens[static_cast<std::size_t>(j)] =
                static_cast<int32_t>(idx % static_cast<uint64_t>(alphabet_.size()));
            idx /= static_cast<uint64_t>(alphabet_.size());
        }
        return tokens;
    }

    /// log p_pre(x) of a decoded sequence (not per-token); -inf for
    /// zero-probability sequences.
    double log_prob(const SequenceState& x) const {
        if (!x.fully_decoded()) throw std::invalid_argument("log_prob: sequence must be fully decoded");
        if (x.length() != length_) throw std::invalid_argument("log_prob: length mismatch");
        switch (kind_) {
            case ModelKind::ExplicitJoint: {
                const double p = joint_[static_cast<std::size_t>(encode(x.tokens))];
                return p > 0.0 ? std::log(p) : kNegInf;
            }
            case ModelKind::FactorizedIndependent: {
                double ll = 0.0;
                for (int j = 0; j < length_; ++j) {
                    const double p = marginals_[static_cast<std::size_t>(j)]
                                               [static_cast<std::size_t>(x.tokens[static_cast<std::size_t>(j)])];
                    if (p <= 0.0) return kNegInf;
                    ll += std::log(p);
                }
                return ll;
            }
            case ModelKind::FirstOrderMarkov: {
                double p0 = initial_[static_cast<std::size_t>(x.tokens[0])];
                if (p0 <= 0.0) return kNegInf;
                double ll = std::log(p0);
                for (int j = 1; j < length_; ++j) {
                    const double p = transition_[static_cast<std::size_t>(x.tokens[static_cast<std::size_t>(j - 1)])]
                                                [static_cast<std::size_t>(x.tokens[static_cast<std::size_t>(j)])];
                    if (p <= 0.0) return kNegInf;
                    ll += std::log(p);
                }
                return ll;
            }
            case ModelKind::MixtureOfProducts: {
                // log-sum-exp over components
                double best = kNegInf;
                std::vector<double> terms(mixture_weights_.size(), kNegInf);
                for (std::size_t m = 0; m < mixture_weights_.size(); ++m) {
                    if (mixture_weights_[m] <= 0.0) continue;
                    double term = std::log(mixture_weights_[m]);
                    for (int j = 0; j < length_; ++j) {
                        const double p = components_[m][static_cast<std::size_t>(j)]
                                                    [static_cast<std::size_t>(x.tokens[static_cast<std::size_t>(j)])];
                        if (p <= 0.0) { term = kNegInf; break; }
                        term += std::log(p);
                    }
                    terms[m] = term;
                    best = std::max(best, term);
                }
                if (best == kNegInf) return kNegInf;
                double sum = 0.0;
                for (double term : terms)
                    if (term != kNegInf) sum += std::exp(term - best);
                return best + std::log(sum);
            }
        }
        throw std::logic_error("unreachable");
    }

    const std::vector<double>& joint_table() const {
        if (kind_ != ModelKind::ExplicitJoint) throw std::logic_error("joint_table: wrong kind");
        return joint_;
    }
    const std::vector<std::vector<double>>& marginal_tables() const {
        if (kind_ != ModelKind::FactorizedIndependent) throw std::logic_error("marginal_tables: wrong kind");
        return marginals_;
    }
    const std::vector<double>& initial_table() const {
        if (kind_ != ModelKind::FirstOrderMarkov) throw std::logic_error("initial_table: wrong kind");
        return initial_;
    }
    const std::vector<std::vector<double>>& transition_table() const {
        if (kind_ != ModelKind::FirstOrderMarkov) throw std::logic_error("transition_table: wrong kind");
        return transition_;
    }
    const std::vector<double>& mixture_weight_table() const {
        if (kind_ != ModelKind::MixtureOfProducts) throw std::logic_error("mixture_weight_table: wrong kind");
        return mixture_weights_;
    }
    const std::vector<std::vector<std::vector<double>>>& component_tables() const {
        if (kind_ != ModelKind::MixtureOfProducts) throw std::logic_error("component_tables: wrong kind");
        return components_;
    }
    const std::vector<double>& joint_cdf() const {
        if (kind_ != ModelKind::ExplicitJoint) throw std::logic_error("joint_cdf: wrong kind");
        return joint_cdf_;
    }

private:
    TabularModel(ModelKind kind, Alphabet alphabet, int length)
        : kind_(kind), alphabet_(std::move(alphabet)), length_(length) {
        if (length < 1) throw std::invalid_argument("model: need d >= 1");
    }

    ModelKind kind_;
    Alphabet alphabet_;
    int length_;
    std::vector<double> joint_;
    std::vector<double> joint_cdf_;
    std::vector<std::vector<double>> marginals_;
    std::vector<double> initial_;
    std::vector<std::vector<double>> transition_;
    std::vector<double> mixture_weights_;
    std::vector<std::vector<std::vector<double>>> components_;
};

namespace detail {

/// Visit every completion of the masked positions of `xt`; `body` receives
/// the decoded token vector. Guards the enumeration size.
template <class Body>
void for_each_completion(const TabularModel& model, const SequenceState& xt, Body&& body) {
    std::vector<std::size_t> masked;
    for (std::size_t j = 0; j < xt.tokens.size(); ++j)
        if (xt.tokens[j] == kMasked) masked.push_back(j);
    const uint64_t count = checked_pow(static_cast<uint64_t>(model.vocab_size()),
                                       static_cast<int>(masked.size()), kEnumerationLimit);
    if (count > kEnumerationLimit)
        throw resource_limit_error("completion enumeration exceeds the enumerability guard");

    std::vector<int32_t> tokens = xt.tokens;
    for (std::size_t m : masked) tokens[m] = 0;
    while (true) {
        body(tokens);
        // odometer over masked positions, last position fastest
        std::size_t pos = masked.size();
        while (pos > 0) {
            auto& tok = tokens[masked[pos - 1]];
            if (++tok < model.vocab_size()) break;
            tok = 0;
            --pos;
        }
        if (pos == 0) break;
    }
}

inline PosteriorTable posterior_markov(const TabularModel& model, const SequenceState& xt) {
    const int d = model.length();
    const int K = model.vocab_size();
    const auto& init = model.initial_table();
    const auto& trans = model.transition_table();

    auto evidence = [&](int j, int a) -> double {
        const int32_t tok = xt.tokens[static_cast<std::size_t>(j)];
        return tok == kMasked ? 1.0 : (tok == a ? 1.0 : 0.0);
    };

    // forward-backward over the chain, with per-step normalization of the
    // forward messages to keep them in range
    std::vector<std::vector<double>> fwd(static_cast<std::size_t>(d), std::vector<double>(static_cast<std::size_t>(K)));
    for (int a = 0; a < K; ++a) fwd[0][static_cast<std::size_t>(a)] = init[static_cast<std::size_t>(a)] * evidence(0, a);
    for (int j = 1; j < d; ++j) {
        double scale = 0.0;
        for (double v : fwd[static_cast<std::size_t>(j - 1)]) scale += v;
        if (scale <= 0.0) throw std::invalid_argument("exact_posterior: evidence has zero probability");
        for (int b = 0; b < K; ++b) {
            double acc = 0.0;
            for (int a = 0; a < K; ++a)
                acc += fwd[static_cast<std::size_t>(j - 1)][static_cast<std::size_t>(a)] / scale *
                       trans[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)];
            fwd[static_cast<std::size_t>(j)][static_cast<std::size_t>(b)] = acc * evidence(j, b);
        }
    }

    std::vector<std::vector<double>> bwd(static_cast<std::size_t>(d), std::vector<double>(static_cast<std::size_t>(K), 1.0));
    for (int j = d - 2; j >= 0; --j) {
        double scale = 0.0;
        for (int a = 0; a < K; ++a) {
            double acc = 0.0;
            for (int b = 0; b < K; ++b)
                acc += trans[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] * evidence(j + 1, b) *
                       bwd[static_cast<std::size_t>(j + 1)][static_cast<std::size_t>(b)];
            bwd[static_cast<std::size_t>(j)][static_cast<std::size_t>(a)] = acc;
            scale = std::max(scale, acc);
        }
        if (scale <= 0.0) throw std::invalid_argument("exact_posterior: evidence has zero probability");
        for (int a = 0; a < K; ++a) bwd[static_cast<std::size_t>(j)][static_cast<std::size_t>(a)] /= scale;
    }

    PosteriorTable table;
    table.rows.resize(static_cast<std::size_t>(d));
    for (int j = 0; j < d; ++j) {
        auto& row = table.rows[static_cast<std::size_t>(j)];
        row.assign(static_cast<std::size_t>(K), 0.0);
        double total = 0.0;
        for (int a = 0; a < K; ++a) {
            row[static_cast<std::size_t>(a)] = fwd[static_cast<std::size_t>(j)][static_cast<std::size_t>(a)] *
                                               bwd[static_cast<std::size_t>(j)][static_cast<std::size_t>(a)];
            total += row[static_cast<std::size_t>(a)];
        }
        if (total <= 0.0) throw std::invalid_argument("exact_posterior: evidence has zero probability");
        for (auto& p : row) p /= total;
    }
    return table;
}

} // namespace detail

/// Exact per-position posterior p_pre(x0[j] = . | observed tokens of xt),
/// computed by conditioning / marginalizing the tabular model. Rows for
/// decoded positions are point masses.
inline PosteriorTable exact_posterior(const TabularModel& model, const SequenceState& xt) {
    if (xt.length() != model.length())
        throw std::invalid_argument("exact_posterior: length mismatch");
    for (int32_t tok : xt.tokens)
        if (tok != kMasked && (tok < 0 || tok >= model.vocab_size()))
            throw std::invalid_argument("exact_posterior: token index out of range");

    const int d = model.length();
    const int K = model.vocab_size();

    auto point_mass_rows = [&](PosteriorTable& table) {
        for (int j = 0; j < d; ++j) {
            const int32_t tok = xt.tokens[static_cast<std::size_t>(j)];
            if (tok != kMasked) {
                auto& row = table.rows[static_cast<std::size_t>(j)];
                row.assign(static_cast<std::size_t>(K), 0.0);
                row[static_cast<std::size_t>(tok)] = 1.0;
            }
        }
    };

    switch (model.kind()) {
        case ModelKind::FactorizedIndependent: {
            PosteriorTable table;
            table.rows.resize(static_cast<std::size_t>(d));
            for (int j = 0; j < d; ++j)
                table.rows[static_cast<std::size_t>(j)] = model.marginal_tables()[static_cast<std::size_t>(j)];
            point_mass_rows(table);
            return table;
        }
        case ModelKind::FirstOrderMarkov:
            return detail::posterior_markov(model, xt);
        case ModelKind::MixtureOfProducts: {
            const auto& weights = model.mixture_weight_table();
            const auto& comps = model.component_tables();
            std::vector<double> cond(weights.size());
            double total = 0.0;
            for (std::size_t m = 0; m < weights.size(); ++m) {
                double w = weights[m];
                for (int j = 0; j < d && w > 0.0; ++j) {
                    const int32_t tok = xt.tokens[static_cast<std::size_t>(j)];
                    if (tok != kMasked) w *= comps[m][static_cast<std::size_t>(j)][static_cast<std::size_t>(tok)];
                }
                cond[m] = w;
                total += w;
            }
            if (total <= 0.0) throw std::invalid_argument("exact_posterior: evidence has zero probability");
            PosteriorTable table;
            table.rows.resize(static_cast<std::size_t>(d));
            for (int j = 0; j < d; ++j) {
                auto& row = table.rows[static_cast<std::size_t>(j)];
                row.assign(static_cast<std::size_t>(K), 0.0);
                for (std::size_t m = 0; m < weights.size(); ++m) {
                    if (cond[m] <= 0.0) continue;
                    const double wm = cond[m] / total;
                    for (int a = 0; a < K; ++a)
                        row[static_cast<std::size_t>(a)] +=
                            wm * comps[m][static_cast<std::size_t>(j)][static_cast<std::size_t>(a)];
                }
            }
            point_mass_rows(table);
            return table;
        }
        case ModelKind::ExplicitJoint: {
            const auto& joint = model.joint_table();
            PosteriorTable table;
            table.rows.assign(static_cast<std::size_t>(d), std::vector<double>(static_cast<std::size_t>(K), 0.0));
            double total = 0.0;
            detail::for_each_completion(model, xt, [&](const std::vector<int32_t>& tokens) {
                const double p = joint[static_cast<std::size_t>(model.encode(tokens))];
                if (p <= 0.0) return;
                total += p;
                for (int j = 0; j < d; ++j)
                    table.rows[static_cast<std::size_t>(j)][static_cast<std::size_t>(tokens[static_cast<std::size_t>(j)])] += p;
            });
            if (total <= 0.0) throw std::invalid_argument("exact_posterior: evidence has zero probability");
            for (auto& row : table.rows)
                for (auto& p : row) p /= total;
            point_mass_rows(table);
            return table;
        }
    }
    throw std::logic_error("unreachable");
}

enum class DecodeMode { Greedy, Sampled };

/// Fill every masked position from the posterior: per-position argmax
/// (greedy, ties to the lowest index) or an independent draw (sampled).
/// Decoded positions are copied; the output sits at t = 0.
inline SequenceState point_decode(const PosteriorTable& posterior, const SequenceState& xt,
                                  DecodeMode mode = DecodeMode::Greedy, RngStream* rng = nullptr) {
    if (posterior.rows.size() != xt.tokens.size())
        throw std::invalid_argument("point_decode: posterior size mismatch");
    SequenceState out = xt;
    out.t = 0;
    for (std::size_t j = 0; j < out.tokens.size(); ++j) {
        if (out.tokens[j] != kMasked) continue;
        const auto& row = posterior.rows[j];
        if (mode == DecodeMode::Greedy) {
            std::size_t best = 0;
            for (std::size_t a = 1; a < row.size(); ++a)
                if (row[a] > row[best]) best = a;
            out.tokens[j] = static_cast<int32_t>(best);
        } else {
            if (rng == nullptr) throw std::invalid_argument("point_decode: sampled mode needs an RNG stream");
            out.tokens[j] = static_cast<int32_t>(rng->categorical(row));
        }
    }
    return out;
}

/// Exact per-token log-likelihood log p_pre(x) / d; -inf sentinel for
/// zero-probability sequences.
inline double loglik(const TabularModel& model, const SequenceState& x) {
    const double lp = model.log_prob(x);
    return lp == kNegInf ? kNegInf : lp / model.length();
}

/// Exact draw from p_pre.
inline SequenceState sample_prior(const TabularModel& model, RngStream& rng) {
    const int d = model.length();
    std::vector<int32_t> tokens(static_cast<std::size_t>(d));
    switch (model.kind()) {
        case ModelKind::ExplicitJoint: {
            const auto& cdf = model.joint_cdf();
            const double u = rng.next_unit();
            std::size_t idx = static_cast<std::size_t>(
                std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
            if (idx >= cdf.size()) idx = cdf.size() - 1;
            tokens = model.decode_index(idx);
            break;
        }
        case ModelKind::FactorizedIndependent: {
            for (int j = 0; j < d; ++j)
                tokens[static_cast<std::size_t>(j)] =
                    static_cast<int32_t>(rng.categorical(model.marginal_tables()[static_cast<std::size_t>(j)]));
            break;
        }
        case ModelKind::FirstOrderMarkov: {
            tokens[0] = static_cast<int32_t>(rng.categorical(model.initial_table()));
            for (int j = 1; j < d; ++j)
                tokens[static_cast<std::size_t>(j)] = static_cast<int32_t>(
                    rng.categorical(model.transition_table()[static_cast<std::size_t>(tokens[static_cast<std::size_t>(j - 1)])]));
            break;
        }
        case ModelKind::MixtureOfProducts: {
            const auto m = rng.categorical(model.mixture_weight_table());
            for (int j = 0; j < d; ++j)
                tokens[static_cast<std::size_t>(j)] =
                    static_cast<int32_t>(rng.categorical(model.component_tables()[m][static_cast<std::size_t>(j)]));
            break;
        }
    }
    return SequenceState(std::move(tokens), 0);
}

} // namespace rerd
