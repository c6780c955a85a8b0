#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "rerd/model.hpp"

using namespace rerd;

namespace {

const Alphabet kAB({"A", "B"});
const Alphabet kABC({"A", "B", "C"});

TabularModel markov_chain_d2() {
    // uniform initial, strongly sticky-to-B after A
    return TabularModel::markov(kAB, 2, {0.5, 0.5}, {{0.1, 0.9}, {0.5, 0.5}});
}

/// Explicit-joint copy of any enumerable model (an independent route through
/// the probability tables, used as a cross-check oracle).
TabularModel to_explicit(const TabularModel& model) {
    std::vector<double> probs(model.grid_size());
    for (uint64_t i = 0; i < probs.size(); ++i) {
        const double lp = model.log_prob(SequenceState(model.decode_index(i), 0));
        probs[i] = lp == kNegInf ? 0.0 : std::exp(lp);
    }
    return TabularModel::explicit_joint(model.alphabet(), model.length(), std::move(probs));
}

} // namespace

TEST_CASE("posterior of a decoded state is a point mass") {
    const TabularModel model = markov_chain_d2();
    const PosteriorTable post = exact_posterior(model, SequenceState({0, 1}, 0));
    REQUIRE(post.at(0) == std::vector<double>{1.0, 0.0});
    REQUIRE(post.at(1) == std::vector<double>{0.0, 1.0});
}

TEST_CASE("posterior of a fully masked state gives the marginals") {
    const TabularModel model =
        TabularModel::factorized(kABC, {{0.2, 0.3, 0.5}, {0.6, 0.1, 0.3}});
    const PosteriorTable post = exact_posterior(model, SequenceState({kMasked, kMasked}, 5));
    REQUIRE(post.at(0) == std::vector<double>{0.2, 0.3, 0.5});
    REQUIRE(post.at(1) == std::vector<double>{0.6, 0.1, 0.3});
}

TEST_CASE("markov posterior conditions on the evidence") {
    // enumerate the 2-position chain by hand: p(x1 = b | x0 = A) = P(b | A)
    const TabularModel model = markov_chain_d2();
    const PosteriorTable post = exact_posterior(model, SequenceState({0, kMasked}, 1));
    REQUIRE(post.at(1)[1] == Catch::Approx(0.9).epsilon(1e-12));
    REQUIRE(post.at(1)[0] == Catch::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("posteriors agree across model representations") {
    const TabularModel markov =
        TabularModel::markov(kABC, 3, {0.5, 0.3, 0.2},
                             {{0.6, 0.2, 0.2}, {0.1, 0.8, 0.1}, {0.3, 0.3, 0.4}});
    const TabularModel joint = to_explicit(markov);
    const std::vector<SequenceState> states = {
        SequenceState({kMasked, kMasked, kMasked}, 3),
        SequenceState({0, kMasked, kMasked}, 2),
        SequenceState({kMasked, 1, kMasked}, 2),
        SequenceState({kMasked, kMasked, 2}, 1),
        SequenceState({2, kMasked, 0}, 1),
    };
    for (const auto& xt : states) {
        const PosteriorTable a = exact_posterior(markov, xt);
        const PosteriorTable b = exact_posterior(joint, xt);
        for (std::size_t j = 0; j < a.rows.size(); ++j)
            for (std::size_t k = 0; k < a.rows[j].size(); ++k)
                REQUIRE(a.rows[j][k] == Catch::Approx(b.rows[j][k]).margin(1e-12));
    }
}

TEST_CASE("mixture posterior reweights components by the evidence") {
    // two product components; observing token 0 at position 0 favors comp 0
    const TabularModel model = TabularModel::mixture(
        kAB, 2, {0.5, 0.5},
        {{{0.9, 0.1}, {0.8, 0.2}}, {{0.1, 0.9}, {0.2, 0.8}}});
    const PosteriorTable post = exact_posterior(model, SequenceState({0, kMasked}, 1));
    // oracle: w0' = 0.5*0.9 / (0.5*0.9 + 0.5*0.1) = 0.9
    const double expected = 0.9 * 0.8 + 0.1 * 0.2;
    REQUIRE(post.at(1)[0] == Catch::Approx(expected).epsilon(1e-12));
    const PosteriorTable joint_post = exact_posterior(to_explicit(model), SequenceState({0, kMasked}, 1));
    REQUIRE(post.at(1)[0] == Catch::Approx(joint_post.at(1)[0]).epsilon(1e-12));
}

TEST_CASE("impossible evidence is rejected") {
    const TabularModel model = TabularModel::explicit_joint(kAB, 1, {1.0, 0.0});
    REQUIRE_THROWS_AS(exact_posterior(model, SequenceState({1}, 0)), std::invalid_argument);
}

TEST_CASE("point decode") {
    const SequenceState decoded({1, 0}, 0);
    PosteriorTable post;
    post.rows = {{0.0, 1.0, 0.0}, {1.0, 0.0, 0.0}};
    REQUIRE(point_decode(post, decoded).tokens == decoded.tokens);

    PosteriorTable skew;
    skew.rows = {{0.1, 0.7, 0.2}};
    REQUIRE(point_decode(skew, SequenceState({kMasked}, 2)).tokens == std::vector<int32_t>{1});

    PosteriorTable even;
    even.rows = {{0.5, 0.5}};
    RngStream rng(11);
    const int n = 100000;
    int zeros = 0;
    for (int i = 0; i < n; ++i)
        if (point_decode(even, SequenceState({kMasked}, 2), DecodeMode::Sampled, &rng).tokens[0] == 0)
            ++zeros;
    REQUIRE(std::fabs(static_cast<double>(zeros) / n - 0.5) < 0.01);

    REQUIRE_THROWS_AS(point_decode(even, SequenceState({kMasked}, 2), DecodeMode::Sampled, nullptr),
                      std::invalid_argument);
}

TEST_CASE("loglik closed forms") {
    const Alphabet four({"A", "B", "C", "D"});
    std::vector<std::vector<double>> uniform(10, std::vector<double>(4, 0.25));
    const TabularModel model = TabularModel::factorized(four, uniform);
    const SequenceState x(std::vector<int32_t>(10, 2), 0);
    REQUIRE(loglik(model, x) == Catch::Approx(std::log(0.25)).epsilon(1e-12));

    const TabularModel point = TabularModel::explicit_joint(kAB, 2, {0.0, 1.0, 0.0, 0.0});
    REQUIRE(loglik(point, SequenceState({0, 1}, 0)) == 0.0);
    REQUIRE(loglik(point, SequenceState({1, 1}, 0)) == kNegInf);
}

TEST_CASE("loglik sums to one over the grid") {
    const TabularModel model = TabularModel::explicit_joint(
        kABC, 2, {0.05, 0.1, 0.15, 0.2, 0.05, 0.05, 0.1, 0.15, 0.15});
    double total = 0.0;
    for (uint64_t i = 0; i < model.grid_size(); ++i) {
        const double ll = loglik(model, SequenceState(model.decode_index(i), 0));
        if (ll != kNegInf) total += std::exp(static_cast<double>(model.length()) * ll);
    }
    REQUIRE(total == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("prior sampling matches the tables") {
    const TabularModel point = TabularModel::explicit_joint(kAB, 2, {0.0, 1.0, 0.0, 0.0});
    RngStream rng(21);
    for (int i = 0; i < 100; ++i)
        REQUIRE(sample_prior(point, rng).tokens == std::vector<int32_t>{0, 1});

    const TabularModel coin = TabularModel::factorized(kAB, {{0.5, 0.5}});
    const int n = 100000;
    int zeros = 0;
    for (int i = 0; i < n; ++i)
        if (sample_prior(coin, rng).tokens[0] == 0) ++zeros;
    REQUIRE(std::fabs(static_cast<double>(zeros) / n - 0.5) < 0.01);

    // degenerate mixture: weight 1 on a point-mass component
    const TabularModel mix = TabularModel::mixture(
        kAB, 2, {1.0, 0.0},
        {{{1.0, 0.0}, {0.0, 1.0}}, {{0.5, 0.5}, {0.5, 0.5}}});
    for (int i = 0; i < 10000; ++i)
        REQUIRE(sample_prior(mix, rng).tokens == std::vector<int32_t>{0, 1});
}

TEST_CASE("tower property: posteriors average back to the marginals") {
    const TabularModel model =
        TabularModel::markov(kABC, 3, {0.5, 0.3, 0.2},
                             {{0.6, 0.2, 0.2}, {0.1, 0.8, 0.1}, {0.3, 0.3, 0.4}});
    const NoiseSchedule sched = linear_schedule(2); // alpha_bar_1 = 0.5

    // exact per-position marginals by grid enumeration
    std::vector<std::vector<double>> marginal(3, std::vector<double>(3, 0.0));
    for (uint64_t i = 0; i < model.grid_size(); ++i) {
        const auto tokens = model.decode_index(i);
        const double p = std::exp(model.log_prob(SequenceState(tokens, 0)));
        for (int j = 0; j < 3; ++j)
            marginal[static_cast<std::size_t>(j)][static_cast<std::size_t>(tokens[static_cast<std::size_t>(j)])] += p;
    }

    RngStream rng(31);
    const int n = 20000;
    std::vector<std::vector<double>> averaged(3, std::vector<double>(3, 0.0));
    for (int i = 0; i < n; ++i) {
        const SequenceState x0 = sample_prior(model, rng);
        const SequenceState xt = forward_noise_to(x0, 1, sched, rng);
        const PosteriorTable post = exact_posterior(model, xt);
        for (int j = 0; j < 3; ++j)
            for (int a = 0; a < 3; ++a)
                averaged[static_cast<std::size_t>(j)][static_cast<std::size_t>(a)] +=
                    post.at(j)[static_cast<std::size_t>(a)] / n;
    }
    for (int j = 0; j < 3; ++j)
        for (int a = 0; a < 3; ++a) {
            const double p = marginal[static_cast<std::size_t>(j)][static_cast<std::size_t>(a)];
            const double sigma = std::sqrt(p * (1 - p) / n);
            REQUIRE(std::fabs(averaged[static_cast<std::size_t>(j)][static_cast<std::size_t>(a)] - p) <=
                    3 * sigma + 1e-9);
        }
}

TEST_CASE("factorized posteriors never gain entropy from more evidence") {
    const TabularModel model =
        TabularModel::factorized(kAB, {{0.3, 0.7}, {0.5, 0.5}, {0.8, 0.2}});
    auto entropy = [](const std::vector<double>& row) {
        double h = 0.0;
        for (double p : row)
            if (p > 0.0) h -= p * std::log(p);
        return h;
    };
    // all evidence patterns over tokens {0,1}, compared against every
    // refinement that adds one observation
    for (int pattern = 0; pattern < 27; ++pattern) {
        std::vector<int32_t> tokens(3);
        int code = pattern;
        for (int j = 0; j < 3; ++j, code /= 3) tokens[static_cast<std::size_t>(j)] = (code % 3) - 1;
        const SequenceState coarse(tokens, 1);
        const PosteriorTable base = exact_posterior(model, coarse);
        for (int j = 0; j < 3; ++j) {
            if (tokens[static_cast<std::size_t>(j)] != kMasked) continue;
            for (int32_t fill = 0; fill < 2; ++fill) {
                auto refined_tokens = tokens;
                refined_tokens[static_cast<std::size_t>(j)] = fill;
                const PosteriorTable refined = exact_posterior(model, SequenceState(refined_tokens, 1));
                for (int pos = 0; pos < 3; ++pos) {
                    if (refined_tokens[static_cast<std::size_t>(pos)] != kMasked) continue;
                    REQUIRE(entropy(refined.at(pos)) <= entropy(base.at(pos)) + 1e-12);
                }
            }
        }
    }
}

TEST_CASE("enumerability guard rejects oversized joints") {
    const Alphabet four({"A", "B", "C", "D"});
    REQUIRE_THROWS_AS(
        TabularModel::explicit_joint(four, 11, std::vector<double>(4, 0.25)),
        resource_limit_error);
}
