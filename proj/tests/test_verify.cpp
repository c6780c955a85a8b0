#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "rerd/guidance.hpp"
#include "rerd/twisted.hpp"
#include "rerd/verify.hpp"

using namespace rerd;

namespace {

const Alphabet kAB({"A", "B"});
const Alphabet kABC({"A", "B", "C"});

const RewardFn kLog3 = [](const SequenceState& s) { return s.tokens[0] == 1 ? std::log(3.0) : 0.0; };
const RewardFn kConstant = [](const SequenceState&) { return 0.7; };

TabularModel coin() { return TabularModel::factorized(kAB, {{0.5, 0.5}}); }

} // namespace

TEST_CASE("enumerate_target closed forms") {
    const TabularModel model = coin();

    // constant reward: the tilt cancels in the normalizer
    const DistributionTable plain = enumerate_target(model, kConstant, 1.0);
    REQUIRE(plain.probs[0] == Catch::Approx(0.5).epsilon(1e-12));
    REQUIRE(plain.probs[1] == Catch::Approx(0.5).epsilon(1e-12));

    // uniform prior, r(B) = log 3, alpha = 1: target = (1/4, 3/4)
    const DistributionTable tilted = enumerate_target(model, kLog3, 1.0);
    REQUIRE(tilted.probs[0] == Catch::Approx(0.25).epsilon(1e-12));
    REQUIRE(tilted.probs[1] == Catch::Approx(0.75).epsilon(1e-12));

    // a huge alpha washes the tilt out
    const DistributionTable washed = enumerate_target(model, kLog3, 1e6);
    REQUIRE(tv_distance(washed, enumerate_prior(model)) < 1e-5);
}

TEST_CASE("enumerate_target recovers the unnormalized tilt pointwise") {
    const TabularModel model =
        TabularModel::markov(kABC, 2, {0.5, 0.3, 0.2},
                             {{0.6, 0.2, 0.2}, {0.1, 0.8, 0.1}, {0.3, 0.3, 0.4}});
    const RewardFn reward = make_reward(RewardSpec::pattern_match({0, 2}));
    const double alpha = 0.6;
    const DistributionTable table = enumerate_target(model, reward, alpha);

    double normalizer = 0.0;
    for (std::size_t i = 0; i < table.support.size(); ++i) {
        const SequenceState x(table.support[i], 0);
        normalizer += std::exp(model.log_prob(x)) * std::exp(reward(x) / alpha);
    }
    for (std::size_t i = 0; i < table.support.size(); ++i) {
        const SequenceState x(table.support[i], 0);
        const double expected = std::exp(model.log_prob(x)) * std::exp(reward(x) / alpha);
        REQUIRE(std::fabs(table.probs[i] * normalizer - expected) < 1e-9);
    }
}

TEST_CASE("empirical distributions") {
    const TabularModel model = coin();
    const DistributionTable prior = enumerate_prior(model);

    const std::vector<SequenceState> same(5, SequenceState({1}, 0));
    const EmpiricalResult point = empirical_distribution(same, prior);
    REQUIRE(point.table.probs == std::vector<double>{0.0, 1.0});
    REQUIRE(point.overflow == 0);

    const std::vector<SequenceState> two = {SequenceState({0}, 0), SequenceState({1}, 0)};
    REQUIRE(empirical_distribution(two, prior).table.probs == std::vector<double>{0.5, 0.5});

    // out-of-support samples land in the overflow bucket
    DistributionTable narrow;
    narrow.support = {{0}};
    narrow.probs = {1.0};
    narrow.finalize();
    const EmpiricalResult spilled = empirical_distribution(two, narrow);
    REQUIRE(spilled.overflow == 1);
    REQUIRE(spilled.table.probs[0] == 0.5);
}

TEST_CASE("prior sampling lands within the sampling-noise budget") {
    const TabularModel model =
        TabularModel::markov(kABC, 3, {0.5, 0.3, 0.2},
                             {{0.6, 0.2, 0.2}, {0.1, 0.8, 0.1}, {0.3, 0.3, 0.4}});
    const DistributionTable prior = enumerate_prior(model);
    RngStream rng(991);
    std::vector<SequenceState> samples;
    const int n = 100000;
    samples.reserve(n);
    for (int i = 0; i < n; ++i) samples.push_back(sample_prior(model, rng));
    REQUIRE(tv_distance(empirical_distribution(samples, prior).table, prior) <= 0.01);
}

TEST_CASE("tv distance") {
    DistributionTable p, q;
    p.support = q.support = {{0}, {1}};
    p.probs = {0.5, 0.5};
    q.probs = {1.0, 0.0};
    REQUIRE(tv_distance(p, p) == 0.0);
    REQUIRE(tv_distance(p, q) == 0.5);

    DistributionTable a = p, b = p;
    a.probs = {1.0, 0.0};
    b.probs = {0.0, 1.0};
    REQUIRE(tv_distance(a, b) == 1.0);

    DistributionTable other;
    other.support = {{0}, {2}};
    other.probs = {0.5, 0.5};
    REQUIRE_THROWS_AS(tv_distance(p, other), std::invalid_argument);
}

TEST_CASE("tv distance is a metric on random triples") {
    RngStream rng(5150);
    for (int rep = 0; rep < 50; ++rep) {
        DistributionTable tables[3];
        for (auto& t : tables) {
            t.support = {{0}, {1}, {2}, {3}};
            t.probs.resize(4);
            double total = 0.0;
            for (auto& v : t.probs) { v = -std::log(1.0 - rng.next_unit()); total += v; }
            for (auto& v : t.probs) v /= total;
        }
        const double ab = tv_distance(tables[0], tables[1]);
        const double ba = tv_distance(tables[1], tables[0]);
        const double bc = tv_distance(tables[1], tables[2]);
        const double ac = tv_distance(tables[0], tables[2]);
        REQUIRE(ab == ba);
        REQUIRE(ac <= ab + bc);
        REQUIRE(ab >= 0.0);
        REQUIRE(ab <= 1.0);
    }
}

TEST_CASE("kl divergence") {
    DistributionTable p, q;
    p.support = q.support = {{0}, {1}};
    p.probs = {1.0, 0.0};
    q.probs = {0.5, 0.5};
    REQUIRE(kl_divergence(p, p) == 0.0);
    REQUIRE(kl_divergence(p, q) == Catch::Approx(std::log(2.0)).epsilon(1e-12));

    DistributionTable r = p;
    r.probs = {0.5, 0.5};
    REQUIRE(kl_divergence(r, p) == std::numeric_limits<double>::infinity());
}

TEST_CASE("unguided ancestral sampling is consistent with the prior") {
    const TabularModel model = TabularModel::explicit_joint(kAB, 2, {0.35, 0.15, 0.2, 0.3});
    const NoiseSchedule sched = linear_schedule(6);
    const DistributionTable prior = enumerate_prior(model);
    RngStream root(17);
    std::vector<SequenceState> samples;
    const int n = 50000;
    for (int i = 0; i < n; ++i) {
        RngStream rng = root.fork(static_cast<uint64_t>(i));
        samples.push_back(ancestral_sample(model, sched, rng));
    }
    REQUIRE(tv_distance(empirical_distribution(samples, prior).table, prior) <= 0.03);
}

TEST_CASE("exact soft-optimal sampler hits the target distribution") {
    const TabularModel model = coin();
    const NoiseSchedule sched = linear_schedule(4);
    const TwistedKernelSampler sampler = exact_soft_optimal_run(model, kLog3, 1.0, sched);
    const DistributionTable target = enumerate_target(model, kLog3, 1.0);

    RngStream root(23);
    std::vector<SequenceState> samples;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        RngStream rng = root.fork(static_cast<uint64_t>(i));
        samples.push_back(sampler.sample(rng));
    }
    const DistributionTable empirical = empirical_distribution(samples, target).table;
    REQUIRE(tv_distance(empirical, target) <= 0.01);
    REQUIRE(empirical.probs[1] == Catch::Approx(0.75).margin(0.01));
}

TEST_CASE("twisted sampler with a constant reward is the unguided chain") {
    const TabularModel model = TabularModel::factorized(kAB, {{0.7, 0.3}, {0.4, 0.6}});
    const NoiseSchedule sched = linear_schedule(5);
    const TwistedKernelSampler sampler(model, kConstant, 0.5, sched);
    const DistributionTable prior = enumerate_prior(model);

    RngStream root(29);
    std::vector<SequenceState> samples;
    const int n = 50000;
    for (int i = 0; i < n; ++i) {
        RngStream rng = root.fork(static_cast<uint64_t>(i));
        samples.push_back(sampler.sample(rng));
    }
    REQUIRE(tv_distance(empirical_distribution(samples, prior).table, prior) <= 0.03);
}

TEST_CASE("theorem invariance on a hand-enumerable instance") {
    const TabularModel model = coin();
    const NoiseSchedule sched = linear_schedule(4);
    const CheckReport report =
        theorem1_invariance_check(model, kLog3, 1.0, sched, 2, 100000, 1, 4242);
    REQUIRE(report.pass);
    REQUIRE(report.statistic <= 0.01);

    // invariance composes across cycles
    const CheckReport five =
        theorem1_invariance_check(model, kLog3, 1.0, sched, 2, 100000, 5, 4242);
    REQUIRE(five.pass);
    REQUIRE(five.statistic <= 0.01);

    // constant reward: the cycle is plain noising + unguided denoising
    const CheckReport plain =
        theorem1_invariance_check(model, kConstant, 1.0, sched, 2, 50000, 1, 77);
    REQUIRE(plain.pass);
}

TEST_CASE("theorem invariance on a d = 2 product instance") {
    const TabularModel model = TabularModel::factorized(kABC, {{0.5, 0.3, 0.2}, {0.2, 0.5, 0.3}});
    const NoiseSchedule sched = linear_schedule(8);
    const RewardFn reward = make_reward(RewardSpec::pattern_match({0, 1}));
    const CheckReport report =
        theorem1_invariance_check(model, reward, 0.5, sched, 3, 100000, 5, 99);
    REQUIRE(report.pass);
    const std::string text = report.to_text();
    REQUIRE(text.find("PASS") == 0);
    REQUIRE(text.find("n=100000") != std::string::npos);
}

TEST_CASE("objective check: the target maximizes the regularized objective") {
    const TabularModel model = TabularModel::explicit_joint(kAB, 2, {0.4, 0.1, 0.2, 0.3});
    const RewardFn reward = make_reward(RewardSpec::pattern_match({0, 1}));

    const ObjectiveReport mixed = objective_check(model, reward, 0.5, 7);
    REQUIRE(mixed.pass);
    REQUIRE(mixed.target_objective >= mixed.best_perturbed - 1e-12);
    REQUIRE(mixed.perturbations == 100);

    // huge alpha: the optimum collapses onto the prior
    const ObjectiveReport washed = objective_check(model, reward, 1e6, 8);
    REQUIRE(washed.pass);
    REQUIRE(std::fabs(washed.target_objective - washed.prior_objective) <= 1e-6);

    // tiny alpha: the target concentrates on the argmax-reward support
    const DistributionTable sharp = enumerate_target(model, reward, 1e-3);
    REQUIRE(sharp.probs[1] == Catch::Approx(1.0).margin(1e-9)); // sequence (A, B)
}

TEST_CASE("enumerate_target refuses unenumerable grids") {
    const TabularModel model = TabularModel::factorized(
        kAB, std::vector<std::vector<double>>(30, {0.5, 0.5}));
    REQUIRE_THROWS_AS(enumerate_target(model, kConstant, 1.0), resource_limit_error);
}

TEST_CASE("sampling-noise tolerance helper") {
    DistributionTable table;
    table.support = {{0}, {1}};
    table.probs = {0.5, 0.5};
    table.finalize();
    // two symmetric binomial terms: 2 * sqrt(0.25/n) / 2 = sqrt(0.25/n)
    REQUIRE(expected_sampling_tv(table, 10000) == Catch::Approx(std::sqrt(0.25 / 10000)).epsilon(1e-12));
    REQUIRE_THROWS_AS(expected_sampling_tv(table, 0), std::invalid_argument);
}
