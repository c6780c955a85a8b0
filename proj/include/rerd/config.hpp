#pragma once

// Experiment configuration and the model definition file format. Parsing is
// strict: unknown keys are rejected, referenced files must exist at load, and
// probability tables are renormalized only when they are within 1e-6 of 1.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rerd/errors.hpp"
#include "rerd/guidance.hpp"
#include "rerd/model.hpp"
#include "rerd/reward.hpp"

namespace rerd {

using json = nlohmann::json;

namespace detail {

inline void check_keys(const json& node, std::initializer_list<const char*> allowed,
                       const std::string& context) {
    if (!node.is_object()) throw config_error(context + ": expected an object");
    for (const auto& [key, value] : node.items()) {
        bool known = false;
        for (const char* name : allowed)
            if (key == name) { known = true; break; }
        if (!known) throw config_error(context + ": unknown key '" + key + "'");
    }
}

inline const json& require_key(const json& node, const char* key, const std::string& context) {
    auto it = node.find(key);
    if (it == node.end()) throw config_error(context + ": missing key '" + key + "'");
    return *it;
}

/// Renormalize a loaded distribution: accept drift up to 1e-6, reject beyond.
inline std::vector<double> renormalize(std::vector<double> probs, const std::string& context) {
    double sum = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0)) throw config_error(context + ": negative probability");
        sum += p;
    }
    if (std::fabs(sum - 1.0) > 1e-6)
        throw config_error(context + ": probabilities sum to " + std::to_string(sum));
    for (auto& p : probs) p /= sum;
    return probs;
}

inline std::vector<double> prob_vector(const json& node, std::size_t size, const std::string& context) {
    if (!node.is_array() || node.size() != size)
        throw config_error(context + ": expected an array of " + std::to_string(size) + " probabilities");
    return renormalize(node.get<std::vector<double>>(), context);
}

} // namespace detail

/// Render a decoded sequence with the alphabet's symbols; single-character
/// alphabets are joined without separators, others with single spaces.
inline std::string format_sequence(const Alphabet& alphabet, const SequenceState& x) {
    bool compact = true;
    for (const auto& tok : alphabet.tokens)
        if (tok.size() != 1) { compact = false; break; }
    std::string out;
    for (std::size_t j = 0; j < x.tokens.size(); ++j) {
        if (!compact && j > 0) out += ' ';
        out += x.tokens[j] == kMasked ? alphabet.mask
                                      : alphabet.tokens[static_cast<std::size_t>(x.tokens[j])];
    }
    return out;
}

inline SequenceState parse_sequence(const Alphabet& alphabet, const std::string& text) {
    std::vector<int32_t> tokens;
    if (text.find_first_of(" \t") != std::string::npos) {
        std::istringstream is(text);
        std::string symbol;
        while (is >> symbol) tokens.push_back(static_cast<int32_t>(alphabet.index_of(symbol)));
    } else {
        for (char c : text) tokens.push_back(static_cast<int32_t>(alphabet.index_of(std::string(1, c))));
    }
    return SequenceState(std::move(tokens), 0);
}

inline Alphabet alphabet_from_json(const json& node) {
    detail::check_keys(node, {"tokens", "mask"}, "alphabet");
    const json& toks = detail::require_key(node, "tokens", "alphabet");
    if (!toks.is_array()) throw config_error("alphabet: tokens must be an array");
    std::vector<std::string> tokens = toks.get<std::vector<std::string>>();
    std::string mask = node.value("mask", std::string("?"));
    try {
        return Alphabet(std::move(tokens), std::move(mask));
    } catch (const std::invalid_argument& e) {
        throw config_error(e.what());
    }
}

inline json alphabet_to_json(const Alphabet& alphabet) {
    return json{{"tokens", alphabet.tokens}, {"mask", alphabet.mask}};
}

inline TabularModel model_from_json(const json& node) {
    detail::check_keys(node, {"kind", "alphabet", "length", "tables"}, "model");
    const std::string kind = detail::require_key(node, "kind", "model").get<std::string>();
    const Alphabet alphabet = alphabet_from_json(detail::require_key(node, "alphabet", "model"));
    const int length = detail::require_key(node, "length", "model").get<int>();
    const json& tables = detail::require_key(node, "tables", "model");
    const auto K = static_cast<std::size_t>(alphabet.size());

    try {
        if (kind == "explicit-joint") {
            detail::check_keys(tables, {"probs"}, "model.tables");
            const json& probs = detail::require_key(tables, "probs", "model.tables");
            if (!probs.is_array()) throw config_error("model.tables.probs: expected an array");
            return TabularModel::explicit_joint(
                alphabet, length, detail::renormalize(probs.get<std::vector<double>>(), "model.tables.probs"));
        }
        if (kind == "factorized-independent") {
            detail::check_keys(tables, {"marginals"}, "model.tables");
            const json& rows = detail::require_key(tables, "marginals", "model.tables");
            if (!rows.is_array() || rows.size() != static_cast<std::size_t>(length))
                throw config_error("model.tables.marginals: expected one row per position");
            std::vector<std::vector<double>> marginals;
            for (const auto& row : rows)
                marginals.push_back(detail::prob_vector(row, K, "model.tables.marginals"));
            return TabularModel::factorized(alphabet, std::move(marginals));
        }
        if (kind == "first-order-markov") {
            detail::check_keys(tables, {"initial", "transition"}, "model.tables");
            std::vector<double> initial =
                detail::prob_vector(detail::require_key(tables, "initial", "model.tables"), K,
                                    "model.tables.initial");
            const json& trans = detail::require_key(tables, "transition", "model.tables");
            if (!trans.is_array() || trans.size() != K)
                throw config_error("model.tables.transition: expected K rows");
            std::vector<std::vector<double>> transition;
            for (const auto& row : trans)
                transition.push_back(detail::prob_vector(row, K, "model.tables.transition"));
            return TabularModel::markov(alphabet, length, std::move(initial), std::move(transition));
        }
        if (kind == "mixture-of-products") {
            detail::check_keys(tables, {"weights", "components"}, "model.tables");
            const json& w = detail::require_key(tables, "weights", "model.tables");
            if (!w.is_array()) throw config_error("model.tables.weights: expected an array");
            std::vector<double> weights =
                detail::renormalize(w.get<std::vector<double>>(), "model.tables.weights");
            const json& comps = detail::require_key(tables, "components", "model.tables");
            if (!comps.is_array() || comps.size() != weights.size())
                throw config_error("model.tables.components: one component per weight");
            std::vector<std::vector<std::vector<double>>> components;
            for (const auto& comp : comps) {
                if (!comp.is_array() || comp.size() != static_cast<std::size_t>(length))
                    throw config_error("model.tables.components: one row per position");
                std::vector<std::vector<double>> rows;
                for (const auto& row : comp)
                    rows.push_back(detail::prob_vector(row, K, "model.tables.components"));
                components.push_back(std::move(rows));
            }
            return TabularModel::mixture(alphabet, length, std::move(weights), std::move(components));
        }
    } catch (const std::invalid_argument& e) {
        throw config_error(std::string("model: ") + e.what());
    } catch (const resource_limit_error&) {
        throw;
    }
    throw config_error("model: unknown kind '" + kind + "'");
}

inline json model_to_json(const TabularModel& model) {
    json tables;
    switch (model.kind()) {
        case ModelKind::ExplicitJoint: tables = {{"probs", model.joint_table()}}; break;
        case ModelKind::FactorizedIndependent: tables = {{"marginals", model.marginal_tables()}}; break;
        case ModelKind::FirstOrderMarkov:
            tables = {{"initial", model.initial_table()}, {"transition", model.transition_table()}};
            break;
        case ModelKind::MixtureOfProducts:
            tables = {{"weights", model.mixture_weight_table()},
                      {"components", model.component_tables()}};
            break;
    }
    return json{{"kind", to_string(model.kind())},
                {"alphabet", alphabet_to_json(model.alphabet())},
                {"length", model.length()},
                {"tables", tables}};
}

inline TabularModel load_model_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw config_error("model file not found: " + path.string());
    json node;
    try {
        in >> node;
    } catch (const json::exception& e) {
        throw config_error("model file " + path.string() + ": " + e.what());
    }
    return model_from_json(node);
}

inline void save_model_file(const TabularModel& model, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw config_error("cannot write model file: " + path.string());
    out << model_to_json(model).dump(2) << '\n';
}

inline RewardSpec reward_from_json(const json& node, const Alphabet& alphabet) {
    detail::check_keys(node, {"kind", "target", "token", "components"}, "reward");
    const std::string kind = detail::require_key(node, "kind", "reward").get<std::string>();
    if (kind == "pattern-match") {
        const json& target = detail::require_key(node, "target", "reward");
        SequenceState seq = target.is_string()
                                ? parse_sequence(alphabet, target.get<std::string>())
                                : [&] {
                                      std::vector<int32_t> toks;
                                      for (const auto& sym : target)
                                          toks.push_back(static_cast<int32_t>(
                                              alphabet.index_of(sym.get<std::string>())));
                                      return SequenceState(std::move(toks), 0);
                                  }();
        return RewardSpec::pattern_match(std::move(seq.tokens));
    }
    if (kind == "motif-count") {
        const std::string symbol = detail::require_key(node, "token", "reward").get<std::string>();
        return RewardSpec::motif_count(static_cast<int32_t>(alphabet.index_of(symbol)));
    }
    if (kind == "composite") {
        const json& comps = detail::require_key(node, "components", "reward");
        if (!comps.is_array() || comps.empty())
            throw config_error("reward: composite needs a non-empty component array");
        std::vector<std::pair<double, RewardSpec>> parts;
        for (const auto& comp : comps) {
            detail::check_keys(comp, {"weight", "reward"}, "reward.components");
            parts.emplace_back(detail::require_key(comp, "weight", "reward.components").get<double>(),
                               reward_from_json(detail::require_key(comp, "reward", "reward.components"),
                                                alphabet));
        }
        return RewardSpec::composite(std::move(parts));
    }
    throw config_error("reward: unknown kind '" + kind + "'");
}

inline ConstraintSpec constraint_from_json(const json& node, const Alphabet& alphabet) {
    detail::check_keys(node, {"mode", "barrier_floor", "terms"}, "constraint");
    ConstraintSpec cons;
    const std::string mode = detail::require_key(node, "mode", "constraint").get<std::string>();
    if (mode == "indicator") cons.mode = ConstraintMode::Indicator;
    else if (mode == "log-barrier") cons.mode = ConstraintMode::LogBarrier;
    else throw config_error("constraint: unknown mode '" + mode + "'");
    cons.barrier_floor = node.value("barrier_floor", 1e-3);
    const json& terms = detail::require_key(node, "terms", "constraint");
    if (!terms.is_array() || terms.empty())
        throw config_error("constraint: terms must be a non-empty array");
    for (const auto& term : terms) {
        detail::check_keys(term, {"reward", "threshold"}, "constraint.terms");
        cons.terms.push_back(
            {reward_from_json(detail::require_key(term, "reward", "constraint.terms"), alphabet),
             detail::require_key(term, "threshold", "constraint.terms").get<double>()});
    }
    try {
        cons.validate();
    } catch (const std::invalid_argument& e) {
        throw config_error(e.what());
    }
    return cons;
}

inline GuidanceParams params_from_json(const json& node) {
    detail::check_keys(node,
                       {"alpha_is", "alpha_select", "L", "N", "K", "S", "T", "decode_mode"},
                       "params");
    GuidanceParams params;
    params.alpha_is = node.value("alpha_is", params.alpha_is);
    params.alpha_select = node.value("alpha_select", params.alpha_select);
    params.L = node.value("L", params.L);
    params.N = node.value("N", params.N);
    params.K = node.value("K", params.K);
    params.S = node.value("S", params.S);
    params.T = node.value("T", params.T);
    const std::string mode = node.value("decode_mode", std::string("greedy"));
    if (mode == "greedy") params.decode_mode = DecodeMode::Greedy;
    else if (mode == "sampled") params.decode_mode = DecodeMode::Sampled;
    else throw config_error("params: unknown decode_mode '" + mode + "'");
    try {
        params.validate();
    } catch (const std::invalid_argument& e) {
        throw config_error(e.what());
    }
    return params;
}

struct InitSpec {
    enum class Kind { SingleShotSvdd, SeedData, File };
    Kind kind = Kind::SingleShotSvdd;
    int count = 200;          // seed-data: prior draws
    double alpha = 0.2;       // seed-data: selection temperature of Eq. (2)
    bool feasible_only = false;
    std::filesystem::path path; // file: one sequence per line
};

inline InitSpec init_from_json(const json& node, const std::filesystem::path& base) {
    detail::check_keys(node, {"kind", "count", "alpha", "feasible_only", "path"}, "init");
    InitSpec init;
    const std::string kind = detail::require_key(node, "kind", "init").get<std::string>();
    if (kind == "single-shot-svdd") {
        init.kind = InitSpec::Kind::SingleShotSvdd;
    } else if (kind == "seed-data") {
        init.kind = InitSpec::Kind::SeedData;
        init.count = node.value("count", init.count);
        init.alpha = node.value("alpha", init.alpha);
        init.feasible_only = node.value("feasible_only", false);
        if (init.count < 1) throw config_error("init: count must be >= 1");
        if (!(init.alpha >= 0.0)) throw config_error("init: alpha must be >= 0");
    } else if (kind == "file") {
        init.kind = InitSpec::Kind::File;
        init.path = base / detail::require_key(node, "path", "init").get<std::string>();
        if (!std::filesystem::exists(init.path))
            throw config_error("init: seed file not found: " + init.path.string());
    } else {
        throw config_error("init: unknown kind '" + kind + "'");
    }
    return init;
}

struct ExperimentConfig {
    TabularModel model;
    RewardSpec reward;
    std::optional<ConstraintSpec> constraint;
    std::string sampler; // svdd | smc | ga | rerd | oracle
    GuidanceParams params;
    std::vector<uint64_t> seeds;
    std::optional<InitSpec> init;
    std::filesystem::path out;

    /// The reward the samplers optimize: the constrained wrapper when a
    /// constraint is configured, the raw reward otherwise.
    RewardFn effective_reward() const {
        return constraint ? make_constrained_reward(*constraint, reward) : make_reward(reward);
    }
};

inline ExperimentConfig config_from_json(const json& node, const std::filesystem::path& base) {
    detail::check_keys(node,
                       {"model", "reward", "constraint", "sampler", "params", "seeds", "init", "out"},
                       "config");

    const json& model_node = detail::require_key(node, "model", "config");
    TabularModel model = model_node.is_string()
                             ? load_model_file(base / model_node.get<std::string>())
                             : model_from_json(model_node);

    RewardSpec reward = reward_from_json(detail::require_key(node, "reward", "config"),
                                         model.alphabet());

    std::optional<ConstraintSpec> constraint;
    if (node.contains("constraint"))
        constraint = constraint_from_json(node.at("constraint"), model.alphabet());

    const std::string sampler = detail::require_key(node, "sampler", "config").get<std::string>();
    if (sampler != "svdd" && sampler != "smc" && sampler != "ga" && sampler != "rerd" &&
        sampler != "oracle")
        throw config_error("config: unknown sampler '" + sampler + "'");

    GuidanceParams params =
        node.contains("params") ? params_from_json(node.at("params")) : GuidanceParams{};

    const json& seeds_node = detail::require_key(node, "seeds", "config");
    if (!seeds_node.is_array() || seeds_node.empty())
        throw config_error("config: seeds must be a non-empty array");
    std::vector<uint64_t> seeds = seeds_node.get<std::vector<uint64_t>>();

    std::optional<InitSpec> init;
    if (node.contains("init")) init = init_from_json(node.at("init"), base);
    const bool iterative = sampler == "ga" || sampler == "rerd";
    if (iterative && !init)
        throw config_error("config: sampler '" + sampler + "' requires an init block");
    if (!iterative && init)
        throw config_error("config: sampler '" + sampler + "' does not take an init block");

    std::filesystem::path out;
    if (node.contains("out")) out = base / node.at("out").get<std::string>();

    return ExperimentConfig{std::move(model), std::move(reward),    std::move(constraint),
                            sampler,          params,               std::move(seeds),
                            std::move(init),  std::move(out)};
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw config_error("config file not found: " + path.string());
    json node;
    try {
        in >> node;
    } catch (const json::exception& e) {
        throw config_error("config file " + path.string() + ": " + e.what());
    }
    return config_from_json(node, path.parent_path());
}

inline std::vector<SequenceState> load_sequence_file(const std::filesystem::path& path,
                                                     const Alphabet& alphabet, int length) {
    std::ifstream in(path);
    if (!in) throw config_error("sequence file not found: " + path.string());
    std::vector<SequenceState> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        SequenceState seq = parse_sequence(alphabet, line);
        if (seq.length() != length)
            throw config_error("sequence file " + path.string() + ": length mismatch on line '" +
                               line + "'");
        out.push_back(std::move(seq));
    }
    if (out.empty()) throw config_error("sequence file " + path.string() + " is empty");
    return out;
}

} // namespace rerd
