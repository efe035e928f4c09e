#include "bex/explainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "bex/defaults.hpp"
#include "bex/error.hpp"
#include "bex/markers.hpp"
#include "bex/rng.hpp"

namespace bex {

namespace {

constexpr std::array<std::string_view, 3> kConditionNames{"br_path", "br_states", "no_br"};

int index_of(ConditionKind k) { return static_cast<int>(k); }

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

std::string section(std::string_view header, const std::string& body) {
    std::string out(header);
    out += '\n';
    out += body;
    if (!body.empty() && body.back() != '\n') out += '\n';
    return out;
}

}  // namespace

std::string_view to_string(ConditionKind k) { return kConditionNames[index_of(k)]; }

ConditionKind parse_condition_kind(std::string_view s) {
    for (ConditionKind k : kAllConditions)
        if (to_string(k) == s) return k;
    throw SchemaError("unknown condition '" + std::string(s) + "' (expected br_path, br_states or no_br)");
}

void Condition::validate() const {
    if (kind == ConditionKind::BrStates && k < 0) throw SchemaError("k: must be >= 0");
}

PromptConfig PromptConfig::from_json(const nlohmann::json& j) {
    PromptConfig c;
    try {
        c.version = j.value("version", std::string());
        c.part_a = j.at("part_a").get<std::string>();
        const auto& b = j.at("part_b");
        for (ConditionKind k : kAllConditions) {
            const std::string name(to_string(k));
            if (!b.contains(name)) throw ConfigError("prompts: part_b has no text for condition '" + name + "'");
            c.part_b[index_of(k)] = b.at(name).get<std::string>();
        }
        for (const auto& e : j.at("examples")) {
            PromptExample ex;
            ex.role = parse_role(e.at("role").get<std::string>());
            ex.rules = e.value("rules", std::vector<std::string>{});
            ex.action = parse_action(e.at("action").get<std::string>());
            ex.explanation = e.at("explanation").get<std::string>();
            c.examples.push_back(std::move(ex));
        }
        c.include_confidence = j.value("include_confidence", true);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("prompts: ") + e.what());
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(std::string("prompts: ") + e.what());
    }
    if (c.part_a.empty()) throw ConfigError("prompts: part_a is empty");
    return c;
}

PromptConfig PromptConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open prompt config '" + path + "'");
    try {
        return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("prompt config '" + path + "': " + e.what());
    }
}

const PromptConfig& PromptConfig::defaults() {
    static const PromptConfig config = from_json(nlohmann::json::parse(defaults::prompts_json()));
    return config;
}

std::string PromptBundle::system_text() const {
    return section(markers::kSectionA, part_a) + "\n" + section(markers::kSectionB, part_b) + "\n" +
           section(markers::kSectionC, part_c);
}

std::string PromptBundle::user_text() const { return section(markers::kSectionD, part_d); }

std::string PromptBundle::serialize() const { return system_text() + "\n" + user_text(); }

std::vector<ChatMessage> PromptBundle::messages() const {
    return {{"system", system_text()}, {"user", user_text()}};
}

PromptBuilder::PromptBuilder(PromptConfig config, PhraseTable phrases)
    : config_(std::move(config)), phrases_(std::move(phrases)) {}

std::string PromptBuilder::action_text(Action a) const {
    return std::string(phrases_.action_phrase(a)) + " (" + std::string(to_string(a)) + ")";
}

std::vector<std::string> PromptBuilder::state_clauses(const FeatureVector& v) const {
    std::vector<std::string> out;
    for (const auto& info : all_features()) out.push_back(phrases_.describe_value(info.id, v[info.id]));
    return out;
}

std::string PromptBuilder::part_c(ConditionKind kind) const {
    std::string out;
    int n = 0;
    for (const auto& ex : config_.examples) {
        out += "Example " + std::to_string(++n) + " (" + std::string(to_string(ex.role)) + ")\n";
        // Only the decision-path condition shows rules; the others would
        // otherwise leak path-style evidence into their prompts.
        if (kind == ConditionKind::BrPath) {
            for (const auto& r : ex.rules) out += std::string(markers::kRule) + r + "\n";
        }
        out += std::string(markers::kAction) + action_text(ex.action) + "\n";
        out += "EXPLANATION: " + ex.explanation + "\n\n";
    }
    return out;
}

PromptBundle PromptBuilder::build(const Condition& condition, const Evidence& evidence, Action action,
                                  Role agent) const {
    condition.validate();
    PromptBundle b;
    b.condition = condition.kind;
    b.part_a = config_.part_a;
    b.part_b = config_.part_b[index_of(condition.kind)];
    b.part_c = part_c(condition.kind);

    std::string d = std::string(markers::kAgent) + std::string(to_string(agent)) + "\n";
    switch (condition.kind) {
        case ConditionKind::BrPath: {
            const auto* path = std::get_if<DecisionPath>(&evidence);
            if (!path) throw SchemaError("condition br_path needs a decision path as evidence");
            if (path->agent != agent) throw SchemaError("decision path belongs to the other agent");
            const auto clauses = path_clauses(*path, phrases_);
            if (clauses.empty())
                d += std::string(markers::kNoRules) +
                     "the decision tree applied no distinguishing rules; it predicts this action regardless of the "
                     "situation.\n";
            for (const auto& c : clauses) d += std::string(markers::kRule) + c + "\n";
            if (config_.include_confidence) {
                d += std::string(markers::kConfidence) + "the tree predicts this action for " +
                     std::to_string(std::lround(path->confidence * 100)) +
                     "% of the training situations that follow these rules.\n";
            }
            break;
        }
        case ConditionKind::BrStates: {
            const auto* samples = std::get_if<std::vector<StateActionSample>>(&evidence);
            if (!samples) throw SchemaError("condition br_states needs state-action samples as evidence");
            if (static_cast<int>(samples->size()) != condition.k)
                throw SchemaError("condition br_states expects " + std::to_string(condition.k) + " samples, got " +
                                  std::to_string(samples->size()));
            for (const auto& s : *samples)
                d += std::string(markers::kSample) + join(state_clauses(s.features), markers::kClauseSeparator) +
                     std::string(markers::kSampleArrow) + std::string(phrases_.action_phrase(s.action)) + "\n";
            break;
        }
        case ConditionKind::NoBr: {
            const auto* summary = std::get_if<StateSummary>(&evidence);
            if (!summary) throw SchemaError("condition no_br takes only a state summary as evidence");
            d += std::string(markers::kState) + join(state_clauses(summary->features), markers::kClauseSeparator) +
                 "\n";
            break;
        }
    }
    d += std::string(markers::kAction) + action_text(action) + "\n";
    d += "Explain why the " + std::string(to_string(agent)) + " " + std::string(phrases_.action_phrase(action)) +
         ".\n";
    b.part_d = std::move(d);
    return b;
}

std::vector<StateActionSample> sample_state_actions(std::span<const Trajectory> trajectories, Role role, int k,
                                                    std::uint64_t seed) {
    if (k < 0) throw SchemaError("k: must be >= 0");
    std::vector<StateActionSample> pool;
    for (const auto& tr : trajectories) {
        if (tr.agent != role) continue;
        for (const auto& s : tr.steps) pool.push_back({tr.episode_id, s.t, s.features, s.action});
    }
    if (static_cast<int>(pool.size()) < k)
        throw DatasetError("cannot sample " + std::to_string(k) + " " + std::string(to_string(role)) +
                           " steps: only " + std::to_string(pool.size()) + " available");

    std::vector<std::size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    for (int i = 0; i < k; ++i) {
        const auto j = i + uniform_index(rng, idx.size() - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    std::sort(idx.begin(), idx.end());

    std::vector<StateActionSample> out;
    out.reserve(k);
    for (auto i : idx) out.push_back(pool[i]);
    return out;
}

ExplanationSession open_session(std::string id, const Condition& condition, SessionContext context,
                                PromptBundle prompt, LlmClient& client, const ModelConfig& model) {
    ExplanationSession s;
    s.id = std::move(id);
    s.condition = condition;
    s.context = std::move(context);
    s.model = model;
    s.history = prompt.messages();
    try {
        s.history.push_back({"assistant", client.complete(s.history, model)});
    } catch (const Error& e) {
        throw SessionError(std::string("initial explanation failed: ") + e.what(), prompt.serialize());
    }
    s.prompt = std::move(prompt);
    return s;
}

std::string counterfactual_context(const CounterfactualResult& result, const CounterfactualQuery& query, Role agent,
                                   const PhraseTable& phrases) {
    std::string out = std::string(markers::kCounterfactual) +
                      " (computed by the decision tree for the " + std::string(to_string(agent)) +
                      "; answer using this result)\n";
    for (const auto& [f, v] : query.flips) out += std::string(markers::kChange) + phrases.describe_value(f, v) + "\n";
    out += std::string(markers::kPredicted) + std::string(phrases.action_phrase(result.path.action)) + " (" +
           std::string(to_string(result.path.action)) + ")\n";
    out += std::string(markers::kChanged) + (result.changed ? "yes" : "no") + "\n";
    for (const auto& c : path_clauses(result.path, phrases))
        out += std::string(markers::kCounterfactualRule) + c + "\n";
    return out;
}

std::string follow_up(ExplanationSession& session, LlmClient& client, std::string_view text,
                      const CounterfactualQuery* query, const PhraseTable& phrases) {
    std::string user(text);
    if (query) {
        if (!session.context.tree) throw Error("this session has no decision tree to answer counterfactuals");
        const auto result = counterfactual(*session.context.tree, session.context.features, *query);
        if (!user.empty()) user += "\n\n";
        user += counterfactual_context(result, *query, session.context.agent, phrases);
    }
    auto messages = session.history;
    messages.push_back({"user", user});
    std::string reply = client.complete(messages, session.model);
    session.history.push_back(std::move(messages.back()));
    session.history.push_back({"assistant", reply});
    return reply;
}

void to_json(nlohmann::json& j, const ChatMessage& m) { j = {{"role", m.role}, {"content", m.content}}; }

void to_json(nlohmann::json& j, const PromptBundle& p) {
    j = {{"condition", to_string(p.condition)},
         {"part_a", p.part_a},
         {"part_b", p.part_b},
         {"part_c", p.part_c},
         {"part_d", p.part_d}};
}

void to_json(nlohmann::json& j, const ExplanationSession& s) {
    nlohmann::json history = nlohmann::json::array();
    for (const auto& m : s.history) history.push_back(m);
    j = {{"id", s.id},
         {"condition", to_string(s.condition.kind)},
         {"agent", to_string(s.context.agent)},
         {"action", to_string(s.context.action)},
         {"features", s.context.features},
         {"explanation", s.history.size() > 2 ? s.history[2].content : std::string()},
         {"history", std::move(history)},
         {"prompt", s.prompt},
         {"model", s.model.model}};
    if (s.context.path) j["path"] = *s.context.path;
    if (s.condition.kind == ConditionKind::BrStates) j["k"] = s.condition.k;
    if (s.context.episode >= 0) j["episode"] = s.context.episode;
    if (s.context.timestep >= 0) j["timestep"] = s.context.timestep;
}

}  // namespace bex
