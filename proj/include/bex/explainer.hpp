#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "bex/behavior.hpp"
#include "bex/features.hpp"
#include "bex/llm_client.hpp"
#include "bex/phrase_table.hpp"
#include "bex/policy.hpp"
#include "bex/tree.hpp"

namespace bex {

enum class ConditionKind { BrPath, BrStates, NoBr };

inline constexpr std::array<ConditionKind, 3> kAllConditions{ConditionKind::BrPath, ConditionKind::BrStates,
                                                             ConditionKind::NoBr};

std::string_view to_string(ConditionKind k);
ConditionKind parse_condition_kind(std::string_view s);

struct Condition {
    ConditionKind kind = ConditionKind::BrPath;
    int k = 5;                // samples, br_states only
    std::uint64_t seed = 0;   // sample seed, br_states only

    void validate() const;
};

struct PromptExample {
    Role role = Role::Medic;
    std::vector<std::string> rules;
    Action action = Action::Wait;
    std::string explanation;
};

// The fixed texts of a deployment: environment description, one evidence
// format description per condition, and the in-context examples.
struct PromptConfig {
    std::string version;
    std::string part_a;
    std::array<std::string, 3> part_b;  // indexed by ConditionKind
    std::vector<PromptExample> examples;
    bool include_confidence = true;

    static PromptConfig from_json(const nlohmann::json& j);
    static PromptConfig from_file(const std::string& path);
    static const PromptConfig& defaults();
};

struct StateActionSample {
    int episode = 0;
    int t = 0;
    FeatureVector features;
    Action action = Action::Wait;
};

struct StateSummary {
    FeatureVector features;
};

using Evidence = std::variant<DecisionPath, std::vector<StateActionSample>, StateSummary>;

struct PromptBundle {
    ConditionKind condition = ConditionKind::BrPath;
    std::string part_a;
    std::string part_b;
    std::string part_c;
    std::string part_d;

    std::string system_text() const;  // parts a-c with section headers
    std::string user_text() const;    // part d with its header
    std::string serialize() const;    // system_text + user_text
    std::vector<ChatMessage> messages() const;
};

class PromptBuilder {
public:
    PromptBuilder(PromptConfig config, PhraseTable phrases);

    // Throws SchemaError when the evidence does not fit the condition (or
    // br_states gets a sample count other than condition.k).
    PromptBundle build(const Condition& condition, const Evidence& evidence, Action action, Role agent) const;

    const PromptConfig& config() const { return config_; }
    const PhraseTable& phrases() const { return phrases_; }

    // Clause describing the exact value of every feature, in schema order.
    std::vector<std::string> state_clauses(const FeatureVector& v) const;

private:
    std::string part_c(ConditionKind kind) const;
    std::string action_text(Action a) const;

    PromptConfig config_;
    PhraseTable phrases_;
};

// k steps of `role` drawn uniformly without replacement, returned in
// (episode, t) order. Throws DatasetError when fewer than k steps exist.
std::vector<StateActionSample> sample_state_actions(std::span<const Trajectory> trajectories, Role role, int k,
                                                    std::uint64_t seed);

// What an explanation is about, frozen when the session opens.
struct SessionContext {
    Role agent = Role::Engineer;
    Action action = Action::Wait;
    FeatureVector features;
    std::optional<WorldState> state;
    std::optional<DecisionPath> path;
    std::vector<StateActionSample> samples;
    std::shared_ptr<const DecisionTree> tree;  // needed for counterfactuals
    int episode = -1;
    int timestep = -1;
};

struct ExplanationSession {
    std::string id;
    Condition condition;
    SessionContext context;
    PromptBundle prompt;
    std::vector<ChatMessage> history;  // system, user, assistant, then pairs
    ModelConfig model;

    const std::string& explanation() const { return history.at(2).content; }
};

// Sends the bundle and records the initial explanation. Throws SessionError
// carrying the serialized prompt when the client fails.
ExplanationSession open_session(std::string id, const Condition& condition, SessionContext context,
                                PromptBundle prompt, LlmClient& client, const ModelConfig& model = {});

// The text appended to a follow-up when a counterfactual is attached.
std::string counterfactual_context(const CounterfactualResult& result, const CounterfactualQuery& query,
                                   Role agent, const PhraseTable& phrases);

// Adds one user and one assistant turn. With a query, the tree is re-run on
// the flipped features and the result is embedded in the user turn before
// the model is called. On any failure the history is left unchanged.
std::string follow_up(ExplanationSession& session, LlmClient& client, std::string_view text,
                      const CounterfactualQuery* query, const PhraseTable& phrases);

void to_json(nlohmann::json& j, const ChatMessage& m);
void to_json(nlohmann::json& j, const PromptBundle& p);
void to_json(nlohmann::json& j, const ExplanationSession& s);

}  // namespace bex
