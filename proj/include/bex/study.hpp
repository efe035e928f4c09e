#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "bex/explainer.hpp"
#include "bex/grounding.hpp"
#include "bex/policy.hpp"
#include "bex/tree.hpp"

namespace bex {

struct StudyGrid {
    std::vector<PolicyKind> policies{kAllPolicyKinds.begin(), kAllPolicyKinds.end()};
    std::vector<ConditionKind> conditions{kAllConditions.begin(), kAllConditions.end()};
    int states_per_cell = 10;
    std::uint64_t seed = 42;
    int rollouts = 1000;  // training episodes per policy
    int heldout_rollouts = 100;
    int max_steps = 20 * kNumRooms;
    int k = 5;
    TreeParams tree{};
    ScenarioConfig scenario{};  // seed and starts are set per episode
    int threads = 1;

    void validate() const;
};

// A held-out decision point shared by every condition of one policy.
struct StudyState {
    Role agent = Role::Engineer;
    int episode = 0;
    int t = 0;
    WorldState state;
    FeatureVector features;
    Action action = Action::Wait;  // what the policy did
};

struct PolicyModels {
    PolicyKind policy = PolicyKind::Expert;
    std::vector<Trajectory> training;
    std::vector<Trajectory> heldout;
    std::array<std::shared_ptr<const DecisionTree>, 2> trees;  // indexed by Role
    std::array<double, 2> training_agreement{};
    std::array<double, 2> heldout_fidelity{};
    std::array<int, 2> heldout_states{};
    std::vector<StudyState> states;

    const DecisionTree& tree(Role r) const { return *trees[static_cast<int>(r)]; }
};

struct PreparedStudy {
    StudyGrid grid;
    std::vector<PolicyModels> models;  // same order as grid.policies
};

// Rollouts, one tree per (policy, role), fidelity on held-out rollouts and
// the explained states: alternating engineer / medic, one per held-out episode.
PreparedStudy prepare_study(const StudyGrid& grid);

struct StudyRow {
    PolicyKind policy = PolicyKind::Expert;
    ConditionKind condition = ConditionKind::BrPath;
    int state_index = 0;
    Role agent = Role::Engineer;
    int episode = 0;
    int t = 0;
    Action action = Action::Wait;
    DecisionPath path;
    bool ok = false;
    std::string error;
    std::string explanation;
    GroundingRow grounding;
};

struct CellSummary {
    PolicyKind policy = PolicyKind::Expert;
    ConditionKind condition = ConditionKind::BrPath;
    int explanations = 0;
    int failed = 0;
    double mean_precision = 0.0;  // over successful rows
    int flagged_explanations = 0;
    int total_flags = 0;
};

struct StudyReport {
    StudyGrid grid;
    std::vector<StudyRow> rows;  // ordered by (policy, condition, state index)
    std::vector<CellSummary> cells;
    std::vector<PolicyModels> models;  // trees and fidelity, without trajectories
    std::set<Feature> example_features;  // mentioned by the in-context examples
    std::map<ConditionKind, std::array<int, kNumFeatures>> feature_counts;

    // Mean over successful rows of one condition across all policies.
    double mean_precision(ConditionKind c) const;
    const CellSummary& cell(PolicyKind p, ConditionKind c) const;

    std::string rows_csv() const;
    std::string summary_csv() const;
    std::string features_csv() const;
    std::string fidelity_csv() const;
    std::string summary_text() const;
};

struct StudyTools {
    const PromptBuilder& builder;
    const FeatureLexicon& lexicon;
};

// One explanation per (policy, condition, state). A failing row is recorded
// with its error and does not stop the grid. `client` is shared across
// threads when grid.threads > 1.
StudyReport run_study(const PreparedStudy& prepared, LlmClient& client, const StudyTools& tools,
                      const ModelConfig& model = {});

void to_json(nlohmann::json& j, const StudyReport& r);

}  // namespace bex
