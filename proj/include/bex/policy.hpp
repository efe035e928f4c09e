#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string_view>
#include <vector>

#include "bex/features.hpp"
#include "bex/usar.hpp"

namespace bex {

enum class PolicyKind {
    Expert,        // greedy nearest-target behaviour
    ExploreFirst,  // visits every room before doing any role work
    FixedNorth,    // state-invariant: always heads north
};

inline constexpr std::array<PolicyKind, 3> kAllPolicyKinds{PolicyKind::Expert, PolicyKind::ExploreFirst,
                                                           PolicyKind::FixedNorth};

std::string_view to_string(PolicyKind k);
PolicyKind parse_policy_kind(std::string_view s);

struct Policy {
    PolicyKind kind = PolicyKind::Expert;
    Role role = Role::Engineer;
};

struct PolicyPair {
    Policy engineer{PolicyKind::Expert, Role::Engineer};
    Policy medic{PolicyKind::Expert, Role::Medic};

    static PolicyPair both(PolicyKind k) { return {{k, Role::Engineer}, {k, Role::Medic}}; }
    const Policy& for_role(Role r) const { return r == Role::Engineer ? engineer : medic; }
};

// Deterministic in (state, agent). Throws Error when agent != policy.role.
Action act(const Policy& policy, const WorldState& state, Role agent);

struct TrajectoryStep {
    int t = 0;  // world timestep at which the action was taken
    FeatureVector features;
    std::optional<WorldState> state;  // absent for trajectories recorded elsewhere
    Action action = Action::Wait;
};

// One agent's turns within one episode, in temporal order.
struct Trajectory {
    int episode_id = 0;
    Role agent = Role::Engineer;
    std::vector<TrajectoryStep> steps;
};

struct RolloutConfig {
    int num_rollouts = 1000;
    int max_steps = 20 * kNumRooms;  // total turns across both agents
    std::uint64_t base_seed = 0;     // episode i uses scenario seed base_seed + i
    ScenarioConfig scenario{};       // seed field is overwritten per episode
    int threads = 1;

    void validate() const;
};

struct Episode {
    Trajectory engineer;
    Trajectory medic;
    WorldState final_state;
};

Episode run_episode(const PolicyPair& policies, const ScenarioConfig& scenario, int max_steps,
                    int episode_id = 0);

// 2 * num_rollouts trajectories, ordered by episode then engineer, medic.
// Output does not depend on cfg.threads.
std::vector<Trajectory> sample_rollouts(const PolicyPair& policies, const RolloutConfig& cfg);

// Newline-delimited JSON, one step per line:
//   {"episode":0,"t":3,"agent":"medic","features":{...},"action":"MoveNorth","state":{...}}
// "state" is optional on input. Lines are written in (episode, t) order.
void write_trajectories(std::ostream& out, const std::vector<Trajectory>& trajectories,
                        bool include_states = true);
std::vector<Trajectory> read_trajectories(std::istream& in);

}  // namespace bex
