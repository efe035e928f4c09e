#include "bex/policy.hpp"

#include <algorithm>
#include <atomic>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "bex/error.hpp"

namespace bex {

namespace {

Action move_towards(RoomCoord from, const std::array<bool, kNumRooms>& targets) {
    const NavResult nav = navigate(from, targets);
    return nav.distance > 0 ? move_action(nav.first_step) : Action::Wait;
}

std::array<bool, kNumRooms> unexplored_rooms(const WorldState& s) {
    std::array<bool, kNumRooms> m{};
    for (int i = 0; i < kNumRooms; ++i) m[i] = !s.rooms[i].explored;
    return m;
}

Action expert(const WorldState& s, Role agent) {
    const RoomCoord here = s.position(agent);
    const Room& room = s.room(here);
    std::array<bool, kNumRooms> targets{};
    if (agent == Role::Engineer) {
        if (room.has_rubble) return Action::RemoveRubble;
        for (int i = 0; i < kNumRooms; ++i) targets[i] = s.rooms[i].has_rubble;
    } else {
        if (room.victim == Victim::Visible) return Action::TriageVictim;
        for (int i = 0; i < kNumRooms; ++i) targets[i] = s.rooms[i].victim == Victim::Visible;
    }
    if (const Action a = move_towards(here, targets); a != Action::Wait) return a;
    return move_towards(here, unexplored_rooms(s));
}

}  // namespace

std::string_view to_string(PolicyKind k) {
    switch (k) {
        case PolicyKind::Expert: return "expert";
        case PolicyKind::ExploreFirst: return "explore_first";
        case PolicyKind::FixedNorth: return "fixed_north";
    }
    return "expert";
}

PolicyKind parse_policy_kind(std::string_view s) {
    for (PolicyKind k : kAllPolicyKinds)
        if (to_string(k) == s) return k;
    throw ParseError("unknown policy '" + std::string(s) + "'");
}

Action act(const Policy& policy, const WorldState& state, Role agent) {
    if (agent != policy.role)
        throw Error("policy for the " + std::string(to_string(policy.role)) + " asked to act for the " +
                    std::string(to_string(agent)));
    switch (policy.kind) {
        case PolicyKind::Expert: return expert(state, agent);
        case PolicyKind::ExploreFirst:
            if (state.explored_count() < kNumRooms)
                return move_towards(state.position(agent), unexplored_rooms(state));
            return expert(state, agent);
        case PolicyKind::FixedNorth:
            return is_legal(state, agent, Action::MoveNorth) ? Action::MoveNorth : Action::Wait;
    }
    return Action::Wait;
}

void RolloutConfig::validate() const {
    if (num_rollouts < 0) throw ConfigError("num_rollouts: must be >= 0");
    if (max_steps < 1) throw ConfigError("max_steps: must be >= 1");
    if (threads < 1) throw ConfigError("threads: must be >= 1");
    scenario.validate();
}

Episode run_episode(const PolicyPair& policies, const ScenarioConfig& scenario, int max_steps, int episode_id) {
    Episode ep;
    ep.engineer.episode_id = ep.medic.episode_id = episode_id;
    ep.engineer.agent = Role::Engineer;
    ep.medic.agent = Role::Medic;

    WorldState s = new_scenario(scenario);
    for (int n = 0; n < max_steps && !is_terminal(s); ++n) {
        const Role agent = s.whose_turn;
        const Action a = act(policies.for_role(agent), s, agent);
        Trajectory& traj = agent == Role::Engineer ? ep.engineer : ep.medic;
        traj.steps.push_back({s.timestep, extract_features(s, agent), s, a});
        s = step(s, agent, a);
    }
    ep.final_state = s;
    return ep;
}

std::vector<Trajectory> sample_rollouts(const PolicyPair& policies, const RolloutConfig& cfg) {
    cfg.validate();
    const auto n = static_cast<std::size_t>(cfg.num_rollouts);
    std::vector<Episode> episodes(n);

    auto run = [&](std::size_t i) {
        ScenarioConfig sc = cfg.scenario;
        sc.seed = cfg.base_seed + i;
        episodes[i] = run_episode(policies, sc, cfg.max_steps, static_cast<int>(i));
    };

    if (cfg.threads <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) run(i);
    } else {
        std::atomic<std::size_t> next{0};
        {
            std::vector<std::jthread> workers;
            const auto count = std::min<std::size_t>(static_cast<std::size_t>(cfg.threads), n);
            for (std::size_t w = 0; w < count; ++w) {
                workers.emplace_back([&] {
                    for (std::size_t i = next++; i < n; i = next++) run(i);
                });
            }
        }
    }

    std::vector<Trajectory> out;
    out.reserve(2 * n);
    for (auto& ep : episodes) {
        out.push_back(std::move(ep.engineer));
        out.push_back(std::move(ep.medic));
    }
    return out;
}

void write_trajectories(std::ostream& out, const std::vector<Trajectory>& trajectories, bool include_states) {
    struct Line {
        int episode;
        int t;
        const Trajectory* traj;
        const TrajectoryStep* step;
    };
    std::vector<Line> lines;
    for (const auto& traj : trajectories)
        for (const auto& st : traj.steps) lines.push_back({traj.episode_id, st.t, &traj, &st});
    std::stable_sort(lines.begin(), lines.end(), [](const Line& a, const Line& b) {
        return a.episode != b.episode ? a.episode < b.episode : a.t < b.t;
    });

    for (const auto& l : lines) {
        nlohmann::json j = {{"episode", l.episode},
                            {"t", l.t},
                            {"agent", to_string(l.traj->agent)},
                            {"features", l.step->features},
                            {"action", to_string(l.step->action)}};
        if (include_states && l.step->state) j["state"] = *l.step->state;
        out << j.dump() << '\n';
    }
}

std::vector<Trajectory> read_trajectories(std::istream& in) {
    std::map<std::pair<int, int>, Trajectory> grouped;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            TrajectoryStep st;
            const int episode = j.at("episode").get<int>();
            st.t = j.at("t").get<int>();
            const Role agent = parse_role(j.at("agent").get<std::string>());
            st.features = j.at("features").get<FeatureVector>();
            st.action = parse_action(j.at("action").get<std::string>());
            if (j.contains("state")) {
                st.state = j.at("state").get<WorldState>();
                if (extract_features(*st.state, agent) != st.features)
                    throw ParseError("features do not match the recorded state");
            }

            auto& traj = grouped[{episode, static_cast<int>(agent)}];
            traj.episode_id = episode;
            traj.agent = agent;
            if (!traj.steps.empty() && traj.steps.back().t >= st.t)
                throw ParseError("steps for one agent must have increasing t");
            traj.steps.push_back(std::move(st));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
        } catch (const Error& e) {
            throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
        }
    }

    std::vector<Trajectory> out;
    out.reserve(grouped.size());
    for (auto& [_, traj] : grouped) out.push_back(std::move(traj));
    return out;
}

}  // namespace bex
