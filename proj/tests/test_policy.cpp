#include <gtest/gtest.h>

#include <sstream>

#include "bex/error.hpp"
#include "bex/policy.hpp"

using namespace bex;

namespace {

WorldState blank(RoomCoord engineer, RoomCoord medic) {
    ScenarioConfig cfg;
    cfg.n_victims = 0;
    cfg.n_rubble = 0;
    cfg.starts = std::array<RoomCoord, 2>{engineer, medic};
    return new_scenario(cfg);
}

RolloutConfig small(int n, std::uint64_t seed) {
    RolloutConfig rc;
    rc.num_rollouts = n;
    rc.base_seed = seed;
    return rc;
}

}  // namespace

TEST(Act, FixedNorthWaitsOnTopRow) {
    const auto s = blank({0, 3}, {2, 2});
    EXPECT_EQ(act({PolicyKind::FixedNorth, Role::Engineer}, s, Role::Engineer), Action::Wait);
    EXPECT_EQ(act({PolicyKind::FixedNorth, Role::Medic}, s, Role::Medic), Action::MoveNorth);
}

TEST(Act, ExpertMedicTriagesVisibleVictim) {
    auto s = blank({0, 0}, {2, 2});
    s.room({2, 2}).victim = Victim::Visible;
    EXPECT_EQ(act({PolicyKind::Expert, Role::Medic}, s, Role::Medic), Action::TriageVictim);
}

TEST(Act, ExpertEngineerHeadsForRubbleThenExplores) {
    auto s = blank({2, 2}, {0, 0});
    s.room({2, 4}).has_rubble = true;
    EXPECT_EQ(act({PolicyKind::Expert, Role::Engineer}, s, Role::Engineer), Action::MoveEast);
    s.room({2, 4}).has_rubble = false;
    // No rubble left: nearest unexplored room, N before S before E before W.
    EXPECT_EQ(act({PolicyKind::Expert, Role::Engineer}, s, Role::Engineer), Action::MoveNorth);
    for (auto& r : s.rooms) r.explored = true;
    EXPECT_EQ(act({PolicyKind::Expert, Role::Engineer}, s, Role::Engineer), Action::Wait);
}

TEST(Act, ExploreFirstIgnoresRubbleWhileRoomsRemain) {
    auto s = blank({1, 1}, {0, 0});
    s.room({1, 1}).has_rubble = true;
    const Action a = act({PolicyKind::ExploreFirst, Role::Engineer}, s, Role::Engineer);
    EXPECT_TRUE(is_move(a));
    for (auto& r : s.rooms) r.explored = true;
    EXPECT_EQ(act({PolicyKind::ExploreFirst, Role::Engineer}, s, Role::Engineer), Action::RemoveRubble);
}

TEST(Act, RejectsRoleMismatch) {
    const auto s = blank({0, 0}, {1, 1});
    EXPECT_THROW(act({PolicyKind::Expert, Role::Engineer}, s, Role::Medic), Error);
}

TEST(Rollouts, FixedNorthOnlyMovesNorthOrWaits) {
    RolloutConfig rc = small(1, 0);
    rc.max_steps = 10;
    const auto t = sample_rollouts(PolicyPair::both(PolicyKind::FixedNorth), rc);
    ASSERT_EQ(t.size(), 2u);
    EXPECT_EQ(t[0].agent, Role::Engineer);
    EXPECT_EQ(t[0].steps.size(), 5u);
    for (const auto& s : t[0].steps) EXPECT_TRUE(s.action == Action::MoveNorth || s.action == Action::Wait);
}

TEST(Rollouts, ZeroEpisodes) { EXPECT_TRUE(sample_rollouts(PolicyPair{}, small(0, 0)).empty()); }

TEST(Rollouts, ReplayFidelityForEveryPolicy) {
    for (PolicyKind k : kAllPolicyKinds) {
        const auto pair = PolicyPair::both(k);
        const auto trajectories = sample_rollouts(pair, small(100, 42));
        ASSERT_EQ(trajectories.size(), 200u);
        for (const auto& tr : trajectories) {
            int last_t = -1;
            for (const auto& s : tr.steps) {
                ASSERT_TRUE(s.state);
                EXPECT_EQ(s.state->whose_turn, tr.agent);
                EXPECT_GT(s.t, last_t);
                last_t = s.t;
                EXPECT_TRUE(is_legal(*s.state, tr.agent, s.action));
                EXPECT_EQ(act(pair.for_role(tr.agent), *s.state, tr.agent), s.action);
                EXPECT_EQ(extract_features(*s.state, tr.agent), s.features);
            }
        }
    }
}

TEST(Rollouts, ExploreFirstDoesNoRoleWorkBeforeExploring) {
    const auto trajectories = sample_rollouts(PolicyPair::both(PolicyKind::ExploreFirst), small(100, 1));
    for (const auto& tr : trajectories)
        for (const auto& s : tr.steps)
            if (s.state->explored_count() < kNumRooms) EXPECT_TRUE(is_move(s.action));
}

TEST(Rollouts, ExpertTerminatesSeed42) {
    ScenarioConfig cfg;
    cfg.seed = 42;
    const auto ep = run_episode(PolicyPair{}, cfg, 400);
    EXPECT_TRUE(is_terminal(ep.final_state));
    EXPECT_LE(ep.final_state.timestep, 400);
}

TEST(Rollouts, ExpertSolvesEverySeededScenario) {
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
        ScenarioConfig cfg;
        cfg.seed = seed;
        cfg.n_victims = static_cast<int>(1 + seed % 6);
        cfg.n_rubble = static_cast<int>(seed % 8);
        EXPECT_TRUE(is_terminal(run_episode(PolicyPair{}, cfg, 20 * kNumRooms).final_state)) << seed;
    }
}

TEST(Rollouts, IndependentOfThreadCount) {
    RolloutConfig rc = small(40, 9);
    const auto one = sample_rollouts(PolicyPair{}, rc);
    rc.threads = 4;
    const auto four = sample_rollouts(PolicyPair{}, rc);
    std::ostringstream a, b;
    write_trajectories(a, one);
    write_trajectories(b, four);
    EXPECT_EQ(a.str(), b.str());
}

TEST(Trajectories, NdjsonRoundTrip) {
    const auto trajectories = sample_rollouts(PolicyPair::both(PolicyKind::ExploreFirst), small(5, 3));
    std::ostringstream out;
    write_trajectories(out, trajectories);
    std::istringstream in(out.str());
    const auto back = read_trajectories(in);
    std::ostringstream again;
    write_trajectories(again, back);
    EXPECT_EQ(out.str(), again.str());
}

TEST(Trajectories, StatelessInputIsAccepted) {
    const auto trajectories = sample_rollouts(PolicyPair{}, small(2, 3));
    std::ostringstream out;
    write_trajectories(out, trajectories, false);
    EXPECT_EQ(out.str().find("\"state\""), std::string::npos);
    std::istringstream in(out.str());
    const auto back = read_trajectories(in);
    ASSERT_EQ(back.size(), trajectories.size());
    EXPECT_FALSE(back[0].steps[0].state);
    EXPECT_EQ(back[0].steps[0].features, trajectories[0].steps[0].features);
}

TEST(Trajectories, ReportsBadLine) {
    std::istringstream in("{\"episode\":0,\"t\":0,\"agent\":\"medic\"}\n");
    try {
        read_trajectories(in);
        FAIL() << "expected a parse error";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos);
    }
}
