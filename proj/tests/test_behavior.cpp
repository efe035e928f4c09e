#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "bex/behavior.hpp"
#include "bex/error.hpp"
#include "bex/rng.hpp"
#include "oracles.hpp"

using namespace bex;

namespace {

FeatureVector random_vector(Rng& rng) {
    FeatureVector v;
    for (const auto& info : all_features()) v[info.id] = info.domain[uniform_index(rng, info.domain.size())];
    return v;
}

DecisionTree expert_tree(Role role, int rollouts = 200) {
    RolloutConfig rc;
    rc.num_rollouts = rollouts;
    const auto t = sample_rollouts(PolicyPair{}, rc);
    return fit_tree(build_dataset(t, role));
}

DecisionPath path_of(Role agent, Action action, std::vector<Predicate> preds) {
    DecisionPath p;
    p.agent = agent;
    p.action = action;
    p.predicates = std::move(preds);
    return p;
}

}  // namespace

TEST(Path, SoundOnRandomVectors) {
    Rng rng(21);
    for (Role role : kAllRoles) {
        const auto tree = expert_tree(role);
        for (int i = 0; i < 500; ++i) {
            const auto v = random_vector(rng);
            const auto p = extract_path(tree, v);
            EXPECT_TRUE(satisfies_all(p.predicates, v));
            EXPECT_EQ(p.action, predict(tree, v));
            EXPECT_EQ(p.leaf, oracle::naive_leaf(tree, v));
            EXPECT_EQ(p.agent, role);
            EXPECT_DOUBLE_EQ(p.confidence, tree.nodes[p.leaf].distribution[static_cast<int>(p.action)]);
        }
    }
}

TEST(Path, RootLeafHasNoPredicates) {
    LabeledDataset d;
    d.role = Role::Medic;
    d.rows.push_back({FeatureVector{}, Action::MoveNorth});
    const auto p = extract_path(fit_tree(d), FeatureVector{});
    EXPECT_TRUE(p.predicates.empty());
    EXPECT_EQ(render_template(p, PhraseTable::defaults()), "The medic moved north.");
}

TEST(Simplify, TightensRepeatedUpperBounds) {
    const std::vector<Predicate> preds{{Feature::DistNearestKnownVictim, Op::LessEq, 5},
                                       {Feature::DistNearestKnownVictim, Op::LessEq, 3}};
    const auto s = simplify_path(preds);
    ASSERT_EQ(s.constraints.size(), 1u);
    EXPECT_EQ(s.constraints[0].upper, 3);
    EXPECT_EQ(s.constraints[0].admitted_values(), (std::vector<double>{0, 1, 2, 3}));
}

TEST(Simplify, BinaryFeaturesGetTruthValue) {
    const std::vector<Predicate> preds{{Feature::VictimInRoom, Op::Greater, 0.5},
                                       {Feature::RubbleInRoom, Op::LessEq, 0.5},
                                       {Feature::DirVictim, Op::LessEq, 2.5}};
    const auto s = simplify_path(preds);
    ASSERT_EQ(s.constraints.size(), 3u);
    EXPECT_EQ(s.constraints[0].truth, true);
    EXPECT_EQ(s.constraints[1].truth, false);
    EXPECT_FALSE(s.constraints[2].truth.has_value());
    ASSERT_NE(s.find(Feature::DirVictim), nullptr);
    EXPECT_EQ(s.find(Feature::AgentRow), nullptr);
}

TEST(Simplify, OrderFollowsFirstAppearance) {
    const std::vector<Predicate> preds{{Feature::AgentRow, Op::Greater, 0.5},
                                       {Feature::VictimInRoom, Op::LessEq, 0.5},
                                       {Feature::AgentRow, Op::LessEq, 2.5}};
    const auto s = simplify_path(preds);
    ASSERT_EQ(s.constraints.size(), 2u);
    EXPECT_EQ(s.constraints[0].feature, Feature::AgentRow);
    EXPECT_EQ(s.constraints[0].admitted_values(), (std::vector<double>{1, 2}));
}

TEST(Simplify, ContradictionIsReported) {
    const std::vector<Predicate> empty_interval{{Feature::AgentRow, Op::LessEq, 1.5},
                                                {Feature::AgentRow, Op::Greater, 2.5}};
    EXPECT_THROW(simplify_path(empty_interval), ConsistencyError);
    // Nonempty on the reals but no domain value inside it.
    const std::vector<Predicate> gap{{Feature::DistNearestKnownVictim, Op::Greater, 7.5},
                                     {Feature::DistNearestKnownVictim, Op::LessEq, 50}};
    EXPECT_THROW(simplify_path(gap), ConsistencyError);
}

// Brute-force equivalence: the simplified constraints admit exactly the same
// vectors as the raw conjunction, on real tree paths and random vectors.
TEST(Simplify, EquivalentToConjunction) {
    Rng rng(5);
    for (Role role : kAllRoles) {
        const auto tree = expert_tree(role);
        for (int i = 0; i < 50; ++i) {
            const auto p = extract_path(tree, random_vector(rng));
            const auto s = simplify_path(p);
            for (int k = 0; k < 200; ++k) {
                const auto v = random_vector(rng);
                EXPECT_EQ(s.satisfied_by(v), satisfies_all(p.predicates, v));
            }
        }
    }
}

TEST(Simplify, AdmittedValuesMatchDomainFilter) {
    Rng rng(6);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<Predicate> preds;
        const Feature f = all_features()[uniform_index(rng, kNumFeatures)].id;
        const auto& dom = feature_info(f).domain;
        const int n = 1 + static_cast<int>(uniform_index(rng, 4));
        for (int i = 0; i < n; ++i) {
            const double thr = dom[uniform_index(rng, dom.size())] + 0.5;
            preds.push_back({f, uniform_index(rng, 2) ? Op::LessEq : Op::Greater, thr});
        }
        std::vector<double> expected;
        for (double v : dom) {
            bool ok = true;
            for (const auto& p : preds) ok = ok && (p.op == Op::LessEq ? v <= p.threshold : v > p.threshold);
            if (ok) expected.push_back(v);
        }
        if (expected.empty()) {
            EXPECT_THROW(simplify_path(preds), ConsistencyError);
            continue;
        }
        const auto s = simplify_path(preds);
        ASSERT_EQ(s.constraints.size(), 1u);
        EXPECT_EQ(s.constraints[0].admitted_values(), expected);
    }
}

TEST(Template, SingleBinaryRule) {
    const auto p = path_of(Role::Medic, Action::TriageVictim, {{Feature::VictimInRoom, Op::Greater, 0.5}});
    EXPECT_EQ(render_template(p, PhraseTable::defaults()),
              "The medic triaged the victim because a victim is in the current room.");
}

TEST(Template, RangesAndConjunction) {
    const auto& phrases = PhraseTable::defaults();
    const auto p = path_of(Role::Engineer, Action::MoveEast,
                           {{Feature::RubbleInRoom, Op::LessEq, 0.5},
                            {Feature::DistNearestKnownVictim, Op::LessEq, 5},
                            {Feature::DistNearestKnownVictim, Op::LessEq, 3},
                            {Feature::DirRubble, Op::Greater, 2.5},
                            {Feature::DirRubble, Op::LessEq, 3.5}});
    EXPECT_EQ(render_template(p, phrases),
              "The engineer moved east because rubble is not in the current room and the nearest visible victim "
              "is at most 3 rooms away and the shortest path to rubble leads east.");
}

TEST(Template, CountPhrasing) {
    const auto& phrases = PhraseTable::defaults();
    EXPECT_EQ(phrases.describe_values(Feature::DistNearestKnownVictim, {0}),
              "the nearest visible victim is in the current room");
    EXPECT_EQ(phrases.describe_values(Feature::DistNearestKnownVictim, {1}),
              "the nearest visible victim is exactly 1 room away");
    EXPECT_EQ(phrases.describe_values(Feature::DistNearestKnownVictim, {2, 3, 4}),
              "the nearest visible victim is between 2 and 4 rooms away");
    EXPECT_EQ(phrases.describe_values(Feature::DistNearestKnownVictim, {4, 5, 6, 7, 99}),
              "the nearest visible victim is at least 4 rooms away or no visible victim is known");
    EXPECT_EQ(phrases.describe_values(Feature::DistNearestKnownVictim, {99}), "no visible victim is known");
    EXPECT_EQ(phrases.describe_values(Feature::AgentRow, {0}), "the agent is against the north wall");
    EXPECT_EQ(phrases.describe_values(Feature::AgentRow, {1, 2, 3}), "the north wall is at least 1 row away");
    EXPECT_EQ(phrases.describe_values(Feature::DirVictim, {1, 2}),
              "the shortest path to a visible victim leads north or the shortest path to a visible victim leads "
              "south");
}

TEST(Template, EachFeatureAppearsOnce) {
    Rng rng(31);
    const auto& phrases = PhraseTable::defaults();
    for (Role role : kAllRoles) {
        const auto tree = expert_tree(role);
        for (int i = 0; i < 200; ++i) {
            const auto p = extract_path(tree, random_vector(rng));
            const auto clauses = path_clauses(p, phrases);
            EXPECT_EQ(clauses.size(), simplify_path(p).constraints.size());
            std::set<std::string> unique(clauses.begin(), clauses.end());
            EXPECT_EQ(unique.size(), clauses.size());
        }
    }
}

TEST(PhraseTable, DefaultsCoverEveryFeatureValueAndAction) {
    const auto& phrases = PhraseTable::defaults();
    EXPECT_TRUE(phrases.missing_features().empty());
    for (const auto& info : all_features())
        for (double v : info.domain) EXPECT_FALSE(phrases.describe_value(info.id, v).empty()) << info.name << v;
    for (Action a : kAllActions) EXPECT_FALSE(phrases.action_phrase(a).empty());
}

TEST(PhraseTable, PartialTableNamesMissingFeature) {
    const auto j = nlohmann::json::parse(R"({
        "actions": {"MoveNorth":"moved north","MoveSouth":"moved south","MoveEast":"moved east",
                    "MoveWest":"moved west","RemoveRubble":"removed the rubble",
                    "TriageVictim":"triaged the victim","Wait":"waited"},
        "features": {"victim_in_room": {"true": "a victim is here", "false": "no victim is here"}}
    })");
    const auto t = PhraseTable::from_json(j);
    EXPECT_TRUE(t.has(Feature::VictimInRoom));
    EXPECT_EQ(t.missing_features().size(), kNumFeatures - 1);
    try {
        t.describe_value(Feature::DirRubble, 1);
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("dir_rubble"), std::string::npos);
    }
    const auto p = path_of(Role::Medic, Action::TriageVictim, {{Feature::VictimInRoom, Op::Greater, 0.5}});
    EXPECT_EQ(render_template(p, t), "The medic triaged the victim because a victim is here.");
}

TEST(Counterfactual, EmptyFlipsReproduceOriginal) {
    Rng rng(9);
    const auto tree = expert_tree(Role::Medic);
    for (int i = 0; i < 200; ++i) {
        const auto v = random_vector(rng);
        const auto r = counterfactual(tree, v, {});
        EXPECT_EQ(r.path, r.original);
        EXPECT_FALSE(r.changed);
        EXPECT_EQ(r.features, v);
    }
}

TEST(Counterfactual, OffPathFlipLeavesDecisionAlone) {
    Rng rng(10);
    const auto tree = expert_tree(Role::Engineer);
    for (int i = 0; i < 200; ++i) {
        const auto v = random_vector(rng);
        const auto original = extract_path(tree, v);
        std::set<Feature> on_path;
        for (const auto& p : original.predicates) on_path.insert(p.feature);
        for (const auto& info : all_features()) {
            if (on_path.contains(info.id)) continue;
            CounterfactualQuery q;
            q.flips[info.id] = info.domain[uniform_index(rng, info.domain.size())];
            const auto r = counterfactual(tree, v, q);
            EXPECT_EQ(r.path.action, original.action);
            EXPECT_EQ(r.path.leaf, original.leaf);
        }
    }
}

TEST(Counterfactual, MatchesPredictOnFlippedVector) {
    Rng rng(11);
    const auto tree = expert_tree(Role::Medic);
    for (int i = 0; i < 300; ++i) {
        const auto v = random_vector(rng);
        CounterfactualQuery q;
        const auto& info = all_features()[uniform_index(rng, kNumFeatures)];
        q.flips[info.id] = info.domain[uniform_index(rng, info.domain.size())];
        const auto r = counterfactual(tree, v, q);
        auto flipped = v;
        flipped[info.id] = q.flips[info.id];
        EXPECT_EQ(r.path.action, predict(tree, flipped));
        EXPECT_EQ(r.changed, predict(tree, flipped) != predict(tree, v));
    }
}

TEST(Counterfactual, RejectsBadQueries) {
    EXPECT_THROW(CounterfactualQuery::from_json(nlohmann::json{{"dir_victim", 9}}), SchemaError);
    EXPECT_THROW(CounterfactualQuery::from_json(nlohmann::json{{"smoke", 1}}), SchemaError);
    EXPECT_THROW(CounterfactualQuery::from_json(nlohmann::json{{"victim_in_room", "yes"}}), SchemaError);
    EXPECT_THROW(CounterfactualQuery::from_json(nlohmann::json::array()), SchemaError);
    const auto q = CounterfactualQuery::from_json(nlohmann::json{{"victim_in_room", 1}});
    EXPECT_EQ(q.flips.at(Feature::VictimInRoom), 1);
}

TEST(Json, PathSerialization) {
    const auto p = path_of(Role::Medic, Action::TriageVictim, {{Feature::VictimInRoom, Op::Greater, 0.5}});
    const nlohmann::json j = p;
    EXPECT_EQ(j.at("action"), "TriageVictim");
    EXPECT_EQ(j.at("predicates")[0].at("op"), ">");
    EXPECT_EQ(j.at("predicates")[0].at("feature"), "victim_in_room");
}
