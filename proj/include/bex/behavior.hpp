#pragma once

#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "bex/features.hpp"
#include "bex/phrase_table.hpp"
#include "bex/tree.hpp"

namespace bex {

enum class Op { LessEq, Greater };

struct Predicate {
    Feature feature = Feature::VictimInRoom;
    Op op = Op::LessEq;
    double threshold = 0;

    bool holds(const FeatureVector& v) const {
        return op == Op::LessEq ? v[feature] <= threshold : v[feature] > threshold;
    }
    friend bool operator==(const Predicate&, const Predicate&) = default;
};

bool satisfies_all(std::span<const Predicate> predicates, const FeatureVector& v);

// The behaviour representation: the tests a surrogate tree applied to one
// observation, in traversal order, and the leaf it reached.
struct DecisionPath {
    Role agent = Role::Engineer;
    std::vector<Predicate> predicates;
    Action action = Action::Wait;
    double confidence = 1.0;  // majority share at the leaf
    int leaf = 0;

    friend bool operator==(const DecisionPath&, const DecisionPath&) = default;
};

DecisionPath extract_path(const DecisionTree& tree, const FeatureVector& features);

// (lower, upper] on the real line.
struct Constraint {
    Feature feature = Feature::VictimInRoom;
    double lower = -std::numeric_limits<double>::infinity();
    double upper = std::numeric_limits<double>::infinity();
    std::optional<bool> truth;  // set for binary features pinned to one value

    bool contains(double v) const { return v > lower && v <= upper; }
    // Domain values inside the interval, ascending.
    std::vector<double> admitted_values() const;
};

// At most one constraint per feature, ordered by first appearance on the path.
struct SimplifiedPath {
    std::vector<Constraint> constraints;

    bool satisfied_by(const FeatureVector& v) const;
    const Constraint* find(Feature f) const;
};

// Throws ConsistencyError when a feature's constraints admit no value.
SimplifiedPath simplify_path(std::span<const Predicate> predicates);
inline SimplifiedPath simplify_path(const DecisionPath& path) { return simplify_path(path.predicates); }

// One clause per simplified constraint, in path order.
std::vector<std::string> path_clauses(const DecisionPath& path, const PhraseTable& phrases);

// "The medic triaged the victim because a victim is in the current room."
std::string render_template(const DecisionPath& path, const PhraseTable& phrases);

struct CounterfactualQuery {
    std::map<Feature, double> flips;

    // Throws SchemaError on an out-of-domain value.
    void validate() const;
    // Object of feature name -> value; throws SchemaError for unknown names.
    static CounterfactualQuery from_json(const nlohmann::json& j);
};

struct CounterfactualResult {
    FeatureVector features;  // after the flips
    DecisionPath original;
    DecisionPath path;
    bool changed = false;  // path.action != original.action
};

CounterfactualResult counterfactual(const DecisionTree& tree, const FeatureVector& features,
                                    const CounterfactualQuery& query);

void to_json(nlohmann::json& j, const Predicate& p);
void to_json(nlohmann::json& j, const DecisionPath& p);
void to_json(nlohmann::json& j, const SimplifiedPath& p);

}  // namespace bex
