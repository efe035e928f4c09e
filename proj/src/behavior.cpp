#include "bex/behavior.hpp"

#include <algorithm>
#include <string>

#include <nlohmann/json.hpp>

#include "bex/error.hpp"

namespace bex {

bool satisfies_all(std::span<const Predicate> predicates, const FeatureVector& v) {
    return std::all_of(predicates.begin(), predicates.end(), [&](const Predicate& p) { return p.holds(v); });
}

DecisionPath extract_path(const DecisionTree& tree, const FeatureVector& features) {
    DecisionPath path;
    path.agent = tree.role;
    // leaf_index validates the schema; walk again to record the branches.
    path.leaf = leaf_index(tree, features);
    int i = 0;
    while (!tree.nodes[i].is_leaf) {
        const TreeNode& n = tree.nodes[i];
        const bool left = features[n.feature] <= n.threshold;
        path.predicates.push_back({n.feature, left ? Op::LessEq : Op::Greater, n.threshold});
        i = left ? n.left : n.right;
    }
    const TreeNode& leaf = tree.nodes[i];
    path.action = leaf.action;
    path.confidence = leaf.distribution[static_cast<int>(leaf.action)];
    return path;
}

std::vector<double> Constraint::admitted_values() const {
    std::vector<double> out;
    for (double v : feature_info(feature).domain)
        if (contains(v)) out.push_back(v);
    return out;
}

bool SimplifiedPath::satisfied_by(const FeatureVector& v) const {
    return std::all_of(constraints.begin(), constraints.end(),
                       [&](const Constraint& c) { return c.contains(v[c.feature]); });
}

const Constraint* SimplifiedPath::find(Feature f) const {
    auto it = std::find_if(constraints.begin(), constraints.end(), [f](const Constraint& c) { return c.feature == f; });
    return it == constraints.end() ? nullptr : &*it;
}

SimplifiedPath simplify_path(std::span<const Predicate> predicates) {
    SimplifiedPath out;
    for (const Predicate& p : predicates) {
        auto it = std::find_if(out.constraints.begin(), out.constraints.end(),
                               [&](const Constraint& c) { return c.feature == p.feature; });
        if (it == out.constraints.end()) {
            Constraint c;
            c.feature = p.feature;
            out.constraints.push_back(c);
            it = std::prev(out.constraints.end());
        }
        if (p.op == Op::LessEq) it->upper = std::min(it->upper, p.threshold);
        else it->lower = std::max(it->lower, p.threshold);
    }

    for (Constraint& c : out.constraints) {
        const std::string name(to_string(c.feature));
        if (!(c.lower < c.upper))
            throw ConsistencyError("path constrains '" + name + "' to an empty interval");
        const auto admitted = c.admitted_values();
        if (admitted.empty()) throw ConsistencyError("path admits no value of '" + name + "'");
        if (feature_info(c.feature).kind == FeatureKind::Binary && admitted.size() == 1)
            c.truth = admitted.front() > 0.5;
    }
    return out;
}

std::vector<std::string> path_clauses(const DecisionPath& path, const PhraseTable& phrases) {
    std::vector<std::string> clauses;
    for (const Constraint& c : simplify_path(path).constraints)
        clauses.push_back(phrases.describe_values(c.feature, c.admitted_values()));
    return clauses;
}

std::string render_template(const DecisionPath& path, const PhraseTable& phrases) {
    std::string out = "The ";
    out += to_string(path.agent);
    out += ' ';
    out += phrases.action_phrase(path.action);
    const auto clauses = path_clauses(path, phrases);
    for (std::size_t i = 0; i < clauses.size(); ++i) {
        out += i == 0 ? " because " : " and ";
        out += clauses[i];
    }
    out += '.';
    return out;
}

void CounterfactualQuery::validate() const {
    for (const auto& [f, v] : flips)
        if (!in_domain(f, v))
            throw SchemaError("counterfactual: value " + std::to_string(v) + " outside the domain of '" +
                              std::string(to_string(f)) + "'");
}

CounterfactualQuery CounterfactualQuery::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw SchemaError("counterfactual: flips must be an object of feature -> value");
    CounterfactualQuery q;
    for (const auto& [name, value] : j.items()) {
        if (!value.is_number()) throw SchemaError("counterfactual: value for '" + name + "' must be a number");
        q.flips[parse_feature(name)] = value.get<double>();
    }
    q.validate();
    return q;
}

CounterfactualResult counterfactual(const DecisionTree& tree, const FeatureVector& features,
                                    const CounterfactualQuery& query) {
    query.validate();
    CounterfactualResult r;
    r.original = extract_path(tree, features);
    r.features = features;
    for (const auto& [f, v] : query.flips) r.features[f] = v;
    r.path = extract_path(tree, r.features);
    r.changed = r.path.action != r.original.action;
    return r;
}

void to_json(nlohmann::json& j, const Predicate& p) {
    j = {{"feature", to_string(p.feature)}, {"op", p.op == Op::LessEq ? "<=" : ">"}, {"threshold", p.threshold}};
}

void to_json(nlohmann::json& j, const DecisionPath& p) {
    nlohmann::json preds = nlohmann::json::array();
    for (const auto& pr : p.predicates) preds.push_back(pr);
    j = {{"agent", to_string(p.agent)},
         {"action", to_string(p.action)},
         {"confidence", p.confidence},
         {"leaf", p.leaf},
         {"predicates", std::move(preds)}};
}

void to_json(nlohmann::json& j, const SimplifiedPath& p) {
    j = nlohmann::json::array();
    for (const auto& c : p.constraints) {
        nlohmann::json e = {{"feature", to_string(c.feature)}, {"values", c.admitted_values()}};
        if (c.truth) e["truth"] = *c.truth;
        j.push_back(std::move(e));
    }
}

}  // namespace bex
