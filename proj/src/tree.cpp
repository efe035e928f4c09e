#include "bex/tree.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>

#include <nlohmann/json.hpp>

#include "bex/error.hpp"

namespace bex {

namespace {

using Counts = std::array<std::size_t, kNumActions>;

double sum_squares(const Counts& c) {
    double s = 0;
    for (auto x : c) s += static_cast<double>(x) * static_cast<double>(x);
    return s;
}

bool is_pure(const Counts& c) {
    return std::count_if(c.begin(), c.end(), [](std::size_t x) { return x > 0; }) <= 1;
}

struct Split {
    Feature feature = Feature::VictimInRoom;
    double threshold = 0;
    double score = -1;  // sum_k cL_k^2/nL + sum_k cR_k^2/nR; larger is purer
};

class Builder {
public:
    Builder(const LabeledDataset& data, const TreeParams& params) : data_(data), params_(params) {}

    std::vector<TreeNode> run() {
        std::vector<std::size_t> idx(data_.rows.size());
        std::iota(idx.begin(), idx.end(), 0);
        grow(idx, 0);
        return std::move(nodes_);
    }

private:
    Counts count(const std::vector<std::size_t>& idx) const {
        Counts c{};
        for (auto i : idx) ++c[static_cast<int>(data_.rows[i].action)];
        return c;
    }

    TreeNode make_leaf(const Counts& c, std::size_t n) const {
        TreeNode leaf;
        leaf.is_leaf = true;
        leaf.samples = n;
        int best = 0;
        for (int a = 0; a < kNumActions; ++a) {
            leaf.distribution[a] = static_cast<double>(c[a]) / static_cast<double>(n);
            if (c[a] > c[best]) best = a;
        }
        leaf.action = static_cast<Action>(best);
        return leaf;
    }

    std::optional<Split> best_split(const std::vector<std::size_t>& idx, const Counts& total) const {
        const std::size_t n = idx.size();
        const auto min_leaf = static_cast<std::size_t>(params_.min_samples_leaf);
        std::optional<Split> best;
        for (const auto& info : all_features()) {
            std::map<double, Counts> by_value;
            for (auto i : idx) ++by_value[data_.rows[i].features[info.id]][static_cast<int>(data_.rows[i].action)];
            if (by_value.size() < 2) continue;

            Counts left{};
            std::size_t n_left = 0;
            for (auto it = by_value.begin(); std::next(it) != by_value.end(); ++it) {
                for (int a = 0; a < kNumActions; ++a) left[a] += it->second[a];
                n_left += std::accumulate(it->second.begin(), it->second.end(), std::size_t{0});
                const std::size_t n_right = n - n_left;
                if (n_left < min_leaf || n_right < min_leaf) continue;

                Counts right{};
                for (int a = 0; a < kNumActions; ++a) right[a] = total[a] - left[a];
                const double score = sum_squares(left) / static_cast<double>(n_left) +
                                     sum_squares(right) / static_cast<double>(n_right);
                // Strictly better only; earlier (feature, threshold) wins ties.
                if (!best || score > best->score + 1e-12 * std::max(1.0, best->score)) {
                    best = Split{info.id, 0.5 * (it->first + std::next(it)->first), score};
                }
            }
        }
        return best;
    }

    int grow(const std::vector<std::size_t>& idx, int depth) {
        const Counts c = count(idx);
        const int self = static_cast<int>(nodes_.size());
        nodes_.push_back(make_leaf(c, idx.size()));

        const auto min_leaf = static_cast<std::size_t>(params_.min_samples_leaf);
        if (is_pure(c) || depth >= params_.max_depth || idx.size() < 2 * min_leaf) return self;

        const auto split = best_split(idx, c);
        if (!split) return self;

        std::vector<std::size_t> left;
        std::vector<std::size_t> right;
        for (auto i : idx) (data_.rows[i].features[split->feature] <= split->threshold ? left : right).push_back(i);

        TreeNode& node = nodes_[self];
        node.is_leaf = false;
        node.feature = split->feature;
        node.threshold = split->threshold;
        node.distribution = {};
        node.action = Action::Wait;
        const int l = grow(left, depth + 1);
        nodes_[self].left = l;
        const int r = grow(right, depth + 1);
        nodes_[self].right = r;
        return self;
    }

    const LabeledDataset& data_;
    const TreeParams& params_;
    std::vector<TreeNode> nodes_;
};

int depth_below(const DecisionTree& t, int i) {
    const auto& n = t.nodes[i];
    if (n.is_leaf) return 0;
    return 1 + std::max(depth_below(t, n.left), depth_below(t, n.right));
}

void check_schema(const DecisionTree& tree) {
    if (tree.schema_version != kFeatureSchemaVersion)
        throw SchemaError("tree uses feature schema '" + tree.schema_version + "', expected '" +
                          std::string(kFeatureSchemaVersion) + "'");
}

}  // namespace

LabeledDataset build_dataset(std::span<const Trajectory> trajectories, Role role) {
    LabeledDataset ds;
    ds.role = role;
    for (const auto& traj : trajectories) {
        if (traj.agent != role) continue;
        for (const auto& st : traj.steps) ds.rows.push_back({st.features, st.action});
    }
    if (ds.rows.empty())
        throw DatasetError("no trajectory steps recorded for the " + std::string(to_string(role)));
    return ds;
}

void TreeParams::validate() const {
    if (max_depth < 1) throw ConfigError("max_depth: must be >= 1");
    if (min_samples_leaf < 1) throw ConfigError("min_samples_leaf: must be >= 1");
}

int DecisionTree::depth() const { return nodes.empty() ? 0 : depth_below(*this, 0); }

int DecisionTree::leaf_count() const {
    return static_cast<int>(std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.is_leaf; }));
}

DecisionTree fit_tree(const LabeledDataset& data, const TreeParams& params) {
    params.validate();
    if (data.rows.empty()) throw DatasetError("cannot fit a tree to an empty dataset");
    if (data.schema_version != kFeatureSchemaVersion)
        throw SchemaError("dataset uses feature schema '" + data.schema_version + "'");
    DecisionTree tree;
    tree.role = data.role;
    tree.params = params;
    tree.nodes = Builder(data, params).run();
    return tree;
}

int leaf_index(const DecisionTree& tree, const FeatureVector& features) {
    check_schema(tree);
    int i = 0;
    while (!tree.nodes[i].is_leaf) {
        const auto& n = tree.nodes[i];
        i = features[n.feature] <= n.threshold ? n.left : n.right;
    }
    return i;
}

Action predict(const DecisionTree& tree, const FeatureVector& features) {
    return tree.nodes[leaf_index(tree, features)].action;
}

double fidelity(const DecisionTree& tree, const Policy& policy, std::span<const WorldState> states) {
    if (states.empty()) throw DatasetError("fidelity needs at least one state");
    std::size_t agree = 0;
    for (const auto& s : states)
        if (predict(tree, extract_features(s, policy.role)) == act(policy, s, policy.role)) ++agree;
    return static_cast<double>(agree) / static_cast<double>(states.size());
}

double agreement(const DecisionTree& tree, const LabeledDataset& data) {
    if (data.rows.empty()) throw DatasetError("agreement needs at least one row");
    std::size_t agree = 0;
    for (const auto& row : data.rows)
        if (predict(tree, row.features) == row.action) ++agree;
    return static_cast<double>(agree) / static_cast<double>(data.rows.size());
}

std::string serialize_tree(const DecisionTree& tree) {
    nlohmann::json features = nlohmann::json::array();
    for (const auto& info : all_features()) features.push_back(info.name);

    nlohmann::json nodes = nlohmann::json::array();
    for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
        const auto& n = tree.nodes[i];
        nlohmann::json j = {{"id", i}, {"samples", n.samples}};
        if (n.is_leaf) {
            j["action"] = to_string(n.action);
            nlohmann::json dist = nlohmann::json::object();
            for (Action a : kAllActions) dist[std::string(to_string(a))] = n.distribution[static_cast<int>(a)];
            j["distribution"] = std::move(dist);
        } else {
            j["feature"] = to_string(n.feature);
            j["threshold"] = n.threshold;
            j["left"] = n.left;
            j["right"] = n.right;
        }
        nodes.push_back(std::move(j));
    }

    const nlohmann::json doc = {
        {"format", kTreeFormat},
        {"schema", tree.schema_version},
        {"features", std::move(features)},
        {"role", to_string(tree.role)},
        {"params", {{"max_depth", tree.params.max_depth},
                    {"min_samples_leaf", tree.params.min_samples_leaf},
                    {"criterion", "gini"}}},
        {"nodes", std::move(nodes)},
    };
    return doc.dump(2) + "\n";
}

DecisionTree deserialize_tree(std::string_view text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("tree: invalid JSON: ") + e.what());
    }

    DecisionTree tree;
    try {
        if (doc.at("format").get<std::string>() != kTreeFormat) throw ParseError("tree: unsupported format");
        tree.schema_version = doc.at("schema").get<std::string>();
        if (tree.schema_version != kFeatureSchemaVersion)
            throw ParseError("tree: unsupported feature schema '" + tree.schema_version + "'");
        tree.role = parse_role(doc.at("role").get<std::string>());
        tree.params.max_depth = doc.at("params").at("max_depth").get<int>();
        tree.params.min_samples_leaf = doc.at("params").at("min_samples_leaf").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("tree: ") + e.what());
    }

    const auto& nodes = doc.contains("nodes") ? doc.at("nodes") : nlohmann::json();
    if (!nodes.is_array() || nodes.empty()) throw ParseError("tree: 'nodes' must be a non-empty array");

    const int count = static_cast<int>(nodes.size());
    std::vector<int> parents(count, 0);
    for (int i = 0; i < count; ++i) {
        const auto fail = [i](const std::string& msg) {
            return ParseError("tree node " + std::to_string(i) + ": " + msg);
        };
        try {
            const auto& j = nodes[i];
            TreeNode n;
            n.samples = j.at("samples").get<std::size_t>();
            if (j.at("id").get<int>() != i) throw fail("id does not match its position");
            if (j.contains("action")) {
                n.is_leaf = true;
                n.action = parse_action(j.at("action").get<std::string>());
                double sum = 0;
                for (const auto& [name, p] : j.at("distribution").items()) {
                    const double v = p.get<double>();
                    if (v < 0) throw fail("negative probability");
                    n.distribution[static_cast<int>(parse_action(name))] = v;
                    sum += v;
                }
                if (std::abs(sum - 1.0) > 1e-9) throw fail("distribution does not sum to 1");
            } else {
                n.is_leaf = false;
                const auto name = j.at("feature").get<std::string>();
                const auto f = find_feature(name);
                if (!f) throw fail("unknown feature '" + name + "'");
                n.feature = *f;
                n.threshold = j.at("threshold").get<double>();
                n.left = j.at("left").get<int>();
                n.right = j.at("right").get<int>();
                for (int c : {n.left, n.right}) {
                    if (c <= i || c >= count) throw fail("child index " + std::to_string(c) + " out of range");
                    ++parents[c];
                }
            }
            tree.nodes.push_back(n);
        } catch (const nlohmann::json::exception& e) {
            throw fail(e.what());
        } catch (const ParseError&) {
            throw;
        } catch (const Error& e) {
            throw fail(e.what());
        }
    }
    for (int i = 1; i < count; ++i)
        if (parents[i] != 1) throw ParseError("tree node " + std::to_string(i) + ": must have exactly one parent");
    return tree;
}

}  // namespace bex
