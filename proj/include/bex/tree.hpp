#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bex/features.hpp"
#include "bex/policy.hpp"

namespace bex {

struct LabeledRow {
    FeatureVector features;
    Action action = Action::Wait;
};

struct LabeledDataset {
    Role role = Role::Engineer;
    std::string schema_version{kFeatureSchemaVersion};
    std::vector<LabeledRow> rows;
};

// One row per step taken by `role`, in input order. Throws DatasetError when
// no step matches.
LabeledDataset build_dataset(std::span<const Trajectory> trajectories, Role role);

struct TreeParams {
    int max_depth = 8;
    int min_samples_leaf = 5;

    void validate() const;
};

using ActionDistribution = std::array<double, kNumActions>;

struct TreeNode {
    bool is_leaf = true;
    // Internal nodes: go left when features[feature] <= threshold.
    Feature feature = Feature::VictimInRoom;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    // Leaves.
    Action action = Action::Wait;
    ActionDistribution distribution{};
    std::size_t samples = 0;

    friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

// Surrogate policy for one role. Nodes are stored in pre-order with the root
// at index 0, so every child index is greater than its parent's.
struct DecisionTree {
    Role role = Role::Engineer;
    std::string schema_version{kFeatureSchemaVersion};
    TreeParams params{};
    std::vector<TreeNode> nodes;

    int depth() const;
    int leaf_count() const;
    const TreeNode& root() const { return nodes.front(); }

    friend bool operator==(const DecisionTree& a, const DecisionTree& b) {
        return a.role == b.role && a.schema_version == b.schema_version &&
               a.params.max_depth == b.params.max_depth &&
               a.params.min_samples_leaf == b.params.min_samples_leaf && a.nodes == b.nodes;
    }
};

// Greedy CART with Gini impurity. Splits minimise the weighted child impurity;
// ties go to the lowest feature index, then the lowest threshold. Leaf labels
// are the majority action, ties broken by Action enum order.
DecisionTree fit_tree(const LabeledDataset& data, const TreeParams& params = {});

// Index of the leaf reached by `features`.
int leaf_index(const DecisionTree& tree, const FeatureVector& features);
Action predict(const DecisionTree& tree, const FeatureVector& features);

// Share of states where the tree agrees with the policy it imitates.
double fidelity(const DecisionTree& tree, const Policy& policy, std::span<const WorldState> states);
// Share of rows whose recorded action the tree reproduces.
double agreement(const DecisionTree& tree, const LabeledDataset& data);

inline constexpr std::string_view kTreeFormat = "bex-decision-tree/1";

std::string serialize_tree(const DecisionTree& tree);
// Throws ParseError naming the offending node index.
DecisionTree deserialize_tree(std::string_view text);

}  // namespace bex
