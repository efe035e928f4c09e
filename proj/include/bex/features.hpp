#pragma once

#include <array>
#include <optional>
#include <span>
#include <string_view>

#include <nlohmann/json_fwd.hpp>

#include "bex/usar.hpp"

namespace bex {

// Interpretable per-agent observation. The order below is the feature index
// used for tree tie-breaking and is part of the versioned schema.
enum class Feature {
    VictimInRoom,
    RubbleInRoom,
    UnexploredNorth,
    UnexploredSouth,
    UnexploredEast,
    UnexploredWest,
    DistNearestKnownVictim,
    DirVictim,
    DirRubble,
    DirUnexplored,
    AllRoomsExplored,
    AgentRow,
};

inline constexpr int kNumFeatures = 12;
inline constexpr std::string_view kFeatureSchemaVersion = "usar-features/v1";
inline constexpr double kNoVictimDistance = 99.0;

enum class FeatureKind {
    Binary,       // {0, 1}
    Categorical,  // small code set, e.g. directions
    Count,        // ordered integers, optionally with a sentinel
};

struct FeatureInfo {
    Feature id;
    std::string_view name;
    FeatureKind kind;
    std::span<const double> domain;  // every value the feature can take, ascending
    std::optional<double> sentinel;
};

const FeatureInfo& feature_info(Feature f);
std::span<const FeatureInfo> all_features();
std::optional<Feature> find_feature(std::string_view name);
Feature parse_feature(std::string_view name);  // throws SchemaError
std::string_view to_string(Feature f);
bool in_domain(Feature f, double value);

struct FeatureVector {
    std::array<double, kNumFeatures> values{};

    double operator[](Feature f) const { return values[static_cast<int>(f)]; }
    double& operator[](Feature f) { return values[static_cast<int>(f)]; }

    friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

// Deterministic; only visible victims count as known.
FeatureVector extract_features(const WorldState& state, Role agent);

// Object keyed by feature name. Parsing rejects unknown or missing names and
// out-of-domain values.
void to_json(nlohmann::json& j, const FeatureVector& v);
void from_json(const nlohmann::json& j, FeatureVector& v);

}  // namespace bex
