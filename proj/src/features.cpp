#include "bex/features.hpp"

#include <string>

#include <nlohmann/json.hpp>

#include "bex/error.hpp"

namespace bex {

namespace {

constexpr std::array<double, 2> kBinary{0, 1};
constexpr std::array<double, 5> kDirections{0, 1, 2, 3, 4};
// Manhattan distances on a 4x5 grid run 0..7; 99 means no visible victim.
constexpr std::array<double, 9> kDistances{0, 1, 2, 3, 4, 5, 6, 7, kNoVictimDistance};
constexpr std::array<double, kRows> kRowValues{0, 1, 2, 3};

const std::array<FeatureInfo, kNumFeatures> kFeatures{{
    {Feature::VictimInRoom, "victim_in_room", FeatureKind::Binary, kBinary, std::nullopt},
    {Feature::RubbleInRoom, "rubble_in_room", FeatureKind::Binary, kBinary, std::nullopt},
    {Feature::UnexploredNorth, "unexplored_north", FeatureKind::Binary, kBinary, std::nullopt},
    {Feature::UnexploredSouth, "unexplored_south", FeatureKind::Binary, kBinary, std::nullopt},
    {Feature::UnexploredEast, "unexplored_east", FeatureKind::Binary, kBinary, std::nullopt},
    {Feature::UnexploredWest, "unexplored_west", FeatureKind::Binary, kBinary, std::nullopt},
    {Feature::DistNearestKnownVictim, "dist_nearest_known_victim", FeatureKind::Count, kDistances,
     kNoVictimDistance},
    {Feature::DirVictim, "dir_victim", FeatureKind::Categorical, kDirections, std::nullopt},
    {Feature::DirRubble, "dir_rubble", FeatureKind::Categorical, kDirections, std::nullopt},
    {Feature::DirUnexplored, "dir_unexplored", FeatureKind::Categorical, kDirections, std::nullopt},
    {Feature::AllRoomsExplored, "all_rooms_explored", FeatureKind::Binary, kBinary, std::nullopt},
    {Feature::AgentRow, "agent_row", FeatureKind::Count, kRowValues, std::nullopt},
}};

bool any_unexplored_along(const WorldState& s, RoomCoord from, Direction d) {
    for (RoomCoord c = neighbour(from, d); c.in_bounds(); c = neighbour(c, d))
        if (!s.room(c).explored) return true;
    return false;
}

}  // namespace

const FeatureInfo& feature_info(Feature f) { return kFeatures[static_cast<int>(f)]; }

std::span<const FeatureInfo> all_features() { return kFeatures; }

std::optional<Feature> find_feature(std::string_view name) {
    for (const auto& info : kFeatures)
        if (info.name == name) return info.id;
    return std::nullopt;
}

Feature parse_feature(std::string_view name) {
    if (auto f = find_feature(name)) return *f;
    throw SchemaError("unknown feature '" + std::string(name) + "'");
}

std::string_view to_string(Feature f) { return feature_info(f).name; }

bool in_domain(Feature f, double value) {
    for (double v : feature_info(f).domain)
        if (v == value) return true;
    return false;
}

FeatureVector extract_features(const WorldState& state, Role agent) {
    FeatureVector fv;
    const RoomCoord here = state.position(agent);
    const Room& room = state.room(here);

    std::array<bool, kNumRooms> victims{};
    std::array<bool, kNumRooms> rubble{};
    std::array<bool, kNumRooms> unexplored{};
    for (int i = 0; i < kNumRooms; ++i) {
        victims[i] = state.rooms[i].victim == Victim::Visible;
        rubble[i] = state.rooms[i].has_rubble;
        unexplored[i] = !state.rooms[i].explored;
    }

    fv[Feature::VictimInRoom] = room.victim == Victim::Visible ? 1 : 0;
    fv[Feature::RubbleInRoom] = room.has_rubble ? 1 : 0;
    fv[Feature::UnexploredNorth] = any_unexplored_along(state, here, Direction::North) ? 1 : 0;
    fv[Feature::UnexploredSouth] = any_unexplored_along(state, here, Direction::South) ? 1 : 0;
    fv[Feature::UnexploredEast] = any_unexplored_along(state, here, Direction::East) ? 1 : 0;
    fv[Feature::UnexploredWest] = any_unexplored_along(state, here, Direction::West) ? 1 : 0;

    const NavResult to_victim = navigate(here, victims);
    fv[Feature::DistNearestKnownVictim] = to_victim.distance < 0 ? kNoVictimDistance : to_victim.distance;
    fv[Feature::DirVictim] = static_cast<double>(to_victim.first_step);
    fv[Feature::DirRubble] = static_cast<double>(navigate(here, rubble).first_step);
    fv[Feature::DirUnexplored] = static_cast<double>(navigate(here, unexplored).first_step);
    fv[Feature::AllRoomsExplored] = state.explored_count() == kNumRooms ? 1 : 0;
    fv[Feature::AgentRow] = here.row;
    return fv;
}

void to_json(nlohmann::json& j, const FeatureVector& v) {
    j = nlohmann::json::object();
    for (const auto& info : kFeatures) j[std::string(info.name)] = v[info.id];
}

void from_json(const nlohmann::json& j, FeatureVector& v) {
    if (!j.is_object()) throw SchemaError("features: expected an object keyed by feature name");
    for (const auto& [key, _] : j.items()) parse_feature(key);
    for (const auto& info : kFeatures) {
        const std::string name(info.name);
        if (!j.contains(name)) throw SchemaError("features: missing '" + name + "'");
        const double value = j.at(name).get<double>();
        if (!in_domain(info.id, value))
            throw SchemaError("features: value " + std::to_string(value) + " outside the domain of '" + name + "'");
        v[info.id] = value;
    }
}

}  // namespace bex
