#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace bex {

// The building is a fixed 4 x 5 grid of rooms. Row 0 is the north wall,
// column 0 the west wall; movement is 4-connected between adjacent rooms.
inline constexpr int kRows = 4;
inline constexpr int kCols = 5;
inline constexpr int kNumRooms = kRows * kCols;

struct RoomCoord {
    int row = 0;
    int col = 0;

    constexpr bool in_bounds() const { return row >= 0 && row < kRows && col >= 0 && col < kCols; }
    constexpr int index() const { return row * kCols + col; }
    static constexpr RoomCoord from_index(int i) { return {i / kCols, i % kCols}; }

    friend constexpr bool operator==(RoomCoord, RoomCoord) = default;
};

enum class Victim { None, Visible, Hidden };

struct Room {
    bool has_rubble = false;
    Victim victim = Victim::None;
    bool explored = false;

    friend bool operator==(const Room&, const Room&) = default;
};

enum class Role { Engineer = 0, Medic = 1 };
inline constexpr int kNumRoles = 2;
inline constexpr std::array<Role, kNumRoles> kAllRoles{Role::Engineer, Role::Medic};

constexpr Role other(Role r) { return r == Role::Engineer ? Role::Medic : Role::Engineer; }
std::string_view to_string(Role r);
Role parse_role(std::string_view s);

// Enum order doubles as the tie-break order for majority votes in the tree.
enum class Action { MoveNorth, MoveSouth, MoveEast, MoveWest, RemoveRubble, TriageVictim, Wait };
inline constexpr int kNumActions = 7;
inline constexpr std::array<Action, kNumActions> kAllActions{
    Action::MoveNorth, Action::MoveSouth, Action::MoveEast,    Action::MoveWest,
    Action::RemoveRubble, Action::TriageVictim, Action::Wait};

std::string_view to_string(Action a);
Action parse_action(std::string_view s);
bool is_move(Action a);

// Encoded as the dir_* feature values: 0 none, 1 N, 2 S, 3 E, 4 W.
enum class Direction { None = 0, North = 1, South = 2, East = 3, West = 4 };

// Neighbour scan order N, S, E, W; shared by navigation and feature extraction.
inline constexpr std::array<Direction, 4> kScanOrder{Direction::North, Direction::South,
                                                     Direction::East, Direction::West};

RoomCoord neighbour(RoomCoord c, Direction d);
Action move_action(Direction d);

struct WorldState {
    std::array<Room, kNumRooms> rooms{};
    std::array<RoomCoord, kNumRoles> positions{};
    int rescued_count = 0;
    int timestep = 0;
    Role whose_turn = Role::Engineer;

    const Room& room(RoomCoord c) const { return rooms[c.index()]; }
    Room& room(RoomCoord c) { return rooms[c.index()]; }
    RoomCoord position(Role r) const { return positions[static_cast<int>(r)]; }

    int visible_victims() const;
    int hidden_victims() const;
    int victims_total() const { return rescued_count + visible_victims() + hidden_victims(); }
    int rubble_count() const;
    int explored_count() const;

    friend bool operator==(const WorldState&, const WorldState&) = default;
};

struct ScenarioConfig {
    std::uint64_t seed = 0;
    int n_victims = 3;
    int n_rubble = 4;
    double p_hidden = 0.5;
    // Engineer then medic. When absent the start rooms are drawn from the seed.
    std::optional<std::array<RoomCoord, kNumRoles>> starts;

    // Throws ConfigError naming the offending field.
    void validate() const;
};

WorldState new_scenario(const ScenarioConfig& config);

// Returned in Action enum order.
std::vector<Action> legal_actions(const WorldState& state, Role agent);
bool is_legal(const WorldState& state, Role agent, Action action);

// Pure transition. Throws OutOfTurnError or IllegalActionError and leaves the
// input untouched.
WorldState step(const WorldState& state, Role agent, Action action);

bool is_terminal(const WorldState& state);

// Result of a breadth-first search from one room towards a target set.
struct NavResult {
    int distance = -1;  // -1 when no target exists
    Direction first_step = Direction::None;  // None when distance <= 0
};

NavResult navigate(RoomCoord from, const std::array<bool, kNumRooms>& targets);

void to_json(nlohmann::json& j, const RoomCoord& c);
void from_json(const nlohmann::json& j, RoomCoord& c);
void to_json(nlohmann::json& j, const Room& r);
void from_json(const nlohmann::json& j, Room& r);
void to_json(nlohmann::json& j, const WorldState& s);
void from_json(const nlohmann::json& j, WorldState& s);
void to_json(nlohmann::json& j, const ScenarioConfig& c);
void from_json(const nlohmann::json& j, ScenarioConfig& c);

}  // namespace bex
