#include "bex/usar.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include <nlohmann/json.hpp>

#include "bex/error.hpp"
#include "bex/rng.hpp"

namespace bex {

namespace {

constexpr std::array<std::string_view, kNumActions> kActionNames{
    "MoveNorth", "MoveSouth", "MoveEast", "MoveWest", "RemoveRubble", "TriageVictim", "Wait"};

std::string_view victim_name(Victim v) {
    switch (v) {
        case Victim::None: return "none";
        case Victim::Visible: return "visible";
        case Victim::Hidden: return "hidden";
    }
    return "none";
}

Victim parse_victim(std::string_view s) {
    if (s == "none") return Victim::None;
    if (s == "visible") return Victim::Visible;
    if (s == "hidden") return Victim::Hidden;
    throw ParseError("unknown victim state '" + std::string(s) + "'");
}

// Picks `count` distinct room indices with a partial Fisher-Yates shuffle.
std::vector<int> pick_rooms(Rng& rng, int count) {
    std::array<int, kNumRooms> idx{};
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < count; ++i) {
        const auto j = i + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(kNumRooms - i)));
        std::swap(idx[i], idx[j]);
    }
    std::vector<int> out(idx.begin(), idx.begin() + count);
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

std::string_view to_string(Role r) { return r == Role::Engineer ? "engineer" : "medic"; }

Role parse_role(std::string_view s) {
    if (s == "engineer") return Role::Engineer;
    if (s == "medic") return Role::Medic;
    throw ParseError("unknown role '" + std::string(s) + "'");
}

std::string_view to_string(Action a) { return kActionNames[static_cast<int>(a)]; }

Action parse_action(std::string_view s) {
    for (int i = 0; i < kNumActions; ++i)
        if (kActionNames[i] == s) return static_cast<Action>(i);
    throw ParseError("unknown action '" + std::string(s) + "'");
}

bool is_move(Action a) {
    return a == Action::MoveNorth || a == Action::MoveSouth || a == Action::MoveEast ||
           a == Action::MoveWest;
}

RoomCoord neighbour(RoomCoord c, Direction d) {
    switch (d) {
        case Direction::North: return {c.row - 1, c.col};
        case Direction::South: return {c.row + 1, c.col};
        case Direction::East: return {c.row, c.col + 1};
        case Direction::West: return {c.row, c.col - 1};
        case Direction::None: break;
    }
    return c;
}

Action move_action(Direction d) {
    switch (d) {
        case Direction::North: return Action::MoveNorth;
        case Direction::South: return Action::MoveSouth;
        case Direction::East: return Action::MoveEast;
        case Direction::West: return Action::MoveWest;
        case Direction::None: break;
    }
    return Action::Wait;
}

namespace {

Direction move_direction(Action a) {
    switch (a) {
        case Action::MoveNorth: return Direction::North;
        case Action::MoveSouth: return Direction::South;
        case Action::MoveEast: return Direction::East;
        case Action::MoveWest: return Direction::West;
        default: return Direction::None;
    }
}

}  // namespace

int WorldState::visible_victims() const {
    return static_cast<int>(std::count_if(rooms.begin(), rooms.end(),
                                          [](const Room& r) { return r.victim == Victim::Visible; }));
}

int WorldState::hidden_victims() const {
    return static_cast<int>(std::count_if(rooms.begin(), rooms.end(),
                                          [](const Room& r) { return r.victim == Victim::Hidden; }));
}

int WorldState::rubble_count() const {
    return static_cast<int>(
        std::count_if(rooms.begin(), rooms.end(), [](const Room& r) { return r.has_rubble; }));
}

int WorldState::explored_count() const {
    return static_cast<int>(
        std::count_if(rooms.begin(), rooms.end(), [](const Room& r) { return r.explored; }));
}

void ScenarioConfig::validate() const {
    if (n_victims < 0) throw ConfigError("n_victims: must be >= 0");
    if (n_rubble < 0) throw ConfigError("n_rubble: must be >= 0");
    if (n_victims + n_rubble > kNumRooms)
        throw ConfigError("n_victims + n_rubble: " + std::to_string(n_victims + n_rubble) +
                          " placements do not fit the " + std::to_string(kNumRooms) + "-room grid");
    if (!(p_hidden >= 0.0 && p_hidden <= 1.0)) throw ConfigError("p_hidden: must lie in [0, 1]");
    if (starts) {
        for (Role r : kAllRoles) {
            if (!(*starts)[static_cast<int>(r)].in_bounds())
                throw ConfigError("starts." + std::string(to_string(r)) + ": outside the grid");
        }
    }
}

WorldState new_scenario(const ScenarioConfig& config) {
    config.validate();
    Rng rng(config.seed);
    WorldState s;

    for (int i : pick_rooms(rng, config.n_rubble)) s.rooms[i].has_rubble = true;
    for (int i : pick_rooms(rng, config.n_victims)) {
        Room& room = s.rooms[i];
        room.victim = Victim::Visible;
        if (room.has_rubble && uniform_unit(rng) < config.p_hidden) room.victim = Victim::Hidden;
    }

    if (config.starts) {
        s.positions = *config.starts;
    } else {
        for (auto& p : s.positions) p = RoomCoord::from_index(static_cast<int>(uniform_index(rng, kNumRooms)));
    }
    for (const auto& p : s.positions) s.room(p).explored = true;

    s.rescued_count = 0;
    s.timestep = 0;
    s.whose_turn = Role::Engineer;
    return s;
}

std::vector<Action> legal_actions(const WorldState& state, Role agent) {
    std::vector<Action> out;
    const RoomCoord here = state.position(agent);
    const Room& room = state.room(here);
    for (Action a : {Action::MoveNorth, Action::MoveSouth, Action::MoveEast, Action::MoveWest})
        if (neighbour(here, move_direction(a)).in_bounds()) out.push_back(a);
    if (agent == Role::Engineer && room.has_rubble) out.push_back(Action::RemoveRubble);
    if (agent == Role::Medic && room.victim == Victim::Visible) out.push_back(Action::TriageVictim);
    out.push_back(Action::Wait);
    return out;
}

bool is_legal(const WorldState& state, Role agent, Action action) {
    const RoomCoord here = state.position(agent);
    const Room& room = state.room(here);
    switch (action) {
        case Action::MoveNorth:
        case Action::MoveSouth:
        case Action::MoveEast:
        case Action::MoveWest: return neighbour(here, move_direction(action)).in_bounds();
        case Action::RemoveRubble: return agent == Role::Engineer && room.has_rubble;
        case Action::TriageVictim: return agent == Role::Medic && room.victim == Victim::Visible;
        case Action::Wait: return true;
    }
    return false;
}

WorldState step(const WorldState& state, Role agent, Action action) {
    if (agent != state.whose_turn)
        throw OutOfTurnError("it is the " + std::string(to_string(state.whose_turn)) + "'s turn, not the " +
                             std::string(to_string(agent)) + "'s");
    if (!is_legal(state, agent, action))
        throw IllegalActionError(std::string(to_string(action)) + " is not legal for the " +
                                 std::string(to_string(agent)) + " here");

    WorldState next = state;
    auto& pos = next.positions[static_cast<int>(agent)];
    switch (action) {
        case Action::MoveNorth:
        case Action::MoveSouth:
        case Action::MoveEast:
        case Action::MoveWest:
            pos = neighbour(pos, move_direction(action));
            next.room(pos).explored = true;
            break;
        case Action::RemoveRubble: {
            Room& room = next.room(pos);
            room.has_rubble = false;
            if (room.victim == Victim::Hidden) room.victim = Victim::Visible;
            break;
        }
        case Action::TriageVictim:
            next.room(pos).victim = Victim::None;
            ++next.rescued_count;
            break;
        case Action::Wait: break;
    }
    ++next.timestep;
    next.whose_turn = other(agent);
    return next;
}

bool is_terminal(const WorldState& state) { return state.rescued_count == state.victims_total(); }

NavResult navigate(RoomCoord from, const std::array<bool, kNumRooms>& targets) {
    // Multi-source BFS from the targets gives every room its distance to the
    // nearest target; the first step is the first neighbour in N,S,E,W order
    // that is one step closer.
    std::array<int, kNumRooms> dist;
    dist.fill(-1);
    std::array<int, kNumRooms> queue{};
    int head = 0;
    int tail = 0;
    for (int i = 0; i < kNumRooms; ++i) {
        if (targets[i]) {
            dist[i] = 0;
            queue[tail++] = i;
        }
    }
    while (head < tail) {
        const int cur = queue[head++];
        for (Direction d : kScanOrder) {
            const RoomCoord nb = neighbour(RoomCoord::from_index(cur), d);
            if (!nb.in_bounds() || dist[nb.index()] >= 0) continue;
            dist[nb.index()] = dist[cur] + 1;
            queue[tail++] = nb.index();
        }
    }

    NavResult out;
    out.distance = dist[from.index()];
    if (out.distance <= 0) return out;
    for (Direction d : kScanOrder) {
        const RoomCoord nb = neighbour(from, d);
        if (nb.in_bounds() && dist[nb.index()] == out.distance - 1) {
            out.first_step = d;
            break;
        }
    }
    return out;
}

void to_json(nlohmann::json& j, const RoomCoord& c) { j = {{"row", c.row}, {"col", c.col}}; }

void from_json(const nlohmann::json& j, RoomCoord& c) {
    c.row = j.at("row").get<int>();
    c.col = j.at("col").get<int>();
    if (!c.in_bounds()) throw ParseError("room coordinate outside the 4x5 grid");
}

void to_json(nlohmann::json& j, const Room& r) {
    j = {{"rubble", r.has_rubble}, {"victim", victim_name(r.victim)}, {"explored", r.explored}};
}

void from_json(const nlohmann::json& j, Room& r) {
    r.has_rubble = j.at("rubble").get<bool>();
    r.victim = parse_victim(j.at("victim").get<std::string>());
    r.explored = j.at("explored").get<bool>();
    if (r.victim == Victim::Hidden && !r.has_rubble) throw ParseError("hidden victim without rubble");
}

void to_json(nlohmann::json& j, const WorldState& s) {
    nlohmann::json rooms = nlohmann::json::array();
    for (const Room& r : s.rooms) rooms.push_back(r);
    j = {{"rows", kRows},
         {"cols", kCols},
         {"rooms", std::move(rooms)},
         {"positions", {{"engineer", s.position(Role::Engineer)}, {"medic", s.position(Role::Medic)}}},
         {"rescued", s.rescued_count},
         {"timestep", s.timestep},
         {"whose_turn", to_string(s.whose_turn)}};
}

void from_json(const nlohmann::json& j, WorldState& s) {
    if (j.at("rows").get<int>() != kRows || j.at("cols").get<int>() != kCols)
        throw ParseError("world state must be a 4x5 grid");
    const auto& rooms = j.at("rooms");
    if (!rooms.is_array() || rooms.size() != kNumRooms) throw ParseError("rooms: expected 20 entries");
    for (int i = 0; i < kNumRooms; ++i) s.rooms[i] = rooms[i].get<Room>();
    s.positions[0] = j.at("positions").at("engineer").get<RoomCoord>();
    s.positions[1] = j.at("positions").at("medic").get<RoomCoord>();
    s.rescued_count = j.at("rescued").get<int>();
    s.timestep = j.at("timestep").get<int>();
    s.whose_turn = parse_role(j.at("whose_turn").get<std::string>());
    if (s.rescued_count < 0 || s.timestep < 0) throw ParseError("counters must be non-negative");
}

void to_json(nlohmann::json& j, const ScenarioConfig& c) {
    j = {{"seed", c.seed}, {"n_victims", c.n_victims}, {"n_rubble", c.n_rubble}, {"p_hidden", c.p_hidden}};
    if (c.starts) j["starts"] = {{"engineer", (*c.starts)[0]}, {"medic", (*c.starts)[1]}};
}

void from_json(const nlohmann::json& j, ScenarioConfig& c) {
    c = ScenarioConfig{};
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("n_victims")) c.n_victims = j.at("n_victims").get<int>();
    if (j.contains("n_rubble")) c.n_rubble = j.at("n_rubble").get<int>();
    if (j.contains("p_hidden")) c.p_hidden = j.at("p_hidden").get<double>();
    if (j.contains("starts") && !j.at("starts").is_null()) {
        std::array<RoomCoord, kNumRoles> s{};
        s[0] = j.at("starts").at("engineer").get<RoomCoord>();
        s[1] = j.at("starts").at("medic").get<RoomCoord>();
        c.starts = s;
    }
}

}  // namespace bex
