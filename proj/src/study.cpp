#include "bex/study.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "bex/behavior.hpp"
#include "bex/error.hpp"
#include "bex/rng.hpp"

namespace bex {

namespace {

constexpr std::uint64_t kHeldoutSeedOffset = 1'000'000;

std::string fixed6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string feature_list(const std::set<Feature>& s) {
    std::string out;
    for (Feature f : s) {
        if (!out.empty()) out += ';';
        out += to_string(f);
    }
    return out;
}

// Minimal RFC 4180 quoting for free-text cells.
std::string csv_cell(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::vector<WorldState> states_of(const std::vector<Trajectory>& trajectories, Role role) {
    std::vector<WorldState> out;
    for (const auto& tr : trajectories) {
        if (tr.agent != role) continue;
        for (const auto& s : tr.steps)
            if (s.state) out.push_back(*s.state);
    }
    return out;
}

StudyRow run_row(const PreparedStudy& prepared, const PolicyModels& m, ConditionKind condition, int state_index,
                 LlmClient& client, const StudyTools& tools, const ModelConfig& model) {
    const StudyGrid& grid = prepared.grid;
    const StudyState& st = m.states[state_index];
    StudyRow row;
    row.policy = m.policy;
    row.condition = condition;
    row.state_index = state_index;
    row.agent = st.agent;
    row.episode = st.episode;
    row.t = st.t;
    row.action = st.action;
    try {
        const auto tree = m.trees[static_cast<int>(st.agent)];
        row.path = extract_path(*tree, st.features);

        Condition cond{condition, grid.k, 0};
        SessionContext ctx;
        ctx.agent = st.agent;
        ctx.action = st.action;
        ctx.features = st.features;
        ctx.state = st.state;
        ctx.tree = tree;
        ctx.episode = st.episode;
        ctx.timestep = st.t;

        Evidence evidence = StateSummary{st.features};
        if (condition == ConditionKind::BrPath) {
            evidence = row.path;
            ctx.path = row.path;
        } else if (condition == ConditionKind::BrStates) {
            cond.seed = derive_seed(grid.seed, 1000 * static_cast<std::uint64_t>(m.policy) + state_index);
            ctx.samples = sample_state_actions(m.training, st.agent, grid.k, cond.seed);
            evidence = ctx.samples;
        }
        auto bundle = tools.builder.build(cond, evidence, st.action, st.agent);
        const std::string id = std::string(to_string(m.policy)) + "/" + std::string(to_string(condition)) + "/" +
                               std::to_string(state_index);
        auto session = open_session(id, cond, std::move(ctx), std::move(bundle), client, model);
        row.explanation = session.explanation();
        row.grounding = grounding_score(row.explanation, row.path, st.features, tools.lexicon);
        row.ok = true;
    } catch (const Error& e) {
        row.ok = false;
        row.error = e.what();
    }
    return row;
}

}  // namespace

void StudyGrid::validate() const {
    if (policies.empty()) throw ConfigError("policies: at least one policy is required");
    if (conditions.empty()) throw ConfigError("conditions: at least one condition is required");
    if (states_per_cell < 1) throw ConfigError("states_per_cell: must be >= 1");
    if (rollouts < 1) throw ConfigError("rollouts: must be >= 1");
    if (heldout_rollouts < 1) throw ConfigError("heldout_rollouts: must be >= 1");
    if (max_steps < 1) throw ConfigError("max_steps: must be >= 1");
    if (k < 0) throw ConfigError("k: must be >= 0");
    if (threads < 1) throw ConfigError("threads: must be >= 1");
    tree.validate();
    scenario.validate();
}

PreparedStudy prepare_study(const StudyGrid& grid) {
    grid.validate();
    PreparedStudy out;
    out.grid = grid;
    for (std::size_t pi = 0; pi < grid.policies.size(); ++pi) {
        PolicyModels m;
        m.policy = grid.policies[pi];
        const PolicyPair pair = PolicyPair::both(m.policy);

        RolloutConfig rc;
        rc.num_rollouts = grid.rollouts;
        rc.max_steps = grid.max_steps;
        rc.base_seed = grid.seed;
        rc.scenario = grid.scenario;
        rc.scenario.starts.reset();
        rc.threads = grid.threads;
        m.training = sample_rollouts(pair, rc);

        rc.num_rollouts = grid.heldout_rollouts;
        rc.base_seed = grid.seed + kHeldoutSeedOffset;
        m.heldout = sample_rollouts(pair, rc);

        for (Role r : kAllRoles) {
            const int ri = static_cast<int>(r);
            const auto data = build_dataset(m.training, r);
            m.trees[ri] = std::make_shared<const DecisionTree>(fit_tree(data, grid.tree));
            m.training_agreement[ri] = agreement(*m.trees[ri], data);
            const auto states = states_of(m.heldout, r);
            m.heldout_states[ri] = static_cast<int>(states.size());
            m.heldout_fidelity[ri] = states.empty() ? 0.0 : fidelity(*m.trees[ri], pair.for_role(r), states);
        }

        Rng rng(derive_seed(grid.seed, 7 + static_cast<std::uint64_t>(m.policy)));
        int episode = 0;
        for (int i = 0; i < grid.states_per_cell; ++i) {
            const Role agent = i % 2 == 0 ? Role::Engineer : Role::Medic;
            const Trajectory* tr = nullptr;
            for (int tries = 0; tries < grid.heldout_rollouts && !tr; ++tries) {
                const auto& cand = m.heldout[2 * (episode % grid.heldout_rollouts) + static_cast<int>(agent)];
                ++episode;
                if (!cand.steps.empty()) tr = &cand;
            }
            if (!tr)
                throw DatasetError("no held-out " + std::string(to_string(agent)) + " steps for policy " +
                                   std::string(to_string(m.policy)));
            const auto& step = tr->steps[uniform_index(rng, tr->steps.size())];
            m.states.push_back({agent, tr->episode_id, step.t, *step.state, step.features, step.action});
        }
        out.models.push_back(std::move(m));
    }
    return out;
}

StudyReport run_study(const PreparedStudy& prepared, LlmClient& client, const StudyTools& tools,
                      const ModelConfig& model) {
    const StudyGrid& grid = prepared.grid;
    StudyReport report;
    report.grid = grid;

    struct Job {
        const PolicyModels* models;
        ConditionKind condition;
        int state_index;
    };
    std::vector<Job> jobs;
    for (const auto& m : prepared.models)
        for (ConditionKind c : grid.conditions)
            for (int s = 0; s < static_cast<int>(m.states.size()); ++s) jobs.push_back({&m, c, s});

    report.rows.resize(jobs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++)
            report.rows[i] = run_row(prepared, *jobs[i].models, jobs[i].condition, jobs[i].state_index, client,
                                     tools, model);
    };
    if (grid.threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int t = 0; t < grid.threads; ++t) pool.emplace_back(worker);
    }

    for (const auto& m : prepared.models) {
        PolicyModels copy;
        copy.policy = m.policy;
        copy.trees = m.trees;
        copy.training_agreement = m.training_agreement;
        copy.heldout_fidelity = m.heldout_fidelity;
        copy.heldout_states = m.heldout_states;
        copy.states = m.states;
        report.models.push_back(std::move(copy));

        for (ConditionKind c : grid.conditions) {
            CellSummary cell;
            cell.policy = m.policy;
            cell.condition = c;
            double sum = 0;
            for (const auto& r : report.rows) {
                if (r.policy != m.policy || r.condition != c) continue;
                ++cell.explanations;
                if (!r.ok) {
                    ++cell.failed;
                    continue;
                }
                sum += r.grounding.precision;
                cell.total_flags += static_cast<int>(r.grounding.flags.size());
                if (!r.grounding.flags.empty()) ++cell.flagged_explanations;
            }
            const int ok = cell.explanations - cell.failed;
            cell.mean_precision = ok > 0 ? sum / ok : 0.0;
            report.cells.push_back(cell);
        }
    }

    for (ConditionKind c : grid.conditions) report.feature_counts[c].fill(0);
    for (const auto& r : report.rows) {
        if (!r.ok) continue;
        for (Feature f : r.grounding.mentioned) ++report.feature_counts[r.condition][static_cast<int>(f)];
    }

    for (const auto& ex : tools.builder.config().examples) {
        std::string text = ex.explanation;
        for (const auto& rule : ex.rules) text += "\n" + rule;
        for (Feature f : extract_mentions(text, tools.lexicon)) report.example_features.insert(f);
    }
    return report;
}

double StudyReport::mean_precision(ConditionKind c) const {
    double sum = 0;
    int n = 0;
    for (const auto& r : rows) {
        if (r.condition != c || !r.ok) continue;
        sum += r.grounding.precision;
        ++n;
    }
    return n > 0 ? sum / n : 0.0;
}

const CellSummary& StudyReport::cell(PolicyKind p, ConditionKind c) const {
    for (const auto& cs : cells)
        if (cs.policy == p && cs.condition == c) return cs;
    throw Error("study has no cell " + std::string(to_string(p)) + "/" + std::string(to_string(c)));
}

std::string StudyReport::rows_csv() const {
    std::string out =
        "policy,condition,state_index,agent,episode,t,action,path_action,path_length,mentioned,path_features,"
        "precision,flags,status,error\n";
    for (const auto& r : rows) {
        out += std::string(to_string(r.policy)) + "," + std::string(to_string(r.condition)) + "," +
               std::to_string(r.state_index) + "," + std::string(to_string(r.agent)) + "," +
               std::to_string(r.episode) + "," + std::to_string(r.t) + "," + std::string(to_string(r.action)) + ",";
        if (r.ok) {
            std::string flags;
            for (const auto& f : r.grounding.flags) {
                if (!flags.empty()) flags += ';';
                flags += std::string(to_string(f.feature)) + "=" + (f.claimed ? "true" : "false");
            }
            out += std::string(to_string(r.path.action)) + "," + std::to_string(r.path.predicates.size()) + "," +
                   feature_list(r.grounding.mentioned) + "," + feature_list(r.grounding.path_features) + "," +
                   fixed6(r.grounding.precision) + "," + flags + ",ok,\n";
        } else {
            out += ",,,,,,failed," + csv_cell(r.error) + "\n";
        }
    }
    return out;
}

std::string StudyReport::summary_csv() const {
    std::string out = "policy,condition,explanations,failed,mean_precision,flagged_explanations,total_flags\n";
    for (const auto& c : cells)
        out += std::string(to_string(c.policy)) + "," + std::string(to_string(c.condition)) + "," +
               std::to_string(c.explanations) + "," + std::to_string(c.failed) + "," + fixed6(c.mean_precision) + "," +
               std::to_string(c.flagged_explanations) + "," + std::to_string(c.total_flags) + "\n";
    return out;
}

std::string StudyReport::features_csv() const {
    std::string out = "feature,in_prompt_examples";
    for (ConditionKind c : grid.conditions) out += "," + std::string(to_string(c));
    out += "\n";
    for (const auto& info : all_features()) {
        out += std::string(info.name) + "," + (example_features.contains(info.id) ? "1" : "0");
        for (ConditionKind c : grid.conditions)
            out += "," + std::to_string(feature_counts.at(c)[static_cast<int>(info.id)]);
        out += "\n";
    }
    return out;
}

std::string StudyReport::fidelity_csv() const {
    std::string out = "policy,role,tree_depth,tree_leaves,training_agreement,heldout_states,heldout_fidelity\n";
    for (const auto& m : models)
        for (Role r : kAllRoles) {
            const int ri = static_cast<int>(r);
            out += std::string(to_string(m.policy)) + "," + std::string(to_string(r)) + "," +
                   std::to_string(m.tree(r).depth()) + "," + std::to_string(m.tree(r).leaf_count()) + "," +
                   fixed6(m.training_agreement[ri]) + "," + std::to_string(m.heldout_states[ri]) + "," +
                   fixed6(m.heldout_fidelity[ri]) + "\n";
        }
    return out;
}

std::string StudyReport::summary_text() const {
    std::ostringstream out;
    out << "Explanation study: " << grid.policies.size() << " policies x " << grid.conditions.size()
        << " conditions x " << grid.states_per_cell << " states, seed " << grid.seed << "\n\n";

    out << "Surrogate fidelity (held-out states)\n";
    for (const auto& m : models)
        for (Role r : kAllRoles)
            out << "  " << to_string(m.policy) << " / " << to_string(r) << ": "
                << fixed6(m.heldout_fidelity[static_cast<int>(r)]) << " over "
                << m.heldout_states[static_cast<int>(r)] << " states, depth " << m.tree(r).depth() << ", "
                << m.tree(r).leaf_count() << " leaves\n";

    out << "\nGrounding precision and contradiction flags\n";
    for (const auto& c : cells)
        out << "  " << to_string(c.policy) << " / " << to_string(c.condition) << ": precision "
            << fixed6(c.mean_precision) << ", flagged " << c.flagged_explanations << "/"
            << (c.explanations - c.failed) << ", failed " << c.failed << "\n";

    out << "\nMean precision by condition\n";
    for (ConditionKind c : grid.conditions) out << "  " << to_string(c) << ": " << fixed6(mean_precision(c)) << "\n";

    out << "\nExplanations mentioning each feature (* = used in the prompt examples)\n";
    for (const auto& info : all_features()) {
        out << "  " << (example_features.contains(info.id) ? "* " : "  ") << info.name << ":";
        for (ConditionKind c : grid.conditions)
            out << " " << to_string(c) << "=" << feature_counts.at(c)[static_cast<int>(info.id)];
        out << "\n";
    }
    return out.str();
}

void to_json(nlohmann::json& j, const StudyReport& r) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : r.rows) {
        nlohmann::json e = {{"policy", to_string(row.policy)},
                            {"condition", to_string(row.condition)},
                            {"state_index", row.state_index},
                            {"agent", to_string(row.agent)},
                            {"episode", row.episode},
                            {"t", row.t},
                            {"action", to_string(row.action)},
                            {"status", row.ok ? "ok" : "failed"}};
        if (row.ok) {
            e["path"] = row.path;
            e["explanation"] = row.explanation;
            e["grounding"] = row.grounding;
        } else {
            e["error"] = row.error;
        }
        rows.push_back(std::move(e));
    }
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& c : r.cells)
        cells.push_back({{"policy", to_string(c.policy)},
                         {"condition", to_string(c.condition)},
                         {"explanations", c.explanations},
                         {"failed", c.failed},
                         {"mean_precision", c.mean_precision},
                         {"flagged_explanations", c.flagged_explanations},
                         {"total_flags", c.total_flags}});
    nlohmann::json fidelity = nlohmann::json::array();
    for (const auto& m : r.models)
        for (Role role : kAllRoles)
            fidelity.push_back({{"policy", to_string(m.policy)},
                                {"role", to_string(role)},
                                {"heldout_fidelity", m.heldout_fidelity[static_cast<int>(role)]},
                                {"training_agreement", m.training_agreement[static_cast<int>(role)]},
                                {"heldout_states", m.heldout_states[static_cast<int>(role)]}});
    nlohmann::json features = nlohmann::json::object();
    for (const auto& info : all_features()) {
        nlohmann::json counts = {{"in_prompt_examples", r.example_features.contains(info.id)}};
        for (const auto& [c, arr] : r.feature_counts) counts[std::string(to_string(c))] = arr[static_cast<int>(info.id)];
        features[std::string(info.name)] = std::move(counts);
    }
    nlohmann::json by_condition = nlohmann::json::object();
    for (ConditionKind c : r.grid.conditions) by_condition[std::string(to_string(c))] = r.mean_precision(c);
    j = {{"seed", r.grid.seed},
         {"states_per_cell", r.grid.states_per_cell},
         {"rows", std::move(rows)},
         {"cells", std::move(cells)},
         {"mean_precision", std::move(by_condition)},
         {"fidelity", std::move(fidelity)},
         {"features", std::move(features)}};
}

}  // namespace bex
