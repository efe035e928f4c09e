#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <pthread.h>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "bex/behavior.hpp"
#include "bex/defaults.hpp"
#include "bex/error.hpp"
#include "bex/explainer.hpp"
#include "bex/grounding.hpp"
#include "bex/llm_client.hpp"
#include "bex/phrase_table.hpp"
#include "bex/policy.hpp"
#include "bex/service.hpp"
#include "bex/study.hpp"
#include "bex/tree.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

struct ConfigPaths {
    std::string prompts;
    std::string phrases;
    std::string lexicon;

    bex::PromptConfig load_prompts() const {
        return prompts.empty() ? bex::PromptConfig::defaults() : bex::PromptConfig::from_file(prompts);
    }
    bex::PhraseTable load_phrases() const {
        return phrases.empty() ? bex::PhraseTable::defaults() : bex::PhraseTable::from_file(phrases);
    }
    bex::FeatureLexicon load_lexicon(const bex::PhraseTable& table) const {
        std::string text(bex::defaults::lexicon_json());
        if (!lexicon.empty()) text = read_file(lexicon);
        return bex::FeatureLexicon(table, json::parse(text));
    }

    static std::string read_file(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw bex::ConfigError("cannot open '" + path + "'");
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }
};

struct LlmOptions {
    std::string mock;  // script: echo, default or a path
    bool remote = false;
    std::string model;

    bex::LlmSettings settings() const {
        auto s = bex::LlmSettings::from_env();
        if (remote) s.mode = "remote";
        if (!mock.empty()) {
            s.mode = "mock";
            s.mock_script = mock;
        }
        if (!model.empty()) s.model.model = model;
        return s;
    }
};

void add_llm_options(CLI::App* cmd, LlmOptions& o) {
    cmd->add_option("--mock", o.mock, "Use the offline mock model with this script (echo, default or a file)");
    cmd->add_flag("--remote", o.remote, "Use the chat-completions endpoint from BEX_LLM_BASE_URL / OPENAI_API_KEY");
    cmd->add_option("--model", o.model, "Model name sent to the endpoint");
}

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw bex::Error("cannot write '" + path + "'");
    out << text;
}

std::vector<bex::Trajectory> load_trajectories(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw bex::Error("cannot open trajectory file '" + path + "'");
    return bex::read_trajectories(in);
}

std::vector<bex::WorldState> states_of(const std::vector<bex::Trajectory>& trajectories, bex::Role role) {
    std::vector<bex::WorldState> out;
    for (const auto& tr : trajectories) {
        if (tr.agent != role) continue;
        for (const auto& s : tr.steps)
            if (s.state) out.push_back(*s.state);
    }
    return out;
}

std::string fixed6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

// ---- rollout -----------------------------------------------------------

struct RolloutOptions {
    std::string policy = "expert";
    std::string engineer_policy;
    std::string medic_policy;
    int n = 1000;
    std::uint64_t seed = 0;
    int max_steps = 20 * bex::kNumRooms;
    int victims = 3;
    int rubble = 4;
    double p_hidden = 0.5;
    int threads = 1;
    bool no_states = false;
    std::string out = "-";
};

int run_rollout(const RolloutOptions& o) {
    bex::PolicyPair pair = bex::PolicyPair::both(bex::parse_policy_kind(o.policy));
    if (!o.engineer_policy.empty()) pair.engineer.kind = bex::parse_policy_kind(o.engineer_policy);
    if (!o.medic_policy.empty()) pair.medic.kind = bex::parse_policy_kind(o.medic_policy);
    bex::RolloutConfig rc;
    rc.num_rollouts = o.n;
    rc.base_seed = o.seed;
    rc.max_steps = o.max_steps;
    rc.scenario.n_victims = o.victims;
    rc.scenario.n_rubble = o.rubble;
    rc.scenario.p_hidden = o.p_hidden;
    rc.threads = o.threads;
    const auto trajectories = bex::sample_rollouts(pair, rc);
    std::ostringstream ss;
    bex::write_trajectories(ss, trajectories, !o.no_states);
    write_text(o.out, ss.str());
    return 0;
}

// ---- distill -----------------------------------------------------------

struct DistillOptions {
    std::string in;
    std::string role;
    std::string out_dir = ".";
    std::string policy;
    std::string heldout;
    int max_depth = 8;
    int min_leaf = 5;
};

int run_distill(const DistillOptions& o) {
    const auto trajectories = load_trajectories(o.in);
    std::vector<bex::Trajectory> heldout;
    if (!o.heldout.empty()) heldout = load_trajectories(o.heldout);
    bex::TreeParams params{o.max_depth, o.min_leaf};
    params.validate();

    std::vector<bex::Role> roles;
    if (o.role.empty()) roles.assign(bex::kAllRoles.begin(), bex::kAllRoles.end());
    else roles.push_back(bex::parse_role(o.role));

    json report = json::array();
    for (bex::Role r : roles) {
        const auto data = bex::build_dataset(trajectories, r);
        const auto tree = bex::fit_tree(data, params);
        const std::string name = "tree_" + std::string(bex::to_string(r)) + ".json";
        write_text((fs::path(o.out_dir) / name).string(), bex::serialize_tree(tree));

        json entry = {{"role", bex::to_string(r)},
                      {"tree", name},
                      {"rows", data.rows.size()},
                      {"depth", tree.depth()},
                      {"leaves", tree.leaf_count()},
                      {"training_agreement", fixed6(bex::agreement(tree, data))}};
        if (!o.policy.empty()) {
            const bex::Policy policy{bex::parse_policy_kind(o.policy), r};
            const auto states = states_of(heldout.empty() ? trajectories : heldout, r);
            if (states.empty()) throw bex::DatasetError("no recorded states to measure fidelity on");
            entry["policy"] = o.policy;
            entry["fidelity_states"] = states.size();
            entry["fidelity_source"] = heldout.empty() ? "training" : "heldout";
            entry["fidelity"] = fixed6(bex::fidelity(tree, policy, states));
        }
        report.push_back(std::move(entry));
    }
    write_text((fs::path(o.out_dir) / "distill_report.json").string(), report.dump(2) + "\n");
    for (const auto& e : report) {
        std::cout << e.at("role").get<std::string>() << ": " << e.at("rows") << " rows, depth " << e.at("depth")
                  << ", " << e.at("leaves") << " leaves, training agreement "
                  << e.at("training_agreement").get<std::string>();
        if (e.contains("fidelity")) std::cout << ", fidelity " << e.at("fidelity").get<std::string>();
        std::cout << "\n";
    }
    return 0;
}

// ---- explain -----------------------------------------------------------

struct ExplainOptions {
    std::string tree;
    std::string trajectories;
    int episode = 0;
    int t = -1;
    std::string condition = "br_path";
    int k = 5;
    std::uint64_t sample_seed = 0;
    bool prompt_only = false;
    std::string out = "-";
    std::string prompt_out;
    std::vector<std::string> flips;
    LlmOptions llm;
};

int run_explain(const ExplainOptions& o, const ConfigPaths& cfg) {
    const auto tree = std::make_shared<const bex::DecisionTree>(
        bex::deserialize_tree(ConfigPaths::read_file(o.tree)));
    const auto trajectories = load_trajectories(o.trajectories);
    const bex::Role agent = tree->role;

    const bex::TrajectoryStep* chosen = nullptr;
    for (const auto& tr : trajectories) {
        if (tr.agent != agent || tr.episode_id != o.episode) continue;
        for (const auto& s : tr.steps)
            if (o.t < 0 ? !chosen : s.t == o.t) chosen = &s;
    }
    if (!chosen)
        throw bex::DatasetError("no " + std::string(bex::to_string(agent)) + " step at episode " +
                                std::to_string(o.episode) + (o.t >= 0 ? ", t=" + std::to_string(o.t) : ""));

    const auto phrases = cfg.load_phrases();
    const bex::PromptBuilder builder(cfg.load_prompts(), phrases);
    const auto lexicon = cfg.load_lexicon(phrases);

    bex::Condition cond{bex::parse_condition_kind(o.condition), o.k, o.sample_seed};
    bex::SessionContext ctx;
    ctx.agent = agent;
    ctx.action = chosen->action;
    ctx.features = chosen->features;
    ctx.state = chosen->state;
    ctx.tree = tree;
    ctx.episode = o.episode;
    ctx.timestep = chosen->t;
    const auto path = bex::extract_path(*tree, chosen->features);

    bex::Evidence evidence = bex::StateSummary{chosen->features};
    if (cond.kind == bex::ConditionKind::BrPath) {
        evidence = path;
        ctx.path = path;
    } else if (cond.kind == bex::ConditionKind::BrStates) {
        ctx.samples = bex::sample_state_actions(trajectories, agent, cond.k, cond.seed);
        evidence = ctx.samples;
    }
    const auto bundle = builder.build(cond, evidence, chosen->action, agent);
    if (!o.prompt_out.empty()) write_text(o.prompt_out, bundle.serialize());

    json out = {{"agent", bex::to_string(agent)},
                {"episode", o.episode},
                {"t", chosen->t},
                {"action", bex::to_string(chosen->action)},
                {"condition", bex::to_string(cond.kind)},
                {"path", path},
                {"template", bex::render_template(path, phrases)}};
    if (o.prompt_only) {
        out["prompt"] = bundle.serialize();
        write_text(o.out, out.dump(2) + "\n");
        return 0;
    }

    auto client = bex::make_llm_client(o.llm.settings());
    auto session = bex::open_session("cli", cond, ctx, bundle, *client, o.llm.settings().model);
    out["explanation"] = session.explanation();
    out["grounding"] = bex::grounding_score(session.explanation(), path, chosen->features, lexicon);

    if (!o.flips.empty()) {
        json flips = json::object();
        for (const auto& f : o.flips) {
            const auto eq = f.find('=');
            if (eq == std::string::npos) throw bex::SchemaError("--flip expects feature=value, got '" + f + "'");
            flips[f.substr(0, eq)] = std::stod(f.substr(eq + 1));
        }
        const auto query = bex::CounterfactualQuery::from_json(flips);
        const auto result = bex::counterfactual(*tree, chosen->features, query);
        const auto reply = bex::follow_up(session, *client, "What would the agent do instead?", &query, phrases);
        out["counterfactual"] = {{"flips", flips},
                                 {"action", bex::to_string(result.path.action)},
                                 {"changed", result.changed},
                                 {"path", result.path},
                                 {"reply", reply}};
    }
    json history = json::array();
    for (const auto& m : session.history) history.push_back(m);
    out["history"] = std::move(history);
    write_text(o.out, out.dump(2) + "\n");
    return 0;
}

// ---- study -------------------------------------------------------------

struct StudyOptions {
    std::uint64_t seed = 42;
    int states = 10;
    int rollouts = 1000;
    int heldout = 100;
    int k = 5;
    int threads = 1;
    std::vector<std::string> policies;
    std::vector<std::string> conditions;
    std::string out_dir = "study";
    LlmOptions llm;
};

int run_study_cmd(const StudyOptions& o, const ConfigPaths& cfg) {
    bex::StudyGrid grid;
    grid.seed = o.seed;
    grid.states_per_cell = o.states;
    grid.rollouts = o.rollouts;
    grid.heldout_rollouts = o.heldout;
    grid.k = o.k;
    grid.threads = o.threads;
    if (!o.policies.empty()) {
        grid.policies.clear();
        for (const auto& p : o.policies) grid.policies.push_back(bex::parse_policy_kind(p));
    }
    if (!o.conditions.empty()) {
        grid.conditions.clear();
        for (const auto& c : o.conditions) grid.conditions.push_back(bex::parse_condition_kind(c));
    }
    const auto phrases = cfg.load_phrases();
    const bex::PromptBuilder builder(cfg.load_prompts(), phrases);
    const auto lexicon = cfg.load_lexicon(phrases);
    auto client = bex::make_llm_client(o.llm.settings());

    const auto prepared = bex::prepare_study(grid);
    const auto report = bex::run_study(prepared, *client, {builder, lexicon}, o.llm.settings().model);

    const fs::path dir(o.out_dir);
    write_text((dir / "rows.csv").string(), report.rows_csv());
    write_text((dir / "summary.csv").string(), report.summary_csv());
    write_text((dir / "features.csv").string(), report.features_csv());
    write_text((dir / "fidelity.csv").string(), report.fidelity_csv());
    write_text((dir / "summary.txt").string(), report.summary_text());
    json j = report;
    write_text((dir / "study.json").string(), j.dump(2) + "\n");
    std::cout << report.summary_text();
    return 0;
}

// ---- replay ------------------------------------------------------------

struct ReplayOptions {
    std::string in;
    std::string policy;
    std::string engineer_policy;
    std::string medic_policy;
    std::string tree;
    std::string out;
};

int run_replay(const ReplayOptions& o) {
    const auto trajectories = load_trajectories(o.in);
    bex::PolicyPair pair = bex::PolicyPair::both(bex::parse_policy_kind(o.policy));
    if (!o.engineer_policy.empty()) pair.engineer.kind = bex::parse_policy_kind(o.engineer_policy);
    if (!o.medic_policy.empty()) pair.medic.kind = bex::parse_policy_kind(o.medic_policy);
    std::optional<bex::DecisionTree> tree;
    if (!o.tree.empty()) tree = bex::deserialize_tree(ConfigPaths::read_file(o.tree));

    json report = json::object();
    bool all_match = true;
    for (bex::Role r : bex::kAllRoles) {
        std::size_t steps = 0, matches = 0, no_state = 0, tree_matches = 0, tree_steps = 0;
        json first_mismatch;
        for (const auto& tr : trajectories) {
            if (tr.agent != r) continue;
            for (const auto& s : tr.steps) {
                if (tree && tree->role == r) {
                    ++tree_steps;
                    if (bex::predict(*tree, s.features) == s.action) ++tree_matches;
                }
                if (!s.state) {
                    ++no_state;
                    continue;
                }
                ++steps;
                const auto expected = bex::act(pair.for_role(r), *s.state, r);
                if (expected == s.action) ++matches;
                else if (first_mismatch.is_null())
                    first_mismatch = {{"episode", tr.episode_id},
                                      {"t", s.t},
                                      {"recorded", bex::to_string(s.action)},
                                      {"policy", bex::to_string(expected)}};
            }
        }
        json e = {{"steps", steps},
                  {"matches", matches},
                  {"replay_fidelity", fixed6(steps ? static_cast<double>(matches) / steps : 1.0)},
                  {"steps_without_state", no_state}};
        if (!first_mismatch.is_null()) e["first_mismatch"] = first_mismatch;
        if (tree && tree->role == r)
            e["tree_agreement"] = fixed6(tree_steps ? static_cast<double>(tree_matches) / tree_steps : 1.0);
        all_match = all_match && matches == steps;
        report[std::string(bex::to_string(r))] = std::move(e);
    }
    write_text(o.out.empty() ? "-" : o.out, report.dump(2) + "\n");
    return all_match ? 0 : 3;
}

// ---- serve -------------------------------------------------------------

int run_serve(const bex::ServiceConfig& sc, const LlmOptions& llm, const ConfigPaths& cfg) {
    const auto phrases = cfg.load_phrases();
    bex::Service service(sc, bex::make_llm_client(llm.settings()), cfg.load_prompts(), phrases,
                         cfg.load_lexicon(phrases));
    const int port = service.bind();
    std::cout << "listening on http://" << sc.host << ":" << port << std::endl;
    // SIGINT and SIGTERM are taken synchronously by a waiter thread.
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);
    std::thread waiter([&] {
        int sig = 0;
        sigwait(&signals, &sig);
        service.stop();
    });
    service.run();
    pthread_kill(waiter.native_handle(), SIGTERM);
    waiter.join();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Distil agent policies into decision trees and explain their actions"};
    app.require_subcommand(1);
    ConfigPaths cfg;
    app.add_option("--prompts", cfg.prompts, "Prompt config JSON (defaults built in)");
    app.add_option("--phrases", cfg.phrases, "Phrase table JSON (defaults built in)");
    app.add_option("--lexicon", cfg.lexicon, "Lexicon synonyms JSON (defaults built in)");

    RolloutOptions ro;
    auto* rollout = app.add_subcommand("rollout", "Sample seeded episodes and write NDJSON trajectories");
    rollout->add_option("--policy", ro.policy, "Policy for both agents: expert, explore_first, fixed_north");
    rollout->add_option("--engineer-policy", ro.engineer_policy, "Override the engineer's policy");
    rollout->add_option("--medic-policy", ro.medic_policy, "Override the medic's policy");
    rollout->add_option("-n,--n", ro.n, "Number of episodes")->check(CLI::NonNegativeNumber);
    rollout->add_option("--seed", ro.seed, "Base seed; episode i uses seed + i");
    rollout->add_option("--max-steps", ro.max_steps, "Turn limit per episode")->check(CLI::PositiveNumber);
    rollout->add_option("--victims", ro.victims, "Victims per scenario");
    rollout->add_option("--rubble", ro.rubble, "Rubble rooms per scenario");
    rollout->add_option("--p-hidden", ro.p_hidden, "Chance a victim in a rubble room is hidden");
    rollout->add_option("--threads", ro.threads, "Worker threads")->check(CLI::PositiveNumber);
    rollout->add_flag("--no-states", ro.no_states, "Omit full world states from the output");
    rollout->add_option("-o,--out", ro.out, "Output file (- for stdout)");

    DistillOptions dopt;
    auto* distill = app.add_subcommand("distill", "Fit decision trees from trajectories");
    distill->add_option("-i,--in", dopt.in, "Trajectory NDJSON")->required();
    distill->add_option("--role", dopt.role, "Only this role (default: both)");
    distill->add_option("-o,--out-dir", dopt.out_dir, "Directory for tree_<role>.json and distill_report.json");
    distill->add_option("--policy", dopt.policy, "Policy that produced the data, to report fidelity");
    distill->add_option("--heldout", dopt.heldout, "Held-out trajectories for the fidelity measurement");
    distill->add_option("--max-depth", dopt.max_depth, "Maximum tree depth");
    distill->add_option("--min-leaf", dopt.min_leaf, "Minimum samples per leaf");

    ExplainOptions eo;
    auto* explain = app.add_subcommand("explain", "Explain one recorded action");
    explain->add_option("--tree", eo.tree, "Tree JSON; its role selects the agent")->required();
    explain->add_option("--trajectories", eo.trajectories, "Trajectory NDJSON with the step to explain")->required();
    explain->add_option("--episode", eo.episode, "Episode of the step");
    explain->add_option("--t", eo.t, "Timestep of the step (default: the agent's last step)");
    explain->add_option("--condition", eo.condition, "br_path, br_states or no_br");
    explain->add_option("-k", eo.k, "Samples for br_states");
    explain->add_option("--sample-seed", eo.sample_seed, "Seed for br_states sampling");
    explain->add_option("--flip", eo.flips, "Counterfactual feature=value (repeatable)");
    explain->add_flag("--prompt-only", eo.prompt_only, "Build the prompt without calling a model");
    explain->add_option("--prompt-out", eo.prompt_out, "Also write the serialized prompt here");
    explain->add_option("-o,--out", eo.out, "Output JSON file (- for stdout)");
    add_llm_options(explain, eo.llm);

    StudyOptions so;
    auto* study = app.add_subcommand("study", "Run the policy x condition explanation grid");
    study->add_option("--seed", so.seed, "Grid seed");
    study->add_option("--states", so.states, "States per cell");
    study->add_option("--rollouts", so.rollouts, "Training episodes per policy");
    study->add_option("--heldout", so.heldout, "Held-out episodes per policy");
    study->add_option("-k", so.k, "Samples for br_states");
    study->add_option("--threads", so.threads, "Worker threads");
    study->add_option("--policy", so.policies, "Restrict to these policies (repeatable)");
    study->add_option("--condition", so.conditions, "Restrict to these conditions (repeatable)");
    study->add_option("-o,--out-dir", so.out_dir, "Directory for the CSV, text and JSON reports");
    add_llm_options(study, so.llm);

    ReplayOptions rp;
    auto* replay = app.add_subcommand("replay", "Check recorded actions against a policy (and optionally a tree)");
    replay->add_option("-i,--in", rp.in, "Trajectory NDJSON")->required();
    replay->add_option("--policy", rp.policy, "Policy for both agents")->required();
    replay->add_option("--engineer-policy", rp.engineer_policy, "Override the engineer's policy");
    replay->add_option("--medic-policy", rp.medic_policy, "Override the medic's policy");
    replay->add_option("--tree", rp.tree, "Also report agreement of this tree");
    replay->add_option("-o,--out", rp.out, "Output JSON file (- for stdout)");

    bex::ServiceConfig sc;
    LlmOptions serve_llm;
    auto* serve = app.add_subcommand("serve", "Run the HTTP service");
    serve->add_option("--host", sc.host, "Bind address");
    serve->add_option("--port", sc.port, "Port (0 picks a free one)");
    serve->add_option("--static-dir", sc.static_dir, "Directory served at /");
    serve->add_option("--event-log", sc.event_log, "Append-only JSON-lines audit log");
    serve->add_option("--study-dir", sc.study_dir, "Directory listed by GET /study/reports");
    serve->add_flag("--reject-busy", sc.reject_busy, "Answer 409 instead of waiting on a busy episode");
    serve->add_option("--tree-rollouts", sc.tree_rollouts, "Episodes used to distil each tree");
    serve->add_option("--tree-seed", sc.tree_seed, "Base seed of those episodes");
    add_llm_options(serve, serve_llm);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*rollout) return run_rollout(ro);
        if (*distill) return run_distill(dopt);
        if (*explain) return run_explain(eo, cfg);
        if (*study) return run_study_cmd(so, cfg);
        if (*replay) return run_replay(rp);
        if (*serve) return run_serve(sc, serve_llm, cfg);
    } catch (const bex::SessionError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
