#include "bex/service.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "bex/behavior.hpp"
#include "bex/error.hpp"
#include "bex/policy.hpp"

namespace bex {

namespace {

using nlohmann::json;

// 400 with a per-field message.
class FieldError : public Error {
public:
    FieldError(std::string field, const std::string& what) : Error(what), field_(std::move(field)) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

class NotFound : public Error {
public:
    using Error::Error;
};

class Busy : public Error {
public:
    using Error::Error;
};

// ConfigError messages from validate() start with "field: ".
FieldError field_error_from(const std::string& prefix, const Error& e) {
    const std::string what = e.what();
    const auto colon = what.find(':');
    std::string field = colon == std::string::npos ? prefix : what.substr(0, colon);
    if (!prefix.empty() && field != prefix) field = prefix + "." + field;
    return FieldError(field, what);
}

json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    json j;
    try {
        j = json::parse(req.body);
    } catch (const json::parse_error& e) {
        throw FieldError("body", std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw FieldError("body", "must be a JSON object");
    return j;
}

std::string get_string(const json& j, const std::string& field, std::optional<std::string> fallback = {}) {
    if (!j.contains(field) || j.at(field).is_null()) {
        if (fallback) return *fallback;
        throw FieldError(field, field + ": required");
    }
    if (!j.at(field).is_string()) throw FieldError(field, field + ": must be a string");
    return j.at(field).get<std::string>();
}

std::int64_t get_int(const json& j, const std::string& field, std::int64_t fallback, std::int64_t lo,
                     std::int64_t hi) {
    if (!j.contains(field) || j.at(field).is_null()) return fallback;
    const auto& v = j.at(field);
    if (!v.is_number_integer()) throw FieldError(field, field + ": must be an integer");
    const auto x = v.get<std::int64_t>();
    if (x < lo || x > hi)
        throw FieldError(field, field + ": must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    return x;
}

bool get_bool(const json& j, const std::string& field, bool fallback) {
    if (!j.contains(field) || j.at(field).is_null()) return fallback;
    if (!j.at(field).is_boolean()) throw FieldError(field, field + ": must be a boolean");
    return j.at(field).get<bool>();
}

template <typename F>
auto with_field(const std::string& field, F&& parse) {
    try {
        return parse();
    } catch (const FieldError&) {
        throw;
    } catch (const Error& e) {
        throw FieldError(field, field + ": " + e.what());
    }
}

std::string now_iso() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct StepRecord {
    int t = 0;
    Role agent = Role::Engineer;
    Action action = Action::Wait;
    WorldState before;
    std::string source;  // "manual" or "policy"
};

struct EpisodeHandle {
    std::string id;
    ScenarioConfig scenario;
    PolicyPair policies;
    std::mutex mutex;
    WorldState state;
    std::vector<StepRecord> steps;
};

struct SessionHandle {
    std::mutex mutex;
    ExplanationSession session;
    std::string template_text;
    PolicyKind policy = PolicyKind::Expert;
};

template <typename Mutex>
std::unique_lock<Mutex> acquire(Mutex& m, bool reject_busy, const std::string& what) {
    if (!reject_busy) return std::unique_lock<Mutex>(m);
    std::unique_lock<Mutex> lock(m, std::try_to_lock);
    if (!lock.owns_lock()) throw Busy(what + " is busy with another request");
    return lock;
}

json legal_json(const WorldState& s) {
    json out = json::object();
    for (Role r : kAllRoles) {
        json acts = json::array();
        for (Action a : legal_actions(s, r)) acts.push_back(to_string(a));
        out[std::string(to_string(r))] = std::move(acts);
    }
    return out;
}

json episode_json(const EpisodeHandle& ep) {
    json steps = json::array();
    for (const auto& s : ep.steps)
        steps.push_back({{"t", s.t}, {"agent", to_string(s.agent)}, {"action", to_string(s.action)}, {"source", s.source}});
    return {{"id", ep.id},
            {"scenario", ep.scenario},
            {"policies",
             {{"engineer", to_string(ep.policies.engineer.kind)}, {"medic", to_string(ep.policies.medic.kind)}}},
            {"state", ep.state},
            {"terminal", is_terminal(ep.state)},
            {"victims_total", ep.state.victims_total()},
            {"legal_actions", legal_json(ep.state)},
            {"steps", std::move(steps)}};
}

}  // namespace

struct Service::Impl {
    ServiceConfig config;
    std::unique_ptr<LlmClient> client;
    PromptBuilder builder;
    FeatureLexicon lexicon;
    httplib::Server server;
    int bound_port = -1;

    // run() and stop() may race; a stop that arrives first must still win.
    std::mutex lifecycle_mutex;
    bool run_started = false;
    bool stop_requested = false;

    std::mutex registry_mutex;
    std::map<std::string, std::shared_ptr<EpisodeHandle>> episodes;
    std::map<std::string, std::shared_ptr<SessionHandle>> sessions;
    int next_episode = 1;
    int next_session = 1;

    std::mutex tree_mutex;
    std::map<std::pair<PolicyKind, Role>, std::shared_ptr<const DecisionTree>> trees;
    std::map<PolicyKind, std::shared_ptr<const std::vector<Trajectory>>> rollouts;

    std::mutex log_mutex;
    std::ofstream log;
    std::uint64_t log_seq = 0;

    Impl(ServiceConfig c, std::unique_ptr<LlmClient> cl, PromptConfig prompts, PhraseTable phrases,
         FeatureLexicon lex)
        : config(std::move(c)), client(std::move(cl)), builder(std::move(prompts), std::move(phrases)),
          lexicon(std::move(lex)) {
        config.validate();
        if (!client) throw ConfigError("llm: no client configured");
        if (!config.event_log.empty()) {
            log.open(config.event_log, std::ios::app);
            if (!log) throw ConfigError("event_log: cannot open '" + config.event_log + "'");
        }
        routes();
    }

    void record(const std::string& event, json data) {
        if (!log.is_open()) return;
        std::lock_guard lock(log_mutex);
        data["seq"] = ++log_seq;
        data["event"] = event;
        data["time"] = now_iso();
        log << data.dump() << '\n';
        log.flush();
    }

    // Caller holds tree_mutex.
    std::shared_ptr<const std::vector<Trajectory>> rollouts_locked(PolicyKind policy) {
        auto& slot = rollouts[policy];
        if (!slot) {
            RolloutConfig rc;
            rc.num_rollouts = config.tree_rollouts;
            rc.base_seed = config.tree_seed;
            slot = std::make_shared<const std::vector<Trajectory>>(sample_rollouts(PolicyPair::both(policy), rc));
        }
        return slot;
    }

    std::shared_ptr<const std::vector<Trajectory>> rollouts_for(PolicyKind policy) {
        std::lock_guard lock(tree_mutex);
        return rollouts_locked(policy);
    }

    std::shared_ptr<const DecisionTree> tree_for(PolicyKind policy, Role role) {
        std::lock_guard lock(tree_mutex);
        auto& slot = trees[{policy, role}];
        if (!slot)
            slot = std::make_shared<const DecisionTree>(
                fit_tree(build_dataset(*rollouts_locked(policy), role), config.tree));
        return slot;
    }

    std::shared_ptr<EpisodeHandle> find_episode(const std::string& id) {
        std::lock_guard lock(registry_mutex);
        auto it = episodes.find(id);
        if (it == episodes.end()) throw NotFound("no episode '" + id + "'");
        return it->second;
    }

    std::shared_ptr<SessionHandle> find_session(const std::string& id) {
        std::lock_guard lock(registry_mutex);
        auto it = sessions.find(id);
        if (it == sessions.end()) throw NotFound("no explanation session '" + id + "'");
        return it->second;
    }

    template <typename F>
    httplib::Server::Handler guard(F&& f) {
        return [this, f = std::forward<F>(f)](const httplib::Request& req, httplib::Response& res) {
            auto fail = [&](int status, json body) {
                res.status = status;
                res.set_content(body.dump(), "application/json");
            };
            try {
                f(req, res);
            } catch (const FieldError& e) {
                fail(400, {{"error", e.what()}, {"fields", {{e.field(), e.what()}}}});
            } catch (const NotFound& e) {
                fail(404, {{"error", e.what()}});
            } catch (const Busy& e) {
                fail(409, {{"error", e.what()}});
            } catch (const OutOfTurnError& e) {
                fail(409, {{"error", e.what()}});
            } catch (const IllegalActionError& e) {
                fail(422, {{"error", e.what()}});
            } catch (const DatasetError& e) {
                fail(422, {{"error", e.what()}});
            } catch (const SessionError& e) {
                fail(502, {{"error", e.what()}, {"prompt", e.prompt()}});
            } catch (const TransportError& e) {
                fail(502, {{"error", e.what()}});
            } catch (const SchemaError& e) {
                fail(400, {{"error", e.what()}});
            } catch (const ParseError& e) {
                fail(400, {{"error", e.what()}});
            } catch (const ConfigError& e) {
                fail(400, {{"error", e.what()}});
            } catch (const std::exception& e) {
                fail(500, {{"error", e.what()}});
            }
        };
    }

    static void reply(httplib::Response& res, const json& body, int status = 200) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    void routes() {
        server.Post("/episodes", guard([this](const httplib::Request& req, httplib::Response& res) {
            const json body = parse_body(req);
            auto ep = std::make_shared<EpisodeHandle>();
            if (body.contains("scenario")) {
                ep->scenario = with_field("scenario", [&] {
                    try {
                        return body.at("scenario").get<ScenarioConfig>();
                    } catch (const json::exception& e) {
                        throw FieldError("scenario", std::string("scenario: ") + e.what());
                    }
                });
            }
            try {
                ep->scenario.validate();
            } catch (const ConfigError& e) {
                throw field_error_from("scenario", e);
            }
            if (body.contains("policies")) {
                const json& p = body.at("policies");
                if (!p.is_object()) throw FieldError("policies", "policies: must be an object");
                for (Role r : kAllRoles) {
                    const std::string name(to_string(r));
                    const std::string field = "policies." + name;
                    const auto kind = with_field(field, [&] {
                        return parse_policy_kind(get_string(p, name, std::string("expert")));
                    });
                    (r == Role::Engineer ? ep->policies.engineer : ep->policies.medic) = Policy{kind, r};
                }
            }
            ep->state = new_scenario(ep->scenario);
            {
                std::lock_guard lock(registry_mutex);
                ep->id = "ep-" + std::to_string(next_episode++);
                episodes[ep->id] = ep;
            }
            std::lock_guard lock(ep->mutex);
            record("episode_created", {{"episode", ep->id}, {"scenario", ep->scenario}});
            reply(res, episode_json(*ep), 201);
        }));

        server.Get(R"(/episodes/([^/]+))", guard([this](const httplib::Request& req, httplib::Response& res) {
            auto ep = find_episode(req.matches[1]);
            auto lock = acquire(ep->mutex, config.reject_busy, "episode " + ep->id);
            reply(res, episode_json(*ep));
        }));

        server.Post(R"(/episodes/([^/]+)/step)", guard([this](const httplib::Request& req, httplib::Response& res) {
            auto ep = find_episode(req.matches[1]);
            const json body = parse_body(req);
            const Role agent = with_field("agent", [&] { return parse_role(get_string(body, "agent")); });
            const Action action = with_field("action", [&] { return parse_action(get_string(body, "action")); });
            auto lock = acquire(ep->mutex, config.reject_busy, "episode " + ep->id);
            const WorldState before = ep->state;
            ep->state = step(before, agent, action);
            ep->steps.push_back({before.timestep, agent, action, before, "manual"});
            record("step", {{"episode", ep->id},
                            {"t", before.timestep},
                            {"agent", to_string(agent)},
                            {"action", to_string(action)}});
            reply(res, episode_json(*ep));
        }));

        server.Post(R"(/episodes/([^/]+)/autostep)", guard([this](const httplib::Request& req, httplib::Response& res) {
            auto ep = find_episode(req.matches[1]);
            const json body = parse_body(req);
            const bool until_terminal = get_bool(body, "until_terminal", false);
            const auto steps = get_int(body, "steps", until_terminal ? config.max_autostep : 1, 1, config.max_autostep);
            auto lock = acquire(ep->mutex, config.reject_busy, "episode " + ep->id);
            json taken = json::array();
            for (std::int64_t i = 0; i < steps && !is_terminal(ep->state); ++i) {
                const WorldState before = ep->state;
                const Role agent = before.whose_turn;
                const Action action = act(ep->policies.for_role(agent), before, agent);
                ep->state = step(before, agent, action);
                ep->steps.push_back({before.timestep, agent, action, before, "policy"});
                taken.push_back({{"t", before.timestep}, {"agent", to_string(agent)}, {"action", to_string(action)}});
            }
            record("autostep", {{"episode", ep->id}, {"actions", taken}});
            json out = episode_json(*ep);
            out["taken"] = std::move(taken);
            reply(res, out);
        }));

        server.Get(R"(/trees/([^/]+))", guard([this](const httplib::Request& req, httplib::Response& res) {
            const Role role = with_field("role", [&] { return parse_role(req.matches[1].str()); });
            const PolicyKind policy = with_field("policy", [&] {
                return parse_policy_kind(req.has_param("policy") ? req.get_param_value("policy") : "expert");
            });
            const auto t = tree_for(policy, role);
            json out = {{"policy", to_string(policy)},
                        {"role", to_string(role)},
                        {"depth", t->depth()},
                        {"leaves", t->leaf_count()},
                        {"tree", json::parse(serialize_tree(*t))}};
            reply(res, out);
        }));

        server.Post("/explanations", guard([this](const httplib::Request& req, httplib::Response& res) {
            const json body = parse_body(req);
            auto ep = find_episode_field(body);
            const Role agent = with_field("agent", [&] { return parse_role(get_string(body, "agent")); });
            Condition cond;
            cond.kind = with_field("condition", [&] {
                return parse_condition_kind(get_string(body, "condition", std::string("br_path")));
            });
            cond.k = static_cast<int>(get_int(body, "k", 5, 0, 50));
            cond.seed = static_cast<std::uint64_t>(get_int(body, "seed", 0, 0, INT64_MAX));
            const std::int64_t want_t = get_int(body, "timestep", -1, -1, INT64_MAX);

            // Freeze the snapshot while holding the episode lock, then let the
            // model call run without it.
            SessionContext ctx;
            PolicyKind policy_kind;
            {
                auto lock = acquire(ep->mutex, config.reject_busy, "episode " + ep->id);
                policy_kind = ep->policies.for_role(agent).kind;
                const StepRecord* chosen = nullptr;
                for (const auto& s : ep->steps)
                    if (s.agent == agent && (want_t < 0 || s.t == want_t)) chosen = &s;
                ctx.agent = agent;
                ctx.episode = std::stoi(ep->id.substr(3));
                if (chosen) {
                    ctx.state = chosen->before;
                    ctx.action = chosen->action;
                    ctx.timestep = chosen->t;
                } else if (want_t >= 0) {
                    throw FieldError("timestep", "timestep: the " + std::string(to_string(agent)) +
                                                     " took no step at t=" + std::to_string(want_t));
                } else {
                    ctx.state = ep->state;
                    ctx.action = act(ep->policies.for_role(agent), ep->state, agent);
                    ctx.timestep = ep->state.timestep;
                }
            }
            ctx.features = extract_features(*ctx.state, agent);
            ctx.tree = tree_for(policy_kind, agent);
            const DecisionPath path = extract_path(*ctx.tree, ctx.features);

            Evidence evidence = StateSummary{ctx.features};
            if (cond.kind == ConditionKind::BrPath) {
                ctx.path = path;
                evidence = path;
            } else if (cond.kind == ConditionKind::BrStates) {
                ctx.samples = sample_state_actions(*rollouts_for(policy_kind), agent, cond.k, cond.seed);
                evidence = ctx.samples;
            }
            auto bundle = builder.build(cond, evidence, ctx.action, agent);

            auto handle = std::make_shared<SessionHandle>();
            handle->policy = policy_kind;
            handle->template_text = render_template(path, builder.phrases());
            std::string id;
            {
                std::lock_guard lock(registry_mutex);
                id = "ex-" + std::to_string(next_session++);
            }
            handle->session = open_session(id, cond, std::move(ctx), std::move(bundle), *client);
            {
                std::lock_guard lock(registry_mutex);
                sessions[id] = handle;
            }
            record("explanation_opened", {{"session", id},
                                          {"episode", ep->id},
                                          {"agent", to_string(agent)},
                                          {"condition", to_string(cond.kind)},
                                          {"explanation", handle->session.explanation()}});
            reply(res, session_json(*handle), 201);
        }));

        server.Get(R"(/explanations/([^/]+))", guard([this](const httplib::Request& req, httplib::Response& res) {
            auto s = find_session(req.matches[1]);
            auto lock = acquire(s->mutex, config.reject_busy, "session " + s->session.id);
            reply(res, session_json(*s));
        }));

        server.Post(R"(/explanations/([^/]+)/chat)", guard([this](const httplib::Request& req, httplib::Response& res) {
            auto s = find_session(req.matches[1]);
            const json body = parse_body(req);
            const std::string text = get_string(body, "text");
            if (text.empty()) throw FieldError("text", "text: must not be empty");
            auto lock = acquire(s->mutex, config.reject_busy, "session " + s->session.id);
            const std::string answer = follow_up(s->session, *client, text, nullptr, builder.phrases());
            record("chat", {{"session", s->session.id}, {"text", text}, {"reply", answer}});
            json out = session_json(*s);
            out["reply"] = answer;
            reply(res, out);
        }));

        server.Post(R"(/explanations/([^/]+)/counterfactual)",
                    guard([this](const httplib::Request& req, httplib::Response& res) {
            auto s = find_session(req.matches[1]);
            const json body = parse_body(req);
            if (!body.contains("flips")) throw FieldError("flips", "flips: required");
            const auto query = with_field("flips", [&] { return CounterfactualQuery::from_json(body.at("flips")); });
            const std::string text = get_string(body, "text", std::string("What would the agent do instead?"));
            auto lock = acquire(s->mutex, config.reject_busy, "session " + s->session.id);
            const auto result = counterfactual(*s->session.context.tree, s->session.context.features, query);
            const std::string answer = follow_up(s->session, *client, text, &query, builder.phrases());
            json out = session_json(*s);
            out["reply"] = answer;
            out["counterfactual"] = {{"action", to_string(result.path.action)},
                                     {"original_action", to_string(result.original.action)},
                                     {"changed", result.changed},
                                     {"features", result.features},
                                     {"path", result.path},
                                     {"template", render_template(result.path, builder.phrases())}};
            record("counterfactual", {{"session", s->session.id}, {"flips", body.at("flips")}, {"reply", answer}});
            reply(res, out);
        }));

        server.Get("/study/reports", guard([this](const httplib::Request&, httplib::Response& res) {
            json reports = json::array();
            namespace fs = std::filesystem;
            if (!config.study_dir.empty() && fs::is_directory(config.study_dir)) {
                std::vector<fs::path> files;
                for (const auto& e : fs::directory_iterator(config.study_dir))
                    if (e.is_regular_file()) files.push_back(e.path());
                std::sort(files.begin(), files.end());
                for (const auto& p : files) {
                    std::ifstream in(p, std::ios::binary);
                    std::ostringstream ss;
                    ss << in.rdbuf();
                    reports.push_back({{"name", p.filename().string()}, {"content", ss.str()}});
                }
            }
            reply(res, {{"reports", std::move(reports)}});
        }));

        if (!config.static_dir.empty() && !server.set_mount_point("/", config.static_dir))
            throw ConfigError("static_dir: '" + config.static_dir + "' is not a directory");
    }

    std::shared_ptr<EpisodeHandle> find_episode_field(const json& body) {
        const std::string id = get_string(body, "episode");
        std::lock_guard lock(registry_mutex);
        auto it = episodes.find(id);
        if (it == episodes.end()) throw FieldError("episode", "episode: no episode '" + id + "'");
        return it->second;
    }

    json session_json(const SessionHandle& h) const {
        json out = h.session;
        out["policy"] = to_string(h.policy);
        out["template"] = h.template_text;
        if (h.session.context.path) out["rules"] = path_clauses(*h.session.context.path, builder.phrases());
        out["grounding"] = grounding_score(h.session.explanation(),
                                           extract_path(*h.session.context.tree, h.session.context.features),
                                           h.session.context.features, lexicon);
        return out;
    }
};

void ServiceConfig::validate() const {
    if (port < 0 || port > 65535) throw ConfigError("port: must lie in [0, 65535]");
    if (max_autostep < 1) throw ConfigError("max_autostep: must be >= 1");
    if (tree_rollouts < 1) throw ConfigError("tree_rollouts: must be >= 1");
    tree.validate();
}

Service::Service(ServiceConfig config, std::unique_ptr<LlmClient> client, PromptConfig prompts, PhraseTable phrases,
                 FeatureLexicon lexicon)
    : impl_(std::make_unique<Impl>(std::move(config), std::move(client), std::move(prompts), std::move(phrases),
                                   std::move(lexicon))) {}

Service::~Service() { stop(); }

int Service::bind() {
    auto& cfg = impl_->config;
    if (cfg.port == 0) {
        impl_->bound_port = impl_->server.bind_to_any_port(cfg.host);
    } else {
        impl_->bound_port = impl_->server.bind_to_port(cfg.host, cfg.port) ? cfg.port : -1;
    }
    if (impl_->bound_port < 0)
        throw Error("cannot bind " + cfg.host + ":" + std::to_string(cfg.port));
    return impl_->bound_port;
}

void Service::run() {
    if (impl_->bound_port < 0) bind();
    {
        std::lock_guard lock(impl_->lifecycle_mutex);
        if (impl_->stop_requested) return;
        impl_->run_started = true;
    }
    impl_->server.listen_after_bind();
}

void Service::stop() {
    if (!impl_) return;
    bool started = false;
    {
        std::lock_guard lock(impl_->lifecycle_mutex);
        impl_->stop_requested = true;
        started = impl_->run_started;
    }
    if (!started) return;
    impl_->server.wait_until_ready();
    impl_->server.stop();
}

std::shared_ptr<const DecisionTree> Service::tree(PolicyKind policy, Role role) { return impl_->tree_for(policy, role); }

}  // namespace bex
