#include <gtest/gtest.h>

#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <future>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "bex/error.hpp"
#include "bex/service.hpp"

using namespace bex;
using nlohmann::json;

namespace {

// Blocks inside complete() until released, so a request can be held open.
class GateClient final : public LlmClient {
public:
    std::string complete(const std::vector<ChatMessage>& m, const ModelConfig& model) override {
        std::unique_lock lock(mutex_);
        if (closed_) {
            entered_ = true;
            cv_.notify_all();
            cv_.wait(lock, [this] { return !closed_; });
        }
        return inner_.complete(m, model);
    }
    std::string_view name() const override { return "gate"; }

    void close() {
        std::lock_guard lock(mutex_);
        closed_ = true;
        entered_ = false;
    }
    void wait_entered() {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [this] { return entered_; });
    }
    void open() {
        std::lock_guard lock(mutex_);
        closed_ = false;
        cv_.notify_all();
    }

private:
    std::mutex mutex_;
    std::condition_variable cv_;
    bool closed_ = false;
    bool entered_ = false;
    MockLlmClient inner_;
};

class FailingClient final : public LlmClient {
public:
    std::string complete(const std::vector<ChatMessage>&, const ModelConfig&) override {
        throw TransportError("model unavailable");
    }
    std::string_view name() const override { return "failing"; }
};

class Running {
public:
    explicit Running(std::unique_ptr<LlmClient> client, ServiceConfig cfg = {}) {
        cfg.port = 0;
        cfg.tree_rollouts = 80;
        service_ = std::make_unique<Service>(cfg, std::move(client));
        port_ = service_->bind();
        thread_ = std::thread([this] { service_->run(); });
    }
    ~Running() {
        service_->stop();
        thread_.join();
    }

    httplib::Client client() const {
        httplib::Client c("127.0.0.1", port_);
        c.set_read_timeout(std::chrono::seconds(30));
        return c;
    }

    std::pair<int, json> post(const std::string& path, const json& body) const {
        auto c = client();
        auto res = c.Post(path, body.dump(), "application/json");
        if (!res) throw std::runtime_error("no response from " + path);
        return {res->status, res->body.empty() ? json() : json::parse(res->body)};
    }
    std::pair<int, json> post_raw(const std::string& path, const std::string& body) const {
        auto c = client();
        auto res = c.Post(path, body, "application/json");
        if (!res) throw std::runtime_error("no response from " + path);
        return {res->status, json::parse(res->body)};
    }
    std::pair<int, json> get(const std::string& path) const {
        auto c = client();
        auto res = c.Get(path);
        if (!res) throw std::runtime_error("no response from " + path);
        return {res->status, json::parse(res->body)};
    }

    Service& service() { return *service_; }
    int port() const { return port_; }

private:
    std::unique_ptr<Service> service_;
    std::thread thread_;
    int port_ = 0;
};

json scenario42() { return {{"scenario", {{"seed", 42}}}}; }

}  // namespace

TEST(Service, BindsAnyPort) {
    Running a(std::make_unique<MockLlmClient>());
    Running b(std::make_unique<MockLlmClient>());
    EXPECT_GT(a.port(), 0);
    EXPECT_NE(a.port(), b.port());
}

TEST(Service, RejectsBadConfig) {
    ServiceConfig cfg;
    cfg.port = 70000;
    EXPECT_THROW(Service(cfg, std::make_unique<MockLlmClient>()), ConfigError);
    cfg = {};
    EXPECT_THROW(Service(cfg, nullptr), ConfigError);
    cfg = {};
    cfg.static_dir = "/nonexistent/web";
    EXPECT_THROW(Service(cfg, std::make_unique<MockLlmClient>()), ConfigError);
}

TEST(Service, EpisodeLifecycle) {
    Running svc(std::make_unique<MockLlmClient>());
    auto [status, ep] = svc.post("/episodes", scenario42());
    ASSERT_EQ(status, 201);
    const std::string id = ep.at("id");
    EXPECT_EQ(ep.at("state").at("whose_turn"), "engineer");
    EXPECT_EQ(ep.at("policies").at("medic"), "expert");
    EXPECT_FALSE(ep.at("terminal").get<bool>());

    ScenarioConfig cfg;
    cfg.seed = 42;
    EXPECT_EQ(ep.at("state"), json(new_scenario(cfg)));

    const std::string legal = ep.at("legal_actions").at("engineer").at(0);
    auto [s2, after] = svc.post("/episodes/" + id + "/step", {{"agent", "engineer"}, {"action", legal}});
    ASSERT_EQ(s2, 200) << after.dump();
    EXPECT_EQ(after.at("state").at("timestep"), 1);
    EXPECT_EQ(after.at("steps").size(), 1u);

    auto [s3, fetched] = svc.get("/episodes/" + id);
    EXPECT_EQ(s3, 200);
    EXPECT_EQ(fetched, after);
}

TEST(Service, AutostepToTerminal) {
    Running svc(std::make_unique<MockLlmClient>());
    auto [status, ep] = svc.post("/episodes", scenario42());
    const std::string id = ep.at("id");
    auto [s1, one] = svc.post("/episodes/" + id + "/autostep", json::object());
    EXPECT_EQ(s1, 200);
    EXPECT_EQ(one.at("taken").size(), 1u);
    auto [s2, done] = svc.post("/episodes/" + id + "/autostep", {{"until_terminal", true}});
    ASSERT_EQ(s2, 200);
    EXPECT_TRUE(done.at("terminal").get<bool>());

    // Same trajectory as the library's own episode runner.
    ScenarioConfig cfg;
    cfg.seed = 42;
    const auto reference = run_episode(PolicyPair{}, cfg, 400);
    EXPECT_EQ(done.at("state"), json(reference.final_state));
}

TEST(Service, ErrorStatuses) {
    Running svc(std::make_unique<MockLlmClient>());
    auto [_, ep] = svc.post("/episodes", scenario42());
    const std::string id = ep.at("id");

    EXPECT_EQ(svc.get("/episodes/ep-999").first, 404);
    EXPECT_EQ(svc.post("/explanations/ex-999/chat", {{"text", "hi"}}).first, 404);

    auto [s_bad_json, bad_json] = svc.post_raw("/episodes", "{not json");
    EXPECT_EQ(s_bad_json, 400);
    EXPECT_TRUE(bad_json.at("fields").contains("body"));

    auto [s_scen, scen] = svc.post("/episodes", {{"scenario", {{"n_victims", 30}}}});
    EXPECT_EQ(s_scen, 400);
    EXPECT_TRUE(scen.contains("fields")) << scen.dump();

    auto [s_pol, pol] = svc.post("/episodes", {{"policies", {{"medic", "lazy"}}}});
    EXPECT_EQ(s_pol, 400);
    EXPECT_TRUE(pol.at("fields").contains("policies.medic"));

    auto [s_act, act_body] = svc.post("/episodes/" + id + "/step", {{"agent", "engineer"}, {"action", "Fly"}});
    EXPECT_EQ(s_act, 400);
    EXPECT_TRUE(act_body.at("fields").contains("action"));

    EXPECT_EQ(svc.post("/episodes/" + id + "/step", {{"agent", "medic"}, {"action", "Wait"}}).first, 409);
    EXPECT_EQ(svc.post("/episodes/" + id + "/step", {{"agent", "engineer"}, {"action", "TriageVictim"}}).first, 422);

    auto [s_steps, steps] = svc.post("/episodes/" + id + "/autostep", {{"steps", 100000}});
    EXPECT_EQ(s_steps, 400);
    EXPECT_TRUE(steps.at("fields").contains("steps"));

    auto [s_cond, cond] = svc.post("/explanations", {{"episode", id}, {"agent", "medic"}, {"condition", "vibes"}});
    EXPECT_EQ(s_cond, 400);
    EXPECT_TRUE(cond.at("fields").contains("condition"));
    EXPECT_EQ(svc.post("/explanations", {{"episode", "ep-404"}, {"agent", "medic"}}).first, 400);
    EXPECT_EQ(svc.post("/explanations", {{"episode", id}, {"agent", "medic"}, {"timestep", 99}}).first, 400);
    EXPECT_EQ(svc.get("/trees/pilot").first, 400);
}

TEST(Service, TreesEndpointMatchesLibrary) {
    Running svc(std::make_unique<MockLlmClient>());
    auto [status, body] = svc.get("/trees/medic?policy=fixed_north");
    ASSERT_EQ(status, 200);
    const auto t = svc.service().tree(PolicyKind::FixedNorth, Role::Medic);
    EXPECT_EQ(body.at("tree"), json::parse(serialize_tree(*t)));
    EXPECT_EQ(body.at("leaves"), t->leaf_count());
}

TEST(Service, ExplanationChatAndCounterfactual) {
    Running svc(std::make_unique<MockLlmClient>());
    auto [_, ep] = svc.post("/episodes", scenario42());
    const std::string id = ep.at("id");
    svc.post("/episodes/" + id + "/autostep", {{"steps", 2}});

    auto [s1, ex] = svc.post("/explanations", {{"episode", id}, {"agent", "medic"}, {"condition", "br_path"}});
    ASSERT_EQ(s1, 201) << ex.dump();
    const std::string sid = ex.at("id");
    EXPECT_EQ(ex.at("history").size(), 3u);
    EXPECT_EQ(ex.at("timestep"), 1);
    // The echo mock restates the rules, so it matches the template.
    EXPECT_EQ(ex.at("explanation"), ex.at("template"));
    EXPECT_EQ(ex.at("grounding").at("precision"), 1.0);
    EXPECT_TRUE(ex.at("rules").is_array());

    auto [s2, chat] = svc.post("/explanations/" + sid + "/chat", {{"text", "Why not explore east?"}});
    ASSERT_EQ(s2, 200);
    EXPECT_EQ(chat.at("history").size(), 5u);
    EXPECT_EQ(chat.at("reply"), chat.at("history").at(4).at("content"));

    auto [s3, cf] = svc.post("/explanations/" + sid + "/counterfactual", {{"flips", {{"victim_in_room", 1}}}});
    ASSERT_EQ(s3, 200) << cf.dump();
    EXPECT_EQ(cf.at("history").size(), 7u);
    EXPECT_EQ(cf.at("counterfactual").at("original_action"), ex.at("action"));
    EXPECT_EQ(cf.at("counterfactual").at("features").at("victim_in_room"), 1);
    const auto tree = svc.service().tree(PolicyKind::Expert, Role::Medic);
    auto flipped = ex.at("features").get<FeatureVector>();
    flipped[Feature::VictimInRoom] = 1;
    EXPECT_EQ(cf.at("counterfactual").at("action"), to_string(predict(*tree, flipped)));

    EXPECT_EQ(svc.post("/explanations/" + sid + "/counterfactual", {{"flips", {{"dir_victim", 8}}}}).first, 400);
    EXPECT_EQ(svc.post("/explanations/" + sid + "/chat", {{"text", ""}}).first, 400);

    auto [s4, fetched] = svc.get("/explanations/" + sid);
    EXPECT_EQ(s4, 200);
    EXPECT_EQ(fetched.at("history").size(), 7u);
}

TEST(Service, ExplanationConditionsDifferInEvidence) {
    Running svc(std::make_unique<MockLlmClient>());
    auto [_, ep] = svc.post("/episodes", scenario42());
    const std::string id = ep.at("id");
    for (const char* c : {"br_path", "br_states", "no_br"}) {
        auto [s, ex] = svc.post("/explanations", {{"episode", id}, {"agent", "engineer"}, {"condition", c}, {"k", 3}});
        ASSERT_EQ(s, 201) << ex.dump();
        EXPECT_EQ(ex.at("condition"), c);
        const std::string part_d = ex.at("prompt").at("part_d");
        EXPECT_EQ(part_d.find("RULE: ") != std::string::npos, std::string(c) == "br_path");
        EXPECT_EQ(part_d.find("SAMPLE: ") != std::string::npos, std::string(c) == "br_states");
        EXPECT_EQ(part_d.find("STATE: ") != std::string::npos, std::string(c) == "no_br");
    }
}

TEST(Service, ModelFailureIs502WithPrompt) {
    Running svc(std::make_unique<FailingClient>());
    auto [_, ep] = svc.post("/episodes", scenario42());
    auto [s, body] = svc.post("/explanations", {{"episode", ep.at("id")}, {"agent", "medic"}});
    EXPECT_EQ(s, 502);
    EXPECT_NE(body.at("prompt").get<std::string>().find("### QUERY"), std::string::npos);
}

TEST(Service, RejectBusySession) {
    auto gate = std::make_unique<GateClient>();
    GateClient* g = gate.get();
    ServiceConfig cfg;
    cfg.reject_busy = true;
    Running svc(std::move(gate), cfg);
    auto [_, ep] = svc.post("/episodes", scenario42());
    auto [s1, ex] = svc.post("/explanations", {{"episode", ep.at("id")}, {"agent", "medic"}});
    ASSERT_EQ(s1, 201);
    const std::string sid = ex.at("id");

    g->close();
    auto slow = std::async(std::launch::async, [&] { return svc.post("/explanations/" + sid + "/chat", {{"text", "a"}}); });
    g->wait_entered();
    EXPECT_EQ(svc.post("/explanations/" + sid + "/chat", {{"text", "b"}}).first, 409);
    // Other resources stay available.
    EXPECT_EQ(svc.get("/episodes/" + ep.at("id").get<std::string>()).first, 200);
    g->open();
    EXPECT_EQ(slow.get().first, 200);
    EXPECT_EQ(svc.get("/explanations/" + sid).second.at("history").size(), 5u);
}

TEST(Service, ConcurrentChatsSerializeWithoutRejectBusy) {
    Running svc(std::make_unique<MockLlmClient>());
    auto [_, ep] = svc.post("/episodes", scenario42());
    auto [s1, ex] = svc.post("/explanations", {{"episode", ep.at("id")}, {"agent", "engineer"}});
    const std::string sid = ex.at("id");
    std::vector<std::future<int>> results;
    for (int i = 0; i < 8; ++i)
        results.push_back(std::async(std::launch::async, [&] {
            return svc.post("/explanations/" + sid + "/chat", {{"text", "more"}}).first;
        }));
    for (auto& r : results) EXPECT_EQ(r.get(), 200);
    const auto history = svc.get("/explanations/" + sid).second.at("history");
    ASSERT_EQ(history.size(), 3u + 16u);
    for (std::size_t i = 3; i < history.size(); ++i) EXPECT_EQ(history[i].at("role"), i % 2 ? "user" : "assistant");
}

TEST(Service, StudyReportsAndEventLog) {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / ("bex_service_" + std::to_string(::getpid()));
    fs::create_directories(dir / "study");
    std::ofstream(dir / "study" / "summary.csv") << "policy,condition\n";
    ServiceConfig cfg;
    cfg.study_dir = (dir / "study").string();
    cfg.event_log = (dir / "events.jsonl").string();
    {
        Running svc(std::make_unique<MockLlmClient>(), cfg);
        auto [s, body] = svc.get("/study/reports");
        ASSERT_EQ(s, 200);
        ASSERT_EQ(body.at("reports").size(), 1u);
        EXPECT_EQ(body.at("reports")[0].at("name"), "summary.csv");
        EXPECT_EQ(body.at("reports")[0].at("content"), "policy,condition\n");
        auto [_, ep] = svc.post("/episodes", scenario42());
        svc.post("/episodes/" + ep.at("id").get<std::string>() + "/autostep", {{"steps", 3}});
    }
    std::ifstream in(dir / "events.jsonl");
    std::string line;
    std::vector<json> events;
    while (std::getline(in, line)) events.push_back(json::parse(line));
    ASSERT_EQ(events.size(), 2u);
    EXPECT_EQ(events[0].at("event"), "episode_created");
    EXPECT_EQ(events[1].at("event"), "autostep");
    EXPECT_EQ(events[1].at("seq"), 2);
    fs::remove_all(dir);
}
