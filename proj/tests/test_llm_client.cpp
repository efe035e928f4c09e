#include <gtest/gtest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "bex/error.hpp"
#include "bex/llm_client.hpp"

using namespace bex;

namespace {

const char* kQuery =
    "### QUERY\n"
    "AGENT: medic\n"
    "RULE: a victim is in the current room\n"
    "RULE: rubble is not in the current room\n"
    "CONFIDENCE: the tree predicts this action for 100% of the training situations that follow these rules.\n"
    "ACTION: triaged the victim (TriageVictim)\n"
    "Explain why the medic triaged the victim.";

std::vector<ChatMessage> initial(std::string user = kQuery) { return {{"system", "context"}, {"user", std::move(user)}}; }

// Minimal OpenAI-style server whose responses are chosen per request.
class FakeServer {
public:
    using Handler = std::function<void(int call, const httplib::Request&, httplib::Response&)>;

    explicit FakeServer(Handler h) : handler_(std::move(h)) {
        server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            last_body = req.body;
            last_auth = req.get_header_value("Authorization");
            handler_(calls++, req, res);
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~FakeServer() {
        server_.stop();
        thread_.join();
    }

    RemoteConfig config(int retries = 2) const {
        RemoteConfig c;
        c.base_url = "http://127.0.0.1:" + std::to_string(port_) + "/v1";
        c.api_key = "test-key";
        c.timeout = std::chrono::seconds(5);
        c.max_retries = retries;
        c.retry_backoff = std::chrono::milliseconds(1);
        return c;
    }

    std::atomic<int> calls{0};
    std::string last_body;
    std::string last_auth;

private:
    Handler handler_;
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
};

void reply(httplib::Response& res, const std::string& text) {
    const nlohmann::json body = {{"choices", {{{"message", {{"role", "assistant"}, {"content", text}}}}}}};
    res.set_content(body.dump(), "application/json");
}

}  // namespace

TEST(MockEcho, RestatesRulesOnly) {
    MockLlmClient client;
    EXPECT_EQ(client.complete(initial(), {}),
              "The medic triaged the victim because a victim is in the current room and rubble is not in the "
              "current room.");
}

TEST(MockEcho, SamplesAndStatesAreSplitIntoClauses) {
    MockLlmClient client;
    const std::string samples =
        "AGENT: engineer\n"
        "SAMPLE: a; b -> moved north\n"
        "SAMPLE: b; c -> waited\n"
        "ACTION: moved north (MoveNorth)\n";
    EXPECT_EQ(client.complete(initial(samples), {}), "The engineer moved north because a and b and c.");
    const std::string state = "AGENT: engineer\nSTATE: x; y\nACTION: waited (Wait)\n";
    EXPECT_EQ(client.complete(initial(state), {}), "The engineer waited because x and y.");
}

TEST(MockEcho, NoEvidence) {
    MockLlmClient client;
    const std::string q = "AGENT: medic\nNO RULES: none\nACTION: waited (Wait)\n";
    EXPECT_EQ(client.complete(initial(q), {}),
              "The medic waited. The evidence provided does not single out any feature.");
}

TEST(MockEcho, FollowUpAndCounterfactual) {
    MockLlmClient client;
    auto msgs = initial();
    msgs.push_back({"assistant", "first"});
    msgs.push_back({"user", "Tell me more."});
    EXPECT_EQ(client.complete(msgs, {}),
              "Going only by the evidence I was given: a victim is in the current room and rubble is not in the "
              "current room.");
    msgs.push_back({"assistant", "second"});
    msgs.push_back({"user",
                    "What if?\nCOUNTERFACTUAL RESULT\nCHANGE: a victim is not in the current room\n"
                    "PREDICTED ACTION: moved north (MoveNorth)\nACTION CHANGED: yes\n"
                    "COUNTERFACTUAL RULE: a victim is not in the current room\n"});
    EXPECT_EQ(client.complete(msgs, {}),
              "If a victim is not in the current room, the surrogate tree predicts that the medic would have moved "
              "north, which differs from the observed action. Its decision would rest on: a victim is not in the "
              "current room.");
}

TEST(MockEcho, RequiresUserMessage) {
    MockLlmClient client;
    EXPECT_THROW(client.complete({{"system", "x"}}, {}), TransportError);
}

TEST(MockScript, RulesMatchTurnTextAndAction) {
    const auto script = MockScript::from_json(nlohmann::json::parse(R"({
        "fallback": "nothing matched",
        "rules": [
          {"turn": "initial", "action": "Wait", "reply": "waiting reply"},
          {"turn": "initial", "action": "TriageVictim", "reply": "triage reply"},
          {"turn": "follow_up", "contains": "WHY NOT", "reply": "why-not reply"}
        ]})"));
    MockLlmClient client(script);
    EXPECT_EQ(client.complete(initial(), {}), "triage reply");
    auto msgs = initial();
    msgs.push_back({"assistant", "x"});
    msgs.push_back({"user", "Why not wait?"});
    EXPECT_EQ(client.complete(msgs, {}), "why-not reply");
    msgs.back().content = "Something else";
    EXPECT_EQ(client.complete(msgs, {}), "nothing matched");
}

TEST(MockScript, DefaultScriptLoadsAndFallsBackToEcho) {
    MockLlmClient client(MockScript::from_file("default"));
    auto msgs = initial();
    EXPECT_EQ(client.complete(msgs, {}).rfind("The medic triaged the victim because", 0), 0u);
    msgs.push_back({"assistant", "x"});
    msgs.push_back({"user", "Why did it do that?"});
    EXPECT_NE(client.complete(msgs, {}).find("surrogate tree"), std::string::npos);
}

TEST(MockScript, Errors) {
    EXPECT_THROW(MockScript::from_json(nlohmann::json::parse(R"({"rules":[{"turn":"later","reply":"x"}]})")),
                 ConfigError);
    EXPECT_THROW(MockScript::from_json(nlohmann::json::parse(R"({"rules":[{"turn":"any"}]})")), ConfigError);
    EXPECT_THROW(MockScript::from_file("/nonexistent/script.json"), ConfigError);
}

TEST(Remote, RequestBodyShape) {
    ModelConfig m;
    m.model = "test-model";
    m.max_tokens = 64;
    const auto j = RemoteLlmClient::request_body(initial(), m);
    EXPECT_EQ(j.at("model"), "test-model");
    EXPECT_EQ(j.at("max_tokens"), 64);
    EXPECT_EQ(j.at("temperature"), 0.0);
    ASSERT_EQ(j.at("messages").size(), 2u);
    EXPECT_EQ(j.at("messages")[1].at("role"), "user");
}

TEST(Remote, ParseReply) {
    EXPECT_EQ(RemoteLlmClient::parse_reply(R"({"choices":[{"message":{"content":"hi"}}]})"), "hi");
    EXPECT_THROW(RemoteLlmClient::parse_reply("{}"), TransportError);
    EXPECT_THROW(RemoteLlmClient::parse_reply("not json"), TransportError);
    EXPECT_THROW(RemoteLlmClient::parse_reply(R"({"choices":[{"message":{"content":null}}]})"), TransportError);
}

TEST(Remote, RejectsBadUrl) {
    RemoteConfig c;
    c.base_url = "ftp://example";
    EXPECT_THROW(RemoteLlmClient{c}, ConfigError);
}

TEST(Remote, SuccessSendsBodyAndKey) {
    FakeServer server([](int, const httplib::Request&, httplib::Response& res) { reply(res, "an answer"); });
    RemoteLlmClient client(server.config());
    EXPECT_EQ(client.complete(initial(), {}), "an answer");
    EXPECT_EQ(server.calls, 1);
    EXPECT_EQ(server.last_auth, "Bearer test-key");
    EXPECT_EQ(nlohmann::json::parse(server.last_body).at("messages").size(), 2u);
}

TEST(Remote, RetriesServerErrorsAndRateLimits) {
    FakeServer server([](int call, const httplib::Request&, httplib::Response& res) {
        if (call == 0) res.status = 500;
        else if (call == 1) res.status = 429;
        else reply(res, "third time lucky");
    });
    RemoteLlmClient client(server.config(2));
    EXPECT_EQ(client.complete(initial(), {}), "third time lucky");
    EXPECT_EQ(server.calls, 3);
}

TEST(Remote, GivesUpAfterRetries) {
    FakeServer server([](int, const httplib::Request&, httplib::Response& res) { res.status = 503; });
    RemoteLlmClient client(server.config(1));
    try {
        client.complete(initial(), {});
        FAIL();
    } catch (const TransportError& e) {
        EXPECT_NE(std::string(e.what()).find("503"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("2 attempt"), std::string::npos);
    }
    EXPECT_EQ(server.calls, 2);
}

TEST(Remote, DoesNotRetryClientErrors) {
    FakeServer server([](int, const httplib::Request&, httplib::Response& res) {
        res.status = 400;
        res.set_content("bad request", "text/plain");
    });
    RemoteLlmClient client(server.config(3));
    EXPECT_THROW(client.complete(initial(), {}), TransportError);
    EXPECT_EQ(server.calls, 1);
}

TEST(Remote, MalformedReplyIsTransportError) {
    FakeServer server([](int, const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"choices":[]})", "application/json");
    });
    RemoteLlmClient client(server.config(0));
    EXPECT_THROW(client.complete(initial(), {}), TransportError);
}

TEST(Remote, UnreachableHost) {
    // Reserve a free port with a plain socket and close it, so connecting is refused.
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    ASSERT_GE(fd, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    ASSERT_EQ(::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr), 0);
    socklen_t len = sizeof addr;
    ASSERT_EQ(::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len), 0);
    ::close(fd);

    RemoteConfig c;
    c.base_url = "http://127.0.0.1:" + std::to_string(ntohs(addr.sin_port));
    c.timeout = std::chrono::seconds(2);
    c.max_retries = 1;
    c.retry_backoff = std::chrono::milliseconds(1);
    RemoteLlmClient client(c);
    try {
        client.complete(initial(), {});
        FAIL();
    } catch (const TransportError& e) {
        EXPECT_NE(std::string(e.what()).find("2 attempt"), std::string::npos) << e.what();
    }
}

TEST(Remote, SilentServerTimesOut) {
    // Bound and listening, but nobody ever accepts.
    httplib::Server s;
    const int port = s.bind_to_any_port("127.0.0.1");
    RemoteConfig c;
    c.base_url = "http://127.0.0.1:" + std::to_string(port);
    c.timeout = std::chrono::seconds(1);
    c.max_retries = 0;
    RemoteLlmClient client(c);
    EXPECT_THROW(client.complete(initial(), {}), TransportError);
}

TEST(Settings, FactoryHonoursMode) {
    LlmSettings s;
    EXPECT_EQ(make_llm_client(s)->name(), "mock");
    s.mode = "remote";
    s.remote.base_url = "http://127.0.0.1:1";
    EXPECT_EQ(make_llm_client(s)->name(), "remote");
    s.mode = "carrier-pigeon";
    EXPECT_THROW(make_llm_client(s), ConfigError);
}
