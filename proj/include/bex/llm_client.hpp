#pragma once

#include <chrono>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace bex {

struct ChatMessage {
    std::string role;  // "system", "user" or "assistant"
    std::string content;

    friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

struct ModelConfig {
    std::string model = "gpt-4";
    double temperature = 0.0;
    int max_tokens = 512;
};

class LlmClient {
public:
    virtual ~LlmClient() = default;

    // Returns the assistant reply for the conversation so far. Throws
    // TransportError when no reply could be obtained.
    virtual std::string complete(const std::vector<ChatMessage>& messages, const ModelConfig& model) = 0;
    virtual std::string_view name() const = 0;
};

// Match rule for the scripted mock. All present conditions must hold.
struct MockRule {
    enum class Turn { Any, Initial, FollowUp };
    Turn turn = Turn::Any;
    std::string contains;  // case-insensitive substring of the latest user message
    std::string action;    // Action name on the query's ACTION line
    std::string reply;
};

struct MockScript {
    std::vector<MockRule> rules;
    bool echo_fallback = true;
    std::string fallback_reply = "No scripted reply matched.";

    static MockScript from_json(const nlohmann::json& j);
    static MockScript from_file(const std::string& path);
    static MockScript echo();  // no rules, echo fallback
};

// Deterministic, network-free stand-in for a chat model. Scripted rules are
// tried first; otherwise the echo behaviour restates only the evidence lines
// (RULE / SAMPLE / STATE / COUNTERFACTUAL) that the prompt supplied.
class MockLlmClient final : public LlmClient {
public:
    explicit MockLlmClient(MockScript script = MockScript::echo()) : script_(std::move(script)) {}

    std::string complete(const std::vector<ChatMessage>& messages, const ModelConfig& model) override;
    std::string_view name() const override { return "mock"; }

private:
    MockScript script_;
};

struct RemoteConfig {
    std::string base_url = "https://api.openai.com/v1";
    std::string api_key;
    std::chrono::seconds timeout{60};
    int max_retries = 2;
    std::chrono::milliseconds retry_backoff{500};

    // BEX_LLM_BASE_URL, OPENAI_API_KEY, BEX_LLM_TIMEOUT, BEX_LLM_RETRIES.
    static RemoteConfig from_env();
};

// OpenAI-compatible chat-completions client: POST {base_url}/chat/completions.
// Retries transport failures, 429 and 5xx up to max_retries times.
class RemoteLlmClient final : public LlmClient {
public:
    explicit RemoteLlmClient(RemoteConfig config);

    std::string complete(const std::vector<ChatMessage>& messages, const ModelConfig& model) override;
    std::string_view name() const override { return "remote"; }

    static nlohmann::json request_body(const std::vector<ChatMessage>& messages, const ModelConfig& model);
    // Extracts choices[0].message.content; throws TransportError otherwise.
    static std::string parse_reply(std::string_view body);

private:
    RemoteConfig config_;
    std::string origin_;  // scheme://host[:port]
    std::string path_;    // prefix + /chat/completions
};

struct LlmSettings {
    std::string mode = "mock";  // mock | remote
    std::string mock_script;    // path, or "echo" / "default" for the built-ins
    RemoteConfig remote{};
    ModelConfig model{};

    // BEX_LLM_MODE, BEX_LLM_MODEL, BEX_MOCK_SCRIPT plus RemoteConfig::from_env.
    static LlmSettings from_env();
};

std::unique_ptr<LlmClient> make_llm_client(const LlmSettings& settings);

}  // namespace bex
