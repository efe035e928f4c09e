#include "bex/llm_client.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "bex/defaults.hpp"
#include "bex/error.hpp"
#include "bex/markers.hpp"

namespace bex {

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

bool starts_with(std::string_view s, std::string_view prefix) { return s.substr(0, prefix.size()) == prefix; }

std::vector<std::string> lines_of(std::string_view text) {
    std::vector<std::string> out;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        out.push_back(line);
    }
    return out;
}

std::vector<std::string> split(std::string_view s, std::string_view sep) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    for (;;) {
        const auto next = s.find(sep, pos);
        out.emplace_back(s.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
        if (next == std::string_view::npos) break;
        pos = next + sep.size();
    }
    return out;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

void add_unique(std::vector<std::string>& v, std::string s) {
    if (!s.empty() && std::find(v.begin(), v.end(), s) == v.end()) v.push_back(std::move(s));
}

// Evidence found in the query message.
struct Query {
    std::string agent = "agent";
    std::string action_phrase = "acted";
    std::string action_name;
    std::vector<std::string> clauses;
};

Query parse_query(std::string_view text) {
    using namespace markers;
    Query q;
    for (const auto& line : lines_of(text)) {
        if (starts_with(line, kAgent)) {
            q.agent = line.substr(kAgent.size());
        } else if (starts_with(line, kAction)) {
            std::string rest = line.substr(kAction.size());
            const auto open = rest.rfind(" (");
            if (open != std::string::npos && rest.back() == ')') {
                q.action_name = rest.substr(open + 2, rest.size() - open - 3);
                rest.resize(open);
            }
            q.action_phrase = rest;
        } else if (starts_with(line, kRule)) {
            add_unique(q.clauses, line.substr(kRule.size()));
        } else if (starts_with(line, kState)) {
            for (auto& c : split(std::string_view(line).substr(kState.size()), kClauseSeparator))
                add_unique(q.clauses, std::move(c));
        } else if (starts_with(line, kSample)) {
            std::string_view body = std::string_view(line).substr(kSample.size());
            body = body.substr(0, body.rfind(kSampleArrow));
            for (auto& c : split(body, kClauseSeparator)) add_unique(q.clauses, std::move(c));
        }
    }
    return q;
}

std::string echo_initial(const Query& q) {
    std::string out = "The " + q.agent + " " + q.action_phrase;
    if (q.clauses.empty()) return out + ". The evidence provided does not single out any feature.";
    return out + " because " + join(q.clauses, " and ") + ".";
}

std::string echo_follow_up(const Query& q, std::string_view latest) {
    using namespace markers;
    if (latest.find(kCounterfactual) != std::string_view::npos) {
        std::vector<std::string> changes;
        std::vector<std::string> rules;
        std::string predicted = "acted";
        bool changed = false;
        for (const auto& line : lines_of(latest)) {
            if (starts_with(line, kChange)) changes.push_back(line.substr(kChange.size()));
            else if (starts_with(line, kPredicted)) {
                predicted = line.substr(kPredicted.size());
                if (const auto open = predicted.rfind(" ("); open != std::string::npos) predicted.resize(open);
            } else if (starts_with(line, kChanged)) changed = line.substr(kChanged.size()) == "yes";
            else if (starts_with(line, kCounterfactualRule)) rules.push_back(line.substr(kCounterfactualRule.size()));
        }
        std::string out = "If " + (changes.empty() ? std::string("nothing changed") : join(changes, " and ")) +
                          ", the surrogate tree predicts that the " + q.agent + " would have " + predicted + ", which " +
                          (changed ? "differs from" : "matches") + " the observed action.";
        if (!rules.empty()) out += " Its decision would rest on: " + join(rules, " and ") + ".";
        return out;
    }
    if (q.clauses.empty()) return "I was given no evidence beyond the action itself.";
    return "Going only by the evidence I was given: " + join(q.clauses, " and ") + ".";
}

MockRule::Turn parse_turn(const std::string& s) {
    if (s == "any") return MockRule::Turn::Any;
    if (s == "initial") return MockRule::Turn::Initial;
    if (s == "follow_up") return MockRule::Turn::FollowUp;
    throw ConfigError("mock script: unknown turn '" + s + "'");
}

}  // namespace

MockScript MockScript::from_json(const nlohmann::json& j) {
    MockScript s;
    try {
        const std::string fallback = j.value("fallback", std::string("echo"));
        s.echo_fallback = fallback == "echo";
        if (!s.echo_fallback) s.fallback_reply = fallback;
        for (const auto& r : j.value("rules", nlohmann::json::array())) {
            MockRule rule;
            rule.turn = parse_turn(r.value("turn", std::string("any")));
            rule.contains = lower(r.value("contains", std::string()));
            rule.action = r.value("action", std::string());
            rule.reply = r.at("reply").get<std::string>();
            s.rules.push_back(std::move(rule));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("mock script: ") + e.what());
    }
    return s;
}

MockScript MockScript::from_file(const std::string& path) {
    if (path == "echo") return echo();
    if (path == "default") return from_json(nlohmann::json::parse(defaults::mock_script_json()));
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open mock script '" + path + "'");
    try {
        return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("mock script '" + path + "': " + e.what());
    }
}

MockScript MockScript::echo() { return MockScript{}; }

std::string MockLlmClient::complete(const std::vector<ChatMessage>& messages, const ModelConfig&) {
    const ChatMessage* first_user = nullptr;
    const ChatMessage* last_user = nullptr;
    int user_turns = 0;
    for (const auto& m : messages) {
        if (m.role != "user") continue;
        if (!first_user) first_user = &m;
        last_user = &m;
        ++user_turns;
    }
    if (!last_user) throw TransportError("mock model: no user message");

    const Query q = parse_query(first_user->content);
    const std::string latest = lower(last_user->content);
    const bool initial = user_turns == 1;
    for (const auto& rule : script_.rules) {
        if (rule.turn == MockRule::Turn::Initial && !initial) continue;
        if (rule.turn == MockRule::Turn::FollowUp && initial) continue;
        if (!rule.contains.empty() && latest.find(rule.contains) == std::string::npos) continue;
        if (!rule.action.empty() && rule.action != q.action_name) continue;
        return rule.reply;
    }
    if (!script_.echo_fallback) return script_.fallback_reply;
    return initial ? echo_initial(q) : echo_follow_up(q, last_user->content);
}

RemoteConfig RemoteConfig::from_env() {
    RemoteConfig c;
    if (const char* v = std::getenv("BEX_LLM_BASE_URL")) c.base_url = v;
    if (const char* v = std::getenv("OPENAI_API_KEY")) c.api_key = v;
    if (const char* v = std::getenv("BEX_LLM_TIMEOUT")) c.timeout = std::chrono::seconds(std::stoi(v));
    if (const char* v = std::getenv("BEX_LLM_RETRIES")) c.max_retries = std::stoi(v);
    return c;
}

RemoteLlmClient::RemoteLlmClient(RemoteConfig config) : config_(std::move(config)) {
    static const std::regex url(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(config_.base_url, m, url))
        throw ConfigError("base_url: expected http(s)://host[:port][/prefix], got '" + config_.base_url + "'");
    if (config_.max_retries < 0) throw ConfigError("max_retries: must be >= 0");
    origin_ = m[1].str();
    std::string prefix = m[2].str();
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    path_ = prefix + "/chat/completions";
}

nlohmann::json RemoteLlmClient::request_body(const std::vector<ChatMessage>& messages, const ModelConfig& model) {
    nlohmann::json msgs = nlohmann::json::array();
    for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
    return {{"model", model.model},
            {"messages", std::move(msgs)},
            {"temperature", model.temperature},
            {"max_tokens", model.max_tokens}};
}

std::string RemoteLlmClient::parse_reply(std::string_view body) {
    try {
        const auto j = nlohmann::json::parse(body);
        const auto& content = j.at("choices").at(0).at("message").at("content");
        if (!content.is_string()) throw TransportError("chat completion has no text content");
        return content.get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw TransportError(std::string("malformed chat completion: ") + e.what());
    }
}

std::string RemoteLlmClient::complete(const std::vector<ChatMessage>& messages, const ModelConfig& model) {
    httplib::Client cli(origin_);
    if (!cli.is_valid()) throw TransportError("cannot create a client for '" + origin_ + "' (https needs OpenSSL)");
    cli.set_connection_timeout(config_.timeout);
    cli.set_read_timeout(config_.timeout);
    cli.set_write_timeout(config_.timeout);

    httplib::Headers headers;
    if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);
    const std::string body = request_body(messages, model).dump();

    std::string last_error;
    int attempts = 0;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
        ++attempts;
        if (attempt > 0) std::this_thread::sleep_for(config_.retry_backoff * attempt);
        auto res = cli.Post(path_, headers, body, "application/json");
        if (!res) {
            last_error = "request failed: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status >= 200 && res->status < 300) return parse_reply(res->body);
        last_error = "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200);
        if (res->status != 429 && res->status < 500) break;
    }
    throw TransportError("chat completion failed after " + std::to_string(attempts) +
                         " attempt(s): " + last_error);
}

LlmSettings LlmSettings::from_env() {
    LlmSettings s;
    if (const char* v = std::getenv("BEX_LLM_MODE")) s.mode = v;
    if (const char* v = std::getenv("BEX_LLM_MODEL")) s.model.model = v;
    if (const char* v = std::getenv("BEX_MOCK_SCRIPT")) s.mock_script = v;
    s.remote = RemoteConfig::from_env();
    return s;
}

std::unique_ptr<LlmClient> make_llm_client(const LlmSettings& settings) {
    if (settings.mode == "mock")
        return std::make_unique<MockLlmClient>(
            settings.mock_script.empty() ? MockScript::echo() : MockScript::from_file(settings.mock_script));
    if (settings.mode == "remote") return std::make_unique<RemoteLlmClient>(settings.remote);
    throw ConfigError("llm mode: expected 'mock' or 'remote', got '" + settings.mode + "'");
}

}  // namespace bex
