#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "bex/explainer.hpp"
#include "bex/grounding.hpp"
#include "bex/llm_client.hpp"
#include "bex/phrase_table.hpp"
#include "bex/tree.hpp"

namespace bex {

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;          // 0 picks a free port
    std::string static_dir;   // served at / when set
    std::string event_log;    // append-only JSON lines when set
    std::string study_dir;    // files listed by GET /study/reports
    bool reject_busy = false; // 409 instead of waiting on a busy episode or session
    int max_autostep = 20 * kNumRooms;

    // Lazily distilled trees, one per (policy, role).
    int tree_rollouts = 300;
    std::uint64_t tree_seed = 42;
    TreeParams tree{};

    void validate() const;
};

class Service {
public:
    Service(ServiceConfig config, std::unique_ptr<LlmClient> client, PromptConfig prompts = PromptConfig::defaults(),
            PhraseTable phrases = PhraseTable::defaults(), FeatureLexicon lexicon = FeatureLexicon::defaults());
    ~Service();

    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    // Binds the listening socket and returns the port. Throws Error on failure.
    int bind();
    // Serves until stop(); call bind() first.
    void run();
    void stop();

    // The tree for (policy, role), distilling it on first use.
    std::shared_ptr<const DecisionTree> tree(PolicyKind policy, Role role);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace bex
