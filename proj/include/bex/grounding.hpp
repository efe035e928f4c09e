#pragma once

#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "bex/behavior.hpp"
#include "bex/features.hpp"
#include "bex/phrase_table.hpp"

namespace bex {

struct LexiconEntry {
    std::string phrase;  // lower case
    Feature feature = Feature::VictimInRoom;
    std::optional<bool> polarity;  // claimed value, binary features only
};

// Surface phrases per feature: the phrase-table wording plus configured
// synonyms. A phrase maps to exactly one feature.
class FeatureLexicon {
public:
    // Throws ConfigError when one phrase would name two features.
    FeatureLexicon(const PhraseTable& phrases, const nlohmann::json& synonyms);
    static const FeatureLexicon& defaults();

    const std::vector<LexiconEntry>& entries() const { return entries_; }
    std::vector<std::string> phrases_for(Feature f) const;

private:
    void add(std::string phrase, Feature f, std::optional<bool> polarity);

    std::vector<LexiconEntry> entries_;
};

struct Mention {
    std::size_t offset = 0;
    std::size_t length = 0;
    Feature feature = Feature::VictimInRoom;
    std::optional<bool> polarity;
};

// Case-insensitive, longest match first, phrases must sit on word boundaries.
std::vector<Mention> scan_mentions(std::string_view text, const FeatureLexicon& lexicon);
std::set<Feature> extract_mentions(std::string_view text, const FeatureLexicon& lexicon);

struct FactualFlag {
    Feature feature = Feature::VictimInRoom;
    bool claimed = false;
    bool actual = false;

    friend bool operator==(const FactualFlag&, const FactualFlag&) = default;
};

struct GroundingRow {
    std::set<Feature> mentioned;
    std::set<Feature> path_features;
    double precision = 1.0;  // |mentioned & path| / |mentioned|, 1 when nothing is mentioned
    std::vector<FactualFlag> flags;
};

std::set<Feature> path_features(const DecisionPath& path);

GroundingRow grounding_score(std::string_view text, const DecisionPath& path, const FeatureVector& truth,
                             const FeatureLexicon& lexicon);
GroundingRow grounding_score(std::string_view text, const DecisionPath& path, const WorldState& truth, Role agent,
                             const FeatureLexicon& lexicon);

void to_json(nlohmann::json& j, const GroundingRow& r);

}  // namespace bex
