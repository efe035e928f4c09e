#include "bex/grounding.hpp"

#include <algorithm>
#include <cctype>

#include <nlohmann/json.hpp>

#include "bex/defaults.hpp"
#include "bex/error.hpp"

namespace bex {

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

// The fixed part of a count template, e.g. "the north wall is" for
// "the north wall is {range} away".
std::string template_stem(const std::string& tpl) {
    std::string stem = tpl.substr(0, tpl.find("{range}"));
    while (!stem.empty() && stem.back() == ' ') stem.pop_back();
    return stem;
}

}  // namespace

void FeatureLexicon::add(std::string phrase, Feature f, std::optional<bool> polarity) {
    phrase = lower(phrase);
    if (phrase.empty()) return;
    for (const auto& e : entries_) {
        if (e.phrase != phrase) continue;
        if (e.feature != f || e.polarity != polarity)
            throw ConfigError("lexicon: phrase '" + phrase + "' is claimed by both '" +
                              std::string(to_string(e.feature)) + "' and '" + std::string(to_string(f)) + "'");
        return;
    }
    entries_.push_back({std::move(phrase), f, polarity});
}

FeatureLexicon::FeatureLexicon(const PhraseTable& phrases, const nlohmann::json& synonyms) {
    for (const auto& info : all_features()) {
        if (!phrases.has(info.id)) continue;
        const FeaturePhrases& p = phrases.phrases(info.id);
        switch (info.kind) {
            case FeatureKind::Binary:
                add(p.true_phrase, info.id, true);
                add(p.false_phrase, info.id, false);
                break;
            case FeatureKind::Categorical:
                for (const auto& [v, text] : p.values) add(text, info.id, std::nullopt);
                break;
            case FeatureKind::Count:
                add(template_stem(p.range_template), info.id, std::nullopt);
                for (const auto& [v, text] : p.values) add(text, info.id, std::nullopt);
                add(p.sentinel_phrase, info.id, std::nullopt);
                break;
        }
    }
    try {
        for (const auto& s : synonyms.value("synonyms", nlohmann::json::array())) {
            const Feature f = parse_feature(s.at("feature").get<std::string>());
            std::optional<bool> polarity;
            if (s.contains("polarity")) {
                if (feature_info(f).kind != FeatureKind::Binary)
                    throw ConfigError("lexicon: polarity given for non-binary feature '" + std::string(to_string(f)) +
                                      "'");
                polarity = s.at("polarity").get<bool>();
            }
            add(s.at("phrase").get<std::string>(), f, polarity);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("lexicon: ") + e.what());
    } catch (const SchemaError& e) {
        throw ConfigError(std::string("lexicon: ") + e.what());
    }
    // Longest first so the scan can stop at the first hit.
    std::stable_sort(entries_.begin(), entries_.end(),
                     [](const LexiconEntry& a, const LexiconEntry& b) { return a.phrase.size() > b.phrase.size(); });
}

const FeatureLexicon& FeatureLexicon::defaults() {
    static const FeatureLexicon lexicon(PhraseTable::defaults(), nlohmann::json::parse(defaults::lexicon_json()));
    return lexicon;
}

std::vector<std::string> FeatureLexicon::phrases_for(Feature f) const {
    std::vector<std::string> out;
    for (const auto& e : entries_)
        if (e.feature == f) out.push_back(e.phrase);
    return out;
}

std::vector<Mention> scan_mentions(std::string_view text, const FeatureLexicon& lexicon) {
    const std::string hay = lower(text);
    std::vector<Mention> out;
    std::size_t pos = 0;
    while (pos < hay.size()) {
        if (pos > 0 && is_word_char(hay[pos - 1])) {
            ++pos;
            continue;
        }
        const LexiconEntry* hit = nullptr;
        for (const auto& e : lexicon.entries()) {
            if (hay.compare(pos, e.phrase.size(), e.phrase) != 0) continue;
            const std::size_t end = pos + e.phrase.size();
            if (end < hay.size() && is_word_char(hay[end])) continue;
            hit = &e;
            break;
        }
        if (!hit) {
            ++pos;
            continue;
        }
        out.push_back({pos, hit->phrase.size(), hit->feature, hit->polarity});
        pos += hit->phrase.size();
    }
    return out;
}

std::set<Feature> extract_mentions(std::string_view text, const FeatureLexicon& lexicon) {
    std::set<Feature> out;
    for (const auto& m : scan_mentions(text, lexicon)) out.insert(m.feature);
    return out;
}

std::set<Feature> path_features(const DecisionPath& path) {
    std::set<Feature> out;
    for (const auto& p : path.predicates) out.insert(p.feature);
    return out;
}

GroundingRow grounding_score(std::string_view text, const DecisionPath& path, const FeatureVector& truth,
                             const FeatureLexicon& lexicon) {
    GroundingRow row;
    row.path_features = path_features(path);
    const auto mentions = scan_mentions(text, lexicon);
    for (const auto& m : mentions) row.mentioned.insert(m.feature);

    if (!row.mentioned.empty()) {
        const auto grounded = std::count_if(row.mentioned.begin(), row.mentioned.end(),
                                            [&](Feature f) { return row.path_features.contains(f); });
        row.precision = static_cast<double>(grounded) / static_cast<double>(row.mentioned.size());
    }

    // One flag per contradicted feature, however often it is repeated.
    std::set<Feature> flagged;
    for (const auto& m : mentions) {
        if (!m.polarity) continue;
        const bool actual = truth[m.feature] > 0.5;
        if (*m.polarity != actual && flagged.insert(m.feature).second)
            row.flags.push_back({m.feature, *m.polarity, actual});
    }
    return row;
}

GroundingRow grounding_score(std::string_view text, const DecisionPath& path, const WorldState& truth, Role agent,
                             const FeatureLexicon& lexicon) {
    return grounding_score(text, path, extract_features(truth, agent), lexicon);
}

void to_json(nlohmann::json& j, const GroundingRow& r) {
    auto names = [](const std::set<Feature>& s) {
        std::vector<std::string> out;
        for (Feature f : s) out.emplace_back(to_string(f));
        return out;
    };
    nlohmann::json flags = nlohmann::json::array();
    for (const auto& f : r.flags)
        flags.push_back({{"feature", to_string(f.feature)}, {"claimed", f.claimed}, {"actual", f.actual}});
    j = {{"mentioned", names(r.mentioned)},
         {"path_features", names(r.path_features)},
         {"precision", r.precision},
         {"flags", std::move(flags)}};
}

}  // namespace bex
