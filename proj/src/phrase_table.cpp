#include "bex/phrase_table.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "bex/defaults.hpp"
#include "bex/error.hpp"

namespace bex {

namespace {

std::string integer_text(double v) { return std::to_string(std::lround(v)); }

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

std::string required_string(const nlohmann::json& j, const char* key, std::string_view feature) {
    if (!j.contains(key) || !j.at(key).is_string())
        throw ConfigError("phrase table: feature '" + std::string(feature) + "' needs a '" + key + "' string");
    return j.at(key).get<std::string>();
}

}  // namespace

PhraseTable PhraseTable::from_json(const nlohmann::json& j) {
    PhraseTable t;
    try {
        const auto& actions = j.at("actions");
        for (Action a : kAllActions) {
            const std::string name(to_string(a));
            if (!actions.contains(name)) throw ConfigError("phrase table: no phrase for action '" + name + "'");
            t.actions_[static_cast<int>(a)] = actions.at(name).get<std::string>();
        }

        for (const auto& [name, spec] : j.at("features").items()) {
            const auto f = find_feature(name);
            if (!f) throw ConfigError("phrase table: unknown feature '" + name + "'");
            const FeatureInfo& info = feature_info(*f);
            FeaturePhrases p;
            if (spec.contains("values")) {
                for (const auto& [key, phrase] : spec.at("values").items()) {
                    const double v = std::stod(key);
                    if (!in_domain(*f, v))
                        throw ConfigError("phrase table: value " + key + " outside the domain of '" + name + "'");
                    p.values[v] = phrase.get<std::string>();
                }
            }
            switch (info.kind) {
                case FeatureKind::Binary:
                    p.true_phrase = required_string(spec, "true", name);
                    p.false_phrase = required_string(spec, "false", name);
                    break;
                case FeatureKind::Categorical:
                    for (double v : info.domain)
                        if (!p.values.contains(v))
                            throw ConfigError("phrase table: feature '" + name + "' has no phrase for value " +
                                              integer_text(v));
                    break;
                case FeatureKind::Count:
                    p.range_template = required_string(spec, "template", name);
                    if (p.range_template.find("{range}") == std::string::npos)
                        throw ConfigError("phrase table: template for '" + name + "' lacks {range}");
                    p.unit = required_string(spec, "unit", name);
                    p.units = required_string(spec, "units", name);
                    if (info.sentinel) p.sentinel_phrase = required_string(spec, "sentinel", name);
                    break;
            }
            t.features_[static_cast<int>(*f)] = std::move(p);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("phrase table: ") + e.what());
    }
    return t;
}

PhraseTable PhraseTable::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open phrase table '" + path + "'");
    try {
        return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("phrase table '" + path + "': " + e.what());
    }
}

const PhraseTable& PhraseTable::defaults() {
    static const PhraseTable table = from_json(nlohmann::json::parse(defaults::phrase_table_json()));
    return table;
}

bool PhraseTable::has(Feature f) const { return features_[static_cast<int>(f)].has_value(); }

const FeaturePhrases& PhraseTable::phrases(Feature f) const {
    const auto& p = features_[static_cast<int>(f)];
    if (!p) throw ConfigError("phrase table has no entry for feature '" + std::string(to_string(f)) + "'");
    return *p;
}

std::vector<Feature> PhraseTable::missing_features() const {
    std::vector<Feature> out;
    for (const auto& info : all_features())
        if (!has(info.id)) out.push_back(info.id);
    return out;
}

std::string_view PhraseTable::action_phrase(Action a) const { return actions_[static_cast<int>(a)]; }

std::string PhraseTable::describe_values(Feature f, const std::vector<double>& values) const {
    const FeaturePhrases& p = phrases(f);
    const FeatureInfo& info = feature_info(f);
    if (values.empty())
        throw ConsistencyError("no value of '" + std::string(info.name) + "' satisfies the constraint");

    std::vector<std::string> parts;
    switch (info.kind) {
        case FeatureKind::Binary:
            for (double v : values) parts.push_back(v > 0.5 ? p.true_phrase : p.false_phrase);
            break;
        case FeatureKind::Categorical:
            for (double v : values) {
                auto it = p.values.find(v);
                if (it == p.values.end())
                    throw ConfigError("phrase table: feature '" + std::string(info.name) + "' has no phrase for value " +
                                      integer_text(v));
                parts.push_back(it->second);
            }
            break;
        case FeatureKind::Count: {
            std::vector<double> finite;
            bool sentinel = false;
            for (double v : values) {
                if (info.sentinel && v == *info.sentinel) sentinel = true;
                else finite.push_back(v);
            }
            std::vector<double> domain;
            for (double v : info.domain)
                if (!(info.sentinel && v == *info.sentinel)) domain.push_back(v);

            if (!finite.empty()) {
                const double lo = finite.front();
                const double hi = finite.back();
                const auto amount = [&](double v) { return integer_text(v) + " " + (std::lround(v) == 1 ? p.unit : p.units); };
                std::string clause;
                if (finite.size() == 1 && p.values.contains(lo)) {
                    clause = p.values.at(lo);
                } else {
                    std::string range;
                    if (finite.size() == 1) range = "exactly " + amount(lo);
                    else if (lo == domain.front()) range = "at most " + amount(hi);
                    else if (hi == domain.back()) range = "at least " + amount(lo);
                    else range = "between " + integer_text(lo) + " and " + amount(hi);
                    clause = p.range_template;
                    clause.replace(clause.find("{range}"), 7, range);
                }
                parts.push_back(std::move(clause));
            }
            if (sentinel) parts.push_back(p.sentinel_phrase);
            break;
        }
    }
    return join(parts, " or ");
}

}  // namespace bex
