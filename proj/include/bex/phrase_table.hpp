#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "bex/features.hpp"

namespace bex {

// Wording for one feature. Which fields matter depends on the feature kind:
// binary features use true/false phrases, categorical features one phrase per
// value, counts a "{range}" template plus optional per-value overrides.
struct FeaturePhrases {
    std::string true_phrase;
    std::string false_phrase;
    std::map<double, std::string> values;
    std::string range_template;
    std::string unit;
    std::string units;
    std::string sentinel_phrase;
};

// Per-feature phrase table used by the template renderer, the prompt builder
// and the mention lexicon. Tables may be partial; rendering a feature with no
// entry throws ConfigError naming it.
class PhraseTable {
public:
    static PhraseTable from_json(const nlohmann::json& j);
    static PhraseTable from_file(const std::string& path);
    static const PhraseTable& defaults();

    bool has(Feature f) const;
    const FeaturePhrases& phrases(Feature f) const;
    std::vector<Feature> missing_features() const;

    std::string_view action_phrase(Action a) const;

    // Clause for "feature takes one of `values`" where `values` are domain
    // values in ascending order.
    std::string describe_values(Feature f, const std::vector<double>& values) const;
    std::string describe_value(Feature f, double value) const { return describe_values(f, {value}); }

private:
    std::array<std::optional<FeaturePhrases>, kNumFeatures> features_;
    std::array<std::string, kNumActions> actions_;
};

}  // namespace bex
