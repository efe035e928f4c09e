#pragma once

#include <string_view>

// Line prefixes of the query and follow-up messages. The mock model and the
// prompt audits key off these, so they are part of the prompt format.
namespace bex::markers {

inline constexpr std::string_view kAgent = "AGENT: ";
inline constexpr std::string_view kAction = "ACTION: ";
inline constexpr std::string_view kRule = "RULE: ";
inline constexpr std::string_view kNoRules = "NO RULES: ";
inline constexpr std::string_view kConfidence = "CONFIDENCE: ";
inline constexpr std::string_view kState = "STATE: ";
inline constexpr std::string_view kSample = "SAMPLE: ";
inline constexpr std::string_view kSampleArrow = " -> ";
inline constexpr std::string_view kClauseSeparator = "; ";

inline constexpr std::string_view kCounterfactual = "COUNTERFACTUAL RESULT";
inline constexpr std::string_view kChange = "CHANGE: ";
inline constexpr std::string_view kPredicted = "PREDICTED ACTION: ";
inline constexpr std::string_view kChanged = "ACTION CHANGED: ";
inline constexpr std::string_view kCounterfactualRule = "COUNTERFACTUAL RULE: ";

inline constexpr std::string_view kSectionA = "### ENVIRONMENT";
inline constexpr std::string_view kSectionB = "### EVIDENCE FORMAT";
inline constexpr std::string_view kSectionC = "### EXAMPLES";
inline constexpr std::string_view kSectionD = "### QUERY";

}  // namespace bex::markers
