#pragma once

#include <string_view>

namespace bex::defaults {

// Contents of the files under config/, embedded at build time so the tools
// run without a config directory. Each can be overridden by passing a file.
std::string_view phrase_table_json();
std::string_view prompts_json();
std::string_view lexicon_json();
std::string_view mock_script_json();

}  // namespace bex::defaults
