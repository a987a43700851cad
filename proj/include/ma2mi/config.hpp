#pragma once

#include <json.hpp>

#include <string>
#include <vector>

namespace ma2mi::cfg {

using json = nlohmann::json;

// Default config tree per CLI command; doubles as the schema: overrides and
// user config files may only touch keys that exist here.
json default_config(const std::string& command);

json load_json_file(const std::string& path);
void write_json_file(const std::string& path, const json& j, int indent = 2);

// Deep-merges `user` into `base`; unknown keys raise with the valid-key list.
void merge_config(json& base, const json& user, const std::string& prefix = "");

// "a.b.c=value"; value parsed to match the schema type at that key
void apply_override(json& config, const std::string& dotted_assignment);

// dotted key -> (type, default) lines for --help
std::vector<std::string> describe_keys(const json& config, const std::string& prefix = "");

// resolve: defaults <- config file (optional) <- --set overrides <- seed/out
json resolve_config(const std::string& command, const std::string& config_path,
                    const std::vector<std::string>& overrides);

// content hash of the canonical serialization (hex string)
std::string config_hash(const json& config);

}  // namespace ma2mi::cfg
