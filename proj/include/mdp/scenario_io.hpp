#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "json.hpp"
#include "mdp/scene.hpp"

namespace mdp {

inline constexpr const char* kScenarioFormat = "scenario-v1";

nlohmann::json scenario_to_json(const Scenario& s);
/// Throws MalformedScenario on structurally invalid input.
Scenario scenario_from_json(const nlohmann::json& j);

/// Writes the `{"format":"scenario-v1"}` header line then one scenario per line.
void save_jsonl(const std::filesystem::path& path, const std::vector<Scenario>& corpus);
void write_jsonl(std::ostream& os, const std::vector<Scenario>& corpus);

/// Throws ParseError carrying the 1-based line number of the offending line.
std::vector<Scenario> load_jsonl(const std::filesystem::path& path);
std::vector<Scenario> read_jsonl(std::istream& is);

}  // namespace mdp
