#include "mdp/scenario_io.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "mdp/errors.hpp"

namespace mdp {

using nlohmann::json;

namespace {

json state_json(const AgentState& s) { return json::array({s.x, s.y, s.heading, s.speed}); }

json states_json(const std::vector<AgentState>& states) {
  json out = json::array();
  for (const auto& s : states) out.push_back(state_json(s));
  return out;
}

json polyline_json(const Polyline& line) {
  json out = json::array();
  for (const auto& p : line) out.push_back(json::array({p.x, p.y}));
  return out;
}

const json& numbers(const json& j, std::size_t n, const char* what) {
  if (!j.is_array() || j.size() != n) throw MalformedScenario(std::string("bad ") + what);
  for (const auto& v : j)
    if (!v.is_number()) throw MalformedScenario(std::string("non-numeric ") + what);
  return j;
}

AgentState state_from(const json& j) {
  numbers(j, 4, "agent state");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

std::vector<AgentState> states_from(const json& j) {
  if (!j.is_array()) throw MalformedScenario("expected an array of states");
  std::vector<AgentState> out;
  for (const auto& s : j) out.push_back(state_from(s));
  return out;
}

Polyline polyline_from(const json& j) {
  if (!j.is_array()) throw MalformedScenario("expected a polyline");
  Polyline out;
  for (const auto& p : j) {
    numbers(p, 2, "point");
    out.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  return out;
}

const std::set<std::string>& scenario_keys() {
  static const std::set<std::string> keys = {"id", "lanes", "route", "ego_history",
                                             "agents", "static_objects", "expert_future"};
  return keys;
}

}  // namespace

json scenario_to_json(const Scenario& s) {
  json j;
  j["id"] = s.id;
  j["lanes"] = json::array();
  for (const auto& lane : s.lanes) j["lanes"].push_back(polyline_json(lane));
  j["route"] = polyline_json(s.route);
  j["ego_history"] = states_json(s.ego_history);
  j["agents"] = json::array();
  for (const auto& a : s.agents) j["agents"].push_back(states_json(a.history));
  j["static_objects"] = json::array();
  for (const auto& b : s.static_objects)
    j["static_objects"].push_back(json::array({b.x, b.y, b.heading, b.length, b.width}));
  if (s.expert_future) {
    j["expert_future"] = json::array();
    for (const auto& track : *s.expert_future) j["expert_future"].push_back(states_json(track));
  } else {
    j["expert_future"] = nullptr;
  }
  return j;
}

Scenario scenario_from_json(const json& j) {
  if (!j.is_object()) throw MalformedScenario("scenario must be a JSON object");
  std::set<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.insert(k);
  if (keys != scenario_keys()) throw MalformedScenario("scenario keys do not match scenario-v1");
  Scenario s;
  if (!j["id"].is_string()) throw MalformedScenario("id must be a string");
  s.id = j["id"].get<std::string>();
  for (const auto& lane : j["lanes"]) s.lanes.push_back(polyline_from(lane));
  s.route = polyline_from(j["route"]);
  s.ego_history = states_from(j["ego_history"]);
  for (const auto& a : j["agents"]) s.agents.push_back({states_from(a)});
  for (const auto& b : j["static_objects"]) {
    numbers(b, 5, "static object");
    s.static_objects.push_back({b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                                b[3].get<double>(), b[4].get<double>()});
  }
  if (!j["expert_future"].is_null()) {
    FutureStates fut;
    for (const auto& track : j["expert_future"]) fut.push_back(states_from(track));
    s.expert_future = std::move(fut);
  }
  validate(s);
  return s;
}

void write_jsonl(std::ostream& os, const std::vector<Scenario>& corpus) {
  os << json{{"format", kScenarioFormat}}.dump() << '\n';
  for (const auto& s : corpus) os << scenario_to_json(s).dump() << '\n';
}

void save_jsonl(const std::filesystem::path& path, const std::vector<Scenario>& corpus) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  write_jsonl(os, corpus);
}

std::vector<Scenario> read_jsonl(std::istream& is) {
  std::vector<Scenario> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(lineno, e.what());
    }
    if (lineno == 1 && j.is_object() && j.contains("format")) {
      if (j["format"] != kScenarioFormat) throw ParseError(lineno, "unsupported format");
      continue;
    }
    try {
      out.push_back(scenario_from_json(j));
    } catch (const MalformedScenario& e) {
      throw ParseError(lineno, e.what());
    } catch (const json::exception& e) {
      throw ParseError(lineno, e.what());
    }
  }
  return out;
}

std::vector<Scenario> load_jsonl(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  return read_jsonl(is);
}

}  // namespace mdp
