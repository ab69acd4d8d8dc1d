#include "mdp/intent.hpp"

#include <array>
#include <cctype>
#include <cstdlib>
#include <regex>
#include <sstream>
#include <string_view>
#include <vector>

#include "httplib.h"
#include "mdp/errors.hpp"
#include "mdp/strategy.hpp"

namespace mdp {

namespace {

struct KeywordRow {
  Strategy strategy;
  std::vector<std::string_view> keywords;
};

// Order matters: the first row with a hit wins.
const std::array<KeywordRow, 4> kTable{{
    {Strategy::aggressive, {"hurry", "fast", "quick", "overtake", "speed up", "rush"}},
    {Strategy::conservative, {"careful", "cautious", "safe", "slow"}},
    {Strategy::comfortable, {"smooth", "comfort", "gentle"}},
    {Strategy::base, {"normal", "default"}},
}};

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

bool matches(const std::vector<std::string>& tokens, std::string_view keyword) {
  const auto space = keyword.find(' ');
  if (space == std::string_view::npos) {
    for (const auto& t : tokens)
      if (t.starts_with(keyword)) return true;
    return false;
  }
  const std::string_view first = keyword.substr(0, space), second = keyword.substr(space + 1);
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i)
    if (tokens[i] == first && tokens[i + 1].starts_with(second)) return true;
  return false;
}

IntentResult with_note(IntentResult r, const std::string& note) {
  r.rationale = note + "; " + r.rationale;
  return r;
}

}  // namespace

std::string to_string(IntentSource s) {
  switch (s) {
    case IntentSource::keyword: return "keyword";
    case IntentSource::llm: return "llm";
    case IntentSource::fallback_keep_current: return "fallback_keep_current";
  }
  return "unknown";
}

nlohmann::json IntentResult::to_json() const {
  return {{"strategy", strategy_name(strategy)},
          {"confidence", confidence},
          {"source", to_string(source)},
          {"rationale", rationale}};
}

IntentResult route_keyword(const std::string& text, int current) {
  check_strategy(current);
  const auto tokens = tokenize(text);
  for (const auto& row : kTable)
    for (auto kw : row.keywords)
      if (matches(tokens, kw))
        return {static_cast<int>(row.strategy), 0.8, IntentSource::keyword, "matched '" + std::string(kw) + "'"};
  return {current, 0.0, IntentSource::fallback_keep_current, "no keyword matched; keeping current strategy"};
}

std::optional<LlmConfig> LlmConfig::from_env() {
  const char* endpoint = std::getenv("LLM_ENDPOINT");
  if (!endpoint || !*endpoint) return std::nullopt;
  LlmConfig c;
  c.endpoint = endpoint;
  if (const char* key = std::getenv("LLM_API_KEY")) c.api_key = key;
  if (const char* model = std::getenv("LLM_MODEL"); model && *model) c.model = model;
  return c;
}

std::string llm_system_prompt() {
  std::ostringstream os;
  os << "You select a driving strategy for an autonomous vehicle from a passenger's request. "
        "Allowed strategies:";
  for (int s = 0; s < kNumStrategies; ++s) os << (s ? ", " : " ") << strategy_name(s);
  os << ". Reply with a JSON object {\"strategy\": <one allowed name>, \"confidence\": <number in [0,1]>, "
        "\"rationale\": <short string>} and nothing else.";
  return os.str();
}

IntentResult route_llm(const std::string& text, int current, const LlmConfig& cfg) {
  static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(cfg.endpoint, m, url_re))
    return with_note(route_keyword(text, current), "invalid LLM endpoint");
  const std::string base = m[1].str();
  const std::string path = m[2].matched ? m[2].str() : "/v1/chat/completions";

  const nlohmann::json request{
      {"model", cfg.model},
      {"messages",
       nlohmann::json::array({{{"role", "system"}, {"content", llm_system_prompt()}},
                              {{"role", "user"}, {"content", text}}})},
      {"response_format", {{"type", "json_object"}}},
      {"temperature", 0}};

  try {
    httplib::Client cli(base);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(cfg.timeout - secs);
    cli.set_connection_timeout(secs.count(), usecs.count());
    cli.set_read_timeout(secs.count(), usecs.count());
    cli.set_write_timeout(secs.count(), usecs.count());
    httplib::Headers headers;
    if (!cfg.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg.api_key);
    const auto res = cli.Post(path, headers, request.dump(), "application/json");
    if (!res) return with_note(route_keyword(text, current), "LLM transport error: " + httplib::to_string(res.error()));
    if (res->status != 200)
      return with_note(route_keyword(text, current), "LLM status " + std::to_string(res->status));

    const auto body = nlohmann::json::parse(res->body);
    const auto content = nlohmann::json::parse(body.at("choices").at(0).at("message").at("content").get<std::string>());
    const int s = parse_strategy(content.at("strategy").get<std::string>());
    double confidence = content.value("confidence", 1.0);
    if (!(confidence >= 0.0 && confidence <= 1.0)) throw Error("confidence outside [0, 1]");
    return {s, confidence, IntentSource::llm, content.value("rationale", std::string{})};
  } catch (const std::exception& e) {
    return with_note(route_keyword(text, current), std::string("invalid LLM reply: ") + e.what());
  }
}

IntentResult route_intent(const std::string& text, int current, const std::optional<LlmConfig>& cfg) {
  if (cfg) return route_llm(text, current, *cfg);
  return route_keyword(text, current);
}

}  // namespace mdp
