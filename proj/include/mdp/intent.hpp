#pragma once

#include <chrono>
#include <optional>
#include <string>

#include "json.hpp"

namespace mdp {

enum class IntentSource { keyword, llm, fallback_keep_current };
std::string to_string(IntentSource s);

struct IntentResult {
  int strategy = 0;
  double confidence = 0.0;
  IntentSource source = IntentSource::fallback_keep_current;
  std::string rationale;

  nlohmann::json to_json() const;
};

/// Lowercases and tokenises `text`, then picks the first table row with a
/// keyword matching a token prefix (or a consecutive token pair). No match
/// keeps `current`.
IntentResult route_keyword(const std::string& text, int current);

struct LlmConfig {
  std::string endpoint;  // full URL of a chat-completions route
  std::string api_key;
  std::string model = "gpt-4o-mini";
  std::chrono::milliseconds timeout{2000};

  /// Reads LLM_ENDPOINT, LLM_API_KEY and LLM_MODEL; empty without an endpoint.
  static std::optional<LlmConfig> from_env();
};

/// System prompt listing the strategy registry.
std::string llm_system_prompt();

/// Asks the endpoint; any transport, timeout or validation failure falls back
/// to route_keyword.
IntentResult route_llm(const std::string& text, int current, const LlmConfig& cfg);

/// route_llm when configured, route_keyword otherwise.
IntentResult route_intent(const std::string& text, int current, const std::optional<LlmConfig>& cfg);

}  // namespace mdp
