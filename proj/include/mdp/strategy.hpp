#pragma once

#include <array>
#include <string>
#include <string_view>

#include "mdp/errors.hpp"

namespace mdp {

/// Fixed strategy registry: head index and name.
enum class Strategy : int { base = 0, aggressive = 1, conservative = 2, comfortable = 3 };

inline constexpr int kNumStrategies = 4;
inline constexpr std::array<std::string_view, kNumStrategies> kStrategyNames{
    "base", "aggressive", "conservative", "comfortable"};

inline void check_strategy(int s, int heads = kNumStrategies) {
  if (s < 0 || s >= heads) throw InvalidStrategy("strategy id " + std::to_string(s) + " out of range");
}

inline std::string strategy_name(int s) {
  check_strategy(s);
  return std::string(kStrategyNames[static_cast<std::size_t>(s)]);
}

inline int parse_strategy(std::string_view name) {
  for (int i = 0; i < kNumStrategies; ++i)
    if (kStrategyNames[static_cast<std::size_t>(i)] == name) return i;
  throw InvalidStrategy("unknown strategy '" + std::string(name) + "'");
}

}  // namespace mdp
