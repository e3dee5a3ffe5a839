#include "mapo/rewards.hpp"

#include <algorithm>
#include <cmath>

#include "mapo/errors.hpp"
#include "mapo/vocab.hpp"

namespace mapo {

void RewardConfig::validate() const {
  if (!(beta_r >= 0.0 && beta_r <= 1.0)) {
    throw ConfigError("reward.beta_r must lie in [0,1]");
  }
  if (format_rule != "think-answer") {
    throw ConfigError("unknown reward.format_rule '" + format_rule + "'");
  }
  if (answer_extractor != "first-segment") {
    throw ConfigError("unknown reward.answer_extractor '" + answer_extractor + "'");
  }
}

int format_reward(std::span<const TokenId> tokens) noexcept {
  constexpr TokenId markers[] = {TaskVocab::kThink, TaskVocab::kThinkEnd, TaskVocab::kAnswer,
                                 TaskVocab::kAnswerEnd};
  std::size_t next = 0;
  for (TokenId t : tokens) {
    if (std::find(std::begin(markers), std::end(markers), t) == std::end(markers)) continue;
    if (next == 4 || t != markers[next]) return 0;
    ++next;
  }
  return next == 4 ? 1 : 0;
}

AnswerSegment first_answer_segment(std::span<const TokenId> tokens) noexcept {
  const auto open = std::find(tokens.begin(), tokens.end(), TaskVocab::kAnswer);
  if (open == tokens.end()) return {};
  const auto close = std::find(open + 1, tokens.end(), TaskVocab::kAnswerEnd);
  if (close == tokens.end()) return {};
  return {true, std::span<const TokenId>(open + 1, close)};
}

int accuracy_reward(std::span<const TokenId> tokens, TokenId ground_truth) noexcept {
  return accuracy_reward(tokens, std::span<const TokenId>(&ground_truth, 1));
}

int accuracy_reward(std::span<const TokenId> tokens, std::span<const TokenId> accepted) noexcept {
  const AnswerSegment seg = first_answer_segment(tokens);
  if (!seg.has_segment || seg.tokens.size() != 1) return 0;
  return std::find(accepted.begin(), accepted.end(), seg.tokens[0]) != accepted.end() ? 1 : 0;
}

double combined_reward(int format, int accuracy, const RewardConfig& cfg) {
  if ((format != 0 && format != 1) || (accuracy != 0 && accuracy != 1)) {
    throw ContractViolation("reward components must be 0 or 1");
  }
  // Exactly 1 when both parts hold, so the success indicator r == 1 is exact
  // for every beta_r.
  if (format == 1 && accuracy == 1) return 1.0;
  return (1.0 - cfg.beta_r) * format + cfg.beta_r * accuracy;
}

}  // namespace mapo
