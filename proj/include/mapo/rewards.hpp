#pragma once

#include <span>
#include <string>

#include "mapo/core.hpp"

namespace mapo {

struct RewardConfig {
  double beta_r = 0.9;  // accuracy weight
  std::string format_rule = "think-answer";
  std::string answer_extractor = "first-segment";

  // Throws ConfigError.
  void validate() const;
};

// 1 iff <think>, </think>, <answer>, </answer> each occur exactly once and in
// that order. Other tokens may appear anywhere.
int format_reward(std::span<const TokenId> tokens) noexcept;

// Tokens strictly between the first <answer> and the next </answer>; empty
// optional-like result (has_segment == false) when no closed segment exists.
struct AnswerSegment {
  bool has_segment = false;
  std::span<const TokenId> tokens;
};
AnswerSegment first_answer_segment(std::span<const TokenId> tokens) noexcept;

// 1 iff the first answer segment holds exactly one token equal to the truth.
int accuracy_reward(std::span<const TokenId> tokens, TokenId ground_truth) noexcept;
// Variant for tasks with several reward-equivalent answers.
int accuracy_reward(std::span<const TokenId> tokens, std::span<const TokenId> accepted) noexcept;

double combined_reward(int format, int accuracy, const RewardConfig& cfg);

}  // namespace mapo
