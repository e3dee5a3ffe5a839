#pragma once

#include <cstdint>

#include "mapo/core.hpp"

namespace mapo {

// Token layout of the synthetic reasoning tasks:
//   0 <think>  1 </think>  2 <answer>  3 </answer>  4 <eos>
//   5 .. 5+F-1          filler ("reasoning") tokens
//   5+F .. 5+F+A-1      answer tokens
struct TaskVocab {
  static constexpr TokenId kThink = 0;
  static constexpr TokenId kThinkEnd = 1;
  static constexpr TokenId kAnswer = 2;
  static constexpr TokenId kAnswerEnd = 3;
  static constexpr TokenId kEos = 4;
  static constexpr std::uint32_t kReserved = 5;

  std::uint32_t filler_count = 2;
  std::uint32_t answer_count = 2;

  std::uint32_t size() const noexcept { return kReserved + filler_count + answer_count; }
  TokenId filler(std::uint32_t i) const noexcept { return kReserved + i; }
  TokenId answer(std::uint32_t i) const noexcept { return kReserved + filler_count + i; }
  bool is_filler(TokenId t) const noexcept {
    return t >= kReserved && t < kReserved + filler_count;
  }
  bool is_answer(TokenId t) const noexcept {
    return t >= kReserved + filler_count && t < size();
  }

  friend bool operator==(const TaskVocab&, const TaskVocab&) = default;
};

}  // namespace mapo
