#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "mapo/core.hpp"
#include "mapo/vocab.hpp"

namespace mapo {

// How generation is constrained.
//   Unconstrained  generic vocabulary, exactly max_len tokens, no markers.
//   Free           task vocabulary, any token at any step; <eos> ends early and
//                  is forced at the last position.
//   Scaffold       marker grammar: <think> or <answer> first, think segments of
//                  fillers, one answer token per segment, then <eos> or another
//                  answer segment. Every format/accuracy outcome is reachable.
//   Forced         the format is always correct; the policy only picks filler
//                  tokens, the think length, and the answer token.
enum class DecodeMode { Unconstrained, Free, Scaffold, Forced };

std::string_view to_string(DecodeMode mode);
DecodeMode parse_decode_mode(std::string_view name);  // throws ConfigError

// Bit b set <=> token b may be emitted. Vocabularies are capped at 64 tokens.
using TokenMask = std::uint64_t;
inline constexpr std::uint32_t kMaxVocab = 64;

inline int mask_count(TokenMask m) noexcept { return __builtin_popcountll(m); }
inline bool mask_has(TokenMask m, TokenId t) noexcept { return (m >> t) & 1U; }

struct PolicyShape {
  DecodeMode mode = DecodeMode::Forced;
  TaskVocab vocab{};                // used by the task modes
  std::uint32_t vocab_size = 0;     // Unconstrained only; task modes use vocab.size()
  std::uint32_t max_len = 8;
  std::uint32_t context_order = 1;  // Markov order of the token context
  std::uint32_t prompt_slots = 1;   // prompt_id % prompt_slots selects a table block

  std::uint32_t tokens() const noexcept {
    return mode == DecodeMode::Unconstrained ? vocab_size : vocab.size();
  }
  std::size_t contexts_per_slot() const noexcept;
  std::size_t state_count() const noexcept { return contexts_per_slot() * prompt_slots; }

  void validate() const;  // throws ConfigError
  friend bool operator==(const PolicyShape&, const PolicyShape&) = default;
};

// Incremental grammar state; `allowed()` is the mask for the next token,
// zero once generation is finished.
class GrammarCursor {
 public:
  explicit GrammarCursor(const PolicyShape& shape) : shape_(&shape) {}

  TokenMask allowed() const noexcept;
  bool finished() const noexcept { return allowed() == 0; }
  // Throws ContractViolation if `t` is not allowed.
  void advance(TokenId t);
  std::uint32_t length() const noexcept { return length_; }

 private:
  enum class Phase { Start, Think, AfterThink, AnswerOpen, AnswerToken, AnswerClose, Done };
  TokenMask task_mask(Phase phase) const noexcept;

  const PolicyShape* shape_;
  Phase phase_ = Phase::Start;
  std::uint32_t length_ = 0;
};

// One generated token together with the table row and grammar mask in force.
struct TokenStep {
  std::size_t state = 0;
  TokenMask mask = 0;
  TokenId token = 0;

  bool forced() const noexcept { return mask_count(mask) == 1; }
};

// Softmax policy with one logit row per (prompt slot, last k tokens) state.
// Probabilities are normalized over the grammar mask of each step.
class TabularPolicy {
 public:
  explicit TabularPolicy(PolicyShape shape);

  const PolicyShape& shape() const noexcept { return shape_; }
  std::uint32_t vocab_size() const noexcept { return vocab_; }
  std::size_t state_count() const noexcept { return shape_.state_count(); }

  std::size_t prompt_slot(std::uint64_t prompt_id) const noexcept {
    return static_cast<std::size_t>(prompt_id % shape_.prompt_slots);
  }
  // Row index for the next token given the generated prefix.
  std::size_t state_index(std::uint64_t prompt_id, std::span<const TokenId> prefix) const;

  std::span<double> row(std::size_t state) {
    return std::span<double>(logits_).subspan(state * vocab_, vocab_);
  }
  std::span<const double> row(std::size_t state) const {
    return std::span<const double>(logits_).subspan(state * vocab_, vocab_);
  }
  std::span<double> parameters() noexcept { return logits_; }
  std::span<const double> parameters() const noexcept { return logits_; }

  // log pi(token | state) over the masked support, at temperature 1.
  double log_prob(std::size_t state, TokenMask mask, TokenId token) const;
  // Masked softmax at `temperature`; entries outside the mask are zero.
  void probabilities(std::size_t state, TokenMask mask, double temperature,
                     std::span<double> out) const;

  // Sets one token's logit `gap` above every other token in `state`.
  void make_deterministic(std::size_t state, TokenId token, double gap = 60.0);

  friend bool operator==(const TabularPolicy&, const TabularPolicy&) = default;

 private:
  PolicyShape shape_;
  std::uint32_t vocab_;
  std::vector<double> logits_;
};

// Replays the grammar over `tokens`. Throws ContractViolation for tokens
// outside the vocabulary or not allowed at their position.
std::vector<TokenStep> trajectory_steps(const TabularPolicy& policy, std::uint64_t prompt_id,
                                        std::span<const TokenId> tokens);

// Exact per-token log-probabilities; forced tokens contribute 0. Throws
// ContractViolation for tokens outside the vocabulary or the grammar.
std::vector<double> policy_logprob(const TabularPolicy& policy, const Trajectory& traj);

// Random logits N(0, scale^2), reproducible from seed.
TabularPolicy random_policy(const PolicyShape& shape, double scale, std::uint64_t seed);

}  // namespace mapo
