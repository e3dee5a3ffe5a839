#include "mapo/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mapo/errors.hpp"
#include "mapo/rng.hpp"

namespace mapo {

namespace {

TokenMask range_mask(std::uint32_t first, std::uint32_t count) noexcept {
  if (count == 0) return 0;
  const TokenMask ones = count >= 64 ? ~TokenMask{0} : ((TokenMask{1} << count) - 1);
  return ones << first;
}

TokenMask bit(TokenId t) noexcept { return TokenMask{1} << t; }

double masked_logsumexp(std::span<const double> row, TokenMask mask, double inv_temp) {
  double hi = -std::numeric_limits<double>::infinity();
  for (TokenMask m = mask; m != 0; m &= m - 1) {
    hi = std::max(hi, row[static_cast<std::size_t>(__builtin_ctzll(m))] * inv_temp);
  }
  double sum = 0.0;
  for (TokenMask m = mask; m != 0; m &= m - 1) {
    sum += std::exp(row[static_cast<std::size_t>(__builtin_ctzll(m))] * inv_temp - hi);
  }
  return hi + std::log(sum);
}

}  // namespace

std::string_view to_string(DecodeMode mode) {
  switch (mode) {
    case DecodeMode::Unconstrained:
      return "unconstrained";
    case DecodeMode::Free:
      return "free";
    case DecodeMode::Scaffold:
      return "scaffold";
    case DecodeMode::Forced:
      return "forced";
  }
  return "unknown";
}

DecodeMode parse_decode_mode(std::string_view name) {
  for (DecodeMode m : {DecodeMode::Unconstrained, DecodeMode::Free, DecodeMode::Scaffold,
                       DecodeMode::Forced}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown decode mode '" + std::string(name) +
                    "' (expected unconstrained, free, scaffold or forced)");
}

std::size_t PolicyShape::contexts_per_slot() const noexcept {
  std::size_t n = 1;
  for (std::uint32_t i = 0; i < context_order; ++i) n *= tokens() + 1;
  return n;
}

void PolicyShape::validate() const {
  const std::uint32_t v = tokens();
  if (mode == DecodeMode::Unconstrained) {
    if (vocab_size < 2) throw ConfigError("policy vocabulary must have at least 2 tokens");
  } else if (vocab.answer_count < 1) {
    throw ConfigError("policy.answer_tokens must be >= 1");
  }
  if (v > kMaxVocab) {
    throw ConfigError("policy vocabulary of " + std::to_string(v) + " tokens exceeds " +
                      std::to_string(kMaxVocab));
  }
  if ((mode == DecodeMode::Forced || mode == DecodeMode::Scaffold) && max_len < 6) {
    throw ConfigError("policy.max_len must be >= 6 for the think/answer grammar");
  }
  if (max_len < 1) throw ConfigError("policy.max_len must be >= 1");
  if (prompt_slots < 1) throw ConfigError("policy.prompt_slots must be >= 1");
  if (context_order > 4) throw ConfigError("policy.context_order must be <= 4");
  const double cells = static_cast<double>(contexts_per_slot()) * prompt_slots * v;
  if (cells > 5e7) throw ConfigError("policy logit table too large");
}

TokenMask GrammarCursor::task_mask(Phase phase) const noexcept {
  const TaskVocab& v = shape_->vocab;
  const std::uint32_t remaining = shape_->max_len - length_;
  const TokenMask fillers = range_mask(v.filler(0), v.filler_count);
  const TokenMask answers = range_mask(v.answer(0), v.answer_count);
  const bool scaffold = shape_->mode == DecodeMode::Scaffold;
  switch (phase) {
    case Phase::Start:
      if (scaffold) return bit(TaskVocab::kThink) | bit(TaskVocab::kAnswer);
      return bit(TaskVocab::kThink);
    case Phase::Think:
      // Closing needs </think> <answer> a </answer> <eos>.
      if (remaining > 5 && fillers != 0) return fillers | bit(TaskVocab::kThinkEnd);
      return bit(TaskVocab::kThinkEnd);
    case Phase::AfterThink:
      return bit(TaskVocab::kAnswer);
    case Phase::AnswerOpen:
      return answers;
    case Phase::AnswerToken:
      return bit(TaskVocab::kAnswerEnd);
    case Phase::AnswerClose:
      if (scaffold && remaining >= 4) return bit(TaskVocab::kEos) | bit(TaskVocab::kAnswer);
      return bit(TaskVocab::kEos);
    case Phase::Done:
      return 0;
  }
  return 0;
}

TokenMask GrammarCursor::allowed() const noexcept {
  if (phase_ == Phase::Done || length_ >= shape_->max_len) return 0;
  switch (shape_->mode) {
    case DecodeMode::Unconstrained:
      return range_mask(0, shape_->vocab_size);
    case DecodeMode::Free:
      if (shape_->max_len - length_ == 1) return bit(TaskVocab::kEos);
      return range_mask(0, shape_->vocab.size());
    case DecodeMode::Scaffold:
    case DecodeMode::Forced:
      return task_mask(phase_);
  }
  return 0;
}

void GrammarCursor::advance(TokenId t) {
  const TokenMask mask = allowed();
  if (t >= kMaxVocab || !mask_has(mask, t)) {
    throw ContractViolation("token " + std::to_string(t) + " not allowed at position " +
                            std::to_string(length_));
  }
  ++length_;
  const TaskVocab& v = shape_->vocab;
  switch (shape_->mode) {
    case DecodeMode::Unconstrained:
      return;
    case DecodeMode::Free:
      if (t == TaskVocab::kEos) phase_ = Phase::Done;
      return;
    case DecodeMode::Scaffold:
    case DecodeMode::Forced:
      break;
  }
  if (t == TaskVocab::kEos) {
    phase_ = Phase::Done;
  } else if (t == TaskVocab::kThink || v.is_filler(t)) {
    phase_ = Phase::Think;
  } else if (t == TaskVocab::kThinkEnd) {
    phase_ = Phase::AfterThink;
  } else if (t == TaskVocab::kAnswer) {
    phase_ = Phase::AnswerOpen;
  } else if (v.is_answer(t)) {
    phase_ = Phase::AnswerToken;
  } else if (t == TaskVocab::kAnswerEnd) {
    phase_ = Phase::AnswerClose;
  }
}

TabularPolicy::TabularPolicy(PolicyShape shape) : shape_(shape), vocab_(shape.tokens()) {
  shape_.validate();
  logits_.assign(shape_.state_count() * vocab_, 0.0);
}

std::size_t TabularPolicy::state_index(std::uint64_t prompt_id,
                                       std::span<const TokenId> prefix) const {
  const std::size_t base = vocab_ + 1;  // index vocab_ pads the start of sequence
  std::size_t ctx = 0;
  for (std::uint32_t j = 0; j < shape_.context_order; ++j) {
    std::size_t tok = vocab_;
    if (j < prefix.size()) {
      tok = prefix[prefix.size() - 1 - j];
      if (tok >= vocab_) throw ContractViolation("token out of vocabulary in context");
    }
    ctx = ctx * base + tok;
  }
  return prompt_slot(prompt_id) * shape_.contexts_per_slot() + ctx;
}

double TabularPolicy::log_prob(std::size_t state, TokenMask mask, TokenId token) const {
  if (token >= vocab_ || !mask_has(mask, token)) {
    throw ContractViolation("token " + std::to_string(token) + " outside the allowed set");
  }
  if (mask_count(mask) == 1) return 0.0;
  const auto r = row(state);
  return r[token] - masked_logsumexp(r, mask, 1.0);
}

void TabularPolicy::probabilities(std::size_t state, TokenMask mask, double temperature,
                                  std::span<double> out) const {
  const auto r = row(state);
  const double inv_temp = 1.0 / temperature;
  const double lse = masked_logsumexp(r, mask, inv_temp);
  for (std::uint32_t b = 0; b < vocab_; ++b) {
    out[b] = mask_has(mask, b) ? std::exp(r[b] * inv_temp - lse) : 0.0;
  }
}

void TabularPolicy::make_deterministic(std::size_t state, TokenId token, double gap) {
  auto r = row(state);
  std::fill(r.begin(), r.end(), 0.0);
  r[token] = gap;
}

std::vector<TokenStep> trajectory_steps(const TabularPolicy& policy, std::uint64_t prompt_id,
                                        std::span<const TokenId> tokens) {
  std::vector<TokenStep> steps;
  steps.reserve(tokens.size());
  GrammarCursor cursor(policy.shape());
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t] >= policy.vocab_size()) {
      throw ContractViolation("token " + std::to_string(tokens[t]) + " out of vocabulary");
    }
    TokenStep step;
    step.state = policy.state_index(prompt_id, tokens.first(t));
    step.mask = cursor.allowed();
    step.token = tokens[t];
    cursor.advance(tokens[t]);
    steps.push_back(step);
  }
  return steps;
}

std::vector<double> policy_logprob(const TabularPolicy& policy, const Trajectory& traj) {
  const auto steps = trajectory_steps(policy, traj.prompt_id, traj.tokens);
  std::vector<double> out;
  out.reserve(steps.size());
  for (const auto& s : steps) out.push_back(policy.log_prob(s.state, s.mask, s.token));
  return out;
}

TabularPolicy random_policy(const PolicyShape& shape, double scale, std::uint64_t seed) {
  TabularPolicy policy(shape);
  Rng rng(seed);
  for (double& x : policy.parameters()) x = scale * rng.normal();
  return policy;
}

}  // namespace mapo
