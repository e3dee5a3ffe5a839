#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mapo/env.hpp"
#include "mapo/policy.hpp"
#include "mapo/trainer.hpp"

namespace mapo::cli {

struct PolicySpec {
  DecodeMode mode = DecodeMode::Scaffold;
  std::uint32_t filler_tokens = 2;
  std::uint32_t answer_tokens = 2;
  std::uint32_t max_len = 8;
  std::uint32_t context_order = 1;
  bool random_init = false;  // false: all logits zero (uniform policy)
  double init_scale = 1.0;
  std::uint64_t init_seed = 0;
};

struct CurriculumSpec {
  int n_tasks = 1;
  CurriculumProfile profile = CurriculumProfile::Uniform;
  std::uint64_t seed = 0;
  double held_out_fraction = 0.0;
  std::string file;  // when set, tasks are read from this curriculum file instead
};

struct EvalSpec {
  int samples_per_task = 200;
  double temperature = 0.5;
  std::uint64_t seed = 0;
};

struct ExperimentConfig {
  TrainConfig train;
  PolicySpec policy;
  CurriculumSpec curriculum;
  EvalSpec eval;
  bool log_groups = false;  // analysis.log_groups: per-rollout groups.csv
  std::string out_dir = "runs/default";
};

// Every accepted key, in canonical order.
const std::vector<std::string>& config_keys();

// Sets one key from its text form. Throws ConfigError naming the key and the
// violated constraint.
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const ExperimentConfig& cfg, const std::string& key);

// Environment variable that overrides `key`: MAPO_ + upper-cased key with '.'
// replaced by '_', e.g. train.group_size -> MAPO_TRAIN_GROUP_SIZE.
std::string env_var_for(const std::string& key);

// Parses `key = value` lines ('#' starts a comment) and then applies MAPO_*
// environment overrides. Errors carry "path:line:" anchors.
ExperimentConfig parse_config(const std::string& text, const std::string& origin,
                              bool apply_env = true);
ExperimentConfig load_config(const std::string& path, bool apply_env = true);

// Cross-field checks (policy shape, curriculum needs, trainer invariants).
void validate_config(const ExperimentConfig& cfg);

// Canonical `key = value` text of everything that affects results. The output
// directory and job count are excluded.
std::string canonical_config(const ExperimentConfig& cfg);

PolicyShape policy_shape(const ExperimentConfig& cfg, std::uint32_t prompt_slots);
TabularPolicy initial_policy(const ExperimentConfig& cfg, std::uint32_t prompt_slots);

}  // namespace mapo::cli
