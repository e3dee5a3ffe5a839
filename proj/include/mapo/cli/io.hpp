#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mapo/env.hpp"
#include "mapo/policy.hpp"
#include "mapo/trainer.hpp"

namespace mapo::cli {

// Raised for unreadable or malformed artifact files.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string sha256_hex(const std::string& data);

// Shortest text that reads back to the same double ("%.17g").
std::string format_double(double x);

void write_file(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

// metrics.csv: a "# config_hash=..." line, then
// step,mean_reward,success_rate,mean_kl,grad_norm,hist_0..hist_G
std::string metrics_header(int group_size);
std::string metrics_row(const TrainRecord& rec);
std::string metrics_csv(const std::vector<TrainRecord>& records, int group_size,
                        const std::string& config_hash);

// policy.bin, all integers little-endian:
//   8 bytes   magic "MAPOPOL\0"
//   u32       format version (1)
//   u32 x 7   mode, filler_tokens, answer_tokens, vocab_size, max_len,
//             context_order, prompt_slots
//   64 bytes  config hash, lower-case hex
//   u64       parameter count n
//   f64 x n   logits, row-major by state (IEEE-754 binary64)
inline constexpr std::uint32_t kPolicyFormatVersion = 1;
std::string encode_policy(const TabularPolicy& policy, const std::string& config_hash);
TabularPolicy decode_policy(const std::string& bytes, std::string* config_hash = nullptr);

// Curriculum file: {"format": "mapo-curriculum", "version": 1, "tasks": [...]}.
inline constexpr int kCurriculumFormatVersion = 1;
std::string curriculum_json(const std::vector<TaskInstance>& tasks);
std::vector<TaskInstance> parse_curriculum_json(const std::string& text);

}  // namespace mapo::cli
