#include "mapo/cli/io.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mapo/errors.hpp"

namespace mapo::cli {

namespace {

constexpr char kMagic[8] = {'M', 'A', 'P', 'O', 'P', 'O', 'L', '\0'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}
  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw IoError("policy file truncated");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw IoError("SHA-256 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xF]);
  }
  return out;
}

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!f) throw IoError("write failed: " + path);
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return buf.str();
}

std::string metrics_header(int group_size) {
  std::string out = "step,mean_reward,success_rate,mean_kl,grad_norm";
  for (int n = 0; n <= group_size; ++n) out += ",hist_" + std::to_string(n);
  return out;
}

std::string metrics_row(const TrainRecord& rec) {
  std::string out = std::to_string(rec.step) + "," + format_double(rec.mean_reward) + "," +
                    format_double(rec.success_rate) + "," + format_double(rec.mean_kl) + "," +
                    format_double(rec.grad_norm);
  for (int c : rec.n_histogram) out += "," + std::to_string(c);
  return out;
}

std::string metrics_csv(const std::vector<TrainRecord>& records, int group_size,
                        const std::string& config_hash) {
  std::string out = "# config_hash=" + config_hash + "\n" + metrics_header(group_size) + "\n";
  for (const auto& rec : records) out += metrics_row(rec) + "\n";
  return out;
}

std::string encode_policy(const TabularPolicy& policy, const std::string& config_hash) {
  static_assert(std::endian::native == std::endian::little, "policy files assume little-endian");
  if (config_hash.size() != 64) throw IoError("config hash must be 64 hex characters");
  const PolicyShape& s = policy.shape();
  std::string out(kMagic, sizeof kMagic);
  put_u32(out, kPolicyFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(s.mode));
  put_u32(out, s.vocab.filler_count);
  put_u32(out, s.vocab.answer_count);
  put_u32(out, s.vocab_size);
  put_u32(out, s.max_len);
  put_u32(out, s.context_order);
  put_u32(out, s.prompt_slots);
  out += config_hash;
  const auto params = policy.parameters();
  put_u64(out, params.size());
  for (double x : params) put_u64(out, std::bit_cast<std::uint64_t>(x));
  return out;
}

TabularPolicy decode_policy(const std::string& bytes, std::string* config_hash) {
  Reader in(bytes);
  if (in.raw(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) {
    throw IoError("not a policy file (bad magic)");
  }
  const auto version = in.uint(4);
  if (version != kPolicyFormatVersion) {
    throw IoError("unsupported policy file version " + std::to_string(version));
  }
  PolicyShape s;
  const auto mode = in.uint(4);
  if (mode > static_cast<std::uint32_t>(DecodeMode::Forced)) throw IoError("bad decode mode in policy file");
  s.mode = static_cast<DecodeMode>(mode);
  s.vocab.filler_count = static_cast<std::uint32_t>(in.uint(4));
  s.vocab.answer_count = static_cast<std::uint32_t>(in.uint(4));
  s.vocab_size = static_cast<std::uint32_t>(in.uint(4));
  s.max_len = static_cast<std::uint32_t>(in.uint(4));
  s.context_order = static_cast<std::uint32_t>(in.uint(4));
  s.prompt_slots = static_cast<std::uint32_t>(in.uint(4));
  const std::string hash = in.raw(64);
  try {
    s.validate();
  } catch (const ConfigError& e) {
    throw IoError(std::string("policy file has an invalid shape: ") + e.what());
  }
  TabularPolicy policy(s);
  const auto n = in.uint(8);
  if (n != policy.parameters().size()) throw IoError("policy parameter count does not match its shape");
  for (double& x : policy.parameters()) x = std::bit_cast<double>(in.uint(8));
  if (!in.done()) throw IoError("trailing bytes in policy file");
  if (config_hash != nullptr) *config_hash = hash;
  return policy;
}

std::string curriculum_json(const std::vector<TaskInstance>& tasks) {
  nlohmann::ordered_json doc;
  doc["format"] = "mapo-curriculum";
  doc["version"] = kCurriculumFormatVersion;
  auto& arr = doc["tasks"] = nlohmann::ordered_json::array();
  for (const auto& t : tasks) {
    nlohmann::ordered_json j;
    j["prompt_id"] = t.prompt_id;
    j["prompt"] = t.prompt;
    j["ground_truth"] = t.ground_truth;
    j["accepted"] = t.accepted;
    j["difficulty"] = t.difficulty;
    arr.push_back(std::move(j));
  }
  return doc.dump(2) + "\n";
}

std::vector<TaskInstance> parse_curriculum_json(const std::string& text) {
  std::vector<TaskInstance> tasks;
  try {
    const auto doc = nlohmann::json::parse(text);
    if (doc.at("format") != "mapo-curriculum") throw IoError("not a curriculum file");
    if (doc.at("version") != kCurriculumFormatVersion) {
      throw IoError("unsupported curriculum version " + doc.at("version").dump());
    }
    for (const auto& j : doc.at("tasks")) {
      TaskInstance t;
      t.prompt_id = j.at("prompt_id").get<std::uint64_t>();
      t.prompt = j.at("prompt").get<std::vector<TokenId>>();
      t.ground_truth = j.at("ground_truth").get<TokenId>();
      t.accepted = j.at("accepted").get<std::vector<TokenId>>();
      t.difficulty = j.at("difficulty").get<double>();
      tasks.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed curriculum file: ") + e.what());
  }
  if (tasks.empty()) throw IoError("curriculum file has no tasks");
  return tasks;
}

}  // namespace mapo::cli
