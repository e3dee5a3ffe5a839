#include "mapo/cli/config.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>

#include "mapo/errors.hpp"

namespace mapo::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

template <class Int>
Int parse_int(const std::string& key, const std::string& v, Int lo, Int hi,
              const std::string& rule) {
  Int out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
  if (out < lo || out > hi) throw ConfigError(key + " must be " + rule + ", got " + v);
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  if (v == "inf" || v == "infinity") return std::numeric_limits<double>::infinity();
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(out)) {
    throw ConfigError(key + ": expected a finite real number, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

template <class Parse>
auto rethrow_as(const std::string& key, Parse&& parse) {
  try {
    return parse();
  } catch (const ConfigError& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

struct Field {
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
  bool canonical = true;
};

using Schema = std::vector<std::pair<std::string, Field>>;

constexpr int kIntMax = std::numeric_limits<int>::max();
constexpr std::uint64_t kU64Max = std::numeric_limits<std::uint64_t>::max();

const Schema& schema() {
  static const Schema s = [] {
    Schema f;
    auto add = [&f](std::string key, Field field) { f.emplace_back(std::move(key), std::move(field)); };

    add("train.steps", {[](auto& c, auto& k, auto& v) { c.train.steps = parse_int(k, v, 1, kIntMax, ">= 1 (E >= 1)"); },
                        [](auto& c) { return std::to_string(c.train.steps); }});
    add("train.group_size",
        {[](auto& c, auto& k, auto& v) { c.train.group_size = parse_int(k, v, 2, 64, ">= 2 (G >= 2) and <= 64"); },
         [](auto& c) { return std::to_string(c.train.group_size); }});
    add("train.rollout_batch",
        {[](auto& c, auto& k, auto& v) { c.train.rollout_batch = parse_int(k, v, 1, kIntMax, ">= 1"); },
         [](auto& c) { return std::to_string(c.train.rollout_batch); }});
    add("train.learning_rate", {[](auto& c, auto& k, auto& v) {
                                  const double x = parse_real(k, v);
                                  if (!(x >= 0.0)) throw ConfigError(k + " must be >= 0, got " + v);
                                  c.train.learning_rate = x;
                                },
                                [](auto& c) { return fmt_double(c.train.learning_rate); }});
    add("train.optimizer",
        {[](auto& c, auto& k, auto& v) { c.train.optimizer = rethrow_as(k, [&] { return parse_optimizer_kind(v); }); },
         [](auto& c) { return std::string(to_string(c.train.optimizer)); }});
    add("train.adam_beta1", {[](auto& c, auto& k, auto& v) { c.train.adam_beta1 = parse_real(k, v); },
                             [](auto& c) { return fmt_double(c.train.adam_beta1); }});
    add("train.adam_beta2", {[](auto& c, auto& k, auto& v) { c.train.adam_beta2 = parse_real(k, v); },
                             [](auto& c) { return fmt_double(c.train.adam_beta2); }});
    add("train.adam_eps", {[](auto& c, auto& k, auto& v) { c.train.adam_eps = parse_real(k, v); },
                           [](auto& c) { return fmt_double(c.train.adam_eps); }});
    add("train.seed", {[](auto& c, auto& k, auto& v) { c.train.seed = parse_int<std::uint64_t>(k, v, 0, kU64Max, "a 64-bit unsigned integer"); },
                       [](auto& c) { return std::to_string(c.train.seed); }});
    add("train.drop_zero_std_groups",
        {[](auto& c, auto& k, auto& v) { c.train.drop_zero_std_groups = parse_bool(k, v); },
         [](auto& c) { return std::string(c.train.drop_zero_std_groups ? "true" : "false"); }});
    add("train.ref_refresh", {[](auto& c, auto& k, auto& v) {
                                c.train.ref_refresh_interval =
                                    v == "never" ? 0 : parse_int(k, v, 1, kIntMax, "never or >= 1");
                              },
                              [](auto& c) {
                                return c.train.ref_refresh_interval == 0
                                           ? std::string("never")
                                           : std::to_string(c.train.ref_refresh_interval);
                              }});

    add("estimator.kind",
        {[](auto& c, auto& k, auto& v) { c.train.estimator.kind = rethrow_as(k, [&] { return parse_estimator_kind(v); }); },
         [](auto& c) { return std::string(to_string(c.train.estimator.kind)); }});
    add("estimator.alpha", {[](auto& c, auto& k, auto& v) { c.train.estimator.alpha = parse_real(k, v); },
                            [](auto& c) { return fmt_double(c.train.estimator.alpha); }});
    add("estimator.eps_div", {[](auto& c, auto& k, auto& v) {
                                const double x = parse_real(k, v);
                                if (!(x > 0.0)) throw ConfigError(k + " must be > 0, got " + v);
                                c.train.estimator.eps_div = x;
                              },
                              [](auto& c) { return fmt_double(c.train.estimator.eps_div); }});

    add("objective.clip_eps", {[](auto& c, auto& k, auto& v) {
                                 const double x = parse_real(k, v);
                                 if (!(x > 0.0)) throw ConfigError(k + " must be > 0 (inf disables clipping), got " + v);
                                 c.train.objective.clip_eps = x;
                               },
                               [](auto& c) { return fmt_double(c.train.objective.clip_eps); }});
    add("objective.kl_coef", {[](auto& c, auto& k, auto& v) {
                                const double x = parse_real(k, v);
                                if (!(x >= 0.0) || std::isinf(x)) throw ConfigError(k + " must be >= 0, got " + v);
                                c.train.objective.kl_coef = x;
                              },
                              [](auto& c) { return fmt_double(c.train.objective.kl_coef); }});
    add("objective.aggregation", {[](auto&, auto& k, auto& v) {
                                    if (v != "token-mean") throw ConfigError(k + " must be token-mean, got '" + v + "'");
                                  },
                                  [](auto&) { return std::string("token-mean"); }});

    add("reward.beta_r", {[](auto& c, auto& k, auto& v) {
                            const double x = parse_real(k, v);
                            if (!(x > 0.0 && x <= 1.0)) throw ConfigError(k + " must lie in (0, 1], got " + v);
                            c.train.reward.beta_r = x;
                          },
                          [](auto& c) { return fmt_double(c.train.reward.beta_r); }});
    add("reward.format_rule", {[](auto& c, auto& k, auto& v) {
                                 if (v != "think-answer") throw ConfigError(k + " must be think-answer, got '" + v + "'");
                                 c.train.reward.format_rule = v;
                               },
                               [](auto& c) { return c.train.reward.format_rule; }});
    add("reward.answer_extractor", {[](auto& c, auto& k, auto& v) {
                                      if (v != "first-segment") throw ConfigError(k + " must be first-segment, got '" + v + "'");
                                      c.train.reward.answer_extractor = v;
                                    },
                                    [](auto& c) { return c.train.reward.answer_extractor; }});

    add("policy.mode",
        {[](auto& c, auto& k, auto& v) { c.policy.mode = rethrow_as(k, [&] { return parse_decode_mode(v); }); },
         [](auto& c) { return std::string(to_string(c.policy.mode)); }});
    add("policy.filler_tokens",
        {[](auto& c, auto& k, auto& v) { c.policy.filler_tokens = parse_int<std::uint32_t>(k, v, 0, 32, "in [0, 32]"); },
         [](auto& c) { return std::to_string(c.policy.filler_tokens); }});
    add("policy.answer_tokens",
        {[](auto& c, auto& k, auto& v) { c.policy.answer_tokens = parse_int<std::uint32_t>(k, v, 1, 32, "in [1, 32]"); },
         [](auto& c) { return std::to_string(c.policy.answer_tokens); }});
    add("policy.max_len",
        {[](auto& c, auto& k, auto& v) { c.policy.max_len = parse_int<std::uint32_t>(k, v, 1, 256, "in [1, 256]"); },
         [](auto& c) { return std::to_string(c.policy.max_len); }});
    add("policy.context_order",
        {[](auto& c, auto& k, auto& v) { c.policy.context_order = parse_int<std::uint32_t>(k, v, 0, 4, "in [0, 4]"); },
         [](auto& c) { return std::to_string(c.policy.context_order); }});
    add("policy.init", {[](auto& c, auto& k, auto& v) {
                          if (v != "uniform" && v != "random") throw ConfigError(k + " must be uniform or random, got '" + v + "'");
                          c.policy.random_init = v == "random";
                        },
                        [](auto& c) { return std::string(c.policy.random_init ? "random" : "uniform"); }});
    add("policy.init_scale", {[](auto& c, auto& k, auto& v) {
                                const double x = parse_real(k, v);
                                if (!(x >= 0.0)) throw ConfigError(k + " must be >= 0, got " + v);
                                c.policy.init_scale = x;
                              },
                              [](auto& c) { return fmt_double(c.policy.init_scale); }});
    add("policy.init_seed", {[](auto& c, auto& k, auto& v) { c.policy.init_seed = parse_int<std::uint64_t>(k, v, 0, kU64Max, "a 64-bit unsigned integer"); },
                             [](auto& c) { return std::to_string(c.policy.init_seed); }});

    add("curriculum.n_tasks",
        {[](auto& c, auto& k, auto& v) { c.curriculum.n_tasks = parse_int(k, v, 1, 1 << 20, ">= 1"); },
         [](auto& c) { return std::to_string(c.curriculum.n_tasks); }});
    add("curriculum.profile",
        {[](auto& c, auto& k, auto& v) { c.curriculum.profile = rethrow_as(k, [&] { return parse_curriculum_profile(v); }); },
         [](auto& c) { return std::string(to_string(c.curriculum.profile)); }});
    add("curriculum.seed", {[](auto& c, auto& k, auto& v) { c.curriculum.seed = parse_int<std::uint64_t>(k, v, 0, kU64Max, "a 64-bit unsigned integer"); },
                            [](auto& c) { return std::to_string(c.curriculum.seed); }});
    add("curriculum.held_out_fraction", {[](auto& c, auto& k, auto& v) {
                                           const double x = parse_real(k, v);
                                           if (!(x >= 0.0 && x < 1.0)) throw ConfigError(k + " must lie in [0, 1), got " + v);
                                           c.curriculum.held_out_fraction = x;
                                         },
                                         [](auto& c) { return fmt_double(c.curriculum.held_out_fraction); }});
    add("curriculum.file", {[](auto& c, auto&, auto& v) { c.curriculum.file = v; },
                            [](auto& c) { return c.curriculum.file; }});

    add("eval.samples_per_task",
        {[](auto& c, auto& k, auto& v) { c.eval.samples_per_task = parse_int(k, v, 1, kIntMax, ">= 1"); },
         [](auto& c) { return std::to_string(c.eval.samples_per_task); }});
    add("eval.temperature", {[](auto& c, auto& k, auto& v) {
                               const double x = parse_real(k, v);
                               if (!(x > 0.0)) throw ConfigError(k + " must be > 0, got " + v);
                               c.eval.temperature = x;
                             },
                             [](auto& c) { return fmt_double(c.eval.temperature); }});
    add("eval.seed", {[](auto& c, auto& k, auto& v) { c.eval.seed = parse_int<std::uint64_t>(k, v, 0, kU64Max, "a 64-bit unsigned integer"); },
                      [](auto& c) { return std::to_string(c.eval.seed); }});

    add("analysis.log_groups", {[](auto& c, auto& k, auto& v) { c.log_groups = parse_bool(k, v); },
                                [](auto& c) { return std::string(c.log_groups ? "true" : "false"); }});

    add("output.dir", {[](auto& c, auto& k, auto& v) {
                         if (v.empty()) throw ConfigError(k + " must not be empty");
                         c.out_dir = v;
                       },
                       [](auto& c) { return c.out_dir; }, false});
    return f;
  }();
  return s;
}

const Field* find_field(const std::string& key) {
  for (const auto& [k, f] : schema()) {
    if (k == key) return &f;
  }
  return nullptr;
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const auto& kv : schema()) out.push_back(kv.first);
    return out;
  }();
  return keys;
}

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  const Field* f = find_field(key);
  if (f == nullptr) throw ConfigError("unknown key '" + key + "'");
  f->set(cfg, key, value);
}

std::string get_config_value(const ExperimentConfig& cfg, const std::string& key) {
  const Field* f = find_field(key);
  if (f == nullptr) throw ConfigError("unknown key '" + key + "'");
  return f->get(cfg);
}

std::string env_var_for(const std::string& key) {
  std::string out = "MAPO_";
  for (char ch : key) {
    out += ch == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  }
  return out;
}

ExperimentConfig parse_config(const std::string& text, const std::string& origin,
                              bool apply_env) {
  ExperimentConfig cfg;
  std::map<std::string, int> seen;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (auto it = seen.find(key); it != seen.end()) {
      throw ConfigError(where + "duplicate key '" + key + "' (first set on line " +
                        std::to_string(it->second) + ")");
    }
    seen[key] = lineno;
    try {
      set_config_value(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  if (apply_env) {
    for (const auto& key : config_keys()) {
      const std::string var = env_var_for(key);
      if (const char* v = std::getenv(var.c_str())) {
        try {
          set_config_value(cfg, key, trim(v));
        } catch (const ConfigError& e) {
          throw ConfigError("environment " + var + ": " + e.what());
        }
      }
    }
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path, bool apply_env) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError(path + ": cannot open config file");
  std::ostringstream buf;
  buf << f.rdbuf();
  ExperimentConfig cfg = parse_config(buf.str(), path, apply_env);
  try {
    validate_config(cfg);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return cfg;
}

PolicyShape policy_shape(const ExperimentConfig& cfg, std::uint32_t prompt_slots) {
  PolicyShape s;
  s.mode = cfg.policy.mode;
  s.vocab = TaskVocab{cfg.policy.filler_tokens, cfg.policy.answer_tokens};
  s.max_len = cfg.policy.max_len;
  s.context_order = cfg.policy.context_order;
  s.prompt_slots = prompt_slots;
  return s;
}

TabularPolicy initial_policy(const ExperimentConfig& cfg, std::uint32_t prompt_slots) {
  const PolicyShape shape = policy_shape(cfg, prompt_slots);
  if (cfg.policy.random_init) return random_policy(shape, cfg.policy.init_scale, cfg.policy.init_seed);
  return TabularPolicy(shape);
}

void validate_config(const ExperimentConfig& cfg) {
  cfg.train.validate();
  if (cfg.policy.mode == DecodeMode::Unconstrained) {
    throw ConfigError("policy.mode unconstrained has no task grammar; use free, scaffold or forced");
  }
  policy_shape(cfg, static_cast<std::uint32_t>(cfg.curriculum.n_tasks)).validate();
  if (cfg.curriculum.file.empty()) {
    const auto a = cfg.policy.answer_tokens;
    if (cfg.curriculum.profile == CurriculumProfile::Bimodal && a < 4) {
      throw ConfigError("curriculum.profile bimodal needs policy.answer_tokens >= 4");
    }
    if (cfg.curriculum.profile == CurriculumProfile::Balanced && a % 2 != 0) {
      throw ConfigError("curriculum.profile balanced needs an even policy.answer_tokens");
    }
  }
  const int held = static_cast<int>(std::lround(cfg.curriculum.held_out_fraction * cfg.curriculum.n_tasks));
  if (cfg.curriculum.n_tasks - held < 1) {
    throw ConfigError("curriculum.held_out_fraction leaves no training tasks");
  }
}

std::string canonical_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& [key, field] : schema()) {
    if (!field.canonical) continue;
    out += key + " = " + field.get(cfg) + "\n";
  }
  return out;
}

}  // namespace mapo::cli
