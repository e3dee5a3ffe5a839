#include "mapo/cli/commands.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mapo/analysis.hpp"
#include "mapo/cli/config.hpp"
#include "mapo/cli/io.hpp"
#include "mapo/errors.hpp"

#ifndef MAPO_VERSION
#define MAPO_VERSION "0.0.0"
#endif

namespace mapo::cli {

namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

struct Experiment {
  ExperimentConfig cfg;
  std::vector<TaskInstance> train_tasks;
  std::vector<TaskInstance> held_out;
  std::uint32_t prompt_slots = 1;
  std::string curriculum_text;
  std::string hash;
};

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

void check_tasks(const std::vector<TaskInstance>& tasks, const TaskVocab& vocab) {
  for (const auto& t : tasks) {
    if (t.accepted.empty() && !vocab.is_answer(t.ground_truth)) {
      throw ConfigError("curriculum task " + std::to_string(t.prompt_id) +
                        " has a ground truth outside the answer tokens");
    }
    for (TokenId a : t.accepted) {
      if (!vocab.is_answer(a)) {
        throw ConfigError("curriculum task " + std::to_string(t.prompt_id) +
                          " accepts a token outside the answer tokens");
      }
    }
  }
}

std::string hash_of(const ExperimentConfig& cfg, const std::string& curriculum_text) {
  return sha256_hex(std::string("mapo_lab ") + MAPO_VERSION + "\n" + canonical_config(cfg) +
                    curriculum_text);
}

Experiment prepare(const std::string& config_path, const RunOptions& opts) {
  Experiment ex;
  ex.cfg = load_config(config_path);
  if (opts.seed) ex.cfg.train.seed = *opts.seed;
  if (opts.out_dir) ex.cfg.out_dir = *opts.out_dir;
  ex.cfg.train.jobs = std::max(1U, opts.jobs);

  const TaskVocab vocab{ex.cfg.policy.filler_tokens, ex.cfg.policy.answer_tokens};
  std::vector<TaskInstance> tasks;
  if (!ex.cfg.curriculum.file.empty()) {
    tasks = parse_curriculum_json(read_file(ex.cfg.curriculum.file));
    ex.cfg.curriculum.n_tasks = static_cast<int>(tasks.size());
  } else {
    tasks = make_curriculum(ex.cfg.curriculum.n_tasks, ex.cfg.curriculum.profile,
                            ex.cfg.curriculum.seed, vocab);
  }
  check_tasks(tasks, vocab);
  std::uint64_t max_id = 0;
  for (const auto& t : tasks) max_id = std::max(max_id, t.prompt_id);
  if (max_id >= (1U << 20)) throw ConfigError("curriculum prompt ids must be < 2^20");
  ex.prompt_slots = static_cast<std::uint32_t>(max_id + 1);
  policy_shape(ex.cfg, ex.prompt_slots).validate();

  const auto n = tasks.size();
  const auto held = static_cast<std::size_t>(
      std::lround(ex.cfg.curriculum.held_out_fraction * static_cast<double>(n)));
  if (held >= n) throw ConfigError("curriculum.held_out_fraction leaves no training tasks");
  ex.train_tasks.assign(tasks.begin(), tasks.end() - static_cast<std::ptrdiff_t>(held));
  ex.held_out.assign(tasks.end() - static_cast<std::ptrdiff_t>(held), tasks.end());
  ex.curriculum_text = curriculum_json(tasks);
  ex.hash = hash_of(ex.cfg, ex.curriculum_text);
  return ex;
}

ordered_json config_object(const ExperimentConfig& cfg) {
  ordered_json j = ordered_json::object();
  for (const auto& key : config_keys()) {
    if (key == "output.dir") continue;
    j[key] = get_config_value(cfg, key);
  }
  return j;
}

std::string fmt_opt(const std::optional<double>& x) { return x ? format_double(*x) : ""; }

struct RunOutcome {
  TrainResult result;
  EvalReport eval;
};

std::string groups_header() {
  return "step,group,prompt_id,success_count,mix_weight,rollout,reward,success,advantage,tokens";
}

// Trains one configuration and writes its artifacts into `dir`.
RunOutcome run_experiment(const Experiment& ex, const fs::path& dir, const std::string& command,
                          std::ostream& out) {
  fs::create_directories(dir);
  const TabularPolicy initial = initial_policy(ex.cfg, ex.prompt_slots);

  std::string groups_csv;
  StepObserver observer;
  if (ex.cfg.log_groups) {
    groups_csv = "# config_hash=" + ex.hash + "\n" + groups_header() + "\n";
    observer = [&groups_csv](const StepTrace& trace) {
      for (std::size_t g = 0; g < trace.groups.size(); ++g) {
        const auto& group = trace.groups[g];
        for (std::size_t i = 0; i < group.size(); ++i) {
          const auto& t = group.trajectories[i];
          std::string toks;
          for (TokenId tok : t.tokens) toks += (toks.empty() ? "" : " ") + std::to_string(tok);
          groups_csv += std::to_string(trace.step) + "," + std::to_string(g) + "," +
                        std::to_string(group.task.prompt_id) + "," +
                        std::to_string(trace.stats[g].success_count) + "," +
                        format_double(trace.stats[g].mix_weight) + "," + std::to_string(i) + "," +
                        format_double(t.reward) + "," + (t.success ? "1" : "0") + "," +
                        format_double(trace.advantages[g][i]) + "," + toks + "\n";
        }
      }
    };
  }

  RunOutcome outcome{train(ex.cfg.train, initial, ex.train_tasks, observer), {}};
  outcome.eval = eval_policy(outcome.result.policy, ex.train_tasks, ex.held_out,
                             ex.cfg.eval.samples_per_task, ex.cfg.eval.temperature,
                             ex.cfg.eval.seed, ex.cfg.train.reward, ex.cfg.train.jobs);

  const auto& records = outcome.result.records;
  write_file((dir / "metrics.csv").string(),
             metrics_csv(records, ex.cfg.train.group_size, ex.hash));
  write_file((dir / "policy.bin").string(), encode_policy(outcome.result.policy, ex.hash));
  write_file((dir / "curriculum.json").string(), ex.curriculum_text);
  std::vector<std::string> files = {"metrics.csv", "policy.bin", "curriculum.json"};
  if (ex.cfg.log_groups) {
    write_file((dir / "groups.csv").string(), groups_csv);
    files.push_back("groups.csv");
  }

  ordered_json m;
  m["tool"] = "mapo_lab";
  m["version"] = MAPO_VERSION;
  m["command"] = command;
  m["config_hash"] = ex.hash;
  m["config"] = config_object(ex.cfg);
  m["seeds"] = {{"train", ex.cfg.train.seed},
                {"curriculum", ex.cfg.curriculum.seed},
                {"eval", ex.cfg.eval.seed},
                {"policy_init", ex.cfg.policy.init_seed}};
  m["curriculum"] = {{"train_tasks", ex.train_tasks.size()}, {"held_out_tasks", ex.held_out.size()}};
  m["final"] = {{"success_rate", records.back().success_rate},
                {"mean_reward", records.back().mean_reward},
                {"a_s", outcome.eval.a_s},
                {"a_t", outcome.eval.a_t ? ordered_json(*outcome.eval.a_t) : ordered_json(nullptr)},
                {"a_bar", outcome.eval.a_bar}};
  files.push_back("manifest.json");
  m["outputs"] = files;
  write_file((dir / "manifest.json").string(), m.dump(2) + "\n");

  out << to_string(ex.cfg.train.estimator.kind) << ": " << records.size()
      << " steps, final success_rate " << format_double(records.back().success_rate) << ", A^S "
      << format_double(outcome.eval.a_s);
  if (outcome.eval.a_t) out << ", A^T " << format_double(*outcome.eval.a_t);
  out << " -> " << dir.string() << "\n";
  return outcome;
}

std::string summary_header() {
  return "estimator,steps,final_success_rate,final_mean_reward,a_s,a_t,a_bar";
}

std::string summary_row(const Experiment& ex, const RunOutcome& r) {
  const auto& last = r.result.records.back();
  return std::string(to_string(ex.cfg.train.estimator.kind)) + "," +
         std::to_string(ex.cfg.train.steps) + "," + format_double(last.success_rate) + "," +
         format_double(last.mean_reward) + "," + format_double(r.eval.a_s) + "," +
         fmt_opt(r.eval.a_t) + "," + format_double(r.eval.a_bar);
}

int numerical_abort(const NumericalError& e, const fs::path& dir, std::ostream& err) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  const auto path = dir / "nan_dump.txt";
  try {
    write_file(path.string(), e.dump());
    err << "error: " << e.what() << "\ngroup dump written to " << path.string() << "\n";
  } catch (const IoError&) {
    err << "error: " << e.what() << "\n" << e.dump();
  }
  return kExitNumerical;
}

// Shared error mapping for commands that read a config.
template <class Body>
int guarded(std::ostream& err, const fs::path& dump_dir, Body&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalidConfig;
  } catch (const InvalidGroupError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalidConfig;
  } catch (const NumericalError& e) {
    return numerical_abort(e, dump_dir, err);
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  }
}

fs::path dump_dir_guess(const RunOptions& opts) {
  return opts.out_dir ? fs::path(*opts.out_dir) : fs::path(".");
}

}  // namespace

int cmd_train(const std::string& config_path, const RunOptions& opts, std::ostream& out,
              std::ostream& err) {
  fs::path dir = dump_dir_guess(opts);
  return guarded(err, dir, [&] {
    Experiment ex = prepare(config_path, opts);
    dir = ex.cfg.out_dir;
    try {
      run_experiment(ex, dir, "train", out);
    } catch (const NumericalError& e) {
      return numerical_abort(e, dir, err);
    }
    return static_cast<int>(kExitOk);
  });
}

int cmd_compare(const std::string& config_path, const std::vector<std::string>& estimators,
                const RunOptions& opts, std::ostream& out, std::ostream& err) {
  fs::path dir = dump_dir_guess(opts);
  return guarded(err, dir, [&] {
    std::vector<EstimatorKind> kinds;
    std::set<EstimatorKind> seen;
    for (const auto& name : estimators) {
      std::optional<EstimatorKind> kind;
      for (auto k : {EstimatorKind::GRPO, EstimatorKind::DrGRPO, EstimatorKind::GPG,
                     EstimatorKind::TreeRPO, EstimatorKind::APD, EstimatorKind::MAPO}) {
        if (lower(std::string(to_string(k))) == lower(name)) kind = k;
      }
      if (!kind) throw ConfigError("--estimators: unknown estimator '" + name + "'");
      if (!seen.insert(*kind).second) {
        throw ConfigError("--estimators: duplicate estimator '" + name + "'");
      }
      kinds.push_back(*kind);
    }
    if (kinds.size() < 2) throw ConfigError("--estimators needs at least two estimators");

    const Experiment base = prepare(config_path, opts);
    dir = base.cfg.out_dir;
    std::string joined;
    for (auto k : kinds) joined += std::string(joined.empty() ? "" : ",") + std::string(to_string(k));
    const std::string hash = sha256_hex(base.hash + "\ncompare " + joined + "\n");

    std::string merged = "# config_hash=" + hash + "\nestimator," +
                         metrics_header(base.cfg.train.group_size) + "\n";
    std::string summary = "# config_hash=" + hash + "\n" + summary_header() + "\n";
    for (auto kind : kinds) {
      Experiment ex = base;
      ex.cfg.train.estimator.kind = kind;
      ex.hash = hash_of(ex.cfg, ex.curriculum_text);
      const fs::path sub = dir / std::string(to_string(kind));
      std::optional<RunOutcome> run;
      try {
        run.emplace(run_experiment(ex, sub, "compare", out));
      } catch (const NumericalError& e) {
        return numerical_abort(e, sub, err);
      }
      const RunOutcome& r = *run;
      for (const auto& rec : r.result.records) {
        merged += std::string(to_string(kind)) + "," + metrics_row(rec) + "\n";
      }
      summary += summary_row(ex, r) + "\n";
    }
    write_file((dir / "metrics.csv").string(), merged);
    write_file((dir / "summary.csv").string(), summary);
    out << "merged metrics and summary -> " << dir.string() << "\n";
    return static_cast<int>(kExitOk);
  });
}

int cmd_verify(const RunOptions& opts, std::ostream& out, std::ostream& err) {
  VerifyOptions vo;
  vo.jobs = std::max(1U, opts.jobs);
  if (opts.inject_fault == "lambda-sign") {
    vo.mix = [](double p) { return -certainty_mix_weight(p); };
  } else if (!opts.inject_fault.empty()) {
    err << "error: unknown fault '" << opts.inject_fault << "' (expected lambda-sign)\n";
    return kExitInvalidConfig;
  }
  const fs::path dir = opts.out_dir ? fs::path(*opts.out_dir) : fs::path("runs/verify");
  const std::string hash = sha256_hex(std::string("mapo_lab ") + MAPO_VERSION +
                                      "\nverify\ninject=" + opts.inject_fault + "\n");
  const VerifyReport report = run_verification(vo);

  std::string checks_csv = "# config_hash=" + hash + "\nname,pass,measured,expected,criterion\n";
  int failed = 0;
  for (const auto& c : report.checks) {
    out << (c.pass ? "PASS " : "FAIL ") << c.name << " measured=" << format_double(c.measured)
        << " expected=" << format_double(c.expected) << " (" << c.criterion << ")\n";
    checks_csv += c.name + "," + (c.pass ? "1" : "0") + "," + format_double(c.measured) + "," +
                  format_double(c.expected) + ",\"" + c.criterion + "\"\n";
    failed += c.pass ? 0 : 1;
  }

  std::string rho_csv = "# config_hash=" + hash + "\np,rho_closed_form,rho_empirical\n";
  for (std::size_t i = 0; i < report.rho.p.size(); ++i) {
    rho_csv += format_double(report.rho.p[i]) + "," + format_double(report.rho.rho_closed_form[i]) +
               "," +
               (i < report.rho.rho_empirical.size() ? format_double(report.rho.rho_empirical[i])
                                                    : std::string()) +
               "\n";
  }
  std::string ratio_csv = "# config_hash=" + hash + "\nG,N,grpo_norm,mapo_norm,ratio,expected,rel_error\n";
  for (const auto& r : report.ratio_sweep) {
    ratio_csv += std::to_string(r.group_size) + "," + std::to_string(r.successes) + "," +
                 format_double(r.grpo_norm) + "," + format_double(r.mapo_norm) + "," +
                 format_double(r.ratio) + "," + format_double(r.expected) + "," +
                 format_double(r.rel_error) + "\n";
  }
  std::string path_csv = "# config_hash=" + hash + "\nbatch,estimator,rewards,advantages\n";
  for (const auto& row : report.pathology.table) {
    auto join = [](const std::vector<double>& xs) {
      std::string s;
      for (double x : xs) s += (s.empty() ? "" : " ") + format_double(x);
      return s;
    };
    path_csv += row.batch + "," + std::string(to_string(row.estimator)) + "," + join(row.rewards) +
                "," + join(row.advantages) + "\n";
  }
  try {
    fs::create_directories(dir);
    write_file((dir / "verify.csv").string(), checks_csv);
    write_file((dir / "rho.csv").string(), rho_csv);
    write_file((dir / "gradient_ratio.csv").string(), ratio_csv);
    write_file((dir / "pathology.csv").string(), path_csv);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  }
  out << (failed == 0 ? "all " : "") << report.checks.size() - failed << "/"
      << report.checks.size() << " checks passed -> " << dir.string() << "\n";
  return failed == 0 ? kExitOk : kExitCheckFailed;
}

int cmd_eval(const std::string& config_path, const std::string& policy_path,
             const RunOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, dump_dir_guess(opts), [&] {
    const Experiment ex = prepare(config_path, opts);
    std::string policy_hash;
    TabularPolicy policy = [&] {
      try {
        return decode_policy(read_file(policy_path), &policy_hash);
      } catch (const IoError& e) {
        throw ConfigError(policy_path + ": " + e.what());
      }
    }();
    if (!(policy.shape() == policy_shape(ex.cfg, ex.prompt_slots))) {
      throw ConfigError(policy_path + ": policy shape does not match the config");
    }
    const EvalReport r = eval_policy(policy, ex.train_tasks, ex.held_out,
                                     ex.cfg.eval.samples_per_task, ex.cfg.eval.temperature,
                                     ex.cfg.eval.seed, ex.cfg.train.reward, ex.cfg.train.jobs);
    const fs::path dir = ex.cfg.out_dir;
    fs::create_directories(dir);
    const std::string hash = sha256_hex(ex.hash + "\neval " + policy_hash + " " +
                                        sha256_hex(encode_policy(policy, policy_hash)) + "\n");
    std::string csv = "# config_hash=" + hash + "\nsplit,task,prompt_id,success_rate\n";
    for (std::size_t k = 0; k < r.in_domain_rates.size(); ++k) {
      csv += "in_domain," + std::to_string(k) + "," + std::to_string(ex.train_tasks[k].prompt_id) +
             "," + format_double(r.in_domain_rates[k]) + "\n";
    }
    for (std::size_t k = 0; k < r.held_out_rates.size(); ++k) {
      csv += "held_out," + std::to_string(k) + "," + std::to_string(ex.held_out[k].prompt_id) +
             "," + format_double(r.held_out_rates[k]) + "\n";
    }
    csv += "mean,a_s,," + format_double(r.a_s) + "\n";
    if (r.a_t) csv += "mean,a_t,," + format_double(*r.a_t) + "\n";
    csv += "mean,a_bar,," + format_double(r.a_bar) + "\n";
    write_file((dir / "summary.csv").string(), csv);
    out << "A^S " << format_double(r.a_s);
    if (r.a_t) out << "  A^T " << format_double(*r.a_t);
    out << "  A_bar " << format_double(r.a_bar) << " -> " << (dir / "summary.csv").string() << "\n";
    return static_cast<int>(kExitOk);
  });
}

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Group-relative policy optimization lab: train, compare, verify, eval"};
  app.require_subcommand(1);
  app.set_version_flag("--version", MAPO_VERSION);

  RunOptions opts;
  std::uint64_t seed = 0;
  std::string out_dir;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "Override train.seed");
    sub->add_option("--jobs", opts.jobs, "Worker threads (results do not depend on it)")
        ->check(CLI::Range(1U, 1024U));
    sub->add_option("--out-dir", out_dir, "Override output.dir");
  };

  std::string config_path, policy_path, estimators;
  auto* train_cmd = app.add_subcommand("train", "Train one run from a config file");
  train_cmd->add_option("config", config_path, "Config file")->required();
  add_common(train_cmd);

  auto* compare_cmd = app.add_subcommand("compare", "Train one run per estimator and merge the results");
  compare_cmd->add_option("config", config_path, "Config file")->required();
  compare_cmd->add_option("--estimators", estimators, "Comma-separated estimator kinds")->required();
  add_common(compare_cmd);

  auto* verify_cmd = app.add_subcommand("verify", "Run the analysis checks");
  add_common(verify_cmd);
  verify_cmd->add_option("--inject-fault", opts.inject_fault,
                         "Mutation smoke test: lambda-sign flips the certainty weight");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a saved policy");
  eval_cmd->add_option("config", config_path, "Config file")->required();
  eval_cmd->add_option("--policy", policy_path, "policy.bin file")->required();
  add_common(eval_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion& e) {
    out << MAPO_VERSION << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalidConfig;
  }

  for (auto* sub : {train_cmd, compare_cmd, verify_cmd, eval_cmd}) {
    if (sub->count("--seed") > 0) opts.seed = seed;
    if (sub->count("--out-dir") > 0) opts.out_dir = out_dir;
  }

  if (*train_cmd) return cmd_train(config_path, opts, out, err);
  if (*compare_cmd) {
    std::vector<std::string> names;
    std::stringstream ss(estimators);
    for (std::string item; std::getline(ss, item, ',');) {
      const auto b = item.find_first_not_of(' ');
      const auto e = item.find_last_not_of(' ');
      if (b != std::string::npos) names.push_back(item.substr(b, e - b + 1));
    }
    return cmd_compare(config_path, names, opts, out, err);
  }
  if (*verify_cmd) return cmd_verify(opts, out, err);
  return cmd_eval(config_path, policy_path, opts, out, err);
}

}  // namespace mapo::cli
