#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace mapo::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitCheckFailed = 1,    // verify: at least one check failed
  kExitInvalidConfig = 2,  // bad config, flags or input files
  kExitNumerical = 3,      // non-finite loss or gradient during training
  kExitIo = 4,             // cannot write outputs
};

struct RunOptions {
  std::optional<std::uint64_t> seed;     // overrides train.seed
  std::optional<std::string> out_dir;    // overrides output.dir
  unsigned jobs = 1;
  std::string inject_fault;              // verify only: "" or "lambda-sign"
};

int cmd_train(const std::string& config_path, const RunOptions& opts, std::ostream& out,
              std::ostream& err);
int cmd_compare(const std::string& config_path, const std::vector<std::string>& estimators,
                const RunOptions& opts, std::ostream& out, std::ostream& err);
int cmd_verify(const RunOptions& opts, std::ostream& out, std::ostream& err);
int cmd_eval(const std::string& config_path, const std::string& policy_path,
             const RunOptions& opts, std::ostream& out, std::ostream& err);

// Full command line (argv[0] included); returns the process exit code.
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace mapo::cli
