#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "peftlab/config.hpp"

namespace peftlab {

struct CliOptions {
  std::string config_path;      // empty: built-in defaults
  std::string checkpoint_path;  // run and sweep
  std::string out_dir;          // overrides the config's out_dir
  std::optional<std::uint64_t> seed;
  int workers = 1;
  std::string mode = "lr";  // sweep: lr | lowresource
  std::vector<std::string> csv_paths;
};

// Each command returns a process exit code and writes human output to `out`.
// Errors surface as exceptions; main() turns them into nonzero exits.
int cmd_pretrain(const CliOptions& opt, std::ostream& out);
int cmd_run(const CliOptions& opt, std::ostream& out);
int cmd_count_params(const CliOptions& opt, std::ostream& out);
int cmd_sweep(const CliOptions& opt, std::ostream& out);
int cmd_report(const CliOptions& opt, std::ostream& out);

}  // namespace peftlab
