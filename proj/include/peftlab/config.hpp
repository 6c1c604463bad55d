#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "peftlab/peft.hpp"
#include "peftlab/tasks.hpp"
#include "peftlab/train.hpp"

namespace peftlab {

struct PretrainConfig {
  int corpus_items = 64;
  int frames = 32;
  double noise = 0.5;
  double mask_frac = 0.25;
  double lr = 1e-3;
  int steps = 300;
  int batch_size = 8;
  std::uint64_t seed = 7;

  void validate() const;
};

// Task family plus generator sizes; d_input always comes from the encoder.
struct TaskGenConfig {
  std::string name = "utterance_cls";
  int n_classes = 4;
  int vocab_size = 6;
  int max_label_len = 8;
  int train_items = 512;
  int test_items = 256;
  int frames = 32;
  double noise = 1.0;
  std::uint64_t seed = 11;

  TaskSpec spec() const;
  GenSizes sizes(const EncoderConfig& enc) const;
  void validate() const;
};

struct SweepConfig {
  std::vector<std::string> methods = {"full_ft", "head_only", "houlsby", "adapter_bias"};
  std::vector<double> lrs = {5e-6, 5e-5, 5e-4, 5e-3};
  std::vector<double> fractions = {1.0, 0.1, 0.01};
  std::vector<std::uint64_t> seeds = {1, 2, 3};

  // The base method config with the kind switched per listed name.
  std::vector<MethodConfig> method_configs(const MethodConfig& base) const;
  void validate() const;
};

struct HarnessConfig {
  EncoderConfig encoder;
  PretrainConfig pretrain;
  MethodConfig method;
  TaskGenConfig task;
  OptimConfig optim;
  SweepConfig sweep;
  std::uint64_t seed = 1;
  std::string out_dir = "out";

  void validate() const;
};

// Strict parse: every key must be recognized; offending keys are named with
// their full path. All fields are optional and default as above.
HarnessConfig parse_config(const std::string& text);
HarnessConfig load_config(const std::string& path);

// Canonical emission: sorted keys, two-space indent, round-trips through
// parse_config.
std::string config_to_text(const HarnessConfig& cfg);

}  // namespace peftlab
