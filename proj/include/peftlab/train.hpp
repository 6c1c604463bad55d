#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "peftlab/encoder.hpp"
#include "peftlab/peft.hpp"
#include "peftlab/tasks.hpp"

namespace peftlab {

struct OptimConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int steps = 200;
  int batch_size = 8;

  void validate() const;
};

// Name -> tensor lookup over every parameter a run can touch.
class ParamRegistry {
 public:
  void add(const std::string& name, Tensor* t);
  Tensor* find(const std::string& name) const;
  const std::vector<std::pair<std::string, Tensor*>>& entries() const { return entries_; }
  std::vector<NamedShape> shapes() const;

 private:
  std::vector<std::pair<std::string, Tensor*>> entries_;
};

ParamRegistry build_registry(EncoderParams& enc, MethodState& state, HeadParams& head);

struct AdamState {
  std::map<std::string, std::pair<Tensor, Tensor>> moments;
  long long t = 0;
};

// One bias-corrected update over the plan's trainable set. Returns false and
// leaves parameters, moments and the step count untouched when any trainable
// gradient is non-finite.
bool adam_step(const ParamRegistry& reg, const FreezePlan& plan, AdamState& state,
               const OptimConfig& cfg);

struct RunResult {
  std::string method;
  std::string task;
  std::uint64_t seed = 0;
  double fraction = 1.0;
  double lr = 0.0;
  long long trainable_upstream = 0;
  long long trainable_total = 0;
  std::vector<std::pair<int, double>> loss_trace;
  std::string metric_name;
  double metric_value = 0.0;
  bool diverged = false;
};

// Everything a finished run owns; exposed for persistence and audits.
struct TrainedModel {
  EncoderParams enc;
  MethodState state;
  HeadParams head;
};

RunResult train_run(const EncoderParams& upstream, const MethodConfig& method,
                    const TaskSpec& task, const Dataset& data, const OptimConfig& optim,
                    std::uint64_t seed, TrainedModel* out_model = nullptr);

double evaluate_model(EncoderParams& enc, MethodState& state, const MethodConfig& method,
                      const TaskSpec& task, HeadParams& head, const std::vector<DataItem>& items);

double mean_of(const std::vector<double>& xs);
double population_std(const std::vector<double>& xs);

struct SweepCell {
  std::vector<double> samples;
  double mean = 0.0;
  double stdev = 0.0;
};

struct SweepTable {
  std::string column_label;
  std::vector<std::string> methods;
  std::vector<double> columns;
  std::vector<std::vector<SweepCell>> cells;  // [method][column]
  std::vector<RunResult> runs;
};

SweepTable lr_sweep(const EncoderParams& upstream, const std::vector<MethodConfig>& methods,
                    const TaskSpec& task, const Dataset& data, const OptimConfig& optim,
                    const std::vector<double>& lrs, const std::vector<std::uint64_t>& seeds,
                    int workers = 1);

SweepTable low_resource_experiment(const EncoderParams& upstream,
                                   const std::vector<MethodConfig>& methods, const TaskSpec& task,
                                   const Dataset& data, const OptimConfig& optim,
                                   const std::vector<double>& fractions,
                                   const std::vector<std::uint64_t>& seeds, int workers = 1);

}  // namespace peftlab
