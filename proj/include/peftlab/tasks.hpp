#pragma once

#include <string>
#include <vector>

#include "peftlab/encoder.hpp"

namespace peftlab {

enum class TaskKind { UtteranceCls, FrameCtc, Diarization };

enum class MetricKind { Accuracy, TokenErrorRate, FrameError };

std::string metric_name(MetricKind m);
bool metric_higher_better(MetricKind m);
// Pinned value reported for diverged runs: the worst possible score.
double metric_worst(MetricKind m);

struct TaskSpec {
  TaskKind kind = TaskKind::UtteranceCls;
  int n_classes = 4;      // UtteranceCls
  int vocab_size = 6;     // FrameCtc, includes blank id 0
  int max_label_len = 8;  // FrameCtc
  static constexpr int kSpeakers = 2;

  std::string name() const;
  MetricKind metric() const;
  int head_width() const;  // output dimension of the linear head
  void validate() const;
};

TaskKind task_from_name(const std::string& name);

struct DataItem {
  Tensor features;         // frames x d_input
  int label = -1;          // UtteranceCls
  std::vector<int> seq;    // FrameCtc reference labels
  Tensor activity;         // frames x 2, {0,1} speaker activity
};

struct Dataset {
  TaskSpec spec;
  int frames = 0;
  int d_input = 0;
  std::uint64_t seed = 0;
  std::vector<DataItem> train, test;
};

struct GenSizes {
  int n_train = 512;
  int n_test = 256;
  int frames = 32;
  int d_input = 16;
  double noise = 1.0;
};

// Seeded synthetic data. Class/symbol/speaker identities are fixed random
// template directions; frames are templates plus Gaussian noise.
Dataset gen_task(const TaskSpec& spec, const GenSizes& sizes, std::uint64_t seed);

// Sequences for self-supervised pretraining: each item has its own random
// template direction.
std::vector<Tensor> gen_pretrain_corpus(int items, int frames, int d_input, double noise,
                                        std::uint64_t seed);

// Deterministic subsample (without replacement, original order kept) of the
// training split; the test split is untouched. fraction = 1 is the identity.
Dataset low_resource_split(const Dataset& data, double fraction, std::uint64_t seed);

// Losses. Each returns a scalar node.
ValueId cross_entropy(Graph& g, ValueId logits, int target);
// log_probs is [T x V] of per-frame log-distributions; blank id is 0 and
// labels must not contain it. Marginalizes over all alignments.
ValueId ctc_loss(Graph& g, ValueId log_probs, const std::vector<int>& labels);
// Permutation-invariant binary cross-entropy over two speaker channels:
// the better of the two column permutations of `activity`.
ValueId pit_loss(Graph& g, ValueId logits, const Tensor& activity);

// Frame-wise argmax (ties toward the lower id), collapse repeats, drop
// blanks.
std::vector<int> ctc_greedy_decode(const Tensor& log_probs);

// Edit distance (substitution, insertion, deletion all cost 1) divided by
// the reference length. The reference must be nonempty.
double token_error_rate(const std::vector<int>& hyp, const std::vector<int>& ref);

// Minimum frames a CTC alignment of `labels` needs (length plus adjacent
// repeats).
int ctc_min_frames(const std::vector<int>& labels);

struct HeadParams {
  Tensor w, b;
  static HeadParams init(const TaskSpec& task, const EncoderConfig& enc, Rng& rng);
};

std::vector<NamedShape> head_param_shapes(const TaskSpec& task, const EncoderConfig& enc);

// Task logits from a [T x d_model] representation: mean-pooled [1 x C] for
// classification, frame-wise [T x C] otherwise.
ValueId head_logits(Graph& g, Binder& bind, const TaskSpec& task, HeadParams& head, ValueId rep);

// Training loss of one item through the task head.
ValueId item_loss(Graph& g, Binder& bind, const TaskSpec& task, HeadParams& head, ValueId rep,
                  const DataItem& item);

}  // namespace peftlab
