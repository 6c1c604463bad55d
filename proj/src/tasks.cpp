#include "peftlab/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace peftlab {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double logsumexp2(double a, double b) {
  const double m = std::max(a, b);
  if (m == kNegInf) return kNegInf;
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

Tensor gaussian_template(int d, Rng& rng) {
  Tensor t(Shape{static_cast<Index>(d)});
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.normal();
  return t;
}

void add_noisy_template_rows(Tensor& features, Index r0, Index r1, const Tensor& tmpl,
                             double noise, Rng& rng) {
  for (Index r = r0; r < r1; ++r) {
    for (Index c = 0; c < features.cols(); ++c) {
      features.at(r, c) = tmpl[c] + noise * rng.normal();
    }
  }
}

}  // namespace

std::string metric_name(MetricKind m) {
  switch (m) {
    case MetricKind::Accuracy: return "accuracy";
    case MetricKind::TokenErrorRate: return "ter";
    case MetricKind::FrameError: return "frame_error";
  }
  throw ConfigError("metric_name: unknown metric");
}

bool metric_higher_better(MetricKind m) { return m == MetricKind::Accuracy; }

double metric_worst(MetricKind m) { return m == MetricKind::Accuracy ? 0.0 : 1.0; }

std::string TaskSpec::name() const {
  switch (kind) {
    case TaskKind::UtteranceCls: return "utterance_cls";
    case TaskKind::FrameCtc: return "frame_ctc";
    case TaskKind::Diarization: return "diarization";
  }
  throw ConfigError("TaskSpec: unknown task kind");
}

TaskKind task_from_name(const std::string& name) {
  if (name == "utterance_cls") return TaskKind::UtteranceCls;
  if (name == "frame_ctc") return TaskKind::FrameCtc;
  if (name == "diarization") return TaskKind::Diarization;
  throw ConfigError("unknown task name: \"" + name + "\"");
}

MetricKind TaskSpec::metric() const {
  switch (kind) {
    case TaskKind::UtteranceCls: return MetricKind::Accuracy;
    case TaskKind::FrameCtc: return MetricKind::TokenErrorRate;
    case TaskKind::Diarization: return MetricKind::FrameError;
  }
  throw ConfigError("TaskSpec: unknown task kind");
}

int TaskSpec::head_width() const {
  switch (kind) {
    case TaskKind::UtteranceCls: return n_classes;
    case TaskKind::FrameCtc: return vocab_size;
    case TaskKind::Diarization: return kSpeakers;
  }
  throw ConfigError("TaskSpec: unknown task kind");
}

void TaskSpec::validate() const {
  switch (kind) {
    case TaskKind::UtteranceCls:
      if (n_classes < 2) throw ConfigError("task.n_classes must be at least 2");
      break;
    case TaskKind::FrameCtc:
      if (vocab_size < 2) throw ConfigError("task.vocab_size must be at least 2 (blank plus one)");
      if (max_label_len < 1) throw ConfigError("task.max_label_len must be at least 1");
      break;
    case TaskKind::Diarization:
      break;
  }
}

Dataset gen_task(const TaskSpec& spec, const GenSizes& sizes, std::uint64_t seed) {
  spec.validate();
  if (sizes.n_train < 1 || sizes.n_test < 1) throw ConfigError("task: need n_train, n_test >= 1");
  if (sizes.frames < 1) throw ConfigError("task.frames must be at least 1");
  if (sizes.d_input < 1) throw ConfigError("task.d_input must be at least 1");
  if (sizes.noise < 0) throw ConfigError("task.noise must be nonnegative");
  Rng rng(mix_seed(seed, kStreamData));
  Dataset data;
  data.spec = spec;
  data.frames = sizes.frames;
  data.d_input = sizes.d_input;
  data.seed = seed;
  const int total = sizes.n_train + sizes.n_test;
  const Index frames = sizes.frames;

  std::vector<Tensor> templates;
  int n_templates = 0;
  switch (spec.kind) {
    case TaskKind::UtteranceCls: n_templates = spec.n_classes; break;
    case TaskKind::FrameCtc: n_templates = spec.vocab_size - 1; break;
    case TaskKind::Diarization: n_templates = TaskSpec::kSpeakers; break;
  }
  templates.reserve(static_cast<std::size_t>(n_templates));
  for (int i = 0; i < n_templates; ++i) templates.push_back(gaussian_template(sizes.d_input, rng));

  for (int i = 0; i < total; ++i) {
    DataItem item;
    item.features = Tensor(Shape{frames, sizes.d_input});
    switch (spec.kind) {
      case TaskKind::UtteranceCls: {
        item.label = i % spec.n_classes;
        add_noisy_template_rows(item.features, 0, frames,
                                templates[static_cast<std::size_t>(item.label)], sizes.noise, rng);
        break;
      }
      case TaskKind::FrameCtc: {
        const int max_len = std::min<int>(spec.max_label_len, sizes.frames);
        // With a single non-blank symbol any longer sequence would repeat.
        const int len_cap = spec.vocab_size == 2 ? 1 : max_len;
        const int len = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(len_cap)));
        item.seq.resize(static_cast<std::size_t>(len));
        item.seq[0] = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.vocab_size - 1)));
        for (int s = 1; s < len; ++s) {
          int draw = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.vocab_size - 2)));
          if (draw >= item.seq[static_cast<std::size_t>(s - 1)]) ++draw;
          item.seq[static_cast<std::size_t>(s)] = draw;
        }
        std::vector<int> cuts = rng.sample(sizes.frames - 1, len - 1);
        for (int& c : cuts) ++c;
        cuts.push_back(sizes.frames);
        Index r0 = 0;
        for (int s = 0; s < len; ++s) {
          const Index r1 = cuts[static_cast<std::size_t>(s)];
          add_noisy_template_rows(item.features, r0, r1,
                                  templates[static_cast<std::size_t>(item.seq[static_cast<std::size_t>(s)] - 1)],
                                  sizes.noise, rng);
          r0 = r1;
        }
        break;
      }
      case TaskKind::Diarization: {
        item.activity = Tensor(Shape{frames, TaskSpec::kSpeakers});
        for (int s = 0; s < TaskSpec::kSpeakers; ++s) {
          int on = rng.uniform() < 0.5 ? 1 : 0;
          for (Index t = 0; t < frames; ++t) {
            if (rng.uniform() < 0.2) on = 1 - on;
            item.activity.at(t, s) = on;
          }
        }
        for (Index t = 0; t < frames; ++t) {
          for (Index c = 0; c < sizes.d_input; ++c) {
            double v = sizes.noise * rng.normal();
            for (int s = 0; s < TaskSpec::kSpeakers; ++s) {
              if (item.activity.at(t, s) != 0.0) v += templates[static_cast<std::size_t>(s)][c];
            }
            item.features.at(t, c) = v;
          }
        }
        break;
      }
    }
    if (i < sizes.n_train) {
      data.train.push_back(std::move(item));
    } else {
      data.test.push_back(std::move(item));
    }
  }
  return data;
}

std::vector<Tensor> gen_pretrain_corpus(int items, int frames, int d_input, double noise,
                                        std::uint64_t seed) {
  if (items < 1) throw ConfigError("pretrain.corpus_items must be at least 1");
  if (frames < 1) throw ConfigError("pretrain.corpus_len must be at least 1");
  if (d_input < 1) throw ConfigError("pretrain: d_input must be at least 1");
  Rng rng(mix_seed(seed, kStreamData));
  std::vector<Tensor> corpus;
  corpus.reserve(static_cast<std::size_t>(items));
  for (int i = 0; i < items; ++i) {
    const Tensor tmpl = gaussian_template(d_input, rng);
    Tensor seq(Shape{frames, d_input});
    add_noisy_template_rows(seq, 0, frames, tmpl, noise, rng);
    corpus.push_back(std::move(seq));
  }
  return corpus;
}

Dataset low_resource_split(const Dataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("fraction must lie in (0, 1], got " + std::to_string(fraction));
  }
  const int n = static_cast<int>(data.train.size());
  const int m = static_cast<int>(std::ceil(fraction * n));
  Rng rng(mix_seed(seed, kStreamData + 11));
  const std::vector<int> keep = rng.sample(n, m);
  Dataset out;
  out.spec = data.spec;
  out.frames = data.frames;
  out.d_input = data.d_input;
  out.seed = data.seed;
  out.test = data.test;
  out.train.reserve(keep.size());
  for (int idx : keep) out.train.push_back(data.train[static_cast<std::size_t>(idx)]);
  return out;
}

ValueId cross_entropy(Graph& g, ValueId logits, int target) {
  const Tensor& z = g.value(logits);
  const Index n = z.size();
  if (target < 0 || target >= n) {
    throw LabelError("cross_entropy: target " + std::to_string(target) + " out of range for " +
                     std::to_string(n) + " classes");
  }
  ConstVecMap zv = z.vec();
  const double m = zv.maxCoeff();
  const double lse = m + std::log((zv.array() - m).exp().sum());
  const double loss = lse - zv(target);
  return g.append(Tensor::scalar(loss), {logits}, [logits, target](Graph& g, ValueId self) {
    if (!g.requires_grad(logits)) return;
    const double d = g.grad_vec(self)(0);
    ConstVecMap zv = g.value(logits).vec();
    const double m = zv.maxCoeff();
    Eigen::VectorXd soft = (zv.array() - m).exp();
    soft /= soft.sum();
    soft(target) -= 1.0;
    g.grad_acc_vec(logits) += d * soft;
  });
}

int ctc_min_frames(const std::vector<int>& labels) {
  int repeats = 0;
  for (std::size_t i = 1; i < labels.size(); ++i) {
    if (labels[i] == labels[i - 1]) ++repeats;
  }
  return static_cast<int>(labels.size()) + repeats;
}

namespace {

// Augmented CTC state sequence: blank, l0, blank, l1, ..., blank.
inline int aug_label(const std::vector<int>& labels, Index s) {
  return (s % 2 == 0) ? 0 : labels[static_cast<std::size_t>(s / 2)];
}

struct CtcAlpha {
  RowMat alpha;  // T x S, log domain
  double log_p = kNegInf;
};

CtcAlpha ctc_alpha(ConstMatMap lp, const std::vector<int>& labels) {
  const Index T = lp.rows();
  const Index S = 2 * static_cast<Index>(labels.size()) + 1;
  CtcAlpha out;
  out.alpha = RowMat::Constant(T, S, kNegInf);
  out.alpha(0, 0) = lp(0, 0);
  if (S > 1) out.alpha(0, 1) = lp(0, aug_label(labels, 1));
  for (Index t = 1; t < T; ++t) {
    for (Index s = 0; s < S; ++s) {
      const int sym = aug_label(labels, s);
      double acc = out.alpha(t - 1, s);
      if (s >= 1) acc = logsumexp2(acc, out.alpha(t - 1, s - 1));
      if (s >= 2 && sym != 0 && sym != aug_label(labels, s - 2)) {
        acc = logsumexp2(acc, out.alpha(t - 1, s - 2));
      }
      out.alpha(t, s) = acc + lp(t, sym);
    }
  }
  out.log_p = S > 1 ? logsumexp2(out.alpha(T - 1, S - 1), out.alpha(T - 1, S - 2))
                    : out.alpha(T - 1, 0);
  return out;
}

RowMat ctc_beta(ConstMatMap lp, const std::vector<int>& labels) {
  const Index T = lp.rows();
  const Index S = 2 * static_cast<Index>(labels.size()) + 1;
  RowMat beta = RowMat::Constant(T, S, kNegInf);
  beta(T - 1, S - 1) = lp(T - 1, aug_label(labels, S - 1));
  if (S > 1) beta(T - 1, S - 2) = lp(T - 1, aug_label(labels, S - 2));
  for (Index t = T - 2; t >= 0; --t) {
    for (Index s = 0; s < S; ++s) {
      const int sym = aug_label(labels, s);
      double acc = beta(t + 1, s);
      if (s + 1 < S) acc = logsumexp2(acc, beta(t + 1, s + 1));
      if (s + 2 < S && aug_label(labels, s + 2) != 0 && aug_label(labels, s + 2) != sym) {
        acc = logsumexp2(acc, beta(t + 1, s + 2));
      }
      beta(t, s) = acc + lp(t, sym);
    }
  }
  return beta;
}

}  // namespace

ValueId ctc_loss(Graph& g, ValueId log_probs, const std::vector<int>& labels) {
  const Tensor& lpt = g.value(log_probs);
  if (lpt.rank() != 2) throw ShapeError("ctc_loss: log_probs must be rank 2");
  const Index T = lpt.rows();
  const Index V = lpt.cols();
  if (V < 2) throw ShapeError("ctc_loss: vocabulary must include blank plus one symbol");
  for (int l : labels) {
    if (l == 0) throw LabelError("ctc_loss: labels must not contain the blank id 0");
    if (l < 0 || l >= V) {
      throw LabelError("ctc_loss: label " + std::to_string(l) + " out of range for vocabulary " +
                       std::to_string(V));
    }
  }
  const int needed = ctc_min_frames(labels);
  if (T < needed) {
    throw LabelError("ctc_loss: " + std::to_string(labels.size()) + " labels need at least " +
                     std::to_string(needed) + " frames, got " + std::to_string(T));
  }
  const CtcAlpha fwd = ctc_alpha(lpt.mat(), labels);
  auto lab = std::make_shared<std::vector<int>>(labels);
  return g.append(Tensor::scalar(-fwd.log_p), {log_probs},
                  [log_probs, lab](Graph& g, ValueId self) {
                    if (!g.requires_grad(log_probs)) return;
                    const double d = g.grad_vec(self)(0);
                    ConstMatMap lp = g.value(log_probs).mat();
                    const CtcAlpha fwd = ctc_alpha(lp, *lab);
                    const RowMat beta = ctc_beta(lp, *lab);
                    const Index T = lp.rows();
                    const Index V = lp.cols();
                    const Index S = 2 * static_cast<Index>(lab->size()) + 1;
                    MatMap acc = g.grad_acc_mat(log_probs);
                    for (Index t = 0; t < T; ++t) {
                      // log of the path mass emitting symbol k at frame t
                      Eigen::VectorXd occ = Eigen::VectorXd::Constant(V, kNegInf);
                      for (Index s = 0; s < S; ++s) {
                        const double ab = fwd.alpha(t, s) + beta(t, s);
                        if (!std::isfinite(ab)) continue;
                        const int sym = aug_label(*lab, s);
                        occ(sym) = logsumexp2(occ(sym), ab - lp(t, sym));
                      }
                      for (Index k = 0; k < V; ++k) {
                        if (occ(k) == kNegInf) continue;
                        acc(t, k) -= d * std::exp(occ(k) - fwd.log_p);
                      }
                    }
                  });
}

ValueId pit_loss(Graph& g, ValueId logits, const Tensor& activity) {
  const Tensor& z = g.value(logits);
  if (z.rank() != 2 || z.cols() != TaskSpec::kSpeakers) {
    throw ShapeError("pit_loss: logits must be [T x 2], got " + shape_str(z.shape()));
  }
  if (!z.same_shape(activity)) {
    throw ShapeError("pit_loss: logits " + shape_str(z.shape()) + " vs activity " +
                     shape_str(activity.shape()));
  }
  for (Index i = 0; i < activity.size(); ++i) {
    if (activity[i] != 0.0 && activity[i] != 1.0) {
      throw LabelError("pit_loss: activity entries must be 0 or 1");
    }
  }
  const Index T = z.rows();
  const double denom = 2.0 * static_cast<double>(T);
  double losses[2] = {0.0, 0.0};
  ConstMatMap zm = z.mat();
  ConstMatMap ym = activity.mat();
  for (int perm = 0; perm < 2; ++perm) {
    double sum = 0.0;
    for (Index t = 0; t < T; ++t) {
      for (Index s = 0; s < 2; ++s) {
        const double y = ym(t, perm == 0 ? s : 1 - s);
        sum += softplus(zm(t, s)) - y * zm(t, s);
      }
    }
    losses[perm] = sum / denom;
  }
  const int best = losses[0] <= losses[1] ? 0 : 1;
  auto target = std::make_shared<const Tensor>(activity);
  return g.append(Tensor::scalar(losses[best]), {logits},
                  [logits, target, best, denom](Graph& g, ValueId self) {
                    if (!g.requires_grad(logits)) return;
                    const double d = g.grad_vec(self)(0);
                    ConstMatMap zm = g.value(logits).mat();
                    ConstMatMap ym = target->mat();
                    MatMap acc = g.grad_acc_mat(logits);
                    for (Index t = 0; t < zm.rows(); ++t) {
                      for (Index s = 0; s < 2; ++s) {
                        const double y = ym(t, best == 0 ? s : 1 - s);
                        acc(t, s) += d * (sigmoid(zm(t, s)) - y) / denom;
                      }
                    }
                  });
}

std::vector<int> ctc_greedy_decode(const Tensor& log_probs) {
  if (log_probs.rank() != 2) throw ShapeError("ctc_greedy_decode: log_probs must be rank 2");
  std::vector<int> out;
  int prev = -1;
  for (Index t = 0; t < log_probs.rows(); ++t) {
    int best = 0;
    for (Index k = 1; k < log_probs.cols(); ++k) {
      if (log_probs.at(t, k) > log_probs.at(t, best)) best = static_cast<int>(k);
    }
    if (best != prev && best != 0) out.push_back(best);
    prev = best;
  }
  return out;
}

double token_error_rate(const std::vector<int>& hyp, const std::vector<int>& ref) {
  if (ref.empty()) throw LabelError("token_error_rate: reference is empty");
  const std::size_t n = hyp.size();
  const std::size_t m = ref.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= m; ++j) {
      const int sub = prev[j - 1] + (hyp[i - 1] == ref[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return static_cast<double>(prev[m]) / static_cast<double>(m);
}

HeadParams HeadParams::init(const TaskSpec& task, const EncoderConfig& enc, Rng& rng) {
  task.validate();
  HeadParams head;
  const Index d = enc.d_model;
  const Index width = task.head_width();
  head.w = Tensor(Shape{d, width});
  const double limit = std::sqrt(6.0 / static_cast<double>(d + width));
  for (Index i = 0; i < head.w.size(); ++i) head.w[i] = rng.uniform(-limit, limit);
  head.b = Tensor(Shape{width});
  return head;
}

std::vector<NamedShape> head_param_shapes(const TaskSpec& task, const EncoderConfig& enc) {
  task.validate();
  return {{"head.w", {enc.d_model, task.head_width()}}, {"head.b", {task.head_width()}}};
}

ValueId head_logits(Graph& g, Binder& bind, const TaskSpec& task, HeadParams& head, ValueId rep) {
  ValueId x = rep;
  if (task.kind == TaskKind::UtteranceCls) x = mean_rows(g, x);
  return add_row_bias(g, matmul(g, x, bind(head.w)), bind(head.b));
}

ValueId item_loss(Graph& g, Binder& bind, const TaskSpec& task, HeadParams& head, ValueId rep,
                  const DataItem& item) {
  ValueId logits = head_logits(g, bind, task, head, rep);
  switch (task.kind) {
    case TaskKind::UtteranceCls:
      return cross_entropy(g, logits, item.label);
    case TaskKind::FrameCtc:
      return ctc_loss(g, log_softmax_rows(g, logits), item.seq);
    case TaskKind::Diarization:
      return pit_loss(g, logits, item.activity);
  }
  throw ConfigError("item_loss: unknown task kind");
}

}  // namespace peftlab
