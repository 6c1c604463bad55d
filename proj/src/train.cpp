#include "peftlab/train.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

namespace peftlab {

namespace {

constexpr int kTraceInterval = 10;

// Minibatch cursor over a shuffled index order; reshuffles at epoch ends.
class BatchCursor {
 public:
  BatchCursor(int n, Rng& rng) : n_(n), rng_(rng), order_(static_cast<std::size_t>(n)) {
    for (int i = 0; i < n; ++i) order_[static_cast<std::size_t>(i)] = i;
    rng_.shuffle(order_);
  }

  std::vector<int> take(int count) {
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
      if (pos_ == n_) {
        rng_.shuffle(order_);
        pos_ = 0;
      }
      out.push_back(order_[static_cast<std::size_t>(pos_++)]);
    }
    return out;
  }

 private:
  int n_ = 0;
  int pos_ = 0;
  Rng& rng_;
  std::vector<int> order_;
};

ValueId model_rep(Graph& g, Binder& bind, const Tensor& features, EncoderParams& enc,
                  MethodState& state, const EncoderHooks& hooks) {
  EncoderTrace trace = encoder_forward(g, bind, features, enc, &hooks);
  if (state.kind == Method::WeightedSum) {
    return weighted_sum_combine(g, bind, trace.hidden, state.layer_weights);
  }
  return trace.hidden.back();
}

void init_prefix_from_first_batch(EncoderParams& enc, MethodState& state, int prefix_len,
                                  const std::vector<DataItem>& items,
                                  const std::vector<int>& batch) {
  std::vector<std::vector<Tensor>> layer_inputs(static_cast<std::size_t>(enc.config.n_layers));
  for (int idx : batch) {
    Graph g;
    Binder bind = Binder::all_frozen(g);
    EncoderTrace trace = encoder_forward(g, bind, items[static_cast<std::size_t>(idx)].features, enc);
    layer_inputs[0].push_back(g.value(trace.projected));
    for (int i = 1; i < enc.config.n_layers; ++i) {
      layer_inputs[static_cast<std::size_t>(i)].push_back(
          g.value(trace.hidden[static_cast<std::size_t>(i - 1)]));
    }
  }
  const auto rows = prefix_init_from_batch(layer_inputs, prefix_len);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    state.prefix[i].k = rows[i].first;
    state.prefix[i].v = rows[i].second;
  }
  state.prefix_pending = false;
}

void run_indexed(int workers, int n, const std::function<void(int)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  const int pool_size = std::min(workers, n);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(pool_size));
  for (int w = 0; w < pool_size; ++w) {
    pool.emplace_back([&] {
      for (int i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

void fill_cell_stats(SweepTable& table) {
  for (auto& row : table.cells) {
    for (SweepCell& cell : row) {
      cell.mean = mean_of(cell.samples);
      cell.stdev = population_std(cell.samples);
    }
  }
}

}  // namespace

void OptimConfig::validate() const {
  if (!(lr > 0)) throw ConfigError("optim.lr must be positive");
  if (!(beta1 > 0 && beta1 < 1)) throw ConfigError("optim.beta1 must lie in (0, 1)");
  if (!(beta2 > 0 && beta2 < 1)) throw ConfigError("optim.beta2 must lie in (0, 1)");
  if (!(eps > 0)) throw ConfigError("optim.eps must be positive");
  if (steps < 0) throw ConfigError("optim.steps must be nonnegative");
  if (batch_size < 1) throw ConfigError("optim.batch_size must be at least 1");
}

void ParamRegistry::add(const std::string& name, Tensor* t) {
  if (find(name) != nullptr) throw InventoryError("registry: duplicate parameter \"" + name + "\"");
  entries_.emplace_back(name, t);
}

Tensor* ParamRegistry::find(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  return nullptr;
}

std::vector<NamedShape> ParamRegistry::shapes() const {
  std::vector<NamedShape> out;
  out.reserve(entries_.size());
  for (const auto& [n, t] : entries_) out.push_back({n, t->shape()});
  return out;
}

ParamRegistry build_registry(EncoderParams& enc, MethodState& state, HeadParams& head) {
  ParamRegistry reg;
  enc.for_each([&](const std::string& name, Tensor& t) { reg.add(name, &t); });
  state.for_each([&](const std::string& name, Tensor& t) { reg.add(name, &t); });
  reg.add("head.w", &head.w);
  reg.add("head.b", &head.b);
  return reg;
}

bool adam_step(const ParamRegistry& reg, const FreezePlan& plan, AdamState& state,
               const OptimConfig& cfg) {
  cfg.validate();
  std::vector<Tensor*> params;
  params.reserve(plan.trainable.size());
  for (const std::string& name : plan.trainable) {
    Tensor* t = reg.find(name);
    if (t == nullptr) throw InventoryError("adam_step: \"" + name + "\" is not in the registry");
    t->ensure_grad();
    params.push_back(t);
  }
  for (Tensor* t : params) {
    if (!t->grad_vec().allFinite()) return false;
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  auto param_it = params.begin();
  for (const std::string& name : plan.trainable) {
    Tensor* t = *param_it++;
    auto [it, inserted] = state.moments.try_emplace(name);
    if (inserted) {
      it->second.first = Tensor::zeros(t->shape());
      it->second.second = Tensor::zeros(t->shape());
    }
    VecMap m = it->second.first.vec();
    VecMap v = it->second.second.vec();
    ConstVecMap grad = static_cast<const Tensor*>(t)->grad_vec();
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
    t->vec().array() -=
        cfg.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.eps);
  }
  return true;
}

double mean_of(const std::vector<double>& xs) {
  if (xs.empty()) throw ConfigError("mean_of: no samples");
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double population_std(const std::vector<double>& xs) {
  const double mu = mean_of(xs);
  double s = 0.0;
  for (double x : xs) s += (x - mu) * (x - mu);
  return std::sqrt(s / static_cast<double>(xs.size()));
}

double evaluate_model(EncoderParams& enc, MethodState& state, const MethodConfig& method,
                      const TaskSpec& task, HeadParams& head, const std::vector<DataItem>& items) {
  if (items.empty()) throw ConfigError("evaluate_model: no items");
  EncoderHooks hooks = make_hooks(state, method, enc.config);
  double correct = 0.0;
  double edits = 0.0;
  double ref_len = 0.0;
  double frame_errors = 0.0;
  double frames = 0.0;
  for (const DataItem& item : items) {
    Graph g;
    Binder bind = Binder::all_frozen(g);
    ValueId rep = model_rep(g, bind, item.features, enc, state, hooks);
    ValueId logits = head_logits(g, bind, task, head, rep);
    switch (task.kind) {
      case TaskKind::UtteranceCls: {
        const Tensor& z = g.value(logits);
        int best = 0;
        for (Index k = 1; k < z.size(); ++k) {
          if (z[k] > z[best]) best = static_cast<int>(k);
        }
        if (best == item.label) correct += 1.0;
        break;
      }
      case TaskKind::FrameCtc: {
        const Tensor& lp = g.value(log_softmax_rows(g, logits));
        const std::vector<int> hyp = ctc_greedy_decode(lp);
        edits += token_error_rate(hyp, item.seq) * static_cast<double>(item.seq.size());
        ref_len += static_cast<double>(item.seq.size());
        break;
      }
      case TaskKind::Diarization: {
        const Tensor& z = g.value(logits);
        // Permutation-invariant frame error: better of the two channel maps.
        double err[2] = {0.0, 0.0};
        for (Index t = 0; t < z.rows(); ++t) {
          for (Index s = 0; s < 2; ++s) {
            const int pred = z.at(t, s) > 0.0 ? 1 : 0;
            err[0] += pred != static_cast<int>(item.activity.at(t, s));
            err[1] += pred != static_cast<int>(item.activity.at(t, 1 - s));
          }
        }
        frame_errors += std::min(err[0], err[1]);
        frames += static_cast<double>(z.rows() * 2);
        break;
      }
    }
  }
  switch (task.kind) {
    case TaskKind::UtteranceCls: return correct / static_cast<double>(items.size());
    case TaskKind::FrameCtc: return edits / ref_len;
    case TaskKind::Diarization: return frame_errors / frames;
  }
  throw ConfigError("evaluate_model: unknown task kind");
}

RunResult train_run(const EncoderParams& upstream, const MethodConfig& method,
                    const TaskSpec& task, const Dataset& data, const OptimConfig& optim,
                    std::uint64_t seed, TrainedModel* out_model) {
  task.validate();
  optim.validate();
  method.validate(upstream.config);
  if (data.train.empty() || data.test.empty()) {
    throw ConfigError("train_run: dataset has an empty split");
  }

  EncoderParams enc = upstream;
  Rng method_rng(mix_seed(seed, kStreamMethod));
  auto [state, plan] = inject(method, enc.config, method_rng);
  Rng head_rng(mix_seed(seed, kStreamHead));
  HeadParams head = HeadParams::init(task, enc.config, head_rng);
  ParamRegistry reg = build_registry(enc, state, head);

  Rng shuffle_rng(mix_seed(seed, kStreamShuffle));
  BatchCursor cursor(static_cast<int>(data.train.size()), shuffle_rng);

  RunResult result;
  result.method = method_name(method.kind);
  result.task = task.name();
  result.seed = seed;
  result.lr = optim.lr;
  result.metric_name = metric_name(task.metric());
  {
    std::vector<NamedShape> inventory = encoder_param_shapes(enc.config);
    for (NamedShape& ns : injected_param_shapes(method, enc.config))
      inventory.push_back(std::move(ns));
    for (NamedShape& ns : head_param_shapes(task, enc.config)) inventory.push_back(std::move(ns));
    result.trainable_upstream = count_trainable(plan, inventory, CountScope::UpstreamOnly);
    result.trainable_total = count_trainable(plan, inventory, CountScope::All);
  }

  const std::vector<int> first_batch = cursor.take(optim.batch_size);
  if (state.prefix_pending) {
    init_prefix_from_first_batch(enc, state, method.prefix_len, data.train, first_batch);
  }

  std::unordered_set<const Tensor*> trainable_set;
  for (const std::string& name : plan.trainable) {
    Tensor* t = reg.find(name);
    if (t == nullptr) throw InventoryError("train_run: \"" + name + "\" is not in the registry");
    trainable_set.insert(t);
  }
  const auto is_trainable = [&trainable_set](const Tensor* t) {
    return trainable_set.count(t) != 0;
  };

  EncoderHooks hooks = make_hooks(state, method, enc.config);
  AdamState adam;
  std::vector<int> batch = first_batch;
  for (int step = 1; step <= optim.steps; ++step) {
    if (step > 1) batch = cursor.take(optim.batch_size);
    Graph g;
    Binder bind(g, is_trainable);
    ValueId loss{};
    for (std::size_t bi = 0; bi < batch.size(); ++bi) {
      const DataItem& item = data.train[static_cast<std::size_t>(batch[bi])];
      ValueId rep = model_rep(g, bind, item.features, enc, state, hooks);
      ValueId l = item_loss(g, bind, task, head, rep, item);
      loss = bi == 0 ? l : add(g, loss, l);
    }
    loss = scale(g, loss, 1.0 / static_cast<double>(batch.size()));
    const double loss_value = g.scalar_value(loss);
    if (!std::isfinite(loss_value)) {
      result.diverged = true;
      break;
    }
    if (step == 1 || step % kTraceInterval == 0 || step == optim.steps) {
      result.loss_trace.emplace_back(step, loss_value);
    }
    for (const Tensor* t : trainable_set) const_cast<Tensor*>(t)->zero_grad();
    g.backward(loss);
    if (!adam_step(reg, plan, adam, optim)) {
      result.diverged = true;
      break;
    }
    bool finite = true;
    for (const Tensor* t : trainable_set) {
      if (!t->all_finite()) {
        finite = false;
        break;
      }
    }
    if (!finite) {
      result.diverged = true;
      break;
    }
  }

  if (result.diverged) {
    result.metric_value = metric_worst(task.metric());
  } else {
    const double metric = evaluate_model(enc, state, method, task, head, data.test);
    if (std::isfinite(metric)) {
      result.metric_value = metric;
    } else {
      result.diverged = true;
      result.metric_value = metric_worst(task.metric());
    }
  }
  if (out_model != nullptr) {
    *out_model = TrainedModel{std::move(enc), std::move(state), std::move(head)};
  }
  return result;
}

SweepTable lr_sweep(const EncoderParams& upstream, const std::vector<MethodConfig>& methods,
                    const TaskSpec& task, const Dataset& data, const OptimConfig& optim,
                    const std::vector<double>& lrs, const std::vector<std::uint64_t>& seeds,
                    int workers) {
  if (methods.empty() || lrs.empty() || seeds.empty()) {
    throw ConfigError("lr_sweep: methods, lrs and seeds must be nonempty");
  }
  SweepTable table;
  table.column_label = "lr";
  table.columns = lrs;
  for (const MethodConfig& m : methods) table.methods.push_back(method_name(m.kind));
  const int n_cols = static_cast<int>(lrs.size());
  const int n_seeds = static_cast<int>(seeds.size());
  const int total = static_cast<int>(methods.size()) * n_cols * n_seeds;
  std::vector<RunResult> runs(static_cast<std::size_t>(total));
  run_indexed(workers, total, [&](int i) {
    const int mi = i / (n_cols * n_seeds);
    const int ci = (i / n_seeds) % n_cols;
    const int si = i % n_seeds;
    OptimConfig cfg = optim;
    cfg.lr = lrs[static_cast<std::size_t>(ci)];
    runs[static_cast<std::size_t>(i)] =
        train_run(upstream, methods[static_cast<std::size_t>(mi)], task, data, cfg,
                  seeds[static_cast<std::size_t>(si)]);
  });
  table.cells.assign(methods.size(), std::vector<SweepCell>(static_cast<std::size_t>(n_cols)));
  for (int i = 0; i < total; ++i) {
    const int mi = i / (n_cols * n_seeds);
    const int ci = (i / n_seeds) % n_cols;
    table.cells[static_cast<std::size_t>(mi)][static_cast<std::size_t>(ci)].samples.push_back(
        runs[static_cast<std::size_t>(i)].metric_value);
  }
  fill_cell_stats(table);
  table.runs = std::move(runs);
  return table;
}

SweepTable low_resource_experiment(const EncoderParams& upstream,
                                   const std::vector<MethodConfig>& methods, const TaskSpec& task,
                                   const Dataset& data, const OptimConfig& optim,
                                   const std::vector<double>& fractions,
                                   const std::vector<std::uint64_t>& seeds, int workers) {
  if (methods.empty() || fractions.empty() || seeds.empty()) {
    throw ConfigError("low_resource_experiment: methods, fractions and seeds must be nonempty");
  }
  SweepTable table;
  table.column_label = "fraction";
  table.columns = fractions;
  for (const MethodConfig& m : methods) table.methods.push_back(method_name(m.kind));
  const int n_cols = static_cast<int>(fractions.size());
  const int n_seeds = static_cast<int>(seeds.size());
  // Every method sees the same subsample for a given (fraction, seed).
  std::vector<Dataset> subsets;
  subsets.reserve(static_cast<std::size_t>(n_cols * n_seeds));
  for (int ci = 0; ci < n_cols; ++ci) {
    for (int si = 0; si < n_seeds; ++si) {
      subsets.push_back(low_resource_split(data, fractions[static_cast<std::size_t>(ci)],
                                           seeds[static_cast<std::size_t>(si)]));
    }
  }
  const int total = static_cast<int>(methods.size()) * n_cols * n_seeds;
  std::vector<RunResult> runs(static_cast<std::size_t>(total));
  run_indexed(workers, total, [&](int i) {
    const int mi = i / (n_cols * n_seeds);
    const int ci = (i / n_seeds) % n_cols;
    const int si = i % n_seeds;
    RunResult r = train_run(upstream, methods[static_cast<std::size_t>(mi)], task,
                            subsets[static_cast<std::size_t>(ci * n_seeds + si)], optim,
                            seeds[static_cast<std::size_t>(si)]);
    r.fraction = fractions[static_cast<std::size_t>(ci)];
    runs[static_cast<std::size_t>(i)] = std::move(r);
  });
  table.cells.assign(methods.size(), std::vector<SweepCell>(static_cast<std::size_t>(n_cols)));
  for (int i = 0; i < total; ++i) {
    const int mi = i / (n_cols * n_seeds);
    const int ci = (i / n_seeds) % n_cols;
    table.cells[static_cast<std::size_t>(mi)][static_cast<std::size_t>(ci)].samples.push_back(
        runs[static_cast<std::size_t>(i)].metric_value);
  }
  fill_cell_stats(table);
  table.runs = std::move(runs);
  return table;
}

}  // namespace peftlab
