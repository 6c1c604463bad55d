#include "peftlab/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "peftlab/checkpoint.hpp"
#include "peftlab/report.hpp"

namespace peftlab {

namespace {

HarnessConfig effective_config(const CliOptions& opt) {
  HarnessConfig cfg = opt.config_path.empty() ? HarnessConfig{} : load_config(opt.config_path);
  if (!opt.out_dir.empty()) cfg.out_dir = opt.out_dir;
  cfg.validate();
  return cfg;
}

std::string ensure_out_dir(const HarnessConfig& cfg) {
  std::error_code ec;
  std::filesystem::create_directories(cfg.out_dir, ec);
  if (ec) throw IoError("cannot create output directory \"" + cfg.out_dir + "\": " + ec.message());
  return cfg.out_dir;
}

std::string encoder_config_str(const EncoderConfig& c) {
  return "{n_layers=" + std::to_string(c.n_layers) + ", d_model=" + std::to_string(c.d_model) +
         ", n_heads=" + std::to_string(c.n_heads) + ", d_ffn=" + std::to_string(c.d_ffn) +
         ", d_input=" + std::to_string(c.d_input) + ", max_len=" + std::to_string(c.max_len) + "}";
}

EncoderParams load_matching_upstream(const CliOptions& opt, const HarnessConfig& cfg) {
  if (opt.checkpoint_path.empty()) throw ConfigError("a --checkpoint path is required");
  auto [enc, meta] = load_encoder_checkpoint(opt.checkpoint_path);
  if (!(meta.config == cfg.encoder)) {
    throw ConfigError("checkpoint encoder " + encoder_config_str(meta.config) +
                      " does not match the configured encoder " + encoder_config_str(cfg.encoder));
  }
  return std::move(enc);
}

// Mean reconstruction loss over the whole corpus at fixed masks.
double corpus_pretrain_loss(EncoderParams& enc, PretrainHead& head,
                            const std::vector<Tensor>& corpus, double mask_frac,
                            std::uint64_t mask_seed) {
  double total = 0.0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    Graph g;
    Binder bind = Binder::all_frozen(g);
    total += g.scalar_value(masked_pretrain_loss(g, bind, corpus[i], enc, head, mask_frac,
                                                 mix_seed(mask_seed, i)));
  }
  return total / static_cast<double>(corpus.size());
}

}  // namespace

int cmd_pretrain(const CliOptions& opt, std::ostream& out) {
  HarnessConfig cfg = effective_config(opt);
  const std::uint64_t seed = opt.seed.value_or(cfg.pretrain.seed);
  const PretrainConfig& pc = cfg.pretrain;
  const std::string out_dir = ensure_out_dir(cfg);

  const std::vector<Tensor> corpus =
      gen_pretrain_corpus(pc.corpus_items, pc.frames, cfg.encoder.d_input, pc.noise, seed);
  Rng init_rng(mix_seed(seed, kStreamInit));
  EncoderParams enc = EncoderParams::init(cfg.encoder, init_rng);
  Rng head_rng(mix_seed(seed, kStreamHead));
  PretrainHead head = PretrainHead::init(cfg.encoder, head_rng);

  ParamRegistry reg;
  enc.for_each([&](const std::string& name, Tensor& t) { reg.add(name, &t); });
  reg.add("recon.w", &head.w);
  reg.add("recon.b", &head.b);
  FreezePlan plan;
  for (const auto& [name, t] : reg.entries()) plan.trainable.insert(name);

  const std::uint64_t mask_base = mix_seed(seed, kStreamMask);
  const double initial = corpus_pretrain_loss(enc, head, corpus, pc.mask_frac, mask_base);

  OptimConfig optim;
  optim.lr = pc.lr;
  optim.steps = pc.steps;
  optim.batch_size = pc.batch_size;

  Rng shuffle_rng(mix_seed(seed, kStreamShuffle));
  std::vector<int> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  shuffle_rng.shuffle(order);
  std::size_t pos = 0;

  AdamState adam;
  for (int step = 1; step <= optim.steps; ++step) {
    Graph g;
    Binder bind = Binder::all_trainable(g);
    ValueId loss{};
    for (int bi = 0; bi < optim.batch_size; ++bi) {
      if (pos == order.size()) {
        shuffle_rng.shuffle(order);
        pos = 0;
      }
      const int idx = order[pos++];
      const std::uint64_t mask_seed =
          mix_seed(mix_seed(mask_base, static_cast<std::uint64_t>(step)),
                   static_cast<std::uint64_t>(idx));
      ValueId l = masked_pretrain_loss(g, bind, corpus[static_cast<std::size_t>(idx)], enc, head,
                                       pc.mask_frac, mask_seed);
      loss = bi == 0 ? l : add(g, loss, l);
    }
    loss = scale(g, loss, 1.0 / static_cast<double>(optim.batch_size));
    if (!std::isfinite(g.scalar_value(loss))) {
      throw DivergenceError("pretraining diverged at step " + std::to_string(step));
    }
    for (const auto& [name, t] : reg.entries()) t->zero_grad();
    g.backward(loss);
    if (!adam_step(reg, plan, adam, optim)) {
      throw DivergenceError("pretraining produced a non-finite gradient at step " +
                            std::to_string(step));
    }
  }

  const double final_loss = corpus_pretrain_loss(enc, head, corpus, pc.mask_frac, mask_base);
  const std::string ckpt_path = out_dir + "/upstream.ckpt";
  save_encoder_checkpoint(ckpt_path, enc, "pretrain", seed);
  out << "pretrain: corpus=" << pc.corpus_items << " steps=" << optim.steps << " seed=" << seed
      << "\n";
  out << "pretrain: initial loss " << format_g17(initial) << "\n";
  out << "pretrain: final loss " << format_g17(final_loss) << "\n";
  out << "pretrain: wrote " << ckpt_path << "\n";
  return 0;
}

int cmd_run(const CliOptions& opt, std::ostream& out) {
  HarnessConfig cfg = effective_config(opt);
  const std::string out_dir = ensure_out_dir(cfg);
  EncoderParams enc = load_matching_upstream(opt, cfg);
  const TaskSpec spec = cfg.task.spec();
  const Dataset data = gen_task(spec, cfg.task.sizes(cfg.encoder), cfg.task.seed);
  const std::uint64_t seed = opt.seed.value_or(cfg.seed);
  const RunResult run = train_run(enc, cfg.method, spec, data, cfg.optim, seed);
  const std::string csv_path = out_dir + "/runs.csv";
  append_csv(csv_path, {run});
  out << "run: method=" << run.method << " task=" << run.task << " seed=" << run.seed
      << " trainable_upstream=" << run.trainable_upstream
      << " trainable_total=" << run.trainable_total << " " << run.metric_name << "="
      << format_g17(run.metric_value) << " diverged=" << (run.diverged ? "true" : "false") << "\n";
  out << "run: appended " << csv_path << "\n";
  return 0;
}

int cmd_count_params(const CliOptions& opt, std::ostream& out) {
  HarnessConfig cfg = opt.config_path.empty() ? HarnessConfig{} : load_config(opt.config_path);
  cfg.validate();
  const TaskSpec spec = cfg.task.spec();
  std::vector<NamedShape> inventory = encoder_param_shapes(cfg.encoder);
  for (NamedShape& ns : head_param_shapes(spec, cfg.encoder)) inventory.push_back(std::move(ns));

  out << "encoder " << encoder_config_str(cfg.encoder) << "\n";
  std::vector<std::vector<std::string>> rows;
  Rng rng(0);
  for (Method m : kAllMethods) {
    MethodConfig mc = cfg.method;
    mc.kind = m;
    mc.validate(cfg.encoder);
    std::vector<NamedShape> full = inventory;
    for (NamedShape& ns : injected_param_shapes(mc, cfg.encoder)) full.push_back(std::move(ns));
    auto [state, plan] = inject(mc, cfg.encoder, rng);
    const long long upstream = count_trainable(plan, full, CountScope::UpstreamOnly);
    std::string approx = format_millions(upstream);
    if (m == Method::WeightedSum) approx = std::to_string(upstream);
    if (m == Method::Prefix) {
      const long long per_unit = upstream / cfg.method.prefix_len;
      approx += " (prefix_len=" + std::to_string(cfg.method.prefix_len) + "; " +
                format_millions(per_unit * (cfg.method.prefix_len + 1)) + " at prefix_len=" +
                std::to_string(cfg.method.prefix_len + 1) + ")";
    }
    rows.push_back({method_name(m), std::to_string(upstream), approx});
  }
  std::vector<std::size_t> widths = {0, 0, 0};
  const std::vector<std::string> header = {"method", "trainable_upstream", "approx"};
  for (std::size_t c = 0; c < 3; ++c) widths[c] = header[c].size();
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < 3; ++c) widths[c] = std::max(widths[c], row[c].size());
  }
  auto emit = [&](const std::vector<std::string>& row) {
    for (std::size_t c = 0; c < 3; ++c) {
      std::string cell = row[c];
      while (cell.size() < widths[c]) cell += ' ';
      out << (c ? "  " : "") << cell;
    }
    out << "\n";
  };
  emit(header);
  for (const auto& row : rows) emit(row);
  return 0;
}

int cmd_sweep(const CliOptions& opt, std::ostream& out) {
  HarnessConfig cfg = effective_config(opt);
  const std::string out_dir = ensure_out_dir(cfg);
  EncoderParams enc = load_matching_upstream(opt, cfg);
  const TaskSpec spec = cfg.task.spec();
  const Dataset data = gen_task(spec, cfg.task.sizes(cfg.encoder), cfg.task.seed);
  const std::vector<MethodConfig> methods = cfg.sweep.method_configs(cfg.method);

  SweepTable table;
  std::string stem;
  if (opt.mode == "lr") {
    table = lr_sweep(enc, methods, spec, data, cfg.optim, cfg.sweep.lrs, cfg.sweep.seeds,
                     opt.workers);
    stem = out_dir + "/sweep_lr";
  } else if (opt.mode == "lowresource") {
    table = low_resource_experiment(enc, methods, spec, data, cfg.optim, cfg.sweep.fractions,
                                    cfg.sweep.seeds, opt.workers);
    stem = out_dir + "/sweep_lowresource";
  } else {
    throw ConfigError("sweep mode must be lr or lowresource, got \"" + opt.mode + "\"");
  }

  std::filesystem::remove(stem + ".csv");  // each sweep replaces its table files
  append_csv(stem + ".csv", table.runs);
  const std::string text = render_sweep(table);
  std::ofstream table_file(stem + ".txt", std::ios::trunc);
  if (!table_file) throw IoError("cannot open \"" + stem + ".txt\" for writing");
  table_file << text;
  table_file.flush();
  if (!table_file) throw IoError("failed writing \"" + stem + ".txt\"");
  out << text;
  out << "sweep: wrote " << stem << ".csv and " << stem << ".txt\n";
  return 0;
}

int cmd_report(const CliOptions& opt, std::ostream& out) {
  if (opt.csv_paths.empty()) throw ConfigError("report needs at least one CSV path");
  std::vector<RunResult> rows;
  for (const std::string& path : opt.csv_paths) {
    for (RunResult& r : read_csv(path)) rows.push_back(std::move(r));
  }
  out << render_report(build_report(rows));
  return 0;
}

}  // namespace peftlab
