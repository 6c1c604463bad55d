#include "peftlab/config.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>

#include <json.hpp>

namespace peftlab {

namespace {

using nlohmann::json;

void require_object(const json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config: \"" + where + "\" must be an object");
}

void check_keys(const json& j, const std::string& where,
                std::initializer_list<const char*> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) {
      const std::string path = where.empty() ? it.key() : where + "." + it.key();
      throw ConfigError("config: unknown key \"" + path + "\"");
    }
  }
}

template <typename T>
void read_field(const json& j, const std::string& where, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception& e) {
    const std::string path = where.empty() ? key : where + "." + key;
    throw ConfigError("config: key \"" + path + "\": " + e.what());
  }
}

EncoderConfig parse_encoder(const json& j) {
  require_object(j, "encoder");
  check_keys(j, "encoder", {"n_layers", "d_model", "n_heads", "d_ffn", "d_input", "max_len"});
  EncoderConfig cfg;
  read_field(j, "encoder", "n_layers", cfg.n_layers);
  read_field(j, "encoder", "d_model", cfg.d_model);
  read_field(j, "encoder", "n_heads", cfg.n_heads);
  read_field(j, "encoder", "d_ffn", cfg.d_ffn);
  read_field(j, "encoder", "d_input", cfg.d_input);
  read_field(j, "encoder", "max_len", cfg.max_len);
  return cfg;
}

PretrainConfig parse_pretrain(const json& j) {
  require_object(j, "pretrain");
  check_keys(j, "pretrain",
             {"corpus_items", "frames", "noise", "mask_frac", "lr", "steps", "batch_size", "seed"});
  PretrainConfig cfg;
  read_field(j, "pretrain", "corpus_items", cfg.corpus_items);
  read_field(j, "pretrain", "frames", cfg.frames);
  read_field(j, "pretrain", "noise", cfg.noise);
  read_field(j, "pretrain", "mask_frac", cfg.mask_frac);
  read_field(j, "pretrain", "lr", cfg.lr);
  read_field(j, "pretrain", "steps", cfg.steps);
  read_field(j, "pretrain", "batch_size", cfg.batch_size);
  read_field(j, "pretrain", "seed", cfg.seed);
  return cfg;
}

MethodConfig parse_method(const json& j) {
  require_object(j, "method");
  check_keys(j, "method", {"name", "bottleneck", "rank", "lora_q", "lora_v", "prefix_len"});
  MethodConfig cfg;
  std::string name = method_name(cfg.kind);
  read_field(j, "method", "name", name);
  cfg.kind = method_from_name(name);
  read_field(j, "method", "bottleneck", cfg.bottleneck);
  read_field(j, "method", "rank", cfg.rank);
  read_field(j, "method", "lora_q", cfg.lora_q);
  read_field(j, "method", "lora_v", cfg.lora_v);
  read_field(j, "method", "prefix_len", cfg.prefix_len);
  return cfg;
}

TaskGenConfig parse_task(const json& j) {
  require_object(j, "task");
  check_keys(j, "task",
             {"name", "n_classes", "vocab_size", "max_label_len", "train_items", "test_items",
              "frames", "noise", "seed"});
  TaskGenConfig cfg;
  read_field(j, "task", "name", cfg.name);
  read_field(j, "task", "n_classes", cfg.n_classes);
  read_field(j, "task", "vocab_size", cfg.vocab_size);
  read_field(j, "task", "max_label_len", cfg.max_label_len);
  read_field(j, "task", "train_items", cfg.train_items);
  read_field(j, "task", "test_items", cfg.test_items);
  read_field(j, "task", "frames", cfg.frames);
  read_field(j, "task", "noise", cfg.noise);
  read_field(j, "task", "seed", cfg.seed);
  return cfg;
}

OptimConfig parse_optim(const json& j) {
  require_object(j, "optim");
  check_keys(j, "optim", {"lr", "beta1", "beta2", "eps", "steps", "batch_size"});
  OptimConfig cfg;
  read_field(j, "optim", "lr", cfg.lr);
  read_field(j, "optim", "beta1", cfg.beta1);
  read_field(j, "optim", "beta2", cfg.beta2);
  read_field(j, "optim", "eps", cfg.eps);
  read_field(j, "optim", "steps", cfg.steps);
  read_field(j, "optim", "batch_size", cfg.batch_size);
  return cfg;
}

SweepConfig parse_sweep(const json& j) {
  require_object(j, "sweep");
  check_keys(j, "sweep", {"methods", "lrs", "fractions", "seeds"});
  SweepConfig cfg;
  read_field(j, "sweep", "methods", cfg.methods);
  read_field(j, "sweep", "lrs", cfg.lrs);
  read_field(j, "sweep", "fractions", cfg.fractions);
  read_field(j, "sweep", "seeds", cfg.seeds);
  return cfg;
}

json encoder_to_json(const EncoderConfig& cfg) {
  return json{{"n_layers", cfg.n_layers},   {"d_model", cfg.d_model}, {"n_heads", cfg.n_heads},
              {"d_ffn", cfg.d_ffn},         {"d_input", cfg.d_input}, {"max_len", cfg.max_len}};
}

}  // namespace

void PretrainConfig::validate() const {
  if (corpus_items < 1) throw ConfigError("pretrain.corpus_items must be at least 1");
  if (frames < 1) throw ConfigError("pretrain.frames must be at least 1");
  if (!(noise >= 0)) throw ConfigError("pretrain.noise must be nonnegative");
  if (!(mask_frac > 0 && mask_frac < 1)) {
    throw ConfigError("pretrain.mask_frac must lie strictly between 0 and 1");
  }
  if (!(lr > 0)) throw ConfigError("pretrain.lr must be positive");
  if (steps < 0) throw ConfigError("pretrain.steps must be nonnegative");
  if (batch_size < 1) throw ConfigError("pretrain.batch_size must be at least 1");
}

TaskSpec TaskGenConfig::spec() const {
  TaskSpec spec;
  spec.kind = task_from_name(name);
  spec.n_classes = n_classes;
  spec.vocab_size = vocab_size;
  spec.max_label_len = max_label_len;
  return spec;
}

GenSizes TaskGenConfig::sizes(const EncoderConfig& enc) const {
  GenSizes sizes;
  sizes.n_train = train_items;
  sizes.n_test = test_items;
  sizes.frames = frames;
  sizes.d_input = enc.d_input;
  sizes.noise = noise;
  return sizes;
}

void TaskGenConfig::validate() const {
  spec().validate();
  if (train_items < 1) throw ConfigError("task.train_items must be at least 1");
  if (test_items < 1) throw ConfigError("task.test_items must be at least 1");
  if (frames < 1) throw ConfigError("task.frames must be at least 1");
  if (!(noise >= 0)) throw ConfigError("task.noise must be nonnegative");
}

std::vector<MethodConfig> SweepConfig::method_configs(const MethodConfig& base) const {
  std::vector<MethodConfig> out;
  out.reserve(methods.size());
  for (const std::string& name : methods) {
    MethodConfig m = base;
    m.kind = method_from_name(name);
    out.push_back(m);
  }
  return out;
}

void SweepConfig::validate() const {
  if (methods.empty()) throw ConfigError("sweep.methods must be nonempty");
  for (const std::string& name : methods) method_from_name(name);
  if (lrs.empty()) throw ConfigError("sweep.lrs must be nonempty");
  for (double lr : lrs) {
    if (!(lr > 0)) throw ConfigError("sweep.lrs entries must be positive");
  }
  if (fractions.empty()) throw ConfigError("sweep.fractions must be nonempty");
  for (double f : fractions) {
    if (!(f > 0 && f <= 1)) throw ConfigError("sweep.fractions entries must lie in (0, 1]");
  }
  if (seeds.empty()) throw ConfigError("sweep.seeds must be nonempty");
}

void HarnessConfig::validate() const {
  encoder.validate();
  pretrain.validate();
  method.validate(encoder);
  task.validate();
  optim.validate();
  sweep.validate();
  if (pretrain.frames > encoder.max_len) {
    throw ConfigError("pretrain.frames must not exceed encoder.max_len");
  }
  if (task.frames > encoder.max_len) {
    throw ConfigError("task.frames must not exceed encoder.max_len");
  }
  if (out_dir.empty()) throw ConfigError("out_dir must be nonempty");
}

HarnessConfig parse_config(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config: not valid JSON");
  require_object(j, "");
  check_keys(j, "", {"encoder", "pretrain", "method", "task", "optim", "sweep", "seed", "out_dir"});
  HarnessConfig cfg;
  if (j.contains("encoder")) cfg.encoder = parse_encoder(j["encoder"]);
  if (j.contains("pretrain")) cfg.pretrain = parse_pretrain(j["pretrain"]);
  if (j.contains("method")) cfg.method = parse_method(j["method"]);
  if (j.contains("task")) cfg.task = parse_task(j["task"]);
  if (j.contains("optim")) cfg.optim = parse_optim(j["optim"]);
  if (j.contains("sweep")) cfg.sweep = parse_sweep(j["sweep"]);
  read_field(j, "", "seed", cfg.seed);
  read_field(j, "", "out_dir", cfg.out_dir);
  cfg.validate();
  return cfg;
}

HarnessConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open \"" + path + "\"");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

std::string config_to_text(const HarnessConfig& cfg) {
  json j;
  j["encoder"] = encoder_to_json(cfg.encoder);
  j["pretrain"] = json{{"corpus_items", cfg.pretrain.corpus_items},
                       {"frames", cfg.pretrain.frames},
                       {"noise", cfg.pretrain.noise},
                       {"mask_frac", cfg.pretrain.mask_frac},
                       {"lr", cfg.pretrain.lr},
                       {"steps", cfg.pretrain.steps},
                       {"batch_size", cfg.pretrain.batch_size},
                       {"seed", cfg.pretrain.seed}};
  j["method"] = json{{"name", method_name(cfg.method.kind)},
                     {"bottleneck", cfg.method.bottleneck},
                     {"rank", cfg.method.rank},
                     {"lora_q", cfg.method.lora_q},
                     {"lora_v", cfg.method.lora_v},
                     {"prefix_len", cfg.method.prefix_len}};
  j["task"] = json{{"name", cfg.task.name},
                   {"n_classes", cfg.task.n_classes},
                   {"vocab_size", cfg.task.vocab_size},
                   {"max_label_len", cfg.task.max_label_len},
                   {"train_items", cfg.task.train_items},
                   {"test_items", cfg.task.test_items},
                   {"frames", cfg.task.frames},
                   {"noise", cfg.task.noise},
                   {"seed", cfg.task.seed}};
  j["optim"] = json{{"lr", cfg.optim.lr},     {"beta1", cfg.optim.beta1},
                    {"beta2", cfg.optim.beta2}, {"eps", cfg.optim.eps},
                    {"steps", cfg.optim.steps}, {"batch_size", cfg.optim.batch_size}};
  j["sweep"] = json{{"methods", cfg.sweep.methods},
                    {"lrs", cfg.sweep.lrs},
                    {"fractions", cfg.sweep.fractions},
                    {"seeds", cfg.sweep.seeds}};
  j["seed"] = cfg.seed;
  j["out_dir"] = cfg.out_dir;
  return j.dump(2) + "\n";
}

}  // namespace peftlab
