#include "peftlab/peft.hpp"

namespace peftlab {

namespace {

std::string peft_layer(int i) { return "peft.layer." + std::to_string(i) + "."; }

Tensor small_uniform(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(-0.01, 0.01);
  return t;
}

}  // namespace

std::string method_name(Method m) {
  switch (m) {
    case Method::FullFT: return "full_ft";
    case Method::HeadOnly: return "head_only";
    case Method::Houlsby: return "houlsby";
    case Method::LoRA: return "lora";
    case Method::AdapterBias: return "adapter_bias";
    case Method::BitFit: return "bitfit";
    case Method::Prefix: return "prefix";
    case Method::WeightedSum: return "weighted_sum";
  }
  throw ConfigError("method_name: unknown method");
}

Method method_from_name(const std::string& name) {
  for (Method m : kAllMethods) {
    if (method_name(m) == name) return m;
  }
  throw ConfigError("unknown method name: \"" + name + "\"");
}

void MethodConfig::validate(const EncoderConfig& enc) const {
  enc.validate();
  switch (kind) {
    case Method::Houlsby:
      if (bottleneck < 1) throw ConfigError("method.bottleneck must be at least 1");
      break;
    case Method::LoRA:
      if (rank < 1) throw ConfigError("method.rank must be at least 1");
      if (!lora_q && !lora_v) throw ConfigError("method.targets must name at least one of q, v");
      break;
    case Method::Prefix:
      if (prefix_len < 1) throw ConfigError("method.prefix_len must be at least 1");
      if (prefix_len >= enc.max_len) {
        throw ConfigError("method.prefix_len (" + std::to_string(prefix_len) +
                          ") must be smaller than encoder.max_len (" + std::to_string(enc.max_len) +
                          ")");
      }
      break;
    default:
      break;
  }
}

std::vector<NamedShape> injected_param_shapes(const MethodConfig& m, const EncoderConfig& enc) {
  m.validate(enc);
  const Index d = enc.d_model;
  std::vector<NamedShape> out;
  switch (m.kind) {
    case Method::FullFT:
    case Method::HeadOnly:
    case Method::BitFit:
      break;
    case Method::Houlsby:
      for (int i = 0; i < enc.n_layers; ++i) {
        const std::string p = peft_layer(i);
        out.push_back({p + "houlsby.down.w", {d, m.bottleneck}});
        out.push_back({p + "houlsby.down.b", {m.bottleneck}});
        out.push_back({p + "houlsby.up.w", {m.bottleneck, d}});
        out.push_back({p + "houlsby.up.b", {d}});
      }
      break;
    case Method::LoRA:
      for (int i = 0; i < enc.n_layers; ++i) {
        const std::string p = peft_layer(i);
        if (m.lora_q) {
          out.push_back({p + "lora.q.a", {m.rank, d}});
          out.push_back({p + "lora.q.b", {d, m.rank}});
        }
        if (m.lora_v) {
          out.push_back({p + "lora.v.a", {m.rank, d}});
          out.push_back({p + "lora.v.b", {d, m.rank}});
        }
      }
      break;
    case Method::AdapterBias:
      for (int i = 0; i < enc.n_layers; ++i) {
        const std::string p = peft_layer(i);
        out.push_back({p + "adapterbias.shift", {1, d}});
        out.push_back({p + "adapterbias.alpha.w", {d, 1}});
        out.push_back({p + "adapterbias.alpha.b", {1}});
      }
      break;
    case Method::Prefix:
      for (int i = 0; i < enc.n_layers; ++i) {
        const std::string p = peft_layer(i);
        out.push_back({p + "prefix.k", {m.prefix_len, d}});
        out.push_back({p + "prefix.v", {m.prefix_len, d}});
      }
      break;
    case Method::WeightedSum:
      out.push_back({"peft.weighted_sum.w", {enc.n_layers}});
      break;
  }
  return out;
}

void MethodState::for_each(const std::function<void(const std::string&, Tensor&)>& fn) {
  for (std::size_t i = 0; i < houlsby.size(); ++i) {
    const std::string p = peft_layer(static_cast<int>(i));
    fn(p + "houlsby.down.w", houlsby[i].down_w);
    fn(p + "houlsby.down.b", houlsby[i].down_b);
    fn(p + "houlsby.up.w", houlsby[i].up_w);
    fn(p + "houlsby.up.b", houlsby[i].up_b);
  }
  for (std::size_t i = 0; i < lora.size(); ++i) {
    const std::string p = peft_layer(static_cast<int>(i));
    if (!lora[i].a_q.empty()) {
      fn(p + "lora.q.a", lora[i].a_q);
      fn(p + "lora.q.b", lora[i].b_q);
    }
    if (!lora[i].a_v.empty()) {
      fn(p + "lora.v.a", lora[i].a_v);
      fn(p + "lora.v.b", lora[i].b_v);
    }
  }
  for (std::size_t i = 0; i < adapter_bias.size(); ++i) {
    const std::string p = peft_layer(static_cast<int>(i));
    fn(p + "adapterbias.shift", adapter_bias[i].shift);
    fn(p + "adapterbias.alpha.w", adapter_bias[i].alpha_w);
    fn(p + "adapterbias.alpha.b", adapter_bias[i].alpha_b);
  }
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    const std::string p = peft_layer(static_cast<int>(i));
    fn(p + "prefix.k", prefix[i].k);
    fn(p + "prefix.v", prefix[i].v);
  }
  if (!layer_weights.empty()) fn("peft.weighted_sum.w", layer_weights);
}

std::pair<MethodState, FreezePlan> inject(const MethodConfig& m, const EncoderConfig& enc,
                                          Rng& rng) {
  m.validate(enc);
  const Index d = enc.d_model;
  MethodState state;
  state.kind = m.kind;
  FreezePlan plan;
  plan.trainable.insert("head.w");
  plan.trainable.insert("head.b");
  switch (m.kind) {
    case Method::FullFT:
      for (const NamedShape& ns : encoder_param_shapes(enc)) plan.trainable.insert(ns.name);
      break;
    case Method::HeadOnly:
      break;
    case Method::BitFit:
      for (int i = 0; i < enc.n_layers; ++i) {
        const std::string p = "layer." + std::to_string(i) + ".";
        plan.trainable.insert(p + "attn.bq");
        plan.trainable.insert(p + "attn.bk");
        plan.trainable.insert(p + "attn.bv");
        plan.trainable.insert(p + "attn.bo");
        plan.trainable.insert(p + "ffn.b1");
        plan.trainable.insert(p + "ffn.b2");
        plan.trainable.insert(p + "ln1.b");
        plan.trainable.insert(p + "ln2.b");
      }
      break;
    case Method::Houlsby:
      state.houlsby.resize(static_cast<std::size_t>(enc.n_layers));
      for (auto& layer : state.houlsby) {
        layer.down_w = small_uniform({d, m.bottleneck}, rng);
        layer.down_b = small_uniform({m.bottleneck}, rng);
        layer.up_w = Tensor(Shape{m.bottleneck, d});
        layer.up_b = Tensor(Shape{d});
      }
      break;
    case Method::LoRA:
      state.lora.resize(static_cast<std::size_t>(enc.n_layers));
      for (auto& layer : state.lora) {
        if (m.lora_q) {
          layer.a_q = small_uniform({m.rank, d}, rng);
          layer.b_q = Tensor(Shape{d, m.rank});
        }
        if (m.lora_v) {
          layer.a_v = small_uniform({m.rank, d}, rng);
          layer.b_v = Tensor(Shape{d, m.rank});
        }
      }
      break;
    case Method::AdapterBias:
      state.adapter_bias.resize(static_cast<std::size_t>(enc.n_layers));
      for (auto& layer : state.adapter_bias) {
        layer.shift = Tensor(Shape{1, d});
        layer.alpha_w = small_uniform({d, 1}, rng);
        layer.alpha_b = small_uniform({1}, rng);
      }
      break;
    case Method::Prefix:
      state.prefix.resize(static_cast<std::size_t>(enc.n_layers));
      for (auto& layer : state.prefix) {
        layer.k = Tensor(Shape{m.prefix_len, d});
        layer.v = Tensor(Shape{m.prefix_len, d});
      }
      state.prefix_pending = true;
      break;
    case Method::WeightedSum:
      state.layer_weights = Tensor(Shape{enc.n_layers});
      break;
  }
  for (const NamedShape& ns : injected_param_shapes(m, enc)) plan.trainable.insert(ns.name);
  return {std::move(state), std::move(plan)};
}

ValueId houlsby_forward(Graph& g, Binder& bind, ValueId h, HoulsbyLayer& layer) {
  ValueId z = add_row_bias(g, matmul(g, h, bind(layer.down_w)), bind(layer.down_b));
  z = gelu(g, z);
  z = add_row_bias(g, matmul(g, z, bind(layer.up_w)), bind(layer.up_b));
  return add(g, h, z);
}

ValueId adapter_bias_forward(Graph& g, Binder& bind, ValueId h, AdapterBiasLayer& layer) {
  ValueId alpha = add_row_bias(g, matmul(g, h, bind(layer.alpha_w)), bind(layer.alpha_b));
  return add(g, h, matmul(g, alpha, bind(layer.shift)));
}

EncoderHooks make_hooks(MethodState& state, const MethodConfig& m, const EncoderConfig& enc) {
  EncoderHooks hooks;
  switch (m.kind) {
    case Method::FullFT:
    case Method::HeadOnly:
    case Method::BitFit:
    case Method::WeightedSum:
      return hooks;  // no per-layer insertion
    default:
      break;
  }
  hooks.layers.resize(static_cast<std::size_t>(enc.n_layers));
  for (int i = 0; i < enc.n_layers; ++i) {
    LayerHooks& lh = hooks.layers[static_cast<std::size_t>(i)];
    switch (m.kind) {
      case Method::Houlsby: {
        HoulsbyLayer* layer = &state.houlsby[static_cast<std::size_t>(i)];
        lh.adapter = [layer](Graph& g, Binder& bind, ValueId h) {
          return houlsby_forward(g, bind, h, *layer);
        };
        break;
      }
      case Method::AdapterBias: {
        AdapterBiasLayer* layer = &state.adapter_bias[static_cast<std::size_t>(i)];
        lh.adapter = [layer](Graph& g, Binder& bind, ValueId h) {
          return adapter_bias_forward(g, bind, h, *layer);
        };
        break;
      }
      case Method::LoRA: {
        LoraLayer& layer = state.lora[static_cast<std::size_t>(i)];
        if (!layer.a_q.empty()) lh.lora_q = LoraHook{&layer.a_q, &layer.b_q};
        if (!layer.a_v.empty()) lh.lora_v = LoraHook{&layer.a_v, &layer.b_v};
        break;
      }
      case Method::Prefix: {
        PrefixLayer& layer = state.prefix[static_cast<std::size_t>(i)];
        lh.prefix_k = &layer.k;
        lh.prefix_v = &layer.v;
        break;
      }
      default:
        break;
    }
  }
  return hooks;
}

std::vector<std::pair<Tensor, Tensor>> prefix_init_from_batch(
    const std::vector<std::vector<Tensor>>& layer_inputs, int prefix_len) {
  if (prefix_len < 1) throw ConfigError("prefix_init_from_batch: prefix_len must be at least 1");
  if (layer_inputs.empty()) throw ShapeError("prefix_init_from_batch: no layers");
  std::vector<std::pair<Tensor, Tensor>> out;
  for (const auto& batch : layer_inputs) {
    if (batch.empty()) throw ShapeError("prefix_init_from_batch: empty batch");
    const Index d = batch.front().cols();
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(d);
    Index total = 0;
    for (const Tensor& item : batch) {
      if (item.rank() != 2 || item.cols() != d) {
        throw ShapeError("prefix_init_from_batch: inconsistent hidden shape " +
                         shape_str(item.shape()));
      }
      mean += item.mat().colwise().sum();
      total += item.rows();
    }
    mean /= static_cast<double>(total);
    Tensor pk(Shape{prefix_len, d});
    pk.mat().rowwise() = mean;
    out.emplace_back(pk, pk);
  }
  return out;
}

ValueId weighted_sum_combine(Graph& g, Binder& bind, const std::vector<ValueId>& hidden,
                             Tensor& layer_weights) {
  if (layer_weights.rank() != 1 ||
      static_cast<std::size_t>(layer_weights.size()) != hidden.size()) {
    throw ShapeError("weighted_sum_combine: " + std::to_string(hidden.size()) +
                     " layer outputs but weights have shape " +
                     shape_str(layer_weights.shape()));
  }
  ValueId sm = softmax(g, bind(layer_weights), 0);
  return weighted_combine(g, sm, hidden);
}

long long count_trainable(const FreezePlan& plan, const std::vector<NamedShape>& inventory,
                          CountScope scope) {
  long long total = 0;
  for (const std::string& name : plan.trainable) {
    if (scope == CountScope::UpstreamOnly && name.rfind("head.", 0) == 0) continue;
    bool found = false;
    for (const NamedShape& ns : inventory) {
      if (ns.name == name) {
        total += static_cast<long long>(ns.numel());
        found = true;
        break;
      }
    }
    if (!found) throw InventoryError("count_trainable: \"" + name + "\" is not in the inventory");
  }
  return total;
}

}  // namespace peftlab
