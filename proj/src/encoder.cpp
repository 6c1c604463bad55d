#include "peftlab/encoder.hpp"

#include <cmath>

namespace peftlab {

namespace {

std::string layer_prefix(int i) { return "layer." + std::to_string(i) + "."; }

Tensor xavier(Index fan_in, Index fan_out, Rng& rng) {
  Tensor t(Shape{fan_in, fan_out});
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(-limit, limit);
  return t;
}

ValueId linear(Graph& g, Binder& bind, ValueId x, Tensor& w, Tensor& b) {
  return add_row_bias(g, matmul(g, x, bind(w)), bind(b));
}

bool hook_active(const Tensor* t) { return t != nullptr && !t->empty(); }

}  // namespace

void EncoderConfig::validate() const {
  if (n_layers < 1) throw ConfigError("encoder.n_layers must be at least 1");
  if (d_model < 1) throw ConfigError("encoder.d_model must be at least 1");
  if (n_heads < 1) throw ConfigError("encoder.n_heads must be at least 1");
  if (d_model % n_heads != 0) {
    throw ConfigError("encoder.d_model (" + std::to_string(d_model) +
                      ") must be divisible by encoder.n_heads (" + std::to_string(n_heads) + ")");
  }
  if (d_ffn < 1) throw ConfigError("encoder.d_ffn must be at least 1");
  if (d_input < 1) throw ConfigError("encoder.d_input must be at least 1");
  if (max_len < 1) throw ConfigError("encoder.max_len must be at least 1");
}

std::vector<NamedShape> encoder_param_shapes(const EncoderConfig& cfg) {
  cfg.validate();
  const Index d = cfg.d_model;
  const Index f = cfg.d_ffn;
  std::vector<NamedShape> out;
  out.push_back({"in_proj.w", {cfg.d_input, d}});
  out.push_back({"in_proj.b", {d}});
  out.push_back({"pos", {cfg.max_len, d}});
  out.push_back({"mask_embed", {cfg.d_input}});
  for (int i = 0; i < cfg.n_layers; ++i) {
    const std::string p = layer_prefix(i);
    out.push_back({p + "attn.wq", {d, d}});
    out.push_back({p + "attn.bq", {d}});
    out.push_back({p + "attn.wk", {d, d}});
    out.push_back({p + "attn.bk", {d}});
    out.push_back({p + "attn.wv", {d, d}});
    out.push_back({p + "attn.bv", {d}});
    out.push_back({p + "attn.wo", {d, d}});
    out.push_back({p + "attn.bo", {d}});
    out.push_back({p + "ffn.w1", {d, f}});
    out.push_back({p + "ffn.b1", {f}});
    out.push_back({p + "ffn.w2", {f, d}});
    out.push_back({p + "ffn.b2", {d}});
    out.push_back({p + "ln1.g", {d}});
    out.push_back({p + "ln1.b", {d}});
    out.push_back({p + "ln2.g", {d}});
    out.push_back({p + "ln2.b", {d}});
  }
  return out;
}

EncoderParams EncoderParams::zeros(const EncoderConfig& cfg) {
  cfg.validate();
  EncoderParams p;
  p.config = cfg;
  const Index d = cfg.d_model;
  const Index f = cfg.d_ffn;
  p.in_w = Tensor(Shape{cfg.d_input, d});
  p.in_b = Tensor(Shape{d});
  p.pos = Tensor(Shape{cfg.max_len, d});
  p.mask_embed = Tensor(Shape{cfg.d_input});
  p.layers.resize(static_cast<std::size_t>(cfg.n_layers));
  for (auto& layer : p.layers) {
    layer.attn.wq = Tensor(Shape{d, d});
    layer.attn.bq = Tensor(Shape{d});
    layer.attn.wk = Tensor(Shape{d, d});
    layer.attn.bk = Tensor(Shape{d});
    layer.attn.wv = Tensor(Shape{d, d});
    layer.attn.bv = Tensor(Shape{d});
    layer.attn.wo = Tensor(Shape{d, d});
    layer.attn.bo = Tensor(Shape{d});
    layer.ffn.w1 = Tensor(Shape{d, f});
    layer.ffn.b1 = Tensor(Shape{f});
    layer.ffn.w2 = Tensor(Shape{f, d});
    layer.ffn.b2 = Tensor(Shape{d});
    layer.ln1.gain = Tensor(Shape{d});
    layer.ln1.bias = Tensor(Shape{d});
    layer.ln2.gain = Tensor(Shape{d});
    layer.ln2.bias = Tensor(Shape{d});
  }
  return p;
}

EncoderParams EncoderParams::init(const EncoderConfig& cfg, Rng& rng) {
  EncoderParams p = zeros(cfg);
  const Index d = cfg.d_model;
  const Index f = cfg.d_ffn;
  p.in_w = xavier(cfg.d_input, d, rng);
  for (Index i = 0; i < p.pos.size(); ++i) p.pos[i] = 0.02 * rng.normal();
  for (Index i = 0; i < p.mask_embed.size(); ++i) p.mask_embed[i] = 0.02 * rng.normal();
  for (auto& layer : p.layers) {
    layer.attn.wq = xavier(d, d, rng);
    layer.attn.wk = xavier(d, d, rng);
    layer.attn.wv = xavier(d, d, rng);
    layer.attn.wo = xavier(d, d, rng);
    layer.ffn.w1 = xavier(d, f, rng);
    layer.ffn.w2 = xavier(f, d, rng);
    layer.ln1.gain.vec().setOnes();
    layer.ln2.gain.vec().setOnes();
  }
  return p;
}

void EncoderParams::for_each(const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("in_proj.w", in_w);
  fn("in_proj.b", in_b);
  fn("pos", pos);
  fn("mask_embed", mask_embed);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string p = layer_prefix(static_cast<int>(i));
    LayerParams& l = layers[i];
    fn(p + "attn.wq", l.attn.wq);
    fn(p + "attn.bq", l.attn.bq);
    fn(p + "attn.wk", l.attn.wk);
    fn(p + "attn.bk", l.attn.bk);
    fn(p + "attn.wv", l.attn.wv);
    fn(p + "attn.bv", l.attn.bv);
    fn(p + "attn.wo", l.attn.wo);
    fn(p + "attn.bo", l.attn.bo);
    fn(p + "ffn.w1", l.ffn.w1);
    fn(p + "ffn.b1", l.ffn.b1);
    fn(p + "ffn.w2", l.ffn.w2);
    fn(p + "ffn.b2", l.ffn.b2);
    fn(p + "ln1.g", l.ln1.gain);
    fn(p + "ln1.b", l.ln1.bias);
    fn(p + "ln2.g", l.ln2.gain);
    fn(p + "ln2.b", l.ln2.bias);
  }
}

ValueId lora_delta(Graph& g, Binder& bind, ValueId x, const LoraHook& hook) {
  if (hook.a == nullptr || hook.b == nullptr || hook.a->empty() || hook.b->empty()) {
    throw ShapeError("lora_delta: hook tensors are missing");
  }
  return matmul(g, matmul(g, x, transpose(g, bind(*hook.a))), transpose(g, bind(*hook.b)));
}

ValueId mha_forward(Graph& g, Binder& bind, ValueId x, AttentionParams& p, int n_heads,
                    const LayerHooks* hooks, MhaTrace* trace) {
  const Tensor& xv = g.value(x);
  if (xv.rank() != 2) throw ShapeError("mha_forward: input must be rank 2");
  const Index d = xv.cols();
  if (n_heads < 1 || d % n_heads != 0) {
    throw ConfigError("mha_forward: d_model " + std::to_string(d) + " not divisible by " +
                      std::to_string(n_heads) + " heads");
  }
  ValueId q = linear(g, bind, x, p.wq, p.bq);
  ValueId k = linear(g, bind, x, p.wk, p.bk);
  ValueId v = linear(g, bind, x, p.wv, p.bv);
  if (hooks != nullptr && hooks->lora_q.has_value()) {
    q = add(g, q, lora_delta(g, bind, x, *hooks->lora_q));
  }
  if (hooks != nullptr && hooks->lora_v.has_value()) {
    v = add(g, v, lora_delta(g, bind, x, *hooks->lora_v));
  }
  if (hooks != nullptr && hook_active(hooks->prefix_k)) {
    if (!hook_active(hooks->prefix_v)) throw ShapeError("mha_forward: prefix_v is missing");
    k = concat_rows(g, bind(*hooks->prefix_k), k);
    v = concat_rows(g, bind(*hooks->prefix_v), v);
  }
  const Index dh = d / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  ValueId merged{};
  for (int h = 0; h < n_heads; ++h) {
    const Index c0 = h * dh;
    const Index c1 = c0 + dh;
    ValueId qh = slice_cols(g, q, c0, c1);
    ValueId kh = slice_cols(g, k, c0, c1);
    ValueId vh = slice_cols(g, v, c0, c1);
    ValueId attn = softmax(g, scale(g, matmul(g, qh, transpose(g, kh)), inv_sqrt), 1);
    if (trace != nullptr) trace->attention.push_back(attn);
    ValueId oh = matmul(g, attn, vh);
    merged = h == 0 ? oh : concat_cols(g, merged, oh);
  }
  return linear(g, bind, merged, p.wo, p.bo);
}

ValueId ffn_forward(Graph& g, Binder& bind, ValueId x, FfnParams& ffn, LayerNormParams& ln,
                    const AdapterFn& adapter) {
  ValueId h = linear(g, bind, x, ffn.w1, ffn.b1);
  h = gelu(g, h);
  h = linear(g, bind, h, ffn.w2, ffn.b2);
  if (adapter) h = adapter(g, bind, h);
  return layer_norm(g, add(g, x, h), bind(ln.gain), bind(ln.bias));
}

EncoderTrace encoder_forward(Graph& g, Binder& bind, ValueId features, EncoderParams& p,
                             const EncoderHooks* hooks) {
  p.config.validate();
  const Tensor& fv = g.value(features);
  if (fv.rank() != 2 || fv.cols() != p.config.d_input) {
    throw ShapeError("encoder_forward: features " + shape_str(fv.shape()) + " do not match d_input " +
                     std::to_string(p.config.d_input));
  }
  const Index frames = fv.rows();
  if (frames > p.config.max_len) {
    throw ShapeError("encoder_forward: " + std::to_string(frames) + " frames exceed max_len " +
                     std::to_string(p.config.max_len));
  }
  if (hooks != nullptr && !hooks->layers.empty() &&
      hooks->layers.size() != static_cast<std::size_t>(p.config.n_layers)) {
    throw ConfigError("encoder_forward: " + std::to_string(hooks->layers.size()) +
                      " layer hooks for " + std::to_string(p.config.n_layers) + " layers");
  }
  EncoderTrace trace;
  ValueId x = linear(g, bind, features, p.in_w, p.in_b);
  x = add(g, x, slice_rows(g, bind(p.pos), 0, frames));
  trace.projected = x;
  for (int i = 0; i < p.config.n_layers; ++i) {
    const LayerHooks* lh =
        (hooks != nullptr && !hooks->layers.empty()) ? &hooks->layers[static_cast<std::size_t>(i)] : nullptr;
    LayerParams& layer = p.layers[static_cast<std::size_t>(i)];
    trace.attn.emplace_back();
    ValueId a = mha_forward(g, bind, x, layer.attn, p.config.n_heads, lh, &trace.attn.back());
    x = layer_norm(g, add(g, x, a), bind(layer.ln1.gain), bind(layer.ln1.bias));
    x = ffn_forward(g, bind, x, layer.ffn, layer.ln2, lh != nullptr ? lh->adapter : AdapterFn());
    trace.hidden.push_back(x);
  }
  return trace;
}

EncoderTrace encoder_forward(Graph& g, Binder& bind, const Tensor& features, EncoderParams& p,
                             const EncoderHooks* hooks) {
  if (features.empty()) throw ShapeError("encoder_forward: empty input");
  return encoder_forward(g, bind, g.input(features), p, hooks);
}

PretrainHead PretrainHead::init(const EncoderConfig& cfg, Rng& rng) {
  PretrainHead head;
  head.w = xavier(cfg.d_model, cfg.d_input, rng);
  head.b = Tensor(Shape{cfg.d_input});
  return head;
}

std::vector<int> masked_frame_rows(int frames, double mask_frac, std::uint64_t seed) {
  if (frames < 1) throw ShapeError("masked_frame_rows: no frames");
  if (!(mask_frac > 0.0 && mask_frac < 1.0)) {
    throw ConfigError("mask_frac must lie in (0, 1), got " + std::to_string(mask_frac));
  }
  const int n_mask = static_cast<int>(std::ceil(mask_frac * frames));
  Rng rng(seed);
  return rng.sample(frames, n_mask);
}

ValueId masked_pretrain_loss(Graph& g, Binder& bind, const Tensor& features, EncoderParams& p,
                             PretrainHead& head, double mask_frac, std::uint64_t seed) {
  if (features.empty()) throw ShapeError("masked_pretrain_loss: empty input");
  if (features.rank() != 2) {
    throw ShapeError("masked_pretrain_loss: features must be rank 2, got " +
                     shape_str(features.shape()));
  }
  const std::vector<int> rows =
      masked_frame_rows(static_cast<int>(features.rows()), mask_frac, seed);
  ValueId in = g.input(features);
  ValueId masked = replace_rows(g, in, rows, bind(p.mask_embed));
  EncoderTrace trace = encoder_forward(g, bind, masked, p);
  ValueId recon = linear(g, bind, trace.hidden.back(), head.w, head.b);
  return masked_mse(g, recon, features, rows);
}

}  // namespace peftlab
