#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "peftlab/graph.hpp"
#include "peftlab/rng.hpp"

namespace peftlab {

struct EncoderConfig {
  int n_layers = 4;
  int d_model = 64;
  int n_heads = 4;
  int d_ffn = 256;
  int d_input = 16;
  int max_len = 64;

  int head_dim() const { return d_model / n_heads; }
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

struct NamedShape {
  std::string name;
  Shape shape;
  Index numel() const { return shape_numel(shape); }
};

// Complete encoder parameter inventory (names and shapes) without
// allocating anything. Allocation, freeze plans, checkpoints and counting
// all derive from this one enumeration.
std::vector<NamedShape> encoder_param_shapes(const EncoderConfig& cfg);

struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct FfnParams {
  Tensor w1, b1, w2, b2;
};

struct LayerNormParams {
  Tensor gain, bias;
};

struct LayerParams {
  AttentionParams attn;
  FfnParams ffn;
  LayerNormParams ln1, ln2;
};

struct EncoderParams {
  EncoderConfig config;
  Tensor in_w, in_b;  // input projection d_input -> d_model
  Tensor pos;         // learned position table, max_len x d_model
  Tensor mask_embed;  // d_input; substituted for masked frames
  std::vector<LayerParams> layers;

  static EncoderParams init(const EncoderConfig& cfg, Rng& rng);
  static EncoderParams zeros(const EncoderConfig& cfg);
  // Visits every parameter in inventory order with its stable name.
  void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
};

// Per-layer insertion points for parameter-efficient methods. Pointers refer
// to tensors owned elsewhere; null (or empty tensor) means inactive.
struct LoraHook {
  Tensor* a = nullptr;  // rank x d_model
  Tensor* b = nullptr;  // d_model x rank
};

using AdapterFn = std::function<ValueId(Graph&, Binder&, ValueId)>;

struct LayerHooks {
  Tensor* prefix_k = nullptr;  // l x d_model, prepended to keys
  Tensor* prefix_v = nullptr;  // l x d_model, prepended to values
  std::optional<LoraHook> lora_q, lora_v;
  AdapterFn adapter;  // applied to the FFN output before the residual
};

struct EncoderHooks {
  std::vector<LayerHooks> layers;  // empty, or one entry per encoder layer
};

// Low-rank additive delta: x A^T B^T.
ValueId lora_delta(Graph& g, Binder& bind, ValueId x, const LoraHook& hook);

struct MhaTrace {
  std::vector<ValueId> attention;  // per-head row-softmax outputs
};

ValueId mha_forward(Graph& g, Binder& bind, ValueId x, AttentionParams& p, int n_heads,
                    const LayerHooks* hooks = nullptr, MhaTrace* trace = nullptr);

// FFN with residual and the layer's second LayerNorm. The adapter, when
// present, transforms the FFN output before the residual is added.
ValueId ffn_forward(Graph& g, Binder& bind, ValueId x, FfnParams& ffn, LayerNormParams& ln,
                    const AdapterFn& adapter = nullptr);

struct EncoderTrace {
  ValueId projected;             // input projection plus position table
  std::vector<ValueId> hidden;   // output of each layer, n_layers entries
  std::vector<MhaTrace> attn;    // per-layer attention maps
};

EncoderTrace encoder_forward(Graph& g, Binder& bind, ValueId features, EncoderParams& p,
                             const EncoderHooks* hooks = nullptr);
EncoderTrace encoder_forward(Graph& g, Binder& bind, const Tensor& features, EncoderParams& p,
                             const EncoderHooks* hooks = nullptr);

// Linear reconstruction head used only while pretraining.
struct PretrainHead {
  Tensor w, b;  // d_model -> d_input
  static PretrainHead init(const EncoderConfig& cfg, Rng& rng);
};

// Deterministic choice of masked frame indices: ceil(mask_frac * T) distinct
// rows, ascending.
std::vector<int> masked_frame_rows(int frames, double mask_frac, std::uint64_t seed);

// Self-supervised objective: mask a seeded subset of frames, replace them
// with the learned mask embedding, encode, reconstruct the original frames,
// and take MSE over the masked frames only.
ValueId masked_pretrain_loss(Graph& g, Binder& bind, const Tensor& features, EncoderParams& p,
                             PretrainHead& head, double mask_frac, std::uint64_t seed);

}  // namespace peftlab
