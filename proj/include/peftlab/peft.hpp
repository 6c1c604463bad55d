#pragma once

#include <array>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "peftlab/encoder.hpp"

namespace peftlab {

enum class Method {
  FullFT,
  HeadOnly,
  Houlsby,
  LoRA,
  AdapterBias,
  BitFit,
  Prefix,
  WeightedSum,
};

inline constexpr std::array<Method, 8> kAllMethods = {
    Method::FullFT,  Method::HeadOnly, Method::Houlsby, Method::LoRA,
    Method::AdapterBias, Method::BitFit, Method::Prefix, Method::WeightedSum,
};

std::string method_name(Method m);
Method method_from_name(const std::string& name);

struct MethodConfig {
  Method kind = Method::HeadOnly;
  int bottleneck = 32;                     // Houlsby adapter width
  int rank = 8;                            // LoRA rank
  bool lora_q = true, lora_v = true;       // LoRA targets
  int prefix_len = 5;

  void validate(const EncoderConfig& enc) const;
};

struct HoulsbyLayer {
  Tensor down_w, down_b, up_w, up_b;
};

struct LoraLayer {
  Tensor a_q, b_q, a_v, b_v;  // empty tensors when the target is disabled
};

struct AdapterBiasLayer {
  Tensor shift;    // 1 x d_model, the shared shift direction
  Tensor alpha_w;  // d_model x 1, per-frame scale
  Tensor alpha_b;  // 1
};

struct PrefixLayer {
  Tensor k, v;  // prefix_len x d_model each
};

// Tensors a method adds to a frozen encoder. Only the vectors matching
// `kind` are populated.
struct MethodState {
  Method kind = Method::HeadOnly;
  std::vector<HoulsbyLayer> houlsby;
  std::vector<LoraLayer> lora;
  std::vector<AdapterBiasLayer> adapter_bias;
  std::vector<PrefixLayer> prefix;
  Tensor layer_weights;        // weighted-sum logits over layer outputs
  bool prefix_pending = false;  // true until prefix rows are data-initialized

  void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
};

// Names of parameters that training may update. Everything else is frozen.
struct FreezePlan {
  std::set<std::string> trainable;
  bool contains(const std::string& name) const { return trainable.count(name) != 0; }
};

// Injected tensor names and shapes as a pure function of the configs;
// nothing is allocated.
std::vector<NamedShape> injected_param_shapes(const MethodConfig& m, const EncoderConfig& enc);

// Allocates and initializes the method's tensors and derives the freeze
// plan. Adapter up-projections, LoRA B, the AdapterBias shift, and the
// weighted-sum logits start at zero so injected modules are identity at
// initialization; down-projections and scale maps start small-uniform.
std::pair<MethodState, FreezePlan> inject(const MethodConfig& m, const EncoderConfig& enc,
                                          Rng& rng);

// Bottleneck adapter applied to a hidden state: down-project, GeLU,
// up-project, residual add.
ValueId houlsby_forward(Graph& g, Binder& bind, ValueId h, HoulsbyLayer& layer);

// Per-frame scaled shift: out_t = h_t + alpha(h_t) * shift.
ValueId adapter_bias_forward(Graph& g, Binder& bind, ValueId h, AdapterBiasLayer& layer);

// Builds the per-layer hook set for the encoder out of a method's state.
EncoderHooks make_hooks(MethodState& state, const MethodConfig& m, const EncoderConfig& enc);

// Data-dependent prefix initialization: every prefix row of both K and V at
// layer i becomes the mean (over items and frames) of that layer's input
// hidden states. layer_inputs[i][j] is the [T x d] input of layer i for
// batch item j.
std::vector<std::pair<Tensor, Tensor>> prefix_init_from_batch(
    const std::vector<std::vector<Tensor>>& layer_inputs, int prefix_len);

// Softmax-weighted combination of the per-layer outputs.
ValueId weighted_sum_combine(Graph& g, Binder& bind, const std::vector<ValueId>& hidden,
                             Tensor& layer_weights);

enum class CountScope { UpstreamOnly, All };

// Exact number of trainable scalars in scope. Upstream scope excludes the
// downstream head. Throws InventoryError for plan names the inventory does
// not know.
long long count_trainable(const FreezePlan& plan, const std::vector<NamedShape>& inventory,
                          CountScope scope);

}  // namespace peftlab
