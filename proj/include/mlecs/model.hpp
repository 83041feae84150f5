#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "mlecs/numeric.hpp"
#include "mlecs/rng.hpp"

namespace mlecs {

using ModalityId = std::size_t;
/// Features of one sample keyed by modality; absent modalities have no entry.
using SampleFeatures = std::map<ModalityId, Vector>;

enum class Activation { identity, gelu };

double gelu(double x);
double gelu_derivative(double x);

struct DenseLayer {
  Matrix weight;  // out × in
  Vector bias;
  Activation activation = Activation::identity;

  std::size_t in() const { return weight.cols(); }
  std::size_t out() const { return weight.rows(); }
  std::size_t parameter_count() const { return weight.size() + bias.size(); }

  /// Weights uniform with variance gain²/in (gain √2 for GeLU), zero bias.
  static DenseLayer random(std::size_t in, std::size_t out, Activation act, Rng& rng);
  static DenseLayer zeros(std::size_t in, std::size_t out, Activation act);
};

using DenseStack = std::vector<DenseLayer>;

struct DenseCache {
  Vector input;
  Vector pre;
};

struct DenseGrad {
  Matrix weight;
  Vector bias;

  static DenseGrad zeros_like(const DenseLayer& layer);
};

Vector dense_forward(const DenseLayer& layer, std::span<const double> x, DenseCache* cache = nullptr);
/// Returns ∂L/∂x; accumulates parameter gradients into `grad` when non-null.
Vector dense_backward(const DenseLayer& layer, const DenseCache& cache, std::span<const double> dy,
                      DenseGrad* grad);

Vector stack_forward(const DenseStack& stack, std::span<const double> x,
                     std::vector<DenseCache>* caches = nullptr);
Vector stack_backward(const DenseStack& stack, const std::vector<DenseCache>& caches,
                      std::span<const double> dy, std::vector<DenseGrad>* grads);

/// Low-rank update ΔW = scale · B·A for a frozen p×q weight.
struct LoRAAdapter {
  Matrix a;  // r × q
  Matrix b;  // p × r
  double scale = 1.0;

  std::size_t rank() const { return a.rows(); }
  std::size_t parameter_count() const { return a.size() + b.size(); }
  Matrix delta() const;

  /// A uniform in ±1/√q, B = 0. Requires 1 ≤ r ≤ min(p, q) / 2.
  static LoRAAdapter init(std::size_t p, std::size_t q, std::size_t rank, double scale, Rng& rng);

  bool operator==(const LoRAAdapter&) const = default;
};

/// Parameters per adapted p×q layer at rank r.
constexpr std::size_t lora_parameter_count(std::size_t p, std::size_t q, std::size_t rank) {
  return rank * (p + q);
}

struct BackboneLayer {
  DenseLayer frozen;
  std::optional<LoRAAdapter> adapter;
};

/// Frozen dense stack. The final layer is the output head over the vocabulary.
struct Backbone {
  std::vector<BackboneLayer> layers;
  std::size_t prompt_tokens = 1;

  std::size_t token_width() const { return layers.front().frozen.in(); }
  std::size_t vocab() const { return layers.back().frozen.out(); }
  std::size_t adapter_count() const;
  std::size_t adapter_parameter_count() const;
  std::size_t frozen_parameter_count() const;
  std::uint64_t frozen_digest() const;
};

struct BackboneSpec {
  std::size_t hidden = 16;
  std::size_t layers = 2;  // hidden layers; the head is added on top
  std::size_t prompt_tokens = 2;
  bool operator==(const BackboneSpec&) const = default;
};

struct LoraSpec {
  std::size_t rank = 2;
  double scale = 1.0;
  bool on_head = true;
  bool operator==(const LoraSpec&) const = default;
};

Backbone make_backbone(std::size_t token_width, std::size_t vocab, const BackboneSpec& spec,
                       const LoraSpec& lora, Rng& frozen_rng, Rng& lora_rng);

struct LogitSequence {
  Matrix data;  // S × V

  std::size_t length() const { return data.rows(); }
  std::size_t vocab() const { return data.cols(); }
};

struct BackboneLayerCache {
  Vector input;
  Vector ax;  // A·x, present when the adapter was applied
  Vector pre;
};

struct BackboneTrace {
  bool use_lora = true;
  std::vector<std::vector<BackboneLayerCache>> tokens;  // [token][layer]
};

struct AdapterGrad {
  Matrix a;
  Matrix b;
};

/// Runs every row of `prompt_tokens` through the backbone; one logit row each.
LogitSequence backbone_forward(const Backbone& backbone, const Matrix& prompt_tokens, bool use_lora,
                               BackboneTrace* trace = nullptr);
/// Returns ∂L/∂prompt_tokens; accumulates adapter gradients (one entry per
/// backbone layer, empty for unadapted layers) when `grads` is non-null.
Matrix backbone_backward(const Backbone& backbone, const BackboneTrace& trace, const Matrix& dlogits,
                         std::vector<AdapterGrad>* grads);

std::vector<AdapterGrad> zero_adapter_grads(const Backbone& backbone);

/// Deep copies of the adapters in layer order.
std::vector<LoRAAdapter> extract_lora(const Backbone& backbone);
/// Replaces adapters elementwise; shapes must match layer by layer.
void apply_lora(Backbone& backbone, std::span<const LoRAAdapter> adapters);

struct ModelShape {
  std::vector<std::size_t> raw_dims;  // one per modality in the universe
  std::size_t encoder_hidden = 16;
  std::size_t feature_dim = 8;
  std::size_t latent_dim = 8;
  std::size_t fusion_hidden = 16;
  std::size_t prompt_hidden = 16;
  std::size_t token_width = 8;
  std::size_t vocab = 8;
  bool operator==(const ModelShape&) const = default;

  std::size_t modality_count() const { return raw_dims.size(); }
};

/// Encoders and projectors exist only for the modalities the owner holds; the
/// fusion input always spans the full universe (absent slots are zero).
struct UnifiedModel {
  ModelShape shape;
  std::map<ModalityId, DenseStack> encoders;
  std::map<ModalityId, DenseLayer> projectors;
  DenseStack fusion;
  DenseStack soft_prompt_gen;
  Backbone backbone;

  std::vector<ModalityId> modalities() const;
  std::size_t parameter_count() const;
};

UnifiedModel make_unified_model(const ModelShape& shape, std::span<const ModalityId> modalities,
                                Backbone backbone, Rng& rng);

Vector encode(const UnifiedModel& model, ModalityId modality, std::span<const double> x);
/// Projection into the latent space, L2-normalized. A zero raw output maps to e1.
Vector project(const UnifiedModel& model, ModalityId modality, std::span<const double> z);
/// Zero-imputed, modality-ordered concatenation through the fusion stack.
Vector fuse(const UnifiedModel& model, const std::map<ModalityId, Vector>& reps);
/// k_p × d_b soft-prompt tokens.
Matrix soft_prompt(const UnifiedModel& model, std::span<const double> fused);

/// L2 normalization with the degenerate rule (zero vector → e1).
Vector normalize_or_e1(std::span<const double> v, bool* degenerate = nullptr);

/// Mean cross entropy over positions.
double supervised_loss(const LogitSequence& logits, std::size_t label);
/// Loss plus ∂loss/∂logits.
double supervised_loss_grad(const LogitSequence& logits, std::size_t label, Matrix& dlogits);
/// Argmax over the first `classes` vocabulary entries of the position-mean logits.
std::size_t predict_class(const LogitSequence& logits, std::size_t classes);

enum class ParamGroup : unsigned {
  encoders = 1u << 0,
  projectors = 1u << 1,
  fusion = 1u << 2,
  soft_prompt = 1u << 3,
  adapters = 1u << 4,
  backbone = 1u << 5,  // frozen; never trainable
};

class TrainableSet {
 public:
  constexpr TrainableSet() = default;
  constexpr TrainableSet(std::initializer_list<ParamGroup> groups) {
    for (auto g : groups) bits_ |= static_cast<unsigned>(g);
  }
  constexpr bool contains(ParamGroup g) const { return (bits_ & static_cast<unsigned>(g)) != 0; }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr unsigned bits() const { return bits_; }

 private:
  unsigned bits_ = 0;
};

inline constexpr TrainableSet kCclTrainable{ParamGroup::projectors, ParamGroup::fusion,
                                            ParamGroup::soft_prompt, ParamGroup::adapters};
inline constexpr TrainableSet kAmtTrainable{ParamGroup::encoders, ParamGroup::adapters};
inline constexpr TrainableSet kAllTrainable{ParamGroup::encoders, ParamGroup::projectors,
                                            ParamGroup::fusion, ParamGroup::soft_prompt,
                                            ParamGroup::adapters};
inline constexpr TrainableSet kConnectorParams{ParamGroup::projectors, ParamGroup::fusion,
                                               ParamGroup::soft_prompt};

struct ModelGrads {
  std::map<ModalityId, std::vector<DenseGrad>> encoders;
  std::map<ModalityId, DenseGrad> projectors;
  std::vector<DenseGrad> fusion;
  std::vector<DenseGrad> soft_prompt_gen;
  std::vector<AdapterGrad> adapters;

  static ModelGrads zeros_like(const UnifiedModel& model);
};

struct ModalityTrace {
  std::vector<DenseCache> encoder;
  Vector feature;
  DenseCache projector;
  Vector raw;
  Vector rep;
  bool degenerate = false;
};

/// Everything a backward pass needs from one sample's forward pass.
struct ForwardTrace {
  std::map<ModalityId, ModalityTrace> modalities;
  std::vector<DenseCache> fusion;
  Vector fused;
  std::vector<DenseCache> prompt;
  Matrix prompt_tokens;
  BackboneTrace backbone;
  LogitSequence logits;
};

ForwardTrace forward(const UnifiedModel& model, const SampleFeatures& sample, bool use_lora = true);

/// Backpropagates ∂L/∂logits plus extra ∂L/∂h per modality (the contrastive
/// terms) and accumulates gradients for the groups in `trainable`.
void backward(const UnifiedModel& model, const ForwardTrace& trace, const Matrix& dlogits,
              const std::map<ModalityId, Vector>& drep, TrainableSet trainable, ModelGrads& grads);

/// Mutable views over the parameters of the given groups, in a fixed order.
/// Requesting the frozen backbone group throws.
std::vector<std::span<double>> parameter_spans(UnifiedModel& model, TrainableSet groups);
/// Views over the matching gradients, in the same order as parameter_spans.
std::vector<std::span<double>> gradient_spans(ModelGrads& grads, TrainableSet groups);

std::vector<std::span<double>> adapter_spans(Backbone& backbone);
std::vector<std::span<double>> adapter_grad_spans(std::vector<AdapterGrad>& grads);

Vector flatten(const std::vector<std::span<double>>& spans);
void assign(const std::vector<std::span<double>>& spans, std::span<const double> values);
/// params -= lr · scale · grads
void sgd_update(const std::vector<std::span<double>>& params,
                const std::vector<std::span<double>>& grads, double lr, double scale = 1.0);

std::uint64_t digest(std::span<const double> values, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t digest(const std::vector<std::span<double>>& spans);
std::uint64_t digest(std::span<const LoRAAdapter> adapters);

}  // namespace mlecs
