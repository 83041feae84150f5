#include "mlecs/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace mlecs {

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

namespace {

double activate(Activation act, double x) { return act == Activation::gelu ? gelu(x) : x; }
double activate_derivative(Activation act, double x) {
  return act == Activation::gelu ? gelu_derivative(x) : 1.0;
}

void fill_uniform(Matrix& m, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : m.data()) v = dist(rng);
}

}  // namespace

DenseLayer DenseLayer::random(std::size_t in, std::size_t out, Activation act, Rng& rng) {
  DenseLayer layer = zeros(in, out, act);
  // Unit-variance weights; GeLU layers get the usual √2 gain.
  const double gain = act == Activation::gelu ? std::sqrt(2.0) : 1.0;
  fill_uniform(layer.weight, gain * std::sqrt(3.0 / static_cast<double>(in)), rng);
  return layer;
}

DenseLayer DenseLayer::zeros(std::size_t in, std::size_t out, Activation act) {
  return DenseLayer{Matrix(out, in), Vector(out, 0.0), act};
}

DenseGrad DenseGrad::zeros_like(const DenseLayer& layer) {
  return DenseGrad{Matrix(layer.out(), layer.in()), Vector(layer.out(), 0.0)};
}

Vector dense_forward(const DenseLayer& layer, std::span<const double> x, DenseCache* cache) {
  if (x.size() != layer.in()) {
    throw Error(fmt::format("dense layer expects input {}, got {}", layer.in(), x.size()));
  }
  Vector pre = matvec(layer.weight, x);
  for (std::size_t i = 0; i < pre.size(); ++i) pre[i] += layer.bias[i];
  Vector y(pre.size());
  for (std::size_t i = 0; i < pre.size(); ++i) y[i] = activate(layer.activation, pre[i]);
  if (cache != nullptr) {
    cache->input.assign(x.begin(), x.end());
    cache->pre = std::move(pre);
  }
  return y;
}

Vector dense_backward(const DenseLayer& layer, const DenseCache& cache, std::span<const double> dy,
                      DenseGrad* grad) {
  Vector dpre(dy.begin(), dy.end());
  for (std::size_t i = 0; i < dpre.size(); ++i)
    dpre[i] *= activate_derivative(layer.activation, cache.pre[i]);
  if (grad != nullptr) {
    add_outer(grad->weight, dpre, cache.input);
    for (std::size_t i = 0; i < dpre.size(); ++i) grad->bias[i] += dpre[i];
  }
  return matvec_transposed(layer.weight, dpre);
}

Vector stack_forward(const DenseStack& stack, std::span<const double> x,
                     std::vector<DenseCache>* caches) {
  if (caches != nullptr) caches->assign(stack.size(), {});
  Vector h(x.begin(), x.end());
  for (std::size_t i = 0; i < stack.size(); ++i)
    h = dense_forward(stack[i], h, caches != nullptr ? &(*caches)[i] : nullptr);
  return h;
}

Vector stack_backward(const DenseStack& stack, const std::vector<DenseCache>& caches,
                      std::span<const double> dy, std::vector<DenseGrad>* grads) {
  Vector d(dy.begin(), dy.end());
  for (std::size_t i = stack.size(); i-- > 0;)
    d = dense_backward(stack[i], caches[i], d, grads != nullptr ? &(*grads)[i] : nullptr);
  return d;
}

Matrix LoRAAdapter::delta() const {
  Matrix d = matmul(b, a);
  for (double& v : d.data()) v *= scale;
  return d;
}

LoRAAdapter LoRAAdapter::init(std::size_t p, std::size_t q, std::size_t rank, double scale,
                              Rng& rng) {
  if (rank < 1 || 2 * rank > std::min(p, q)) {
    throw Error(fmt::format("LoRA rank {} invalid for a {}x{} weight (need 1 <= r <= {})", rank, p,
                            q, std::min(p, q) / 2));
  }
  LoRAAdapter ad{Matrix(rank, q), Matrix(p, rank), scale};
  fill_uniform(ad.a, 1.0 / std::sqrt(static_cast<double>(q)), rng);
  return ad;
}

std::size_t Backbone::adapter_count() const {
  return static_cast<std::size_t>(
      std::count_if(layers.begin(), layers.end(), [](const auto& l) { return l.adapter.has_value(); }));
}

std::size_t Backbone::adapter_parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers)
    if (l.adapter) n += l.adapter->parameter_count();
  return n;
}

std::size_t Backbone::frozen_parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.frozen.parameter_count();
  return n;
}

std::uint64_t Backbone::frozen_digest() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& l : layers) {
    h = digest(l.frozen.weight.data(), h);
    h = digest(l.frozen.bias, h);
  }
  return h;
}

Backbone make_backbone(std::size_t token_width, std::size_t vocab, const BackboneSpec& spec,
                       const LoraSpec& lora, Rng& frozen_rng, Rng& lora_rng) {
  if (spec.prompt_tokens < 1) throw Error("backbone needs at least one prompt token");
  Backbone bb;
  bb.prompt_tokens = spec.prompt_tokens;
  std::size_t in = token_width;
  for (std::size_t i = 0; i < spec.layers; ++i) {
    BackboneLayer layer{DenseLayer::random(in, spec.hidden, Activation::gelu, frozen_rng), {}};
    layer.adapter = LoRAAdapter::init(spec.hidden, in, lora.rank, lora.scale, lora_rng);
    bb.layers.push_back(std::move(layer));
    in = spec.hidden;
  }
  BackboneLayer head{DenseLayer::random(in, vocab, Activation::identity, frozen_rng), {}};
  if (lora.on_head) head.adapter = LoRAAdapter::init(vocab, in, lora.rank, lora.scale, lora_rng);
  bb.layers.push_back(std::move(head));
  return bb;
}

LogitSequence backbone_forward(const Backbone& backbone, const Matrix& prompt_tokens, bool use_lora,
                               BackboneTrace* trace) {
  if (prompt_tokens.cols() != backbone.token_width()) {
    throw Error(fmt::format("backbone expects token width {}, got {}", backbone.token_width(),
                            prompt_tokens.cols()));
  }
  if (prompt_tokens.rows() == 0) throw Error("backbone needs at least one token");
  LogitSequence out{Matrix(prompt_tokens.rows(), backbone.vocab())};
  if (trace != nullptr) {
    trace->use_lora = use_lora;
    trace->tokens.assign(prompt_tokens.rows(), std::vector<BackboneLayerCache>(backbone.layers.size()));
  }
  for (std::size_t t = 0; t < prompt_tokens.rows(); ++t) {
    auto row = prompt_tokens.row(t);
    Vector h(row.begin(), row.end());
    for (std::size_t l = 0; l < backbone.layers.size(); ++l) {
      const auto& layer = backbone.layers[l];
      Vector pre = matvec(layer.frozen.weight, h);
      for (std::size_t i = 0; i < pre.size(); ++i) pre[i] += layer.frozen.bias[i];
      Vector ax;
      if (use_lora && layer.adapter) {
        ax = matvec(layer.adapter->a, h);
        const Vector bax = matvec(layer.adapter->b, ax);
        for (std::size_t i = 0; i < pre.size(); ++i) pre[i] += layer.adapter->scale * bax[i];
      }
      Vector y(pre.size());
      for (std::size_t i = 0; i < pre.size(); ++i) y[i] = activate(layer.frozen.activation, pre[i]);
      if (trace != nullptr) trace->tokens[t][l] = {std::move(h), std::move(ax), std::move(pre)};
      h = std::move(y);
    }
    std::copy(h.begin(), h.end(), out.data.row(t).begin());
  }
  return out;
}

Matrix backbone_backward(const Backbone& backbone, const BackboneTrace& trace, const Matrix& dlogits,
                         std::vector<AdapterGrad>* grads) {
  if (dlogits.rows() != trace.tokens.size() || dlogits.cols() != backbone.vocab()) {
    throw Error(fmt::format("backbone_backward: dlogits {} does not match trace", dlogits.shape()));
  }
  Matrix dtokens(dlogits.rows(), backbone.token_width());
  for (std::size_t t = 0; t < dlogits.rows(); ++t) {
    auto drow = dlogits.row(t);
    Vector d(drow.begin(), drow.end());
    for (std::size_t l = backbone.layers.size(); l-- > 0;) {
      const auto& layer = backbone.layers[l];
      const auto& cache = trace.tokens[t][l];
      for (std::size_t i = 0; i < d.size(); ++i)
        d[i] *= activate_derivative(layer.frozen.activation, cache.pre[i]);
      Vector dx = matvec_transposed(layer.frozen.weight, d);
      if (trace.use_lora && layer.adapter) {
        const auto& ad = *layer.adapter;
        const Vector btd = matvec_transposed(ad.b, d);
        if (grads != nullptr) {
          add_outer((*grads)[l].b, d, cache.ax, ad.scale);
          add_outer((*grads)[l].a, btd, cache.input, ad.scale);
        }
        const Vector atbtd = matvec_transposed(ad.a, btd);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += ad.scale * atbtd[i];
      }
      d = std::move(dx);
    }
    std::copy(d.begin(), d.end(), dtokens.row(t).begin());
  }
  return dtokens;
}

std::vector<AdapterGrad> zero_adapter_grads(const Backbone& backbone) {
  std::vector<AdapterGrad> g(backbone.layers.size());
  for (std::size_t l = 0; l < backbone.layers.size(); ++l) {
    if (const auto& ad = backbone.layers[l].adapter) {
      g[l] = {Matrix(ad->a.rows(), ad->a.cols()), Matrix(ad->b.rows(), ad->b.cols())};
    }
  }
  return g;
}

std::vector<LoRAAdapter> extract_lora(const Backbone& backbone) {
  std::vector<LoRAAdapter> out;
  for (const auto& l : backbone.layers)
    if (l.adapter) out.push_back(*l.adapter);
  return out;
}

void apply_lora(Backbone& backbone, std::span<const LoRAAdapter> adapters) {
  if (adapters.size() != backbone.adapter_count()) {
    throw Error(fmt::format("apply_lora: {} adapters for {} adapted layers", adapters.size(),
                            backbone.adapter_count()));
  }
  std::size_t k = 0;
  for (std::size_t l = 0; l < backbone.layers.size(); ++l) {
    auto& slot = backbone.layers[l].adapter;
    if (!slot) continue;
    const auto& src = adapters[k++];
    if (src.a.rows() != slot->a.rows() || src.a.cols() != slot->a.cols() ||
        src.b.rows() != slot->b.rows() || src.b.cols() != slot->b.cols()) {
      throw Error(fmt::format("apply_lora: layer {} expects A {} / B {}, got A {} / B {}", l,
                              slot->a.shape(), slot->b.shape(), src.a.shape(), src.b.shape()));
    }
  }
  k = 0;
  for (auto& layer : backbone.layers)
    if (layer.adapter) *layer.adapter = adapters[k++];
}

std::vector<ModalityId> UnifiedModel::modalities() const {
  std::vector<ModalityId> out;
  for (const auto& [m, _] : encoders) out.push_back(m);
  return out;
}

std::size_t UnifiedModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, stack] : encoders)
    for (const auto& l : stack) n += l.parameter_count();
  for (const auto& [_, l] : projectors) n += l.parameter_count();
  for (const auto& l : fusion) n += l.parameter_count();
  for (const auto& l : soft_prompt_gen) n += l.parameter_count();
  return n + backbone.frozen_parameter_count() + backbone.adapter_parameter_count();
}

UnifiedModel make_unified_model(const ModelShape& shape, std::span<const ModalityId> modalities,
                                Backbone backbone, Rng& rng) {
  if (modalities.empty()) throw Error("unified model needs at least one modality");
  if (backbone.token_width() != shape.token_width || backbone.vocab() != shape.vocab) {
    throw Error("backbone does not match the model shape");
  }
  UnifiedModel model;
  model.shape = shape;
  for (ModalityId m : modalities) {
    if (m >= shape.modality_count()) throw Error(fmt::format("unknown modality {}", m));
    model.encoders[m] = {
        DenseLayer::random(shape.raw_dims[m], shape.encoder_hidden, Activation::gelu, rng),
        DenseLayer::random(shape.encoder_hidden, shape.feature_dim, Activation::identity, rng)};
    model.projectors[m] =
        DenseLayer::random(shape.feature_dim, shape.latent_dim, Activation::identity, rng);
  }
  const std::size_t fusion_in = shape.modality_count() * shape.latent_dim;
  model.fusion = {DenseLayer::random(fusion_in, shape.fusion_hidden, Activation::gelu, rng),
                  DenseLayer::random(shape.fusion_hidden, shape.latent_dim, Activation::identity, rng)};
  model.soft_prompt_gen = {
      DenseLayer::random(shape.latent_dim, shape.prompt_hidden, Activation::gelu, rng),
      DenseLayer::random(shape.prompt_hidden, backbone.prompt_tokens * shape.token_width,
                         Activation::identity, rng)};
  model.backbone = std::move(backbone);
  return model;
}

namespace {

const DenseStack& encoder_for(const UnifiedModel& model, ModalityId m) {
  auto it = model.encoders.find(m);
  if (it == model.encoders.end()) throw Error(fmt::format("unknown modality {}", m));
  return it->second;
}

const DenseLayer& projector_for(const UnifiedModel& model, ModalityId m) {
  auto it = model.projectors.find(m);
  if (it == model.projectors.end()) throw Error(fmt::format("unknown modality {}", m));
  return it->second;
}

Vector fusion_input(const UnifiedModel& model, const std::map<ModalityId, Vector>& reps) {
  const std::size_t d = model.shape.latent_dim;
  Vector in(model.shape.modality_count() * d, 0.0);
  for (const auto& [m, h] : reps) {
    if (m >= model.shape.modality_count()) throw Error(fmt::format("unknown modality {}", m));
    if (h.size() != d) throw Error(fmt::format("fuse: rep for modality {} has length {}", m, h.size()));
    std::copy(h.begin(), h.end(), in.begin() + static_cast<std::ptrdiff_t>(m * d));
  }
  return in;
}

Matrix reshape_tokens(const Vector& flat, std::size_t tokens, std::size_t width) {
  Matrix out(tokens, width);
  std::copy(flat.begin(), flat.end(), out.data().begin());
  return out;
}

Vector normalize_backward(const ModalityTrace& mt, std::span<const double> dh) {
  Vector dr(dh.size(), 0.0);
  if (mt.degenerate) return dr;
  const double n = norm(mt.raw);
  const double proj = dot(mt.rep, dh);
  for (std::size_t i = 0; i < dr.size(); ++i) dr[i] = (dh[i] - mt.rep[i] * proj) / n;
  return dr;
}

}  // namespace

Vector normalize_or_e1(std::span<const double> v, bool* degenerate) {
  const double n = norm(v);
  Vector out(v.size(), 0.0);
  if (n < 1e-12) {
    if (!out.empty()) out[0] = 1.0;
    if (degenerate != nullptr) *degenerate = true;
    spdlog::debug("degenerate zero-norm projection replaced by e1");
    return out;
  }
  if (degenerate != nullptr) *degenerate = false;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
  return out;
}

Vector encode(const UnifiedModel& model, ModalityId modality, std::span<const double> x) {
  return stack_forward(encoder_for(model, modality), x);
}

Vector project(const UnifiedModel& model, ModalityId modality, std::span<const double> z) {
  return normalize_or_e1(dense_forward(projector_for(model, modality), z));
}

Vector fuse(const UnifiedModel& model, const std::map<ModalityId, Vector>& reps) {
  if (reps.empty()) throw Error("fuse: no modality representations");
  return stack_forward(model.fusion, fusion_input(model, reps));
}

Matrix soft_prompt(const UnifiedModel& model, std::span<const double> fused) {
  if (fused.size() != model.shape.latent_dim) {
    throw Error(fmt::format("soft_prompt: fused vector has length {}, expected {}", fused.size(),
                            model.shape.latent_dim));
  }
  return reshape_tokens(stack_forward(model.soft_prompt_gen, fused), model.backbone.prompt_tokens,
                        model.shape.token_width);
}

double supervised_loss(const LogitSequence& logits, std::size_t label) {
  Matrix unused;
  return supervised_loss_grad(logits, label, unused);
}

double supervised_loss_grad(const LogitSequence& logits, std::size_t label, Matrix& dlogits) {
  if (label >= logits.vocab()) {
    throw Error(fmt::format("label {} out of range for vocab {}", label, logits.vocab()));
  }
  const std::size_t s = logits.length();
  const double inv_s = 1.0 / static_cast<double>(s);
  dlogits = Matrix(s, logits.vocab());
  double loss = 0.0;
  for (std::size_t t = 0; t < s; ++t) {
    const Vector lp = log_softmax(logits.data.row(t));
    loss -= lp[label] * inv_s;
    auto drow = dlogits.row(t);
    for (std::size_t v = 0; v < lp.size(); ++v)
      drow[v] = (std::exp(lp[v]) - (v == label ? 1.0 : 0.0)) * inv_s;
  }
  return loss;
}

std::size_t predict_class(const LogitSequence& logits, std::size_t classes) {
  const std::size_t k = std::min(classes, logits.vocab());
  std::size_t best = 0;
  double best_score = -1e300;
  for (std::size_t c = 0; c < k; ++c) {
    double s = 0.0;
    for (std::size_t t = 0; t < logits.length(); ++t) s += logits.data(t, c);
    if (s > best_score) {
      best_score = s;
      best = c;
    }
  }
  return best;
}

ModelGrads ModelGrads::zeros_like(const UnifiedModel& model) {
  ModelGrads g;
  for (const auto& [m, stack] : model.encoders) {
    auto& gs = g.encoders[m];
    for (const auto& l : stack) gs.push_back(DenseGrad::zeros_like(l));
  }
  for (const auto& [m, l] : model.projectors) g.projectors.emplace(m, DenseGrad::zeros_like(l));
  for (const auto& l : model.fusion) g.fusion.push_back(DenseGrad::zeros_like(l));
  for (const auto& l : model.soft_prompt_gen) g.soft_prompt_gen.push_back(DenseGrad::zeros_like(l));
  g.adapters = zero_adapter_grads(model.backbone);
  return g;
}

ForwardTrace forward(const UnifiedModel& model, const SampleFeatures& sample, bool use_lora) {
  if (sample.empty()) throw Error("forward: sample has no modalities");
  ForwardTrace tr;
  std::map<ModalityId, Vector> reps;
  for (const auto& [m, x] : sample) {
    const auto& enc = encoder_for(model, m);
    auto& mt = tr.modalities[m];
    mt.feature = stack_forward(enc, x, &mt.encoder);
    mt.raw = dense_forward(projector_for(model, m), mt.feature, &mt.projector);
    mt.rep = normalize_or_e1(mt.raw, &mt.degenerate);
    reps[m] = mt.rep;
  }
  tr.fused = stack_forward(model.fusion, fusion_input(model, reps), &tr.fusion);
  tr.prompt_tokens = reshape_tokens(stack_forward(model.soft_prompt_gen, tr.fused, &tr.prompt),
                                    model.backbone.prompt_tokens, model.shape.token_width);
  tr.logits = backbone_forward(model.backbone, tr.prompt_tokens, use_lora, &tr.backbone);
  return tr;
}

void backward(const UnifiedModel& model, const ForwardTrace& trace, const Matrix& dlogits,
              const std::map<ModalityId, Vector>& drep, TrainableSet trainable, ModelGrads& grads) {
  if (trainable.contains(ParamGroup::backbone)) {
    throw Error("gradient requested for frozen backbone weights");
  }
  const bool want_encoders = trainable.contains(ParamGroup::encoders);
  const bool want_projectors = trainable.contains(ParamGroup::projectors) || want_encoders;
  const bool want_fusion = trainable.contains(ParamGroup::fusion) || want_projectors;
  const bool want_prompt = trainable.contains(ParamGroup::soft_prompt) || want_fusion;

  Matrix dtokens = backbone_backward(
      model.backbone, trace.backbone, dlogits,
      trainable.contains(ParamGroup::adapters) ? &grads.adapters : nullptr);
  if (!want_prompt) return;

  Vector dfused = stack_backward(
      model.soft_prompt_gen, trace.prompt, dtokens.data(),
      trainable.contains(ParamGroup::soft_prompt) ? &grads.soft_prompt_gen : nullptr);
  if (!want_fusion) return;

  Vector dfin = stack_backward(model.fusion, trace.fusion, dfused,
                               trainable.contains(ParamGroup::fusion) ? &grads.fusion : nullptr);
  if (!want_projectors) return;

  const std::size_t d = model.shape.latent_dim;
  for (const auto& [m, mt] : trace.modalities) {
    Vector dh(dfin.begin() + static_cast<std::ptrdiff_t>(m * d),
              dfin.begin() + static_cast<std::ptrdiff_t>((m + 1) * d));
    if (auto it = drep.find(m); it != drep.end()) {
      for (std::size_t i = 0; i < d; ++i) dh[i] += it->second[i];
    }
    const Vector draw = normalize_backward(mt, dh);
    const Vector dz = dense_backward(
        projector_for(model, m), mt.projector, draw,
        trainable.contains(ParamGroup::projectors) ? &grads.projectors.at(m) : nullptr);
    if (want_encoders) stack_backward(encoder_for(model, m), mt.encoder, dz, &grads.encoders.at(m));
  }
}

namespace {

void push_dense(std::vector<std::span<double>>& out, DenseLayer& l) {
  out.emplace_back(l.weight.data());
  out.emplace_back(l.bias);
}

void push_dense(std::vector<std::span<double>>& out, DenseGrad& g) {
  out.emplace_back(g.weight.data());
  out.emplace_back(g.bias);
}

template <typename Encoders, typename Projectors, typename Stack, typename Adapters>
std::vector<std::span<double>> collect(Encoders& encoders, Projectors& projectors, Stack& fusion,
                                       Stack& prompt, Adapters&& adapters, TrainableSet groups) {
  if (groups.contains(ParamGroup::backbone)) {
    throw Error("gradient requested for frozen backbone weights");
  }
  std::vector<std::span<double>> out;
  if (groups.contains(ParamGroup::encoders))
    for (auto& [_, stack] : encoders)
      for (auto& l : stack) push_dense(out, l);
  if (groups.contains(ParamGroup::projectors))
    for (auto& [_, l] : projectors) push_dense(out, l);
  if (groups.contains(ParamGroup::fusion))
    for (auto& l : fusion) push_dense(out, l);
  if (groups.contains(ParamGroup::soft_prompt))
    for (auto& l : prompt) push_dense(out, l);
  if (groups.contains(ParamGroup::adapters)) {
    auto spans = adapters();
    out.insert(out.end(), spans.begin(), spans.end());
  }
  return out;
}

}  // namespace

std::vector<std::span<double>> parameter_spans(UnifiedModel& model, TrainableSet groups) {
  return collect(model.encoders, model.projectors, model.fusion, model.soft_prompt_gen,
                 [&] { return adapter_spans(model.backbone); }, groups);
}

std::vector<std::span<double>> gradient_spans(ModelGrads& grads, TrainableSet groups) {
  return collect(grads.encoders, grads.projectors, grads.fusion, grads.soft_prompt_gen,
                 [&] { return adapter_grad_spans(grads.adapters); }, groups);
}

std::vector<std::span<double>> adapter_spans(Backbone& backbone) {
  std::vector<std::span<double>> out;
  for (auto& l : backbone.layers) {
    if (!l.adapter) continue;
    out.emplace_back(l.adapter->a.data());
    out.emplace_back(l.adapter->b.data());
  }
  return out;
}

std::vector<std::span<double>> adapter_grad_spans(std::vector<AdapterGrad>& grads) {
  std::vector<std::span<double>> out;
  for (auto& g : grads) {
    if (g.a.empty()) continue;
    out.emplace_back(g.a.data());
    out.emplace_back(g.b.data());
  }
  return out;
}

Vector flatten(const std::vector<std::span<double>>& spans) {
  Vector out;
  for (auto s : spans) out.insert(out.end(), s.begin(), s.end());
  return out;
}

void assign(const std::vector<std::span<double>>& spans, std::span<const double> values) {
  std::size_t k = 0;
  for (auto s : spans) {
    if (k + s.size() > values.size()) throw Error("assign: too few values");
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(k), s.size(), s.begin());
    k += s.size();
  }
  if (k != values.size()) throw Error("assign: too many values");
}

void sgd_update(const std::vector<std::span<double>>& params,
                const std::vector<std::span<double>>& grads, double lr, double scale) {
  if (params.size() != grads.size()) throw Error("sgd_update: parameter/gradient layout mismatch");
  const double step = lr * scale;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size() != grads[i].size()) throw Error("sgd_update: span size mismatch");
    for (std::size_t k = 0; k < params[i].size(); ++k) params[i][k] -= step * grads[i][k];
  }
}

std::uint64_t digest(std::span<const double> values, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (double v : values) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, &v, sizeof bits);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xffu;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

std::uint64_t digest(const std::vector<std::span<double>>& spans) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto s : spans) h = digest(s, h);
  return h;
}

std::uint64_t digest(std::span<const LoRAAdapter> adapters) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& ad : adapters) {
    h = digest(ad.a.data(), h);
    h = digest(ad.b.data(), h);
  }
  return h;
}

}  // namespace mlecs
