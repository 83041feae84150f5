#include "mlecs/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <random>

#include <fmt/format.h>

#include "mlecs/checkpoint.hpp"
#include "mlecs/comm.hpp"
#include "mlecs/config.hpp"
#include "mlecs/model.hpp"
#include "mlecs/orchestrator.hpp"
#include "mlecs/rng.hpp"
#include "mlecs/server.hpp"
#include "mlecs/volume.hpp"

namespace mlecs {

namespace {

constexpr double kVolumeTol = 1e-4;
constexpr double kBackpropTol = 1e-3;

Vector gaussian(std::size_t n, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vector v(n);
  for (double& x : v) x = g(rng);
  return v;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

GradCaseResult to_case(std::string family, std::size_t index, const GradReport& r, double tol) {
  return {std::move(family), index, r.analytic.size(), r.max_rel_err, r.max_abs_err, tol};
}

GradCaseResult volume_case(std::size_t index, Rng& rng) {
  while (true) {
    const std::size_t k = pick(rng, 1, 4);
    const std::size_t d = pick(rng, k, 6);
    RepresentationSet set;
    for (std::size_t i = 0; i < k; ++i) set.vectors.push_back(gaussian(d, rng));
    if (vector_volume(set) <= 1e-6) continue;
    Vector x, analytic;
    for (const auto& v : set.vectors) x.insert(x.end(), v.begin(), v.end());
    for (const auto& g : volume_gradient(set)) analytic.insert(analytic.end(), g.begin(), g.end());
    auto f = [&](std::span<const double> p) {
      RepresentationSet s;
      for (std::size_t i = 0; i < k; ++i) s.vectors.emplace_back(p.begin() + i * d, p.begin() + (i + 1) * d);
      return vector_volume(s);
    };
    return to_case("volume", index, grad_check(f, x, analytic), kVolumeTol);
  }
}

ContrastiveBatch random_batch(Rng& rng) {
  ContrastiveBatch b;
  const std::size_t n = pick(rng, 2, 4);
  const std::size_t others = pick(rng, 1, 2);
  const std::size_t d = pick(rng, others + 2, 5);
  b.negative_count = pick(rng, 2, n);
  for (std::size_t v = 0; v < n; ++v) {
    ContrastiveSample s{normalize_or_e1(gaussian(d, rng)), {}};
    for (std::size_t o = 0; o < others; ++o) s.others.push_back(normalize_or_e1(gaussian(d, rng)));
    b.samples.push_back(std::move(s));
  }
  return b;
}

Vector flatten_batch(const ContrastiveBatch& b) {
  Vector x;
  for (const auto& s : b.samples) {
    x.insert(x.end(), s.anchor.begin(), s.anchor.end());
    for (const auto& o : s.others) x.insert(x.end(), o.begin(), o.end());
  }
  return x;
}

Vector flatten_grad(const ContrastiveGrad& g) {
  Vector x;
  for (std::size_t v = 0; v < g.anchors.size(); ++v) {
    x.insert(x.end(), g.anchors[v].begin(), g.anchors[v].end());
    for (const auto& o : g.others[v]) x.insert(x.end(), o.begin(), o.end());
  }
  return x;
}

ContrastiveBatch unflatten_batch(const ContrastiveBatch& shape, std::span<const double> x) {
  ContrastiveBatch b = shape;
  std::size_t k = 0;
  for (auto& s : b.samples) {
    for (double& v : s.anchor) v = x[k++];
    for (auto& o : s.others)
      for (double& v : o) v = x[k++];
  }
  return b;
}

GradCaseResult contrastive_case(const std::string& family, std::size_t index, Rng& rng) {
  const ContrastiveBatch batch = random_batch(rng);
  double (*loss)(const ContrastiveBatch&) = nullptr;
  ContrastiveGrad g;
  if (family == "contrastive_o2a") {
    loss = contrastive_loss_o2a;
    g = contrastive_o2a_grad(batch);
  } else if (family == "contrastive_a2o") {
    loss = contrastive_loss_a2o;
    g = contrastive_a2o_grad(batch);
  } else {
    loss = symmetric_contrastive_loss;
    g = symmetric_contrastive_grad(batch);
  }
  auto f = [&](std::span<const double> p) { return loss(unflatten_batch(batch, p)); };
  return to_case(family, index, grad_check(f, flatten_batch(batch), flatten_grad(g)), kBackpropTol);
}

LogitSequence random_logits(std::size_t s, std::size_t v, Rng& rng) {
  LogitSequence out{Matrix(s, v)};
  const Vector g = gaussian(s * v, rng);
  std::copy(g.begin(), g.end(), out.data.data().begin());
  return out;
}

GradCaseResult kt_case(std::size_t index, Rng& rng) {
  const std::size_t vocab = pick(rng, 4, 10);
  const std::size_t bins = pick(rng, 1, vocab);
  const LogitSequence target = random_logits(pick(rng, 1, 4), vocab, rng);
  const LogitSequence student = random_logits(pick(rng, 1, 4), vocab, rng);
  Matrix d;
  pooled_kt_loss_grad(target, student, bins, d);
  auto f = [&](std::span<const double> p) {
    LogitSequence s = student;
    std::copy(p.begin(), p.end(), s.data.data().begin());
    return pooled_kt_loss(target, s, bins);
  };
  return to_case("pooled_kt", index, grad_check(f, student.data.data(), d.data()), kBackpropTol);
}

// A small model with every adapter B nonzero, three samples over a random
// modality subset, and the device objective: mean cross entropy plus the
// symmetric contrastive term against fixed anchors.
struct ModelFixture {
  UnifiedModel model;
  std::vector<SampleFeatures> samples;
  std::vector<std::size_t> labels;
  std::vector<Vector> anchors;

  explicit ModelFixture(Rng& rng) {
    ModelShape shape;
    shape.raw_dims = {3, 4, 2};
    shape.encoder_hidden = 5;
    shape.feature_dim = 4;
    shape.latent_dim = 6;  // > largest set (anchor + 3), keeps V away from the |det| kink
    shape.fusion_hidden = 6;
    shape.prompt_hidden = 5;
    shape.token_width = 4;
    shape.vocab = 5;
    BackboneSpec spec{6, 1, pick(rng, 1, 2)};
    LoraSpec lora{1, 1.0, true};
    Backbone bb = make_backbone(shape.token_width, shape.vocab, spec, lora, rng, rng);
    for (auto& l : bb.layers)
      if (l.adapter) {
        const Vector g = gaussian(l.adapter->b.size(), rng);
        std::copy(g.begin(), g.end(), l.adapter->b.data().begin());
      }
    std::vector<ModalityId> mods;
    for (ModalityId m = 0; m < 3; ++m)
      if (pick(rng, 0, 1) == 1) mods.push_back(m);
    if (mods.empty()) mods.push_back(pick(rng, 0, 2));
    model = make_unified_model(shape, mods, std::move(bb), rng);
    for (std::size_t v = 0; v < 3; ++v) {
      SampleFeatures f;
      for (ModalityId m : mods) f[m] = gaussian(shape.raw_dims[m], rng);
      samples.push_back(std::move(f));
      labels.push_back(pick(rng, 0, shape.vocab - 1));
      anchors.push_back(normalize_or_e1(gaussian(shape.latent_dim, rng)));
    }
  }

  double loss(ModelGrads* grads, TrainableSet trainable) const {
    const double inv_b = 1.0 / static_cast<double>(samples.size());
    std::vector<ForwardTrace> traces;
    std::vector<Matrix> dl;
    ContrastiveBatch cb;
    cb.negative_count = samples.size();
    double total = 0.0;
    for (std::size_t v = 0; v < samples.size(); ++v) {
      traces.push_back(forward(model, samples[v]));
      Matrix d;
      total += supervised_loss_grad(traces.back().logits, labels[v], d) * inv_b;
      for (double& x : d.data()) x *= inv_b;
      dl.push_back(std::move(d));
      ContrastiveSample cs{anchors[v], {}};
      for (const auto& [_, mt] : traces.back().modalities) cs.others.push_back(mt.rep);
      cb.samples.push_back(std::move(cs));
    }
    if (grads == nullptr) return total + symmetric_contrastive_loss(cb);
    const ContrastiveGrad cg = symmetric_contrastive_grad(cb);
    for (std::size_t v = 0; v < samples.size(); ++v) {
      std::map<ModalityId, Vector> drep;
      std::size_t k = 0;
      for (const auto& [m, _] : traces[v].modalities) drep.emplace(m, cg.others[v][k++]);
      backward(model, traces[v], dl[v], drep, trainable, *grads);
    }
    return total + cg.loss;
  }
};

GradCaseResult model_case(const std::string& family, ParamGroup group, std::size_t index, Rng& rng) {
  ModelFixture fx(rng);
  const TrainableSet only{group};
  ModelGrads grads = ModelGrads::zeros_like(fx.model);
  fx.loss(&grads, only);
  const auto params = parameter_spans(fx.model, only);
  const Vector x = flatten(params);
  const Vector analytic = flatten(gradient_spans(grads, only));
  auto f = [&](std::span<const double> p) {
    assign(params, p);
    return fx.loss(nullptr, only);
  };
  GradReport r = grad_check(f, x, analytic);
  assign(params, x);
  return to_case(family, index, r, kBackpropTol);
}

}  // namespace

bool GradSuiteReport::passed() const {
  return !cases.empty() && std::all_of(cases.begin(), cases.end(), [](const auto& c) { return c.passed(); });
}

std::vector<GradCaseResult> GradSuiteReport::worst_per_family() const {
  std::vector<GradCaseResult> out;
  for (const auto& c : cases) {
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& w) { return w.family == c.family; });
    if (it == out.end()) {
      out.push_back(c);
    } else if (c.max_rel_err > it->max_rel_err) {
      *it = c;
    }
  }
  return out;
}

std::string GradSuiteReport::format() const {
  std::string out = fmt::format("{:<22} {:>6} {:>14} {:>14} {:>10}  status\n", "family", "cases", "worst_rel_err",
                                "worst_abs_err", "tolerance");
  for (const auto& w : worst_per_family()) {
    const auto n = std::count_if(cases.begin(), cases.end(), [&](const auto& c) { return c.family == w.family; });
    const bool ok = std::all_of(cases.begin(), cases.end(),
                                [&](const auto& c) { return c.family != w.family || c.passed(); });
    out += fmt::format("{:<22} {:>6} {:>14.3e} {:>14.3e} {:>10.0e}  {}\n", w.family, n, w.max_rel_err,
                       w.max_abs_err, w.tolerance, ok ? "ok" : "FAIL");
  }
  out += fmt::format("{} cases in {:.2f}s: {}\n", cases.size(), seconds, passed() ? "PASS" : "FAIL");
  return out;
}

GradSuiteReport run_gradient_suite(std::uint64_t seed, std::size_t cases_per_family) {
  const auto start = std::chrono::steady_clock::now();
  GradSuiteReport report;
  Rng rng = make_rng(seed, "gradcheck");
  for (std::size_t i = 0; i < cases_per_family; ++i) report.cases.push_back(volume_case(i, rng));
  for (const char* fam : {"contrastive_o2a", "contrastive_a2o", "contrastive_symmetric"}) {
    for (std::size_t i = 0; i < cases_per_family; ++i) report.cases.push_back(contrastive_case(fam, i, rng));
  }
  for (std::size_t i = 0; i < cases_per_family; ++i) report.cases.push_back(kt_case(i, rng));
  const std::pair<const char*, ParamGroup> groups[] = {
      {"model_encoders", ParamGroup::encoders},   {"model_projectors", ParamGroup::projectors},
      {"model_fusion", ParamGroup::fusion},       {"model_soft_prompt", ParamGroup::soft_prompt},
      {"model_adapters", ParamGroup::adapters},
  };
  for (const auto& [fam, group] : groups) {
    for (std::size_t i = 0; i < cases_per_family; ++i) report.cases.push_back(model_case(fam, group, i, rng));
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

namespace {

SelfCheck check(std::string name, bool ok, std::string detail = {}) {
  return {std::move(name), ok, std::move(detail)};
}

std::vector<std::string> replay(const ExperimentConfig& config, std::size_t workers) {
  std::vector<std::string> lines;
  RunOptions opts;
  opts.workers = workers;
  opts.on_round = [&](const RoundReport& r) { lines.push_back(round_record(r)); };
  run_experiment(config, opts);
  return lines;
}

}  // namespace

std::vector<SelfCheck> run_selftest(const ExperimentConfig& config, std::size_t workers) {
  std::vector<SelfCheck> out;

  const GradSuiteReport grads = run_gradient_suite(config.seed);
  double worst = 0.0;
  for (const auto& c : grads.cases) worst = std::max(worst, c.max_rel_err);
  out.push_back(check("gradient suite", grads.passed(),
                      fmt::format("{} cases, worst rel err {:.2e}, {:.1f}s", grads.cases.size(), worst, grads.seconds)));

  {
    const double v = vector_volume({{{1, 0, 1, 0}, {0, 2, 0, 0}, {1, 1, 0, 1}}});
    const double unit = vector_volume({{{1, 0, 0}, {0, 1, 0}}});
    const double flat = vector_volume({{{0.6, 0.8}, {0.6, 0.8}}});
    out.push_back(check("volume fixtures",
                        std::abs(v - std::sqrt(12.0)) < 1e-10 && std::abs(unit - 1.0) < 1e-12 && flat < 1e-8,
                        fmt::format("sqrt12 fixture {:.12f}", v)));
  }
  {
    ContrastiveBatch b;
    for (int i = 0; i < 4; ++i) b.samples.push_back({{1, 0, 0}, {{0, 1, 0}}});
    b.negative_count = 1;
    const double zero = symmetric_contrastive_loss(b);
    b.negative_count = 4;
    const double uniform = symmetric_contrastive_loss(b);
    out.push_back(check("contrastive fixtures", zero == 0.0 && std::abs(uniform - std::log(4.0)) < 1e-10,
                        fmt::format("U=1 {:.3g}, uniform {:.12f}", zero, uniform)));
  }
  {
    const std::size_t counts[] = {1, 2, 3};
    const auto w = mma_weights(counts).weights;
    out.push_back(check("aggregation weights",
                        std::abs(w[0] - 1.0 / 6) < 1e-15 && std::abs(w[1] - 1.0 / 3) < 1e-15 &&
                            std::abs(w[2] - 0.5) < 1e-15,
                        fmt::format("({:.6f}, {:.6f}, {:.6f})", w[0], w[1], w[2])));
  }
  {
    Rng rng = make_rng(config.seed, "selftest_kt");
    const LogitSequence y = random_logits(3, 8, rng);
    out.push_back(check("pooled KT identity", pooled_kt_loss(y, y, 4) == 0.0));
  }
  {
    LoraSpec r8 = config.lora;
    r8.rank = 8;
    LoraSpec r24 = r8;
    r24.rank = 24;
    BackboneSpec wide{64, 2, 1};
    const auto a = analytic_adapter_params(64, 64, wide, r8);
    const auto b = analytic_adapter_params(64, 64, wide, r24);
    const ScaleFixture fx;
    out.push_back(check("communication accounting", b == 3 * a && fx.ratio() < 0.01,
                        fmt::format("r24/r8 = {}/{}, scale fixture ratio {:.4f}%", b, a, 100.0 * fx.ratio())));
  }

  ExperimentConfig small = config;
  small.rounds = 2;
  small.dataset.synthetic.sample_count = std::min<std::size_t>(small.dataset.synthetic.sample_count, 800);
  try {
    const auto seq = replay(small, 1);
    const auto par = replay(small, workers);
    const auto again = replay(small, 1);
    out.push_back(check("replay determinism", seq == par && seq == again,
                        fmt::format("{} rounds, sequential vs parallel", seq.size())));
  } catch (const std::exception& e) {
    out.push_back(check("replay determinism", false, e.what()));
  }
  try {
    Experiment exp = setup_experiment(small);
    run_round(0, exp, 1);
    const auto& bb = exp.devices.front().model.backbone;
    const auto path = std::filesystem::temp_directory_path() / fmt::format("mlecs_selftest_{}.ckpt", config.seed);
    write_checkpoint(path, checkpoint_from(bb, config.seed));
    const AdapterCheckpoint back = read_checkpoint(path);
    std::filesystem::remove(path);
    Backbone reloaded = bb;
    apply_lora(reloaded, back.adapters);
    Rng rng = make_rng(config.seed, "selftest_tokens");
    Matrix tokens(bb.prompt_tokens, bb.token_width());
    const Vector g = gaussian(tokens.size(), rng);
    std::copy(g.begin(), g.end(), tokens.data().begin());
    const LogitSequence lx = backbone_forward(bb, tokens, true);
    const LogitSequence ly = backbone_forward(reloaded, tokens, true);
    const auto x = lx.data.data();
    const auto y = ly.data.data();
    double rel = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) rel = std::max(rel, std::abs(x[i] - y[i]) / std::max(std::abs(x[i]), 1e-6));
    out.push_back(check("checkpoint round trip", rel <= 1e-6, fmt::format("max rel deviation {:.2e}", rel)));
  } catch (const std::exception& e) {
    out.push_back(check("checkpoint round trip", false, e.what()));
  }
  return out;
}

}  // namespace mlecs
