// Acceptance report: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "mlecs/comm.hpp"
#include "mlecs/orchestrator.hpp"
#include "mlecs/verify.hpp"
#include "support.hpp"

using namespace mlecs;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Line {
  bool ok = true;
  std::vector<std::string> notes;

  void require(bool cond, std::string what) {
    if (!cond) {
      ok = false;
      notes.push_back("FAILED " + std::move(what));
    }
  }
  void note(std::string s) { notes.push_back(std::move(s)); }
};

int failures = 0;

void report(int id, const std::string& title, const std::function<void(Line&)>& body) {
  Line line;
  try {
    body(line);
  } catch (const std::exception& e) {
    line.ok = false;
    line.note(std::string("exception: ") + e.what());
  }
  std::string detail;
  for (const auto& n : line.notes) detail += (detail.empty() ? "" : "; ") + n;
  fmt::print("[{}] {:>2} {}: {}\n", line.ok ? "PASS" : "FAIL", id, title, detail);
  std::fflush(stdout);
  if (!line.ok) ++failures;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Σ r·(p+q) read off the built adapters, plus the modality-count scalar.
std::uint64_t counted_uplink(const Experiment& exp) {
  std::uint64_t total = 0;
  for (const auto& d : exp.devices) {
    for (const auto& l : d.model.backbone.layers)
      if (l.adapter) total += l.adapter->rank() * (l.frozen.out() + l.frozen.in());
    total += 1;
  }
  return total;
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  const ExperimentConfig defaults;

  report(1, "gradient suite", [](Line& l) {
    const GradSuiteReport r = run_gradient_suite(2024, 12);
    l.require(r.cases.size() >= 100, fmt::format("{} cases < 100", r.cases.size()));
    l.require(r.passed(), "a case exceeded its tolerance");
    l.require(r.seconds < 60.0, fmt::format("runtime {:.1f}s", r.seconds));
    double vol = 0.0, model = 0.0;
    for (const auto& c : r.cases) {
      l.require(c.tolerance <= (c.family == "volume" ? 1e-4 : 1e-3), c.family + " tolerance too loose");
      (c.family == "volume" ? vol : model) = std::max(c.family == "volume" ? vol : model, c.max_rel_err);
    }
    l.note(fmt::format("{} cases, worst volume {:.2e} (< 1e-4), worst other {:.2e} (< 1e-3), {:.2f}s",
                       r.cases.size(), vol, model, r.seconds));
  });

  report(2, "volume geometry", [](Line& l) {
    const double tol = 1e-8;
    l.require(std::abs(vector_volume({{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}}) - 1.0) < tol, "orthonormal");
    l.require(vector_volume({{{0.3, 0.4, 0.0}, {0.3, 0.4, 0.0}}}) < tol, "duplicate vectors");
    l.require(vector_volume({{{1, 2}, {2, 4}}}) < tol, "collinear vectors");
    Rng rng(2);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
      RepresentationSet s{{testing::gaussian(6, rng), testing::gaussian(6, rng), testing::gaussian(6, rng)}};
      const double v = vector_volume(s);
      const double c = std::uniform_real_distribution<double>(-3.0, 3.0)(rng);
      RepresentationSet scaled = s;
      for (double& x : scaled.vectors[2]) x *= c;
      worst = std::max(worst, std::abs(vector_volume(scaled) - std::abs(c) * v));
      RepresentationSet perm{{s.vectors[1], s.vectors[2], s.vectors[0]}};
      worst = std::max(worst, std::abs(vector_volume(perm) - v));
      const Vector a = testing::unit(testing::gaussian(5, rng));
      const Vector b = testing::unit(testing::gaussian(5, rng));
      const double cs = dot(a, b);
      worst = std::max(worst, std::abs(vector_volume({{a, b}}) - std::sqrt(1.0 - cs * cs)));
    }
    l.require(worst < tol, fmt::format("property error {:.2e}", worst));
    const std::vector<Vector> fixture{{1, 0, 1, 0}, {0, 2, 0, 0}, {1, 1, 0, 1}};
    const double v = vector_volume({fixture});
    const double oracle = testing::oracle_volume(fixture);
    l.require(std::abs(v - oracle) < tol && std::abs(oracle - std::sqrt(12.0)) < tol, "sqrt12 fixture");
    l.note(fmt::format("worst property error {:.2e} (< 1e-8), fixture {:.5f} vs cofactor {:.5f}", worst, v, oracle));
  });

  report(3, "contrastive-loss oracles", [](Line& l) {
    Rng rng(3);
    ContrastiveBatch b;
    b.negative_count = 4;
    for (int v = 0; v < 6; ++v)
      b.samples.push_back({testing::unit(testing::gaussian(5, rng)),
                           {testing::unit(testing::gaussian(5, rng)), testing::unit(testing::gaussian(5, rng))}});
    ContrastiveBatch one = b;
    one.negative_count = 1;
    l.require(contrastive_loss_o2a(one) == 0.0 && contrastive_loss_a2o(one) == 0.0, "U=1 gives 0");
    ContrastiveBatch same;
    same.negative_count = 5;
    for (int v = 0; v < 5; ++v) same.samples.push_back({{1, 0, 0}, {{0, 0.6, 0.8}}});
    const double uni = symmetric_contrastive_loss(same);
    l.require(std::abs(uni - std::log(5.0)) < 1e-10, "uniform volumes give ln U");
    const double e1 = std::abs(contrastive_loss_o2a(b) - testing::oracle_o2a(b));
    const double e2 = std::abs(contrastive_loss_a2o(b) - testing::oracle_a2o(b));
    l.require(e1 < 1e-10 && e2 < 1e-10, "oracle match");
    l.note(fmt::format("U=1 -> 0, uniform {:.12f} vs ln 5 {:.12f}, oracle error o2a {:.1e} a2o {:.1e} (< 1e-10)", uni,
                       std::log(5.0), e1, e2));
  });

  report(4, "MMA exactness", [](Line& l) {
    const auto w = mma_weights(std::vector<std::size_t>{1, 2, 3}).weights;
    l.require(std::abs(w[0] - 1.0 / 6) < 1e-15 && std::abs(w[1] - 1.0 / 3) < 1e-15 && std::abs(w[2] - 0.5) < 1e-15,
              "weights for (1,2,3)");
    Rng rng(4);
    std::vector<LoRAUpload> ups;
    for (std::size_t j = 0; j < 3; ++j) {
      LoRAAdapter a = LoRAAdapter::init(8, 6, 2, 1.0, rng);
      a.a = testing::random_matrix(2, 6, rng);
      a.b = testing::random_matrix(8, 2, rng);
      ups.push_back({j, {a, a}, 2});
    }
    std::vector<LoRAUpload> same{ups[0], ups[0], ups[0]};
    for (std::size_t j = 0; j < 3; ++j) same[j].modality_count = j + 1;
    const auto fixed = mma_aggregate(same, mma_weights(std::vector<std::size_t>{1, 2, 3}));
    double drift = 0.0;
    for (std::size_t k = 0; k < fixed.size(); ++k)
      for (std::size_t i = 0; i < fixed[k].b.size(); ++i)
        drift = std::max(drift, std::abs(fixed[k].b.data()[i] - ups[0].adapters[k].b.data()[i]));
    l.require(drift < 1e-12, "identical uploads are a fixed point");
    l.require(mma_aggregate(ups, AggregationWeights{{1.0, 0.0, 0.0}}) == ups[0].adapters, "weight (1,0,0) selects");
    l.require(mma_aggregate(ups, mma_weights(std::vector<std::size_t>{2, 2, 2})) ==
                  mma_aggregate(ups, uniform_weights(3)),
              "homogeneous MMA equals uniform FedAvg bitwise");
    l.note(fmt::format("weights ({:.6f}, {:.6f}, {:.6f}), fixed-point drift {:.1e}, selection and homogeneous "
                       "equivalence bitwise",
                       w[0], w[1], w[2], drift));
  });

  report(5, "pooled-KT suite", [](Line& l) {
    Rng rng(5);
    double worst = 0.0, identity = 0.0, minimum = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t bins = 1 + trial % 6;
      const LogitSequence p{testing::random_matrix(1 + trial % 4, 8, rng)};
      const LogitSequence q{testing::random_matrix(1 + (trial / 4) % 4, 8, rng)};
      const double loss = pooled_kt_loss(p, q, bins);
      worst = std::max(worst, std::abs(loss - testing::oracle_kt(p, q, bins)));
      identity = std::max(identity, std::abs(pooled_kt_loss(p, p, bins)));
      minimum = std::min(minimum, loss);
      // Only the first min(S1, S2) positions contribute.
      const std::size_t s = std::min(p.length(), q.length());
      double by_row = 0.0;
      for (std::size_t i = 0; i < s; ++i) {
        Matrix a(1, 8), b(1, 8);
        std::copy(p.data.row(i).begin(), p.data.row(i).end(), a.data().begin());
        std::copy(q.data.row(i).begin(), q.data.row(i).end(), b.data().begin());
        by_row += pooled_kt_loss(LogitSequence{a}, LogitSequence{b}, bins);
      }
      l.require(std::abs(by_row - loss) < 1e-12, "positional count");
    }
    l.require(identity < 1e-10, "zero at identity");
    l.require(minimum >= 0.0, "nonnegative");
    l.require(worst < 1e-10, "oracle match");
    l.note(fmt::format("identity {:.1e}, min {:.3e} (>= 0), S = min(S1,S2) summed, oracle error {:.1e} (< 1e-10)",
                       identity, minimum, worst));
  });

  report(6, "protocol determinism", [&](Line& l) {
    ExperimentConfig c = defaults;
    c.rounds = 3;
    c.n_devices = 3;
    const auto root = std::filesystem::temp_directory_path() / "mlecs_acceptance_replay";
    std::filesystem::remove_all(root);
    const auto t0 = Clock::now();
    std::vector<std::string> streams;
    for (std::size_t workers : {1u, 1u, 0u, 0u}) {
      const auto dir = root / std::to_string(streams.size());
      run_to_directory(c, dir, RunOptions{workers, {}});
      streams.push_back(slurp(dir / "metrics.jsonl"));
    }
    const double secs = seconds_since(t0) / 4.0;
    for (std::size_t i = 1; i < streams.size(); ++i) l.require(streams[i] == streams[0], "streams differ");
    l.require(!streams[0].empty(), "empty metric stream");
    l.require(secs < 180.0, fmt::format("a T=3 N=3 run took {:.1f}s", secs));
    std::filesystem::remove_all(root);
    l.note(fmt::format("2 sequential + 2 parallel runs byte-identical ({} bytes), {:.1f}s per run (< 180s)",
                       streams[0].size(), secs));
  });

  // Criteria 7-9 share one paired-seed sweep of the default task.
  const std::vector<Mode> modes{Mode::mlecs, Mode::standalone, Mode::fedavg_uniform, Mode::mlecs_wo_seccl,
                                Mode::mlecs_wo_mma};
  std::map<Mode, std::vector<ExperimentSummary>> sweep;
  bool comm_exact = true;
  std::size_t comm_rounds = 0;
  std::string sweep_error;
  try {
    for (std::uint64_t k = 0; k < 5; ++k) {
      for (Mode m : modes) {
        ExperimentConfig c = defaults;
        c.seed = defaults.seed + k;
        c.mode = m;
        c.mer = {0.5};
        const auto r = run_experiment(c, RunOptions{0, {}});
        sweep[m].push_back(r.summary);
        if (m == Mode::mlecs) {
          const std::uint64_t want = counted_uplink(r.state);
          for (const auto& rep : r.rounds) {
            comm_exact = comm_exact && rep.comm.uplink_params == want;
            ++comm_rounds;
          }
        }
      }
    }
  } catch (const std::exception& e) {
    sweep_error = e.what();
  }
  auto wins = [&](Mode other, bool server) {
    std::size_t n = 0;
    for (std::size_t s = 0; s < sweep[Mode::mlecs].size(); ++s) {
      const auto& a = sweep[Mode::mlecs][s];
      const auto& b = sweep[other][s];
      n += server ? a.server_f1.value_or(0.0) >= b.server_f1.value_or(0.0) : a.f1.avg >= b.f1.avg;
    }
    return n;
  };
  auto mean = [&](Mode m, bool server) {
    double s = 0.0;
    for (const auto& x : sweep[m]) s += server ? x.server_f1.value_or(0.0) : x.f1.avg;
    return s / static_cast<double>(std::max<std::size_t>(1, sweep[m].size()));
  };

  report(7, "directional end-to-end", [&](Line& l) {
    if (!sweep_error.empty()) throw Error(sweep_error);
    const std::size_t a = wins(Mode::standalone, false);
    const std::size_t b = wins(Mode::fedavg_uniform, false);
    const std::size_t c = wins(Mode::mlecs_wo_seccl, true);
    l.require(a >= 4, "Avg. F1 vs standalone");
    l.require(b >= 4, "Avg. F1 vs uniform FedAvg");
    l.require(c >= 4, "server F1 vs w/o SE-CCL");
    l.note(fmt::format("seeds {}..{}, T={}, N={}, rho=0.5: Avg. F1 >= standalone {}/5 (mean {:.4f} vs {:.4f}), "
                       ">= FedAvg {}/5 (mean {:.4f}), server F1 >= w/o SE-CCL {}/5 (mean {:.4f} vs {:.4f}); need 4/5",
                       defaults.seed, defaults.seed + 4, defaults.rounds, defaults.n_devices, a, mean(Mode::mlecs, false),
                       mean(Mode::standalone, false), b, mean(Mode::fedavg_uniform, false), c, mean(Mode::mlecs, true),
                       mean(Mode::mlecs_wo_seccl, true)));
  });

  report(8, "ablation direction (MMA)", [&](Line& l) {
    if (!sweep_error.empty()) throw Error(sweep_error);
    std::size_t hetero = 0;
    for (const auto& s : sweep[Mode::mlecs]) {
      const auto& m = s.device_modalities;
      hetero += *std::max_element(m.begin(), m.end()) != *std::min_element(m.begin(), m.end());
    }
    const std::size_t a = wins(Mode::mlecs_wo_mma, false);
    l.require(a >= 4, "Avg. F1 vs w/o MMA");
    l.note(fmt::format("Avg. F1 >= w/o MMA {}/5 (mean {:.4f} vs {:.4f}), heterogeneous modality counts in {}/5 "
                       "seeds; need 4/5",
                       a, mean(Mode::mlecs, false), mean(Mode::mlecs_wo_mma, false), hetero));
  });

  report(9, "communication accounting", [&](Line& l) {
    if (!sweep_error.empty()) throw Error(sweep_error);
    l.require(comm_exact && comm_rounds > 0, "uplink differs from the counted adapters");
    // The same backbone topology built at rank r and 3r; count what the adapters hold.
    Rng rng(9);
    const BackboneSpec spec{24, 2, 2};
    const Backbone b8 = make_backbone(24, 24, spec, LoraSpec{4, 1.0, true}, rng, rng);
    const Backbone b24 = make_backbone(24, 24, spec, LoraSpec{12, 1.0, true}, rng, rng);
    const auto p8 = b8.adapter_parameter_count();
    const auto p24 = b24.adapter_parameter_count();
    l.require(p24 == 3 * p8, "3x rank is not 3x volume");
    l.require(analytic_adapter_params(24, 24, spec, LoraSpec{12, 1.0, true}) == p24, "analytic count");
    ScaleFixture f8;
    ScaleFixture f24 = f8;
    f24.rank = 24;
    l.require(f24.adapter_params() == 3 * f8.adapter_params(), "fixture r=24 vs r=8");
    l.require(f8.ratio() < 0.01, "fixture ratio");
    l.note(fmt::format("uplink exact in {} rounds; rank x3 -> {} = 3 x {}; fixture r=24 {} = 3 x {}; "
                       "720M fixture ratio {:.4f}% (< 1%)",
                       comm_rounds, p24, p8, f24.adapter_params(), f8.adapter_params(), 100.0 * f8.ratio()));
  });

  report(10, "scalability smoke", [&](Line& l) {
    ExperimentConfig c = defaults;
    c.n_devices = 10;
    c.rounds = 3;
    const auto t0 = Clock::now();
    const auto r = run_experiment(c, RunOptions{0, {}});
    const double secs = seconds_since(t0);
    l.require(r.rounds.size() == 3, "round count");
    for (const auto& rep : r.rounds) {
      l.require(rep.devices.size() == 10, "per-device metrics");
      for (const auto& d : rep.devices) l.require(std::isfinite(d.test_f1), "finite F1");
    }
    l.require(r.summary.device_f1.size() == 10, "summary devices");
    l.require(secs < 600.0, fmt::format("{:.1f}s", secs));
    l.note(fmt::format("N=10, T=3: 10 device metrics per round, Avg. F1 {:.4f}, {:.1f}s (< 600s)", r.summary.f1.avg,
                       secs));
  });

  fmt::print("{} of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
