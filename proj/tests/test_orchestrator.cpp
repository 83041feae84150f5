#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "doctest.h"
#include "mlecs/checkpoint.hpp"
#include "mlecs/orchestrator.hpp"
#include "support.hpp"

using namespace mlecs;

namespace {

ExperimentConfig tiny(Mode mode, std::uint64_t seed = 3) {
  ExperimentConfig c;
  c.seed = seed;
  c.mode = mode;
  c.n_devices = 3;
  c.rounds = 2;
  c.epochs = {1, 1, 1};
  c.dataset.synthetic.sample_count = 400;
  return c;
}

std::vector<std::string> records(const ExperimentResult& r) {
  std::vector<std::string> out;
  for (const auto& rep : r.rounds) out.push_back(round_record(rep));
  return out;
}

std::size_t line_count(const std::filesystem::path& p) {
  std::ifstream is(p);
  std::size_t n = 0;
  for (std::string line; std::getline(is, line);) n += !line.empty();
  return n;
}

}  // namespace

TEST_CASE("setup builds consistent parties") {
  const Experiment exp = setup_experiment(tiny(Mode::mlecs));
  CHECK(exp.devices.size() == 3);
  CHECK(exp.modality_names == std::vector<std::string>{"vision", "audio", "text"});
  for (const auto& d : exp.devices) {
    CHECK(d.model.backbone.adapter_parameter_count() == exp.adapter_params);
    CHECK(d.model.backbone.frozen_digest() == exp.server.slm.frozen_digest());
    CHECK(extract_lora(d.model.backbone) == extract_lora(exp.server.slm));
    CHECK(d.model.modalities() == d.modalities);
    for (const auto& s : d.public_shard.samples) CHECK(s.features.size() == d.modalities.size());
    // No private sample is also public.
    std::set<SampleId> pub;
    for (auto id : exp.server.public_train.ids()) pub.insert(id);
    for (auto id : exp.server.public_test.ids()) pub.insert(id);
    for (auto id : d.private_train.ids()) CHECK_FALSE(pub.contains(id));
    for (auto id : d.private_test.ids()) CHECK_FALSE(pub.contains(id));
  }
}

TEST_CASE("mlecs round: accounting, weights and protocol conservation") {
  Experiment exp = setup_experiment(tiny(Mode::mlecs));
  for (std::size_t t = 0; t < 2; ++t) {
    const RoundReport r = run_round(t, exp, 1);
    CHECK(r.round == t);
    std::uint64_t up = 0, down = 0;
    std::vector<std::size_t> counts;
    for (const auto& d : exp.devices) {
      up += d.model.backbone.adapter_parameter_count() + 1;
      down += d.model.backbone.adapter_parameter_count() + d.public_shard.size() * exp.config.shape.latent_dim;
      counts.push_back(d.modalities.size());
    }
    CHECK(r.comm.uplink_params == up);
    CHECK(r.comm.downlink_params == down);
    CHECK(r.comm.uplink_bytes() == 4 * up);
    CHECK(r.weights == mma_weights(counts).weights);
    CHECK(r.server_llm_loss.has_value());
    CHECK(r.server_slm_loss.has_value());
    CHECK(r.server_f1.has_value());
    for (const auto& m : r.devices) {
      CHECK(m.ccl_loss.has_value());
      CHECK(m.amt_loss.has_value());
      CHECK(m.test_f1 >= 0.0);
      CHECK(m.test_f1 <= 1.0);
    }
    for (const auto& d : exp.devices) CHECK(extract_lora(d.model.backbone) == extract_lora(exp.server.slm));
  }
}

TEST_CASE("ablation and baseline rounds") {
  SUBCASE("standalone moves nothing") {
    Experiment exp = setup_experiment(tiny(Mode::standalone));
    const auto before = extract_lora(exp.server.slm);
    const RoundReport r = run_round(0, exp, 1);
    CHECK(r.comm == RoundComm{});
    CHECK(r.weights.empty());
    CHECK_FALSE(r.server_slm_loss.has_value());
    CHECK(r.server_f1.has_value());
    CHECK(extract_lora(exp.server.slm) == before);
    for (const auto& m : r.devices) CHECK_FALSE(m.ccl_loss.has_value());
  }
  SUBCASE("fedavg averages adapters uniformly") {
    Experiment exp = setup_experiment(tiny(Mode::fedavg_uniform));
    const RoundReport r = run_round(0, exp, 1);
    CHECK(r.weights == uniform_weights(3).weights);
    CHECK(r.comm.uplink_params == 3 * exp.adapter_params);
    CHECK(r.comm.downlink_params == 3 * exp.adapter_params);
    CHECK_FALSE(r.server_f1.has_value());
    for (const auto& d : exp.devices) CHECK(extract_lora(d.model.backbone) == extract_lora(exp.server.slm));
  }
  SUBCASE("without MMA the weights are 1/N") {
    Experiment exp = setup_experiment(tiny(Mode::mlecs_wo_mma));
    const RoundReport r = run_round(0, exp, 1);
    for (double w : r.weights) CHECK(w == doctest::Approx(1.0 / 3.0));
  }
  SUBCASE("without SE-CCL the aggregate goes straight back") {
    Experiment exp = setup_experiment(tiny(Mode::mlecs_wo_seccl));
    const RoundReport r = run_round(0, exp, 1);
    CHECK_FALSE(r.server_llm_loss.has_value());
    CHECK_FALSE(r.server_slm_loss.has_value());
    CHECK(r.server_f1.has_value());
    for (const auto& d : exp.devices) CHECK(extract_lora(d.model.backbone) == extract_lora(exp.server.slm));
  }
}

TEST_CASE("homogeneous devices make MMA and the 1/N ablation coincide") {
  ExperimentConfig a = tiny(Mode::mlecs);
  a.mer = {1.0};
  ExperimentConfig b = a;
  b.mode = Mode::mlecs_wo_mma;
  const auto ra = run_experiment(a);
  const auto rb = run_experiment(b);
  CHECK(ra.rounds == rb.rounds);
  CHECK(extract_lora(ra.state.server.slm) == extract_lora(rb.state.server.slm));
}

TEST_CASE("schedule independence and replay") {
  for (Mode m : {Mode::mlecs, Mode::fedavg_uniform, Mode::standalone}) {
    const ExperimentConfig c = tiny(m);
    const auto seq = run_experiment(c, RunOptions{1, {}});
    const auto par = run_experiment(c, RunOptions{0, {}});
    const auto two = run_experiment(c, RunOptions{2, {}});
    CHECK(records(seq) == records(par));
    CHECK(records(seq) == records(two));
    CHECK(seq.rounds == par.rounds);
    CHECK(seq.summary == par.summary);
  }
}

TEST_CASE("seed contract") {
  const auto a = run_experiment(tiny(Mode::mlecs, 5));
  const auto b = run_experiment(tiny(Mode::mlecs, 5));
  const auto c = run_experiment(tiny(Mode::mlecs, 6));
  CHECK(a.summary == b.summary);
  CHECK_FALSE(a.summary == c.summary);
}

TEST_CASE("one device, one round, every modality") {
  ExperimentConfig c = tiny(Mode::mlecs);
  c.n_devices = 1;
  c.rounds = 1;
  c.mer = {1.0};
  std::vector<std::size_t> seen;
  const auto r = run_experiment(c, RunOptions{1, [&](const RoundReport& rep) { seen.push_back(rep.round); }});
  CHECK(seen == std::vector<std::size_t>{0});
  REQUIRE(r.summary.device_f1.size() == 1);
  CHECK(r.summary.device_modalities == std::vector<std::size_t>{3});
  CHECK(r.summary.f1.avg == r.summary.device_f1[0]);
  CHECK(r.rounds.front().weights == std::vector<double>{1.0});
}

TEST_CASE("summary totals and curves") {
  const auto r = run_experiment(tiny(Mode::mlecs));
  std::uint64_t up = 0, down = 0;
  for (const auto& rep : r.rounds) {
    up += rep.comm.uplink_params;
    down += rep.comm.downlink_params;
  }
  CHECK(r.summary.uplink_params == up);
  CHECK(r.summary.downlink_params == down);
  CHECK(r.summary.ccl_curve.size() == 2);
  CHECK(r.summary.se_llm_curve.back().has_value());
  std::vector<double> last;
  for (const auto& m : r.rounds.back().devices) last.push_back(m.test_f1);
  CHECK(r.summary.device_f1 == last);
  CHECK(r.summary.f1 == aggregate_metrics(last));
  CHECK(r.summary.server_f1 == r.rounds.back().server_f1);
}

TEST_CASE("aggregate_metrics") {
  CHECK(aggregate_metrics(std::vector<double>{0.5}) == MetricTriple{0.5, 0.5, 0.5});
  CHECK(aggregate_metrics(std::vector<double>{0.2, 0.8}) == MetricTriple{0.5, 0.8, 0.2});
  Rng rng(1);
  const Vector v = testing::gaussian(37, rng);
  const MetricTriple m = aggregate_metrics(v);
  double sum = 0.0, lo = v[0], hi = v[0];
  for (double x : v) {
    sum += x;
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  CHECK(std::abs(m.avg - sum / 37.0) < 1e-12);
  CHECK(m.best == hi);
  CHECK(m.worst == lo);
  CHECK_THROWS_AS(aggregate_metrics(std::vector<double>{}), Error);
}

TEST_CASE("errors carry the round and step") {
  Experiment exp = setup_experiment(tiny(Mode::mlecs));
  exp.devices[1].public_shard.samples.clear();
  try {
    run_round(4, exp, 1);
    FAIL("expected an error");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("round 4") != std::string::npos);
    CHECK(msg.find("device 1") != std::string::npos);
  }
}

TEST_CASE("run_to_directory writes every artifact") {
  const auto dir = std::filesystem::temp_directory_path() / "mlecs_run_test";
  std::filesystem::remove_all(dir);
  const ExperimentConfig c = tiny(Mode::mlecs);
  const auto r = run_to_directory(c, dir);
  CHECK(line_count(dir / "metrics.jsonl") == 2);
  CHECK(line_count(dir / "timing.jsonl") == 2);
  CHECK(std::filesystem::exists(dir / "summary.json"));
  CHECK(parse_config(dir / "config.json") == c);
  const AdapterCheckpoint slm = read_checkpoint(dir / "checkpoints" / "server_slm.ckpt");
  CHECK(slm.adapters == round_to_f32(extract_lora(r.state.server.slm)));
  for (std::size_t j = 0; j < 3; ++j) {
    const auto ck = read_checkpoint(dir / "checkpoints" / ("device_" + std::to_string(j) + ".ckpt"));
    CHECK(ck.adapters == round_to_f32(extract_lora(r.state.devices[j].model.backbone)));
  }
  std::ifstream is(dir / "metrics.jsonl");
  std::string first;
  std::getline(is, first);
  CHECK(first == round_record(r.rounds.front()));
  CHECK(first.find("wall") == std::string::npos);
  std::filesystem::remove_all(dir);
}
