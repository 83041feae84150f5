#include "mlecs/orchestrator.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <fstream>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "json.hpp"
#include "mlecs/checkpoint.hpp"

namespace mlecs {

using nlohmann::json;

namespace {

// Runs fn(j) for j in [0, n) on up to `workers` threads. Each index touches
// only its own state, so results do not depend on scheduling. The error of
// the lowest failing index is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::clamp<std::size_t>(workers == 0 ? n : workers, 1, std::max<std::size_t>(n, 1));
  std::vector<std::exception_ptr> errors(n);
  auto body = [&](std::size_t j) {
    try {
      fn(j);
    } catch (...) {
      errors[j] = std::current_exception();
    }
  };
  if (workers == 1) {
    for (std::size_t j = 0; j < n; ++j) body(j);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t j = next++; j < n; j = next++) body(j);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

template <typename Fn>
auto with_context(std::size_t t, std::string_view where, Fn&& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    throw Error(fmt::format("round {}: {}: {}", t, where, e.what()));
  }
}

TrainOptions train_options(const ExperimentConfig& c, std::size_t epochs) {
  return TrainOptions{epochs, c.lr, c.batch_size, c.negatives};
}

Dataset make_dataset(ExperimentConfig& config, std::vector<std::string>& names) {
  if (!config.dataset.path.empty()) {
    ExternalDataset ext = load_external_dataset(config.dataset.path);
    names = ext.modality_names;
    config.modalities = ext.modality_names;
    config.shape.raw_dims = ext.dims;
    if (config.mer.size() != 1 && config.mer.size() != names.size()) {
      throw Error(fmt::format("config gives {} modality rates but the dataset has {} modalities",
                              config.mer.size(), names.size()));
    }
    if (ext.data.classes > config.shape.vocab) {
      throw Error(fmt::format("dataset has {} classes but the vocabulary holds {}", ext.data.classes,
                              config.shape.vocab));
    }
    return std::move(ext.data);
  }
  names = config.modalities;
  const auto& syn = config.dataset.synthetic;
  Rng task_rng = make_rng(config.seed, "task");
  const auto spec = SyntheticTaskSpec::random(config.shape.raw_dims, syn.latent_dim, syn.classes, syn.noise_std,
                                              syn.sample_count, task_rng);
  Rng data_rng = make_rng(config.seed, "data");
  return synth_dataset(spec, data_rng);
}

std::optional<double> mean_of(const std::vector<DeviceRoundMetrics>& devices,
                              std::optional<double> DeviceRoundMetrics::*field) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& d : devices) {
    if (const auto& v = d.*field) {
      sum += *v;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

// A device model cut from the server's unified model: the held modalities'
// encoders and projectors, the fusion layer, and the soft-prompt generator
// truncated to the SLM's prompt length.
UnifiedModel device_model_from(const UnifiedModel& server, const ModalitySet& modalities, Backbone slm) {
  UnifiedModel m;
  m.shape = server.shape;
  for (ModalityId id : modalities) {
    m.encoders[id] = server.encoders.at(id);
    m.projectors[id] = server.projectors.at(id);
  }
  m.fusion = server.fusion;
  m.soft_prompt_gen = server.soft_prompt_gen;
  auto& head = m.soft_prompt_gen.back();
  const std::size_t rows = slm.prompt_tokens * server.shape.token_width;
  Matrix w(rows, head.in());
  std::copy_n(head.weight.data().begin(), w.size(), w.data().begin());
  head.weight = std::move(w);
  head.bias.resize(rows);
  m.backbone = std::move(slm);
  return m;
}

}  // namespace

Experiment setup_experiment(const ExperimentConfig& input) {
  input.validate();
  Experiment exp;
  exp.config = input;
  auto& c = exp.config;
  Dataset data = make_dataset(c, exp.modality_names);
  const std::size_t n_mod = c.modality_count();

  Rng part_rng = make_rng(c.seed, "partition");
  Partition part = partition_data(data, c.n_devices, part_rng);
  Rng mod_rng = make_rng(c.seed, "modalities");
  const auto mer = c.mer_per_modality();
  const ModalityAssignment assignment = assign_modalities(c.n_devices, n_mod, mer, mod_rng);

  // Every device starts from the same pre-trained SLM and the same adapter init,
  // and every party's encoders and connector start from the server's unified model.
  auto slm_backbone = [&] {
    Rng frozen = make_rng(c.seed, "slm_backbone");
    Rng lora = make_rng(c.seed, "slm_lora");
    return make_backbone(c.shape.token_width, c.shape.vocab, c.slm, c.lora, frozen, lora);
  };
  exp.adapter_params = analytic_adapter_params(c.shape.token_width, c.shape.vocab, c.slm, c.lora);

  std::vector<ModalityId> all(n_mod);
  for (ModalityId m = 0; m < n_mod; ++m) all[m] = m;
  {
    Rng frozen = make_rng(c.seed, "llm_backbone");
    Rng lora = make_rng(c.seed, "llm_lora");
    Backbone llm = make_backbone(c.shape.token_width, c.shape.vocab, c.llm, c.lora, frozen, lora);
    Rng model_rng = make_rng(c.seed, "server_model");
    exp.server.unified = make_unified_model(c.shape, all, std::move(llm), model_rng);
  }
  exp.server.slm = slm_backbone();
  exp.server.public_train = std::move(part.public_set.train);
  exp.server.public_test = std::move(part.public_set.test);
  exp.server.rng = make_rng(c.seed, "server");

  for (std::size_t j = 0; j < c.n_devices; ++j) {
    DeviceState d;
    d.id = j;
    d.modalities = assignment.sets[j];
    d.model = device_model_from(exp.server.unified, d.modalities, slm_backbone());
    d.private_train = restrict_modalities(part.private_sets[j].train, d.modalities);
    d.private_test = restrict_modalities(part.private_sets[j].test, d.modalities);
    d.public_shard = restrict_modalities(exp.server.public_train, d.modalities);
    d.rng = make_rng(c.seed, "device", j);
    if (d.private_test.empty()) spdlog::warn("device {} has an empty private test set", j);
    exp.devices.push_back(std::move(d));
  }
  spdlog::info("setup: {} devices, {} public train, {} public test, {} adapter params per device",
               c.n_devices, exp.server.public_train.size(), exp.server.public_test.size(), exp.adapter_params);
  return exp;
}

RoundReport run_round(std::size_t t, Experiment& exp, std::size_t workers) {
  const auto start = std::chrono::steady_clock::now();
  const auto& c = exp.config;
  auto& server = exp.server;
  auto& devices = exp.devices;
  const std::size_t n = devices.size();

  RoundReport report;
  report.round = t;
  report.devices.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    report.devices[j].device_id = devices[j].id;
    report.devices[j].modality_count = devices[j].modalities.size();
  }

  const TrainOptions ccl = train_options(c, c.epochs.ccl);
  const TrainOptions amt = train_options(c, c.epochs.amt);
  const TrainOptions local = train_options(c, c.epochs.ccl + c.epochs.amt);

  auto evaluate_devices = [&] {
    parallel_for(n, workers, [&](std::size_t j) {
      report.devices[j].test_f1 = with_context(t, fmt::format("device {} evaluation", j), [&] {
        return devices[j].private_test.empty() ? 0.0 : evaluate_f1(devices[j].model, devices[j].private_test);
      });
    });
  };

  std::vector<std::size_t> shard_sizes;
  for (const auto& d : devices) shard_sizes.push_back(d.public_shard.size());
  report.comm = round_comm(c.mode, exp.adapter_params, shard_sizes, c.shape.latent_dim);

  if (c.mode == Mode::standalone) {
    parallel_for(n, workers, [&](std::size_t j) {
      report.devices[j].amt_loss = with_context(t, fmt::format("device {} local training", j), [&] {
        return train_supervised(devices[j].model, devices[j].private_train, kAllTrainable, local, devices[j].rng);
      });
    });
    report.server_llm_loss = with_context(t, "server supervised training", [&] {
      return train_supervised(server.unified, server.public_train, kAllTrainable, train_options(c, c.epochs.se),
                              server.rng);
    });
    report.server_f1 = server_test_f1(server);
    evaluate_devices();
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
  }

  if (c.mode == Mode::fedavg_uniform) {
    std::vector<LoRAUpload> uploads(n);
    parallel_for(n, workers, [&](std::size_t j) {
      report.devices[j].amt_loss = with_context(t, fmt::format("device {} local training", j), [&] {
        return train_supervised(devices[j].model, devices[j].private_train, kAllTrainable, local, devices[j].rng);
      });
      uploads[j] = make_upload(devices[j]);
    });
    const auto weights = uniform_weights(n);
    report.weights = weights.weights;
    const auto agg = with_context(t, "aggregation", [&] { return mma_aggregate(uploads, weights); });
    apply_lora(server.slm, agg);
    evaluate_devices();
    parallel_for(n, workers, [&](std::size_t j) { apply_server_adapters(devices[j], agg); });
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
  }

  const AnchorMap anchors = with_context(t, "fused representation", [&] { return generate_fused_public(server); });
  std::vector<LoRAUpload> uploads(n);
  parallel_for(n, workers, [&](std::size_t j) {
    auto& d = devices[j];
    report.devices[j].ccl_loss =
        with_context(t, fmt::format("device {} ccl", j), [&] { return run_ccl(d, anchors, ccl); });
    report.devices[j].amt_loss = with_context(t, fmt::format("device {} amt", j), [&] { return run_amt(d, amt); });
    uploads[j] = make_upload(d);
  });

  std::vector<std::size_t> counts;
  for (const auto& u : uploads) counts.push_back(u.modality_count);
  const AggregationWeights weights = c.mode == Mode::mlecs_wo_mma ? uniform_weights(n) : mma_weights(counts);
  report.weights = weights.weights;
  const auto agg = with_context(t, "aggregation", [&] { return mma_aggregate(uploads, weights); });
  apply_lora(server.slm, agg);

  if (c.mode != Mode::mlecs_wo_seccl) {
    const SeOptions se{train_options(c, c.epochs.se), c.kt_bins};
    const SeLosses losses = with_context(t, "se-ccl", [&] { return se_ccl(server, se); });
    report.server_llm_loss = losses.llm;
    report.server_slm_loss = losses.slm;
  }
  report.server_f1 = server_test_f1(server);

  // Devices report the locally tuned model, before the download overwrites its adapters.
  evaluate_devices();
  const auto down = distribute_adapters(server);
  parallel_for(n, workers, [&](std::size_t j) {
    with_context(t, fmt::format("device {} adapter update", j), [&] { apply_server_adapters(devices[j], down); });
  });
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

MetricTriple aggregate_metrics(std::span<const double> per_device) {
  if (per_device.empty()) throw Error("aggregate_metrics: no devices");
  double sum = 0.0;
  for (double v : per_device) sum += v;
  return {sum / static_cast<double>(per_device.size()), *std::max_element(per_device.begin(), per_device.end()),
          *std::min_element(per_device.begin(), per_device.end())};
}

ExperimentResult run_experiment(const ExperimentConfig& config, const RunOptions& opts) {
  ExperimentResult result;
  result.state = setup_experiment(config);
  auto& exp = result.state;
  for (std::size_t t = 0; t < exp.config.rounds; ++t) {
    RoundReport r = run_round(t, exp, opts.workers);
    spdlog::info("round {}: mean device F1 {:.4f}, server F1 {}", t,
                 aggregate_metrics([&] {
                   std::vector<double> f;
                   for (const auto& d : r.devices) f.push_back(d.test_f1);
                   return f;
                 }()).avg,
                 r.server_f1 ? fmt::format("{:.4f}", *r.server_f1) : "n/a");
    if (opts.on_round) opts.on_round(r);
    result.rounds.push_back(std::move(r));
  }

  auto& s = result.summary;
  s.seed = exp.config.seed;
  s.mode = exp.config.mode;
  const auto& last = result.rounds.back();
  for (const auto& d : last.devices) {
    s.device_f1.push_back(d.test_f1);
    s.device_modalities.push_back(d.modality_count);
  }
  s.f1 = aggregate_metrics(s.device_f1);
  s.server_f1 = last.server_f1;
  for (const auto& r : result.rounds) {
    s.ccl_curve.push_back(mean_of(r.devices, &DeviceRoundMetrics::ccl_loss));
    s.amt_curve.push_back(mean_of(r.devices, &DeviceRoundMetrics::amt_loss));
    s.se_llm_curve.push_back(r.server_llm_loss);
    s.se_slm_curve.push_back(r.server_slm_loss);
    s.uplink_params += r.comm.uplink_params;
    s.downlink_params += r.comm.downlink_params;
  }
  return result;
}

std::string round_record(const RoundReport& r) {
  json devices = json::array();
  for (const auto& d : r.devices) {
    devices.push_back({{"id", d.device_id},
                       {"modalities", d.modality_count},
                       {"ccl_loss", optional_json(d.ccl_loss)},
                       {"amt_loss", optional_json(d.amt_loss)},
                       {"test_f1", d.test_f1}});
  }
  json j = {{"round", r.round},
            {"devices", devices},
            {"server", {{"llm_loss", optional_json(r.server_llm_loss)},
                        {"slm_loss", optional_json(r.server_slm_loss)},
                        {"test_f1", optional_json(r.server_f1)}}},
            {"weights", r.weights},
            {"comm", {{"uplink_params", r.comm.uplink_params},
                      {"downlink_params", r.comm.downlink_params},
                      {"uplink_bytes", r.comm.uplink_bytes()},
                      {"downlink_bytes", r.comm.downlink_bytes()}}}};
  return j.dump();
}

std::string summary_json(const ExperimentSummary& s) {
  auto curve = [](const std::vector<std::optional<double>>& c) {
    json a = json::array();
    for (const auto& v : c) a.push_back(optional_json(v));
    return a;
  };
  json j = {{"seed", s.seed},
            {"mode", std::string(to_string(s.mode))},
            {"device_f1", s.device_f1},
            {"device_modalities", s.device_modalities},
            {"avg_f1", s.f1.avg},
            {"best_f1", s.f1.best},
            {"worst_f1", s.f1.worst},
            {"server_f1", optional_json(s.server_f1)},
            {"curves", {{"ccl", curve(s.ccl_curve)},
                        {"amt", curve(s.amt_curve)},
                        {"se_llm", curve(s.se_llm_curve)},
                        {"se_slm", curve(s.se_slm_curve)}}},
            {"comm_totals", {{"uplink_params", s.uplink_params},
                             {"downlink_params", s.downlink_params},
                             {"uplink_bytes", s.uplink_params * kBytesPerParam},
                             {"downlink_bytes", s.downlink_params * kBytesPerParam}}}};
  return j.dump(2) + "\n";
}

ExperimentResult run_to_directory(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                                  const RunOptions& opts) {
  std::filesystem::create_directories(out_dir);
  std::ofstream metrics(out_dir / "metrics.jsonl", std::ios::trunc);
  std::ofstream timing(out_dir / "timing.jsonl", std::ios::trunc);
  if (!metrics || !timing) throw Error(fmt::format("cannot write into {}", out_dir.string()));
  RunOptions inner = opts;
  inner.on_round = [&](const RoundReport& r) {
    metrics << round_record(r) << '\n';
    metrics.flush();
    timing << json{{"round", r.round}, {"wall_seconds", r.wall_seconds}}.dump() << '\n';
    if (opts.on_round) opts.on_round(r);
  };
  ExperimentResult result = run_experiment(config, inner);

  std::ofstream(out_dir / "summary.json", std::ios::trunc) << summary_json(result.summary);
  std::ofstream(out_dir / "config.json", std::ios::trunc) << serialize_config(result.state.config);
  const auto ckpt_dir = out_dir / "checkpoints";
  std::filesystem::create_directories(ckpt_dir);
  write_checkpoint(ckpt_dir / "server_slm.ckpt", checkpoint_from(result.state.server.slm, config.seed));
  for (const auto& d : result.state.devices) {
    write_checkpoint(ckpt_dir / fmt::format("device_{}.ckpt", d.id), checkpoint_from(d.model.backbone, config.seed));
  }
  return result;
}

}  // namespace mlecs
