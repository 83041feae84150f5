#include "mlecs/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <fmt/format.h>

#include "json.hpp"

namespace mlecs {

std::vector<SampleId> Dataset::ids() const {
  std::vector<SampleId> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.id);
  return out;
}

Dataset restrict_modalities(const Dataset& data, const ModalitySet& modalities) {
  Dataset out{data.modality_count, data.classes, {}};
  out.samples.reserve(data.samples.size());
  for (const auto& s : data.samples) {
    Sample r{s.id, s.label, {}};
    for (ModalityId m : modalities) {
      if (auto it = s.features.find(m); it != s.features.end()) r.features.emplace(m, it->second);
    }
    out.samples.push_back(std::move(r));
  }
  return out;
}

void SyntheticTaskSpec::validate() const {
  if (classes < 2) throw Error("synthetic task needs at least 2 classes");
  if (noise_std < 0.0) throw Error("synthetic task noise_std must be >= 0");
  if (latent_dim < 1) throw Error("synthetic task latent_dim must be >= 1");
  if (mixing.empty() || mixing.size() != offsets.size()) {
    throw Error("synthetic task needs one mixing matrix and offset per modality");
  }
  for (std::size_t m = 0; m < mixing.size(); ++m) {
    if (mixing[m].cols() != latent_dim || offsets[m].size() != mixing[m].rows()) {
      throw Error(fmt::format("synthetic task: modality {} mixing/offset shapes inconsistent", m));
    }
  }
  if (class_matrix.rows() != classes || class_matrix.cols() != latent_dim) {
    throw Error("synthetic task: class matrix must be classes x latent_dim");
  }
}

SyntheticTaskSpec SyntheticTaskSpec::random(std::span<const std::size_t> raw_dims,
                                            std::size_t latent_dim, std::size_t classes,
                                            double noise_std, std::size_t sample_count, Rng& rng) {
  SyntheticTaskSpec spec;
  spec.latent_dim = latent_dim;
  spec.classes = classes;
  spec.noise_std = noise_std;
  spec.sample_count = sample_count;
  std::normal_distribution<double> n01(0.0, 1.0);
  const double w_scale = 1.0 / std::sqrt(static_cast<double>(latent_dim));
  for (std::size_t dim : raw_dims) {
    Matrix w(dim, latent_dim);
    for (double& v : w.data()) v = n01(rng) * w_scale;
    Vector b(dim);
    for (double& v : b) v = 0.1 * n01(rng);
    spec.mixing.push_back(std::move(w));
    spec.offsets.push_back(std::move(b));
  }
  spec.class_matrix = Matrix(classes, latent_dim);
  for (double& v : spec.class_matrix.data()) v = n01(rng);
  spec.validate();
  return spec;
}

Dataset synth_dataset(const SyntheticTaskSpec& spec, Rng& rng) {
  spec.validate();
  Dataset out{spec.mixing.size(), spec.classes, {}};
  out.samples.reserve(spec.sample_count);
  std::normal_distribution<double> n01(0.0, 1.0);
  Vector z(spec.latent_dim);
  for (std::size_t i = 0; i < spec.sample_count; ++i) {
    for (double& v : z) v = n01(rng);
    const Vector scores = matvec(spec.class_matrix, z);
    Sample s{i, static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) -
                                         scores.begin()),
             {}};
    for (std::size_t m = 0; m < spec.mixing.size(); ++m) {
      Vector x = matvec(spec.mixing[m], z);
      for (std::size_t k = 0; k < x.size(); ++k) x[k] += spec.offsets[m][k] + spec.noise_std * n01(rng);
      s.features.emplace(m, std::move(x));
    }
    out.samples.push_back(std::move(s));
  }
  return out;
}

namespace {

DataSplit split_train_test(Dataset subset) {
  const std::size_t test = subset.size() / 10;
  DataSplit split{Dataset{subset.modality_count, subset.classes, {}},
                  Dataset{subset.modality_count, subset.classes, {}}};
  const std::size_t train = subset.size() - test;
  auto& s = subset.samples;
  split.train.samples.assign(std::make_move_iterator(s.begin()),
                             std::make_move_iterator(s.begin() + static_cast<std::ptrdiff_t>(train)));
  split.test.samples.assign(std::make_move_iterator(s.begin() + static_cast<std::ptrdiff_t>(train)),
                            std::make_move_iterator(s.end()));
  return split;
}

}  // namespace

Partition partition_data(const Dataset& data, std::size_t n_devices, Rng& rng) {
  if (n_devices < 1) throw Error("partition_data: need at least one device");
  if (data.size() < 4 * n_devices) {
    throw Error(fmt::format("partition_data: {} samples is too few for {} devices (need >= {})",
                            data.size(), n_devices, 4 * n_devices));
  }
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);

  auto take = [&](std::size_t begin, std::size_t count) {
    Dataset d{data.modality_count, data.classes, {}};
    d.samples.reserve(count);
    for (std::size_t i = begin; i < begin + count; ++i) d.samples.push_back(data.samples[order[i]]);
    return d;
  };

  const std::size_t public_count = data.size() / 4;
  const std::size_t rest = data.size() - public_count;
  Partition p;
  p.public_set = split_train_test(take(0, public_count));
  std::size_t cursor = public_count;
  for (std::size_t j = 0; j < n_devices; ++j) {
    const std::size_t share = rest / n_devices + (j < rest % n_devices ? 1 : 0);
    p.private_sets.push_back(split_train_test(take(cursor, share)));
    cursor += share;
  }
  return p;
}

ModalityAssignment assign_modalities(std::size_t n_devices, std::size_t modality_count,
                                     std::span<const double> mer, Rng& rng) {
  if (modality_count == 0) throw Error("assign_modalities: empty modality universe");
  if (mer.size() != modality_count) {
    throw Error(fmt::format("assign_modalities: {} rates for {} modalities", mer.size(),
                            modality_count));
  }
  for (double rho : mer) {
    if (!(rho >= 0.0 && rho <= 1.0)) throw Error(fmt::format("modality existing rate {} not in [0,1]", rho));
  }
  ModalityAssignment out;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t j = 0; j < n_devices; ++j) {
    ModalitySet set;
    for (ModalityId m = 0; m < modality_count; ++m)
      if (unit(rng) < mer[m]) set.push_back(m);
    std::optional<ModalityId> forced;
    if (set.empty()) {
      std::uniform_int_distribution<std::size_t> pick(0, modality_count - 1);
      forced = pick(rng);
      set.push_back(*forced);
    }
    out.sets.push_back(std::move(set));
    out.forced.push_back(forced);
  }
  return out;
}

double macro_f1(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                std::size_t classes) {
  if (truth.size() != predicted.size()) throw Error("macro_f1: length mismatch");
  if (truth.empty()) throw Error("macro_f1: no samples");
  std::vector<std::size_t> tp(classes, 0), fp(classes, 0), fn(classes, 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= classes || predicted[i] >= classes) throw Error("macro_f1: class out of range");
    if (truth[i] == predicted[i]) {
      ++tp[truth[i]];
    } else {
      ++fp[predicted[i]];
      ++fn[truth[i]];
    }
  }
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    const std::size_t denom = 2 * tp[c] + fp[c] + fn[c];
    if (denom == 0) continue;
    sum += 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom);
    ++counted;
  }
  return sum / static_cast<double>(counted);
}

ExternalDataset load_external_dataset(const std::filesystem::path& manifest) {
  std::ifstream is(manifest);
  if (!is) throw Error(fmt::format("cannot open dataset manifest {}", manifest.string()));
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(fmt::format("{}: {}", manifest.string(), e.what()));
  }
  ExternalDataset out;
  try {
    out.data.classes = j.at("classes").get<std::size_t>();
    if (out.data.classes < 2) throw Error("dataset manifest: classes must be >= 2");
    std::vector<std::vector<float>> tables;
    for (const auto& m : j.at("modalities")) {
      out.modality_names.push_back(m.at("name").get<std::string>());
      const auto dim = m.at("dim").get<std::size_t>();
      if (dim == 0) throw Error("dataset manifest: modality dim must be positive");
      out.dims.push_back(dim);
      const auto file = manifest.parent_path() / m.at("file").get<std::string>();
      std::ifstream fs(file, std::ios::binary | std::ios::ate);
      if (!fs) throw Error(fmt::format("cannot open feature file {}", file.string()));
      const auto bytes = static_cast<std::size_t>(fs.tellg());
      if (bytes % (4 * dim) != 0) {
        throw Error(fmt::format("{}: size {} is not a multiple of {} float32 rows", file.string(),
                                bytes, dim));
      }
      std::vector<float> table(bytes / 4);
      fs.seekg(0);
      fs.read(reinterpret_cast<char*>(table.data()), static_cast<std::streamsize>(bytes));
      tables.push_back(std::move(table));
    }
    if (out.modality_names.empty()) throw Error("dataset manifest: no modalities");
    out.data.modality_count = out.modality_names.size();
    std::set<SampleId> seen;
    for (const auto& s : j.at("samples")) {
      Sample sample{s.at("id").get<SampleId>(), s.at("label").get<std::size_t>(), {}};
      if (!seen.insert(sample.id).second) {
        throw Error(fmt::format("dataset manifest: duplicate sample id {}", sample.id));
      }
      if (sample.label >= out.data.classes) {
        throw Error(fmt::format("dataset manifest: sample {} label {} out of range", sample.id,
                                sample.label));
      }
      const auto& rows = s.at("rows");
      for (std::size_t m = 0; m < out.modality_names.size(); ++m) {
        const auto it = rows.find(out.modality_names[m]);
        if (it == rows.end()) {
          throw Error(fmt::format("dataset manifest: sample {} lacks modality '{}'", sample.id,
                                  out.modality_names[m]));
        }
        const auto row = it->get<std::size_t>();
        const std::size_t dim = out.dims[m];
        if ((row + 1) * dim > tables[m].size()) {
          throw Error(fmt::format("dataset manifest: sample {} row {} beyond '{}' table", sample.id,
                                  row, out.modality_names[m]));
        }
        Vector x(dim);
        for (std::size_t k = 0; k < dim; ++k) x[k] = tables[m][row * dim + k];
        if (!all_finite(x)) throw Error(fmt::format("sample {} has non-finite features", sample.id));
        sample.features.emplace(m, std::move(x));
      }
      out.data.samples.push_back(std::move(sample));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(fmt::format("{}: {}", manifest.string(), e.what()));
  }
  return out;
}

}  // namespace mlecs
