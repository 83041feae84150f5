#include "mlecs/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "json.hpp"

namespace mlecs {

using nlohmann::json;

namespace {

constexpr std::pair<Mode, std::string_view> kModeNames[] = {
    {Mode::mlecs, "mlecs"},
    {Mode::standalone, "standalone"},
    {Mode::fedavg_uniform, "fedavg_uniform"},
    {Mode::mlecs_wo_mma, "mlecs_wo_mma"},
    {Mode::mlecs_wo_seccl, "mlecs_wo_seccl"},
};

// Walks a JSON object, tracking the dotted key path for error messages and
// rejecting keys that no reader consumed.
class Reader {
 public:
  Reader(const json& node, std::string path, std::string origin)
      : node_(node), path_(std::move(path)), origin_(std::move(origin)) {
    if (!node_.is_object()) fail(path_.empty() ? "top level must be an object" : "must be an object");
  }

  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [k, _] : node_.items()) {
      if (!seen_.contains(k)) throw Error(fmt::format("{}: unknown key '{}'", origin_, key(k)));
    }
  }

  bool has(const std::string& k) const { return node_.contains(k); }

  const json* raw(const std::string& k) {
    seen_.insert(k);
    auto it = node_.find(k);
    return it == node_.end() ? nullptr : &*it;
  }

  template <typename T>
  void get(const std::string& k, T& out) {
    const json* v = raw(k);
    if (v == nullptr) return;
    try {
      if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
        if (!v->is_number_integer() || v->get<long long>() < 0) throw Error("expected a non-negative integer");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v->is_boolean()) throw Error("expected a boolean");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v->is_number()) throw Error("expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v->is_string()) throw Error("expected a string");
      }
      out = v->get<T>();
    } catch (const Error& e) {
      fail_key(k, e.what());
    } catch (const json::exception& e) {
      fail_key(k, e.what());
    }
  }

  Reader child(const std::string& k) {
    const json* v = raw(k);
    static const json empty = json::object();
    return Reader(v == nullptr ? empty : *v, key(k), origin_);
  }

  [[noreturn]] void fail_key(const std::string& k, const std::string& what) const {
    throw Error(fmt::format("{}: key '{}': {}", origin_, key(k), what));
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw Error(fmt::format("{}: {}{}", origin_, path_.empty() ? "" : "key '" + path_ + "': ", what));
  }

  std::string key(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }

  const json& node_;
  std::string path_;
  std::string origin_;
  std::set<std::string> seen_;
};

void read_backbone(Reader r, BackboneSpec& spec) {
  r.get("hidden", spec.hidden);
  r.get("layers", spec.layers);
  r.get("prompt_tokens", spec.prompt_tokens);
}

json backbone_json(const BackboneSpec& spec) {
  return {{"hidden", spec.hidden}, {"layers", spec.layers}, {"prompt_tokens", spec.prompt_tokens}};
}

json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return json(text);
  }
}

void apply_override(json& root, const std::string& assignment, std::string_view origin) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw Error(fmt::format("{}: override '{}' is not KEY=VALUE", origin, assignment));
  }
  const std::string key = assignment.substr(0, eq);
  json* node = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw Error(fmt::format("{}: override key '{}' is malformed", origin, key));
    if (!node->is_object()) {
      throw Error(fmt::format("{}: override key '{}' descends into a non-object", origin, key));
    }
    if (dot == std::string::npos) {
      (*node)[part] = parse_value(assignment.substr(eq + 1));
      return;
    }
    if (!node->contains(part)) (*node)[part] = json::object();
    node = &(*node)[part];
    start = dot + 1;
  }
}

std::size_t line_of(std::string_view text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

ExperimentConfig from_json(const json& root, std::string_view origin) {
  ExperimentConfig c;
  Reader r(root, "", std::string(origin));
  r.get("seed", c.seed);
  if (const json* mode = r.raw("mode")) {
    if (!mode->is_string()) r.fail_key("mode", "expected a string");
    try {
      c.mode = parse_mode(mode->get<std::string>());
    } catch (const Error& e) {
      r.fail_key("mode", e.what());
    }
  }
  r.get("n_devices", c.n_devices);
  r.get("rounds", c.rounds);
  r.get("modalities", c.modalities);
  if (const json* mer = r.raw("mer")) {
    c.mer.clear();
    if (mer->is_number()) {
      c.mer.push_back(mer->get<double>());
    } else if (mer->is_array()) {
      for (const auto& v : *mer) {
        if (!v.is_number()) r.fail_key("mer", "array entries must be numbers");
        c.mer.push_back(v.get<double>());
      }
    } else if (mer->is_object()) {
      for (const auto& name : c.modalities) {
        if (!mer->contains(name)) r.fail_key("mer", fmt::format("missing rate for modality '{}'", name));
        c.mer.push_back(mer->at(name).get<double>());
      }
      if (mer->size() != c.modalities.size()) r.fail_key("mer", "rates given for unknown modalities");
    } else {
      r.fail_key("mer", "expected a number, array, or modality-keyed object");
    }
  }
  {
    Reader d = r.child("dims");
    if (const json* raw = d.raw("raw")) {
      c.shape.raw_dims.clear();
      if (raw->is_number_unsigned()) {
        c.shape.raw_dims.assign(c.modalities.size(), raw->get<std::size_t>());
      } else if (raw->is_array()) {
        for (const auto& v : *raw) {
          if (!v.is_number_unsigned()) d.fail_key("raw", "entries must be non-negative integers");
          c.shape.raw_dims.push_back(v.get<std::size_t>());
        }
      } else {
        d.fail_key("raw", "expected an integer or an array of integers");
      }
    } else {
      c.shape.raw_dims.resize(c.modalities.size(), c.shape.raw_dims.empty() ? 4 : c.shape.raw_dims.front());
    }
    d.get("encoder_hidden", c.shape.encoder_hidden);
    d.get("feature", c.shape.feature_dim);
    d.get("latent", c.shape.latent_dim);
    d.get("fusion_hidden", c.shape.fusion_hidden);
    d.get("prompt_hidden", c.shape.prompt_hidden);
    d.get("token_width", c.shape.token_width);
    d.get("vocab", c.shape.vocab);
  }
  read_backbone(r.child("slm"), c.slm);
  read_backbone(r.child("llm"), c.llm);
  {
    Reader l = r.child("lora");
    l.get("rank", c.lora.rank);
    l.get("scale", c.lora.scale);
    l.get("on_head", c.lora.on_head);
  }
  r.get("negatives", c.negatives);
  r.get("batch_size", c.batch_size);
  r.get("lr", c.lr);
  {
    Reader e = r.child("epochs");
    e.get("ccl", c.epochs.ccl);
    e.get("amt", c.epochs.amt);
    e.get("se", c.epochs.se);
  }
  r.get("kt_bins", c.kt_bins);
  {
    Reader ds = r.child("dataset");
    ds.get("path", c.dataset.path);
    Reader syn = ds.child("synthetic");
    syn.get("latent_dim", c.dataset.synthetic.latent_dim);
    syn.get("classes", c.dataset.synthetic.classes);
    syn.get("noise_std", c.dataset.synthetic.noise_std);
    syn.get("samples", c.dataset.synthetic.sample_count);
  }
  return c;
}

}  // namespace

std::string_view to_string(Mode mode) {
  for (const auto& [m, name] : kModeNames)
    if (m == mode) return name;
  return "unknown";
}

Mode parse_mode(std::string_view text) {
  for (const auto& [m, name] : kModeNames)
    if (name == text) return m;
  throw Error(fmt::format("unknown mode '{}'", text));
}

ExperimentConfig::ExperimentConfig() { shape.raw_dims.assign(modalities.size(), 4); }

std::vector<double> ExperimentConfig::mer_per_modality() const {
  if (mer.size() == 1) return std::vector<double>(modalities.size(), mer.front());
  return mer;
}

void ExperimentConfig::validate() const {
  auto bad = [](const std::string& what) { return Error("invalid config: " + what); };
  if (n_devices < 1) throw bad("n_devices must be >= 1");
  if (rounds < 1) throw bad("rounds must be >= 1");
  if (dataset.path.empty()) {
    if (modalities.empty()) throw bad("modalities must be nonempty");
    if (std::set<std::string>(modalities.begin(), modalities.end()).size() != modalities.size()) {
      throw bad("modality names must be unique");
    }
    if (shape.raw_dims.size() != modalities.size()) throw bad("dims.raw needs one entry per modality");
    for (std::size_t d : shape.raw_dims)
      if (d < 1) throw bad("dims.raw entries must be >= 1");
    if (mer.size() != 1 && mer.size() != modalities.size()) throw bad("mer needs 1 or |modalities| entries");
    const auto& syn = dataset.synthetic;
    if (syn.classes < 2) throw bad("dataset.synthetic.classes must be >= 2");
    if (syn.classes > shape.vocab) throw bad("dataset.synthetic.classes must not exceed dims.vocab");
    if (syn.noise_std < 0.0) throw bad("dataset.synthetic.noise_std must be >= 0");
    if (syn.latent_dim < 1) throw bad("dataset.synthetic.latent_dim must be >= 1");
  }
  for (double rho : mer)
    if (!(rho >= 0.0 && rho <= 1.0)) throw bad(fmt::format("mer {} outside [0, 1]", rho));
  if (lora.rank < 1) throw bad("lora.rank must be >= 1");
  auto check_rank = [&](std::size_t p, std::size_t q, const char* where) {
    if (2 * lora.rank > std::min(p, q)) {
      throw bad(fmt::format("lora.rank {} too large for the {} layer ({}x{})", lora.rank, where, p, q));
    }
  };
  for (const auto* bb : {&slm, &llm}) {
    const char* name = bb == &slm ? "slm" : "llm";
    if (bb->prompt_tokens < 1) throw bad(fmt::format("{}.prompt_tokens must be >= 1", name));
    std::size_t in = shape.token_width;
    for (std::size_t l = 0; l < bb->layers; ++l) {
      check_rank(bb->hidden, in, name);
      in = bb->hidden;
    }
    if (lora.on_head) check_rank(shape.vocab, in, name);
  }
  if (slm.prompt_tokens > llm.prompt_tokens) throw bad("slm.prompt_tokens must not exceed llm.prompt_tokens");
  if (negatives < 1) throw bad("negatives must be >= 1");
  if (batch_size < 1) throw bad("batch_size must be >= 1");
  if (!(lr > 0.0)) throw bad("lr must be > 0");
  if (kt_bins < 1 || kt_bins > shape.vocab) throw bad("kt_bins must be in [1, dims.vocab]");
  for (std::size_t v : {shape.encoder_hidden, shape.feature_dim, shape.latent_dim, shape.fusion_hidden,
                        shape.prompt_hidden, shape.token_width, shape.vocab}) {
    if (v < 1) throw bad("all dims must be >= 1");
  }
}

ExperimentConfig parse_config_text(std::string_view text, const std::vector<std::string>& overrides,
                                   std::string_view origin) {
  json root;
  try {
    root = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw Error(fmt::format("{}:{}: parse error: {}", origin, line_of(text, e.byte), e.what()));
  }
  for (const auto& o : overrides) apply_override(root, o, origin);
  ExperimentConfig c = from_json(root, origin);
  c.validate();
  return c;
}

ExperimentConfig parse_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream is(path);
  if (!is) throw Error(fmt::format("cannot open config file {}", path.string()));
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str(), overrides, path.string());
}

std::string serialize_config(const ExperimentConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["mode"] = std::string(to_string(c.mode));
  j["n_devices"] = c.n_devices;
  j["rounds"] = c.rounds;
  j["modalities"] = c.modalities;
  if (c.mer.size() == 1) {
    j["mer"] = c.mer.front();
  } else {
    j["mer"] = c.mer;
  }
  j["dims"] = {{"raw", c.shape.raw_dims},
               {"encoder_hidden", c.shape.encoder_hidden},
               {"feature", c.shape.feature_dim},
               {"latent", c.shape.latent_dim},
               {"fusion_hidden", c.shape.fusion_hidden},
               {"prompt_hidden", c.shape.prompt_hidden},
               {"token_width", c.shape.token_width},
               {"vocab", c.shape.vocab}};
  j["slm"] = backbone_json(c.slm);
  j["llm"] = backbone_json(c.llm);
  j["lora"] = {{"rank", c.lora.rank}, {"scale", c.lora.scale}, {"on_head", c.lora.on_head}};
  j["negatives"] = c.negatives;
  j["batch_size"] = c.batch_size;
  j["lr"] = c.lr;
  j["epochs"] = {{"ccl", c.epochs.ccl}, {"amt", c.epochs.amt}, {"se", c.epochs.se}};
  j["kt_bins"] = c.kt_bins;
  j["dataset"] = {{"path", c.dataset.path},
                  {"synthetic",
                   {{"latent_dim", c.dataset.synthetic.latent_dim},
                    {"classes", c.dataset.synthetic.classes},
                    {"noise_std", c.dataset.synthetic.noise_std},
                    {"samples", c.dataset.synthetic.sample_count}}}};
  return j.dump(2) + "\n";
}

}  // namespace mlecs
