#include "mlecs/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include <fmt/format.h>

namespace mlecs {

namespace {

constexpr const char* kMagic = "mlecs-lora-checkpoint v1";
constexpr const char* kPayloadMarker = "payload f32le";

void write_f32(std::ostream& os, std::span<const double> values) {
  for (double v : values) {
    const float f = static_cast<float>(v);
    std::uint32_t bits = 0;
    std::memcpy(&bits, &f, sizeof bits);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    char bytes[4];
    std::memcpy(bytes, &bits, 4);
    os.write(bytes, 4);
  }
}

void read_f32(std::istream& is, std::span<double> values, const std::filesystem::path& path) {
  for (double& v : values) {
    char bytes[4];
    if (!is.read(bytes, 4)) throw Error(fmt::format("{}: truncated payload", path.string()));
    std::uint32_t bits = 0;
    std::memcpy(&bits, bytes, 4);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    float f = 0.0f;
    std::memcpy(&f, &bits, sizeof f);
    v = f;
  }
}

}  // namespace

AdapterCheckpoint checkpoint_from(const Backbone& backbone, std::uint64_t seed) {
  AdapterCheckpoint ckpt;
  ckpt.seed = seed;
  for (std::size_t l = 0; l < backbone.layers.size(); ++l) {
    if (!backbone.layers[l].adapter) continue;
    ckpt.layers.push_back(l);
    ckpt.adapters.push_back(*backbone.layers[l].adapter);
  }
  return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const AdapterCheckpoint& ckpt) {
  if (ckpt.layers.size() != ckpt.adapters.size()) {
    throw Error("write_checkpoint: layer list does not match adapter list");
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(fmt::format("cannot open {} for writing", path.string()));
  os << kMagic << '\n';
  os << "seed " << ckpt.seed << '\n';
  os << "adapters " << ckpt.adapters.size() << '\n';
  for (std::size_t i = 0; i < ckpt.adapters.size(); ++i) {
    const auto& ad = ckpt.adapters[i];
    os << fmt::format("layer {} rank {} scale {:.17g} a {} {} b {} {}\n", ckpt.layers[i], ad.rank(),
                      ad.scale, ad.a.rows(), ad.a.cols(), ad.b.rows(), ad.b.cols());
  }
  os << kPayloadMarker << '\n';
  for (const auto& ad : ckpt.adapters) {
    write_f32(os, ad.a.data());
    write_f32(os, ad.b.data());
  }
  if (!os) throw Error(fmt::format("error writing {}", path.string()));
}

AdapterCheckpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(fmt::format("cannot open {}", path.string()));
  auto fail = [&](std::size_t line, const std::string& what) {
    return Error(fmt::format("{}:{}: {}", path.string(), line, what));
  };
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(is, line) || line != kMagic) throw fail(lineno, "not an adapter checkpoint");

  AdapterCheckpoint ckpt;
  std::size_t count = 0;
  {
    ++lineno;
    std::getline(is, line);
    std::istringstream ss(line);
    std::string key;
    if (!(ss >> key >> ckpt.seed) || key != "seed") throw fail(lineno, "expected 'seed <n>'");
  }
  {
    ++lineno;
    std::getline(is, line);
    std::istringstream ss(line);
    std::string key;
    if (!(ss >> key >> count) || key != "adapters") throw fail(lineno, "expected 'adapters <n>'");
  }
  for (std::size_t i = 0; i < count; ++i) {
    ++lineno;
    if (!std::getline(is, line)) throw fail(lineno, "truncated manifest");
    std::istringstream ss(line);
    std::string k_layer, k_rank, k_scale, k_a, k_b;
    std::size_t layer = 0, rank = 0, ar = 0, ac = 0, br = 0, bc = 0;
    std::string scale_text;
    if (!(ss >> k_layer >> layer >> k_rank >> rank >> k_scale >> scale_text >> k_a >> ar >> ac >>
          k_b >> br >> bc) ||
        k_layer != "layer" || k_rank != "rank" || k_scale != "scale" || k_a != "a" || k_b != "b") {
      throw fail(lineno, "malformed adapter entry");
    }
    if (ar != rank || bc != rank) throw fail(lineno, "adapter shapes disagree with rank");
    LoRAAdapter ad{Matrix(ar, ac), Matrix(br, bc), std::stod(scale_text)};
    ckpt.layers.push_back(layer);
    ckpt.adapters.push_back(std::move(ad));
  }
  ++lineno;
  if (!std::getline(is, line) || line != kPayloadMarker) throw fail(lineno, "missing payload marker");
  for (auto& ad : ckpt.adapters) {
    read_f32(is, ad.a.data(), path);
    read_f32(is, ad.b.data(), path);
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw Error(fmt::format("{}: trailing bytes after payload", path.string()));
  }
  return ckpt;
}

std::vector<LoRAAdapter> round_to_f32(std::vector<LoRAAdapter> adapters) {
  for (auto& ad : adapters) {
    for (double& v : ad.a.data()) v = static_cast<float>(v);
    for (double& v : ad.b.data()) v = static_cast<float>(v);
  }
  return adapters;
}

}  // namespace mlecs
