#include "photon/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>

namespace photon {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'P', 'H', 'O', 'T', 'O', 'N', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T take(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw Error("checkpoint '" + path + "': truncated file");
  return v;
}

std::string take_string(std::istream& in, std::size_t n, const std::string& path) {
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw Error("checkpoint '" + path + "': truncated file");
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::string& config_text, const ParamStore& store) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint '" + path + "'");
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(config_text.size()));
  out.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(store.size()));
  for (const auto& name : store.names()) {
    const auto& t = store.get(name).value();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) put<std::uint64_t>(out, e);
    for (real x : t.data()) put<double>(out, static_cast<double>(x));
  }
  if (!out) throw Error("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read checkpoint '" + path + "'");
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw Error("'" + path + "' is not a checkpoint");
  const auto version = take<std::uint32_t>(in, path);
  if (version != kVersion) throw Error("checkpoint '" + path + "': unsupported version " + std::to_string(version));
  Checkpoint ck;
  ck.config_text = take_string(in, take<std::uint32_t>(in, path), path);
  const auto count = take<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = take_string(in, take<std::uint32_t>(in, path), path);
    const auto rank = take<std::uint32_t>(in, path);
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(take<std::uint64_t>(in, path));
    std::vector<real> data(shape_numel(shape));
    for (auto& x : data) x = static_cast<real>(take<double>(in, path));
    ck.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return ck;
}

void restore_params(const Checkpoint& ck, ParamStore& store) {
  if (ck.tensors.size() != store.size()) {
    throw ContractError("checkpoint holds " + std::to_string(ck.tensors.size()) + " tensors, model has " +
                        std::to_string(store.size()));
  }
  for (const auto& [name, t] : ck.tensors) {
    auto& p = store.get(name);
    if (p.shape() != t.shape()) {
      throw DimensionError("checkpoint tensor '" + name + "' is " + shape_str(t.shape()) + ", model expects " +
                           shape_str(p.shape()));
    }
    p.value() = t;
  }
}

}  // namespace photon
