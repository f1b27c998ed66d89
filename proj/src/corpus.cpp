#include "photon/corpus.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace photon {

namespace {

constexpr char kMagic[8] = {'P', 'H', 'C', 'O', 'R', 'P', 'U', 'S'};
constexpr std::uint32_t kVersion = 1;

std::string read_all(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot read '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T take(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw Error("corpus '" + path + "': truncated file");
  return v;
}

}  // namespace

static_assert(std::endian::native == std::endian::little, "corpus I/O assumes a little-endian host");

void Corpus::validate(std::size_t vocab_size) const {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= vocab_size) {
      throw ContractError("corpus: id " + std::to_string(ids[i]) + " at " + std::to_string(i) + " >= vocab " +
                          std::to_string(vocab_size));
    }
  }
  for (std::size_t i = 1; i < boundaries.size(); ++i) {
    if (boundaries[i] <= boundaries[i - 1]) throw ContractError("corpus: boundaries not strictly increasing");
  }
}

std::vector<TokenId> tokenize_bytes(const std::string& bytes) {
  std::vector<TokenId> out;
  out.reserve(bytes.size());
  for (unsigned char b : bytes) out.push_back(static_cast<TokenId>(b) + kByteOffset);
  return out;
}

std::string detokenize(const std::vector<TokenId>& ids) {
  std::string out;
  out.reserve(ids.size());
  for (TokenId id : ids) {
    if (id >= kByteOffset && id < kByteVocab) out.push_back(static_cast<char>(id - kByteOffset));
  }
  return out;
}

Corpus ingest_texts(const std::vector<std::string>& docs) {
  Corpus c;
  for (const auto& d : docs) {
    if (d.empty()) continue;
    c.boundaries.push_back(c.ids.size());
    for (unsigned char b : d) c.ids.push_back(static_cast<std::uint16_t>(b + kByteOffset));
  }
  if (c.boundaries.empty()) c.boundaries.push_back(0);
  return c;
}

Corpus ingest_files(const std::vector<std::string>& paths) {
  std::vector<std::string> docs;
  docs.reserve(paths.size());
  for (const auto& p : paths) docs.push_back(read_all(p));
  return ingest_texts(docs);
}

void save_corpus(const std::string& path, const Corpus& c) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write corpus '" + path + "'");
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, c.ids.size());
  out.write(reinterpret_cast<const char*>(c.ids.data()), static_cast<std::streamsize>(c.ids.size() * 2));
  put<std::uint64_t>(out, c.boundaries.size());
  for (auto b : c.boundaries) put<std::uint64_t>(out, b);
  if (!out) throw Error("failed writing corpus '" + path + "'");
}

Corpus load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read corpus '" + path + "'");
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw Error("'" + path + "' is not a corpus file");
  if (take<std::uint32_t>(in, path) != kVersion) throw Error("corpus '" + path + "': unsupported version");
  Corpus c;
  c.ids.resize(take<std::uint64_t>(in, path));
  in.read(reinterpret_cast<char*>(c.ids.data()), static_cast<std::streamsize>(c.ids.size() * 2));
  if (!in) throw Error("corpus '" + path + "': truncated file");
  c.boundaries.resize(take<std::uint64_t>(in, path));
  for (auto& b : c.boundaries) b = take<std::uint64_t>(in, path);
  c.validate(kByteVocab);
  return c;
}

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t hash_file(const std::string& path) {
  const std::string s = read_all(path);
  return fnv1a(s.data(), s.size());
}

}  // namespace photon
