#pragma once

// Byte-level token streams. Ids 0 and 1 are reserved (pad, begin-of-sequence);
// byte b maps to id b + 2.
//
// File layout: "PHCORPUS" u32 version, u64 n, u16 ids[n], u64 m,
// u64 boundaries[m] (document start offsets), little-endian.

#include <cstdint>
#include <string>
#include <vector>

#include "photon/model.h"

namespace photon {

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kBosId = 1;
inline constexpr TokenId kByteOffset = 2;
inline constexpr std::size_t kByteVocab = 256 + kByteOffset;

struct Corpus {
  std::vector<std::uint16_t> ids;
  std::vector<std::uint64_t> boundaries;  // strictly increasing, starts at 0

  std::vector<TokenId> tokens() const { return {ids.begin(), ids.end()}; }
  void validate(std::size_t vocab_size) const;
};

std::vector<TokenId> tokenize_bytes(const std::string& bytes);
// Reserved ids are dropped.
std::string detokenize(const std::vector<TokenId>& ids);

// One document per input file, in the given order. Empty files add no tokens.
Corpus ingest_files(const std::vector<std::string>& paths);
Corpus ingest_texts(const std::vector<std::string>& docs);

void save_corpus(const std::string& path, const Corpus& c);
Corpus load_corpus(const std::string& path);

// 64-bit FNV-1a.
std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t seed = 14695981039346656037ull);
std::uint64_t hash_file(const std::string& path);

}  // namespace photon
