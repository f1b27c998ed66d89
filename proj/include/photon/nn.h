#pragma once

// LLaMA-style causal transformer stacks: pre-RMSNorm, multi-head attention
// with rotary positions, SiLU-gated MLP, no biases. Every encoder and decoder
// in the hierarchy, and the flat baseline, is one of these.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "photon/autodiff.h"
#include "photon/params.h"

namespace photon {

struct BlockConfig {
  std::size_t hidden_dim = 0;
  std::size_t intermediate_dim = 0;
  std::size_t n_layers = 0;
  std::size_t n_heads = 0;
  std::size_t head_dim = 0;

  // Throws ConfigError naming the broken invariant.
  void validate() const;
};

// n_layers * (4 D^2 + 3 D I + 2 D): Q/K/V/O projections, the three MLP
// matrices and two RMSNorm gains per layer. Excludes any final norm.
std::uint64_t count_block_params(const BlockConfig& cfg);

// Per-layer-stream attention accounting. All layers of a stack share the same
// geometry, so counts are recorded once per forward rather than per layer.
struct AttentionStats {
  std::uint64_t queries = 0;
  std::uint64_t prefix_queries = 0;
  std::uint64_t output_pairs = 0;  // (query, key) pairs of non-conditioning queries
  std::uint64_t prefix_pairs = 0;  // pairs of conditioning-row queries
  std::uint64_t entry_reads = 0;   // keys attended other than the query's own position
  std::uint64_t max_keys_read = 0;
  std::uint64_t entries_written = 0;

  void merge(const AttentionStats& o);
};

// Per-layer key/value store for incremental attention. Keys are stored after
// rotary encoding. Counters are in key-value vector units summed over layers.
class KVCache {
 public:
  KVCache(std::size_t n_layers, std::size_t width, std::optional<std::size_t> capacity = std::nullopt);

  std::size_t length() const { return len_; }
  std::size_t peak_length() const { return peak_; }
  std::size_t n_layers() const { return keys_.size(); }
  std::size_t width() const { return width_; }
  std::optional<std::size_t> capacity() const { return capacity_; }
  std::uint64_t entries_written() const { return written_; }
  std::uint64_t entries_read() const { return read_; }

  // Stored rows of one layer, [length (+ pending), width].
  Tensor keys(std::size_t layer) const;
  Tensor values(std::size_t layer) const;

 private:
  friend class BlockStack;
  void reserve_rows(std::size_t s) const;
  void append(std::size_t layer, const Tensor& k, const Tensor& v);
  void advance(std::size_t s);
  void count_reads(std::uint64_t n) { read_ += n; }

  std::size_t width_;
  std::optional<std::size_t> capacity_;
  std::size_t len_ = 0;
  std::size_t peak_ = 0;
  std::uint64_t written_ = 0;
  std::uint64_t read_ = 0;
  std::vector<std::vector<real>> keys_;
  std::vector<std::vector<real>> values_;
};

class BlockStack {
 public:
  // Registers parameters as "<name>.layer<i>.<role>" and "<name>.final_norm".
  BlockStack(std::string name, const BlockConfig& cfg, ParamStore& store, bool final_norm = true);

  const BlockConfig& config() const { return cfg_; }
  const std::string& name() const { return name_; }
  std::uint64_t param_count() const;

  // input: [S, D] or [B, S, D]; each batch entry is an independent sequence
  // whose positions start at cache->length() (0 without a cache). With a
  // cache the input must be rank 2, and the S new positions are appended.
  // `prefix_len` only affects accounting: positions below it are
  // conditioning rows.
  ad::Var forward(ad::Tape& tape, const ad::Var& input, KVCache* cache = nullptr, std::size_t prefix_len = 0,
                  AttentionStats* stats = nullptr) const;

 private:
  struct Layer {
    ad::Param attn_norm, wq, wk, wv, wo, mlp_norm, w_gate, w_up, w_down;
  };

  ad::Var rope(ad::Tape& tape, const ad::Var& x, const ad::Var& cos, const ad::Var& sin) const;

  std::string name_;
  BlockConfig cfg_;
  std::vector<Layer> layers_;
  std::optional<ad::Param> final_norm_;
};

}  // namespace photon
