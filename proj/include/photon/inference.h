#pragma once

// Incremental generation with exact KV traffic accounting.
//
// PhotonSession keeps one growing cache per encoder level and a short-lived
// cache per local decoder chunk. Encoders advance eagerly as chunks complete;
// decoders advance lazily, only as far as the next logits require.
// FlatSession is the token-by-token baseline over a single growing cache.

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "photon/flat.h"
#include "photon/hierarchy.h"

namespace photon {

struct SamplingConfig {
  real temperature = 0;  // <= 0 selects greedy decoding
  std::uint64_t seed = 0;
  std::vector<TokenId> banned;  // ids never emitted
};

// Greedy picks the lowest-index maximum. Throws NumericError on non-finite
// logits.
TokenId sample_token(std::span<const real> logits, const SamplingConfig& cfg, std::mt19937_64& rng);

// Counters for one attention stack, in per-layer cache-entry units.
struct StackCounters {
  std::string name;  // enc.<l>, dec.<l>, flat
  bool global = true;
  std::size_t layers = 0;
  std::size_t width = 0;
  std::uint64_t kv_entries = 0;       // currently stored
  std::uint64_t kv_entries_peak = 0;  // local stacks: longest single chunk cache
  std::uint64_t kv_entry_reads = 0;
  std::uint64_t attention_pairs = 0;  // pairs of generated-row queries
  std::uint64_t prefix_pairs = 0;     // pairs of conditioning-row queries
  std::uint64_t entries_written = 0;
  std::uint64_t max_keys_read = 0;

  // Key and value scalars touched: reads x layers x 2 x width.
  std::uint64_t kv_scalar_reads() const { return kv_entry_reads * layers * 2 * width; }
  void absorb(const AttentionStats& s);
};

// Per-stack counters sampled after prefill (index 0) and after every emitted
// token (index k).
class TrafficLedger {
 public:
  std::vector<StackCounters> stacks;
  std::uint64_t tokens_emitted = 0;
  std::vector<std::vector<StackCounters>> history;

  const StackCounters& stack(const std::string& name) const;
  std::uint64_t global_entries() const;
  std::uint64_t global_entries_peak() const;  // max over snapshots
  std::uint64_t global_reads() const;
  std::uint64_t local_reads() const;
  std::uint64_t attention_pairs() const;
  // Reads of one stack between consecutive snapshots k-1 and k, k >= 1.
  std::vector<std::uint64_t> reads_per_token(const std::string& name) const;

  std::string to_json() const;
};

class PhotonSession {
 public:
  PhotonSession(const PhotonModel& model, SamplingConfig sampling = {}, std::size_t max_context = 0);

  // Fresh sessions only. Complete top-level chunks run as one batched pass;
  // the ragged tail is committed token by token.
  void prefill(std::span<const TokenId> prompt);
  // Appends a token: encoders absorb every chunk it completes.
  void commit(TokenId token);
  // Distribution over the token at position committed().size().
  std::vector<real> next_logits();
  std::vector<TokenId> generate(std::size_t n, const std::function<void(TokenId)>& on_token = {});

  const std::vector<TokenId>& committed() const { return tokens_; }
  std::size_t encoder_entries(std::size_t l) const { return enc_cache_.at(l - 1).length(); }
  std::size_t local_cache_peak(std::size_t l) const { return local_peak_.at(l - 1); }
  // Current counters plus the snapshot history.
  TrafficLedger ledger() const;
  // Throws ContractError if the cache-size invariants do not hold.
  void check_invariants() const;

 private:
  using Row = std::vector<real>;
  void ensure_reconstructed(std::size_t k, std::size_t u);
  void decoder_step(std::size_t l);
  std::vector<StackCounters> counters() const;
  void snapshot();

  const PhotonModel& model_;
  const HierarchyConfig& cfg_;
  SamplingConfig sampling_;
  std::mt19937_64 rng_;
  std::size_t max_context_;
  std::vector<TokenId> tokens_;
  std::vector<KVCache> enc_cache_;               // index l-1
  std::vector<AttentionStats> enc_stats_;        // index l-1
  std::vector<std::vector<Row>> pending_;        // chunker input buffer of level l, index l-1
  std::vector<std::vector<Row>> contextual_;     // X^(l), index l (0 unused)
  std::vector<std::vector<Row>> reconstructed_;  // X-hat^(k), index k
  std::vector<std::optional<KVCache>> local_;    // active chunk cache of decoder l, index l-1
  std::vector<std::size_t> dec_done_;            // positions of X-hat^(l-1) produced, index l-1
  std::vector<AttentionStats> dec_stats_;        // index l-1
  std::vector<std::size_t> local_peak_;          // index l-1
  std::vector<std::vector<StackCounters>> history_;
  std::uint64_t emitted_ = 0;
};

class FlatSession {
 public:
  FlatSession(const FlatModel& model, SamplingConfig sampling = {}, std::size_t max_context = 0);

  // Feeds [BOS, t_1 .. t_{n-1}]: n cache entries.
  void prefill(std::span<const TokenId> prompt);
  void commit(TokenId token);
  // Feeds the last committed token if needed and returns its output row.
  std::vector<real> next_logits();
  std::vector<TokenId> generate(std::size_t n, const std::function<void(TokenId)>& on_token = {});

  const std::vector<TokenId>& committed() const { return tokens_; }
  std::size_t cache_entries() const { return cache_.length(); }
  TrafficLedger ledger() const;

 private:
  std::vector<StackCounters> counters() const;
  void snapshot();

  const FlatModel& model_;
  SamplingConfig sampling_;
  std::mt19937_64 rng_;
  std::size_t max_context_;
  std::vector<TokenId> tokens_;
  KVCache cache_;
  AttentionStats stats_;
  std::size_t fed_ = 0;
  std::vector<real> last_logits_;
  std::vector<std::vector<StackCounters>> history_;
  std::uint64_t emitted_ = 0;
};

// Greedy argmax chain of repeated full forwards on the growing sequence,
// right-padded to the model's sequence multiple. Reference for the sessions.
std::vector<TokenId> reference_greedy(const LanguageModel& model, std::span<const TokenId> prompt, std::size_t n,
                                      const std::vector<TokenId>& banned = {});

}  // namespace photon
