#pragma once

// Closed-form attention and KV-cache cost counts for the hierarchy and the
// flat baseline, plus an integer replay of the session schedule that the
// instrumented engine must match exactly. All counts are per layer stream in
// cache-entry units (one key/value pair per position).

#include <cstdint>
#include <string>
#include <vector>

#include "photon/flat.h"
#include "photon/hierarchy.h"

namespace photon {

// Exact non-negative fraction in lowest terms.
class Rational {
 public:
  Rational(std::uint64_t num = 0, std::uint64_t den = 1);

  std::uint64_t num() const { return num_; }
  std::uint64_t den() const { return den_; }
  double value() const { return static_cast<double>(num_) / static_cast<double>(den_); }
  bool is_integer() const { return den_ == 1; }
  std::string str() const;  // "n" or "n/d"

  friend Rational operator+(const Rational& a, const Rational& b);
  friend Rational operator*(const Rational& a, const Rational& b);
  friend Rational operator/(const Rational& a, const Rational& b);
  friend bool operator==(const Rational& a, const Rational& b) { return a.num_ == b.num_ && a.den_ == b.den_; }
  friend bool operator<(const Rational& a, const Rational& b);

 private:
  std::uint64_t num_;
  std::uint64_t den_;
};

struct LevelGeometry {
  std::size_t chunk = 1;
  std::size_t converter_rows = 0;
};
std::vector<LevelGeometry> geometry(const HierarchyConfig& cfg);
std::vector<LevelGeometry> geometry(const std::vector<std::size_t>& chunks, const std::vector<std::size_t>& rows);

struct PrefillCompute {
  std::vector<std::uint64_t> units;         // M_l
  std::vector<std::uint64_t> squared;       // M_l^2
  std::vector<std::uint64_t> causal_pairs;  // M_l (M_l + 1) / 2
  std::vector<std::uint64_t> local_pairs;   // M_l * sum_{j=1..C_l} (R_l + j)
  std::uint64_t global_squared = 0;
  std::uint64_t global_pairs = 0;
  std::uint64_t local_total = 0;
  std::uint64_t total_pairs = 0;
  std::uint64_t flat_squared = 0;  // T^2
  std::uint64_t flat_pairs = 0;    // T (T + 1) / 2
};
// T must be a multiple of the cumulative chunk size.
PrefillCompute prefill_compute(std::uint64_t t, const std::vector<LevelGeometry>& geo);

struct KvStorage {
  std::vector<std::uint64_t> global;  // floor(T / C_{<=l})
  std::uint64_t global_total = 0;
  std::vector<std::uint64_t> local_bound;  // R_l + C_l
  std::uint64_t local_total = 0;
  std::uint64_t flat = 0;  // T
};
KvStorage kv_storage(std::uint64_t t, const std::vector<LevelGeometry>& geo);

struct AmortizedReads {
  Rational global;  // sum_l T / C_{<=l}^2
  Rational local;   // sum_l (R_l + C_l) / C_{<=l-1}
  Rational flat;    // T
};
AmortizedReads amortized_reads(std::uint64_t t, const std::vector<LevelGeometry>& geo);

// One stack's replayed counters. Token arrays have one entry per generated
// token: the reads (or pairs) incurred while producing and committing it.
struct StackSchedule {
  std::string name;
  bool global = true;
  std::uint64_t prefill_reads = 0;
  std::uint64_t prefill_pairs = 0;
  std::uint64_t prefill_prefix_pairs = 0;
  std::uint64_t entries_after_prefill = 0;
  std::uint64_t entries_final = 0;
  std::uint64_t peak = 0;
  std::uint64_t max_keys_read = 0;
  std::vector<std::uint64_t> token_reads;
  std::vector<std::uint64_t> token_pairs;

  std::uint64_t total_reads() const;
  std::uint64_t total_pairs() const;
};

struct Schedule {
  std::vector<StackSchedule> stacks;
  std::uint64_t prompt = 0;
  std::uint64_t generated = 0;

  const StackSchedule& stack(const std::string& name) const;
  std::uint64_t global_decode_reads() const;
  std::uint64_t local_decode_reads() const;
  std::uint64_t global_entries_after_prefill() const;
  std::uint64_t global_entries_peak() const;
};

// Replays prefill(prompt) followed by `gen` greedy steps of the hierarchical
// session: encoders advance on chunk completion, local decoders lazily.
Schedule simulate_schedule(const std::vector<LevelGeometry>& geo, std::uint64_t prompt, std::uint64_t gen);
// Flat baseline: prefill stores `prompt` entries, step k reads prompt + k - 1.
Schedule simulate_flat_schedule(std::uint64_t prompt, std::uint64_t gen);

struct CostReport {
  std::string regime;
  std::uint64_t prompt = 0;
  std::uint64_t generated = 0;
  std::vector<LevelGeometry> geo;
  std::uint64_t prefill_tokens = 0;  // largest chunk-aligned prefix of the prompt
  PrefillCompute prefill;
  KvStorage kv;
  AmortizedReads amortized;
  Schedule schedule;
  Schedule flat_schedule;
  std::uint64_t bytes_per_scalar = 2;
  std::uint64_t photon_bytes_per_entry = 0;  // sum over global stacks of layers x 2 x width x bytes
  std::uint64_t flat_bytes_per_entry = 0;

  Rational decode_global_reads_per_token() const;
  Rational flat_decode_reads_per_token() const;
  // Generated tokens per peak global cache entry.
  Rational tpm_proxy() const;
  Rational flat_tpm_proxy() const;

  std::string to_json() const;
  static std::string csv_header();
  std::string csv_row() const;
};

// Model widths only feed the byte multipliers; `flat` may be null.
CostReport build_cost_report(const std::string& regime, const HierarchyConfig& cfg, const FlatConfig* flat,
                             std::uint64_t prompt, std::uint64_t gen, std::uint64_t bytes_per_scalar = 2);

}  // namespace photon
