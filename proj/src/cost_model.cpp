#include "photon/cost_model.h"

#include <algorithm>
#include <json.hpp>
#include <numeric>
#include <sstream>

namespace photon {

Rational::Rational(std::uint64_t num, std::uint64_t den) {
  if (den == 0) throw ContractError("rational: zero denominator");
  const std::uint64_t g = std::gcd(num, den);
  num_ = num / g;
  den_ = den / g;
}

std::string Rational::str() const {
  return den_ == 1 ? std::to_string(num_) : std::to_string(num_) + "/" + std::to_string(den_);
}

Rational operator+(const Rational& a, const Rational& b) {
  const std::uint64_t l = std::lcm(a.den_, b.den_);
  return Rational(a.num_ * (l / a.den_) + b.num_ * (l / b.den_), l);
}

Rational operator*(const Rational& a, const Rational& b) {
  const std::uint64_t g1 = std::gcd(a.num_, b.den_);
  const std::uint64_t g2 = std::gcd(b.num_, a.den_);
  return Rational((a.num_ / g1) * (b.num_ / g2), (a.den_ / g2) * (b.den_ / g1));
}

Rational operator/(const Rational& a, const Rational& b) {
  if (b.num_ == 0) throw ContractError("rational: division by zero");
  return a * Rational(b.den_, b.num_);
}

bool operator<(const Rational& a, const Rational& b) {
  return static_cast<unsigned __int128>(a.num_) * b.den_ < static_cast<unsigned __int128>(b.num_) * a.den_;
}

std::vector<LevelGeometry> geometry(const HierarchyConfig& cfg) {
  std::vector<LevelGeometry> g;
  for (const auto& lv : cfg.levels) g.push_back({lv.chunk, lv.converter_rows});
  return g;
}

std::vector<LevelGeometry> geometry(const std::vector<std::size_t>& chunks, const std::vector<std::size_t>& rows) {
  if (chunks.size() != rows.size()) throw ContractError("geometry: chunk and converter lists differ in length");
  std::vector<LevelGeometry> g;
  for (std::size_t i = 0; i < chunks.size(); ++i) g.push_back({chunks[i], rows[i]});
  return g;
}

namespace {

void check_geometry(const std::vector<LevelGeometry>& geo) {
  if (geo.empty()) throw ContractError("cost model: need at least one level");
  for (const auto& g : geo) {
    if (g.chunk == 0) throw ContractError("cost model: chunk sizes must be positive");
  }
}

std::vector<std::uint64_t> cumulative(const std::vector<LevelGeometry>& geo) {
  std::vector<std::uint64_t> c(geo.size() + 1, 1);
  for (std::size_t l = 1; l <= geo.size(); ++l) c[l] = c[l - 1] * geo[l - 1].chunk;
  return c;
}

}  // namespace

PrefillCompute prefill_compute(std::uint64_t t, const std::vector<LevelGeometry>& geo) {
  check_geometry(geo);
  const auto cum = cumulative(geo);
  if (t % cum.back() != 0) {
    throw DimensionError("prefill_compute: T=" + std::to_string(t) + " is not a multiple of " + std::to_string(cum.back()));
  }
  PrefillCompute p;
  for (std::size_t l = 1; l <= geo.size(); ++l) {
    const std::uint64_t m = t / cum[l];
    const std::uint64_t c = geo[l - 1].chunk;
    const std::uint64_t r = geo[l - 1].converter_rows;
    p.units.push_back(m);
    p.squared.push_back(m * m);
    p.causal_pairs.push_back(m * (m + 1) / 2);
    p.local_pairs.push_back(m * (c * r + c * (c + 1) / 2));
    p.global_squared += m * m;
    p.global_pairs += m * (m + 1) / 2;
    p.local_total += p.local_pairs.back();
  }
  p.total_pairs = p.global_pairs + p.local_total;
  p.flat_squared = t * t;
  p.flat_pairs = t * (t + 1) / 2;
  return p;
}

KvStorage kv_storage(std::uint64_t t, const std::vector<LevelGeometry>& geo) {
  check_geometry(geo);
  const auto cum = cumulative(geo);
  KvStorage k;
  for (std::size_t l = 1; l <= geo.size(); ++l) {
    k.global.push_back(t / cum[l]);
    k.global_total += t / cum[l];
    k.local_bound.push_back(geo[l - 1].converter_rows + geo[l - 1].chunk);
    k.local_total += k.local_bound.back();
  }
  k.flat = t;
  return k;
}

AmortizedReads amortized_reads(std::uint64_t t, const std::vector<LevelGeometry>& geo) {
  check_geometry(geo);
  const auto cum = cumulative(geo);
  AmortizedReads a;
  for (std::size_t l = 1; l <= geo.size(); ++l) {
    a.global = a.global + Rational(t, cum[l] * cum[l]);
    a.local = a.local + Rational(geo[l - 1].converter_rows + geo[l - 1].chunk, cum[l - 1]);
  }
  a.flat = Rational(t);
  return a;
}

std::uint64_t StackSchedule::total_reads() const {
  return prefill_reads + std::accumulate(token_reads.begin(), token_reads.end(), std::uint64_t{0});
}

std::uint64_t StackSchedule::total_pairs() const {
  return prefill_pairs + std::accumulate(token_pairs.begin(), token_pairs.end(), std::uint64_t{0});
}

const StackSchedule& Schedule::stack(const std::string& name) const {
  for (const auto& s : stacks) {
    if (s.name == name) return s;
  }
  throw ContractError("schedule: no stack named '" + name + "'");
}

std::uint64_t Schedule::global_decode_reads() const {
  std::uint64_t n = 0;
  for (const auto& s : stacks) {
    if (s.global) n += std::accumulate(s.token_reads.begin(), s.token_reads.end(), std::uint64_t{0});
  }
  return n;
}

std::uint64_t Schedule::local_decode_reads() const {
  std::uint64_t n = 0;
  for (const auto& s : stacks) {
    if (!s.global) n += std::accumulate(s.token_reads.begin(), s.token_reads.end(), std::uint64_t{0});
  }
  return n;
}

std::uint64_t Schedule::global_entries_after_prefill() const {
  std::uint64_t n = 0;
  for (const auto& s : stacks) n += s.global ? s.entries_after_prefill : 0;
  return n;
}

std::uint64_t Schedule::global_entries_peak() const {
  std::uint64_t n = 0;
  for (const auto& s : stacks) n += s.global ? s.entries_final : 0;
  return n;
}

namespace {

// Counter set for one replayed stack.
struct Tally {
  std::uint64_t reads = 0;
  std::uint64_t pairs = 0;
  std::uint64_t prefix_pairs = 0;
  std::uint64_t max_keys = 0;

  // s new rows appended after `len` cached rows; positions below `prefix`
  // are conditioning rows.
  void attend(std::uint64_t len, std::uint64_t s, std::uint64_t prefix) {
    for (std::uint64_t i = 0; i < s; ++i) {
      const std::uint64_t pos = len + i;
      reads += pos;
      max_keys = std::max(max_keys, pos);
      if (pos < prefix) {
        prefix_pairs += pos + 1;
      } else {
        pairs += pos + 1;
      }
    }
  }
};

class ScheduleReplay {
 public:
  explicit ScheduleReplay(const std::vector<LevelGeometry>& geo)
      : geo_(geo), n_levels_(geo.size()), enc_(n_levels_), dec_(n_levels_), enc_len_(n_levels_, 0),
        pending_(n_levels_, 0), dec_done_(n_levels_, 0), local_len_(n_levels_, 0), local_peak_(n_levels_, 0) {}

  void prefill(std::uint64_t n) {
    std::uint64_t span = 1;
    for (const auto& g : geo_) span *= g.chunk;
    const std::uint64_t full = n / span * span;
    if (full > 0) {
      std::uint64_t m = full;
      for (std::size_t l = 0; l < n_levels_; ++l) {
        m /= geo_[l].chunk;
        enc_[l].attend(0, m, 0);
        enc_len_[l] = m;
      }
      m = full;
      for (std::size_t l = 0; l < n_levels_; ++l) {
        const std::uint64_t c = geo_[l].chunk;
        const std::uint64_t r = geo_[l].converter_rows;
        for (std::uint64_t g = 0; g < m / c; ++g) dec_[l].attend(0, r + c, r);
        dec_done_[l] = m;
        local_peak_[l] = r + c;
        m /= c;
      }
      tokens_ = full;
    }
    for (std::uint64_t i = full; i < n; ++i) commit();
  }

  void commit() {
    ++tokens_;
    ++pending_[0];
    for (std::size_t l = 0; l < n_levels_; ++l) {
      if (pending_[l] < geo_[l].chunk) break;
      enc_[l].attend(enc_len_[l], 1, 0);
      ++enc_len_[l];
      pending_[l] = 0;
      if (l + 1 < n_levels_) ++pending_[l + 1];
    }
  }

  void next_logits() { ensure(0, tokens_); }

  std::vector<const Tally*> tallies() const {
    std::vector<const Tally*> v;
    for (const auto& t : enc_) v.push_back(&t);
    for (const auto& t : dec_) v.push_back(&t);
    return v;
  }

  std::uint64_t enc_len(std::size_t l) const { return enc_len_[l]; }
  std::uint64_t local_peak(std::size_t l) const { return local_peak_[l]; }

 private:
  // Reconstruction position u of level k (0-based), produced by decoder k+1.
  void ensure(std::size_t k, std::uint64_t u) {
    while (dec_done_[k] <= u) step(k);
  }

  void step(std::size_t d) {
    const std::uint64_t c = geo_[d].chunk;
    const std::uint64_t r = geo_[d].converter_rows;
    const std::uint64_t p = dec_done_[d];
    const std::uint64_t g = p / c;
    if (p % c == 0) {
      if (g > 0 && d + 1 < n_levels_) ensure(d + 1, g - 1);
      local_len_[d] = 0;
      dec_[d].attend(0, r, r);
      local_len_[d] = r;
    }
    dec_[d].attend(local_len_[d], 1, r);
    ++local_len_[d];
    local_peak_[d] = std::max(local_peak_[d], local_len_[d]);
    ++dec_done_[d];
  }

  std::vector<LevelGeometry> geo_;
  std::size_t n_levels_;
  std::vector<Tally> enc_, dec_;
  std::vector<std::uint64_t> enc_len_, pending_, dec_done_, local_len_, local_peak_;
  std::uint64_t tokens_ = 0;
};

}  // namespace

Schedule simulate_schedule(const std::vector<LevelGeometry>& geo, std::uint64_t prompt, std::uint64_t gen) {
  check_geometry(geo);
  const std::size_t big_l = geo.size();
  ScheduleReplay replay(geo);
  replay.prefill(prompt);
  Schedule s;
  s.prompt = prompt;
  s.generated = gen;
  for (int side = 0; side < 2; ++side) {
    for (std::size_t l = 1; l <= big_l; ++l) {
      StackSchedule st;
      st.name = (side == 0 ? "enc." : "dec.") + std::to_string(l);
      st.global = side == 0;
      s.stacks.push_back(std::move(st));
    }
  }
  auto read_all = [&](std::vector<std::uint64_t>& reads, std::vector<std::uint64_t>& pairs) {
    const auto t = replay.tallies();
    reads.resize(t.size());
    pairs.resize(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
      reads[i] = t[i]->reads;
      pairs[i] = t[i]->pairs;
    }
  };
  std::vector<std::uint64_t> reads, pairs;
  read_all(reads, pairs);
  const auto t0 = replay.tallies();
  for (std::size_t i = 0; i < s.stacks.size(); ++i) {
    s.stacks[i].prefill_reads = reads[i];
    s.stacks[i].prefill_pairs = pairs[i];
    s.stacks[i].prefill_prefix_pairs = t0[i]->prefix_pairs;
  }
  for (std::size_t l = 0; l < big_l; ++l) s.stacks[l].entries_after_prefill = replay.enc_len(l);
  for (std::uint64_t k = 0; k < gen; ++k) {
    replay.next_logits();
    replay.commit();
    std::vector<std::uint64_t> r2, p2;
    read_all(r2, p2);
    for (std::size_t i = 0; i < s.stacks.size(); ++i) {
      s.stacks[i].token_reads.push_back(r2[i] - reads[i]);
      s.stacks[i].token_pairs.push_back(p2[i] - pairs[i]);
    }
    reads = std::move(r2);
    pairs = std::move(p2);
  }
  const auto t1 = replay.tallies();
  for (std::size_t i = 0; i < s.stacks.size(); ++i) s.stacks[i].max_keys_read = t1[i]->max_keys;
  for (std::size_t l = 0; l < big_l; ++l) {
    s.stacks[l].entries_final = replay.enc_len(l);
    s.stacks[l].peak = replay.enc_len(l);
    s.stacks[big_l + l].peak = replay.local_peak(l);
  }
  return s;
}

Schedule simulate_flat_schedule(std::uint64_t prompt, std::uint64_t gen) {
  Schedule s;
  s.prompt = prompt;
  s.generated = gen;
  StackSchedule f;
  f.name = "flat";
  f.global = true;
  Tally t;
  t.attend(0, prompt, 0);
  f.prefill_reads = t.reads;
  f.prefill_pairs = t.pairs;
  f.entries_after_prefill = prompt;
  std::uint64_t len = prompt;
  for (std::uint64_t k = 0; k < gen; ++k) {
    const auto before_r = t.reads;
    const auto before_p = t.pairs;
    t.attend(len, 1, 0);
    ++len;
    f.token_reads.push_back(t.reads - before_r);
    f.token_pairs.push_back(t.pairs - before_p);
  }
  f.entries_final = len;
  f.peak = len;
  f.max_keys_read = t.max_keys;
  s.stacks.push_back(f);
  return s;
}

Rational CostReport::decode_global_reads_per_token() const {
  if (generated == 0) return Rational(0);
  return Rational(schedule.global_decode_reads(), generated);
}

Rational CostReport::flat_decode_reads_per_token() const {
  if (generated == 0) return Rational(0);
  return Rational(flat_schedule.global_decode_reads(), generated);
}

Rational CostReport::tpm_proxy() const {
  const auto peak = schedule.global_entries_peak();
  return peak == 0 ? Rational(0) : Rational(generated, peak);
}

Rational CostReport::flat_tpm_proxy() const {
  const auto peak = flat_schedule.global_entries_peak();
  return peak == 0 ? Rational(0) : Rational(generated, peak);
}

CostReport build_cost_report(const std::string& regime, const HierarchyConfig& cfg, const FlatConfig* flat,
                             std::uint64_t prompt, std::uint64_t gen, std::uint64_t bytes_per_scalar) {
  CostReport r;
  r.regime = regime;
  r.prompt = prompt;
  r.generated = gen;
  r.geo = geometry(cfg);
  const std::uint64_t span = cfg.sequence_multiple();
  r.prefill_tokens = prompt / span * span;
  r.prefill = prefill_compute(r.prefill_tokens, r.geo);
  r.kv = kv_storage(prompt, r.geo);
  r.amortized = amortized_reads(prompt, r.geo);
  r.schedule = simulate_schedule(r.geo, prompt, gen);
  r.flat_schedule = simulate_flat_schedule(prompt, gen);
  r.bytes_per_scalar = bytes_per_scalar;
  for (std::size_t l = 1; l <= cfg.num_levels(); ++l) {
    r.photon_bytes_per_entry += cfg.level(l).encoder.n_layers * 2 * cfg.dim(l) * bytes_per_scalar;
  }
  if (flat) r.flat_bytes_per_entry = flat->n_layers * 2 * flat->dim * bytes_per_scalar;
  return r;
}

namespace {

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "x" : "") + std::to_string(v[i]);
  return s;
}

}  // namespace

std::string CostReport::to_json() const {
  using nlohmann::json;
  std::vector<std::size_t> chunks, rows;
  for (const auto& g : geo) {
    chunks.push_back(g.chunk);
    rows.push_back(g.converter_rows);
  }
  json j;
  j["regime"] = regime;
  j["prompt"] = prompt;
  j["generated"] = generated;
  j["chunks"] = chunks;
  j["converter_rows"] = rows;
  j["prefill"] = {{"tokens", prefill_tokens},
                  {"units", prefill.units},
                  {"squared", prefill.squared},
                  {"causal_pairs", prefill.causal_pairs},
                  {"local_pairs", prefill.local_pairs},
                  {"global_pairs", prefill.global_pairs},
                  {"local_total", prefill.local_total},
                  {"total_pairs", prefill.total_pairs},
                  {"flat_pairs", prefill.flat_pairs},
                  {"flat_squared", prefill.flat_squared}};
  j["kv_storage"] = {{"global", kv.global},
                     {"global_total", kv.global_total},
                     {"local_bound", kv.local_bound},
                     {"local_total", kv.local_total},
                     {"flat", kv.flat}};
  j["amortized_reads"] = {{"global", amortized.global.str()},
                          {"local", amortized.local.str()},
                          {"flat", amortized.flat.str()}};
  json stacks = json::object();
  for (const auto* sched : {&schedule, &flat_schedule}) {
    for (const auto& s : sched->stacks) {
      stacks[s.name] = {{"global", s.global},
                        {"prefill_reads", s.prefill_reads},
                        {"prefill_pairs", s.prefill_pairs},
                        {"prefill_prefix_pairs", s.prefill_prefix_pairs},
                        {"entries_after_prefill", s.entries_after_prefill},
                        {"entries_final", s.entries_final},
                        {"peak", s.peak},
                        {"max_keys_read", s.max_keys_read},
                        {"token_reads", s.token_reads}};
    }
  }
  j["schedule"] = {{"stacks", stacks},
                   {"global_decode_reads", schedule.global_decode_reads()},
                   {"local_decode_reads", schedule.local_decode_reads()},
                   {"flat_decode_reads", flat_schedule.global_decode_reads()},
                   {"global_reads_per_token", decode_global_reads_per_token().str()},
                   {"flat_reads_per_token", flat_decode_reads_per_token().str()},
                   {"global_entries_after_prefill", schedule.global_entries_after_prefill()},
                   {"global_entries_peak", schedule.global_entries_peak()},
                   {"flat_entries_after_prefill", flat_schedule.global_entries_after_prefill()},
                   {"flat_entries_peak", flat_schedule.global_entries_peak()}};
  j["bytes"] = {{"bytes_per_scalar", bytes_per_scalar},
                {"photon_bytes_per_entry", photon_bytes_per_entry},
                {"flat_bytes_per_entry", flat_bytes_per_entry}};
  j["tpm_proxy"] = {{"photon", tpm_proxy().str()}, {"flat", flat_tpm_proxy().str()}};
  return j.dump(2);
}

std::string CostReport::csv_header() {
  return "regime,prompt,generated,chunks,converter_rows,prefill_tokens,prefill_global_pairs,prefill_local_pairs,"
         "prefill_total_pairs,flat_prefill_pairs,global_kv_entries,flat_kv_entries,amortized_global_reads,"
         "amortized_local_reads,flat_amortized_reads,global_entries_after_prefill,flat_entries_after_prefill,"
         "global_entries_peak,flat_entries_peak,decode_global_reads,decode_local_reads,flat_decode_reads,"
         "global_reads_per_token,flat_reads_per_token,tpm_proxy,flat_tpm_proxy,photon_bytes_per_entry,"
         "flat_bytes_per_entry";
}

std::string CostReport::csv_row() const {
  std::vector<std::size_t> chunks, rows;
  for (const auto& g : geo) {
    chunks.push_back(g.chunk);
    rows.push_back(g.converter_rows);
  }
  std::ostringstream o;
  o << regime << ',' << prompt << ',' << generated << ',' << join(chunks) << ',' << join(rows) << ','
    << prefill_tokens << ',' << prefill.global_pairs << ',' << prefill.local_total << ',' << prefill.total_pairs << ','
    << prefill.flat_pairs << ',' << kv.global_total << ',' << kv.flat << ',' << amortized.global.str() << ','
    << amortized.local.str() << ',' << amortized.flat.str() << ',' << schedule.global_entries_after_prefill() << ','
    << flat_schedule.global_entries_after_prefill() << ',' << schedule.global_entries_peak() << ','
    << flat_schedule.global_entries_peak() << ',' << schedule.global_decode_reads() << ','
    << schedule.local_decode_reads() << ',' << flat_schedule.global_decode_reads() << ','
    << decode_global_reads_per_token().str() << ',' << flat_decode_reads_per_token().str() << ','
    << tpm_proxy().str() << ',' << flat_tpm_proxy().str() << ',' << photon_bytes_per_entry << ','
    << flat_bytes_per_entry;
  return o.str();
}

}  // namespace photon
