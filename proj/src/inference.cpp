#include "photon/inference.h"

#include <algorithm>
#include <cmath>
#include <json.hpp>

namespace photon {

TokenId sample_token(std::span<const real> logits, const SamplingConfig& cfg, std::mt19937_64& rng) {
  if (logits.empty()) throw ContractError("sample_token: empty logits");
  std::vector<bool> allowed(logits.size(), true);
  for (TokenId b : cfg.banned) {
    if (b < allowed.size()) allowed[b] = false;
  }
  real best = -INFINITY;
  std::size_t arg = logits.size();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!std::isfinite(logits[i])) throw NumericError("sample_token: non-finite logit at id " + std::to_string(i));
    if (allowed[i] && (arg == logits.size() || logits[i] > best)) {
      best = logits[i];
      arg = i;
    }
  }
  if (arg == logits.size()) throw ContractError("sample_token: every id is banned");
  if (cfg.temperature <= 0) return static_cast<TokenId>(arg);
  std::vector<real> cum(logits.size(), 0);
  real acc = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (allowed[i]) acc += std::exp((logits[i] - best) / cfg.temperature);
    cum[i] = acc;
  }
  // 53 random bits mapped to [0, acc); avoids implementation-defined distributions.
  const real u = static_cast<real>(static_cast<double>(rng() >> 11) * 0x1.0p-53) * acc;
  for (std::size_t i = 0; i < cum.size(); ++i) {
    if (allowed[i] && u < cum[i]) return static_cast<TokenId>(i);
  }
  return static_cast<TokenId>(arg);
}

void StackCounters::absorb(const AttentionStats& s) {
  kv_entry_reads = s.entry_reads;
  attention_pairs = s.output_pairs;
  prefix_pairs = s.prefix_pairs;
  entries_written = s.entries_written;
  max_keys_read = s.max_keys_read;
}

const StackCounters& TrafficLedger::stack(const std::string& name) const {
  for (const auto& s : stacks) {
    if (s.name == name) return s;
  }
  throw ContractError("ledger: no stack named '" + name + "'");
}

namespace {

std::uint64_t sum_global_entries(const std::vector<StackCounters>& v) {
  std::uint64_t n = 0;
  for (const auto& s : v) n += s.global ? s.kv_entries : 0;
  return n;
}

}  // namespace

std::uint64_t TrafficLedger::global_entries() const { return sum_global_entries(stacks); }

std::uint64_t TrafficLedger::global_entries_peak() const {
  std::uint64_t peak = global_entries();
  for (const auto& snap : history) peak = std::max(peak, sum_global_entries(snap));
  return peak;
}

std::uint64_t TrafficLedger::global_reads() const {
  std::uint64_t n = 0;
  for (const auto& s : stacks) n += s.global ? s.kv_entry_reads : 0;
  return n;
}

std::uint64_t TrafficLedger::local_reads() const {
  std::uint64_t n = 0;
  for (const auto& s : stacks) n += s.global ? 0 : s.kv_entry_reads;
  return n;
}

std::uint64_t TrafficLedger::attention_pairs() const {
  std::uint64_t n = 0;
  for (const auto& s : stacks) n += s.attention_pairs;
  return n;
}

std::vector<std::uint64_t> TrafficLedger::reads_per_token(const std::string& name) const {
  std::size_t idx = stacks.size();
  for (std::size_t i = 0; i < stacks.size(); ++i) {
    if (stacks[i].name == name) idx = i;
  }
  if (idx == stacks.size()) throw ContractError("ledger: no stack named '" + name + "'");
  std::vector<std::uint64_t> out;
  for (std::size_t k = 1; k < history.size(); ++k) {
    out.push_back(history[k][idx].kv_entry_reads - history[k - 1][idx].kv_entry_reads);
  }
  return out;
}

std::string TrafficLedger::to_json() const {
  using nlohmann::json;
  const auto& snaps = history.empty() ? std::vector<std::vector<StackCounters>>{stacks} : history;
  json j;
  j["tokens_emitted"] = tokens_emitted;
  j["snapshots"] = snaps.size();
  json st = json::object();
  std::uint64_t scalar_reads = 0;
  for (std::size_t i = 0; i < stacks.size(); ++i) {
    const auto& s = stacks[i];
    json o;
    o["global"] = s.global;
    o["layers"] = s.layers;
    o["width"] = s.width;
    o["max_keys_read"] = s.max_keys_read;
    for (const char* key : {"kv_entries", "kv_entries_peak", "kv_entry_reads", "kv_scalar_reads", "attention_pairs",
                            "prefix_pairs", "entries_written"}) {
      o[key] = json::array();
    }
    for (const auto& snap : snaps) {
      const auto& c = snap[i];
      o["kv_entries"].push_back(c.kv_entries);
      o["kv_entries_peak"].push_back(c.kv_entries_peak);
      o["kv_entry_reads"].push_back(c.kv_entry_reads);
      o["kv_scalar_reads"].push_back(c.kv_scalar_reads());
      o["attention_pairs"].push_back(c.attention_pairs);
      o["prefix_pairs"].push_back(c.prefix_pairs);
      o["entries_written"].push_back(c.entries_written);
    }
    st[s.name] = std::move(o);
    scalar_reads += s.kv_scalar_reads();
  }
  j["stacks"] = std::move(st);
  j["totals"] = {{"global_kv_entries", global_entries()},
                 {"global_kv_entries_peak", global_entries_peak()},
                 {"global_kv_entry_reads", global_reads()},
                 {"local_kv_entry_reads", local_reads()},
                 {"kv_scalar_reads", scalar_reads},
                 {"attention_pairs", attention_pairs()}};
  return j.dump(2);
}

// ---------------------------------------------------------------------------

namespace {

Tensor stack_rows(const std::vector<std::vector<real>>& rows, std::size_t begin, std::size_t count) {
  const std::size_t w = rows.at(begin).size();
  std::vector<real> data;
  data.reserve(count * w);
  for (std::size_t i = begin; i < begin + count; ++i) data.insert(data.end(), rows[i].begin(), rows[i].end());
  return Tensor({count, w}, std::move(data));
}

Tensor one_row(const std::vector<real>& r) { return Tensor({1, r.size()}, r); }

std::vector<std::vector<real>> split_rows(const Tensor& t) {
  const std::size_t w = t.shape().back();
  std::vector<std::vector<real>> out;
  for (std::size_t r = 0; r < t.numel() / w; ++r) out.push_back(t.row(r));
  return out;
}

}  // namespace

PhotonSession::PhotonSession(const PhotonModel& model, SamplingConfig sampling, std::size_t max_context)
    : model_(model), cfg_(model.config()), sampling_(std::move(sampling)), rng_(sampling_.seed),
      max_context_(max_context) {
  const std::size_t big_l = cfg_.num_levels();
  for (std::size_t l = 1; l <= big_l; ++l) {
    enc_cache_.emplace_back(cfg_.level(l).encoder.n_layers, cfg_.dim(l));
  }
  enc_stats_.resize(big_l);
  pending_.resize(big_l);
  contextual_.resize(big_l + 1);
  reconstructed_.resize(big_l);
  local_.resize(big_l);
  dec_done_.assign(big_l, 0);
  dec_stats_.resize(big_l);
  local_peak_.assign(big_l, 0);
}

void PhotonSession::prefill(std::span<const TokenId> prompt) {
  if (!tokens_.empty() || !history_.empty()) throw ContractError("prefill: session already holds tokens");
  if (max_context_ && prompt.size() > max_context_) {
    throw ContractError("prefill: prompt of " + std::to_string(prompt.size()) + " tokens exceeds max context " +
                        std::to_string(max_context_));
  }
  const std::size_t big_l = cfg_.num_levels();
  const std::size_t span = cfg_.sequence_multiple();
  const std::size_t n_full = prompt.size() / span * span;
  if (n_full > 0) {
    ad::Tape tape(false);
    const auto head = prompt.first(n_full);
    tokens_.assign(head.begin(), head.end());
    std::vector<ad::Var> x(big_l + 1);
    x[0] = model_.embed_tokens(tape, head);
    for (std::size_t l = 1; l <= big_l; ++l) {
      auto a = model_.chunker_forward(tape, l, x[l - 1]);
      x[l] = model_.context_encoder_forward(tape, l, a, &enc_cache_[l - 1], &enc_stats_[l - 1]);
      contextual_[l] = split_rows(x[l].value());
    }
    ad::Var source = x[big_l];
    for (std::size_t l = big_l; l >= 1; --l) {
      auto cond = model_.decoder_conditioning(tape, l, source);
      auto teacher = model_.decoder_teacher(tape, l, head, x[l - 1]);
      auto out = model_.local_decoder_forward(tape, l, cond, teacher, &dec_stats_[l - 1]);
      reconstructed_[l - 1] = split_rows(out.value());
      dec_done_[l - 1] = reconstructed_[l - 1].size();
      local_peak_[l - 1] = cfg_.level(l).converter_rows + cfg_.level(l).chunk;
      source = out;
    }
    check_invariants();
  }
  for (std::size_t i = n_full; i < prompt.size(); ++i) commit(prompt[i]);
  snapshot();
}

void PhotonSession::commit(TokenId token) {
  if (max_context_ && tokens_.size() >= max_context_) {
    throw ContractError("commit: max context of " + std::to_string(max_context_) + " tokens reached");
  }
  if (token >= cfg_.vocab_size) throw ContractError("commit: token " + std::to_string(token) + " outside the vocabulary");
  tokens_.push_back(token);
  ad::Tape tape(false);
  const TokenId ids[1] = {token};
  pending_[0].push_back(model_.embed_tokens(tape, ids).value().row(0));
  for (std::size_t l = 1; l <= cfg_.num_levels(); ++l) {
    auto& buf = pending_[l - 1];
    if (buf.size() < cfg_.level(l).chunk) break;
    auto a = model_.chunker_forward(tape, l, ad::constant(stack_rows(buf, 0, buf.size())));
    auto x = model_.context_encoder_forward(tape, l, a, &enc_cache_[l - 1], &enc_stats_[l - 1]);
    buf.clear();
    auto row = x.value().row(0);
    contextual_[l].push_back(row);
    if (l < cfg_.num_levels()) pending_[l].push_back(std::move(row));
  }
  check_invariants();
}

void PhotonSession::ensure_reconstructed(std::size_t k, std::size_t u) {
  while (dec_done_[k] <= u) decoder_step(k + 1);
}

void PhotonSession::decoder_step(std::size_t l) {
  const auto& lv = cfg_.level(l);
  const std::size_t c = lv.chunk;
  const std::size_t r = lv.converter_rows;
  const std::size_t p = dec_done_[l - 1];
  const std::size_t g = p / c;
  const std::size_t j = p % c;
  const auto& stack = model_.decoder_stack(l);
  ad::Tape tape(false);
  if (j == 0) {
    std::vector<real> latent;
    if (g == 0) {
      latent = model_.start_latent(l).value().row(0);
    } else if (l == cfg_.num_levels()) {
      if (contextual_[l].size() < g) throw ContractError("decoder: top-level latent not committed yet");
      latent = contextual_[l][g - 1];
    } else {
      ensure_reconstructed(l, g - 1);
      latent = reconstructed_[l][g - 1];
    }
    local_[l - 1].emplace(lv.decoder.n_layers, cfg_.decoder_width(l), r + c);
    if (r > 0) {
      auto cond = model_.converter_forward(tape, l, ad::constant(one_row(latent)));
      stack.forward(tape, cond, &*local_[l - 1], r, &dec_stats_[l - 1]);
    }
  }
  ad::Var teacher;
  if (l == 1) {
    if (tokens_.size() < p) throw ContractError("decoder: teacher token not committed yet");
    const TokenId ids[1] = {p == 0 ? cfg_.bos_id : tokens_[p - 1]};
    teacher = model_.embed_decoder_tokens(tape, ids);
  } else if (j == 0) {
    teacher = model_.begin_of_chunk(l);
  } else {
    if (contextual_[l - 1].size() < p) throw ContractError("decoder: teacher state not committed yet");
    teacher = ad::constant(one_row(contextual_[l - 1][p - 1]));
  }
  auto out = stack.forward(tape, teacher, &*local_[l - 1], r, &dec_stats_[l - 1]);
  reconstructed_[l - 1].push_back(out.value().row(0));
  ++dec_done_[l - 1];
  local_peak_[l - 1] = std::max(local_peak_[l - 1], local_[l - 1]->peak_length());
  if (j + 1 == c) local_[l - 1].reset();
}

std::vector<real> PhotonSession::next_logits() {
  const std::size_t n = tokens_.size();
  ensure_reconstructed(0, n);
  ad::Tape tape(false);
  auto lg = model_.project_logits(tape, ad::constant(one_row(reconstructed_[0][n])));
  return lg.value().vec();
}

std::vector<TokenId> PhotonSession::generate(std::size_t n, const std::function<void(TokenId)>& on_token) {
  if (history_.empty()) snapshot();
  std::vector<TokenId> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto lg = next_logits();
    const TokenId t = sample_token(lg, sampling_, rng_);
    commit(t);
    ++emitted_;
    snapshot();
    out.push_back(t);
    if (on_token) on_token(t);
  }
  return out;
}

std::vector<StackCounters> PhotonSession::counters() const {
  std::vector<StackCounters> v;
  for (std::size_t l = 1; l <= cfg_.num_levels(); ++l) {
    StackCounters e;
    e.name = "enc." + std::to_string(l);
    e.global = true;
    e.layers = cfg_.level(l).encoder.n_layers;
    e.width = cfg_.dim(l);
    e.kv_entries = enc_cache_[l - 1].length();
    e.kv_entries_peak = enc_cache_[l - 1].peak_length();
    e.absorb(enc_stats_[l - 1]);
    v.push_back(e);
  }
  for (std::size_t l = 1; l <= cfg_.num_levels(); ++l) {
    StackCounters d;
    d.name = "dec." + std::to_string(l);
    d.global = false;
    d.layers = cfg_.level(l).decoder.n_layers;
    d.width = cfg_.decoder_width(l);
    d.kv_entries = local_[l - 1] ? local_[l - 1]->length() : 0;
    d.kv_entries_peak = local_peak_[l - 1];
    d.absorb(dec_stats_[l - 1]);
    v.push_back(d);
  }
  return v;
}

void PhotonSession::snapshot() { history_.push_back(counters()); }

TrafficLedger PhotonSession::ledger() const {
  TrafficLedger t;
  t.stacks = counters();
  t.tokens_emitted = emitted_;
  t.history = history_;
  return t;
}

void PhotonSession::check_invariants() const {
  for (std::size_t l = 1; l <= cfg_.num_levels(); ++l) {
    const std::size_t want = tokens_.size() / cfg_.cumulative_chunk(l);
    if (enc_cache_[l - 1].length() != want) {
      throw ContractError("session: level " + std::to_string(l) + " encoder holds " +
                          std::to_string(enc_cache_[l - 1].length()) + " entries, expected " + std::to_string(want));
    }
    const std::size_t bound = cfg_.level(l).converter_rows + cfg_.level(l).chunk;
    if (local_peak_[l - 1] > bound) throw ContractError("session: local cache exceeded R + C");
  }
}

// ---------------------------------------------------------------------------

FlatSession::FlatSession(const FlatModel& model, SamplingConfig sampling, std::size_t max_context)
    : model_(model), sampling_(std::move(sampling)), rng_(sampling_.seed), max_context_(max_context),
      cache_(model.config().n_layers, model.config().dim) {}

void FlatSession::prefill(std::span<const TokenId> prompt) {
  if (!tokens_.empty() || !history_.empty()) throw ContractError("prefill: session already holds tokens");
  if (max_context_ && prompt.size() > max_context_) {
    throw ContractError("prefill: prompt of " + std::to_string(prompt.size()) + " tokens exceeds max context " +
                        std::to_string(max_context_));
  }
  tokens_.assign(prompt.begin(), prompt.end());
  if (!prompt.empty()) {
    std::vector<TokenId> inputs(prompt.size());
    inputs[0] = model_.config().bos_id;
    for (std::size_t i = 1; i < prompt.size(); ++i) inputs[i] = prompt[i - 1];
    ad::Tape tape(false);
    model_.step(tape, inputs, &cache_, &stats_);
    fed_ = prompt.size();
  }
  snapshot();
}

void FlatSession::commit(TokenId token) {
  if (max_context_ && tokens_.size() >= max_context_) {
    throw ContractError("commit: max context of " + std::to_string(max_context_) + " tokens reached");
  }
  if (token >= model_.config().vocab_size) throw ContractError("commit: token outside the vocabulary");
  tokens_.push_back(token);
}

std::vector<real> FlatSession::next_logits() {
  const std::size_t n = tokens_.size();
  while (fed_ <= n) {
    const TokenId ids[1] = {fed_ == 0 ? model_.config().bos_id : tokens_[fed_ - 1]};
    ad::Tape tape(false);
    last_logits_ = model_.step(tape, ids, &cache_, &stats_).value().vec();
    ++fed_;
  }
  return last_logits_;
}

std::vector<TokenId> FlatSession::generate(std::size_t n, const std::function<void(TokenId)>& on_token) {
  if (history_.empty()) snapshot();
  std::vector<TokenId> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto lg = next_logits();
    const TokenId t = sample_token(lg, sampling_, rng_);
    commit(t);
    ++emitted_;
    snapshot();
    out.push_back(t);
    if (on_token) on_token(t);
  }
  return out;
}

std::vector<StackCounters> FlatSession::counters() const {
  StackCounters s;
  s.name = "flat";
  s.global = true;
  s.layers = model_.config().n_layers;
  s.width = model_.config().dim;
  s.kv_entries = cache_.length();
  s.kv_entries_peak = cache_.peak_length();
  s.absorb(stats_);
  return {s};
}

void FlatSession::snapshot() { history_.push_back(counters()); }

TrafficLedger FlatSession::ledger() const {
  TrafficLedger t;
  t.stacks = counters();
  t.tokens_emitted = emitted_;
  t.history = history_;
  return t;
}

std::vector<TokenId> reference_greedy(const LanguageModel& model, std::span<const TokenId> prompt, std::size_t n,
                                      const std::vector<TokenId>& banned) {
  std::vector<TokenId> seq(prompt.begin(), prompt.end());
  std::vector<TokenId> out;
  SamplingConfig greedy;
  greedy.banned = banned;
  std::mt19937_64 rng(0);
  const std::size_t m = model.sequence_multiple();
  const std::size_t v = model.vocab_size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t pos = seq.size();
    std::vector<TokenId> padded(seq);
    padded.resize((pos + 1 + m - 1) / m * m, model.pad_id());
    ad::Tape tape(false);
    auto lg = model.logits(tape, padded);
    const auto row = lg.value().data().subspan(pos * v, v);
    const TokenId t = sample_token(row, greedy, rng);
    seq.push_back(t);
    out.push_back(t);
  }
  return out;
}

}  // namespace photon
