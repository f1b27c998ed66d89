#include "photon/nn.h"

#include <cmath>

namespace photon {

void BlockConfig::validate() const {
  if (hidden_dim == 0 || intermediate_dim == 0 || n_heads == 0 || head_dim == 0) {
    throw ConfigError("block config: dims and head counts must be positive");
  }
  if (n_heads * head_dim != hidden_dim) {
    throw ConfigError("block config: n_heads * head_dim (" + std::to_string(n_heads * head_dim) +
                      ") != hidden_dim (" + std::to_string(hidden_dim) + ")");
  }
  if (head_dim % 2 != 0) throw ConfigError("block config: rotary encoding needs an even head_dim");
}

std::uint64_t count_block_params(const BlockConfig& cfg) {
  const std::uint64_t d = cfg.hidden_dim;
  const std::uint64_t i = cfg.intermediate_dim;
  return cfg.n_layers * (4 * d * d + 3 * d * i + 2 * d);
}

void AttentionStats::merge(const AttentionStats& o) {
  queries += o.queries;
  prefix_queries += o.prefix_queries;
  output_pairs += o.output_pairs;
  prefix_pairs += o.prefix_pairs;
  entry_reads += o.entry_reads;
  max_keys_read = std::max(max_keys_read, o.max_keys_read);
  entries_written += o.entries_written;
}

KVCache::KVCache(std::size_t n_layers, std::size_t width, std::optional<std::size_t> capacity)
    : width_(width), capacity_(capacity), keys_(n_layers), values_(n_layers) {}

Tensor KVCache::keys(std::size_t layer) const {
  const auto& k = keys_.at(layer);
  return Tensor({k.size() / width_, width_}, k);
}

Tensor KVCache::values(std::size_t layer) const {
  const auto& v = values_.at(layer);
  return Tensor({v.size() / width_, width_}, v);
}

void KVCache::reserve_rows(std::size_t s) const {
  if (capacity_ && len_ + s > *capacity_) {
    throw ContractError("kv cache: capacity " + std::to_string(*capacity_) + " exceeded (length " +
                        std::to_string(len_) + " + " + std::to_string(s) + ")");
  }
}

void KVCache::append(std::size_t layer, const Tensor& k, const Tensor& v) {
  keys_[layer].insert(keys_[layer].end(), k.data().begin(), k.data().end());
  values_[layer].insert(values_[layer].end(), v.data().begin(), v.data().end());
  written_ += k.numel() / width_;
}

void KVCache::advance(std::size_t s) {
  len_ += s;
  peak_ = std::max(peak_, len_);
}

BlockStack::BlockStack(std::string name, const BlockConfig& cfg, ParamStore& store, bool final_norm)
    : name_(std::move(name)), cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg_.hidden_dim;
  const std::size_t im = cfg_.intermediate_dim;
  const real in_std = 1 / std::sqrt(static_cast<real>(d));
  const real out_std = in_std / std::sqrt(static_cast<real>(2 * cfg_.n_layers));
  const real mlp_out_std = 1 / std::sqrt(static_cast<real>(im * 2 * cfg_.n_layers));
  for (std::size_t i = 0; i < cfg_.n_layers; ++i) {
    const std::string p = name_ + ".layer" + std::to_string(i) + ".";
    Layer l{
        store.constant(p + "attn_norm", {d}, 1),
        store.normal(p + "wq", {d, d}, in_std),
        store.normal(p + "wk", {d, d}, in_std),
        store.normal(p + "wv", {d, d}, in_std),
        store.normal(p + "wo", {d, d}, out_std),
        store.constant(p + "mlp_norm", {d}, 1),
        store.normal(p + "w_gate", {d, im}, in_std),
        store.normal(p + "w_up", {d, im}, in_std),
        store.normal(p + "w_down", {im, d}, mlp_out_std),
    };
    layers_.push_back(std::move(l));
  }
  if (final_norm) final_norm_ = store.constant(name_ + ".final_norm", {d}, 1);
}

std::uint64_t BlockStack::param_count() const {
  return count_block_params(cfg_) + (final_norm_ ? cfg_.hidden_dim : 0);
}

ad::Var BlockStack::rope(ad::Tape& tape, const ad::Var& x, const ad::Var& cos, const ad::Var& sin) const {
  const std::size_t half = cfg_.head_dim / 2;
  auto parts = ad::split(tape, x, {half, half});
  const auto& x1 = parts[0];
  const auto& x2 = parts[1];
  auto lo = ad::sub(tape, ad::mul(tape, x1, cos), ad::mul(tape, x2, sin));
  auto hi = ad::add(tape, ad::mul(tape, x2, cos), ad::mul(tape, x1, sin));
  return ad::concat(tape, {lo, hi});
}

namespace {

// Splices cached rows [len, D] in front of new rows [S, D].
ad::Var with_history(ad::Tape& tape, const Tensor& cached, const ad::Var& fresh) {
  if (cached.numel() == fresh.numel()) return fresh;
  const std::size_t d = fresh.shape().back();
  const std::size_t old_rows = cached.numel() / d - fresh.numel() / d;
  if (old_rows == 0) return fresh;
  Tensor old({1, old_rows * d}, std::vector<real>(cached.data().begin(), cached.data().begin() + static_cast<std::ptrdiff_t>(old_rows * d)));
  auto joined = ad::concat(tape, {ad::constant(std::move(old)), ad::reshape(tape, fresh, {1, fresh.numel()})});
  return ad::reshape(tape, joined, {old_rows + fresh.numel() / d, d});
}

}  // namespace

ad::Var BlockStack::forward(ad::Tape& tape, const ad::Var& input, KVCache* cache, std::size_t prefix_len,
                            AttentionStats* stats) const {
  const Shape& in = input.shape();
  const std::size_t d = cfg_.hidden_dim;
  if ((in.size() != 2 && in.size() != 3) || in.back() != d) {
    throw DimensionError(name_ + ": expected [S, " + std::to_string(d) + "] or [B, S, " + std::to_string(d) +
                         "] input, got " + shape_str(in));
  }
  const std::size_t s = in[in.size() - 2];
  const std::size_t batch = in.size() == 3 ? in[0] : 1;
  std::size_t offset = 0;
  if (cache) {
    if (in.size() != 2) throw ContractError(name_ + ": cached forward takes a single [S, D] sequence");
    if (cache->n_layers() != cfg_.n_layers || cache->width() != d) {
      throw ContractError(name_ + ": kv cache geometry does not match the stack");
    }
    cache->reserve_rows(s);
    offset = cache->length();
  }

  const std::size_t hd = cfg_.head_dim;
  const std::size_t half = hd / 2;
  Tensor cos_t({s, half});
  Tensor sin_t({s, half});
  for (std::size_t p = 0; p < s; ++p) {
    const real pos = static_cast<real>(offset + p);
    for (std::size_t j = 0; j < half; ++j) {
      const real freq = std::pow(static_cast<real>(10000), -static_cast<real>(2 * j) / static_cast<real>(hd));
      cos_t[p * half + j] = std::cos(pos * freq);
      sin_t[p * half + j] = std::sin(pos * freq);
    }
  }
  const auto cos = ad::constant(std::move(cos_t));
  const auto sin = ad::constant(std::move(sin_t));
  const ad::CausalMask mask{static_cast<std::ptrdiff_t>(offset), prefix_len};
  const real inv_sqrt = 1 / std::sqrt(static_cast<real>(hd));

  std::vector<std::size_t> head_sizes(cfg_.n_heads, hd);
  ad::Var h = input;
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    const Layer& l = layers_[li];
    auto n = ad::rmsnorm(tape, h, l.attn_norm.var());
    auto q = ad::matmul(tape, n, l.wq.var());
    auto k = ad::matmul(tape, n, l.wk.var());
    auto v = ad::matmul(tape, n, l.wv.var());
    auto qh = ad::split(tape, q, head_sizes);
    auto kh = ad::split(tape, k, head_sizes);
    for (auto& x : qh) x = rope(tape, x, cos, sin);
    for (auto& x : kh) x = rope(tape, x, cos, sin);
    k = ad::concat(tape, kh);
    if (cache) {
      cache->append(li, k.value(), v.value());
      k = with_history(tape, cache->keys(li), k);
      v = with_history(tape, cache->values(li), v);
      kh = ad::split(tape, k, head_sizes);
    }
    auto vh = ad::split(tape, v, head_sizes);
    std::vector<ad::Var> outs;
    outs.reserve(cfg_.n_heads);
    for (std::size_t hi = 0; hi < cfg_.n_heads; ++hi) {
      auto scores = ad::scale(tape, ad::matmul(tape, qh[hi], ad::transpose(tape, kh[hi])), inv_sqrt);
      if (li == 0 && hi == 0) {
        // Instrumentation: walk the mask over the score geometry actually built.
        const std::size_t keys = scores.shape().back();
        AttentionStats st;
        std::uint64_t reads_per_layer = 0;
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t qi = 0; qi < s; ++qi) {
            std::uint64_t allowed = 0;
            for (std::size_t ki = 0; ki < keys; ++ki) allowed += mask.allowed(qi, ki) ? 1 : 0;
            const std::size_t pos = offset + qi;
            if (pos < prefix_len) {
              ++st.prefix_queries;
              st.prefix_pairs += allowed;
            } else {
              ++st.queries;
              st.output_pairs += allowed;
            }
            st.entry_reads += allowed - 1;
            reads_per_layer += allowed - 1;
            st.max_keys_read = std::max<std::uint64_t>(st.max_keys_read, allowed - 1);
          }
        }
        st.entries_written = batch * s;
        if (stats) stats->merge(st);
        if (cache) cache->count_reads(reads_per_layer * cfg_.n_layers);
      }
      auto p = ad::softmax_rows(tape, scores, mask);
      outs.push_back(ad::matmul(tape, p, vh[hi]));
    }
    h = ad::add(tape, h, ad::matmul(tape, ad::concat(tape, outs), l.wo.var()));
    auto n2 = ad::rmsnorm(tape, h, l.mlp_norm.var());
    auto gate = ad::silu(tape, ad::matmul(tape, n2, l.w_gate.var()));
    auto up = ad::matmul(tape, n2, l.w_up.var());
    h = ad::add(tape, h, ad::matmul(tape, ad::mul(tape, gate, up), l.w_down.var()));
  }
  if (cache) cache->advance(s);
  if (final_norm_) h = ad::rmsnorm(tape, h, final_norm_->var());
  return h;
}

}  // namespace photon
