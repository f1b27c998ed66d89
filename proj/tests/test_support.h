#pragma once

// Shared fixtures for the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "photon/flat.h"
#include "photon/hierarchy.h"
#include "photon/model.h"

namespace photon::testing {

inline BlockConfig tiny_block(std::size_t d, std::size_t heads = 1, std::size_t layers = 1, std::size_t inter = 0) {
  return BlockConfig{d, inter ? inter : 2 * d, layers, heads, d / heads};
}

// L levels with given chunks / converter rows; D_0 = d0, every level width
// D_l = chunk_1 * d0 (level 1 concatenates, higher levels project).
inline HierarchyConfig toy_config(const std::vector<std::size_t>& chunks, const std::vector<std::size_t>& rows,
                                  std::size_t d0, std::size_t vocab = 17, std::size_t heads = 1, std::size_t layers = 1,
                                  std::size_t upper_dim = 0) {
  HierarchyConfig cfg;
  cfg.vocab_size = vocab;
  cfg.embed_dim = d0;
  const std::size_t d1 = chunks.at(0) * d0;
  cfg.dec_embed_dim = d1;
  for (std::size_t l = 1; l <= chunks.size(); ++l) {
    LevelConfig lv;
    lv.chunk = chunks[l - 1];
    lv.converter_rows = rows[l - 1];
    lv.dim = l == 1 ? d1 : (upper_dim ? upper_dim : d1);
    lv.chunker = l == 1 ? ChunkerKind::concat : ChunkerKind::linear;
    lv.encoder = tiny_block(lv.dim, heads, layers);
    cfg.levels.push_back(lv);
  }
  for (std::size_t l = 1; l <= chunks.size(); ++l) cfg.levels[l - 1].decoder = tiny_block(cfg.decoder_width(l), heads, layers);
  return cfg;
}

// The gradient-check configuration: L=2, C=(2,2), D=(8,16,16), vocab 17.
inline HierarchyConfig gradcheck_config() { return toy_config({2, 2}, {2, 2}, 8, 17, 2, 1); }

inline std::vector<TokenId> random_tokens(std::size_t n, std::size_t vocab, std::uint64_t seed, TokenId lo = 2) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<TokenId> d(lo, static_cast<TokenId>(vocab - 1));
  std::vector<TokenId> out(n);
  for (auto& t : out) t = d(rng);
  return out;
}

inline real rel_err(real a, real b, real floor = static_cast<real>(1e-6)) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Central difference of f with respect to x[i].
inline real central_diff(const std::function<real()>& f, real& x, real h = static_cast<real>(1e-5)) {
  const real keep = x;
  x = keep + h;
  const real up = f();
  x = keep - h;
  const real down = f();
  x = keep;
  return (up - down) / (2 * h);
}

struct GradcheckResult {
  real max_rel_err = 0;
  std::size_t sampled = 0;
  std::string worst;  // parameter name and index of the worst entry
};

// Analytic gradient of the total loss against central differences at
// `samples` parameter entries drawn uniformly over all scalars.
inline GradcheckResult gradcheck(LanguageModel& model, const std::vector<TokenId>& tokens, const LossOptions& opts,
                                 std::size_t samples, std::uint64_t seed, real h = static_cast<real>(1e-5)) {
  auto& store = model.params();
  store.zero_grad();
  {
    ad::Tape tape;
    tape.backward(model.loss(tape, tokens, opts).total);
  }
  std::vector<std::pair<std::string, std::size_t>> picks;
  const std::uint64_t total = store.scalar_count();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::uint64_t> d(0, total - 1);
  for (std::size_t s = 0; s < samples; ++s) {
    std::uint64_t k = d(rng);
    for (const auto& name : store.names()) {
      const auto n = store.get(name).numel();
      if (k < n) {
        picks.emplace_back(name, static_cast<std::size_t>(k));
        break;
      }
      k -= n;
    }
  }
  GradcheckResult r;
  for (const auto& [name, i] : picks) {
    auto& p = store.get(name);
    const real analytic = p.has_grad() ? p.grad()[i] : 0;
    const real numeric = central_diff(
        [&] {
          ad::Tape tape(false);
          return model.loss(tape, tokens, opts).total_value();
        },
        p.value()[i], h);
    const real e = rel_err(analytic, numeric);
    if (e >= r.max_rel_err) {
      r.max_rel_err = e;
      r.worst = name + "[" + std::to_string(i) + "]";
    }
    ++r.sampled;
  }
  return r;
}

}  // namespace photon::testing
