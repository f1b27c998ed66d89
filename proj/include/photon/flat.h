#pragma once

// Flat decoder-only baseline: token embedding, one causal block stack, LM
// head. Same block machinery as the hierarchy.

#include <cstdint>
#include <string>

#include "photon/hierarchy.h"
#include "photon/model.h"
#include "photon/nn.h"

namespace photon {

struct FlatConfig {
  std::size_t vocab_size = 258;
  std::size_t dim = 0;
  std::size_t intermediate_dim = 0;
  std::size_t n_layers = 0;
  std::size_t n_heads = 0;
  TokenId bos_id = 1;
  TokenId pad_id = 0;

  BlockConfig block() const;
  void validate() const;
};

FlatConfig flat_preset(const std::string& name);  // vanilla-600m, vanilla-1.2b
// Rows: embedding, blocks, final_norm, lm_head.
ParamBreakdown count_flat_parameters(const FlatConfig& cfg);

class FlatModel final : public LanguageModel {
 public:
  FlatModel(FlatConfig cfg, std::uint64_t seed);

  const FlatConfig& config() const { return cfg_; }
  ParamStore& params() override { return store_; }
  const ParamStore& params() const override { return store_; }
  std::size_t vocab_size() const override { return cfg_.vocab_size; }
  TokenId pad_id() const override { return cfg_.pad_id; }
  std::size_t sequence_multiple() const override { return 1; }

  // Feeds [BOS, t_1 .. t_{T-1}] so that row i scores token i.
  ad::Var logits(ad::Tape& tape, std::span<const TokenId> tokens) const override;
  LossBundle loss(ad::Tape& tape, std::span<const TokenId> tokens, const LossOptions& opts) const override;

  // Raw step over input ids (no shift): used by incremental sessions.
  ad::Var step(ad::Tape& tape, std::span<const TokenId> inputs, KVCache* cache, AttentionStats* stats = nullptr) const;
  const BlockStack& stack() const { return stack_; }

 private:
  FlatConfig cfg_;
  ParamStore store_;
  BlockStack stack_;
};

}  // namespace photon
