#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "photon/autodiff.h"
#include "photon/params.h"

namespace photon {

using TokenId = std::uint32_t;

// One timeline of the hierarchy. Level 0 holds token embeddings in
// `contextual` and the bottom decoder output in `reconstructed`; it has no
// aggregate. The top level has no reconstruction.
struct LevelState {
  ad::Var aggregated;     // A, [M_l, D_l]
  ad::Var contextual;     // X, [M_l, D_l]
  ad::Var reconstructed;  // X-hat, [M_l, D_l]
};

enum class Dissimilarity { mse, cosine };

struct LossWeights {
  real alpha = 0;
  real beta = 0;
};

struct LossOptions {
  LossWeights weights;
  Dissimilarity dissimilarity = Dissimilarity::mse;
  // Treat the target side of the auxiliary losses as constants.
  bool stop_target_grad = true;
};

struct LossBundle {
  ad::Var token_nll;  // mean nats per scored token
  ad::Var rec;
  ad::Var context;
  ad::Var total;
  std::size_t scored_tokens = 0;

  real token_nll_value() const { return token_nll.value()[0]; }
  real rec_value() const { return rec.value()[0]; }
  real context_value() const { return context.value()[0]; }
  real total_value() const { return total.value()[0]; }
};

// Shared surface of the hierarchical model and the flat baseline, used by
// the training loop and the CLI.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  virtual ParamStore& params() = 0;
  virtual const ParamStore& params() const = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual TokenId pad_id() const = 0;
  // Sequence lengths passed to forward must be a multiple of this.
  virtual std::size_t sequence_multiple() const = 0;

  // Row i of the result scores token i given tokens before it.
  virtual ad::Var logits(ad::Tape& tape, std::span<const TokenId> tokens) const = 0;
  virtual LossBundle loss(ad::Tape& tape, std::span<const TokenId> tokens, const LossOptions& opts) const = 0;
};

}  // namespace photon
