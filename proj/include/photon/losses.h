#pragma once

// Training objective: next-token NLL plus the two auxiliary alignment terms.

#include <span>
#include <vector>

#include "photon/model.h"

namespace photon {

// Mean NLL over rows 1..T-1 of `logits` (row i scores tokens[i]); rows whose
// target is `pad_id` are skipped. `scored` receives the number of rows used.
ad::Var token_nll(ad::Tape& tape, const ad::Var& logits, std::span<const TokenId> tokens, TokenId pad_id,
                  std::size_t* scored = nullptr);

// Dissimilarity between prediction rows and target rows of equal shape
// [n, d], summed: squared error for mse, sum of (1 - cosine) for cosine.
ad::Var dissimilarity_sum(ad::Tape& tape, const ad::Var& pred, const ad::Var& target, Dissimilarity kind);

// Aligns X-hat^(l-1) with X^(l-1) for l = 1..L. Normalized by the total
// element count (mse) or row count (cosine) of the included levels. Level 0
// is included only when the bottom decoder width equals the embedding width.
ad::Var reconstruction_loss(ad::Tape& tape, const std::vector<LevelState>& levels, const LossOptions& opts);

// Sum over levels with M_l >= 2 of the mean dissimilarity between encoder
// output g-1 and aggregate g, g = 2..M_l.
ad::Var next_context_loss(ad::Tape& tape, const std::vector<LevelState>& levels, const LossOptions& opts);

// token_nll + alpha * rec + beta * context. A zero weight leaves its term out
// of the graph entirely. Empty `levels` (flat model) gives zero auxiliaries.
LossBundle total_loss(ad::Tape& tape, const ad::Var& logits, const std::vector<LevelState>& levels,
                      std::span<const TokenId> tokens, TokenId pad_id, const LossOptions& opts);

}  // namespace photon
