#include "photon/losses.h"

namespace photon {

namespace {
constexpr real kCosineEps = static_cast<real>(1e-24);
}

ad::Var token_nll(ad::Tape& tape, const ad::Var& logits, std::span<const TokenId> tokens, TokenId pad_id,
                  std::size_t* scored) {
  const std::size_t t = tokens.size();
  if (t < 2) throw ContractError("token_nll: need at least 2 tokens, got " + std::to_string(t));
  std::vector<real> weights(t, 0);
  std::size_t n = 0;
  for (std::size_t i = 1; i < t; ++i) {
    if (tokens[i] != pad_id) {
      weights[i] = 1;
      ++n;
    }
  }
  if (n == 0) throw ContractError("token_nll: every target is padding");
  if (scored) *scored = n;
  auto total = ad::cross_entropy(tape, logits, tokens, weights);
  return ad::scale(tape, total, 1 / static_cast<real>(n));
}

ad::Var dissimilarity_sum(ad::Tape& tape, const ad::Var& pred, const ad::Var& target, Dissimilarity kind) {
  if (pred.shape() != target.shape() || pred.shape().size() != 2) {
    throw DimensionError("dissimilarity: shapes " + shape_str(pred.shape()) + " and " + shape_str(target.shape()));
  }
  if (kind == Dissimilarity::mse) {
    auto d = ad::sub(tape, pred, target);
    return ad::sum(tape, ad::mul(tape, d, d));
  }
  // rmsnorm(x) = sqrt(d) x / |x| (up to eps), so the row-wise dot product of
  // two normalized rows is d * cos.
  const std::size_t rows = pred.shape()[0];
  const std::size_t d = pred.shape()[1];
  auto ones = ad::constant(Tensor({d}, 1));
  // A far smaller eps than the model norms keeps this within 1e-12 of the true cosine.
  auto a = ad::rmsnorm(tape, pred, ones, kCosineEps);
  auto b = ad::rmsnorm(tape, target, ones, kCosineEps);
  auto dots = ad::scale(tape, ad::sum(tape, ad::mul(tape, a, b)), -1 / static_cast<real>(d));
  return ad::add(tape, dots, ad::constant(Tensor::scalar(static_cast<real>(rows))));
}

namespace {

ad::Var zero() { return ad::constant(Tensor::scalar(0)); }

ad::Var target_of(const ad::Var& x, const LossOptions& opts) {
  return opts.stop_target_grad ? ad::stop_gradient(x) : x;
}

// Rows [first, first + count) of a [M, D] tensor.
ad::Var rows(ad::Tape& tape, const ad::Var& x, std::size_t first, std::size_t count) {
  const std::size_t m = x.shape()[0];
  const std::size_t d = x.shape()[1];
  auto flat = ad::reshape(tape, x, {1, m * d});
  return ad::reshape(tape, ad::slice_last(tape, flat, first * d, count * d), {count, d});
}

}  // namespace

ad::Var reconstruction_loss(ad::Tape& tape, const std::vector<LevelState>& levels, const LossOptions& opts) {
  if (levels.size() < 2) return zero();
  ad::Var acc;
  std::size_t denom = 0;
  for (std::size_t l = 1; l < levels.size(); ++l) {
    const auto& st = levels[l - 1];
    if (!st.reconstructed.defined() || !st.contextual.defined()) {
      throw ContractError("reconstruction_loss: level " + std::to_string(l - 1) + " states are missing");
    }
    if (st.reconstructed.shape() != st.contextual.shape()) continue;  // bottom decoder width differs from D_0
    auto term = dissimilarity_sum(tape, st.reconstructed, target_of(st.contextual, opts), opts.dissimilarity);
    acc = acc.defined() ? ad::add(tape, acc, term) : term;
    denom += opts.dissimilarity == Dissimilarity::mse ? st.contextual.numel() : st.contextual.shape()[0];
  }
  if (!acc.defined()) return zero();
  return ad::scale(tape, acc, 1 / static_cast<real>(denom));
}

ad::Var next_context_loss(ad::Tape& tape, const std::vector<LevelState>& levels, const LossOptions& opts) {
  ad::Var acc;
  for (std::size_t l = 1; l < levels.size(); ++l) {
    const auto& st = levels[l];
    if (!st.aggregated.defined() || !st.contextual.defined()) {
      throw ContractError("next_context_loss: level " + std::to_string(l) + " states are missing");
    }
    const std::size_t m = st.contextual.shape()[0];
    if (m < 2) continue;
    const std::size_t d = st.contextual.shape()[1];
    auto pred = rows(tape, st.contextual, 0, m - 1);
    auto target = rows(tape, target_of(st.aggregated, opts), 1, m - 1);
    auto term = dissimilarity_sum(tape, pred, target, opts.dissimilarity);
    const std::size_t per_row = opts.dissimilarity == Dissimilarity::mse ? d : 1;
    term = ad::scale(tape, term, 1 / static_cast<real>((m - 1) * per_row));
    acc = acc.defined() ? ad::add(tape, acc, term) : term;
  }
  return acc.defined() ? acc : zero();
}

LossBundle total_loss(ad::Tape& tape, const ad::Var& logits, const std::vector<LevelState>& levels,
                      std::span<const TokenId> tokens, TokenId pad_id, const LossOptions& opts) {
  if (opts.weights.alpha < 0 || opts.weights.beta < 0) {
    throw ContractError("loss weights must be non-negative (alpha " + std::to_string(opts.weights.alpha) + ", beta " +
                        std::to_string(opts.weights.beta) + ")");
  }
  LossBundle b;
  b.token_nll = token_nll(tape, logits, tokens, pad_id, &b.scored_tokens);
  b.rec = reconstruction_loss(tape, levels, opts);
  b.context = next_context_loss(tape, levels, opts);
  b.total = b.token_nll;
  if (opts.weights.alpha > 0) b.total = ad::add(tape, b.total, ad::scale(tape, b.rec, opts.weights.alpha));
  if (opts.weights.beta > 0) b.total = ad::add(tape, b.total, ad::scale(tape, b.context, opts.weights.beta));
  return b;
}

}  // namespace photon
