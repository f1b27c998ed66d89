#include "photon/flat.h"

#include "photon/losses.h"

namespace photon {

BlockConfig FlatConfig::block() const {
  return BlockConfig{dim, intermediate_dim, n_layers, n_heads, n_heads == 0 ? 0 : dim / n_heads};
}

void FlatConfig::validate() const {
  if (vocab_size == 0) throw ConfigError("model.vocab: must be positive");
  if (bos_id >= vocab_size || pad_id >= vocab_size) throw ConfigError("model.vocab: reserved ids exceed the vocabulary");
  if (n_heads == 0 || dim % n_heads != 0) throw ConfigError("model.flat.heads: must divide model.flat.dim");
  try {
    block().validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("model.flat.*: ") + e.what());
  }
}

FlatConfig flat_preset(const std::string& name) {
  FlatConfig c;
  c.vocab_size = 32000;
  c.n_heads = 32;
  if (name == "vanilla-600m") {
    c.dim = 1664;
    c.intermediate_dim = 4096;
    c.n_layers = 16;
  } else if (name == "vanilla-1.2b") {
    c.dim = 1920;
    c.intermediate_dim = 5120;
    c.n_layers = 24;
  } else {
    throw ConfigError("unknown flat preset '" + name + "'");
  }
  return c;
}

ParamBreakdown count_flat_parameters(const FlatConfig& cfg) {
  cfg.validate();
  ParamBreakdown b;
  b.name = "flat";
  const std::uint64_t v = cfg.vocab_size;
  b.rows.push_back({"embedding", v * cfg.dim, std::nullopt});
  b.rows.push_back({"blocks", count_block_params(cfg.block()), std::nullopt});
  b.rows.push_back({"final_norm", cfg.dim, std::nullopt});
  b.rows.push_back({"lm_head", cfg.dim * v, std::nullopt});
  for (const auto& r : b.rows) b.total += r.count;
  return b;
}

FlatModel::FlatModel(FlatConfig cfg, std::uint64_t seed)
    : cfg_((cfg.validate(), std::move(cfg))), store_(seed), stack_([this]() -> BlockStack {
        store_.normal("embed", {cfg_.vocab_size, cfg_.dim}, 1);
        return BlockStack("flat", cfg_.block(), store_);
      }()) {
  store_.normal("lm_head", {cfg_.dim, cfg_.vocab_size}, static_cast<real>(0.02));
}

ad::Var FlatModel::step(ad::Tape& tape, std::span<const TokenId> inputs, KVCache* cache, AttentionStats* stats) const {
  auto x = ad::embedding(tape, store_.get("embed").var(), inputs);
  auto h = stack_.forward(tape, x, cache, 0, stats);
  return ad::matmul(tape, h, store_.get("lm_head").var());
}

ad::Var FlatModel::logits(ad::Tape& tape, std::span<const TokenId> tokens) const {
  if (tokens.empty()) throw DimensionError("forward: empty token sequence");
  std::vector<TokenId> inputs(tokens.size());
  inputs[0] = cfg_.bos_id;
  for (std::size_t i = 1; i < tokens.size(); ++i) inputs[i] = tokens[i - 1];
  return step(tape, inputs, nullptr);
}

LossBundle FlatModel::loss(ad::Tape& tape, std::span<const TokenId> tokens, const LossOptions& opts) const {
  auto lg = logits(tape, tokens);
  return total_loss(tape, lg, {}, tokens, cfg_.pad_id, opts);
}

}  // namespace photon
