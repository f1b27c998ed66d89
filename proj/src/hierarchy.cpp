#include "photon/hierarchy.h"

#include <cmath>

#include "photon/flat.h"
#include "photon/losses.h"

namespace photon {

const LevelConfig& HierarchyConfig::level(std::size_t l) const {
  if (l < 1 || l > levels.size()) {
    throw ContractError("hierarchy: level " + std::to_string(l) + " outside [1, " + std::to_string(levels.size()) + "]");
  }
  return levels[l - 1];
}

std::size_t HierarchyConfig::dim(std::size_t l) const { return l == 0 ? embed_dim : level(l).dim; }

std::size_t HierarchyConfig::decoder_width(std::size_t l) const { return l == 1 ? dec_embed_dim : dim(l - 1); }

std::size_t HierarchyConfig::cumulative_chunk(std::size_t l) const {
  std::size_t c = 1;
  for (std::size_t k = 1; k <= l; ++k) c *= level(k).chunk;
  return c;
}

std::size_t HierarchyConfig::units(std::size_t l, std::size_t t) const {
  const std::size_t c = cumulative_chunk(l);
  if (t % c != 0) {
    throw DimensionError("hierarchy: length " + std::to_string(t) + " is not a multiple of " + std::to_string(c) +
                         " (cumulative chunk at level " + std::to_string(l) + ")");
  }
  return t / c;
}

void HierarchyConfig::validate() const {
  if (levels.empty()) throw ConfigError("model.levels: need at least one level");
  if (vocab_size == 0) throw ConfigError("model.vocab: must be positive");
  if (bos_id >= vocab_size || pad_id >= vocab_size) throw ConfigError("model.vocab: reserved ids exceed the vocabulary");
  if (embed_dim == 0) throw ConfigError("model.embed_dim: must be positive");
  if (dec_embed_dim == 0) throw ConfigError("model.dec_embed_dim: must be positive");
  for (std::size_t l = 1; l <= levels.size(); ++l) {
    const auto& lv = levels[l - 1];
    const std::string n = std::to_string(l);
    if (lv.chunk == 0) throw ConfigError("model.chunk." + n + ": must be positive");
    if (lv.dim == 0) throw ConfigError("model.dim." + n + ": must be positive");
    if (lv.chunker == ChunkerKind::concat && lv.chunk * dim(l - 1) != lv.dim) {
      throw ConfigError("model.dim." + n + ": concatenating chunker needs chunk * D_" + std::to_string(l - 1) + " (" +
                        std::to_string(lv.chunk * dim(l - 1)) + ") == D_" + n + " (" + std::to_string(lv.dim) + ")");
    }
    try {
      lv.encoder.validate();
    } catch (const ConfigError& e) {
      throw ConfigError("model.enc.*." + n + ": " + e.what());
    }
    try {
      lv.decoder.validate();
    } catch (const ConfigError& e) {
      throw ConfigError("model.dec.*." + n + ": " + e.what());
    }
    if (lv.encoder.hidden_dim != lv.dim) {
      throw ConfigError("model.dim." + n + ": encoder width " + std::to_string(lv.encoder.hidden_dim) +
                        " differs from the level width " + std::to_string(lv.dim));
    }
    if (lv.decoder.hidden_dim != decoder_width(l)) {
      throw ConfigError("model.dec.heads." + n + ": decoder width " + std::to_string(lv.decoder.hidden_dim) +
                        " differs from the reconstructed stream width " + std::to_string(decoder_width(l)));
    }
  }
}

std::vector<std::size_t> chunk_indices(const HierarchyConfig& cfg, std::size_t l, std::size_t g, std::size_t t) {
  const std::size_t m = cfg.units(l, t);
  if (g < 1 || g > m) {
    throw ContractError("chunk_indices: chunk " + std::to_string(g) + " outside [1, " + std::to_string(m) + "]");
  }
  const std::size_t c = cfg.level(l).chunk;
  std::vector<std::size_t> out(c);
  for (std::size_t j = 0; j < c; ++j) out[j] = (g - 1) * c + j + 1;
  return out;
}

namespace {

std::string lvl(std::size_t l) { return "level" + std::to_string(l); }

// [first; x_1 .. x_{M-1}] for x [M, D] and first [1, D].
ad::Var shift_rows(ad::Tape& tape, const ad::Var& x, const ad::Var& first) {
  const std::size_t m = x.shape()[0];
  const std::size_t d = x.shape()[1];
  if (m == 1) return first;
  auto flat = ad::slice_last(tape, ad::reshape(tape, x, {1, m * d}), 0, (m - 1) * d);
  return ad::reshape(tape, ad::concat(tape, {first, flat}), {m, d});
}

// Shifts x [M*C, W] right by one row inside every chunk of C rows; the first
// row of each chunk becomes `fill` [1, W].
ad::Var shift_within_chunks(ad::Tape& tape, const ad::Var& x, const ad::Var& fill, std::size_t c) {
  const std::size_t rows = x.shape()[0];
  const std::size_t w = x.shape()[1];
  const std::size_t m = rows / c;
  const std::vector<std::uint32_t> zeros(m, 0);
  auto heads = ad::embedding(tape, fill, zeros);  // [M, W]
  if (c == 1) return heads;
  auto body = ad::slice_last(tape, ad::reshape(tape, x, {m, c * w}), 0, (c - 1) * w);
  return ad::reshape(tape, ad::concat(tape, {heads, body}), {rows, w});
}

}  // namespace

PhotonModel::PhotonModel(HierarchyConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), store_(seed) {
  cfg_.validate();
  const std::size_t v = cfg_.vocab_size;
  store_.normal("embed.encoder", {v, cfg_.embed_dim}, 1);
  store_.normal("embed.decoder", {v, cfg_.dec_embed_dim}, 1);
  for (std::size_t l = 1; l <= cfg_.num_levels(); ++l) {
    const auto& lv = cfg_.level(l);
    const std::size_t prev = cfg_.dim(l - 1);
    if (lv.chunker == ChunkerKind::linear) {
      const std::size_t in = lv.chunk * prev;
      store_.constant(lvl(l) + ".chunker.in_norm", {in}, 1);
      store_.normal(lvl(l) + ".chunker.proj", {in, lv.dim}, 1 / std::sqrt(static_cast<real>(in)));
      store_.constant(lvl(l) + ".chunker.out_norm", {lv.dim}, 1);
    }
    encoders_.emplace_back(lvl(l) + ".encoder", lv.encoder, store_);
    store_.normal(lvl(l) + ".start_latent", {1, lv.dim}, 1);
    const std::size_t w = cfg_.decoder_width(l);
    store_.normal(lvl(l) + ".converter.weight", {lv.dim, lv.converter_rows * w}, 1 / std::sqrt(static_cast<real>(lv.dim)));
    store_.constant(lvl(l) + ".converter.bias", {lv.converter_rows * w}, 0);
    decoders_.emplace_back(lvl(l) + ".decoder", lv.decoder, store_);
    if (l >= 2) store_.normal(lvl(l) + ".begin_of_chunk", {1, w}, 1);
  }
  store_.normal("lm_head", {cfg_.dec_embed_dim, v}, static_cast<real>(0.02));
}

ad::Var PhotonModel::embed_tokens(ad::Tape& tape, std::span<const TokenId> ids) const {
  return ad::embedding(tape, store_.get("embed.encoder").var(), ids);
}

ad::Var PhotonModel::embed_decoder_tokens(ad::Tape& tape, std::span<const TokenId> ids) const {
  return ad::embedding(tape, store_.get("embed.decoder").var(), ids);
}

ad::Var PhotonModel::chunker_forward(ad::Tape& tape, std::size_t l, const ad::Var& prev) const {
  const auto& lv = cfg_.level(l);
  const std::size_t d_prev = cfg_.dim(l - 1);
  if (prev.shape().size() != 2 || prev.shape()[1] != d_prev) {
    throw DimensionError(lvl(l) + " chunker: expected [M, " + std::to_string(d_prev) + "], got " + shape_str(prev.shape()));
  }
  const std::size_t rows = prev.shape()[0];
  if (rows % lv.chunk != 0) {
    throw DimensionError(lvl(l) + " chunker: " + std::to_string(rows) + " rows do not split into chunks of " +
                         std::to_string(lv.chunk));
  }
  auto joined = ad::reshape(tape, prev, {rows / lv.chunk, lv.chunk * d_prev});
  if (lv.chunker == ChunkerKind::concat) return joined;
  auto n = ad::rmsnorm(tape, joined, store_.get(lvl(l) + ".chunker.in_norm").var());
  auto p = ad::matmul(tape, n, store_.get(lvl(l) + ".chunker.proj").var());
  return ad::rmsnorm(tape, p, store_.get(lvl(l) + ".chunker.out_norm").var());
}

ad::Var PhotonModel::context_encoder_forward(ad::Tape& tape, std::size_t l, const ad::Var& aggregated, KVCache* cache,
                                             AttentionStats* stats) const {
  return encoder_stack(l).forward(tape, aggregated, cache, 0, stats);
}

ad::Var PhotonModel::converter_rows(ad::Tape& tape, std::size_t l, const ad::Var& latents) const {
  const std::size_t d = cfg_.dim(l);
  if (latents.shape().size() != 2 || latents.shape()[1] != d) {
    throw DimensionError(lvl(l) + " converter: expected [n, " + std::to_string(d) + "], got " + shape_str(latents.shape()));
  }
  auto y = ad::matmul(tape, latents, store_.get(lvl(l) + ".converter.weight").var());
  return ad::add(tape, y, store_.get(lvl(l) + ".converter.bias").var());
}

ad::Var PhotonModel::converter_forward(ad::Tape& tape, std::size_t l, const ad::Var& latent) const {
  const std::size_t d = cfg_.dim(l);
  if (latent.numel() != d) {
    throw DimensionError(lvl(l) + " converter: latent width " + std::to_string(latent.numel()) + " != " + std::to_string(d));
  }
  auto rows = converter_rows(tape, l, ad::reshape(tape, latent, {1, d}));
  return ad::reshape(tape, rows, {cfg_.level(l).converter_rows, cfg_.decoder_width(l)});
}

ad::Var PhotonModel::local_decoder_forward(ad::Tape& tape, std::size_t l, const ad::Var& conditioning,
                                           const ad::Var& teacher, AttentionStats* stats) const {
  const auto& lv = cfg_.level(l);
  const std::size_t w = cfg_.decoder_width(l);
  const std::size_t r = lv.converter_rows;
  const std::size_t c = lv.chunk;
  if (teacher.shape().size() != 2 || teacher.shape()[1] != w || teacher.shape()[0] % c != 0) {
    throw DimensionError(lvl(l) + " decoder: teacher rows must be [n * " + std::to_string(c) + ", " + std::to_string(w) +
                         "], got " + shape_str(teacher.shape()));
  }
  const std::size_t n = teacher.shape()[0] / c;
  if (conditioning.shape() != Shape{n, r * w}) {
    throw DimensionError(lvl(l) + " decoder: conditioning must be " + shape_str({n, r * w}) + ", got " +
                         shape_str(conditioning.shape()));
  }
  auto body = ad::reshape(tape, teacher, {n, c * w});
  ad::Var seq = r == 0 ? body : ad::concat(tape, {conditioning, body});
  seq = ad::reshape(tape, seq, {n, r + c, w});
  auto out = decoder_stack(l).forward(tape, seq, nullptr, r, stats);
  out = ad::reshape(tape, out, {n, (r + c) * w});
  if (r > 0) out = ad::slice_last(tape, out, r * w, c * w);
  return ad::reshape(tape, out, {n * c, w});
}

ad::Var PhotonModel::project_logits(ad::Tape& tape, const ad::Var& reconstructed0) const {
  return ad::matmul(tape, reconstructed0, store_.get("lm_head").var());
}

ad::Var PhotonModel::decoder_conditioning(ad::Tape& tape, std::size_t l, const ad::Var& source) const {
  return converter_rows(tape, l, shift_rows(tape, source, start_latent(l)));
}

ad::Var PhotonModel::decoder_teacher(ad::Tape& tape, std::size_t l, std::span<const TokenId> tokens,
                                     const ad::Var& lower) const {
  if (l == 1) {
    std::vector<TokenId> shifted(tokens.size());
    if (!shifted.empty()) shifted[0] = cfg_.bos_id;
    for (std::size_t i = 1; i < tokens.size(); ++i) shifted[i] = tokens[i - 1];
    return embed_decoder_tokens(tape, shifted);
  }
  return shift_within_chunks(tape, lower, begin_of_chunk(l), cfg_.level(l).chunk);
}

ad::Var PhotonModel::start_latent(std::size_t l) const { return store_.get(lvl(l) + ".start_latent").var(); }

ad::Var PhotonModel::begin_of_chunk(std::size_t l) const {
  if (l < 2) throw ContractError("begin_of_chunk: only levels >= 2 have one");
  return store_.get(lvl(l) + ".begin_of_chunk").var();
}

ForwardResult PhotonModel::forward(ad::Tape& tape, std::span<const TokenId> tokens, ForwardStats* stats) const {
  const std::size_t t = tokens.size();
  const std::size_t big_l = cfg_.num_levels();
  if (t == 0) throw DimensionError("forward: empty token sequence");
  cfg_.units(big_l, t);  // divisibility check
  if (stats) {
    stats->encoder.assign(big_l, {});
    stats->decoder.assign(big_l, {});
  }

  ForwardResult res;
  res.levels.resize(big_l + 1);
  res.levels[0].contextual = embed_tokens(tape, tokens);
  for (std::size_t l = 1; l <= big_l; ++l) {
    auto& st = res.levels[l];
    st.aggregated = chunker_forward(tape, l, res.levels[l - 1].contextual);
    st.contextual = context_encoder_forward(tape, l, st.aggregated, nullptr, stats ? &stats->encoder[l - 1] : nullptr);
  }

  // Top down. Chunk g at level l is conditioned on latent g-1 of the level
  // above: the top encoder state there, the reconstruction below the top.
  for (std::size_t l = big_l; l >= 1; --l) {
    const ad::Var& source = l == big_l ? res.levels[l].contextual : res.levels[l].reconstructed;
    auto cond = decoder_conditioning(tape, l, source);
    auto teacher = decoder_teacher(tape, l, tokens, res.levels[l - 1].contextual);
    res.levels[l - 1].reconstructed =
        local_decoder_forward(tape, l, cond, teacher, stats ? &stats->decoder[l - 1] : nullptr);
  }
  res.logits = project_logits(tape, res.levels[0].reconstructed);
  return res;
}

ad::Var PhotonModel::logits(ad::Tape& tape, std::span<const TokenId> tokens) const {
  return forward(tape, tokens).logits;
}

LossBundle PhotonModel::loss(ad::Tape& tape, std::span<const TokenId> tokens, const LossOptions& opts) const {
  auto res = forward(tape, tokens);
  return total_loss(tape, res.logits, res.levels, tokens, cfg_.pad_id, opts);
}

// ---------------------------------------------------------------------------
// Parameter accounting

ParamBreakdown count_parameters(const HierarchyConfig& cfg) {
  cfg.validate();
  ParamBreakdown b;
  b.name = "photon";
  const std::uint64_t v = cfg.vocab_size;
  auto add = [&](std::string name, std::uint64_t n) { b.rows.push_back({std::move(name), n, std::nullopt}); };
  std::uint64_t latent_rows = 0;
  add("embed.encoder", v * cfg.embed_dim);
  for (std::size_t l = 1; l <= cfg.num_levels(); ++l) {
    const auto& lv = cfg.level(l);
    const std::uint64_t in = lv.chunk * cfg.dim(l - 1);
    add(lvl(l) + ".chunker", lv.chunker == ChunkerKind::linear ? in * lv.dim + in + lv.dim : 0);
    add(lvl(l) + ".encoder", count_block_params(lv.encoder) + lv.dim);
  }
  for (std::size_t l = cfg.num_levels(); l >= 1; --l) {
    const auto& lv = cfg.level(l);
    const std::uint64_t w = cfg.decoder_width(l);
    add(lvl(l) + ".converter", lv.dim * lv.converter_rows * w + lv.converter_rows * w);
    if (l == 1) add("embed.decoder", v * cfg.dec_embed_dim);
    add(lvl(l) + ".decoder", count_block_params(lv.decoder) + w);
    latent_rows += lv.dim + (l >= 2 ? w : 0);
  }
  add("lm_head", cfg.dec_embed_dim * v);
  add("start_latents+begin_of_chunk", latent_rows);
  for (const auto& r : b.rows) b.total += r.count;
  return b;
}

namespace {

BlockConfig block(std::size_t d, std::size_t inter, std::size_t layers, std::size_t heads) {
  return BlockConfig{d, inter, layers, heads, d / heads};
}

HierarchyConfig photon_shape(std::size_t d0, std::size_t d, std::size_t inter, std::size_t layers, std::size_t heads) {
  HierarchyConfig cfg;
  cfg.vocab_size = 32000;
  cfg.embed_dim = d0;
  cfg.dec_embed_dim = d;
  for (std::size_t l = 1; l <= 2; ++l) {
    LevelConfig lv;
    lv.chunk = 4;
    lv.converter_rows = 2;
    lv.dim = d;
    lv.chunker = l == 1 ? ChunkerKind::concat : ChunkerKind::linear;
    lv.encoder = block(d, inter, layers, heads);
    lv.decoder = block(d, inter, layers, heads);
    cfg.levels.push_back(lv);
  }
  return cfg;
}

void annotate(ParamBreakdown& b, const std::vector<std::pair<std::string, std::uint64_t>>& refs) {
  for (auto& row : b.rows) {
    for (const auto& [name, value] : refs) {
      if (row.component == name) row.reference = value;
    }
  }
}

}  // namespace

HierarchyConfig photon_preset(const std::string& name) {
  if (name == "photon-600m") return photon_shape(416, 1664, 4096, 4, 32);
  if (name == "photon-1.2b") return photon_shape(480, 1920, 5120, 6, 32);
  throw ConfigError("unknown photon preset '" + name + "'");
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"vanilla-600m", "vanilla-1.2b", "photon-600m", "photon-1.2b"};
  return names;
}

ParamBreakdown count_parameters(const std::string& preset) {
  if (preset == "vanilla-600m" || preset == "vanilla-1.2b") {
    auto b = count_flat_parameters(flat_preset(preset));
    b.name = preset;
    if (preset == "vanilla-600m") {
      annotate(b, {{"embedding", 53'248'000}, {"blocks", 504'418'304}, {"final_norm", 1'664}, {"lm_head", 53'248'000}});
      b.reference_total = 610'915'968;
    } else {
      annotate(b, {{"embedding", 61'440'000}, {"final_norm", 1'920}, {"lm_head", 61'440'000}});
      b.reference_total = 1'184'657'280;
      b.notes.push_back("published block count is truncated to \"1,061\"; reconciled against the total");
    }
    return b;
  }
  auto b = count_parameters(photon_preset(preset));
  b.name = preset;
  if (preset == "photon-600m") {
    annotate(b, {{"embed.encoder", 13'312'000},
                 {"level1.chunker", 0},
                 {"level1.encoder", 126'106'240},
                 {"level2.chunker", 11'083'904},
                 {"level2.encoder", 126'106'240},
                 {"level2.converter", 5'541'120},
                 {"level2.decoder", 126'106'240},
                 {"level1.converter", 5'541'120},
                 {"embed.decoder", 53'248'000},
                 {"level1.decoder", 126'106'240},
                 {"lm_head", 53'248'000}});
    b.reference_total = 646'399'104;
  } else {
    annotate(b, {{"embed.encoder", 15'360'000},
                 {"level1.chunker", 0},
                 {"level1.encoder", 265'445'760},
                 {"level2.chunker", 14'755'200},
                 {"level2.encoder", 265'445'760},
                 {"level2.converter", 7'376'640},
                 {"level2.decoder", 265'445'760},
                 {"level1.converter", 7'376'640},
                 {"embed.decoder", 61'440'000},
                 {"level1.decoder", 265'445'760},
                 {"lm_head", 61'440'000}});
    b.reference_total = 1'229'531'520;
    b.notes.push_back("published converter dims read \"in d=9728, out d=2432\" and \"in d = 2432, out d = 2432\", "
                      "which do not give 7,376,640; counted as 1920 -> 2 x 1920 with bias");
  }
  b.notes.push_back("each block stack carries a final RMSNorm, counted inside its encoder/decoder row");
  b.notes.push_back("start latents and begin-of-chunk rows are not listed in the published table");
  return b;
}

}  // namespace photon
