#pragma once

// The hierarchical model: a bottom-up encoder that chunks and contextualizes
// each level's stream, and top-down local decoders that rebuild every finer
// stream chunk by chunk with attention confined to the chunk.
//
// Levels are 1-based in this API: level l chunks C_l units of level l-1 into
// one unit, so M_l = M_{l-1} / C_l with M_0 = T.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "photon/model.h"
#include "photon/nn.h"

namespace photon {

enum class ChunkerKind {
  concat,  // parameter-free; needs C_l * D_{l-1} == D_l
  linear,  // RMSNorm -> bias-free projection -> RMSNorm
};

struct LevelConfig {
  std::size_t chunk = 4;           // C_l
  std::size_t converter_rows = 2;  // R_l
  std::size_t dim = 0;             // D_l
  ChunkerKind chunker = ChunkerKind::linear;
  BlockConfig encoder;  // width D_l
  BlockConfig decoder;  // width of the stream this level reconstructs
};

struct HierarchyConfig {
  std::size_t vocab_size = 258;
  std::size_t embed_dim = 0;      // D_0, encoder-side token embedding width
  std::size_t dec_embed_dim = 0;  // width of the bottom decoder and LM head input
  TokenId bos_id = 1;
  TokenId pad_id = 0;
  std::vector<LevelConfig> levels;

  std::size_t num_levels() const { return levels.size(); }
  const LevelConfig& level(std::size_t l) const;
  std::size_t dim(std::size_t l) const;  // D_l for l in [0, L]
  // Width of the stream decoder l reconstructs: dec_embed_dim at l = 1,
  // D_{l-1} above.
  std::size_t decoder_width(std::size_t l) const;
  std::size_t cumulative_chunk(std::size_t l) const;  // C_{<=l}, C_{<=0} = 1
  std::size_t sequence_multiple() const { return cumulative_chunk(num_levels()); }
  // M_l for a length-T sequence; throws if T is not a multiple of C_{<=l}.
  std::size_t units(std::size_t l, std::size_t t) const;

  void validate() const;
};

// 1-based positions {(g-1) C_l + 1, ..., g C_l} of chunk g at level l for a
// length-T sequence.
std::vector<std::size_t> chunk_indices(const HierarchyConfig& cfg, std::size_t l, std::size_t g, std::size_t t);

struct ForwardResult {
  ad::Var logits;  // [T, V]; row i scores token i given tokens before it
  std::vector<LevelState> levels;  // 0..L
};

struct ForwardStats {
  std::vector<AttentionStats> encoder;  // index l-1
  std::vector<AttentionStats> decoder;  // index l-1
};

class PhotonModel final : public LanguageModel {
 public:
  PhotonModel(HierarchyConfig cfg, std::uint64_t seed);

  const HierarchyConfig& config() const { return cfg_; }
  ParamStore& params() override { return store_; }
  const ParamStore& params() const override { return store_; }
  std::size_t vocab_size() const override { return cfg_.vocab_size; }
  TokenId pad_id() const override { return cfg_.pad_id; }
  std::size_t sequence_multiple() const override { return cfg_.sequence_multiple(); }

  // Full teacher-forced pass: encoders bottom-up, decoders top-down.
  ForwardResult forward(ad::Tape& tape, std::span<const TokenId> tokens, ForwardStats* stats = nullptr) const;
  ad::Var logits(ad::Tape& tape, std::span<const TokenId> tokens) const override;
  LossBundle loss(ad::Tape& tape, std::span<const TokenId> tokens, const LossOptions& opts) const override;

  // Building blocks, shared by the full pass and the incremental session.
  ad::Var embed_tokens(ad::Tape& tape, std::span<const TokenId> ids) const;
  ad::Var embed_decoder_tokens(ad::Tape& tape, std::span<const TokenId> ids) const;
  // [M_{l-1}, D_{l-1}] -> [M_l, D_l]
  ad::Var chunker_forward(ad::Tape& tape, std::size_t l, const ad::Var& prev) const;
  ad::Var context_encoder_forward(ad::Tape& tape, std::size_t l, const ad::Var& aggregated, KVCache* cache = nullptr,
                                  AttentionStats* stats = nullptr) const;
  // [n, D_l] -> [n, R_l * W]: each row expands to R_l conditioning rows of
  // width W = decoder_width(l), laid out back to back.
  ad::Var converter_rows(ad::Tape& tape, std::size_t l, const ad::Var& latents) const;
  // Single latent [D_l] -> [R_l, W].
  ad::Var converter_forward(ad::Tape& tape, std::size_t l, const ad::Var& latent) const;
  // Decodes n chunks at once. conditioning: [n, R_l * W]; teacher: [n * C_l, W]
  // (row j of a chunk is the input that produces output row j). Returns the
  // last C_l outputs of every chunk, [n * C_l, W].
  ad::Var local_decoder_forward(ad::Tape& tape, std::size_t l, const ad::Var& conditioning, const ad::Var& teacher,
                                AttentionStats* stats = nullptr) const;
  ad::Var project_logits(ad::Tape& tape, const ad::Var& reconstructed0) const;

  // Conditioning for every chunk of decoder l from the latent stream
  // `source` [M_l, D_l]: chunk g gets U(source_{g-1}), chunk 1 U(start latent).
  ad::Var decoder_conditioning(ad::Tape& tape, std::size_t l, const ad::Var& source) const;
  // Teacher rows of decoder l. Level 1: decoder embeddings of
  // [BOS, t_1 .. t_{T-1}]; above: `lower` (X^(l-1)) shifted right inside each
  // chunk behind the begin-of-chunk row.
  ad::Var decoder_teacher(ad::Tape& tape, std::size_t l, std::span<const TokenId> tokens, const ad::Var& lower) const;

  ad::Var start_latent(std::size_t l) const;    // [1, D_l]
  ad::Var begin_of_chunk(std::size_t l) const;  // [1, D_{l-1}], l >= 2

  const BlockStack& encoder_stack(std::size_t l) const { return encoders_.at(l - 1); }
  const BlockStack& decoder_stack(std::size_t l) const { return decoders_.at(l - 1); }

 private:
  HierarchyConfig cfg_;
  ParamStore store_;
  std::vector<BlockStack> encoders_;
  std::vector<BlockStack> decoders_;
};

// Named parameter counts. `reference` carries a published figure for rows
// that have one.
struct ParamRow {
  std::string component;
  std::uint64_t count = 0;
  std::optional<std::uint64_t> reference;
};

struct ParamBreakdown {
  std::string name;
  std::vector<ParamRow> rows;
  std::uint64_t total = 0;
  std::optional<std::uint64_t> reference_total;
  std::vector<std::string> notes;
};

ParamBreakdown count_parameters(const HierarchyConfig& cfg);

HierarchyConfig photon_preset(const std::string& name);  // photon-600m, photon-1.2b
const std::vector<std::string>& preset_names();
// Any preset, including the flat vanilla-600m / vanilla-1.2b ones, annotated
// with the published per-row figures.
ParamBreakdown count_parameters(const std::string& preset);

}  // namespace photon
