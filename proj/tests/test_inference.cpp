#include <gtest/gtest.h>

#include <json.hpp>

#include "photon/cost_model.h"
#include "photon/inference.h"
#include "test_support.h"

using namespace photon;
using photon::testing::random_tokens;
using photon::testing::toy_config;

namespace {

HierarchyConfig c44() { return toy_config({4, 4}, {2, 2}, 2, 19, 1, 1); }

FlatModel tiny_flat(std::uint64_t seed) { return FlatModel(FlatConfig{19, 8, 16, 2, 2, 1, 0}, seed); }

}  // namespace

TEST(Sampling, GreedyTakesLowestMaximumAndRespectsBans) {
  std::mt19937_64 rng(1);
  const std::vector<real> lg{0.5, 2, 2, -1};
  EXPECT_EQ(sample_token(lg, {}, rng), 1u);
  SamplingConfig banned;
  banned.banned = {1};
  EXPECT_EQ(sample_token(lg, banned, rng), 2u);
  const std::vector<real> bad{0, std::nan("")};
  EXPECT_THROW(sample_token(bad, {}, rng), NumericError);
}

TEST(Sampling, TemperatureDrawsAreSeeded) {
  const std::vector<real> lg{0, 0.1, 0.2, 0.3, 0.4};
  SamplingConfig cfg;
  cfg.temperature = 1;
  auto draw = [&](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<TokenId> out;
    for (int i = 0; i < 50; ++i) out.push_back(sample_token(lg, cfg, rng));
    return out;
  };
  EXPECT_EQ(draw(4), draw(4));
  EXPECT_NE(draw(4), draw(5));
}

TEST(PhotonSession, PrefillCacheSizes) {
  PhotonModel m(c44(), 1);
  PhotonSession s(m);
  s.prefill(random_tokens(2048, 19, 1));
  EXPECT_EQ(s.encoder_entries(1), 512u);
  EXPECT_EQ(s.encoder_entries(2), 128u);
  const auto led = s.ledger();
  EXPECT_EQ(led.global_entries(), 640u);
  EXPECT_EQ(led.stack("dec.1").kv_entries_peak, 6u);

  // Pairs: global causal blocks plus bounded local blocks.
  EXPECT_EQ(led.stack("enc.1").attention_pairs + led.stack("enc.2").attention_pairs, 139'584u);
  EXPECT_EQ(led.stack("dec.1").attention_pairs + led.stack("dec.2").attention_pairs, 11'520u);
  EXPECT_EQ(led.attention_pairs(), 151'104u);
}

TEST(PhotonSession, ShortPromptFillsNoGlobalCache) {
  PhotonModel m(c44(), 2);
  PhotonSession s(m);
  s.prefill(random_tokens(3, 19, 2));
  EXPECT_EQ(s.encoder_entries(1), 0u);
  EXPECT_EQ(s.encoder_entries(2), 0u);
  s.generate(1);
  EXPECT_EQ(s.encoder_entries(1), 1u);
}

TEST(PhotonSession, GreedyMatchesFullReforwards) {
  PhotonModel m(c44(), 3);
  for (std::size_t prompt_len : {0u, 5u, 16u, 37u}) {
    const auto prompt = random_tokens(prompt_len, 19, 3 + prompt_len);
    PhotonSession s(m);
    s.prefill(prompt);
    EXPECT_EQ(s.generate(40), reference_greedy(m, prompt, 40)) << prompt_len;
  }
}

TEST(PhotonSession, LogitsMatchFullForwardRows) {
  PhotonModel m(toy_config({2, 2}, {1, 2}, 4, 19, 2, 2), 4);
  const auto tokens = random_tokens(24, 19, 4);
  ad::Tape tape(false);
  const Tensor full = m.logits(tape, tokens).value();
  PhotonSession s(m);
  s.prefill(std::span<const TokenId>(tokens).first(9));
  for (std::size_t i = 9; i < 24; ++i) {
    const auto lg = s.next_logits();
    for (std::size_t k = 0; k < 19; ++k) ASSERT_NEAR(lg[k], full[i * 19 + k], 1e-10) << i;
    s.commit(tokens[i]);
  }
}

TEST(PhotonSession, MaxContextIsEnforced) {
  PhotonModel m(c44(), 5);
  PhotonSession s(m, {}, 20);
  EXPECT_THROW(s.prefill(random_tokens(21, 19, 5)), ContractError);
  PhotonSession t(m, {}, 20);
  t.prefill(random_tokens(18, 19, 5));
  t.generate(2);
  EXPECT_THROW(t.generate(1), ContractError);
}

TEST(PhotonSession, LedgerMatchesScheduleReplay) {
  PhotonModel m(c44(), 6);
  const auto sched = simulate_schedule(geometry(m.config()), 50, 70);
  PhotonSession s(m);
  s.prefill(random_tokens(50, 19, 6));
  s.generate(70);
  const auto led = s.ledger();
  ASSERT_EQ(led.history.size(), 71u);
  for (const auto& st : sched.stacks) {
    EXPECT_EQ(led.reads_per_token(st.name), st.token_reads) << st.name;
    EXPECT_EQ(led.history[0][0].name, "enc.1");
    EXPECT_EQ(led.stack(st.name).kv_entry_reads, st.total_reads()) << st.name;
    EXPECT_EQ(led.stack(st.name).attention_pairs, st.total_pairs()) << st.name;
    EXPECT_EQ(led.stack(st.name).max_keys_read, st.max_keys_read) << st.name;
  }
}

TEST(FlatSession, MatchesReferenceAndCountsReads) {
  const auto f = tiny_flat(7);
  const auto prompt = random_tokens(12, 19, 7);
  FlatSession s(f);
  s.prefill(prompt);
  EXPECT_EQ(s.cache_entries(), 12u);
  EXPECT_EQ(s.generate(30), reference_greedy(f, prompt, 30));
  const auto reads = s.ledger().reads_per_token("flat");
  ASSERT_EQ(reads.size(), 30u);
  // Token k reads every earlier entry: T + k - 1.
  for (std::size_t k = 1; k <= 30; ++k) EXPECT_EQ(reads[k - 1], 12 + k - 1);
}

TEST(FlatSession, BatchedPrefillEqualsIncrementalFeed) {
  const auto f = tiny_flat(8);
  const auto prompt = random_tokens(10, 19, 8);
  FlatSession batched(f);
  batched.prefill(prompt);
  FlatSession stepwise(f);
  stepwise.prefill({});
  for (auto t : prompt) {
    stepwise.next_logits();
    stepwise.commit(t);
  }
  const auto a = batched.next_logits();
  const auto b = stepwise.next_logits();
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], b[k], 1e-10);
}

TEST(TrafficLedger, JsonCarriesPerSnapshotArrays) {
  PhotonModel m(c44(), 9);
  PhotonSession s(m);
  s.prefill(random_tokens(32, 19, 9));
  s.generate(3);
  const auto j = nlohmann::json::parse(s.ledger().to_json());
  EXPECT_EQ(j["tokens_emitted"], 3);
  EXPECT_EQ(j["snapshots"], 4);
  EXPECT_EQ(j["stacks"]["enc.1"]["kv_entries"].size(), 4u);
  EXPECT_EQ(j["stacks"]["enc.1"]["kv_entries"][0], 8);
  EXPECT_EQ(j["stacks"]["dec.2"]["global"], false);
  EXPECT_TRUE(j["totals"].contains("global_kv_entry_reads"));
  EXPECT_THROW(s.ledger().stack("enc.9"), ContractError);
}
