#pragma once

// Adam with linear warmup and a deterministic window-sampling training loop.

#include <cstdint>
#include <functional>
#include <ostream>
#include <random>
#include <vector>

#include "photon/config.h"
#include "photon/model.h"

namespace photon {

struct TrainConfig {
  real lr = static_cast<real>(3e-4);
  std::size_t warmup = 3000;
  std::size_t batch = 4;
  std::size_t context = 64;
  std::uint64_t seed = 0;
  std::size_t steps = 100;
  LossOptions loss;
  real beta1 = static_cast<real>(0.9);
  real beta2 = static_cast<real>(0.95);
  real eps = static_cast<real>(1e-8);
  std::size_t checkpoint_every = 0;  // 0 disables periodic checkpoints

  void validate(std::size_t sequence_multiple) const;
};

TrainConfig parse_train(const ConfigFile& cfg);
void write_train(const TrainConfig& t, ConfigFile& cfg);

// lr * min(1, step / warmup); step 0 gives 0, warmup 0 gives lr throughout.
real lr_at(const TrainConfig& cfg, std::size_t step);

class Adam {
 public:
  Adam(real beta1, real beta2, real eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // Applies one update from the gradients currently stored in `store`.
  void step(ParamStore& store, real lr);
  std::size_t steps_taken() const { return t_; }

 private:
  real beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

struct StepMetrics {
  std::size_t step = 0;
  real token_nll = 0;
  real rec = 0;
  real context = 0;
  real total = 0;
  real grad_norm = 0;
  real lr = 0;
};

// Tab-separated: step, token_nll, rec, context, total, grad_norm, lr.
void write_metrics_header(std::ostream& out);
void write_metrics(std::ostream& out, const StepMetrics& m);

// `batch` windows of `context` tokens, starts drawn uniformly; a stream
// shorter than the window is right-padded.
std::vector<std::vector<TokenId>> sample_windows(const std::vector<TokenId>& stream, std::size_t context,
                                                 std::size_t batch, TokenId pad_id, std::mt19937_64& rng);

// Mean loss over the batch; leaves the batch-mean gradient in the store.
StepMetrics forward_backward(const LanguageModel& model, const std::vector<std::vector<TokenId>>& batch,
                             const LossOptions& opts);
real grad_norm(const ParamStore& store);

struct TrainHooks {
  std::ostream* metrics = nullptr;
  std::function<void(std::size_t step)> checkpoint;
  std::function<void(const StepMetrics&)> on_step;
};

// Runs cfg.steps updates numbered 1..steps. Throws NumericError naming the
// step on a non-finite loss.
std::vector<StepMetrics> train(LanguageModel& model, const std::vector<TokenId>& stream, const TrainConfig& cfg,
                               const TrainHooks& hooks = {});

struct EvalResult {
  real mean_nll = 0;  // nats per scored token
  real perplexity = 0;
  real bits_per_byte = 0;
  std::size_t scored_tokens = 0;
};

// Scores consecutive non-overlapping windows of `context` tokens.
EvalResult evaluate(const LanguageModel& model, const std::vector<TokenId>& stream, std::size_t context);

}  // namespace photon
