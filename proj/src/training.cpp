#include "photon/training.h"

#include <cmath>
#include <iomanip>
#include <sstream>

namespace photon {

void TrainConfig::validate(std::size_t sequence_multiple) const {
  if (lr < 0) throw ConfigError("train.lr: must be non-negative");
  if (batch == 0) throw ConfigError("train.batch: must be positive");
  if (context < 2) throw ConfigError("train.context: need at least 2 tokens");
  if (context % sequence_multiple != 0) {
    throw ConfigError("train.context: " + std::to_string(context) + " is not a multiple of " +
                      std::to_string(sequence_multiple));
  }
  if (loss.weights.alpha < 0) throw ConfigError("train.alpha: must be non-negative");
  if (loss.weights.beta < 0) throw ConfigError("train.beta: must be non-negative");
}

TrainConfig parse_train(const ConfigFile& cfg) {
  TrainConfig t;
  t.lr = cfg.get_real("train.lr", t.lr);
  t.warmup = cfg.get_size("train.warmup", t.warmup);
  t.batch = cfg.get_size("train.batch", t.batch);
  t.context = cfg.get_size("train.context", t.context);
  t.seed = cfg.get_u64("train.seed", t.seed);
  t.steps = cfg.get_size("train.steps", t.steps);
  t.loss.weights.alpha = cfg.get_real("train.alpha", 0);
  t.loss.weights.beta = cfg.get_real("train.beta", 0);
  t.loss.stop_target_grad = cfg.get_bool("train.stop_target_grad", true);
  t.loss.dissimilarity = parse_dissimilarity(cfg.get_string("train.dissimilarity", "mse"));
  t.beta1 = cfg.get_real("train.beta1", t.beta1);
  t.beta2 = cfg.get_real("train.beta2", t.beta2);
  t.eps = cfg.get_real("train.eps", t.eps);
  t.checkpoint_every = cfg.get_size("train.checkpoint_every", 0);
  return t;
}

void write_train(const TrainConfig& t, ConfigFile& cfg) {
  auto num = [](real v) {
    std::ostringstream s;
    s << std::setprecision(17) << v;
    return s.str();
  };
  cfg.set("train.lr", num(t.lr));
  cfg.set("train.warmup", std::to_string(t.warmup));
  cfg.set("train.batch", std::to_string(t.batch));
  cfg.set("train.context", std::to_string(t.context));
  cfg.set("train.seed", std::to_string(t.seed));
  cfg.set("train.steps", std::to_string(t.steps));
  cfg.set("train.alpha", num(t.loss.weights.alpha));
  cfg.set("train.beta", num(t.loss.weights.beta));
  cfg.set("train.stop_target_grad", t.loss.stop_target_grad ? "true" : "false");
  cfg.set("train.dissimilarity", t.loss.dissimilarity == Dissimilarity::mse ? "mse" : "cosine");
  cfg.set("train.beta1", num(t.beta1));
  cfg.set("train.beta2", num(t.beta2));
  cfg.set("train.eps", num(t.eps));
  cfg.set("train.checkpoint_every", std::to_string(t.checkpoint_every));
}

real lr_at(const TrainConfig& cfg, std::size_t step) {
  if (cfg.warmup == 0 || step >= cfg.warmup) return cfg.lr;
  return cfg.lr * static_cast<real>(step) / static_cast<real>(cfg.warmup);
}

void Adam::step(ParamStore& store, real lr) {
  if (m_.empty()) {
    for (const auto& name : store.names()) {
      m_.emplace_back(store.get(name).shape());
      v_.emplace_back(store.get(name).shape());
    }
  }
  ++t_;
  const real c1 = 1 - std::pow(beta1_, static_cast<real>(t_));
  const real c2 = 1 - std::pow(beta2_, static_cast<real>(t_));
  const auto& names = store.names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    auto& p = store.get(names[i]);
    if (!p.has_grad()) continue;
    auto w = p.value().data();
    auto g = p.grad().data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = beta1_ * m[j] + (1 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1 - beta2_) * g[j] * g[j];
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
    }
  }
}

void write_metrics_header(std::ostream& out) { out << "step\ttoken_nll\trec\tcontext\ttotal\tgrad_norm\tlr\n"; }

void write_metrics(std::ostream& out, const StepMetrics& m) {
  out << m.step << '\t' << std::setprecision(10) << m.token_nll << '\t' << m.rec << '\t' << m.context << '\t' << m.total
      << '\t' << m.grad_norm << '\t' << m.lr << '\n';
}

std::vector<std::vector<TokenId>> sample_windows(const std::vector<TokenId>& stream, std::size_t context,
                                                 std::size_t batch, TokenId pad_id, std::mt19937_64& rng) {
  if (stream.empty()) throw ContractError("sample_windows: empty token stream");
  std::vector<std::vector<TokenId>> out;
  out.reserve(batch);
  const std::size_t span = stream.size() > context ? stream.size() - context : 0;
  std::uniform_int_distribution<std::size_t> pick(0, span);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t start = pick(rng);
    std::vector<TokenId> w(context, pad_id);
    for (std::size_t i = 0; i < context && start + i < stream.size(); ++i) w[i] = stream[start + i];
    out.push_back(std::move(w));
  }
  return out;
}

real grad_norm(const ParamStore& store) {
  real s = 0;
  for (const auto& name : store.names()) {
    ad::Param p = store.get(name);
    if (!p.has_grad()) continue;
    for (real g : p.grad().data()) s += g * g;
  }
  return std::sqrt(s);
}

StepMetrics forward_backward(const LanguageModel& model, const std::vector<std::vector<TokenId>>& batch,
                             const LossOptions& opts) {
  StepMetrics m;
  const real inv = 1 / static_cast<real>(batch.size());
  for (const auto& seq : batch) {
    ad::Tape tape;
    auto b = model.loss(tape, seq, opts);
    tape.backward(ad::scale(tape, b.total, inv));
    m.token_nll += b.token_nll_value() * inv;
    m.rec += b.rec_value() * inv;
    m.context += b.context_value() * inv;
    m.total += b.total_value() * inv;
  }
  return m;
}

std::vector<StepMetrics> train(LanguageModel& model, const std::vector<TokenId>& stream, const TrainConfig& cfg,
                               const TrainHooks& hooks) {
  cfg.validate(model.sequence_multiple());
  std::mt19937_64 rng(cfg.seed);
  Adam opt(cfg.beta1, cfg.beta2, cfg.eps);
  std::vector<StepMetrics> log;
  log.reserve(cfg.steps);
  if (hooks.metrics) write_metrics_header(*hooks.metrics);
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    auto batch = sample_windows(stream, cfg.context, cfg.batch, model.pad_id(), rng);
    model.params().zero_grad();
    StepMetrics m;
    try {
      m = forward_backward(model, batch, cfg.loss);
    } catch (const NumericError& e) {
      throw NumericError("step " + std::to_string(step) + ": " + e.what());
    }
    if (!std::isfinite(m.total)) throw NumericError("step " + std::to_string(step) + ": non-finite loss");
    m.step = step;
    m.grad_norm = grad_norm(model.params());
    if (!std::isfinite(m.grad_norm)) throw NumericError("step " + std::to_string(step) + ": non-finite gradient");
    m.lr = lr_at(cfg, step);
    opt.step(model.params(), m.lr);
    if (hooks.metrics) write_metrics(*hooks.metrics, m);
    if (hooks.on_step) hooks.on_step(m);
    if (hooks.checkpoint && cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) hooks.checkpoint(step);
    log.push_back(m);
  }
  return log;
}

EvalResult evaluate(const LanguageModel& model, const std::vector<TokenId>& stream, std::size_t context) {
  if (context % model.sequence_multiple() != 0) {
    throw ConfigError("eval.context: " + std::to_string(context) + " is not a multiple of " +
                      std::to_string(model.sequence_multiple()));
  }
  EvalResult r;
  real total = 0;
  for (std::size_t start = 0; start + 2 <= stream.size(); start += context) {
    std::vector<TokenId> w(context, model.pad_id());
    for (std::size_t i = 0; i < context && start + i < stream.size(); ++i) w[i] = stream[start + i];
    ad::Tape tape(false);
    auto b = model.loss(tape, w, LossOptions{});
    total += b.token_nll_value() * static_cast<real>(b.scored_tokens);
    r.scored_tokens += b.scored_tokens;
  }
  if (r.scored_tokens == 0) throw ContractError("evaluate: stream too short to score");
  r.mean_nll = total / static_cast<real>(r.scored_tokens);
  r.perplexity = std::exp(r.mean_nll);
  r.bits_per_byte = r.mean_nll / std::log(static_cast<real>(2));
  return r;
}

}  // namespace photon
