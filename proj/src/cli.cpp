#include "photon/cli.h"

#include <CLI11.hpp>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <memory>
#include <sstream>
#include <thread>

#include "photon/checkpoint.h"
#include "photon/config.h"
#include "photon/corpus.h"
#include "photon/cost_model.h"
#include "photon/inference.h"
#include "photon/training.h"

#ifndef PHOTON_VERSION
#define PHOTON_VERSION "dev"
#endif

namespace photon {

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
};

ConfigFile resolve_config(const Common& c) {
  ConfigFile cfg = c.config_path.empty() ? ConfigFile{} : ConfigFile::load(c.config_path);
  for (const auto& o : c.overrides) cfg.apply_override(o);
  cfg.validate_keys();
  return cfg;
}

std::unique_ptr<LanguageModel> build_model(const ModelSpec& spec, std::uint64_t seed) {
  if (spec.kind == "flat") return std::make_unique<FlatModel>(spec.flat, seed);
  return std::make_unique<PhotonModel>(spec.photon, seed);
}

struct Loaded {
  ConfigFile cfg;
  ModelSpec spec;
  std::unique_ptr<LanguageModel> model;
};

// Model section from the checkpoint, everything else from file and flags.
Loaded load_model(const std::string& path, const ConfigFile& run_cfg) {
  const auto ck = load_checkpoint(path);
  Loaded l;
  l.cfg = ConfigFile::parse(ck.config_text, path);
  for (const auto& [k, v] : run_cfg.values()) {
    if (k.rfind("model.", 0) != 0) l.cfg.set(k, v);
  }
  l.spec = parse_model(l.cfg);
  l.model = build_model(l.spec, 0);
  restore_params(ck, l.model->params());
  return l;
}

// Held-out split: the trailing fraction of the stream.
std::pair<std::vector<TokenId>, std::vector<TokenId>> split_stream(const std::vector<TokenId>& s, real fraction) {
  if (fraction < 0 || fraction >= 1) throw ConfigError("eval.heldout_fraction: must be in [0, 1)");
  const std::size_t held = static_cast<std::size_t>(static_cast<real>(s.size()) * fraction);
  const std::size_t cut = s.size() - held;
  return {std::vector<TokenId>(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(cut)),
          std::vector<TokenId>(s.begin() + static_cast<std::ptrdiff_t>(cut), s.end())};
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write '" + path + "'");
  f << text;
}

std::string hex64(std::uint64_t h) {
  std::ostringstream o;
  o << std::hex << std::setw(16) << std::setfill('0') << h;
  return o.str();
}

// ---------------------------------------------------------------------------

int cmd_ingest(const std::vector<std::string>& inputs, const std::string& out_path, std::ostream& out) {
  const Corpus c = ingest_files(inputs);
  save_corpus(out_path, c);
  out << "tokens " << c.ids.size() << "\ndocuments " << (c.ids.empty() ? 0 : c.boundaries.size()) << "\nhash "
      << hex64(hash_file(out_path)) << "\n";
  return kExitOk;
}

int cmd_train(const Common& common, const std::string& corpus_path, const std::string& ckpt_path,
              const std::string& metrics_path, std::ostream& out) {
  ConfigFile cfg = resolve_config(common);
  const ModelSpec spec = parse_model(cfg);
  const TrainConfig tc = parse_train(cfg);
  const std::uint64_t seed = cfg.get_u64("model.seed", tc.seed);
  auto model = build_model(spec, seed);
  tc.validate(model->sequence_multiple());

  const Corpus corpus = load_corpus(corpus_path);
  corpus.validate(model->vocab_size());
  const auto [train_stream, held] = split_stream(corpus.tokens(), cfg.get_real("eval.heldout_fraction", 0.1));
  if (train_stream.size() < 2) throw ConfigError("eval.heldout_fraction: leaves fewer than 2 training tokens");

  // Snapshot with every default made explicit.
  ConfigFile snapshot = model_config(spec);
  write_train(tc, snapshot);
  for (const auto& [k, v] : cfg.values()) {
    if (!snapshot.has(k)) snapshot.set(k, v);
  }
  snapshot.set("model.seed", std::to_string(seed));

  std::ofstream metrics;
  if (!metrics_path.empty()) {
    metrics.open(metrics_path);
    if (!metrics) throw Error("cannot write '" + metrics_path + "'");
    write_metrics_header(metrics);
  }
  TrainHooks hooks;
  hooks.metrics = metrics_path.empty() ? nullptr : &metrics;
  hooks.checkpoint = [&](std::size_t step) {
    save_checkpoint(ckpt_path + ".step" + std::to_string(step), snapshot.to_text(), model->params());
  };
  const auto log = train(*model, train_stream, tc, hooks);
  save_checkpoint(ckpt_path, snapshot.to_text(), model->params());

  nlohmann::json manifest;
  manifest["config"] = snapshot.to_text();
  manifest["seed"] = seed;
  manifest["code_version"] = PHOTON_VERSION;
  manifest["inputs"] = {{corpus_path, hex64(hash_file(corpus_path))}};
  manifest["checkpoint_hash"] = hex64(hash_file(ckpt_path));
  write_file(ckpt_path + ".manifest.json", manifest.dump(2) + "\n");

  if (!log.empty()) {
    out << "steps " << log.size() << "\nfinal_token_nll " << log.back().token_nll << "\nfinal_total "
        << log.back().total << "\n";
  }
  out << "checkpoint " << ckpt_path << "\n";
  return kExitOk;
}

int cmd_eval(const Common& common, const std::string& ckpt_path, const std::string& corpus_path, std::ostream& out) {
  const ConfigFile run = resolve_config(common);
  auto l = load_model(ckpt_path, run);
  const Corpus corpus = load_corpus(corpus_path);
  corpus.validate(l.model->vocab_size());
  const real fraction = l.cfg.get_real("eval.heldout_fraction", 0.1);
  auto [train_stream, held] = split_stream(corpus.tokens(), fraction);
  if (fraction == 0) held = train_stream;
  const std::size_t context = l.cfg.get_size("eval.context", l.cfg.get_size("train.context", 64));
  const auto r = evaluate(*l.model, held, context);
  nlohmann::json j;
  j["scored_tokens"] = r.scored_tokens;
  j["mean_nll"] = r.mean_nll;
  j["perplexity"] = r.perplexity;
  j["bits_per_byte"] = r.bits_per_byte;
  out << j.dump(2) << "\n";
  return kExitOk;
}

int cmd_generate(const Common& common, const std::string& ckpt_path, const std::string& prompt,
                 const std::string& ledger_path, std::ostream& out) {
  const ConfigFile run = resolve_config(common);
  auto l = load_model(ckpt_path, run);
  SamplingConfig s;
  s.temperature = l.cfg.get_real("generate.temperature", 0);
  s.seed = l.cfg.get_u64("generate.seed", 0);
  s.banned = {kPadId, kBosId};
  const std::size_t n = l.cfg.get_size("generate.max_tokens", 64);
  const auto ids = tokenize_bytes(prompt);
  std::vector<TokenId> emitted;
  std::string ledger_json;
  if (l.spec.kind == "flat") {
    FlatSession session(static_cast<const FlatModel&>(*l.model), s);
    session.prefill(ids);
    emitted = session.generate(n);
    ledger_json = session.ledger().to_json();
  } else {
    PhotonSession session(static_cast<const PhotonModel&>(*l.model), s);
    session.prefill(ids);
    emitted = session.generate(n);
    ledger_json = session.ledger().to_json();
  }
  out << detokenize(emitted);
  out.flush();
  if (!ledger_path.empty()) write_file(ledger_path, ledger_json + "\n");
  return kExitOk;
}

int cmd_params(const std::vector<std::string>& presets, bool json_out, std::ostream& out) {
  const auto& names = presets.empty() ? preset_names() : presets;
  nlohmann::json all = nlohmann::json::array();
  for (const auto& name : names) {
    if (std::find(preset_names().begin(), preset_names().end(), name) == preset_names().end()) {
      throw ConfigError("preset: unknown '" + name + "'");
    }
    const auto b = count_parameters(name);
    if (json_out) {
      nlohmann::json j;
      j["name"] = b.name;
      j["total"] = b.total;
      if (b.reference_total) j["reference_total"] = *b.reference_total;
      for (const auto& r : b.rows) {
        nlohmann::json row{{"component", r.component}, {"count", r.count}};
        if (r.reference) row["reference"] = *r.reference;
        j["rows"].push_back(row);
      }
      j["notes"] = b.notes;
      all.push_back(j);
      continue;
    }
    out << b.name << "\n";
    out << "  " << std::left << std::setw(32) << "component" << std::right << std::setw(16) << "count" << std::setw(16)
        << "published" << std::setw(12) << "diff" << "\n";
    for (const auto& r : b.rows) {
      out << "  " << std::left << std::setw(32) << r.component << std::right << std::setw(16) << r.count;
      if (r.reference) {
        const long long diff = static_cast<long long>(r.count) - static_cast<long long>(*r.reference);
        out << std::setw(16) << *r.reference << std::setw(12) << (diff == 0 ? "=" : std::to_string(diff));
      }
      out << "\n";
    }
    out << "  " << std::left << std::setw(32) << "total" << std::right << std::setw(16) << b.total;
    if (b.reference_total) {
      const long long diff = static_cast<long long>(b.total) - static_cast<long long>(*b.reference_total);
      const double rel = static_cast<double>(diff) / static_cast<double>(*b.reference_total);
      out << std::setw(16) << *b.reference_total << std::setw(12) << (diff == 0 ? "=" : std::to_string(diff));
      if (diff != 0) out << "  (" << std::setprecision(3) << rel * 100 << "%)";
    }
    out << "\n";
    for (const auto& n : b.notes) out << "  note: " << n << "\n";
  }
  if (json_out) out << all.dump(2) << "\n";
  return kExitOk;
}

// Small default models for the measured half of the bench; the counts do not
// depend on widths.
ConfigFile bench_defaults() {
  return ConfigFile::parse(
      "model.levels=2\nmodel.chunk.1=4\nmodel.chunk.2=4\nmodel.converter.1=2\nmodel.converter.2=2\n"
      "model.dim.1=16\nmodel.dim.2=16\nmodel.vocab=258\n",
      "<bench defaults>");
}

struct Measured {
  std::uint64_t entries_after_prefill = 0;
  std::uint64_t entries_peak = 0;
  std::uint64_t decode_global_reads = 0;
  std::uint64_t decode_local_reads = 0;
};

Measured measure_ledger(const TrafficLedger& led) {
  Measured m;
  for (const auto& s : led.history.front()) {
    if (s.global) m.entries_after_prefill += s.kv_entries;
  }
  m.entries_peak = led.global_entries_peak();
  for (const auto& s : led.stacks) {
    std::uint64_t decode = 0;
    for (auto r : led.reads_per_token(s.name)) decode += r;
    (s.global ? m.decode_global_reads : m.decode_local_reads) += decode;
  }
  return m;
}

int cmd_bench(const Common& common, const std::string& regime_flag, bool long_lengths, long long prompt_flag,
              long long gen_flag, const std::string& csv_path, const std::string& json_path, std::ostream& out) {
  ConfigFile cfg = bench_defaults();
  {
    const ConfigFile user = resolve_config(common);
    for (const auto& [k, v] : user.values()) cfg.set(k, v);
  }
  ModelSpec spec = parse_model(cfg);
  if (spec.kind != "photon") throw ConfigError("model.kind: bench needs a photon model");
  const auto& hcfg = spec.photon;
  FlatConfig flat;
  flat.vocab_size = hcfg.vocab_size;
  flat.dim = cfg.get_size("model.flat.dim", hcfg.dim(1));
  flat.n_layers = cfg.get_size("model.flat.layers", 1);
  flat.n_heads = cfg.get_size("model.flat.heads", 1);
  flat.intermediate_dim = cfg.get_size("model.flat.intermediate", 4 * flat.dim);
  flat.validate();
  const std::uint64_t seed = cfg.get_u64("bench.seed", 0);

  std::string regime = regime_flag.empty() ? cfg.get_string("bench.regime", "both") : regime_flag;
  std::vector<std::string> regimes;
  if (regime == "both") {
    regimes = {"PF", "DE"};
  } else if (regime == "PF" || regime == "DE") {
    regimes = {regime};
  } else {
    throw ConfigError("bench.regime: expected PF, DE or both, got '" + regime + "'");
  }

  PhotonModel pmodel(hcfg, seed);
  FlatModel fmodel(flat, seed);
  std::ostringstream csv;
  csv << CostReport::csv_header()
      << ",measured_global_entries_after_prefill,measured_global_entries_peak,measured_decode_global_reads,"
         "measured_decode_local_reads,measured_flat_decode_reads,ledger_matches\n";
  nlohmann::json reports = nlohmann::json::array();
  bool all_match = true;
  for (const auto& r : regimes) {
    std::uint64_t prompt = r == "PF" ? (long_lengths ? 2048 : 512) : (long_lengths ? 128 : 32);
    std::uint64_t gen = r == "PF" ? (long_lengths ? 128 : 32) : (long_lengths ? 2048 : 512);
    if (regimes.size() == 1) {
      prompt = cfg.get_u64("bench.prompt", prompt);
      gen = cfg.get_u64("bench.gen", gen);
    }
    if (prompt_flag >= 0) prompt = static_cast<std::uint64_t>(prompt_flag);
    if (gen_flag >= 0) gen = static_cast<std::uint64_t>(gen_flag);
    const auto report = build_cost_report(r, hcfg, &flat, prompt, gen);

    // The two sessions are independent; run them side by side.
    const auto prompt_ids = [&] {
      std::mt19937_64 rng(seed + prompt);
      std::uniform_int_distribution<TokenId> d(kByteOffset, static_cast<TokenId>(hcfg.vocab_size - 1));
      std::vector<TokenId> ids(prompt);
      for (auto& t : ids) t = d(rng);
      return ids;
    }();
    SamplingConfig greedy;
    greedy.banned = {kPadId, kBosId};
    TrafficLedger pled, fled;
    std::exception_ptr failure;
    std::thread flat_thread([&] {
      try {
        FlatSession fs(fmodel, greedy);
        fs.prefill(prompt_ids);
        fs.generate(gen);
        fled = fs.ledger();
      } catch (...) {
        failure = std::current_exception();
      }
    });
    PhotonSession ps(pmodel, greedy);
    ps.prefill(prompt_ids);
    ps.generate(gen);
    pled = ps.ledger();
    flat_thread.join();
    if (failure) std::rethrow_exception(failure);

    const Measured pm = measure_ledger(pled);
    const Measured fm = measure_ledger(fled);
    const auto& sched = report.schedule;
    const bool match = pm.entries_after_prefill == sched.global_entries_after_prefill() &&
                       pm.entries_peak == sched.global_entries_peak() &&
                       pm.decode_global_reads == sched.global_decode_reads() &&
                       pm.decode_local_reads == sched.local_decode_reads() &&
                       fm.decode_global_reads == report.flat_schedule.global_decode_reads();
    all_match = all_match && match;
    csv << report.csv_row() << ',' << pm.entries_after_prefill << ',' << pm.entries_peak << ','
        << pm.decode_global_reads << ',' << pm.decode_local_reads << ',' << fm.decode_global_reads << ','
        << (match ? "true" : "false") << "\n";
    auto j = nlohmann::json::parse(report.to_json());
    j["measured"] = {{"global_entries_after_prefill", pm.entries_after_prefill},
                     {"global_entries_peak", pm.entries_peak},
                     {"decode_global_reads", pm.decode_global_reads},
                     {"decode_local_reads", pm.decode_local_reads},
                     {"flat_decode_reads", fm.decode_global_reads},
                     {"ledger_matches", match}};
    reports.push_back(std::move(j));
  }
  if (csv_path.empty()) {
    out << csv.str();
  } else {
    write_file(csv_path, csv.str());
    out << "wrote " << csv_path << "\n";
  }
  if (!json_path.empty()) write_file(json_path, reports.dump(2) + "\n");
  if (!all_match) throw NumericError("bench: instrumented ledger disagrees with the cost model");
  return kExitOk;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.config_path, "key=value config file");
  sub->add_option("--set", c.overrides, "override a config key (key=value), repeatable");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"hierarchical byte-level language model toolkit"};
  app.require_subcommand(1);
  Common common;

  std::vector<std::string> inputs;
  std::string out_path, corpus_path, ckpt_path, metrics_path, prompt, ledger_path, regime, csv_path, json_path;
  std::vector<std::string> presets;
  bool json_out = false, long_lengths = false;
  long long prompt_len = -1, gen_len = -1;

  auto* ingest = app.add_subcommand("ingest", "convert files to a byte-level corpus");
  ingest->add_option("inputs", inputs, "input files, one document each")->required()->check(CLI::ExistingFile);
  ingest->add_option("-o,--out", out_path, "corpus file to write")->required();

  auto* train_cmd = app.add_subcommand("train", "train a model on a corpus");
  add_common(train_cmd, common);
  train_cmd->add_option("--corpus", corpus_path, "corpus file")->required();
  train_cmd->add_option("-o,--out", ckpt_path, "checkpoint to write")->required();
  train_cmd->add_option("--metrics", metrics_path, "per-step TSV log");

  auto* eval_cmd = app.add_subcommand("eval", "score the held-out split");
  add_common(eval_cmd, common);
  eval_cmd->add_option("--checkpoint", ckpt_path, "checkpoint")->required();
  eval_cmd->add_option("--corpus", corpus_path, "corpus file")->required();

  auto* gen_cmd = app.add_subcommand("generate", "continue a prompt");
  add_common(gen_cmd, common);
  gen_cmd->add_option("--checkpoint", ckpt_path, "checkpoint")->required();
  gen_cmd->add_option("-p,--prompt", prompt, "prompt text");
  gen_cmd->add_option("--ledger", ledger_path, "write the KV traffic ledger as JSON");

  auto* params_cmd = app.add_subcommand("params", "parameter breakdown of the presets");
  params_cmd->add_option("presets", presets, "vanilla-600m, vanilla-1.2b, photon-600m, photon-1.2b");
  params_cmd->add_flag("--json", json_out, "JSON output");

  auto* bench_cmd = app.add_subcommand("bench", "counted KV cost of prefill- and decode-heavy runs");
  add_common(bench_cmd, common);
  bench_cmd->add_option("--regime", regime, "PF, DE or both");
  bench_cmd->add_flag("--long", long_lengths, "2048/128 and 128/2048 instead of 512/32 and 32/512");
  bench_cmd->add_option("--prompt", prompt_len, "prompt length override");
  bench_cmd->add_option("--gen", gen_len, "generated length override");
  bench_cmd->add_option("--csv", csv_path, "CSV report path (stdout if omitted)");
  bench_cmd->add_option("--json", json_path, "JSON report path");

  std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*ingest) return cmd_ingest(inputs, out_path, out);
    if (*train_cmd) return cmd_train(common, corpus_path, ckpt_path, metrics_path, out);
    if (*eval_cmd) return cmd_eval(common, ckpt_path, corpus_path, out);
    if (*gen_cmd) return cmd_generate(common, ckpt_path, prompt, ledger_path, out);
    if (*params_cmd) return cmd_params(presets, json_out, out);
    if (*bench_cmd) return cmd_bench(common, regime, long_lengths, prompt_len, gen_len, csv_path, json_path, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace photon
