#include "photon/config.h"

#include <fstream>
#include <regex>
#include <sstream>

namespace photon {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

const std::vector<std::regex>& schema() {
  static const std::vector<std::regex> keys = [] {
    std::vector<std::regex> k;
    for (const char* p : {
             R"(model\.(kind|vocab|levels|embed_dim|dec_embed_dim|seed))",
             R"(model\.(chunk|dim|converter|chunker)\.[1-9][0-9]*)",
             R"(model\.(enc|dec)\.(layers|heads|intermediate)\.[1-9][0-9]*)",
             R"(model\.flat\.(dim|layers|heads|intermediate))",
             R"(train\.(lr|warmup|batch|context|seed|steps|alpha|beta|beta1|beta2|eps|checkpoint_every|stop_target_grad|dissimilarity))",
             R"(bench\.(regime|prompt|gen|seed))",
             R"(generate\.(temperature|seed|max_tokens))",
             R"(eval\.(context|heldout_fraction))",
         }) {
      k.emplace_back(p);
    }
    return k;
  }();
  return keys;
}

}  // namespace

ConfigFile ConfigFile::parse(const std::string& text, const std::string& origin) {
  ConfigFile cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
    }
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

ConfigFile ConfigFile::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str(), path);
}

void ConfigFile::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void ConfigFile::set(const std::string& key, const std::string& value) {
  if (key.empty()) throw ConfigError("empty config key");
  values_[key] = value;
}

std::string ConfigFile::get_string(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

std::string ConfigFile::require_string(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(key + ": required key is missing");
  return it->second;
}

std::uint64_t ConfigFile::get_u64(const std::string& key, std::uint64_t fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& v = it->second;
  std::size_t used = 0;
  unsigned long long x = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    x = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return x;
}

std::size_t ConfigFile::get_size(const std::string& key, std::size_t fallback) const {
  return static_cast<std::size_t>(get_u64(key, fallback));
}

std::size_t ConfigFile::require_size(const std::string& key) const {
  if (!has(key)) throw ConfigError(key + ": required key is missing");
  return get_size(key, 0);
}

real ConfigFile::get_real(const std::string& key, real fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& v = it->second;
  std::size_t used = 0;
  double x = 0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return static_cast<real>(x);
}

bool ConfigFile::get_bool(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

void ConfigFile::validate_keys() const {
  for (const auto& [k, v] : values_) {
    bool ok = false;
    for (const auto& re : schema()) ok = ok || std::regex_match(k, re);
    if (!ok) throw ConfigError(k + ": unknown config key");
  }
}

std::string ConfigFile::to_text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

Dissimilarity parse_dissimilarity(const std::string& s) {
  if (s == "mse") return Dissimilarity::mse;
  if (s == "cosine") return Dissimilarity::cosine;
  throw ConfigError("train.dissimilarity: expected mse or cosine, got '" + s + "'");
}

namespace {

BlockConfig parse_block(const ConfigFile& cfg, const std::string& side, std::size_t l, std::size_t width) {
  const std::string n = std::to_string(l);
  BlockConfig b;
  b.hidden_dim = width;
  b.n_layers = cfg.get_size("model." + side + ".layers." + n, 1);
  b.n_heads = cfg.get_size("model." + side + ".heads." + n, 1);
  b.intermediate_dim = cfg.get_size("model." + side + ".intermediate." + n, 4 * width);
  if (b.n_heads == 0 || width % b.n_heads != 0) {
    throw ConfigError("model." + side + ".heads." + n + ": " + std::to_string(b.n_heads) + " heads do not divide width " +
                      std::to_string(width));
  }
  b.head_dim = width / b.n_heads;
  return b;
}

}  // namespace

ModelSpec parse_model(const ConfigFile& cfg) {
  cfg.validate_keys();
  ModelSpec spec;
  spec.kind = cfg.get_string("model.kind", "photon");
  const std::size_t vocab = cfg.get_size("model.vocab", 258);
  if (spec.kind == "flat") {
    auto& f = spec.flat;
    f.vocab_size = vocab;
    f.dim = cfg.require_size("model.flat.dim");
    f.n_layers = cfg.get_size("model.flat.layers", 1);
    f.n_heads = cfg.get_size("model.flat.heads", 1);
    f.intermediate_dim = cfg.get_size("model.flat.intermediate", 4 * f.dim);
    f.validate();
    return spec;
  }
  if (spec.kind != "photon") throw ConfigError("model.kind: expected photon or flat, got '" + spec.kind + "'");
  auto& h = spec.photon;
  h.vocab_size = vocab;
  const std::size_t levels = cfg.get_size("model.levels", 2);
  if (levels == 0) throw ConfigError("model.levels: must be positive");
  h.levels.resize(levels);
  for (std::size_t l = 1; l <= levels; ++l) {
    const std::string n = std::to_string(l);
    auto& lv = h.levels[l - 1];
    lv.chunk = cfg.get_size("model.chunk." + n, 4);
    lv.converter_rows = cfg.get_size("model.converter." + n, 2);
    lv.dim = cfg.require_size("model.dim." + n);
    const std::string kind = cfg.get_string("model.chunker." + n, l == 1 ? "concat" : "linear");
    if (kind == "concat") {
      lv.chunker = ChunkerKind::concat;
    } else if (kind == "linear") {
      lv.chunker = ChunkerKind::linear;
    } else {
      throw ConfigError("model.chunker." + n + ": expected concat or linear, got '" + kind + "'");
    }
  }
  const auto& first = h.levels[0];
  const std::size_t default_embed =
      first.chunker == ChunkerKind::concat && first.dim % first.chunk == 0 ? first.dim / first.chunk : first.dim;
  h.embed_dim = cfg.get_size("model.embed_dim", default_embed);
  h.dec_embed_dim = cfg.get_size("model.dec_embed_dim", first.dim);
  for (std::size_t l = 1; l <= levels; ++l) {
    auto& lv = h.levels[l - 1];
    lv.encoder = parse_block(cfg, "enc", l, lv.dim);
    lv.decoder = parse_block(cfg, "dec", l, h.decoder_width(l));
  }
  h.validate();
  return spec;
}

ConfigFile model_config(const ModelSpec& spec) {
  ConfigFile c;
  auto num = [](std::size_t v) { return std::to_string(v); };
  c.set("model.kind", spec.kind);
  if (spec.kind == "flat") {
    const auto& f = spec.flat;
    c.set("model.vocab", num(f.vocab_size));
    c.set("model.flat.dim", num(f.dim));
    c.set("model.flat.layers", num(f.n_layers));
    c.set("model.flat.heads", num(f.n_heads));
    c.set("model.flat.intermediate", num(f.intermediate_dim));
    return c;
  }
  const auto& h = spec.photon;
  c.set("model.vocab", num(h.vocab_size));
  c.set("model.levels", num(h.num_levels()));
  c.set("model.embed_dim", num(h.embed_dim));
  c.set("model.dec_embed_dim", num(h.dec_embed_dim));
  for (std::size_t l = 1; l <= h.num_levels(); ++l) {
    const std::string n = num(l);
    const auto& lv = h.level(l);
    c.set("model.chunk." + n, num(lv.chunk));
    c.set("model.converter." + n, num(lv.converter_rows));
    c.set("model.dim." + n, num(lv.dim));
    c.set("model.chunker." + n, lv.chunker == ChunkerKind::concat ? "concat" : "linear");
    for (const auto& [side, b] : {std::pair<std::string, BlockConfig>{"enc", lv.encoder}, {"dec", lv.decoder}}) {
      c.set("model." + side + ".layers." + n, num(b.n_layers));
      c.set("model." + side + ".heads." + n, num(b.n_heads));
      c.set("model." + side + ".intermediate." + n, num(b.intermediate_dim));
    }
  }
  return c;
}

}  // namespace photon
