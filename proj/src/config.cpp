#include "lmr/config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <vector>

#include "lmr/errors.hpp"

namespace lmr {
namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

struct Setter {
  const char* section;
  const char* key;
  std::function<void(RunConfig&, const std::string&)> apply;  // throws UsageError on bad value
};

long long to_int(const std::string& v) {
  size_t pos = 0;
  long long r = 0;
  try {
    r = std::stoll(v, &pos);
  } catch (const std::exception&) {
    throw UsageError("not an integer: '" + v + "'");
  }
  if (pos != v.size()) throw UsageError("not an integer: '" + v + "'");
  return r;
}

unsigned long long to_uint(const std::string& v) {
  size_t pos = 0;
  unsigned long long r = 0;
  try {
    r = std::stoull(v, &pos);
  } catch (const std::exception&) {
    throw UsageError("not a non-negative integer: '" + v + "'");
  }
  if (pos != v.size() || (!v.empty() && v[0] == '-'))
    throw UsageError("not a non-negative integer: '" + v + "'");
  return r;
}

double to_double(const std::string& v) {
  size_t pos = 0;
  double r = 0;
  try {
    r = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw UsageError("not a number: '" + v + "'");
  }
  if (pos != v.size()) throw UsageError("not a number: '" + v + "'");
  return r;
}

bool to_bool(const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw UsageError("not a boolean (true|false): '" + v + "'");
}

std::string unquote(const std::string& v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
  return v;
}

const std::vector<Setter>& setters() {
  static const std::vector<Setter> s = {
      {"model", "layers", [](RunConfig& c, const std::string& v) { c.model.layers = int(to_int(v)); }},
      {"model", "heads", [](RunConfig& c, const std::string& v) { c.model.heads = int(to_int(v)); }},
      {"model", "d", [](RunConfig& c, const std::string& v) { c.model.d = int(to_int(v)); }},
      {"model", "rank", [](RunConfig& c, const std::string& v) { c.model.rank = int(to_int(v)); }},
      {"model", "patch_grid",
       [](RunConfig& c, const std::string& v) { c.model.patch_grid = int(to_int(v)); }},
      {"model", "image_side",
       [](RunConfig& c, const std::string& v) { c.model.image_side = int(to_int(v)); }},
      {"model", "mlp_mult",
       [](RunConfig& c, const std::string& v) { c.model.mlp_mult = int(to_int(v)); }},
      {"model", "max_seq",
       [](RunConfig& c, const std::string& v) { c.model.max_seq = int(to_int(v)); }},
      {"model", "latent_steps",
       [](RunConfig& c, const std::string& v) { c.model.latent_steps = int(to_int(v)); }},
      {"model", "dtype",
       [](RunConfig& c, const std::string& v) {
         std::string u = unquote(v);
         if (u != "f32" && u != "f64") throw UsageError("dtype must be f32 or f64");
         c.model.dtype = dtype_from_name(u);
       }},
      {"scfvr", "topk", [](RunConfig& c, const std::string& v) { c.model.scfvr.topk = int(to_int(v)); }},
      {"scfvr", "window",
       [](RunConfig& c, const std::string& v) { c.model.scfvr.window = int(to_int(v)); }},
      {"scfvr", "lambda",
       [](RunConfig& c, const std::string& v) { c.model.scfvr.lambda = to_double(v); }},
      {"scfvr", "count_visited",
       [](RunConfig& c, const std::string& v) { c.model.scfvr.count_visited = to_bool(v); }},
      {"rds", "enabled", [](RunConfig& c, const std::string& v) { c.model.rds.enabled = to_bool(v); }},
      {"rds", "depth", [](RunConfig& c, const std::string& v) { c.model.rds.depth = int(to_int(v)); }},
      {"rds", "schedule",
       [](RunConfig& c, const std::string& v) { c.model.rds.schedule = unquote(v); }},
      {"rds", "alpha", [](RunConfig& c, const std::string& v) { c.model.rds.alpha = int(to_int(v)); }},
      {"rds", "alpha_start",
       [](RunConfig& c, const std::string& v) { c.model.rds.alpha_start = int(to_int(v)); }},
      {"rds", "alpha_end",
       [](RunConfig& c, const std::string& v) { c.model.rds.alpha_end = int(to_int(v)); }},
      {"rds", "attend_full",
       [](RunConfig& c, const std::string& v) { c.model.rds.attend_full = to_bool(v); }},
      {"train", "epochs", [](RunConfig& c, const std::string& v) { c.train.epochs = int(to_int(v)); }},
      {"train", "lr", [](RunConfig& c, const std::string& v) { c.train.lr = to_double(v); }},
      {"train", "beta1", [](RunConfig& c, const std::string& v) { c.train.beta1 = to_double(v); }},
      {"train", "beta2", [](RunConfig& c, const std::string& v) { c.train.beta2 = to_double(v); }},
      {"train", "eps", [](RunConfig& c, const std::string& v) { c.train.eps = to_double(v); }},
      {"train", "batch", [](RunConfig& c, const std::string& v) { c.train.batch = int(to_int(v)); }},
      {"train", "seed", [](RunConfig& c, const std::string& v) { c.train.seed = to_uint(v); }},
      {"train", "mode", [](RunConfig& c, const std::string& v) { c.train.mode = unquote(v); }},
      {"train", "val_subset",
       [](RunConfig& c, const std::string& v) { c.train.val_subset = int(to_int(v)); }},
      {"train", "probe_subset",
       [](RunConfig& c, const std::string& v) { c.train.probe_subset = int(to_int(v)); }},
      {"train", "early_checkpoints",
       [](RunConfig& c, const std::string& v) { c.train.early_checkpoints = int(to_int(v)); }},
      {"train", "force_stage",
       [](RunConfig& c, const std::string& v) { c.train.force_stage = int(to_int(v)); }},
      {"train", "diag_every",
       [](RunConfig& c, const std::string& v) { c.train.diag_every = int(to_int(v)); }},
      {"train", "threads",
       [](RunConfig& c, const std::string& v) { c.train.threads = int(to_int(v)); }},
      {"train", "stop_after",
       [](RunConfig& c, const std::string& v) { c.train.stop_after = int(to_int(v)); }},
      {"paths", "data", [](RunConfig& c, const std::string& v) { c.paths.data = unquote(v); }},
      {"paths", "val_data",
       [](RunConfig& c, const std::string& v) { c.paths.val_data = unquote(v); }},
      {"paths", "out_dir",
       [](RunConfig& c, const std::string& v) { c.paths.out_dir = unquote(v); }},
  };
  return s;
}

const Setter* find_setter(const std::string& section, const std::string& key) {
  for (const Setter& s : setters())
    if (section == s.section && key == s.key) return &s;
  return nullptr;
}

void apply_env(RunConfig& cfg, std::vector<std::string>& errors) {
  for (const Setter& s : setters()) {
    std::string var = "LMR_";
    for (const char* p = s.section; *p; ++p) var += char(std::toupper(*p));
    var += '_';
    for (const char* p = s.key; *p; ++p) var += char(std::toupper(*p));
    const char* v = std::getenv(var.c_str());
    if (!v) continue;
    try {
      s.apply(cfg, v);
    } catch (const UsageError& e) {
      errors.push_back(var + ": " + e.what());
    }
  }
}

void finish(RunConfig& cfg, std::vector<std::string>& errors) {
  apply_env(cfg, errors);
  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const std::string& e : errors) msg += "\n  - " + e;
    throw UsageError(msg);
  }
  cfg.model.seed = cfg.train.seed;
  cfg.model.validate();
  cfg.train.validate();
}

}  // namespace

RunConfig parse_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path);
  RunConfig cfg;
  std::vector<std::string> errors;
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::string t = trim(line);
    if (t.empty()) continue;
    std::string where = path + ":" + std::to_string(lineno);
    if (t.front() == '[') {
      if (t.back() != ']') {
        errors.push_back(where + ": malformed section header '" + t + "'");
        continue;
      }
      section = trim(t.substr(1, t.size() - 2));
      bool known = false;
      for (const Setter& s : setters()) known = known || section == s.section;
      if (!known) errors.push_back(where + ": unknown section [" + section + "]");
      continue;
    }
    size_t eq = t.find('=');
    if (eq == std::string::npos) {
      errors.push_back(where + ": expected key = value, got '" + t + "'");
      continue;
    }
    std::string key = trim(t.substr(0, eq));
    std::string val = trim(t.substr(eq + 1));
    if (section.empty()) {
      errors.push_back(where + ": key '" + key + "' outside any section");
      continue;
    }
    const Setter* s = find_setter(section, key);
    if (!s) {
      errors.push_back(where + ": unknown key " + section + "." + key);
      continue;
    }
    try {
      s->apply(cfg, val);
    } catch (const UsageError& e) {
      errors.push_back(where + ": " + section + "." + key + ": " + e.what());
    }
  }
  finish(cfg, errors);
  return cfg;
}

RunConfig default_run_config() {
  RunConfig cfg;
  std::vector<std::string> errors;
  finish(cfg, errors);
  return cfg;
}

}  // namespace lmr
