#include "lmr/model.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "lmr/errors.hpp"
#include "lmr/rng.hpp"
#include "lmr/vocab.hpp"

namespace lmr {
namespace {

constexpr char kProj[4] = {'q', 'k', 'v', 'o'};

std::string lname(int l, const std::string& suffix) {
  return "layer" + std::to_string(l) + "." + suffix;
}

std::vector<uint8_t> causal_mask(int n) {
  std::vector<uint8_t> m(size_t(n) * size_t(n), 0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) m[size_t(i) * n + j] = 1;
  return m;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

const char* seg_tag_name(SegTag t) {
  switch (t) {
    case SegTag::question: return "question";
    case SegTag::visual: return "visual";
    case SegTag::visual_latent: return "visual_latent";
    case SegTag::thought_latent: return "thought_latent";
    case SegTag::cot: return "cot";
    case SegTag::answer: return "answer";
  }
  throw UsageError("bad segment tag");
}

void ModelConfig::validate() const {
  std::vector<std::string> bad;
  auto check = [&](bool ok, const std::string& msg) {
    if (!ok) bad.push_back(msg);
  };
  check(layers >= 1, "model.layers must be at least 1");
  check(heads >= 1, "model.heads must be at least 1");
  check(d >= 4, "model.d must be at least 4");
  check(heads >= 1 && d % std::max(1, heads) == 0, "model.d must be divisible by model.heads");
  check(d % 4 == 0, "model.d must be divisible by 4 (router hidden width d/4)");
  check(rank >= 1 && rank <= d, "model.rank must be in [1, d]");
  check(vocab == 0 || vocab >= 2, "model.vocab must be 0 (built-in) or at least 2");
  check(patch_grid >= 1, "model.patch_grid must be at least 1");
  check(image_side >= 1 && patch_grid >= 1 && image_side % std::max(1, patch_grid) == 0,
        "model.image_side must be a positive multiple of model.patch_grid");
  check(mlp_mult >= 1, "model.mlp_mult must be at least 1");
  check(max_seq >= 1, "model.max_seq must be at least 1");
  check(latent_steps >= 0, "model.latent_steps must be non-negative");
  check(scfvr.topk >= 1 && scfvr.topk <= patches(),
        "scfvr.topk must be in [1, patch_grid^2]");
  check(scfvr.window >= 1 && scfvr.window <= patch_grid,
        "scfvr.window must be in [1, patch_grid]");
  check(scfvr.lambda >= 0.0, "scfvr.lambda must be non-negative");
  check(rds.depth >= 0, "rds.depth must be non-negative");
  check(rds.schedule == "fixed" || rds.schedule == "cosine",
        "rds.schedule must be 'fixed' or 'cosine'");
  check(rds.alpha >= 1, "rds.alpha must be at least 1");
  check(rds.alpha_start >= rds.alpha_end && rds.alpha_end >= 1,
        "rds.alpha_start must be >= rds.alpha_end >= 1");
  if (!bad.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& b : bad) msg += "\n  - " + b;
    throw UsageError(msg);
  }
}

std::map<std::string, std::string> ModelConfig::to_kv() const {
  std::map<std::string, std::string> kv;
  kv["model.layers"] = std::to_string(layers);
  kv["model.heads"] = std::to_string(heads);
  kv["model.d"] = std::to_string(d);
  kv["model.rank"] = std::to_string(rank);
  kv["model.vocab"] = std::to_string(vocab);
  kv["model.patch_grid"] = std::to_string(patch_grid);
  kv["model.image_side"] = std::to_string(image_side);
  kv["model.mlp_mult"] = std::to_string(mlp_mult);
  kv["model.max_seq"] = std::to_string(max_seq);
  kv["model.latent_steps"] = std::to_string(latent_steps);
  kv["model.dtype"] = dtype_name(dtype);
  kv["model.seed"] = std::to_string(seed);
  kv["scfvr.topk"] = std::to_string(scfvr.topk);
  kv["scfvr.window"] = std::to_string(scfvr.window);
  kv["scfvr.lambda"] = fmt_double(scfvr.lambda);
  kv["scfvr.count_visited"] = scfvr.count_visited ? "1" : "0";
  kv["rds.enabled"] = rds.enabled ? "1" : "0";
  kv["rds.depth"] = std::to_string(rds.depth);
  kv["rds.schedule"] = rds.schedule;
  kv["rds.alpha"] = std::to_string(rds.alpha);
  kv["rds.alpha_start"] = std::to_string(rds.alpha_start);
  kv["rds.alpha_end"] = std::to_string(rds.alpha_end);
  kv["rds.attend_full"] = rds.attend_full ? "1" : "0";
  return kv;
}

ModelConfig ModelConfig::from_kv(const std::map<std::string, std::string>& kv) {
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw DataError("checkpoint: missing config key '" + key + "'");
    return it->second;
  };
  auto geti = [&](const std::string& key) {
    try {
      return std::stoi(get(key));
    } catch (const std::logic_error&) {
      throw DataError("checkpoint: config key '" + key + "' is not an integer");
    }
  };
  auto getd = [&](const std::string& key) {
    try {
      return std::stod(get(key));
    } catch (const std::logic_error&) {
      throw DataError("checkpoint: config key '" + key + "' is not a number");
    }
  };
  auto getb = [&](const std::string& key) { return get(key) == "1"; };
  ModelConfig c;
  c.layers = geti("model.layers");
  c.heads = geti("model.heads");
  c.d = geti("model.d");
  c.rank = geti("model.rank");
  c.vocab = geti("model.vocab");
  c.patch_grid = geti("model.patch_grid");
  c.image_side = geti("model.image_side");
  c.mlp_mult = geti("model.mlp_mult");
  c.max_seq = geti("model.max_seq");
  c.latent_steps = geti("model.latent_steps");
  c.dtype = dtype_from_name(get("model.dtype"));
  c.seed = std::stoull(get("model.seed"));
  c.scfvr.topk = geti("scfvr.topk");
  c.scfvr.window = geti("scfvr.window");
  c.scfvr.lambda = getd("scfvr.lambda");
  c.scfvr.count_visited = getb("scfvr.count_visited");
  c.rds.enabled = getb("rds.enabled");
  c.rds.depth = geti("rds.depth");
  c.rds.schedule = get("rds.schedule");
  c.rds.alpha = geti("rds.alpha");
  c.rds.alpha_start = geti("rds.alpha_start");
  c.rds.alpha_end = geti("rds.alpha_end");
  c.rds.attend_full = getb("rds.attend_full");
  c.validate();
  return c;
}

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.vocab == 0) cfg_.vocab = vocab::size();
  cfg_.validate();
  auto reg = [&](const std::string& name, Tensor t) {
    t.impl->name = name;
    t.impl->requires_grad = true;
    params_.emplace_back(name, t);
    by_name_.emplace(name, t);
    return t;
  };
  auto randn = [&](const std::string& name, std::vector<int> shape, double stdev) {
    Rng r = Rng::sub(cfg_.seed, "init." + name);
    return reg(name, Tensor::randn(std::move(shape), r, stdev, cfg_.dtype));
  };
  auto zeros = [&](const std::string& name, std::vector<int> shape) {
    return reg(name, Tensor::zeros(std::move(shape), cfg_.dtype));
  };
  auto ones = [&](const std::string& name, std::vector<int> shape) {
    return reg(name, Tensor::full(std::move(shape), 1.0, cfg_.dtype));
  };

  int d = cfg_.d, r = cfg_.rank, hid = d * cfg_.mlp_mult, rh = d / 4;
  double sd = 1.0 / std::sqrt(double(d));
  tok_emb_ = randn("tok_emb", {cfg_.vocab, d}, 0.02);
  pos_emb_ = randn("pos_emb", {cfg_.max_seq, d}, 0.02);
  patch_w_ = randn("patch.w", {cfg_.patch_dim(), d}, 1.0 / std::sqrt(double(cfg_.patch_dim())));
  patch_b_ = zeros("patch.b", {d});
  for (int l = 0; l < cfg_.layers; ++l) {
    Layer lay;
    lay.ln1 = ones(lname(l, "ln1.g"), {d});
    lay.ln2 = ones(lname(l, "ln2.g"), {d});
    for (int p = 0; p < 4; ++p) {
      std::string stem = lname(l, std::string("attn.") + kProj[p]);
      lay.base[p] = randn(stem + ".base", {d, d}, sd);
      lay.lr_a[p] = randn(stem + ".a", {d, r}, sd);
      lay.lr_b[p] = zeros(stem + ".b", {r, d});
    }
    lay.mlp_w1 = randn(lname(l, "mlp.w1"), {d, hid}, sd);
    lay.mlp_b1 = zeros(lname(l, "mlp.b1"), {hid});
    lay.mlp_w2 = randn(lname(l, "mlp.w2"), {hid, d}, 1.0 / std::sqrt(double(hid)));
    lay.mlp_b2 = zeros(lname(l, "mlp.b2"), {d});
    lay.router.w1 = randn(lname(l, "router.w1"), {d, rh}, sd);
    lay.router.b1 = zeros(lname(l, "router.b1"), {rh});
    lay.router.w2 = randn(lname(l, "router.w2"), {rh, 1}, 1.0 / std::sqrt(double(rh)));
    lay.router.b2 = zeros(lname(l, "router.b2"), {1});
    for (int dep = 1; dep <= cfg_.rds.depth; ++dep)
      lay.e.push_back(zeros(lname(l, "rds.e" + std::to_string(dep)), {d}));
    layers_.push_back(std::move(lay));
  }
  final_ln_ = ones("final_ln.g", {d});
  unembed_ = randn("unembed", {d, cfg_.vocab}, sd);
  std::vector<double> eye(size_t(d) * size_t(d), 0.0);
  for (int i = 0; i < d; ++i) eye[size_t(i) * d + i] = 1.0;
  sr_w_ = reg("sr.w", Tensor::from_vec({d, d}, eye, cfg_.dtype));
}

Tensor Model::param(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw UsageError("unknown parameter '" + name + "'");
  return it->second;
}

void Model::zero_grads() {
  for (auto& [name, t] : params_) t.zero_grad();
}

void Model::freeze_base_qkvo() {
  for (auto& [name, t] : params_)
    if (name.size() > 5 && name.compare(name.size() - 5, 5, ".base") == 0 &&
        name.find(".attn.") != std::string::npos) {
      t.impl->requires_grad = false;
      t.zero_grad();
    }
}

bool Model::base_frozen() const {
  for (const auto& [name, t] : params_)
    if (name.size() > 5 && name.find(".attn.") != std::string::npos &&
        name.compare(name.size() - 5, 5, ".base") == 0)
      return !t.impl->requires_grad;
  return false;
}

Tensor Model::embed_tokens(const std::vector<int>& ids) const {
  for (int id : ids)
    if (id < 0 || id >= cfg_.vocab)
      throw DataError("embed: token id " + std::to_string(id) + " out of vocabulary");
  return gather_rows(tok_emb_, ids);
}

Tensor Model::encode_image(const Image& img) const {
  if (img.side != cfg_.image_side)
    throw DataError("encode_image: image side " + std::to_string(img.side) + " != configured " +
                    std::to_string(cfg_.image_side));
  int g = cfg_.patch_grid, cell = cfg_.cell(), pd = cfg_.patch_dim();
  std::vector<double> patches(size_t(g) * g * size_t(pd));
  for (int pr = 0; pr < g; ++pr)
    for (int pc = 0; pc < g; ++pc) {
      double* out = &patches[(size_t(pr) * g + pc) * size_t(pd)];
      int o = 0;
      for (int y = 0; y < cell; ++y)
        for (int x = 0; x < cell; ++x)
          for (int ch = 0; ch < 3; ++ch)
            out[o++] = img.at(pr * cell + y, pc * cell + x, ch);
    }
  Tensor pm = Tensor::from_vec({g * g, pd}, patches, cfg_.dtype);
  return add_rowvec(matmul(pm, patch_w_), patch_b_);
}

Tensor Model::eff_proj(int l, int which) const {
  const Layer& lay = layers_[size_t(l)];
  return add(lay.base[which], matmul(lay.lr_a[which], lay.lr_b[which]));
}

Tensor Model::attend(int l, const Tensor& q_rows, const Tensor& kv_rows,
                     const std::vector<uint8_t>& mask, std::vector<Tensor>* trace) const {
  Tensor q = matmul(q_rows, eff_proj(l, 0));
  Tensor k = matmul(kv_rows, eff_proj(l, 1));
  Tensor v = matmul(kv_rows, eff_proj(l, 2));
  int dh = cfg_.head_dim();
  std::vector<Tensor> mixes;
  for (int h = 0; h < cfg_.heads; ++h) {
    auto mp = masked_attention(slice_cols(q, h * dh, (h + 1) * dh),
                               slice_cols(k, h * dh, (h + 1) * dh),
                               slice_cols(v, h * dh, (h + 1) * dh), mask);
    if (trace) trace->push_back(mp.second);
    mixes.push_back(mp.first);
  }
  Tensor mixed = cfg_.heads == 1 ? mixes[0] : concat_cols(mixes);
  return matmul(mixed, eff_proj(l, 3));
}

Tensor Model::mlp_half(int l, const Tensor& x1) const {
  const Layer& lay = layers_[size_t(l)];
  Tensor x1n = rmsnorm(x1, lay.ln2);
  Tensor h = tanh(add_rowvec(matmul(x1n, lay.mlp_w1), lay.mlp_b1));
  return add(x1, add_rowvec(matmul(h, lay.mlp_w2), lay.mlp_b2));
}

Tensor Model::block(int l, const Tensor& x, const std::vector<uint8_t>& mask,
                    std::vector<Tensor>* trace) const {
  Tensor xn = rmsnorm(x, layers_[size_t(l)].ln1);
  Tensor x1 = add(x, attend(l, xn, xn, mask, trace));
  return mlp_half(l, x1);
}

Tensor Model::refine_rows(int l, const Tensor& h_prev, const std::vector<int>& idx) const {
  int k = int(idx.size());
  if (k == 0) throw UsageError("refine: empty selection");
  if (!cfg_.rds.attend_full) {
    Tensor sub = gather_rows(h_prev, idx);
    return block(l, sub, causal_mask(k), nullptr);
  }
  int p = h_prev.dim(0);
  Tensor xn = rmsnorm(h_prev, layers_[size_t(l)].ln1);
  std::vector<uint8_t> mask(size_t(k) * size_t(p), 0);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j <= idx[size_t(i)]; ++j) mask[size_t(i) * p + j] = 1;
  Tensor attn_out = attend(l, gather_rows(xn, idx), xn, mask, nullptr);
  Tensor x1 = add(gather_rows(h_prev, idx), attn_out);
  return mlp_half(l, x1);
}

ForwardResult Model::forward(const Tensor& content, const std::vector<SegTag>& tags,
                             const ForwardOptions& opts) const {
  if (content.rank() != 2 || content.dim(1) != cfg_.d)
    throw UsageError("forward: content must be [P, d]");
  int p = content.dim(0);
  if (p < 1) throw UsageError("forward: empty sequence");
  if (int(tags.size()) != p) throw UsageError("forward: segment tags do not cover the sequence");
  if (p > cfg_.max_seq)
    throw UsageError("forward: sequence length " + std::to_string(p) + " exceeds max_seq " +
                     std::to_string(cfg_.max_seq));
  ForwardResult res;
  Tensor x = add(content, slice_rows(pos_emb_, 0, p));
  res.states.push_back(x);
  std::vector<uint8_t> mask = causal_mask(p);
  bool route = opts.router && cfg_.rds.enabled && cfg_.rds.depth > 0;
  for (int l = 0; l < cfg_.layers; ++l) {
    Tensor h = block(l, x, mask, opts.trace ? &res.attn : nullptr);
    if (route) {
      auto pr = rds::pipeline(
          h, layers_[size_t(l)].router, layers_[size_t(l)].e, l, cfg_.layers, cfg_.rds,
          [&, l](const Tensor& hp, const std::vector<int>& idx) { return refine_rows(l, hp, idx); });
      h = pr.h;
      res.rds_rows.insert(res.rds_rows.end(), pr.rows.begin(), pr.rows.end());
    }
    x = h;
    res.states.push_back(x);
  }
  res.hidden = rmsnorm(x, final_ln_);
  res.logits = matmul(res.hidden, unembed_);
  return res;
}

namespace {

void put_bytes(std::ofstream& out, const void* p, size_t n) {
  out.write(reinterpret_cast<const char*>(p), std::streamsize(n));
}
void put_u32(std::ofstream& out, uint32_t v) { put_bytes(out, &v, 4); }
void put_u64(std::ofstream& out, uint64_t v) { put_bytes(out, &v, 8); }
void put_str(std::ofstream& out, const std::string& s) {
  put_u32(out, uint32_t(s.size()));
  put_bytes(out, s.data(), s.size());
}

void get_bytes(std::ifstream& in, void* p, size_t n, const std::string& path) {
  in.read(reinterpret_cast<char*>(p), std::streamsize(n));
  if (in.gcount() != std::streamsize(n)) throw DataError(path + ": truncated checkpoint");
}
uint32_t get_u32(std::ifstream& in, const std::string& path) {
  uint32_t v = 0;
  get_bytes(in, &v, 4, path);
  return v;
}
uint64_t get_u64(std::ifstream& in, const std::string& path) {
  uint64_t v = 0;
  get_bytes(in, &v, 8, path);
  return v;
}
std::string get_str(std::ifstream& in, const std::string& path) {
  uint32_t n = get_u32(in, path);
  if (n > (1u << 20)) throw DataError(path + ": unreasonable string length in checkpoint");
  std::string s(n, '\0');
  get_bytes(in, s.data(), n, path);
  return s;
}

constexpr char kMagic[8] = {'L', 'M', 'R', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kVersion = 1;

}  // namespace

void Model::save_checkpoint(const std::string& path,
                            const std::map<std::string, std::string>& extra_kv,
                            const std::vector<std::pair<std::string, Tensor>>& extra_tensors) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  put_bytes(out, kMagic, 8);
  put_u32(out, kVersion);
  std::map<std::string, std::string> kv = cfg_.to_kv();
  for (const auto& [k, v] : extra_kv) {
    if (kv.count(k)) throw UsageError("checkpoint: extra key '" + k + "' collides with config");
    kv[k] = v;
  }
  put_u32(out, uint32_t(kv.size()));
  for (const auto& [k, v] : kv) {
    put_str(out, k);
    put_str(out, v);
  }
  put_u32(out, uint32_t(params_.size() + extra_tensors.size()));
  auto put_tensor = [&](const std::string& name, const Tensor& t) {
    put_str(out, name);
    uint8_t dt = t.dtype() == DType::f32 ? 0 : 1;
    put_bytes(out, &dt, 1);
    put_u32(out, uint32_t(t.rank()));
    for (int i = 0; i < t.rank(); ++i) put_u32(out, uint32_t(t.dim(i)));
    put_u64(out, uint64_t(t.impl->data.size()));
    put_bytes(out, t.impl->data.data(), t.impl->data.size());
  };
  for (const auto& [name, t] : params_) put_tensor(name, t);
  for (const auto& [name, t] : extra_tensors) put_tensor(name, t);
  out.flush();
  if (!out) throw DataError("write to '" + path + "' failed");
}

const Tensor* CheckpointData::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  char magic[8];
  get_bytes(in, magic, 8, path);
  if (std::memcmp(magic, kMagic, 8) != 0) throw DataError(path + ": not a checkpoint file");
  uint32_t ver = get_u32(in, path);
  if (ver != kVersion)
    throw DataError(path + ": unsupported checkpoint version " + std::to_string(ver));
  CheckpointData ck;
  uint32_t nkv = get_u32(in, path);
  for (uint32_t i = 0; i < nkv; ++i) {
    std::string k = get_str(in, path);
    ck.kv[k] = get_str(in, path);
  }
  uint32_t nt = get_u32(in, path);
  for (uint32_t i = 0; i < nt; ++i) {
    std::string name = get_str(in, path);
    uint8_t dtc = 0;
    get_bytes(in, &dtc, 1, path);
    if (dtc > 1) throw DataError(path + ": bad dtype code");
    DType dt = dtc == 0 ? DType::f32 : DType::f64;
    uint32_t rank = get_u32(in, path);
    if (rank > 4) throw DataError(path + ": unreasonable tensor rank");
    std::vector<int> shape;
    size_t numel = 1;
    for (uint32_t r = 0; r < rank; ++r) {
      uint32_t dim = get_u32(in, path);
      shape.push_back(int(dim));
      numel *= dim;
    }
    uint64_t bytes = get_u64(in, path);
    if (bytes != numel * dtype_size(dt)) throw DataError(path + ": tensor payload size mismatch");
    Tensor t = Tensor::zeros(shape, dt);
    get_bytes(in, t.impl->data.data(), size_t(bytes), path);
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ck;
}

Model load_model(const CheckpointData& ck) {
  ModelConfig cfg = ModelConfig::from_kv(ck.kv);
  Model m(cfg);
  for (auto& [name, t] : m.params()) {
    const Tensor* src = ck.find(name);
    if (!src) throw DataError("checkpoint: missing tensor '" + name + "'");
    if (src->dtype() != t.dtype() || src->shape() != t.shape())
      throw DataError("checkpoint: tensor '" + name + "' has wrong shape or dtype");
    t.impl->data = src->impl->data;
  }
  return m;
}

}  // namespace lmr
