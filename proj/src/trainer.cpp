#include "lmr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>

#include "lmr/diagnostics.hpp"
#include "lmr/errors.hpp"
#include "lmr/ops.hpp"
#include "lmr/vocab.hpp"

namespace lmr {

void TrainConfig::validate() const {
  std::vector<std::string> bad;
  if (epochs < 1) bad.push_back("train.epochs must be >= 1");
  if (!(lr > 0)) bad.push_back("train.lr must be positive");
  if (!(beta1 >= 0 && beta1 < 1)) bad.push_back("train.beta1 must be in [0,1)");
  if (!(beta2 >= 0 && beta2 < 1)) bad.push_back("train.beta2 must be in [0,1)");
  if (!(eps > 0)) bad.push_back("train.eps must be positive");
  if (batch < 1) bad.push_back("train.batch must be >= 1");
  if (mode != "latent" && mode != "nocot") bad.push_back("train.mode must be latent or nocot");
  if (val_subset < 0) bad.push_back("train.val_subset must be >= 0");
  if (probe_subset < 0) bad.push_back("train.probe_subset must be >= 0");
  if (early_checkpoints < 2) bad.push_back("train.early_checkpoints must be >= 2");
  if (diag_every < 0) bad.push_back("train.diag_every must be >= 0");
  if (threads < 1) bad.push_back("train.threads must be >= 1");
  if (stop_after < 0) bad.push_back("train.stop_after must be >= 0");
  if (!bad.empty()) {
    std::string msg = "invalid configuration:";
    for (const std::string& b : bad) msg += "\n  - " + b;
    throw UsageError(msg);
  }
}

int stage_of(int epoch, int total_epochs, int t_r) {
  if (epoch < 0 || total_epochs < 1 || epoch >= total_epochs)
    throw UsageError("stage_of: epoch out of range");
  if (t_r < 0) throw UsageError("stage_of: negative latent step count");
  return std::min(t_r, epoch * (t_r + 1) / total_epochs);
}

void adam_init(AdamState& st, const Model& model) {
  st.m.clear();
  st.v.clear();
  st.t = 0;
  for (const auto& [name, p] : model.params()) {
    st.m.emplace(name, Tensor::zeros(p.shape(), p.dtype()));
    st.v.emplace(name, Tensor::zeros(p.shape(), p.dtype()));
  }
}

void adam_step(AdamState& st, Model& model, double lr, double beta1, double beta2,
               double eps) {
  st.t += 1;
  double bc1 = 1.0 - std::pow(beta1, double(st.t));
  double bc2 = 1.0 - std::pow(beta2, double(st.t));
  for (auto& [name, p] : model.params()) {
    if (!p.requires_grad() || !p.has_grad()) continue;
    auto mi = st.m.find(name);
    auto vi = st.v.find(name);
    if (mi == st.m.end() || vi == st.v.end())
      throw UsageError("optimizer state missing for '" + name + "'");
    const std::string& pname = name;
    dispatch(p.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto g = grad_view<T>(*p.impl);
      auto w = view<T>(*p.impl);
      auto m = view<T>(*mi->second.impl);
      auto v = view<T>(*vi->second.impl);
      for (size_t i = 0; i < g.size(); ++i)
        if (!std::isfinite(double(g[i])))
          throw NumericError("non-finite gradient in '" + pname + "'");
      for (size_t i = 0; i < g.size(); ++i) {
        double gi = double(g[i]);
        double mn = beta1 * double(m[i]) + (1.0 - beta1) * gi;
        double vn = beta2 * double(v[i]) + (1.0 - beta2) * gi * gi;
        m[i] = T(mn);
        v[i] = T(vn);
        w[i] = T(double(w[i]) - lr * (mn / bc1) / (std::sqrt(vn / bc2) + eps));
      }
    });
  }
}

StageText stage_text(const Example& ex, int stage, const std::string& mode) {
  if (mode != "latent" && mode != "nocot")
    throw UsageError("unknown train mode '" + mode + "'");
  if (stage < 0) throw UsageError("stage must be non-negative");
  StageText out;
  if (mode == "latent") {
    out.k_latent = std::min<int>(stage, int(ex.steps.size()));
    for (size_t s = size_t(out.k_latent); s < ex.steps.size(); ++s) {
      out.tokens.insert(out.tokens.end(), ex.steps[s].begin(), ex.steps[s].end());
      out.tokens.push_back(vocab::STEP);
    }
  }
  out.tokens.insert(out.tokens.end(), ex.answer.begin(), ex.answer.end());
  out.tokens.push_back(vocab::EOA);
  return out;
}

ExampleLossOutput example_loss(const Model& m, const Example& ex, int stage,
                               const std::string& mode) {
  const ModelConfig& cfg = m.config();
  StageText stext = stage_text(ex, stage, mode);
  LatentState st = prefill(m, ex);

  std::vector<Tensor> recon_terms;
  ExampleLossOutput out;
  if (mode == "latent") {
    for (int t = 0; t < stext.k_latent; ++t) {
      ImplicitOutputs io = implicit_step(m, st);
      out.executed++;
      if (!io.replay.empty) recon_terms.push_back(io.replay.recon);
    }
  }

  int p0 = st.P();
  std::vector<SegTag> tags = st.tags();
  int n_answer = int(ex.answer.size()) + 1;
  int n_cot = int(stext.tokens.size()) - n_answer;
  tags.insert(tags.end(), size_t(n_cot), SegTag::cot);
  tags.insert(tags.end(), size_t(n_answer), SegTag::answer);
  Tensor rows = concat_rows({st.context(), m.embed_tokens(stext.tokens)});

  // Text supervision must see the same forward the decode loop runs: routing
  // is an implicit-phase mechanism and stays off outside implicit_step.  The
  // router still trains through the latent tokens it shaped there.
  ForwardResult fr = m.forward(rows, tags, {});

  int p = p0 + int(stext.tokens.size());
  std::vector<int> targets(size_t(p), 0);
  std::vector<uint8_t> mask(size_t(p), 0);
  for (int i = 0; i < int(stext.tokens.size()); ++i) {
    targets[size_t(p0 - 1 + i)] = stext.tokens[size_t(i)];
    mask[size_t(p0 - 1 + i)] = 1;
  }
  out.ce = cross_entropy(fr.logits, targets, mask);
  out.fwd = fr;
  out.tags = std::move(tags);

  if (cfg.scfvr.lambda > 0.0 && !recon_terms.empty()) {
    Tensor acc = recon_terms[0];
    for (size_t i = 1; i < recon_terms.size(); ++i) acc = add(acc, recon_terms[i]);
    Tensor recon_mean = scale(acc, 1.0 / double(out.executed));
    out.recon_value = recon_mean.get(0);
    out.total = add(out.ce, scale(recon_mean, cfg.scfvr.lambda));
  } else {
    out.total = out.ce;
  }
  out.ce_value = out.ce.get(0);
  out.total_value = out.total.get(0);
  return out;
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Trainer::Trainer(const ModelConfig& mc, const TrainConfig& tc, std::vector<Example> train_ds,
                 std::vector<Example> val_ds, std::string out_dir)
    : mcfg_(mc),
      tcfg_(tc),
      model_(mc),
      train_(std::move(train_ds)),
      val_(std::move(val_ds)),
      out_dir_(std::move(out_dir)) {
  tcfg_.validate();
  if (train_.empty()) throw UsageError("training set is empty");
  if (val_.empty()) throw UsageError("validation set is empty");
  std::filesystem::create_directories(out_dir_);
  adam_init(adam_, model_);
  int probe_n = std::min<int>(tcfg_.probe_subset, int(train_.size()));
  probe_bits_.assign(size_t(tcfg_.early_checkpoints) * size_t(probe_n), -1.0);
  FILE* f = std::fopen((out_dir_ + "/metrics.csv").c_str(), "wb");
  if (!f) throw UsageError("cannot write " + out_dir_ + "/metrics.csv");
  std::fprintf(f, "epoch,stage,train_loss,ce_loss,recon_loss,val_acc,easy_count,hard_count\n");
  std::fclose(f);
  if (tcfg_.diag_every > 0) {
    write_token_grads({}, out_dir_ + "/token_grads.csv", false);
    write_factor_nuclear({}, out_dir_ + "/factor_nuclear.csv", false);
  }
}

Trainer::Trainer(const std::string& checkpoint, const TrainConfig& tc,
                 std::vector<Example> train_ds, std::vector<Example> val_ds,
                 std::string out_dir)
    : tcfg_(tc),
      model_(ModelConfig{}),
      train_(std::move(train_ds)),
      val_(std::move(val_ds)),
      out_dir_(std::move(out_dir)) {
  tcfg_.validate();
  if (train_.empty()) throw UsageError("training set is empty");
  if (val_.empty()) throw UsageError("validation set is empty");
  std::filesystem::create_directories(out_dir_);

  CheckpointData ck = read_checkpoint(checkpoint);
  model_ = load_model(ck);
  mcfg_ = model_.config();
  auto kv = [&](const std::string& k) {
    auto it = ck.kv.find(k);
    if (it == ck.kv.end()) throw DataError(checkpoint + ": missing key '" + k + "'");
    return it->second;
  };
  if (kv("train.mode") != tcfg_.mode)
    throw UsageError("checkpoint was trained with mode " + kv("train.mode") +
                     ", requested " + tcfg_.mode);
  next_epoch_ = std::stoi(kv("train.epoch")) + 1;
  adam_init(adam_, model_);
  adam_.t = std::stoll(kv("train.adam_t"));
  for (auto& [name, t] : adam_.m) {
    const Tensor* src = ck.find("adam.m." + name);
    if (!src || src->shape() != t.shape() || src->dtype() != t.dtype())
      throw DataError(checkpoint + ": bad optimizer tensor adam.m." + name);
    t.impl->data = src->impl->data;
  }
  for (auto& [name, t] : adam_.v) {
    const Tensor* src = ck.find("adam.v." + name);
    if (!src || src->shape() != t.shape() || src->dtype() != t.dtype())
      throw DataError(checkpoint + ": bad optimizer tensor adam.v." + name);
    t.impl->data = src->impl->data;
  }
  if (kv("train.frozen") == "1") model_.freeze_base_qkvo();

  int probe_n = std::min<int>(tcfg_.probe_subset, int(train_.size()));
  probe_bits_.assign(size_t(tcfg_.early_checkpoints) * size_t(probe_n), -1.0);
  if (const Tensor* pb = ck.find("probe.bits")) {
    if (pb->rank() != 2 || pb->dim(0) != tcfg_.early_checkpoints || pb->dim(1) != probe_n)
      throw DataError(checkpoint + ": probe.bits shape does not match train config");
    probe_bits_ = pb->to_vec();
  }
  resumed_ = true;
}

std::string Trainer::checkpoint_path(int epoch) const {
  return out_dir_ + "/ckpt_epoch_" + std::to_string(epoch) + ".lmr";
}

void Trainer::probe_difficulty(int epoch) {
  int probe_n = std::min<int>(tcfg_.probe_subset, int(train_.size()));
  if (probe_n == 0 || epoch >= tcfg_.early_checkpoints) return;
  int t_r = mcfg_.latent_steps;
  int stage = tcfg_.force_stage >= 0 ? std::min(tcfg_.force_stage, t_r)
                                     : stage_of(epoch, tcfg_.epochs, t_r);
  EvalOptions eo;
  eo.mode = stage == 0 ? EvalMode::explicit_cot : EvalMode::latent;
  eo.max_decode = stage == 0 ? 64 : 8;
  eo.threads = tcfg_.threads;
  std::vector<Example> probe(train_.begin(), train_.begin() + probe_n);
  EvalSummary es = evaluate(model_, probe, eo);
  for (int i = 0; i < probe_n; ++i)
    probe_bits_[size_t(epoch) * size_t(probe_n) + size_t(i)] = es.rows[size_t(i)].correct ? 1.0 : 0.0;
}

void Trainer::split_counts(int* easy, int* hard) const {
  *easy = 0;
  *hard = 0;
  int probe_n = int(probe_bits_.size()) / std::max(1, tcfg_.early_checkpoints);
  for (int i = 0; i < probe_n; ++i) {
    bool all1 = true, all0 = true, filled = true;
    for (int e = 0; e < tcfg_.early_checkpoints; ++e) {
      double b = probe_bits_[size_t(e) * size_t(probe_n) + size_t(i)];
      if (b < 0) filled = false;
      all1 = all1 && b == 1.0;
      all0 = all0 && b == 0.0;
    }
    if (!filled) continue;
    if (all1) ++*easy;
    if (all0) ++*hard;
  }
}

void Trainer::split_examples(std::vector<Example>* easy, std::vector<Example>* hard) const {
  easy->clear();
  hard->clear();
  int probe_n = int(probe_bits_.size()) / std::max(1, tcfg_.early_checkpoints);
  for (int i = 0; i < probe_n; ++i) {
    bool all1 = true, all0 = true, filled = true;
    for (int e = 0; e < tcfg_.early_checkpoints; ++e) {
      double b = probe_bits_[size_t(e) * size_t(probe_n) + size_t(i)];
      if (b < 0) filled = false;
      all1 = all1 && b == 1.0;
      all0 = all0 && b == 0.0;
    }
    if (!filled) continue;
    if (all1) easy->push_back(train_[size_t(i)]);
    if (all0) hard->push_back(train_[size_t(i)]);
  }
}

void Trainer::save_epoch(int epoch, int stage) {
  std::map<std::string, std::string> kv;
  kv["train.epoch"] = std::to_string(epoch);
  kv["train.stage"] = std::to_string(stage);
  kv["train.adam_t"] = std::to_string(adam_.t);
  kv["train.frozen"] = model_.base_frozen() ? "1" : "0";
  kv["train.mode"] = tcfg_.mode;
  std::vector<std::pair<std::string, Tensor>> extra;
  for (const auto& [name, t] : adam_.m) extra.emplace_back("adam.m." + name, t);
  for (const auto& [name, t] : adam_.v) extra.emplace_back("adam.v." + name, t);
  int probe_n = int(probe_bits_.size()) / std::max(1, tcfg_.early_checkpoints);
  if (probe_n > 0) {
    Tensor pb = Tensor::from_vec({tcfg_.early_checkpoints, probe_n}, probe_bits_);
    extra.emplace_back("probe.bits", pb);
  }
  model_.save_checkpoint(checkpoint_path(epoch), kv, extra);
}

void Trainer::append_metrics(const EpochMetrics& m) {
  FILE* f = std::fopen((out_dir_ + "/metrics.csv").c_str(), "ab");
  if (!f) throw UsageError("cannot append " + out_dir_ + "/metrics.csv");
  std::fprintf(f, "%d,%d,%s,%s,%s,%s,%d,%d\n", m.epoch, m.stage,
               fmt_double(m.train_loss).c_str(), fmt_double(m.ce_loss).c_str(),
               fmt_double(m.recon_loss).c_str(), fmt_double(m.val_acc).c_str(), m.easy_count,
               m.hard_count);
  std::fclose(f);
}

void Trainer::run_epoch(int epoch, EpochMetrics& em) {
  int t_r = mcfg_.latent_steps;
  int stage = tcfg_.force_stage >= 0 ? std::min(tcfg_.force_stage, t_r)
                                     : stage_of(epoch, tcfg_.epochs, t_r);
  if (tcfg_.mode == "latent" && stage >= 1 && !model_.base_frozen()) model_.freeze_base_qkvo();

  std::vector<int> order(train_.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng = Rng::sub(tcfg_.seed, "shuffle", uint64_t(epoch));
  shuffle_rng.shuffle(order);

  double sum_total = 0, sum_ce = 0, sum_recon = 0;
  size_t n = order.size();
  for (size_t b0 = 0; b0 < n; b0 += size_t(tcfg_.batch)) {
    size_t bn = std::min(size_t(tcfg_.batch), n - b0);
    model_.zero_grads();
    for (size_t i = 0; i < bn; ++i) {
      const Example& ex = train_[size_t(order[b0 + i])];
      Tape tape;
      ExampleLossOutput out = example_loss(model_, ex, stage, tcfg_.mode);
      tape.backward(scale(out.total, 1.0 / double(bn)));
      sum_total += out.total_value;
      sum_ce += out.ce_value;
      sum_recon += out.recon_value;
    }
    adam_step(adam_, model_, tcfg_.lr, tcfg_.beta1, tcfg_.beta2, tcfg_.eps);
  }
  model_.zero_grads();

  em.epoch = epoch;
  em.stage = stage;
  em.train_loss = sum_total / double(n);
  em.ce_loss = sum_ce / double(n);
  em.recon_loss = sum_recon / double(n);

  if (tcfg_.mode == "latent") probe_difficulty(epoch);
  split_counts(&em.easy_count, &em.hard_count);

  EvalOptions eo;
  eo.mode = tcfg_.mode == "nocot" ? EvalMode::nocot : EvalMode::latent;
  eo.threads = tcfg_.threads;
  std::vector<Example> vs = val_;
  if (tcfg_.val_subset > 0 && int(vs.size()) > tcfg_.val_subset)
    vs.resize(size_t(tcfg_.val_subset));
  em.val_acc = evaluate(model_, vs, eo).accuracy;

  if (tcfg_.diag_every > 0 && epoch % tcfg_.diag_every == 0) {
    std::vector<TokenGradRow> tg =
        token_grad_probe(model_, train_[0], stage, tcfg_.mode, epoch);
    write_token_grads(tg, out_dir_ + "/token_grads.csv", true);
    std::vector<Example> easy, hard;
    split_examples(&easy, &hard);
    std::pair<const char*, std::vector<Example>*> splits[2] = {{"easy", &easy},
                                                               {"hard", &hard}};
    for (auto [split, exs] : splits) {
      if (exs->empty()) {
        std::fprintf(stderr, "warning: %s split empty at epoch %d, skipping nuclear probe\n",
                     split, epoch);
        continue;
      }
      std::vector<FactorNuclearRow> fn = factor_nuclear_probe(
          model_, *exs, split, stage, tcfg_.mode, epoch, tcfg_.batch);
      write_factor_nuclear(fn, out_dir_ + "/factor_nuclear.csv", true);
    }
  }

  save_epoch(epoch, stage);
  append_metrics(em);
}

std::vector<EpochMetrics> Trainer::run(const std::function<void(const EpochMetrics&)>& on_epoch) {
  std::vector<EpochMetrics> hist;
  for (int e = next_epoch_; e < tcfg_.epochs; ++e) {
    EpochMetrics em;
    run_epoch(e, em);
    hist.push_back(em);
    next_epoch_ = e + 1;
    if (on_epoch) on_epoch(em);
    if (tcfg_.stop_after > 0 && e + 1 >= tcfg_.stop_after) break;
  }
  return hist;
}

}  // namespace lmr
