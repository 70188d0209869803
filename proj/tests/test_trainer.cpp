#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "lmr/errors.hpp"
#include "lmr/trainer.hpp"
#include "lmr/vocab.hpp"

using namespace lmr;
namespace fs = std::filesystem;

namespace {

ModelConfig train_mc(uint64_t seed = 81) {
  ModelConfig mc;
  mc.layers = 2;
  mc.heads = 2;
  mc.d = 16;
  mc.rank = 2;
  mc.patch_grid = 4;
  mc.image_side = 40;
  mc.mlp_mult = 2;
  mc.max_seq = 256;
  mc.latent_steps = 2;
  mc.seed = seed;
  mc.scfvr.topk = 4;
  mc.scfvr.window = 2;
  mc.rds.alpha = 8;
  return mc;
}

TrainConfig quick_tc() {
  TrainConfig tc;
  tc.epochs = 3;
  tc.lr = 1e-3;
  tc.batch = 4;
  tc.seed = 99;
  tc.probe_subset = 4;
  tc.early_checkpoints = 2;
  tc.diag_every = 0;
  return tc;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct TmpDir {
  fs::path path;
  explicit TmpDir(const std::string& name) : path(fs::path("/tmp") / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TmpDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

}  // namespace

TEST_CASE("stages partition the epochs evenly and reach every level") {
  // 8 epochs, t_r = 3: runs of 2 at stages 0..3
  for (int e = 0; e < 8; ++e) CHECK(stage_of(e, 8, 3) == e / 2);
  // uneven split still starts at 0 and ends at t_r
  CHECK(stage_of(0, 5, 3) == 0);
  CHECK(stage_of(4, 5, 3) == 3);
  int prev = 0;
  for (int e = 0; e < 5; ++e) {
    int s = stage_of(e, 5, 3);
    CHECK(s >= prev);
    CHECK(s - prev <= 1);
    prev = s;
  }
  // more stages than epochs: later stages are skipped, never revisited
  CHECK(stage_of(1, 2, 4) == 2);
  CHECK(stage_of(2, 3, 4) == 3);
  CHECK_THROWS(stage_of(5, 5, 3));
  CHECK_THROWS(stage_of(-1, 5, 3));
}

TEST_CASE("stage text latentizes the leading steps one at a time") {
  Example ex;
  ex.question = vocab::ids("what color is the circle");
  ex.steps = {vocab::ids("we look left"), vocab::ids("move to the cell"),
              vocab::ids("it holds a circle")};
  ex.answer = {vocab::digit_id(3)};

  auto flat = [&](int stage) { return stage_text(ex, stage, "latent"); };

  StageText s0 = flat(0);
  CHECK(s0.k_latent == 0);
  std::vector<int> want0;
  for (const auto& st : ex.steps) {
    want0.insert(want0.end(), st.begin(), st.end());
    want0.push_back(vocab::STEP);
  }
  want0.push_back(vocab::digit_id(3));
  want0.push_back(vocab::EOA);
  CHECK(s0.tokens == want0);

  StageText s2 = flat(2);
  CHECK(s2.k_latent == 2);
  std::vector<int> want2 = vocab::ids("it holds a circle");
  want2.push_back(vocab::STEP);
  want2.push_back(vocab::digit_id(3));
  want2.push_back(vocab::EOA);
  CHECK(s2.tokens == want2);

  // stage beyond the step count latentizes everything that exists
  StageText s9 = flat(9);
  CHECK(s9.k_latent == 3);
  CHECK(s9.tokens == std::vector<int>{vocab::digit_id(3), vocab::EOA});

  StageText nc = stage_text(ex, 2, "nocot");
  CHECK(nc.k_latent == 0);
  CHECK(nc.tokens == std::vector<int>{vocab::digit_id(3), vocab::EOA});
}

TEST_CASE("adam follows the hand-computed trajectory on a scalar") {
  ModelConfig mc = train_mc();
  Model m(mc);
  AdamState st;
  adam_init(st, m);
  CHECK(st.t == 0);
  CHECK(st.m.size() == m.params().size());

  // drive one named parameter by hand
  Tensor w = m.param("final_ln.g");
  double w0 = w.get(0);
  double g1 = 0.3, g2 = -0.2;
  double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;

  for (auto& [name, t] : m.params()) t.zero_grad();
  ensure_grad(*w.impl);
  dispatch(w.dtype(), [&](auto tag) {
    using T = decltype(tag);
    grad_view<T>(*w.impl)[0] = T(g1);
  });
  adam_step(st, m, lr, b1, b2, eps);
  CHECK(st.t == 1);
  double m1 = (1 - b1) * g1, v1 = (1 - b2) * g1 * g1;
  double want1 = w0 - lr * (m1 / (1 - b1)) / (std::sqrt(v1 / (1 - b2)) + eps);
  CHECK(w.get(0) == doctest::Approx(want1).epsilon(1e-12));
  // at step 1 the bias-corrected update has magnitude ~lr
  CHECK(std::abs(w.get(0) - w0) == doctest::Approx(lr).epsilon(1e-6));

  for (auto& [name, t] : m.params()) t.zero_grad();
  ensure_grad(*w.impl);
  dispatch(w.dtype(), [&](auto tag) {
    using T = decltype(tag);
    grad_view<T>(*w.impl)[0] = T(g2);
  });
  adam_step(st, m, lr, b1, b2, eps);
  double m2 = b1 * m1 + (1 - b1) * g2, v2 = b2 * v1 + (1 - b2) * g2 * g2;
  double want2 =
      want1 - lr * (m2 / (1 - b1 * b1)) / (std::sqrt(v2 / (1 - b2 * b2)) + eps);
  CHECK(w.get(0) == doctest::Approx(want2).epsilon(1e-12));

  // parameters that never saw a gradient stayed put
  CHECK(max_abs_diff(m.param("unembed"), Model(mc).param("unembed")) == 0.0);
}

TEST_CASE("adam refuses non-finite gradients by name") {
  ModelConfig mc = train_mc();
  Model m(mc);
  AdamState st;
  adam_init(st, m);
  Tensor w = m.param("final_ln.g");
  ensure_grad(*w.impl);
  dispatch(w.dtype(), [&](auto tag) {
    using T = decltype(tag);
    grad_view<T>(*w.impl)[0] = std::numeric_limits<T>::quiet_NaN();
  });
  CHECK_THROWS_WITH_AS(adam_step(st, m, 1e-3, 0.9, 0.999, 1e-8),
                       doctest::Contains("final_ln"), NumericError);
}

TEST_CASE("frozen parameters are skipped by the optimizer") {
  ModelConfig mc = train_mc();
  Model m(mc);
  AdamState st;
  adam_init(st, m);
  m.freeze_base_qkvo();
  Tensor base = m.param("layer0.attn.q.base");
  double before = base.get(0);
  ensure_grad(*base.impl);
  dispatch(base.dtype(), [&](auto tag) {
    using T = decltype(tag);
    for (auto& g : grad_view<T>(*base.impl)) g = T(1.0);
  });
  adam_step(st, m, 1e-2, 0.9, 0.999, 1e-8);
  CHECK(base.get(0) == before);
}

TEST_CASE("training configuration collects every violation") {
  TrainConfig tc;
  tc.epochs = 0;
  tc.lr = -1;
  tc.mode = "wild";
  tc.early_checkpoints = 1;
  try {
    tc.validate();
    FAIL("expected UsageError");
  } catch (const UsageError& e) {
    std::string msg = e.what();
    CHECK(msg.find("epochs") != std::string::npos);
    CHECK(msg.find("lr") != std::string::npos);
    CHECK(msg.find("mode") != std::string::npos);
    CHECK(msg.find("early_checkpoints") != std::string::npos);
  }
}

TEST_CASE("the example loss at full lambda splits into ce plus scaled recon") {
  ModelConfig mc = train_mc();
  mc.scfvr.lambda = 0.5;
  Model m(mc);
  auto ds = generate_dataset(5501, 2);

  ExampleLossOutput out = example_loss(m, ds[0], 1, "latent");
  CHECK(out.executed == 1);
  CHECK(out.total_value == doctest::Approx(out.ce_value + 0.5 * out.recon_value).epsilon(1e-12));
  CHECK(out.recon_value > 0.0);
  CHECK(out.total.numel() == 1);

  // lambda zero: the two losses are one object
  ModelConfig mc0 = train_mc();
  mc0.scfvr.lambda = 0.0;
  Model m0(mc0);
  for (int stage = 0; stage <= 2; ++stage) {
    ExampleLossOutput o = example_loss(m0, ds[1], stage, "latent");
    CHECK(o.total.impl.get() == o.ce.impl.get());
    CHECK(o.recon_value == 0.0);
  }
}

TEST_CASE("supervision masks exactly the text positions, shifted by one") {
  ModelConfig mc = train_mc();
  Model m(mc);
  auto ds = generate_dataset(5502, 1);
  const Example& ex = ds[0];

  for (int stage : {0, 1, 2}) {
    ExampleLossOutput out = example_loss(m, ex, stage, "latent");
    StageText st = stage_text(ex, stage, "latent");
    int p = int(out.tags.size());
    int n_text = int(st.tokens.size());
    // text occupies the final n_text positions of the pass
    for (int i = 0; i < n_text; ++i) {
      SegTag tag = out.tags[size_t(p - n_text + i)];
      bool is_answer_region = i >= n_text - int(ex.answer.size()) - 1;
      CHECK((tag == SegTag::cot || tag == SegTag::answer));
      if (is_answer_region) CHECK(tag == SegTag::answer);
    }
    CHECK(out.fwd.logits.dim(0) == p);
  }
}

TEST_CASE("stage zero equals a plain explicit trainer to machine precision") {
  // independent implementation: embed question+visual+full text, forward,
  // cross entropy on the text targets, no curriculum machinery
  ModelConfig mc = train_mc(83);
  mc.scfvr.lambda = 0.7;  // must not matter at stage 0
  auto ds = generate_dataset(5503, 6);

  Model a(mc);
  Model b(mc);
  AdamState sa, sb;
  adam_init(sa, a);
  adam_init(sb, b);
  double lr = 5e-4, b1 = 0.9, b2 = 0.999, eps = 1e-8;

  for (int epoch = 0; epoch < 3; ++epoch) {
    for (const auto& ex : ds) {
      double la, lb;
      {
        Tape tape;
        ExampleLossOutput out = example_loss(a, ex, 0, "latent");
        la = out.total_value;
        tape.backward(out.total);
        adam_step(sa, a, lr, b1, b2, eps);
        a.zero_grads();
      }
      {
        Tape tape;
        LatentState st = prefill(b, ex);
        StageText stx = stage_text(ex, 0, "latent");
        Tensor text = b.embed_tokens(stx.tokens);
        Tensor rows = concat_rows({st.context(), text});
        std::vector<SegTag> tags = st.tags();
        for (size_t i = 0; i + 1 < stx.tokens.size() - ex.answer.size(); ++i)
          tags.push_back(SegTag::cot);
        while (tags.size() < size_t(rows.dim(0))) tags.push_back(SegTag::answer);
        ForwardResult fwd = b.forward(rows, tags, {});
        int p = rows.dim(0), p0 = st.P();
        std::vector<int> targets(size_t(p), 0);
        std::vector<uint8_t> mask(size_t(p), 0);
        for (size_t i = 0; i < stx.tokens.size(); ++i) {
          targets[size_t(p0) + i - 1] = stx.tokens[i];
          mask[size_t(p0) + i - 1] = 1;
        }
        Tensor loss = cross_entropy(fwd.logits, targets, mask);
        lb = loss.get(0);
        tape.backward(loss);
        adam_step(sb, b, lr, b1, b2, eps);
        b.zero_grads();
      }
      CHECK(std::abs(la - lb) <= 1e-10);
    }
  }
  for (size_t i = 0; i < a.params().size(); ++i)
    CHECK(max_abs_diff(a.params()[i].second, b.params()[i].second) <= 1e-10);
}

TEST_CASE("the trainer freezes base projections when leaving stage zero") {
  TmpDir dir("lmr_test_trainer_freeze");
  ModelConfig mc = train_mc(84);
  TrainConfig tc = quick_tc();
  tc.epochs = 3;  // t_r = 2 -> stages 0, 1, 2
  auto train = generate_dataset(5504, 8);
  auto val = generate_dataset(5505, 4);

  Trainer tr(mc, tc, train, val, dir.str());
  std::vector<int> stages;
  bool frozen_at_stage1 = false;
  auto metrics = tr.run([&](const EpochMetrics& em) {
    stages.push_back(em.stage);
    if (em.stage >= 1) frozen_at_stage1 = tr.model().base_frozen();
  });
  CHECK(stages == std::vector<int>{0, 1, 2});
  CHECK(frozen_at_stage1);
  CHECK(tr.model().base_frozen());
  REQUIRE(metrics.size() == 3);
  CHECK(metrics[0].recon_loss == 0.0);  // no latent steps at stage 0
  CHECK(metrics[1].recon_loss > 0.0);

  // metrics file carries the documented header and one row per epoch
  std::string text = slurp(dir.str() + "/metrics.csv");
  CHECK(text.rfind("epoch,stage,train_loss,ce_loss,recon_loss,val_acc,easy_count,hard_count\n",
                   0) == 0);
  int lines = 0;
  for (char c : text)
    if (c == '\n') ++lines;
  CHECK(lines == 4);
}

TEST_CASE("nocot training never freezes and never runs latent steps") {
  TmpDir dir("lmr_test_trainer_nocot");
  ModelConfig mc = train_mc(85);
  TrainConfig tc = quick_tc();
  tc.mode = "nocot";
  tc.epochs = 2;
  auto train = generate_dataset(5506, 6);
  auto val = generate_dataset(5507, 3);
  Trainer tr(mc, tc, train, val, dir.str());
  auto metrics = tr.run();
  CHECK(!tr.model().base_frozen());
  for (const auto& em : metrics) CHECK(em.recon_loss == 0.0);
}

TEST_CASE("interrupted training resumes to the identical byte stream") {
  ModelConfig mc = train_mc(86);
  TrainConfig tc = quick_tc();
  tc.epochs = 3;
  tc.diag_every = 1;
  auto train = generate_dataset(5508, 8);
  auto val = generate_dataset(5509, 4);

  TmpDir full_dir("lmr_test_trainer_full");
  {
    Trainer tr(mc, tc, train, val, full_dir.str());
    tr.run();
  }

  TmpDir part_dir("lmr_test_trainer_part");
  {
    TrainConfig tc1 = tc;
    tc1.stop_after = 2;
    Trainer tr(mc, tc1, train, val, part_dir.str());
    tr.run();
  }
  {
    Trainer tr(part_dir.str() + "/ckpt_epoch_1.lmr", tc, train, val, part_dir.str());
    CHECK(tr.next_epoch() == 2);
    tr.run();
  }

  for (const char* f : {"/metrics.csv", "/token_grads.csv", "/factor_nuclear.csv",
                        "/ckpt_epoch_2.lmr"})
    CHECK(slurp(full_dir.str() + f) == slurp(part_dir.str() + f));
}

TEST_CASE("resume rejects a checkpoint from a different mode") {
  ModelConfig mc = train_mc(87);
  TrainConfig tc = quick_tc();
  tc.epochs = 2;
  auto train = generate_dataset(5510, 4);
  auto val = generate_dataset(5511, 2);
  TmpDir dir("lmr_test_trainer_modeswap");
  {
    Trainer tr(mc, tc, train, val, dir.str());
    tr.run();
  }
  TrainConfig other = tc;
  other.mode = "nocot";
  CHECK_THROWS_AS(Trainer(dir.str() + "/ckpt_epoch_1.lmr", other, train, val, dir.str()),
                  UsageError);
}
