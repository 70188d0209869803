#include <set>
#include <vector>

#include "doctest.h"
#include "lmr/dataset.hpp"
#include "lmr/errors.hpp"
#include "lmr/latent.hpp"
#include "lmr/vocab.hpp"

using namespace lmr;

namespace {

ModelConfig loop_config(uint64_t seed = 71) {
  ModelConfig mc;
  mc.layers = 2;
  mc.heads = 2;
  mc.d = 16;
  mc.rank = 2;
  mc.patch_grid = 4;
  mc.image_side = 40;
  mc.mlp_mult = 2;
  mc.max_seq = 160;
  mc.latent_steps = 2;
  mc.seed = seed;
  mc.scfvr.topk = 4;
  mc.scfvr.window = 2;
  mc.rds.alpha = 8;
  return mc;
}

}  // namespace

TEST_CASE("prefill lays out question then visual tokens") {
  ModelConfig mc = loop_config();
  Model m(mc);
  auto ds = generate_dataset(4401, 2);
  LatentState st = prefill(m, ds[0]);
  CHECK(st.example_id == ds[0].id);
  CHECK(st.P() == int(ds[0].question.size()) + mc.patches());
  REQUIRE(st.segments.size() == 2);
  CHECK(st.segments[0].tag == SegTag::question);
  CHECK(st.segments[1].tag == SegTag::visual);
  CHECK(st.visual_rows().shape() == std::vector<int>{mc.patches(), mc.d});
  CHECK(st.t == 0);
  CHECK(st.ar_steps == 0);
  auto tags = st.tags();
  CHECK(int(tags.size()) == st.P());
  CHECK(tags.front() == SegTag::question);
  CHECK(tags.back() == SegTag::visual);

  Example empty_q = ds[0];
  empty_q.question.clear();
  CHECK_THROWS_AS(prefill(m, empty_q), UsageError);
}

TEST_CASE("implicit steps grow the context by the replay block plus one latent") {
  ModelConfig mc = loop_config();
  Model m(mc);
  auto ds = generate_dataset(4402, 1);
  LatentState st = prefill(m, ds[0]);
  int p0 = st.P();

  ImplicitOutputs o1 = implicit_step(m, st);
  CHECK(st.t == 1);
  CHECK(st.ar_steps == 1);
  REQUIRE(!o1.replay.empty);
  CHECK(st.P() == p0 + mc.scfvr.topk + 1);
  CHECK(st.segments[st.segments.size() - 2].tag == SegTag::visual_latent);
  CHECK(st.segments.back().tag == SegTag::thought_latent);
  CHECK(o1.z.shape() == std::vector<int>{mc.d});

  implicit_step(m, st);
  CHECK(st.t == 2);
  CHECK(st.P() == p0 + 2 * (mc.scfvr.topk + 1));
  CHECK_THROWS_AS(implicit_step(m, st), UsageError);  // latent budget spent
}

TEST_CASE("the thought latent is the final row of the traced forward") {
  ModelConfig mc = loop_config();
  Model m(mc);
  auto ds = generate_dataset(4403, 1);

  LatentState st = prefill(m, ds[0]);
  Tensor ctx = st.context();
  ForwardOptions fo;
  fo.trace = true;
  fo.router = true;
  auto fwd = m.forward(ctx, st.tags(), fo);
  Tensor want = row(fwd.states.back(), st.P() - 1);

  ImplicitOutputs out = implicit_step(m, st);
  CHECK(max_abs_diff(out.z, want) == 0.0);
}

TEST_CASE("decode_answer requires the implicit phase to be complete") {
  ModelConfig mc = loop_config();
  Model m(mc);
  auto ds = generate_dataset(4404, 1);
  LatentState st = prefill(m, ds[0]);
  CHECK_THROWS_AS(decode_answer(m, st, 4), UsageError);
  implicit_step(m, st);
  CHECK_THROWS_AS(decode_answer(m, st, 4), UsageError);
  implicit_step(m, st);
  DecodeResult dr = decode_answer(m, st, 4);
  CHECK(dr.ar_steps >= 1);
  CHECK(st.ar_steps == mc.latent_steps + dr.ar_steps);
}

TEST_CASE("greedy decoding is deterministic and flags truncation") {
  ModelConfig mc = loop_config();
  Model m(mc);
  auto ds = generate_dataset(4405, 1);

  auto run = [&] {
    LatentState st = prefill(m, ds[0]);
    implicit_step(m, st);
    implicit_step(m, st);
    return decode_answer(m, st, 3);
  };
  DecodeResult a = run(), b = run();
  CHECK(a.tokens == b.tokens);
  CHECK(a.ar_steps == b.ar_steps);
  if (a.truncated) {
    CHECK(int(a.tokens.size()) == 3);
  } else {
    CHECK(a.tokens.back() == vocab::EOA);
  }
}

TEST_CASE("a zeroed unembedding stops decoding at once via the argmax tie rule") {
  ModelConfig mc = loop_config();
  Model m(mc);
  // all logits tie at zero; argmax keeps the lowest id, which is the end token
  Tensor u = m.param("unembed");
  for (size_t i = 0; i < u.numel(); ++i) u.set(i, 0.0);

  auto ds = generate_dataset(4406, 3);
  for (const auto& ex : ds) {
    LatentState st = prefill(m, ex);
    implicit_step(m, st);
    implicit_step(m, st);
    DecodeResult dr = decode_answer(m, st, 8);
    CHECK(!dr.truncated);
    CHECK(dr.tokens == std::vector<int>{vocab::EOA});
    CHECK(dr.ar_steps == 1);
    CHECK(st.ar_steps == mc.latent_steps + 1);  // the invariant behind the counters
  }
}

TEST_CASE("gold step counters count decode slots plus the end token") {
  auto ds = generate_dataset(4407, 8);
  for (const auto& ex : ds) {
    CHECK(gold_explicit_ar(ex) == int(cot_tokens(ex).size()) + int(ex.answer.size()) + 1);
    CHECK(gold_latent_ar(ex, 4) == 4 + int(ex.answer.size()) + 1);
    CHECK(gold_explicit_ar(ex) > gold_latent_ar(ex, 4));
  }
}

TEST_CASE("eval mode names round-trip and reject unknowns") {
  CHECK(eval_mode_from_name("latent") == EvalMode::latent);
  CHECK(eval_mode_from_name("explicit") == EvalMode::explicit_cot);
  CHECK(eval_mode_from_name("nocot") == EvalMode::nocot);
  CHECK_THROWS_AS(eval_mode_from_name("fancy"), UsageError);
  CHECK(eval_mode_name(EvalMode::latent) == std::string("latent"));
  CHECK(eval_mode_name(EvalMode::explicit_cot) == std::string("explicit"));
  CHECK(eval_mode_name(EvalMode::nocot) == std::string("nocot"));
}

TEST_CASE("evaluation summarizes per-example rows") {
  ModelConfig mc = loop_config();
  Model m(mc);
  auto ds = generate_dataset(4408, 6);
  EvalOptions opts;
  opts.mode = EvalMode::latent;
  std::vector<CropLogRow> crops;
  opts.crop_log = &crops;
  EvalSummary s = evaluate(m, ds, opts);
  REQUIRE(s.rows.size() == 6);
  int correct = 0;
  double ar = 0;
  for (size_t i = 0; i < 6; ++i) {
    CHECK(s.rows[i].id == ds[i].id);
    CHECK(s.rows[i].ar_steps >= mc.latent_steps + 1);
    correct += s.rows[i].correct ? 1 : 0;
    ar += s.rows[i].ar_steps;
  }
  CHECK(s.accuracy == doctest::Approx(double(correct) / 6));
  CHECK(s.mean_ar == doctest::Approx(ar / 6));
  // every example logs one crop row per implicit step
  CHECK(crops.size() == size_t(6 * mc.latent_steps));
  for (const auto& cr : crops) {
    CHECK(cr.t >= 1);
    CHECK(cr.t <= mc.latent_steps);
    CHECK(cr.w == mc.scfvr.window);
  }
}

TEST_CASE("threaded evaluation matches single-threaded exactly") {
  ModelConfig mc = loop_config();
  Model m(mc);
  auto ds = generate_dataset(4409, 10);
  for (EvalMode mode : {EvalMode::latent, EvalMode::explicit_cot, EvalMode::nocot}) {
    EvalOptions one;
    one.mode = mode;
    EvalOptions four;
    four.mode = mode;
    four.threads = 4;
    EvalSummary a = evaluate(m, ds, one);
    EvalSummary b = evaluate(m, ds, four);
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.mean_ar == b.mean_ar);
    REQUIRE(a.rows.size() == b.rows.size());
    for (size_t i = 0; i < a.rows.size(); ++i) {
      CHECK(a.rows[i].id == b.rows[i].id);
      CHECK(a.rows[i].correct == b.rows[i].correct);
      CHECK(a.rows[i].ar_steps == b.rows[i].ar_steps);
      CHECK(a.rows[i].answer == b.rows[i].answer);
    }
  }
}

TEST_CASE("nocot evaluation decodes straight from the prefill") {
  ModelConfig mc = loop_config();
  Model m(mc);
  auto ds = generate_dataset(4410, 3);
  EvalOptions opts;
  opts.mode = EvalMode::nocot;
  EvalSummary s = evaluate(m, ds, opts);
  for (const auto& r : s.rows) {
    CHECK(r.ar_steps >= 1);
    CHECK(r.ar_steps <= 8);  // default decode budget, no implicit steps
  }
}
