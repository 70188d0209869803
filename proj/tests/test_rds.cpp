#include <algorithm>
#include <vector>

#include "doctest.h"
#include "lmr/model.hpp"
#include "lmr/rds.hpp"
#include "lmr/rng.hpp"
#include "lmr/vocab.hpp"

using namespace lmr;

namespace {

ModelConfig tiny_rds() {
  ModelConfig mc;
  mc.layers = 3;
  mc.heads = 2;
  mc.d = 16;
  mc.rank = 2;
  mc.patch_grid = 4;
  mc.image_side = 40;
  mc.mlp_mult = 2;
  mc.max_seq = 64;
  mc.latent_steps = 2;
  mc.seed = 77;
  mc.scfvr.topk = 4;
  mc.scfvr.window = 2;
  return mc;
}

std::vector<SegTag> qtags(int n) { return std::vector<SegTag>(size_t(n), SegTag::question); }

}  // namespace

TEST_CASE("fixed retention is constant, cosine decays between its endpoints") {
  RdsConfig fixed;
  fixed.schedule = "fixed";
  fixed.alpha = 12;
  for (int l = 0; l <= 6; ++l) CHECK(rds::retention(l, 6, fixed) == 12);

  RdsConfig cos;
  cos.schedule = "cosine";
  cos.alpha_start = 64;
  cos.alpha_end = 16;
  CHECK(rds::retention(0, 4, cos) == 64);
  CHECK(rds::retention(4, 4, cos) == 16);
  CHECK(rds::retention(2, 4, cos) == 40);  // midpoint of the cosine arc
  int prev = 1 << 30;
  for (int l = 0; l <= 4; ++l) {
    int r = rds::retention(l, 4, cos);
    CHECK(r <= prev);
    CHECK(r >= 16);
    CHECK(r <= 64);
    prev = r;
  }
  CHECK_THROWS(rds::retention(5, 4, cos));
  CHECK_THROWS(rds::retention(-1, 4, cos));
}

TEST_CASE("top-alpha keeps the highest scores, ties to the lower index, ascending output") {
  std::vector<double> s = {0.5, 0.9, 0.5, 0.1, 0.9};
  CHECK(rds::top_alpha(s, 2) == std::vector<int>{1, 4});
  CHECK(rds::top_alpha(s, 3) == std::vector<int>{0, 1, 4});  // 0.5 tie -> index 0 over 2
  CHECK(rds::top_alpha(s, 5) == std::vector<int>{0, 1, 2, 3, 4});
  CHECK(rds::top_alpha(s, 99) == std::vector<int>{0, 1, 2, 3, 4});
}

TEST_CASE("router scores are sigmoid outputs in the open unit interval") {
  Rng rng(3301);
  RouterWeights rw;
  rw.w1 = Tensor::randn({8, 2}, rng, 0.5);
  rw.b1 = Tensor::zeros({2});
  rw.w2 = Tensor::randn({2, 1}, rng, 0.5);
  rw.b2 = Tensor::zeros({1});
  Tensor h = Tensor::randn({5, 8}, rng, 1.0);
  Tensor s = rds::score_tokens(h, rw);
  REQUIRE(s.shape() == std::vector<int>{5});
  for (size_t i = 0; i < 5; ++i) {
    CHECK(s.get(i) > 0.0);
    CHECK(s.get(i) < 1.0);
  }
}

TEST_CASE("routing disabled or depth zero reproduces the router-off forward") {
  for (int variant = 0; variant < 2; ++variant) {
    ModelConfig mc = tiny_rds();
    if (variant == 0)
      mc.rds.enabled = false;
    else
      mc.rds.depth = 0;
    Model m(mc);
    Rng rng(3302);
    for (int i = 0; i < 50; ++i) {
      int n = int(rng.range(2, 10));
      std::vector<int> ids;
      for (int j = 0; j < n; ++j) ids.push_back(int(rng.range(3, vocab::size() - 1)));
      Tensor e = m.embed_tokens(ids);
      ForwardOptions off;
      ForwardOptions on;
      on.router = true;
      auto a = m.forward(e, qtags(n), off);
      auto b = m.forward(e, qtags(n), on);
      CHECK(max_abs_diff(a.logits, b.logits) <= 1e-10);
      CHECK(b.rds_rows.empty());
    }
  }
}

TEST_CASE("every refinement row retains min(alpha, P) tokens") {
  ModelConfig mc = tiny_rds();
  mc.rds.alpha = 6;
  mc.rds.depth = 2;
  Model m(mc);
  for (int n : {3, 6, 12}) {
    std::vector<int> ids(size_t(n), 5);
    ForwardOptions on;
    on.router = true;
    auto out = m.forward(m.embed_tokens(ids), qtags(n), on);
    REQUIRE(int(out.rds_rows.size()) == mc.layers * mc.rds.depth);
    for (const auto& r : out.rds_rows) {
      CHECK(int(r.selected.size()) == std::min(mc.rds.alpha, n));
      CHECK(std::is_sorted(r.selected.begin(), r.selected.end()));
      CHECK(r.alpha == rds::retention(r.layer, mc.layers, mc.rds));
      CHECK(r.depth >= 1);
      CHECK(r.depth <= mc.rds.depth);
    }
  }
}

TEST_CASE("cosine schedule thins retention with depth inside the model") {
  ModelConfig mc = tiny_rds();
  mc.rds.schedule = "cosine";
  mc.rds.alpha_start = 10;
  mc.rds.alpha_end = 2;
  Model m(mc);
  std::vector<int> ids(12, 5);
  ForwardOptions on;
  on.router = true;
  auto out = m.forward(m.embed_tokens(ids), qtags(12), on);
  REQUIRE(!out.rds_rows.empty());
  int prev = 1 << 30;
  for (const auto& r : out.rds_rows) {
    CHECK(r.alpha <= prev);
    prev = r.alpha;
  }
  CHECK(out.rds_rows.front().alpha > out.rds_rows.back().alpha);
}

TEST_CASE("pipeline touches only the selected rows before aggregation") {
  // with the per-depth encoding zeroed the pipeline must return h0 unchanged,
  // whatever the refinement does
  Rng rng(3303);
  RouterWeights rw;
  rw.w1 = Tensor::randn({6, 2}, rng, 0.4);
  rw.b1 = Tensor::zeros({2});
  rw.w2 = Tensor::randn({2, 1}, rng, 0.4);
  rw.b2 = Tensor::zeros({1});
  RdsConfig cfg;
  cfg.alpha = 2;
  cfg.depth = 1;
  Tensor h0 = Tensor::randn({4, 6}, rng, 1.0);
  std::vector<Tensor> e = {Tensor::zeros({6})};
  int calls = 0;
  auto refine = [&](const Tensor& h_prev, const std::vector<int>& idx) {
    ++calls;
    return gather_rows(h_prev, idx);
  };
  auto out = rds::pipeline(h0, rw, e, 0, 3, cfg, refine);
  CHECK(calls == 1);
  CHECK(max_abs_diff(out.h, h0) == 0.0);
  REQUIRE(out.rows.size() == 1);
  CHECK(out.rows[0].selected.size() == 2);
  CHECK(out.rows[0].mean_score > 0.0);
  CHECK(out.rows[0].mean_score < 1.0);

  // a live encoding moves exactly the selected rows
  std::vector<Tensor> e2 = {Tensor::full({6}, 0.5)};
  auto out2 = rds::pipeline(h0, rw, e2, 0, 3, cfg, refine);
  for (int r = 0; r < 4; ++r) {
    bool selected = std::find(out2.rows[0].selected.begin(), out2.rows[0].selected.end(), r) !=
                    out2.rows[0].selected.end();
    double diff = 0;
    for (int c = 0; c < 6; ++c)
      diff += std::abs(out2.h.get(size_t(r) * 6 + size_t(c)) - h0.get(size_t(r) * 6 + size_t(c)));
    if (selected)
      CHECK(diff > 0.0);
    else
      CHECK(diff == 0.0);
  }
}
