#include "lmr/rds.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lmr/errors.hpp"

namespace lmr::rds {

int retention(int layer, int total_layers, const RdsConfig& cfg) {
  if (layer < 0 || total_layers < 1 || layer > total_layers)
    throw UsageError("rds: retention layer index out of range");
  if (cfg.schedule == "fixed") return cfg.alpha;
  if (cfg.schedule == "cosine") {
    double as = cfg.alpha_start, ae = cfg.alpha_end;
    double v = ae + (as - ae) / 2.0 * (1.0 + std::cos(M_PI * layer / total_layers));
    return int(std::lround(v));
  }
  throw UsageError("rds: unknown schedule '" + cfg.schedule + "'");
}

Tensor score_tokens(const Tensor& h, const RouterWeights& rw) {
  Tensor hid = tanh(add_rowvec(matmul(h, rw.w1), rw.b1));
  Tensor s = sigmoid(add_rowvec(matmul(hid, rw.w2), rw.b2));
  return reshape(s, {h.dim(0)});
}

std::vector<int> top_alpha(const std::vector<double>& scores, int alpha) {
  if (alpha < 0) throw UsageError("rds: negative retention");
  int n = int(scores.size());
  int k = std::min(alpha, n);
  std::vector<int> order(size_t(n), 0);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[size_t(a)] != scores[size_t(b)]) return scores[size_t(a)] > scores[size_t(b)];
    return a < b;
  });
  order.resize(size_t(k));
  std::sort(order.begin(), order.end());
  return order;
}

PipelineResult pipeline(const Tensor& h0, const RouterWeights& rw, const std::vector<Tensor>& e,
                        int layer, int total_layers, const RdsConfig& cfg,
                        const RefineBlock& refine) {
  PipelineResult out;
  int depth = std::min<int>(cfg.depth, int(e.size()));
  if (depth == 0) {
    out.h = h0;
    return out;
  }
  int p = h0.dim(0);
  Tensor h_prev = h0;
  Tensor acc = h0;
  for (int d = 1; d <= depth; ++d) {
    Tensor s = score_tokens(h_prev, rw);
    int alpha = retention(layer, total_layers, cfg);
    std::vector<int> idx = top_alpha(s.to_vec(), alpha);

    Tensor refined = refine(h_prev, idx);
    Tensor gated = mul_colvec(refined, gather_rows(s, idx));
    Tensor placed = scatter_rows(gated, idx, p);
    acc = add(acc, mul_rowvec(placed, e[size_t(d - 1)]));

    RdsLayerDepth row;
    row.layer = layer;
    row.depth = d;
    row.alpha = alpha;
    row.selected = idx;
    auto sv = s.to_vec();
    double m = 0.0;
    for (int i : idx) m += sv[size_t(i)];
    row.mean_score = idx.empty() ? 0.0 : m / double(idx.size());
    out.rows.push_back(std::move(row));

    if (d < depth) {
      // pass-through for unselected rows feeds the next refinement pass
      std::vector<double> keep(size_t(p), 1.0);
      for (int i : idx) keep[size_t(i)] = 0.0;
      h_prev = add(mul_colvec(h_prev, Tensor::from_vec({p}, keep, h0.dtype())), placed);
    }
  }
  out.h = acc;
  return out;
}

}  // namespace lmr::rds
