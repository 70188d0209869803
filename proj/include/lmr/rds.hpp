#pragma once
#include <functional>
#include <string>
#include <vector>

#include "lmr/ops.hpp"

namespace lmr {

struct RdsConfig {
  bool enabled = true;
  int depth = 1;                   // refinement passes per layer
  std::string schedule = "fixed";  // fixed | cosine
  int alpha = 32;                  // fixed-mode retention
  int alpha_start = 64, alpha_end = 16;  // cosine-mode endpoints
  bool attend_full = false;  // refined tokens may attend outside the selected set
};

struct RouterWeights {
  Tensor w1, b1, w2, b2;  // d -> d/4 -> 1, tanh hidden, sigmoid output
};

struct RdsLayerDepth {
  int layer = 0, depth = 0, alpha = 0;
  std::vector<int> selected;  // ascending original positions
  double mean_score = 0.0;    // mean gate value over the selected rows
};

namespace rds {

// Retained-token count for a layer; cosine mode decays from alpha_start at
// layer 0 to alpha_end at layer total_layers.
int retention(int layer, int total_layers, const RdsConfig& cfg);

// Per-token scores in (0,1), shape [P].
Tensor score_tokens(const Tensor& h, const RouterWeights& rw);

// Indices of the alpha highest scores (ties to the lower index), returned in
// ascending index order; alpha >= scores count selects everything.
std::vector<int> top_alpha(const std::vector<double>& scores, int alpha);

// Applies the owning layer's transformer block to the selected rows of
// h_prev (ascending original order) and returns the refined rows.
using RefineBlock = std::function<Tensor(const Tensor& h_prev, const std::vector<int>& idx)>;

struct PipelineResult {
  Tensor h;
  std::vector<RdsLayerDepth> rows;
};

// Full per-layer pipeline: score, select, refine, gate, pass through
// unselected rows, then aggregate depth contributions onto h0 through the
// learned per-depth encodings e (zero e leaves h0 untouched).
PipelineResult pipeline(const Tensor& h0, const RouterWeights& rw, const std::vector<Tensor>& e,
                        int layer, int total_layers, const RdsConfig& cfg,
                        const RefineBlock& refine);

}  // namespace rds
}  // namespace lmr
