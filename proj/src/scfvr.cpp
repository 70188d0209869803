#include "lmr/scfvr.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "lmr/errors.hpp"
#include "lmr/ops.hpp"

namespace lmr {

void VisitedSet::mark(const std::vector<int>& idx) {
  for (int i : idx) {
    if (i < 0 || i >= int(flags.size())) throw UsageError("visited index out of range");
    if (flags[size_t(i)]) throw UsageError("visual token " + std::to_string(i) + " already visited");
    flags[size_t(i)] = 1;
    ++count;
  }
}

namespace scfvr {

Tensor aggregate_attention(const std::vector<Tensor>& trace) {
  if (trace.empty()) throw UsageError("aggregate_attention: empty trace");
  for (const Tensor& t : trace) {
    if (t.shape() != trace[0].shape() || t.rank() != 2)
      throw UsageError("aggregate_attention: trace shapes differ");
  }
  Tensor acc = trace[0];
  for (size_t i = 1; i < trace.size(); ++i) acc = add(acc, trace[i]);
  return scale(acc, 1.0 / double(trace.size()));
}

Tensor visual_scores(const Tensor& abar, const std::vector<uint8_t>& visual_mask) {
  if (abar.rank() != 2 || abar.dim(0) != abar.dim(1))
    throw UsageError("visual_scores: attention aggregate must be square");
  if (int(visual_mask.size()) != abar.dim(0))
    throw UsageError("visual_scores: mask length " + std::to_string(visual_mask.size()) +
                     " != sequence length " + std::to_string(abar.dim(0)));
  std::vector<int> pos;
  for (int i = 0; i < int(visual_mask.size()); ++i)
    if (visual_mask[size_t(i)]) pos.push_back(i);
  if (pos.empty()) throw UsageError("visual_scores: mask selects no positions");
  Tensor colsum = sum_axis(abar, 0);
  return gather_rows(colsum, pos);
}

std::vector<int> select_topk_unvisited(const std::vector<double>& scores,
                                       const VisitedSet& visited, int k, bool* exhausted) {
  if (k < 1) throw UsageError("select_topk_unvisited: k must be positive");
  if (scores.size() != visited.flags.size())
    throw UsageError("select_topk_unvisited: score/visited size mismatch");
  std::vector<int> order;
  for (int i = 0; i < int(scores.size()); ++i)
    if (!visited.is_visited(i)) order.push_back(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[size_t(a)] != scores[size_t(b)]) return scores[size_t(a)] > scores[size_t(b)];
    return a < b;
  });
  if (exhausted) *exhausted = int(order.size()) < k;
  if (int(order.size()) > k) order.resize(size_t(k));
  return order;
}

Tensor weight_selected(const Tensor& scores, const Tensor& v_rows) {
  if (scores.rank() != 1 || v_rows.rank() != 2 || scores.dim(0) != v_rows.dim(0))
    throw UsageError("weight_selected: need [k] scores and [k,d] rows");
  int k = scores.dim(0);
  Tensor w = reshape(softmax(reshape(scores, {1, k}), 1), {k});
  return mul_colvec(v_rows, w);
}

std::pair<int, int> find_dense_window(const std::vector<int>& indices, int g, int w,
                                      int* density) {
  if (g < 1 || w < 1 || w > g) throw UsageError("find_dense_window: bad grid/window size");
  std::vector<int> hit(size_t(g) * size_t(g), 0);
  for (int i : indices) {
    if (i < 0 || i >= g * g) throw UsageError("find_dense_window: index out of grid");
    hit[size_t(i)] = 1;
  }
  int best_r = 0, best_c = 0, best = -1;
  for (int r = 0; r + w <= g; ++r) {
    for (int c = 0; c + w <= g; ++c) {
      int n = 0;
      for (int dr = 0; dr < w; ++dr)
        for (int dc = 0; dc < w; ++dc) n += hit[size_t(r + dr) * g + size_t(c + dc)];
      if (n > best) {
        best = n;
        best_r = r;
        best_c = c;
      }
    }
  }
  if (density) *density = best;
  return {best_r, best_c};
}

Image crop_window(const Image& img, int win_r, int win_c, int w, int g) {
  if (img.side % g != 0) throw UsageError("crop_window: image side not divisible by grid");
  int cell = img.side / g;
  int x0 = win_c * cell, y0 = win_r * cell;
  Image patch = crop(img, x0, y0, x0 + w * cell, y0 + w * cell);
  return bilinear_resize(patch, img.side);
}

VisualReplayOutput replay(const Model& m, const std::vector<Tensor>& trace,
                          const std::vector<SegTag>& tags, const Tensor& visual_rows,
                          const Image& image, VisitedSet& visited) {
  const ModelConfig& cfg = m.config();
  if (int(trace.size()) != cfg.layers * cfg.heads)
    throw UsageError("replay: expected " + std::to_string(cfg.layers * cfg.heads) +
                     " attention matrices, got " + std::to_string(trace.size()));
  std::vector<uint8_t> mask(tags.size(), 0);
  int n_v = 0;
  for (size_t i = 0; i < tags.size(); ++i)
    if (tags[i] == SegTag::visual) {
      mask[i] = 1;
      ++n_v;
    }
  if (n_v != cfg.patches()) throw UsageError("replay: visual segment length mismatch");
  if (visual_rows.rank() != 2 || visual_rows.dim(0) != n_v || visual_rows.dim(1) != cfg.d)
    throw UsageError("replay: visual rows shape mismatch");
  if (int(visited.flags.size()) != n_v) throw UsageError("replay: visited set size mismatch");

  VisualReplayOutput out;
  Tensor scores = visual_scores(aggregate_attention(trace), mask);
  out.indices =
      select_topk_unvisited(scores.to_vec(), visited, cfg.scfvr.topk, &out.exhausted);
  if (out.indices.empty()) {
    out.empty = true;
    return out;
  }
  visited.mark(out.indices);

  out.b_tokens = weight_selected(gather_rows(scores, out.indices),
                                 gather_rows(visual_rows, out.indices));

  std::vector<int> counted;
  if (cfg.scfvr.count_visited) {
    for (int i = 0; i < n_v; ++i)
      if (visited.is_visited(i)) counted.push_back(i);
  } else {
    counted = out.indices;
  }
  auto [wr, wc] = find_dense_window(counted, cfg.patch_grid, cfg.scfvr.window, &out.density);
  out.win_r = wr;
  out.win_c = wc;

  Image fine = crop_window(image, wr, wc, cfg.scfvr.window, cfg.patch_grid);
  out.u_ref = detach(mean_rows(m.encode_image(fine)));
  out.pooled = mean_rows(out.b_tokens);
  out.recon = mse(matmul(reshape(out.pooled, {1, cfg.d}), m.sr_head()),
                  reshape(out.u_ref, {1, cfg.d}));
  return out;
}

void write_crop_log(const std::vector<CropLogRow>& rows, const std::string& path) {
  FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw UsageError("cannot write " + path);
  std::fprintf(f, "example_id,t,r,c,w,density,selected\n");
  for (const CropLogRow& row : rows) {
    std::string sel;
    for (size_t i = 0; i < row.selected.size(); ++i) {
      if (i) sel += ';';
      sel += std::to_string(row.selected[i]);
    }
    std::fprintf(f, "%lld,%d,%d,%d,%d,%d,%s\n", (long long)row.example_id, row.t, row.r, row.c,
                 row.w, row.density, sel.c_str());
  }
  std::fclose(f);
}

}  // namespace scfvr
}  // namespace lmr
