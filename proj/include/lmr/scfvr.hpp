#pragma once
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lmr/image.hpp"
#include "lmr/model.hpp"

namespace lmr {

struct VisitedSet {
  explicit VisitedSet(int n_v) : flags(size_t(n_v), 0) {}
  std::vector<uint8_t> flags;
  int count = 0;
  bool is_visited(int i) const { return flags[size_t(i)] != 0; }
  int remaining() const { return int(flags.size()) - count; }
  void mark(const std::vector<int>& idx);  // rejects re-visits
};

struct VisualReplayOutput {
  std::vector<int> indices;  // selected visual token ids, score order
  Tensor b_tokens;           // [|indices|, d] attention-weighted visual latents
  int win_r = 0, win_c = 0, density = 0;
  bool exhausted = false;  // fewer than K unvisited tokens remained
  bool empty = false;      // nothing left to select; b_tokens/pooled/recon unset
  Tensor pooled;           // [d] mean of b_tokens
  Tensor u_ref;            // [d] pooled re-encoded crop, gradient-stopped
  Tensor recon;            // scalar reconstruction loss
};

struct CropLogRow {
  int64_t example_id = 0;
  int t = 0, r = 0, c = 0, w = 0, density = 0;
  std::vector<int> selected;
};

namespace scfvr {

// Mean of the layers*heads traced attention matrices.
Tensor aggregate_attention(const std::vector<Tensor>& trace);

// Column sums of abar restricted to the masked positions, in position order.
Tensor visual_scores(const Tensor& abar, const std::vector<uint8_t>& visual_mask);

// Top-k unvisited scores, descending, ties to the lower index; selects the
// remainder (setting *exhausted) when fewer than k are unvisited.
std::vector<int> select_topk_unvisited(const std::vector<double>& scores,
                                       const VisitedSet& visited, int k, bool* exhausted);

// Diag(softmax(scores)) * v_rows.
Tensor weight_selected(const Tensor& scores, const Tensor& v_rows);

// Window of side w (in grid cells) maximizing the count of listed cells,
// ties to the smallest r then c.  Cell of index i is (i / g, i % g).
std::pair<int, int> find_dense_window(const std::vector<int>& indices, int g, int w,
                                      int* density = nullptr);

// Pixel crop of the window, upsampled back to the full image side.
Image crop_window(const Image& img, int win_r, int win_c, int w, int g);

// One full replay step against a traced forward pass.
VisualReplayOutput replay(const Model& m, const std::vector<Tensor>& trace,
                          const std::vector<SegTag>& tags, const Tensor& visual_rows,
                          const Image& image, VisitedSet& visited);

void write_crop_log(const std::vector<CropLogRow>& rows, const std::string& path);

}  // namespace scfvr
}  // namespace lmr
