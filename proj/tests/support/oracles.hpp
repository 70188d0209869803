#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace lmr::testsupport {

// Repeated argmax scan: highest score first, strict > keeps the lowest index
// on ties.  Deliberately O(n*k) and sort-free.
inline std::vector<int> topk_oracle(const std::vector<double>& scores,
                                    const std::vector<uint8_t>& visited, int k,
                                    bool* exhausted) {
  std::vector<uint8_t> taken(scores.size(), 0);
  std::vector<int> out;
  for (int round = 0; round < k; ++round) {
    int best = -1;
    for (int i = 0; i < int(scores.size()); ++i) {
      if (visited[size_t(i)] || taken[size_t(i)]) continue;
      if (best == -1 || scores[size_t(i)] > scores[size_t(best)]) best = i;
    }
    if (best == -1) break;
    taken[size_t(best)] = 1;
    out.push_back(best);
  }
  if (exhausted) *exhausted = int(out.size()) < k;
  return out;
}

// Counts straight off the index list per window, explicit lexicographic
// tie-break, reverse scan order so ties cannot ride on loop order.
inline std::pair<int, int> window_oracle(const std::vector<int>& indices, int g, int w,
                                         int* density) {
  int best_r = g - w, best_c = g - w, best = -1;
  for (int r = g - w; r >= 0; --r) {
    for (int c = g - w; c >= 0; --c) {
      int cnt = 0;
      for (int i : indices) {
        int ri = i / g, ci = i % g;
        if (ri >= r && ri < r + w && ci >= c && ci < c + w) ++cnt;
      }
      if (cnt > best || (cnt == best && (r < best_r || (r == best_r && c < best_c)))) {
        best = cnt;
        best_r = r;
        best_c = c;
      }
    }
  }
  if (density) *density = best;
  return {best_r, best_c};
}

// Singular values via a two-sided Jacobi EIGENVALUE solve on the Gram matrix,
// independent of the one-sided column-rotation SVD under test.
inline std::vector<double> gram_singular_values(const std::vector<double>& a, int rows,
                                                int cols) {
  int m = rows, n = cols;
  bool use_at = n > m;  // work with the smaller Gram matrix
  int k = use_at ? m : n;
  std::vector<double> s(size_t(k) * size_t(k), 0.0);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      double acc = 0;
      if (use_at) {
        for (int t = 0; t < n; ++t)
          acc += a[size_t(i) * size_t(n) + size_t(t)] * a[size_t(j) * size_t(n) + size_t(t)];
      } else {
        for (int t = 0; t < m; ++t)
          acc += a[size_t(t) * size_t(n) + size_t(i)] * a[size_t(t) * size_t(n) + size_t(j)];
      }
      s[size_t(i) * size_t(k) + size_t(j)] = acc;
    }
  }
  auto at = [&](int i, int j) -> double& { return s[size_t(i) * size_t(k) + size_t(j)]; };
  for (int sweep = 0; sweep < 120; ++sweep) {
    double off = 0;
    for (int p = 0; p < k; ++p)
      for (int q = p + 1; q < k; ++q) off += at(p, q) * at(p, q);
    if (off < 1e-28) break;
    for (int p = 0; p < k - 1; ++p) {
      for (int q = p + 1; q < k; ++q) {
        if (std::abs(at(p, q)) < 1e-300) continue;
        double theta = 0.5 * std::atan2(2.0 * at(p, q), at(q, q) - at(p, p));
        double c = std::cos(theta), sn = std::sin(theta);
        for (int t = 0; t < k; ++t) {
          double sp = at(p, t), sq = at(q, t);
          at(p, t) = c * sp - sn * sq;
          at(q, t) = sn * sp + c * sq;
        }
        for (int t = 0; t < k; ++t) {
          double sp = at(t, p), sq = at(t, q);
          at(t, p) = c * sp - sn * sq;
          at(t, q) = sn * sp + c * sq;
        }
      }
    }
  }
  std::vector<double> sv(size_t(k), 0.0);
  for (int i = 0; i < k; ++i) sv[size_t(i)] = std::sqrt(std::max(0.0, at(i, i)));
  std::sort(sv.begin(), sv.end(), std::greater<double>());
  return sv;
}

}  // namespace lmr::testsupport
