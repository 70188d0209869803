#include "lmr/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "lmr/errors.hpp"
#include "lmr/trainer.hpp"

namespace lmr {

std::vector<double> jacobi_singular_values(std::vector<double> a, int rows, int cols) {
  if (rows < 1 || cols < 1 || int(a.size()) != rows * cols)
    throw UsageError("jacobi_singular_values: bad dimensions");
  // Work on a tall matrix so the one-sided sweeps run over the short axis.
  int m = rows, n = cols;
  if (m < n) {
    std::vector<double> t(a.size());
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) t[size_t(c) * rows + size_t(r)] = a[size_t(r) * cols + size_t(c)];
    a.swap(t);
    std::swap(m, n);
  }
  auto col = [&](int j) { return a.data() + size_t(j) * size_t(m); };
  // Column-major for contiguous column access.
  {
    std::vector<double> t(a.size());
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < n; ++c) t[size_t(c) * m + size_t(r)] = a[size_t(r) * n + size_t(c)];
    a.swap(t);
  }
  const double tol = 1e-12;
  for (int sweep = 0; sweep < 60; ++sweep) {
    bool rotated = false;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        double alpha = 0, beta = 0, gamma = 0;
        const double* cp = col(p);
        const double* cq = col(q);
        for (int i = 0; i < m; ++i) {
          alpha += cp[i] * cp[i];
          beta += cq[i] * cq[i];
          gamma += cp[i] * cq[i];
        }
        if (std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        double zeta = (beta - alpha) / (2.0 * gamma);
        double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        double c = 1.0 / std::sqrt(1.0 + t * t);
        double s = c * t;
        double* wp = col(p);
        double* wq = col(q);
        for (int i = 0; i < m; ++i) {
          double vp = wp[i], vq = wq[i];
          wp[i] = c * vp - s * vq;
          wq[i] = s * vp + c * vq;
        }
      }
    }
    if (!rotated) break;
  }
  std::vector<double> sv(size_t(n), 0.0);
  for (int j = 0; j < n; ++j) {
    double ss = 0;
    const double* cj = col(j);
    for (int i = 0; i < m; ++i) ss += cj[i] * cj[i];
    sv[size_t(j)] = std::sqrt(ss);
  }
  std::sort(sv.begin(), sv.end(), std::greater<double>());
  return sv;
}

double nuclear_norm(const Tensor& t) {
  if (t.rank() != 2) throw UsageError("nuclear_norm: rank-2 tensor required");
  std::vector<double> sv = jacobi_singular_values(t.to_vec(), t.dim(0), t.dim(1));
  double s = 0;
  for (double v : sv) s += v;
  return s;
}

namespace {

double grad_nuclear(const Tensor& p) {
  if (!p.has_grad()) throw UsageError("parameter '" + p.name() + "' carries no gradient");
  std::vector<double> g = p.grad_to_vec();
  std::vector<double> sv = jacobi_singular_values(std::move(g), p.dim(0), p.dim(1));
  double s = 0;
  for (double v : sv) s += v;
  return s;
}

}  // namespace

std::vector<TokenGradRow> token_grad_probe(Model& m, const Example& ex, int stage,
                                           const std::string& mode, int epoch) {
  m.zero_grads();
  std::vector<TokenGradRow> rows;
  {
    Tape tape;
    ExampleLossOutput out = example_loss(m, ex, stage, mode);
    tape.backward(out.total);
    const std::vector<Tensor>& states = out.fwd.states;
    if (states.empty()) throw UsageError("token_grad_probe: forward kept no states");
    for (size_t s = 0; s < states.size(); ++s) {
      const Tensor& st = states[s];
      if (!st.has_grad())
        throw UsageError("token_grad_probe: state gradients were not retained");
      std::vector<double> g = st.grad_to_vec();
      int p = st.dim(0), d = st.dim(1);
      for (int tok = 0; tok < p; ++tok) {
        double ss = 0;
        for (int j = 0; j < d; ++j) {
          double v = g[size_t(tok) * d + size_t(j)];
          ss += v * v;
        }
        rows.push_back({epoch, int(s) - 1, tok, seg_tag_name(out.tags[size_t(tok)]),
                        std::sqrt(ss)});
      }
    }
  }
  m.zero_grads();
  return rows;
}

std::vector<FactorNuclearRow> factor_nuclear_probe(Model& m,
                                                   const std::vector<Example>& examples,
                                                   const std::string& split, int stage,
                                                   const std::string& mode, int epoch,
                                                   int micro_batch) {
  if (examples.empty()) throw UsageError("factor_nuclear_probe: empty split");
  int n = std::min<int>(micro_batch, int(examples.size()));
  m.zero_grads();
  for (int i = 0; i < n; ++i) {
    Tape tape;
    ExampleLossOutput out = example_loss(m, examples[size_t(i)], stage, mode);
    tape.backward(scale(out.total, 1.0 / double(n)));
  }
  static const char* kProj[4] = {"q", "k", "v", "o"};
  std::vector<FactorNuclearRow> rows;
  for (int l = 0; l < m.config().layers; ++l) {
    for (int pj = 0; pj < 4; ++pj) {
      std::string base = "layer" + std::to_string(l) + ".attn." + kProj[pj];
      rows.push_back({epoch, l, kProj[pj], "a", split, grad_nuclear(m.param(base + ".a"))});
      rows.push_back({epoch, l, kProj[pj], "b", split, grad_nuclear(m.param(base + ".b"))});
    }
  }
  m.zero_grads();
  return rows;
}

void write_token_grads(const std::vector<TokenGradRow>& rows, const std::string& path,
                       bool append) {
  FILE* f = std::fopen(path.c_str(), append ? "ab" : "wb");
  if (!f) throw UsageError("cannot write " + path);
  if (!append) std::fprintf(f, "epoch,layer,token_index,segment,fro_norm\n");
  for (const TokenGradRow& r : rows)
    std::fprintf(f, "%d,%d,%d,%s,%.17g\n", r.epoch, r.layer, r.token_index, r.segment.c_str(),
                 r.fro_norm);
  std::fclose(f);
}

void write_factor_nuclear(const std::vector<FactorNuclearRow>& rows, const std::string& path,
                          bool append) {
  FILE* f = std::fopen(path.c_str(), append ? "ab" : "wb");
  if (!f) throw UsageError("cannot write " + path);
  if (!append) std::fprintf(f, "epoch,layer,proj,factor,split,nuc_norm\n");
  for (const FactorNuclearRow& r : rows)
    std::fprintf(f, "%d,%d,%s,%s,%s,%.17g\n", r.epoch, r.layer, r.proj.c_str(),
                 r.factor.c_str(), r.split.c_str(), r.nuc_norm);
  std::fclose(f);
}

}  // namespace lmr
