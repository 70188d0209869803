#include "lmr/ops.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

#include "lmr/kernels.hpp"

namespace lmr {
namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::runtime_error(msg);
}

void check_binary(const char* op, const Tensor& a, const Tensor& b) {
  require(a.defined() && b.defined(), std::string(op) + ": undefined input");
  require(a.dtype() == b.dtype(), std::string(op) + ": dtype mismatch");
}

int rows_of(const Tensor& t) { return t.rank() == 1 ? t.dim(0) : t.dim(0); }
int cols_of(const Tensor& t) { return t.rank() == 1 ? 1 : t.dim(1); }

// Registers the backward closure if a tape is active and any parent wants
// gradients; marks the output as gradient-carrying in that case.
void rec(const char* op, std::initializer_list<Tensor> parents, Tensor& out,
         std::function<void()> bw) {
  Tape* tp = Tape::current();
  if (!tp) return;
  bool any = false;
  for (const Tensor& p : parents) any = any || p.impl->requires_grad;
  if (!any) return;
  out.impl->requires_grad = true;
  std::vector<std::shared_ptr<TensorImpl>> ps;
  for (const Tensor& p : parents) ps.push_back(p.impl);
  tp->record(op, std::move(ps), out.impl, std::move(bw));
}

template <class T>
void acc(TensorImpl& t, const T* g, size_t n) {
  ensure_grad(t);
  kernels::axpy(n, T(1), g, grad_view<T>(t).data());
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_binary("add", a, b);
  require(same_shape(a, b), "add: shape mismatch");
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    kernels::add(a.numel(), view<T>(*a.impl).data(), view<T>(*b.impl).data(),
                 view<T>(*out.impl).data());
  });
  rec("add", {a, b}, out, [ai = a.impl, bi = b.impl, oi = out.impl] {
    dispatch(oi->dt, [&](auto tag) {
      using T = decltype(tag);
      auto og = grad_view<T>(*oi);
      if (ai->requires_grad) acc(*ai, og.data(), og.size());
      if (bi->requires_grad) acc(*bi, og.data(), og.size());
    });
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_binary("sub", a, b);
  require(same_shape(a, b), "sub: shape mismatch");
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto av = view<T>(*a.impl);
    auto bv = view<T>(*b.impl);
    auto ov = view<T>(*out.impl);
    for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] - bv[i];
  });
  rec("sub", {a, b}, out, [ai = a.impl, bi = b.impl, oi = out.impl] {
    dispatch(oi->dt, [&](auto tag) {
      using T = decltype(tag);
      auto og = grad_view<T>(*oi);
      if (ai->requires_grad) acc(*ai, og.data(), og.size());
      if (bi->requires_grad) {
        ensure_grad(*bi);
        kernels::axpy(og.size(), T(-1), og.data(), grad_view<T>(*bi).data());
      }
    });
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_binary("mul", a, b);
  require(same_shape(a, b), "mul: shape mismatch");
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    kernels::mul(a.numel(), view<T>(*a.impl).data(), view<T>(*b.impl).data(),
                 view<T>(*out.impl).data());
  });
  rec("mul", {a, b}, out, [ai = a.impl, bi = b.impl, oi = out.impl] {
    dispatch(oi->dt, [&](auto tag) {
      using T = decltype(tag);
      auto og = grad_view<T>(*oi);
      size_t n = og.size();
      if (ai->requires_grad) {
        ensure_grad(*ai);
        auto ag = grad_view<T>(*ai);
        auto bv = view<T>(*bi);
        for (size_t i = 0; i < n; ++i) ag[i] += og[i] * bv[i];
      }
      if (bi->requires_grad) {
        ensure_grad(*bi);
        auto bg = grad_view<T>(*bi);
        auto av = view<T>(*ai);
        for (size_t i = 0; i < n; ++i) bg[i] += og[i] * av[i];
      }
    });
  });
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    kernels::scale(a.numel(), T(c), view<T>(*a.impl).data(), view<T>(*out.impl).data());
  });
  rec("scale", {a}, out, [ai = a.impl, oi = out.impl, c] {
    dispatch(oi->dt, [&](auto tag) {
      using T = decltype(tag);
      auto og = grad_view<T>(*oi);
      ensure_grad(*ai);
      kernels::axpy(og.size(), T(c), og.data(), grad_view<T>(*ai).data());
    });
  });
  return out;
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  check_binary("add_rowvec", x, v);
  require(x.rank() == 2 && v.rank() == 1 && x.dim(1) == v.dim(0),
          "add_rowvec: need x[m,n] and v[n]");
  int m = x.dim(0), n = x.dim(1);
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xv = view<T>(*x.impl);
    auto vv = view<T>(*v.impl);
    auto ov = view<T>(*out.impl);
    for (int i = 0; i < m; ++i)
      kernels::add(size_t(n), xv.data() + size_t(i) * n, vv.data(), ov.data() + size_t(i) * n);
  });
  rec("add_rowvec", {x, v}, out, [xi = x.impl, vi = v.impl, oi = out.impl, m, n] {
    dispatch(oi->dt, [&](auto tag) {
      using T = decltype(tag);
      auto og = grad_view<T>(*oi);
      if (xi->requires_grad) acc(*xi, og.data(), og.size());
      if (vi->requires_grad) {
        ensure_grad(*vi);
        auto vg = grad_view<T>(*vi);
        for (int i = 0; i < m; ++i)
          kernels::axpy(size_t(n), T(1), og.data() + size_t(i) * n, vg.data());
      }
    });
  });
  return out;
}

Tensor mul_rowvec(const Tensor& x, const Tensor& v) {
  check_binary("mul_rowvec", x, v);
  require(x.rank() == 2 && v.rank() == 1 && x.dim(1) == v.dim(0),
          "mul_rowvec: need x[m,n] and v[n]");
  int m = x.dim(0), n = x.dim(1);
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xv = view<T>(*x.impl);
    auto vv = view<T>(*v.impl);
    auto ov = view<T>(*out.impl);
    for (int i = 0; i < m; ++i)
      kernels::mul(size_t(n), xv.data() + size_t(i) * n, vv.data(), ov.data() + size_t(i) * n);
  });
  rec("mul_rowvec", {x, v}, out, [xi = x.impl, vi = v.impl, oi = out.impl, m, n] {
    dispatch(oi->dt, [&](auto tag) {
      using T = decltype(tag);
      auto og = grad_view<T>(*oi);
      auto xv = view<T>(*xi);
      auto vv = view<T>(*vi);
      if (xi->requires_grad) {
        ensure_grad(*xi);
        auto xg = grad_view<T>(*xi);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) xg[size_t(i) * n + j] += og[size_t(i) * n + j] * vv[j];
      }
      if (vi->requires_grad) {
        ensure_grad(*vi);
        auto vg = grad_view<T>(*vi);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) vg[j] += og[size_t(i) * n + j] * xv[size_t(i) * n + j];
      }
    });
  });
  return out;
}

Tensor mul_colvec(const Tensor& x, const Tensor& s) {
  check_binary("mul_colvec", x, s);
  require(x.rank() == 2 && s.rank() == 1 && x.dim(0) == s.dim(0),
          "mul_colvec: need x[m,n] and s[m]");
  int m = x.dim(0), n = x.dim(1);
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xv = view<T>(*x.impl);
    auto sv = view<T>(*s.impl);
    auto ov = view<T>(*out.impl);
    for (int i = 0; i < m; ++i)
      kernels::scale(size_t(n), sv[i], xv.data() + size_t(i) * n, ov.data() + size_t(i) * n);
  });
  rec("mul_colvec", {x, s}, out, [xi = x.impl, si = s.impl, oi = out.impl, m, n] {
    dispatch(oi->dt, [&](auto tag) {
      using T = decltype(tag);
      auto og = grad_view<T>(*oi);
      auto xv = view<T>(*xi);
      auto sv = view<T>(*si);
      if (xi->requires_grad) {
        ensure_grad(*xi);
        auto xg = grad_view<T>(*xi);
        for (int i = 0; i < m; ++i)
          kernels::axpy(size_t(n), sv[i], og.data() + size_t(i) * n, xg.data() + size_t(i) * n);
      }
      if (si->requires_grad) {
        ensure_grad(*si);
        auto sg = grad_view<T>(*si);
        for (int i = 0; i < m; ++i)
          sg[i] += kernels::dot(size_t(n), og.data() + size_t(i) * n, xv.data() + size_t(i) * n);
      }
    });
  });
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_binary("matmul", a, b);
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
          "matmul: need a[m,k] and b[k,n]");
  int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n}, a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    kernels::gemm_nn(false, m, k, n, view<T>(*a.impl).data(), view<T>(*b.impl).data(),
                     view<T>(*out.impl).data());
  });
  rec("matmul", {a, b}, out, [ai = a.impl, bi = b.impl, oi = out.impl, m, k, n] {
    dispatch(oi->dt, [&](auto tag) {
      using T = decltype(tag);
      const T* g = grad_view<T>(*oi).data();
      if (ai->requires_grad) {
        ensure_grad(*ai);
        kernels::gemm_nt(true, m, n, k, g, view<T>(*bi).data(), grad_view<T>(*ai).data());
      }
      if (bi->requires_grad) {
        ensure_grad(*bi);
        kernels::gemm_tn(true, k, m, n, view<T>(*ai).data(), g, grad_view<T>(*bi).data());
      }
    });
  });
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  check_binary("matmul_nt", a, b);
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(1),
          "matmul_nt: need a[m,k] and b[n,k]");
  int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  Tensor out = Tensor::zeros({m, n}, a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    kernels::gemm_nt(false, m, k, n, view<T>(*a.impl).data(), view<T>(*b.impl).data(),
                     view<T>(*out.impl).data());
  });
  rec("matmul_nt", {a, b}, out, [ai = a.impl, bi = b.impl, oi = out.impl, m, k, n] {
    dispatch(oi->dt, [&](auto tag) {
      using T = decltype(tag);
      const T* g = grad_view<T>(*oi).data();
      if (ai->requires_grad) {
        ensure_grad(*ai);
        kernels::gemm_nn(true, m, n, k, g, view<T>(*bi).data(), grad_view<T>(*ai).data());
      }
      if (bi->requires_grad) {
        ensure_grad(*bi);
        kernels::gemm_tn(true, n, m, k, g, view<T>(*ai).data(), grad_view<T>(*bi).data());
      }
    });
  });
  return out;
}

Tensor reshape(const Tensor& x, std::vector<int> shape) {
  size_t n = 1;
  for (int e : shape) n *= size_t(e);
  require(n == x.numel(), "reshape: element count mismatch");
  Tensor out = Tensor::zeros(std::move(shape), x.dtype());
  out.impl->data = x.impl->data;
  rec("reshape", {x}, out, [xi = x.impl, oi = out.impl] {
    dispatch(oi->dt, [&](auto tag) {
      using T = decltype(tag);
      auto og = grad_view<T>(*oi);
      acc(*xi, og.data(), og.size());
    });
  });
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& xs) {
  require(!xs.empty(), "concat_rows: empty input list");
  int rank = xs[0].rank();
  require(rank == 1 || rank == 2, "concat_rows: rank must be 1 or 2");
  int c = cols_of(xs[0]);
  int total = 0;
  for (const Tensor& t : xs) {
    require(t.rank() == rank && cols_of(t) == c, "concat_rows: piece shape mismatch");
    require(t.dtype() == xs[0].dtype(), "concat_rows: dtype mismatch");
    total += rows_of(t);
  }
  Tensor out = rank == 2 ? Tensor::zeros({total, c}, xs[0].dtype())
                         : Tensor::zeros({total}, xs[0].dtype());
  size_t off = 0;
  for (const Tensor& t : xs) {
    std::memcpy(out.impl->data.data() + off, t.impl->data.data(), t.impl->data.size());
    off += t.impl->data.size();
  }
  Tape* tp = Tape::current();
  bool any = false;
  for (const Tensor& t : xs) any = any || t.requires_grad();
  if (tp && any) {
    out.impl->requires_grad = true;
    std::vector<std::shared_ptr<TensorImpl>> ps;
    for (const Tensor& t : xs) ps.push_back(t.impl);
    auto oi = out.impl;
    tp->record("concat_rows", ps, oi, [ps, oi, c] {
      dispatch(oi->dt, [&](auto tag) {
        using T = decltype(tag);
        auto og = grad_view<T>(*oi);
        size_t off = 0;
        for (auto& p : ps) {
          size_t n = p->numel();
          if (p->requires_grad) acc(*p, og.data() + off, n);
          off += n;
        }
      });
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& xs) {
  require(!xs.empty(), "concat_cols: empty input list");
  int m = xs[0].dim(0);
  int total = 0;
  for (const Tensor& t : xs) {
    require(t.rank() == 2 && t.dim(0) == m, "concat_cols: piece shape mismatch");
    require(t.dtype() == xs[0].dtype(), "concat_cols: dtype mismatch");
    total += t.dim(1);
  }
  Tensor out = Tensor::zeros({m, total}, xs[0].dtype());
  dispatch(out.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto ov = view<T>(*out.impl);
    int coff = 0;
    for (const Tensor& t : xs) {
      auto tv = view<T>(*t.impl);
      int c = t.dim(1);
      for (int i = 0; i < m; ++i)
        std::memcpy(ov.data() + size_t(i) * total + coff, tv.data() + size_t(i) * c,
                    sizeof(T) * size_t(c));
      coff += c;
    }
  });
  Tape* tp = Tape::current();
  bool any = false;
  for (const Tensor& t : xs) any = any || t.requires_grad();
  if (tp && any) {
    out.impl->requires_grad = true;
    std::vector<std::shared_ptr<TensorImpl>> ps;
    std::vector<int> widths;
    for (const Tensor& t : xs) {
      ps.push_back(t.impl);
      widths.push_back(t.dim(1));
    }
    auto oi = out.impl;
    tp->record("concat_cols", ps, oi, [ps, oi, widths, m, total] {
      dispatch(oi->dt, [&](auto tag) {
        using T = decltype(tag);
        auto og = grad_view<T>(*oi);
        int coff = 0;
        for (size_t pi = 0; pi < ps.size(); ++pi) {
          int c = widths[pi];
          if (ps[pi]->requires_grad) {
            ensure_grad(*ps[pi]);
            auto pg = grad_view<T>(*ps[pi]);
            for (int i = 0; i < m; ++i)
              kernels::axpy(size_t(c), T(1), og.data() + size_t(i) * total + coff,
                            pg.data() + size_t(i) * c);
          }
          coff += c;
        }
      });
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& x, int r0, int r1) {
  require(x.rank() == 2, "slice_rows: rank-2 input required");
  require(0 <= r0 && r0 < r1 && r1 <= x.dim(0), "slice_rows: bad range");
  int n = x.dim(1);
  Tensor out = Tensor::zeros({r1 - r0, n}, x.dtype());
  size_t esz = dtype_size(x.dtype());
  std::memcpy(out.impl->data.data(), x.impl->data.data() + size_t(r0) * n * esz,
              size_t(r1 - r0) * n * esz);
  rec("slice_rows", {x}, out, [xi = x.impl, oi = out.impl, r0, n] {
    dispatch(oi->dt, [&](auto tag) {
      using T = decltype(tag);
      auto og = grad_view<T>(*oi);
      ensure_grad(*xi);
      kernels::axpy(og.size(), T(1), og.data(), grad_view<T>(*xi).data() + size_t(r0) * n);
    });
  });
  return out;
}

Tensor slice_cols(const Tensor& x, int c0, int c1) {
  require(x.rank() == 2, "slice_cols: rank-2 input required");
  require(0 <= c0 && c0 < c1 && c1 <= x.dim(1), "slice_cols: bad range");
  int m = x.dim(0), n = x.dim(1), w = c1 - c0;
  Tensor out = Tensor::zeros({m, w}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xv = view<T>(*x.impl);
    auto ov = view<T>(*out.impl);
    for (int i = 0; i < m; ++i)
      std::memcpy(ov.data() + size_t(i) * w, xv.data() + size_t(i) * n + c0, sizeof(T) * size_t(w));
  });
  rec("slice_cols", {x}, out, [xi = x.impl, oi = out.impl, c0, m, n, w] {
    dispatch(oi->dt, [&](auto tag) {
      using T = decltype(tag);
      auto og = grad_view<T>(*oi);
      ensure_grad(*xi);
      auto xg = grad_view<T>(*xi);
      for (int i = 0; i < m; ++i)
        kernels::axpy(size_t(w), T(1), og.data() + size_t(i) * w, xg.data() + size_t(i) * n + c0);
    });
  });
  return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& idx) {
  require(x.rank() == 1 || x.rank() == 2, "gather_rows: rank must be 1 or 2");
  int m = x.dim(0);
  int w = x.rank() == 2 ? x.dim(1) : 1;
  for (int i : idx) require(0 <= i && i < m, "gather_rows: index out of range");
  int k = int(idx.size());
  Tensor out = x.rank() == 2 ? Tensor::zeros({k, w}, x.dtype()) : Tensor::zeros({k}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xv = view<T>(*x.impl);
    auto ov = view<T>(*out.impl);
    for (int j = 0; j < k; ++j)
      std::memcpy(ov.data() + size_t(j) * w, xv.data() + size_t(idx[size_t(j)]) * w,
                  sizeof(T) * size_t(w));
  });
  rec("gather_rows", {x}, out, [xi = x.impl, oi = out.impl, idx, w] {
    dispatch(oi->dt, [&](auto tag) {
      using T = decltype(tag);
      auto og = grad_view<T>(*oi);
      ensure_grad(*xi);
      auto xg = grad_view<T>(*xi);
      for (size_t j = 0; j < idx.size(); ++j)
        kernels::axpy(size_t(w), T(1), og.data() + j * w, xg.data() + size_t(idx[j]) * w);
    });
  });
  return out;
}

Tensor scatter_rows(const Tensor& rows, const std::vector<int>& idx, int m) {
  require(rows.rank() == 2, "scatter_rows: rank-2 input required");
  require(int(idx.size()) == rows.dim(0), "scatter_rows: index count != row count");
  std::vector<uint8_t> seen(size_t(m), 0);
  for (int i : idx) {
    require(0 <= i && i < m, "scatter_rows: index out of range");
    require(!seen[size_t(i)], "scatter_rows: duplicate index");
    seen[size_t(i)] = 1;
  }
  int w = rows.dim(1);
  Tensor out = Tensor::zeros({m, w}, rows.dtype());
  dispatch(rows.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto rv = view<T>(*rows.impl);
    auto ov = view<T>(*out.impl);
    for (size_t j = 0; j < idx.size(); ++j)
      std::memcpy(ov.data() + size_t(idx[j]) * w, rv.data() + j * w, sizeof(T) * size_t(w));
  });
  rec("scatter_rows", {rows}, out, [ri = rows.impl, oi = out.impl, idx, w] {
    dispatch(oi->dt, [&](auto tag) {
      using T = decltype(tag);
      auto og = grad_view<T>(*oi);
      ensure_grad(*ri);
      auto rg = grad_view<T>(*ri);
      for (size_t j = 0; j < idx.size(); ++j)
        kernels::axpy(size_t(w), T(1), og.data() + size_t(idx[j]) * w, rg.data() + j * w);
    });
  });
  return out;
}

Tensor row(const Tensor& x, int i) {
  require(x.rank() == 2, "row: rank-2 input required");
  return reshape(gather_rows(x, {i}), {x.dim(1)});
}

Tensor sum_axis(const Tensor& x, int axis) {
  require(x.rank() == 2, "sum_axis: rank-2 input required");
  require(axis == 0 || axis == 1, "sum_axis: axis must be 0 or 1");
  int m = x.dim(0), n = x.dim(1);
  Tensor out = Tensor::zeros({axis == 0 ? n : m}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xv = view<T>(*x.impl);
    auto ov = view<T>(*out.impl);
    if (axis == 0) {
      for (int i = 0; i < m; ++i)
        kernels::axpy(size_t(n), T(1), xv.data() + size_t(i) * n, ov.data());
    } else {
      for (int i = 0; i < m; ++i) ov[i] = kernels::reduce_sum(size_t(n), xv.data() + size_t(i) * n);
    }
  });
  rec("sum_axis", {x}, out, [xi = x.impl, oi = out.impl, axis, m, n] {
    dispatch(oi->dt, [&](auto tag) {
      using T = decltype(tag);
      auto og = grad_view<T>(*oi);
      ensure_grad(*xi);
      auto xg = grad_view<T>(*xi);
      if (axis == 0) {
        for (int i = 0; i < m; ++i)
          kernels::axpy(size_t(n), T(1), og.data(), xg.data() + size_t(i) * n);
      } else {
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) xg[size_t(i) * n + j] += og[i];
      }
    });
  });
  return out;
}

Tensor mean_rows(const Tensor& x) {
  require(x.rank() == 2 && x.dim(0) > 0, "mean_rows: nonempty rank-2 input required");
  return scale(sum_axis(x, 0), 1.0 / x.dim(0));
}

Tensor rmsnorm(const Tensor& x, const Tensor& gain, double eps) {
  check_binary("rmsnorm", x, gain);
  require(x.rank() == 2 && gain.rank() == 1 && x.dim(1) == gain.dim(0),
          "rmsnorm: need x[m,n] and gain[n]");
  int m = x.dim(0), n = x.dim(1);
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  // per-row inverse rms, kept for backward
  auto inv = std::make_shared<std::vector<double>>(size_t(m));
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xv = view<T>(*x.impl);
    auto gv = view<T>(*gain.impl);
    auto ov = view<T>(*out.impl);
    for (int i = 0; i < m; ++i) {
      const T* xr = xv.data() + size_t(i) * n;
      T ms = kernels::dot(size_t(n), xr, xr) / T(n);
      T iv = T(1) / std::sqrt(ms + T(eps));
      (*inv)[size_t(i)] = double(iv);
      T* orow = ov.data() + size_t(i) * n;
      for (int j = 0; j < n; ++j) orow[j] = xr[j] * iv * gv[j];
    }
  });
  rec("rmsnorm", {x, gain}, out, [xi = x.impl, gi = gain.impl, oi = out.impl, inv, m, n] {
    dispatch(oi->dt, [&](auto tag) {
      using T = decltype(tag);
      auto og = grad_view<T>(*oi);
      auto xv = view<T>(*xi);
      auto gv = view<T>(*gi);
      std::vector<T> t(size_t(n), T(0));
      for (int i = 0; i < m; ++i) {
        const T* xr = xv.data() + size_t(i) * n;
        const T* gr = og.data() + size_t(i) * n;
        T iv = T((*inv)[size_t(i)]);
        for (int j = 0; j < n; ++j) t[size_t(j)] = gr[j] * gv[j];
        if (xi->requires_grad) {
          ensure_grad(*xi);
          auto xg = grad_view<T>(*xi);
          T s = kernels::dot(size_t(n), t.data(), xr);
          T c = s * iv * iv * iv / T(n);
          T* xgr = xg.data() + size_t(i) * n;
          for (int j = 0; j < n; ++j) xgr[j] += iv * t[size_t(j)] - c * xr[j];
        }
        if (gi->requires_grad) {
          ensure_grad(*gi);
          auto gg = grad_view<T>(*gi);
          for (int j = 0; j < n; ++j) gg[j] += gr[j] * xr[j] * iv;
        }
      }
    });
  });
  return out;
}

Tensor softmax(const Tensor& x, int axis) {
  require(x.rank() >= 1, "softmax: rank >= 1 required");
  require(0 <= axis && axis < x.rank(), "softmax: bad axis");
  size_t outer = 1, inner = 1;
  size_t e = size_t(x.dim(axis));
  for (int i = 0; i < axis; ++i) outer *= size_t(x.dim(i));
  for (int i = axis + 1; i < x.rank(); ++i) inner *= size_t(x.dim(i));
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xv = view<T>(*x.impl);
    auto ov = view<T>(*out.impl);
    for (size_t o = 0; o < outer; ++o)
      for (size_t i = 0; i < inner; ++i) {
        size_t base = o * e * inner + i;
        T mx = xv[base];
        for (size_t j = 1; j < e; ++j) mx = std::max(mx, xv[base + j * inner]);
        T s = T(0);
        for (size_t j = 0; j < e; ++j) {
          T v = std::exp(xv[base + j * inner] - mx);
          ov[base + j * inner] = v;
          s += v;
        }
        T ivs = T(1) / s;
        for (size_t j = 0; j < e; ++j) ov[base + j * inner] *= ivs;
      }
  });
  rec("softmax", {x}, out, [xi = x.impl, oi = out.impl, outer, e, inner] {
    dispatch(oi->dt, [&](auto tag) {
      using T = decltype(tag);
      auto og = grad_view<T>(*oi);
      auto ov = view<T>(*oi);
      ensure_grad(*xi);
      auto xg = grad_view<T>(*xi);
      for (size_t o = 0; o < outer; ++o)
        for (size_t i = 0; i < inner; ++i) {
          size_t base = o * e * inner + i;
          T s = T(0);
          for (size_t j = 0; j < e; ++j) s += og[base + j * inner] * ov[base + j * inner];
          for (size_t j = 0; j < e; ++j)
            xg[base + j * inner] += ov[base + j * inner] * (og[base + j * inner] - s);
        }
    });
  });
  return out;
}

Tensor masked_softmax(const Tensor& x, const std::vector<uint8_t>& mask) {
  require(x.rank() == 2, "masked_softmax: rank-2 input required");
  int m = x.dim(0), n = x.dim(1);
  require(mask.size() == size_t(m) * size_t(n), "masked_softmax: mask size mismatch");
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xv = view<T>(*x.impl);
    auto ov = view<T>(*out.impl);
    for (int i = 0; i < m; ++i) {
      const T* xr = xv.data() + size_t(i) * n;
      const uint8_t* mr = mask.data() + size_t(i) * n;
      T mx = T(0);
      bool any = false;
      for (int j = 0; j < n; ++j)
        if (mr[j]) {
          mx = any ? std::max(mx, xr[j]) : xr[j];
          any = true;
        }
      if (!any)
        throw std::runtime_error("masked_softmax: row " + std::to_string(i) +
                                 " has no attendable entry");
      T s = T(0);
      T* orow = ov.data() + size_t(i) * n;
      for (int j = 0; j < n; ++j) {
        if (!mr[j]) continue;
        T v = std::exp(xr[j] - mx);
        orow[j] = v;
        s += v;
      }
      T ivs = T(1) / s;
      for (int j = 0; j < n; ++j)
        if (mr[j]) orow[j] *= ivs;
    }
  });
  rec("masked_softmax", {x}, out, [xi = x.impl, oi = out.impl, m, n] {
    dispatch(oi->dt, [&](auto tag) {
      using T = decltype(tag);
      auto og = grad_view<T>(*oi);
      auto ov = view<T>(*oi);
      ensure_grad(*xi);
      auto xg = grad_view<T>(*xi);
      for (int i = 0; i < m; ++i) {
        const T* gr = og.data() + size_t(i) * n;
        const T* yr = ov.data() + size_t(i) * n;
        T s = kernels::dot(size_t(n), gr, yr);
        T* xgr = xg.data() + size_t(i) * n;
        for (int j = 0; j < n; ++j) xgr[j] += yr[j] * (gr[j] - s);
      }
    });
  });
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xv = view<T>(*x.impl);
    auto ov = view<T>(*out.impl);
    for (size_t i = 0; i < xv.size(); ++i) ov[i] = T(1) / (T(1) + std::exp(-xv[i]));
  });
  rec("sigmoid", {x}, out, [xi = x.impl, oi = out.impl] {
    dispatch(oi->dt, [&](auto tag) {
      using T = decltype(tag);
      auto og = grad_view<T>(*oi);
      auto ov = view<T>(*oi);
      ensure_grad(*xi);
      auto xg = grad_view<T>(*xi);
      for (size_t i = 0; i < og.size(); ++i) xg[i] += og[i] * ov[i] * (T(1) - ov[i]);
    });
  });
  return out;
}

Tensor tanh(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xv = view<T>(*x.impl);
    auto ov = view<T>(*out.impl);
    for (size_t i = 0; i < xv.size(); ++i) ov[i] = std::tanh(xv[i]);
  });
  rec("tanh", {x}, out, [xi = x.impl, oi = out.impl] {
    dispatch(oi->dt, [&](auto tag) {
      using T = decltype(tag);
      auto og = grad_view<T>(*oi);
      auto ov = view<T>(*oi);
      ensure_grad(*xi);
      auto xg = grad_view<T>(*xi);
      for (size_t i = 0; i < og.size(); ++i) xg[i] += og[i] * (T(1) - ov[i] * ov[i]);
    });
  });
  return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     const std::vector<uint8_t>& mask) {
  require(logits.rank() == 2, "cross_entropy: rank-2 logits required");
  int n = logits.dim(0), w = logits.dim(1);
  require(targets.size() == size_t(n), "cross_entropy: target count mismatch");
  require(mask.size() == size_t(n), "cross_entropy: mask size mismatch");
  int count = 0;
  for (int i = 0; i < n; ++i) {
    if (!mask[size_t(i)]) continue;
    require(0 <= targets[size_t(i)] && targets[size_t(i)] < w,
            "cross_entropy: target id out of vocabulary");
    ++count;
  }
  require(count > 0, "cross_entropy: every position is masked, loss undefined");
  Tensor out = Tensor::zeros({}, logits.dtype());
  auto logz = std::make_shared<std::vector<double>>(size_t(n), 0.0);
  dispatch(logits.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xv = view<T>(*logits.impl);
    T loss = T(0);
    for (int i = 0; i < n; ++i) {
      if (!mask[size_t(i)]) continue;
      const T* xr = xv.data() + size_t(i) * w;
      T mx = kernels::reduce_max(size_t(w), xr);
      T s = T(0);
      for (int j = 0; j < w; ++j) s += std::exp(xr[j] - mx);
      T lz = mx + std::log(s);
      (*logz)[size_t(i)] = double(lz);
      loss -= xr[targets[size_t(i)]] - lz;
    }
    view<T>(*out.impl)[0] = loss / T(count);
  });
  rec("cross_entropy", {logits}, out,
      [xi = logits.impl, oi = out.impl, targets, mask, logz, n, w, count] {
        dispatch(oi->dt, [&](auto tag) {
          using T = decltype(tag);
          T g = grad_view<T>(*oi)[0] / T(count);
          auto xv = view<T>(*xi);
          ensure_grad(*xi);
          auto xg = grad_view<T>(*xi);
          for (int i = 0; i < n; ++i) {
            if (!mask[size_t(i)]) continue;
            const T* xr = xv.data() + size_t(i) * w;
            T* gr = xg.data() + size_t(i) * w;
            T lz = T((*logz)[size_t(i)]);
            for (int j = 0; j < w; ++j) {
              T p = std::exp(xr[j] - lz);
              gr[j] += g * (p - T(j == targets[size_t(i)] ? 1 : 0));
            }
          }
        });
      });
  return out;
}

Tensor mse(const Tensor& a, const Tensor& b) {
  check_binary("mse", a, b);
  require(same_shape(a, b), "mse: shape mismatch");
  Tensor out = Tensor::zeros({}, a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto av = view<T>(*a.impl);
    auto bv = view<T>(*b.impl);
    T s = T(0);
    for (size_t i = 0; i < av.size(); ++i) {
      T d = av[i] - bv[i];
      s += d * d;
    }
    view<T>(*out.impl)[0] = s;
  });
  rec("mse", {a, b}, out, [ai = a.impl, bi = b.impl, oi = out.impl] {
    dispatch(oi->dt, [&](auto tag) {
      using T = decltype(tag);
      T g = grad_view<T>(*oi)[0];
      auto av = view<T>(*ai);
      auto bv = view<T>(*bi);
      if (ai->requires_grad) {
        ensure_grad(*ai);
        auto ag = grad_view<T>(*ai);
        for (size_t i = 0; i < av.size(); ++i) ag[i] += T(2) * g * (av[i] - bv[i]);
      }
      if (bi->requires_grad) {
        ensure_grad(*bi);
        auto bg = grad_view<T>(*bi);
        for (size_t i = 0; i < av.size(); ++i) bg[i] -= T(2) * g * (av[i] - bv[i]);
      }
    });
  });
  return out;
}

Tensor detach(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  out.impl->data = x.impl->data;
  return out;
}

std::pair<Tensor, Tensor> masked_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                           const std::vector<uint8_t>& mask) {
  require(q.rank() == 2 && k.rank() == 2 && v.rank() == 2, "masked_attention: rank-2 inputs");
  require(q.dim(1) == k.dim(1) && k.dim(0) == v.dim(0), "masked_attention: shape mismatch");
  Tensor scores = scale(matmul_nt(q, k), 1.0 / std::sqrt(double(q.dim(1))));
  Tensor probs = masked_softmax(scores, mask);
  Tensor mixed = matmul(probs, v);
  return {mixed, probs};
}

}  // namespace lmr
