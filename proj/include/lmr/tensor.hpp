#pragma once
#include <cstddef>
#include <cstring>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lmr/dtype.hpp"
#include "lmr/rng.hpp"

namespace lmr {

struct TensorImpl {
  DType dt = DType::f64;
  std::vector<int> shape;
  std::vector<std::byte> data;
  std::vector<std::byte> grad;  // empty until backward touches it
  bool requires_grad = false;
  std::string name;  // non-empty for named parameters

  size_t numel() const {
    size_t n = 1;
    for (int e : shape) n *= size_t(e);
    return n;
  }
};

template <class T>
std::span<T> view(TensorImpl& t) {
  return {reinterpret_cast<T*>(t.data.data()), t.numel()};
}
template <class T>
std::span<const T> view(const TensorImpl& t) {
  return {reinterpret_cast<const T*>(t.data.data()), t.numel()};
}
template <class T>
std::span<T> grad_view(TensorImpl& t) {
  return {reinterpret_cast<T*>(t.grad.data()), t.numel()};
}

// Allocates and zero-fills the grad buffer on first touch.
void ensure_grad(TensorImpl& t);

// Value-semantic handle onto a shared buffer.  Tensors are written once at
// creation (ops never mutate their inputs); leaf parameters may be filled in
// before any tape records them.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> i) : impl(std::move(i)) {}

  static Tensor zeros(std::vector<int> shape, DType dt = DType::f64);
  static Tensor full(std::vector<int> shape, double v, DType dt = DType::f64);
  static Tensor from_vec(std::vector<int> shape, const std::vector<double>& vals,
                         DType dt = DType::f64);
  static Tensor randn(std::vector<int> shape, Rng& rng, double stdev,
                      DType dt = DType::f64);

  bool defined() const { return impl != nullptr; }
  DType dtype() const { return impl->dt; }
  int rank() const { return int(impl->shape.size()); }
  const std::vector<int>& shape() const { return impl->shape; }
  size_t numel() const { return impl->numel(); }
  int dim(int i) const { return impl->shape[size_t(i)]; }

  bool requires_grad() const { return impl->requires_grad; }
  void set_requires_grad(bool b) { impl->requires_grad = b; }
  const std::string& name() const { return impl->name; }
  void set_name(std::string n) { impl->name = std::move(n); }

  double get(size_t flat) const;
  void set(size_t flat, double v);
  bool has_grad() const { return !impl->grad.empty(); }
  double grad_get(size_t flat) const;
  void zero_grad();

  std::vector<double> to_vec() const;
  std::vector<double> grad_to_vec() const;

  std::shared_ptr<TensorImpl> impl;
};

struct Node {
  const char* op = "";
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::shared_ptr<TensorImpl> out;
  std::function<void()> backward;
};

// Define-by-run tape.  Construction pushes the tape as the active recorder
// for the current thread; ops executed in its scope append nodes in creation
// order, which is already topological (parents precede children).  backward()
// walks the nodes exactly once in reverse; a second call without a fresh
// forward is an error.  One tape per thread at a time, tapes never shared.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(const char* op, std::vector<std::shared_ptr<TensorImpl>> parents,
              std::shared_ptr<TensorImpl> out, std::function<void()> backward);
  void backward(const Tensor& loss);
  size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  static Tape* current();

 private:
  std::vector<Node> nodes_;
  bool consumed_ = false;
  Tape* prev_ = nullptr;
};

double max_abs_diff(const Tensor& a, const Tensor& b);
bool same_shape(const Tensor& a, const Tensor& b);

}  // namespace lmr
