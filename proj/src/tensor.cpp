#include "lmr/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace lmr {

void ensure_grad(TensorImpl& t) {
  if (t.grad.empty()) t.grad.assign(t.numel() * dtype_size(t.dt), std::byte{0});
}

namespace {
std::shared_ptr<TensorImpl> make_impl(std::vector<int> shape, DType dt) {
  for (int e : shape)
    if (e < 0) throw std::runtime_error("tensor: negative extent");
  auto impl = std::make_shared<TensorImpl>();
  impl->dt = dt;
  impl->shape = std::move(shape);
  impl->data.assign(impl->numel() * dtype_size(dt), std::byte{0});
  return impl;
}
}  // namespace

Tensor Tensor::zeros(std::vector<int> shape, DType dt) {
  return Tensor(make_impl(std::move(shape), dt));
}

Tensor Tensor::full(std::vector<int> shape, double v, DType dt) {
  Tensor t(make_impl(std::move(shape), dt));
  size_t n = t.numel();
  for (size_t i = 0; i < n; ++i) t.set(i, v);
  return t;
}

Tensor Tensor::from_vec(std::vector<int> shape, const std::vector<double>& vals, DType dt) {
  Tensor t(make_impl(std::move(shape), dt));
  if (vals.size() != t.numel()) throw std::runtime_error("tensor: from_vec size mismatch");
  for (size_t i = 0; i < vals.size(); ++i) t.set(i, vals[i]);
  return t;
}

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, double stdev, DType dt) {
  Tensor t(make_impl(std::move(shape), dt));
  size_t n = t.numel();
  for (size_t i = 0; i < n; ++i) t.set(i, stdev * rng.normal());
  return t;
}

double Tensor::get(size_t flat) const {
  return dispatch(impl->dt, [&](auto tag) -> double {
    using T = decltype(tag);
    return double(view<T>(*impl)[flat]);
  });
}

void Tensor::set(size_t flat, double v) {
  dispatch(impl->dt, [&](auto tag) {
    using T = decltype(tag);
    view<T>(*impl)[flat] = T(v);
  });
}

double Tensor::grad_get(size_t flat) const {
  if (impl->grad.empty()) throw std::runtime_error("tensor: gradient not populated for '" + impl->name + "'");
  return dispatch(impl->dt, [&](auto tag) -> double {
    using T = decltype(tag);
    return double(grad_view<T>(*impl)[flat]);
  });
}

void Tensor::zero_grad() { impl->grad.clear(); }

std::vector<double> Tensor::to_vec() const {
  std::vector<double> v(numel());
  for (size_t i = 0; i < v.size(); ++i) v[i] = get(i);
  return v;
}

std::vector<double> Tensor::grad_to_vec() const {
  std::vector<double> v(numel());
  for (size_t i = 0; i < v.size(); ++i) v[i] = grad_get(i);
  return v;
}

namespace {
thread_local Tape* g_current_tape = nullptr;
}

Tape::Tape() : prev_(g_current_tape) { g_current_tape = this; }

Tape::~Tape() { g_current_tape = prev_; }

Tape* Tape::current() { return g_current_tape; }

void Tape::record(const char* op, std::vector<std::shared_ptr<TensorImpl>> parents,
                  std::shared_ptr<TensorImpl> out, std::function<void()> backward) {
  if (consumed_) throw std::runtime_error("tape: recording after backward(); start a new tape");
  nodes_.push_back(Node{op, std::move(parents), std::move(out), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw std::runtime_error("tape: backward() called twice without a new forward");
  consumed_ = true;
  if (!loss.defined() || loss.numel() != 1)
    throw std::runtime_error("tape: backward() needs a scalar loss");
  ensure_grad(*loss.impl);
  dispatch(loss.impl->dt, [&](auto tag) {
    using T = decltype(tag);
    grad_view<T>(*loss.impl)[0] = T(1);
  });
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->out->grad.empty()) continue;  // did not influence the loss
    it->backward();
  }
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) throw std::runtime_error("max_abs_diff: size mismatch");
  double m = 0.0;
  for (size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a.get(i) - b.get(i)));
  return m;
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

}  // namespace lmr
