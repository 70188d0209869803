#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "lmr/ops.hpp"
#include "lmr/rng.hpp"
#include "lmr/tensor.hpp"

using namespace lmr;

TEST_CASE("factories fill shape, dtype and values") {
  Tensor z = Tensor::zeros({2, 3});
  CHECK(z.shape() == std::vector<int>{2, 3});
  CHECK(z.numel() == 6);
  CHECK(z.dtype() == DType::f64);
  for (size_t i = 0; i < 6; ++i) CHECK(z.get(i) == 0.0);

  Tensor f = Tensor::full({4}, 2.5, DType::f32);
  CHECK(f.dtype() == DType::f32);
  for (size_t i = 0; i < 4; ++i) CHECK(f.get(i) == 2.5);

  Tensor v = Tensor::from_vec({2, 2}, {1, 2, 3, 4});
  CHECK(v.to_vec() == std::vector<double>{1, 2, 3, 4});

  Rng rng(7);
  Tensor r = Tensor::randn({100}, rng, 0.5);
  double ss = 0;
  for (size_t i = 0; i < 100; ++i) ss += r.get(i) * r.get(i);
  CHECK(std::sqrt(ss / 100) == doctest::Approx(0.5).epsilon(0.35));
}

TEST_CASE("f32 tensors round values through float storage") {
  Tensor t = Tensor::from_vec({1}, {0.1}, DType::f32);
  CHECK(t.get(0) == double(float(0.1)));
  CHECK(t.get(0) != 0.1);
}

TEST_CASE("ops outside a tape record nothing") {
  Tensor a = Tensor::from_vec({2}, {1, 2});
  a.set_requires_grad(true);
  Tensor y = add(a, a);
  CHECK(y.to_vec() == std::vector<double>{2, 4});
  CHECK(Tape::current() == nullptr);
}

TEST_CASE("tape records in creation order and backward accumulates fan-out") {
  Tape tape;
  Tensor a = Tensor::from_vec({2}, {3, -1});
  a.set_requires_grad(true);
  Tensor b = add(a, a);            // 2a
  Tensor c = mul(b, a);            // 2a^2
  Tensor loss = mse(c, Tensor::zeros({2}));  // sum 4a^4
  CHECK(tape.size() == 3);
  tape.backward(loss);
  // d/da 4a^4 = 16a^3
  CHECK(a.grad_get(0) == doctest::Approx(16 * 27.0).epsilon(1e-12));
  CHECK(a.grad_get(1) == doctest::Approx(-16.0).epsilon(1e-12));
}

TEST_CASE("a consumed tape rejects a second backward") {
  Tape tape;
  Tensor a = Tensor::from_vec({1}, {2});
  a.set_requires_grad(true);
  Tensor loss = mse(a, Tensor::zeros({1}));
  tape.backward(loss);
  CHECK(tape.consumed());
  CHECK_THROWS(tape.backward(loss));
}

TEST_CASE("gradients accumulate across backwards from separate tapes") {
  Tensor a = Tensor::from_vec({1}, {1});
  a.set_requires_grad(true);
  {
    Tape t1;
    t1.backward(mse(a, Tensor::zeros({1})));
  }
  double g1 = a.grad_get(0);
  {
    Tape t2;
    t2.backward(mse(a, Tensor::zeros({1})));
  }
  CHECK(a.grad_get(0) == doctest::Approx(2 * g1).epsilon(1e-12));
  a.zero_grad();
  CHECK(!a.has_grad());
}

TEST_CASE("requires_grad gates grad allocation") {
  Tape tape;
  Tensor a = Tensor::from_vec({2}, {1, 2});
  Tensor b = Tensor::from_vec({2}, {3, 4});
  b.set_requires_grad(true);
  Tensor loss = mse(mul(a, b), Tensor::zeros({2}));
  tape.backward(loss);
  CHECK(!a.has_grad());
  CHECK(b.has_grad());
}

TEST_CASE("nested tapes restore the outer recorder") {
  CHECK(Tape::current() == nullptr);
  Tape outer;
  CHECK(Tape::current() == &outer);
  {
    Tape inner;
    CHECK(Tape::current() == &inner);
  }
  CHECK(Tape::current() == &outer);
}

TEST_CASE("max_abs_diff and same_shape") {
  Tensor a = Tensor::from_vec({2}, {1, 2});
  Tensor b = Tensor::from_vec({2}, {1.5, 1.75});
  CHECK(max_abs_diff(a, b) == doctest::Approx(0.5));
  CHECK(same_shape(a, b));
  CHECK(!same_shape(a, Tensor::zeros({2, 1})));
}

TEST_CASE("op shape errors throw") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({3, 2});
  CHECK_THROWS(add(a, b));
  CHECK_THROWS(matmul(a, a));
  CHECK_THROWS(reshape(a, {4}));
  CHECK_THROWS(row(a, 5));
  CHECK_THROWS(slice_rows(a, 1, 1));
}
