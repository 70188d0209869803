#include <string>

#include "doctest.h"
#include "support/grad_suite.hpp"

using namespace lmr;
using namespace lmr::testsupport;

TEST_CASE("finite differences confirm every op gradient") {
  for (const auto& [name, make] : grad_suite()) {
    CAPTURE(name);
    double worst = 0.0;
    for (int inst = 0; inst < 20; ++inst) {
      Rng rng = Rng::sub(7100, name, uint64_t(inst));
      GradSpec gs = make(rng);
      worst = std::max(worst, max_rel_err(gs, rng));
    }
    CHECK_MESSAGE(worst <= 1e-4, name, " worst rel err ", worst);
  }
}

TEST_CASE("detach blocks the gradient path") {
  Tape tape;
  Tensor a = Tensor::from_vec({2, 2}, {1.0, 2.0, 3.0, 4.0});
  a.set_requires_grad(true);
  Tensor t = Tensor::zeros({2, 2});
  Tensor loss = mse(detach(a), t);
  tape.backward(loss);
  CHECK(!a.has_grad());
}

TEST_CASE("detach inside a live path zeroes only its branch") {
  // loss = sum((a + stop(a))^2): analytic grad treats stop(a) as constant
  Tape tape;
  Tensor a = Tensor::from_vec({2}, {0.5, -1.25});
  a.set_requires_grad(true);
  Tensor loss = mse(add(a, detach(a)), Tensor::zeros({2}));
  tape.backward(loss);
  REQUIRE(a.has_grad());
  // d/da sum((a + c)^2) = 2(a + c) with c = a held fixed = 4a
  CHECK(a.grad_get(0) == doctest::Approx(4 * 0.5).epsilon(1e-12));
  CHECK(a.grad_get(1) == doctest::Approx(4 * -1.25).epsilon(1e-12));
}
