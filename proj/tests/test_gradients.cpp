// SPDX-License-Identifier: Apache-2.0
#include "checks.hpp"
#include "doctest.h"

using namespace dgae;

TEST_SUITE("gradients") {

TEST_CASE("networks match central differences at tiny configs") {
  for (const auto& c : test::network_gradient_checks()) {
    CAPTURE(c.name);
    CAPTURE(c.result.worst_name);
    CAPTURE(c.result.worst_rel);
    CHECK(c.result.checked == 200);
    CHECK(c.ok());
  }
}

TEST_CASE("losses match central differences on every sampled coordinate") {
  for (const auto& c : test::loss_gradient_checks()) {
    CAPTURE(c.name);
    CAPTURE(c.result.worst_name);
    CAPTURE(c.result.worst_rel);
    CHECK(c.result.passed == c.result.checked);
  }
}

TEST_CASE("gradient checker detects a wrong gradient") {
  // d/dx of a recorded op whose backward is deliberately off by a factor 2
  const auto r = test::grad_check(
      {test::random_tensor<double>({4}, 1)}, {"x"},
      [](ag::Tape<double>& tape, const std::vector<ag::Var<double>>& v) {
        Tensor<double> out({1}, 0.0);
        for (double e : v[0].value().values()) out[0] += e * e;
        const int id = v[0].id;
        return tape.record(out, {v[0]}, [id](ag::Tape<double>& tp, const Tensor<double>& g) {
          const auto& x = tp.value(id);
          auto& gx = tp.grad(id);
          for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g[0] * 4 * x[i];
        });
      },
      20, 1e-4, 1e-4, 2);
  CHECK(r.passed == 0);
}

}  // TEST_SUITE
