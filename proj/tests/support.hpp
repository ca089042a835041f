// SPDX-License-Identifier: Apache-2.0
//
// Shared test helpers: seeded random tensors and a central-difference gradient checker.
#pragma once

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "dgae/autograd.hpp"
#include "dgae/params.hpp"
#include "dgae/rng.hpp"
#include "dgae/tensor.hpp"

namespace dgae::test {

template <typename T>
Tensor<T> random_tensor(const Shape& s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(s);
  Rng rng(seed, "test-tensor");
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <typename T>
Tensor<T> normal_tensor(const Shape& s, std::uint64_t seed) {
  Tensor<T> t(s);
  Rng(seed, "test-normal").fill_normal<T>(t.values());
  return t;
}

/// Every parameter (zero-initialized ones included) redrawn from U(-scale, scale),
/// norm gains around 1.
inline ModelParams<double> randomize(const ModelParams<double>& p, std::uint64_t seed, double scale = 0.5) {
  ModelParams<double> out;
  for (const auto& [name, t] : p.entries()) {
    Tensor<double> r(t.shape());
    Rng rng(seed, name);
    const bool gain = name.size() > 6 && name.compare(name.size() - 6, 6, ".gamma") == 0;
    for (auto& v : r.values()) v = gain ? rng.uniform(0.5, 1.5) : rng.uniform(-scale, scale);
    out.add(name, std::move(r));
  }
  out.tags = p.tags;
  return out;
}

struct GradCheckResult {
  int checked = 0;
  int passed = 0;
  double worst_rel = 0;
  std::string worst_name;

  double pass_fraction() const { return checked ? static_cast<double>(passed) / checked : 0.0; }
};

/// A differentiable scalar function of named inputs. `build` records the forward pass on
/// the tape given leaf Vars for each input and returns the scalar root.
using ScalarBuilder =
    std::function<ag::Var<double>(ag::Tape<double>&, const std::vector<ag::Var<double>>& leaves)>;

/// Compares analytic gradients with central differences on `samples` coordinates chosen
/// uniformly over all inputs. A coordinate passes when |a - n| <= rel_tol * max(|a|, |n|),
/// or when |a - n| <= abs_floor (both below the resolution of the difference quotient).
inline GradCheckResult grad_check(std::vector<Tensor<double>> inputs, const std::vector<std::string>& names,
                                  const ScalarBuilder& build, int samples, double step, double rel_tol,
                                  std::uint64_t seed, double abs_floor = 1e-9) {
  auto eval = [&](const std::vector<Tensor<double>>& in) {
    ag::Tape<double> tape;
    std::vector<ag::Var<double>> leaves;
    for (const auto& t : in) leaves.push_back(tape.leaf(t, false));
    return build(tape, leaves).value()[0];
  };
  std::vector<Tensor<double>> grads;
  {
    ag::Tape<double> tape;
    std::vector<ag::Var<double>> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.leaf(t, true));
    auto root = build(tape, leaves);
    tape.backward(root);
    for (const auto& l : leaves) grads.push_back(tape.has_grad(l.id) ? tape.grad(l.id) : Tensor<double>(l.shape(), 0.0));
  }
  std::size_t total = 0;
  for (const auto& t : inputs) total += t.size();
  Rng rng(seed, "grad-check");
  GradCheckResult res;
  for (int k = 0; k < samples; ++k) {
    std::size_t flat = rng.below(total), which = 0;
    while (flat >= inputs[which].size()) flat -= inputs[which++].size();
    const double orig = inputs[which][flat];
    inputs[which][flat] = orig + step;
    const double up = eval(inputs);
    inputs[which][flat] = orig - step;
    const double down = eval(inputs);
    inputs[which][flat] = orig;
    const double numeric = (up - down) / (2 * step);
    const double analytic = grads[which][flat];
    const double diff = std::abs(analytic - numeric);
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    const double rel = scale > 0 ? diff / scale : 0.0;
    ++res.checked;
    if (diff <= rel_tol * scale || diff <= abs_floor) {
      ++res.passed;
    } else if (rel > res.worst_rel) {
      res.worst_rel = rel;
      res.worst_name = names[which] + "[" + std::to_string(flat) + "]";
    }
  }
  return res;
}

/// Gradient check over network parameters plus the input: `forward` maps
/// (input Var, bound params) to an output Var, scored by MSE against a fixed random target.
struct NetCheck {
  ModelParams<double> params;
  Tensor<double> input;
  std::function<ag::Var<double>(ag::Var<double>, const BoundParams<double>&)> forward;
};

inline GradCheckResult net_grad_check(NetCheck nc, int samples, double step, double rel_tol, std::uint64_t seed,
                                      double abs_floor = 1e-9) {
  Tensor<double> target;
  {
    ag::Tape<double> tape;
    BoundParams<double> bp(tape, nc.params, false);
    target = random_tensor<double>(nc.forward(tape.constant(nc.input), bp).shape(), seed + 17);
  }
  auto loss = [&]() {
    ag::Tape<double> tape;
    BoundParams<double> bp(tape, nc.params, false);
    return ag::mse(nc.forward(tape.constant(nc.input), bp), tape.constant(target)).value()[0];
  };
  ModelParams<double> grads;
  Tensor<double> input_grad;
  {
    ag::Tape<double> tape;
    BoundParams<double> bp(tape, nc.params, true);
    auto x = tape.leaf(nc.input, true);
    auto root = ag::mse(nc.forward(x, bp), tape.constant(target));
    tape.backward(root);
    grads = bp.gradients();
    input_grad = tape.has_grad(x.id) ? tape.grad(x.id) : Tensor<double>(nc.input.shape(), 0.0);
  }
  std::vector<Tensor<double>*> slots{&nc.input};
  std::vector<const Tensor<double>*> gslots{&input_grad};
  std::vector<std::string> names{"input"};
  for (auto& [n, t] : nc.params.entries()) {
    slots.push_back(&t);
    gslots.push_back(&grads.at(n));
    names.push_back(n);
  }
  std::size_t total = 0;
  for (auto* t : slots) total += t->size();
  Rng rng(seed, "net-grad-check");
  GradCheckResult res;
  for (int k = 0; k < samples; ++k) {
    std::size_t flat = rng.below(total), which = 0;
    while (flat >= slots[which]->size()) flat -= slots[which++]->size();
    double& v = (*slots[which])[flat];
    const double orig = v;
    v = orig + step;
    const double up = loss();
    v = orig - step;
    const double down = loss();
    v = orig;
    const double numeric = (up - down) / (2 * step);
    const double analytic = (*gslots[which])[flat];
    const double diff = std::abs(analytic - numeric);
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    ++res.checked;
    if (diff <= rel_tol * scale || diff <= abs_floor) {
      ++res.passed;
    } else if (diff / scale > res.worst_rel) {
      res.worst_rel = diff / scale;
      res.worst_name = names[which] + "[" + std::to_string(flat) + "]";
    }
  }
  return res;
}

}  // namespace dgae::test

namespace dgae::test {

/// Bitwise equality (distinguishes -0.0 from 0.0 and compares NaN payloads).
template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() && std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

/// Largest elementwise |a - b|; infinity on shape mismatch.
template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("dgae-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace dgae::test
