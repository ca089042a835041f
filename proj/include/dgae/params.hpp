// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dgae/autograd.hpp"
#include "dgae/tensor.hpp"

namespace dgae {

/// Named, shaped parameter collection kept in insertion order.
template <typename T>
class ModelParams {
 public:
  using Entry = std::pair<std::string, Tensor<T>>;

  void add(std::string name, Tensor<T> value) {
    if (index_.count(name)) throw ShapeError("duplicate parameter name '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(value));
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const Tensor<T>& at(const std::string& name) const { return entries_[lookup(name)].second; }
  Tensor<T>& at(const std::string& name) { return entries_[lookup(name)].second; }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::int64_t scalar_count() const {
    std::int64_t n = 0;
    for (const auto& e : entries_) n += static_cast<std::int64_t>(e.second.size());
    return n;
  }

  bool all_finite() const {
    for (const auto& e : entries_)
      if (!e.second.all_finite()) return false;
    return true;
  }

  ModelParams zeros_like() const {
    ModelParams out;
    for (const auto& [name, t] : entries_) out.add(name, Tensor<T>(t.shape(), T(0)));
    return out;
  }

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    for (const auto& [name, t] : entries_) out.add(name, t.template cast<U>());
    out.tags = tags;
    return out;
  }

  /// Free-form provenance ("trained" = "true" etc.).
  std::map<std::string, std::string> tags;

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ShapeError("missing parameter '" + name + "'");
    return it->second;
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// ModelParams registered as leaves on a tape.
template <typename T>
class BoundParams {
 public:
  BoundParams(ag::Tape<T>& tape, const ModelParams<T>& params, bool requires_grad) : params_(&params) {
    for (const auto& [name, t] : params.entries()) vars_.emplace(name, tape.leaf(t, requires_grad));
  }

  ag::Var<T> operator[](const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw ShapeError("missing parameter '" + name + "'");
    return it->second;
  }

  bool contains(const std::string& name) const { return vars_.count(name) != 0; }

  /// Gradients after Tape::backward; zero for parameters the loss does not touch.
  ModelParams<T> gradients() const {
    ModelParams<T> out;
    for (const auto& [name, t] : params_->entries()) {
      const ag::Var<T> v = vars_.at(name);
      if (v.tape->has_grad(v.id))
        out.add(name, v.tape->grad(v.id));
      else
        out.add(name, Tensor<T>(t.shape(), T(0)));
    }
    return out;
  }

 private:
  const ModelParams<T>* params_;
  std::unordered_map<std::string, ag::Var<T>> vars_;
};

enum class Init { kUniformFanIn, kZero, kOne };

struct ParamSpec {
  std::string name;
  Shape shape;
  Init init = Init::kUniformFanIn;
  std::int64_t fan_in = 1;
};

/// One row of the layer table printed by `describe`.
struct LayerRow {
  std::string name;
  std::string type;
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  int kernel = 0;
  int stride = 1;
  std::int64_t params = 0;
};

/// Layer table plus parameter shapes, derived from a config alone.
class Architecture {
 public:
  void conv(const std::string& name, std::int64_t in, std::int64_t out, int k, int stride, bool zero_init = false);
  void linear(const std::string& name, std::int64_t in, std::int64_t out, bool zero_init = false);
  void norm(const std::string& name, std::int64_t ch, const std::string& type = "GroupNorm");

  const std::vector<LayerRow>& layers() const { return layers_; }
  const std::vector<ParamSpec>& params() const { return params_; }
  std::int64_t param_count() const;

  void print(std::ostream& os) const;

 private:
  std::vector<LayerRow> layers_;
  std::vector<ParamSpec> params_;
};

/// Deterministic init: each tensor is drawn from the substream (seed, name).
template <typename T>
ModelParams<T> init_params(const Architecture& arch, std::uint64_t seed);

/// Names ending in ".weight" of conv/linear layers receive weight decay.
bool is_decayed_param(const std::string& name);

}  // namespace dgae
