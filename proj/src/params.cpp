// SPDX-License-Identifier: Apache-2.0
#include "dgae/params.hpp"

#include <cmath>
#include <iomanip>

#include "dgae/rng.hpp"

namespace dgae {

void Architecture::conv(const std::string& name, std::int64_t in, std::int64_t out, int k, int stride,
                        bool zero_init) {
  const std::int64_t fan_in = in * k * k;
  const Init init = zero_init ? Init::kZero : Init::kUniformFanIn;
  params_.push_back({name + ".weight", {out, in, k, k}, init, fan_in});
  params_.push_back({name + ".bias", {out}, init, fan_in});
  layers_.push_back({name, "Conv2d", in, out, k, stride, out * in * k * k + out});
}

void Architecture::linear(const std::string& name, std::int64_t in, std::int64_t out, bool zero_init) {
  const Init init = zero_init ? Init::kZero : Init::kUniformFanIn;
  params_.push_back({name + ".weight", {out, in}, init, in});
  params_.push_back({name + ".bias", {out}, init, in});
  layers_.push_back({name, "Linear", in, out, 0, 1, out * in + out});
}

void Architecture::norm(const std::string& name, std::int64_t ch, const std::string& type) {
  params_.push_back({name + ".gamma", {ch}, Init::kOne, ch});
  params_.push_back({name + ".beta", {ch}, Init::kZero, ch});
  layers_.push_back({name, type, ch, ch, 0, 1, 2 * ch});
}

std::int64_t Architecture::param_count() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += numel(p.shape);
  return n;
}

void Architecture::print(std::ostream& os) const {
  os << std::left << std::setw(36) << "name" << std::setw(11) << "type" << std::right << std::setw(6) << "in"
     << std::setw(6) << "out" << std::setw(4) << "k" << std::setw(4) << "s" << std::setw(11) << "params" << "\n";
  for (const auto& l : layers_) {
    os << std::left << std::setw(36) << l.name << std::setw(11) << l.type << std::right << std::setw(6)
       << l.in_channels << std::setw(6) << l.out_channels << std::setw(4) << l.kernel << std::setw(4) << l.stride
       << std::setw(11) << l.params << "\n";
  }
  os << "total parameters: " << param_count() << "\n";
}

template <typename T>
ModelParams<T> init_params(const Architecture& arch, std::uint64_t seed) {
  ModelParams<T> out;
  for (const auto& spec : arch.params()) {
    Tensor<T> t(spec.shape);
    switch (spec.init) {
      case Init::kZero:
        break;
      case Init::kOne:
        t.fill(T(1));
        break;
      case Init::kUniformFanIn: {
        Rng rng(seed, spec.name);
        const double bound = 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
        for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
        break;
      }
    }
    out.add(spec.name, std::move(t));
  }
  return out;
}

bool is_decayed_param(const std::string& name) {
  constexpr std::string_view suffix = ".weight";
  return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
}

template ModelParams<float> init_params<float>(const Architecture&, std::uint64_t);
template ModelParams<double> init_params<double>(const Architecture&, std::uint64_t);

}  // namespace dgae
