#pragma once

#include <random>
#include <string>

#include "cetal/tensor.hpp"

namespace cetal {

inline Tensor randn_param(Shape shape, std::mt19937& rng, double stddev,
                          const std::string& name) {
  std::normal_distribution<double> d(0.0, stddev);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = d(rng);
  Tensor t(std::move(shape), std::move(v), true);
  t.set_name(name);
  return t;
}

inline Tensor zeros_param(Shape shape, const std::string& name) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  t.set_name(name);
  return t;
}

inline Tensor full_param(Shape shape, double value, const std::string& name) {
  Tensor t = Tensor::full(std::move(shape), value, true);
  t.set_name(name);
  return t;
}

}  // namespace cetal
