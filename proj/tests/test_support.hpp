#pragma once

// Shared helpers for the unit and acceptance suites: random fixtures and a
// central-difference gradient oracle that only ever evaluates scalar losses.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "maskcl/model.hpp"
#include "maskcl/numerics.hpp"

namespace maskcl::testing {

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (double& v : m.values()) v = rng.uniform(lo, hi);
  return m;
}

inline std::vector<std::size_t> random_labels(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> y(n);
  for (auto& v : y) v = rng.uniform_int(k);
  return y;
}

// Reference to one scalar parameter in an MlpParams.
struct ParamRef {
  std::size_t layer;
  bool is_bias;
  std::size_t index;
};

inline double& param_at(MlpParams& p, const ParamRef& r) {
  auto& m = r.is_bias ? p.layers[r.layer].bias : p.layers[r.layer].weight;
  return m.values()[r.index];
}

inline double grad_at(const Gradients& g, const ParamRef& r) {
  const auto& m = r.is_bias ? g.layers[r.layer].bias : g.layers[r.layer].weight;
  return m.values()[r.index];
}

inline ParamRef random_param(const MlpParams& p, Rng& rng) {
  const std::size_t l = rng.uniform_int(p.layers.size());
  const bool bias = rng.uniform_int(4) == 0;
  const auto& m = bias ? p.layers[l].bias : p.layers[l].weight;
  return {l, bias, rng.uniform_int(m.size())};
}

// Central difference of loss(params) w.r.t. one parameter.
inline double central_difference(MlpParams p, const ParamRef& r,
                                 const std::function<double(const MlpParams&)>& loss,
                                 double h = 1e-6) {
  const double orig = param_at(p, r);
  param_at(p, r) = orig + h;
  const double up = loss(p);
  param_at(p, r) = orig - h;
  const double down = loss(p);
  return (up - down) / (2.0 * h);
}

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / (std::abs(analytic) + 1e-8);
}

// Symmetric relative error, tolerant of both values being tiny.
inline double gradient_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-6, std::abs(analytic) + std::abs(numeric));
}

}  // namespace maskcl::testing
