#pragma once

// Input-space perturbations: FGSM (loss-increasing sign step) and the
// class-wise fast gradient method, a single descent step on the input toward
// the cross-entropy target of a chosen class.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "maskcl/errors.hpp"
#include "maskcl/model.hpp"
#include "maskcl/numerics.hpp"
#include "maskcl/objective.hpp"

namespace maskcl {

struct InputRange {
  double lo = 0.0;
  double hi = 1.0;
};

struct PerturbConfig {
  double epsilon = 0.0;
  double cfgm_alpha = 1.0;
  std::optional<InputRange> clip = InputRange{};

  void validate() const {
    if (!(epsilon >= 0.0)) throw ConfigError("perturb: epsilon must be >= 0");
    if (!(cfgm_alpha > 0.0)) throw ConfigError("perturb: cfgm alpha must be > 0");
    if (clip && !(clip->lo < clip->hi)) throw ConfigError("perturb: clip range must have lo < hi");
  }
};

// Per-sample ∇_x CE(x_i, y_i), one row per sample (not divided by batch).
inline Matrix input_gradient(const MlpParams& model, const Matrix& x, const Matrix& y) {
  const ForwardTrace trace = forward(model, x);
  const LossOutput loss = ce(trace.logits(), y, Reduction::none);
  return backward(model, trace, loss.logit_grad).input_grad;
}

inline double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// δ = ε·sign(grad), with sign(0) = 0.
inline Matrix fgsm_delta(const Matrix& grad, double epsilon) {
  if (!(epsilon >= 0.0)) throw ConfigError("fgsm: epsilon must be >= 0");
  Matrix delta(grad.rows(), grad.cols());
  auto d = delta.values();
  auto g = grad.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = epsilon * sign_of(g[i]);
  return delta;
}

// x + δ. Coordinates with zero perturbation keep their exact bits.
inline Matrix fgsm_step(const Matrix& x, const Matrix& grad, double epsilon) {
  if (x.rows() != grad.rows() || x.cols() != grad.cols())
    throw ShapeError("fgsm: input " + shape_str(x) + " vs gradient " + shape_str(grad));
  const Matrix delta = fgsm_delta(grad, epsilon);
  Matrix adv = x;
  auto a = adv.values();
  auto d = delta.values();
  for (std::size_t i = 0; i < a.size(); ++i)
    if (d[i] != 0.0) a[i] += d[i];
  return adv;
}

inline Matrix fgsm(const MlpParams& model, const Matrix& x, const Matrix& y, double epsilon) {
  if (!(epsilon >= 0.0)) throw ConfigError("fgsm: epsilon must be >= 0");
  if (epsilon == 0.0) return x;
  return fgsm_step(x, input_gradient(model, x, y), epsilon);
}

namespace detail {

inline void clip_in_place(Matrix& m, const std::optional<InputRange>& clip) {
  if (!clip) return;
  for (double& v : m.values()) v = std::clamp(v, clip->lo, clip->hi);
}

}  // namespace detail

// One descent step x − α·∇_x CE(x, y_targets), rows targeted independently.
inline Matrix cfgm_targets(const MlpParams& model, const Matrix& x, const Matrix& y_targets,
                           double alpha, const std::optional<InputRange>& clip = std::nullopt) {
  if (!(alpha > 0.0)) throw ConfigError("cfgm: alpha must be > 0");
  const Matrix grad = input_gradient(model, x, y_targets);
  Matrix out = x;
  auto o = out.values();
  auto g = grad.values();
  for (std::size_t i = 0; i < o.size(); ++i)
    if (g[i] != 0.0) o[i] -= alpha * g[i];
  detail::clip_in_place(out, clip);
  return out;
}

// Every row of x stepped toward class `target_class`.
inline Matrix cfgm(const MlpParams& model, const Matrix& x, std::size_t target_class, double alpha,
                   const std::optional<InputRange>& clip = std::nullopt) {
  if (target_class >= model.class_count())
    throw ConfigError("cfgm: target class " + std::to_string(target_class) + " >= " +
                      std::to_string(model.class_count()));
  const std::vector<std::size_t> targets(x.rows(), target_class);
  return cfgm_targets(model, x, one_hot(targets, model.class_count()), alpha, clip);
}

struct CfgmBatch {
  Matrix inputs;
  Matrix targets;  // one-hot
  std::vector<std::size_t> target_classes;
};

// Each row gets a target drawn uniformly from previous_classes, then one
// CFGM step toward it.
inline CfgmBatch cfgm_batch(const MlpParams& model, const Matrix& x,
                            std::span<const std::size_t> previous_classes, Rng& rng, double alpha,
                            const std::optional<InputRange>& clip = std::nullopt) {
  if (previous_classes.empty())
    throw ConfigError("cfgm_batch: no previous classes to target (first task?)");
  for (auto c : previous_classes)
    if (c >= model.class_count())
      throw ConfigError("cfgm_batch: class " + std::to_string(c) + " out of range");
  CfgmBatch out;
  out.target_classes.reserve(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i)
    out.target_classes.push_back(previous_classes[rng.uniform_int(previous_classes.size())]);
  out.targets = one_hot(out.target_classes, model.class_count());
  out.inputs = cfgm_targets(model, x, out.targets, alpha, clip);
  return out;
}

// Running per-class input means. Diagnostic only: reports how close CFGM
// samples land to the empirical mean of their target class.
class ClassMeanTracker {
 public:
  ClassMeanTracker(std::size_t class_count, std::size_t dim)
      : sums_(class_count, dim), counts_(class_count, 0) {}

  void observe(const Matrix& x, std::span<const std::size_t> labels) {
    if (x.rows() != labels.size() || x.cols() != sums_.cols())
      throw ShapeError("ClassMeanTracker: batch " + shape_str(x) + " vs " +
                       std::to_string(labels.size()) + " labels");
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const auto c = labels[i];
      if (c >= counts_.size()) throw ConfigError("ClassMeanTracker: label out of range");
      auto s = sums_.row(c);
      auto r = x.row(i);
      for (std::size_t j = 0; j < r.size(); ++j) s[j] += r[j];
      ++counts_[c];
    }
  }

  std::size_t count(std::size_t c) const { return counts_.at(c); }

  std::vector<double> mean(std::size_t c) const {
    if (counts_.at(c) == 0) throw ConfigError("ClassMeanTracker: class never observed");
    std::vector<double> m(sums_.cols());
    auto s = sums_.row(c);
    for (std::size_t j = 0; j < m.size(); ++j) m[j] = s[j] / static_cast<double>(counts_[c]);
    return m;
  }

  // Euclidean distance from x to the running mean of class c.
  double distance(std::span<const double> x, std::size_t c) const {
    const auto m = mean(c);
    if (x.size() != m.size()) throw ShapeError("ClassMeanTracker: dimension mismatch");
    double acc = 0.0;
    for (std::size_t j = 0; j < m.size(); ++j) acc += (x[j] - m[j]) * (x[j] - m[j]);
    return std::sqrt(acc);
  }

 private:
  Matrix sums_;
  std::vector<std::size_t> counts_;
};

}  // namespace maskcl
