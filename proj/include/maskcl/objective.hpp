#pragma once

// Softmax, cross-entropy and their class-masked forms, plus the logit MSE
// used for distillation.
//
// Masking excludes disallowed classes from the normalizer and assigns them
// probability exactly 0. It is not implemented by multiplying logits with
// -inf: that product flips sign for negative logits (-inf * -2 = +inf) and
// produces NaN for zero logits, whereas exclusion is exactly "softmax over
// the allowed classes only".

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "maskcl/errors.hpp"
#include "maskcl/numerics.hpp"

namespace maskcl {

class ClassMask {
 public:
  explicit ClassMask(std::vector<bool> allowed) : allowed_(std::move(allowed)) {
    if (std::none_of(allowed_.begin(), allowed_.end(), [](bool b) { return b; }))
      throw ConfigError("ClassMask: at least one class must be allowed");
  }

  static ClassMask full(std::size_t class_count) {
    return ClassMask(std::vector<bool>(class_count, true));
  }

  static ClassMask of(std::size_t class_count, std::span<const std::size_t> classes) {
    std::vector<bool> allowed(class_count, false);
    for (auto c : classes) {
      if (c >= class_count)
        throw ConfigError("ClassMask: class " + std::to_string(c) + " out of range");
      allowed[c] = true;
    }
    return ClassMask(std::move(allowed));
  }

  std::size_t size() const noexcept { return allowed_.size(); }
  bool allowed(std::size_t j) const { return allowed_.at(j); }
  bool is_full() const noexcept {
    return std::all_of(allowed_.begin(), allowed_.end(), [](bool b) { return b; });
  }

  std::vector<std::size_t> classes() const {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < allowed_.size(); ++j)
      if (allowed_[j]) out.push_back(j);
    return out;
  }

  friend bool operator==(const ClassMask&, const ClassMask&) = default;

 private:
  std::vector<bool> allowed_;
};

enum class Reduction {
  mean,  // logit_grad is d(mean loss)/dz, i.e. (p - y) / batch
  none,  // logit_grad is the per-sample gradient p - y
};

struct LossOutput {
  double loss = 0.0;  // mean over the batch, nats
  Matrix probs;
  Matrix logit_grad;
};

inline Matrix one_hot(std::span<const std::size_t> labels, std::size_t class_count) {
  Matrix y(labels.size(), class_count);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= class_count)
      throw ConfigError("one_hot: label " + std::to_string(labels[i]) + " >= " +
                        std::to_string(class_count));
    y(i, labels[i]) = 1.0;
  }
  return y;
}

// Index of the single 1 in a one-hot row.
inline std::size_t label_of(std::span<const double> row) {
  std::size_t hot = row.size();
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (row[j] == 1.0) {
      if (hot != row.size()) throw ConfigError("label row has more than one hot entry");
      hot = j;
    } else if (row[j] != 0.0) {
      throw ConfigError("label row is not one-hot");
    }
  }
  if (hot == row.size()) throw ConfigError("label row has no hot entry");
  return hot;
}

namespace detail {

inline void require_finite(const Matrix& z, const char* who) {
  if (!z.all_finite()) throw NumericError(std::string(who) + ": non-finite logits");
}

// Writes the restricted softmax of one row into `out` and returns the
// log-normalizer max + log(sum exp(z - max)) over allowed entries.
inline double softmax_row(std::span<const double> z, const ClassMask& mask, std::span<double> out) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < z.size(); ++j)
    if (mask.allowed(j)) m = std::max(m, z[j]);
  double sum = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j) {
    if (mask.allowed(j)) {
      out[j] = std::exp(z[j] - m);
      sum += out[j];
    } else {
      out[j] = 0.0;
    }
  }
  for (std::size_t j = 0; j < z.size(); ++j)
    if (mask.allowed(j)) out[j] /= sum;
  return m + std::log(sum);
}

}  // namespace detail

inline Matrix masked_softmax(const Matrix& z, const ClassMask& mask) {
  if (mask.size() != z.cols())
    throw ShapeError("masked_softmax: mask length " + std::to_string(mask.size()) + " vs " +
                     std::to_string(z.cols()) + " logits");
  detail::require_finite(z, "masked_softmax");
  Matrix p(z.rows(), z.cols());
  for (std::size_t i = 0; i < z.rows(); ++i) detail::softmax_row(z.row(i), mask, p.row(i));
  return p;
}

inline Matrix softmax(const Matrix& z) { return masked_softmax(z, ClassMask::full(z.cols())); }

inline LossOutput masked_ce(const Matrix& z, const Matrix& labels, const ClassMask& mask,
                            Reduction reduction = Reduction::mean) {
  if (labels.rows() != z.rows() || labels.cols() != z.cols())
    throw ShapeError("masked_ce: logits " + shape_str(z) + " vs labels " + shape_str(labels));
  if (mask.size() != z.cols())
    throw ShapeError("masked_ce: mask length " + std::to_string(mask.size()) + " vs " +
                     std::to_string(z.cols()) + " logits");
  detail::require_finite(z, "masked_ce");

  const std::size_t batch = z.rows();
  LossOutput out{0.0, Matrix(batch, z.cols()), Matrix(batch, z.cols())};
  if (batch == 0) return out;
  const double scale = reduction == Reduction::mean ? 1.0 / static_cast<double>(batch) : 1.0;
  double total = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const std::size_t truth = label_of(labels.row(i));
    if (!mask.allowed(truth))
      throw LabelMaskError("masked_ce: label " + std::to_string(truth) + " of row " +
                           std::to_string(i) + " is outside the class mask");
    const double log_norm = detail::softmax_row(z.row(i), mask, out.probs.row(i));
    total += log_norm - z(i, truth);
    auto g = out.logit_grad.row(i);
    const auto p = out.probs.row(i);
    for (std::size_t j = 0; j < g.size(); ++j) g[j] = p[j] * scale;
    g[truth] = (p[truth] - 1.0) * scale;
  }
  out.loss = total / static_cast<double>(batch);
  return out;
}

inline LossOutput ce(const Matrix& z, const Matrix& labels, Reduction reduction = Reduction::mean) {
  return masked_ce(z, labels, ClassMask::full(z.cols()), reduction);
}

struct MseOutput {
  double loss = 0.0;
  Matrix grad;
};

// Mean over all batch*K elements of (z - target)^2.
inline MseOutput mse(const Matrix& z, const Matrix& target) {
  if (z.rows() != target.rows() || z.cols() != target.cols())
    throw ShapeError("mse: " + shape_str(z) + " vs " + shape_str(target));
  MseOutput out{0.0, Matrix(z.rows(), z.cols())};
  if (z.size() == 0) return out;
  const double n = static_cast<double>(z.size());
  auto a = z.values();
  auto b = target.values();
  auto g = out.grad.values();
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    total += d * d;
    g[i] = 2.0 * d / n;
  }
  out.loss = total / n;
  return out;
}

}  // namespace maskcl
