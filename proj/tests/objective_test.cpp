#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "maskcl/objective.hpp"
#include "test_support.hpp"

namespace maskcl {
namespace {

using testing::random_matrix;

// Values below were computed independently (closed forms in Python):
//   e^3/(e^3+e^4) = 1/(1+e), -ln(0.75), ln 2.
constexpr double kSigmoidMinus1 = 0.2689414213699951;
constexpr double kSigmoid1 = 0.7310585786300049;
constexpr double kNegLog075 = 0.2876820724517809;
constexpr double kLn2 = 0.6931471805599453;

// Between 1 and k-1 allowed classes, chosen at random (k >= 2).
ClassMask random_partial_mask(std::size_t k, Rng& rng) {
  const auto perm = rng.shuffle(k);
  const std::size_t n_allowed = 1 + rng.uniform_int(k - 1);
  std::vector<bool> allowed(k, false);
  for (std::size_t i = 0; i < n_allowed; ++i) allowed[perm[i]] = true;
  return ClassMask(allowed);
}

TEST(ClassMask, Invariants) {
  EXPECT_THROW(ClassMask(std::vector<bool>(3, false)), ConfigError);
  const std::vector<std::size_t> cls{1, 3};
  const auto m = ClassMask::of(4, cls);
  EXPECT_EQ(m.classes(), cls);
  EXPECT_FALSE(m.is_full());
  EXPECT_TRUE(ClassMask::full(4).is_full());
  const std::vector<std::size_t> bad{4};
  EXPECT_THROW(ClassMask::of(4, bad), ConfigError);
}

TEST(Softmax, Examples) {
  EXPECT_EQ(softmax(Matrix{{0, 0}}), (Matrix{{0.5, 0.5}}));
  const Matrix p = softmax(Matrix{{3, 4}});
  EXPECT_NEAR(p(0, 0), kSigmoidMinus1, 1e-15);
  EXPECT_NEAR(p(0, 1), kSigmoid1, 1e-15);
  EXPECT_EQ(softmax(Matrix{{1000, 1000}}), (Matrix{{0.5, 0.5}}));
}

TEST(Softmax, RejectsNonFinite) {
  EXPECT_THROW(softmax(Matrix{{0.0, std::nan("")}}), NumericError);
  EXPECT_THROW(softmax(Matrix{{0.0, INFINITY}}), NumericError);
}

TEST(Softmax, ShiftInvariance) {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix z = random_matrix(3, 6, rng, -5, 5);
    const double c = rng.uniform(-50, 50);
    Matrix shifted = z;
    for (double& v : shifted.values()) v += c;
    const Matrix a = softmax(z), b = softmax(shifted);
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a.values()[i], b.values()[i], 1e-12);
  }
}

TEST(MaskedSoftmax, Examples) {
  const std::vector<std::size_t> cls{2, 3};
  const Matrix p = masked_softmax(Matrix{{1, 2, 3, 4}}, ClassMask::of(4, cls));
  EXPECT_EQ(p(0, 0), 0.0);
  EXPECT_EQ(p(0, 1), 0.0);
  EXPECT_NEAR(p(0, 2), kSigmoidMinus1, 1e-15);
  EXPECT_NEAR(p(0, 3), kSigmoid1, 1e-15);

  const std::vector<std::size_t> single{1};
  EXPECT_EQ(masked_softmax(Matrix{{9, -3, 4}}, ClassMask::of(3, single)), (Matrix{{0, 1, 0}}));

  Rng rng(2);
  const Matrix z = random_matrix(4, 5, rng, -3, 3);
  EXPECT_EQ(masked_softmax(z, ClassMask::full(5)), softmax(z));
}

TEST(MaskedSoftmax, MaskLengthMismatch) {
  EXPECT_THROW(masked_softmax(Matrix(1, 3), ClassMask::full(4)), ShapeError);
}

TEST(MaskedSoftmax, ZerosAndRowSumsProperty) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 2 + rng.uniform_int(9);
    const ClassMask mask = random_partial_mask(k, rng);
    const Matrix z = random_matrix(1 + rng.uniform_int(5), k, rng, -20, 20);
    const Matrix p = masked_softmax(z, mask);
    for (std::size_t i = 0; i < p.rows(); ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        if (!mask.allowed(j)) {
          ASSERT_EQ(p(i, j), 0.0);
        }
        ASSERT_GE(p(i, j), 0.0);
        ASSERT_LE(p(i, j), 1.0);
        sum += p(i, j);
      }
      ASSERT_NEAR(sum, 1.0, 1e-9);
    }
  }
}

TEST(MaskedCe, SingleAllowedClassIsZeroLoss) {
  const std::vector<std::size_t> cls{2};
  const auto out = masked_ce(Matrix{{5, -1, 0.3}}, Matrix{{0, 0, 1}}, ClassMask::of(3, cls));
  EXPECT_EQ(out.loss, 0.0);
  EXPECT_EQ(out.logit_grad, Matrix(1, 3));
}

TEST(MaskedCe, UniformBinary) {
  const std::vector<std::size_t> cls{0, 1};
  const auto mask = ClassMask::of(4, cls);
  const auto out = masked_ce(Matrix{{0, 0, 0, 0}}, Matrix{{1, 0, 0, 0}}, mask, Reduction::none);
  EXPECT_NEAR(out.loss, kLn2, 1e-15);
  EXPECT_EQ(out.logit_grad, (Matrix{{-0.5, 0.5, 0, 0}}));
}

TEST(MaskedCe, MeanReductionScalesGradient) {
  const std::vector<std::size_t> cls{0, 1};
  const auto mask = ClassMask::of(4, cls);
  const Matrix z{{0, 0, 0, 0}, {0, 0, 0, 0}};
  const Matrix y{{1, 0, 0, 0}, {0, 1, 0, 0}};
  const auto out = masked_ce(z, y, mask);
  EXPECT_NEAR(out.loss, kLn2, 1e-15);
  EXPECT_EQ(out.logit_grad, (Matrix{{-0.25, 0.25, 0, 0}, {0.25, -0.25, 0, 0}}));
}

TEST(MaskedCe, LabelOutsideMaskIsError) {
  const std::vector<std::size_t> cls{0, 1};
  EXPECT_THROW(masked_ce(Matrix{{0, 0, 0}}, Matrix{{0, 0, 1}}, ClassMask::of(3, cls)), LabelMaskError);
}

TEST(MaskedCe, InvalidLabelsAndShapes) {
  EXPECT_THROW(ce(Matrix{{0, 0}}, Matrix{{0.5, 0.5}}), ConfigError);
  EXPECT_THROW(ce(Matrix{{0, 0}}, Matrix{{0, 0}}), ConfigError);
  EXPECT_THROW(ce(Matrix{{0, 0}}, Matrix{{1, 0, 0}}), ShapeError);
}

TEST(MaskedCe, GradientExactlyZeroAtMaskedIndices) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 3 + rng.uniform_int(8);
    const ClassMask mask = random_partial_mask(k, rng);
    const auto allowed = mask.classes();
    const std::size_t n = 1 + rng.uniform_int(6);
    std::vector<std::size_t> labels(n);
    for (auto& l : labels) l = allowed[rng.uniform_int(allowed.size())];
    const Matrix z = random_matrix(n, k, rng, -10, 10);
    const auto out = masked_ce(z, one_hot(labels, k), mask);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j)
        if (!mask.allowed(j)) {
          ASSERT_EQ(out.logit_grad(i, j), 0.0);
          ASSERT_EQ(out.probs(i, j), 0.0);
        }
  }
}

TEST(Ce, EqualsFullMaskBitwise) {
  Rng rng(5);
  const Matrix z = random_matrix(6, 5, rng, -4, 4);
  const Matrix y = one_hot(testing::random_labels(6, 5, rng), 5);
  const auto a = ce(z, y);
  const auto b = masked_ce(z, y, ClassMask::full(5));
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.probs, b.probs);
  EXPECT_EQ(a.logit_grad, b.logit_grad);
}

TEST(Ce, KnownValue) {
  const auto out = ce(Matrix{{std::log(1.0), std::log(3.0)}}, Matrix{{0, 1}});
  EXPECT_NEAR(out.loss, kNegLog075, 1e-15);
  EXPECT_NEAR(out.probs(0, 0), 0.25, 1e-15);
}

TEST(Ce, GradientIsSoftmaxMinusLabelAndRowsSumToZero) {
  Rng rng(6);
  const Matrix z = random_matrix(7, 4, rng, -6, 6);
  const Matrix y = one_hot(testing::random_labels(7, 4, rng), 4);
  const auto out = ce(z, y, Reduction::none);
  const Matrix expected = elementwise(softmax(z), y, ElementwiseOp::sub);
  for (std::size_t i = 0; i < expected.size(); ++i)
    EXPECT_NEAR(out.logit_grad.values()[i], expected.values()[i], 1e-12);
  for (std::size_t i = 0; i < 7; ++i) {
    double s = 0.0;
    for (double g : out.logit_grad.row(i)) s += g;
    EXPECT_NEAR(s, 0.0, 1e-12);
  }
}

TEST(Ce, LogitGradientMatchesFiniteDifferences) {
  Rng rng(7);
  const std::vector<std::size_t> cls{1, 2, 4};
  const ClassMask mask = ClassMask::of(5, cls);
  const Matrix z = random_matrix(3, 5, rng, -3, 3);
  const Matrix y = one_hot(std::vector<std::size_t>{1, 4, 2}, 5);
  const auto out = masked_ce(z, y, mask);
  const double h = 1e-6;
  for (std::size_t i = 0; i < z.size(); ++i) {
    Matrix up = z, down = z;
    up.values()[i] += h;
    down.values()[i] -= h;
    const double fd = (masked_ce(up, y, mask).loss - masked_ce(down, y, mask).loss) / (2 * h);
    EXPECT_NEAR(out.logit_grad.values()[i], fd, 1e-8);
  }
}

TEST(Mse, Examples) {
  const Matrix z{{0.5, -1.0}};
  const auto same = mse(z, z);
  EXPECT_EQ(same.loss, 0.0);
  EXPECT_EQ(same.grad, Matrix(1, 2));
  EXPECT_EQ(mse(Matrix{{1, 3}}, Matrix{{0, 0}}).loss, 5.0);
  EXPECT_THROW(mse(Matrix(1, 2), Matrix(2, 1)), ShapeError);
}

TEST(Mse, GradientMatchesFiniteDifferences) {
  Rng rng(8);
  const Matrix z = random_matrix(4, 3, rng);
  const Matrix t = random_matrix(4, 3, rng);
  const auto out = mse(z, t);
  const double h = 1e-6;
  for (std::size_t i = 0; i < z.size(); ++i) {
    Matrix up = z, down = z;
    up.values()[i] += h;
    down.values()[i] -= h;
    const double fd = (mse(up, t).loss - mse(down, t).loss) / (2 * h);
    EXPECT_NEAR(out.grad.values()[i], fd, 1e-6);
  }
}

}  // namespace
}  // namespace maskcl
