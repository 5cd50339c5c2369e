#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <vector>

#include "maskcl/data.hpp"

namespace maskcl {
namespace {

namespace fs = std::filesystem;

class IdxFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("maskcl_idx_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  // Two 2x3 images.
  idx::Images two_images() const {
    return {2, 2, 3, {0, 255, 51, 102, 1, 254, 10, 20, 30, 40, 50, 60}};
  }

  fs::path dir_;
};

TEST_F(IdxFixture, RoundTripRecoversExactPixels) {
  const auto img = two_images();
  const std::vector<std::uint8_t> labels{7, 3};
  idx::write_images(dir_ / "img", img);
  idx::write_labels(dir_ / "lbl", labels);
  EXPECT_EQ(idx::read_images(dir_ / "img"), img);

  const auto ds = load_mnist_idx(dir_ / "img", dir_ / "lbl");
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.dim(), 6u);
  EXPECT_EQ(ds.class_count, 10u);
  EXPECT_EQ(ds.labels, (std::vector<std::size_t>{7, 3}));
  for (std::size_t i = 0; i < 12; ++i)
    EXPECT_EQ(ds.inputs.values()[i], static_cast<double>(img.pixels[i]) / 255.0);
  EXPECT_EQ(ds.inputs(0, 1), 1.0);
  EXPECT_EQ(ds.inputs(0, 0), 0.0);
}

TEST_F(IdxFixture, HeaderIsBigEndian) {
  const auto bytes = idx::encode_images(two_images());
  EXPECT_EQ(bytes[0], 0x00);
  EXPECT_EQ(bytes[2], 0x08);
  EXPECT_EQ(bytes[3], 0x03);
  EXPECT_EQ(bytes[7], 2);   // count
  EXPECT_EQ(bytes[11], 2);  // rows
  EXPECT_EQ(bytes[15], 3);  // cols
  EXPECT_EQ(bytes.size(), 16u + 12u);
  const std::vector<std::uint8_t> labels{1, 2};
  const auto lb = idx::encode_labels(labels);
  EXPECT_EQ(lb[3], 0x01);
  EXPECT_EQ(lb.size(), 10u);
}

TEST_F(IdxFixture, TruncatedImagesAreFormatErrors) {
  auto bytes = idx::encode_images(two_images());
  bytes.pop_back();
  try {
    idx::parse_images(bytes);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), bytes.size());
  }
  const std::vector<std::uint8_t> header_only{0, 0, 8, 3, 0, 0};
  EXPECT_THROW(idx::parse_images(header_only), FormatError);
}

TEST_F(IdxFixture, BadMagicIsFormatError) {
  auto bytes = idx::encode_images(two_images());
  bytes[3] = 0x01;
  try {
    idx::parse_images(bytes);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  const std::vector<std::uint8_t> labels{1};
  auto lb = idx::encode_labels(labels);
  lb[3] = 0x03;
  EXPECT_THROW(idx::parse_labels(lb), FormatError);
}

TEST_F(IdxFixture, CountMismatchIsFormatError) {
  idx::write_images(dir_ / "img", two_images());
  const std::vector<std::uint8_t> labels{1, 2, 3};
  idx::write_labels(dir_ / "lbl", labels);
  EXPECT_THROW(load_mnist_idx(dir_ / "img", dir_ / "lbl"), FormatError);
}

TEST_F(IdxFixture, TruncatedLabelFileYieldsNoDataset) {
  idx::write_images(dir_ / "img", two_images());
  const std::vector<std::uint8_t> labels{1, 2};
  auto lb = idx::encode_labels(labels);
  lb.pop_back();
  std::ofstream(dir_ / "lbl", std::ios::binary)
      .write(reinterpret_cast<const char*>(lb.data()), static_cast<std::streamsize>(lb.size()));
  EXPECT_THROW(load_mnist_idx(dir_ / "img", dir_ / "lbl"), FormatError);
}

TEST_F(IdxFixture, MissingFileIsIoError) {
  EXPECT_THROW(load_mnist_idx(dir_ / "nope", dir_ / "nope2"), IoError);
  EXPECT_THROW(load_mnist_dir(dir_), IoError);
}

TEST(MnistFiles, OfficialTrainSetShape) {
  const char* dir = std::getenv("MASKCL_MNIST_DIR");
  if (!dir || !fs::exists(fs::path(dir) / "train-images-idx3-ubyte"))
    GTEST_SKIP() << "MASKCL_MNIST_DIR not set";
  const auto data = load_mnist_dir(dir);
  EXPECT_EQ(data.train.size(), 60000u);
  EXPECT_EQ(data.train.dim(), 784u);
  EXPECT_EQ(data.train.class_count, 10u);
  EXPECT_EQ(data.test.size(), 10000u);
  EXPECT_NO_THROW(data.train.validate());
}

TEST(Blobs, SplitArithmeticAndBalance) {
  const auto d = gen_blobs(BlobSpec::separated(4, 6, 0.1, 5, 1));
  EXPECT_EQ(d.train.size(), 16u);
  EXPECT_EQ(d.test.size(), 4u);
  std::vector<int> per_class(4, 0);
  for (auto l : d.train.labels) ++per_class[l];
  for (auto l : d.test.labels) ++per_class[l];
  for (int c : per_class) EXPECT_EQ(c, 5);
  EXPECT_NO_THROW(d.train.validate());
  EXPECT_NO_THROW(d.test.validate());
}

TEST(Blobs, DeterministicFromSeed) {
  const auto a = gen_blobs(BlobSpec::separated(3, 4, 0.2, 20, 7));
  const auto b = gen_blobs(BlobSpec::separated(3, 4, 0.2, 20, 7));
  const auto c = gen_blobs(BlobSpec::separated(3, 4, 0.2, 20, 8));
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  EXPECT_NE(a.train, c.train);
}

TEST(Blobs, TinyStdIsLinearlySeparable) {
  // Nearest-mean classification is a linear rule; with std -> 0 it is exact.
  auto spec = BlobSpec::separated(4, 8, 1e-6, 50, 3);
  const auto d = gen_blobs(spec);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < d.test.size(); ++i) {
    std::size_t best = 0;
    double best_dist = 1e300;
    for (std::size_t c = 0; c < 4; ++c) {
      double dist = 0.0;
      for (std::size_t j = 0; j < 8; ++j) {
        const double diff = d.test.inputs(i, j) - spec.means(c, j);
        dist += diff * diff;
      }
      if (dist < best_dist) best_dist = dist, best = c;
    }
    correct += best == d.test.labels[i];
  }
  EXPECT_EQ(correct, d.test.size());
}

TEST(Blobs, RejectsBadSpec) {
  auto spec = BlobSpec::separated(2, 2, 0.1, 10, 0);
  spec.std = 0.0;
  EXPECT_THROW(gen_blobs(spec), ConfigError);
  spec = BlobSpec::separated(2, 2, 0.1, 10, 0);
  spec.means = Matrix(3, 2);
  EXPECT_THROW(gen_blobs(spec), ShapeError);
}

}  // namespace
}  // namespace maskcl
