#pragma once

// Labeled datasets: MNIST IDX ingestion and synthetic Gaussian blobs.

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "maskcl/errors.hpp"
#include "maskcl/numerics.hpp"

namespace maskcl {

struct LabeledDataset {
  Matrix inputs;                    // N x D, values in [0, 1]
  std::vector<std::size_t> labels;  // N
  std::size_t class_count = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return inputs.cols(); }

  void validate() const {
    if (inputs.rows() != labels.size())
      throw ShapeError("LabeledDataset: " + std::to_string(inputs.rows()) + " inputs vs " +
                       std::to_string(labels.size()) + " labels");
    for (auto l : labels)
      if (l >= class_count) throw ConfigError("LabeledDataset: label out of range");
    for (double v : inputs.values())
      if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("LabeledDataset: input outside [0, 1]");
  }

  LabeledDataset subset(std::span<const std::size_t> indices) const {
    LabeledDataset out{Matrix(indices.size(), dim()), {}, class_count};
    out.labels.reserve(indices.size());
    for (std::size_t r = 0; r < indices.size(); ++r) {
      const auto src = inputs.row(indices[r]);
      std::copy(src.begin(), src.end(), out.inputs.row(r).begin());
      out.labels.push_back(labels[indices[r]]);
    }
    return out;
  }

  friend bool operator==(const LabeledDataset&, const LabeledDataset&) = default;
};

inline LabeledDataset concat(const std::vector<const LabeledDataset*>& parts) {
  if (parts.empty()) return {};
  std::size_t n = 0;
  for (auto* p : parts) n += p->size();
  LabeledDataset out{Matrix(n, parts.front()->dim()), {}, parts.front()->class_count};
  std::size_t r = 0;
  for (auto* p : parts) {
    if (p->dim() != out.dim()) throw ShapeError("concat: dimension mismatch");
    for (std::size_t i = 0; i < p->size(); ++i, ++r) {
      const auto src = p->inputs.row(i);
      std::copy(src.begin(), src.end(), out.inputs.row(r).begin());
      out.labels.push_back(p->labels[i]);
    }
  }
  return out;
}

// IDX: big-endian u32 magic, big-endian u32 dimension sizes, raw u8 payload.
namespace idx {

inline constexpr std::uint32_t kImagesMagic = 0x00000803;
inline constexpr std::uint32_t kLabelsMagic = 0x00000801;

struct Images {
  std::uint32_t count = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols

  friend bool operator==(const Images&, const Images&) = default;
};

namespace detail {

inline std::uint32_t be32(std::span<const std::uint8_t> bytes, std::size_t offset, const char* what) {
  if (offset + 4 > bytes.size())
    throw FormatError(std::string("truncated IDX header reading ") + what, bytes.size());
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

inline void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline void spit(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

}  // namespace detail

inline Images parse_images(std::span<const std::uint8_t> bytes) {
  const auto magic = detail::be32(bytes, 0, "magic");
  if (magic != kImagesMagic) throw FormatError("bad IDX image magic", 0);
  Images img;
  img.count = detail::be32(bytes, 4, "image count");
  img.rows = detail::be32(bytes, 8, "row count");
  img.cols = detail::be32(bytes, 12, "column count");
  const std::size_t payload = std::size_t{img.count} * img.rows * img.cols;
  if (bytes.size() < 16 + payload) throw FormatError("truncated IDX image payload", bytes.size());
  if (bytes.size() > 16 + payload) throw FormatError("trailing bytes after IDX image payload", 16 + payload);
  img.pixels.assign(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(payload));
  return img;
}

inline std::vector<std::uint8_t> parse_labels(std::span<const std::uint8_t> bytes) {
  const auto magic = detail::be32(bytes, 0, "magic");
  if (magic != kLabelsMagic) throw FormatError("bad IDX label magic", 0);
  const std::size_t count = detail::be32(bytes, 4, "label count");
  if (bytes.size() < 8 + count) throw FormatError("truncated IDX label payload", bytes.size());
  if (bytes.size() > 8 + count) throw FormatError("trailing bytes after IDX label payload", 8 + count);
  return {bytes.begin() + 8, bytes.end()};
}

inline std::vector<std::uint8_t> encode_images(const Images& img) {
  std::vector<std::uint8_t> out;
  detail::put_be32(out, kImagesMagic);
  detail::put_be32(out, img.count);
  detail::put_be32(out, img.rows);
  detail::put_be32(out, img.cols);
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

inline std::vector<std::uint8_t> encode_labels(std::span<const std::uint8_t> labels) {
  std::vector<std::uint8_t> out;
  detail::put_be32(out, kLabelsMagic);
  detail::put_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

inline Images read_images(const std::filesystem::path& p) { return parse_images(detail::slurp(p)); }
inline std::vector<std::uint8_t> read_labels(const std::filesystem::path& p) {
  return parse_labels(detail::slurp(p));
}
inline void write_images(const std::filesystem::path& p, const Images& img) {
  detail::spit(p, encode_images(img));
}
inline void write_labels(const std::filesystem::path& p, std::span<const std::uint8_t> labels) {
  detail::spit(p, encode_labels(labels));
}

}  // namespace idx

inline constexpr std::size_t kMnistClasses = 10;

// Pixels scaled by 1/255, images flattened row-major.
inline LabeledDataset load_mnist_idx(const std::filesystem::path& images_path,
                                     const std::filesystem::path& labels_path) {
  const idx::Images img = idx::read_images(images_path);
  const std::vector<std::uint8_t> labels = idx::read_labels(labels_path);
  if (labels.size() != img.count)
    throw FormatError("image count " + std::to_string(img.count) + " != label count " +
                          std::to_string(labels.size()),
                      4);
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] >= kMnistClasses) throw FormatError("label value out of range", 8 + i);

  const std::size_t dim = std::size_t{img.rows} * img.cols;
  LabeledDataset ds{Matrix(img.count, dim), {}, kMnistClasses};
  auto v = ds.inputs.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(img.pixels[i]) / 255.0;
  ds.labels.assign(labels.begin(), labels.end());
  return ds;
}

struct DataSplits {
  LabeledDataset train;
  LabeledDataset test;
};

// Expects the four standard file names (train-images-idx3-ubyte, ...).
inline DataSplits load_mnist_dir(const std::filesystem::path& dir) {
  const auto need = [&](const char* name) {
    auto p = dir / name;
    if (!std::filesystem::exists(p)) throw IoError("MNIST file missing: " + p.string());
    return p;
  };
  return {load_mnist_idx(need("train-images-idx3-ubyte"), need("train-labels-idx1-ubyte")),
          load_mnist_idx(need("t10k-images-idx3-ubyte"), need("t10k-labels-idx1-ubyte"))};
}

struct BlobSpec {
  std::size_t class_count = 4;
  std::size_t dim = 8;
  Matrix means;  // class_count x dim
  double std = 0.1;
  std::size_t n_per_class = 100;
  std::uint64_t seed = 0;

  // Class c sits at `high` on coordinates j with j % K == c, `low` elsewhere.
  static BlobSpec separated(std::size_t k, std::size_t d, double std, std::size_t n_per_class,
                            std::uint64_t seed, double low = 0.2, double high = 0.8) {
    BlobSpec s{k, d, Matrix(k, d), std, n_per_class, seed};
    for (std::size_t c = 0; c < k; ++c)
      for (std::size_t j = 0; j < d; ++j) s.means(c, j) = j % k == c ? high : low;
    return s;
  }
};

// Gaussian samples around each class mean, clipped to [0, 1]. Per class the
// first n - n/5 samples go to train and the last n/5 to test.
inline DataSplits gen_blobs(const BlobSpec& spec) {
  if (!(spec.std > 0.0)) throw ConfigError("gen_blobs: std must be positive");
  if (spec.class_count == 0 || spec.dim == 0) throw ConfigError("gen_blobs: empty spec");
  if (spec.means.rows() != spec.class_count || spec.means.cols() != spec.dim)
    throw ShapeError("gen_blobs: means must be class_count x dim");
  const std::size_t n_test = spec.n_per_class / 5;
  const std::size_t n_train = spec.n_per_class - n_test;
  DataSplits out{{Matrix(n_train * spec.class_count, spec.dim), {}, spec.class_count},
                 {Matrix(n_test * spec.class_count, spec.dim), {}, spec.class_count}};
  Rng rng(spec.seed);
  std::size_t train_row = 0;
  std::size_t test_row = 0;
  for (std::size_t c = 0; c < spec.class_count; ++c) {
    for (std::size_t i = 0; i < spec.n_per_class; ++i) {
      const bool to_train = i < n_train;
      LabeledDataset& dst = to_train ? out.train : out.test;
      auto row = dst.inputs.row(to_train ? train_row++ : test_row++);
      for (std::size_t j = 0; j < spec.dim; ++j)
        row[j] = std::clamp(rng.gauss(spec.means(c, j), spec.std), 0.0, 1.0);
      dst.labels.push_back(c);
    }
  }
  return out;
}

}  // namespace maskcl
