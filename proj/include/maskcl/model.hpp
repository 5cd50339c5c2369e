#pragma once

// Fully-connected ReLU network with analytic backpropagation and plain SGD.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "maskcl/errors.hpp"
#include "maskcl/numerics.hpp"

namespace maskcl {

struct DenseLayer {
  Matrix weight;  // fan_in x fan_out
  Matrix bias;    // 1 x fan_out

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

// Hidden layers use ReLU, the output layer is linear (logits).
struct MlpParams {
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const { return layers.front().weight.rows(); }
  std::size_t class_count() const { return layers.back().weight.cols(); }

  std::vector<std::size_t> dims() const {
    std::vector<std::size_t> d;
    if (layers.empty()) return d;
    d.push_back(input_dim());
    for (const auto& l : layers) d.push_back(l.weight.cols());
    return d;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }

  friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

struct ForwardTrace {
  Matrix input;
  std::vector<Matrix> pre;   // per layer, before activation
  std::vector<Matrix> post;  // per layer, after activation (identity on the last)

  const Matrix& logits() const { return pre.back(); }

  friend bool operator==(const ForwardTrace&, const ForwardTrace&) = default;
};

// Parameter gradients congruent with MlpParams, plus the input gradient.
struct Gradients {
  std::vector<DenseLayer> layers;
  Matrix input_grad;

  // Sums parameter gradients only; input gradients of different batches
  // are not comparable, so the left operand keeps its own.
  Gradients& operator+=(const Gradients& other) {
    if (other.layers.size() != layers.size()) throw ShapeError("Gradients: layer count mismatch");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto add = [](Matrix& dst, const Matrix& src) {
        if (dst.rows() != src.rows() || dst.cols() != src.cols())
          throw ShapeError("Gradients: " + shape_str(dst) + " vs " + shape_str(src));
        auto d = dst.values();
        auto s = src.values();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
      };
      add(layers[l].weight, other.layers[l].weight);
      add(layers[l].bias, other.layers[l].bias);
    }
    return *this;
  }
};

// Glorot-uniform weights, zero biases.
inline MlpParams init_mlp(const std::vector<std::size_t>& dims, Rng& rng) {
  if (dims.size() < 2) throw ConfigError("init_mlp: need at least input and output dims");
  for (auto d : dims)
    if (d == 0) throw ConfigError("init_mlp: dims must be positive");
  MlpParams p;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t fan_in = dims[l];
    const std::size_t fan_out = dims[l + 1];
    const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    DenseLayer layer{Matrix(fan_in, fan_out), Matrix(1, fan_out)};
    for (double& w : layer.weight.values()) w = rng.uniform(-s, s);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

inline ForwardTrace forward(const MlpParams& p, const Matrix& x) {
  if (p.layers.empty()) throw ConfigError("forward: empty network");
  if (x.cols() != p.input_dim()) {
    throw ShapeError("forward: input " + shape_str(x) + " but network expects " +
                     std::to_string(p.input_dim()) + " features");
  }
  ForwardTrace t;
  t.input = x;
  const Matrix* h = &t.input;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    Matrix z = matmul(*h, p.layers[l].weight);
    const auto bias = p.layers[l].bias.row(0);
    for (std::size_t i = 0; i < z.rows(); ++i) {
      auto r = z.row(i);
      for (std::size_t j = 0; j < r.size(); ++j) r[j] += bias[j];
    }
    Matrix a = z;
    if (l + 1 < p.layers.size()) {
      for (double& v : a.values()) v = v > 0.0 ? v : 0.0;
    }
    t.pre.push_back(std::move(z));
    t.post.push_back(std::move(a));
    h = &t.post.back();
  }
  return t;
}

// Chain rule from dL/dlogits. Batch averaging is carried by logit_grad: the
// losses in objective.hpp already divide by the batch size, so the returned
// gradients are those of the batch-mean loss.
// ReLU derivative is taken as 0 at a pre-activation of exactly 0.
inline Gradients backward(const MlpParams& p, const ForwardTrace& trace, const Matrix& logit_grad) {
  const Matrix& logits = trace.logits();
  if (logit_grad.rows() != logits.rows() || logit_grad.cols() != logits.cols()) {
    throw ShapeError("backward: logit_grad " + shape_str(logit_grad) + " vs logits " +
                     shape_str(logits));
  }
  const std::size_t n_layers = p.layers.size();
  Gradients g;
  g.layers.resize(n_layers);
  Matrix delta = logit_grad;
  for (std::size_t l = n_layers; l-- > 0;) {
    const Matrix& h_in = l == 0 ? trace.input : trace.post[l - 1];
    g.layers[l].weight = matmul_at(h_in, delta);
    Matrix db(1, delta.cols());
    for (std::size_t i = 0; i < delta.rows(); ++i) {
      auto r = delta.row(i);
      for (std::size_t j = 0; j < r.size(); ++j) db(0, j) += r[j];
    }
    g.layers[l].bias = std::move(db);

    Matrix upstream = matmul_bt(delta, p.layers[l].weight);
    if (l == 0) {
      g.input_grad = std::move(upstream);
    } else {
      const Matrix& pre = trace.pre[l - 1];
      auto u = upstream.values();
      auto z = pre.values();
      for (std::size_t i = 0; i < u.size(); ++i)
        if (!(z[i] > 0.0)) u[i] = 0.0;
      delta = std::move(upstream);
    }
  }
  return g;
}

// θ ← θ − lr·g, in place. No momentum, no weight decay.
inline void apply_sgd(MlpParams& p, const Gradients& g, double lr) {
  if (!(lr > 0.0)) throw ConfigError("sgd: learning rate must be positive");
  if (g.layers.size() != p.layers.size()) throw ShapeError("sgd: layer count mismatch");
  auto step = [lr](Matrix& param, const Matrix& grad) {
    if (param.rows() != grad.rows() || param.cols() != grad.cols())
      throw ShapeError("sgd: " + shape_str(param) + " vs " + shape_str(grad));
    auto w = param.values();
    auto d = grad.values();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * d[i];
  };
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    step(p.layers[l].weight, g.layers[l].weight);
    step(p.layers[l].bias, g.layers[l].bias);
  }
}

inline MlpParams sgd_step(MlpParams p, const Gradients& g, double lr) {
  apply_sgd(p, g, lr);
  return p;
}

// Checkpoint file, all integers and floats little-endian:
//   "MCLP" | u32 version | u32 layer_count | u32 dims[layer_count + 1]
//   | per layer: f64 weight[fan_in * fan_out] (row-major), f64 bias[fan_out]
namespace checkpoint {

inline constexpr std::array<char, 4> kMagic{'M', 'C', 'L', 'P'};
inline constexpr std::uint32_t kVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  std::array<unsigned char, 4> b{};
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b.data()), 4);
}

inline void put_f64(std::ostream& os, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  std::array<unsigned char, 8> b{};
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b.data()), 8);
}

class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}

  std::uint32_t u32() {
    std::array<unsigned char, 4> b{};
    read(b.data(), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }

  double f64() {
    std::array<unsigned char, 8> b{};
    read(b.data(), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return std::bit_cast<double>(v);
  }

  void read(unsigned char* dst, std::size_t n) {
    is_.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) throw FormatError("checkpoint truncated", offset_);
    offset_ += n;
  }

  std::size_t offset() const { return offset_; }

 private:
  std::istream& is_;
  std::size_t offset_ = 0;
};

}  // namespace detail

inline void write(std::ostream& os, const MlpParams& p) {
  os.write(kMagic.data(), 4);
  detail::put_u32(os, kVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(p.layers.size()));
  for (auto d : p.dims()) detail::put_u32(os, static_cast<std::uint32_t>(d));
  for (const auto& l : p.layers) {
    for (double w : l.weight.values()) detail::put_f64(os, w);
    for (double b : l.bias.values()) detail::put_f64(os, b);
  }
}

inline MlpParams read(std::istream& is) {
  detail::Reader r(is);
  std::array<unsigned char, 4> magic{};
  r.read(magic.data(), 4);
  if (std::memcmp(magic.data(), kMagic.data(), 4) != 0) throw FormatError("bad checkpoint magic", 0);
  const auto version = r.u32();
  if (version != kVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  const auto n_layers = r.u32();
  if (n_layers == 0) throw FormatError("checkpoint has no layers", 8);
  std::vector<std::size_t> dims;
  for (std::uint32_t i = 0; i <= n_layers; ++i) {
    const auto d = r.u32();
    if (d == 0) throw FormatError("zero layer dimension", r.offset() - 4);
    dims.push_back(d);
  }
  MlpParams p;
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    DenseLayer layer{Matrix(dims[l], dims[l + 1]), Matrix(1, dims[l + 1])};
    for (double& w : layer.weight.values()) w = r.f64();
    for (double& b : layer.bias.values()) b = r.f64();
    p.layers.push_back(std::move(layer));
  }
  return p;
}

inline void save(const std::filesystem::path& path, const MlpParams& p) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write(os, p);
  if (!os) throw IoError("write failed: " + path.string());
}

inline MlpParams load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return read(is);
}

}  // namespace checkpoint

}  // namespace maskcl
