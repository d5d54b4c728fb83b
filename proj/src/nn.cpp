#include "deepcc/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>

#include "deepcc/error.hpp"

namespace deepcc::nn {

namespace {

constexpr char kNetMagic[8] = {'D', 'C', 'C', 'N', 'E', 'T', '\0', '\0'};
constexpr std::uint32_t kNetVersion = 1;

Matrix activate(const Matrix& pre, Activation a) {
  switch (a) {
    case Activation::kLinear: return pre;
    case Activation::kRelu: return pre.cwiseMax(0.0);
    case Activation::kTanh: return pre.array().tanh().matrix();
  }
  return pre;
}

Matrix activation_grad(const Matrix& pre, const Matrix& out, Activation a, const Matrix& g) {
  switch (a) {
    case Activation::kLinear: return g;
    case Activation::kRelu: return (pre.array() > 0.0).cast<double>().matrix().cwiseProduct(g);
    case Activation::kTanh: return (1.0 - out.array().square()).matrix().cwiseProduct(g);
  }
  return g;
}

template <typename T>
void write_le(std::ostream& out, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  unsigned char buf[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) throw ParseError("truncated checkpoint");
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

void write_array(std::ostream& out, const double* data, Eigen::Index n) {
  for (Eigen::Index i = 0; i < n; ++i) write_le(out, data[i]);
}

void read_array(std::istream& in, double* data, Eigen::Index n) {
  for (Eigen::Index i = 0; i < n; ++i) data[i] = read_le<double>(in);
}

}  // namespace

void write_u32(std::ostream& out, std::uint32_t v) { write_le(out, v); }
void write_u64(std::ostream& out, std::uint64_t v) { write_le(out, v); }
void write_f64(std::ostream& out, double v) { write_le(out, v); }
std::uint32_t read_u32(std::istream& in) { return read_le<std::uint32_t>(in); }
std::uint64_t read_u64(std::istream& in) { return read_le<std::uint64_t>(in); }
double read_f64(std::istream& in) { return read_le<double>(in); }

DenseNet::DenseNet(Eigen::Index input_dim, const std::vector<LayerSpec>& specs, Rng& rng,
                   double final_layer_scale) {
  if (input_dim <= 0 || specs.empty()) throw ShapeError("network needs inputs and layers");
  Eigen::Index in = input_dim;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& spec = specs[i];
    if (spec.units <= 0) throw ShapeError("layer width must be positive");
    Layer l;
    l.activation = spec.activation;
    const bool last = i + 1 == specs.size();
    // Fan-in uniform init; optionally a small uniform range for the output layer.
    const double bound = (last && final_layer_scale > 0.0)
                             ? final_layer_scale
                             : 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    l.w.resize(spec.units, in);
    for (Eigen::Index k = 0; k < l.w.size(); ++k) l.w.data()[k] = u(rng);
    l.b.resize(spec.units);
    for (Eigen::Index k = 0; k < l.b.size(); ++k) l.b[k] = u(rng);
    if (spec.batchnorm) {
      BatchNorm bn;
      bn.gamma = Vector::Ones(spec.units);
      bn.beta = Vector::Zero(spec.units);
      bn.running_mean = Vector::Zero(spec.units);
      bn.running_var = Vector::Ones(spec.units);
      l.bn = std::move(bn);
    }
    layers_.push_back(std::move(l));
    in = spec.units;
  }
}

Eigen::Index DenseNet::input_dim() const { return layers_.empty() ? 0 : layers_.front().in_dim(); }
Eigen::Index DenseNet::output_dim() const {
  return layers_.empty() ? 0 : layers_.back().out_dim();
}

Matrix DenseNet::forward(const Matrix& x, Mode mode) {
  if (mode == Mode::kInfer) {
    cache_.clear();
    return infer(x);
  }
  if (x.rows() != input_dim())
    throw ShapeError("input width " + std::to_string(x.rows()) + " != " +
                     std::to_string(input_dim()));
  cache_.assign(layers_.size(), {});
  Matrix a = x;
  const double n = static_cast<double>(x.cols());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    auto& l = layers_[i];
    auto& c = cache_[i];
    c.input = a;
    Matrix z = l.w * a;
    z.colwise() += l.b;
    if (l.bn) {
      auto& bn = *l.bn;
      const Vector mean = z.rowwise().mean();
      Matrix centered = z.colwise() - mean;
      const Vector var = centered.array().square().rowwise().sum().matrix() / n;
      c.inv_std = (var.array() + bn.epsilon).rsqrt().matrix();
      c.xhat = c.inv_std.asDiagonal() * centered;
      c.pre = bn.gamma.asDiagonal() * c.xhat;
      c.pre.colwise() += bn.beta;
      bn.running_mean = bn.momentum * bn.running_mean + (1.0 - bn.momentum) * mean;
      bn.running_var = bn.momentum * bn.running_var + (1.0 - bn.momentum) * var;
    } else {
      c.pre = std::move(z);
    }
    c.output = activate(c.pre, l.activation);
    a = c.output;
  }
  return a;
}

Matrix DenseNet::infer(const Matrix& x) const {
  if (x.rows() != input_dim())
    throw ShapeError("input width " + std::to_string(x.rows()) + " != " +
                     std::to_string(input_dim()));
  Matrix a = x;
  for (const auto& l : layers_) {
    Matrix z = l.w * a;
    z.colwise() += l.b;
    if (l.bn) {
      const auto& bn = *l.bn;
      const Vector scale =
          bn.gamma.cwiseProduct((bn.running_var.array() + bn.epsilon).rsqrt().matrix());
      z.colwise() -= bn.running_mean;
      z = scale.asDiagonal() * z;
      z.colwise() += bn.beta;
    }
    a = activate(z, l.activation);
  }
  return a;
}

GradientTape DenseNet::backward(const Matrix& upstream) const {
  if (cache_.size() != layers_.size())
    throw Error("backward() needs a preceding train-mode forward()");
  const auto& last = cache_.back().output;
  if (upstream.rows() != last.rows() || upstream.cols() != last.cols())
    throw ShapeError("upstream gradient shape does not match the network output");
  GradientTape tape;
  tape.layers.resize(layers_.size());
  Matrix g = upstream;
  const double n = static_cast<double>(upstream.cols());
  for (std::size_t k = layers_.size(); k-- > 0;) {
    const auto& l = layers_[k];
    const auto& c = cache_[k];
    auto& lg = tape.layers[k];
    Matrix dpre = activation_grad(c.pre, c.output, l.activation, g);
    Matrix dz;
    if (l.bn) {
      lg.gamma = dpre.cwiseProduct(c.xhat).rowwise().sum();
      lg.beta = dpre.rowwise().sum();
      const Matrix dxhat = l.bn->gamma.asDiagonal() * dpre;
      const Vector sum_dxhat = dxhat.rowwise().sum();
      const Vector sum_dxhat_xhat = dxhat.cwiseProduct(c.xhat).rowwise().sum();
      dz = n * dxhat;
      dz.colwise() -= sum_dxhat;
      dz -= sum_dxhat_xhat.asDiagonal() * c.xhat;
      dz = (c.inv_std / n).asDiagonal() * dz;
    } else {
      dz = std::move(dpre);
    }
    lg.w = dz * c.input.transpose();
    lg.b = dz.rowwise().sum();
    g = l.w.transpose() * dz;
  }
  tape.input = std::move(g);
  return tape;
}

std::size_t DenseNet::parameter_count() const {
  std::size_t n = 0;
  for_each_tensor([&](std::span<const double> s) { n += s.size(); });
  return n;
}

GradientTape DenseNet::zero_tape() const {
  GradientTape t;
  for (const auto& l : layers_) {
    LayerGrad g;
    g.w = Matrix::Zero(l.w.rows(), l.w.cols());
    g.b = Vector::Zero(l.b.size());
    if (l.bn) {
      g.gamma = Vector::Zero(l.bn->gamma.size());
      g.beta = Vector::Zero(l.bn->beta.size());
    }
    t.layers.push_back(std::move(g));
  }
  return t;
}

bool DenseNet::same_shape(const DenseNet& other) const {
  if (layers_.size() != other.layers_.size()) return false;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& a = layers_[i];
    const auto& b = other.layers_[i];
    if (a.w.rows() != b.w.rows() || a.w.cols() != b.w.cols() || a.activation != b.activation ||
        a.bn.has_value() != b.bn.has_value())
      return false;
  }
  return true;
}

bool DenseNet::operator==(const DenseNet& other) const {
  if (!same_shape(other)) return false;
  std::vector<double> a, b;
  for_each_tensor([&](std::span<const double> s) { a.insert(a.end(), s.begin(), s.end()); }, true);
  other.for_each_tensor([&](std::span<const double> s) { b.insert(b.end(), s.begin(), s.end()); },
                        true);
  if (a.size() != b.size()) return false;
  return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

void DenseNet::save(std::ostream& out) const {
  out.write(kNetMagic, sizeof(kNetMagic));
  write_le<std::uint32_t>(out, kNetVersion);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(layers_.size()));
  for (const auto& l : layers_) {
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(l.in_dim()));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(l.out_dim()));
    write_le<std::uint8_t>(out, static_cast<std::uint8_t>(l.activation));
    write_le<std::uint8_t>(out, l.bn ? 1 : 0);
    write_array(out, l.w.data(), l.w.size());  // column-major
    write_array(out, l.b.data(), l.b.size());
    if (l.bn) {
      write_le(out, l.bn->momentum);
      write_le(out, l.bn->epsilon);
      write_array(out, l.bn->gamma.data(), l.bn->gamma.size());
      write_array(out, l.bn->beta.data(), l.bn->beta.size());
      write_array(out, l.bn->running_mean.data(), l.bn->running_mean.size());
      write_array(out, l.bn->running_var.data(), l.bn->running_var.size());
    }
  }
  if (!out) throw Error("failed writing network checkpoint");
}

DenseNet DenseNet::load(std::istream& in) {
  char magic[sizeof(kNetMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kNetMagic, sizeof(magic)) != 0)
    throw ParseError("not a network checkpoint (bad magic)");
  const auto version = read_le<std::uint32_t>(in);
  if (version != kNetVersion)
    throw ParseError("unsupported network checkpoint version " + std::to_string(version));
  const auto count = read_le<std::uint32_t>(in);
  if (count == 0 || count > 64) throw ParseError("implausible layer count");
  DenseNet net;
  Eigen::Index prev_out = -1;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto in_dim = static_cast<Eigen::Index>(read_le<std::uint32_t>(in));
    const auto out_dim = static_cast<Eigen::Index>(read_le<std::uint32_t>(in));
    if (in_dim <= 0 || out_dim <= 0 || in_dim > (1 << 20) || out_dim > (1 << 20))
      throw ParseError("implausible layer dimensions");
    if (prev_out >= 0 && prev_out != in_dim) throw ParseError("incompatible adjacent layers");
    prev_out = out_dim;
    const auto act = read_le<std::uint8_t>(in);
    if (act > 2) throw ParseError("unknown activation tag");
    const bool has_bn = read_le<std::uint8_t>(in) != 0;
    Layer l;
    l.activation = static_cast<Activation>(act);
    l.w.resize(out_dim, in_dim);
    read_array(in, l.w.data(), l.w.size());
    l.b.resize(out_dim);
    read_array(in, l.b.data(), l.b.size());
    if (has_bn) {
      BatchNorm bn;
      bn.momentum = read_le<double>(in);
      bn.epsilon = read_le<double>(in);
      for (Vector* v : {&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var}) {
        v->resize(out_dim);
        read_array(in, v->data(), out_dim);
      }
      l.bn = std::move(bn);
    }
    net.layers_.push_back(std::move(l));
  }
  return net;
}

void soft_update(const DenseNet& online, DenseNet& target, double tau) {
  if (!online.same_shape(target)) throw ShapeError("soft update between different shapes");
  std::vector<std::span<const double>> src;
  online.for_each_tensor([&](std::span<const double> s) { src.push_back(s); }, true);
  std::size_t i = 0;
  target.for_each_tensor(
      [&](std::span<double> dst) {
        const auto s = src[i++];
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = tau * s[k] + (1.0 - tau) * dst[k];
      },
      true);
}

Adam::Adam(const DenseNet& net, Config cfg) : cfg_(cfg) {
  net.for_each_tensor([&](std::span<const double> s) {
    m_.emplace_back(s.size(), 0.0);
    v_.emplace_back(s.size(), 0.0);
  });
}

void Adam::step(DenseNet& net, GradientTape& grads) {
  std::vector<std::span<double>> g;
  grads.for_each_tensor([&](std::span<double> s) { g.push_back(s); });
  if (g.size() != m_.size()) throw ShapeError("gradient tape does not match the optimizer");
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  std::size_t i = 0;
  net.for_each_tensor([&](std::span<double> p) {
    if (p.size() != g[i].size() || p.size() != m_[i].size())
      throw ShapeError("gradient tape does not match the network");
    auto& m = m_[i];
    auto& v = v_[i];
    const auto gi = g[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * gi[k];
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * gi[k] * gi[k];
      p[k] -= cfg_.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.epsilon);
    }
    ++i;
  });
}

void Adam::save(std::ostream& out) const {
  write_le<std::int64_t>(out, t_);
  write_le<std::uint64_t>(out, m_.size());
  for (std::size_t i = 0; i < m_.size(); ++i) {
    write_le<std::uint64_t>(out, m_[i].size());
    write_array(out, m_[i].data(), static_cast<Eigen::Index>(m_[i].size()));
    write_array(out, v_[i].data(), static_cast<Eigen::Index>(v_[i].size()));
  }
}

void Adam::load(std::istream& in) {
  t_ = read_le<std::int64_t>(in);
  const auto n = read_le<std::uint64_t>(in);
  if (n != m_.size()) throw ParseError("optimizer state does not match the network");
  for (std::size_t i = 0; i < m_.size(); ++i) {
    if (read_le<std::uint64_t>(in) != m_[i].size())
      throw ParseError("optimizer state does not match the network");
    read_array(in, m_[i].data(), static_cast<Eigen::Index>(m_[i].size()));
    read_array(in, v_[i].data(), static_cast<Eigen::Index>(v_[i].size()));
  }
}

}  // namespace deepcc::nn
