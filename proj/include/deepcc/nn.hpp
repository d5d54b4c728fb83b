#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "deepcc/rng.hpp"

namespace deepcc::nn {

using Matrix = Eigen::MatrixXd;  // batches are column-stacked: features x batch
using Vector = Eigen::VectorXd;

enum class Activation : std::uint8_t { kLinear = 0, kRelu = 1, kTanh = 2 };
enum class Mode { kTrain, kInfer };

struct BatchNorm {
  Vector gamma;
  Vector beta;
  Vector running_mean;
  Vector running_var;
  double momentum = 0.99;  // running = momentum * running + (1 - momentum) * batch
  double epsilon = 1e-5;
};

// Affine map, optional batch normalisation of its output, then activation.
struct Layer {
  Matrix w;  // out x in
  Vector b;
  Activation activation = Activation::kLinear;
  std::optional<BatchNorm> bn;

  Eigen::Index in_dim() const { return w.cols(); }
  Eigen::Index out_dim() const { return w.rows(); }
};

struct LayerGrad {
  Matrix w;
  Vector b;
  Vector gamma;  // empty without batchnorm
  Vector beta;
};

// Per-parameter gradients mirroring a DenseNet's shape.
struct GradientTape {
  std::vector<LayerGrad> layers;
  Matrix input;  // d loss / d input, same shape as the forward input

  template <typename F>
  void for_each_tensor(F&& f) {
    for (auto& l : layers) {
      f(std::span<double>(l.w.data(), static_cast<std::size_t>(l.w.size())));
      f(std::span<double>(l.b.data(), static_cast<std::size_t>(l.b.size())));
      if (l.gamma.size() > 0) {
        f(std::span<double>(l.gamma.data(), static_cast<std::size_t>(l.gamma.size())));
        f(std::span<double>(l.beta.data(), static_cast<std::size_t>(l.beta.size())));
      }
    }
  }
};

struct LayerSpec {
  Eigen::Index units;
  Activation activation;
  bool batchnorm = false;
};

class DenseNet {
 public:
  DenseNet() = default;
  DenseNet(Eigen::Index input_dim, const std::vector<LayerSpec>& specs, Rng& rng,
           double final_layer_scale = 0.0);

  Eigen::Index input_dim() const;
  Eigen::Index output_dim() const;
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

  // Train mode normalises with batch statistics, updates running statistics
  // and caches activations for backward(). Infer mode is pure.
  Matrix forward(const Matrix& x, Mode mode);
  Matrix infer(const Matrix& x) const;

  // Gradients of sum(upstream .* output) w.r.t. all parameters and the input,
  // using the activations cached by the last train-mode forward().
  GradientTape backward(const Matrix& upstream) const;
  bool has_cache() const { return !cache_.empty(); }

  // Visits trainable tensors in a fixed order (w, b[, gamma, beta] per layer).
  // With `with_running_stats` the batchnorm running statistics follow each
  // layer's trainable tensors.
  template <typename F>
  void for_each_tensor(F&& f, bool with_running_stats = false) {
    for (auto& l : layers_) {
      f(std::span<double>(l.w.data(), static_cast<std::size_t>(l.w.size())));
      f(std::span<double>(l.b.data(), static_cast<std::size_t>(l.b.size())));
      if (l.bn) {
        f(std::span<double>(l.bn->gamma.data(), static_cast<std::size_t>(l.bn->gamma.size())));
        f(std::span<double>(l.bn->beta.data(), static_cast<std::size_t>(l.bn->beta.size())));
        if (with_running_stats) {
          f(std::span<double>(l.bn->running_mean.data(),
                              static_cast<std::size_t>(l.bn->running_mean.size())));
          f(std::span<double>(l.bn->running_var.data(),
                              static_cast<std::size_t>(l.bn->running_var.size())));
        }
      }
    }
  }
  template <typename F>
  void for_each_tensor(F&& f, bool with_running_stats = false) const {
    const_cast<DenseNet*>(this)->for_each_tensor(
        [&](std::span<double> s) { f(std::span<const double>(s.data(), s.size())); },
        with_running_stats);
  }

  std::size_t parameter_count() const;
  GradientTape zero_tape() const;
  bool same_shape(const DenseNet& other) const;
  bool operator==(const DenseNet& other) const;

  void save(std::ostream& out) const;
  static DenseNet load(std::istream& in);

 private:
  struct LayerCache {
    Matrix input;
    Matrix xhat;       // normalised pre-activation (batchnorm only)
    Vector inv_std;    // batchnorm only
    Matrix pre;        // value fed to the activation
    Matrix output;
  };

  std::vector<Layer> layers_;
  std::vector<LayerCache> cache_;
};

// Soft target update: target <- tau * online + (1 - tau) * target, running
// statistics included.
void soft_update(const DenseNet& online, DenseNet& target, double tau);

class Adam {
 public:
  struct Config {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
  };

  Adam() = default;
  Adam(const DenseNet& net, Config cfg);

  // Descent step: params -= lr * mhat / (sqrt(vhat) + eps).
  void step(DenseNet& net, GradientTape& grads);
  std::int64_t steps_taken() const { return t_; }
  const Config& config() const { return cfg_; }

  void save(std::ostream& out) const;
  void load(std::istream& in);

 private:
  Config cfg_{};
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

// Little-endian binary helpers shared by checkpoint writers.
void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
void write_f64(std::ostream& out, double v);
std::uint32_t read_u32(std::istream& in);
std::uint64_t read_u64(std::istream& in);
double read_f64(std::istream& in);

}  // namespace deepcc::nn
