// Small dense MLP engine: batched forward/backward, Adam, finite-difference
// checks and a binary checkpoint format.
#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace crossway::nn {

enum class Activation : std::uint8_t { kIdentity = 0, kRelu = 1, kTanh = 2, kSigmoid = 3 };

std::string_view to_string(Activation a);

struct LayerSpec {
  int in = 0;
  int out = 0;
  Activation act = Activation::kIdentity;
};

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class StaleCacheError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A batch of input columns that differ from one shared dense column in a
/// few coordinates only. Lets a wide first layer skip the mostly-constant
/// part of its input.
template <class T>
struct SparseBatch {
  using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

  Vec base;
  std::vector<std::vector<std::pair<int, T>>> deltas;  // per column: (row, value - base[row])

  int rows() const { return static_cast<int>(base.size()); }
  int cols() const { return static_cast<int>(deltas.size()); }
  Mat to_dense() const;
};

enum class OutputGrad : std::uint8_t {
  /// dY is the gradient w.r.t. the activated output.
  kPostActivation,
  /// dY is already the gradient w.r.t. the last pre-activation (fused
  /// sigmoid + cross-entropy).
  kPreActivation,
};

template <class T>
class BasicMlp {
 public:
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

  struct Layer {
    Mat w;  // out x in
    Vec b;
    Activation act = Activation::kIdentity;
  };

  struct Cache {
    std::uint64_t version = 0;
    const BasicMlp* owner = nullptr;
    Mat dense_input;
    std::optional<SparseBatch<T>> sparse_input;
    std::vector<Mat> post;  // activated output of every layer
  };

  struct Gradients {
    std::vector<Mat> w;
    std::vector<Vec> b;
    Mat input;  // empty for sparse input

    void set_zero_like(const BasicMlp& net);
    Gradients& operator+=(const Gradients& o);
    bool finite() const;
    std::vector<double> flat() const;
  };

  BasicMlp() = default;
  /// Glorot-uniform weights, zero biases.
  BasicMlp(const std::vector<LayerSpec>& specs, std::uint64_t seed);

  int input_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.front().w.cols()); }
  int output_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.back().w.rows()); }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<LayerSpec> specs() const;

  /// Columns are samples.
  Mat forward(const Mat& x, Cache* cache = nullptr) const;
  Mat forward(const SparseBatch<T>& x, Cache* cache = nullptr) const;
  Gradients backward(const Cache& cache, const Mat& dy,
                     OutputGrad mode = OutputGrad::kPostActivation) const;

  std::size_t parameter_count() const;
  /// Flat parameter access: layer by layer, weights column-major, then bias.
  T parameter(std::size_t k) const;
  void set_parameter(std::size_t k, T value);
  std::vector<T> parameters() const;
  void set_parameters(const std::vector<T>& values);

  /// Bumped on every parameter change; caches from older versions are stale.
  std::uint64_t version() const { return version_; }
  void touch() { ++version_; }
  std::vector<Layer>& mutable_layers() {
    ++version_;
    return layers_;
  }

  /// FNV-1a over the raw parameter bytes.
  std::uint64_t hash() const;

  template <class U>
  BasicMlp<U> cast() const {
    BasicMlp<U> out;
    auto& ls = out.mutable_layers();
    for (const auto& l : layers_) {
      ls.push_back({l.w.template cast<U>(), l.b.template cast<U>(), l.act});
    }
    return out;
  }

  void save(std::ostream& os) const;
  static BasicMlp load(std::istream& is);

 private:
  Mat first_layer_sparse(const SparseBatch<T>& x) const;

  std::vector<Layer> layers_;
  std::uint64_t version_ = 1;
};

template <class T>
void apply_activation(Activation act, Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& z);

struct AdamParams {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
class BasicAdam {
 public:
  using Net = BasicMlp<T>;

  BasicAdam() = default;
  BasicAdam(const Net& net, AdamParams params);

  /// One bias-corrected update. A non-finite gradient skips the step and
  /// returns false.
  bool step(Net& net, const typename Net::Gradients& g);

  std::int64_t steps() const { return t_; }
  std::int64_t skipped() const { return skipped_; }
  const AdamParams& params() const { return params_; }
  void set_lr(double lr) { params_.lr = lr; }

 private:
  AdamParams params_;
  std::int64_t t_ = 0;
  std::int64_t skipped_ = 0;
  std::vector<typename Net::Mat> mw_, vw_;
  std::vector<typename Net::Vec> mb_, vb_;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  int checked = 0;
  int resampled = 0;  // coordinates dropped because a kink lay inside the stencil
};

/// Relative error |a - f| / max(|a|, |f|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-6);

/// Compares `analytic[k]` with central differences of `loss` for `samples`
/// random coordinates. `get`/`set` address the flat parameter vector.
/// Coordinates whose step-h and step-h/2 estimates disagree (a
/// non-differentiable point inside the stencil) are resampled.
GradCheckResult grad_check(std::size_t n, const std::function<double(std::size_t)>& get,
                           const std::function<void(std::size_t, double)>& set,
                           const std::function<double()>& loss,
                           const std::vector<double>& analytic, int samples, double h,
                           std::uint64_t seed);

/// Convenience overload over one network's parameters.
template <class T>
GradCheckResult grad_check(BasicMlp<T>& net, const std::function<double()>& loss,
                           const std::vector<double>& analytic, int samples, double h,
                           std::uint64_t seed) {
  return grad_check(
      net.parameter_count(), [&](std::size_t k) { return static_cast<double>(net.parameter(k)); },
      [&](std::size_t k, double v) { net.set_parameter(k, static_cast<T>(v)); }, loss, analytic,
      samples, h, seed);
}

using Mlp = BasicMlp<float>;
using MlpD = BasicMlp<double>;
using Adam = BasicAdam<float>;

extern template class BasicMlp<float>;
extern template class BasicMlp<double>;
extern template class BasicAdam<float>;
extern template class BasicAdam<double>;

}  // namespace crossway::nn
