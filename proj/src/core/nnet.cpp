#include "nnet.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

namespace crossway::nn {

namespace {

constexpr std::uint32_t kMagic = 0x504C4D43;  // "CMLP"
constexpr std::uint32_t kFormatVersion = 1;

template <class V>
void put(std::ostream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V get(std::istream& is) {
  V v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is) throw CheckpointError("truncated checkpoint");
  return v;
}

void fnv(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
}

template <class T>
void derivative_inplace(Activation act, const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& y,
                        Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& delta) {
  switch (act) {
    case Activation::kIdentity: break;
    case Activation::kRelu: delta.array() *= (y.array() > T(0)).template cast<T>(); break;
    case Activation::kTanh: delta.array() *= (T(1) - y.array().square()); break;
    case Activation::kSigmoid: delta.array() *= y.array() * (T(1) - y.array()); break;
  }
}

}  // namespace

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::kIdentity: return "identity";
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
    case Activation::kSigmoid: return "sigmoid";
  }
  return "?";
}

template <class T>
typename SparseBatch<T>::Mat SparseBatch<T>::to_dense() const {
  Mat m = base.replicate(1, cols());
  for (int c = 0; c < cols(); ++c) {
    for (const auto& [r, d] : deltas[c]) m(r, c) += d;
  }
  return m;
}

template <class T>
void apply_activation(Activation act, Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& z) {
  switch (act) {
    case Activation::kIdentity: break;
    case Activation::kRelu: z = z.cwiseMax(T(0)); break;
    case Activation::kTanh: z = z.array().tanh().matrix(); break;
    case Activation::kSigmoid: z = (T(1) / (T(1) + (-z.array()).exp())).matrix(); break;
  }
}

// ---------------------------------------------------------------- gradients

template <class T>
void BasicMlp<T>::Gradients::set_zero_like(const BasicMlp& net) {
  w.clear();
  b.clear();
  for (const auto& l : net.layers()) {
    w.push_back(Mat::Zero(l.w.rows(), l.w.cols()));
    b.push_back(Vec::Zero(l.b.size()));
  }
  input.resize(0, 0);
}

template <class T>
typename BasicMlp<T>::Gradients& BasicMlp<T>::Gradients::operator+=(const Gradients& o) {
  if (w.empty()) {
    *this = o;
    return *this;
  }
  if (o.w.size() != w.size()) throw DimensionError("gradient layer count mismatch");
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] += o.w[i];
    b[i] += o.b[i];
  }
  return *this;
}

template <class T>
bool BasicMlp<T>::Gradients::finite() const {
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!w[i].allFinite() || !b[i].allFinite()) return false;
  }
  return true;
}

template <class T>
std::vector<double> BasicMlp<T>::Gradients::flat() const {
  std::vector<double> out;
  for (std::size_t i = 0; i < w.size(); ++i) {
    for (Eigen::Index k = 0; k < w[i].size(); ++k) out.push_back(static_cast<double>(w[i].data()[k]));
    for (Eigen::Index k = 0; k < b[i].size(); ++k) out.push_back(static_cast<double>(b[i][k]));
  }
  return out;
}

// ---------------------------------------------------------------- network

template <class T>
BasicMlp<T>::BasicMlp(const std::vector<LayerSpec>& specs, std::uint64_t seed) {
  if (specs.empty()) throw DimensionError("an MLP needs at least one layer");
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    if (s.in <= 0 || s.out <= 0) throw DimensionError("layer dimensions must be positive");
    if (i > 0 && specs[i - 1].out != s.in) throw DimensionError("consecutive layers do not chain");
    const double limit = std::sqrt(6.0 / static_cast<double>(s.in + s.out));
    std::uniform_real_distribution<double> u(-limit, limit);
    Layer l;
    l.w.resize(s.out, s.in);
    for (int r = 0; r < s.out; ++r) {
      for (int c = 0; c < s.in; ++c) l.w(r, c) = static_cast<T>(u(rng));
    }
    l.b = Vec::Zero(s.out);
    l.act = s.act;
    layers_.push_back(std::move(l));
  }
}

template <class T>
std::vector<LayerSpec> BasicMlp<T>::specs() const {
  std::vector<LayerSpec> out;
  for (const auto& l : layers_) {
    out.push_back({static_cast<int>(l.w.cols()), static_cast<int>(l.w.rows()), l.act});
  }
  return out;
}

template <class T>
typename BasicMlp<T>::Mat BasicMlp<T>::forward(const Mat& x, Cache* cache) const {
  if (layers_.empty()) throw DimensionError("empty network");
  if (x.rows() != input_dim()) {
    throw DimensionError("input has " + std::to_string(x.rows()) + " rows, network expects " +
                         std::to_string(input_dim()));
  }
  if (cache) {
    cache->version = version_;
    cache->owner = this;
    cache->dense_input = x;
    cache->sparse_input.reset();
    cache->post.clear();
  }
  Mat a = x;
  for (const auto& l : layers_) {
    Mat z = l.w * a;
    z.colwise() += l.b;
    apply_activation(l.act, z);
    a = std::move(z);
    if (cache) cache->post.push_back(a);
  }
  return a;
}

template <class T>
typename BasicMlp<T>::Mat BasicMlp<T>::first_layer_sparse(const SparseBatch<T>& x) const {
  const auto& l = layers_.front();
  Vec shared = l.w * x.base + l.b;
  Mat z = shared.replicate(1, x.cols());
  for (int c = 0; c < x.cols(); ++c) {
    for (const auto& [r, d] : x.deltas[c]) z.col(c) += d * l.w.col(r);
  }
  apply_activation(l.act, z);
  return z;
}

template <class T>
typename BasicMlp<T>::Mat BasicMlp<T>::forward(const SparseBatch<T>& x, Cache* cache) const {
  if (layers_.empty()) throw DimensionError("empty network");
  if (x.rows() != input_dim()) throw DimensionError("sparse input dimension mismatch");
  if (cache) {
    cache->version = version_;
    cache->owner = this;
    cache->dense_input.resize(0, 0);
    cache->sparse_input = x;
    cache->post.clear();
  }
  Mat a = first_layer_sparse(x);
  if (cache) cache->post.push_back(a);
  for (std::size_t i = 1; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    Mat z = l.w * a;
    z.colwise() += l.b;
    apply_activation(l.act, z);
    a = std::move(z);
    if (cache) cache->post.push_back(a);
  }
  return a;
}

template <class T>
typename BasicMlp<T>::Gradients BasicMlp<T>::backward(const Cache& cache, const Mat& dy,
                                                      OutputGrad mode) const {
  if (cache.owner != this || cache.version != version_) {
    throw StaleCacheError("cache does not belong to the current parameters");
  }
  const std::size_t n = layers_.size();
  if (cache.post.size() != n) throw StaleCacheError("incomplete cache");
  if (dy.rows() != output_dim() || dy.cols() != cache.post.back().cols()) {
    throw DimensionError("output gradient shape mismatch");
  }
  Gradients g;
  g.w.resize(n);
  g.b.resize(n);
  Mat delta = dy;
  if (mode == OutputGrad::kPostActivation) derivative_inplace(layers_[n - 1].act, cache.post[n - 1], delta);
  for (std::size_t i = n; i-- > 0;) {
    const auto& l = layers_[i];
    g.b[i] = delta.rowwise().sum();
    if (i > 0) {
      g.w[i].noalias() = delta * cache.post[i - 1].transpose();
      Mat next = l.w.transpose() * delta;
      derivative_inplace(layers_[i - 1].act, cache.post[i - 1], next);
      delta = std::move(next);
    } else if (cache.sparse_input) {
      const auto& x = *cache.sparse_input;
      g.w[0].noalias() = g.b[0] * x.base.transpose();
      for (int c = 0; c < x.cols(); ++c) {
        for (const auto& [r, d] : x.deltas[c]) g.w[0].col(r) += d * delta.col(c);
      }
    } else {
      g.w[0].noalias() = delta * cache.dense_input.transpose();
      g.input.noalias() = l.w.transpose() * delta;
    }
  }
  return g;
}

template <class T>
std::size_t BasicMlp<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.w.size() + l.b.size());
  return n;
}

template <class T>
T BasicMlp<T>::parameter(std::size_t k) const {
  for (const auto& l : layers_) {
    const auto nw = static_cast<std::size_t>(l.w.size());
    if (k < nw) return l.w.data()[k];
    k -= nw;
    const auto nb = static_cast<std::size_t>(l.b.size());
    if (k < nb) return l.b[static_cast<Eigen::Index>(k)];
    k -= nb;
  }
  throw std::out_of_range("parameter index");
}

template <class T>
void BasicMlp<T>::set_parameter(std::size_t k, T value) {
  ++version_;
  for (auto& l : layers_) {
    const auto nw = static_cast<std::size_t>(l.w.size());
    if (k < nw) {
      l.w.data()[k] = value;
      return;
    }
    k -= nw;
    const auto nb = static_cast<std::size_t>(l.b.size());
    if (k < nb) {
      l.b[static_cast<Eigen::Index>(k)] = value;
      return;
    }
    k -= nb;
  }
  throw std::out_of_range("parameter index");
}

template <class T>
std::vector<T> BasicMlp<T>::parameters() const {
  std::vector<T> out;
  out.reserve(parameter_count());
  for (const auto& l : layers_) {
    out.insert(out.end(), l.w.data(), l.w.data() + l.w.size());
    out.insert(out.end(), l.b.data(), l.b.data() + l.b.size());
  }
  return out;
}

template <class T>
void BasicMlp<T>::set_parameters(const std::vector<T>& values) {
  if (values.size() != parameter_count()) throw DimensionError("parameter vector size mismatch");
  ++version_;
  std::size_t k = 0;
  for (auto& l : layers_) {
    std::copy(values.begin() + static_cast<std::ptrdiff_t>(k),
              values.begin() + static_cast<std::ptrdiff_t>(k + l.w.size()), l.w.data());
    k += static_cast<std::size_t>(l.w.size());
    std::copy(values.begin() + static_cast<std::ptrdiff_t>(k),
              values.begin() + static_cast<std::ptrdiff_t>(k + l.b.size()), l.b.data());
    k += static_cast<std::size_t>(l.b.size());
  }
}

template <class T>
std::uint64_t BasicMlp<T>::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& l : layers_) {
    const std::int64_t dims[2] = {l.w.rows(), l.w.cols()};
    fnv(h, dims, sizeof(dims));
    fnv(h, l.w.data(), sizeof(T) * static_cast<std::size_t>(l.w.size()));
    fnv(h, l.b.data(), sizeof(T) * static_cast<std::size_t>(l.b.size()));
  }
  return h;
}

template <class T>
void BasicMlp<T>::save(std::ostream& os) const {
  put<std::uint32_t>(os, kMagic);
  put<std::uint32_t>(os, kFormatVersion);
  put<std::uint32_t>(os, sizeof(T));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(layers_.size()));
  for (const auto& l : layers_) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(l.w.cols()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(l.w.rows()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(l.act));
  }
  for (const auto& l : layers_) {
    for (Eigen::Index r = 0; r < l.w.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.w.cols(); ++c) put<T>(os, l.w(r, c));
    }
    for (Eigen::Index r = 0; r < l.b.size(); ++r) put<T>(os, l.b[r]);
  }
  if (!os) throw CheckpointError("failed to write checkpoint");
}

template <class T>
BasicMlp<T> BasicMlp<T>::load(std::istream& is) {
  if (get<std::uint32_t>(is) != kMagic) throw CheckpointError("not a network checkpoint");
  const auto version = get<std::uint32_t>(is);
  if (version != kFormatVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  if (get<std::uint32_t>(is) != sizeof(T)) throw CheckpointError("checkpoint scalar type mismatch");
  const auto n = get<std::uint32_t>(is);
  if (n == 0 || n > 64) throw CheckpointError("implausible layer count");
  std::vector<LayerSpec> specs;
  for (std::uint32_t i = 0; i < n; ++i) {
    LayerSpec s;
    s.in = static_cast<int>(get<std::uint32_t>(is));
    s.out = static_cast<int>(get<std::uint32_t>(is));
    const auto act = get<std::uint32_t>(is);
    if (act > 3) throw CheckpointError("unknown activation");
    if (s.in <= 0 || s.out <= 0 || s.in > (1 << 20) || s.out > (1 << 20)) {
      throw CheckpointError("implausible layer size");
    }
    if (!specs.empty() && specs.back().out != s.in) throw CheckpointError("layers do not chain");
    s.act = static_cast<Activation>(act);
    specs.push_back(s);
  }
  BasicMlp net;
  for (const auto& s : specs) {
    Layer l;
    l.w.resize(s.out, s.in);
    l.b.resize(s.out);
    l.act = s.act;
    net.layers_.push_back(std::move(l));
  }
  for (auto& l : net.layers_) {
    for (Eigen::Index r = 0; r < l.w.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.w.cols(); ++c) l.w(r, c) = get<T>(is);
    }
    for (Eigen::Index r = 0; r < l.b.size(); ++r) l.b[r] = get<T>(is);
    if (!l.w.allFinite() || !l.b.allFinite()) throw CheckpointError("non-finite parameters");
  }
  return net;
}

// ---------------------------------------------------------------- adam

template <class T>
BasicAdam<T>::BasicAdam(const Net& net, AdamParams params) : params_(params) {
  for (const auto& l : net.layers()) {
    mw_.push_back(Net::Mat::Zero(l.w.rows(), l.w.cols()));
    vw_.push_back(Net::Mat::Zero(l.w.rows(), l.w.cols()));
    mb_.push_back(Net::Vec::Zero(l.b.size()));
    vb_.push_back(Net::Vec::Zero(l.b.size()));
  }
}

template <class T>
bool BasicAdam<T>::step(Net& net, const typename Net::Gradients& g) {
  if (g.w.size() != mw_.size()) throw DimensionError("gradient does not match the optimizer");
  if (!g.finite()) {
    ++skipped_;
    return false;
  }
  ++t_;
  const T b1 = static_cast<T>(params_.beta1), b2 = static_cast<T>(params_.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(params_.beta1, static_cast<double>(t_)));
  const T c2 = static_cast<T>(1.0 - std::pow(params_.beta2, static_cast<double>(t_)));
  const T lr = static_cast<T>(params_.lr), eps = static_cast<T>(params_.eps);
  auto& layers = net.mutable_layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    mw_[i] = b1 * mw_[i] + (T(1) - b1) * g.w[i];
    vw_[i] = b2 * vw_[i] + (T(1) - b2) * g.w[i].cwiseProduct(g.w[i]);
    layers[i].w.array() -= lr * (mw_[i].array() / c1) / ((vw_[i].array() / c2).sqrt() + eps);
    mb_[i] = b1 * mb_[i] + (T(1) - b1) * g.b[i];
    vb_[i] = b2 * vb_[i] + (T(1) - b2) * g.b[i].cwiseProduct(g.b[i]);
    layers[i].b.array() -= lr * (mb_[i].array() / c1) / ((vb_[i].array() / c2).sqrt() + eps);
  }
  return true;
}

// ---------------------------------------------------------------- checks

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult grad_check(std::size_t n, const std::function<double(std::size_t)>& get_p,
                           const std::function<void(std::size_t, double)>& set_p,
                           const std::function<double()>& loss,
                           const std::vector<double>& analytic, int samples, double h,
                           std::uint64_t seed) {
  if (analytic.size() != n) throw DimensionError("analytic gradient size mismatch");
  GradCheckResult res;
  if (n == 0) return res;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  auto central = [&](std::size_t k, double step) {
    const double orig = get_p(k);
    set_p(k, orig + step);
    const double lp = loss();
    set_p(k, orig - step);
    const double lm = loss();
    set_p(k, orig);
    return (lp - lm) / (2.0 * step);
  };
  for (int i = 0; i < samples; ++i) {
    for (int attempt = 0; attempt < 50; ++attempt) {
      const std::size_t k = pick(rng);
      const double f1 = central(k, h);
      const double f2 = central(k, 0.5 * h);
      const double scale = std::max({std::abs(f1), std::abs(f2), 1e-3});
      if (std::abs(f1 - f2) > 1e-3 * scale) {
        ++res.resampled;
        continue;
      }
      res.max_rel_error = std::max(res.max_rel_error, relative_error(analytic[k], f1));
      ++res.checked;
      break;
    }
  }
  return res;
}

template struct SparseBatch<float>;
template struct SparseBatch<double>;
template void apply_activation<float>(Activation, Eigen::MatrixXf&);
template void apply_activation<double>(Activation, Eigen::MatrixXd&);
template class BasicMlp<float>;
template class BasicMlp<double>;
template class BasicAdam<float>;
template class BasicAdam<double>;

}  // namespace crossway::nn
