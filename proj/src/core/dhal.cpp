#include "dhal.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <unordered_set>

namespace crossway::dhal {

namespace {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

constexpr std::uint32_t kBundleMagic = 0x4C414844;  // "DHAL"
constexpr std::uint32_t kBundleVersion = 1;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

template <class T>
void write_ego(const EgoCode& e, const EncodingSpec& spec, T* out) {
  std::fill(out, out + spec.ego_dim(), T(0));
  out[e.trajectory] = T(1);
  int off = spec.trajectories;
  out[off + e.dist_bin] = T(1);
  off += spec.dist_bins;
  out[off++] = static_cast<T>(e.dist);
  out[off + e.speed_bin] = T(1);
  off += spec.speed_bins;
  out[off] = static_cast<T>(e.speed);
}

template <class T>
Mat<T> stack_rows(const Mat<T>& top, const Mat<T>& mid, const Mat<T>* bottom) {
  const Eigen::Index extra = bottom ? bottom->rows() : 0;
  Mat<T> out(top.rows() + mid.rows() + extra, top.cols());
  out.topRows(top.rows()) = top;
  out.middleRows(top.rows(), mid.rows()) = mid;
  if (bottom) out.bottomRows(extra) = *bottom;
  return out;
}

double action_scale(const LossParams& lp) { return std::max(std::abs(lp.a_min), std::abs(lp.a_max)); }

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

double bce_term(double p, double y) {
  const double q = std::clamp(p, 1e-7, 1.0 - 1e-7);
  return -(y * std::log(q) + (1.0 - y) * std::log(1.0 - q));
}

double disc_target(const Experience& e, int k) {
  switch (k) {
    case 0: return e.conflict();
    case 1: return e.active;
    case 2: return e.passive;
    default: return e.collided;
  }
}

template <class T>
StateBatch<T> batch_of(std::span<const Experience* const> batch, const EncodingSpec& spec) {
  std::vector<const StateEncoding*> states;
  states.reserve(batch.size());
  for (const auto* e : batch) states.push_back(&e->state);
  return make_batch<T>(states, spec);
}

template <class T>
Mat<T> action_row(std::span<const Experience* const> batch, double scale) {
  Mat<T> a(1, static_cast<Eigen::Index>(batch.size()));
  for (std::size_t c = 0; c < batch.size(); ++c) {
    a(0, static_cast<Eigen::Index>(c)) = static_cast<T>(batch[c]->a / scale);
  }
  return a;
}

}  // namespace

// ---------------------------------------------------------------- encoding

Raster build_raster(std::span<const VehicleState> vehicles, const Layout& layout,
                    const EncodingSpec& spec) {
  Raster r;
  std::vector<int> best(static_cast<std::size_t>(spec.trajectories * spec.cells), -1);
  for (std::size_t i = 0; i < vehicles.size(); ++i) {
    const auto& v = vehicles[i];
    if (!in_intersection_area(v.zone)) continue;
    if (v.trajectory < 0 || v.trajectory >= spec.trajectories) continue;
    const int seg = std::clamp(static_cast<int>(std::floor(v.s / spec.cell_length)), 0, spec.cells - 1);
    const int cell = v.trajectory * spec.cells + seg;
    r.cell_of[v.id] = static_cast<std::uint16_t>(cell);
    int& b = best[static_cast<std::size_t>(cell)];
    if (b < 0 || vehicles[static_cast<std::size_t>(b)].s < v.s) b = static_cast<int>(i);
  }
  for (int cell = 0; cell < static_cast<int>(best.size()); ++cell) {
    const int b = best[static_cast<std::size_t>(cell)];
    if (b < 0) continue;
    const auto& v = vehicles[static_cast<std::size_t>(b)];
    const auto& path = layout.path(v.trajectory);
    r.cells.push_back({static_cast<std::uint16_t>(cell),
                       static_cast<float>((path.stop_line_s() - v.s) / spec.stop_scale),
                       static_cast<float>(v.v / spec.v_max),
                       static_cast<float>(path.heading(v.s) / std::numbers::pi)});
  }
  return r;
}

EgoCode encode_ego(const VehicleState& ego, const Layout& layout, const EncodingSpec& spec) {
  EgoCode e;
  e.trajectory = static_cast<std::uint8_t>(ego.trajectory);
  const double d = std::max(layout.path(ego.trajectory).exit_s() - ego.s, 0.0);
  e.dist_bin = static_cast<std::uint8_t>(
      std::min(static_cast<int>(d / spec.dist_bin), spec.dist_bins - 1));
  e.dist = static_cast<float>(std::min(d / (spec.dist_bin * spec.dist_bins), 1.0));
  const double v = std::clamp(ego.v, 0.0, spec.v_max);
  e.speed_bin = static_cast<std::uint8_t>(
      std::min(static_cast<int>(v / spec.speed_bin), spec.speed_bins - 1));
  e.speed = static_cast<float>(v / spec.v_max);
  return e;
}

StateEncoding encode_state(std::shared_ptr<const Raster> raster, const VehicleState& ego,
                           std::span<const VehicleId> partners, const Layout& layout,
                           const EncodingSpec& spec) {
  StateEncoding s;
  for (VehicleId id : partners) {
    auto it = raster->cell_of.find(id);
    if (it != raster->cell_of.end()) s.flagged.push_back(it->second);
  }
  std::sort(s.flagged.begin(), s.flagged.end());
  s.flagged.erase(std::unique(s.flagged.begin(), s.flagged.end()), s.flagged.end());
  s.ego = encode_ego(ego, layout, spec);
  s.raster = std::move(raster);
  return s;
}

StateEncoding encode_state(const World& world, const VehicleState& ego,
                           std::span<const VehicleId> partners, const EncodingSpec& spec) {
  auto raster = std::make_shared<Raster>(build_raster(world.vehicles(), world.layout(), spec));
  return encode_state(std::move(raster), ego, partners, world.layout(), spec);
}

std::vector<float> StateEncoding::dense(const EncodingSpec& spec) const {
  std::vector<float> out(static_cast<std::size_t>(spec.state_dim()));
  for (int c = 0; c < spec.trajectories * spec.cells; ++c) {
    std::copy(kSentinel.begin(), kSentinel.end(), out.begin() + 4 * c);
  }
  if (raster) {
    for (const auto& rc : raster->cells) {
      out[4u * rc.cell + 0] = rc.dist;
      out[4u * rc.cell + 1] = rc.speed;
      out[4u * rc.cell + 2] = rc.heading;
    }
  }
  for (auto c : flagged) out[4u * c + 3] = 1.0f;
  write_ego(ego, spec, out.data() + spec.g_dim());
  return out;
}

template <class T>
StateBatch<T> make_batch(std::span<const StateEncoding* const> states, const EncodingSpec& spec) {
  StateBatch<T> b;
  const int n = static_cast<int>(states.size());
  b.g.base.resize(spec.g_dim());
  for (int c = 0; c < spec.trajectories * spec.cells; ++c) {
    for (int f = 0; f < 4; ++f) b.g.base[4 * c + f] = static_cast<T>(kSentinel[f]);
  }
  // One raster for the whole batch (inference): it becomes the shared column.
  const Raster* shared = n > 0 ? states[0]->raster.get() : nullptr;
  for (int i = 1; i < n && shared; ++i) {
    if (states[i]->raster.get() != shared) shared = nullptr;
  }
  if (shared) {
    for (const auto& rc : shared->cells) {
      b.g.base[4 * rc.cell + 0] = static_cast<T>(rc.dist);
      b.g.base[4 * rc.cell + 1] = static_cast<T>(rc.speed);
      b.g.base[4 * rc.cell + 2] = static_cast<T>(rc.heading);
    }
  }
  b.g.deltas.resize(static_cast<std::size_t>(n));
  b.ego.resize(spec.ego_dim(), n);
  for (int i = 0; i < n; ++i) {
    const auto& s = *states[i];
    auto& d = b.g.deltas[static_cast<std::size_t>(i)];
    if (!shared && s.raster) {
      d.reserve(3 * s.raster->cells.size() + s.flagged.size());
      for (const auto& rc : s.raster->cells) {
        d.emplace_back(4 * rc.cell + 0, static_cast<T>(rc.dist) - static_cast<T>(kSentinel[0]));
        d.emplace_back(4 * rc.cell + 1, static_cast<T>(rc.speed) - static_cast<T>(kSentinel[1]));
        d.emplace_back(4 * rc.cell + 2, static_cast<T>(rc.heading) - static_cast<T>(kSentinel[2]));
      }
    }
    for (auto c : s.flagged) d.emplace_back(4 * c + 3, T(1));
    write_ego(s.ego, spec, b.ego.col(i).data());
  }
  return b;
}

template StateBatch<float> make_batch<float>(std::span<const StateEncoding* const>, const EncodingSpec&);
template StateBatch<double> make_batch<double>(std::span<const StateEncoding* const>, const EncodingSpec&);

// ---------------------------------------------------------------- networks

template <class T>
DhalNets<T>::DhalNets(const EncodingSpec& s, const NetShape& shape, std::uint64_t seed) : spec(s) {
  using nn::Activation;
  using nn::LayerSpec;
  if (shape.branch.empty() || shape.head.empty()) throw nn::DimensionError("empty net shape");
  std::vector<LayerSpec> branch;
  int in = spec.g_dim();
  for (int w : shape.branch) {
    branch.push_back({in, w, Activation::kRelu});
    in = w;
  }
  auto head_specs = [&](int extra, Activation out_act) {
    std::vector<LayerSpec> h;
    int hin = shape.branch.back() + spec.ego_dim() + extra;
    for (int w : shape.head) {
      h.push_back({hin, w, Activation::kRelu});
      hin = w;
    }
    h.push_back({hin, 1, out_act});
    return h;
  };
  std::uint64_t k = seed;
  actor.branch = nn::BasicMlp<T>(branch, splitmix(k++));
  actor.head = nn::BasicMlp<T>(head_specs(0, Activation::kTanh), splitmix(k++));
  for (auto& d : disc) {
    d.branch = nn::BasicMlp<T>(branch, splitmix(k++));
    d.head = nn::BasicMlp<T>(head_specs(1, Activation::kSigmoid), splitmix(k++));
  }
}

template struct DhalNets<float>;
template struct DhalNets<double>;

namespace {

template <class V>
void put(std::ostream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V get(std::istream& is) {
  V v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is) throw nn::CheckpointError("truncated bundle");
  return v;
}

}  // namespace

void save_bundle(const DhalNets<float>& nets, std::ostream& os) {
  const auto& s = nets.spec;
  put<std::uint32_t>(os, kBundleMagic);
  put<std::uint32_t>(os, kBundleVersion);
  for (int v : {s.trajectories, s.cells, s.dist_bins, s.speed_bins}) put<std::int32_t>(os, v);
  for (double v : {s.cell_length, s.dist_bin, s.speed_bin, s.v_max, s.stop_scale}) put<double>(os, v);
  nets.actor.branch.save(os);
  nets.actor.head.save(os);
  for (const auto& d : nets.disc) {
    d.branch.save(os);
    d.head.save(os);
  }
  if (!os) throw nn::CheckpointError("bundle write failed");
}

DhalNets<float> load_bundle(std::istream& is) {
  if (get<std::uint32_t>(is) != kBundleMagic) throw nn::CheckpointError("not a policy bundle");
  if (get<std::uint32_t>(is) != kBundleVersion) throw nn::CheckpointError("unsupported bundle version");
  DhalNets<float> nets;
  auto& s = nets.spec;
  s.trajectories = get<std::int32_t>(is);
  s.cells = get<std::int32_t>(is);
  s.dist_bins = get<std::int32_t>(is);
  s.speed_bins = get<std::int32_t>(is);
  s.cell_length = get<double>(is);
  s.dist_bin = get<double>(is);
  s.speed_bin = get<double>(is);
  s.v_max = get<double>(is);
  s.stop_scale = get<double>(is);
  nets.actor.branch = nn::Mlp::load(is);
  nets.actor.head = nn::Mlp::load(is);
  for (auto& d : nets.disc) {
    d.branch = nn::Mlp::load(is);
    d.head = nn::Mlp::load(is);
  }
  const int bo = nets.actor.branch.output_dim();
  if (nets.actor.branch.input_dim() != s.g_dim() || nets.actor.head.input_dim() != bo + s.ego_dim() ||
      nets.actor.head.output_dim() != 1) {
    throw nn::CheckpointError("actor shape does not match the encoding");
  }
  for (const auto& d : nets.disc) {
    if (d.branch.input_dim() != s.g_dim() ||
        d.head.input_dim() != d.branch.output_dim() + s.ego_dim() + 1 || d.head.output_dim() != 1) {
      throw nn::CheckpointError("discriminator shape does not match the encoding");
    }
  }
  return nets;
}

void save_bundle(const DhalNets<float>& nets, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw nn::CheckpointError("cannot open " + path);
  save_bundle(nets, os);
}

DhalNets<float> load_bundle(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw nn::CheckpointError("cannot open " + path);
  return load_bundle(is);
}

double project_action(double u, double a_min, double a_max) {
  return a_min + (a_max - a_min) * (u + 1.0) / 2.0;
}

template <class T>
std::vector<T> actor_output(const DhalNets<T>& nets, const StateBatch<T>& batch) {
  const Mat<T> bo = nets.actor.branch.forward(batch.g);
  const Mat<T> u = nets.actor.head.forward(stack_rows<T>(bo, batch.ego, nullptr));
  return std::vector<T>(u.data(), u.data() + u.size());
}

template std::vector<float> actor_output(const DhalNets<float>&, const StateBatch<float>&);
template std::vector<double> actor_output(const DhalNets<double>&, const StateBatch<double>&);

// ---------------------------------------------------------------- loss

FusedLabels fuse_labels(double conflict, double active_raw, double passive_raw, double alpha) {
  return {clamp01(alpha * active_raw + (1.0 - alpha) * (conflict - passive_raw)),
          clamp01(alpha * passive_raw + (1.0 - alpha) * (conflict - active_raw))};
}

double beta(double d, double d_min, double d_max, double gamma) {
  if (!(d_max > d_min)) throw std::invalid_argument("beta needs d_max > d_min");
  return gamma * (std::clamp(d, d_min, d_max) - d_min) / (d_max - d_min);
}

double actor_loss(double a, double passive, double active, double final_collision, double beta,
                  double a_min, double a_max) {
  return beta * (1.0 - passive) * (1.0 - active) * (a_max - a) +
         (1.0 - beta) * final_collision * ((a_max - a) * passive + (a - a_min) * active);
}

LossPartials actor_loss_partials(double a, double passive, double active, double final_collision,
                                 double beta, double a_min, double a_max) {
  LossPartials p;
  p.da = -beta * (1.0 - passive) * (1.0 - active) + (1.0 - beta) * final_collision * (active - passive);
  p.dpassive = -beta * (1.0 - active) * (a_max - a) + (1.0 - beta) * final_collision * (a_max - a);
  p.dactive = -beta * (1.0 - passive) * (a_max - a) + (1.0 - beta) * final_collision * (a - a_min);
  p.dfinal = (1.0 - beta) * ((a_max - a) * passive + (a - a_min) * active);
  return p;
}

double gamma_schedule(std::int64_t step, std::int64_t total, double warm, double target,
                      double fraction) {
  const double span = fraction * static_cast<double>(total);
  if (span <= 0.0 || static_cast<double>(step) >= span) return target;
  return warm + (target - warm) * static_cast<double>(std::max<std::int64_t>(step, 0)) / span;
}

// ---------------------------------------------------------------- palace

MemoryPalace::MemoryPalace(std::size_t capacity) {
  if (capacity == 0) throw std::invalid_argument("palace capacity must be positive");
  buf_.reserve(std::min<std::size_t>(capacity, 4096));
  cap_ = capacity;
}

void MemoryPalace::push(Experience e) {
  if (buf_.size() < cap_) {
    buf_.push_back(std::move(e));
    size_ = buf_.size();
    head_ = size_ % cap_;
    return;
  }
  buf_[head_] = std::move(e);
  head_ = (head_ + 1) % cap_;
}

void MemoryPalace::push_trajectory(std::span<const StepRecord> records, bool collided) {
  for (const auto& r : records) {
    push({r.state, r.a, r.active, r.passive, static_cast<std::uint8_t>(collided ? 1 : 0), r.dist});
  }
}

const Experience& MemoryPalace::at(std::size_t i) const {
  if (i >= size_) throw std::out_of_range("palace index");
  if (size_ < cap_) return buf_[i];
  return buf_[(head_ + i) % cap_];
}

std::vector<const Experience*> MemoryPalace::sample(std::size_t n, std::mt19937_64& rng) const {
  if (size_ == 0) throw std::logic_error("sampling from an empty palace");
  std::uniform_int_distribution<std::size_t> pick(0, size_ - 1);
  std::vector<const Experience*> out(n);
  for (auto& p : out) p = &buf_[pick(rng)];
  return out;
}

// ---------------------------------------------------------------- updates

template <class T>
Optimizers<T>::Optimizers(const DhalNets<T>& nets, const nn::AdamParams& actor,
                          const nn::AdamParams& disc)
    : actor_branch(nets.actor.branch, actor), actor_head(nets.actor.head, actor) {
  for (int k = 0; k < 4; ++k) {
    disc_branch[k] = nn::BasicAdam<T>(nets.disc[k].branch, disc);
    disc_head[k] = nn::BasicAdam<T>(nets.disc[k].head, disc);
  }
}

template struct Optimizers<float>;
template struct Optimizers<double>;

template <class T>
DiscLosses evaluate_discriminators(const DhalNets<T>& nets,
                                   std::span<const Experience* const> batch) {
  DiscLosses out;
  if (batch.empty()) return out;
  const auto sb = batch_of<T>(batch, nets.spec);
  const Mat<T> a = action_row<T>(batch, action_scale(LossParams{}));
  for (int k = 0; k < 4; ++k) {
    const Mat<T> bo = nets.disc[k].branch.forward(sb.g);
    const Mat<T> p = nets.disc[k].head.forward(stack_rows<T>(bo, sb.ego, &a));
    double sum = 0.0;
    for (std::size_t c = 0; c < batch.size(); ++c) {
      sum += bce_term(p(0, static_cast<Eigen::Index>(c)), disc_target(*batch[c], k));
    }
    out.bce[k] = sum / static_cast<double>(batch.size());
  }
  return out;
}

template <class T>
DiscLosses train_discriminators(DhalNets<T>& nets, Optimizers<T>& opt,
                                std::span<const Experience* const> batch) {
  DiscLosses out;
  if (batch.empty()) return out;
  const auto sb = batch_of<T>(batch, nets.spec);
  const Mat<T> a = action_row<T>(batch, action_scale(LossParams{}));
  const auto n = static_cast<Eigen::Index>(batch.size());
  for (int k = 0; k < 4; ++k) {
    auto& net = nets.disc[k];
    typename nn::BasicMlp<T>::Cache bc, hc;
    const Mat<T> bo = net.branch.forward(sb.g, &bc);
    const Mat<T> p = net.head.forward(stack_rows<T>(bo, sb.ego, &a), &hc);
    Mat<T> dz(1, n);
    double sum = 0.0;
    for (Eigen::Index c = 0; c < n; ++c) {
      const double y = disc_target(*batch[static_cast<std::size_t>(c)], k);
      sum += bce_term(p(0, c), y);
      dz(0, c) = static_cast<T>((p(0, c) - y) / static_cast<double>(n));
    }
    out.bce[k] = sum / static_cast<double>(n);
    const auto hg = net.head.backward(hc, dz, nn::OutputGrad::kPreActivation);
    const auto bg = net.branch.backward(bc, hg.input.topRows(bo.rows()));
    opt.disc_head[k].step(net.head, hg);
    opt.disc_branch[k].step(net.branch, bg);
  }
  return out;
}

template DiscLosses evaluate_discriminators(const DhalNets<float>&, std::span<const Experience* const>);
template DiscLosses evaluate_discriminators(const DhalNets<double>&, std::span<const Experience* const>);
template DiscLosses train_discriminators(DhalNets<float>&, Optimizers<float>&,
                                         std::span<const Experience* const>);
template DiscLosses train_discriminators(DhalNets<double>&, Optimizers<double>&,
                                         std::span<const Experience* const>);

template <class T>
ActorObjective composite_actor_loss(const DhalNets<T>& nets, const StateBatch<T>& batch,
                                    std::span<const double> betas, const LossParams& lp,
                                    typename nn::BasicMlp<T>::Gradients* branch_grads,
                                    typename nn::BasicMlp<T>::Gradients* head_grads) {
  const int n = batch.size();
  if (static_cast<int>(betas.size()) != n) throw std::invalid_argument("one beta per state");
  ActorObjective obj;
  if (n == 0) return obj;
  const bool want_grads = branch_grads || head_grads;
  const double scale = action_scale(lp);
  const double half_range = (lp.a_max - lp.a_min) / 2.0;

  typename nn::BasicMlp<T>::Cache abc, ahc;
  const Mat<T> abo = nets.actor.branch.forward(batch.g, want_grads ? &abc : nullptr);
  const Mat<T> u = nets.actor.head.forward(stack_rows<T>(abo, batch.ego, nullptr),
                                           want_grads ? &ahc : nullptr);
  Mat<T> a_in(1, n);
  std::vector<double> a(static_cast<std::size_t>(n));
  for (int c = 0; c < n; ++c) {
    a[c] = project_action(u(0, c), lp.a_min, lp.a_max);
    a_in(0, c) = static_cast<T>(a[c] / scale);
  }

  // Discriminator outputs and their derivatives w.r.t. the action.
  std::array<Mat<T>, 4> p, dp;
  const Mat<T> ones = Mat<T>::Ones(1, n);
  for (int k = 0; k < 4; ++k) {
    const auto& net = nets.disc[k];
    typename nn::BasicMlp<T>::Cache hc;
    const Mat<T> bo = net.branch.forward(batch.g);
    p[k] = net.head.forward(stack_rows<T>(bo, batch.ego, &a_in), want_grads ? &hc : nullptr);
    if (want_grads) {
      const auto g = net.head.backward(hc, ones);
      dp[k] = g.input.bottomRows(1) / static_cast<T>(scale);
    }
  }

  Mat<T> du(1, n);
  double sum = 0.0, sum_a = 0.0;
  for (int c = 0; c < n; ++c) {
    const double lc = p[0](0, c), ac = p[1](0, c), pc = p[2](0, c), fin = p[3](0, c);
    const double al = lp.alpha;
    const double ac_raw = al * ac + (1.0 - al) * (lc - pc);
    const double pc_raw = al * pc + (1.0 - al) * (lc - ac);
    const double act = clamp01(ac_raw), pas = clamp01(pc_raw);
    sum += actor_loss(a[c], pas, act, fin, betas[c], lp.a_min, lp.a_max);
    sum_a += a[c];
    if (!want_grads) continue;
    const auto lpart = actor_loss_partials(a[c], pas, act, fin, betas[c], lp.a_min, lp.a_max);
    const double dlc = dp[0](0, c), dac = dp[1](0, c), dpc = dp[2](0, c), dfin = dp[3](0, c);
    const double dact = (ac_raw > 0.0 && ac_raw < 1.0) ? al * dac + (1.0 - al) * (dlc - dpc) : 0.0;
    const double dpas = (pc_raw > 0.0 && pc_raw < 1.0) ? al * dpc + (1.0 - al) * (dlc - dac) : 0.0;
    const double total = lpart.da + lpart.dactive * dact + lpart.dpassive * dpas + lpart.dfinal * dfin;
    du(0, c) = static_cast<T>(total * half_range / n);
  }
  obj.loss = sum / n;
  obj.mean_action = sum_a / n;
  if (want_grads) {
    auto hg = nets.actor.head.backward(ahc, du);
    auto bg = nets.actor.branch.backward(abc, hg.input.topRows(abo.rows()));
    if (branch_grads) *branch_grads = std::move(bg);
    if (head_grads) *head_grads = std::move(hg);
  }
  return obj;
}

template ActorObjective composite_actor_loss(const DhalNets<float>&, const StateBatch<float>&,
                                             std::span<const double>, const LossParams&,
                                             nn::BasicMlp<float>::Gradients*,
                                             nn::BasicMlp<float>::Gradients*);
template ActorObjective composite_actor_loss(const DhalNets<double>&, const StateBatch<double>&,
                                             std::span<const double>, const LossParams&,
                                             nn::BasicMlp<double>::Gradients*,
                                             nn::BasicMlp<double>::Gradients*);

template <class T>
ActorObjective train_actor(DhalNets<T>& nets, Optimizers<T>& opt,
                           std::span<const Experience* const> batch, double gamma,
                           const LossParams& lp) {
  if (batch.empty()) return {};
  const auto sb = batch_of<T>(batch, nets.spec);
  std::vector<double> betas;
  betas.reserve(batch.size());
  for (const auto* e : batch) betas.push_back(beta(e->dist, lp.d_min, lp.d_max, gamma));
  typename nn::BasicMlp<T>::Gradients bg, hg;
  const auto obj = composite_actor_loss(nets, sb, betas, lp, &bg, &hg);
  // Input gradients are not parameters.
  hg.input.resize(0, 0);
  opt.actor_head.step(nets.actor.head, hg);
  opt.actor_branch.step(nets.actor.branch, bg);
  return obj;
}

template ActorObjective train_actor(DhalNets<float>&, Optimizers<float>&,
                                    std::span<const Experience* const>, double, const LossParams&);
template ActorObjective train_actor(DhalNets<double>&, Optimizers<double>&,
                                    std::span<const Experience* const>, double, const LossParams&);

// ---------------------------------------------------------------- mechanisms

double state_maintenance(int conflict_label, double v, double a_proposed, double v_keep) {
  return (conflict_label == 0 && v >= v_keep) ? 0.0 : a_proposed;
}

bool windows_meet(const VehicleState& a, const VehicleState& b, const Layout& layout,
                  const ReservationParams& params, const VehicleParams& dims) {
  if (a.trajectory == b.trajectory) return false;
  for (int c : layout.map().conflicts_on.at(a.trajectory)) {
    const auto& cp = layout.conflict(c);
    if (!cp.on(b.trajectory)) continue;
    const Buffers buf = conflict_buffers(params, cp.theta, dims.width, dims.width);
    const auto wa = occupancy_window(distance_to_conflict(a.s, cp, a.trajectory), dims.length, a.v,
                                     buf.front, buf.rear, params.horizon);
    const auto wb = occupancy_window(distance_to_conflict(b.s, cp, b.trajectory), dims.length, b.v,
                                     buf.front, buf.rear, params.horizon);
    if (cells_for(wa, params).intersects(cells_for(wb, params))) return true;
  }
  return false;
}

double action_mask(const VehicleState& ego, double a_proposed,
                   std::span<const VehicleState> others, std::span<const VehicleId> current_partners,
                   const Layout& layout, const ReservationParams& params, const SimParams& sim,
                   int lookahead) {
  if (lookahead <= 0) return a_proposed;
  const auto& conflicting = layout.map().conflicting.at(ego.trajectory);
  std::vector<VehicleState> candidates;
  for (const auto& o : others) {
    if (o.id == ego.id || !in_intersection_area(o.zone)) continue;
    if (!std::binary_search(conflicting.begin(), conflicting.end(), o.trajectory)) continue;
    if (std::find(current_partners.begin(), current_partners.end(), o.id) != current_partners.end()) {
      continue;
    }
    candidates.push_back(o);
  }
  if (candidates.empty()) return a_proposed;
  std::vector<char> persistent(candidates.size(), 1);
  VehicleState me = ego;
  for (int k = 1; k <= lookahead; ++k) {
    for (int sub = 0; sub < sim.substeps_per_action; ++sub) {
      const auto next = integrate_substep(me.s, me.v, a_proposed, sim.substep, sim.vehicle.v_max);
      me.s = next.s;
      me.v = next.v;
    }
    bool any = false;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      auto& o = candidates[i];
      o.s += o.v * sim.action_dt();
      if (!persistent[i]) continue;
      persistent[i] = windows_meet(me, o, layout, params, sim.vehicle) ? 1 : 0;
      any = any || persistent[i];
    }
    if (!any) return a_proposed;
  }
  return 0.0;
}

// ---------------------------------------------------------------- agent

DhalAgent::DhalAgent(std::shared_ptr<const DhalNets<float>> nets, AgentParams params,
                     std::uint64_t seed)
    : nets_(std::move(nets)), params_(params), rng_(seed) {
  if (!nets_) throw std::invalid_argument("agent needs networks");
}

void DhalAgent::reset() {
  previous_.reset();
  records_.clear();
  awaiting_labels_.clear();
}

void DhalAgent::decide(const World& world, std::vector<Command>& out) {
  out.clear();
  const auto& layout = world.layout();
  const auto& spec = nets_->spec;
  const auto& dims = world.params().vehicle;

  std::vector<VehicleState> area;
  for (const auto& v : world.vehicles()) {
    if (in_intersection_area(v.zone)) area.push_back(v);
  }
  auto update = update_table(area, layout, params_.labels, dims, world.time());
  const auto assessment =
      assess_conflicts(update, previous_ ? &*previous_ : nullptr, area, layout);

  // The table of this step labels the actions taken on the previous one.
  for (VehicleId id : awaiting_labels_) {
    auto it = records_.find(id);
    if (it == records_.end() || it->second.empty()) continue;
    const auto l = assessment.labels_of(id);
    it->second.back().active = static_cast<std::uint8_t>(l.active);
    it->second.back().passive = static_cast<std::uint8_t>(l.passive);
  }
  awaiting_labels_.clear();

  std::unordered_map<VehicleId, std::vector<VehicleId>> partners;
  for (const auto& p : update.pairs) {
    partners[p.a].push_back(p.b);
    partners[p.b].push_back(p.a);
  }
  previous_ = std::move(update.table);

  std::vector<const VehicleState*> ctrl;
  for (const auto& v : world.vehicles()) {
    if (v.zone == Zone::kPreparation && !v.admitted()) ctrl.push_back(&v);
  }
  if (ctrl.empty()) return;

  auto raster = std::make_shared<Raster>(build_raster(world.vehicles(), layout, spec));
  // Stored experiences keep only the cells, not the id lookup.
  auto stored = std::make_shared<Raster>();
  stored->cells = raster->cells;
  std::vector<StateEncoding> enc;
  enc.reserve(ctrl.size());
  static const std::vector<VehicleId> kNone;
  for (const auto* v : ctrl) {
    auto it = partners.find(v->id);
    const auto& mine = it == partners.end() ? kNone : it->second;
    enc.push_back(encode_state(raster, *v, mine, layout, spec));
    enc.back().raster = stored;
  }
  std::vector<const StateEncoding*> ptrs;
  for (const auto& e : enc) ptrs.push_back(&e);
  const auto u = actor_output(*nets_, make_batch<float>(ptrs, spec));

  const auto& lp = params_.loss;
  std::normal_distribution<double> noise(0.0, params_.exploration_sigma > 0.0 ? params_.exploration_sigma : 1.0);
  for (std::size_t i = 0; i < ctrl.size(); ++i) {
    const auto& v = *ctrl[i];
    double a = project_action(u[i], lp.a_min, lp.a_max);
    if (params_.exploration_sigma > 0.0) a = std::clamp(a + noise(rng_), lp.a_min, lp.a_max);
    if (params_.maintenance) {
      const double kept =
          state_maintenance(assessment.labels_of(v.id).conflict, v.v, a, params_.v_keep);
      if (kept != a) ++maintained_;
      a = kept;
    }
    if (params_.mask) {
      auto it = partners.find(v.id);
      const auto& mine = it == partners.end() ? kNone : it->second;
      const double masked = action_mask(v, a, area, mine, layout, params_.labels, world.params(),
                                        params_.mask_lookahead);
      if (masked != a) ++masked_;
      a = masked;
    }
    out.push_back({v.id, a, true});
    if (palace_) {
      const double dist = layout.path(v.trajectory).stop_line_s() - v.s;
      records_[v.id].push_back({std::move(enc[i]), static_cast<float>(a), 0, 0,
                                static_cast<float>(dist)});
      awaiting_labels_.push_back(v.id);
    }
  }
}

void DhalAgent::observe(const World& world, const StepReport& report) {
  if (!palace_) return;
  // Store the acceleration the vehicle actually applied.
  for (VehicleId id : awaiting_labels_) {
    const auto* v = world.find(id);
    auto it = records_.find(id);
    if (v && it != records_.end() && !it->second.empty()) it->second.back().a = static_cast<float>(v->accel);
  }
  if (report.finished.empty()) return;
  std::unordered_set<VehicleId> collided;
  for (const auto& c : report.collisions) {
    collided.insert(c.a);
    collided.insert(c.b);
  }
  for (VehicleId id : report.finished) {
    auto it = records_.find(id);
    if (it == records_.end()) continue;
    palace_->push_trajectory(it->second, collided.count(id) != 0);
    experiences_ += it->second.size();
    records_.erase(it);
    std::erase(awaiting_labels_, id);
  }
}

// ---------------------------------------------------------------- training

double curriculum_rate(int epoch, int cycle_length, std::mt19937_64& rng) {
  if (epoch < 1 || cycle_length < 1) throw std::invalid_argument("curriculum epoch");
  const int pos = (epoch - 1) % cycle_length;  // 0-based within the cycle
  const double frac = static_cast<double>(pos) / cycle_length;
  double lo = 6000.0, hi = 7200.0;
  if (frac >= 12.0 / 15.0) {
    lo = 8400.0;
    hi = 9600.0;
  } else if (frac >= 9.0 / 15.0) {
    lo = 7200.0;
    hi = 8400.0;
  }
  std::uniform_real_distribution<double> u(lo, hi);
  return u(rng);
}

TrainingResult run_training(const TrainingConfig& config, const std::string& checkpoint_path,
                            const std::function<void(const EpochSummary&)>& on_epoch) {
  if (config.epochs < 0) throw std::invalid_argument("negative epoch count");
  if (config.desk_scale <= 0.0) throw std::invalid_argument("desk_scale must be positive");
  if (config.batch_size == 0 || config.update_every < 1) throw std::invalid_argument("batch settings");

  auto layout = std::make_shared<const Layout>(build_layout(config.layout));
  if (layout->trajectory_count() != config.spec.trajectories) {
    throw std::invalid_argument("encoding expects a different trajectory count");
  }
  TrainingResult result;
  result.nets = DhalNets<float>(config.spec, config.shape, config.seed);
  auto& nets = result.nets;
  Optimizers<float> opt(nets, config.actor_adam, config.disc_adam);
  MemoryPalace palace(config.palace_capacity);

  // Non-owning view so the agent always acts with the latest weights.
  std::shared_ptr<const DhalNets<float>> view(&nets, [](const DhalNets<float>*) {});
  DhalAgent agent(view, config.agent, splitmix(config.seed ^ 0xA6E1));
  agent.attach_palace(&palace);

  std::mt19937_64 rng(splitmix(config.seed ^ 0xC0C0));
  std::mt19937_64 sample_rng(splitmix(config.seed ^ 0x5A5A));
  const double episode = config.episode_length * config.desk_scale;
  const auto steps_per_episode =
      static_cast<std::int64_t>(std::llround(episode / config.sim.action_dt()));
  const std::int64_t total_steps = steps_per_episode * config.epochs;
  std::int64_t step = 0;

  auto abort = [&](const std::string& what) {
    if (!checkpoint_path.empty()) save_bundle(nets, checkpoint_path);
    throw NonFiniteLoss(what);
  };

  std::vector<Command> commands;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    ArrivalConfig arrivals = config.arrivals;
    arrivals.total_rate = curriculum_rate(epoch, config.cycle_length, rng) * config.desk_scale;
    World world(layout, config.sim,
                ArrivalProcess(arrivals, layout->trajectory_count(),
                               splitmix(config.seed * 1000003ULL + static_cast<std::uint64_t>(epoch))));
    agent.reset();
    EpochSummary summary;
    summary.epoch = epoch;
    summary.rate = arrivals.total_rate;
    double loss_sum = 0.0, final_sum = 0.0;
    int updates = 0;
    for (std::int64_t k = 0; k < steps_per_episode; ++k, ++step) {
      agent.decide(world, commands);
      const auto report = world.step(commands);
      agent.observe(world, report);
      if (palace.size() < config.batch_size || (step + 1) % config.update_every != 0) continue;
      const double gamma = gamma_schedule(step, total_steps, config.gamma_warm_start, config.gamma,
                                          config.gamma_decay_fraction);
      const auto dbatch = palace.sample(config.batch_size, sample_rng);
      const auto dl = train_discriminators(nets, opt, dbatch);
      const auto abatch = palace.sample(config.batch_size, sample_rng);
      const auto al = train_actor(nets, opt, abatch, gamma, config.agent.loss);
      CurvePoint cp{result.updates++, epoch, al.loss, dl.immediate(), dl.final_bce(), gamma};
      if (!std::isfinite(cp.actor_loss) || !std::isfinite(cp.immediate_bce) ||
          !std::isfinite(cp.final_bce)) {
        result.curves.push_back(cp);
        abort("non-finite loss at update " + std::to_string(cp.step));
      }
      result.curves.push_back(cp);
      loss_sum += cp.actor_loss;
      final_sum += cp.final_bce;
      ++updates;
    }
    const auto trips = world.finish();
    summary.trips = trips.size();
    for (const auto& t : trips) {
      if (t.outcome == Outcome::kPassed) ++summary.passed;
      if (t.outcome == Outcome::kCollided) ++summary.collided;
    }
    summary.palace = palace.size();
    if (updates > 0) {
      summary.mean_actor_loss = loss_sum / updates;
      summary.mean_final_bce = final_sum / updates;
    }
    result.epochs.push_back(summary);
    if (on_epoch) on_epoch(summary);
  }
  if (!checkpoint_path.empty()) save_bundle(nets, checkpoint_path);
  return result;
}

}  // namespace crossway::dhal
