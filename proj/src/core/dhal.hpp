// Hierarchical adversarial learning: state encoding, actor and
// discriminators, label fusion, the actor loss, the memory palace, the two
// behavioral mechanisms and the training loop.
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "nnet.hpp"
#include "reservation.hpp"
#include "simcore.hpp"

namespace crossway::dhal {

// ---------------------------------------------------------------- encoding

struct EncodingSpec {
  int trajectories = 12;
  int cells = 27;
  double cell_length = 5.0;
  int dist_bins = 25;
  double dist_bin = 5.0;
  int speed_bins = 15;
  double speed_bin = 1.0;
  double v_max = 15.0;
  /// Scale of the per-cell distance-to-stop-line feature.
  double stop_scale = 100.0;

  int g_dim() const { return trajectories * cells * 4; }
  int ego_dim() const { return trajectories + dist_bins + 1 + speed_bins + 1; }
  int state_dim() const { return g_dim() + ego_dim(); }
};

/// Feature vector of an empty raster cell.
inline constexpr std::array<float, 4> kSentinel{-1.0f, -1.0f, -1.0f, 0.0f};

struct RasterCell {
  std::uint16_t cell = 0;  // trajectory * cells + segment
  float dist = 0.0f;
  float speed = 0.0f;
  float heading = 0.0f;
};

/// Occupied cells of the global observation, shared by every ego vehicle of
/// one step.
struct Raster {
  std::vector<RasterCell> cells;  // ascending cell index
  std::unordered_map<VehicleId, std::uint16_t> cell_of;
};

Raster build_raster(std::span<const VehicleState> vehicles, const Layout& layout,
                    const EncodingSpec& spec);

struct EgoCode {
  std::uint8_t trajectory = 0;
  std::uint8_t dist_bin = 0;
  std::uint8_t speed_bin = 0;
  float dist = 0.0f;   // normalized distance to the crossing-zone exit
  float speed = 0.0f;  // v / v_max
};

struct StateEncoding {
  std::shared_ptr<const Raster> raster;
  std::vector<std::uint16_t> flagged;  // cells holding a vehicle in conflict with the ego
  EgoCode ego;

  /// Full [G, x] vector.
  std::vector<float> dense(const EncodingSpec& spec) const;
};

EgoCode encode_ego(const VehicleState& ego, const Layout& layout, const EncodingSpec& spec);

StateEncoding encode_state(std::shared_ptr<const Raster> raster, const VehicleState& ego,
                           std::span<const VehicleId> partners, const Layout& layout,
                           const EncodingSpec& spec);

/// Convenience form that builds the raster from the world.
StateEncoding encode_state(const World& world, const VehicleState& ego,
                           std::span<const VehicleId> partners, const EncodingSpec& spec);

template <class T>
struct StateBatch {
  nn::SparseBatch<T> g;
  Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> ego;  // ego_dim x batch

  int size() const { return g.cols(); }
};

template <class T>
StateBatch<T> make_batch(std::span<const StateEncoding* const> states, const EncodingSpec& spec);

// ---------------------------------------------------------------- networks

struct NetShape {
  std::vector<int> branch{512, 256, 128};
  std::vector<int> head{256, 128};
};

/// One network of the stack: a branch over the global raster joined with the
/// ego vector (and, for discriminators, the scaled action) in a head MLP.
template <class T>
struct TwoStageNet {
  nn::BasicMlp<T> branch;
  nn::BasicMlp<T> head;

  std::uint64_t hash() const { return branch.hash() ^ (head.hash() * 0x9e3779b97f4a7c15ULL); }
};

enum class Disc : int { kConflict = 0, kActive = 1, kPassive = 2, kFinal = 3 };

template <class T>
struct DhalNets {
  EncodingSpec spec;
  TwoStageNet<T> actor;
  std::array<TwoStageNet<T>, 4> disc;

  DhalNets() = default;
  DhalNets(const EncodingSpec& spec, const NetShape& shape, std::uint64_t seed);

  template <class U>
  DhalNets<U> cast() const {
    DhalNets<U> out;
    out.spec = spec;
    out.actor = {actor.branch.template cast<U>(), actor.head.template cast<U>()};
    for (int i = 0; i < 4; ++i) out.disc[i] = {disc[i].branch.template cast<U>(), disc[i].head.template cast<U>()};
    return out;
  }
};

void save_bundle(const DhalNets<float>& nets, std::ostream& os);
DhalNets<float> load_bundle(std::istream& is);
void save_bundle(const DhalNets<float>& nets, const std::string& path);
DhalNets<float> load_bundle(const std::string& path);

struct LossParams {
  double alpha = 0.6;
  double a_min = -4.0;
  double a_max = 4.0;
  double d_min = 0.0;
  double d_max = 100.0;
};

/// a = a_min + (a_max - a_min)(u + 1) / 2 for the actor's tanh output u.
double project_action(double u, double a_min, double a_max);

/// Actor output u in [-1, 1] for every state of the batch.
template <class T>
std::vector<T> actor_output(const DhalNets<T>& nets, const StateBatch<T>& batch);

// ---------------------------------------------------------------- loss

struct FusedLabels {
  double active = 0.0;
  double passive = 0.0;
};

FusedLabels fuse_labels(double conflict, double active_raw, double passive_raw, double alpha);

/// Potential-energy weight; `d` is clamped into [d_min, d_max].
double beta(double d, double d_min, double d_max, double gamma);

double actor_loss(double a, double passive, double active, double final_collision, double beta,
                  double a_min, double a_max);

/// Partial derivatives of actor_loss.
struct LossPartials {
  double da = 0.0;
  double dpassive = 0.0;
  double dactive = 0.0;
  double dfinal = 0.0;
};
LossPartials actor_loss_partials(double a, double passive, double active, double final_collision,
                                 double beta, double a_min, double a_max);

/// Linear decay from `warm` to `target` over the first `fraction` of the
/// steps, then constant.
double gamma_schedule(std::int64_t step, std::int64_t total, double warm, double target,
                      double fraction);

// ---------------------------------------------------------------- palace

struct Experience {
  StateEncoding state;
  float a = 0.0f;
  std::uint8_t active = 0;
  std::uint8_t passive = 0;
  std::uint8_t collided = 0;
  float dist = 0.0f;  // distance to the stop line, for the potential weight

  std::uint8_t conflict() const { return (active + passive) > 0 ? 1 : 0; }
};

/// Per-step record of one vehicle before its outcome is known.
struct StepRecord {
  StateEncoding state;
  float a = 0.0f;
  std::uint8_t active = 0;
  std::uint8_t passive = 0;
  float dist = 0.0f;
};

class MemoryPalace {
 public:
  explicit MemoryPalace(std::size_t capacity);

  /// Appends every record with the trajectory's shared outcome.
  void push_trajectory(std::span<const StepRecord> records, bool collided);
  void push(Experience e);

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return cap_; }
  /// Oldest stored element first.
  const Experience& at(std::size_t i) const;

  std::vector<const Experience*> sample(std::size_t n, std::mt19937_64& rng) const;

 private:
  std::vector<Experience> buf_;
  std::size_t cap_ = 0;
  std::size_t head_ = 0;  // next write position once full
  std::size_t size_ = 0;
};

// ---------------------------------------------------------------- updates

template <class T>
struct Optimizers {
  nn::BasicAdam<T> actor_branch, actor_head;
  std::array<nn::BasicAdam<T>, 4> disc_branch, disc_head;

  Optimizers() = default;
  Optimizers(const DhalNets<T>& nets, const nn::AdamParams& actor, const nn::AdamParams& disc);
};

struct DiscLosses {
  std::array<double, 4> bce{};  // conflict, active, passive, final
  double immediate() const { return (bce[0] + bce[1] + bce[2]) / 3.0; }
  double final_bce() const { return bce[3]; }
};

/// Binary cross-entropy of each discriminator on the batch, no update.
template <class T>
DiscLosses evaluate_discriminators(const DhalNets<T>& nets,
                                   std::span<const Experience* const> batch);

/// One Adam step of each discriminator on binary cross-entropy.
template <class T>
DiscLosses train_discriminators(DhalNets<T>& nets, Optimizers<T>& opt,
                                std::span<const Experience* const> batch);

struct ActorObjective {
  double loss = 0.0;
  double mean_action = 0.0;
};

/// Mean actor loss over the batch with the action recomputed by the actor
/// and labels produced by the (frozen) discriminators. When `grads` is not
/// null, receives the gradient w.r.t. the actor parameters (branch, then
/// head, in each network's flat order).
template <class T>
ActorObjective composite_actor_loss(const DhalNets<T>& nets, const StateBatch<T>& batch,
                                    std::span<const double> betas, const LossParams& lp,
                                    typename nn::BasicMlp<T>::Gradients* branch_grads = nullptr,
                                    typename nn::BasicMlp<T>::Gradients* head_grads = nullptr);

template <class T>
ActorObjective train_actor(DhalNets<T>& nets, Optimizers<T>& opt,
                           std::span<const Experience* const> batch, double gamma,
                           const LossParams& lp);

// ---------------------------------------------------------------- mechanisms

/// Holds speed (zero acceleration) for a conflict-free vehicle at or above
/// `v_keep`.
double state_maintenance(int conflict_label, double v, double a_proposed, double v_keep);

/// Occupancy-window overlap between two vehicles under the label table's
/// rules, over every conflict point they share.
bool windows_meet(const VehicleState& a, const VehicleState& b, const Layout& layout,
                  const ReservationParams& params, const VehicleParams& dims);

/// Vetoes (returns 0) an acceleration that creates a conflict pair absent
/// now and present throughout `lookahead` action steps, opponents extrapolated
/// at constant speed.
double action_mask(const VehicleState& ego, double a_proposed,
                   std::span<const VehicleState> others, std::span<const VehicleId> current_partners,
                   const Layout& layout, const ReservationParams& params, const SimParams& sim,
                   int lookahead);

// ---------------------------------------------------------------- agent

struct AgentParams {
  LossParams loss;
  double v_keep = 3.0;
  int mask_lookahead = 5;
  double exploration_sigma = 0.0;
  ReservationParams labels;  // simplified buffers, as in the label table
  bool maintenance = true;
  bool mask = true;
};

/// Drives preparation-zone vehicles with the actor and the two behavioral
/// mechanisms. With a palace attached, also records experiences.
class DhalAgent : public Controller {
 public:
  DhalAgent(std::shared_ptr<const DhalNets<float>> nets, AgentParams params, std::uint64_t seed);

  std::string name() const override { return "dhal"; }
  void decide(const World& world, std::vector<Command>& out) override;
  void observe(const World& world, const StepReport& report) override;

  void set_nets(std::shared_ptr<const DhalNets<float>> nets) { nets_ = std::move(nets); }
  void attach_palace(MemoryPalace* palace) { palace_ = palace; }
  /// Drops the previous table and in-flight records (new episode).
  void reset();

  std::uint64_t experiences() const { return experiences_; }
  std::uint64_t masked() const { return masked_; }
  std::uint64_t maintained() const { return maintained_; }

 private:
  std::shared_ptr<const DhalNets<float>> nets_;
  AgentParams params_;
  std::mt19937_64 rng_;
  MemoryPalace* palace_ = nullptr;
  std::optional<ReservationTable> previous_;
  std::unordered_map<VehicleId, std::vector<StepRecord>> records_;
  std::vector<VehicleId> awaiting_labels_;
  std::uint64_t experiences_ = 0;
  std::uint64_t masked_ = 0;
  std::uint64_t maintained_ = 0;
};

// ---------------------------------------------------------------- training

struct TrainingConfig {
  int epochs = 100;
  int cycle_length = 15;
  double episode_length = 300.0;
  double desk_scale = 1.0;
  std::size_t batch_size = 256;
  std::size_t palace_capacity = 1000000;
  int update_every = 8;
  double gamma = 0.2;  // value reached after the warm start
  double gamma_warm_start = 0.9;
  double gamma_decay_fraction = 0.5;
  nn::AdamParams actor_adam{1e-5, 0.9, 0.999, 1e-8};
  nn::AdamParams disc_adam{1e-5, 0.9, 0.999, 1e-8};
  AgentParams agent{LossParams{}, 3.0, 5, 0.5, ReservationParams{}, true, true};  // noisy while training
  NetShape shape;
  EncodingSpec spec;
  LayoutConfig layout;
  SimParams sim;
  ArrivalConfig arrivals;  // total_rate is overwritten by the curriculum
  std::uint64_t seed = 1;
};

/// Total arrival rate (veh/h, before desk scaling) of a 1-based epoch.
double curriculum_rate(int epoch, int cycle_length, std::mt19937_64& rng);

struct CurvePoint {
  std::int64_t step = 0;  // training update index
  int epoch = 0;
  double actor_loss = 0.0;
  double immediate_bce = 0.0;
  double final_bce = 0.0;
  double gamma = 0.0;
};

struct EpochSummary {
  int epoch = 0;
  double rate = 0.0;  // veh/h after scaling
  std::size_t trips = 0;
  std::size_t passed = 0;
  std::size_t collided = 0;
  std::size_t palace = 0;
  double mean_actor_loss = 0.0;
  double mean_final_bce = 0.0;
};

struct TrainingResult {
  DhalNets<float> nets;
  std::vector<CurvePoint> curves;
  std::vector<EpochSummary> epochs;
  std::int64_t updates = 0;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Runs the curriculum. `checkpoint_path`, when not empty, receives the
/// bundle at the end (and before aborting on a non-finite loss).
TrainingResult run_training(const TrainingConfig& config, const std::string& checkpoint_path = {},
                            const std::function<void(const EpochSummary&)>& on_epoch = {});

extern template struct DhalNets<float>;
extern template struct DhalNets<double>;

}  // namespace crossway::dhal
