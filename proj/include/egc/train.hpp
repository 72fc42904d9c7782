#pragma once

#include "egc/model.hpp"
#include "egc/synth.hpp"

#include <functional>
#include <iosfwd>
#include <string>

namespace egc {

enum class OptKind { sgd_momentum, adaptive_moment };

OptKind opt_kind_from_string(const std::string& name);
std::string to_string(OptKind kind);

struct OptimizerState {
  OptKind kind = OptKind::adaptive_moment;
  double lr = 1e-3;  // base step size; schedules pass the effective value
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.9;
  std::int64_t step_count = 0;
  Vector m;  // first moment / velocity
  Vector v;  // second moment (adaptive only)

  static OptimizerState make(OptKind kind, Eigen::Index n, double lr);
};

/// One optimizer update in place. `lr_now` is the scheduled step size for
/// this step; pass state.lr when no schedule applies.
void opt_step(Vector& params, const Vector& grad, OptimizerState& state, double lr_now);

struct TrainConfig {
  int epochs = 30;
  int batch_size = 16;
  OptKind optimizer = OptKind::adaptive_moment;
  double lr = 1e-3;
  std::vector<int> lr_milestones{18, 24};
  double lr_factor = 0.5;
  LossConfig loss;
  std::uint64_t seed = 7;
  int eval_every = 1;
  int threads = 1;
  std::vector<double> eval_deltas = default_deltas();

  void validate() const;
};

double lr_at(const TrainConfig& cfg, int epoch);

struct EpochRecord {
  int epoch = 0;           // -1 for the initial evaluation record
  bool has_loss = false;
  double loss = 0.0, l1 = 0.0, l2 = 0.0;
  double lr = 0.0, alpha = 0.0;
  bool evaluated = false;
  PckReport pck;
  bool is_best = false;
};

struct TrainResult {
  std::vector<EpochRecord> log;
  double best_mpck = -1.0;
  int best_epoch = -1;
  int best_epochs_done = 0;   // epochs completed when the best eval happened
  Vector best_params;
  OptimizerState best_opt;
};

/// Deterministic epoch/batch loop: derives the per-epoch data order from the
/// seed, applies the lr and alpha schedules, evaluates PCK on the held-out
/// split at the configured cadence and snapshots the best-mPCK parameters.
/// Per-sample gradients may run on `cfg.threads` workers; the reduction is
/// in fixed sample order, so results are bit-identical for any thread count.
/// Throws NumericError with an epoch/batch diagnostic if the loss leaves the
/// finite range.
TrainResult train_loop(RefineModel& model, const std::vector<PoseSample>& train_set,
                       const std::vector<PoseSample>& eval_set, const TrainConfig& cfg,
                       OptimizerState* state = nullptr, int start_epoch = 0,
                       const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Decode the fused model output for every sample and score it against the
/// ground-truth keypoints. Box size is the map width.
PckReport eval_model(const RefineModel& model, const std::vector<PoseSample>& samples,
                     const std::vector<double>& deltas, int threads);

/// Score the raw input maps (the no-model baseline).
PckReport eval_input_baseline(const std::vector<PoseSample>& samples,
                              const std::vector<double>& deltas);

// --- Finite-difference verification harness ---------------------------------

struct GradcheckGroup {
  std::string name;
  Eigen::Index checked = 0;
  double max_rel = 0.0;
  Eigen::Index worst_index = -1;  // flat parameter index
  double analytic = 0.0, numeric = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckGroup> groups;
  double max_rel = 0.0;
  std::string worst_group;
};

/// Central finite differences of the full loss versus the analytic gradient.
/// Relative error per parameter is |a - n| / max(|a|, |n|, f) with the floor
/// f = 1e-3 · (1 + ‖g‖∞), so near-zero entries are judged on the gradient's
/// scale. Groups whose size exceeds `subsample` are checked on a seeded
/// random index subset (0 = check everything). `filter` is a group-name
/// prefix ("" = all groups).
GradcheckReport gradcheck(const RefineModel& model, const PoseSample& sample,
                          const LossConfig& loss_cfg, double epsilon,
                          const std::string& filter = "", Eigen::Index subsample = 0,
                          std::uint64_t seed = 0, int threads = 1);

// --- Checkpoints --------------------------------------------------------------
// Model blob followed by an optimizer/progress appendix; both little-endian.

struct Checkpoint {
  RefineModel model;
  OptimizerState opt;
  int epochs_done = 0;
  double best_mpck = -1.0;
  int best_epoch = -1;
};

void save_checkpoint(const std::string& path, const RefineModel& model,
                     const OptimizerState& opt, int epochs_done, double best_mpck,
                     int best_epoch);
Checkpoint load_checkpoint(const std::string& path, const SkeletonGraph& graph);

}  // namespace egc
