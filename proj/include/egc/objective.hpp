#pragma once

#include "egc/common.hpp"

#include <vector>

namespace egc {

/// Balancing weight for the two-term loss plus its epoch step schedule.
struct LossConfig {
  double alpha = 1.0;
  std::vector<std::pair<int, double>> alpha_schedule;  // (epoch, value), epochs increasing
  int stages = 1;                                      // preliminary-estimator stage count

  void validate() const;
};

/// Value of alpha at a given epoch: the base value until the first schedule
/// step, then the value of the latest step whose epoch has been reached.
double alpha_at(const LossConfig& cfg, int epoch);

/// Unnormalized Gaussian peak: map(y, x) = exp(-((x-cx)² + (y-cy)²) / (2σ²)).
/// Centers may lie off the map; the truncated tail is rendered.
Matrix render_gaussian(double cx, double cy, Eigen::Index rows, Eigen::Index cols, double sigma);

struct LossValue {
  double total = 0.0;
  double l1 = 0.0;     // sum over stages of squared Frobenius distance to target
  double l2 = 0.0;     // squared Frobenius distance of the fused output
  MapStack d_fused;    // exact gradient 2(fused - target)
};

/// Two-term loss alpha(epoch)·L1 + L2 with plain sums of squares (no 1/2, no
/// mean). `stages` may be null when no preliminary maps exist; it carries no
/// gradient here because the preliminary source is not learnable.
LossValue total_loss(const std::vector<MapStack>* stages, const MapStack& fused,
                     const MapStack& target, const LossConfig& cfg, int epoch);

/// Fraction of keypoints within delta·box_size of ground truth (boundary
/// counts as correct).
double pck(const std::vector<Point2>& pred, const std::vector<Point2>& gt, double delta,
           double box_size);

struct PckReport {
  std::vector<double> deltas;
  std::vector<double> per_delta;  // dataset-averaged PCK per threshold
  double mean = 0.0;              // unweighted mean over thresholds (mPCK)
};

PckReport mpck(const std::vector<std::vector<Point2>>& preds,
               const std::vector<std::vector<Point2>>& gts, const std::vector<double>& deltas,
               double box_size);

/// The six thresholds used by the evaluation reports.
std::vector<double> default_deltas();

}  // namespace egc
