#include "egc/objective.hpp"

#include <cmath>

namespace egc {

void LossConfig::validate() const {
  if (alpha < 0.0) throw ConfigError("loss: alpha must be non-negative");
  if (stages < 0) throw ConfigError("loss: stage count must be non-negative");
  int prev = -1;
  for (const auto& [epoch, value] : alpha_schedule) {
    if (epoch <= prev) throw ConfigError("loss: alpha schedule epochs must be strictly increasing");
    if (value < 0.0) throw ConfigError("loss: alpha schedule values must be non-negative");
    prev = epoch;
  }
}

double alpha_at(const LossConfig& cfg, int epoch) {
  double a = cfg.alpha;
  for (const auto& [e, value] : cfg.alpha_schedule) {
    if (epoch >= e) a = value;
  }
  return a;
}

Matrix render_gaussian(double cx, double cy, Eigen::Index rows, Eigen::Index cols, double sigma) {
  if (sigma <= 0.0) throw ConfigError("render_gaussian: sigma must be positive");
  if (rows < 1 || cols < 1) throw ShapeError("render_gaussian: empty map shape");
  Matrix out(rows, cols);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (Eigen::Index y = 0; y < rows; ++y) {
    const double dy2 = (double(y) - cy) * (double(y) - cy);
    double* row = out.data() + y * cols;
    for (Eigen::Index x = 0; x < cols; ++x) {
      const double dx = double(x) - cx;
      row[x] = std::exp(-(dx * dx + dy2) * inv);
    }
  }
  return out;
}

LossValue total_loss(const std::vector<MapStack>* stages, const MapStack& fused,
                     const MapStack& target, const LossConfig& cfg, int epoch) {
  cfg.validate();
  if (epoch < 0) throw ContractError("total_loss: epoch must be non-negative");
  if (fused.size() != target.size())
    throw ShapeError("total_loss: fused has " + std::to_string(fused.size()) +
                     " channels, target has " + std::to_string(target.size()));

  LossValue out;
  out.d_fused.reserve(fused.size());
  for (std::size_t k = 0; k < fused.size(); ++k) {
    if (fused[k].rows() != target[k].rows() || fused[k].cols() != target[k].cols())
      throw ShapeError("total_loss: map shape mismatch at channel " + std::to_string(k));
    Matrix diff = fused[k] - target[k];
    out.l2 += diff.squaredNorm();
    out.d_fused.push_back(2.0 * diff);
  }

  if (stages) {
    for (const auto& stage : *stages) {
      if (stage.size() != target.size())
        throw ShapeError("total_loss: stage channel count mismatch");
      for (std::size_t k = 0; k < stage.size(); ++k) {
        if (stage[k].rows() != target[k].rows() || stage[k].cols() != target[k].cols())
          throw ShapeError("total_loss: stage map shape mismatch at channel " + std::to_string(k));
        out.l1 += (stage[k] - target[k]).squaredNorm();
      }
    }
  }

  out.total = alpha_at(cfg, epoch) * out.l1 + out.l2;
  return out;
}

double pck(const std::vector<Point2>& pred, const std::vector<Point2>& gt, double delta,
           double box_size) {
  if (pred.size() != gt.size())
    throw ShapeError("pck: " + std::to_string(pred.size()) + " predictions vs " +
                     std::to_string(gt.size()) + " ground-truth keypoints");
  if (pred.empty()) throw ShapeError("pck: empty keypoint list");
  if (delta <= 0.0 || box_size <= 0.0) throw ConfigError("pck: delta and box size must be positive");
  const double thresh = delta * box_size;
  int correct = 0;
  for (std::size_t k = 0; k < pred.size(); ++k)
    if ((pred[k] - gt[k]).norm() <= thresh) ++correct;
  return double(correct) / double(pred.size());
}

PckReport mpck(const std::vector<std::vector<Point2>>& preds,
               const std::vector<std::vector<Point2>>& gts, const std::vector<double>& deltas,
               double box_size) {
  if (deltas.empty()) throw ContractError("mpck: delta list must be non-empty");
  if (preds.size() != gts.size()) throw ShapeError("mpck: prediction/ground-truth count mismatch");
  if (preds.empty()) throw ContractError("mpck: empty dataset");

  PckReport report;
  report.deltas = deltas;
  report.per_delta.assign(deltas.size(), 0.0);
  for (std::size_t s = 0; s < preds.size(); ++s)
    for (std::size_t d = 0; d < deltas.size(); ++d)
      report.per_delta[d] += pck(preds[s], gts[s], deltas[d], box_size);
  double total = 0.0;
  for (auto& v : report.per_delta) {
    v /= double(preds.size());
    total += v;
  }
  report.mean = total / double(deltas.size());
  return report;
}

std::vector<double> default_deltas() { return {0.01, 0.02, 0.03, 0.04, 0.05, 0.06}; }

}  // namespace egc
