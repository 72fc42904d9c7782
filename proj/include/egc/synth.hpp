#pragma once

#include "egc/graph.hpp"
#include "egc/objective.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace egc {

/// Kinematic hand-pose generator parameters. Lengths and sigma are given in
/// pixels at the 32×32 reference size and scale proportionally with the map.
struct SynthConfig {
  int map_rows = 32;
  int map_cols = 32;
  double sigma = 1.5;       // ground-truth Gaussian std at 32×32
  double bone_scale = 1.0;  // multiplies the bone-length table

  double scale() const;     // map-size scale factor relative to 32
  double sigma_eff() const { return sigma * scale(); }
  void validate() const;
};

/// Degradations applied by the simulated preliminary estimator.
struct CorruptionConfig {
  double jitter_sigma = 0.0;      // Gaussian keypoint displacement, pixels
  double per_edge_bias = 0.0;     // fixed offset along selected bones, pixels
  std::string bias_bones = "fingertips";  // none | fingertips | all
  double blur_sigma = 0.0;        // Gaussian map blur
  double distractor_rate = 0.0;   // probability of a false secondary peak
  double noise_floor = 0.0;       // additive uniform noise amplitude

  void validate() const;
};

struct PoseSample {
  std::vector<Point2> keypoints;  // K true (x, y) positions
  MapStack gt_maps;               // rendered ground-truth Gaussians
  MapStack input_maps;            // corrupted preliminary-estimator maps
  std::uint64_t seed = 0;
};

/// Per-bone rest lengths of the default hand, ordered like
/// SkeletonGraph::bones (parent, child). Values are pixels at 32×32.
std::vector<double> hand_bone_lengths();

/// Grow a hand pose: wrist uniform in the central region, finger chains with
/// per-joint angles inside anatomical ranges, bone lengths jittered ±5%.
/// Out-of-bounds poses are re-drawn (bounded attempts) then clamped.
/// Fills keypoints and gt_maps; deterministic given the seed.
PoseSample sample_pose(std::uint64_t seed, const SkeletonGraph& skeleton,
                       const std::vector<double>& bone_lengths, const SynthConfig& cfg);

/// Render the corrupted input maps for a sample: Gaussians at jittered and
/// biased positions, optional distractor peak at a sibling keypoint, blur,
/// floor noise, clamp to [0, 1]. Deterministic given the seed.
MapStack corrupt(const PoseSample& sample, const SkeletonGraph& skeleton,
                 const CorruptionConfig& cfg, const SynthConfig& synth, std::uint64_t seed);

// --- Heatmap container file -------------------------------------------------
// Binary: magic, version, K, rows, cols, row-major little-endian doubles
// (channel outer), then a coordinate footer flag plus K (x, y) pairs when
// ground truth is present.

struct HeatmapFile {
  MapStack maps;
  std::optional<std::vector<Point2>> coords;
};

void save_heatmaps(const std::string& path, const MapStack& maps,
                   const std::vector<Point2>* coords);
HeatmapFile load_heatmaps(const std::string& path);

// --- Dataset directory -------------------------------------------------------
// manifest.json plus train/NNNNNN.hm and test/NNNNNN.hm sample files (input
// maps with ground-truth coordinate footers). Ground-truth maps are
// re-rendered from the coordinates on load.

struct DatasetSummary {
  int train_count = 0;
  int test_count = 0;
  int map_rows = 0;
  int map_cols = 0;
  int channels = 0;
};

DatasetSummary write_dataset(const std::string& dir, const SkeletonGraph& graph,
                             const SynthConfig& synth, const CorruptionConfig& corrupt_cfg,
                             int train_count, int test_count, std::uint64_t seed, bool force);

struct Dataset {
  SynthConfig synth;
  CorruptionConfig corruption;
  std::uint64_t seed = 0;
  std::uint64_t graph_hash = 0;
  std::vector<PoseSample> train;
  std::vector<PoseSample> test;
};

/// Loads a dataset directory and validates it against the given graph
/// (channel count and graph hash).
Dataset load_dataset(const std::string& dir, const SkeletonGraph& graph);

}  // namespace egc
