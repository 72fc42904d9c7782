#pragma once

#include "egc/layer.hpp"
#include "egc/objective.hpp"

#include <iosfwd>
#include <string>

namespace egc {

struct ModelConfig {
  int map_rows = 32;
  int map_cols = 32;
  int kernel_rows = 7;
  int kernel_cols = 7;
  int heads = 3;
  int layers = 3;
  Activation hidden_act = Activation::relu;
  Activation final_act = Activation::identity;
  bool tied = false;            // shared-weight ablation: one kernel per layer
  bool pointer_softmax = true;  // false keeps raw pointer logits as weights
  double init_noise = 0.01;

  void validate() const;
};

/// Affine map from the pooled input statistics (per-channel mean and max,
/// length 2K) to one logit per head.
struct PointerParams {
  Matrix weight;  // M×2K
  Vector bias;    // M
};

/// Multi-head refinement model: M independent stacks of L edge-aware layers
/// over a shared skeleton, fused by the pointer weights.
struct RefineModel {
  ModelConfig config;
  SkeletonGraph graph;
  GraphMatrices mats;
  std::vector<std::vector<EdgeKernelBank>> banks;  // [head][layer]
  PointerParams pointer;

  int head_count() const { return config.heads; }
  int layer_count() const { return config.layers; }
};

RefineModel init_model(const ModelConfig& config, const SkeletonGraph& graph, std::uint64_t seed);

/// Per-channel mean followed by per-channel max of the input stack.
Vector pooled_features(const MapStack& x);

struct ModelCache {
  MapStack input;
  Vector features;
  Vector logits;
  Vector weights;
  std::vector<std::vector<LayerCache>> layer_caches;  // [head][layer]
  std::vector<MapStack> head_outputs;
};

struct ModelOutput {
  std::vector<MapStack> head_outputs;  // M stacks of K maps
  Vector weights;                      // M
  MapStack fused;                      // K maps
};

ModelOutput model_forward(const RefineModel& model, const MapStack& x0,
                          ModelCache* cache = nullptr);

/// Pixelwise weighted sum of the head outputs.
MapStack fuse(const std::vector<MapStack>& head_outputs, const Vector& weights);

/// Per channel, the (x, y) of the maximum value. Ties break to the first
/// occurrence in row-major scan order.
std::vector<Point2> decode_argmax(const MapStack& maps);

struct ModelGrads {
  std::vector<std::vector<MapStack>> d_banks;  // [head][layer][edge]
  Matrix d_pointer_weight;
  Vector d_pointer_bias;
};

/// Exact parameter gradients given d(loss)/d(fused output).
ModelGrads model_backward(const RefineModel& model, const ModelCache& cache,
                          const MapStack& d_fused);

// --- Flat parameter view ---------------------------------------------------
// Canonical order: heads outer, layers inner, kernels in edge order (each
// row-major), pointer weight row-major, pointer bias. A tied bank contributes
// one kernel to the flat vector (its true degrees of freedom) even though it
// stores |E| identical slices.

struct ParamGroup {
  std::string name;
  Eigen::Index offset = 0;
  Eigen::Index size = 0;
};

Eigen::Index param_count(const RefineModel& model);
Vector flatten_params(const RefineModel& model);
void set_params(RefineModel& model, const Vector& flat);
Vector flatten_grads(const RefineModel& model, const ModelGrads& grads);
std::vector<ParamGroup> param_groups(const RefineModel& model);

// --- Serialization -----------------------------------------------------------
// Single binary blob: magic, version, graph hash, config block, parameter
// tensors in canonical order, little-endian doubles. Round-trips bit-exactly.

void save_model(std::ostream& os, const RefineModel& model);
void save_model_file(const std::string& path, const RefineModel& model);

/// Rebuilds the model against `graph`; the stored graph hash must match.
RefineModel load_model(std::istream& is, const SkeletonGraph& graph);
RefineModel load_model_file(const std::string& path, const SkeletonGraph& graph);

}  // namespace egc
