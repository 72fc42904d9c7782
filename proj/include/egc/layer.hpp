#pragma once

#include "egc/conv.hpp"
#include "egc/graph.hpp"

namespace egc {

/// One learnable 2D kernel per directed edge, indexed in the canonical edge
/// order of the owning graph. When `tied` is set all slices stay bit-identical
/// (the shared-weight ablation) and gradients are summed then replicated.
struct EdgeKernelBank {
  MapStack kernels;
  bool tied = false;

  int edge_count() const { return static_cast<int>(kernels.size()); }
};

/// Intermediates saved by the forward pass for the exact backward pass.
struct LayerCache {
  MapStack input;    // K node maps as seen by the layer
  MapStack preact;   // K aggregated maps before the activation
};

/// Edge-aware graph convolution: gather each edge's start-node map, convolve
/// with that edge's kernel, average into the end node by in-degree, then
/// apply the activation. Equivalent to act(aggregate · ((broadcast · X) ⊛̃ F)).
MapStack layer_forward(const MapStack& x, const EdgeKernelBank& bank, const GraphMatrices& mats,
                       Activation act, LayerCache* cache = nullptr);

struct LayerGrads {
  MapStack d_input;    // K maps
  MapStack d_kernels;  // |E| kernels
};

/// Exact gradients through activation, aggregation, per-edge convolution and
/// broadcast. Requires the cache of the matching forward call. Pass
/// `need_input_grad = false` for the first layer of a stack, where d_input
/// has no consumer.
LayerGrads layer_backward(const LayerCache& cache, const EdgeKernelBank& bank,
                          const GraphMatrices& mats, Activation act, const MapStack& d_out,
                          bool need_input_grad = true);

/// Flattened-feature baseline layer: act(a_norm · h · w). Reference only,
/// not part of the trained model.
struct VanillaGcnParams {
  Matrix a_norm;  // K×K symmetric-normalized adjacency
  Matrix weight;  // M_in×M_out
};

Matrix vanilla_gcn_forward(const Matrix& h, const VanillaGcnParams& params, Activation act);

/// Identity-preserving initialization: self-loop kernels get a centered delta,
/// cross-edge kernels start at zero, and every tap receives N(0, noise_std²)
/// jitter. With this start the untrained stack approximately preserves its
/// input maps. For a tied bank the shared kernel is a noisy delta.
EdgeKernelBank init_kernel_bank(const GraphMatrices& mats, Eigen::Index kernel_rows,
                                Eigen::Index kernel_cols, bool tied, double noise_std,
                                std::uint64_t seed);

}  // namespace egc
