#include "egc/layer.hpp"

#include "egc/rng.hpp"

namespace egc {

namespace {

void check_layer_shapes(const MapStack& x, const EdgeKernelBank& bank, const GraphMatrices& mats) {
  const int k = mats.node_count();
  if (static_cast<int>(x.size()) != k)
    throw ShapeError("layer: expected " + std::to_string(k) + " node maps, got " +
                     std::to_string(x.size()));
  if (bank.edge_count() != mats.edge_count())
    throw ShapeError("layer: kernel bank has " + std::to_string(bank.edge_count()) +
                     " kernels, graph has " + std::to_string(mats.edge_count()) + " edges");
  for (std::size_t c = 1; c < x.size(); ++c)
    if (x[c].rows() != x[0].rows() || x[c].cols() != x[0].cols())
      throw ShapeError("layer: node maps must share one shape");
}

}  // namespace

MapStack layer_forward(const MapStack& x, const EdgeKernelBank& bank, const GraphMatrices& mats,
                       Activation act, LayerCache* cache) {
  check_layer_shapes(x, bank, mats);
  const int k = mats.node_count();
  const Eigen::Index h = x[0].rows(), w = x[0].cols();

  MapStack preact(k, Matrix::Zero(h, w));
  for (int e = 0; e < mats.edge_count(); ++e) {
    const auto [start, end] = mats.edge_order[e];
    conv2d_same_accum(x[start], bank.kernels[e], 1.0 / mats.in_degree[end], preact[end]);
  }

  MapStack out;
  out.reserve(k);
  for (int i = 0; i < k; ++i) out.push_back(apply_activation(act, preact[i]));

  if (cache) {
    cache->input = x;
    cache->preact = std::move(preact);
  }
  return out;
}

LayerGrads layer_backward(const LayerCache& cache, const EdgeKernelBank& bank,
                          const GraphMatrices& mats, Activation act, const MapStack& d_out,
                          bool need_input_grad) {
  const int k = mats.node_count();
  if (static_cast<int>(cache.input.size()) != k || static_cast<int>(cache.preact.size()) != k)
    throw ContractError("layer_backward: cache does not match this graph");
  if (static_cast<int>(d_out.size()) != k)
    throw ShapeError("layer_backward: d_out channel count mismatch");
  check_layer_shapes(cache.input, bank, mats);
  if (cache.preact[0].rows() != cache.input[0].rows() ||
      cache.preact[0].cols() != cache.input[0].cols())
    throw ContractError("layer_backward: stale cache (shape drift)");

  const Eigen::Index h = cache.input[0].rows(), w = cache.input[0].cols();
  const Eigen::Index kh = bank.kernels[0].rows(), kw = bank.kernels[0].cols();

  // Through the activation.
  MapStack d_pre;
  d_pre.reserve(k);
  for (int i = 0; i < k; ++i) d_pre.push_back(activation_grad(act, cache.preact[i], d_out[i]));

  LayerGrads grads;
  if (need_input_grad) grads.d_input.assign(k, Matrix::Zero(h, w));
  grads.d_kernels.assign(mats.edge_count(), Matrix::Zero(kh, kw));

  // Through aggregation (transpose of the row-normalized matrix), the
  // per-edge convolution, and the broadcast (transpose of B).
  for (int e = 0; e < mats.edge_count(); ++e) {
    const auto [start, end] = mats.edge_order[e];
    const double scale = 1.0 / mats.in_degree[end];
    if (need_input_grad)
      conv2d_input_grad_accum(d_pre[end], bank.kernels[e], scale, grads.d_input[start]);
    conv2d_kernel_grad_accum(cache.input[start], d_pre[end], scale, grads.d_kernels[e]);
  }

  if (bank.tied) {
    Matrix shared = Matrix::Zero(kh, kw);
    for (const auto& g : grads.d_kernels) shared += g;
    for (auto& g : grads.d_kernels) g = shared;
  }
  return grads;
}

Matrix vanilla_gcn_forward(const Matrix& h, const VanillaGcnParams& params, Activation act) {
  if (params.a_norm.rows() != params.a_norm.cols())
    throw ShapeError("vanilla_gcn_forward: a_norm must be square");
  if (h.rows() != params.a_norm.rows())
    throw ShapeError("vanilla_gcn_forward: feature rows must match node count");
  if (h.cols() != params.weight.rows())
    throw ShapeError("vanilla_gcn_forward: feature width " + std::to_string(h.cols()) +
                     " does not match weight rows " + std::to_string(params.weight.rows()));
  Matrix out = params.a_norm * h * params.weight;
  apply_activation_inplace(act, out);
  return out;
}

EdgeKernelBank init_kernel_bank(const GraphMatrices& mats, Eigen::Index kernel_rows,
                                Eigen::Index kernel_cols, bool tied, double noise_std,
                                std::uint64_t seed) {
  if (kernel_rows % 2 == 0 || kernel_cols % 2 == 0)
    throw ShapeError("init_kernel_bank: kernel extents must be odd");
  EdgeKernelBank bank;
  bank.tied = tied;
  bank.kernels.reserve(mats.edge_count());
  Pcg32 rng(seed);
  if (tied) {
    Matrix shared = Matrix::Zero(kernel_rows, kernel_cols);
    shared(kernel_rows / 2, kernel_cols / 2) = 1.0;
    for (Eigen::Index u = 0; u < kernel_rows; ++u)
      for (Eigen::Index v = 0; v < kernel_cols; ++v) shared(u, v) += noise_std * rng.normal();
    bank.kernels.assign(mats.edge_count(), shared);
    return bank;
  }
  for (int e = 0; e < mats.edge_count(); ++e) {
    const auto [start, end] = mats.edge_order[e];
    Matrix kern = Matrix::Zero(kernel_rows, kernel_cols);
    if (start == end) kern(kernel_rows / 2, kernel_cols / 2) = 1.0;
    for (Eigen::Index u = 0; u < kernel_rows; ++u)
      for (Eigen::Index v = 0; v < kernel_cols; ++v) kern(u, v) += noise_std * rng.normal();
    bank.kernels.push_back(std::move(kern));
  }
  return bank;
}

}  // namespace egc
