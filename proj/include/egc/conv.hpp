#pragma once

#include "egc/common.hpp"

#include <string>
#include <utility>

namespace egc {

enum class Activation { identity, relu };

Activation activation_from_string(const std::string& name);
std::string to_string(Activation kind);

/// Same-size 2D convolution with zero padding outside the input:
///   out(y, x) = sum_{u,v} in(y + u - ch, x + v - cw) * kernel(u, v)
/// with (ch, cw) the kernel center. Internally this is cross-correlation;
/// the orientation is fixed by the formula above and is what serialized
/// kernels mean. Kernel extents must be odd so the center is well defined.
Matrix conv2d_same(const Matrix& input, const Matrix& kernel);

/// out += scale * conv2d_same(input, kernel). `out` must already have the
/// input's shape. This is the hot path of the edge-aware layer.
void conv2d_same_accum(const Matrix& input, const Matrix& kernel, double scale, Matrix& out);

/// Gradient of conv2d_same w.r.t. the input: correlation of d_out with the
/// flipped kernel, respecting the same zero padding.
Matrix conv2d_input_grad(const Matrix& d_out, const Matrix& kernel);
void conv2d_input_grad_accum(const Matrix& d_out, const Matrix& kernel, double scale, Matrix& out);

/// Gradient of conv2d_same w.r.t. the kernel: valid-mode correlation of the
/// input with d_out restricted to kernel support.
Matrix conv2d_kernel_grad(const Matrix& input, const Matrix& d_out, Eigen::Index kernel_rows,
                          Eigen::Index kernel_cols);
void conv2d_kernel_grad_accum(const Matrix& input, const Matrix& d_out, double scale, Matrix& out);

/// Channel-wise convolution: output channel c = conv2d_same(x[c], kernels[c]).
/// Channels never mix.
MapStack conv2d_channelwise(const MapStack& x, const MapStack& kernels);

/// Exact gradients of sum(d_out ⊙ conv2d_channelwise(x, kernels)) w.r.t.
/// x and kernels.
std::pair<MapStack, MapStack> conv2d_channelwise_grads(const MapStack& x, const MapStack& kernels,
                                                       const MapStack& d_out);

Matrix apply_activation(Activation kind, const Matrix& x);
void apply_activation_inplace(Activation kind, Matrix& x);

/// Backward through the activation given the pre-activation values.
/// ReLU uses subgradient 0 at exactly 0.
Matrix activation_grad(Activation kind, const Matrix& preact, const Matrix& d_out);

/// Numerically stable softmax (max subtraction). Outputs are positive and
/// sum to 1 within 1e-12.
Vector softmax(const Vector& v);

}  // namespace egc
