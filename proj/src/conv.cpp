#include "egc/conv.hpp"

#include <algorithm>
#include <cmath>

namespace egc {

namespace {

void check_kernel_extents(const Matrix& kernel) {
  if (kernel.rows() < 1 || kernel.cols() < 1)
    throw ShapeError("conv2d: kernel must be non-empty");
  if (kernel.rows() % 2 == 0 || kernel.cols() % 2 == 0)
    throw ShapeError("conv2d: kernel extents must be odd, got " + std::to_string(kernel.rows()) +
                     "x" + std::to_string(kernel.cols()));
}

void check_input(const Matrix& input) {
  if (input.rows() < 1 || input.cols() < 1) throw ShapeError("conv2d: input must be non-empty");
}

}  // namespace

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "identity") return Activation::identity;
  throw ConfigError("unknown activation kind '" + name + "' (expected relu|identity)");
}

std::string to_string(Activation kind) {
  switch (kind) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
  }
  throw ConfigError("unknown activation kind");
}

void conv2d_same_accum(const Matrix& input, const Matrix& kernel, double scale, Matrix& out) {
  check_input(input);
  check_kernel_extents(kernel);
  if (out.rows() != input.rows() || out.cols() != input.cols())
    throw ShapeError("conv2d_same_accum: output shape must match input shape");

  const Eigen::Index h = input.rows(), w = input.cols();
  const Eigen::Index kh = kernel.rows(), kw = kernel.cols();
  const Eigen::Index ch = kh / 2, cw = kw / 2;

  for (Eigen::Index u = 0; u < kh; ++u) {
    const Eigen::Index dy = u - ch;
    const Eigen::Index y0 = std::max<Eigen::Index>(0, -dy);
    const Eigen::Index y1 = std::min<Eigen::Index>(h, h - dy);
    if (y1 <= y0) continue;
    for (Eigen::Index v = 0; v < kw; ++v) {
      const double c = scale * kernel(u, v);
      if (c == 0.0) continue;
      const Eigen::Index dx = v - cw;
      const Eigen::Index x0 = std::max<Eigen::Index>(0, -dx);
      const Eigen::Index x1 = std::min<Eigen::Index>(w, w - dx);
      if (x1 <= x0) continue;
      const Eigen::Index n = x1 - x0;
      for (Eigen::Index y = y0; y < y1; ++y) {
        double* o = out.data() + y * w + x0;
        const double* in = input.data() + (y + dy) * w + (x0 + dx);
        for (Eigen::Index t = 0; t < n; ++t) o[t] += c * in[t];
      }
    }
  }
}

Matrix conv2d_same(const Matrix& input, const Matrix& kernel) {
  Matrix out = Matrix::Zero(input.rows(), input.cols());
  conv2d_same_accum(input, kernel, 1.0, out);
  return out;
}

void conv2d_input_grad_accum(const Matrix& d_out, const Matrix& kernel, double scale, Matrix& out) {
  check_input(d_out);
  check_kernel_extents(kernel);
  if (out.rows() != d_out.rows() || out.cols() != d_out.cols())
    throw ShapeError("conv2d_input_grad_accum: output shape must match d_out shape");

  const Eigen::Index h = d_out.rows(), w = d_out.cols();
  const Eigen::Index kh = kernel.rows(), kw = kernel.cols();
  const Eigen::Index ch = kh / 2, cw = kw / 2;

  // d_in(y, x) = sum_{u,v} kernel(u, v) * d_out(y - (u - ch), x - (v - cw)):
  // the forward loop with negated offsets.
  for (Eigen::Index u = 0; u < kh; ++u) {
    const Eigen::Index dy = ch - u;
    const Eigen::Index y0 = std::max<Eigen::Index>(0, -dy);
    const Eigen::Index y1 = std::min<Eigen::Index>(h, h - dy);
    if (y1 <= y0) continue;
    for (Eigen::Index v = 0; v < kw; ++v) {
      const double c = scale * kernel(u, v);
      if (c == 0.0) continue;
      const Eigen::Index dx = cw - v;
      const Eigen::Index x0 = std::max<Eigen::Index>(0, -dx);
      const Eigen::Index x1 = std::min<Eigen::Index>(w, w - dx);
      if (x1 <= x0) continue;
      const Eigen::Index n = x1 - x0;
      for (Eigen::Index y = y0; y < y1; ++y) {
        double* o = out.data() + y * w + x0;
        const double* g = d_out.data() + (y + dy) * w + (x0 + dx);
        for (Eigen::Index t = 0; t < n; ++t) o[t] += c * g[t];
      }
    }
  }
}

Matrix conv2d_input_grad(const Matrix& d_out, const Matrix& kernel) {
  Matrix out = Matrix::Zero(d_out.rows(), d_out.cols());
  conv2d_input_grad_accum(d_out, kernel, 1.0, out);
  return out;
}

void conv2d_kernel_grad_accum(const Matrix& input, const Matrix& d_out, double scale, Matrix& out) {
  check_input(input);
  check_kernel_extents(out);
  if (input.rows() != d_out.rows() || input.cols() != d_out.cols())
    throw ShapeError("conv2d_kernel_grad_accum: input and d_out shapes must match");

  const Eigen::Index h = input.rows(), w = input.cols();
  const Eigen::Index kh = out.rows(), kw = out.cols();
  const Eigen::Index ch = kh / 2, cw = kw / 2;

  for (Eigen::Index u = 0; u < kh; ++u) {
    const Eigen::Index dy = u - ch;
    const Eigen::Index y0 = std::max<Eigen::Index>(0, -dy);
    const Eigen::Index y1 = std::min<Eigen::Index>(h, h - dy);
    for (Eigen::Index v = 0; v < kw; ++v) {
      const Eigen::Index dx = v - cw;
      const Eigen::Index x0 = std::max<Eigen::Index>(0, -dx);
      const Eigen::Index x1 = std::min<Eigen::Index>(w, w - dx);
      double sum = 0.0;
      if (y1 > y0 && x1 > x0) {
        const Eigen::Index n = x1 - x0;
        for (Eigen::Index y = y0; y < y1; ++y) {
          Eigen::Map<const Vector> g(d_out.data() + y * w + x0, n);
          Eigen::Map<const Vector> in(input.data() + (y + dy) * w + (x0 + dx), n);
          sum += g.dot(in);
        }
      }
      out(u, v) += scale * sum;
    }
  }
}

Matrix conv2d_kernel_grad(const Matrix& input, const Matrix& d_out, Eigen::Index kernel_rows,
                          Eigen::Index kernel_cols) {
  Matrix out = Matrix::Zero(kernel_rows, kernel_cols);
  conv2d_kernel_grad_accum(input, d_out, 1.0, out);
  return out;
}

MapStack conv2d_channelwise(const MapStack& x, const MapStack& kernels) {
  if (x.size() != kernels.size())
    throw ShapeError("conv2d_channelwise: channel mismatch, " + std::to_string(x.size()) +
                     " maps vs " + std::to_string(kernels.size()) + " kernels");
  MapStack out;
  out.reserve(x.size());
  for (std::size_t c = 0; c < x.size(); ++c) out.push_back(conv2d_same(x[c], kernels[c]));
  return out;
}

std::pair<MapStack, MapStack> conv2d_channelwise_grads(const MapStack& x, const MapStack& kernels,
                                                       const MapStack& d_out) {
  if (x.size() != kernels.size() || x.size() != d_out.size())
    throw ShapeError("conv2d_channelwise_grads: channel mismatch");
  MapStack dx, dk;
  dx.reserve(x.size());
  dk.reserve(x.size());
  for (std::size_t c = 0; c < x.size(); ++c) {
    if (d_out[c].rows() != x[c].rows() || d_out[c].cols() != x[c].cols())
      throw ShapeError("conv2d_channelwise_grads: d_out shape mismatch at channel " +
                       std::to_string(c));
    dx.push_back(conv2d_input_grad(d_out[c], kernels[c]));
    dk.push_back(conv2d_kernel_grad(x[c], d_out[c], kernels[c].rows(), kernels[c].cols()));
  }
  return {std::move(dx), std::move(dk)};
}

Matrix apply_activation(Activation kind, const Matrix& x) {
  switch (kind) {
    case Activation::identity: return x;
    case Activation::relu: return x.cwiseMax(0.0);
  }
  throw ConfigError("unknown activation kind");
}

void apply_activation_inplace(Activation kind, Matrix& x) {
  switch (kind) {
    case Activation::identity: return;
    case Activation::relu: x = x.cwiseMax(0.0); return;
  }
  throw ConfigError("unknown activation kind");
}

Matrix activation_grad(Activation kind, const Matrix& preact, const Matrix& d_out) {
  if (preact.rows() != d_out.rows() || preact.cols() != d_out.cols())
    throw ShapeError("activation_grad: shape mismatch");
  switch (kind) {
    case Activation::identity: return d_out;
    case Activation::relu:
      return (preact.array() > 0.0).select(d_out, Matrix::Zero(d_out.rows(), d_out.cols()));
  }
  throw ConfigError("unknown activation kind");
}

Vector softmax(const Vector& v) {
  if (v.size() == 0) throw ShapeError("softmax: empty vector");
  const double m = v.maxCoeff();
  Vector e = (v.array() - m).exp();
  return e / e.sum();
}

}  // namespace egc
