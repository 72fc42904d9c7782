#include "egc/layer.hpp"
#include "egc/rng.hpp"

#include <doctest.h>

#include "oracles.hpp"

#include <map>

using namespace egc;

namespace {

Matrix delta_kernel(Eigen::Index rows, Eigen::Index cols) {
  Matrix k = Matrix::Zero(rows, cols);
  k(rows / 2, cols / 2) = 1.0;
  return k;
}

EdgeKernelBank delta_bank(const GraphMatrices& mats, Eigen::Index kh, Eigen::Index kw) {
  EdgeKernelBank bank;
  bank.kernels.assign(std::size_t(mats.edge_count()), delta_kernel(kh, kw));
  return bank;
}

MapStack random_stack(int channels, Eigen::Index h, Eigen::Index w, Pcg32& rng) {
  MapStack x;
  for (int c = 0; c < channels; ++c) x.push_back(oracle::random_matrix(h, w, rng, 0.0, 1.0));
  return x;
}

Matrix chain_adjacency(int k) {
  Matrix a = Matrix::Identity(k, k);
  for (int i = 0; i + 1 < k; ++i) a(i, i + 1) = a(i + 1, i) = 1.0;
  return a;
}

}  // namespace

TEST_CASE("layer_forward: self-loop-only graph with delta kernels is the identity") {
  Pcg32 rng(1);
  GraphMatrices mats = construct_matrices(Matrix::Identity(3, 3));
  MapStack x = random_stack(3, 6, 6, rng);
  MapStack y = layer_forward(x, delta_bank(mats, 3, 3), mats, Activation::identity);
  CHECK(oracle::max_abs_diff(y, x) == 0.0);
}

TEST_CASE("layer_forward: 2-node full graph averages neighbors") {
  GraphMatrices mats = construct_matrices(Matrix::Ones(2, 2));
  MapStack x = {Matrix::Ones(4, 4), Matrix::Zero(4, 4)};
  MapStack y = layer_forward(x, delta_bank(mats, 3, 3), mats, Activation::identity);
  for (int c = 0; c < 2; ++c)
    CHECK(oracle::max_abs_diff(y[std::size_t(c)], Matrix::Constant(4, 4, 0.5)) == 0.0);
}

TEST_CASE("layer_forward: matches the naive per-edge oracle on random graphs") {
  Pcg32 rng(17);
  for (int it = 0; it < 20; ++it) {
    const int k = 2 + int(rng.uniform_int(7));
    const Eigen::Index h = 4 + Eigen::Index(rng.uniform_int(9));
    const Eigen::Index w = 4 + Eigen::Index(rng.uniform_int(9));
    Matrix a = oracle::random_adjacency(k, rng);
    GraphMatrices mats = construct_matrices(a);
    MapStack x = random_stack(k, h, w, rng);
    EdgeKernelBank bank;
    for (int e = 0; e < mats.edge_count(); ++e)
      bank.kernels.push_back(oracle::random_matrix(3, 3, rng));
    const bool relu = it % 2 == 0;
    MapStack mine = layer_forward(x, bank, mats, relu ? Activation::relu : Activation::identity);
    MapStack ref = oracle::naive_edge_layer(x, a, bank.kernels, relu);
    CHECK(oracle::max_abs_diff(mine, ref) < 1e-12);
  }
}

TEST_CASE("layer_forward: equivariant under node permutation") {
  Pcg32 rng(23);
  const int k = 5;
  Matrix a = oracle::random_adjacency(k, rng);
  GraphMatrices mats = construct_matrices(a);
  MapStack x = random_stack(k, 6, 6, rng);
  // Kernels keyed by (start, end) so both graphs use the same weights.
  std::map<std::pair<int, int>, Matrix> kernel_by_edge;
  for (int e = 0; e < mats.edge_count(); ++e)
    kernel_by_edge[mats.edge_order[std::size_t(e)]] = oracle::random_matrix(3, 3, rng);

  std::vector<int> perm = {3, 0, 4, 1, 2};
  Matrix ap = Matrix::Zero(k, k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) ap(perm[std::size_t(i)], perm[std::size_t(j)]) = a(i, j);
  GraphMatrices mats_p = construct_matrices(ap);
  MapStack xp(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) xp[std::size_t(perm[std::size_t(i)])] = x[std::size_t(i)];

  EdgeKernelBank bank, bank_p;
  for (int e = 0; e < mats.edge_count(); ++e)
    bank.kernels.push_back(kernel_by_edge.at(mats.edge_order[std::size_t(e)]));
  for (int e = 0; e < mats_p.edge_count(); ++e) {
    auto [s, t] = mats_p.edge_order[std::size_t(e)];
    int s0 = -1, t0 = -1;
    for (int i = 0; i < k; ++i) {
      if (perm[std::size_t(i)] == s) s0 = i;
      if (perm[std::size_t(i)] == t) t0 = i;
    }
    bank_p.kernels.push_back(kernel_by_edge.at({s0, t0}));
  }

  MapStack y = layer_forward(x, bank, mats, Activation::relu);
  MapStack yp = layer_forward(xp, bank_p, mats_p, Activation::relu);
  // Edge scan order changes under relabeling, so sums may round differently.
  for (int i = 0; i < k; ++i)
    CHECK(oracle::max_abs_diff(yp[std::size_t(perm[std::size_t(i)])], y[std::size_t(i)]) < 1e-12);
}

TEST_CASE("layer_forward: shape validation") {
  GraphMatrices mats = construct_matrices(Matrix::Identity(3, 3));
  MapStack wrong_channels(2, Matrix::Ones(4, 4));
  CHECK_THROWS_AS(layer_forward(wrong_channels, delta_bank(mats, 3, 3), mats, Activation::relu),
                  ShapeError);
  EdgeKernelBank short_bank;
  short_bank.kernels.assign(2, Matrix::Ones(3, 3));
  MapStack x(3, Matrix::Ones(4, 4));
  CHECK_THROWS_AS(layer_forward(x, short_bank, mats, Activation::relu), ShapeError);
}

TEST_CASE("layer_backward: zero cotangent and identity path") {
  Pcg32 rng(31);
  GraphMatrices mats = construct_matrices(Matrix::Identity(4, 4));
  MapStack x = random_stack(4, 5, 5, rng);
  EdgeKernelBank bank = delta_bank(mats, 3, 3);
  LayerCache cache;
  layer_forward(x, bank, mats, Activation::identity, &cache);

  MapStack zeros(4, Matrix::Zero(5, 5));
  LayerGrads g0 = layer_backward(cache, bank, mats, Activation::identity, zeros);
  for (const auto& m : g0.d_input) CHECK(m.cwiseAbs().maxCoeff() == 0.0);
  for (const auto& m : g0.d_kernels) CHECK(m.cwiseAbs().maxCoeff() == 0.0);

  MapStack d_out = random_stack(4, 5, 5, rng);
  LayerGrads g = layer_backward(cache, bank, mats, Activation::identity, d_out);
  CHECK(oracle::max_abs_diff(g.d_input, d_out) == 0.0);
}

TEST_CASE("layer_backward: stale cache is a contract error") {
  Pcg32 rng(32);
  GraphMatrices mats = construct_matrices(Matrix::Identity(4, 4));
  MapStack x = random_stack(4, 5, 5, rng);
  EdgeKernelBank bank = delta_bank(mats, 3, 3);
  LayerCache cache;
  layer_forward(x, bank, mats, Activation::identity, &cache);
  GraphMatrices other = construct_matrices(Matrix::Identity(5, 5));
  MapStack d_out(5, Matrix::Zero(5, 5));
  EdgeKernelBank bank5 = delta_bank(other, 3, 3);
  CHECK_THROWS_AS(layer_backward(cache, bank5, other, Activation::identity, d_out), ContractError);
}

TEST_CASE("layer_backward: finite-difference check through a chain graph") {
  Pcg32 rng(37);
  const int k = 4;
  const Eigen::Index h = 6, w = 6, kh = 3, kw = 3;
  Matrix a = chain_adjacency(k);
  GraphMatrices mats = construct_matrices(a);
  MapStack x = random_stack(k, h, w, rng);
  EdgeKernelBank bank;
  for (int e = 0; e < mats.edge_count(); ++e)
    bank.kernels.push_back(oracle::random_matrix(kh, kw, rng));
  MapStack d_out = random_stack(k, h, w, rng);

  for (Activation act : {Activation::identity, Activation::relu}) {
    LayerCache cache;
    layer_forward(x, bank, mats, act, &cache);
    LayerGrads g = layer_backward(cache, bank, mats, act, d_out);

    auto objective_kernels = [&](const Vector& flat) {
      EdgeKernelBank b2 = bank;
      Eigen::Index at = 0;
      for (auto& kern : b2.kernels)
        for (Eigen::Index i = 0; i < kern.size(); ++i) kern.data()[i] = flat(at++);
      MapStack out = layer_forward(x, b2, mats, act);
      double acc = 0.0;
      for (int c = 0; c < k; ++c)
        acc += (out[std::size_t(c)].array() * d_out[std::size_t(c)].array()).sum();
      return acc;
    };
    const Eigen::Index nk = Eigen::Index(mats.edge_count()) * kh * kw;
    Vector flat_k(nk), flat_dk(nk);
    Eigen::Index at = 0;
    for (int e = 0; e < mats.edge_count(); ++e)
      for (Eigen::Index i = 0; i < kh * kw; ++i, ++at) {
        flat_k(at) = bank.kernels[std::size_t(e)].data()[i];
        flat_dk(at) = g.d_kernels[std::size_t(e)].data()[i];
      }
    Vector fd = oracle::finite_difference(objective_kernels, flat_k, 1e-6);
    CHECK(oracle::max_rel_error(flat_dk, fd) < 1e-6);

    auto objective_x = [&](const Vector& flat) {
      MapStack x2 = x;
      Eigen::Index at2 = 0;
      for (auto& m : x2)
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = flat(at2++);
      MapStack out = layer_forward(x2, bank, mats, act);
      double acc = 0.0;
      for (int c = 0; c < k; ++c)
        acc += (out[std::size_t(c)].array() * d_out[std::size_t(c)].array()).sum();
      return acc;
    };
    Vector flat_x(k * h * w), flat_dx(k * h * w);
    at = 0;
    for (int c = 0; c < k; ++c)
      for (Eigen::Index i = 0; i < h * w; ++i, ++at) {
        flat_x(at) = x[std::size_t(c)].data()[i];
        flat_dx(at) = g.d_input[std::size_t(c)].data()[i];
      }
    Vector fdx = oracle::finite_difference(objective_x, flat_x, 1e-6);
    CHECK(oracle::max_rel_error(flat_dx, fdx) < 1e-6);
  }
}

TEST_CASE("tied bank: matches a dedicated shared-kernel implementation exactly") {
  Pcg32 rng(41);
  const int k = 5;
  Matrix a = oracle::random_adjacency(k, rng);
  GraphMatrices mats = construct_matrices(a);
  MapStack x = random_stack(k, 7, 7, rng);
  Matrix shared = oracle::random_matrix(3, 3, rng);

  EdgeKernelBank tied;
  tied.tied = true;
  tied.kernels.assign(std::size_t(mats.edge_count()), shared);
  MapStack via_bank = layer_forward(x, tied, mats, Activation::relu);

  // Dedicated shared-kernel path: convolve each node map once, then average
  // into the end nodes.
  MapStack conved;
  for (int i = 0; i < k; ++i) conved.push_back(oracle::naive_conv2d(x[std::size_t(i)], shared));
  MapStack dedicated(std::size_t(k), Matrix::Zero(7, 7));
  for (int e = 0; e < mats.edge_count(); ++e) {
    auto [s, t] = mats.edge_order[std::size_t(e)];
    dedicated[std::size_t(t)] += conved[std::size_t(s)] / double(mats.in_degree[std::size_t(t)]);
  }
  for (auto& m : dedicated) m = m.cwiseMax(0.0);
  CHECK(oracle::max_abs_diff(via_bank, dedicated) < 1e-12);
}

TEST_CASE("tied bank: gradient is the summed shared gradient, replicated") {
  Pcg32 rng(43);
  const int k = 4;
  Matrix a = chain_adjacency(k);
  GraphMatrices mats = construct_matrices(a);
  MapStack x = random_stack(k, 5, 5, rng);
  Matrix shared = oracle::random_matrix(3, 3, rng);

  EdgeKernelBank tied;
  tied.tied = true;
  tied.kernels.assign(std::size_t(mats.edge_count()), shared);
  EdgeKernelBank untied = tied;
  untied.tied = false;

  MapStack d_out = random_stack(k, 5, 5, rng);
  LayerCache c1, c2;
  layer_forward(x, tied, mats, Activation::identity, &c1);
  layer_forward(x, untied, mats, Activation::identity, &c2);
  LayerGrads g_tied = layer_backward(c1, tied, mats, Activation::identity, d_out);
  LayerGrads g_untied = layer_backward(c2, untied, mats, Activation::identity, d_out);

  Matrix sum = Matrix::Zero(3, 3);
  for (const auto& dk : g_untied.d_kernels) sum += dk;
  for (const auto& dk : g_tied.d_kernels) CHECK(oracle::max_abs_diff(dk, sum) == 0.0);
}

TEST_CASE("init_kernel_bank: identity-preserving start") {
  GraphMatrices mats = construct_matrices(chain_adjacency(4));
  EdgeKernelBank bank = init_kernel_bank(mats, 3, 3, false, 0.0, 9);
  Pcg32 rng(2);
  MapStack x = random_stack(4, 6, 6, rng);
  // Noise-free identity init: each node keeps its own map scaled by its
  // in-degree, so argmax structure survives a full stack.
  MapStack y = layer_forward(x, bank, mats, Activation::identity);
  for (int i = 0; i < 4; ++i) {
    Matrix expected = x[std::size_t(i)] / double(mats.in_degree[std::size_t(i)]);
    CHECK(oracle::max_abs_diff(y[std::size_t(i)], expected) < 1e-15);
  }

  EdgeKernelBank tied = init_kernel_bank(mats, 3, 3, true, 0.01, 9);
  CHECK(tied.tied);
  for (const auto& kern : tied.kernels) CHECK(oracle::max_abs_diff(kern, tied.kernels[0]) == 0.0);

  CHECK_THROWS_AS(init_kernel_bank(mats, 4, 4, false, 0.0, 1), ShapeError);
}

TEST_CASE("vanilla_gcn_forward: reference semantics") {
  VanillaGcnParams p;
  p.a_norm = Matrix::Identity(3, 3);
  p.weight = Matrix::Identity(4, 4);
  Pcg32 rng(3);
  Matrix h = oracle::random_matrix(3, 4, rng);
  CHECK(oracle::max_abs_diff(vanilla_gcn_forward(h, p, Activation::identity), h) == 0.0);

  VanillaGcnParams scalar;
  scalar.a_norm = Matrix::Identity(1, 1);
  scalar.weight = Matrix::Constant(1, 1, 3.0);
  Matrix h1 = Matrix::Constant(1, 1, 2.0);
  CHECK(vanilla_gcn_forward(h1, scalar, Activation::identity)(0, 0) == doctest::Approx(6.0));

  // Against an explicit two-step multiply.
  Matrix a = symmetric_normalize(chain_adjacency(3));
  VanillaGcnParams q;
  q.a_norm = a;
  q.weight = oracle::random_matrix(4, 2, rng);
  Matrix h3 = oracle::random_matrix(3, 4, rng);
  Matrix hw = h3 * q.weight;
  Matrix expected = (a * hw).cwiseMax(0.0);
  CHECK(oracle::max_abs_diff(vanilla_gcn_forward(h3, q, Activation::relu), expected) < 1e-14);

  CHECK_THROWS_AS(vanilla_gcn_forward(Matrix::Ones(3, 5), q, Activation::relu), ShapeError);
}
