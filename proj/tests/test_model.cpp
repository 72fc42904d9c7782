#include "egc/model.hpp"
#include "egc/rng.hpp"

#include <doctest.h>

#include "oracles.hpp"

#include <sstream>

using namespace egc;

namespace {

SkeletonGraph chain_graph(int k) {
  SkeletonGraph g;
  g.adjacency = Matrix::Identity(k, k);
  for (int i = 0; i + 1 < k; ++i) g.adjacency(i, i + 1) = g.adjacency(i + 1, i) = 1.0;
  for (int i = 0; i < k; ++i) g.node_names.push_back("n" + std::to_string(i));
  for (int i = 0; i + 1 < k; ++i) g.bones.emplace_back(i, i + 1);
  return g;
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.map_rows = 8;
  c.map_cols = 8;
  c.kernel_rows = 3;
  c.kernel_cols = 3;
  c.heads = 2;
  c.layers = 2;
  return c;
}

MapStack random_stack(int channels, Eigen::Index h, Eigen::Index w, Pcg32& rng) {
  MapStack x;
  for (int c = 0; c < channels; ++c) x.push_back(oracle::random_matrix(h, w, rng, 0.0, 1.0));
  return x;
}

}  // namespace

TEST_CASE("fuse: one-hot selection, midpoint, bilinearity") {
  Pcg32 rng(1);
  std::vector<MapStack> heads;
  for (int m = 0; m < 3; ++m) heads.push_back(random_stack(2, 4, 4, rng));

  Vector onehot = Vector::Zero(3);
  onehot(1) = 1.0;
  CHECK(oracle::max_abs_diff(fuse(heads, onehot), heads[1]) == 0.0);

  std::vector<MapStack> two = {MapStack(2, Matrix::Zero(4, 4)), MapStack(2, Matrix::Constant(4, 4, 2.0))};
  Vector half(2);
  half << 0.5, 0.5;
  MapStack mid = fuse(two, half);
  for (const auto& m : mid) CHECK(oracle::max_abs_diff(m, Matrix::Ones(4, 4)) == 0.0);

  Vector w1(3), w2(3);
  for (int i = 0; i < 3; ++i) {
    w1(i) = rng.uniform();
    w2(i) = rng.uniform();
  }
  const double a = 0.3, b = 1.7;
  MapStack lhs = fuse(heads, a * w1 + b * w2);
  MapStack f1 = fuse(heads, w1), f2 = fuse(heads, w2);
  for (std::size_t c = 0; c < lhs.size(); ++c)
    CHECK(oracle::max_abs_diff(lhs[c], (a * f1[c] + b * f2[c]).eval()) < 1e-12);

  CHECK_THROWS_AS(fuse(heads, half), ShapeError);
}

TEST_CASE("decode_argmax: peaks, tie-break, affine invariance") {
  Matrix m = Matrix::Zero(12, 12);
  m(7, 5) = 3.0;  // row y=7, col x=5
  auto pts = decode_argmax({m});
  CHECK(pts[0].x() == 5.0);
  CHECK(pts[0].y() == 7.0);

  // Constant map decodes to (0, 0) by the first-occurrence rule.
  auto tie = decode_argmax({Matrix::Ones(5, 5)});
  CHECK(tie[0].x() == 0.0);
  CHECK(tie[0].y() == 0.0);

  // Peak of a Gaussian rendered at an integer center.
  Matrix g = render_gaussian(10.0, 20.0, 32, 32, 2.0);
  auto gp = decode_argmax({g});
  CHECK(gp[0].x() == 10.0);
  CHECK(gp[0].y() == 20.0);

  // Positive affine rescaling leaves the argmax unchanged.
  Pcg32 rng(4);
  Matrix r = oracle::random_matrix(9, 9, rng);
  auto base = decode_argmax({r});
  auto scaled = decode_argmax({(2.5 * r).eval()});
  Matrix shifted_m = r + Matrix::Constant(9, 9, 10.0);
  auto shifted = decode_argmax({shifted_m});
  CHECK(base[0] == scaled[0]);
  CHECK(base[0] == shifted[0]);
}

TEST_CASE("model_forward: single head fuses to itself with weight 1") {
  SkeletonGraph g = chain_graph(4);
  ModelConfig cfg = tiny_config();
  cfg.heads = 1;
  RefineModel model = init_model(cfg, g, 11);
  Pcg32 rng(2);
  MapStack x = random_stack(4, 8, 8, rng);
  ModelOutput out = model_forward(model, x);
  CHECK(out.weights.size() == 1);
  CHECK(out.weights(0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(oracle::max_abs_diff(out.fused, out.head_outputs[0]) == 0.0);
}

TEST_CASE("model_forward: softmax weights sum to one; saturation selects a head") {
  SkeletonGraph g = chain_graph(4);
  RefineModel model = init_model(tiny_config(), g, 13);
  Pcg32 rng(3);
  MapStack x = random_stack(4, 8, 8, rng);
  ModelOutput out = model_forward(model, x);
  CHECK(std::abs(out.weights.sum() - 1.0) < 1e-12);
  CHECK((out.weights.array() > 0.0).all());

  // Force an extreme logit on head 1 via the bias.
  model.pointer.bias(1) = 1000.0;
  ModelOutput sat = model_forward(model, x);
  CHECK(oracle::max_abs_diff(sat.fused, sat.head_outputs[1]) < 1e-9);
}

TEST_CASE("model_forward: identical heads make fusion pointer-independent") {
  SkeletonGraph g = chain_graph(5);
  ModelConfig cfg = tiny_config();
  cfg.heads = 3;
  cfg.init_noise = 0.0;
  RefineModel model = init_model(cfg, g, 17);
  // All heads are identical by construction (noise-free identity init).
  Pcg32 rng(5);
  MapStack x = random_stack(5, 8, 8, rng);
  ModelOutput out1 = model_forward(model, x);
  for (int m = 1; m < 3; ++m)
    CHECK(oracle::max_abs_diff(out1.head_outputs[std::size_t(m)], out1.head_outputs[0]) == 0.0);

  // Randomize the pointer; the fused output must not move.
  for (Eigen::Index i = 0; i < model.pointer.weight.size(); ++i)
    model.pointer.weight.data()[i] = rng.uniform(-3.0, 3.0);
  for (Eigen::Index i = 0; i < model.pointer.bias.size(); ++i)
    model.pointer.bias(i) = rng.uniform(-3.0, 3.0);
  ModelOutput out2 = model_forward(model, x);
  CHECK(oracle::max_abs_diff(out2.fused, out1.fused) < 1e-12);
}

TEST_CASE("model_forward: convex fusion bounded by head envelopes") {
  SkeletonGraph g = chain_graph(4);
  RefineModel model = init_model(tiny_config(), g, 21);
  Pcg32 rng(6);
  MapStack x = random_stack(4, 8, 8, rng);
  ModelOutput out = model_forward(model, x);
  for (std::size_t c = 0; c < out.fused.size(); ++c)
    for (Eigen::Index i = 0; i < out.fused[c].size(); ++i) {
      double lo = out.head_outputs[0][c].data()[i], hi = lo;
      for (int m = 1; m < 2; ++m) {
        lo = std::min(lo, out.head_outputs[std::size_t(m)][c].data()[i]);
        hi = std::max(hi, out.head_outputs[std::size_t(m)][c].data()[i]);
      }
      CHECK(out.fused[c].data()[i] >= lo - 1e-12);
      CHECK(out.fused[c].data()[i] <= hi + 1e-12);
    }
}

TEST_CASE("model_backward: zero cotangent, M=1 pointer gradient is exactly zero") {
  SkeletonGraph g = chain_graph(4);
  ModelConfig cfg = tiny_config();
  cfg.heads = 1;
  RefineModel model = init_model(cfg, g, 23);
  Pcg32 rng(7);
  MapStack x = random_stack(4, 8, 8, rng);
  ModelCache cache;
  model_forward(model, x, &cache);

  MapStack zeros(4, Matrix::Zero(8, 8));
  ModelGrads g0 = model_backward(model, cache, zeros);
  CHECK(g0.d_pointer_weight.cwiseAbs().maxCoeff() == 0.0);
  for (const auto& layer : g0.d_banks[0])
    for (const auto& dk : layer) CHECK(dk.cwiseAbs().maxCoeff() == 0.0);

  MapStack d = random_stack(4, 8, 8, rng);
  ModelGrads g1 = model_backward(model, cache, d);
  // softmax of a single logit is the constant 1.
  CHECK(g1.d_pointer_weight.cwiseAbs().maxCoeff() == 0.0);
  CHECK(g1.d_pointer_bias.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("flat parameter view: round trip and canonical group layout") {
  SkeletonGraph g = chain_graph(4);
  RefineModel model = init_model(tiny_config(), g, 29);
  Vector flat = flatten_params(model);
  CHECK(flat.size() == param_count(model));

  auto groups = param_groups(model);
  CHECK(groups.size() == 2 * 2 + 2);  // heads*layers banks + pointer weight/bias
  CHECK(groups.front().name == "head0.layer0");
  CHECK(groups[groups.size() - 2].name == "pointer.weight");
  CHECK(groups.back().name == "pointer.bias");
  Eigen::Index total = 0;
  for (const auto& gr : groups) total += gr.size;
  CHECK(total == flat.size());

  Pcg32 rng(8);
  Vector other(flat.size());
  for (Eigen::Index i = 0; i < other.size(); ++i) other(i) = rng.uniform(-1, 1);
  set_params(model, other);
  CHECK((flatten_params(model) - other).cwiseAbs().maxCoeff() == 0.0);

  // Tied model: one kernel of freedom per bank, replicated across slices.
  ModelConfig tied_cfg = tiny_config();
  tied_cfg.tied = true;
  RefineModel tied = init_model(tied_cfg, g, 29);
  GraphMatrices mats = construct_matrices(g.adjacency);
  CHECK(param_count(tied) ==
        2 * 2 * 3 * 3 + 2 * 2 * Eigen::Index(g.node_count()) + 2);
  Vector tp = flatten_params(tied);
  tp(0) += 1.0;
  set_params(tied, tp);
  for (const auto& kern : tied.banks[0][0].kernels)
    CHECK(oracle::max_abs_diff(kern, tied.banks[0][0].kernels[0]) == 0.0);
  (void)mats;
}

TEST_CASE("model serialization: bit-exact round trip") {
  SkeletonGraph g = chain_graph(6);
  ModelConfig cfg = tiny_config();
  cfg.heads = 3;
  cfg.layers = 2;
  cfg.tied = false;
  cfg.final_act = Activation::relu;
  RefineModel model = init_model(cfg, g, 31);
  // Scramble parameters so the round trip is non-trivial.
  Pcg32 rng(9);
  Vector p = flatten_params(model);
  for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = rng.normal(0.0, 1.0);
  set_params(model, p);

  std::stringstream buf;
  save_model(buf, model);
  RefineModel loaded = load_model(buf, g);
  CHECK(loaded.config.heads == cfg.heads);
  CHECK(loaded.config.final_act == Activation::relu);
  CHECK((flatten_params(loaded) - flatten_params(model)).cwiseAbs().maxCoeff() == 0.0);

  std::stringstream buf2;
  save_model(buf2, loaded);
  CHECK(buf.str() == buf2.str());
}

TEST_CASE("model serialization: graph mismatch and truncation are data errors") {
  SkeletonGraph g = chain_graph(5);
  RefineModel model = init_model(tiny_config(), g, 37);
  std::stringstream buf;
  save_model(buf, model);

  SkeletonGraph other = chain_graph(6);
  std::stringstream read1(buf.str());
  CHECK_THROWS_AS(load_model(read1, other), DataError);

  std::string bytes = buf.str();
  std::stringstream truncated(bytes.substr(0, bytes.size() / 2));
  bool threw_truncated = false;
  try {
    load_model(truncated, g);
  } catch (const DataError& e) {
    threw_truncated = e.code == DataErrorCode::truncated;
  }
  CHECK(threw_truncated);

  std::stringstream garbage("not a model file at all............");
  bool threw_magic = false;
  try {
    load_model(garbage, g);
  } catch (const DataError& e) {
    threw_magic = e.code == DataErrorCode::bad_magic;
  }
  CHECK(threw_magic);
}

TEST_CASE("pooled features: per-channel mean then max") {
  MapStack x = {Matrix::Constant(4, 4, 0.25), Matrix::Zero(4, 4)};
  x[1](2, 3) = 0.8;
  Vector f = pooled_features(x);
  CHECK(f.size() == 4);
  CHECK(f(0) == doctest::Approx(0.25));
  CHECK(f(1) == doctest::Approx(0.8 / 16.0));
  CHECK(f(2) == doctest::Approx(0.25));
  CHECK(f(3) == doctest::Approx(0.8));
}
