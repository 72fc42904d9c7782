#include "egc/model.hpp"

#include "egc/binio.hpp"
#include "egc/rng.hpp"

#include <fstream>

namespace egc {

namespace {

constexpr char kModelMagic[9] = "EGCMODL1";
constexpr std::uint32_t kModelVersion = 1;

void check_input_stack(const RefineModel& model, const MapStack& x0) {
  if (static_cast<int>(x0.size()) != model.graph.node_count())
    throw ShapeError("model_forward: input has " + std::to_string(x0.size()) +
                     " channels, graph has " + std::to_string(model.graph.node_count()) +
                     " nodes");
  for (const auto& m : x0)
    if (m.rows() != model.config.map_rows || m.cols() != model.config.map_cols)
      throw ShapeError("model_forward: map shape " + std::to_string(m.rows()) + "x" +
                       std::to_string(m.cols()) + " does not match configured " +
                       std::to_string(model.config.map_rows) + "x" +
                       std::to_string(model.config.map_cols));
}

Eigen::Index kernel_params(const RefineModel& model) {
  return Eigen::Index(model.config.kernel_rows) * model.config.kernel_cols;
}

Eigen::Index bank_params(const RefineModel& model) {
  return model.config.tied ? kernel_params(model)
                           : Eigen::Index(model.mats.edge_count()) * kernel_params(model);
}

}  // namespace

void ModelConfig::validate() const {
  if (map_rows < 1 || map_cols < 1) throw ConfigError("model: map extents must be positive");
  if (kernel_rows < 1 || kernel_cols < 1 || kernel_rows % 2 == 0 || kernel_cols % 2 == 0)
    throw ConfigError("model: kernel extents must be positive odd numbers");
  if (heads < 1) throw ConfigError("model: need at least one head");
  if (layers < 1) throw ConfigError("model: need at least one layer");
  if (init_noise < 0.0) throw ConfigError("model: init_noise must be non-negative");
}

RefineModel init_model(const ModelConfig& config, const SkeletonGraph& graph, std::uint64_t seed) {
  config.validate();
  RefineModel model;
  model.config = config;
  model.graph = graph;
  model.mats = construct_matrices(graph.adjacency);

  model.banks.resize(config.heads);
  for (int m = 0; m < config.heads; ++m) {
    model.banks[m].reserve(config.layers);
    for (int l = 0; l < config.layers; ++l)
      model.banks[m].push_back(init_kernel_bank(model.mats, config.kernel_rows,
                                                config.kernel_cols, config.tied,
                                                config.init_noise,
                                                derive_seed(seed, 1000 + m, l)));
  }

  const int k = graph.node_count();
  Pcg32 rng(derive_seed(seed, 2, 0));
  model.pointer.weight = Matrix::Zero(config.heads, 2 * k);
  for (Eigen::Index i = 0; i < model.pointer.weight.rows(); ++i)
    for (Eigen::Index j = 0; j < model.pointer.weight.cols(); ++j)
      model.pointer.weight(i, j) = config.init_noise * rng.normal();
  model.pointer.bias = Vector::Zero(config.heads);
  return model;
}

Vector pooled_features(const MapStack& x) {
  if (x.empty()) throw ShapeError("pooled_features: empty stack");
  const auto k = static_cast<Eigen::Index>(x.size());
  Vector f(2 * k);
  for (Eigen::Index c = 0; c < k; ++c) {
    f(c) = x[c].mean();
    f(k + c) = x[c].maxCoeff();
  }
  return f;
}

MapStack fuse(const std::vector<MapStack>& head_outputs, const Vector& weights) {
  if (static_cast<Eigen::Index>(head_outputs.size()) != weights.size())
    throw ShapeError("fuse: " + std::to_string(head_outputs.size()) + " heads vs " +
                     std::to_string(weights.size()) + " weights");
  if (head_outputs.empty()) throw ShapeError("fuse: no heads");
  if (!weights.allFinite()) throw NumericError("fuse: non-finite weights");
  const std::size_t k = head_outputs[0].size();
  MapStack out;
  out.reserve(k);
  for (std::size_t c = 0; c < k; ++c)
    out.push_back(Matrix::Zero(head_outputs[0][c].rows(), head_outputs[0][c].cols()));
  for (std::size_t m = 0; m < head_outputs.size(); ++m) {
    if (head_outputs[m].size() != k) throw ShapeError("fuse: head channel counts differ");
    for (std::size_t c = 0; c < k; ++c) out[c] += weights(Eigen::Index(m)) * head_outputs[m][c];
  }
  return out;
}

std::vector<Point2> decode_argmax(const MapStack& maps) {
  if (maps.empty()) throw ShapeError("decode_argmax: empty stack");
  std::vector<Point2> out;
  out.reserve(maps.size());
  for (const auto& m : maps) {
    if (m.size() == 0) throw ShapeError("decode_argmax: empty map");
    Eigen::Index best_y = 0, best_x = 0;
    double best = m(0, 0);
    for (Eigen::Index y = 0; y < m.rows(); ++y) {
      const double* row = m.data() + y * m.cols();
      for (Eigen::Index x = 0; x < m.cols(); ++x) {
        if (row[x] > best) {
          best = row[x];
          best_y = y;
          best_x = x;
        }
      }
    }
    out.emplace_back(double(best_x), double(best_y));
  }
  return out;
}

ModelOutput model_forward(const RefineModel& model, const MapStack& x0, ModelCache* cache) {
  check_input_stack(model, x0);

  ModelOutput out;
  out.head_outputs.reserve(model.head_count());

  Vector features = pooled_features(x0);
  Vector logits = model.pointer.weight * features + model.pointer.bias;
  out.weights = model.config.pointer_softmax ? softmax(logits) : logits;

  if (cache) {
    cache->input = x0;
    cache->features = features;
    cache->logits = logits;
    cache->weights = out.weights;
    cache->layer_caches.assign(model.head_count(), std::vector<LayerCache>(model.layer_count()));
    cache->head_outputs.clear();
  }

  for (int m = 0; m < model.head_count(); ++m) {
    MapStack x = x0;
    for (int l = 0; l < model.layer_count(); ++l) {
      const Activation act =
          (l + 1 == model.layer_count()) ? model.config.final_act : model.config.hidden_act;
      LayerCache* lc = cache ? &cache->layer_caches[m][l] : nullptr;
      x = layer_forward(x, model.banks[m][l], model.mats, act, lc);
    }
    out.head_outputs.push_back(std::move(x));
  }

  out.fused = fuse(out.head_outputs, out.weights);
  if (cache) cache->head_outputs = out.head_outputs;
  return out;
}

ModelGrads model_backward(const RefineModel& model, const ModelCache& cache,
                          const MapStack& d_fused) {
  const int heads = model.head_count();
  const int layers = model.layer_count();
  if (static_cast<int>(cache.layer_caches.size()) != heads ||
      static_cast<int>(cache.head_outputs.size()) != heads)
    throw ContractError("model_backward: cache does not match this model");
  if (d_fused.size() != cache.input.size())
    throw ShapeError("model_backward: d_fused channel count mismatch");

  ModelGrads grads;
  grads.d_banks.assign(heads, {});

  // d(loss)/d(head weight m) before the softmax.
  Vector dw(heads);
  for (int m = 0; m < heads; ++m) {
    double acc = 0.0;
    for (std::size_t c = 0; c < d_fused.size(); ++c)
      acc += (cache.head_outputs[m][c].array() * d_fused[c].array()).sum();
    dw(m) = acc;
  }

  for (int m= 0; m < heads; ++m) {
    MapStack d(d_fused.size());
    for (std::size_t c = 0; c < d_fused.size(); ++c) d[c] = cache.weights(m) * d_fused[c];
    grads.d_banks[m].resize(layers);
    for (int l = layers - 1; l >= 0; --l) {
      const Activation act = (l + 1 == layers) ? model.config.final_act : model.config.hidden_act;
      LayerGrads lg = layer_backward(cache.layer_caches[m][l], model.banks[m][l], model.mats, act,
                                     d, /*need_input_grad=*/l > 0);
      grads.d_banks[m][l] = std::move(lg.d_kernels);
      d = std::move(lg.d_input);
    }
  }

  Vector d_logits;
  if (model.config.pointer_softmax) {
    const double inner = cache.weights.dot(dw);
    d_logits = cache.weights.array() * (dw.array() - inner);
  } else {
    d_logits = dw;
  }
  grads.d_pointer_weight = d_logits * cache.features.transpose();
  grads.d_pointer_bias = d_logits;
  return grads;
}

Eigen::Index param_count(const RefineModel& model) {
  const Eigen::Index k = model.graph.node_count();
  return Eigen::Index(model.config.heads) * model.config.layers * bank_params(model) +
         Eigen::Index(model.config.heads) * 2 * k + model.config.heads;
}

Vector flatten_params(const RefineModel& model) {
  Vector flat(param_count(model));
  Eigen::Index at = 0;
  const Eigen::Index kp = kernel_params(model);
  for (const auto& head : model.banks) {
    for (const auto& bank : head) {
      const int slices = model.config.tied ? 1 : model.mats.edge_count();
      for (int e = 0; e < slices; ++e) {
        std::copy(bank.kernels[e].data(), bank.kernels[e].data() + kp, flat.data() + at);
        at += kp;
      }
    }
  }
  const auto& p = model.pointer;
  std::copy(p.weight.data(), p.weight.data() + p.weight.size(), flat.data() + at);
  at += p.weight.size();
  std::copy(p.bias.data(), p.bias.data() + p.bias.size(), flat.data() + at);
  at += p.bias.size();
  if (at != flat.size()) throw ContractError("flatten_params: size bookkeeping error");
  return flat;
}

void set_params(RefineModel& model, const Vector& flat) {
  if (flat.size() != param_count(model))
    throw ShapeError("set_params: expected " + std::to_string(param_count(model)) +
                     " parameters, got " + std::to_string(flat.size()));
  Eigen::Index at = 0;
  const Eigen::Index kp = kernel_params(model);
  for (auto& head : model.banks) {
    for (auto& bank : head) {
      if (model.config.tied) {
        Matrix shared(model.config.kernel_rows, model.config.kernel_cols);
        std::copy(flat.data() + at, flat.data() + at + kp, shared.data());
        at += kp;
        for (auto& kern : bank.kernels) kern = shared;
      } else {
        for (auto& kern : bank.kernels) {
          std::copy(flat.data() + at, flat.data() + at + kp, kern.data());
          at += kp;
        }
      }
    }
  }
  auto& p = model.pointer;
  std::copy(flat.data() + at, flat.data() + at + p.weight.size(), p.weight.data());
  at += p.weight.size();
  std::copy(flat.data() + at, flat.data() + at + p.bias.size(), p.bias.data());
}

Vector flatten_grads(const RefineModel& model, const ModelGrads& grads) {
  Vector flat(param_count(model));
  Eigen::Index at = 0;
  const Eigen::Index kp = kernel_params(model);
  for (int m = 0; m < model.config.heads; ++m) {
    for (int l = 0; l < model.config.layers; ++l) {
      const auto& dk = grads.d_banks[m][l];
      // A tied bank's replicated slices already hold the summed gradient.
      const int slices = model.config.tied ? 1 : model.mats.edge_count();
      for (int e = 0; e < slices; ++e) {
        std::copy(dk[e].data(), dk[e].data() + kp, flat.data() + at);
        at += kp;
      }
    }
  }
  std::copy(grads.d_pointer_weight.data(),
            grads.d_pointer_weight.data() + grads.d_pointer_weight.size(), flat.data() + at);
  at += grads.d_pointer_weight.size();
  std::copy(grads.d_pointer_bias.data(), grads.d_pointer_bias.data() + grads.d_pointer_bias.size(),
            flat.data() + at);
  return flat;
}

std::vector<ParamGroup> param_groups(const RefineModel& model) {
  std::vector<ParamGroup> groups;
  Eigen::Index at = 0;
  const Eigen::Index bp = bank_params(model);
  for (int m = 0; m < model.config.heads; ++m)
    for (int l = 0; l < model.config.layers; ++l) {
      groups.push_back({"head" + std::to_string(m) + ".layer" + std::to_string(l), at, bp});
      at += bp;
    }
  const Eigen::Index k = model.graph.node_count();
  groups.push_back({"pointer.weight", at, Eigen::Index(model.config.heads) * 2 * k});
  at += groups.back().size;
  groups.push_back({"pointer.bias", at, Eigen::Index(model.config.heads)});
  return groups;
}

void save_model(std::ostream& os, const RefineModel& model) {
  binio::write_magic(os, kModelMagic);
  binio::write_u32(os, kModelVersion);
  binio::write_u64(os, model.graph.hash());
  binio::write_u32(os, std::uint32_t(model.graph.node_count()));
  binio::write_u32(os, std::uint32_t(model.mats.edge_count()));
  binio::write_u32(os, std::uint32_t(model.config.map_rows));
  binio::write_u32(os, std::uint32_t(model.config.map_cols));
  binio::write_u32(os, std::uint32_t(model.config.kernel_rows));
  binio::write_u32(os, std::uint32_t(model.config.kernel_cols));
  binio::write_u32(os, std::uint32_t(model.config.heads));
  binio::write_u32(os, std::uint32_t(model.config.layers));
  binio::write_u8(os, model.config.tied ? 1 : 0);
  binio::write_u8(os, model.config.hidden_act == Activation::relu ? 1 : 0);
  binio::write_u8(os, model.config.final_act == Activation::relu ? 1 : 0);
  binio::write_u8(os, model.config.pointer_softmax ? 1 : 0);
  binio::write_f64(os, model.config.init_noise);

  // Parameter tensors: heads outer, layers inner, slices in edge order.
  for (const auto& head : model.banks)
    for (const auto& bank : head)
      for (const auto& kern : bank.kernels) binio::write_f64_array(os, kern.data(), kern.size());
  binio::write_f64_array(os, model.pointer.weight.data(), model.pointer.weight.size());
  binio::write_f64_array(os, model.pointer.bias.data(), model.pointer.bias.size());
}

void save_model_file(const std::string& path, const RefineModel& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError(DataErrorCode::missing_file, "cannot open '" + path + "' for writing");
  save_model(os, model);
}

RefineModel load_model(std::istream& is, const SkeletonGraph& graph) {
  binio::expect_magic(is, kModelMagic, "model");
  const auto version = binio::read_u32(is, "version");
  if (version != kModelVersion)
    throw DataError(DataErrorCode::bad_header,
                    "unsupported model format version " + std::to_string(version));
  const auto hash = binio::read_u64(is, "graph hash");
  if (hash != graph.hash())
    throw DataError(DataErrorCode::shape_mismatch,
                    "model was trained on a different graph (hash mismatch)");
  const auto k = binio::read_u32(is, "node count");
  const auto e = binio::read_u32(is, "edge count");

  ModelConfig cfg;
  cfg.map_rows = int(binio::read_u32(is, "map rows"));
  cfg.map_cols = int(binio::read_u32(is, "map cols"));
  cfg.kernel_rows = int(binio::read_u32(is, "kernel rows"));
  cfg.kernel_cols = int(binio::read_u32(is, "kernel cols"));
  cfg.heads = int(binio::read_u32(is, "head count"));
  cfg.layers = int(binio::read_u32(is, "layer count"));
  cfg.tied = binio::read_u8(is, "tied flag") != 0;
  cfg.hidden_act = binio::read_u8(is, "hidden act") ? Activation::relu : Activation::identity;
  cfg.final_act = binio::read_u8(is, "final act") ? Activation::relu : Activation::identity;
  cfg.pointer_softmax = binio::read_u8(is, "pointer flag") != 0;
  cfg.init_noise = binio::read_f64(is, "init noise");
  cfg.validate();

  RefineModel model;
  model.config = cfg;
  model.graph = graph;
  model.mats = construct_matrices(graph.adjacency);
  if (std::uint32_t(model.graph.node_count()) != k ||
      std::uint32_t(model.mats.edge_count()) != e)
    throw DataError(DataErrorCode::bad_header, "model header node/edge counts are inconsistent");

  model.banks.assign(cfg.heads, {});
  for (int m = 0; m < cfg.heads; ++m) {
    model.banks[m].resize(cfg.layers);
    for (int l = 0; l < cfg.layers; ++l) {
      auto& bank = model.banks[m][l];
      bank.tied = cfg.tied;
      bank.kernels.assign(e, Matrix(cfg.kernel_rows, cfg.kernel_cols));
      for (auto& kern : bank.kernels)
        binio::read_f64_array(is, kern.data(), kern.size(), "kernel tensor");
      if (cfg.tied)
        for (const auto& kern : bank.kernels)
          if (kern != bank.kernels[0])
            throw DataError(DataErrorCode::bad_value,
                            "tied model has non-identical kernel slices");
    }
  }
  model.pointer.weight = Matrix(cfg.heads, 2 * int(k));
  model.pointer.bias = Vector(cfg.heads);
  binio::read_f64_array(is, model.pointer.weight.data(), model.pointer.weight.size(),
                        "pointer weight");
  binio::read_f64_array(is, model.pointer.bias.data(), model.pointer.bias.size(), "pointer bias");
  return model;
}

RefineModel load_model_file(const std::string& path, const SkeletonGraph& graph) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(DataErrorCode::missing_file, "cannot open model file '" + path + "'");
  return load_model(is, graph);
}

}  // namespace egc
