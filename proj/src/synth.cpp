#include "egc/synth.hpp"

#include "egc/binio.hpp"
#include "egc/rng.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>

namespace egc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kHeatmapMagic[9] = "EGCHMAP1";
constexpr std::uint32_t kHeatmapVersion = 1;

constexpr double kDeg = std::numbers::pi / 180.0;

// Anatomical ranges of the generator, degrees. Finger base directions are
// measured from straight up (-y), positive toward +x.
constexpr double kFingerBaseDeg[5] = {-45.0, -18.0, 0.0, 18.0, 38.0};
constexpr double kGlobalRotDeg = 12.0;
constexpr double kJointDevDeg = 8.0;
constexpr double kLengthJitter = 0.05;
constexpr double kBoundsMargin = 0.5;
constexpr int kMaxAttempts = 64;

// Wrist placement region, fractions of the map extent.
constexpr double kWristXMin = 0.40, kWristXMax = 0.60;
constexpr double kWristYMin = 0.62, kWristYMax = 0.78;

constexpr double kDistractorAmpMin = 0.35, kDistractorAmpMax = 0.75;

bool is_hand_tree(const SkeletonGraph& g) {
  if (g.node_count() != 21 || g.bones.size() != 20) return false;
  for (int f = 0; f < 5; ++f) {
    if (g.bones[std::size_t(4 * f)] != std::make_pair(0, 1 + 4 * f)) return false;
    for (int j = 0; j < 3; ++j)
      if (g.bones[std::size_t(4 * f + 1 + j)] != std::make_pair(1 + 4 * f + j, 2 + 4 * f + j))
        return false;
  }
  return true;
}

Matrix blur_map(const Matrix& in, double sigma) {
  const int radius = int(std::ceil(3.0 * sigma));
  Vector kern(2 * radius + 1);
  for (int t = -radius; t <= radius; ++t)
    kern(t + radius) = std::exp(-0.5 * double(t) * double(t) / (sigma * sigma));
  kern /= kern.sum();

  const Eigen::Index h = in.rows(), w = in.cols();
  Matrix tmp = Matrix::Zero(h, w), out = Matrix::Zero(h, w);
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int t = -radius; t <= radius; ++t) {
        Eigen::Index xx = x + t;
        if (xx >= 0 && xx < w) acc += kern(t + radius) * in(y, xx);
      }
      tmp(y, x) = acc;
    }
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int t = -radius; t <= radius; ++t) {
        Eigen::Index yy = y + t;
        if (yy >= 0 && yy < h) acc += kern(t + radius) * tmp(yy, x);
      }
      out(y, x) = acc;
    }
  return out;
}

void add_gaussian(Matrix& map, double cx, double cy, double sigma, double amp) {
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (Eigen::Index y = 0; y < map.rows(); ++y) {
    const double dy2 = (double(y) - cy) * (double(y) - cy);
    double* row = map.data() + y * map.cols();
    for (Eigen::Index x = 0; x < map.cols(); ++x) {
      const double dx = double(x) - cx;
      row[x] += amp * std::exp(-(dx * dx + dy2) * inv);
    }
  }
}

json synth_to_json(const SynthConfig& c) {
  return json{{"map_rows", c.map_rows},
              {"map_cols", c.map_cols},
              {"sigma", c.sigma},
              {"bone_scale", c.bone_scale}};
}

SynthConfig synth_from_json(const json& j) {
  SynthConfig c;
  c.map_rows = j.at("map_rows").get<int>();
  c.map_cols = j.at("map_cols").get<int>();
  c.sigma = j.at("sigma").get<double>();
  c.bone_scale = j.at("bone_scale").get<double>();
  return c;
}

json corrupt_to_json(const CorruptionConfig& c) {
  return json{{"jitter_sigma", c.jitter_sigma},   {"per_edge_bias", c.per_edge_bias},
              {"bias_bones", c.bias_bones},       {"blur_sigma", c.blur_sigma},
              {"distractor_rate", c.distractor_rate}, {"noise_floor", c.noise_floor}};
}

CorruptionConfig corrupt_from_json(const json& j) {
  CorruptionConfig c;
  c.jitter_sigma = j.at("jitter_sigma").get<double>();
  c.per_edge_bias = j.at("per_edge_bias").get<double>();
  c.bias_bones = j.at("bias_bones").get<std::string>();
  c.blur_sigma = j.at("blur_sigma").get<double>();
  c.distractor_rate = j.at("distractor_rate").get<double>();
  c.noise_floor = j.at("noise_floor").get<double>();
  return c;
}

std::string sample_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06d.hm", index);
  return buf;
}

}  // namespace

double SynthConfig::scale() const { return double(std::min(map_rows, map_cols)) / 32.0; }

void SynthConfig::validate() const {
  if (map_rows < 4 || map_cols < 4) throw ConfigError("synth: map extents must be at least 4");
  if (sigma <= 0.0) throw ConfigError("synth: sigma must be positive");
  if (bone_scale < 0.0) throw ConfigError("synth: bone_scale must be non-negative");
}

void CorruptionConfig::validate() const {
  if (jitter_sigma < 0.0) throw ConfigError("corrupt: jitter_sigma must be non-negative");
  if (per_edge_bias < 0.0) throw ConfigError("corrupt: per_edge_bias must be non-negative");
  if (bias_bones != "none" && bias_bones != "fingertips" && bias_bones != "all")
    throw ConfigError("corrupt: bias_bones must be none|fingertips|all, got '" + bias_bones + "'");
  if (blur_sigma < 0.0) throw ConfigError("corrupt: blur_sigma must be non-negative");
  if (distractor_rate < 0.0 || distractor_rate > 1.0)
    throw ConfigError("corrupt: distractor_rate must lie in [0, 1]");
  if (noise_floor < 0.0) throw ConfigError("corrupt: noise_floor must be non-negative");
}

std::vector<double> hand_bone_lengths() {
  // Wrist->MCP then three finger segments, per finger; pixels at 32×32.
  return {
      4.0, 3.5, 3.0, 3.0,  // thumb
      5.0, 4.0, 3.0, 3.0,  // index
      5.0, 4.5, 3.5, 3.0,  // middle
      5.0, 4.0, 3.0, 3.0,  // ring
      4.5, 3.5, 3.0, 3.0,  // pinky
  };
}

PoseSample sample_pose(std::uint64_t seed, const SkeletonGraph& skeleton,
                       const std::vector<double>& bone_lengths, const SynthConfig& cfg) {
  cfg.validate();
  if (!is_hand_tree(skeleton))
    throw ConfigError("sample_pose: generator requires the 21-node hand tree");
  if (bone_lengths.size() != skeleton.bones.size())
    throw ShapeError("sample_pose: need one length per bone, got " +
                     std::to_string(bone_lengths.size()) + " for " +
                     std::to_string(skeleton.bones.size()) + " bones");
  for (double len : bone_lengths)
    if (len < 0.0) throw ConfigError("sample_pose: bone lengths must be non-negative");

  const double s = cfg.scale() * cfg.bone_scale;
  double max_chain = 0.0;
  for (int f = 0; f < 5; ++f) {
    double chain = 0.0;
    for (int j = 0; j < 4; ++j) chain += bone_lengths[std::size_t(4 * f + j)];
    max_chain = std::max(max_chain, chain);
  }
  const double reach = max_chain * s * (1.0 + kLengthJitter);
  if (reach > 0.60 * double(std::min(cfg.map_rows, cfg.map_cols)))
    throw ConfigError("sample_pose: map " + std::to_string(cfg.map_rows) + "x" +
                      std::to_string(cfg.map_cols) + " is too small for bone reach " +
                      std::to_string(reach));

  const double w = double(cfg.map_cols - 1), h = double(cfg.map_rows - 1);
  Pcg32 rng(derive_seed(seed, 0xA11CEULL));

  std::vector<Point2> pts(21);
  bool ok = false;
  for (int attempt = 0; attempt < kMaxAttempts && !ok; ++attempt) {
    const double wx = rng.uniform(kWristXMin * w, kWristXMax * w);
    const double wy = rng.uniform(kWristYMin * h, kWristYMax * h);
    const double global = rng.uniform(-kGlobalRotDeg, kGlobalRotDeg);
    pts[0] = Point2(wx, wy);
    for (int f = 0; f < 5; ++f) {
      double dir = (kFingerBaseDeg[f] + global + rng.uniform(-kJointDevDeg, kJointDevDeg)) * kDeg;
      Point2 pos = pts[0];
      for (int j = 0; j < 4; ++j) {
        if (j > 0) dir += rng.uniform(-kJointDevDeg, kJointDevDeg) * kDeg;
        const double len =
            bone_lengths[std::size_t(4 * f + j)] * s * rng.uniform(1.0 - kLengthJitter, 1.0 + kLengthJitter);
        pos += len * Point2(std::sin(dir), -std::cos(dir));
        pts[std::size_t(1 + 4 * f + j)] = pos;
      }
    }
    ok = true;
    for (const auto& p : pts)
      if (p.x() < kBoundsMargin || p.x() > w - kBoundsMargin || p.y() < kBoundsMargin ||
          p.y() > h - kBoundsMargin)
        ok = false;
  }
  if (!ok) {
    for (auto& p : pts) {
      p.x() = std::clamp(p.x(), 0.0, w);
      p.y() = std::clamp(p.y(), 0.0, h);
    }
  }

  PoseSample sample;
  sample.seed = seed;
  sample.keypoints = std::move(pts);
  sample.gt_maps.reserve(21);
  for (const auto& p : sample.keypoints)
    sample.gt_maps.push_back(
        render_gaussian(p.x(), p.y(), cfg.map_rows, cfg.map_cols, cfg.sigma_eff()));
  return sample;
}

MapStack corrupt(const PoseSample& sample, const SkeletonGraph& skeleton,
                 const CorruptionConfig& cfg, const SynthConfig& synth, std::uint64_t seed) {
  cfg.validate();
  const int k = int(sample.keypoints.size());
  if (k != skeleton.node_count())
    throw ShapeError("corrupt: sample has " + std::to_string(k) + " keypoints, graph has " +
                     std::to_string(skeleton.node_count()) + " nodes");

  // Parent lookup from the authored (parent, child) bone list.
  std::vector<int> parent(std::size_t(k), -1);
  for (auto [a, b] : skeleton.bones)
    if (parent[std::size_t(b)] == -1) parent[std::size_t(b)] = a;

  const double sigma = synth.sigma_eff();
  const double bias_px = cfg.per_edge_bias * synth.scale();
  Pcg32 rng(derive_seed(seed, 0xC0DEULL));

  MapStack maps;
  maps.reserve(std::size_t(k));
  for (int i = 0; i < k; ++i) {
    Point2 pos = sample.keypoints[std::size_t(i)];
    pos.x() += rng.normal(0.0, cfg.jitter_sigma);
    pos.y() += rng.normal(0.0, cfg.jitter_sigma);

    bool biased = cfg.bias_bones == "all" ? parent[std::size_t(i)] >= 0
                : cfg.bias_bones == "fingertips" ? is_fingertip(skeleton, i)
                                                 : false;
    if (biased && bias_px > 0.0) {
      const Point2 bone = sample.keypoints[std::size_t(i)] -
                          sample.keypoints[std::size_t(parent[std::size_t(i)])];
      const double norm = bone.norm();
      if (norm > 1e-9) pos += (bias_px / norm) * bone;
    }

    Matrix map = Matrix::Zero(synth.map_rows, synth.map_cols);
    add_gaussian(map, pos.x(), pos.y(), sigma, 1.0);

    if (cfg.distractor_rate > 0.0 && rng.uniform() < cfg.distractor_rate) {
      int target;
      if (i == 0) {
        target = 1 + int(rng.uniform_int(20));
      } else {
        // Same joint on another finger: the classic cross-finger confusion.
        const int finger = (i - 1) / 4, joint = (i - 1) % 4;
        int other = int(rng.uniform_int(4));
        if (other >= finger) ++other;
        target = 1 + 4 * other + joint;
      }
      const double amp = rng.uniform(kDistractorAmpMin, kDistractorAmpMax);
      const Point2& d = sample.keypoints[std::size_t(target)];
      add_gaussian(map, d.x(), d.y(), sigma, amp);
    }

    if (cfg.blur_sigma > 0.0) map = blur_map(map, cfg.blur_sigma);
    if (cfg.noise_floor > 0.0)
      for (Eigen::Index t = 0; t < map.size(); ++t) map.data()[t] += rng.uniform(0.0, cfg.noise_floor);
    map = map.cwiseMax(0.0).cwiseMin(1.0);
    maps.push_back(std::move(map));
  }
  return maps;
}

void save_heatmaps(const std::string& path, const MapStack& maps,
                   const std::vector<Point2>* coords) {
  if (maps.empty()) throw ShapeError("save_heatmaps: empty stack");
  for (const auto& m : maps)
    if (m.rows() != maps[0].rows() || m.cols() != maps[0].cols())
      throw ShapeError("save_heatmaps: maps must share one shape");
  if (coords && coords->size() != maps.size())
    throw ShapeError("save_heatmaps: coordinate count must match channel count");

  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError(DataErrorCode::missing_file, "cannot open '" + path + "' for writing");
  binio::write_magic(os, kHeatmapMagic);
  binio::write_u32(os, kHeatmapVersion);
  binio::write_u32(os, std::uint32_t(maps.size()));
  binio::write_u32(os, std::uint32_t(maps[0].rows()));
  binio::write_u32(os, std::uint32_t(maps[0].cols()));
  for (const auto& m : maps) binio::write_f64_array(os, m.data(), std::size_t(m.size()));
  binio::write_u8(os, coords ? 1 : 0);
  if (coords)
    for (const auto& p : *coords) {
      binio::write_f64(os, p.x());
      binio::write_f64(os, p.y());
    }
}

HeatmapFile load_heatmaps(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(DataErrorCode::missing_file, "cannot open heatmap file '" + path + "'");
  binio::expect_magic(is, kHeatmapMagic, "heatmap");
  const auto version = binio::read_u32(is, "version");
  if (version != kHeatmapVersion)
    throw DataError(DataErrorCode::bad_header,
                    "unsupported heatmap format version " + std::to_string(version));
  const auto k = binio::read_u32(is, "channel count");
  const auto rows = binio::read_u32(is, "rows");
  const auto cols = binio::read_u32(is, "cols");
  if (k == 0 || rows == 0 || cols == 0 || k > 4096 || rows > 65536 || cols > 65536)
    throw DataError(DataErrorCode::bad_header, "implausible heatmap extents in '" + path + "'");

  HeatmapFile out;
  out.maps.reserve(k);
  for (std::uint32_t c = 0; c < k; ++c) {
    Matrix m(rows, cols);
    binio::read_f64_array(is, m.data(), std::size_t(m.size()), "map data");
    if (!m.allFinite())
      throw DataError(DataErrorCode::bad_value,
                      "non-finite values in channel " + std::to_string(c) + " of '" + path + "'");
    out.maps.push_back(std::move(m));
  }
  // Footer: absent flag byte means no coordinates.
  char flag;
  if (is.read(&flag, 1) && flag == 1) {
    std::vector<Point2> coords(k);
    for (auto& p : coords) {
      p.x() = binio::read_f64(is, "coordinate footer");
      p.y() = binio::read_f64(is, "coordinate footer");
    }
    out.coords = std::move(coords);
  }
  return out;
}

DatasetSummary write_dataset(const std::string& dir, const SkeletonGraph& graph,
                             const SynthConfig& synth, const CorruptionConfig& corrupt_cfg,
                             int train_count, int test_count, std::uint64_t seed, bool force) {
  synth.validate();
  corrupt_cfg.validate();
  if (train_count < 0 || test_count < 0)
    throw ConfigError("write_dataset: sample counts must be non-negative");

  fs::path root(dir);
  if (fs::exists(root) && !fs::is_directory(root))
    throw DataError(DataErrorCode::bad_value, "'" + dir + "' exists and is not a directory");
  if (fs::exists(root) && !fs::is_empty(root) && !force)
    throw DataError(DataErrorCode::bad_value,
                    "output directory '" + dir + "' is not empty (use --force to overwrite)");
  fs::create_directories(root / "train");
  fs::create_directories(root / "test");

  const auto bones = hand_bone_lengths();
  auto write_split = [&](const char* split, std::uint64_t split_id, int count) {
    for (int i = 0; i < count; ++i) {
      const std::uint64_t sample_seed = derive_seed(seed, split_id, std::uint64_t(i));
      PoseSample s = sample_pose(sample_seed, graph, bones, synth);
      s.input_maps = corrupt(s, graph, corrupt_cfg, synth, derive_seed(sample_seed, 0xC0DEULL));
      save_heatmaps((root / split / sample_name(i)).string(), s.input_maps, &s.keypoints);
    }
  };
  write_split("train", 0, train_count);
  write_split("test", 1, test_count);

  json manifest{
      {"format", "egc-dataset"},
      {"version", 1},
      {"seed", seed},
      {"graph_hash", graph.hash()},
      {"counts", json{{"train", train_count}, {"test", test_count}}},
      {"map", json{{"rows", synth.map_rows}, {"cols", synth.map_cols},
                   {"channels", graph.node_count()}}},
      {"synth", synth_to_json(synth)},
      {"corrupt", corrupt_to_json(corrupt_cfg)},
  };
  std::ofstream mf(root / "manifest.json");
  if (!mf) throw DataError(DataErrorCode::missing_file, "cannot write manifest in '" + dir + "'");
  mf << manifest.dump(2) << "\n";

  return {train_count, test_count, synth.map_rows, synth.map_cols, graph.node_count()};
}

Dataset load_dataset(const std::string& dir, const SkeletonGraph& graph) {
  fs::path root(dir);
  std::ifstream mf(root / "manifest.json");
  if (!mf)
    throw DataError(DataErrorCode::missing_file, "no manifest.json in dataset '" + dir + "'");
  json manifest;
  try {
    mf >> manifest;
  } catch (const json::exception& e) {
    throw DataError(DataErrorCode::bad_header, "malformed manifest in '" + dir + "': " + e.what());
  }

  Dataset out;
  try {
    if (manifest.at("format").get<std::string>() != "egc-dataset")
      throw DataError(DataErrorCode::bad_header, "not an egc-dataset manifest");
    out.seed = manifest.at("seed").get<std::uint64_t>();
    out.graph_hash = manifest.at("graph_hash").get<std::uint64_t>();
    out.synth = synth_from_json(manifest.at("synth"));
    out.corruption = corrupt_from_json(manifest.at("corrupt"));
  } catch (const json::exception& e) {
    throw DataError(DataErrorCode::bad_header, "manifest missing fields: " + std::string(e.what()));
  }

  const int channels = manifest.at("map").at("channels").get<int>();
  if (channels != graph.node_count())
    throw DataError(DataErrorCode::shape_mismatch,
                    "dataset has " + std::to_string(channels) + " channels but the graph has " +
                        std::to_string(graph.node_count()) + " nodes");
  if (out.graph_hash != graph.hash())
    throw DataError(DataErrorCode::shape_mismatch,
                    "dataset was generated for a different graph (hash mismatch)");

  auto load_split = [&](const char* split, int count, std::vector<PoseSample>& into) {
    into.reserve(std::size_t(count));
    for (int i = 0; i < count; ++i) {
      const std::string path = (root / split / sample_name(i)).string();
      HeatmapFile f = load_heatmaps(path);
      if (int(f.maps.size()) != graph.node_count())
        throw DataError(DataErrorCode::shape_mismatch,
                        path + ": " + std::to_string(f.maps.size()) + " channels vs " +
                            std::to_string(graph.node_count()) + "-node graph");
      if (f.maps[0].rows() != out.synth.map_rows || f.maps[0].cols() != out.synth.map_cols)
        throw DataError(DataErrorCode::shape_mismatch, path + ": map shape mismatch vs manifest");
      PoseSample s;
      s.seed = derive_seed(out.seed, split == std::string("train") ? 0 : 1, std::uint64_t(i));
      s.input_maps = std::move(f.maps);
      if (!f.coords)
        throw DataError(DataErrorCode::missing_ground_truth,
                        path + ": no ground truth coordinate footer");
      s.keypoints = std::move(*f.coords);
      s.gt_maps.reserve(s.keypoints.size());
      for (const auto& p : s.keypoints)
        s.gt_maps.push_back(render_gaussian(p.x(), p.y(), out.synth.map_rows, out.synth.map_cols,
                                            out.synth.sigma_eff()));
      into.push_back(std::move(s));
    }
  };
  const int n_train = manifest.at("counts").at("train").get<int>();
  const int n_test = manifest.at("counts").at("test").get<int>();
  load_split("train", n_train, out.train);
  load_split("test", n_test, out.test);
  return out;
}

}  // namespace egc
