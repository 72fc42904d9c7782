#include "egc/config.hpp"
#include "egc/model.hpp"
#include "egc/rng.hpp"
#include "egc/synth.hpp"
#include "egc/train.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace egc;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string seed;
  std::string threads;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "Configuration file");
  cmd->add_option("--set", args.overrides, "Override a config key, section.key=value")
      ->take_all();
  cmd->add_option("--seed", args.seed, "Shorthand for --set run.seed=N");
  cmd->add_option("--threads", args.threads, "Shorthand for --set run.threads=N");
}

Config build_config(const CommonArgs& args) {
  Config cfg = Config::defaults();
  if (!args.config_path.empty()) cfg.load_file(args.config_path);
  for (const auto& kv : args.overrides) cfg.apply_override(kv);
  if (!args.seed.empty()) cfg.set("run.seed", args.seed);
  if (!args.threads.empty()) cfg.set("run.threads", args.threads);
  return cfg;
}

int resolve_threads(const Config& cfg) {
  int t = cfg.get_int("run.threads");
  if (t <= 0) t = int(std::max(1u, std::thread::hardware_concurrency()));
  return t;
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw DataError(DataErrorCode::missing_file, "cannot write '" + path.string() + "'");
  os << text;
}

std::string format_pck_row(const std::string& name, const PckReport& report) {
  char buf[64];
  std::string row = name;
  row.resize(18, ' ');
  for (double v : report.per_delta) {
    std::snprintf(buf, sizeof(buf), "%7.2f", 100.0 * v);
    row += buf;
  }
  std::snprintf(buf, sizeof(buf), "%8.2f", 100.0 * report.mean);
  row += buf;
  row += "\n";
  return row;
}

std::string format_report_text(const std::vector<std::pair<std::string, PckReport>>& systems,
                               double box_size) {
  char buf[64];
  std::string text = "PCK report (box size " + std::to_string(int(box_size)) + ", percent)\n";
  std::string head = "system";
  head.resize(18, ' ');
  for (double d : systems.front().second.deltas) {
    std::snprintf(buf, sizeof(buf), "%7.2f", d);
    head += buf;
  }
  head += "    mPCK\n";
  text += head;
  for (const auto& [name, report] : systems) text += format_pck_row(name, report);
  return text;
}

json report_to_json(const std::vector<std::pair<std::string, PckReport>>& systems,
                    double box_size) {
  json out;
  out["box_size"] = box_size;
  out["deltas"] = systems.front().second.deltas;
  json sys = json::object();
  for (const auto& [name, report] : systems)
    sys[name] = json{{"pck", report.per_delta}, {"mpck", report.mean}};
  out["systems"] = sys;
  return out;
}

json record_to_json(const EpochRecord& rec) {
  json j;
  j["epoch"] = rec.epoch;
  j["lr"] = rec.lr;
  j["alpha"] = rec.alpha;
  if (rec.has_loss) {
    j["loss"] = rec.loss;
    j["l1"] = rec.l1;
    j["l2"] = rec.l2;
  }
  if (rec.evaluated) {
    j["pck"] = rec.pck.per_delta;
    j["deltas"] = rec.pck.deltas;
    j["mpck"] = rec.pck.mean;
    j["best"] = rec.is_best;
  }
  return j;
}

/// Loads either a bare model file or a checkpoint (model + appendix).
RefineModel load_model_any(const std::string& path, const SkeletonGraph& graph) {
  {
    std::ifstream is(path, std::ios::binary);
    if (!is)
      throw DataError(DataErrorCode::missing_file, "cannot open model file '" + path + "'");
    RefineModel model = load_model(is, graph);
    char probe;
    if (!is.read(&probe, 1)) return model;  // bare model, no appendix
  }
  return load_checkpoint(path, graph).model;
}

int cmd_gen(const CommonArgs& common, const std::string& out_dir, bool force) {
  Config cfg = build_config(common);
  SkeletonGraph graph = cfg.graph();
  const auto synth = cfg.synth_config();
  const auto corrupt_cfg = cfg.corruption_config();
  const int count = cfg.get_int("synth.count");
  const int test_count = cfg.get_int("synth.test_count");
  const auto seed = cfg.get_u64("run.seed");

  DatasetSummary summary =
      write_dataset(out_dir, graph, synth, corrupt_cfg, count, test_count, seed, force);
  write_text_file(fs::path(out_dir) / "resolved.cfg", cfg.resolved_text());

  std::printf("dataset written to %s\n", out_dir.c_str());
  std::printf("  samples: %d train / %d test, %dx%d maps, %d channels\n", summary.train_count,
              summary.test_count, summary.map_rows, summary.map_cols, summary.channels);
  std::printf("  corruption: jitter %.2f px, bias %.2f px (%s), distractors %.2f, blur %.2f, "
              "noise %.2f\n",
              corrupt_cfg.jitter_sigma, corrupt_cfg.per_edge_bias, corrupt_cfg.bias_bones.c_str(),
              corrupt_cfg.distractor_rate, corrupt_cfg.blur_sigma, corrupt_cfg.noise_floor);
  if (count == 0 && test_count == 0)
    std::printf("warning: empty dataset (counts are 0); only the manifest was written\n");
  return 0;
}

int cmd_train(const CommonArgs& common, const std::string& data_dir, const std::string& out_dir,
              const std::string& resume_path) {
  Config cfg = build_config(common);
  SkeletonGraph graph = cfg.graph();
  Dataset data = load_dataset(data_dir, graph);

  TrainConfig tc = cfg.train_config();
  tc.threads = resolve_threads(cfg);

  RefineModel model;
  OptimizerState state;
  int start_epoch = 0;
  double resume_best_mpck = -1.0;
  if (!resume_path.empty()) {
    Checkpoint ck = load_checkpoint(resume_path, graph);
    model = std::move(ck.model);
    state = std::move(ck.opt);
    start_epoch = ck.epochs_done;
    resume_best_mpck = ck.best_mpck;
    if (model.config.map_rows != data.synth.map_rows ||
        model.config.map_cols != data.synth.map_cols)
      throw DataError(DataErrorCode::shape_mismatch,
                      "checkpoint map geometry does not match the dataset");
  } else {
    ModelConfig mc = cfg.model_config();
    mc.map_rows = data.synth.map_rows;
    mc.map_cols = data.synth.map_cols;
    model = init_model(mc, graph, cfg.get_u64("run.seed"));
    state = OptimizerState::make(tc.optimizer, param_count(model), tc.lr);
  }

  fs::create_directories(out_dir);
  write_text_file(fs::path(out_dir) / "resolved.cfg", cfg.resolved_text());

  std::ofstream log(fs::path(out_dir) / "log.jsonl",
                    resume_path.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw DataError(DataErrorCode::missing_file, "cannot write training log");

  auto on_epoch = [&](const EpochRecord& rec) {
    log << record_to_json(rec).dump() << "\n";
    log.flush();
    if (rec.has_loss) {
      if (rec.evaluated)
        std::printf("epoch %3d  loss %.4f  l2 %.4f  lr %.2e  alpha %.2f  mPCK %.2f\n", rec.epoch,
                    rec.loss, rec.l2, rec.lr, rec.alpha, 100.0 * rec.pck.mean);
      else
        std::printf("epoch %3d  loss %.4f  l2 %.4f  lr %.2e  alpha %.2f\n", rec.epoch, rec.loss,
                    rec.l2, rec.lr, rec.alpha);
    }
  };

  TrainResult result;
  try {
    result = train_loop(model, data.train, data.test, tc, &state, start_epoch, on_epoch);
  } catch (const NumericError&) {
    // Partial log is already on disk; report the failure upward.
    throw;
  }

  save_checkpoint((fs::path(out_dir) / "last.ckpt").string(), model, state, tc.epochs,
                  result.best_mpck, result.best_epoch);
  if (result.best_params.size() > 0 && result.best_mpck > resume_best_mpck) {
    RefineModel best_model = model;
    set_params(best_model, result.best_params);
    save_checkpoint((fs::path(out_dir) / "best.ckpt").string(), best_model, result.best_opt,
                    result.best_epochs_done, result.best_mpck, result.best_epoch);
  } else if (result.best_params.size() == 0 && resume_path.empty()) {
    // No evaluation split: fall back to the final parameters.
    save_checkpoint((fs::path(out_dir) / "best.ckpt").string(), model, state, tc.epochs,
                    result.best_mpck, result.best_epoch);
  }
  std::printf("training complete: best mPCK %.2f at epoch %d, checkpoints in %s\n",
              100.0 * result.best_mpck, result.best_epoch, out_dir.c_str());
  return 0;
}

int cmd_eval(const CommonArgs& common, const std::string& model_path, const std::string& data_dir,
             const std::string& out_dir, const std::string& tied_path) {
  Config cfg = build_config(common);
  SkeletonGraph graph = cfg.graph();
  Dataset data = load_dataset(data_dir, graph);
  const auto deltas = cfg.get_double_list("eval.deltas");
  const int threads = resolve_threads(cfg);

  RefineModel model = load_model_any(model_path, graph);
  if (model.config.map_rows != data.synth.map_rows ||
      model.config.map_cols != data.synth.map_cols)
    throw DataError(DataErrorCode::shape_mismatch,
                    "model map geometry does not match the dataset");

  const auto& samples = data.test.empty() ? data.train : data.test;
  if (samples.empty()) throw DataError(DataErrorCode::bad_value, "dataset has no samples");

  std::vector<std::pair<std::string, PckReport>> systems;
  systems.emplace_back("input-baseline", eval_input_baseline(samples, deltas));
  if (!tied_path.empty()) {
    RefineModel tied = load_model_any(tied_path, graph);
    systems.emplace_back("tied-model", eval_model(tied, samples, deltas, threads));
  }
  systems.emplace_back("model", eval_model(model, samples, deltas, threads));

  const double box = double(data.synth.map_cols);
  const std::string text = format_report_text(systems, box);
  std::fputs(text.c_str(), stdout);

  fs::create_directories(out_dir);
  write_text_file(fs::path(out_dir) / "report.txt", text);
  write_text_file(fs::path(out_dir) / "report.json", report_to_json(systems, box).dump(2) + "\n");
  write_text_file(fs::path(out_dir) / "resolved.cfg", cfg.resolved_text());
  return 0;
}

int cmd_gradcheck(const CommonArgs& common, const std::string& params_filter,
                  const std::string& out_dir) {
  Config cfg = build_config(common);
  SkeletonGraph graph = cfg.graph();
  const auto synth = cfg.synth_config();
  const auto corrupt_cfg = cfg.corruption_config();
  ModelConfig mc = cfg.model_config();
  const auto seed = cfg.get_u64("run.seed");
  const double epsilon = cfg.get_double("gradcheck.epsilon");
  const double tolerance = cfg.get_double("gradcheck.tolerance");
  const auto subsample = Eigen::Index(cfg.get_int("gradcheck.subsample"));
  const auto max_params = Eigen::Index(cfg.get_int("gradcheck.max_params"));

  RefineModel model = init_model(mc, graph, seed);
  if (param_count(model) > max_params)
    throw ConfigError("gradcheck: model has " + std::to_string(param_count(model)) +
                      " parameters (limit " + std::to_string(max_params) +
                      "); reduce the model or raise gradcheck.max_params and "
                      "lower gradcheck.subsample");

  PoseSample sample = sample_pose(derive_seed(seed, 0x6CULL), graph, hand_bone_lengths(), synth);
  sample.input_maps = corrupt(sample, graph, corrupt_cfg, synth, derive_seed(seed, 0x6DULL));

  TrainConfig tc = cfg.train_config();
  GradcheckReport report = gradcheck(model, sample, tc.loss, epsilon, params_filter, subsample,
                                     seed, resolve_threads(cfg));

  std::string text;
  char buf[256];
  for (const auto& g : report.groups) {
    std::snprintf(buf, sizeof(buf), "%-16s checked %5ld  max rel err %.3e  (flat index %ld)\n",
                  g.name.c_str(), long(g.checked), g.max_rel, long(g.worst_index));
    text += buf;
  }
  const bool pass = report.max_rel < tolerance;
  std::snprintf(buf, sizeof(buf), "worst group %s: max rel err %.3e vs tolerance %.1e -> %s\n",
                report.worst_group.c_str(), report.max_rel, tolerance, pass ? "PASS" : "FAIL");
  text += buf;
  std::fputs(text.c_str(), stdout);

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_text_file(fs::path(out_dir) / "gradcheck.txt", text);
    write_text_file(fs::path(out_dir) / "resolved.cfg", cfg.resolved_text());
  }
  return pass ? 0 : 3;
}

int cmd_inspect(const CommonArgs& common, const std::string& graph_path) {
  Config cfg = build_config(common);
  if (!graph_path.empty()) cfg.set("graph.file", graph_path);
  SkeletonGraph graph = cfg.graph();
  GraphMatrices mats = construct_matrices(graph.adjacency);

  std::printf("graph: %d nodes, %zu bones, %d directed edges (self-loops included)\n",
              graph.node_count(), graph.bones.size(), mats.edge_count());
  std::printf("hash: %016llx\n", static_cast<unsigned long long>(graph.hash()));
  std::printf("nodes:\n");
  for (int i = 0; i < graph.node_count(); ++i)
    std::printf("  %2d %s (in-degree %d)\n", i, graph.node_names[std::size_t(i)].c_str(),
                mats.in_degree[std::size_t(i)]);
  std::printf("edge order (kernel index: start -> end):\n");
  for (int e = 0; e < mats.edge_count(); ++e)
    std::printf("  %3d: %s -> %s\n", e, graph.node_names[std::size_t(mats.edge_order[std::size_t(e)].first)].c_str(),
                graph.node_names[std::size_t(mats.edge_order[std::size_t(e)].second)].c_str());

  std::ostringstream os;
  os << "broadcast matrix B (" << mats.broadcast.rows() << "x" << mats.broadcast.cols() << "):\n"
     << mats.broadcast << "\naggregation matrix (" << mats.aggregate.rows() << "x"
     << mats.aggregate.cols() << "):\n"
     << mats.aggregate << "\n";
  std::fputs(os.str().c_str(), stdout);
  return 0;
}

int dispatch(int argc, char** argv) {
  CLI::App app{"Edge-aware graph convolution over keypoint heatmaps"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, eval_args, grad_args, inspect_args;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset directory");
  add_common(gen, gen_args);
  std::string gen_out;
  bool gen_force = false;
  gen->add_option("--out", gen_out, "Output dataset directory")->required();
  gen->add_flag("--force", gen_force, "Overwrite a non-empty output directory");

  auto* train = app.add_subcommand("train", "Train a refinement model");
  add_common(train, train_args);
  std::string train_data, train_out, train_resume;
  train->add_option("--data", train_data, "Dataset directory")->required();
  train->add_option("--out", train_out, "Output directory for checkpoints and log")->required();
  train->add_option("--resume", train_resume, "Continue from a checkpoint");

  auto* eval = app.add_subcommand("eval", "Evaluate checkpoints against a dataset");
  add_common(eval, eval_args);
  std::string eval_model_path, eval_data, eval_out, eval_tied;
  eval->add_option("--model", eval_model_path, "Model or checkpoint file")->required();
  eval->add_option("--data", eval_data, "Dataset directory")->required();
  eval->add_option("--out", eval_out, "Output directory for the report")->required();
  eval->add_option("--tied-model", eval_tied, "Optional tied-kernel model for comparison");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  add_common(grad, grad_args);
  std::string grad_params, grad_out;
  grad->add_option("--params", grad_params, "Check only groups with this name prefix");
  grad->add_option("--out", grad_out, "Optional directory for the report");

  auto* inspect = app.add_subcommand("inspect", "Print a graph and its matrices");
  add_common(inspect, inspect_args);
  std::string inspect_graph;
  inspect->add_option("--graph", inspect_graph, "Graph file (default: builtin hand)");

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) return cmd_gen(gen_args, gen_out, gen_force);
  if (train->parsed()) return cmd_train(train_args, train_data, train_out, train_resume);
  if (eval->parsed()) return cmd_eval(eval_args, eval_model_path, eval_data, eval_out, eval_tied);
  if (grad->parsed()) return cmd_gradcheck(grad_args, grad_params, grad_out);
  if (inspect->parsed()) return cmd_inspect(inspect_args, inspect_graph);
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const PreconditionError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
