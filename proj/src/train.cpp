#include "egc/train.hpp"

#include "egc/binio.hpp"
#include "egc/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <thread>

namespace egc {

namespace {

constexpr char kCheckpointMagic[9] = "EGCOPTS1";

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Callers must store
/// results by index; the work distribution never affects the output.
void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  threads = std::max(1, std::min(threads, n));
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    try {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!error) error = std::current_exception();
      next.store(n);
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(std::size_t(threads));
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

std::vector<int> shuffled_indices(int n, std::uint64_t seed) {
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[std::size_t(i)] = i;
  Pcg32 rng(seed);
  for (int i = n - 1; i > 0; --i) {
    const int j = int(rng.uniform_int(std::uint32_t(i + 1)));
    std::swap(order[std::size_t(i)], order[std::size_t(j)]);
  }
  return order;
}

double loss_of(const RefineModel& model, const PoseSample& sample, const LossConfig& cfg) {
  ModelOutput out = model_forward(model, sample.input_maps);
  return total_loss(nullptr, out.fused, sample.gt_maps, cfg, 0).total;
}

}  // namespace

OptKind opt_kind_from_string(const std::string& name) {
  if (name == "adam" || name == "adaptive_moment") return OptKind::adaptive_moment;
  if (name == "sgd" || name == "sgd_momentum") return OptKind::sgd_momentum;
  throw ConfigError("unknown optimizer '" + name + "' (expected adam|sgd)");
}

std::string to_string(OptKind kind) {
  return kind == OptKind::adaptive_moment ? "adam" : "sgd";
}

OptimizerState OptimizerState::make(OptKind kind, Eigen::Index n, double lr) {
  OptimizerState st;
  st.kind = kind;
  st.lr = lr;
  st.m = Vector::Zero(n);
  st.v = kind == OptKind::adaptive_moment ? Vector::Zero(n) : Vector();
  return st;
}

void opt_step(Vector& params, const Vector& grad, OptimizerState& state, double lr_now) {
  if (params.size() != grad.size() || params.size() != state.m.size())
    throw ContractError("opt_step: parameter/gradient/state size mismatch");
  state.step_count += 1;
  if (state.kind == OptKind::sgd_momentum) {
    state.m = state.momentum * state.m + grad;
    params -= lr_now * state.m;
    return;
  }
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(state.beta1, double(state.step_count));
  const double c2 = 1.0 - std::pow(state.beta2, double(state.step_count));
  params -= (lr_now / c1) * state.m.cwiseQuotient(((state.v / c2).cwiseSqrt().array() + state.eps).matrix());
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train: epochs must be non-negative");
  if (batch_size < 1) throw ConfigError("train: batch size must be positive");
  if (lr <= 0.0) throw ConfigError("train: learning rate must be positive");
  if (lr_factor <= 0.0) throw ConfigError("train: lr_factor must be positive");
  if (eval_every < 1) throw ConfigError("train: eval_every must be positive");
  int prev = -1;
  for (int m : lr_milestones) {
    if (m <= prev) throw ConfigError("train: lr milestones must be strictly increasing");
    prev = m;
  }
  if (eval_deltas.empty()) throw ConfigError("train: eval delta list must be non-empty");
  loss.validate();
}

double lr_at(const TrainConfig& cfg, int epoch) {
  double lr = cfg.lr;
  for (int m : cfg.lr_milestones)
    if (epoch >= m) lr *= cfg.lr_factor;
  return lr;
}

PckReport eval_model(const RefineModel& model, const std::vector<PoseSample>& samples,
                     const std::vector<double>& deltas, int threads) {
  if (samples.empty()) throw ContractError("eval_model: empty dataset");
  std::vector<std::vector<Point2>> preds(samples.size());
  std::vector<std::vector<Point2>> gts(samples.size());
  parallel_for(int(samples.size()), threads, [&](int i) {
    ModelOutput out = model_forward(model, samples[std::size_t(i)].input_maps);
    preds[std::size_t(i)] = decode_argmax(out.fused);
    gts[std::size_t(i)] = samples[std::size_t(i)].keypoints;
  });
  return mpck(preds, gts, deltas, double(model.config.map_cols));
}

PckReport eval_input_baseline(const std::vector<PoseSample>& samples,
                              const std::vector<double>& deltas) {
  if (samples.empty()) throw ContractError("eval_input_baseline: empty dataset");
  std::vector<std::vector<Point2>> preds(samples.size());
  std::vector<std::vector<Point2>> gts(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    preds[i] = decode_argmax(samples[i].input_maps);
    gts[i] = samples[i].keypoints;
  }
  return mpck(preds, gts, deltas, double(samples[0].input_maps[0].cols()));
}

TrainResult train_loop(RefineModel& model, const std::vector<PoseSample>& train_set,
                       const std::vector<PoseSample>& eval_set, const TrainConfig& cfg,
                       OptimizerState* state, int start_epoch,
                       const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  if (train_set.empty() && cfg.epochs > start_epoch)
    throw ConfigError("train_loop: training set is empty");

  Vector params = flatten_params(model);
  OptimizerState local_state =
      state && state->m.size() > 0 ? *state
                                   : OptimizerState::make(cfg.optimizer, params.size(), cfg.lr);
  if (local_state.m.size() != params.size())
    throw ContractError("train_loop: optimizer state does not match parameter count");

  TrainResult res;
  auto evaluate = [&](EpochRecord& rec) {
    if (eval_set.empty()) return;
    rec.evaluated = true;
    rec.pck = eval_model(model, eval_set, cfg.eval_deltas, cfg.threads);
    if (rec.pck.mean > res.best_mpck) {
      res.best_mpck = rec.pck.mean;
      res.best_epoch = rec.epoch;
      res.best_epochs_done = rec.epoch + 1;
      res.best_params = flatten_params(model);
      res.best_opt = local_state;
      rec.is_best = true;
    }
  };

  // L1 is constant per sample here (the preliminary maps are not learnable),
  // so it is computed once and added to the reported loss.
  std::vector<double> l1_cache(train_set.size(), 0.0);
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < train_set[i].input_maps.size(); ++c)
      acc += (train_set[i].input_maps[c] - train_set[i].gt_maps[c]).squaredNorm();
    l1_cache[i] = double(cfg.loss.stages) * acc;
  }

  {
    EpochRecord init;
    init.epoch = start_epoch - 1;
    init.lr = lr_at(cfg, start_epoch);
    init.alpha = alpha_at(cfg.loss, start_epoch);
    evaluate(init);
    res.log.push_back(init);
    if (on_epoch) on_epoch(init);
  }

  const int n = int(train_set.size());
  std::vector<Vector> sample_grads(std::size_t(std::min(cfg.batch_size, std::max(n, 1))));
  std::vector<double> sample_l2(sample_grads.size());

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const double lr_now = lr_at(cfg, epoch);
    const double alpha_now = alpha_at(cfg.loss, epoch);
    const auto order = shuffled_indices(n, derive_seed(cfg.seed, 0xE9ULL, std::uint64_t(epoch)));

    double epoch_l1 = 0.0, epoch_l2 = 0.0;
    for (int base = 0; base < n; base += cfg.batch_size) {
      const int bn = std::min(cfg.batch_size, n - base);
      parallel_for(bn, cfg.threads, [&](int bi) {
        const PoseSample& s = train_set[std::size_t(order[std::size_t(base + bi)])];
        ModelCache cache;
        ModelOutput out = model_forward(model, s.input_maps, &cache);
        LossValue lv = total_loss(nullptr, out.fused, s.gt_maps, cfg.loss, epoch);
        ModelGrads g = model_backward(model, cache, lv.d_fused);
        sample_grads[std::size_t(bi)] = flatten_grads(model, g);
        sample_l2[std::size_t(bi)] = lv.l2;
      });

      Vector grad = Vector::Zero(params.size());
      double batch_l2 = 0.0, batch_l1 = 0.0;
      for (int bi = 0; bi < bn; ++bi) {
        grad += sample_grads[std::size_t(bi)];
        batch_l2 += sample_l2[std::size_t(bi)];
        batch_l1 += l1_cache[std::size_t(order[std::size_t(base + bi)])];
      }
      grad /= double(bn);

      const double batch_loss = (alpha_now * batch_l1 + batch_l2) / double(bn);
      if (!std::isfinite(batch_loss) || !grad.allFinite()) {
        char diag[160];
        std::snprintf(diag, sizeof(diag),
                      "non-finite loss at epoch %d batch %d (parameter norm %.6g)", epoch,
                      base / cfg.batch_size, params.norm());
        throw NumericError(diag);
      }
      epoch_l1 += batch_l1;
      epoch_l2 += batch_l2;

      opt_step(params, grad, local_state, lr_now);
      set_params(model, params);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.has_loss = true;
    rec.l1 = epoch_l1 / double(n);
    rec.l2 = epoch_l2 / double(n);
    rec.loss = alpha_now * rec.l1 + rec.l2;
    rec.lr = lr_now;
    rec.alpha = alpha_now;
    if ((epoch - start_epoch) % cfg.eval_every == cfg.eval_every - 1 || epoch == cfg.epochs - 1)
      evaluate(rec);
    res.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }

  if (state) *state = local_state;
  return res;
}

GradcheckReport gradcheck(const RefineModel& model, const PoseSample& sample,
                          const LossConfig& loss_cfg, double epsilon, const std::string& filter,
                          Eigen::Index subsample, std::uint64_t seed, int threads) {
  if (epsilon < 1e-8 || epsilon > 1e-4)
    throw ConfigError("gradcheck: epsilon must lie in [1e-8, 1e-4]");

  ModelCache cache;
  ModelOutput out = model_forward(model, sample.input_maps, &cache);
  LossValue lv = total_loss(nullptr, out.fused, sample.gt_maps, loss_cfg, 0);
  ModelGrads grads = model_backward(model, cache, lv.d_fused);
  const Vector analytic = flatten_grads(model, grads);
  const Vector params = flatten_params(model);

  GradcheckReport report;
  std::vector<Eigen::Index> work;        // flat parameter indices
  std::vector<std::size_t> work_group;   // group index per work item

  for (const auto& group : param_groups(model)) {
    if (!filter.empty() && group.name.rfind(filter, 0) != 0) continue;
    GradcheckGroup g;
    g.name = group.name;
    std::vector<Eigen::Index> indices;
    if (subsample > 0 && group.size > subsample) {
      Pcg32 rng(derive_seed(seed, 0x6CULL, std::uint64_t(report.groups.size())));
      std::vector<Eigen::Index> all(std::size_t(group.size));
      for (Eigen::Index i = 0; i < group.size; ++i) all[std::size_t(i)] = group.offset + i;
      for (Eigen::Index i = 0; i < subsample; ++i) {
        const auto j = i + Eigen::Index(rng.uniform_int(std::uint32_t(group.size - i)));
        std::swap(all[std::size_t(i)], all[std::size_t(j)]);
      }
      indices.assign(all.begin(), all.begin() + subsample);
    } else {
      for (Eigen::Index i = 0; i < group.size; ++i) indices.push_back(group.offset + i);
    }
    g.checked = Eigen::Index(indices.size());
    for (auto idx : indices) {
      work.push_back(idx);
      work_group.push_back(report.groups.size());
    }
    report.groups.push_back(g);
  }
  if (report.groups.empty())
    throw ConfigError("gradcheck: no parameter group matches filter '" + filter + "'");

  std::vector<double> rel(work.size()), numeric(work.size());
  // Error floor scaled to the gradient magnitude so vanishing entries are
  // judged absolutely rather than producing 0/0 blowups.
  const double floor = 1e-3 * (1.0 + analytic.cwiseAbs().maxCoeff());
  const int nthreads = std::max(1, threads);
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    try {
      RefineModel local = model;
      Vector p = params;
      for (int i = next.fetch_add(1); i < int(work.size()); i = next.fetch_add(1)) {
        const Eigen::Index idx = work[std::size_t(i)];
        const double keep = p(idx);
        p(idx) = keep + epsilon;
        set_params(local, p);
        const double up = loss_of(local, sample, loss_cfg);
        p(idx) = keep - epsilon;
        set_params(local, p);
        const double down = loss_of(local, sample, loss_cfg);
        p(idx) = keep;
        const double num = (up - down) / (2.0 * epsilon);
        const double a = analytic(idx);
        numeric[std::size_t(i)] = num;
        rel[std::size_t(i)] = std::abs(a - num) / std::max({std::abs(a), std::abs(num), floor});
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!error) error = std::current_exception();
      next.store(int(work.size()));
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);

  for (std::size_t i = 0; i < work.size(); ++i) {
    auto& g = report.groups[work_group[i]];
    if (rel[i] >= g.max_rel) {
      if (rel[i] > g.max_rel || g.worst_index < 0) {
        g.max_rel = rel[i];
        g.worst_index = work[i];
        g.analytic = analytic(work[i]);
        g.numeric = numeric[i];
      }
    }
  }
  for (const auto& g : report.groups) {
    if (g.max_rel >= report.max_rel) {
      if (g.max_rel > report.max_rel || report.worst_group.empty()) {
        report.max_rel = g.max_rel;
        report.worst_group = g.name;
      }
    }
  }
  return report;
}

void save_checkpoint(const std::string& path, const RefineModel& model,
                     const OptimizerState& opt, int epochs_done, double best_mpck,
                     int best_epoch) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError(DataErrorCode::missing_file, "cannot open '" + path + "' for writing");
  save_model(os, model);
  binio::write_magic(os, kCheckpointMagic);
  binio::write_u32(os, opt.kind == OptKind::adaptive_moment ? 1 : 0);
  binio::write_u64(os, std::uint64_t(opt.step_count));
  binio::write_f64(os, opt.lr);
  binio::write_f64(os, opt.beta1);
  binio::write_f64(os, opt.beta2);
  binio::write_f64(os, opt.eps);
  binio::write_f64(os, opt.momentum);
  binio::write_u32(os, std::uint32_t(epochs_done));
  binio::write_u32(os, std::uint32_t(best_epoch));
  binio::write_f64(os, best_mpck);
  binio::write_u64(os, std::uint64_t(opt.m.size()));
  binio::write_f64_array(os, opt.m.data(), std::size_t(opt.m.size()));
  binio::write_u64(os, std::uint64_t(opt.v.size()));
  binio::write_f64_array(os, opt.v.data(), std::size_t(opt.v.size()));
}

Checkpoint load_checkpoint(const std::string& path, const SkeletonGraph& graph) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw DataError(DataErrorCode::missing_file, "cannot open checkpoint file '" + path + "'");
  Checkpoint ck;
  ck.model = load_model(is, graph);
  binio::expect_magic(is, kCheckpointMagic, "checkpoint");
  ck.opt.kind = binio::read_u32(is, "optimizer kind") == 1 ? OptKind::adaptive_moment
                                                           : OptKind::sgd_momentum;
  ck.opt.step_count = std::int64_t(binio::read_u64(is, "step count"));
  ck.opt.lr = binio::read_f64(is, "lr");
  ck.opt.beta1 = binio::read_f64(is, "beta1");
  ck.opt.beta2 = binio::read_f64(is, "beta2");
  ck.opt.eps = binio::read_f64(is, "eps");
  ck.opt.momentum = binio::read_f64(is, "momentum");
  ck.epochs_done = int(binio::read_u32(is, "epochs done"));
  ck.best_epoch = int(binio::read_u32(is, "best epoch"));
  ck.best_mpck = binio::read_f64(is, "best mpck");
  const auto mn = binio::read_u64(is, "moment size");
  ck.opt.m = Vector(Eigen::Index(mn));
  binio::read_f64_array(is, ck.opt.m.data(), mn, "first moment");
  const auto vn = binio::read_u64(is, "moment size");
  ck.opt.v = Vector(Eigen::Index(vn));
  binio::read_f64_array(is, ck.opt.v.data(), vn, "second moment");
  if (Eigen::Index(mn) != param_count(ck.model) ||
      (ck.opt.kind == OptKind::adaptive_moment && vn != mn))
    throw DataError(DataErrorCode::bad_header, "checkpoint optimizer state size mismatch");
  return ck;
}

}  // namespace egc
