#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "nao/adam.hpp"
#include "nao/checkpoint.hpp"
#include "nao/config.hpp"
#include "nao/estimation.hpp"
#include "nao/model.hpp"
#include "nao/radial.hpp"

namespace nao {

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

struct LossGraph {
  ForwardGraph fwd;
  int loss = -1;
};

// Per-sample loss: Riemann sum over x of |predicted f - f|^2. The batch mean
// is assembled outside sample graphs.
inline LossGraph build_loss_graph(const NaoParameters& p, const TokenPair& tokens,
                                  const ForwardOptions& opts = {}) {
  LossGraph lg{build_forward(p, tokens, opts), -1};
  Tape& t = lg.fwd.tape;
  const int target = t.constant(tokens.f);
  const int diff = t.sub(lg.fwd.prediction, target);
  lg.loss = t.scale(t.full_sum(t.mul(diff, diff)), tokens.x_weight);
  return lg;
}

struct BatchGradient {
  double loss = 0.0;
  std::vector<ValueGrid> grads;  // aligned with the parameter store
};

// Mean loss and gradients over the batch. Samples run in parallel (one
// graph per sample, read-only parameters); gradients reduce serially in
// sample-index order, so results are independent of the thread count.
inline BatchGradient batch_gradient(const NaoParameters& p,
                                    const std::vector<const TokenPair*>& batch,
                                    int threads = 1, const ForwardOptions& opts = {}) {
  if (batch.empty()) throw ConfigError("batch_gradient: empty batch");
  const std::size_t n = batch.size();
  const double seed_w = 1.0 / double(n);
  std::vector<double> losses(n, 0.0);
  std::vector<std::vector<ValueGrid>> grads(n);
  std::exception_ptr first_error;
  std::mutex err_mx;

  auto run_range = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t s = lo; s < hi; ++s) {
      try {
        LossGraph lg = build_loss_graph(p, *batch[s], opts);
        losses[s] = lg.fwd.tape.value(lg.loss)[0];
        lg.fwd.tape.backward(lg.loss, ValueGrid::scalar(seed_w));
        grads[s].reserve(lg.fwd.param_ids.size());
        for (int id : lg.fwd.param_ids) grads[s].push_back(lg.fwd.tape.grad(id));
      } catch (...) {
        std::lock_guard<std::mutex> lk(err_mx);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };

  const int t_count = std::max(1, std::min<int>(threads, int(n)));
  if (t_count == 1) {
    run_range(0, n);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + std::size_t(t_count) - 1) / std::size_t(t_count);
    for (int w = 0; w < t_count; ++w) {
      const std::size_t lo = std::size_t(w) * chunk;
      const std::size_t hi = std::min(n, lo + chunk);
      if (lo < hi) pool.emplace_back(run_range, lo, hi);
    }
    for (auto& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  BatchGradient out;
  out.grads.resize(p.store.size());
  for (std::size_t i = 0; i < p.store.size(); ++i)
    out.grads[i] = ValueGrid(p.store.value(i).shape);
  for (std::size_t s = 0; s < n; ++s) {  // serial, sample-index order
    out.loss += losses[s] * seed_w;
    for (std::size_t i = 0; i < out.grads.size(); ++i)
      for (std::size_t k = 0; k < out.grads[i].size(); ++k)
        out.grads[i][k] += grads[s][i][k];
  }
  return out;
}

inline double loss_value(const NaoParameters& p, const std::vector<TokenPair>& batch,
                         const ForwardOptions& opts = {}) {
  if (batch.empty()) throw ConfigError("loss_value: empty batch");
  double acc = 0.0;
  for (const TokenPair& s : batch) {
    LossGraph lg = build_loss_graph(p, s, opts);
    acc += lg.fwd.tape.value(lg.loss)[0];
  }
  return acc / double(batch.size());
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainSettings {
  std::size_t epochs = 2000;
  AdamConfig adam;
  double decay_factor = 0.5;
  int decay_steps = 4;  // decay every epochs/decay_steps epochs
  std::size_t batch_size = 0;  // 0 = full batch
  double plateau_rel = 1e-7;
  std::size_t plateau_window = 100;
  std::size_t checkpoint_every = 0;  // 0 = epochs/10
  std::uint64_t seed = 1;            // minibatch shuffling
  int threads = 1;
};

struct EpochRecord {
  std::size_t epoch;
  double train_loss;
  double val_loss;  // NaN when no holdout set
  double lr;
  double wall_seconds;
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_loss = 0.0;
  bool early_stopped = false;
};

// Thrown when the loss goes non-finite; carries the last good checkpoint.
struct TrainAbort : NumericError {
  std::string checkpoint;
  TrainAbort(const std::string& msg, std::string ckpt)
      : NumericError(msg), checkpoint(std::move(ckpt)) {}
};

struct TrainOutput {
  NaoParameters params;  // best-loss parameters
  TrainingHistory history;
};

inline TrainOutput train(NaoParameters params, const std::vector<TokenPair>& train_set,
                         const std::vector<TokenPair>& val_set, const TrainSettings& ts,
                         const std::string& checkpoint_dir = "") {
  if (train_set.empty()) throw ConfigError("train: empty training set");
  TrainOutput out;
  out.params = params;
  if (ts.epochs == 0) {
    out.history.best_loss = loss_value(params, train_set);
    return out;  // epoch budget 0: initialization unchanged
  }

  AdamConfig acfg = ts.adam;
  AdamState adam(params.store, acfg);
  Rng shuffle_rng(ts.seed);
  const std::size_t ckpt_every =
      ts.checkpoint_every ? ts.checkpoint_every : std::max<std::size_t>(1, ts.epochs / 10);
  const std::size_t decay_every =
      ts.decay_steps > 0 ? std::max<std::size_t>(1, ts.epochs / std::size_t(ts.decay_steps))
                         : ts.epochs + 1;
  std::string last_ckpt;
  double best = std::numeric_limits<double>::infinity();
  std::vector<double> monitor_hist;

  std::vector<const TokenPair*> order;
  order.reserve(train_set.size());
  for (const TokenPair& s : train_set) order.push_back(&s);

  for (std::size_t epoch = 1; epoch <= ts.epochs; ++epoch) {
    const auto tic = std::chrono::steady_clock::now();
    if (epoch > 1 && (epoch - 1) % decay_every == 0)
      adam.set_learning_rate(adam.config().learning_rate * ts.decay_factor);

    double epoch_loss = 0.0;
    try {
      if (ts.batch_size == 0 || ts.batch_size >= order.size()) {
        BatchGradient bg = batch_gradient(params, order, ts.threads);
        if (!std::isfinite(bg.loss)) throw NumericError("non-finite loss");
        adam.step(params.store, bg.grads);
        epoch_loss = bg.loss;
      } else {
        shuffle_rng.shuffle(order);
        double acc = 0.0;
        std::size_t count = 0;
        for (std::size_t lo = 0; lo < order.size(); lo += ts.batch_size) {
          const std::size_t hi = std::min(order.size(), lo + ts.batch_size);
          std::vector<const TokenPair*> mini(order.begin() + long(lo), order.begin() + long(hi));
          BatchGradient bg = batch_gradient(params, mini, ts.threads);
          if (!std::isfinite(bg.loss)) throw NumericError("non-finite loss");
          adam.step(params.store, bg.grads);
          acc += bg.loss * double(mini.size());
          count += mini.size();
        }
        epoch_loss = acc / double(count);
      }
    } catch (const NumericError& e) {
      throw TrainAbort("training aborted at epoch " + std::to_string(epoch) + ": " + e.what(),
                       last_ckpt);
    }

    double val = std::numeric_limits<double>::quiet_NaN();
    if (!val_set.empty()) val = loss_value(params, val_set);
    const double monitored = val_set.empty() ? epoch_loss : val;
    if (monitored < best) {
      best = monitored;
      out.history.best_epoch = epoch;
      out.params = params;  // snapshot
    }

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - tic).count();
    out.history.epochs.push_back({epoch, epoch_loss, val, adam.config().learning_rate, wall});

    if (!checkpoint_dir.empty() && (epoch % ckpt_every == 0 || epoch == ts.epochs)) {
      last_ckpt = checkpoint_dir + "/epoch_" + std::to_string(epoch) + ".ckpt";
      ckpt::save(last_ckpt, params.store);
    }

    monitor_hist.push_back(monitored);
    if (monitor_hist.size() > ts.plateau_window) {
      const double then = monitor_hist[monitor_hist.size() - 1 - ts.plateau_window];
      if (std::abs(then - monitored) < ts.plateau_rel * std::max(std::abs(then), 1e-300)) {
        out.history.early_stopped = true;
        break;
      }
    }
  }
  out.history.best_loss = best;
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct TaskEval {
  std::string name;
  double operator_err = 0.0;
  bool has_kernel_err = false;
  double kernel_err = 0.0;
  std::vector<double> kernel_mean;  // averaged kernel estimate (radial only)
};

// Operator and kernel errors over one test task's samples. k_true == nullptr
// marks the kernel error unavailable (operator error only).
inline TaskEval evaluate_radial(const NaoParameters& p, const std::vector<TokenPair>& samples,
                                const std::vector<double>* k_true,
                                const std::vector<double>& rho, double dr,
                                const std::string& name = "") {
  if (samples.empty()) throw ConfigError("evaluate: no samples");
  TaskEval ev;
  ev.name = name;
  std::vector<ValueGrid> preds, truths;
  double k_err_acc = 0.0;
  const std::size_t n_r = samples.front().u.rows();
  ev.kernel_mean.assign(n_r, 0.0);
  for (const TokenPair& s : samples) {
    ForwardGraph g = build_forward(p, s);
    preds.push_back(g.tape.value(g.prediction));
    truths.push_back(s.f);
    const ValueGrid& K = g.tape.value(g.kernel);
    std::vector<double> k_vec(n_r);
    for (std::size_t k = 0; k < n_r; ++k) {
      k_vec[k] = K.at(k, 0);
      ev.kernel_mean[k] += K.at(k, 0) / double(samples.size());
    }
    if (k_true) k_err_acc += kernel_error(k_vec, *k_true, rho, dr);
  }
  ev.operator_err = operator_error(preds, truths);
  if (k_true) {
    ev.has_kernel_err = true;
    ev.kernel_err = k_err_acc / double(samples.size());
  }
  return ev;
}

inline TaskEval evaluate_paired(const NaoParameters& p, const std::vector<TokenPair>& samples,
                                const ValueGrid* k_true, const std::string& name = "") {
  if (samples.empty()) throw ConfigError("evaluate: no samples");
  TaskEval ev;
  ev.name = name;
  std::vector<ValueGrid> preds, truths;
  double k_err_acc = 0.0;
  for (const TokenPair& s : samples) {
    ForwardGraph g = build_forward(p, s);
    preds.push_back(g.tape.value(g.prediction));
    truths.push_back(s.f);
    if (k_true) k_err_acc += kernel_error_frobenius(g.tape.value(g.kernel), *k_true);
  }
  ev.operator_err = operator_error(preds, truths);
  if (k_true) {
    ev.has_kernel_err = true;
    ev.kernel_err = k_err_acc / double(samples.size());
  }
  return ev;
}

// ---------------------------------------------------------------------------
// Cross-resolution evaluation
// ---------------------------------------------------------------------------

struct CrossResolutionEval {
  TaskEval base;
  TaskEval alternate;
  double dx_base = 0.0, dx_alternate = 0.0;
};

// Rebuilds the test task at an alternate resolution and evaluates both.
// Requires the mesh-free variant (continuous mixer + MLP head).
inline CrossResolutionEval cross_resolution_eval(
    const NaoParameters& p, const RadialKernelSpec& test_kernel,
    const std::vector<InputFunctionSpec>& functions, double delta, double dx_base,
    double dx_alternate, std::size_t d, std::uint64_t seed, std::size_t max_blocks = 0,
    double quad_tol = 1e-8) {
  if (p.config.variant.mixer != Mixer::continuous || p.config.head_kind != HeadKind::mlp)
    throw ConfigError("cross-resolution transfer: dense heads are mesh-bound; "
                      "continuous variant required");
  CrossResolutionEval out;
  out.dx_base = dx_base;
  out.dx_alternate = dx_alternate;
  for (int pass = 0; pass < 2; ++pass) {
    const double dx = pass == 0 ? dx_base : dx_alternate;
    SampleGrid grid(dx, delta);
    auto samples = assemble_dataset({test_kernel}, functions, grid, d, seed, max_blocks, quad_tol);
    RhoResult rho = build_rho(samples, grid.n_r, grid.dr);
    auto k_true = sample_kernel(test_kernel, grid);
    TaskEval ev = evaluate_radial(p, samples, &k_true, rho.rho, grid.dr,
                                  pass == 0 ? "base" : "alternate");
    (pass == 0 ? out.base : out.alternate) = ev;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Results table
// ---------------------------------------------------------------------------

inline std::string variant_name(const ModelConfig& cfg) {
  const NaoVariant& v = cfg.variant;
  if (v.inputs == Inputs::u_only) return "NAO-u";
  if (v.activation == Activation::softmax) return "Softmax-NAO";
  if (v.mixer == Mixer::discrete && cfg.head_kind == HeadKind::dense) return "Discrete-NAO";
  return "NAO";
}

struct ResultsRow {
  std::string setting;
  std::string model_variant;
  std::size_t d = 0, d_k = 0, n_params = 0;
  std::optional<double> op_id, op_ood1, op_ood2, k_id, k_ood1, k_ood2;
};

inline void write_results_csv(const std::string& path, const std::vector<ResultsRow>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ConfigError("cannot open csv for writing: " + path);
  os << "setting,model_variant,d,d_k,n_params,operator_err_ID,operator_err_OOD1,"
        "operator_err_OOD2,kernel_err_ID,kernel_err_OOD1,kernel_err_OOD2\n";
  auto cell = [](const std::optional<double>& v) {
    if (!v) return std::string("na");
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", *v);
    return std::string(buf);
  };
  for (const ResultsRow& r : rows) {
    os << r.setting << ',' << r.model_variant << ',' << r.d << ',' << r.d_k << ','
       << r.n_params << ',' << cell(r.op_id) << ',' << cell(r.op_ood1) << ','
       << cell(r.op_ood2) << ',' << cell(r.k_id) << ',' << cell(r.k_ood1) << ','
       << cell(r.k_ood2) << '\n';
  }
}

inline void write_history_csv(const std::string& path, const TrainingHistory& h) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ConfigError("cannot open csv for writing: " + path);
  os << "epoch,train_loss,val_loss,lr\n";
  char buf[160];
  for (const EpochRecord& e : h.epochs) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", e.epoch, e.train_loss,
                  e.val_loss, e.lr);
    os << buf;
  }
}

inline void write_timing_log(const std::string& path, const TrainingHistory& h) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ConfigError("cannot open log for writing: " + path);
  for (const EpochRecord& e : h.epochs)
    os << "epoch " << e.epoch << " wall_seconds " << e.wall_seconds << "\n";
}

}  // namespace nao
