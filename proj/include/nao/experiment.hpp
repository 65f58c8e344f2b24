#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "nao/config.hpp"
#include "nao/darcy.hpp"
#include "nao/dataset_io.hpp"
#include "nao/training.hpp"

namespace nao {

// ---------------------------------------------------------------------------
// Config -> experiment spec
// ---------------------------------------------------------------------------

// Kernel names: sine1..sine8, cosine0..cosine6, poly1..poly7, ood1, gaussian.
inline RadialKernelSpec parse_kernel_spec(const std::string& name) {
  auto tail_int = [&](std::size_t prefix_len) {
    try {
      return std::stoi(name.substr(prefix_len));
    } catch (const std::exception&) {
      throw ConfigError("bad kernel index in '" + name + "'");
    }
  };
  if (name.rfind("sine", 0) == 0 && name.size() > 4)
    return RadialKernelSpec(KernelFamily::sine, tail_int(4));
  if (name.rfind("cosine", 0) == 0 && name.size() > 6)
    return RadialKernelSpec(KernelFamily::cosine, tail_int(6));
  if (name.rfind("poly", 0) == 0 && name.size() > 4)
    return RadialKernelSpec(KernelFamily::polynomial, tail_int(4));
  if (name == "ood1") return RadialKernelSpec(KernelFamily::ood1, 0);
  if (name == "gaussian") return RadialKernelSpec(KernelFamily::gaussian, 0);
  throw ConfigError("unknown kernel spec '" + name + "'");
}

// Function names: cos1..cosK, sin1..sinK.
inline InputFunctionSpec parse_function_spec(const std::string& name) {
  try {
    if (name.rfind("cos", 0) == 0)
      return InputFunctionSpec(InputFunctionSpec::Kind::cos_k, std::stoi(name.substr(3)));
    if (name.rfind("sin", 0) == 0)
      return InputFunctionSpec(InputFunctionSpec::Kind::sin_k, std::stoi(name.substr(3)));
  } catch (const std::exception&) {
  }
  throw ConfigError("unknown input function '" + name + "'");
}

struct RadialExperiment {
  std::vector<RadialKernelSpec> train_kernels;
  std::vector<InputFunctionSpec> functions;
  std::vector<std::pair<std::string, RadialKernelSpec>> test_sets;  // ID, OOD1, OOD2
  double dx = 0.025;
  double delta = 11.0;
  std::size_t d = 302;
  std::size_t max_blocks = 0;
  double quad_tol = 1e-8;
  std::uint64_t seed = 7;
  std::optional<double> cross_dx;
};

struct DarcyExperiment {
  std::size_t n = 21;
  std::size_t n_structures = 4;
  std::size_t n_test_structures = 1;
  std::size_t n_sources = 10;
  std::size_t d = 10;
  std::size_t n_perm = 1;
  double length_scale = 0.2;
  std::uint64_t seed = 11;
  std::string scenario = "g_to_p";  // or b_to_p
};

struct ExperimentSpec {
  enum class Domain { radial, darcy };
  std::string name = "experiment";
  Domain domain = Domain::radial;
  ModelConfig model;
  RadialExperiment radial;
  DarcyExperiment darcy;
  TrainSettings train;
  bool holdout = true;
  bool export_data_csv = false;
  std::string config_hash;
  std::string raw_config;
};

inline ExperimentSpec parse_experiment(const Config& cfg) {
  ExperimentSpec spec;
  spec.name = cfg.get_string("experiment.name", "experiment");
  spec.config_hash = cfg.hash_hex();
  spec.raw_config = cfg.raw_text();
  const std::string domain = cfg.get_string("experiment.domain", "radial");
  if (domain == "radial")
    spec.domain = ExperimentSpec::Domain::radial;
  else if (domain == "darcy")
    spec.domain = ExperimentSpec::Domain::darcy;
  else
    throw ConfigError("experiment.domain must be radial or darcy, got '" + domain + "'");

  ModelConfig& m = spec.model;
  m.layers = int(cfg.get_int("model.layers", 3));
  m.d = std::size_t(cfg.get_int("model.d", 302));
  m.d_k = std::size_t(cfg.get_int("model.d_k", 10));
  const std::string mixer = cfg.get_string("model.variant.mixer", "continuous");
  if (mixer == "continuous")
    m.variant.mixer = Mixer::continuous;
  else if (mixer == "discrete")
    m.variant.mixer = Mixer::discrete;
  else
    throw ConfigError("model.variant.mixer must be continuous or discrete");
  const std::string act = cfg.get_string("model.variant.activation", "linear");
  if (act == "linear")
    m.variant.activation = Activation::linear;
  else if (act == "softmax")
    m.variant.activation = Activation::softmax;
  else
    throw ConfigError("model.variant.activation must be linear or softmax");
  const std::string inputs = cfg.get_string("model.variant.inputs", "u_and_f");
  if (inputs == "u_and_f")
    m.variant.inputs = Inputs::u_and_f;
  else if (inputs == "u_only")
    m.variant.inputs = Inputs::u_only;
  else
    throw ConfigError("model.variant.inputs must be u_and_f or u_only");
  const std::string head_kind = cfg.get_string("model.head.kind", "auto");
  if (head_kind == "auto")
    m.head_kind = default_head_kind(m.variant.mixer);
  else if (head_kind == "mlp")
    m.head_kind = HeadKind::mlp;
  else if (head_kind == "dense")
    m.head_kind = HeadKind::dense;
  else
    throw ConfigError("model.head.kind must be auto, mlp or dense");
  if (cfg.has("model.head.hidden")) {
    m.head.hidden.clear();
    for (long long h : cfg.get_int_list("model.head.hidden"))
      m.head.hidden.push_back(std::size_t(h));
  }
  m.head.slope = cfg.get_double("model.head.slope", 0.01);
  m.init_seed = std::uint64_t(cfg.get_int("model.init.seed", 1));
  m.layout = spec.domain == ExperimentSpec::Domain::radial ? TokenLayout::radial
                                                           : TokenLayout::paired;

  if (spec.domain == ExperimentSpec::Domain::radial) {
    RadialExperiment& r = spec.radial;
    if (cfg.has("data.train_kernels")) {
      for (const std::string& s : cfg.get_string_list("data.train_kernels"))
        r.train_kernels.push_back(parse_kernel_spec(s));
    } else {
      for (int eta : {1, 2, 3, 4, 6, 7, 8})
        r.train_kernels.push_back(RadialKernelSpec(KernelFamily::sine, eta));
    }
    if (cfg.has("data.functions")) {
      for (const std::string& s : cfg.get_string_list("data.functions"))
        r.functions.push_back(parse_function_spec(s));
    } else {
      r.functions.push_back(InputFunctionSpec(InputFunctionSpec::Kind::cos_k, 1));
      r.functions.push_back(InputFunctionSpec(InputFunctionSpec::Kind::sin_k, 2));
    }
    r.dx = cfg.get_double("data.dx", 0.025);
    r.delta = cfg.get_double("data.delta", 11.0);
    r.d = std::size_t(cfg.get_int("data.d", static_cast<long long>(m.d)));
    r.max_blocks = std::size_t(cfg.get_int("data.max_blocks", 0));
    r.quad_tol = cfg.get_double("data.quad_tol", 1e-8);
    r.seed = std::uint64_t(cfg.get_int("data.seed", 7));
    if (cfg.has("data.test_id"))
      r.test_sets.emplace_back("ID", parse_kernel_spec(cfg.get_string("data.test_id")));
    else
      r.test_sets.emplace_back("ID", RadialKernelSpec(KernelFamily::sine, 5));
    if (cfg.has("data.test_ood1"))
      r.test_sets.emplace_back("OOD1", parse_kernel_spec(cfg.get_string("data.test_ood1")));
    if (cfg.has("data.test_ood2"))
      r.test_sets.emplace_back("OOD2", parse_kernel_spec(cfg.get_string("data.test_ood2")));
    if (cfg.has("eval.cross_dx")) r.cross_dx = cfg.get_double("eval.cross_dx");
    if (r.d != m.d)
      throw ConfigError("data.d (" + std::to_string(r.d) + ") must equal model.d (" +
                        std::to_string(m.d) + ")");
  } else {
    DarcyExperiment& dc = spec.darcy;
    dc.n = std::size_t(cfg.get_int("data.n", 21));
    dc.n_structures = std::size_t(cfg.get_int("data.n_structures", 4));
    dc.n_test_structures = std::size_t(cfg.get_int("data.n_test_structures", 1));
    dc.n_sources = std::size_t(cfg.get_int("data.n_sources", 10));
    dc.d = std::size_t(cfg.get_int("data.d", static_cast<long long>(m.d)));
    dc.n_perm = std::size_t(cfg.get_int("data.n_perm", 1));
    dc.length_scale = cfg.get_double("data.length_scale", 0.2);
    dc.seed = std::uint64_t(cfg.get_int("data.seed", 11));
    dc.scenario = cfg.get_string("data.scenario", "g_to_p");
    if (dc.scenario != "g_to_p" && dc.scenario != "b_to_p")
      throw ConfigError("data.scenario must be g_to_p or b_to_p");
    if (dc.d != m.d) throw ConfigError("data.d must equal model.d");
    if (dc.d > dc.n_sources && dc.scenario == "g_to_p")
      throw ConfigError("data.d cannot exceed data.n_sources");
  }

  TrainSettings& ts = spec.train;
  ts.epochs = std::size_t(cfg.get_int("train.epochs",
                                      spec.domain == ExperimentSpec::Domain::radial ? 2000 : 500));
  ts.adam.learning_rate = cfg.get_double("train.learning_rate", 1e-3);
  ts.adam.beta1 = cfg.get_double("train.beta1", 0.9);
  ts.adam.beta2 = cfg.get_double("train.beta2", 0.999);
  ts.adam.eps = cfg.get_double("train.eps", 1e-8);
  ts.adam.weight_decay = cfg.get_double("train.weight_decay", 0.0);
  ts.decay_factor = cfg.get_double("train.decay_factor", 0.5);
  ts.decay_steps = int(cfg.get_int("train.decay_steps", 4));
  ts.batch_size = std::size_t(cfg.get_int("train.batch_size", 0));
  ts.plateau_rel = cfg.get_double("train.plateau_rel", 1e-7);
  ts.plateau_window = std::size_t(cfg.get_int("train.plateau_window", 100));
  ts.checkpoint_every = std::size_t(cfg.get_int("train.checkpoint_every", 0));
  ts.seed = std::uint64_t(cfg.get_int("train.seed", 1));
  spec.holdout = cfg.get_bool("train.holdout", true);
  spec.export_data_csv = cfg.get_bool("data.export_csv", false);
  return spec;
}

// ---------------------------------------------------------------------------
// Artifact sidecars
// ---------------------------------------------------------------------------

inline void write_sidecar(const std::string& artifact_path, const std::string& config_hash,
                          std::uint64_t seed) {
  std::ofstream os(artifact_path + ".meta", std::ios::trunc);
  if (!os) throw ConfigError("cannot write sidecar for " + artifact_path);
  os << "config_hash=" << config_hash << "\n"
     << "seed=" << seed << "\n"
     << "tool=naolab\n";
}

// ---------------------------------------------------------------------------
// Dataset generation and the full pipeline
// ---------------------------------------------------------------------------

struct RadialDatasets {
  SampleGrid grid;
  std::vector<TokenPair> train, validation;
  std::vector<std::pair<std::string, std::vector<TokenPair>>> tests;
  std::vector<std::pair<std::string, std::vector<double>>> test_truths;
  std::vector<double> rho;  // empirical measure from the training set
};

inline RadialDatasets generate_radial(const ExperimentSpec& spec) {
  const RadialExperiment& r = spec.radial;
  RadialDatasets out{SampleGrid(r.dx, r.delta), {}, {}, {}, {}, {}};
  std::vector<TokenPair> all = assemble_dataset(r.train_kernels, r.functions, out.grid, r.d,
                                                r.seed, r.max_blocks, r.quad_tol);
  if (spec.holdout) {
    // Last sample of each task held out for plateau detection.
    std::vector<std::size_t> holdouts;
    for (std::size_t i = 0; i < all.size(); ++i)
      if (i + 1 == all.size() || all[i + 1].task_id != all[i].task_id) holdouts.push_back(i);
    std::size_t h = 0;
    for (std::size_t i = 0; i < all.size(); ++i) {
      if (h < holdouts.size() && i == holdouts[h]) {
        out.validation.push_back(all[i]);
        ++h;
      } else {
        out.train.push_back(all[i]);
      }
    }
  } else {
    out.train = all;
  }
  RhoResult rho = build_rho(all, out.grid.n_r, out.grid.dr);
  out.rho = rho.rho;
  for (const auto& [name, kspec] : r.test_sets) {
    out.tests.emplace_back(name, assemble_dataset({kspec}, r.functions, out.grid, r.d,
                                                  r.seed + 1, r.max_blocks, r.quad_tol));
    out.test_truths.emplace_back(name, sample_kernel(kspec, out.grid));
  }
  return out;
}

struct DarcyDatasets {
  std::vector<TokenPair> train, validation;
  std::vector<TokenPair> test;
  std::optional<ValueGrid> test_kernel_truth;  // padded inverse stiffness (g_to_p)
};

inline DarcyDatasets generate_darcy(const ExperimentSpec& spec) {
  const DarcyExperiment& dc = spec.darcy;
  DarcyDatasets out;
  Rng seeder(dc.seed);
  std::vector<darcy::Microstructure> structures;
  for (std::size_t s = 0; s < dc.n_structures + dc.n_test_structures; ++s)
    structures.push_back(darcy::generate_microstructure(seeder.fork(), dc.n, dc.length_scale));
  std::vector<ValueGrid> sources;
  {
    darcy::GrfSampler sampler{darcy::Grid(dc.n), dc.length_scale};
    Rng src_rng(seeder.fork());
    for (std::size_t s = 0; s < dc.n_sources; ++s) sources.push_back(sampler.sample(src_rng));
  }
  const std::uint64_t perm_seed = seeder.fork();

  if (dc.scenario == "g_to_p") {
    std::vector<ValueGrid> cols(sources.begin(), sources.begin() + long(dc.d));
    std::vector<TokenPair> train_raw;
    for (std::size_t s = 0; s < dc.n_structures; ++s)
      train_raw.push_back(darcy::build_tokens_g_to_p(structures[s], cols, int(s)));
    std::vector<TokenPair> augmented = darcy::permute_augment(train_raw, dc.n_perm, perm_seed);
    if (spec.holdout && augmented.size() > 1) {
      out.validation.push_back(augmented.back());
      augmented.pop_back();
    }
    out.train = std::move(augmented);
    for (std::size_t s = dc.n_structures; s < structures.size(); ++s)
      out.test.push_back(darcy::build_tokens_g_to_p(structures[s], cols, int(s)));
    if (!out.test.empty())
      out.test_kernel_truth = darcy::pad_kernel_to_grid(
          darcy::stiffness_inverse_kernel(structures[dc.n_structures].conductivity));
  } else {
    // b -> p: fixed source, columns are microstructures. Tasks partition the
    // structure pool into token-width groups.
    const ValueGrid& g0 = sources.front();
    std::vector<TokenPair> all;
    std::vector<darcy::Microstructure> pool(structures.begin(),
                                            structures.end() - long(dc.n_test_structures));
    const std::size_t n_tasks = pool.size() / dc.d;
    if (n_tasks == 0) throw ConfigError("b_to_p: need at least d training structures");
    for (std::size_t task = 0; task < n_tasks; ++task) {
      std::vector<darcy::Microstructure> group(pool.begin() + long(task * dc.d),
                                               pool.begin() + long((task + 1) * dc.d));
      all.push_back(darcy::build_tokens_b_to_p(group, g0, int(task)));
    }
    std::vector<TokenPair> augmented = darcy::permute_augment(all, dc.n_perm, perm_seed);
    if (spec.holdout && augmented.size() > 1) {
      out.validation.push_back(augmented.back());
      augmented.pop_back();
    }
    out.train = std::move(augmented);
    if (dc.n_test_structures >= dc.d) {
      std::vector<darcy::Microstructure> group(structures.end() - long(dc.d), structures.end());
      out.test.push_back(darcy::build_tokens_b_to_p(group, g0, -1));
    }
  }
  return out;
}

struct ExperimentResult {
  ResultsRow row;
  TrainingHistory history;
  std::optional<CrossResolutionEval> cross;
  std::string best_checkpoint;
};

// gen-data -> train -> eval, writing every artifact under out_dir.
inline ExperimentResult run_experiment(const ExperimentSpec& spec, const std::string& out_dir,
                                       int threads) {
  namespace fs = std::filesystem;
  ExperimentResult result;
  const std::string data_dir = out_dir + "/data";
  const std::string ckpt_dir = out_dir + "/checkpoints";
  fs::create_directories(data_dir);
  fs::create_directories(ckpt_dir);

  TrainSettings ts = spec.train;
  ts.threads = threads;

  ResultsRow row;
  row.setting = spec.name;
  row.model_variant = variant_name(spec.model);
  row.d = spec.model.d;
  row.d_k = spec.model.d_k;

  if (spec.domain == ExperimentSpec::Domain::radial) {
    RadialDatasets data = generate_radial(spec);
    {
      std::vector<TokenPair> everything = data.train;
      everything.insert(everything.end(), data.validation.begin(), data.validation.end());
      dataio::save(data_dir + "/train.naodata", everything, data.grid.delta);
      write_sidecar(data_dir + "/train.naodata", spec.config_hash, spec.radial.seed);
      if (spec.export_data_csv) {
        dataio::export_csv(data_dir + "/train.csv", everything);
        write_sidecar(data_dir + "/train.csv", spec.config_hash, spec.radial.seed);
      }
    }
    NaoParameters params = init_nao(spec.model, data.grid.n_r);
    row.n_params = params.store.scalar_count();
    TrainOutput trained = train(std::move(params), data.train, data.validation, ts, ckpt_dir);
    result.history = trained.history;
    result.best_checkpoint = out_dir + "/best.ckpt";
    ckpt::save(result.best_checkpoint, trained.params.store);
    write_sidecar(result.best_checkpoint, spec.config_hash, spec.model.init_seed);
    write_history_csv(out_dir + "/history.csv", trained.history);
    write_sidecar(out_dir + "/history.csv", spec.config_hash, ts.seed);
    write_timing_log(out_dir + "/timing.log", trained.history);

    for (std::size_t i = 0; i < data.tests.size(); ++i) {
      const auto& [name, samples] = data.tests[i];
      const auto& truth = data.test_truths[i].second;
      TaskEval ev = evaluate_radial(trained.params, samples, &truth, data.rho, data.grid.dr,
                                    name);
      std::vector<double> r_grid = data.grid.r_grid();
      export_kernel_csv(out_dir + "/kernel_" + name + ".csv", r_grid, data.rho, truth,
                        ev.kernel_mean);
      write_sidecar(out_dir + "/kernel_" + name + ".csv", spec.config_hash, spec.radial.seed);
      if (name == "ID") {
        row.op_id = ev.operator_err;
        row.k_id = ev.kernel_err;
      } else if (name == "OOD1") {
        row.op_ood1 = ev.operator_err;
        row.k_ood1 = ev.kernel_err;
      } else if (name == "OOD2") {
        row.op_ood2 = ev.operator_err;
        row.k_ood2 = ev.kernel_err;
      }
    }

    if (spec.radial.cross_dx) {
      const RadialKernelSpec& id_kernel = spec.radial.test_sets.front().second;
      result.cross = cross_resolution_eval(trained.params, id_kernel, spec.radial.functions,
                                           spec.radial.delta, spec.radial.dx,
                                           *spec.radial.cross_dx, spec.radial.d,
                                           spec.radial.seed + 2, spec.radial.max_blocks,
                                           spec.radial.quad_tol);
      std::ofstream os(out_dir + "/cross_resolution.csv", std::ios::trunc);
      os << "dx,operator_err,kernel_err\n";
      char buf[128];
      std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", result.cross->dx_base,
                    result.cross->base.operator_err, result.cross->base.kernel_err);
      os << buf;
      std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", result.cross->dx_alternate,
                    result.cross->alternate.operator_err, result.cross->alternate.kernel_err);
      os << buf;
      os.close();
      write_sidecar(out_dir + "/cross_resolution.csv", spec.config_hash, spec.radial.seed);
    }
  } else {
    DarcyDatasets data = generate_darcy(spec);
    {
      std::vector<TokenPair> everything = data.train;
      everything.insert(everything.end(), data.validation.begin(), data.validation.end());
      dataio::save(data_dir + "/train.naodata", everything, 0.0);
      write_sidecar(data_dir + "/train.naodata", spec.config_hash, spec.darcy.seed);
    }
    NaoParameters params = init_nao(spec.model, data.train.front().u.rows());
    row.n_params = params.store.scalar_count();
    TrainOutput trained = train(std::move(params), data.train, data.validation, ts, ckpt_dir);
    result.history = trained.history;
    result.best_checkpoint = out_dir + "/best.ckpt";
    ckpt::save(result.best_checkpoint, trained.params.store);
    write_sidecar(result.best_checkpoint, spec.config_hash, spec.model.init_seed);
    write_history_csv(out_dir + "/history.csv", trained.history);
    write_sidecar(out_dir + "/history.csv", spec.config_hash, ts.seed);
    write_timing_log(out_dir + "/timing.log", trained.history);
    if (!data.test.empty()) {
      const ValueGrid* truth =
          data.test_kernel_truth ? &*data.test_kernel_truth : nullptr;
      TaskEval ev = evaluate_paired(trained.params, data.test, truth, "ID");
      row.op_id = ev.operator_err;
      if (ev.has_kernel_err) row.k_id = ev.kernel_err;
    }
  }

  write_results_csv(out_dir + "/results.csv", {row});
  write_sidecar(out_dir + "/results.csv", spec.config_hash, spec.train.seed);
  result.row = row;
  return result;
}

}  // namespace nao
