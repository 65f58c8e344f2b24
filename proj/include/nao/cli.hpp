#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nao/experiment.hpp"
#include "nao/oracles.hpp"

namespace nao::cli {

// Exit codes are a stable contract: 0 success, 2 configuration error,
// 3 numeric failure. Oracle property failures exit 1.
inline constexpr int kExitOk = 0;
inline constexpr int kExitProperty = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;

namespace detail {

inline int resolve_threads(int flag_value) {
  if (flag_value > 0) return flag_value;
  if (const char* env = std::getenv("NAOLAB_THREADS")) {
    try {
      const int v = std::stoi(env);
      if (v > 0) return v;
    } catch (const std::exception&) {
    }
  }
  return 1;
}

inline void prepare_out_dir(const std::string& out, bool overwrite) {
  namespace fs = std::filesystem;
  if (fs::exists(out)) {
    if (!fs::is_directory(out)) throw ConfigError("output path is not a directory: " + out);
    if (!fs::is_empty(out) && !overwrite)
      throw ConfigError("output directory " + out +
                        " is not empty; pass --overwrite to reuse it");
  } else {
    fs::create_directories(out);
  }
}

inline ExperimentSpec load_spec(const std::string& config_path,
                                std::optional<std::uint64_t> seed_override) {
  ExperimentSpec spec = parse_experiment(Config::parse_file(config_path));
  if (seed_override) {
    spec.model.init_seed = *seed_override;
    spec.radial.seed = *seed_override;
    spec.darcy.seed = *seed_override;
    spec.train.seed = *seed_override;
  }
  return spec;
}

}  // namespace detail

inline int run_cli(std::vector<std::string> args, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"naolab: nonlocal attention operator experiments"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint_path;
  std::uint64_t seed_value = 0;
  bool seed_set = false, overwrite = false, dry_run = false;
  int threads = 0;

  auto add_common = [&](CLI::App* sub, bool needs_out) {
    sub->add_option("--config", config_path, "experiment config file")->required();
    if (needs_out) sub->add_option("--out", out_dir, "output directory")->required();
    sub->add_option("--seed", seed_value, "override every configured seed")
        ->each([&](const std::string&) { seed_set = true; });
    sub->add_flag("--overwrite", overwrite, "allow writing into a populated directory");
    sub->add_flag("--dry-run", dry_run, "validate the config and write nothing");
    sub->add_option("--threads", threads, "worker threads (NAOLAB_THREADS as fallback)");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate a dataset");
  add_common(gen, true);
  CLI::App* train_cmd = app.add_subcommand("train", "gen-data + train + eval pipeline");
  add_common(train_cmd, true);
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval_cmd, true);
  eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint to evaluate")->required();

  std::string suite;
  CLI::App* oracle_cmd = app.add_subcommand("oracle", "run a theory-oracle suite");
  oracle_cmd->add_option("suite", suite,
                         "gradients | riemann-equivalence | lemma1-limit | identifiability | "
                         "regularized-recovery | darcy-convergence")
      ->required();

  std::vector<std::size_t> bench_n = {96, 192, 384, 768};
  std::vector<std::size_t> bench_d = {16, 32};
  int bench_repeats = 3;
  std::string bench_out;
  CLI::App* bench_cmd = app.add_subcommand("bench", "forward+backward scaling benchmark");
  bench_cmd->add_option("--n-list", bench_n, "token row counts");
  bench_cmd->add_option("--d-list", bench_d, "token widths");
  bench_cmd->add_option("--repeats", bench_repeats, "repeats per cell (min is reported)");
  bench_cmd->add_option("--out", bench_out, "optional CSV output path");

  std::vector<std::string> report_inputs;
  std::string report_out;
  CLI::App* report_cmd = app.add_subcommand("report", "merge results.csv files into one table");
  report_cmd->add_option("inputs", report_inputs, "results.csv files")->required();
  report_cmd->add_option("--out", report_out, "merged CSV path")->required();

  try {
    std::vector<const char*> argv;
    argv.push_back("naolab");
    for (const std::string& a : args) argv.push_back(a.c_str());
    app.parse(int(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "argument error: " << e.what() << "\n";
    return kExitConfig;
  }

  const std::optional<std::uint64_t> seed_override =
      seed_set ? std::optional<std::uint64_t>(seed_value) : std::nullopt;

  try {
    if (gen->parsed() || train_cmd->parsed() || eval_cmd->parsed()) {
      ExperimentSpec spec = detail::load_spec(config_path, seed_override);
      if (dry_run) {
        out << "config ok: " << spec.name << " (hash " << spec.config_hash << ")\n";
        return kExitOk;
      }
      detail::prepare_out_dir(out_dir, overwrite);
      const int n_threads = detail::resolve_threads(threads);

      if (gen->parsed()) {
        if (spec.domain == ExperimentSpec::Domain::radial) {
          RadialDatasets data = generate_radial(spec);
          std::vector<TokenPair> everything = data.train;
          everything.insert(everything.end(), data.validation.begin(), data.validation.end());
          dataio::save(out_dir + "/train.naodata", everything, data.grid.delta);
          write_sidecar(out_dir + "/train.naodata", spec.config_hash, spec.radial.seed);
          if (spec.export_data_csv) {
            dataio::export_csv(out_dir + "/train.csv", everything);
            write_sidecar(out_dir + "/train.csv", spec.config_hash, spec.radial.seed);
          }
          out << "wrote " << everything.size() << " samples to " << out_dir << "\n";
        } else {
          DarcyDatasets data = generate_darcy(spec);
          std::vector<TokenPair> everything = data.train;
          everything.insert(everything.end(), data.validation.begin(), data.validation.end());
          dataio::save(out_dir + "/train.naodata", everything, 0.0);
          write_sidecar(out_dir + "/train.naodata", spec.config_hash, spec.darcy.seed);
          out << "wrote " << everything.size() << " samples to " << out_dir << "\n";
        }
        return kExitOk;
      }

      if (train_cmd->parsed()) {
        ExperimentResult res = run_experiment(spec, out_dir, n_threads);
        out << "experiment " << spec.name << " finished: best epoch "
            << res.history.best_epoch << ", best monitored loss " << res.history.best_loss
            << "\n";
        if (res.row.op_id) out << "  ID operator error: " << *res.row.op_id << "\n";
        if (res.row.k_id) out << "  ID kernel error:   " << *res.row.k_id << "\n";
        out << "results: " << out_dir << "/results.csv\n";
        return kExitOk;
      }

      // eval
      if (spec.domain != ExperimentSpec::Domain::radial)
        throw ConfigError("eval: only radial checkpoints are supported here");
      RadialDatasets data = generate_radial(spec);
      NaoParameters params = init_nao(spec.model, data.grid.n_r);
      ParamStore loaded = ckpt::load(checkpoint_path);
      for (std::size_t i = 0; i < params.store.size(); ++i) {
        const std::string& name = params.store.name(i);
        const ValueGrid& v = loaded.at(name);
        require_same_shape(params.store.value(i), v, "checkpoint load");
        params.store.value(i) = v;
      }
      ResultsRow row;
      row.setting = spec.name;
      row.model_variant = variant_name(spec.model);
      row.d = spec.model.d;
      row.d_k = spec.model.d_k;
      row.n_params = params.store.scalar_count();
      for (std::size_t i = 0; i < data.tests.size(); ++i) {
        const auto& [name, samples] = data.tests[i];
        TaskEval ev = evaluate_radial(params, samples, &data.test_truths[i].second, data.rho,
                                      data.grid.dr, name);
        export_kernel_csv(out_dir + "/kernel_" + name + ".csv", data.grid.r_grid(), data.rho,
                          data.test_truths[i].second, ev.kernel_mean);
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
        out << name << ": operator error " << ev.operator_err << ", kernel error "
            << ev.kernel_err << "\n";
      }
      write_results_csv(out_dir + "/results.csv", {row});
      write_sidecar(out_dir + "/results.csv", spec.config_hash, spec.train.seed);
      return kExitOk;
    }

    if (oracle_cmd->parsed()) {
      oracles::Report rep = oracles::run_suite(suite);
      out << "suite " << rep.name << (rep.passed ? ": PASS" : ": FAIL") << "\n";
      for (const std::string& line : rep.lines) out << line << "\n";
      return rep.passed ? kExitOk : kExitProperty;
    }

    if (bench_cmd->parsed()) {
      oracles::BenchResult bench = oracles::run_benchmark(bench_n, bench_d, bench_repeats);
      out << "N,d,seconds\n";
      for (const oracles::BenchCell& c : bench.cells)
        out << c.N << ',' << c.d << ',' << c.seconds << "\n";
      out << "fitted N exponent: " << bench.n_exponent << "\n";
      if (!bench_out.empty()) {
        std::ofstream os(bench_out, std::ios::trunc);
        os << "N,d,seconds\n";
        for (const oracles::BenchCell& c : bench.cells)
          os << c.N << ',' << c.d << ',' << c.seconds << "\n";
      }
      return kExitOk;
    }

    if (report_cmd->parsed()) {
      std::ofstream os(report_out, std::ios::trunc);
      if (!os) throw ConfigError("cannot open " + report_out);
      bool wrote_header = false;
      for (const std::string& path : report_inputs) {
        std::ifstream is(path);
        if (!is) throw ConfigError("cannot open results file " + path);
        std::string line;
        bool first = true;
        while (std::getline(is, line)) {
          if (first) {
            if (!wrote_header) {
              os << line << "\n";
              wrote_header = true;
            }
            first = false;
            continue;
          }
          os << line << "\n";
        }
      }
      out << "merged " << report_inputs.size() << " tables into " << report_out << "\n";
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ShapeError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::out_of_range& e) {
    err << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const TrainAbort& e) {
    err << "numeric failure: " << e.what() << "\n";
    if (!e.checkpoint.empty()) err << "last good checkpoint: " << e.checkpoint << "\n";
    return kExitNumeric;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const QuadratureError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const SolveError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const DegenerateError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  }
  return kExitOk;
}

}  // namespace nao::cli
