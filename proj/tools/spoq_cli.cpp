// spoq: instance generation, solving, benchmarks and grid search from the command line.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include <spoq/spoq.hpp>

namespace {

using json = nlohmann::json;

enum ExitCode : int {
  kOk = 0,
  kUnexpected = 1,
  kMaxIterations = 2,
  kInnerFailure = 3,
  kInputError = 64,
  kIoError = 74,
};

struct PenaltyFlags {
  std::string family = "spoq";
  std::optional<double> p, q, alpha, beta, eta, delta, a;

  void attach(CLI::App* app) {
    app->add_option("--penalty", family, "spoq | soot | l0 | l1 | scad | cauchy | welsch | cel0")
        ->check(CLI::IsMember({"spoq", "soot", "l0", "l1", "scad", "cauchy", "welsch", "cel0"}));
    app->add_option("--p", p, "SPOQ exponent p in (0, 2)");
    app->add_option("--q", q, "SPOQ exponent q >= 2");
    app->add_option("--alpha", alpha, "SPOQ smoothing alpha");
    app->add_option("--beta", beta, "SPOQ smoothing beta");
    app->add_option("--eta", eta, "SPOQ smoothing eta");
    app->add_option("--delta", delta, "baseline delta");
    app->add_option("--a", a, "SCAD a > 2");
  }
  spoq::PenaltySpec spec() const { return spoq::make_penalty({family, p, q, alpha, beta, eta, delta, a}); }
};

struct SolverFlags {
  spoq::SolverConfig cfg;
  void attach(CLI::App* app) {
    app->add_option("--theta", cfg.theta, "radius shrink factor");
    app->add_option("--B", cfg.B, "radius trials per iteration");
    app->add_option("--gamma", cfg.gamma, "step size in (0, 2)");
    app->add_option("--eps", cfg.eps_stop, "relative stopping tolerance");
    app->add_option("--max-outer", cfg.max_outer, "outer iteration cap");
    app->add_option("--max-inner", cfg.max_inner, "inner iteration cap");
  }
};

json report_json(const spoq::RunReport& r) {
  return json{{"solver_id", r.solver_id},
              {"penalty_id", r.penalty_id},
              {"seed", r.seed},
              {"noise_percent", r.noise_percent},
              {"snr_db", r.snr_db},
              {"tsnr_db", r.tsnr_db},
              {"snr_raw_db", r.snr_raw_db},
              {"sparsity_estimate", r.sparsity_estimate},
              {"support_precision", r.support_precision},
              {"support_recall", r.support_recall},
              {"wall_time", r.wall_time},
              {"iterations", r.iterations},
              {"status", r.status},
              {"rank_deficient", r.rank_deficient}};
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::ios_base::failure("cannot write '" + path + "'");
  os << text;
  if (!os) throw std::ios_base::failure("write failed for '" + path + "'");
}

std::string trace_csv(const spoq::SolveResult& r) {
  std::string s = "iteration,objective,step_norm,trial,rho,descent_margin,mu,time_s,snr_db,inner_iterations,cond_a,cond_b,retried\n";
  char buf[512];
  for (const auto& rec : r.trace.records) {
    std::snprintf(buf, sizeof buf, "%d,%.12g,%.12g,%d,%.12g,%.12g,%.12g,%.6f,%.12g,%d,%d,%d,%d\n", rec.k + 1,
                  rec.objective, rec.step_norm, rec.trial, rec.rho, rec.descent_margin, rec.mu, rec.time_s, rec.snr_db,
                  rec.inner_iterations, rec.cond_a ? 1 : 0, rec.cond_b ? 1 : 0, rec.retried ? 1 : 0);
    s += buf;
  }
  return s;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse recovery with smoothed lp-over-lq penalties"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "write a synthetic mass-spectrometry instance");
  std::string preset = "A";
  bool small = false;
  double noise = 0.1;
  std::uint64_t seed = 1, truth_seed = 1;
  std::optional<double> peak_width;
  std::string out;
  gen->add_option("--preset", preset, "A | B | small")->check(CLI::IsMember({"A", "B", "small"}));
  gen->add_flag("--small", small, "N = M = 200, P = 10");
  gen->add_option("--noise-percent", noise, "noise std as a percentage of max(Dx)");
  gen->add_option("--seed", seed, "noise seed");
  gen->add_option("--truth-seed", truth_seed, "ground-truth seed");
  gen->add_option("--peak-width", peak_width, "isotope peak std (Da)");
  gen->add_option("--out", out, "instance file")->required();

  // solve
  auto* sol = app.add_subcommand("solve", "solve one instance");
  std::string instance_path, solver_name, out_prefix;
  PenaltyFlags sol_pen;
  SolverFlags sol_cfg;
  sol->add_option("--instance", instance_path, "instance file")->required();
  sol->add_option("--solver", solver_name, "trvmfb | vmfb | fb | pd | hq (default depends on the penalty)")
      ->check(CLI::IsMember({"trvmfb", "vmfb", "fb", "pd", "hq"}));
  sol->add_option("--out", out_prefix, "output prefix for <prefix>.json and <prefix>_trace.csv")->required();
  sol_pen.attach(sol);
  sol_cfg.attach(sol);

  // benchmark
  auto* bench = app.add_subcommand("benchmark", "run an experiment plan");
  std::string plan_path, bench_out;
  std::optional<int> bench_seeds;
  std::vector<double> bench_noise;
  bool bench_small = false;
  bench->add_option("plan", plan_path, "INI plan (see `defaults`)");
  bench->add_option("--seeds", bench_seeds, "noise realizations per cell");
  bench->add_option("--noise-percent", bench_noise, "table noise levels");
  bench->add_option("--out", bench_out, "output directory");
  bench->add_flag("--small", bench_small, "use the N = 200 preset");

  // gridsearch
  auto* grid = app.add_subcommand("gridsearch", "hyperparameter scan maximizing SNR");
  std::string grid_instance, grid_out;
  PenaltyFlags grid_pen;
  SolverFlags grid_cfg;
  std::vector<std::string> grid_pairs{"alpha:beta", "beta:eta", "alpha:eta"};
  int grid_points = 10;
  double grid_lo = 1e-7, grid_hi = 1e2;
  unsigned grid_threads = 1;
  grid->add_option("--instance", grid_instance, "instance file")->required();
  grid->add_option("--pairs", grid_pairs, "SPOQ axis pairs, e.g. alpha:beta");
  grid->add_option("--points", grid_points, "points per axis");
  grid->add_option("--lo", grid_lo, "smallest grid value");
  grid->add_option("--hi", grid_hi, "largest grid value");
  grid->add_option("--threads", grid_threads, "worker threads");
  grid->add_option("--out", grid_out, "output prefix for <prefix>_heatmap.csv and <prefix>_best.json")->required();
  grid_pen.attach(grid);
  grid_cfg.attach(grid);

  // defaults
  auto* defs = app.add_subcommand("defaults", "print the default plan as INI");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kInputError;
  }

  try {
    if (*defs) {
      std::cout << spoq::plan_to_ini(spoq::ExperimentPlan{});
      return kOk;
    }

    if (*gen) {
      spoq::InstanceSpec spec = spoq::preset_by_name(small ? "small" : preset);
      if (peak_width) spec.dictionary.peak_width = *peak_width;
      const spoq::Instance inst = spoq::make_instance(spec, noise, truth_seed, seed);
      spoq::save_instance(inst, out);
      return kOk;
    }

    if (*sol) {
      const spoq::Instance inst = spoq::load_instance(instance_path);
      const spoq::PenaltySpec pen = sol_pen.spec();
      const spoq::SolverKind kind = solver_name.empty() ? spoq::default_solver(pen) : spoq::parse_solver(solver_name);
      sol_cfg.cfg.validate();
      const spoq::CellResult cell = spoq::run_cell(inst, pen, kind, sol_cfg.cfg);
      json j = report_json(cell.report);
      j["config"] = spoq::config_string(sol_cfg.cfg);
      j["config_hash"] = spoq::config_hash(spoq::config_string(sol_cfg.cfg));
      j["instance"] = instance_path;
      write_text(out_prefix + ".json", j.dump(2) + "\n");
      write_text(out_prefix + "_trace.csv", trace_csv(cell.solve));
      switch (cell.solve.status) {
      case spoq::SolveStatus::converged: return kOk;
      case spoq::SolveStatus::max_iterations: return kMaxIterations;
      case spoq::SolveStatus::inner_failure: return kInnerFailure;
      }
      return kUnexpected;
    }

    if (*bench) {
      spoq::ExperimentPlan plan = plan_path.empty() ? spoq::ExperimentPlan{} : spoq::load_plan(plan_path);
      if (bench_small) plan.dataset = "small";
      if (bench_seeds) plan.seeds = *bench_seeds;
      if (!bench_noise.empty()) plan.noise_levels = bench_noise;
      if (!bench_out.empty()) plan.out_dir = bench_out;
      if (plan.dataset == "small") {
        const auto n = spoq::preset_small().dictionary.n_atoms;
        std::vector<spoq::Index> kept;
        for (auto P : plan.sparsity_sweep)
          if (P <= n / 2) kept.push_back(P);
        plan.sparsity_sweep = kept;
      }
      const spoq::BenchmarkSummary s = spoq::run_benchmark(plan);
      std::cout << "cells " << s.cells << " failures " << s.failures << "\n";
      for (const auto& f : s.files) std::cout << f << "\n";
      return kOk;
    }

    if (*grid) {
      const spoq::Instance inst = spoq::load_instance(grid_instance);
      const spoq::PenaltySpec pen = grid_pen.spec();
      std::vector<std::pair<std::string, std::string>> pairs;
      for (const std::string& p : grid_pairs) {
        const auto c = p.find(':');
        if (c == std::string::npos) throw spoq::InputError("--pairs entries look like alpha:beta");
        pairs.emplace_back(p.substr(0, c), p.substr(c + 1));
      }
      const auto values = spoq::log_grid(grid_lo, grid_hi, grid_points);
      const spoq::GridSearchResult res = spoq::grid_search(inst, pen, grid_cfg.cfg, pairs, values, grid_threads);
      std::string csv = "axis_x,axis_y,x,y,penalty,snr_db,tsnr_db,sparsity,status,error\n";
      char buf[128];
      for (const auto& g : res.points) {
        std::snprintf(buf, sizeof buf, "%.6g,%.6g", g.x, g.y);
        csv += g.axis_x + "," + g.axis_y + "," + buf + "," + spoq::detail::csv_field(spoq::penalty_label(g.penalty)) + ",";
        if (g.report) {
          std::snprintf(buf, sizeof buf, "%.10g,%.10g,%lld,", g.report->snr_db, g.report->tsnr_db,
                        static_cast<long long>(g.report->sparsity_estimate));
          csv += buf + g.report->status + ",\n";
        } else {
          csv += ",,,failed," + spoq::detail::csv_field(g.error) + "\n";
        }
      }
      write_text(grid_out + "_heatmap.csv", csv);
      json best;
      if (res.best) {
        best = report_json(*res.points[*res.best].report);
        best["penalty_id"] = spoq::penalty_label(res.points[*res.best].penalty);
      }
      best["grid_points"] = res.points.size();
      write_text(grid_out + "_best.json", best.dump(2) + "\n");
      return kOk;
    }
  } catch (const spoq::InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kInputError;
  } catch (const spoq::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kInputError;
  } catch (const spoq::DomainError& e) {
    std::cerr << "domain error: " << e.what() << "\n";
    return kInputError;
  } catch (const std::ios_base::failure& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIoError;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIoError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUnexpected;
  }
  return kUnexpected;
}
