#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "metrics.hpp"
#include "msdata.hpp"
#include "penalties.hpp"
#include "solvers.hpp"

namespace spoq {

enum class SolverKind { trvmfb, vmfb, fb, pd, hq };

inline const char* to_string(SolverKind k) {
  switch (k) {
  case SolverKind::trvmfb: return "trvmfb";
  case SolverKind::vmfb: return "vmfb";
  case SolverKind::fb: return "fb";
  case SolverKind::pd: return "pd";
  case SolverKind::hq: return "hq";
  }
  return "?";
}

inline SolverKind parse_solver(const std::string& s) {
  if (s == "trvmfb") return SolverKind::trvmfb;
  if (s == "vmfb") return SolverKind::vmfb;
  if (s == "fb") return SolverKind::fb;
  if (s == "pd") return SolverKind::pd;
  if (s == "hq") return SolverKind::hq;
  throw InputError("unknown solver '" + s + "'");
}

inline SolverKind default_solver(const PenaltySpec& spec) {
  if (std::holds_alternative<SpoqParams>(spec)) return SolverKind::trvmfb;
  if (std::holds_alternative<CauchyPenalty>(spec) || std::holds_alternative<WelschPenalty>(spec))
    return SolverKind::hq;
  return SolverKind::pd;
}

inline void check_pairing(const PenaltySpec& spec, SolverKind kind) {
  const bool spoq = std::holds_alternative<SpoqParams>(spec);
  const bool hq = std::holds_alternative<CauchyPenalty>(spec) || std::holds_alternative<WelschPenalty>(spec);
  const bool ok = (spoq && (kind == SolverKind::trvmfb || kind == SolverKind::vmfb || kind == SolverKind::fb)) ||
                  (hq && kind == SolverKind::hq) || (!spoq && !hq && kind == SolverKind::pd);
  if (!ok)
    throw ConfigError(std::string("solver '") + to_string(kind) + "' does not handle penalty '" + penalty_name(spec) + "'");
}

inline std::string short_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

/// Penalty with its parameters, e.g. spoq(p=0.75;q=2;alpha=7e-07;beta=0.003;eta=0.1).
inline std::string penalty_label(const PenaltySpec& spec) {
  const std::string name = penalty_name(spec);
  return std::visit(
      overloaded{[&](const SpoqParams& s) {
                   return name + "(p=" + short_double(s.p) + ";q=" + short_double(s.q) + ";alpha=" +
                          short_double(s.alpha) + ";beta=" + short_double(s.beta) + ";eta=" + short_double(s.eta) + ")";
                 },
                 [&](const L1Penalty&) { return name; }, [&](const L0Penalty&) { return name; },
                 [&](const ScadPenalty& s) {
                   return name + "(delta=" + short_double(s.delta) + ";a=" + short_double(s.a) + ")";
                 },
                 [&](const CauchyPenalty& s) { return name + "(delta=" + short_double(s.delta) + ")"; },
                 [&](const WelschPenalty& s) { return name + "(delta=" + short_double(s.delta) + ")"; },
                 [&](const Cel0Penalty& s) { return name + "(delta=" + short_double(s.delta) + ")"; }},
      spec);
}

/// Penalty family plus optional overrides; unset fields keep the family defaults.
struct PenaltyArgs {
  std::string family = "spoq";
  std::optional<double> p, q, alpha, beta, eta, delta, a;
};

inline PenaltySpec make_penalty(const PenaltyArgs& in) {
  PenaltySpec out;
  const std::string& f = in.family;
  if (f == "spoq" || f == "soot") {
    SpoqParams s;
    if (f == "soot") s.p = 1.0;
    if (in.p) s.p = *in.p;
    if (in.q) s.q = *in.q;
    if (in.alpha) s.alpha = *in.alpha;
    if (in.beta) s.beta = *in.beta;
    if (in.eta) s.eta = *in.eta;
    out = s;
  } else if (f == "l1") {
    out = L1Penalty{};
  } else if (f == "l0") {
    out = L0Penalty{};
  } else if (f == "scad") {
    ScadPenalty s;
    if (in.delta) s.delta = *in.delta;
    if (in.a) s.a = *in.a;
    out = s;
  } else if (f == "cauchy") {
    CauchyPenalty s;
    if (in.delta) s.delta = *in.delta;
    out = s;
  } else if (f == "welsch") {
    WelschPenalty s;
    if (in.delta) s.delta = *in.delta;
    out = s;
  } else if (f == "cel0") {
    Cel0Penalty s;
    if (in.delta) s.delta = *in.delta;
    out = s;
  } else {
    throw InputError("unknown penalty '" + f + "'");
  }
  validate(out);
  return out;
}

/// Compact text form of every solver setting, hashed into the provenance column.
inline std::string config_string(const SolverConfig& c) {
  std::ostringstream os;
  os << "theta=" << short_double(c.theta) << ";B=" << c.B << ";gamma=" << short_double(c.gamma)
     << ";eps=" << short_double(c.eps_stop) << ";max_outer=" << c.max_outer << ";max_inner=" << c.max_inner
     << ";kappa=" << short_double(c.kappa) << ";init_pd=" << c.init_pd_iters << ";pd_ratio=" << short_double(c.pd_step_ratio);
  return os.str();
}

/// FNV-1a, stable across builds and platforms.
inline std::string config_hash(const std::string& text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct CellResult {
  RunReport report;
  SolveResult solve;
  Vector x_debiased;
};

inline SolveResult solve_with(const Problem& pb, const PenaltySpec& spec, SolverKind kind, const SolverConfig& cfg,
                              const Vector& x0, const Vector* reference) {
  check_pairing(spec, kind);
  switch (kind) {
  case SolverKind::trvmfb: return tr_vmfb_solve(pb, std::get<SpoqParams>(spec), cfg, x0, reference);
  case SolverKind::vmfb: return vmfb_solve(pb, std::get<SpoqParams>(spec), cfg, x0, reference);
  case SolverKind::fb: return fb_solve(pb, std::get<SpoqParams>(spec), cfg, x0, reference);
  case SolverKind::hq: return vmfb_halfquadratic_solve(pb, spec, cfg, x0, reference);
  case SolverKind::pd: return primal_dual_solve(pb, spec, cfg, x0, reference);
  }
  throw ConfigError("unreachable solver kind");
}

/// Warm start, solve, debias on the estimated support, score against the ground truth.
inline CellResult run_cell(const Instance& inst, const PenaltySpec& spec, SolverKind kind, const SolverConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const Problem pb = inst.problem();
  const Vector x0 = warm_start_l1(pb, cfg.init_pd_iters, cfg);
  CellResult out;
  out.solve = solve_with(pb, spec, kind, cfg, x0, &inst.x_true);
  const std::vector<Index> support = support_of(out.solve.x);
  if (support.empty()) {
    out.x_debiased = Vector::Zero(pb.n());
  } else {
    DebiasResult db = debias_least_squares(pb.D, pb.y, support);
    out.x_debiased = std::move(db.x);
    out.report.rank_deficient = db.rank_deficient;
  }
  RunReport& r = out.report;
  r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.solver_id = to_string(kind);
  r.penalty_id = penalty_label(spec);
  r.seed = inst.noise_seed;
  r.noise_percent = inst.noise_percent;
  r.snr_db = snr(inst.x_true, out.x_debiased);
  r.tsnr_db = tsnr(inst.x_true, out.x_debiased);
  r.snr_raw_db = snr(inst.x_true, out.solve.x);
  r.sparsity_estimate = sparsity_degree(out.solve.x);
  const SupportScores sc = support_scores(inst.x_true, out.solve.x);
  r.support_precision = sc.precision;
  r.support_recall = sc.recall;
  r.iterations = static_cast<int>(out.solve.trace.records.size());
  r.status = to_string(out.solve.status);
  return out;
}

/// Runs job(i) for i in [0, count) on at most `threads` workers.
inline void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& job) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) job(i);
    });
  for (auto& th : pool) th.join();
}

// ---------------------------------------------------------------------------
// Experiment plans
// ---------------------------------------------------------------------------

struct ExperimentPlan {
  std::string dataset = "A";
  std::uint64_t truth_seed = 1;
  std::vector<double> noise_levels{0.1, 0.2};
  int seeds = 10;
  std::vector<double> spoq_p{0.05, 0.1, 0.15, 0.2, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5};
  std::vector<double> spoq_q{2, 3, 4, 5, 10};
  SpoqParams spoq{};
  std::vector<std::string> baselines{"l0", "l1", "scad", "cauchy", "welsch", "cel0"};
  ScadPenalty scad{};
  CauchyPenalty cauchy{};
  WelschPenalty welsch{};
  Cel0Penalty cel0{};
  SolverConfig solver{};
  unsigned threads = 1;
  std::string out_dir = "results";
  bool convergence = true;
  std::vector<double> noise_sweep{0.02, 0.05, 0.1, 0.2, 0.3, 0.5};
  std::vector<double> noise_sweep_p{0.75, 1.0};
  std::vector<Index> sparsity_sweep{10, 20, 48, 94, 182, 256, 323, 388};
  std::vector<double> sparsity_sweep_p{0.25, 0.75, 1.0};

  std::vector<PenaltySpec> table_penalties() const {
    std::vector<PenaltySpec> out;
    for (double p : spoq_p)
      for (double q : spoq_q) {
        SpoqParams s = spoq;
        s.p = p;
        s.q = q;
        out.emplace_back(s);
      }
    for (const std::string& b : baselines) out.push_back(baseline(b));
    return out;
  }

  PenaltySpec baseline(const std::string& name) const {
    if (name == "l1") return L1Penalty{};
    if (name == "l0") return L0Penalty{};
    if (name == "scad") return scad;
    if (name == "cauchy") return cauchy;
    if (name == "welsch") return welsch;
    if (name == "cel0") return cel0;
    throw ConfigError("unknown baseline '" + name + "'");
  }

  void validate() const {
    preset_by_name(dataset);
    if (seeds < 0) throw ConfigError("plan: seeds must be >= 0");
    for (double n : noise_levels)
      if (!(n >= 0.0)) throw ConfigError("plan: noise levels must be >= 0");
    for (const auto& pen : table_penalties()) spoq::validate(pen);
    solver.validate();
  }
};

namespace detail {

template <class T> std::string join(const std::vector<T>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ", ";
    if constexpr (std::is_floating_point_v<T>) os << short_double(v[i]);
    else os << v[i];
  }
  return os.str();
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, ',')) {
    const auto b = cur.find_first_not_of(" \t");
    const auto e = cur.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(cur.substr(b, e - b + 1));
  }
  return out;
}

template <class T> std::vector<T> parse_list(const std::string& s) {
  std::vector<T> out;
  for (const std::string& tok : split_list(s)) {
    std::istringstream is(tok);
    T v{};
    if (!(is >> v) || !is.eof()) throw ConfigError("plan: bad list entry '" + tok + "'");
    out.push_back(v);
  }
  return out;
}

} // namespace detail

/// INI rendering of a plan; `defaults` prints the default plan through this.
inline std::string plan_to_ini(const ExperimentPlan& p) {
  using detail::join;
  std::ostringstream os;
  os << "[dataset]\npreset = " << p.dataset << "\ntruth_seed = " << p.truth_seed << "\n\n";
  os << "[experiment]\nnoise_levels = " << join(p.noise_levels) << "\nseeds = " << p.seeds
     << "\nthreads = " << p.threads << "\nout = " << p.out_dir << "\n\n";
  os << "[penalties]\nspoq_p = " << join(p.spoq_p) << "\nspoq_q = " << join(p.spoq_q)
     << "\nbaselines = " << join(p.baselines) << "\n\n";
  os << "[spoq]\nalpha = " << short_double(p.spoq.alpha) << "\nbeta = " << short_double(p.spoq.beta)
     << "\neta = " << short_double(p.spoq.eta) << "\n\n";
  os << "[scad]\ndelta = " << short_double(p.scad.delta) << "\na = " << short_double(p.scad.a) << "\n\n";
  os << "[cauchy]\ndelta = " << short_double(p.cauchy.delta) << "\n\n";
  os << "[welsch]\ndelta = " << short_double(p.welsch.delta) << "\n\n";
  os << "[cel0]\ndelta = " << short_double(p.cel0.delta) << "\n\n";
  const SolverConfig& c = p.solver;
  os << "[solver]\ntheta = " << short_double(c.theta) << "\nB = " << c.B << "\ngamma = " << short_double(c.gamma)
     << "\neps = " << short_double(c.eps_stop) << "\nmax_outer = " << c.max_outer << "\nmax_inner = " << c.max_inner
     << "\ninit_pd_iters = " << c.init_pd_iters << "\npd_step_ratio = " << short_double(c.pd_step_ratio) << "\n\n";
  os << "[sweeps]\nconvergence = " << (p.convergence ? "true" : "false") << "\nnoise_sweep = " << join(p.noise_sweep)
     << "\nnoise_sweep_p = " << join(p.noise_sweep_p) << "\nsparsity_sweep = " << join(p.sparsity_sweep)
     << "\nsparsity_sweep_p = " << join(p.sparsity_sweep_p) << "\n";
  return os.str();
}

inline ExperimentPlan parse_plan(std::istream& is) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("plan: ") + e.what());
  }
  static const std::map<std::string, std::vector<std::string>> known{
      {"dataset", {"preset", "truth_seed"}},
      {"experiment", {"noise_levels", "seeds", "threads", "out"}},
      {"penalties", {"spoq_p", "spoq_q", "baselines"}},
      {"spoq", {"alpha", "beta", "eta"}},
      {"scad", {"delta", "a"}},
      {"cauchy", {"delta"}},
      {"welsch", {"delta"}},
      {"cel0", {"delta"}},
      {"solver", {"theta", "B", "gamma", "eps", "max_outer", "max_inner", "init_pd_iters", "pd_step_ratio"}},
      {"sweeps", {"convergence", "noise_sweep", "noise_sweep_p", "sparsity_sweep", "sparsity_sweep_p"}}};
  for (const auto& [section, body] : tree) {
    auto it = known.find(section);
    if (it == known.end()) throw ConfigError("plan: unknown section [" + section + "]");
    for (const auto& [key, value] : body) {
      (void)value;
      if (std::find(it->second.begin(), it->second.end(), key) == it->second.end())
        throw ConfigError("plan: unknown key '" + key + "' in [" + section + "]");
    }
  }
  ExperimentPlan p;
  auto get = [&](const char* path) { return tree.get_optional<std::string>(path); };
  auto num = [&](const char* path, auto& dst) {
    using T = std::decay_t<decltype(dst)>;
    if (auto v = tree.get_optional<std::string>(path)) {
      std::istringstream s(*v);
      T parsed{};
      if (!(s >> parsed) || !(s >> std::ws).eof()) throw ConfigError(std::string("plan: bad value for ") + path);
      dst = parsed;
    }
  };
  try {
    if (auto v = get("dataset.preset")) p.dataset = *v;
    num("dataset.truth_seed", p.truth_seed);
    if (auto v = get("experiment.noise_levels")) p.noise_levels = detail::parse_list<double>(*v);
    num("experiment.seeds", p.seeds);
    num("experiment.threads", p.threads);
    if (auto v = get("experiment.out")) p.out_dir = *v;
    if (auto v = get("penalties.spoq_p")) p.spoq_p = detail::parse_list<double>(*v);
    if (auto v = get("penalties.spoq_q")) p.spoq_q = detail::parse_list<double>(*v);
    if (auto v = get("penalties.baselines")) p.baselines = detail::split_list(*v);
    num("spoq.alpha", p.spoq.alpha);
    num("spoq.beta", p.spoq.beta);
    num("spoq.eta", p.spoq.eta);
    num("scad.delta", p.scad.delta);
    num("scad.a", p.scad.a);
    num("cauchy.delta", p.cauchy.delta);
    num("welsch.delta", p.welsch.delta);
    num("cel0.delta", p.cel0.delta);
    num("solver.theta", p.solver.theta);
    num("solver.B", p.solver.B);
    num("solver.gamma", p.solver.gamma);
    num("solver.eps", p.solver.eps_stop);
    num("solver.max_outer", p.solver.max_outer);
    num("solver.max_inner", p.solver.max_inner);
    num("solver.init_pd_iters", p.solver.init_pd_iters);
    num("solver.pd_step_ratio", p.solver.pd_step_ratio);
    if (auto v = get("sweeps.convergence")) {
      if (*v == "true" || *v == "1") p.convergence = true;
      else if (*v == "false" || *v == "0") p.convergence = false;
      else throw ConfigError("plan: sweeps.convergence must be true or false");
    }
    if (auto v = get("sweeps.noise_sweep")) p.noise_sweep = detail::parse_list<double>(*v);
    if (auto v = get("sweeps.noise_sweep_p")) p.noise_sweep_p = detail::parse_list<double>(*v);
    if (auto v = get("sweeps.sparsity_sweep")) p.sparsity_sweep = detail::parse_list<Index>(*v);
    if (auto v = get("sweeps.sparsity_sweep_p")) p.sparsity_sweep_p = detail::parse_list<double>(*v);
  } catch (const InputError& e) {
    throw ConfigError(e.what());
  }
  p.validate();
  return p;
}

inline ExperimentPlan load_plan(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open plan file '" + path + "'");
  return parse_plan(is);
}

// ---------------------------------------------------------------------------
// Benchmark
// ---------------------------------------------------------------------------

/// One solve request; the key orders rows independently of execution order.
struct Cell {
  std::string group; // table | noise | sparsity
  double noise_percent = 0.0;
  Index n_nonzero = 0;
  std::uint64_t noise_seed = 0;
  PenaltySpec penalty;
  SolverKind solver = SolverKind::trvmfb;

  std::tuple<std::string, double, Index, std::string, std::uint64_t> key() const {
    return {group, noise_percent, n_nonzero, penalty_label(penalty), noise_seed};
  }
};

struct CellOutcome {
  Cell cell;
  std::optional<RunReport> report;
  std::string error;
};

struct BenchmarkSummary {
  std::size_t cells = 0;
  std::size_t failures = 0;
  std::vector<std::string> files;
};

namespace detail {

inline std::ofstream open_csv(const std::filesystem::path& path, const std::string& header,
                              BenchmarkSummary& summary) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot write '" + path.string() + "'");
  os << header << '\n';
  summary.files.push_back(path.string());
  return os;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

struct Aggregate {
  std::vector<double> snr, tsnr, sparsity;
  std::vector<std::uint64_t> seeds;
  std::size_t failures = 0;
};

inline std::string seed_list(std::vector<std::uint64_t> seeds) {
  std::sort(seeds.begin(), seeds.end());
  std::string s;
  for (std::size_t i = 0; i < seeds.size(); ++i) s += (i ? " " : "") + std::to_string(seeds[i]);
  return s;
}

} // namespace detail

/// Runs every cell of the plan and writes the CSV outputs into plan.out_dir.
inline BenchmarkSummary run_benchmark(const ExperimentPlan& plan) {
  plan.validate();
  namespace fs = std::filesystem;
  const fs::path dir(plan.out_dir);
  fs::create_directories(dir);
  const InstanceSpec base = preset_by_name(plan.dataset);
  const std::string cfg_text = config_string(plan.solver);

  std::vector<Cell> cells;
  for (double noise : plan.noise_levels)
    for (const PenaltySpec& pen : plan.table_penalties())
      for (int s = 1; s <= plan.seeds; ++s)
        cells.push_back({"table", noise, base.n_nonzero, static_cast<std::uint64_t>(s), pen, default_solver(pen)});
  std::vector<PenaltySpec> noise_pens;
  for (double p : plan.noise_sweep_p) {
    SpoqParams s = plan.spoq;
    s.p = p;
    s.q = 2.0;
    noise_pens.emplace_back(s);
  }
  for (const std::string& b : plan.baselines) noise_pens.push_back(plan.baseline(b));
  for (double noise : plan.noise_sweep)
    for (const PenaltySpec& pen : noise_pens)
      for (int s = 1; s <= plan.seeds; ++s)
        cells.push_back({"noise", noise, base.n_nonzero, static_cast<std::uint64_t>(s), pen, default_solver(pen)});
  for (Index P : plan.sparsity_sweep)
    for (double p : plan.sparsity_sweep_p)
      for (int s = 1; s <= plan.seeds; ++s) {
        SpoqParams sp = plan.spoq;
        sp.p = p;
        sp.q = 2.0;
        cells.push_back({"sparsity", 0.1, P, static_cast<std::uint64_t>(s), sp, SolverKind::trvmfb});
      }
  for (const Cell& c : cells)
    if (c.n_nonzero < 1 || c.n_nonzero > base.dictionary.n_atoms)
      throw ConfigError("plan: sparsity sweep value out of range for the dataset");

  // Instances are deterministic in (P, noise, seed); the dictionary is shared.
  const SparseMatrix D = build_dictionary(base.dictionary);
  auto instance_for = [&](const Cell& c) {
    InstanceSpec spec = base;
    spec.n_nonzero = c.n_nonzero;
    Instance in;
    in.spec = spec;
    in.noise_percent = c.noise_percent;
    in.truth_seed = plan.truth_seed;
    in.noise_seed = c.noise_seed;
    in.D = D;
    in.x_true = sample_ground_truth(spec.dictionary.n_atoms, spec.n_nonzero, spec.amp_lo, spec.amp_hi, plan.truth_seed).x;
    Observation ob = synthesize_observation(D, in.x_true, c.noise_percent, c.noise_seed);
    in.y = std::move(ob.y);
    in.sigma = ob.sigma;
    return in;
  };

  std::vector<CellOutcome> outcomes(cells.size());
  parallel_for(cells.size(), plan.threads, [&](std::size_t i) {
    outcomes[i].cell = cells[i];
    try {
      outcomes[i].report = run_cell(instance_for(cells[i]), cells[i].penalty, cells[i].solver, plan.solver).report;
    } catch (const std::exception& e) {
      outcomes[i].error = e.what();
    }
  });
  std::sort(outcomes.begin(), outcomes.end(),
            [](const CellOutcome& a, const CellOutcome& b) { return a.cell.key() < b.cell.key(); });

  BenchmarkSummary summary;
  summary.cells = outcomes.size();
  using detail::csv_field;
  using detail::fmt;
  const std::string hash = config_hash(cfg_text);
  {
    auto runs = detail::open_csv(dir / "runs.csv",
                                 "group,dataset,truth_seed,noise_seed,noise_percent,n_nonzero,penalty,solver,config_hash,"
                                 "snr_db,tsnr_db,snr_raw_db,sparsity,precision,recall,iterations,status,error",
                                 summary);
    auto timing = detail::open_csv(dir / "runs_timing.csv",
                                   "group,dataset,truth_seed,noise_seed,noise_percent,n_nonzero,penalty,solver,config_hash,wall_time_s",
                                   summary);
    for (const CellOutcome& o : outcomes) {
      const Cell& c = o.cell;
      const std::string prefix = c.group + "," + plan.dataset + "," + std::to_string(plan.truth_seed) + "," +
                                 std::to_string(c.noise_seed) + "," + fmt(c.noise_percent) + "," +
                                 std::to_string(c.n_nonzero) + "," + csv_field(penalty_label(c.penalty)) + "," +
                                 to_string(c.solver) + "," + hash;
      if (o.report) {
        const RunReport& r = *o.report;
        runs << prefix << ',' << fmt(r.snr_db) << ',' << fmt(r.tsnr_db) << ',' << fmt(r.snr_raw_db) << ','
             << r.sparsity_estimate << ',' << fmt(r.support_precision) << ',' << fmt(r.support_recall) << ','
             << r.iterations << ',' << r.status << ",\n";
        timing << prefix << ',' << fmt(r.wall_time) << '\n';
      } else {
        ++summary.failures;
        runs << prefix << ",,,,,,,,failed," << csv_field(o.error) << '\n';
      }
    }
  }

  // Aggregated tables: mean and sample std over seeds, sparsity mean rounded.
  auto write_aggregate = [&](const std::string& group, const std::string& file) {
    std::map<std::tuple<double, Index, std::string, std::string>, detail::Aggregate> agg;
    for (const CellOutcome& o : outcomes) {
      if (o.cell.group != group) continue;
      auto& a = agg[{o.cell.noise_percent, o.cell.n_nonzero, penalty_label(o.cell.penalty), to_string(o.cell.solver)}];
      a.seeds.push_back(o.cell.noise_seed);
      if (!o.report) {
        ++a.failures;
        continue;
      }
      a.snr.push_back(o.report->snr_db);
      a.tsnr.push_back(o.report->tsnr_db);
      a.sparsity.push_back(static_cast<double>(o.report->sparsity_estimate));
    }
    auto os = detail::open_csv(dir / file,
                               "dataset,truth_seed,noise_percent,n_nonzero,penalty,solver,config_hash,seeds,n_ok,failures,"
                               "snr_mean,snr_std,tsnr_mean,tsnr_std,sparsity_mean,sparsity_std,sparsity_rounded",
                               summary);
    for (const auto& [k, a] : agg) {
      const MeanStd s = mean_std(a.snr), t = mean_std(a.tsnr), sp = mean_std(a.sparsity);
      os << plan.dataset << ',' << plan.truth_seed << ',' << fmt(std::get<0>(k)) << ',' << std::get<1>(k) << ','
         << csv_field(std::get<2>(k)) << ',' << std::get<3>(k) << ',' << hash << ',' << detail::seed_list(a.seeds)
         << ',' << a.snr.size() << ',' << a.failures << ',' << fmt(s.mean) << ',' << fmt(s.stddev) << ','
         << fmt(t.mean) << ',' << fmt(t.stddev) << ',' << fmt(sp.mean) << ',' << fmt(sp.stddev) << ','
         << (a.sparsity.empty() ? 0 : static_cast<long long>(std::llround(sp.mean))) << '\n';
    }
  };
  write_aggregate("table", "table.csv");
  write_aggregate("noise", "noise_sweep.csv");
  write_aggregate("sparsity", "sparsity_sweep.csv");

  if (plan.convergence && plan.seeds > 0 && !plan.noise_levels.empty()) {
    Cell c{"convergence", plan.noise_levels.front(), base.n_nonzero, 1, plan.spoq, SolverKind::trvmfb};
    const Instance inst = instance_for(c);
    const Problem pb = inst.problem();
    const Vector x0 = warm_start_l1(pb, plan.solver.init_pd_iters, plan.solver);
    auto conv = detail::open_csv(dir / "convergence.csv",
                                 "dataset,truth_seed,noise_seed,noise_percent,penalty,solver,config_hash,iteration,snr_db,objective",
                                 summary);
    auto conv_t = detail::open_csv(dir / "convergence_timing.csv",
                                   "dataset,truth_seed,noise_seed,noise_percent,penalty,solver,config_hash,iteration,time_s,snr_db",
                                   summary);
    for (SolverKind k : {SolverKind::trvmfb, SolverKind::vmfb, SolverKind::fb}) {
      SolveResult r;
      try {
        r = solve_with(pb, plan.spoq, k, plan.solver, x0, &inst.x_true);
      } catch (const std::exception&) {
        ++summary.failures;
        continue;
      }
      const std::string prefix = plan.dataset + "," + std::to_string(plan.truth_seed) + ",1," +
                                 fmt(c.noise_percent) + "," + csv_field(penalty_label(plan.spoq)) + "," + to_string(k) +
                                 "," + hash;
      conv << prefix << ",0," << fmt(snr(inst.x_true, x0)) << ',' << fmt(r.trace.objective0) << '\n';
      conv_t << prefix << ",0,0," << fmt(snr(inst.x_true, x0)) << '\n';
      for (const IterationRecord& rec : r.trace.records) {
        conv << prefix << ',' << rec.k + 1 << ',' << fmt(rec.snr_db) << ',' << fmt(rec.objective) << '\n';
        conv_t << prefix << ',' << rec.k + 1 << ',' << fmt(rec.time_s) << ',' << fmt(rec.snr_db) << '\n';
      }
    }
  }
  return summary;
}

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

inline std::vector<double> log_grid(double lo, double hi, int points) {
  if (points < 1 || !(lo > 0.0) || !(hi >= lo)) throw InputError("log_grid: invalid range");
  std::vector<double> g;
  for (int i = 0; i < points; ++i) {
    const double t = points == 1 ? 0.0 : static_cast<double>(i) / (points - 1);
    g.push_back(std::pow(10.0, std::log10(lo) + t * (std::log10(hi) - std::log10(lo))));
  }
  return g;
}

struct GridPoint {
  std::string axis_x, axis_y; // axis_y empty for one-dimensional searches
  double x = 0.0, y = 0.0;
  PenaltySpec penalty;
  std::optional<RunReport> report;
  std::string error;
};

struct GridSearchResult {
  std::vector<GridPoint> points;
  std::optional<std::size_t> best;
};

/// SPOQ: pairwise scans of (alpha, beta, eta) with the third held at `base`; baselines: delta scan.
inline GridSearchResult grid_search(const Instance& inst, const PenaltySpec& base, const SolverConfig& cfg,
                                    const std::vector<std::pair<std::string, std::string>>& pairs,
                                    const std::vector<double>& grid, unsigned threads = 1) {
  GridSearchResult out;
  if (const auto* sp = std::get_if<SpoqParams>(&base)) {
    for (const auto& [ax, ay] : pairs)
      for (double vx : grid)
        for (double vy : grid) {
          SpoqParams s = *sp;
          auto set = [&](const std::string& name, double v) {
            if (name == "alpha") s.alpha = v;
            else if (name == "beta") s.beta = v;
            else if (name == "eta") s.eta = v;
            else throw InputError("grid axis must be alpha, beta or eta");
          };
          if (ax == ay) throw InputError("grid axes must differ");
          set(ax, vx);
          set(ay, vy);
          out.points.push_back({ax, ay, vx, vy, s, std::nullopt, {}});
        }
  } else if (std::holds_alternative<L1Penalty>(base) || std::holds_alternative<L0Penalty>(base)) {
    out.points.push_back({"none", "", 0.0, 0.0, base, std::nullopt, {}});
  } else {
    for (double v : grid) {
      PenaltySpec p = base;
      std::visit(overloaded{[&](ScadPenalty& s) { s.delta = v; }, [&](CauchyPenalty& s) { s.delta = v; },
                            [&](WelschPenalty& s) { s.delta = v; }, [&](Cel0Penalty& s) { s.delta = v; },
                            [](auto&) {}},
                 p);
      out.points.push_back({"delta", "", v, 0.0, p, std::nullopt, {}});
    }
  }
  parallel_for(out.points.size(), threads, [&](std::size_t i) {
    GridPoint& g = out.points[i];
    try {
      g.report = run_cell(inst, g.penalty, default_solver(g.penalty), cfg).report;
    } catch (const std::exception& e) {
      g.error = e.what();
    }
  });
  for (std::size_t i = 0; i < out.points.size(); ++i) {
    const auto& r = out.points[i].report;
    if (!r || std::isnan(r->snr_db)) continue;
    if (!out.best || r->snr_db > out.points[*out.best].report->snr_db) out.best = i;
  }
  return out;
}

} // namespace spoq
