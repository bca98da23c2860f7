#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "core.hpp"
#include "operators.hpp"

namespace spoq {

/// Averagine-like isotope envelope: Poisson weights with mean lambda = mass / mass_per_heavy_isotope.
struct PatternModel {
  double mass_per_heavy_isotope = 1800.0;
  double isotope_spacing = 1.003355; ///< Da, divided by the charge
  double relative_cutoff = 1e-4;
  double width_cutoff = 4.0;         ///< peaks truncated at this many standard deviations

  /// Relative isotope weights at `mass`, largest equal to 1.
  std::vector<double> envelope(double mass) const {
    const double lambda = mass / mass_per_heavy_isotope;
    std::vector<double> w;
    double term = std::exp(-lambda);
    double peak = 0.0;
    for (int k = 0; k < 64; ++k) {
      if (k > 0) term *= lambda / k;
      w.push_back(term);
      peak = std::max(peak, term);
      if (k > lambda && term < relative_cutoff * peak) break;
    }
    for (double& v : w) v /= peak;
    while (!w.empty() && w.back() < relative_cutoff) w.pop_back();
    return w;
  }
};

struct DictionarySpec {
  Index n_atoms = 1000;
  Index n_samples = 1000;
  double mass_min = 1000.0;
  double mass_max = 1100.0;
  int charge = 1;
  PatternModel pattern_model{};
  double peak_width = 0.14; ///< Gaussian standard deviation, Da

  double grid_step() const { return (mass_max - mass_min) / static_cast<double>(n_samples - 1); }

  void validate() const {
    if (n_atoms < 1 || n_samples < 2) throw InputError("DictionarySpec: need n_atoms >= 1 and n_samples >= 2");
    if (!(mass_max > mass_min) || !(mass_min > 0.0)) throw InputError("DictionarySpec: invalid mass range");
    if (charge < 1) throw InputError("DictionarySpec: charge must be a positive integer");
    if (!(peak_width > 0.0) || !std::isfinite(peak_width)) throw InputError("DictionarySpec: invalid peak_width");
    if (peak_width < grid_step())
      throw ConfigError("DictionarySpec: peak_width smaller than the grid step, peaks cannot be rendered");
  }
};

/// Sample grid (Da).
inline Vector mass_axis(Index count, double lo, double hi) {
  return Vector::LinSpaced(count, lo, hi);
}

/// M x N nonnegative dictionary, one isotopic pattern per column, each scaled to unit maximum.
inline SparseMatrix build_dictionary(const DictionarySpec& spec) {
  spec.validate();
  const double h = spec.grid_step();
  const Vector mono = mass_axis(spec.n_atoms, spec.mass_min, spec.mass_max);
  const double spacing = spec.pattern_model.isotope_spacing / spec.charge;
  const double reach = spec.pattern_model.width_cutoff * spec.peak_width;
  const double inv2s2 = 1.0 / (2.0 * spec.peak_width * spec.peak_width);

  std::vector<Eigen::Triplet<double>> trip;
  Vector col(spec.n_samples);
  for (Index n = 0; n < spec.n_atoms; ++n) {
    col.setZero();
    const std::vector<double> w = spec.pattern_model.envelope(mono[n] * spec.charge);
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double center = mono[n] + static_cast<double>(k) * spacing;
      const auto lo = static_cast<Index>(std::max(0.0, std::ceil((center - reach - spec.mass_min) / h)));
      const auto hi = static_cast<Index>(
          std::min(static_cast<double>(spec.n_samples - 1), std::floor((center + reach - spec.mass_min) / h)));
      for (Index j = lo; j <= hi; ++j) {
        const double d = spec.mass_min + static_cast<double>(j) * h - center;
        col[j] += w[k] * std::exp(-d * d * inv2s2);
      }
    }
    const double mx = col.maxCoeff();
    if (!(mx > 0.0)) throw ConfigError("build_dictionary: empty column, peak falls outside the grid");
    for (Index j = 0; j < spec.n_samples; ++j)
      if (col[j] > 0.0) trip.emplace_back(j, n, col[j] / mx);
  }
  SparseMatrix D(spec.n_samples, spec.n_atoms);
  D.setFromTriplets(trip.begin(), trip.end());
  D.makeCompressed();
  return D;
}

struct GroundTruth {
  Vector x;
  std::vector<Index> support; ///< sorted
  std::uint64_t seed = 0;
};

inline GroundTruth sample_ground_truth(Index n, Index p_nonzero, double lo, double hi, std::uint64_t seed) {
  if (!(p_nonzero > 0 && p_nonzero <= n)) throw InputError("sample_ground_truth: need 0 < P <= N");
  if (!(lo > 0.0 && hi >= lo)) throw InputError("sample_ground_truth: need 0 < lo <= hi");
  std::mt19937_64 rng(seed);
  std::vector<Index> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), Index{0});
  GroundTruth gt;
  gt.seed = seed;
  std::sample(all.begin(), all.end(), std::back_inserter(gt.support), p_nonzero, rng);
  std::uniform_real_distribution<double> amp(lo, hi);
  gt.x = Vector::Zero(n);
  for (Index i : gt.support) gt.x[i] = amp(rng);
  return gt;
}

struct Observation {
  Vector y;
  double sigma = 0.0;
};

/// y = D x + b, b ~ N(0, sigma^2 I), sigma = noise_percent / 100 * max(D x).
inline Observation synthesize_observation(const SparseMatrix& D, const Vector& x, double noise_percent,
                                          std::uint64_t seed) {
  if (!(noise_percent >= 0.0) || !std::isfinite(noise_percent))
    throw InputError("synthesize_observation: noise_percent must be >= 0");
  if (x.size() != D.cols()) throw InputError("synthesize_observation: size mismatch");
  Observation ob;
  ob.y = D * x;
  if (noise_percent == 0.0) return ob;
  const double peak = ob.y.maxCoeff();
  if (!(peak > 0.0)) throw DomainError("synthesize_observation: D x vanishes, noise level undefined");
  ob.sigma = noise_percent / 100.0 * peak;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, ob.sigma);
  for (Index i = 0; i < ob.y.size(); ++i) ob.y[i] += gauss(rng);
  return ob;
}

struct InstanceSpec {
  std::string name = "A";
  DictionarySpec dictionary{};
  Index n_nonzero = 48;
  double amp_lo = 1.0;
  double amp_hi = 100.0;
};

inline InstanceSpec preset_a() { return {}; }

inline InstanceSpec preset_b() {
  InstanceSpec s;
  s.name = "B";
  s.n_nonzero = 94;
  return s;
}

/// Desk-scale instance: N = M = 200 over 1000..1020 Da, P = 10.
inline InstanceSpec preset_small() {
  InstanceSpec s;
  s.name = "small";
  s.dictionary.n_atoms = 200;
  s.dictionary.n_samples = 200;
  s.dictionary.mass_max = 1020.0;
  s.n_nonzero = 10;
  return s;
}

inline InstanceSpec preset_by_name(const std::string& name) {
  if (name == "A" || name == "a") return preset_a();
  if (name == "B" || name == "b") return preset_b();
  if (name == "small") return preset_small();
  throw InputError("unknown dataset preset '" + name + "'");
}

struct Instance {
  InstanceSpec spec;
  double noise_percent = 0.0;
  std::uint64_t truth_seed = 0;
  std::uint64_t noise_seed = 0;
  SparseMatrix D;
  Vector x_true;
  Vector y;
  double sigma = 0.0;

  Problem problem(double x_max = 1e5) const { return Problem::from_noise_level(D, y, sigma, x_max); }
};

inline Instance make_instance(const InstanceSpec& spec, double noise_percent, std::uint64_t truth_seed,
                              std::uint64_t noise_seed) {
  Instance in;
  in.spec = spec;
  in.noise_percent = noise_percent;
  in.truth_seed = truth_seed;
  in.noise_seed = noise_seed;
  in.D = build_dictionary(spec.dictionary);
  in.x_true = sample_ground_truth(spec.dictionary.n_atoms, spec.n_nonzero, spec.amp_lo, spec.amp_hi, truth_seed).x;
  Observation ob = synthesize_observation(in.D, in.x_true, noise_percent, noise_seed);
  in.y = std::move(ob.y);
  in.sigma = ob.sigma;
  return in;
}

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
  double v = 0.0;
  const char* first = s.data();
  if (!s.empty() && s[0] == '+') ++first;
  auto res = std::from_chars(first, s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw InputError("instance file: bad number '" + s + "'");
  return v;
}

inline void write_row(std::ostream& os, const Vector& v) {
  for (Index i = 0; i < v.size(); ++i) {
    if (i) os << ' ';
    os << fmt_double(v[i]);
  }
  os << '\n';
}

inline Vector read_row(std::istream& is, Index n, const char* what) {
  std::string line;
  if (!std::getline(is, line)) throw InputError(std::string("instance file: missing ") + what);
  std::istringstream ls(line);
  Vector v(n);
  std::string tok;
  for (Index i = 0; i < n; ++i) {
    if (!(ls >> tok)) throw InputError(std::string("instance file: short row in ") + what);
    v[i] = parse_double(tok);
  }
  if (ls >> tok) throw InputError(std::string("instance file: long row in ") + what);
  return v;
}

} // namespace detail

inline constexpr const char* kInstanceMagic = "spoq-instance 1";

/// Text format: magic line, `key value` header lines, `data` marker, then
/// M rows of D, one row x_true, one row y. Numbers use shortest round-trip form.
inline void save_instance(const Instance& in, std::ostream& os) {
  using detail::fmt_double;
  const DictionarySpec& d = in.spec.dictionary;
  os << kInstanceMagic << '\n';
  os << "name " << in.spec.name << '\n';
  os << "n_atoms " << d.n_atoms << '\n';
  os << "n_samples " << d.n_samples << '\n';
  os << "mass_min " << fmt_double(d.mass_min) << '\n';
  os << "mass_max " << fmt_double(d.mass_max) << '\n';
  os << "charge " << d.charge << '\n';
  os << "peak_width " << fmt_double(d.peak_width) << '\n';
  os << "mass_per_heavy_isotope " << fmt_double(d.pattern_model.mass_per_heavy_isotope) << '\n';
  os << "isotope_spacing " << fmt_double(d.pattern_model.isotope_spacing) << '\n';
  os << "relative_cutoff " << fmt_double(d.pattern_model.relative_cutoff) << '\n';
  os << "width_cutoff " << fmt_double(d.pattern_model.width_cutoff) << '\n';
  os << "n_nonzero " << in.spec.n_nonzero << '\n';
  os << "amp_lo " << fmt_double(in.spec.amp_lo) << '\n';
  os << "amp_hi " << fmt_double(in.spec.amp_hi) << '\n';
  os << "noise_percent " << fmt_double(in.noise_percent) << '\n';
  os << "truth_seed " << in.truth_seed << '\n';
  os << "noise_seed " << in.noise_seed << '\n';
  os << "sigma " << fmt_double(in.sigma) << '\n';
  os << "data\n";
  const DenseMatrix dense(in.D);
  for (Index i = 0; i < dense.rows(); ++i) detail::write_row(os, dense.row(i).transpose());
  detail::write_row(os, in.x_true);
  detail::write_row(os, in.y);
}

inline void save_instance(const Instance& in, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot open '" + path + "' for writing");
  save_instance(in, os);
  if (!os) throw InputError("write failed for '" + path + "'");
}

inline Instance load_instance(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kInstanceMagic) throw InputError("instance file: bad magic line");
  Instance in;
  DictionarySpec& d = in.spec.dictionary;
  bool saw_data = false;
  while (std::getline(is, line)) {
    if (line == "data") {
      saw_data = true;
      break;
    }
    const auto sp = line.find(' ');
    if (sp == std::string::npos) throw InputError("instance file: malformed header line '" + line + "'");
    const std::string key = line.substr(0, sp);
    const std::string val = line.substr(sp + 1);
    auto as_index = [&] { return static_cast<Index>(std::stoll(val)); };
    auto as_u64 = [&] { return static_cast<std::uint64_t>(std::stoull(val)); };
    if (key == "name") in.spec.name = val;
    else if (key == "n_atoms") d.n_atoms = as_index();
    else if (key == "n_samples") d.n_samples = as_index();
    else if (key == "mass_min") d.mass_min = detail::parse_double(val);
    else if (key == "mass_max") d.mass_max = detail::parse_double(val);
    else if (key == "charge") d.charge = static_cast<int>(as_index());
    else if (key == "peak_width") d.peak_width = detail::parse_double(val);
    else if (key == "mass_per_heavy_isotope") d.pattern_model.mass_per_heavy_isotope = detail::parse_double(val);
    else if (key == "isotope_spacing") d.pattern_model.isotope_spacing = detail::parse_double(val);
    else if (key == "relative_cutoff") d.pattern_model.relative_cutoff = detail::parse_double(val);
    else if (key == "width_cutoff") d.pattern_model.width_cutoff = detail::parse_double(val);
    else if (key == "n_nonzero") in.spec.n_nonzero = as_index();
    else if (key == "amp_lo") in.spec.amp_lo = detail::parse_double(val);
    else if (key == "amp_hi") in.spec.amp_hi = detail::parse_double(val);
    else if (key == "noise_percent") in.noise_percent = detail::parse_double(val);
    else if (key == "truth_seed") in.truth_seed = as_u64();
    else if (key == "noise_seed") in.noise_seed = as_u64();
    else if (key == "sigma") in.sigma = detail::parse_double(val);
    else throw InputError("instance file: unknown key '" + key + "'");
  }
  if (!saw_data) throw InputError("instance file: missing data section");
  if (d.n_atoms < 1 || d.n_samples < 1) throw InputError("instance file: invalid dimensions");
  DenseMatrix dense(d.n_samples, d.n_atoms);
  for (Index i = 0; i < d.n_samples; ++i) dense.row(i) = detail::read_row(is, d.n_atoms, "dictionary").transpose();
  in.D = dense.sparseView(1.0, 0.0);
  in.D.makeCompressed();
  in.x_true = detail::read_row(is, d.n_atoms, "x_true");
  in.y = detail::read_row(is, d.n_samples, "y");
  return in;
}

inline Instance load_instance(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open instance file '" + path + "'");
  return load_instance(is);
}

} // namespace spoq
