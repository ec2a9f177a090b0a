#pragma once

// File outputs of the pipelines: loss curves, phase diagrams, Monte Carlo
// statistics, ablation reports, trajectories and run manifests. Numbers are
// written in shortest round-trip form so identical runs give identical bytes.

#include "edd/core.hpp"
#include "edd/dynamics.hpp"
#include "edd/empirics.hpp"
#include "edd/matrix_io.hpp"
#include "edd/noise.hpp"
#include "edd/theory.hpp"

#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace edd {

using json = nlohmann::json;

inline constexpr const char* kToolVersion = "1.0.0";

namespace detail {

inline std::ofstream open_output(const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError(path, 0, "cannot open for writing");
  return os;
}

inline void finish_output(std::ofstream& os, const std::string& path) {
  os.flush();
  if (!os) throw IoError(path, 0, "write failed");
}

}  // namespace detail

inline void write_json(const std::string& path, const json& j) {
  auto os = detail::open_output(path);
  os << j.dump(2) << '\n';
  detail::finish_output(os, path);
}

inline json read_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError(path, 0, "cannot open for reading");
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw IoError(path, 0, std::string("invalid JSON: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Theory outputs
// ---------------------------------------------------------------------------

inline void write_loss_curve_csv(const std::string& path, const LossCurve& c) {
  auto os = detail::open_output(path);
  os << "t,loss\n";
  for (std::size_t i = 0; i < c.times.size(); ++i) os << c.times[i] << ',' << detail::format_double(c.losses[i]) << '\n';
  detail::finish_output(os, path);
}

inline LossCurve read_loss_curve_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError(path, 0, "cannot open for reading");
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(is, line) || detail::trim(line) != "t,loss") throw IoError(path, 1, "expected header 't,loss'");
  LossCurve c;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string_view sv = detail::trim(line);
    if (sv.empty()) continue;
    const auto comma = sv.find(',');
    std::uint64_t t = 0;
    double l = 0.0;
    if (comma == std::string_view::npos || !detail::parse_number(sv.substr(0, comma), t) ||
        !detail::parse_number(sv.substr(comma + 1), l))
      throw IoError(path, line_no, "expected 't,loss'");
    c.times.push_back(t);
    c.losses.push_back(l);
  }
  return c;
}

inline json curve_parameters_json(const LossCurve& c, const std::string& gamma_rule) {
  return json{{"lambda", c.lambda},
              {"sigma", c.sigma},
              {"sigma_convention", "variance of the noise entries z; the squared-sigma axis label equals sigma^2 = " +
                                       detail::format_double(c.sigma * c.sigma) + " if sigma is read as a std"},
              {"gamma", c.gamma},
              {"gamma_rule", gamma_rule},
              {"threshold", c.threshold},
              {"t_max", c.times.back()},
              {"points", c.times.size()},
              {"loss_normalization", "1/2 ||w(t) - w_T||^2 / C, equal to 0.5 at t = 0"}};
}

inline json phase_cell_json(const PhaseCell& c) {
  return json{{"lambda", c.lambda},     {"sigma", c.sigma},           {"phase", to_string(c.phase)},
              {"t_es", c.t_early_stop}, {"loss_es", c.loss_early_stop}, {"loss_final", c.loss_final},
              {"es_gap", c.es_gap},     {"bump_height", c.bump_height}};
}

/// Writes phase_cells.json and the three heatmaps (rows = sigma, cols = lambda).
inline std::vector<std::string> write_phase_diagram(const std::string& dir, const PhaseDiagram& pd) {
  json cells = json::array();
  for (const auto& c : pd.cells) cells.push_back(phase_cell_json(c));
  const std::string base = (std::filesystem::path(dir)).string();
  std::vector<std::string> files{base + "/phase_cells.json", base + "/loss_final.csv", base + "/loss_early_stop.csv",
                                 base + "/es_gap.csv", base + "/axes.json"};
  write_json(files[0], cells);
  write_matrix(files[1], pd.loss_final);
  write_matrix(files[2], pd.loss_early_stop);
  write_matrix(files[3], pd.es_gap);
  std::vector<double> squared;
  for (double s : pd.sigmas) squared.push_back(s * s);
  write_json(files[4], json{{"rows", "sigma"},
                            {"cols", "lambda"},
                            {"sigma", pd.sigmas},
                            {"sigma_squared", squared},
                            {"sigma_convention", "sigma is the variance of the noise entries z"},
                            {"lambda", pd.lambdas}});
  return files;
}

// ---------------------------------------------------------------------------
// Monte Carlo outputs
// ---------------------------------------------------------------------------

inline void write_curve_stats_csv(const std::string& path, const CurveStats& s) {
  auto os = detail::open_output(path);
  os << "t,mean,std,stderr\n";
  for (std::size_t i = 0; i < s.times.size(); ++i) {
    const auto k = static_cast<Index>(i);
    os << s.times[i] << ',' << detail::format_double(s.mean(k)) << ',' << detail::format_double(s.std(k)) << ','
       << detail::format_double(s.stderr_(k)) << '\n';
  }
  detail::finish_output(os, path);
}

/// One column per seed.
inline void write_per_seed_csv(const std::string& path, const CurveStats& s) {
  auto os = detail::open_output(path);
  os << 't';
  for (auto seed : s.seeds) os << ",seed_" << seed;
  os << '\n';
  for (std::size_t i = 0; i < s.times.size(); ++i) {
    os << s.times[i];
    for (Index r = 0; r < s.per_seed.rows(); ++r) os << ',' << detail::format_double(s.per_seed(r, static_cast<Index>(i)));
    os << '\n';
  }
  detail::finish_output(os, path);
}

inline void write_comparison_csv(const std::string& path, const TheoryComparison& c) {
  auto os = detail::open_output(path);
  os << "t,mc_mean,mc_stderr,theory,z\n";
  for (std::size_t i = 0; i < c.times.size(); ++i) {
    const auto k = static_cast<Index>(i);
    os << c.times[i] << ',' << detail::format_double(c.mc_mean(k)) << ',' << detail::format_double(c.mc_stderr(k))
       << ',' << detail::format_double(c.theory(k)) << ',' << detail::format_double(c.z(k)) << '\n';
  }
  detail::finish_output(os, path);
}

inline json experiment_json(const ExperimentConfig& cfg) {
  json j{{"samples", cfg.samples},
         {"features", cfg.features},
         {"classes", cfg.classes},
         {"lambda", cfg.aspect_ratio()},
         {"noise", cfg.noise},
         {"label_noise_variance", cfg.label_noise_variance()},
         {"gamma", cfg.gamma()},
         {"engine", to_string(cfg.engine)},
         {"seeds", cfg.seeds},
         {"t_max", cfg.times.back()},
         {"points", cfg.times.size()}};
  if (cfg.input_filter) {
    j["input_filter"] = cfg.input_filter->components ? json{{"components", *cfg.input_filter->components}}
                                                     : json{{"threshold", cfg.input_filter->threshold}};
  }
  return j;
}

inline json ablation_json(const AblationReport& r) {
  json entries = json::array();
  for (const auto& e : r.entries) {
    entries.push_back(json{{"family", to_string(e.family)},
                           {"phase", to_string(e.cell.phase)},
                           {"edd_detected", e.edd()},
                           {"monotone", e.monotone()},
                           {"bump_height", e.cell.bump_height},
                           {"t_es", e.cell.t_early_stop},
                           {"loss_es", e.cell.loss_early_stop},
                           {"loss_final", e.cell.loss_final},
                           {"es_gap", e.cell.es_gap}});
  }
  return json{{"config", experiment_json(r.config)},
              {"rise_tol", r.rise_tol},
              {"es_tol", r.es_tol},
              {"families", entries}};
}

// ---------------------------------------------------------------------------
// Trajectories: PREFIX.json header plus matrices next to it.
// ---------------------------------------------------------------------------

inline std::vector<std::string> save_trajectory(const std::string& prefix, const TrajectorySolution& s) {
  const std::vector<std::string> files{prefix + ".json", prefix + ".w_infinity.bin", prefix + ".w_initial.bin",
                                       prefix + ".eigenvalues.bin", prefix + ".U.bin"};
  auto leaf = [](const std::string& p) { return std::filesystem::path(p).filename().string(); };
  write_matrix(files[1], s.w_infinity);
  write_matrix(files[2], s.w_initial);
  write_matrix(files[3], Matrix(s.decomp.eigenvalues));
  write_matrix(files[4], s.decomp.left_vectors);
  write_json(files[0], json{{"loss_kind", to_string(s.loss_kind)},
                            {"learning_rate", s.learning_rate},
                            {"classes", s.classes()},
                            {"features", s.decomp.rows},
                            {"samples", s.decomp.cols},
                            {"rank", s.decomp.rank()},
                            {"w_infinity", leaf(files[1])},
                            {"w_initial", leaf(files[2])},
                            {"eigenvalues", leaf(files[3])},
                            {"U", leaf(files[4])}});
  return files;
}

/// Right singular vectors are not stored; the loaded decomposition is
/// enough to evaluate the trajectory at any t.
inline TrajectorySolution load_trajectory(const std::string& header_path) {
  const json h = read_json(header_path);
  const auto dir = std::filesystem::path(header_path).parent_path();
  auto sibling = [&](const char* key) {
    if (!h.contains(key) || !h[key].is_string()) throw IoError(header_path, 0, std::string("missing field '") + key + "'");
    return (dir / h[key].get<std::string>()).string();
  };
  TrajectorySolution s;
  try {
    s.loss_kind = parse_loss_kind(h.at("loss_kind").get<std::string>());
    s.learning_rate = h.at("learning_rate").get<double>();
    s.decomp.rows = h.at("features").get<Index>();
    s.decomp.cols = h.at("samples").get<Index>();
  } catch (const json::exception& e) {
    throw IoError(header_path, 0, std::string("bad trajectory header: ") + e.what());
  } catch (const DomainError& e) {
    throw IoError(header_path, 0, e.what());
  }
  s.w_infinity = read_matrix(sibling("w_infinity"));
  s.w_initial = read_matrix(sibling("w_initial"));
  const Matrix eig = read_matrix(sibling("eigenvalues"));
  s.decomp.left_vectors = read_matrix(sibling("U"));
  if (eig.cols() != 1 && eig.rows() > 0) throw IoError(header_path, 0, "eigenvalues must be a column");
  s.decomp.eigenvalues = eig.col(0);
  s.decomp.right_vectors.resize(s.decomp.cols, 0);
  if (s.decomp.left_vectors.rows() != s.decomp.rows || s.decomp.left_vectors.cols() != s.decomp.eigenvalues.size() ||
      s.w_infinity.cols() != s.decomp.rows || s.w_initial.rows() != s.w_infinity.rows() ||
      s.w_initial.cols() != s.w_infinity.cols())
    throw IoError(header_path, 0, "trajectory matrices have inconsistent shapes");
  return s;
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

struct RunManifest {
  std::string command;
  json parameters = json::object();
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> outputs;
  double duration_seconds = 0.0;

  json to_json() const {
    return json{{"command", command},
                {"parameters", parameters},
                {"seeds", seeds},
                {"tool_version", kToolVersion},
                {"outputs", outputs},
                {"duration_seconds", duration_seconds}};
  }
};

}  // namespace edd
