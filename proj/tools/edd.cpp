// edd: command-line front end for the epochwise double descent model.
//
//   edd curve          expected test loss over training time for one (lambda, sigma)
//   edd phase-diagram  phase classification over a (lambda, sigma) grid
//   edd simulate       finite-size Monte Carlo, optionally against the theory
//   edd converge-head  replace a linear head by its converged weights
//   edd pca-filter     keep the top-k principal components of a matrix
//   edd ablation       Monte Carlo per noise family, EDD detected or not
//
// Exit codes: 0 success, 2 usage or invalid argument, 3 unstable learning
// rate, 4 unreadable or malformed file.

#include "edd/dynamics.hpp"
#include "edd/empirics.hpp"
#include "edd/io.hpp"
#include "edd/matrix_io.hpp"
#include "edd/noise.hpp"
#include "edd/spectra.hpp"
#include "edd/theory.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

using edd::json;

constexpr int kExitUsage = 2;
constexpr int kExitStability = 3;
constexpr int kExitIo = 4;

/// "1..20" (inclusive), "3,5,9" or a single integer.
std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  const auto dots = text.find("..");
  auto number = [&](std::string_view s) {
    std::uint64_t v = 0;
    if (!edd::detail::parse_number(s, v)) throw edd::DomainError("invalid seed '" + std::string(s) + "'");
    return v;
  };
  if (dots != std::string::npos) {
    const auto lo = number(std::string_view(text).substr(0, dots));
    const auto hi = number(std::string_view(text).substr(dots + 2));
    if (hi < lo) throw edd::DomainError("seed range '" + text + "' is empty");
    for (auto s = lo; s <= hi; ++s) out.push_back(s);
    return out;
  }
  std::string_view rest = text;
  while (true) {
    const auto comma = rest.find(',');
    out.push_back(number(rest.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  return out;
}

std::string matrix_ext(const std::string& format) { return format == "bin" ? ".bin" : ".csv"; }

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw edd::IoError(dir, 0, "cannot create directory: " + ec.message());
}

void ensure_parent(const std::string& prefix) {
  const auto parent = std::filesystem::path(prefix).parent_path();
  if (!parent.empty()) ensure_dir(parent.string());
}

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void finish(edd::RunManifest& m, const std::string& path, const Timer& timer) {
  m.duration_seconds = timer.seconds();
  edd::write_json(path, m.to_json());
  std::cout << "wrote " << m.outputs.size() << " files, manifest " << path << '\n';
}

// ---------------------------------------------------------------------------

struct TheoryFlags {
  std::optional<double> gamma;
  double gamma_scale = 1.0;
  std::uint64_t t_max = 1000000;
  edd::Index points = 200;
  double threshold = 1.0;
  double rise_tol = 1e-3;
  double es_tol = 1e-3;

  void add(CLI::App* app) {
    app->add_option("--gamma", gamma, "Fixed learning rate (default: gamma-scale / lambda_plus)");
    app->add_option("--gamma-scale", gamma_scale, "Learning rate as a multiple of 1/lambda_plus")->capture_default_str();
    app->add_option("--t-max", t_max, "Last training step of the log-spaced grid")->capture_default_str();
    app->add_option("--points", points, "Number of time-grid points before deduplication")->capture_default_str();
    app->add_option("--threshold", threshold, "Noise threshold tau on the eigenvalues")->capture_default_str();
    app->add_option("--rise-tol", rise_tol, "EDD rise tolerance relative to L(0)")->capture_default_str();
    app->add_option("--es-tol", es_tol, "Early-stopping tolerance relative to L(0)")->capture_default_str();
  }

  edd::GammaRule rule() const { return edd::GammaRule{gamma_scale, gamma}; }
  edd::TheoryOptions options() const { return {t_max, points, rise_tol, es_tol, threshold}; }
  json to_json() const {
    return json{{"gamma_rule", rule().describe()}, {"t_max", t_max},       {"points", points},
                {"threshold", threshold},          {"rise_tol", rise_tol}, {"es_tol", es_tol}};
  }
};

struct CurveCmd {
  double lambda = 0.0;
  double sigma = 0.0;
  TheoryFlags theory;
  std::string out;

  void add(CLI::App& parent) {
    auto* c = parent.add_subcommand("curve", "Expected test loss over training time");
    c->add_option("--lambda", lambda, "Aspect ratio D/N")->required();
    c->add_option("--sigma", sigma, "Noise variance sigma")->capture_default_str();
    theory.add(c);
    c->add_option("--out", out, "Output prefix: PREFIX.csv, PREFIX.json, PREFIX.manifest.json")->required();
    c->callback([this] { run(); });
  }

  void run() {
    Timer timer;
    const double gamma = theory.rule().rate(lambda);
    const edd::LossCurve curve = edd::loss_curve(lambda, sigma, gamma, theory.t_max, theory.points, theory.threshold);
    const edd::PhaseCell cell = edd::classify_phase(curve, theory.rise_tol, theory.es_tol);
    ensure_parent(out);
    edd::RunManifest m;
    m.command = "curve";
    m.parameters = theory.to_json();
    m.parameters["lambda"] = lambda;
    m.parameters["sigma"] = sigma;
    m.outputs = {out + ".csv", out + ".json"};
    edd::write_loss_curve_csv(m.outputs[0], curve);
    json sidecar = edd::curve_parameters_json(curve, theory.rule().describe());
    sidecar["classification"] = edd::phase_cell_json(cell);
    edd::write_json(m.outputs[1], sidecar);
    std::cout << "phase " << edd::to_string(cell.phase) << ", L(0) = " << curve.losses.front()
              << ", L(t_max) = " << curve.losses.back() << '\n';
    finish(m, out + ".manifest.json", timer);
  }
};

struct PhaseDiagramCmd {
  double lambda_min = 0.2, lambda_max = 5.0;
  double sigma_min = 0.0, sigma_max = 5.0;
  edd::Index grid_steps = 20;
  std::optional<edd::Index> lambda_steps, sigma_steps;
  TheoryFlags theory;
  std::string out_dir;

  void add(CLI::App& parent) {
    auto* c = parent.add_subcommand("phase-diagram", "Phase classification over a (lambda, sigma) grid");
    c->add_option("--lambda-min", lambda_min)->capture_default_str();
    c->add_option("--lambda-max", lambda_max)->capture_default_str();
    c->add_option("--sigma-min", sigma_min)->capture_default_str();
    c->add_option("--sigma-max", sigma_max)->capture_default_str();
    c->add_option("--grid-steps", grid_steps, "Grid points per axis")->capture_default_str();
    c->add_option("--lambda-steps", lambda_steps, "Overrides --grid-steps on the lambda axis");
    c->add_option("--sigma-steps", sigma_steps, "Overrides --grid-steps on the sigma axis");
    theory.add(c);
    c->add_option("--out-dir", out_dir, "Output directory")->required();
    c->callback([this] { run(); });
  }

  void run() {
    Timer timer;
    require_positive_range();
    const auto lambdas = edd::linear_grid(lambda_min, lambda_max, lambda_steps.value_or(grid_steps));
    const auto sigmas = edd::linear_grid(sigma_min, sigma_max, sigma_steps.value_or(grid_steps));
    const edd::PhaseDiagram pd = edd::phase_diagram(lambdas, sigmas, theory.rule(), theory.options());
    ensure_dir(out_dir);
    edd::RunManifest m;
    m.command = "phase-diagram";
    m.parameters = theory.to_json();
    m.parameters["lambda"] = {lambda_min, lambda_max, lambdas.size()};
    m.parameters["sigma"] = {sigma_min, sigma_max, sigmas.size()};
    m.outputs = edd::write_phase_diagram(out_dir, pd);

    std::cout << "phase summary over " << pd.cells.size() << " cells:\n";
    for (const auto& [phase, count] : pd.counts())
      std::cout << "  " << edd::to_string(phase) << ' ' << count << '\n';
    finish(m, out_dir + "/manifest.json", timer);
  }

  void require_positive_range() const {
    edd::require(lambda_min > 0.0, "--lambda-min must be positive");
    edd::require(sigma_min >= 0.0, "--sigma-min must be >= 0");
  }
};

struct ExperimentFlags {
  edd::Index samples = 4000;
  std::optional<edd::Index> features;
  std::optional<double> lambda;
  edd::Index classes = 1;
  double sigma = 0.0;
  std::string family = "eigen_thresholded";
  double threshold = 1.0;
  std::uint64_t noise_seed = 0;
  std::string seeds = "1..20";
  std::string engine = "spectral";
  std::optional<double> gamma;
  std::uint64_t t_max = 1000000;
  edd::Index points = 200;
  std::optional<double> pca_threshold;
  std::optional<edd::Index> pca_components;

  void add(CLI::App* app) {
    app->add_option("--samples,-N", samples, "Training samples N")->capture_default_str();
    auto* f = app->add_option("--features,-D", features, "Input dimension D (default N)");
    app->add_option("--lambda", lambda, "Aspect ratio; sets D = round(lambda * N)")->excludes(f);
    app->add_option("--classes,-C", classes, "Output dimension C")->capture_default_str();
    app->add_option("--sigma", sigma, "Noise variance sigma")->capture_default_str();
    app->add_option("--noise-family", family, "eigen_thresholded | uniform | none")->capture_default_str();
    app->add_option("--threshold", threshold, "Noise threshold tau")->capture_default_str();
    app->add_option("--noise-seed", noise_seed, "Extra seed mixed into every noise stream")->capture_default_str();
    app->add_option("--seeds", seeds, "Seeds as A..B, a comma list or a single value")->capture_default_str();
    app->add_option("--engine", engine, "spectral | full")->capture_default_str();
    app->add_option("--gamma", gamma, "Learning rate (default 1/lambda_plus)");
    app->add_option("--t-max", t_max)->capture_default_str();
    app->add_option("--points", points)->capture_default_str();
    auto* pt = app->add_option("--pca-threshold", pca_threshold,
                               "Train on the principal components with covariance eigenvalue above this (full engine)");
    app->add_option("--pca-components", pca_components, "Train on the top-k principal components (full engine)")
        ->excludes(pt);
  }

  edd::ExperimentConfig config() const {
    edd::ExperimentConfig cfg;
    edd::require(samples >= 1, "--samples must be positive");
    cfg.samples = samples;
    if (lambda) {
      edd::require(*lambda > 0.0, "--lambda must be positive");
      cfg.features = std::max<edd::Index>(1, static_cast<edd::Index>(std::llround(*lambda * static_cast<double>(samples))));
    } else {
      cfg.features = features.value_or(samples);
    }
    cfg.classes = classes;
    cfg.noise.family = edd::parse_noise_family(family);
    cfg.noise.sigma = sigma;
    cfg.noise.threshold = threshold;
    cfg.noise.seed = noise_seed;
    cfg.seeds = parse_seeds(seeds);
    cfg.engine = edd::parse_engine(engine);
    cfg.learning_rate = gamma;
    cfg.times = edd::time_grid(t_max, points);
    if (pca_threshold || pca_components) {
      edd::InputFilter f;
      if (pca_threshold) f.threshold = *pca_threshold;
      f.components = pca_components;
      cfg.input_filter = f;
      cfg.engine = edd::Engine::full;
    }
    cfg.validate();
    return cfg;
  }
};

edd::PhaseCell classify_mean(const edd::CurveStats& s, const edd::ExperimentConfig& cfg) {
  return edd::classify_phase(s.mean_curve(cfg.aspect_ratio(), cfg.noise.sigma, cfg.gamma(), cfg.noise.threshold));
}

struct SimulateCmd {
  ExperimentFlags exp;
  bool compare = false;
  std::string out_dir;

  void add(CLI::App& parent) {
    auto* c = parent.add_subcommand("simulate", "Finite-size Monte Carlo of the teacher-student model");
    exp.add(c);
    c->add_flag("--compare-theory", compare, "Also write theory values and z-scores");
    c->add_option("--out-dir", out_dir, "Output directory")->required();
    c->callback([this] { run(); });
  }

  void run() {
    Timer timer;
    const edd::ExperimentConfig cfg = exp.config();
    const edd::CurveStats stats = edd::run_teacher_student(cfg);
    const edd::PhaseCell cell = classify_mean(stats, cfg);
    std::optional<edd::TheoryComparison> cmp;
    if (compare) cmp = edd::compare_with_theory(stats, cfg);

    ensure_dir(out_dir);
    edd::RunManifest m;
    m.command = "simulate";
    m.parameters = edd::experiment_json(cfg);
    m.seeds = cfg.seeds;
    m.outputs = {out_dir + "/curve_stats.csv", out_dir + "/per_seed.csv", out_dir + "/report.json"};
    edd::write_curve_stats_csv(m.outputs[0], stats);
    edd::write_per_seed_csv(m.outputs[1], stats);
    json report{{"config", edd::experiment_json(cfg)},
                {"mean_curve", edd::phase_cell_json(cell)},
                {"edd_detected", edd::has_edd(cell.phase)}};
    if (cmp) {
      m.outputs.push_back(out_dir + "/comparison.csv");
      edd::write_comparison_csv(m.outputs.back(), *cmp);
      report["theory"] = {{"max_abs_z", cmp->max_abs_z}, {"within_3_stderr", cmp->within(3.0)}};
    }
    edd::write_json(m.outputs[2], report);
    std::cout << "mean curve phase " << edd::to_string(cell.phase) << (has_edd(cell.phase) ? " (EDD)" : " (no EDD)")
              << '\n';
    if (cmp) std::cout << "max |z| against theory " << cmp->max_abs_z << '\n';
    finish(m, out_dir + "/manifest.json", timer);
  }
};

struct AblationCmd {
  ExperimentFlags exp;
  std::vector<std::string> families{"eigen_thresholded", "uniform", "none"};
  std::string out_dir;

  void add(CLI::App& parent) {
    auto* c = parent.add_subcommand("ablation", "Monte Carlo per noise family at matched sigma");
    exp.add(c);
    c->add_option("--families", families, "Noise families to compare")->capture_default_str();
    c->add_option("--out-dir", out_dir, "Output directory")->required();
    c->callback([this] { run(); });
  }

  void run() {
    Timer timer;
    const edd::ExperimentConfig cfg = exp.config();
    std::vector<edd::NoiseFamily> fams;
    for (const auto& f : families) fams.push_back(edd::parse_noise_family(f));
    const edd::AblationReport report = edd::edd_ablation_suite(cfg, fams);
    ensure_dir(out_dir);
    edd::RunManifest m;
    m.command = "ablation";
    m.parameters = edd::experiment_json(cfg);
    m.parameters["families"] = families;
    m.seeds = cfg.seeds;
    m.outputs.push_back(out_dir + "/ablation.json");
    edd::write_json(m.outputs.back(), edd::ablation_json(report));
    for (const auto& e : report.entries) {
      m.outputs.push_back(out_dir + "/curve_stats_" + edd::to_string(e.family) + ".csv");
      edd::write_curve_stats_csv(m.outputs.back(), e.stats);
      std::cout << edd::to_string(e.family) << ": " << edd::to_string(e.cell.phase)
                << (e.edd() ? " (EDD)" : " (no EDD)") << '\n';
    }
    finish(m, out_dir + "/manifest.json", timer);
  }
};

struct ConvergeHeadCmd {
  std::string features_path, labels_path, w0_path, out, format = "csv";
  std::optional<edd::Index> classes;

  void add(CLI::App& parent) {
    auto* c = parent.add_subcommand("converge-head", "Replace a linear head by its converged cross-entropy weights");
    c->add_option("--features", features_path, "Feature matrix F x N")->required();
    c->add_option("--labels", labels_path, "Integer class index per sample")->required();
    c->add_option("--w0", w0_path, "Initial head C x F (default zeros)");
    c->add_option("--classes", classes, "Class count (default: largest label + 1)");
    c->add_option("--format", format, "csv | bin for matrix outputs")->check(CLI::IsMember({"csv", "bin"}))->capture_default_str();
    c->add_option("--out", out, "Output prefix")->required();
    c->callback([this] { run(); });
  }

  void run() {
    Timer timer;
    const edd::Matrix features = edd::read_matrix(features_path);
    const auto labels = edd::read_labels(labels_path);
    if (static_cast<edd::Index>(labels.size()) != features.cols())
      throw edd::IoError(labels_path, 0, "has " + std::to_string(labels.size()) + " labels but the features have " +
                                             std::to_string(features.cols()) + " columns");
    const edd::Index c = classes.value_or(*std::max_element(labels.begin(), labels.end()) + 1);
    const edd::Matrix one_hot = edd::LabelMatrix::from_indices(labels, c).values;
    edd::Matrix w0 = edd::Matrix::Zero(c, features.rows());
    if (!w0_path.empty()) {
      w0 = edd::read_matrix(w0_path);
      if (w0.rows() != c || w0.cols() != features.rows())
        throw edd::IoError(w0_path, 0, "expected a " + std::to_string(c) + "x" + std::to_string(features.rows()) +
                                           " matrix, found " + edd::dims(w0));
    }
    const edd::ConvergedHead head = edd::converged_last_layer(features, one_hot, w0);

    // One more linearised step must leave M w in place.
    const edd::SpectralDecomp d = edd::decompose(features);
    const double gamma = edd::default_rate(d);
    const edd::MMatrix mm{c};
    const edd::Matrix stepped = edd::gd_step_xent_linearized(head.weights, features, one_hot, gamma);
    const double residual = (mm.apply(stepped) - mm.apply(head.weights)).cwiseAbs().maxCoeff();

    ensure_parent(out);
    edd::RunManifest m;
    m.command = "converge-head";
    m.parameters = {{"features", features_path}, {"labels", labels_path}, {"w0", w0_path}, {"classes", c}};
    m.outputs = {out + ".weights" + matrix_ext(format), out + ".report.json"};
    edd::write_matrix(m.outputs[0], head.weights);
    edd::write_json(m.outputs[1], json{{"classes", c},
                                       {"features", features.rows()},
                                       {"samples", features.cols()},
                                       {"feature_rank", d.rank()},
                                       {"accuracy_before", head.accuracy_before},
                                       {"accuracy_after", head.accuracy_after},
                                       {"fixed_point_residual", residual},
                                       {"fixed_point_gamma", gamma}});
    std::cout << "training top-1 accuracy " << head.accuracy_before << " -> " << head.accuracy_after << '\n';
    finish(m, out + ".manifest.json", timer);
  }
};

struct PcaFilterCmd {
  std::string input, out, format = "csv";
  std::optional<edd::Index> k;
  std::optional<double> threshold;

  void add(CLI::App& parent) {
    auto* c = parent.add_subcommand("pca-filter", "Keep the top principal components of a D x N matrix");
    c->add_option("--input", input, "Matrix D x N, one sample per column")->required();
    auto* ko = c->add_option("--k", k, "Number of components kept");
    c->add_option("--threshold", threshold, "Keep components with covariance eigenvalue above this")->excludes(ko);
    c->add_option("--format", format, "csv | bin for matrix outputs")->check(CLI::IsMember({"csv", "bin"}))->capture_default_str();
    c->add_option("--out", out, "Output prefix")->required();
    c->callback([this] { run(); });
  }

  void run() {
    Timer timer;
    if (!k && !threshold) throw edd::DomainError("pca-filter needs --k or --threshold");
    const edd::Matrix x = edd::read_matrix(input);
    const edd::Index kept = k ? *k : edd::components_above(x, *threshold);
    const edd::PcaResult r = edd::pca_filter(x, kept);
    ensure_parent(out);
    edd::RunManifest m;
    m.command = "pca-filter";
    m.parameters = {{"input", input}, {"k", kept}};
    if (threshold) m.parameters["threshold"] = *threshold;
    m.outputs = {out + ".filtered" + matrix_ext(format), out + ".components" + matrix_ext(format), out + ".json"};
    edd::write_matrix(m.outputs[0], r.filtered);
    edd::write_matrix(m.outputs[1], r.components);
    edd::write_json(m.outputs[2], json{{"k", kept},
                                       {"features", x.rows()},
                                       {"samples", x.cols()},
                                       {"explained_variance_ratio", r.explained_variance_ratio},
                                       {"eigenvalues", std::vector<double>(r.eigenvalues.data(), r.eigenvalues.data() + r.eigenvalues.size())}});
    std::cout << "kept " << kept << " of " << x.rows() << " components, explained variance "
              << r.explained_variance_ratio << '\n';
    finish(m, out + ".manifest.json", timer);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Epochwise double descent: theory, phase diagrams and Monte Carlo"};
  app.require_subcommand(1);
  app.set_version_flag("--version", edd::kToolVersion);

  CurveCmd curve;
  PhaseDiagramCmd phase;
  SimulateCmd simulate;
  ConvergeHeadCmd head;
  PcaFilterCmd pca;
  AblationCmd ablation;
  curve.add(app);
  phase.add(app);
  simulate.add(app);
  head.add(app);
  pca.add(app);
  ablation.add(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  } catch (const edd::StabilityError& e) {
    std::cerr << "error: " << e.what() << "\ngamma_max = " << e.gamma_max() << '\n';
    return kExitStability;
  } catch (const edd::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const edd::DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
