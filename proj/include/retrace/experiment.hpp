#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "retrace/analysis.hpp"
#include "retrace/config.hpp"
#include "retrace/dp.hpp"
#include "retrace/generators.hpp"
#include "retrace/mdp_io.hpp"
#include "retrace/online.hpp"
#include "retrace/operators.hpp"
#include "retrace/version.hpp"

namespace retrace {

inline Mdp build_mdp(const MdpSourceSpec& spec) {
  switch (spec.kind) {
    case MdpSourceSpec::Kind::Garnet:
      return generate_garnet({spec.n_states, spec.n_actions, spec.branching,
                              spec.termination, spec.reward_sparsity, spec.gamma,
                              spec.mdp_seed});
    case MdpSourceSpec::Kind::Chain:
      return generate_chain(spec.chain_n, spec.gamma);
    case MdpSourceSpec::Kind::File:
      return load_mdp(spec.path);
  }
  throw std::invalid_argument("build_mdp: unknown source");
}

inline Policy build_fixed_policy(const FixedPolicySpec& spec, const Mdp& mdp,
                                 const QFunction& q_star) {
  switch (spec.kind) {
    case FixedPolicySpec::Kind::Uniform:
      return Policy::uniform(mdp.n_states(), mdp.n_actions());
    case FixedPolicySpec::Kind::GreedyQStar:
      return epsilon_greedy(q_star, 0.0);
    case FixedPolicySpec::Kind::EpsilonGreedyQStar:
      return epsilon_greedy(q_star, spec.epsilon);
    case FixedPolicySpec::Kind::SoftmaxQStar:
      return softmax_policy(q_star, spec.beta);
  }
  throw std::invalid_argument("build_fixed_policy: unknown kind");
}

inline PolicySchedule build_schedule(const ScheduleSpec& spec, const Mdp& mdp) {
  switch (spec.kind) {
    case ScheduleSpec::Kind::EpsilonGreedy:
      return PolicySchedule::epsilon_greedy_schedule(
          spec.epsilon0, spec.epsilon_inverse_k
                             ? PolicySchedule::EpsilonDecay::InverseK
                             : PolicySchedule::EpsilonDecay::Constant);
    case ScheduleSpec::Kind::Softmax:
      return PolicySchedule::softmax_schedule(
          spec.beta0, spec.beta_linear_k ? PolicySchedule::BetaGrowth::LinearK
                                         : PolicySchedule::BetaGrowth::Constant);
    case ScheduleSpec::Kind::Mixture:
      return PolicySchedule::mixture_schedule(
          Policy::uniform(mdp.n_states(), mdp.n_actions()), spec.epsilon_mix);
    case ScheduleSpec::Kind::FixedUniform:
      return PolicySchedule::fixed_schedule(
          Policy::uniform(mdp.n_states(), mdp.n_actions()));
  }
  throw std::invalid_argument("build_schedule: unknown kind");
}

/// Learning-curve CSV cell: long format, one metric value per row.
struct MetricRow {
  std::string trace;
  double lambda;
  std::uint64_t seed;
  long step;
  std::string metric;
  double value;
};

/// Values above the divergence cutoff (or non-finite) are emitted as the
/// literal token `diverged` so intentionally exploding runs stay parseable.
inline std::string format_metric_value(double v) {
  if (!std::isfinite(v) || std::abs(v) > 1e6) return "diverged";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

inline std::uint64_t fnv1a_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

struct CellOutcome {
  std::vector<MetricRow> rows;
  bool failed = false;
  std::string error;
};

struct ExperimentOutcome {
  int n_cells = 0;
  int n_failed = 0;
  std::vector<std::string> cell_errors;
  std::string curves_path;
  std::string manifest_path;
};

namespace detail {

struct GridContext {
  const ExperimentConfig* config;
  const Mdp* mdp;
  const QFunction* q_star;
  const Policy* target_fixed;    // non-control modes
  const Policy* behavior_fixed;  // non-control modes
};

inline CellOutcome run_evaluate_cell(const GridContext& ctx, TraceFamily family,
                                     double lambda, std::uint64_t seed) {
  CellOutcome out;
  const Mdp& mdp = *ctx.mdp;
  TraceSpec spec{family, lambda};
  QFunction q_pi = exact_q_pi(mdp, *ctx.target_fixed);
  QFunction q = QFunction::zeros(mdp.n_states(), mdp.n_actions());
  std::string name = trace_family_name(family);
  for (long k = 0; k <= ctx.config->iterations; ++k) {
    out.rows.push_back({name, lambda, seed, k, "qpi_err", sup_distance(q, q_pi)});
    if (k == ctx.config->iterations) break;
    q = apply_expected_operator(mdp, spec, *ctx.target_fixed, *ctx.behavior_fixed, q);
  }
  return out;
}

inline CellOutcome run_control_cell(const GridContext& ctx, TraceFamily family,
                                    double lambda, std::uint64_t seed) {
  CellOutcome out;
  const Mdp& mdp = *ctx.mdp;
  const ExperimentConfig& config = *ctx.config;
  LearningRecord record = run_control(
      mdp, TraceSpec{family, lambda}, build_schedule(config.target_schedule, mdp),
      build_schedule(config.behavior_schedule, mdp),
      StepSizeSchedule(config.alpha0, config.exponent, mdp.n_states(),
                       mdp.n_actions()),
      QFunction::zeros(mdp.n_states(), mdp.n_actions()), config.episodes, seed,
      config.logging_interval, config.max_len);
  std::string name = trace_family_name(family);
  for (const LearningPoint& p : record.points) {
    out.rows.push_back({name, lambda, seed, p.episode, "qstar_err", p.err_qstar});
    out.rows.push_back({name, lambda, seed, p.episode, "qpi_err", p.err_qpi});
  }
  return out;
}

inline CellOutcome run_verify_cell(const GridContext& ctx, TraceFamily family,
                                   double lambda, std::uint64_t seed) {
  CellOutcome out;
  const Mdp& mdp = *ctx.mdp;
  const Policy& pi = *ctx.target_fixed;
  const Policy& mu = *ctx.behavior_fixed;
  TraceSpec spec{family, lambda};
  std::string name = trace_family_name(family);
  const double gamma = mdp.gamma();
  auto emit = [&](const std::string& metric, double value) {
    out.rows.push_back({name, lambda, seed, 0, metric, value});
  };

  emit("offpolicyness", offpolicyness(pi, mu));
  emit("commutation_defect", commutation_defect(mdp, pi, mu));

  bool valid = contraction_condition_holds(spec, pi, mu);
  emit("contraction_condition", valid ? 1.0 : 0.0);
  if (valid) {
    double ratio = verify_contraction(mdp, spec, pi, mu, 100, seed);
    emit("contraction_ratio", ratio);
    if (ratio > gamma + 1e-9) {
      out.failed = true;
      out.error = "contraction ratio " + std::to_string(ratio) + " exceeds gamma";
    }
    ContractionReport report = contraction_diagnostics(mdp, spec, pi, mu);
    emit("eta_max", report.max_eta);
    emit("eta_min", report.eta.minCoeff());
    if (report.eta.minCoeff() < -1e-12 || report.max_eta > gamma + 1e-12) {
      out.failed = true;
      out.error = "eta outside [0, gamma]";
    }
    LinearOperatorMatrix a = control_matrix_A(mdp, spec, pi, mu);
    double a_min = a.entries.minCoeff();
    double a_rowsum = a.entries.rowwise().sum().maxCoeff();
    emit("a_min_entry", a_min);
    emit("a_rowsum_max", a_rowsum);
    if (a_min < -1e-12 || a_rowsum > gamma + 1e-10) {
      out.failed = true;
      out.error = "control matrix A outside its bounds";
    }
  }
  if (family == TraceFamily::QPiLambda) {
    emit("qpi_safety_lambda", qpi_lambda_safety(pi, mu, gamma));
    SpectralRadiusResult rho = spectral_radius_qpi(mdp, lambda, pi, mu);
    emit("spectral_radius", rho.value);
    if (valid && rho.converged && rho.value > 1.0 + 1e-8) {
      out.failed = true;
      out.error = "spectral radius above 1 inside the guaranteed regime";
    }
  }
  return out;
}

inline CellOutcome run_variance_cell(const GridContext& ctx, TraceFamily family,
                                     double lambda, std::uint64_t seed) {
  CellOutcome out;
  TraceSumStats stats = trace_product_variance(
      *ctx.mdp, TraceSpec{family, lambda}, *ctx.target_fixed, *ctx.behavior_fixed,
      ctx.config->samples, ctx.config->horizon, seed);
  std::string name = trace_family_name(family);
  auto emit = [&](const std::string& metric, double value) {
    out.rows.push_back({name, lambda, seed, 0, metric, value});
  };
  emit("trace_sum_mean", stats.mean);
  emit("trace_sum_variance", stats.variance);
  emit("se_mean", stats.se_mean);
  emit("se_variance", stats.se_variance);
  if (std::isfinite(stats.iid_lower_bound))
    emit("iid_lower_bound", stats.iid_lower_bound);
  return out;
}

inline CellOutcome run_cell(const GridContext& ctx, TraceFamily family,
                            double lambda, std::uint64_t seed) {
  try {
    switch (ctx.config->mode) {
      case ExperimentMode::Evaluate:
        return run_evaluate_cell(ctx, family, lambda, seed);
      case ExperimentMode::Control:
        return run_control_cell(ctx, family, lambda, seed);
      case ExperimentMode::Verify:
        return run_verify_cell(ctx, family, lambda, seed);
      case ExperimentMode::Variance:
        return run_variance_cell(ctx, family, lambda, seed);
      default:
        break;
    }
    throw std::invalid_argument("run_cell: unsupported mode");
  } catch (const std::exception& e) {
    CellOutcome out;
    out.failed = true;
    out.error = e.what();
    return out;
  }
}

}  // namespace detail

/// Reads a `game,algorithm,score` CSV into a ScoreTable. Every (game,
/// algorithm) combination must appear exactly once.
inline ScoreTable parse_score_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty score file", 0);
  auto strip_cr = [](std::string s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
    return s;
  };
  if (strip_cr(line) != "game,algorithm,score")
    throw ParseError("expected header 'game,algorithm,score'", 1);

  std::vector<std::string> games, algorithms;
  std::vector<std::tuple<int, int, double>> cells;
  auto index_of = [](std::vector<std::string>& names, const std::string& name) {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<int>(i);
    names.push_back(name);
    return static_cast<int>(names.size() - 1);
  };
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string game, algorithm, score_text;
    if (!std::getline(row, game, ',') || !std::getline(row, algorithm, ',') ||
        !std::getline(row, score_text))
      throw ParseError("expected 'game,algorithm,score'", line_no);
    double score;
    try {
      score = std::stod(score_text);
    } catch (const std::exception&) {
      throw ParseError("bad score '" + score_text + "'", line_no);
    }
    cells.emplace_back(index_of(games, game), index_of(algorithms, algorithm),
                       score);
  }
  if (games.empty()) throw ParseError("score file has no data rows", line_no);

  Matrix raw = Matrix::Constant(static_cast<int>(games.size()),
                                static_cast<int>(algorithms.size()),
                                std::numeric_limits<double>::quiet_NaN());
  for (auto [g, a, s] : cells) {
    if (!std::isnan(raw(g, a)))
      throw ParseError("duplicate entry for game '" + games[static_cast<std::size_t>(g)] +
                           "', algorithm '" + algorithms[static_cast<std::size_t>(a)] + "'",
                       0);
    raw(g, a) = s;
  }
  if (raw.hasNaN())
    throw ParseError("score table is not complete (missing game/algorithm cells)", 0);
  return {std::move(games), std::move(algorithms), std::move(raw)};
}

inline ScoreTable load_score_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open score file '" + path + "'", 0);
  return parse_score_csv(in);
}

inline void write_score_distribution_csv(const ScoreDistribution& dist,
                                         const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open '" + path + "' for writing", 0);
  out << "algorithm,x,f\n";
  char buf[64];
  for (std::size_t a = 0; a < dist.algorithms.size(); ++a)
    for (std::size_t i = 0; i < dist.grid.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.2f,%.12g", dist.grid[i],
                    dist.f(static_cast<int>(a), static_cast<int>(i)));
      out << dist.algorithms[a] << "," << buf << "\n";
    }
}

/// Executes the experiment grid. Cells run in a worker pool but results are
/// written in declaration order (family-major, then lambda, then seed), so
/// identical configs and seeds produce byte-identical CSVs.
inline ExperimentOutcome run_experiment(const ExperimentConfig& config,
                                        const std::string& out_dir,
                                        std::uint64_t seed_offset = 0,
                                        int jobs_override = 0) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  ExperimentOutcome outcome;

  if (config.mode == ExperimentMode::Scores) {
    ScoreTable table = load_score_csv(config.scores_input);
    ScoreDistribution dist = inter_algorithm_scores(table);
    std::string out_path = (fs::path(out_dir) / config.scores_output).string();
    write_score_distribution_csv(dist, out_path);
    outcome.n_cells = 1;
    outcome.curves_path = out_path;
    return outcome;
  }

  const Mdp mdp = build_mdp(config.mdp);
  QFunction q_star = exact_q_star(mdp, 1e-9);
  Policy target_fixed = Policy::uniform(mdp.n_states(), mdp.n_actions());
  Policy behavior_fixed = target_fixed;
  if (config.mode != ExperimentMode::Control) {
    target_fixed = build_fixed_policy(config.target_fixed, mdp, q_star);
    behavior_fixed = build_fixed_policy(config.behavior_fixed, mdp, q_star);
  }
  detail::GridContext ctx{&config, &mdp, &q_star, &target_fixed, &behavior_fixed};

  struct Cell {
    TraceFamily family;
    double lambda;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (TraceFamily family : config.families)
    for (double lambda : config.lambdas)
      for (std::uint64_t seed : config.seeds)
        cells.push_back({family, lambda, seed + seed_offset});
  outcome.n_cells = static_cast<int>(cells.size());

  std::vector<CellOutcome> results(cells.size());
  int jobs = jobs_override > 0 ? jobs_override
                               : (config.jobs > 0
                                      ? config.jobs
                                      : static_cast<int>(std::max(
                                            1u, std::thread::hardware_concurrency())));
  jobs = std::min<int>(jobs, static_cast<int>(cells.size()));
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) break;
      results[i] = detail::run_cell(ctx, cells[i].family, cells[i].lambda,
                                    cells[i].seed);
    }
  };
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(jobs));
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  std::string curves_path = (fs::path(out_dir) / config.output).string();
  {
    std::ofstream out(curves_path);
    if (!out) throw ParseError("cannot open '" + curves_path + "' for writing", 0);
    out << "trace,lambda,seed,step,metric,value\n";
    char buf[64];
    for (std::size_t i = 0; i < cells.size(); ++i) {
      for (const MetricRow& row : results[i].rows) {
        std::snprintf(buf, sizeof(buf), "%.12g", row.lambda);
        out << row.trace << "," << buf << "," << row.seed << "," << row.step
            << "," << row.metric << "," << format_metric_value(row.value) << "\n";
      }
      if (results[i].failed) {
        std::ostringstream label;
        label << trace_family_name(cells[i].family) << ",lambda="
              << cells[i].lambda << ",seed=" << cells[i].seed << ": "
              << results[i].error;
        outcome.cell_errors.push_back(label.str());
        ++outcome.n_failed;
      }
    }
  }

  std::string manifest_path = (fs::path(out_dir) / "manifest.txt").string();
  {
    std::ofstream out(manifest_path);
    char hash_buf[32];
    std::snprintf(hash_buf, sizeof(hash_buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a_hash(config.raw_text)));
    out << "config_hash=" << hash_buf << "\n";
    out << "seeds=";
    for (std::size_t i = 0; i < config.seeds.size(); ++i)
      out << (i ? "," : "") << config.seeds[i];
    out << "\n";
    out << "seed_offset=" << seed_offset << "\n";
    out << "version=" << kVersion << "\n";
    for (const std::string& err : outcome.cell_errors)
      out << "cell_error=" << err << "\n";
    out << "timestamp=" << std::time(nullptr) << "\n";
  }

  outcome.curves_path = curves_path;
  outcome.manifest_path = manifest_path;
  return outcome;
}

}  // namespace retrace
