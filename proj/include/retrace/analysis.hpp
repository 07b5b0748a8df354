#pragma once

#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "retrace/dp.hpp"
#include "retrace/mdp.hpp"
#include "retrace/online.hpp"
#include "retrace/operators.hpp"
#include "retrace/rng.hpp"
#include "retrace/traces.hpp"

namespace retrace {

/// Off-policyness: max over states of the l1 distance between action
/// distributions. Ranges over [0, 2].
inline double offpolicyness(const Policy& pi, const Policy& mu) {
  if (pi.n_states() != mu.n_states() || pi.n_actions() != mu.n_actions())
    throw std::invalid_argument("offpolicyness: dimension mismatch");
  double worst = 0.0;
  for (int x = 0; x < pi.n_states(); ++x) {
    double d = (pi.probs().row(x) - mu.probs().row(x)).cwiseAbs().sum();
    worst = std::max(worst, d);
  }
  return worst;
}

/// Largest lambda for which the constant-trace (QPiLambda) operator is
/// guaranteed contractive around Q^pi: (1 - gamma) / (gamma eps); infinite
/// on-policy.
inline double qpi_lambda_safety(const Policy& pi, const Policy& mu, double gamma) {
  if (gamma <= 0.0 || gamma >= 1.0)
    throw std::invalid_argument("qpi_lambda_safety: gamma must lie in (0, 1)");
  double eps = offpolicyness(pi, mu);
  if (eps == 0.0) return std::numeric_limits<double>::infinity();
  return (1.0 - gamma) / (gamma * eps);
}

/// Value-scaled greediness gap: smallest eps with T^pi Q >= T Q - eps ||Q|| e.
inline double greedy_gap_value_scaled(const Mdp& mdp, const Policy& pi,
                                      const QFunction& q) {
  double gap = sup_norm(bellman_optimality_operator(mdp, q).values() -
                        bellman_operator(mdp, pi, q).values());
  double scale = sup_norm(q.values());
  return scale > 0.0 ? gap / scale : (gap > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
}

/// l1 distance of pi from the greedy policy of q, maximized over states.
inline double greedy_gap_l1(const Policy& pi, const QFunction& q) {
  return offpolicyness(pi, epsilon_greedy(q, 0.0));
}

/// Worst observed contraction ratio ||R Q - Q^pi|| / ||Q - Q^pi|| over
/// n_samples random Q with entries uniform in [-10, 10]. Requires the trace
/// configuration to satisfy c <= pi/mu (use the spectral-radius diagnostic
/// outside that regime). Draws with ||Q - Q^pi|| < 1e-8 are rejected.
inline double verify_contraction(const Mdp& mdp, const TraceSpec& spec,
                                 const Policy& pi, const Policy& mu,
                                 int n_samples, std::uint64_t seed) {
  if (n_samples < 1)
    throw std::invalid_argument("verify_contraction: n_samples must be >= 1");
  if (!spec.markovian())
    throw std::invalid_argument(
        "verify_contraction: history-dependent traces are not supported here");
  if (!contraction_condition_holds(spec, pi, mu))
    throw std::domain_error(
        "verify_contraction: trace coefficients exceed pi/mu; the contraction "
        "guarantee does not apply (use spectral_radius_qpi instead)");
  const QFunction q_pi = exact_q_pi(mdp, pi);
  SplitMix64 rng(seed);
  double worst = 0.0;
  for (int i = 0; i < n_samples; ++i) {
    Matrix values(mdp.n_states(), mdp.n_actions());
    double denom = 0.0;
    do {
      for (int x = 0; x < mdp.n_states(); ++x)
        for (int a = 0; a < mdp.n_actions(); ++a)
          values(x, a) = rng.next_double(-10.0, 10.0);
      denom = sup_norm(values - q_pi.values());
    } while (denom < 1e-8);
    QFunction q(values);
    double ratio =
        sup_distance(apply_expected_operator(mdp, spec, pi, mu, q), q_pi) / denom;
    worst = std::max(worst, ratio);
  }
  return worst;
}

struct SpectralRadiusResult {
  double value;
  bool converged;  // false: power iteration stalled and no exact fallback ran
};

/// Spectral radius of a small dense matrix: power iteration (tolerance 1e-8,
/// 10^4 iterations) with a QR-style eigenvalue fallback for matrices up to
/// 64x64 when the iteration stalls (e.g. complex dominant pair).
inline SpectralRadiusResult spectral_radius(const Matrix& m, double tol = 1e-8,
                                            int max_iterations = 10000) {
  if (m.rows() != m.cols())
    throw std::invalid_argument("spectral_radius: matrix must be square");
  const int n = static_cast<int>(m.rows());
  // Fixed pseudo-random start: a structured start (e.g. all ones) can lie
  // exactly in an invariant kernel of these operator differences.
  Vector v(n);
  SplitMix64 start_rng(0x5EEDBEEF);
  for (int i = 0; i < n; ++i) v[i] = start_rng.next_double(-1.0, 1.0);
  v /= v.norm();
  double estimate = 0.0;
  for (int it = 0; it < max_iterations; ++it) {
    Vector w = m * v;
    double norm = w.norm();
    if (norm < 1e-300) return {0.0, true};  // reached the kernel
    v = w / norm;
    if (it > 0 && std::abs(norm - estimate) <= tol * std::max(1.0, norm))
      return {norm, true};
    estimate = norm;
  }
  if (n <= 64) {
    Eigen::EigenSolver<Matrix> solver(m, /*computeEigenvectors=*/false);
    if (solver.info() == Eigen::Success)
      return {solver.eigenvalues().cwiseAbs().maxCoeff(), true};
  }
  return {estimate, false};
}

/// Spectral radius of the constant-trace expected iteration matrix
/// gamma (I - lambda gamma P^mu)^{-1} (P^pi - lambda P^mu). A value above 1
/// certifies divergence of the expected QPiLambda iteration.
inline SpectralRadiusResult spectral_radius_qpi(const Mdp& mdp, double lambda,
                                                const Policy& pi,
                                                const Policy& mu) {
  if (lambda < 0.0 || lambda > 1.0)
    throw std::invalid_argument("spectral_radius_qpi: lambda must lie in [0, 1]");
  LinearOperatorMatrix p_pi = transition_operator(mdp, pi);
  LinearOperatorMatrix p_mu = transition_operator(mdp, mu);
  Matrix lhs = Matrix::Identity(mdp.n_pairs(), mdp.n_pairs()) -
               lambda * mdp.gamma() * p_mu.entries;
  Eigen::PartialPivLU<Matrix> lu(lhs);
  Matrix iteration = mdp.gamma() * lu.solve(p_pi.entries - lambda * p_mu.entries);
  if (!iteration.allFinite())
    throw NumericalError("spectral_radius_qpi: solve produced non-finite entries");
  return spectral_radius(iteration);
}

/// Sup-norm of P^pi P^{pi and mu} - P^{pi and mu} P^pi, the quantity whose
/// vanishing the online control analysis assumes.
inline double commutation_defect(const Mdp& mdp, const Policy& pi,
                                 const Policy& mu) {
  Matrix p_pi = transition_operator(mdp, pi).entries;
  Matrix p_min = pi_and_mu_operator(mdp, pi, mu).entries;
  return sup_operator_norm(p_pi * p_min - p_min * p_pi);
}

struct TraceSumStats {
  double mean;
  double variance;
  double se_mean;
  double se_variance;
  double iid_lower_bound;  // NaN when no single-state per-step V(c) exists
  long n_samples;
};

/// Monte-Carlo mean and variance of S = sum_{t<=horizon} gamma^t c_1...c_t
/// over trajectories drawn from mu (t = 0 contributes the constant 1).
/// Absorbing states are walked through as self-loops so the mean matches
/// the expectation inside the contraction coefficient. Start state is
/// uniform over non-absorbing states, start action drawn from mu. For
/// single-state MDPs with a Markovian trace the i.i.d.-approximation lower
/// bound sum_{t>=1} gamma^{2t} V(c)^t is reported as well. Sampling runs in
/// fixed blocks of 1024 with per-block derived seeds, so the result does
/// not depend on any parallel schedule.
inline TraceSumStats trace_product_variance(const Mdp& mdp, const TraceSpec& spec,
                                            const Policy& pi, const Policy& mu,
                                            long n_samples, int horizon,
                                            std::uint64_t seed) {
  if (n_samples < 2)
    throw std::invalid_argument("trace_product_variance: n_samples must be >= 2");
  if (horizon < 1)
    throw std::invalid_argument("trace_product_variance: horizon must be >= 1");
  pi.check_dims(mdp);
  mu.check_dims(mdp);

  std::vector<int> starts;
  for (int s = 0; s < mdp.n_states(); ++s)
    if (!mdp.is_absorbing(s)) starts.push_back(s);
  if (starts.empty())
    throw std::invalid_argument("trace_product_variance: all states absorbing");

  constexpr long kBlock = 1024;
  std::vector<double> samples;
  samples.reserve(static_cast<std::size_t>(n_samples));
  for (long b = 0; b * kBlock < n_samples; ++b) {
    SplitMix64 rng(derive_seed(seed, static_cast<std::uint64_t>(b)));
    const long hi = std::min(n_samples, (b + 1) * kBlock);
    for (long i = b * kBlock; i < hi; ++i) {
      int x = starts[static_cast<std::size_t>(
          rng.next_index(static_cast<int>(starts.size())))];
      int a = sample_action(rng, mu, x);
      double product = 1.0;
      double gamma_pow = 1.0;
      double sum = 1.0;  // t = 0 term
      for (int t = 1; t <= horizon; ++t) {
        x = sample_transition(rng, mdp, x, a);
        a = sample_action(rng, mu, x);
        double c = trace_coefficient(spec, pi.prob(x, a), mu.prob(x, a), product);
        product *= c;
        gamma_pow *= mdp.gamma();
        sum += gamma_pow * product;
        if (product == 0.0) break;  // nothing further can contribute
      }
      samples.push_back(sum);
    }
  }

  const double n = static_cast<double>(n_samples);
  double mean = 0.0;
  for (double s : samples) mean += s;
  mean /= n;
  double m2 = 0.0, m4 = 0.0;
  for (double s : samples) {
    double d = s - mean;
    m2 += d * d;
    m4 += d * d * d * d;
  }
  double variance = m2 / (n - 1.0);
  m4 /= n;
  double var_of_var = (m4 - variance * variance) / n;
  double se_variance = var_of_var > 0.0 ? std::sqrt(var_of_var) : 0.0;
  double se_mean = std::sqrt(variance / n);

  double iid_bound = std::numeric_limits<double>::quiet_NaN();
  if (mdp.n_states() == 1 && spec.markovian()) {
    double ec = 0.0, ec2 = 0.0;
    for (int a = 0; a < mdp.n_actions(); ++a) {
      double w = mu.prob(0, a);
      if (w == 0.0) continue;
      double c = detail::markov_trace(spec, pi.prob(0, a), w);
      ec += w * c;
      ec2 += w * c * c;
    }
    double vc = ec2 - ec * ec;
    double g2 = mdp.gamma() * mdp.gamma();
    double term = 1.0;
    iid_bound = 0.0;
    for (int t = 1; t <= horizon; ++t) {
      term *= g2 * vc;
      iid_bound += term;
    }
  }
  return {mean, variance, se_mean, se_variance, iid_bound, n_samples};
}

/// Exact per-step trace variance V(c | x) = E_mu c^2 - (E_mu c)^2 at a
/// state, for Markovian traces.
inline double per_step_trace_variance(const Mdp& mdp, const TraceSpec& spec,
                                      const Policy& pi, const Policy& mu, int x) {
  if (!spec.markovian())
    throw std::invalid_argument("per_step_trace_variance: Markovian traces only");
  if (x < 0 || x >= mdp.n_states())
    throw std::invalid_argument("per_step_trace_variance: state out of range");
  double ec = 0.0, ec2 = 0.0;
  for (int a = 0; a < mdp.n_actions(); ++a) {
    double w = mu.prob(x, a);
    if (w == 0.0) continue;
    double c = detail::markov_trace(spec, pi.prob(x, a), w);
    ec += w * c;
    ec2 += w * c * c;
  }
  return ec2 - ec * ec;
}

/// Raw per-instance scores for a set of algorithms.
struct ScoreTable {
  std::vector<std::string> games;
  std::vector<std::string> algorithms;
  Matrix raw;  // games x algorithms
};

struct ScoreDistribution {
  std::vector<std::string> games;
  std::vector<std::string> algorithms;
  Matrix z;                     // games x algorithms, min-max normalized per game
  std::vector<bool> degenerate; // games where every algorithm scored the same
  std::vector<double> grid;     // 0, 0.01, ..., 1
  Matrix f;                     // algorithms x grid: fraction of games with z >= x
};

/// Min-max normalizes scores per game (0 = worst, 1 = best among the
/// algorithms) and evaluates each algorithm's score distribution
/// f_a(x) = |{g : z_{g,a} >= x}| / n_games on a fixed 0..1 grid. Games where
/// all algorithms tie get z = 1 for everyone and are flagged rather than
/// dropped, so the divisor stays the table's game count.
inline ScoreDistribution inter_algorithm_scores(const ScoreTable& table) {
  const int n_games = static_cast<int>(table.raw.rows());
  const int n_algos = static_cast<int>(table.raw.cols());
  if (n_algos < 2)
    throw std::invalid_argument(
        "inter_algorithm_scores: at least 2 algorithms required");
  if (n_games < 1)
    throw std::invalid_argument("inter_algorithm_scores: empty table");

  ScoreDistribution out;
  out.games = table.games;
  out.algorithms = table.algorithms;
  out.z = Matrix(n_games, n_algos);
  out.degenerate.assign(static_cast<std::size_t>(n_games), false);
  for (int g = 0; g < n_games; ++g) {
    double lo = table.raw.row(g).minCoeff();
    double hi = table.raw.row(g).maxCoeff();
    if (hi == lo) {
      out.z.row(g).setOnes();
      out.degenerate[static_cast<std::size_t>(g)] = true;
    } else {
      out.z.row(g) = (table.raw.row(g).array() - lo) / (hi - lo);
    }
  }

  const int n_grid = 101;
  out.grid.resize(n_grid);
  out.f = Matrix(n_algos, n_grid);
  for (int i = 0; i < n_grid; ++i) {
    double x = static_cast<double>(i) / 100.0;
    out.grid[static_cast<std::size_t>(i)] = x;
    for (int a = 0; a < n_algos; ++a) {
      int count = 0;
      for (int g = 0; g < n_games; ++g)
        if (out.z(g, a) >= x) ++count;
      out.f(a, i) = static_cast<double>(count) / n_games;
    }
  }
  return out;
}

}  // namespace retrace
