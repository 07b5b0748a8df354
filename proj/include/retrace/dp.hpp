#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <string>

#include "retrace/mdp.hpp"

namespace retrace {

/// Direct dense solve of A q = b with a residual guard. Ill-conditioning
/// cannot occur for I - gamma P with gamma < 1 and (sub)stochastic P, but
/// the guard reports a condition estimate if it ever trips.
inline Vector solve_linear(const Matrix& a, const Vector& b,
                           const std::string& context) {
  Eigen::PartialPivLU<Matrix> lu(a);
  Vector q = lu.solve(b);
  double residual = (a * q - b).cwiseAbs().maxCoeff();
  double scale = 1.0 + b.cwiseAbs().maxCoeff();
  if (!q.allFinite() || residual > 1e-10 * scale)
    throw NumericalError(context + ": dense solve residual " +
                         std::to_string(residual) + " (rcond estimate " +
                         std::to_string(lu.rcond()) + ")");
  return q;
}

/// P^pi over state-action space: M[(x,a),(x',a')] = P(x'|x,a) pi(a'|x').
inline LinearOperatorMatrix transition_operator(const Mdp& mdp, const Policy& pi) {
  pi.check_dims(mdp);
  const int na = mdp.n_actions();
  Matrix m = Matrix::Zero(mdp.n_pairs(), mdp.n_pairs());
  for (int x = 0; x < mdp.n_states(); ++x)
    for (int a = 0; a < na; ++a)
      for (int xn = 0; xn < mdp.n_states(); ++xn) {
        double p = mdp.transition(x, a, xn);
        if (p == 0.0) continue;
        for (int an = 0; an < na; ++an)
          m(flat_index(x, a, na), flat_index(xn, an, na)) = p * pi.prob(xn, an);
      }
  LinearOperatorMatrix op{std::move(m), LinearOperatorMatrix::Kind::P_pi};
  op.validate();
  return op;
}

/// T^pi Q = r + gamma P^pi Q.
inline QFunction bellman_operator(const Mdp& mdp, const Policy& pi,
                                  const QFunction& q) {
  pi.check_dims(mdp);
  const int na = mdp.n_actions();
  Matrix out(mdp.n_states(), na);
  for (int x = 0; x < mdp.n_states(); ++x)
    for (int a = 0; a < na; ++a) {
      double future = 0.0;
      for (int xn = 0; xn < mdp.n_states(); ++xn) {
        double p = mdp.transition(x, a, xn);
        if (p != 0.0) future += p * q.expectation(pi, xn);
      }
      out(x, a) = mdp.reward(x, a) + mdp.gamma() * future;
    }
  return QFunction(std::move(out));
}

/// Bellman optimality operator: (T Q)(x,a) = r + gamma sum_x' P max_a' Q.
inline QFunction bellman_optimality_operator(const Mdp& mdp, const QFunction& q) {
  const int na = mdp.n_actions();
  Matrix out(mdp.n_states(), na);
  Vector state_max(mdp.n_states());
  for (int x = 0; x < mdp.n_states(); ++x)
    state_max[x] = q.values().row(x).maxCoeff();
  for (int x = 0; x < mdp.n_states(); ++x)
    for (int a = 0; a < na; ++a) {
      double future = 0.0;
      for (int xn = 0; xn < mdp.n_states(); ++xn)
        future += mdp.transition(x, a, xn) * state_max[xn];
      out(x, a) = mdp.reward(x, a) + mdp.gamma() * future;
    }
  return QFunction(std::move(out));
}

/// Q^pi by direct solve of (I - gamma P^pi) Q = r.
inline QFunction exact_q_pi(const Mdp& mdp, const Policy& pi) {
  LinearOperatorMatrix p_pi = transition_operator(mdp, pi);
  Matrix a = Matrix::Identity(mdp.n_pairs(), mdp.n_pairs()) - mdp.gamma() * p_pi.entries;
  Vector q = solve_linear(a, mdp.reward_vector(), "exact_q_pi");
  return QFunction::unflatten(q, mdp.n_states(), mdp.n_actions());
}

/// Q* by value iteration. `tol` is a sup-norm distance guarantee to Q*,
/// enforced through the standard tol (1-gamma)/(2 gamma) stopping rule.
inline QFunction exact_q_star(const Mdp& mdp, double tol,
                              long max_iterations = 1000000) {
  if (tol <= 0.0) throw std::invalid_argument("exact_q_star: tol must be positive");
  const double gamma = mdp.gamma();
  const double stop = gamma > 0.0 ? tol * (1.0 - gamma) / (2.0 * gamma)
                                  : std::numeric_limits<double>::infinity();
  QFunction q = QFunction::zeros(mdp.n_states(), mdp.n_actions());
  for (long it = 0; it < max_iterations; ++it) {
    QFunction next = bellman_optimality_operator(mdp, q);
    double delta = sup_distance(next, q);
    q = std::move(next);
    if (delta <= stop) return q;
  }
  throw ConvergenceError("exact_q_star: no convergence within " +
                         std::to_string(max_iterations) + " iterations");
}

/// Lambda-return operator: Q + (I - lambda gamma P^pi)^{-1} (T^pi Q - Q).
inline QFunction lambda_return_operator(const Mdp& mdp, const Policy& pi,
                                        const QFunction& q, double lambda) {
  if (lambda < 0.0 || lambda > 1.0)
    throw std::invalid_argument("lambda_return_operator: lambda must lie in [0, 1]");
  LinearOperatorMatrix p_pi = transition_operator(mdp, pi);
  Matrix a = Matrix::Identity(mdp.n_pairs(), mdp.n_pairs()) -
             lambda * mdp.gamma() * p_pi.entries;
  Vector residual = bellman_operator(mdp, pi, q).flatten() - q.flatten();
  Vector correction = solve_linear(a, residual, "lambda_return_operator");
  return QFunction::unflatten(q.flatten() + correction, mdp.n_states(),
                              mdp.n_actions());
}

}  // namespace retrace
