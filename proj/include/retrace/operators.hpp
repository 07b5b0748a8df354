#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "retrace/dp.hpp"
#include "retrace/mdp.hpp"
#include "retrace/traces.hpp"

namespace retrace {

/// Exact expected return-based operator R Q = Q + (I - gamma P^{c mu})^{-1}
/// (T^pi Q - Q) for a Markovian trace family.
inline QFunction apply_expected_operator(const Mdp& mdp, const TraceSpec& spec,
                                         const Policy& pi, const Policy& mu,
                                         const QFunction& q) {
  if (!spec.markovian())
    throw std::invalid_argument(
        "apply_expected_operator: use the enumeration form for "
        "history-dependent traces");
  LinearOperatorMatrix p_c_mu = trace_matrix(mdp, spec, pi, mu);
  Matrix a = Matrix::Identity(mdp.n_pairs(), mdp.n_pairs()) -
             mdp.gamma() * p_c_mu.entries;
  Vector residual = bellman_operator(mdp, pi, q).flatten() - q.flatten();
  Vector correction = solve_linear(a, residual, "apply_expected_operator");
  return QFunction::unflatten(q.flatten() + correction, mdp.n_states(),
                              mdp.n_actions());
}

struct TruncatedOperatorResult {
  QFunction value;
  double tail_bound;  // gamma^horizon; multiply by 2||Q - Q^pi|| for an error bound
};

namespace detail {

struct EnumerationState {
  const Mdp* mdp;
  const TraceSpec* spec;
  const Policy* pi;
  const Policy* mu;
  const QFunction* q;
  int horizon;
  std::int64_t budget;
  std::int64_t used = 0;
  double total = 0.0;
};

/// Walks every positive-probability trajectory continuation, accumulating
/// prob * gamma^t * (c_1...c_t) * delta_t for t < horizon. Branches whose
/// trace product is exactly zero are pruned: every deeper term vanishes.
inline void enumerate_deltas(EnumerationState& st, int x, int a, int t,
                             double prob, double trace_product) {
  const Mdp& mdp = *st.mdp;
  if (++st.used > st.budget)
    throw ResourceError("trajectory enumeration exceeded path budget of " +
                        std::to_string(st.budget));
  double delta = mdp.reward(x, a);
  double bootstrap = 0.0;
  for (int xn = 0; xn < mdp.n_states(); ++xn) {
    double p = mdp.transition(x, a, xn);
    if (p != 0.0) bootstrap += p * st.q->expectation(*st.pi, xn);
  }
  delta += mdp.gamma() * bootstrap - (*st.q)(x, a);
  double scale = std::pow(mdp.gamma(), t) * trace_product;
  st.total += prob * scale * delta;

  if (t + 1 >= st.horizon || scale == 0.0) return;
  for (int xn = 0; xn < mdp.n_states(); ++xn) {
    double p = mdp.transition(x, a, xn);
    if (p == 0.0) continue;
    for (int an = 0; an < mdp.n_actions(); ++an) {
      double mu_p = st.mu->prob(xn, an);
      if (mu_p == 0.0) continue;
      double c = trace_coefficient(*st.spec, st.pi->prob(xn, an), mu_p,
                                   trace_product);
      enumerate_deltas(st, xn, an, t + 1, prob * p * mu_p, trace_product * c);
    }
  }
}

}  // namespace detail

/// Evaluates the return-based operator by exact enumeration of all
/// trajectories up to `horizon` steps. This is the only form available for
/// CappedNonMarkov, whose coefficients depend on the running trace product.
inline TruncatedOperatorResult apply_expected_operator_nonmarkov(
    const Mdp& mdp, const TraceSpec& spec, const Policy& pi, const Policy& mu,
    const QFunction& q, int horizon, std::int64_t path_budget = 10000000) {
  if (horizon < 1)
    throw std::invalid_argument("apply_expected_operator_nonmarkov: horizon >= 1");
  pi.check_dims(mdp);
  mu.check_dims(mdp);
  Matrix out(mdp.n_states(), mdp.n_actions());
  detail::EnumerationState st{&mdp, &spec, &pi, &mu, &q, horizon, path_budget};
  for (int x = 0; x < mdp.n_states(); ++x)
    for (int a = 0; a < mdp.n_actions(); ++a) {
      st.total = 0.0;  // the path budget spans all start pairs
      detail::enumerate_deltas(st, x, a, 0, 1.0, 1.0);
      out(x, a) = q(x, a) + st.total;
    }
  return {QFunction(std::move(out)), std::pow(mdp.gamma(), horizon)};
}

/// Per-pair contraction coefficient eta(x,a) = 1 - (1-gamma) E_mu[sum_t
/// gamma^t c_1...c_t], with eta = gamma when traces are cut immediately and
/// eta -> 0 when learning from full returns.
struct ContractionReport {
  Matrix eta;
  double max_eta;
  int truncation_horizon;   // 0 when the closed form was used
  double truncation_bound;  // additive overestimate of eta; 0 when exact
};

namespace detail {

/// E_mu[sum_{t<=horizon} gamma^t c_1...c_t] from each start pair, by the
/// same trajectory walk as enumerate_deltas but summing the trace mass.
inline void enumerate_trace_mass(const Mdp& mdp, const TraceSpec& spec,
                                 const Policy& pi, const Policy& mu, int x, int a,
                                 int t, double prob, double trace_product,
                                 int horizon, std::int64_t budget,
                                 std::int64_t& used, double& total) {
  if (++used > budget)
    throw ResourceError("trace-mass enumeration exceeded path budget");
  double scale = std::pow(mdp.gamma(), t) * trace_product;
  total += prob * scale;
  if (t + 1 > horizon || scale == 0.0) return;
  for (int xn = 0; xn < mdp.n_states(); ++xn) {
    double p = mdp.transition(x, a, xn);
    if (p == 0.0) continue;
    for (int an = 0; an < mdp.n_actions(); ++an) {
      double mu_p = mu.prob(xn, an);
      if (mu_p == 0.0) continue;
      double c = trace_coefficient(spec, pi.prob(xn, an), mu_p, trace_product);
      enumerate_trace_mass(mdp, spec, pi, mu, xn, an, t + 1, prob * p * mu_p,
                           trace_product * c, horizon, budget, used, total);
    }
  }
}

}  // namespace detail

inline ContractionReport contraction_diagnostics(const Mdp& mdp,
                                                 const TraceSpec& spec,
                                                 const Policy& pi, const Policy& mu,
                                                 int horizon = 0,
                                                 std::int64_t path_budget = 10000000) {
  pi.check_dims(mdp);
  mu.check_dims(mdp);
  const int na = mdp.n_actions();
  Matrix eta(mdp.n_states(), na);
  int used_horizon = 0;
  double bound = 0.0;
  if (spec.markovian()) {
    // Closed form: E[sum_t gamma^t c_1...c_t] = (I - gamma P^{c mu})^{-1} e.
    LinearOperatorMatrix p_c_mu = trace_matrix(mdp, spec, pi, mu);
    Matrix a = Matrix::Identity(mdp.n_pairs(), mdp.n_pairs()) -
               mdp.gamma() * p_c_mu.entries;
    Vector mass = solve_linear(a, Vector::Ones(mdp.n_pairs()),
                               "contraction_diagnostics");
    for (int x = 0; x < mdp.n_states(); ++x)
      for (int ac = 0; ac < na; ++ac)
        eta(x, ac) = 1.0 - (1.0 - mdp.gamma()) * mass[flat_index(x, ac, na)];
  } else {
    if (horizon < 1)
      throw std::invalid_argument(
          "contraction_diagnostics: horizon >= 1 required for "
          "history-dependent traces");
    used_horizon = horizon;
    bound = std::pow(mdp.gamma(), horizon + 1);
    std::int64_t used = 0;
    for (int x = 0; x < mdp.n_states(); ++x)
      for (int ac = 0; ac < na; ++ac) {
        double total = 0.0;
        detail::enumerate_trace_mass(mdp, spec, pi, mu, x, ac, 0, 1.0, 1.0,
                                     horizon, path_budget, used, total);
        eta(x, ac) = 1.0 - (1.0 - mdp.gamma()) * total;
      }
  }
  double max_eta = eta.maxCoeff();
  return {std::move(eta), max_eta, used_horizon, bound};
}

/// A = gamma (I - gamma P^{c mu})^{-1} (P^pi - P^{c mu}). For any trace with
/// c <= pi/mu this matrix is non-negative with row sums at most gamma.
inline LinearOperatorMatrix control_matrix_A(const Mdp& mdp, const TraceSpec& spec,
                                             const Policy& pi, const Policy& mu) {
  LinearOperatorMatrix p_pi = transition_operator(mdp, pi);
  LinearOperatorMatrix p_c_mu = trace_matrix(mdp, spec, pi, mu);
  Matrix lhs = Matrix::Identity(mdp.n_pairs(), mdp.n_pairs()) -
               mdp.gamma() * p_c_mu.entries;
  Eigen::PartialPivLU<Matrix> lu(lhs);
  Matrix a = mdp.gamma() * lu.solve(p_pi.entries - p_c_mu.entries);
  if (!a.allFinite())
    throw NumericalError("control_matrix_A: solve produced non-finite entries");
  return {std::move(a), LinearOperatorMatrix::Kind::Derived};
}

}  // namespace retrace
