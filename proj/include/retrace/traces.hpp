#pragma once

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>

#include "retrace/dp.hpp"
#include "retrace/mdp.hpp"

namespace retrace {

/// Trace-coefficient families for the return-based operator. All are
/// Markovian (c depends on the current state-action only) except
/// CappedNonMarkov, whose coefficient depends on the running product of
/// earlier coefficients and is supported for policy evaluation only.
enum class TraceFamily {
  ImportanceSampling,  // c = pi/mu
  QPiLambda,           // c = lambda
  TreeBackup,          // c = lambda * pi
  Retrace,             // c = lambda * min(1, pi/mu)
  CappedNonMarkov,     // c = lambda * min(1/(c_1...c_{s-1}), pi/mu)
};

struct TraceSpec {
  TraceFamily family;
  double lambda = 1.0;  // ignored for ImportanceSampling

  TraceSpec(TraceFamily f, double l = 1.0) : family(f), lambda(l) {
    if (lambda < 0.0 || lambda > 1.0)
      throw std::invalid_argument("TraceSpec: lambda must lie in [0, 1]");
  }

  bool markovian() const { return family != TraceFamily::CappedNonMarkov; }
};

inline std::string trace_family_name(TraceFamily f) {
  switch (f) {
    case TraceFamily::ImportanceSampling: return "importance_sampling";
    case TraceFamily::QPiLambda: return "qpi_lambda";
    case TraceFamily::TreeBackup: return "tree_backup";
    case TraceFamily::Retrace: return "retrace";
    case TraceFamily::CappedNonMarkov: return "capped_nonmarkov";
  }
  return "unknown";
}

/// Per-step trace coefficient c_s. `running_product` is the product
/// c_1...c_{s-1} along the current trajectory and is consulted only by
/// CappedNonMarkov (empty product = 1). mu_prob must be positive: the
/// coefficient is only ever evaluated at actions the behaviour policy took.
inline double trace_coefficient(const TraceSpec& spec, double pi_prob,
                                double mu_prob, double running_product = 1.0) {
  if (mu_prob <= 0.0)
    throw std::domain_error(
        "trace_coefficient: behaviour policy must support the taken action");
  switch (spec.family) {
    case TraceFamily::ImportanceSampling:
      return pi_prob / mu_prob;
    case TraceFamily::QPiLambda:
      return spec.lambda;
    case TraceFamily::TreeBackup:
      return spec.lambda * pi_prob;
    case TraceFamily::Retrace:
      return spec.lambda * std::min(1.0, pi_prob / mu_prob);
    case TraceFamily::CappedNonMarkov: {
      if (running_product < 0.0)
        throw std::domain_error("trace_coefficient: running product must be >= 0");
      double cap = running_product > 0.0
                       ? 1.0 / running_product
                       : std::numeric_limits<double>::infinity();
      return spec.lambda * std::min(cap, pi_prob / mu_prob);
    }
  }
  throw std::invalid_argument("trace_coefficient: unknown family");
}

/// Whether c(a,x) <= pi(a|x)/mu(a|x) holds everywhere mu puts mass, i.e.
/// whether the gamma-contraction guarantee applies to this configuration.
/// Retrace, TreeBackup and ImportanceSampling satisfy it by construction;
/// QPiLambda only when lambda * mu <= pi for every pair.
inline bool contraction_condition_holds(const TraceSpec& spec, const Policy& pi,
                                        const Policy& mu) {
  constexpr double kTol = 1e-12;
  switch (spec.family) {
    case TraceFamily::ImportanceSampling:
    case TraceFamily::TreeBackup:
    case TraceFamily::Retrace:
    case TraceFamily::CappedNonMarkov:
      return true;
    case TraceFamily::QPiLambda:
      for (int x = 0; x < pi.n_states(); ++x)
        for (int a = 0; a < pi.n_actions(); ++a)
          if (spec.lambda * mu.prob(x, a) > pi.prob(x, a) + kTol) return false;
      return true;
  }
  return false;
}

namespace detail {

inline void check_is_support(const Policy& pi, const Policy& mu) {
  for (int x = 0; x < pi.n_states(); ++x)
    for (int a = 0; a < pi.n_actions(); ++a)
      if (pi.prob(x, a) > 0.0 && mu.prob(x, a) <= 0.0)
        throw std::domain_error(
            "importance sampling support violation at (x=" + std::to_string(x) +
            ", a=" + std::to_string(a) + "): pi > 0 but mu = 0");
}

/// Markov trace value c(a,x); safe where mu(a|x) = 0 because the trace is
/// only ever multiplied by mu there.
inline double markov_trace(const TraceSpec& spec, double pi_prob, double mu_prob) {
  switch (spec.family) {
    case TraceFamily::ImportanceSampling:
      return mu_prob > 0.0 ? pi_prob / mu_prob : 0.0;
    case TraceFamily::QPiLambda:
      return spec.lambda;
    case TraceFamily::TreeBackup:
      return spec.lambda * pi_prob;
    case TraceFamily::Retrace:
      return mu_prob > 0.0 ? spec.lambda * std::min(1.0, pi_prob / mu_prob)
                           : spec.lambda;
    default:
      throw std::invalid_argument("markov_trace: family is not Markovian");
  }
}

}  // namespace detail

/// P^{c mu}: entries P(x'|x,a) mu(a'|x') c(a',x'). For Retrace this equals
/// lambda P^{pi and mu}; for ImportanceSampling with full support it equals
/// P^pi exactly.
inline LinearOperatorMatrix trace_matrix(const Mdp& mdp, const TraceSpec& spec,
                                         const Policy& pi, const Policy& mu) {
  if (!spec.markovian())
    throw std::invalid_argument(
        "trace_matrix: history-dependent traces have no matrix form");
  pi.check_dims(mdp);
  mu.check_dims(mdp);
  if (spec.family == TraceFamily::ImportanceSampling)
    detail::check_is_support(pi, mu);
  const int na = mdp.n_actions();
  Matrix m = Matrix::Zero(mdp.n_pairs(), mdp.n_pairs());
  for (int x = 0; x < mdp.n_states(); ++x)
    for (int a = 0; a < na; ++a)
      for (int xn = 0; xn < mdp.n_states(); ++xn) {
        double p = mdp.transition(x, a, xn);
        if (p == 0.0) continue;
        for (int an = 0; an < na; ++an) {
          double mu_p = mu.prob(xn, an);
          if (mu_p == 0.0) continue;
          double c = detail::markov_trace(spec, pi.prob(xn, an), mu_p);
          m(flat_index(x, a, na), flat_index(xn, an, na)) = p * mu_p * c;
        }
      }
  LinearOperatorMatrix op{std::move(m), LinearOperatorMatrix::Kind::P_c_mu};
  op.validate();
  return op;
}

/// P^{pi and mu}: entries P(x'|x,a) min(pi(a'|x'), mu(a'|x')).
inline LinearOperatorMatrix pi_and_mu_operator(const Mdp& mdp, const Policy& pi,
                                               const Policy& mu) {
  pi.check_dims(mdp);
  mu.check_dims(mdp);
  const int na = mdp.n_actions();
  Matrix m = Matrix::Zero(mdp.n_pairs(), mdp.n_pairs());
  for (int x = 0; x < mdp.n_states(); ++x)
    for (int a = 0; a < na; ++a)
      for (int xn = 0; xn < mdp.n_states(); ++xn) {
        double p = mdp.transition(x, a, xn);
        if (p == 0.0) continue;
        for (int an = 0; an < na; ++an)
          m(flat_index(x, a, na), flat_index(xn, an, na)) =
              p * std::min(pi.prob(xn, an), mu.prob(xn, an));
      }
  LinearOperatorMatrix op{std::move(m), LinearOperatorMatrix::Kind::P_pi_and_mu};
  op.validate();
  return op;
}

}  // namespace retrace
