#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "retrace/dp.hpp"
#include "retrace/mdp.hpp"
#include "retrace/rng.hpp"
#include "retrace/traces.hpp"

namespace retrace {

struct TrajectoryStep {
  int state;
  int action;
  double reward;
  double mu_prob;
};

/// Finite sampled path under a behaviour policy. `final_state` is the state
/// entered after the last recorded step; `terminated` marks entry into an
/// absorbing state (as opposed to hitting the length cap).
struct Trajectory {
  std::vector<TrajectoryStep> steps;
  int final_state = -1;
  bool terminated = false;

  int length() const { return static_cast<int>(steps.size()); }
  int next_state(int t) const {
    return t + 1 < length() ? steps[static_cast<std::size_t>(t) + 1].state
                            : final_state;
  }
};

/// Draws an action at state x by walking mu's row in index order.
inline int sample_action(SplitMix64& rng, const Policy& mu, int x) {
  double u = rng.next_double();
  double acc = 0.0;
  for (int a = 0; a < mu.n_actions(); ++a) {
    acc += mu.prob(x, a);
    if (u < acc) return a;
  }
  return mu.n_actions() - 1;
}

/// Draws a successor state of (x, a) by walking the transition row.
inline int sample_transition(SplitMix64& rng, const Mdp& mdp, int x, int a) {
  double u = rng.next_double();
  double acc = 0.0;
  for (int xn = 0; xn < mdp.n_states(); ++xn) {
    acc += mdp.transition(x, a, xn);
    if (u < acc) return xn;
  }
  return mdp.n_states() - 1;
}

/// Samples a trajectory following mu, stopping on entry into an absorbing
/// state or after max_len steps. Start state is uniform over non-absorbing
/// states unless `start_state` fixes one. Deterministic given the seed.
inline Trajectory sample_trajectory(const Mdp& mdp, const Policy& mu,
                                    std::uint64_t rng_seed, int max_len,
                                    std::optional<int> start_state = std::nullopt) {
  mu.check_dims(mdp);
  if (max_len < 1)
    throw std::invalid_argument("sample_trajectory: max_len must be >= 1");
  SplitMix64 rng(rng_seed);

  int x;
  if (start_state) {
    x = *start_state;
    if (x < 0 || x >= mdp.n_states())
      throw std::invalid_argument("sample_trajectory: start state out of range");
    if (mdp.is_absorbing(x))
      throw std::invalid_argument("sample_trajectory: start state is absorbing");
  } else {
    std::vector<int> starts;
    for (int s = 0; s < mdp.n_states(); ++s)
      if (!mdp.is_absorbing(s)) starts.push_back(s);
    if (starts.empty())
      throw std::invalid_argument("sample_trajectory: all states are absorbing");
    x = starts[static_cast<std::size_t>(rng.next_index(static_cast<int>(starts.size())))];
  }

  Trajectory traj;
  for (int t = 0; t < max_len; ++t) {
    double row_mass = mu.probs().row(x).sum();
    if (row_mass <= 0.0)
      throw std::domain_error("sample_trajectory: behaviour policy row " +
                              std::to_string(x) + " has zero mass");
    int a = sample_action(rng, mu, x);
    traj.steps.push_back({x, a, mdp.reward(x, a), mu.prob(x, a)});
    x = sample_transition(rng, mdp, x, a);
    if (mdp.is_absorbing(x)) {
      traj.final_state = x;
      traj.terminated = true;
      return traj;
    }
  }
  traj.final_state = x;
  traj.terminated = false;
  return traj;
}

/// Robbins-Monro step sizes alpha(x,a) = alpha0 / (1 + n(x,a))^exponent with
/// per-pair visit counters; n counts prior trajectories that visited the
/// pair, so a pair's first update uses alpha0 exactly.
class StepSizeSchedule {
 public:
  StepSizeSchedule(double alpha0, double exponent, int n_states, int n_actions)
      : alpha0_(alpha0),
        exponent_(exponent),
        counts_(Eigen::MatrixXi::Zero(n_states, n_actions)) {
    if (alpha0 <= 0.0)
      throw std::invalid_argument("StepSizeSchedule: alpha0 must be positive");
    if (exponent <= 0.5 || exponent > 1.0)
      throw std::invalid_argument(
          "StepSizeSchedule: exponent must lie in (0.5, 1] so that "
          "sum alpha diverges and sum alpha^2 converges");
  }

  double alpha(int x, int a) const {
    return alpha0_ / std::pow(1.0 + counts_(x, a), exponent_);
  }
  void record_visit(int x, int a) { ++counts_(x, a); }
  int count(int x, int a) const { return counts_(x, a); }
  double alpha0() const { return alpha0_; }
  double exponent() const { return exponent_; }

 private:
  double alpha0_;
  double exponent_;
  Eigen::MatrixXi counts_;
};

/// Accumulating traces z(x,a) plus the per-pair increment accumulated over
/// one pass of a trajectory.
struct EligibilityTable {
  Matrix z;
  Matrix pending;

  EligibilityTable(int n_states, int n_actions)
      : z(Matrix::Zero(n_states, n_actions)),
        pending(Matrix::Zero(n_states, n_actions)) {}
};

/// Offline every-visit update: every temporal difference is computed against
/// the input q and the increments are applied once at the end, matching the
/// analyzed iteration. For each visited pair the increment is
/// alpha(x,a) * sum_t delta_t z_t(x,a), with the accumulating trace updated
/// as z_t = gamma c_t z_{t-1} + indicator{(x_t,a_t) = (x,a)} and
/// delta_t = r_t + gamma E_pi q(x_{t+1}, .) - q(x_t, a_t). Visit counters
/// advance once per pair per trajectory.
inline QFunction every_visit_update(const QFunction& q, const Trajectory& traj,
                                    const TraceSpec& spec, const Policy& pi,
                                    double gamma, StepSizeSchedule& sched) {
  const int ns = q.n_states();
  const int na = q.n_actions();
  if (pi.n_states() != ns || pi.n_actions() != na)
    throw std::invalid_argument("every_visit_update: policy/Q shape mismatch");
  if (gamma < 0.0 || gamma >= 1.0)
    throw std::invalid_argument("every_visit_update: gamma must lie in [0, 1)");

  EligibilityTable table(ns, na);
  double running_product = 1.0;  // c_1...c_{t-1} along the trajectory
  std::vector<std::pair<int, int>> first_visits;
  Eigen::MatrixXi seen = Eigen::MatrixXi::Zero(ns, na);

  for (int t = 0; t < traj.length(); ++t) {
    const TrajectoryStep& step = traj.steps[static_cast<std::size_t>(t)];
    if (step.mu_prob <= 0.0)
      throw std::domain_error(
          "every_visit_update: trajectory records a zero behaviour probability");
    if (t >= 1) {
      double c = trace_coefficient(spec, pi.prob(step.state, step.action),
                                   step.mu_prob, running_product);
      table.z *= gamma * c;
      running_product *= c;
    }
    table.z(step.state, step.action) += 1.0;
    if (!seen(step.state, step.action)) {
      seen(step.state, step.action) = 1;
      first_visits.emplace_back(step.state, step.action);
    }
    double delta = step.reward + gamma * q.expectation(pi, traj.next_state(t)) -
                   q(step.state, step.action);
    table.pending += delta * table.z;
  }

  Matrix next = q.values();
  for (auto [x, a] : first_visits) {
    next(x, a) += sched.alpha(x, a) * table.pending(x, a);
    sched.record_visit(x, a);
  }
  return QFunction(std::move(next));
}

/// epsilon-greedy policy: (1 - eps) on the greedy action plus eps/|A| on
/// every action; argmax ties broken by lowest action index.
inline Policy epsilon_greedy(const QFunction& q, double epsilon) {
  if (epsilon < 0.0 || epsilon > 1.0)
    throw std::invalid_argument("epsilon_greedy: epsilon must lie in [0, 1]");
  const int na = q.n_actions();
  Matrix probs = Matrix::Constant(q.n_states(), na, epsilon / na);
  for (int x = 0; x < q.n_states(); ++x)
    probs(x, q.greedy_action(x)) += 1.0 - epsilon;
  return Policy(std::move(probs));
}

/// Softmax policy with inverse temperature beta, max-subtracted for
/// numerical stability. beta = 0 gives the uniform policy.
inline Policy softmax_policy(const QFunction& q, double beta) {
  if (beta < 0.0)
    throw std::invalid_argument("softmax_policy: beta must be non-negative");
  Matrix probs(q.n_states(), q.n_actions());
  for (int x = 0; x < q.n_states(); ++x) {
    double m = q.values().row(x).maxCoeff();
    double total = 0.0;
    for (int a = 0; a < q.n_actions(); ++a) {
      double w = std::exp(beta * (q(x, a) - m));
      probs(x, a) = w;
      total += w;
    }
    probs.row(x) /= total;
  }
  return Policy(std::move(probs));
}

/// Behaviour mixture placing 1 - eps_mix on the greedy action and eps_mix on
/// the remaining actions in proportion to base_mu, renormalized to exclude
/// the greedy action.
inline Policy mixture_behavior(const QFunction& q, const Policy& base_mu,
                               double eps_mix) {
  if (eps_mix < 0.0 || eps_mix >= 1.0)
    throw std::invalid_argument("mixture_behavior: eps_mix must lie in [0, 1)");
  if (base_mu.n_states() != q.n_states() || base_mu.n_actions() != q.n_actions())
    throw std::invalid_argument("mixture_behavior: shape mismatch");
  const int na = q.n_actions();
  Matrix probs = Matrix::Zero(q.n_states(), na);
  for (int x = 0; x < q.n_states(); ++x) {
    int greedy = q.greedy_action(x);
    probs(x, greedy) = 1.0 - eps_mix;
    if (eps_mix > 0.0) {
      double denom = 1.0 - base_mu.prob(x, greedy);
      if (denom <= 1e-12)
        throw std::domain_error(
            "mixture_behavior: base policy puts all mass on the greedy action "
            "in state " + std::to_string(x));
      for (int a = 0; a < na; ++a)
        if (a != greedy) probs(x, a) = eps_mix * base_mu.prob(x, a) / denom;
    }
  }
  return Policy(std::move(probs));
}

/// Policy sequences used by the control loop. EpsilonGreedy with
/// non-increasing eps_k and Softmax with non-decreasing beta_k are
/// increasingly greedy; MixtureEq8 is a behaviour-side construction whose
/// greedy-action mass is state-independent.
class PolicySchedule {
 public:
  enum class Kind { EpsilonGreedy, Softmax, MixtureEq8, FixedPolicy };
  enum class EpsilonDecay { Constant, InverseK };
  enum class BetaGrowth { Constant, LinearK };

  static PolicySchedule epsilon_greedy_schedule(double eps0,
                                                EpsilonDecay decay) {
    if (eps0 < 0.0 || eps0 > 1.0)
      throw std::invalid_argument("PolicySchedule: eps0 must lie in [0, 1]");
    PolicySchedule s(Kind::EpsilonGreedy);
    s.eps0_ = eps0;
    s.eps_decay_ = decay;
    return s;
  }

  static PolicySchedule softmax_schedule(double beta0, BetaGrowth growth) {
    if (beta0 < 0.0)
      throw std::invalid_argument("PolicySchedule: beta0 must be >= 0");
    PolicySchedule s(Kind::Softmax);
    s.beta0_ = beta0;
    s.beta_growth_ = growth;
    return s;
  }

  static PolicySchedule mixture_schedule(Policy base_mu, double eps_mix) {
    if (eps_mix < 0.0 || eps_mix >= 1.0)
      throw std::invalid_argument("PolicySchedule: eps_mix must lie in [0, 1)");
    PolicySchedule s(Kind::MixtureEq8);
    s.base_mu_ = std::move(base_mu);
    s.eps_mix_ = eps_mix;
    return s;
  }

  static PolicySchedule fixed_schedule(Policy policy) {
    PolicySchedule s(Kind::FixedPolicy);
    s.fixed_ = std::move(policy);
    return s;
  }

  Kind kind() const { return kind_; }

  double epsilon_at(long k) const {
    return eps_decay_ == EpsilonDecay::InverseK ? eps0_ / std::max<long>(k, 1)
                                                : eps0_;
  }
  double beta_at(long k) const {
    return beta_growth_ == BetaGrowth::LinearK
               ? beta0_ * static_cast<double>(std::max<long>(k, 1))
               : beta0_;
  }

  /// Policy for episode k (1-based) given the current Q estimate.
  Policy policy_at(long k, const QFunction& q) const {
    switch (kind_) {
      case Kind::EpsilonGreedy:
        return epsilon_greedy(q, epsilon_at(k));
      case Kind::Softmax:
        return softmax_policy(q, beta_at(k));
      case Kind::MixtureEq8:
        return mixture_behavior(q, *base_mu_, eps_mix_);
      case Kind::FixedPolicy:
        return *fixed_;
    }
    throw std::invalid_argument("PolicySchedule: unknown kind");
  }

 private:
  explicit PolicySchedule(Kind kind) : kind_(kind) {}

  Kind kind_;
  double eps0_ = 0.0;
  EpsilonDecay eps_decay_ = EpsilonDecay::Constant;
  double beta0_ = 0.0;
  BetaGrowth beta_growth_ = BetaGrowth::Constant;
  std::optional<Policy> base_mu_;
  double eps_mix_ = 0.0;
  std::optional<Policy> fixed_;
};

struct LearningPoint {
  long episode;
  double err_qstar;  // ||Q_k - Q*||_inf
  double err_qpi;    // ||Q_k - Q^{pi_k}||_inf
};

struct LearningRecord {
  std::vector<LearningPoint> points;
};

/// Online control loop: per episode, refresh pi_k and mu_k from their
/// schedules, sample one trajectory under mu_k and apply the every-visit
/// update with targets pi_k. With greedy targets (eps_k = 0) this is
/// Watkins' Q(lambda) under the chosen trace family. Episode k uses the
/// derived seed derive_seed(seed, k), so runs are reproducible. A run whose
/// Q-table magnitude passes the divergence cutoff (1e6) stops early with a
/// final logged point, keeping intentionally diverging demonstrations
/// finite and parseable.
inline LearningRecord run_control(const Mdp& mdp, const TraceSpec& spec,
                                  const PolicySchedule& target_sched,
                                  const PolicySchedule& behavior_sched,
                                  StepSizeSchedule step_sched,
                                  const QFunction& q0, long episodes,
                                  std::uint64_t seed, long logging_interval = 100,
                                  int max_len = 1000) {
  if (!spec.markovian())
    throw std::invalid_argument(
        "run_control: history-dependent traces are supported for policy "
        "evaluation only");
  if (episodes < 0)
    throw std::invalid_argument("run_control: episodes must be >= 0");
  if (logging_interval < 1)
    throw std::invalid_argument("run_control: logging interval must be >= 1");

  // Absorbing-state entries stay pinned at zero so the bootstrap at
  // termination needs no special casing.
  Matrix q_values = q0.values();
  for (int x : mdp.absorbing()) q_values.row(x).setZero();
  QFunction q(std::move(q_values));

  const QFunction q_star = exact_q_star(mdp, 1e-9);
  LearningRecord record;
  auto log_point = [&](long k) {
    Policy pi_k = target_sched.policy_at(std::max<long>(k, 1), q);
    record.points.push_back({k, sup_distance(q, q_star),
                             sup_distance(q, exact_q_pi(mdp, pi_k))});
  };

  log_point(0);
  for (long k = 1; k <= episodes; ++k) {
    Policy pi_k = target_sched.policy_at(k, q);
    Policy mu_k = behavior_sched.policy_at(k, q);
    Trajectory traj = sample_trajectory(mdp, mu_k, derive_seed(seed, static_cast<std::uint64_t>(k)), max_len);
    q = every_visit_update(q, traj, spec, pi_k, mdp.gamma(), step_sched);
    bool diverged = sup_norm(q.values()) > 1e6;
    if (k % logging_interval == 0 || k == episodes || diverged) log_point(k);
    if (diverged) break;
  }
  return record;
}

}  // namespace retrace
