#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "retrace/errors.hpp"

namespace retrace {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// State-action pairs are flattened as index = x * n_actions + a throughout,
/// so operator matrices are comparable across implementations.
inline int flat_index(int state, int action, int n_actions) {
  return state * n_actions + action;
}

inline double sup_norm(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

/// Operator norm induced by the sup vector norm: max absolute row sum.
inline double sup_operator_norm(const Matrix& m) {
  return m.cwiseAbs().rowwise().sum().maxCoeff();
}

/// Finite MDP with dense transition tensor and reward table. Absorbing
/// states are explicit self-loops with zero reward; trajectory sampling
/// terminates upon entering one, while operator algebra stays square.
class Mdp {
 public:
  /// transitions[a] is the n_states x n_states matrix P(x' | x, a) with rows
  /// indexed by x. rewards is n_states x n_actions.
  Mdp(std::vector<Matrix> transitions, Matrix rewards, double gamma,
      std::set<int> absorbing = {})
      : transitions_(std::move(transitions)),
        rewards_(std::move(rewards)),
        gamma_(gamma),
        absorbing_(std::move(absorbing)) {
    validate();
    r_max_ = rewards_.size() > 0 ? rewards_.cwiseAbs().maxCoeff() : 0.0;
  }

  int n_states() const { return static_cast<int>(rewards_.rows()); }
  int n_actions() const { return static_cast<int>(rewards_.cols()); }
  int n_pairs() const { return n_states() * n_actions(); }
  double gamma() const { return gamma_; }
  double r_max() const { return r_max_; }

  double transition(int x, int a, int x_next) const {
    return transitions_[static_cast<std::size_t>(a)](x, x_next);
  }
  double reward(int x, int a) const { return rewards_(x, a); }
  const Matrix& rewards() const { return rewards_; }

  const std::set<int>& absorbing() const { return absorbing_; }
  bool is_absorbing(int x) const { return absorbing_.count(x) > 0; }

  /// Rewards flattened to a vector in state-action index order.
  Vector reward_vector() const {
    Vector r(n_pairs());
    for (int x = 0; x < n_states(); ++x)
      for (int a = 0; a < n_actions(); ++a)
        r[flat_index(x, a, n_actions())] = rewards_(x, a);
    return r;
  }

 private:
  void validate() const {
    constexpr double kRowTol = 1e-12;
    const int ns = static_cast<int>(rewards_.rows());
    const int na = static_cast<int>(rewards_.cols());
    if (ns <= 0 || na <= 0)
      throw std::invalid_argument("Mdp: state and action counts must be positive");
    if (gamma_ < 0.0 || gamma_ >= 1.0)
      throw std::invalid_argument("Mdp: gamma must lie in [0, 1)");
    if (static_cast<int>(transitions_.size()) != na)
      throw std::invalid_argument("Mdp: one transition matrix per action required");
    if (!rewards_.allFinite())
      throw std::invalid_argument("Mdp: rewards must be finite");
    for (int a = 0; a < na; ++a) {
      const Matrix& p = transitions_[static_cast<std::size_t>(a)];
      if (p.rows() != ns || p.cols() != ns)
        throw std::invalid_argument("Mdp: transition matrix has wrong shape");
      if ((p.array() < 0.0).any())
        throw std::invalid_argument("Mdp: transition probabilities must be non-negative");
      for (int x = 0; x < ns; ++x) {
        double row_sum = p.row(x).sum();
        if (std::abs(row_sum - 1.0) > kRowTol)
          throw std::invalid_argument(
              "Mdp: transition row (x=" + std::to_string(x) +
              ", a=" + std::to_string(a) + ") sums to " + std::to_string(row_sum));
      }
    }
    for (int x : absorbing_) {
      if (x < 0 || x >= ns)
        throw std::invalid_argument("Mdp: absorbing state index out of range");
      for (int a = 0; a < na; ++a) {
        if (std::abs(transitions_[static_cast<std::size_t>(a)](x, x) - 1.0) > kRowTol)
          throw std::invalid_argument(
              "Mdp: absorbing state " + std::to_string(x) + " must self-loop");
        if (rewards_(x, a) != 0.0)
          throw std::invalid_argument(
              "Mdp: absorbing state " + std::to_string(x) + " must have zero reward");
      }
    }
  }

  std::vector<Matrix> transitions_;
  Matrix rewards_;
  double gamma_;
  std::set<int> absorbing_;
  double r_max_ = 0.0;
};

/// Stochastic tabular policy: probs(x, a) is a distribution over actions
/// for every state.
class Policy {
 public:
  explicit Policy(Matrix probs) : probs_(std::move(probs)) { validate(); }

  static Policy uniform(int n_states, int n_actions) {
    return Policy(Matrix::Constant(n_states, n_actions, 1.0 / n_actions));
  }

  int n_states() const { return static_cast<int>(probs_.rows()); }
  int n_actions() const { return static_cast<int>(probs_.cols()); }
  double prob(int x, int a) const { return probs_(x, a); }
  const Matrix& probs() const { return probs_; }

  void check_dims(const Mdp& mdp) const {
    if (n_states() != mdp.n_states() || n_actions() != mdp.n_actions())
      throw std::invalid_argument("Policy: dimensions do not match the MDP");
  }

 private:
  void validate() const {
    constexpr double kRowTol = 1e-12;
    if (probs_.rows() == 0 || probs_.cols() == 0)
      throw std::invalid_argument("Policy: empty probability table");
    if ((probs_.array() < 0.0).any())
      throw std::invalid_argument("Policy: probabilities must be non-negative");
    for (int x = 0; x < probs_.rows(); ++x) {
      double row_sum = probs_.row(x).sum();
      if (std::abs(row_sum - 1.0) > kRowTol)
        throw std::invalid_argument("Policy: row " + std::to_string(x) +
                                    " sums to " + std::to_string(row_sum));
    }
  }

  Matrix probs_;
};

/// Dense |X| x |A| action-value table.
class QFunction {
 public:
  explicit QFunction(Matrix values) : values_(std::move(values)) {
    if (!values_.allFinite())
      throw std::invalid_argument("QFunction: values must be finite");
  }

  static QFunction zeros(int n_states, int n_actions) {
    return QFunction(Matrix::Zero(n_states, n_actions));
  }
  static QFunction constant(int n_states, int n_actions, double value) {
    return QFunction(Matrix::Constant(n_states, n_actions, value));
  }

  int n_states() const { return static_cast<int>(values_.rows()); }
  int n_actions() const { return static_cast<int>(values_.cols()); }
  double operator()(int x, int a) const { return values_(x, a); }
  const Matrix& values() const { return values_; }

  /// Expected value under pi's action distribution at state x.
  double expectation(const Policy& pi, int x) const {
    return pi.probs().row(x).dot(values_.row(x));
  }

  /// Greedy action at x; ties broken by lowest action index.
  int greedy_action(int x) const {
    int best = 0;
    for (int a = 1; a < n_actions(); ++a)
      if (values_(x, a) > values_(x, best)) best = a;
    return best;
  }

  Vector flatten() const {
    Vector v(values_.rows() * values_.cols());
    for (int x = 0; x < values_.rows(); ++x)
      for (int a = 0; a < values_.cols(); ++a)
        v[flat_index(x, a, static_cast<int>(values_.cols()))] = values_(x, a);
    return v;
  }

  static QFunction unflatten(const Vector& v, int n_states, int n_actions) {
    Matrix m(n_states, n_actions);
    for (int x = 0; x < n_states; ++x)
      for (int a = 0; a < n_actions; ++a)
        m(x, a) = v[flat_index(x, a, n_actions)];
    return QFunction(std::move(m));
  }

 private:
  Matrix values_;
};

inline double sup_distance(const QFunction& a, const QFunction& b) {
  return sup_norm(a.values() - b.values());
}

/// Square operator over state-action space, tagged with what it represents
/// so the stochasticity invariant matching the tag can be checked.
struct LinearOperatorMatrix {
  enum class Kind { P_pi, P_c_mu, P_pi_and_mu, Derived };

  Matrix entries;
  Kind kind;

  int dim() const { return static_cast<int>(entries.rows()); }

  /// Row-stochastic for P_pi; sub-stochastic for the trace-weighted kinds.
  /// Derived matrices carry no stochasticity contract.
  void validate() const {
    if (entries.rows() != entries.cols())
      throw std::invalid_argument("LinearOperatorMatrix: matrix must be square");
    if (kind == Kind::Derived) return;
    constexpr double kTol = 1e-10;
    if ((entries.array() < -kTol).any())
      throw std::invalid_argument("LinearOperatorMatrix: negative entry");
    for (int i = 0; i < entries.rows(); ++i) {
      double row_sum = entries.row(i).sum();
      if (kind == Kind::P_pi) {
        if (std::abs(row_sum - 1.0) > kTol)
          throw std::invalid_argument("LinearOperatorMatrix: row " +
                                      std::to_string(i) + " is not stochastic");
      } else if (row_sum > 1.0 + kTol) {
        throw std::invalid_argument("LinearOperatorMatrix: row " +
                                    std::to_string(i) + " exceeds sub-stochastic bound");
      }
    }
  }
};

}  // namespace retrace
