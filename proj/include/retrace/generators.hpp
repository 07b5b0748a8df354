#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "retrace/mdp.hpp"
#include "retrace/rng.hpp"

namespace retrace {

/// Parameters for the random Garnet benchmark family. The generated MDP has
/// n_states regular states plus one dedicated absorbing state appended at
/// index n_states, entered from every pair with probability `termination`
/// (which guarantees finite trajectory lengths). `reward_sparsity` is the
/// probability that a pair's reward is zero; the rest draw uniform [-1, 1].
struct GarnetParams {
  int n_states = 5;
  int n_actions = 2;
  int branching = 2;
  double termination = 0.1;
  double reward_sparsity = 0.5;
  double gamma = 0.9;
  std::uint64_t seed = 0;
};

inline Mdp generate_garnet(const GarnetParams& params) {
  if (params.n_states < 1 || params.n_actions < 1)
    throw std::invalid_argument("generate_garnet: counts must be positive");
  if (params.branching < 1 || params.branching > params.n_states)
    throw std::invalid_argument("generate_garnet: need 1 <= branching <= n_states");
  if (params.termination <= 0.0 || params.termination > 1.0)
    throw std::invalid_argument("generate_garnet: termination must lie in (0, 1]");
  if (params.reward_sparsity < 0.0 || params.reward_sparsity > 1.0)
    throw std::invalid_argument("generate_garnet: reward_sparsity must lie in [0, 1]");

  const int ns = params.n_states + 1;  // regular states + absorbing sink
  const int sink = params.n_states;
  SplitMix64 rng(params.seed);

  std::vector<Matrix> transitions(static_cast<std::size_t>(params.n_actions),
                                  Matrix::Zero(ns, ns));
  Matrix rewards = Matrix::Zero(ns, params.n_actions);

  std::vector<int> pool(static_cast<std::size_t>(params.n_states));
  for (int x = 0; x < params.n_states; ++x) {
    for (int a = 0; a < params.n_actions; ++a) {
      // Partial Fisher-Yates to pick `branching` distinct successors.
      std::iota(pool.begin(), pool.end(), 0);
      for (int i = 0; i < params.branching; ++i) {
        int j = i + rng.next_index(params.n_states - i);
        std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
      }
      // Dirichlet(1,...,1) weights over the chosen successors.
      std::vector<double> weights(static_cast<std::size_t>(params.branching));
      double total = 0.0;
      for (double& w : weights) {
        double u;
        do { u = rng.next_double(); } while (u <= 0.0);
        w = -std::log(u);
        total += w;
      }
      Matrix& p = transitions[static_cast<std::size_t>(a)];
      for (int i = 0; i < params.branching; ++i)
        p(x, pool[static_cast<std::size_t>(i)]) +=
            (1.0 - params.termination) * weights[static_cast<std::size_t>(i)] / total;
      p(x, sink) += params.termination;

      if (rng.next_double() >= params.reward_sparsity)
        rewards(x, a) = rng.next_double(-1.0, 1.0);
    }
  }
  for (int a = 0; a < params.n_actions; ++a)
    transitions[static_cast<std::size_t>(a)](sink, sink) = 1.0;

  return Mdp(std::move(transitions), std::move(rewards), params.gamma, {sink});
}

/// Deterministic n-state chain (state n-1 terminal-absorbing). Action 0
/// ("forward") moves right with reward 0 except reward 1 on the transition
/// entering the terminal state; action 1 ("stay") self-loops with reward 0.
/// A classic testbed for how quickly full returns propagate reward back
/// from the goal.
inline Mdp generate_chain(int n, double gamma) {
  if (n < 2) throw std::invalid_argument("generate_chain: need n >= 2 states");
  const int terminal = n - 1;
  std::vector<Matrix> transitions(2, Matrix::Zero(n, n));
  Matrix rewards = Matrix::Zero(n, 2);
  for (int x = 0; x < terminal; ++x) {
    transitions[0](x, x + 1) = 1.0;  // forward
    transitions[1](x, x) = 1.0;      // stay
    if (x == terminal - 1) rewards(x, 0) = 1.0;
  }
  transitions[0](terminal, terminal) = 1.0;
  transitions[1](terminal, terminal) = 1.0;
  return Mdp(std::move(transitions), std::move(rewards), gamma, {terminal});
}

}  // namespace retrace
