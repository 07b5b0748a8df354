#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "retrace/errors.hpp"
#include "retrace/mdp.hpp"

namespace retrace {

/// Line-oriented MDP text format:
///
///   mdp <n_states> <n_actions> <gamma>
///   r <x> <a> <value>
///   p <x> <a> <x'> <prob>
///   absorbing <x>
///
/// '#' starts a comment. Unspecified rewards default to 0. Every
/// non-absorbing (x, a) must have its transition row specified; rows of
/// declared absorbing states may be omitted and default to self-loops.
inline Mdp parse_mdp(std::istream& in) {
  int n_states = -1, n_actions = -1;
  double gamma = 0.0;
  std::vector<Matrix> transitions;
  Matrix rewards;
  std::set<int> absorbing;
  std::vector<std::vector<bool>> row_specified;

  auto require_header = [&](int line) {
    if (n_states < 0)
      throw ParseError("directive before the 'mdp' header", line);
  };
  auto check_state = [&](int x, int line) {
    if (x < 0 || x >= n_states)
      throw ParseError("state index " + std::to_string(x) + " out of range", line);
  };
  auto check_action = [&](int a, int line) {
    if (a < 0 || a >= n_actions)
      throw ParseError("action index " + std::to_string(a) + " out of range", line);
  };

  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = raw.substr(0, raw.find('#'));
    std::istringstream tokens(line);
    std::string directive;
    if (!(tokens >> directive)) continue;

    if (directive == "mdp") {
      if (n_states >= 0) throw ParseError("duplicate 'mdp' header", line_no);
      if (!(tokens >> n_states >> n_actions >> gamma))
        throw ParseError("expected 'mdp <n_states> <n_actions> <gamma>'", line_no);
      if (n_states < 1 || n_actions < 1)
        throw ParseError("state and action counts must be positive", line_no);
      if (gamma < 0.0 || gamma >= 1.0)
        throw ParseError("gamma must lie in [0, 1)", line_no);
      transitions.assign(static_cast<std::size_t>(n_actions),
                         Matrix::Zero(n_states, n_states));
      rewards = Matrix::Zero(n_states, n_actions);
      row_specified.assign(static_cast<std::size_t>(n_states),
                           std::vector<bool>(static_cast<std::size_t>(n_actions), false));
    } else if (directive == "r") {
      require_header(line_no);
      int x, a;
      double value;
      if (!(tokens >> x >> a >> value))
        throw ParseError("expected 'r <x> <a> <value>'", line_no);
      check_state(x, line_no);
      check_action(a, line_no);
      rewards(x, a) = value;
    } else if (directive == "p") {
      require_header(line_no);
      int x, a, xn;
      double prob;
      if (!(tokens >> x >> a >> xn >> prob))
        throw ParseError("expected 'p <x> <a> <x'> <prob>'", line_no);
      check_state(x, line_no);
      check_action(a, line_no);
      check_state(xn, line_no);
      transitions[static_cast<std::size_t>(a)](x, xn) += prob;
      row_specified[static_cast<std::size_t>(x)][static_cast<std::size_t>(a)] = true;
    } else if (directive == "absorbing") {
      require_header(line_no);
      int x;
      if (!(tokens >> x)) throw ParseError("expected 'absorbing <x>'", line_no);
      check_state(x, line_no);
      absorbing.insert(x);
    } else {
      throw ParseError("unknown directive '" + directive + "'", line_no);
    }
    std::string trailing;
    if (tokens >> trailing)
      throw ParseError("unexpected token '" + trailing + "'", line_no);
  }
  if (n_states < 0) throw ParseError("missing 'mdp' header", 0);

  for (int x = 0; x < n_states; ++x)
    for (int a = 0; a < n_actions; ++a) {
      if (row_specified[static_cast<std::size_t>(x)][static_cast<std::size_t>(a)])
        continue;
      if (absorbing.count(x)) {
        transitions[static_cast<std::size_t>(a)](x, x) = 1.0;  // default self-loop
      } else {
        throw ParseError("no transitions specified for state " + std::to_string(x) +
                             ", action " + std::to_string(a),
                         0);
      }
    }

  try {
    return Mdp(std::move(transitions), std::move(rewards), gamma,
               std::move(absorbing));
  } catch (const std::invalid_argument& e) {
    throw ParseError(e.what(), 0);
  }
}

inline Mdp parse_mdp(const std::string& text) {
  std::istringstream in(text);
  return parse_mdp(in);
}

inline Mdp load_mdp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open MDP file '" + path + "'", 0);
  return parse_mdp(in);
}

namespace detail {
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
}  // namespace detail

/// Deterministic round-trippable serialization: header, nonzero rewards,
/// nonzero transition entries, absorbing declarations, all in index order.
inline std::string serialize_mdp(const Mdp& mdp) {
  std::string out = "mdp " + std::to_string(mdp.n_states()) + " " +
                    std::to_string(mdp.n_actions()) + " " +
                    detail::format_double(mdp.gamma()) + "\n";
  for (int x = 0; x < mdp.n_states(); ++x)
    for (int a = 0; a < mdp.n_actions(); ++a)
      if (mdp.reward(x, a) != 0.0)
        out += "r " + std::to_string(x) + " " + std::to_string(a) + " " +
               detail::format_double(mdp.reward(x, a)) + "\n";
  for (int x = 0; x < mdp.n_states(); ++x)
    for (int a = 0; a < mdp.n_actions(); ++a)
      for (int xn = 0; xn < mdp.n_states(); ++xn)
        if (mdp.transition(x, a, xn) != 0.0)
          out += "p " + std::to_string(x) + " " + std::to_string(a) + " " +
                 std::to_string(xn) + " " +
                 detail::format_double(mdp.transition(x, a, xn)) + "\n";
  for (int x : mdp.absorbing()) out += "absorbing " + std::to_string(x) + "\n";
  return out;
}

inline void save_mdp(const Mdp& mdp, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open '" + path + "' for writing", 0);
  out << serialize_mdp(mdp);
}

}  // namespace retrace
