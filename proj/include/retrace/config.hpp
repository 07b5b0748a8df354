#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "retrace/errors.hpp"
#include "retrace/traces.hpp"

namespace retrace {

/// Flat `key = value` config with `[section]` headers and '#' comments.
/// Keys are addressed as "section.key".
class ConfigFile {
 public:
  struct Entry {
    std::string value;
    int line;
    mutable bool consumed = false;
  };

  static ConfigFile parse(const std::string& text) {
    ConfigFile cfg;
    cfg.text_ = text;
    std::istringstream in(text);
    std::string raw, section;
    int line_no = 0;
    while (std::getline(in, raw)) {
      ++line_no;
      std::string line = strip(raw.substr(0, raw.find('#')));
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']')
          throw ParseError("unterminated section header", line_no);
        section = strip(line.substr(1, line.size() - 2));
        if (section.empty()) throw ParseError("empty section name", line_no);
        continue;
      }
      auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ParseError("expected 'key = value'", line_no);
      std::string key = strip(line.substr(0, eq));
      std::string value = strip(line.substr(eq + 1));
      if (key.empty()) throw ParseError("empty key", line_no);
      if (section.empty())
        throw ParseError("key '" + key + "' outside any [section]", line_no);
      std::string full = section + "." + key;
      if (cfg.entries_.count(full))
        throw ParseError("duplicate key '" + full + "'", line_no);
      cfg.entries_[full] = Entry{value, line_no};
    }
    return cfg;
  }

  bool has(const std::string& key) const { return entries_.count(key) > 0; }

  std::string get_string(const std::string& key) const {
    const Entry& e = require(key);
    return e.value;
  }
  std::string get_string(const std::string& key, const std::string& fallback) const {
    return has(key) ? get_string(key) : fallback;
  }

  double get_double(const std::string& key) const {
    const Entry& e = require(key);
    try {
      std::size_t pos = 0;
      double v = std::stod(e.value, &pos);
      if (pos != e.value.size()) throw std::invalid_argument("trailing characters");
      return v;
    } catch (const std::exception&) {
      throw ParseError("key '" + key + "': expected a number, got '" + e.value + "'",
                       e.line);
    }
  }
  double get_double(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
  }

  long get_long(const std::string& key) const {
    const Entry& e = require(key);
    try {
      std::size_t pos = 0;
      long v = std::stol(e.value, &pos);
      if (pos != e.value.size()) throw std::invalid_argument("trailing characters");
      return v;
    } catch (const std::exception&) {
      throw ParseError("key '" + key + "': expected an integer, got '" + e.value + "'",
                       e.line);
    }
  }
  long get_long(const std::string& key, long fallback) const {
    return has(key) ? get_long(key) : fallback;
  }

  std::vector<std::string> get_list(const std::string& key) const {
    const Entry& e = require(key);
    std::vector<std::string> items;
    std::istringstream in(e.value);
    std::string item;
    while (std::getline(in, item, ',')) {
      item = strip(item);
      if (!item.empty()) items.push_back(item);
    }
    if (items.empty())
      throw ParseError("key '" + key + "': expected a comma-separated list", e.line);
    return items;
  }

  int line_of(const std::string& key) const { return require(key).line; }

  /// Keys never read during validation are reported as unknown, with their
  /// line numbers, so typos fail loudly.
  void check_all_consumed() const {
    for (const auto& [key, entry] : entries_) {
      if (!entry.consumed)
        throw ParseError("unknown key '" + key + "'", entry.line);
    }
  }

  const std::string& text() const { return text_; }

 private:
  static std::string strip(std::string s) {
    auto issp = [](unsigned char c) { return c == ' ' || c == '\t' || c == '\r'; };
    while (!s.empty() && issp(s.front())) s.erase(s.begin());
    while (!s.empty() && issp(s.back())) s.pop_back();
    return s;
  }

  const Entry& require(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw ParseError("missing key '" + key + "'", 0);
    it->second.consumed = true;
    return it->second;
  }

  std::map<std::string, Entry> entries_;
  std::string text_;
};

enum class ExperimentMode { Evaluate, Control, Verify, Variance, Scores };

/// Fixed-policy constructions resolvable from an MDP (via its exact Q*).
struct FixedPolicySpec {
  enum class Kind { Uniform, GreedyQStar, EpsilonGreedyQStar, SoftmaxQStar };
  Kind kind = Kind::Uniform;
  double epsilon = 0.1;  // EpsilonGreedyQStar
  double beta = 1.0;     // SoftmaxQStar
};

/// Policy-schedule choices for control mode.
struct ScheduleSpec {
  enum class Kind { EpsilonGreedy, Softmax, Mixture, FixedUniform };
  Kind kind = Kind::EpsilonGreedy;
  double epsilon0 = 1.0;
  bool epsilon_inverse_k = true;
  double beta0 = 1.0;
  bool beta_linear_k = false;
  double epsilon_mix = 0.3;  // Mixture
};

struct MdpSourceSpec {
  enum class Kind { Garnet, Chain, File };
  Kind kind = Kind::Garnet;
  double gamma = 0.9;
  int n_states = 5;
  int n_actions = 2;
  int branching = 2;
  double termination = 0.1;
  double reward_sparsity = 0.5;
  std::uint64_t mdp_seed = 0;
  int chain_n = 5;
  std::string path;
};

struct ExperimentConfig {
  ExperimentMode mode = ExperimentMode::Control;
  MdpSourceSpec mdp;
  std::vector<TraceFamily> families;
  std::vector<double> lambdas;
  std::vector<std::uint64_t> seeds;
  long episodes = 1000;
  long iterations = 20;
  long samples = 100000;
  int horizon = 15;
  long logging_interval = 100;
  int max_len = 1000;
  double alpha0 = 0.5;
  double exponent = 0.75;
  ScheduleSpec target_schedule;
  ScheduleSpec behavior_schedule;
  FixedPolicySpec target_fixed;
  FixedPolicySpec behavior_fixed;
  std::string output = "curves.csv";
  std::string scores_input;
  std::string scores_output = "f.csv";
  int jobs = 0;  // 0: pick at run time
  std::string raw_text;
};

namespace detail {

inline TraceFamily parse_family(const std::string& name, int line) {
  if (name == "retrace") return TraceFamily::Retrace;
  if (name == "tree_backup") return TraceFamily::TreeBackup;
  if (name == "qpi_lambda") return TraceFamily::QPiLambda;
  if (name == "importance_sampling") return TraceFamily::ImportanceSampling;
  if (name == "capped_nonmarkov") return TraceFamily::CappedNonMarkov;
  throw ParseError("unknown trace family '" + name + "'", line);
}

inline FixedPolicySpec parse_fixed_policy(const ConfigFile& cfg,
                                          const std::string& section) {
  FixedPolicySpec spec;
  std::string kind = cfg.get_string(section + ".kind", "uniform");
  int line = cfg.has(section + ".kind") ? cfg.line_of(section + ".kind") : 0;
  if (kind == "uniform") {
    spec.kind = FixedPolicySpec::Kind::Uniform;
  } else if (kind == "greedy_qstar") {
    spec.kind = FixedPolicySpec::Kind::GreedyQStar;
  } else if (kind == "epsilon_greedy_qstar") {
    spec.kind = FixedPolicySpec::Kind::EpsilonGreedyQStar;
    spec.epsilon = cfg.get_double(section + ".epsilon", 0.1);
    if (spec.epsilon < 0.0 || spec.epsilon > 1.0)
      throw ParseError("'" + section + ".epsilon' must lie in [0, 1]",
                       cfg.line_of(section + ".epsilon"));
  } else if (kind == "softmax_qstar") {
    spec.kind = FixedPolicySpec::Kind::SoftmaxQStar;
    spec.beta = cfg.get_double(section + ".beta", 1.0);
    if (spec.beta < 0.0)
      throw ParseError("'" + section + ".beta' must be >= 0",
                       cfg.line_of(section + ".beta"));
  } else {
    throw ParseError("unknown policy kind '" + kind + "' in [" + section + "]", line);
  }
  return spec;
}

inline ScheduleSpec parse_schedule(const ConfigFile& cfg,
                                   const std::string& section) {
  ScheduleSpec spec;
  std::string kind = cfg.get_string(section + ".kind", "epsilon_greedy");
  int line = cfg.has(section + ".kind") ? cfg.line_of(section + ".kind") : 0;
  if (kind == "epsilon_greedy") {
    spec.kind = ScheduleSpec::Kind::EpsilonGreedy;
    spec.epsilon0 = cfg.get_double(section + ".epsilon0", 1.0);
    if (spec.epsilon0 < 0.0 || spec.epsilon0 > 1.0)
      throw ParseError("'" + section + ".epsilon0' must lie in [0, 1]",
                       cfg.line_of(section + ".epsilon0"));
    std::string decay = cfg.get_string(section + ".epsilon_decay", "inverse_k");
    if (decay == "inverse_k") spec.epsilon_inverse_k = true;
    else if (decay == "constant") spec.epsilon_inverse_k = false;
    else
      throw ParseError("unknown epsilon_decay '" + decay + "'",
                       cfg.line_of(section + ".epsilon_decay"));
  } else if (kind == "softmax") {
    spec.kind = ScheduleSpec::Kind::Softmax;
    spec.beta0 = cfg.get_double(section + ".beta0", 1.0);
    if (spec.beta0 < 0.0)
      throw ParseError("'" + section + ".beta0' must be >= 0",
                       cfg.line_of(section + ".beta0"));
    std::string growth = cfg.get_string(section + ".beta_growth", "linear_k");
    if (growth == "linear_k") spec.beta_linear_k = true;
    else if (growth == "constant") spec.beta_linear_k = false;
    else
      throw ParseError("unknown beta_growth '" + growth + "'",
                       cfg.line_of(section + ".beta_growth"));
  } else if (kind == "mixture") {
    spec.kind = ScheduleSpec::Kind::Mixture;
    spec.epsilon_mix = cfg.get_double(section + ".epsilon_mix", 0.3);
    if (spec.epsilon_mix < 0.0 || spec.epsilon_mix >= 1.0)
      throw ParseError("'" + section + ".epsilon_mix' must lie in [0, 1)",
                       cfg.line_of(section + ".epsilon_mix"));
  } else if (kind == "uniform") {
    spec.kind = ScheduleSpec::Kind::FixedUniform;
  } else {
    throw ParseError("unknown schedule kind '" + kind + "' in [" + section + "]",
                     line);
  }
  return spec;
}

inline MdpSourceSpec parse_mdp_source(const ConfigFile& cfg) {
  MdpSourceSpec spec;
  std::string source = cfg.get_string("mdp.source", "garnet");
  int line = cfg.has("mdp.source") ? cfg.line_of("mdp.source") : 0;
  if (source == "garnet") spec.kind = MdpSourceSpec::Kind::Garnet;
  else if (source == "chain") spec.kind = MdpSourceSpec::Kind::Chain;
  else if (source == "file") spec.kind = MdpSourceSpec::Kind::File;
  else throw ParseError("unknown mdp source '" + source + "'", line);

  if (spec.kind == MdpSourceSpec::Kind::File) {
    spec.path = cfg.get_string("mdp.path");
    return spec;
  }
  spec.gamma = cfg.get_double("mdp.gamma", 0.9);
  if (spec.gamma < 0.0 || spec.gamma >= 1.0)
    throw ParseError("'mdp.gamma' must lie in [0, 1)", cfg.line_of("mdp.gamma"));
  if (spec.kind == MdpSourceSpec::Kind::Chain) {
    spec.chain_n = static_cast<int>(cfg.get_long("mdp.chain_n", 5));
    if (spec.chain_n < 2)
      throw ParseError("'mdp.chain_n' must be >= 2", cfg.line_of("mdp.chain_n"));
    return spec;
  }
  spec.n_states = static_cast<int>(cfg.get_long("mdp.n_states", 5));
  spec.n_actions = static_cast<int>(cfg.get_long("mdp.n_actions", 2));
  spec.branching = static_cast<int>(cfg.get_long("mdp.branching", 2));
  spec.termination = cfg.get_double("mdp.termination", 0.1);
  spec.reward_sparsity = cfg.get_double("mdp.reward_sparsity", 0.5);
  spec.mdp_seed = static_cast<std::uint64_t>(cfg.get_long("mdp.mdp_seed", 0));
  if (spec.n_states < 1 || spec.n_actions < 1)
    throw ParseError("garnet sizes must be positive", 0);
  if (spec.branching < 1 || spec.branching > spec.n_states)
    throw ParseError("'mdp.branching' must lie in [1, n_states]", 0);
  if (spec.termination <= 0.0 || spec.termination > 1.0)
    throw ParseError("'mdp.termination' must lie in (0, 1]", 0);
  if (spec.reward_sparsity < 0.0 || spec.reward_sparsity > 1.0)
    throw ParseError("'mdp.reward_sparsity' must lie in [0, 1]", 0);
  return spec;
}

}  // namespace detail

/// Parses and validates an experiment configuration. Throws ParseError with
/// the offending key and line on any malformed or unknown entry.
inline ExperimentConfig parse_experiment_config(const std::string& text) {
  ConfigFile cfg = ConfigFile::parse(text);
  ExperimentConfig out;
  out.raw_text = text;

  std::string mode = cfg.get_string("experiment.mode");
  int mode_line = cfg.line_of("experiment.mode");
  if (mode == "evaluate") out.mode = ExperimentMode::Evaluate;
  else if (mode == "control") out.mode = ExperimentMode::Control;
  else if (mode == "verify") out.mode = ExperimentMode::Verify;
  else if (mode == "variance") out.mode = ExperimentMode::Variance;
  else if (mode == "scores") out.mode = ExperimentMode::Scores;
  else throw ParseError("unknown mode '" + mode + "'", mode_line);

  if (out.mode == ExperimentMode::Scores) {
    out.scores_input = cfg.get_string("scores.input");
    out.scores_output = cfg.get_string("scores.output", "f.csv");
    cfg.check_all_consumed();
    return out;
  }

  out.mdp = detail::parse_mdp_source(cfg);

  if (cfg.has("trace.families")) {
    for (const std::string& name : cfg.get_list("trace.families"))
      out.families.push_back(
          detail::parse_family(name, cfg.line_of("trace.families")));
  } else {
    out.families = {TraceFamily::Retrace};
  }
  if (cfg.has("trace.lambdas")) {
    int line = cfg.line_of("trace.lambdas");
    for (const std::string& s : cfg.get_list("trace.lambdas")) {
      try {
        out.lambdas.push_back(std::stod(s));
      } catch (const std::exception&) {
        throw ParseError("bad lambda '" + s + "'", line);
      }
      if (out.lambdas.back() < 0.0 || out.lambdas.back() > 1.0)
        throw ParseError("lambda '" + s + "' outside [0, 1]", line);
    }
  } else {
    out.lambdas = {0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0};
  }

  {
    int line = cfg.line_of("experiment.seeds");
    for (const std::string& s : cfg.get_list("experiment.seeds")) {
      try {
        out.seeds.push_back(static_cast<std::uint64_t>(std::stoull(s)));
      } catch (const std::exception&) {
        throw ParseError("bad seed '" + s + "'", line);
      }
    }
    if (out.seeds.empty()) throw ParseError("seed list must be non-empty", line);
  }

  out.episodes = cfg.get_long("experiment.episodes", 1000);
  out.iterations = cfg.get_long("experiment.iterations", 20);
  out.samples = cfg.get_long("experiment.samples", 100000);
  out.horizon = static_cast<int>(cfg.get_long("experiment.horizon", 15));
  out.logging_interval = cfg.get_long("experiment.logging_interval", 100);
  out.max_len = static_cast<int>(cfg.get_long("experiment.max_len", 1000));
  out.output = cfg.get_string("experiment.output", "curves.csv");
  out.jobs = static_cast<int>(cfg.get_long("experiment.jobs", 0));
  if (out.episodes < 0)
    throw ParseError("'experiment.episodes' must be >= 0",
                     cfg.line_of("experiment.episodes"));
  if (out.iterations < 0)
    throw ParseError("'experiment.iterations' must be >= 0",
                     cfg.line_of("experiment.iterations"));
  if (out.samples < 2)
    throw ParseError("'experiment.samples' must be >= 2",
                     cfg.line_of("experiment.samples"));
  if (out.horizon < 1)
    throw ParseError("'experiment.horizon' must be >= 1",
                     cfg.line_of("experiment.horizon"));
  if (out.logging_interval < 1)
    throw ParseError("'experiment.logging_interval' must be >= 1",
                     cfg.line_of("experiment.logging_interval"));
  if (out.max_len < 1)
    throw ParseError("'experiment.max_len' must be >= 1",
                     cfg.line_of("experiment.max_len"));

  out.alpha0 = cfg.get_double("steps.alpha0", 0.5);
  out.exponent = cfg.get_double("steps.exponent", 0.75);
  if (out.alpha0 <= 0.0)
    throw ParseError("'steps.alpha0' must be positive", cfg.line_of("steps.alpha0"));
  if (out.exponent <= 0.5 || out.exponent > 1.0)
    throw ParseError("'steps.exponent' must lie in (0.5, 1]",
                     cfg.line_of("steps.exponent"));

  if (out.mode == ExperimentMode::Control) {
    out.target_schedule = detail::parse_schedule(cfg, "target");
    out.behavior_schedule = detail::parse_schedule(cfg, "behavior");
  } else {
    out.target_fixed = detail::parse_fixed_policy(cfg, "target");
    out.behavior_fixed = detail::parse_fixed_policy(cfg, "behavior");
  }

  cfg.check_all_consumed();
  return out;
}

}  // namespace retrace
