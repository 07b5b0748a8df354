// Acceptance suite: one PASS/FAIL line per criterion, each checked at the
// tolerance stated with it. Exit code is the number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "retrace/analysis.hpp"
#include "retrace/experiment.hpp"
#include "retrace/generators.hpp"
#include "retrace/online.hpp"
#include "retrace/operators.hpp"
#include "support/oracles.hpp"
#include "support/test_mdps.hpp"

using namespace retrace;
using testsupport::random_mdp;
using testsupport::random_policy;
using testsupport::random_q;

namespace {

int g_failures = 0;

void report(int id, const std::string& name, bool passed,
            const std::string& detail, double seconds) {
  std::printf("%s criterion %2d: %s (%s) [%.1fs]\n", passed ? "PASS" : "FAIL", id,
              name.c_str(), detail.c_str(), seconds);
  std::fflush(stdout);
  if (!passed) ++g_failures;
}

void run_criterion(int id, const std::string& name,
                   const std::function<std::pair<bool, std::string>()>& body) {
  auto start = std::chrono::steady_clock::now();
  bool passed = false;
  std::string detail;
  try {
    auto [ok, text] = body();
    passed = ok;
    detail = text;
  } catch (const std::exception& e) {
    passed = false;
    detail = std::string("exception: ") + e.what();
  }
  double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  report(id, name, passed, detail, seconds);
}

struct BatteryEntry {
  Mdp mdp;
  Policy pi;
  Policy mu;
};

/// 20 random MDPs with n_states <= 10, n_actions <= 4 and gamma cycling
/// through {0.5, 0.9, 0.99}, each with a random target/behaviour pair.
std::vector<BatteryEntry> make_battery() {
  const double gammas[3] = {0.5, 0.9, 0.99};
  std::vector<BatteryEntry> battery;
  for (std::uint64_t i = 0; i < 20; ++i) {
    int ns = 2 + static_cast<int>((3 * i) % 9);   // 2..10
    int na = 2 + static_cast<int>(i % 3);         // 2..4
    double gamma = gammas[i % 3];
    battery.push_back({random_mdp(1000 + i, ns, na, gamma),
                       random_policy(2000 + i, ns, na, 0.01),
                       random_policy(3000 + i, ns, na, 0.01)});
  }
  return battery;
}

/// Two states; action 0 leads to state 0, action 1 to state 1. Behaviour
/// stays put, the target always switches: the constant-trace expected
/// iteration has spectral radius 2 gamma / (1 - gamma).
struct DivergenceInstance {
  Mdp mdp;
  Policy stay;
  Policy swap;
};

DivergenceInstance make_divergence_instance() {
  std::vector<Matrix> t(2, Matrix::Zero(2, 2));
  t[0].col(0).setOnes();
  t[1].col(1).setOnes();
  Matrix r = Matrix::Zero(2, 2);
  r(0, 1) = 1.0;
  r(1, 0) = 1.0;
  return {Mdp(std::move(t), std::move(r), 0.99),
          Policy((Matrix(2, 2) << 1.0, 0.0, 0.0, 1.0).finished()),
          Policy((Matrix(2, 2) << 0.0, 1.0, 1.0, 0.0).finished())};
}

const char* kAcceptanceConfig = R"([experiment]
mode = control
episodes = 500
seeds = 0, 1, 2
logging_interval = 100

[mdp]
source = chain
chain_n = 5
gamma = 0.9

[trace]
families = retrace, tree_backup, qpi_lambda
lambdas = 0, 0.5, 1.0

[target]
kind = epsilon_greedy
epsilon0 = 1.0
epsilon_decay = inverse_k

[behavior]
kind = mixture
epsilon_mix = 0.3

[steps]
alpha0 = 0.5
exponent = 0.75
)";

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::string manifest_without_timestamp(const std::string& path) {
  std::istringstream in(slurp(path));
  std::string line, out;
  while (std::getline(in, line))
    if (line.rfind("timestamp=", 0) != 0) out += line + "\n";
  return out;
}

}  // namespace

int main() {
  std::vector<BatteryEntry> battery = make_battery();
  const std::vector<TraceFamily> safe_families{TraceFamily::Retrace,
                                               TraceFamily::TreeBackup};
  const std::vector<double> lambda_grid{0.0, 0.5, 1.0};

  run_criterion(1, "gamma-contraction of Retrace and TreeBackup", [&] {
    double worst_slack = -1e9;
    std::uint64_t seed = 0;
    for (const BatteryEntry& entry : battery)
      for (TraceFamily family : safe_families)
        for (double lambda : lambda_grid) {
          double ratio = verify_contraction(entry.mdp, {family, lambda}, entry.pi,
                                            entry.mu, 100, ++seed);
          worst_slack = std::max(worst_slack, ratio - entry.mdp.gamma());
          if (ratio > entry.mdp.gamma() + 1e-9)
            return std::pair{false, "ratio exceeded gamma by " +
                                        std::to_string(ratio - entry.mdp.gamma())};
        }
    return std::pair{true, "120 configs x 100 Q, worst ratio-gamma = " +
                               std::to_string(worst_slack)};
  });

  run_criterion(2, "importance sampling returns Q^pi for any Q", [&] {
    double worst = 0.0;
    for (std::uint64_t i = 0; i < 50; ++i) {
      int ns = 2 + static_cast<int>(i % 6);
      int na = 2 + static_cast<int>(i % 3);
      Mdp mdp = random_mdp(4000 + i, ns, na, i % 2 ? 0.9 : 0.5);
      Policy pi = random_policy(5000 + i, ns, na, 0.0);
      Policy mu = random_policy(6000 + i, ns, na, 0.05);
      QFunction q = random_q(7000 + i, ns, na);
      QFunction out =
          apply_expected_operator(mdp, {TraceFamily::ImportanceSampling}, pi, mu, q);
      worst = std::max(worst, sup_distance(out, exact_q_pi(mdp, pi)));
      if (worst > 1e-8)
        return std::pair{false, "distance " + std::to_string(worst)};
    }
    return std::pair{true, "50 draws, worst distance " + std::to_string(worst)};
  });

  run_criterion(3, "on-policy Retrace(1) is exact in one application", [&] {
    double worst = 0.0;
    std::uint64_t i = 0;
    for (const BatteryEntry& entry : battery) {
      QFunction q = random_q(8000 + ++i, entry.mdp.n_states(), entry.mdp.n_actions());
      QFunction out = apply_expected_operator(entry.mdp, {TraceFamily::Retrace, 1.0},
                                              entry.pi, entry.pi, q);
      worst = std::max(worst, sup_distance(out, exact_q_pi(entry.mdp, entry.pi)));
    }
    return std::pair{worst <= 1e-9, "worst distance " + std::to_string(worst)};
  });

  run_criterion(4, "per-pair contraction coefficient bounds", [&] {
    std::uint64_t i = 0;
    for (const BatteryEntry& entry : battery) {
      const double gamma = entry.mdp.gamma();
      // eta = gamma exactly when the trace is cut immediately
      ContractionReport cut = contraction_diagnostics(
          entry.mdp, {TraceFamily::TreeBackup, 0.0}, entry.pi, entry.mu);
      if (sup_norm(cut.eta - Matrix::Constant(entry.mdp.n_states(),
                                              entry.mdp.n_actions(), gamma)) > 1e-12)
        return std::pair{false, std::string("eta(cut traces) differs from gamma")};
      for (TraceFamily family : safe_families)
        for (double lambda : lambda_grid) {
          TraceSpec spec{family, lambda};
          ContractionReport report =
              contraction_diagnostics(entry.mdp, spec, entry.pi, entry.mu);
          QFunction q_pi = exact_q_pi(entry.mdp, entry.pi);
          QFunction q = random_q(9000 + ++i, entry.mdp.n_states(),
                                 entry.mdp.n_actions());
          QFunction rq =
              apply_expected_operator(entry.mdp, spec, entry.pi, entry.mu, q);
          double dist = sup_distance(q, q_pi);
          for (int x = 0; x < entry.mdp.n_states(); ++x)
            for (int a = 0; a < entry.mdp.n_actions(); ++a)
              if (std::abs(rq(x, a) - q_pi(x, a)) >
                  report.eta(x, a) * dist + 1e-9)
                return std::pair{false, "elementwise eta bound violated at (" +
                                            std::to_string(x) + "," +
                                            std::to_string(a) + ")"};
        }
    }
    return std::pair{true, std::string("elementwise bound held on 120 configs")};
  });

  run_criterion(5, "every-visit increments are unbiased for R Q - Q", [&] {
    struct Instance {
      Mdp mdp;
      std::uint64_t pi_seed, mu_seed, q_seed;
    };
    std::vector<Instance> instances;
    {
      std::vector<Matrix> t(2, (Matrix(2, 2) << 0.3, 0.7, 0.0, 1.0).finished());
      Matrix r = Matrix::Zero(2, 2);
      r(0, 0) = 1.0;
      r(0, 1) = -0.5;
      instances.push_back({Mdp(t, r, 0.5, {1}), 31, 32, 33});
    }
    {
      std::vector<Matrix> t(2, Matrix::Zero(3, 3));
      t[0] << 0.0, 0.4, 0.6, 0.4, 0.0, 0.6, 0.0, 0.0, 1.0;
      t[1] << 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0;
      Matrix r = Matrix::Zero(3, 2);
      r(0, 0) = 1.0;
      r(1, 0) = -0.3;
      r(0, 1) = 0.2;
      instances.push_back({Mdp(t, r, 0.5, {2}), 41, 42, 43});
    }
    instances.push_back({generate_chain(3, 0.5), 51, 52, 53});

    const int horizon = 12;
    double worst_ratio = 0.0;
    for (const Instance& inst : instances) {
      const Mdp& mdp = inst.mdp;
      Policy pi = random_policy(inst.pi_seed, mdp.n_states(), mdp.n_actions(), 0.05);
      Policy mu = random_policy(inst.mu_seed, mdp.n_states(), mdp.n_actions(), 0.05);
      Matrix q_values =
          random_q(inst.q_seed, mdp.n_states(), mdp.n_actions()).values();
      for (int x : mdp.absorbing()) q_values.row(x).setZero();
      QFunction q(q_values);
      TraceSpec spec{TraceFamily::Retrace, 0.9};
      QFunction rq = apply_expected_operator(mdp, spec, pi, mu, q);
      double tol = 2.0 * std::pow(mdp.gamma(), horizon) *
                   sup_distance(q, exact_q_pi(mdp, pi));
      for (int x0 = 0; x0 < mdp.n_states(); ++x0) {
        if (mdp.is_absorbing(x0)) continue;
        for (int a0 = 0; a0 < mdp.n_actions(); ++a0) {
          double increment = 0.0, visits = 0.0;
          testsupport::for_each_trajectory(
              mdp, mu, x0, a0, horizon,
              [&](const Trajectory& traj, double prob) {
                StepSizeSchedule unit(1.0, 0.75, mdp.n_states(), mdp.n_actions());
                QFunction next =
                    every_visit_update(q, traj, spec, pi, mdp.gamma(), unit);
                increment += prob * (next(x0, a0) - q(x0, a0));
                for (const TrajectoryStep& s : traj.steps)
                  if (s.state == x0 && s.action == a0) visits += prob;
              });
          double mismatch = std::abs(increment - visits * (rq(x0, a0) - q(x0, a0)));
          worst_ratio = std::max(worst_ratio, mismatch / tol);
          if (mismatch > tol)
            return std::pair{false,
                             "mismatch " + std::to_string(mismatch) + " > tol " +
                                 std::to_string(tol)};
        }
      }
    }
    return std::pair{true, "3 MDPs at H=12, worst mismatch/tol = " +
                               std::to_string(worst_ratio)};
  });

  run_criterion(6, "control matrix A is sub-stochastic up to gamma", [&] {
    double worst_entry = 0.0, worst_rowsum_slack = -1e9;
    for (const BatteryEntry& entry : battery)
      for (TraceFamily family : safe_families)
        for (double lambda : lambda_grid) {
          LinearOperatorMatrix a =
              control_matrix_A(entry.mdp, {family, lambda}, entry.pi, entry.mu);
          worst_entry = std::min(worst_entry, a.entries.minCoeff());
          double rowsum = a.entries.rowwise().sum().maxCoeff();
          worst_rowsum_slack =
              std::max(worst_rowsum_slack, rowsum - entry.mdp.gamma());
          if (a.entries.minCoeff() < -1e-12 ||
              rowsum > entry.mdp.gamma() + 1e-10)
            return std::pair{false, std::string("A bounds violated")};
        }
    return std::pair{true, "min entry " + std::to_string(worst_entry) +
                               ", worst rowsum-gamma " +
                               std::to_string(worst_rowsum_slack)};
  });

  run_criterion(7, "increasingly greedy policy sequences", [&] {
    SplitMix64 rng(7700);
    for (int i = 0; i < 200; ++i) {
      Mdp mdp = random_mdp(rng.next_u64(), 4, 3, 0.9);
      QFunction q_k = random_q(rng.next_u64(), 4, 3);
      QFunction q_next = random_q(rng.next_u64(), 4, 3);
      double eps_k = rng.next_double();
      double eps_next = eps_k * rng.next_double();
      Vector lhs = transition_operator(mdp, epsilon_greedy(q_next, eps_next)).entries *
                   q_next.flatten();
      Vector rhs = transition_operator(mdp, epsilon_greedy(q_k, eps_k)).entries *
                   q_next.flatten();
      if (((lhs - rhs).array() < -1e-12).any())
        return std::pair{false, std::string("epsilon-greedy inequality violated")};
    }
    for (int i = 0; i < 200; ++i) {
      Mdp mdp = random_mdp(rng.next_u64(), 4, 3, 0.9);
      QFunction q = random_q(rng.next_u64(), 4, 3);
      double beta_k = 5.0 * rng.next_double();
      double beta_next = beta_k + 5.0 * rng.next_double();
      Vector lhs = transition_operator(mdp, softmax_policy(q, beta_next)).entries *
                   q.flatten();
      Vector rhs = transition_operator(mdp, softmax_policy(q, beta_k)).entries *
                   q.flatten();
      if (((lhs - rhs).array() < -1e-12).any())
        return std::pair{false, std::string("softmax inequality violated")};
    }
    return std::pair{true, std::string("200 draws per schedule family")};
  });

  auto control_battery = [&](double eps0) {
    // Retrace(0.9), eq-8 mixture behaviour with fixed eps_mix = 0.3 (never
    // annealed), eps_k = eps0/k greedy targets, 20000 episodes, seeds 0..9.
    std::vector<std::pair<std::string, Mdp>> problems;
    problems.emplace_back("chain5", generate_chain(5, 0.9));
    problems.emplace_back("garnet5",
                          generate_garnet({.n_states = 5, .n_actions = 2,
                                           .branching = 2, .termination = 0.1,
                                           .reward_sparsity = 0.5, .gamma = 0.9,
                                           .seed = 3}));
    std::string detail;
    bool ok = true;
    for (auto& [name, mdp] : problems) {
      QFunction q_star = exact_q_star(mdp, 1e-9);
      double scale = sup_norm(q_star.values());
      std::vector<double> finals;
      for (std::uint64_t seed = 0; seed < 10; ++seed) {
        LearningRecord rec = run_control(
            mdp, {TraceFamily::Retrace, 0.9},
            PolicySchedule::epsilon_greedy_schedule(
                eps0, PolicySchedule::EpsilonDecay::InverseK),
            PolicySchedule::mixture_schedule(
                Policy::uniform(mdp.n_states(), mdp.n_actions()), 0.3),
            StepSizeSchedule(0.5, 0.75, mdp.n_states(), mdp.n_actions()),
            QFunction::zeros(mdp.n_states(), mdp.n_actions()), 20000, seed,
            20000);
        finals.push_back(rec.points.back().err_qstar / scale);
      }
      std::sort(finals.begin(), finals.end());
      double median = 0.5 * (finals[4] + finals[5]);
      detail += name + " median " + std::to_string(median) + "  ";
      if (median >= 0.05) ok = false;
    }
    return std::pair{ok, detail + "(threshold 0.05, seeds 0-9)"};
  };

  run_criterion(8, "control converges without annealing the behaviour", [&] {
    return control_battery(1.0);
  });

  run_criterion(9, "Watkins' Q(lambda): greedy targets converge too", [&] {
    return control_battery(0.0);
  });

  run_criterion(10, "constant traces diverge where Retrace contracts", [&] {
    DivergenceInstance inst = make_divergence_instance();
    SpectralRadiusResult rho =
        spectral_radius_qpi(inst.mdp, 1.0, inst.swap, inst.stay);
    if (!rho.converged || rho.value <= 1.0)
      return std::pair{false, "spectral radius " + std::to_string(rho.value)};

    QFunction q_pi = exact_q_pi(inst.mdp, inst.swap);
    Matrix direction(2, 2);
    direction << 1.0, -1.0, 1.0, -1.0;  // dominant eigendirection
    QFunction q(q_pi.values() + 1e-6 * direction);
    double prev = sup_distance(q, q_pi);
    for (int k = 0; k < 100; ++k) {
      q = apply_expected_operator(inst.mdp, {TraceFamily::QPiLambda, 1.0},
                                  inst.swap, inst.stay, q);
      double err = sup_distance(q, q_pi);
      if (!(err > prev) || !std::isfinite(err))
        return std::pair{false, "error stopped growing at step " + std::to_string(k)};
      prev = err;
    }
    for (TraceFamily family : safe_families) {
      double ratio = verify_contraction(inst.mdp, {family, 1.0}, inst.swap,
                                        inst.stay, 100, 99);
      if (ratio > inst.mdp.gamma() + 1e-9)
        return std::pair{false, std::string("safe family failed to contract")};
    }
    return std::pair{true, "rho = " + std::to_string(rho.value) +
                               ", 100 growing steps, safe families <= gamma"};
  });

  run_criterion(11, "importance sampling has the larger trace-sum variance", [&] {
    Mdp mdp = testsupport::single_state({0.0, 0.0}, 0.9);
    Policy pi((Matrix(1, 2) << 0.9, 0.1).finished());
    Policy mu = Policy::uniform(1, 2);
    // closed-form per-step variances, enumerated over the two actions:
    // IS ratios 1.8 / 0.2 -> V = 0.64; Retrace caps at 1 -> V = 0.16.
    double v_is = per_step_trace_variance(mdp, {TraceFamily::ImportanceSampling},
                                          pi, mu, 0);
    double v_re = per_step_trace_variance(mdp, {TraceFamily::Retrace, 1.0}, pi, mu, 0);
    if (std::abs(v_is - 0.64) > 1e-12 || std::abs(v_re - 0.16) > 1e-12)
      return std::pair{false, "per-step variances " + std::to_string(v_is) + ", " +
                                  std::to_string(v_re)};
    TraceSumStats is = trace_product_variance(
        mdp, {TraceFamily::ImportanceSampling}, pi, mu, 100000, 15, 1);
    TraceSumStats re = trace_product_variance(mdp, {TraceFamily::Retrace, 1.0},
                                              pi, mu, 100000, 15, 1);
    double sep = (is.variance - re.variance) /
                 std::sqrt(is.se_variance * is.se_variance +
                           re.se_variance * re.se_variance);
    return std::pair{sep >= 3.0, "separation " + std::to_string(sep) +
                                     " combined standard errors"};
  });

  run_criterion(12, "commutation: mixture behaviour yes, adversarial no", [&] {
    Mdp mdp = generate_garnet({.n_states = 5, .n_actions = 3, .branching = 2,
                               .termination = 0.1, .reward_sparsity = 0.5,
                               .gamma = 0.9, .seed = 17});
    QFunction q = exact_q_star(mdp, 1e-9);
    Policy mu_k = mixture_behavior(
        q, Policy::uniform(mdp.n_states(), mdp.n_actions()), 0.3);
    double defect = commutation_defect(mdp, epsilon_greedy(q, 1e-6), mu_k);
    if (defect >= 1e-4)
      return std::pair{false, "mixture defect " + std::to_string(defect)};

    std::vector<Matrix> t(2, Matrix::Zero(2, 2));
    t[0](0, 1) = 1.0;
    t[0](1, 0) = 1.0;
    t[1](0, 0) = 1.0;
    t[1](1, 0) = 1.0;
    Mdp adv(t, Matrix::Zero(2, 2), 0.9);
    Policy pi((Matrix(2, 2) << 0.3, 0.7, 1.0, 0.0).finished());
    Policy mu((Matrix(2, 2) << 0.35, 0.65, 0.0, 1.0).finished());
    double adv_defect = commutation_defect(adv, pi, mu);
    return std::pair{adv_defect > 0.1,
                     "mixture defect " + std::to_string(defect) +
                         ", adversarial defect " + std::to_string(adv_defect)};
  });

  run_criterion(13, "score normalization matches hand computation", [&] {
    ScoreTable table{{"g1", "g2", "g3"},
                     {"A", "B"},
                     (Matrix(3, 2) << 10.0, 20.0, 4.0, 1.0, 2.0, 2.0).finished()};
    ScoreDistribution dist = inter_algorithm_scores(table);
    // hand-computed z: g1 = (0,1); g2 = (1,0); g3 degenerate = (1,1)
    Matrix expected_z(3, 2);
    expected_z << 0.0, 1.0, 1.0, 0.0, 1.0, 1.0;
    if (dist.z != expected_z || !dist.degenerate[2] || dist.degenerate[0])
      return std::pair{false, std::string("z table mismatch")};
    // f_A: z_A = {0,1,1}: 1 at x=0, then 2/3; f_B: z_B = {1,0,1}: same shape
    for (int i = 0; i < 101; ++i) {
      double expect = i == 0 ? 1.0 : 2.0 / 3.0;
      if (dist.f(0, i) != expect || dist.f(1, i) != expect)
        return std::pair{false, "f mismatch at grid point " + std::to_string(i)};
    }
    // monotonicity on random tables
    SplitMix64 rng(1300);
    for (int trial = 0; trial < 50; ++trial) {
      int n_games = 1 + rng.next_index(8);
      int n_algos = 2 + rng.next_index(4);
      ScoreTable random_table;
      random_table.raw = Matrix(n_games, n_algos);
      for (int g = 0; g < n_games; ++g) {
        random_table.games.push_back("g" + std::to_string(g));
        for (int a = 0; a < n_algos; ++a)
          random_table.raw(g, a) = rng.next_double(-10.0, 10.0);
      }
      for (int a = 0; a < n_algos; ++a)
        random_table.algorithms.push_back("a" + std::to_string(a));
      ScoreDistribution d = inter_algorithm_scores(random_table);
      for (int a = 0; a < n_algos; ++a)
        for (int i = 1; i < 101; ++i)
          if (d.f(a, i) > d.f(a, i - 1))
            return std::pair{false, std::string("f increased along the grid")};
    }
    return std::pair{true, std::string("exact z and f, monotone on 50 random tables")};
  });

  run_criterion(14, "identical seeds reproduce byte-identical outputs", [&] {
    namespace fs = std::filesystem;
    fs::path base = fs::temp_directory_path() / "retrace_acceptance_repro";
    fs::remove_all(base);
    ExperimentConfig config = parse_experiment_config(kAcceptanceConfig);
    ExperimentOutcome a = run_experiment(config, (base / "a").string());
    ExperimentOutcome b = run_experiment(config, (base / "b").string());
    bool same_curves = slurp(a.curves_path) == slurp(b.curves_path);
    bool same_manifest = manifest_without_timestamp(a.manifest_path) ==
                         manifest_without_timestamp(b.manifest_path);
    fs::remove_all(base);
    if (!same_curves) return std::pair{false, std::string("curves differ")};
    if (!same_manifest) return std::pair{false, std::string("manifests differ")};
    return std::pair{true, std::string("curves and manifests identical across runs")};
  });

  if (g_failures == 0)
    std::printf("acceptance: all 14 criteria passed\n");
  else
    std::printf("acceptance: %d criteria FAILED\n", g_failures);
  return g_failures;
}
