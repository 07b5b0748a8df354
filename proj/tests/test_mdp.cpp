#include <catch2/catch_amalgamated.hpp>

#include "retrace/mdp.hpp"
#include "retrace/mdp_io.hpp"
#include "support/test_mdps.hpp"

using namespace retrace;

TEST_CASE("Mdp validates transition rows") {
  std::vector<Matrix> bad{(Matrix(2, 2) << 0.5, 0.4, 0.0, 1.0).finished()};
  REQUIRE_THROWS_AS(Mdp(bad, Matrix::Zero(2, 1), 0.9), std::invalid_argument);

  std::vector<Matrix> negative{(Matrix(2, 2) << 1.1, -0.1, 0.0, 1.0).finished()};
  REQUIRE_THROWS_AS(Mdp(negative, Matrix::Zero(2, 1), 0.9), std::invalid_argument);
}

TEST_CASE("Mdp rejects gamma outside [0, 1)") {
  std::vector<Matrix> t{Matrix::Ones(1, 1)};
  REQUIRE_THROWS_AS(Mdp(t, Matrix::Zero(1, 1), 1.0), std::invalid_argument);
  REQUIRE_THROWS_AS(Mdp(t, Matrix::Zero(1, 1), -0.1), std::invalid_argument);
  REQUIRE_NOTHROW(Mdp(t, Matrix::Zero(1, 1), 0.0));
}

TEST_CASE("Mdp enforces absorbing structure") {
  std::vector<Matrix> t(1, (Matrix(2, 2) << 0.0, 1.0, 0.0, 1.0).finished());

  SECTION("valid absorbing state") {
    Mdp mdp(t, Matrix::Zero(2, 1), 0.9, {1});
    REQUIRE(mdp.is_absorbing(1));
    REQUIRE_FALSE(mdp.is_absorbing(0));
  }
  SECTION("absorbing state must self-loop") {
    REQUIRE_THROWS_AS(Mdp(t, Matrix::Zero(2, 1), 0.9, std::set<int>{0}),
                      std::invalid_argument);
  }
  SECTION("absorbing state must have zero reward") {
    Matrix r = Matrix::Zero(2, 1);
    r(1, 0) = 0.5;
    REQUIRE_THROWS_AS(Mdp(t, r, 0.9, std::set<int>{1}), std::invalid_argument);
  }
}

TEST_CASE("Mdp records the reward bound") {
  Matrix r(1, 2);
  r << -3.0, 2.0;
  std::vector<Matrix> t(2, Matrix::Ones(1, 1));
  Mdp mdp(t, r, 0.5);
  REQUIRE(mdp.r_max() == 3.0);
}

TEST_CASE("state-action flattening is x * n_actions + a") {
  REQUIRE(flat_index(0, 0, 3) == 0);
  REQUIRE(flat_index(0, 2, 3) == 2);
  REQUIRE(flat_index(2, 1, 3) == 7);

  QFunction q((Matrix(2, 2) << 1.0, 2.0, 3.0, 4.0).finished());
  Vector v = q.flatten();
  REQUIRE(v[0] == 1.0);
  REQUIRE(v[1] == 2.0);
  REQUIRE(v[2] == 3.0);
  REQUIRE(v[3] == 4.0);
  QFunction back = QFunction::unflatten(v, 2, 2);
  REQUIRE(back.values() == q.values());
}

TEST_CASE("Policy validation") {
  REQUIRE_THROWS_AS(Policy((Matrix(1, 2) << 0.6, 0.6).finished()),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(Policy((Matrix(1, 2) << 1.2, -0.2).finished()),
                    std::invalid_argument);
  Policy uniform = Policy::uniform(3, 4);
  for (int x = 0; x < 3; ++x)
    REQUIRE(uniform.probs().row(x).sum() == Catch::Approx(1.0).margin(1e-15));
}

TEST_CASE("QFunction rejects non-finite values") {
  Matrix bad(1, 1);
  bad(0, 0) = std::numeric_limits<double>::infinity();
  REQUIRE_THROWS_AS(QFunction(bad), std::invalid_argument);
}

TEST_CASE("QFunction greedy action breaks ties toward lower index") {
  QFunction q((Matrix(1, 3) << 2.0, 2.0, 1.0).finished());
  REQUIRE(q.greedy_action(0) == 0);
}

TEST_CASE("LinearOperatorMatrix kind invariants") {
  Matrix stochastic(2, 2);
  stochastic << 0.3, 0.7, 1.0, 0.0;
  REQUIRE_NOTHROW(
      (LinearOperatorMatrix{stochastic, LinearOperatorMatrix::Kind::P_pi}).validate());

  Matrix sub = 0.5 * stochastic;
  REQUIRE_NOTHROW(
      (LinearOperatorMatrix{sub, LinearOperatorMatrix::Kind::P_c_mu}).validate());
  REQUIRE_THROWS_AS(
      (LinearOperatorMatrix{sub, LinearOperatorMatrix::Kind::P_pi}).validate(),
      std::invalid_argument);

  Matrix super = 1.2 * stochastic;
  REQUIRE_THROWS_AS(
      (LinearOperatorMatrix{super, LinearOperatorMatrix::Kind::P_c_mu}).validate(),
      std::invalid_argument);
}

TEST_CASE("MDP text format round-trips") {
  const char* text = R"(# two-state chain
mdp 2 2 0.9
r 0 0 1.0   # forward reward
p 0 0 0 0.25
p 0 0 1 0.75
p 0 1 0 1
absorbing 1
)";
  Mdp mdp = parse_mdp(std::string(text));
  REQUIRE(mdp.n_states() == 2);
  REQUIRE(mdp.n_actions() == 2);
  REQUIRE(mdp.gamma() == 0.9);
  REQUIRE(mdp.reward(0, 0) == 1.0);
  REQUIRE(mdp.reward(0, 1) == 0.0);  // unspecified rewards default to 0
  REQUIRE(mdp.transition(0, 0, 1) == 0.75);
  // absorbing rows were not specified: default self-loops
  REQUIRE(mdp.transition(1, 0, 1) == 1.0);
  REQUIRE(mdp.transition(1, 1, 1) == 1.0);
  REQUIRE(mdp.is_absorbing(1));

  std::string serialized = serialize_mdp(mdp);
  Mdp reparsed = parse_mdp(serialized);
  REQUIRE(serialize_mdp(reparsed) == serialized);
  REQUIRE(reparsed.transition(0, 0, 1) == 0.75);
}

TEST_CASE("MDP parser reports line numbers") {
  try {
    parse_mdp(std::string("mdp 2 1 0.9\np 0 0 0 1\nbogus 1 2\n"));
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    REQUIRE(e.line() == 3);
    REQUIRE(std::string(e.what()).find("bogus") != std::string::npos);
  }
}

TEST_CASE("MDP parser rejects structural problems") {
  // missing transition row for non-absorbing state
  REQUIRE_THROWS_AS(parse_mdp(std::string("mdp 2 1 0.9\np 0 0 1 1\n")), ParseError);
  // directive before header
  REQUIRE_THROWS_AS(parse_mdp(std::string("r 0 0 1\n")), ParseError);
  // out-of-range state
  REQUIRE_THROWS_AS(parse_mdp(std::string("mdp 2 1 0.9\np 0 0 5 1\np 1 0 1 1\n")),
                    ParseError);
  // row not summing to one
  REQUIRE_THROWS_AS(
      parse_mdp(std::string("mdp 2 1 0.9\np 0 0 1 0.5\np 1 0 1 1\n")), ParseError);
  // empty input
  REQUIRE_THROWS_AS(parse_mdp(std::string("")), ParseError);
}

TEST_CASE("serialization is byte-identical for identical inputs") {
  Mdp a = testsupport::random_mdp(7, 4, 3, 0.9);
  Mdp b = testsupport::random_mdp(7, 4, 3, 0.9);
  REQUIRE(serialize_mdp(a) == serialize_mdp(b));
}
