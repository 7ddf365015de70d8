#include <gtest/gtest.h>

#include <random>

#include "matchq/lp.hpp"

using namespace matchq;

TEST(Lp, SingleLowerBoundRow) {
  LinearProgram lp;
  auto x = lp.add_variable(0.0, kInf, 1.0);
  lp.add_constraint({{x, 1.0}}, Relation::greater_equal, 3.0);
  for (auto mode : {Arithmetic::floating, Arithmetic::exact}) {
    auto sol = solve(lp, mode);
    ASSERT_EQ(sol.status, LpStatus::optimal);
    EXPECT_DOUBLE_EQ(sol.primal[x], 3.0);
    EXPECT_DOUBLE_EQ(sol.objective, 3.0);
    EXPECT_DOUBLE_EQ(sol.dual[0], 1.0);
  }
}

TEST(Lp, InfeasibleNegativeUpperRow) {
  LinearProgram lp;
  auto x = lp.add_variable(0.0, kInf, 0.0);
  lp.add_constraint({{x, 1.0}}, Relation::less_equal, -1.0);
  EXPECT_EQ(solve(lp).status, LpStatus::infeasible);
  EXPECT_EQ(solve(lp, Arithmetic::exact).status, LpStatus::infeasible);
}

TEST(Lp, Unbounded) {
  LinearProgram lp;
  auto x = lp.add_variable(0.0, kInf, -1.0);
  lp.add_constraint({{x, 1.0}}, Relation::greater_equal, 1.0);
  EXPECT_EQ(solve(lp).status, LpStatus::unbounded);
}

TEST(Lp, BoundsFreeAndFixedVariables) {
  LinearProgram lp;
  auto x = lp.add_variable(1.0, 4.0, 1.0);
  auto y = lp.add_variable(-kInf, 2.0, -1.0);
  auto z = lp.add_variable(-kInf, kInf, 1.0);
  auto w = lp.add_variable(2.5, 2.5, 3.0);
  lp.add_constraint({{x, 1.0}, {y, 1.0}}, Relation::equal, 3.0);
  lp.add_constraint({{z, 1.0}, {w, 1.0}}, Relation::greater_equal, -2.5);
  for (auto mode : {Arithmetic::floating, Arithmetic::exact}) {
    auto sol = solve(lp, mode);
    ASSERT_EQ(sol.status, LpStatus::optimal);
    EXPECT_NEAR(sol.primal[x], 1.0, 1e-12);
    EXPECT_NEAR(sol.primal[y], 2.0, 1e-12);
    EXPECT_NEAR(sol.primal[z], -5.0, 1e-12);
    EXPECT_NEAR(sol.primal[w], 2.5, 1e-12);
    EXPECT_NEAR(sol.objective, 1.0 - 2.0 - 5.0 + 7.5, 1e-12);
  }
}

TEST(Lp, RedundantEqualityRows) {
  LinearProgram lp;
  auto a = lp.add_variable(0.0, kInf, 1.0);
  auto b = lp.add_variable(0.0, kInf, 2.0);
  lp.add_constraint({{a, 1.0}, {b, 1.0}}, Relation::equal, 1.0);
  lp.add_constraint({{a, 2.0}, {b, 2.0}}, Relation::equal, 2.0);
  lp.add_constraint({{b, 1.0}}, Relation::greater_equal, 0.25);
  auto sol = solve(lp);
  ASSERT_EQ(sol.status, LpStatus::optimal);
  EXPECT_NEAR(sol.objective, 1.25, 1e-12);
  EXPECT_LE(sol.dual_objective, sol.objective + 1e-9);
  EXPECT_NEAR(sol.dual_objective, sol.objective, 1e-9);
}

// Random feasible bounded LPs: float and exact agree, strong duality holds, repeat solves agree.
TEST(Lp, RandomFloatMatchesExact) {
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 40; ++trial) {
    const int nv = 3 + trial % 6, nr = 2 + trial % 5;
    LinearProgram lp;
    std::vector<double> x0(nv);
    for (int j = 0; j < nv; ++j) {
      lp.add_variable(0.0, trial % 3 == 0 ? 5.0 : kInf, std::round(u(gen) * 8) / 4 - 0.5);
      x0[j] = std::round(u(gen) * 4) / 2;
    }
    for (int i = 0; i < nr; ++i) {
      std::vector<LpTerm> terms;
      double act = 0;
      for (int j = 0; j < nv; ++j) {
        double c = std::round(u(gen) * 8) / 4;
        if (u(gen) < 0.3) c = 0;
        if (c != 0) terms.push_back({static_cast<std::size_t>(j), c}), act += c * x0[j];
      }
      const auto rel = i % 3 == 0 ? Relation::equal : i % 3 == 1 ? Relation::less_equal : Relation::greater_equal;
      lp.add_constraint(terms, rel, act);
    }
    std::vector<LpTerm> all;
    for (int j = 0; j < nv; ++j) all.push_back({static_cast<std::size_t>(j), 1.0});
    lp.add_constraint(all, Relation::less_equal, 20.0);
    auto f = solve(lp);
    auto e = solve(lp, Arithmetic::exact);
    ASSERT_EQ(e.status, LpStatus::optimal) << trial;
    ASSERT_EQ(f.status, LpStatus::optimal) << trial;
    EXPECT_NEAR(f.objective, e.objective, 1e-7 * (1 + std::abs(e.objective))) << trial;
    EXPECT_LE(f.dual_objective, f.objective + 1e-6 * (1 + std::abs(f.objective)));
    EXPECT_NEAR(f.dual_objective, f.objective, 1e-6 * (1 + std::abs(f.objective)));
    EXPECT_LE(f.primal_residual, 1e-7);
    EXPECT_LE(f.complementarity_residual, 1e-6);
    EXPECT_NEAR(solve(lp).objective, f.objective, 1e-9);
  }
}

TEST(Lp, ExportsLpText) {
  LinearProgram lp;
  auto x = lp.add_variable(0.0, 2.0, 1.5, "x");
  lp.add_constraint({{x, -1.0}}, Relation::less_equal, -1.0, "c0");
  const auto text = to_lp_format(lp);
  EXPECT_NE(text.find("Minimize"), std::string::npos);
  EXPECT_NE(text.find("c0: - 1 x <= -1"), std::string::npos);
  EXPECT_NE(text.find("0 <= x <= 2"), std::string::npos);
}

TEST(Lp, RejectsUndeclaredVariable) {
  LinearProgram lp;
  lp.add_variable();
  lp.add_constraint({{3, 1.0}}, Relation::equal, 0.0);
  EXPECT_THROW(solve(lp), InputError);
}
