#include <gtest/gtest.h>

#include <cmath>

#include "matchq/ctmc.hpp"

using namespace matchq;

namespace {

// Poisson pmf from lgamma; independent of the product-form recursion.
double poisson_pmf(double mean, std::size_t k) {
  const double kk = static_cast<double>(k);
  return std::exp(kk * std::log(mean) - mean - std::lgamma(kk + 1.0));
}

BirthDeathSpec no_match(double lambda) {
  return {[lambda](std::size_t) { return lambda; }, [](std::size_t l) { return static_cast<double>(l); },
          std::nullopt, 1.0};
}

}  // namespace

TEST(BirthDeath, NoMatchChainIsPoisson) {
  for (double lambda : {0.5, 2.0, 10.0}) {
    auto pi = birth_death_stationary(no_match(lambda));
    double sum = 0.0;
    for (std::size_t l = 0; l < pi.size(); ++l) {
      sum += pi[l];
      EXPECT_LE(std::abs(pi[l] / poisson_pmf(lambda, l) - 1.0), 1e-9) << lambda << " " << l;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(BirthDeath, ZeroBirthIsPointMass) {
  auto pi = birth_death_stationary({[](std::size_t) { return 0.0; }, [](std::size_t l) { return 1.0 * l; }, std::nullopt, 1.0});
  ASSERT_EQ(pi.size(), 1u);
  EXPECT_EQ(pi[0], 1.0);
}

TEST(BirthDeath, DetailedBalanceOnCappedChain) {
  BirthDeathSpec spec{[](std::size_t l) { return 3.0 + 0.1 * l; }, [](std::size_t l) { return 0.5 * l + 1.0; }, 30};
  auto pi = birth_death_stationary(spec);
  ASSERT_EQ(pi.size(), 31u);
  for (std::size_t l = 1; l <= 30; ++l)
    EXPECT_NEAR(spec.birth(l - 1) * pi[l - 1] / (spec.death(l) * pi[l]), 1.0, 1e-9);
}

TEST(BirthDeath, RejectsNonDominatingDeath) {
  BirthDeathSpec spec{[](std::size_t) { return 1.0; }, [](std::size_t) { return 2.0; }, std::nullopt, 1.0};
  EXPECT_THROW(birth_death_stationary(spec), InputError);
}

TEST(BirthDeath, DriftChainEmptyProbabilityBound) {
  for (double eps : {0.1, 0.04, 0.01}) EXPECT_LE(drift_chain(1.0 / eps)[0], std::sqrt(eps)) << eps;
}

TEST(BirthDeath, DriftMeanBound) {
  for (double lambda : {1.0, 10.0, 100.0, 1e4}) {
    auto b = expected_queue_bound_check(lambda);
    EXPECT_LE(b.mean, b.bound) << lambda;
  }
  EXPECT_LE(expected_queue_bound_check(1e-6).mean, 1e-3);
  // lambda = 1: pi_l is proportional to 1/(l+1)!.
  double z = 0.0, s = 0.0, w = 1.0;
  for (int l = 0; l < 40; ++l) {
    if (l > 0) w /= (l + 1.0);
    z += w;
    s += l * w;
  }
  EXPECT_NEAR(expected_queue_bound_check(1.0).mean, s / z, 1e-12);
}

TEST(Multivariate, MatchesBirthDeathOnSingleQueue) {
  const std::size_t cap = 2;
  std::vector<Transition> tr;
  for (std::size_t l = 0; l < cap; ++l) tr.push_back({l, l + 1, 1.0});
  for (std::size_t l = 1; l <= cap; ++l) tr.push_back({l, l - 1, static_cast<double>(l)});
  auto a = multivariate_stationary(cap + 1, tr);
  auto b = birth_death_stationary({[](std::size_t) { return 1.0; }, [](std::size_t l) { return 1.0 * l; }, cap});
  EXPECT_LE(total_variation(a.probs, b.probs), 1e-8);
  EXPECT_NEAR(a[0], 1.0 / 2.5, 1e-12);
}

TEST(Multivariate, IndependentQueuesFactorize) {
  const std::size_t cap = 6;
  auto idx = [&](std::size_t a, std::size_t b) { return a * (cap + 1) + b; };
  std::vector<Transition> tr;
  const double la = 1.3, lb = 2.1;
  for (std::size_t a = 0; a <= cap; ++a)
    for (std::size_t b = 0; b <= cap; ++b) {
      if (a < cap) tr.push_back({idx(a, b), idx(a + 1, b), la});
      if (b < cap) tr.push_back({idx(a, b), idx(a, b + 1), lb});
      if (a > 0) tr.push_back({idx(a, b), idx(a - 1, b), 1.0 * a});
      if (b > 0) tr.push_back({idx(a, b), idx(a, b - 1), 1.0 * b});
    }
  auto joint = multivariate_stationary((cap + 1) * (cap + 1), tr);
  auto pa = birth_death_stationary({[la](std::size_t) { return la; }, [](std::size_t l) { return 1.0 * l; }, cap});
  auto pb = birth_death_stationary({[lb](std::size_t) { return lb; }, [](std::size_t l) { return 1.0 * l; }, cap});
  for (std::size_t a = 0; a <= cap; ++a)
    for (std::size_t b = 0; b <= cap; ++b) EXPECT_NEAR(joint[idx(a, b)], pa[a] * pb[b], 1e-12);
}

TEST(Multivariate, SingleStateAndReducible) {
  EXPECT_EQ(multivariate_stationary(1, {}).probs, std::vector<double>{1.0});
  try {
    multivariate_stationary(3, {{0, 1, 1.0}, {1, 0, 1.0}});
    FAIL() << "expected rejection";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("state 2"), std::string::npos);
  }
}

TEST(PoissonTail, CapCoversTail) {
  for (double mean : {0.5, 4.0, 80.0}) {
    const auto cap = poisson_tail_cap(mean, 1e-30);
    double tail = 0.0;
    for (std::size_t k = cap + 1; k < cap + 400; ++k) tail += poisson_pmf(mean, k);
    EXPECT_LT(tail, 1e-30);
    EXPECT_GT(cap, mean);
  }
}
