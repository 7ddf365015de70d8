#include <gtest/gtest.h>

#include <cmath>

#include "matchq/dlp.hpp"
#include "matchq/network.hpp"
#include "matchq/oracle.hpp"
#include "matchq/policies.hpp"
#include "matchq/sim.hpp"

using namespace matchq;

namespace {

// Supplier 0 short (cap 2), supplier 1 long, one customer type.
NlpSolution toy_solution(double eps, double y, bool contentious) {
  NlpSolution s;
  s.cap = 2;
  s.classification.short_types = {0};
  s.classification.long_types = {1};
  s.states = StateSpace(1, 2);
  s.owner = enumerate_assignments(1, 1);
  s.x = {{0.2, 0.0}, {0.0, 0.4}, {0.0, 0.4}};
  s.y = {{y}};
  s.epsilon = eps;
  if (contentious) s.contentious = {0};
  return s;
}

std::size_t counter(const Policy& p, const std::string& name) {
  const auto names = p.counter_names();
  const auto k = static_cast<std::size_t>(std::find(names.begin(), names.end(), name) - names.begin());
  return static_cast<std::size_t>(p.counters().at(k));
}

Instance desk() {
  return Instance{{1.5, 2.0, 1200.0}, {2.0, 3.0}, {{0.1, 0.5}, {0.3, 0.2}, {1.0, 1.0}}, 1.0, std::nullopt};
}

void expect_round_trip(const Policy& p) {
  const auto back = policy_from_json(nlohmann::json::parse(p.to_json().dump()));
  EXPECT_EQ(back->to_json(), p.to_json());
}

}  // namespace

TEST(StaticThreshold, Decisions) {
  const Instance h = hard_instance();
  CounterRng rng(1);
  StaticThreshold greedy({3, 1.0, cost_order(h)}, 3);
  StaticThreshold never({1, 0.0, cost_order(h)}, 3);
  const std::vector<std::size_t> busy{2}, empty{0};
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_EQ(greedy.on_customer(j, busy, rng).match_to, std::optional<std::size_t>(0));
    EXPECT_FALSE(greedy.on_customer(j, empty, rng).match_to);
    EXPECT_FALSE(never.on_customer(j, busy, rng).match_to);
  }
  EXPECT_THROW(StaticThreshold({4, 1.0, cost_order(h)}, 3), InputError);
}

TEST(StaticThreshold, OptimalPolicyHitsTargetInSimulation) {
  const Instance h = hard_instance();
  const auto opt = optimal_static(h, 3.0);
  ASSERT_TRUE(opt.feasible);
  SimConfig cfg;
  cfg.horizon = 5e4;
  cfg.replications = 2;
  const auto s = simulate(h, StaticThreshold(opt.policy, 3), cfg);
  EXPECT_NEAR(s.throughput.value, 3.0, 3.0 * s.throughput.se);
  EXPECT_NEAR(s.cost.value, opt.rates.cost, 3.0 * s.cost.se);
}

TEST(StaticRouting, FollowsRouteTable) {
  const Instance inst{{1.0, 1.0}, {2.0}, {{0.1}, {0.2}}, 1.0, std::nullopt};
  const auto slp = slp_greedy(inst, 0.8);
  ASSERT_TRUE(slp.feasible);
  const auto pol = StaticRouting::from_rates(inst, slp.z);
  SimConfig cfg;
  cfg.horizon = 2e4;
  const auto s = simulate(inst, pol, cfg);
  // Routed mass that finds its queue empty is lost, so the realized rate stays below the relaxation.
  EXPECT_LE(s.throughput.value, 0.8 + 3.0 * s.throughput.se);
  EXPECT_GT(s.throughput.value, 0.3);
  EXPECT_THROW(StaticRouting({{0.7}, {0.6}}), InputError);
  expect_round_trip(pol);
}

TEST(DlpAdaptive, NeverMatchTable) {
  const Instance h = hard_instance();
  const auto f = nested_family(h);
  std::vector<std::vector<double>> rows(11, std::vector<double>(f.size(), 0.0));
  for (auto& r : rows) r[0] = 1.0;
  SimConfig cfg;
  cfg.horizon = 1e3;
  const auto s = simulate(h, DlpAdaptive(table_from_rows(10, f, rows)), cfg);
  EXPECT_EQ(s.throughput.value, 0.0);
  for (const auto& [state, p] : s.state_distribution) EXPECT_LE(state[0], 10u);
}

TEST(DlpAdaptive, FullMatchTableMatchesChain) {
  const Instance h = hard_instance();
  const auto f = nested_family(h);
  const std::size_t cap = 12;
  std::vector<std::vector<double>> rows(cap + 1, std::vector<double>(f.size(), 0.0));
  for (auto& r : rows) r.back() = 1.0;
  const auto table = table_from_rows(cap, f, rows);
  const auto pi = table_stationary(h, table);
  const double exact = (1.0 - pi[0]) * h.tau_max();
  SimConfig cfg;
  cfg.horizon = 4e4;
  const auto s = simulate(h, DlpAdaptive(table), cfg);
  EXPECT_NEAR(s.throughput.value, exact, 3.0 * s.throughput.se);
}

TEST(DlpAdaptive, OptimalTableTracksRelaxation) {
  const Instance h = hard_instance();
  const auto d = solve_dlp_at(h, 3.0, 40);
  ASSERT_TRUE(d.feasible);
  const DlpAdaptive pol(extract_policy(d.solution));
  SimConfig cfg;
  cfg.horizon = 2.5e5;
  cfg.replications = 4;
  cfg.jobs = 4;
  const auto s = simulate(h, pol, cfg);
  EXPECT_NEAR(s.cost.value, d.solution.objective, 3.0 * s.cost.se);
  EXPECT_NEAR(s.throughput.value, 3.0, 3.0 * s.throughput.se);
  expect_round_trip(pol);
}

TEST(PriorityRounding, NonContentiousHighPriority) {
  PriorityRounding pol(2, toy_solution(0.1, 0.5, false));
  CounterRng rng(3);
  const std::vector<std::size_t> q{1, 5};
  for (int k = 0; k < 200; ++k) EXPECT_EQ(pol.on_customer(0, q, rng).match_to, std::optional<std::size_t>(0));
  for (auto v : pol.buffers()) EXPECT_EQ(v, 0u);
  EXPECT_EQ(counter(pol, "noncontentious_short_drawn"), 200u);
}

TEST(PriorityRounding, ContentiousSchedulesDelayedMatch) {
  PriorityRounding pol(2, toy_solution(0.0, 1.0, true));
  CounterRng rng(3);
  EXPECT_EQ(pol.on_customer(0, std::vector<std::size_t>{1, 5}, rng).match_to, std::optional<std::size_t>(0));
  EXPECT_EQ(pol.buffers()[0], 1u);
}

TEST(PriorityRounding, EmptyBufferPathStaysAtZero) {
  PriorityRounding pol(2, toy_solution(1.0, 1.0, true));  // (1 - eps) y = 0: long draw is always empty
  CounterRng rng(3);
  EXPECT_FALSE(pol.on_customer(0, std::vector<std::size_t>{0, 5}, rng).match_to);
  EXPECT_EQ(pol.buffers()[0], 0u);
}

TEST(PriorityRounding, SurplusRuleVariants) {
  for (auto rule : {SurplusRule::printed, SurplusRule::skip_after_empty_long}) {
    PriorityRounding pol(2, toy_solution(0.0, 1.0, true), rule);
    CounterRng rng(5);
    pol.on_customer(0, std::vector<std::size_t>{1, 0}, rng);
    ASSERT_EQ(pol.buffers()[0], 1u);
    // Long queue drawn but empty: the printed rule still runs surplus matching and spends the buffer.
    EXPECT_FALSE(pol.on_customer(0, std::vector<std::size_t>{0, 0}, rng).match_to);
    EXPECT_EQ(pol.buffers()[0], rule == SurplusRule::printed ? 0u : 1u);
  }
}

TEST(PriorityRounding, SurplusMatchSpendsBuffer) {
  PriorityRounding pol(2, toy_solution(0.5, 1.0, true));
  CounterRng rng(9);
  std::size_t scheduled = 0;
  for (int k = 0; k < 50; ++k) pol.on_customer(0, std::vector<std::size_t>{1, 3}, rng);
  scheduled = pol.buffers()[0];
  ASSERT_GT(scheduled, 0u);
  for (int k = 0; k < 200 && pol.buffers()[0] > 0; ++k) pol.on_customer(0, std::vector<std::size_t>{0, 3}, rng);
  EXPECT_EQ(pol.buffers()[0], 0u);
  EXPECT_EQ(counter(pol, "surplus_matches"), scheduled);
}

TEST(PriorityRounding, UnreachableStateFallsBackToEmptyAssignment) {
  auto sol = toy_solution(0.1, 0.0, false);
  sol.x[1] = {0.0, 0.0};
  PriorityRounding pol(2, sol);
  CounterRng rng(1);
  EXPECT_FALSE(pol.on_customer(0, std::vector<std::size_t>{1, 0}, rng).match_to);
  EXPECT_EQ(counter(pol, "unreachable_states"), 1u);
}

TEST(PriorityRounding, DeskRunRespectsCapAndJson) {
  const auto r = solve_nlp(desk(), Target{kInf, 4.0}, Accuracy{0.3});
  ASSERT_TRUE(r.feasible);
  const PriorityRounding pol(3, r.solution);
  EXPECT_TRUE(pol.lazy(2));
  EXPECT_FALSE(pol.lazy(0));
  SimConfig cfg;
  cfg.horizon = 2e3;
  const auto s = simulate(desk(), pol, cfg);
  ASSERT_TRUE(s.state_tracked);
  for (const auto& [state, p] : s.state_distribution)
    for (auto l : state) EXPECT_LE(l, r.solution.cap);
  EXPECT_EQ(s.buffer_columns, 2u);
  EXPECT_EQ(s.buffer_average.size(), 2u);
  expect_round_trip(pol);
}

TEST(CellComposite, DispatchesWithinCells) {
  const Instance inst{{2.0, 2.0}, {1.0, 1.0}, {{0.1, 5.0}, {5.0, 0.1}}, 1.0, std::nullopt};
  std::vector<CellComposite::Cell> cells;
  cells.push_back({{0}, {0}, std::make_unique<StaticThreshold>(StaticThresholdPolicy{1, 1.0, {0}}, 1)});
  cells.push_back({{1}, {1}, std::make_unique<StaticThreshold>(StaticThresholdPolicy{1, 1.0, {0}}, 1)});
  const CellComposite pol(2, 2, std::move(cells));
  SimConfig cfg;
  cfg.horizon = 5e3;
  const auto s = simulate(inst, pol, cfg);
  EXPECT_EQ(s.match_rate[0][1].value, 0.0);
  EXPECT_EQ(s.match_rate[1][0].value, 0.0);
  EXPECT_GT(s.match_rate[0][0].value, 0.5);
  EXPECT_EQ(s.counter_batches[0], std::vector<double>(20, 0.0));
  expect_round_trip(pol);
  std::vector<CellComposite::Cell> overlap;
  overlap.push_back({{0}, {0}, nullptr});
  overlap.push_back({{0}, {1}, nullptr});
  EXPECT_THROW(CellComposite(2, 2, std::move(overlap)), InputError);
}

TEST(PolicyJson, RoundTripsAndErrors) {
  const Instance h = hard_instance();
  expect_round_trip(StaticThreshold({2, 0.25, cost_order(h)}, 3));
  expect_round_trip(PriorityRounding(2, toy_solution(0.1, 0.5, true), SurplusRule::skip_after_empty_long));
  EXPECT_THROW(policy_from_json(nlohmann::json{{"type", "nope"}}), InputError);
  EXPECT_THROW(policy_from_json(nlohmann::json{{"type", "static_threshold"}}), InputError);
}
