#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "matchq/dlp.hpp"
#include "matchq/instance.hpp"
#include "matchq/lp.hpp"
#include "matchq/parallel.hpp"
#include "matchq/rng.hpp"
#include "matchq/static_policy.hpp"

namespace matchq {

// Occupancy LP over every customer subset with global balance rows. Matching sets at
// the empty state are allowed but produce no flow, cost or throughput.
inline LinearProgram build_full_occupancy_lp(const Instance& inst, double tau_target, std::size_t cap) {
  if (inst.n() != 1) throw InputError("full occupancy LP expects a single supplier type");
  const std::size_t m = inst.m();
  if (m > 16) throw InputError("full occupancy LP limited to m <= 16");
  const std::size_t S = std::size_t{1} << m;
  std::vector<double> rate(S, 0.0), cost(S, 0.0);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t j = 0; j < m; ++j)
      if (s >> j & 1u) rate[s] += inst.customer_rates[j], cost[s] += inst.customer_rates[j] * inst.costs[0][j];
  const double lambda = inst.supplier_rates[0], mu = inst.abandonment_rate;
  LinearProgram lp;
  auto var = [S](std::size_t l, std::size_t s) { return l * S + s; };
  const auto hint = occupancy_scale_hint(lambda, mu, rate[S - 1], cap);
  for (std::size_t l = 0; l <= cap; ++l)
    for (std::size_t s = 0; s < S; ++s) {
      lp.add_variable(0.0, kInf, l ? cost[s] : 0.0);
      lp.variables.back().scale = hint[l];
    }
  for (std::size_t l = 0; l <= cap; ++l) {
    const auto row = lp.add_constraint(Relation::equal, 0.0);
    for (std::size_t s = 0; s < S; ++s) {
      double out = 0.0;
      if (l < cap) out += lambda;
      if (l >= 1) out += rate[s] + static_cast<double>(l) * mu;
      lp.add_term(row, var(l, s), -out);
      if (l >= 1) lp.add_term(row, var(l - 1, s), lambda);
      if (l < cap) lp.add_term(row, var(l + 1, s), rate[s] + static_cast<double>(l + 1) * mu);
    }
  }
  const auto norm = lp.add_constraint(Relation::equal, 1.0);
  for (std::size_t k = 0; k < lp.num_variables(); ++k) lp.add_term(norm, k, 1.0);
  const auto thr = lp.add_constraint(Relation::greater_equal, tau_target);
  for (std::size_t l = 1; l <= cap; ++l)
    for (std::size_t s = 1; s < S; ++s) lp.add_term(thr, var(l, s), rate[s]);
  return lp;
}

struct OracleValue {
  bool feasible = false;
  double cost = kInf;
  std::size_t cap = 0;
};

// States with dominating tail mass below this are dropped from oracle LPs; their
// stationary weights underflow and only destabilize the basis.
inline constexpr double kOracleTailTol = 1e-30;

inline std::size_t effective_oracle_cap(const Instance& inst, std::size_t cap) {
  return std::min(cap, poisson_tail_cap(inst.lambda_max() / inst.abandonment_rate, kOracleTailTol));
}

inline OracleValue adaptive_optimum_at(const Instance& inst, double tau_target, std::size_t cap) {
  cap = effective_oracle_cap(inst, cap);
  const auto sol = solve(build_full_occupancy_lp(inst, tau_target, cap));
  if (sol.status == LpStatus::numerical_failure) throw NumericalError("occupancy LP failed numerically");
  if (!sol.optimal()) return {false, kInf, cap};
  return {true, sol.objective, cap};
}

inline std::size_t default_oracle_cap(const Instance& inst) {
  const double load = inst.lambda_max() / inst.abandonment_rate;
  return static_cast<std::size_t>(std::ceil(load + 8.0 * std::sqrt(load) + 16.0));
}

// Doubles the cap until consecutive values agree within tol; returns the larger-cap value.
inline OracleValue adaptive_optimum(const Instance& inst, const Target& target, std::size_t cap = 0,
                                    double tol = 1e-4) {
  if (target.throughput_floor <= 0.0) return {true, 0.0, cap ? cap : 1};
  std::size_t c = cap ? cap : default_oracle_cap(inst);
  OracleValue prev = adaptive_optimum_at(inst, target.throughput_floor, c);
  for (int round = 0; round < 6; ++round) {
    if (effective_oracle_cap(inst, 2 * c) == prev.cap) return prev;
    OracleValue next = adaptive_optimum_at(inst, target.throughput_floor, 2 * c);
    if (prev.feasible && next.feasible && std::abs(prev.cost - next.cost) <= tol) return next;
    if (!prev.feasible && !next.feasible && round >= 1) return next;
    prev = next;
    c *= 2;
  }
  log(LogLevel::warn, "adaptive_optimum: cap doubling did not stabilize");
  return prev;
}

struct GapPoint {
  double mu = 0.0;
  bool feasible = false;
  double static_cost = kInf;
  double adaptive_cost = kInf;
  double gap = kInf;
};

inline double gap_ratio(double static_cost, double adaptive_cost, double zero_tol = 1e-9) {
  if (adaptive_cost <= zero_tol) return static_cost <= zero_tol ? 1.0 : kInf;
  return static_cost / adaptive_cost;
}

// Gap at each abandonment rate with arrival rates held fixed.
inline GapPoint adaptivity_gap_at(const Instance& base, double tau, double mu) {
  Instance inst = base;
  inst.abandonment_rate = mu;
  GapPoint g;
  g.mu = mu;
  const auto st = optimal_static(inst, tau);
  const auto ad = adaptive_optimum(inst, {kInf, tau});
  if (!st.feasible || !ad.feasible) return g;
  g.feasible = true;
  g.static_cost = st.rates.cost;
  g.adaptive_cost = ad.cost;
  g.gap = gap_ratio(g.static_cost, g.adaptive_cost);
  return g;
}

inline std::vector<GapPoint> adaptivity_gap(const Instance& base, double tau, const std::vector<double>& mu_grid,
                                            std::size_t jobs = 0) {
  std::vector<GapPoint> out(mu_grid.size());
  parallel_for(mu_grid.size(), jobs, [&](std::size_t k) { out[k] = adaptivity_gap_at(base, tau, mu_grid[k]); });
  return out;
}

inline Instance hard_instance() {
  Instance inst;
  inst.supplier_rates = {4.0};
  inst.customer_rates = {2.4, 2.4, 7.2};
  inst.costs = {{0.0, 0.0, 1.0}};
  return inst;
}

// Largest abandonment rate at which serving every zero-cost type still meets tau.
inline double zero_cost_crossover(const Instance& base, double tau, double lo = 1e-3, double hi = 10.0) {
  auto zero_tput = [&](double mu) {
    Instance inst = base;
    inst.abandonment_rate = mu;
    const auto order = cost_order(inst);
    std::size_t k = 0;
    while (k < order.size() && inst.costs[0][order[k]] == 0.0) ++k;
    return evaluate_static(inst, {k + 1, 0.0, order}).throughput;
  };
  if (zero_tput(lo) < tau) return 0.0;
  if (zero_tput(hi) >= tau) return hi;
  while (hi - lo > 1e-9) {
    const double mid = 0.5 * (lo + hi);
    (zero_tput(mid) >= tau ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// Random single-queue instance: lambda 4, three customer types with arithmetic rates
// (first U[1,2], steps U[0,2]) and U[0,2] costs, both sorted ascending.
inline Instance random_study_instance(CounterRng& rng) {
  Instance inst;
  inst.supplier_rates = {4.0};
  const double first = 1.0 + rng.uniform();
  const double step = 2.0 * rng.uniform();
  inst.customer_rates = {first, first + step, first + 2.0 * step};
  std::vector<double> c{2.0 * rng.uniform(), 2.0 * rng.uniform(), 2.0 * rng.uniform()};
  std::sort(c.begin(), c.end());
  inst.costs = {c};
  return inst;
}

struct StudyRow {
  std::size_t instance_id = 0;
  double tau = 0.0;
  double mu = 1.0;
  double static_cost = kInf;
  double adaptive_cost = kInf;
  double gap = kInf;
};

struct StudySummary {
  std::size_t instances = 0;
  std::size_t pairs = 0;          // feasible (instance, tau) pairs
  std::size_t infinite_gaps = 0;  // adaptive zero, static positive
  double mean_excess = 0.0;       // mean of gap - 1 over finite pairs
  double frac_above_5pct = 0.0;
  double q1 = 0.0, median = 0.0, q3 = 0.0, max_gap = 0.0;
  std::vector<StudyRow> rows;
};

inline std::vector<double> default_tau_grid() { return {1.5, 2.0, 2.5, 3.0}; }

inline StudySummary summarize_study(std::vector<StudyRow> rows, std::size_t instances) {
  StudySummary s;
  s.instances = instances;
  s.rows = std::move(rows);
  std::vector<double> gaps;
  for (const auto& r : s.rows) {
    ++s.pairs;
    if (std::isinf(r.gap)) ++s.infinite_gaps;
    else gaps.push_back(r.gap);
  }
  if (gaps.empty()) return s;
  std::sort(gaps.begin(), gaps.end());
  double sum = 0.0;
  std::size_t above = 0;
  for (double g : gaps) sum += g - 1.0, above += g > 1.05;
  s.mean_excess = sum / static_cast<double>(gaps.size());
  s.frac_above_5pct = static_cast<double>(above) / static_cast<double>(gaps.size());
  auto q = [&](double p) { return gaps[static_cast<std::size_t>(std::floor(p * static_cast<double>(gaps.size() - 1)))]; };
  s.q1 = q(0.25);
  s.median = q(0.5);
  s.q3 = q(0.75);
  s.max_gap = gaps.back();
  return s;
}

inline StudySummary random_instance_study(std::size_t count, const std::vector<double>& tau_grid, std::uint64_t seed,
                                          std::size_t jobs = 0) {
  std::vector<std::vector<StudyRow>> per(count);
  parallel_for(count, jobs, [&](std::size_t id) {
    CounterRng rng(seed, id);
    const Instance inst = random_study_instance(rng);
    const double reach = greedy_throughput(inst, default_oracle_cap(inst) * 4);
    for (double tau : tau_grid) {
      if (tau >= reach) continue;
      const auto st = optimal_static(inst, tau);
      const auto ad = adaptive_optimum(inst, {kInf, tau});
      if (!st.feasible || !ad.feasible) continue;
      per[id].push_back({id, tau, 1.0, st.rates.cost, ad.cost, gap_ratio(st.rates.cost, ad.cost)});
    }
  });
  std::vector<StudyRow> rows;
  for (auto& v : per) rows.insert(rows.end(), v.begin(), v.end());
  return summarize_study(std::move(rows), count);
}

}  // namespace matchq
