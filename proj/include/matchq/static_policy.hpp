#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "matchq/ctmc.hpp"
#include "matchq/dlp.hpp"
#include "matchq/instance.hpp"
#include "matchq/lp.hpp"

namespace matchq {

// Serves the first k-1 customer types in cost order always and the k-th with probability p.
struct StaticThresholdPolicy {
  std::size_t k = 1;  // 1-based position in cost order
  double p = 0.0;
  std::vector<std::size_t> order;  // customers by ascending cost

  double serve_probability(std::size_t j) const {
    const auto pos = static_cast<std::size_t>(std::find(order.begin(), order.end(), j) - order.begin()) + 1;
    if (pos < k) return 1.0;
    return pos == k ? p : 0.0;
  }
};

struct RatePair {
  double throughput = 0.0;
  double cost = 0.0;
};

inline std::vector<std::size_t> cost_order(const Instance& inst) { return nested_family(inst).order; }

// Exact rates of a static threshold policy on a single queue.
inline RatePair evaluate_static(const Instance& inst, const StaticThresholdPolicy& pol) {
  double served = 0.0, cost = 0.0;
  for (std::size_t j = 0; j < inst.m(); ++j) {
    const double q = pol.serve_probability(j);
    served += q * inst.customer_rates[j];
    cost += q * inst.customer_rates[j] * inst.costs[0][j];
  }
  const double lambda = inst.supplier_rates[0], mu = inst.abandonment_rate;
  const auto pi = birth_death_stationary(
      {[lambda](std::size_t) { return lambda; },
       [mu, served](std::size_t l) { return static_cast<double>(l) * mu + served; }, std::nullopt, mu});
  const double busy = 1.0 - pi[0];
  return {served * busy, cost * busy};
}

struct StaticOptimum {
  bool feasible = false;
  StaticThresholdPolicy policy;
  RatePair rates;
};

inline StaticOptimum optimal_static(const Instance& inst, double tau_target) {
  if (inst.n() != 1) throw InputError("optimal_static expects a single supplier type");
  StaticOptimum best;
  const auto order = cost_order(inst);
  const std::size_t m = inst.m();
  auto eval = [&](std::size_t k, double p) { return evaluate_static(inst, {k, p, order}); };
  if (tau_target <= 0.0) {
    best.feasible = true;
    best.policy = {1, 0.0, order};
    best.rates = eval(1, 0.0);
    return best;
  }
  for (std::size_t k = 1; k <= m; ++k) {
    if (eval(k, 1.0).throughput < tau_target) continue;
    double lo = 0.0, hi = 1.0;
    if (eval(k, 0.0).throughput >= tau_target) {
      hi = 0.0;
    } else {
      while (hi - lo > 1e-9) {
        const double mid = 0.5 * (lo + hi);
        (eval(k, mid).throughput >= tau_target ? hi : lo) = mid;
      }
    }
    const RatePair r = eval(k, hi);
    if (!best.feasible || r.cost < best.rates.cost - 1e-15) {
      best.feasible = true;
      best.policy = {k, hi, order};
      best.rates = r;
    }
  }
  return best;
}

// Greedy solution of the static polymatroid relaxation: pairs in ascending cost, each
// adding gamma_j (exp(-Lambda_prev) - exp(-Lambda_new)) until the target is met.
struct SlpResult {
  bool feasible = false;
  Matrix z;
  double objective = 0.0;
  double throughput = 0.0;
};

inline double slp_max_throughput(const Instance& inst) {
  const double lam = std::accumulate(inst.supplier_rates.begin(), inst.supplier_rates.end(), 0.0) /
                     inst.abandonment_rate;
  return inst.tau_max() * -std::expm1(-lam);
}

inline SlpResult slp_greedy(const Instance& inst, double tau_target) {
  SlpResult r;
  const std::size_t n = inst.n(), m = inst.m();
  r.z.assign(n, std::vector<double>(m, 0.0));
  if (tau_target > slp_max_throughput(inst) * (1.0 + 1e-12)) return r;
  struct Pair {
    double c;
    std::size_t j, i;
  };
  std::vector<Pair> pairs;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) pairs.push_back({inst.costs[i][j], j, i});
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    if (a.c != b.c) return a.c < b.c;
    if (a.j != b.j) return a.j < b.j;
    return a.i < b.i;
  });
  std::vector<double> cum(m, 0.0);  // supplier mass already assigned to customer j
  double remaining = tau_target;
  for (const auto& pr : pairs) {
    if (remaining <= 0.0) break;
    const double lam = inst.supplier_rates[pr.i] / inst.abandonment_rate;
    const double g = inst.customer_rates[pr.j];
    const double inc = g * std::exp(-cum[pr.j]) * -std::expm1(-lam);
    cum[pr.j] += lam;
    const double take = std::min(inc, remaining);
    r.z[pr.i][pr.j] = take;
    remaining -= take;
    r.objective += take * pr.c;
    r.throughput += take;
  }
  r.feasible = remaining <= 1e-12 * (1.0 + tau_target);
  return r;
}

// Direct LP over every supplier subset H (exponential in n; for cross-checks).
inline LinearProgram build_slp(const Instance& inst, double tau_target) {
  const std::size_t n = inst.n(), m = inst.m();
  if (n > 20) throw InputError("SLP enumeration limited to n <= 20");
  LinearProgram lp;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) lp.add_variable(0.0, kInf, inst.costs[i][j]);
  for (std::size_t j = 0; j < m; ++j) {
    for (unsigned h = 1; h < (1u << n); ++h) {
      double lam = 0.0;
      std::vector<LpTerm> terms;
      for (std::size_t i = 0; i < n; ++i)
        if (h >> i & 1u) {
          lam += inst.supplier_rates[i] / inst.abandonment_rate;
          terms.push_back({i * m + j, 1.0});
        }
      lp.add_constraint(std::move(terms), Relation::less_equal, inst.customer_rates[j] * -std::expm1(-lam));
    }
  }
  std::vector<LpTerm> all;
  for (std::size_t k = 0; k < n * m; ++k) all.push_back({k, 1.0});
  lp.add_constraint(std::move(all), Relation::greater_equal, tau_target);
  return lp;
}

}  // namespace matchq
