#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"
#include "matchq/ctmc.hpp"
#include "matchq/instance.hpp"
#include "matchq/lp.hpp"

namespace matchq {

// Cost-ordered chain of customer sets for one supplier type; equal costs share a boundary.
struct NestedFamily {
  std::vector<std::size_t> order;     // customers by ascending cost, ties by index
  std::vector<std::size_t> boundary;  // set u = order[0 .. boundary[u])
  std::vector<double> rate;           // total customer rate of set u
  std::vector<double> cost_rate;      // sum of rate * cost over set u
  std::vector<std::size_t> rank_of;   // customer -> first set index containing it

  std::size_t size() const { return boundary.size(); }
  bool contains(std::size_t u, std::size_t j) const { return rank_of[j] <= u; }

  std::vector<std::size_t> members(std::size_t u) const {
    return {order.begin(), order.begin() + static_cast<std::ptrdiff_t>(boundary[u])};
  }
};

inline NestedFamily nested_family(const std::vector<double>& costs, const std::vector<double>& rates) {
  NestedFamily f;
  const std::size_t m = costs.size();
  f.order.resize(m);
  std::iota(f.order.begin(), f.order.end(), 0);
  std::stable_sort(f.order.begin(), f.order.end(), [&](std::size_t a, std::size_t b) { return costs[a] < costs[b]; });
  f.rank_of.assign(m, 0);
  f.boundary = {0};
  f.rate = {0.0};
  f.cost_rate = {0.0};
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t j = f.order[k];
    const bool new_step = k == 0 || costs[j] != costs[f.order[k - 1]];
    if (new_step) {
      f.boundary.push_back(f.boundary.back());
      f.rate.push_back(f.rate.back());
      f.cost_rate.push_back(f.cost_rate.back());
    }
    f.boundary.back() += 1;
    f.rate.back() += rates[j];
    f.cost_rate.back() += rates[j] * costs[j];
    f.rank_of[j] = f.size() - 1;
  }
  return f;
}

inline NestedFamily nested_family(const Instance& inst, std::size_t supplier = 0) {
  return nested_family(inst.costs[supplier], inst.customer_rates);
}

// Queue-length cap from the bounded-policy sizing rule with constant 8.
inline std::size_t truncation_cap(const Instance& inst, const Target& target, const Accuracy& acc) {
  if (!(target.throughput_floor > 0.0)) throw InputError("truncation_cap requires a positive throughput target");
  const double eps = acc.epsilon;
  const double k = 8.0 / eps * (std::log(inst.tau_max() / target.throughput_floor) + std::log(1.0 / eps));
  const double naive = std::ceil(inst.lambda_max()) + 1.0;
  return static_cast<std::size_t>(std::max(std::ceil(k), naive));
}

struct DlpModel {
  LinearProgram lp;
  NestedFamily family;
  std::size_t cap = 0;
  std::size_t first_balance_row = 0;  // rows for l = 0..cap follow consecutively
  std::size_t normalization_row = 0;
  std::size_t throughput_row = 0;

  std::size_t var(std::size_t l, std::size_t u) const { return l * family.size() + u; }
};

inline DlpModel build_dlp(const Instance& inst, double tau_target, std::size_t cap) {
  if (inst.n() != 1) throw InputError("build_dlp expects a single supplier type");
  if (cap < 1) throw InputError("cap must be at least 1");
  DlpModel d;
  d.family = nested_family(inst);
  d.cap = cap;
  const auto& f = d.family;
  const std::size_t U = f.size();
  const double lambda = inst.supplier_rates[0], mu = inst.abandonment_rate;
  const auto hint = occupancy_scale_hint(lambda, mu, f.rate.back(), cap);
  for (std::size_t l = 0; l <= cap; ++l)
    for (std::size_t u = 0; u < U; ++u) {
      d.lp.add_variable(0.0, (l == 0 && u > 0) ? 0.0 : kInf, f.cost_rate[u],
                        "x_" + std::to_string(l) + "_" + std::to_string(u));
      d.lp.variables.back().scale = hint[l];
    }
  d.first_balance_row = d.lp.num_constraints();
  for (std::size_t l = 0; l <= cap; ++l) {
    const auto row = d.lp.add_constraint(Relation::equal, 0.0, "balance_" + std::to_string(l));
    for (std::size_t u = 0; u < U; ++u) {
      if (l >= 1) d.lp.add_term(row, d.var(l - 1, u), lambda);
      d.lp.add_term(row, d.var(l, u), -(f.rate[u] + static_cast<double>(l) * mu));
    }
  }
  d.normalization_row = d.lp.add_constraint(Relation::equal, 1.0, "normalization");
  for (std::size_t k = 0; k < d.lp.num_variables(); ++k) d.lp.add_term(d.normalization_row, k, 1.0);
  d.throughput_row = d.lp.add_constraint(Relation::greater_equal, tau_target, "throughput");
  for (std::size_t l = 1; l <= cap; ++l)
    for (std::size_t u = 1; u < U; ++u) d.lp.add_term(d.throughput_row, d.var(l, u), f.rate[u]);
  return d;
}

struct DlpSolution {
  std::size_t cap = 0;
  NestedFamily family;
  std::vector<std::vector<double>> x;  // [l][u]
  double objective = 0.0;
  double throughput = 0.0;

  std::vector<double> marginals() const {
    std::vector<double> p(x.size(), 0.0);
    for (std::size_t l = 0; l < x.size(); ++l) p[l] = std::accumulate(x[l].begin(), x[l].end(), 0.0);
    return p;
  }
};

struct DualDiagnostics {
  double alpha = 0.0;
  double theta = 0.0;
  std::vector<double> delta;  // delta[l-1] for l = 1..cap
  // Per state l (index l-1): customers strictly inside / on the threshold.
  std::vector<std::vector<std::size_t>> strict_set;
  std::vector<std::vector<std::size_t>> tie_set;
  double strong_duality_gap = 0.0;
  double boundary_residual = 0.0;  // -lambda*delta^1 + alpha
  bool nonpositive = true;
  bool increasing = true;
  bool concave = true;
  bool slackness = true;

  bool ok() const { return nonpositive && increasing && concave && slackness; }
};

// Threshold duals from (alpha, theta): at every state some column is tight, so
// delta^l = min_u (cost_u - theta*rate_u - alpha + lambda*delta^{l+1}) / (l*mu + rate_u),
// run backwards from delta^{horizon+1} = 0.
inline std::vector<double> threshold_duals(const Instance& inst, const NestedFamily& f, double alpha, double theta,
                                           std::size_t horizon) {
  const double lambda = inst.supplier_rates[0], mu = inst.abandonment_rate;
  std::vector<double> delta(horizon, 0.0);
  double next = 0.0;
  for (std::size_t l = horizon; l >= 1; --l) {
    double best = kInf;
    for (std::size_t u = 0; u < f.size(); ++u)
      best = std::min(best, (f.cost_rate[u] - theta * f.rate[u] - alpha + lambda * next) /
                                (static_cast<double>(l) * mu + f.rate[u]));
    delta[l - 1] = next = best;
  }
  return delta;
}

// The finite-cap duals carry a boundary layer from delta^{cap+1} = 0 in the last few
// (massless) states. The structural checks use the untruncated recursion instead:
// the horizon is doubled until delta on 1..cap settles.
inline DualDiagnostics dual_diagnostics(const Instance& inst, const DlpSolution& sol, double alpha, double theta,
                                        double tau_target, double tol = 1e-7) {
  DualDiagnostics dd;
  dd.alpha = alpha;
  dd.theta = theta;
  const auto& f = sol.family;
  const std::size_t cap = sol.cap, U = f.size();
  const double lambda = inst.supplier_rates[0];
  dd.delta = threshold_duals(inst, f, alpha, theta, 2 * cap);
  for (std::size_t h = 4 * cap; h <= 256 * cap; h *= 2) {
    auto longer = threshold_duals(inst, f, alpha, theta, h);
    double change = 0.0;
    for (std::size_t k = 0; k < cap; ++k) change = std::max(change, std::abs(longer[k] - dd.delta[k]));
    dd.delta = std::move(longer);
    if (change <= 1e-13) break;
  }
  dd.delta.resize(cap);
  dd.boundary_residual = cap ? -lambda * dd.delta[0] + alpha : alpha;
  dd.strong_duality_gap = alpha + theta * tau_target - sol.objective;

  const auto& costs = inst.costs[0];
  dd.strict_set.resize(cap);
  dd.tie_set.resize(cap);
  for (std::size_t l = 1; l <= cap; ++l) {
    const double d = dd.delta[l - 1];
    for (std::size_t j = 0; j < inst.m(); ++j) {
      const double r = costs[j] - theta - d;
      if (std::abs(r) <= tol) dd.tie_set[l - 1].push_back(j);
      else if (r < 0.0) dd.strict_set[l - 1].push_back(j);
    }
  }
  for (std::size_t k = 0; k < cap; ++k) {
    if (dd.delta[k] > tol) dd.nonpositive = false;
    if (k + 1 < cap && dd.delta[k] > dd.delta[k + 1] + tol) dd.increasing = false;
    if (k + 2 < cap && dd.delta[k + 2] - dd.delta[k + 1] > dd.delta[k + 1] - dd.delta[k] + tol) dd.concave = false;
  }
  for (std::size_t l = 1; l <= cap; ++l) {
    for (std::size_t u = 0; u < U; ++u) {
      if (sol.x[l][u] <= tol) continue;
      std::vector<char> in(inst.m(), 0);
      for (std::size_t j : f.members(u)) in[j] = 1;
      for (std::size_t j : dd.strict_set[l - 1])
        if (!in[j]) dd.slackness = false;
      std::vector<char> allowed(inst.m(), 0);
      for (std::size_t j : dd.strict_set[l - 1]) allowed[j] = 1;
      for (std::size_t j : dd.tie_set[l - 1]) allowed[j] = 1;
      for (std::size_t j = 0; j < inst.m(); ++j)
        if (in[j] && !allowed[j]) dd.slackness = false;
    }
  }
  return dd;
}

struct DlpResult {
  bool feasible = false;
  bool within_cost_cap = false;
  std::string certificate;  // why the target is unattainable, when infeasible
  double tau_target = 0.0;
  DlpSolution solution;
  DualDiagnostics duals;
  LpStatus status = LpStatus::numerical_failure;
};

inline DlpSolution dlp_solution_from_lp(const DlpModel& model, const LpSolution& lp) {
  DlpSolution s;
  s.cap = model.cap;
  s.family = model.family;
  const std::size_t U = model.family.size();
  s.x.assign(model.cap + 1, std::vector<double>(U, 0.0));
  for (std::size_t l = 0; l <= model.cap; ++l)
    for (std::size_t u = 0; u < U; ++u) {
      const double v = lp.primal[model.var(l, u)];
      s.x[l][u] = v > 0.0 ? v : 0.0;
      s.objective += s.x[l][u] * model.family.cost_rate[u];
      if (l >= 1) s.throughput += s.x[l][u] * model.family.rate[u];
    }
  return s;
}

// Throughput of serving everyone: the largest rate any policy can reach at this cap.
inline double greedy_throughput(const Instance& inst, std::size_t cap) {
  const double lambda = inst.supplier_rates[0], mu = inst.abandonment_rate, g = inst.tau_max();
  auto pi = birth_death_stationary({[lambda](std::size_t) { return lambda; },
                                    [mu, g](std::size_t l) { return static_cast<double>(l) * mu + g; }, cap});
  return g * (1.0 - pi[0]);
}

inline DlpResult solve_dlp_at(const Instance& inst, double tau_target, std::size_t cap, double cost_cap = kInf,
                              Arithmetic mode = Arithmetic::floating) {
  DlpResult r;
  r.tau_target = tau_target;
  const DlpModel model = build_dlp(inst, tau_target, cap);
  const LpSolution lp = solve(model.lp, mode);
  r.status = lp.status;
  if (lp.status == LpStatus::numerical_failure) throw NumericalError("DLP solve failed numerically");
  if (lp.status != LpStatus::optimal) {
    r.certificate = "throughput target " + std::to_string(tau_target) + " exceeds the maximum " +
                    std::to_string(greedy_throughput(inst, cap)) + " reachable at cap " + std::to_string(cap);
    return r;
  }
  r.feasible = true;
  r.solution = dlp_solution_from_lp(model, lp);
  r.within_cost_cap = r.solution.objective <= cost_cap * (1.0 + 1e-12);
  if (!r.within_cost_cap)
    r.certificate = "relaxation optimum " + std::to_string(r.solution.objective) + " exceeds the cost cap";
  r.duals = dual_diagnostics(inst, r.solution, lp.dual[model.normalization_row], lp.dual[model.throughput_row],
                             tau_target);
  return r;
}

// Solves at throughput (1 - eps) * tau* with the sizing-rule cap (or an override).
inline DlpResult solve_dlp(const Instance& inst, const Target& target, const Accuracy& acc,
                           std::size_t cap_override = 0) {
  const std::size_t cap = cap_override ? cap_override
                          : target.throughput_floor > 0.0
                              ? truncation_cap(inst, target, acc)
                              : static_cast<std::size_t>(std::ceil(inst.lambda_max())) + 1;
  return solve_dlp_at(inst, (1.0 - acc.epsilon) * target.throughput_floor, cap, target.cost_cap);
}

struct AdaptivePolicyTable {
  std::size_t cap = 0;
  NestedFamily family;
  std::vector<std::vector<double>> rows;        // [l][u] commitment probabilities
  std::vector<std::vector<double>> match_prob;  // [l][j] conditional match probability
  std::vector<std::size_t> defaulted_states;    // zero-mass states set to the empty commitment

  bool monotone(double tol = 1e-9) const {
    std::vector<char> defaulted(rows.size(), 0);
    for (auto l : defaulted_states) defaulted[l] = 1;
    for (std::size_t j = 0; j < family.rank_of.size(); ++j) {
      double prev = -1.0;
      for (std::size_t l = 1; l < rows.size(); ++l) {
        if (defaulted[l]) continue;
        if (match_prob[l][j] < prev - tol) return false;
        prev = match_prob[l][j];
      }
    }
    return true;
  }
};

inline AdaptivePolicyTable table_from_rows(std::size_t cap, NestedFamily family,
                                           std::vector<std::vector<double>> rows) {
  AdaptivePolicyTable t;
  t.cap = cap;
  t.family = std::move(family);
  t.rows = std::move(rows);
  const std::size_t m = t.family.rank_of.size();
  t.match_prob.assign(cap + 1, std::vector<double>(m, 0.0));
  for (std::size_t l = 0; l <= cap; ++l)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t u = t.family.rank_of[j]; u < t.family.size(); ++u) t.match_prob[l][j] += t.rows[l][u];
  return t;
}

inline AdaptivePolicyTable extract_policy(const DlpSolution& sol, double mass_floor = 1e-14) {
  const std::size_t U = sol.family.size();
  std::vector<std::vector<double>> rows(sol.cap + 1, std::vector<double>(U, 0.0));
  std::vector<std::size_t> defaulted;
  for (std::size_t l = 0; l <= sol.cap; ++l) {
    const double mass = std::accumulate(sol.x[l].begin(), sol.x[l].end(), 0.0);
    if (l == 0 || mass <= mass_floor) {
      rows[l][0] = 1.0;
      if (l > 0) defaulted.push_back(l);
      continue;
    }
    for (std::size_t u = 0; u < U; ++u) rows[l][u] = sol.x[l][u] / mass;
  }
  auto t = table_from_rows(sol.cap, sol.family, std::move(rows));
  t.defaulted_states = std::move(defaulted);
  return t;
}

// Stationary queue-length law of the chain a table induces.
inline StationaryDistribution table_stationary(const Instance& inst, const AdaptivePolicyTable& t) {
  const double lambda = inst.supplier_rates[0], mu = inst.abandonment_rate;
  std::vector<double> death(t.cap + 1, 0.0);
  for (std::size_t l = 1; l <= t.cap; ++l) {
    death[l] = static_cast<double>(l) * mu;
    for (std::size_t u = 0; u < t.family.size(); ++u) death[l] += t.rows[l][u] * t.family.rate[u];
  }
  return birth_death_stationary(
      {[lambda](std::size_t) { return lambda; }, [&death](std::size_t l) { return death[l]; }, t.cap});
}

enum class SetFamily { power_set, nested };

struct MultiDlpModel {
  LinearProgram lp;
  std::size_t cap = 0;
  // sets[i][s] is a bitmask over customers; var(i, l, s) indexes x.
  std::vector<std::vector<unsigned>> sets;
  std::vector<std::size_t> offset;

  std::size_t var(std::size_t i, std::size_t l, std::size_t s) const { return offset[i] + l * sets[i].size() + s; }
};

// Per-queue stationary polytopes coupled by a shared throughput row and per-customer
// contention rows. Only the power-set family yields a relaxation when n > 1.
inline MultiDlpModel build_multi_dlp(const Instance& inst, double tau_target, std::size_t cap,
                                     SetFamily family = SetFamily::power_set) {
  const std::size_t n = inst.n(), m = inst.m();
  if (family == SetFamily::power_set && m > 16) throw InputError("power-set multi-queue LP limited to m <= 16");
  MultiDlpModel d;
  d.cap = cap;
  d.sets.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (family == SetFamily::power_set) {
      for (unsigned s = 0; s < (1u << m); ++s) d.sets[i].push_back(s);
    } else {
      const auto f = nested_family(inst, i);
      for (std::size_t u = 0; u < f.size(); ++u) {
        unsigned mask = 0;
        for (std::size_t j : f.members(u)) mask |= 1u << j;
        d.sets[i].push_back(mask);
      }
    }
  }
  auto rate_of = [&](unsigned s) {
    double g = 0.0;
    for (std::size_t j = 0; j < m; ++j)
      if (s >> j & 1u) g += inst.customer_rates[j];
    return g;
  };
  auto cost_of = [&](std::size_t i, unsigned s) {
    double c = 0.0;
    for (std::size_t j = 0; j < m; ++j)
      if (s >> j & 1u) c += inst.customer_rates[j] * inst.costs[i][j];
    return c;
  };
  for (std::size_t i = 0; i < n; ++i) {
    d.offset.push_back(d.lp.num_variables());
    const auto hint = occupancy_scale_hint(inst.supplier_rates[i], inst.abandonment_rate, inst.tau_max(), cap);
    for (std::size_t l = 0; l <= cap; ++l)
      for (unsigned s : d.sets[i]) {
        d.lp.add_variable(0.0, (l == 0 && s != 0) ? 0.0 : kInf, cost_of(i, s));
        d.lp.variables.back().scale = hint[l];
      }
  }
  const double mu = inst.abandonment_rate;
  for (std::size_t i = 0; i < n; ++i) {
    const double lambda = inst.supplier_rates[i];
    for (std::size_t l = 0; l <= cap; ++l) {
      const auto row = d.lp.add_constraint(Relation::equal, 0.0);
      for (std::size_t k = 0; k < d.sets[i].size(); ++k) {
        if (l >= 1) d.lp.add_term(row, d.var(i, l - 1, k), lambda);
        d.lp.add_term(row, d.var(i, l, k), -(rate_of(d.sets[i][k]) + static_cast<double>(l) * mu));
      }
    }
    const auto norm = d.lp.add_constraint(Relation::equal, 1.0);
    for (std::size_t l = 0; l <= cap; ++l)
      for (std::size_t k = 0; k < d.sets[i].size(); ++k) d.lp.add_term(norm, d.var(i, l, k), 1.0);
  }
  const auto thr = d.lp.add_constraint(Relation::greater_equal, tau_target, "throughput");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t l = 1; l <= cap; ++l)
      for (std::size_t k = 0; k < d.sets[i].size(); ++k) d.lp.add_term(thr, d.var(i, l, k), rate_of(d.sets[i][k]));
  for (std::size_t j = 0; j < m; ++j) {
    const auto row = d.lp.add_constraint(Relation::less_equal, 1.0, "contention_" + std::to_string(j));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t l = 1; l <= cap; ++l)
        for (std::size_t k = 0; k < d.sets[i].size(); ++k)
          if (d.sets[i][k] >> j & 1u) d.lp.add_term(row, d.var(i, l, k), 1.0);
  }
  return d;
}

inline nlohmann::json to_json(const NestedFamily& f) {
  return {{"order", f.order}, {"boundary", f.boundary}, {"rate", f.rate}, {"cost_rate", f.cost_rate}};
}

inline nlohmann::json to_json(const DlpSolution& s) {
  return {{"cap", s.cap}, {"family", to_json(s.family)}, {"x", s.x}, {"objective", s.objective},
          {"throughput", s.throughput}};
}

inline nlohmann::json to_json(const DualDiagnostics& d) {
  return {{"alpha", d.alpha},
          {"theta", d.theta},
          {"delta", d.delta},
          {"strict_sets", d.strict_set},
          {"tie_sets", d.tie_set},
          {"strong_duality_gap", d.strong_duality_gap},
          {"boundary_residual", d.boundary_residual},
          {"nonpositive", d.nonpositive},
          {"increasing", d.increasing},
          {"concave", d.concave},
          {"slackness", d.slackness}};
}

}  // namespace matchq
