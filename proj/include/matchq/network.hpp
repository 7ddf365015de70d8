#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "matchq/ctmc.hpp"
#include "matchq/instance.hpp"
#include "matchq/lp.hpp"
#include "matchq/parallel.hpp"

namespace matchq {

// Supplier types split by normalized arrival rate lambda_i / mu.
struct Classification {
  int kappa = 1;
  double delta = 0.0;
  double short_cutoff = 0.0;
  double long_cutoff = 0.0;
  std::vector<std::size_t> short_types;
  std::vector<std::size_t> long_types;
  std::vector<std::size_t> removed;
};

inline int max_kappa(std::size_t n, const Accuracy& acc) {
  return static_cast<int>(std::floor(std::min(1.0 / acc.epsilon, static_cast<double>(n)))) + 1;
}

inline Classification classify(const Instance& inst, const Accuracy& acc, int kappa) {
  if (kappa < 1 || kappa > max_kappa(inst.n(), acc))
    throw InputError("kappa " + std::to_string(kappa) + " outside [1, " + std::to_string(max_kappa(inst.n(), acc)) + "]");
  Classification c;
  c.kappa = kappa;
  c.delta = acc.delta(inst.n());
  c.short_cutoff = acc.short_cutoff(inst.n(), kappa);
  c.long_cutoff = acc.long_cutoff(inst.n(), kappa);
  for (std::size_t i = 0; i < inst.n(); ++i) {
    const double load = inst.supplier_rates[i] / inst.abandonment_rate;
    if (load <= c.short_cutoff) c.short_types.push_back(i);
    else if (load >= c.long_cutoff) c.long_types.push_back(i);
    else c.removed.push_back(i);
  }
  return c;
}

// Every queue tracked state by state; the Network LP is then the exact joint occupancy LP.
inline Classification all_short(const Instance& inst) {
  Classification c;
  for (std::size_t i = 0; i < inst.n(); ++i) c.short_types.push_back(i);
  c.short_cutoff = kInf;
  c.long_cutoff = kInf;
  return c;
}

// Bounded-policy sizing rule for the short queues.
inline std::size_t nlp_formula_cap(std::size_t n, const Accuracy& acc, int kappa) {
  const double eps = acc.epsilon, dk = std::pow(acc.delta(n), kappa);
  const double nn = static_cast<double>(n);
  const double u = std::ceil(std::log(nn * nn / ((1.0 - eps) * eps * eps * dk)) / std::log(1.0 / eps));
  return static_cast<std::size_t>(std::ceil(1.0 / (eps * dk)) + std::max(0.0, u) + 1.0);
}

struct NlpOptions {
  std::optional<std::size_t> cap_override;
  // Shrink the cap to the level where every short queue's no-service Poisson tail drops below this.
  double tail_tol = 1e-9;
  std::size_t variable_budget = 400000;
  std::size_t jobs = 1;
};

inline std::size_t nlp_cap(const Instance& inst, const Accuracy& acc, const Classification& cls,
                           const NlpOptions& opt) {
  if (opt.cap_override) return *opt.cap_override;
  std::size_t tail = 1;
  for (std::size_t i : cls.short_types)
    tail = std::max(tail, poisson_tail_cap(inst.supplier_rates[i] / inst.abandonment_rate, opt.tail_tol));
  return std::min(nlp_formula_cap(inst.n(), acc, cls.kappa), tail);
}

// Joint short-queue states in mixed radix (cap + 1), first short queue fastest.
struct StateSpace {
  std::size_t queues = 0;
  std::size_t cap = 0;
  std::size_t size = 1;

  StateSpace() = default;
  StateSpace(std::size_t q, std::size_t c) : queues(q), cap(c) {
    for (std::size_t k = 0; k < q; ++k) size *= c + 1;
  }

  std::vector<std::size_t> decode(std::size_t s) const {
    std::vector<std::size_t> l(queues);
    for (std::size_t k = 0; k < queues; ++k) {
      l[k] = s % (cap + 1);
      s /= cap + 1;
    }
    return l;
  }

  std::size_t encode(const std::vector<std::size_t>& l) const {
    std::size_t s = 0;
    for (std::size_t k = queues; k-- > 0;) s = s * (cap + 1) + l[k];
    return s;
  }

  std::size_t stride(std::size_t k) const {
    std::size_t st = 1;
    for (std::size_t t = 0; t < k; ++t) st *= cap + 1;
    return st;
  }
};

// Partial assignments: owner[a][j] = 0 for unassigned, k + 1 for short queue k.
inline std::vector<std::vector<std::uint8_t>> enumerate_assignments(std::size_t short_queues, std::size_t m) {
  std::size_t count = 1;
  for (std::size_t j = 0; j < m; ++j) count *= short_queues + 1;
  std::vector<std::vector<std::uint8_t>> owner(count, std::vector<std::uint8_t>(m, 0));
  for (std::size_t a = 0; a < count; ++a) {
    std::size_t r = a;
    for (std::size_t j = 0; j < m; ++j) {
      owner[a][j] = static_cast<std::uint8_t>(r % (short_queues + 1));
      r /= short_queues + 1;
    }
  }
  return owner;
}

struct NlpModel {
  LinearProgram lp;
  Classification classification;
  StateSpace states;
  std::vector<std::vector<std::uint8_t>> owner;
  std::vector<std::vector<double>> assigned_rate;  // [a][k]: customer rate assigned to short queue k
  std::vector<std::vector<double>> assigned_cost;  // [a][k]: cost rate of that assignment
  std::size_t y_offset = 0;
  std::size_t normalization_row = 0;
  std::size_t first_capacity_row = 0;
  std::size_t first_contention_row = 0;
  std::size_t throughput_row = 0;
  double tau_target = 0.0;

  std::size_t assignments() const { return owner.size(); }
  std::size_t x(std::size_t s, std::size_t a) const { return s * owner.size() + a; }
  std::size_t y(std::size_t long_pos, std::size_t j) const {
    return y_offset + long_pos * owner.front().size() + j;
  }
};

inline std::size_t nlp_variable_count(std::size_t short_queues, std::size_t long_queues, std::size_t m, std::size_t cap) {
  double v = 1.0;
  for (std::size_t k = 0; k < short_queues; ++k) v *= static_cast<double>(cap + 1);
  v *= std::pow(static_cast<double>(short_queues + 1), static_cast<double>(m));
  v += static_cast<double>(long_queues * m);
  return v > 1e18 ? static_cast<std::size_t>(-1) : static_cast<std::size_t>(v);
}

// Assignment columns that give a customer to an empty short queue are fixed at zero,
// so every solution is non-degenerate by construction.
inline NlpModel build_nlp(const Instance& inst, double tau_target, const Classification& cls, std::size_t cap,
                          std::size_t variable_budget = 400000) {
  inst.validate();
  const std::size_t ns = cls.short_types.size(), nl = cls.long_types.size(), m = inst.m();
  if (ns > 0 && cap < 1) throw InputError("cap must be at least 1");
  if (ns > 254) throw InputError("too many short queues");
  const std::size_t nvars = nlp_variable_count(ns, nl, m, cap);
  if (nvars > variable_budget)
    throw InputError("Network LP too large: " + std::to_string(ns) + " short queues, cap " + std::to_string(cap) +
                     ", " + std::to_string(m) + " customer types -> " + std::to_string(nvars) +
                     " variables (budget " + std::to_string(variable_budget) + ")");
  NlpModel d;
  d.classification = cls;
  d.tau_target = tau_target;
  d.states = ns ? StateSpace(ns, cap) : StateSpace(0, 0);
  d.owner = enumerate_assignments(ns, m);
  const std::size_t A = d.owner.size(), S = d.states.size;
  const double mu = inst.abandonment_rate;
  std::vector<double> lambda(ns);
  for (std::size_t k = 0; k < ns; ++k) lambda[k] = inst.supplier_rates[cls.short_types[k]];
  d.assigned_rate.assign(A, std::vector<double>(ns, 0.0));
  d.assigned_cost.assign(A, std::vector<double>(ns, 0.0));
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t j = 0; j < m; ++j)
      if (const std::size_t o = d.owner[a][j]) {
        d.assigned_rate[a][o - 1] += inst.customer_rates[j];
        d.assigned_cost[a][o - 1] += inst.customer_rates[j] * inst.costs[cls.short_types[o - 1]][j];
      }

  std::vector<std::vector<double>> hint(ns);
  for (std::size_t k = 0; k < ns; ++k) hint[k] = occupancy_scale_hint(lambda[k], mu, inst.tau_max(), cap);
  for (std::size_t s = 0; s < S; ++s) {
    const auto l = d.states.decode(s);
    double h = 1.0;
    for (std::size_t k = 0; k < ns; ++k) h *= hint[k][l[k]];
    for (std::size_t a = 0; a < A; ++a) {
      bool degenerate = false;
      double cost = 0.0;
      for (std::size_t k = 0; k < ns; ++k) {
        if (d.assigned_rate[a][k] == 0.0) continue;
        if (l[k] == 0) degenerate = true;
        cost += d.assigned_cost[a][k];
      }
      d.lp.add_variable(0.0, degenerate ? 0.0 : kInf, degenerate ? 0.0 : cost);
      d.lp.variables.back().scale = std::max(h, 1e-250);
    }
  }
  d.y_offset = d.lp.num_variables();
  for (std::size_t p = 0; p < nl; ++p)
    for (std::size_t j = 0; j < m; ++j)
      d.lp.add_variable(0.0, kInf, inst.customer_rates[j] * inst.costs[cls.long_types[p]][j],
                        "y_" + std::to_string(cls.long_types[p]) + "_" + std::to_string(j));

  if (ns > 0) {
    // Global balance: each column sends its outflow to neighbouring states.
    for (std::size_t s = 0; s < S; ++s) d.lp.add_constraint(Relation::equal, 0.0);
    for (std::size_t s = 0; s < S; ++s) {
      const auto l = d.states.decode(s);
      std::size_t total = 0;
      for (std::size_t k = 0; k < ns; ++k) total += l[k];
      for (std::size_t a = 0; a < A; ++a) {
        const std::size_t v = d.x(s, a);
        if (d.lp.variables[v].upper == 0.0) continue;
        double out = static_cast<double>(total) * mu;
        for (std::size_t k = 0; k < ns; ++k) {
          if (l[k] < cap) {
            out += lambda[k];
            d.lp.add_term(s + d.states.stride(k), v, lambda[k]);
          }
          if (l[k] >= 1) {
            const double down = d.assigned_rate[a][k] + static_cast<double>(l[k]) * mu;
            out += d.assigned_rate[a][k];
            d.lp.add_term(s - d.states.stride(k), v, down);
          }
        }
        d.lp.add_term(s, v, -out);
      }
    }
  }
  d.normalization_row = d.lp.add_constraint(Relation::equal, 1.0, "normalization");
  for (std::size_t v = 0; v < d.y_offset; ++v)
    if (d.lp.variables[v].upper != 0.0) d.lp.add_term(d.normalization_row, v, 1.0);
  d.first_capacity_row = d.lp.num_constraints();
  for (std::size_t p = 0; p < nl; ++p) {
    const auto row = d.lp.add_constraint(Relation::less_equal, inst.supplier_rates[cls.long_types[p]],
                                         "capacity_" + std::to_string(cls.long_types[p]));
    for (std::size_t j = 0; j < m; ++j) d.lp.add_term(row, d.y(p, j), inst.customer_rates[j]);
  }
  d.first_contention_row = d.lp.num_constraints();
  for (std::size_t j = 0; j < m; ++j) {
    const auto row = d.lp.add_constraint(Relation::less_equal, 1.0, "contention_" + std::to_string(j));
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t a = 0; a < A; ++a)
        if (d.owner[a][j] && d.lp.variables[d.x(s, a)].upper != 0.0) d.lp.add_term(row, d.x(s, a), 1.0);
    for (std::size_t p = 0; p < nl; ++p) d.lp.add_term(row, d.y(p, j), 1.0);
  }
  d.throughput_row = d.lp.add_constraint(Relation::greater_equal, tau_target, "throughput");
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t a = 0; a < A; ++a) {
      const std::size_t v = d.x(s, a);
      if (d.lp.variables[v].upper == 0.0) continue;
      double g = 0.0;
      for (std::size_t k = 0; k < ns; ++k) g += d.assigned_rate[a][k];
      d.lp.add_term(d.throughput_row, v, g);
    }
  for (std::size_t p = 0; p < nl; ++p)
    for (std::size_t j = 0; j < m; ++j) d.lp.add_term(d.throughput_row, d.y(p, j), inst.customer_rates[j]);
  return d;
}

struct NlpSolution {
  std::size_t cap = 0;
  Classification classification;
  StateSpace states;
  std::vector<std::vector<std::uint8_t>> owner;
  std::vector<std::vector<double>> x;  // [state][assignment]
  Matrix y;                            // [long position][customer]
  std::vector<std::size_t> contentious;
  double epsilon = 0.0;
  double tau_target = 0.0;
  double objective = 0.0;
  double throughput = 0.0;

  std::size_t short_queues() const { return classification.short_types.size(); }
  std::size_t m() const { return owner.empty() ? 0 : owner.front().size(); }

  // Stationary law of the joint short-queue state.
  std::vector<double> short_marginals() const {
    std::vector<double> p(x.size(), 0.0);
    for (std::size_t s = 0; s < x.size(); ++s)
      for (double v : x[s]) p[s] += v;
    return p;
  }

  // Probability mass of assignments covering each customer type.
  std::vector<double> short_mass() const {
    std::vector<double> w(m(), 0.0);
    for (const auto& row : x)
      for (std::size_t a = 0; a < row.size(); ++a)
        for (std::size_t j = 0; j < m(); ++j)
          if (owner[a][j]) w[j] += row[a];
    return w;
  }

  bool is_contentious(std::size_t j) const {
    return std::find(contentious.begin(), contentious.end(), j) != contentious.end();
  }
};

inline std::vector<std::size_t> contentious_set(const std::vector<std::vector<double>>& x,
                                                const std::vector<std::vector<std::uint8_t>>& owner, double epsilon) {
  const std::size_t m = owner.empty() ? 0 : owner.front().size();
  std::vector<double> w(m, 0.0);
  for (const auto& row : x)
    for (std::size_t a = 0; a < row.size(); ++a)
      for (std::size_t j = 0; j < m; ++j)
        if (owner[a][j]) w[j] += row[a];
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < m; ++j)
    if (w[j] >= epsilon) out.push_back(j);
  return out;
}

// Moves mass that assigns a customer to an empty short queue onto the assignment with
// those customers released. Flows, cost and throughput are unchanged. Returns the mass moved.
inline double enforce_nondegenerate(NlpSolution& sol) {
  const std::size_t ns = sol.short_queues(), m = sol.m();
  double moved = 0.0;
  for (std::size_t s = 0; s < sol.x.size(); ++s) {
    const auto l = sol.states.decode(s);
    for (std::size_t a = 0; a < sol.owner.size(); ++a) {
      if (sol.x[s][a] == 0.0) continue;
      std::size_t target = 0, radix = 1;
      bool bad = false;
      for (std::size_t j = 0; j < m; ++j) {
        std::size_t o = sol.owner[a][j];
        if (o && l[o - 1] == 0) {
          o = 0;
          bad = true;
        }
        target += o * radix;
        radix *= ns + 1;
      }
      if (!bad) continue;
      sol.x[s][target] += sol.x[s][a];
      moved += sol.x[s][a];
      sol.x[s][a] = 0.0;
    }
  }
  return moved;
}

inline NlpSolution nlp_solution_from_lp(const Instance& inst, const NlpModel& d, const LpSolution& lp,
                                        const Accuracy& acc) {
  NlpSolution s;
  s.cap = d.states.cap;
  s.classification = d.classification;
  s.states = d.states;
  s.owner = d.owner;
  s.epsilon = acc.epsilon;
  s.tau_target = d.tau_target;
  const std::size_t A = d.assignments(), ns = d.classification.short_types.size(), m = inst.m();
  s.x.assign(d.states.size, std::vector<double>(A, 0.0));
  for (std::size_t st = 0; st < d.states.size; ++st)
    for (std::size_t a = 0; a < A; ++a) s.x[st][a] = std::max(0.0, lp.primal[d.x(st, a)]);
  enforce_nondegenerate(s);
  s.y.assign(d.classification.long_types.size(), std::vector<double>(m, 0.0));
  for (std::size_t p = 0; p < s.y.size(); ++p)
    for (std::size_t j = 0; j < m; ++j) s.y[p][j] = std::max(0.0, lp.primal[d.y(p, j)]);
  for (std::size_t st = 0; st < d.states.size; ++st) {
    const auto l = d.states.decode(st);
    for (std::size_t a = 0; a < A; ++a)
      for (std::size_t k = 0; k < ns; ++k)
        if (l[k] >= 1) {
          s.objective += s.x[st][a] * d.assigned_cost[a][k];
          s.throughput += s.x[st][a] * d.assigned_rate[a][k];
        }
  }
  for (std::size_t p = 0; p < s.y.size(); ++p)
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t i = d.classification.long_types[p];
      s.objective += inst.customer_rates[j] * inst.costs[i][j] * s.y[p][j];
      s.throughput += inst.customer_rates[j] * s.y[p][j];
    }
  s.contentious = contentious_set(s.x, s.owner, acc.epsilon);
  return s;
}

// Largest violation of the global balance, normalization, capacity and contention rows.
inline double nlp_residual(const Instance& inst, const NlpSolution& sol) {
  const NlpModel d = build_nlp(inst, sol.tau_target, sol.classification, sol.cap, static_cast<std::size_t>(-1));
  std::vector<double> v(d.lp.num_variables(), 0.0);
  for (std::size_t s = 0; s < sol.x.size(); ++s)
    for (std::size_t a = 0; a < sol.owner.size(); ++a) v[d.x(s, a)] = sol.x[s][a];
  for (std::size_t p = 0; p < sol.y.size(); ++p)
    for (std::size_t j = 0; j < inst.m(); ++j) v[d.y(p, j)] = sol.y[p][j];
  double worst = 0.0;
  for (std::size_t r = 0; r < d.lp.num_constraints(); ++r) {
    if (r == d.throughput_row) continue;
    const auto& c = d.lp.constraints[r];
    const double act = d.lp.row_activity(r, v);
    double viol = 0.0;
    if (c.rel == Relation::equal) viol = std::abs(act - c.rhs);
    else if (c.rel == Relation::less_equal) viol = std::max(0.0, act - c.rhs);
    else viol = std::max(0.0, c.rhs - act);
    worst = std::max(worst, viol);
  }
  return worst;
}

struct KappaTrial {
  int kappa = 0;
  std::size_t cap = 0;
  LpStatus status = LpStatus::infeasible;
  double objective = kInf;
  std::string note;
};

struct NlpResult {
  bool feasible = false;
  bool within_cost_cap = false;
  bool reduced_target_retry = false;
  std::string certificate;
  NlpSolution solution;
  std::vector<KappaTrial> trials;
};

inline NlpResult solve_nlp_with(const Instance& inst, double tau_target, const Classification& cls, std::size_t cap,
                                const Accuracy& acc, std::size_t variable_budget = 400000) {
  NlpResult r;
  const NlpModel d = build_nlp(inst, tau_target, cls, cap, variable_budget);
  const LpSolution lp = solve(d.lp);
  r.trials.push_back({cls.kappa, cap, lp.status, lp.optimal() ? lp.objective : kInf, {}});
  if (lp.status == LpStatus::numerical_failure) throw NumericalError("Network LP solve failed numerically");
  if (!lp.optimal()) {
    r.certificate = "throughput target " + std::to_string(tau_target) + " is not attainable with kappa " +
                    std::to_string(cls.kappa) + " and cap " + std::to_string(cap);
    return r;
  }
  r.feasible = true;
  r.solution = nlp_solution_from_lp(inst, d, lp, acc);
  return r;
}

// Enumerates kappa, keeping the feasible Network LP with the smallest objective (ties: smallest kappa).
inline NlpResult choose_kappa(const Instance& inst, double tau_target, const Accuracy& acc,
                              const NlpOptions& opt = {}) {
  const int kmax = max_kappa(inst.n(), acc);
  std::vector<NlpResult> runs(static_cast<std::size_t>(kmax));
  parallel_for(runs.size(), opt.jobs, [&](std::size_t k) {
    const auto cls = classify(inst, acc, static_cast<int>(k) + 1);
    const std::size_t cap = nlp_cap(inst, acc, cls, opt);
    if (nlp_variable_count(cls.short_types.size(), cls.long_types.size(), inst.m(), cap) > opt.variable_budget) {
      runs[k].trials.push_back({cls.kappa, cap, LpStatus::infeasible, kInf, "skipped: exceeds variable budget"});
      return;
    }
    runs[k] = solve_nlp_with(inst, tau_target, cls, cap, acc, opt.variable_budget);
  });
  NlpResult best;
  for (auto& r : runs) {
    best.trials.insert(best.trials.end(), r.trials.begin(), r.trials.end());
    if (r.feasible && (!best.feasible || r.solution.objective < best.solution.objective - 1e-12)) {
      best.feasible = true;
      best.solution = std::move(r.solution);
    }
  }
  if (!best.feasible) {
    best.certificate = "throughput target " + std::to_string(tau_target) + " is not attainable for any kappa in [1, " +
                       std::to_string(kmax) + "]";
    if (tau_target > inst.tau_max()) best.certificate += " (exceeds total customer rate)";
  }
  return best;
}

// Network LP at (1 - eps) tau*. When removing mid-rate types makes the target unattainable,
// retries once at (1 - eps)^2 tau* and flags the retry.
inline NlpResult solve_nlp(const Instance& inst, const Target& target, const Accuracy& acc, const NlpOptions& opt = {}) {
  const double tau = (1.0 - acc.epsilon) * target.throughput_floor;
  NlpResult r = choose_kappa(inst, tau, acc, opt);
  if (!r.feasible && tau <= inst.tau_max()) {
    bool any_removed = false;
    for (int k = 1; k <= max_kappa(inst.n(), acc); ++k) any_removed |= !classify(inst, acc, k).removed.empty();
    if (any_removed) {
      log(LogLevel::warn, "target unattainable after removing mid-rate supplier types; retrying at (1-eps) tau");
      auto trials = r.trials;
      r = choose_kappa(inst, (1.0 - acc.epsilon) * tau, acc, opt);
      r.trials.insert(r.trials.begin(), trials.begin(), trials.end());
      r.reduced_target_retry = true;
    }
  }
  if (r.feasible) {
    r.within_cost_cap = r.solution.objective <= target.cost_cap * (1.0 + 1e-12);
    if (!r.within_cost_cap)
      r.certificate = "Network LP cost " + std::to_string(r.solution.objective) + " exceeds the cost cap " +
                      std::to_string(target.cost_cap);
  }
  return r;
}

inline nlohmann::json to_json(const Classification& c) {
  return {{"kappa", c.kappa},         {"delta", c.delta},           {"short_cutoff", c.short_cutoff},
          {"long_cutoff", c.long_cutoff}, {"short", c.short_types}, {"long", c.long_types},
          {"removed", c.removed}};
}

inline Classification classification_from_json(const nlohmann::json& j) {
  Classification c;
  c.kappa = j.at("kappa").get<int>();
  c.delta = j.at("delta").get<double>();
  auto cutoff = [&](const char* key) { return j.at(key).is_null() ? kInf : j.at(key).get<double>(); };
  c.short_cutoff = cutoff("short_cutoff");
  c.long_cutoff = cutoff("long_cutoff");
  c.short_types = j.at("short").get<std::vector<std::size_t>>();
  c.long_types = j.at("long").get<std::vector<std::size_t>>();
  c.removed = j.at("removed").get<std::vector<std::size_t>>();
  return c;
}

// x is stored sparsely as [state, assignment, value] triples.
inline nlohmann::json to_json(const NlpSolution& s) {
  nlohmann::json x = nlohmann::json::array();
  for (std::size_t st = 0; st < s.x.size(); ++st)
    for (std::size_t a = 0; a < s.owner.size(); ++a)
      if (s.x[st][a] > 0.0) x.push_back({st, a, s.x[st][a]});
  return {{"cap", s.cap},
          {"classification", to_json(s.classification)},
          {"customers", s.m()},
          {"x", x},
          {"y", s.y},
          {"contentious", s.contentious},
          {"epsilon", s.epsilon},
          {"tau_target", s.tau_target},
          {"objective", s.objective},
          {"throughput", s.throughput}};
}

inline NlpSolution nlp_solution_from_json(const nlohmann::json& j) {
  NlpSolution s;
  try {
    s.cap = j.at("cap").get<std::size_t>();
    s.classification = classification_from_json(j.at("classification"));
    const std::size_t ns = s.classification.short_types.size();
    s.states = ns ? StateSpace(ns, s.cap) : StateSpace(0, 0);
    s.owner = enumerate_assignments(ns, j.at("customers").get<std::size_t>());
    s.x.assign(s.states.size, std::vector<double>(s.owner.size(), 0.0));
    for (const auto& t : j.at("x")) {
      const auto st = t.at(0).get<std::size_t>(), a = t.at(1).get<std::size_t>();
      if (st >= s.x.size() || a >= s.owner.size()) throw InputError("Network LP solution entry out of range");
      s.x[st][a] = t.at(2).get<double>();
    }
    s.y = j.at("y").get<Matrix>();
    s.contentious = j.at("contentious").get<std::vector<std::size_t>>();
    s.epsilon = j.at("epsilon").get<double>();
    s.tau_target = j.at("tau_target").get<double>();
    s.objective = j.at("objective").get<double>();
    s.throughput = j.at("throughput").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed Network LP solution: ") + e.what());
  }
  return s;
}

}  // namespace matchq
