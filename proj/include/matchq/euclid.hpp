#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "matchq/dlp.hpp"
#include "matchq/instance.hpp"
#include "matchq/lp.hpp"
#include "matchq/network.hpp"
#include "matchq/parallel.hpp"
#include "matchq/policies.hpp"
#include "matchq/rng.hpp"

namespace matchq {

struct GridCell {
  std::vector<std::int64_t> index;
  std::vector<double> origin;
  std::vector<std::size_t> suppliers;  // global indices in canonical order
  std::vector<std::size_t> customers;
  std::size_t cls = 0;
};

struct CellClass {
  std::size_t representative = 0;  // index into cells
  std::size_t multiplicity = 0;
};

struct CellDecomposition {
  std::size_t dim = 0;
  double eta = 0.0;
  std::vector<double> shift;
  bool single_cell = false;
  std::vector<GridCell> cells;  // nonempty cells only
  std::vector<CellClass> classes;
};

inline std::size_t location_dim(const Instance& inst) {
  if (!inst.locations) throw InputError("instance has no locations");
  const auto& loc = *inst.locations;
  if (loc.suppliers.empty()) throw InputError("instance has no supplier locations");
  return loc.suppliers.front().size();
}

// Cell side from the non-crossing construction; requires a finite positive cost target.
inline double grid_side(const Instance& inst, const Target& target, const Accuracy& acc) {
  if (!(target.cost_cap > 0.0) || !std::isfinite(target.cost_cap))
    throw InputError("the Euclidean pipeline needs a finite positive cost target");
  if (!(target.throughput_floor > 0.0)) throw InputError("the Euclidean pipeline needs a positive throughput target");
  const double d = static_cast<double>(location_dim(inst));
  return 16.0 * d * target.cost_cap / (acc.epsilon * acc.epsilon * target.throughput_floor);
}

namespace detail {

struct Member {
  std::vector<double> local;
  double rate;
  std::size_t index;
};

inline bool member_less(const Member& a, const Member& b) {
  if (a.local != b.local) return a.local < b.local;
  if (a.rate != b.rate) return a.rate < b.rate;
  return a.index < b.index;
}

inline bool members_equal(const std::vector<Member>& a, const std::vector<Member>& b, double tol) {
  if (a.size() != b.size()) return false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    for (std::size_t s = 0; s < a[k].local.size(); ++s)
      if (std::abs(a[k].local[s] - b[k].local[s]) > tol) return false;
    if (std::abs(a[k].rate - b[k].rate) > tol * std::max(1.0, std::abs(a[k].rate))) return false;
  }
  return true;
}

}  // namespace detail

// Cells [shift + t eta, shift + (t + 1) eta) per coordinate; cells with equal member layouts
// in local coordinates (and equal rates) form one class.
inline CellDecomposition grid_with_shift(const Instance& inst, double eta, std::vector<double> shift) {
  const std::size_t d = location_dim(inst);
  if (shift.size() != d) throw InputError("grid shift has wrong dimension");
  const auto& loc = *inst.locations;
  CellDecomposition g;
  g.dim = d;
  g.eta = eta;
  g.shift = std::move(shift);
  g.single_cell = eta >= 1.0;
  auto cell_of = [&](const std::vector<double>& x) {
    std::vector<std::int64_t> t(d, 0);
    if (!g.single_cell)
      for (std::size_t s = 0; s < d; ++s) t[s] = static_cast<std::int64_t>(std::floor((x[s] - g.shift[s]) / eta));
    return t;
  };
  std::map<std::vector<std::int64_t>, std::pair<std::vector<detail::Member>, std::vector<detail::Member>>> groups;
  auto origin_of = [&](const std::vector<std::int64_t>& t) {
    std::vector<double> o(d, 0.0);
    if (!g.single_cell)
      for (std::size_t s = 0; s < d; ++s) o[s] = g.shift[s] + static_cast<double>(t[s]) * eta;
    return o;
  };
  auto local = [&](const std::vector<double>& x, const std::vector<double>& o) {
    std::vector<double> l(d);
    for (std::size_t s = 0; s < d; ++s) l[s] = x[s] - o[s];
    return l;
  };
  for (std::size_t i = 0; i < inst.n(); ++i) {
    const auto t = cell_of(loc.suppliers[i]);
    groups[t].first.push_back({local(loc.suppliers[i], origin_of(t)), inst.supplier_rates[i], i});
  }
  for (std::size_t j = 0; j < inst.m(); ++j) {
    const auto t = cell_of(loc.customers[j]);
    groups[t].second.push_back({local(loc.customers[j], origin_of(t)), inst.customer_rates[j], j});
  }
  std::vector<std::pair<std::vector<detail::Member>, std::vector<detail::Member>>> layouts;
  for (auto& [t, members] : groups) {
    std::sort(members.first.begin(), members.first.end(), detail::member_less);
    std::sort(members.second.begin(), members.second.end(), detail::member_less);
    GridCell c;
    c.index = t;
    c.origin = origin_of(t);
    for (const auto& mb : members.first) c.suppliers.push_back(mb.index);
    for (const auto& mb : members.second) c.customers.push_back(mb.index);
    c.cls = g.classes.size();
    for (std::size_t u = 0; u < layouts.size(); ++u)
      if (detail::members_equal(layouts[u].first, members.first, 1e-9) &&
          detail::members_equal(layouts[u].second, members.second, 1e-9)) {
        c.cls = u;
        break;
      }
    if (c.cls == g.classes.size()) {
      g.classes.push_back({g.cells.size(), 0});
      layouts.push_back(members);
    }
    g.classes[c.cls].multiplicity += 1;
    g.cells.push_back(std::move(c));
  }
  return g;
}

inline CellDecomposition build_grid(const Instance& inst, const Target& target, const Accuracy& acc, CounterRng& rng) {
  const double eta = grid_side(inst, target, acc);
  std::vector<double> shift(location_dim(inst));
  for (auto& s : shift) s = eta * rng.uniform();
  return grid_with_shift(inst, eta, std::move(shift));
}

// The instance restricted to one cell, in local coordinates and canonical type order.
inline Instance cell_instance(const Instance& inst, const CellDecomposition& g, const GridCell& c) {
  Instance out;
  out.abandonment_rate = inst.abandonment_rate;
  Locations loc;
  auto local = [&](const std::vector<double>& x) {
    std::vector<double> l(g.dim);
    for (std::size_t s = 0; s < g.dim; ++s) l[s] = x[s] - c.origin[s];
    return l;
  };
  for (std::size_t i : c.suppliers) {
    out.supplier_rates.push_back(inst.supplier_rates[i]);
    loc.suppliers.push_back(local(inst.locations->suppliers[i]));
  }
  for (std::size_t j : c.customers) {
    out.customer_rates.push_back(inst.customer_rates[j]);
    loc.customers.push_back(local(inst.locations->customers[j]));
  }
  out.costs = distance_matrix(loc);
  out.locations = std::move(loc);
  return out;
}

struct ClusteredCell {
  Instance inst;
  std::vector<std::size_t> supplier_cluster;  // cell type -> clustered type
  std::vector<std::size_t> customer_cluster;
  double spacing = 0.0;
};

inline double inner_spacing(std::size_t dim, const Target& target, const Accuracy& acc) {
  return target.cost_cap * acc.epsilon / (target.throughput_floor * std::sqrt(static_cast<double>(dim)));
}

// Snaps every location to the nearest point of the inner lattice spacing * Z^d and merges
// co-located types of the same side, summing their rates.
inline ClusteredCell cluster_cell(const Instance& cell, const Target& target, const Accuracy& acc) {
  const std::size_t d = location_dim(cell);
  ClusteredCell out;
  out.spacing = inner_spacing(d, target, acc);
  out.inst.abandonment_rate = cell.abandonment_rate;
  Locations loc;
  auto snap = [&](const std::vector<double>& x) {
    std::vector<std::int64_t> k(d);
    for (std::size_t s = 0; s < d; ++s) k[s] = std::llround(x[s] / out.spacing);
    return k;
  };
  auto point = [&](const std::vector<std::int64_t>& k) {
    std::vector<double> p(d);
    for (std::size_t s = 0; s < d; ++s) p[s] = static_cast<double>(k[s]) * out.spacing;
    return p;
  };
  std::map<std::vector<std::int64_t>, std::size_t> seen;
  for (std::size_t i = 0; i < cell.n(); ++i) {
    const auto k = snap(cell.locations->suppliers[i]);
    auto [it, fresh] = seen.emplace(k, out.inst.supplier_rates.size());
    if (fresh) {
      out.inst.supplier_rates.push_back(0.0);
      loc.suppliers.push_back(point(k));
    }
    out.inst.supplier_rates[it->second] += cell.supplier_rates[i];
    out.supplier_cluster.push_back(it->second);
  }
  seen.clear();
  for (std::size_t j = 0; j < cell.m(); ++j) {
    const auto k = snap(cell.locations->customers[j]);
    auto [it, fresh] = seen.emplace(k, out.inst.customer_rates.size());
    if (fresh) {
      out.inst.customer_rates.push_back(0.0);
      loc.customers.push_back(point(k));
    }
    out.inst.customer_rates[it->second] += cell.customer_rates[j];
    out.customer_cluster.push_back(it->second);
  }
  out.inst.costs = distance_matrix(loc);
  out.inst.locations = std::move(loc);
  return out;
}

struct LocalSolution {
  bool feasible = false;
  double cost = kInf;        // relaxation cost on the clustered cell
  double throughput = 0.0;   // rate the local policy is built for
  std::unique_ptr<Policy> policy;  // over the cell's own types; null when nothing is matched
};

// Clusters the cell and solves it at (1 - eps/2) t: the single-queue LP when one supplier
// cluster remains, the Network LP otherwise.
inline LocalSolution local_phi_hat(const Instance& cell, double t, const Target& target, const Accuracy& acc,
                                   const NlpOptions& opt = {}) {
  LocalSolution r;
  if (t <= 0.0) {
    r.feasible = true;
    r.cost = 0.0;
    return r;
  }
  if (cell.n() == 0 || cell.m() == 0) return r;
  const auto cl = cluster_cell(cell, target, acc);
  const double goal = (1.0 - acc.epsilon / 2.0) * t;
  if (goal > cl.inst.tau_max()) return r;
  std::unique_ptr<Policy> inner;
  if (cl.inst.n() == 1) {
    const std::size_t cap = truncation_cap(cl.inst, Target{kInf, goal}, acc);
    const auto d = solve_dlp_at(cl.inst, goal, cap);
    if (!d.feasible) return r;
    r.cost = d.solution.objective;
    inner = std::make_unique<DlpAdaptive>(extract_policy(d.solution));
  } else {
    const auto nr = choose_kappa(cl.inst, goal, acc, opt);
    if (!nr.feasible) return r;
    r.cost = nr.solution.objective;
    inner = std::make_unique<PriorityRounding>(cl.inst.n(), nr.solution);
  }
  r.feasible = true;
  r.throughput = goal;
  r.policy = std::make_unique<MergedTypes>(cl.supplier_cluster, cl.customer_cluster, std::move(inner));
  return r;
}

struct DecompositionSolution {
  bool feasible = false;
  double tau_g = 0.0;
  std::vector<double> targets;   // discretized throughput set, zero first
  Matrix z;                      // [class][target] local cost, kInf when unattainable
  Matrix x;                      // [class][target] number of cells assigned
  std::vector<double> class_target;
  double objective = kInf;
  std::string certificate;
};

inline std::vector<double> discretized_targets(double tau_g, std::size_t cells, const Accuracy& acc) {
  const double eps = acc.epsilon, g = static_cast<double>(std::max<std::size_t>(cells, 1));
  const auto top = static_cast<std::size_t>(std::ceil(std::log(2.0 * g / eps) / std::log1p(eps)));
  std::vector<double> d{0.0};
  if (tau_g <= 0.0) return d;
  for (std::size_t k = 0; k <= top; ++k) d.push_back(eps * tau_g / (2.0 * g) * std::pow(1.0 + eps, static_cast<double>(k)));
  return d;
}

struct EuclidOptions {
  NlpOptions nlp;
  std::size_t jobs = 1;
};

// Local cost table over (class, discretized target) followed by the knapsack LP.
inline DecompositionSolution solve_decomposition(const Instance& inst, const CellDecomposition& g,
                                                 const Target& target, const Accuracy& acc, double tau_g,
                                                 const EuclidOptions& opt = {}) {
  DecompositionSolution s;
  s.tau_g = tau_g;
  s.targets = discretized_targets(tau_g, g.cells.size(), acc);
  const std::size_t U = g.classes.size(), K = s.targets.size();
  s.z.assign(U, std::vector<double>(K, kInf));
  s.x.assign(U, std::vector<double>(K, 0.0));
  s.class_target.assign(U, 0.0);
  std::vector<Instance> reps;
  for (const auto& c : g.classes) reps.push_back(cell_instance(inst, g, g.cells[c.representative]));
  parallel_for(U * K, opt.jobs, [&](std::size_t idx) {
    const std::size_t u = idx / K, k = idx % K;
    const auto loc = local_phi_hat(reps[u], s.targets[k], target, acc, opt.nlp);
    if (loc.feasible) s.z[u][k] = loc.cost;
  });
  if (tau_g <= 0.0) {
    s.feasible = true;
    s.objective = 0.0;
    return s;
  }
  LinearProgram lp;
  std::vector<std::vector<std::size_t>> var(U, std::vector<std::size_t>(K, static_cast<std::size_t>(-1)));
  for (std::size_t u = 0; u < U; ++u)
    for (std::size_t k = 0; k < K; ++k)
      if (std::isfinite(s.z[u][k])) var[u][k] = lp.add_variable(0.0, kInf, s.z[u][k]);
  for (std::size_t u = 0; u < U; ++u) {
    const auto row = lp.add_constraint(Relation::less_equal, static_cast<double>(g.classes[u].multiplicity));
    for (std::size_t k = 0; k < K; ++k)
      if (var[u][k] != static_cast<std::size_t>(-1)) lp.add_term(row, var[u][k], 1.0);
  }
  const auto thr = lp.add_constraint(Relation::greater_equal, (1.0 - acc.epsilon) * tau_g, "throughput");
  for (std::size_t u = 0; u < U; ++u)
    for (std::size_t k = 0; k < K; ++k)
      if (var[u][k] != static_cast<std::size_t>(-1)) lp.add_term(thr, var[u][k], s.targets[k]);
  const auto sol = solve(lp);
  if (sol.status == LpStatus::numerical_failure) throw NumericalError("decomposition LP solve failed numerically");
  if (!sol.optimal()) {
    s.certificate = "throughput " + std::to_string((1.0 - acc.epsilon) * tau_g) +
                    " is not attainable by non-crossing policies on this grid";
    return s;
  }
  s.feasible = true;
  s.objective = sol.objective;
  for (std::size_t u = 0; u < U; ++u) {
    for (std::size_t k = 0; k < K; ++k)
      if (var[u][k] != static_cast<std::size_t>(-1)) s.x[u][k] = std::max(0.0, sol.primal[var[u][k]]);
    double t = 0.0;
    for (std::size_t k = 0; k < K; ++k) t += s.x[u][k] * s.targets[k];
    s.class_target[u] = t / static_cast<double>(g.classes[u].multiplicity);
  }
  return s;
}

struct TauGSearch {
  double tau_g = 0.0;
  bool floored = false;  // no tested value was attainable; the floor eps * tau* is used
  DecompositionSolution solution;
};

// Largest tested throughput whose decomposition LP is feasible within (1 + eps/2) c*, by
// bisection on [eps tau*, tau*] to relative precision eps/4.
inline TauGSearch estimate_tau_g(const Instance& inst, const CellDecomposition& g, const Target& target,
                                 const Accuracy& acc, const EuclidOptions& opt = {}) {
  auto attempt = [&](double tau) {
    auto s = solve_decomposition(inst, g, target, acc, tau, opt);
    const bool ok = s.feasible && s.objective <= (1.0 + acc.epsilon / 2.0) * target.cost_cap;
    return std::make_pair(ok, std::move(s));
  };
  TauGSearch r;
  double hi = target.throughput_floor, lo = acc.epsilon * target.throughput_floor;
  if (auto [ok, s] = attempt(hi); ok) {
    r.tau_g = hi;
    r.solution = std::move(s);
    return r;
  }
  auto [lo_ok, lo_sol] = attempt(lo);
  if (!lo_ok) {
    r.tau_g = lo;
    r.floored = true;
    r.solution = std::move(lo_sol);
    return r;
  }
  r.solution = std::move(lo_sol);
  while (hi - lo > acc.epsilon / 4.0 * lo) {
    const double mid = 0.5 * (lo + hi);
    auto [ok, s] = attempt(mid);
    if (ok) {
      lo = mid;
      r.solution = std::move(s);
    } else {
      hi = mid;
    }
  }
  r.tau_g = lo;
  return r;
}

struct AssembledPolicy {
  std::unique_ptr<CellComposite> policy;
  std::vector<double> cell_target;   // per cell
  std::vector<double> class_cost;    // local relaxation cost per class at its rounded target
  std::vector<char> class_feasible;
  double cost_estimate = 0.0;        // sum over cells
  double throughput_estimate = 0.0;
};

// One local policy per class at its rounded target, copied into every cell of that class.
inline AssembledPolicy assemble_policy(const Instance& inst, const CellDecomposition& g,
                                       const DecompositionSolution& sol, const Target& target, const Accuracy& acc,
                                       const EuclidOptions& opt = {}) {
  AssembledPolicy a;
  const std::size_t U = g.classes.size();
  std::vector<LocalSolution> local(U);
  parallel_for(U, opt.jobs, [&](std::size_t u) {
    local[u] = local_phi_hat(cell_instance(inst, g, g.cells[g.classes[u].representative]), sol.class_target[u],
                             target, acc, opt.nlp);
  });
  std::vector<CellComposite::Cell> cells;
  for (const auto& c : g.cells) {
    const auto& l = local[c.cls];
    cells.push_back({c.suppliers, c.customers, l.feasible && l.policy ? l.policy->clone() : nullptr});
    a.cell_target.push_back(sol.class_target[c.cls]);
    if (l.feasible) {
      a.cost_estimate += l.cost;
      a.throughput_estimate += l.throughput;
    }
  }
  for (const auto& l : local) {
    a.class_cost.push_back(l.cost);
    a.class_feasible.push_back(l.feasible ? 1 : 0);
  }
  a.policy = std::make_unique<CellComposite>(inst.n(), inst.m(), std::move(cells));
  return a;
}

struct EuclidResult {
  CellDecomposition grid;
  TauGSearch search;
  AssembledPolicy assembled;
};

inline EuclidResult solve_euclidean(const Instance& inst, const Target& target, const Accuracy& acc,
                                    std::uint64_t seed, const EuclidOptions& opt = {}) {
  CounterRng rng(seed);
  EuclidResult r;
  r.grid = build_grid(inst, target, acc, rng);
  r.search = estimate_tau_g(inst, r.grid, target, acc, opt);
  if (!r.search.solution.feasible) throw InfeasibleError(r.search.solution.certificate);
  r.assembled = assemble_policy(inst, r.grid, r.search.solution, target, acc, opt);
  return r;
}

inline nlohmann::json to_json(const CellDecomposition& g) {
  nlohmann::json cells = nlohmann::json::array(), classes = nlohmann::json::array();
  for (const auto& c : g.cells)
    cells.push_back({{"index", c.index}, {"origin", c.origin}, {"suppliers", c.suppliers},
                     {"customers", c.customers}, {"class", c.cls}});
  for (const auto& c : g.classes) classes.push_back({{"representative", c.representative}, {"multiplicity", c.multiplicity}});
  return {{"dim", g.dim}, {"eta", g.eta}, {"shift", g.shift}, {"single_cell", g.single_cell},
          {"cells", cells}, {"classes", classes}};
}

inline nlohmann::json to_json(const DecompositionSolution& s) {
  auto finite = [](const Matrix& m) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& row : m) {
      nlohmann::json r = nlohmann::json::array();
      for (double v : row) r.push_back(std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr));
      out.push_back(r);
    }
    return out;
  };
  return {{"feasible", s.feasible}, {"tau_g", s.tau_g}, {"targets", s.targets}, {"z", finite(s.z)},
          {"x", s.x}, {"class_target", s.class_target},
          {"objective", std::isfinite(s.objective) ? nlohmann::json(s.objective) : nlohmann::json(nullptr)},
          {"certificate", s.certificate}};
}

}  // namespace matchq
