// Acceptance suite: one PASS/FAIL line per criterion. Run all, or pass criterion numbers.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "matchq/ctmc.hpp"
#include "matchq/dlp.hpp"
#include "matchq/euclid.hpp"
#include "matchq/network.hpp"
#include "matchq/oracle.hpp"
#include "matchq/policies.hpp"
#include "matchq/sim.hpp"
#include "matchq/static_policy.hpp"

using namespace matchq;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (!detail.empty()) detail += "; ";
    detail += (ok ? "" : "!") + what;
  }
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Independent Poisson pmf via lgamma.
double poisson_pmf(double mean, std::size_t k) {
  const double kk = static_cast<double>(k);
  return std::exp(kk * std::log(mean) - mean - std::lgamma(kk + 1.0));
}

Outcome hard_instance_gap() {
  Outcome o;
  std::vector<double> grid;
  // The curve is evaluated from the first positive abandonment rate; zero abandonment has no stationary law.
  for (int k = 1; k <= 60; ++k) grid.push_back(0.05 * k);
  const auto pts = adaptivity_gap(hard_instance(), 3.0, grid, 0);
  double best = 0.0, best_mu = 0.0, worst_edge = 0.0;
  bool all_feasible = true;
  for (const auto& p : pts) {
    all_feasible &= p.feasible;
    if (p.feasible && std::isfinite(p.gap) && p.gap > best) best = p.gap, best_mu = p.mu;
    if (p.mu <= 0.5 + 1e-9 || p.mu >= 2.75 - 1e-9) worst_edge = std::max(worst_edge, p.gap);
  }
  const double crossover = zero_cost_crossover(hard_instance(), 3.0);
  o.require(all_feasible, "all grid points feasible");
  o.require(best >= 2.08, fmt("grid max gap %.4f at mu=%.2f >= 2.08", best, best_mu));
  o.require(worst_edge <= 1.05, fmt("edge gap %.4f <= 1.05", worst_edge));
  o.require(crossover >= 0.7 && crossover <= 0.85, fmt("crossover %.6f in [0.7,0.85]", crossover));
  const auto near = adaptivity_gap_at(hard_instance(), 3.0, crossover + 2e-4);
  o.detail += fmt("; diagnostic: gap %.4f at mu=%.5f just above the crossover", near.gap, near.mu);
  return o;
}

Outcome random_study() {
  Outcome o;
  const auto s = random_instance_study(1000, default_tau_grid(), 7, 0);
  o.require(s.mean_excess >= 0.017 && s.mean_excess <= 0.047,
            fmt("mean excess %.4f in [0.017,0.047]", s.mean_excess));
  o.require(s.frac_above_5pct >= 0.20 && s.frac_above_5pct <= 0.35,
            fmt("fraction above 5%% %.4f in [0.20,0.35]", s.frac_above_5pct));
  o.detail += fmt("; %zu pairs, %zu infinite", s.pairs, s.infinite_gaps);
  return o;
}

struct SingleQueueCase {
  Instance inst;
  double tau;
  std::size_t cap;
};

std::vector<SingleQueueCase> single_queue_cases() {
  CounterRng rng(2024, 0);
  std::vector<SingleQueueCase> out;
  for (int k = 0; k < 100; ++k) {
    const std::size_t m = 1 + static_cast<std::size_t>(k % 4);
    Instance inst{{0.5 + 5.0 * rng.uniform()}, {}, {{}}, 0.5 + rng.uniform(), std::nullopt};
    for (std::size_t j = 0; j < m; ++j) {
      inst.customer_rates.push_back(0.3 + 3.0 * rng.uniform());
      inst.costs[0].push_back(std::round(4.0 * rng.uniform()) / 2.0);
    }
    const double load = inst.supplier_rates[0] / inst.abandonment_rate;
    const std::size_t cap =
        std::min<std::size_t>(60, std::max<std::size_t>(10 + static_cast<std::size_t>(k % 51), poisson_tail_cap(load, 1e-12)));
    const double tau = greedy_throughput(inst, cap) * (0.2 + 0.75 * rng.uniform());
    out.push_back({std::move(inst), tau, cap});
  }
  return out;
}

Outcome oracle_equivalence() {
  Outcome o;
  double worst = 0.0;
  std::size_t failures = 0;
  for (const auto& c : single_queue_cases()) {
    const auto full = adaptive_optimum_at(c.inst, c.tau, c.cap);
    const auto nested = solve_dlp_at(c.inst, c.tau, full.cap);
    if (!full.feasible || !nested.feasible) {
      ++failures;
      continue;
    }
    worst = std::max(worst, std::abs(full.cost - nested.solution.objective));
  }
  o.require(failures == 0, fmt("%zu infeasible cases", failures));
  o.require(worst <= 1e-5, fmt("max |full - nested| %.3g <= 1e-5", worst));
  return o;
}

Outcome dual_structure() {
  Outcome o;
  const double tol = 1e-7;
  std::size_t bad_sign = 0, bad_mono = 0, bad_concave = 0, bad_gap = 0, n = 0;
  for (const auto& c : single_queue_cases()) {
    const auto r = solve_dlp_at(c.inst, c.tau, effective_oracle_cap(c.inst, c.cap));
    if (!r.feasible) continue;
    ++n;
    const auto& d = r.duals.delta;
    for (std::size_t l = 0; l < d.size(); ++l) {
      bad_sign += d[l] > tol;
      if (l + 1 < d.size()) bad_mono += d[l] > d[l + 1] + tol;
      if (l + 2 < d.size()) bad_concave += (d[l + 2] - d[l + 1]) > (d[l + 1] - d[l]) + tol;
    }
    bad_gap += std::abs(r.duals.strong_duality_gap) > 1e-6 * (1.0 + std::abs(r.solution.objective));
  }
  o.require(n == 100, fmt("%zu of 100 solved", n));
  o.require(bad_gap == 0, fmt("%zu duals not optimal", bad_gap));
  o.require(bad_sign == 0, fmt("%zu positive entries", bad_sign));
  o.require(bad_mono == 0, fmt("%zu decreasing steps", bad_mono));
  o.require(bad_concave == 0, fmt("%zu convex kinks", bad_concave));
  return o;
}

Outcome empty_probability() {
  Outcome o;
  for (double eps : {0.1, 0.04, 0.01}) {
    const double p0 = drift_chain(1.0 / eps)[0];
    o.require(p0 <= std::sqrt(eps), fmt("eps=%.2f p0=%.4g <= %.4g", eps, p0, std::sqrt(eps)));
  }
  return o;
}

Outcome poisson_stationarity() {
  Outcome o;
  for (double lambda : {0.5, 2.0, 10.0}) {
    const auto pi = birth_death_stationary({[lambda](std::size_t) { return lambda; },
                                            [](std::size_t l) { return static_cast<double>(l); }, std::nullopt, 1.0});
    double worst = 0.0;
    for (std::size_t l = 0; l < pi.size(); ++l) worst = std::max(worst, std::abs(pi[l] / poisson_pmf(lambda, l) - 1.0));
    o.require(worst <= 1e-9, fmt("lambda=%g max rel err %.2g over %zu states", lambda, worst, pi.size()));
  }
  return o;
}

Outcome drift_bound() {
  Outcome o;
  for (double lambda : {1.0, 10.0, 100.0, 1e4}) {
    const auto b = expected_queue_bound_check(lambda);
    o.require(b.mean <= b.bound, fmt("lambda=%g mean %.4f <= %.4f", lambda, b.mean, b.bound));
  }
  return o;
}

Outcome priority_rounding_dynamics() {
  Outcome o;
  const Instance desk{{1.5, 2.0, 1200.0}, {2.0, 3.0}, {{0.1, 0.5}, {0.3, 0.2}, {1.0, 1.0}}, 1.0, std::nullopt};
  const double eps = 0.3;
  const auto r = solve_nlp(desk, {kInf, 4.0}, Accuracy{eps});
  if (!r.feasible) {
    o.require(false, "Network LP infeasible: " + r.certificate);
    return o;
  }
  const auto& sol = r.solution;
  const auto& cls = sol.classification;
  o.require(!cls.short_types.empty() && !cls.long_types.empty(),
            fmt("%zu short, %zu long", cls.short_types.size(), cls.long_types.size()));
  const PriorityRounding policy(desk.n(), sol);
  std::vector<SimMetrics> runs;
  for (double horizon : {2.5e5, 5e5, 1e6}) {
    SimConfig cfg;
    cfg.horizon = horizon;
    cfg.replications = 4;
    cfg.seed = 7;
    cfg.jobs = 0;
    runs.push_back(simulate(desk, policy, cfg));
  }
  const auto& last = runs.back();
  const auto conv = check_short_convergence(last, sol);
  o.require(conv.tv <= 0.03 && !conv.low_confidence, fmt("(a) TV %.4f <= 0.03", conv.tv));
  for (std::size_t i : cls.long_types) {
    const auto e = last.empty_fraction[i];
    o.require(e.value <= eps + 3.0 * e.se, fmt("(b) empty[%zu] %.4f", i, e.value));
  }
  const auto stab = check_buffer_stability(runs);
  double max_growth = 0.0;
  for (double g : stab.growth) max_growth = std::max(max_growth, g);
  o.require(stab.pass, fmt("(c) buffers flat, max log2 growth %.3f", max_growth));
  for (std::size_t pos = 0; pos < cls.long_types.size(); ++pos) {
    const std::size_t i = cls.long_types[pos];
    for (std::size_t j = 0; j < desk.m(); ++j) {
      const double base = desk.customer_rates[j] * sol.y[pos][j];
      const auto e = last.match_rate[i][j];
      const bool ok = e.value >= (1.0 - 6.0 * eps) * base - 3.0 * e.se && e.value <= (1.0 - eps) * base + 3.0 * e.se;
      o.require(ok, fmt("(d) rate[%zu][%zu] %.4f in [%.4f, %.4f] +-3x%.4f", i, j, e.value, (1.0 - 6.0 * eps) * base,
                        (1.0 - eps) * base, e.se));
    }
  }
  return o;
}

Outcome slp_greedy_check() {
  Outcome o;
  CounterRng rng(99, 0);
  double worst = 0.0;
  std::size_t failures = 0;
  for (int k = 0; k < 50; ++k) {
    Instance inst;
    const std::size_t n = 1 + rng() % 4, m = 1 + rng() % 4;
    for (std::size_t i = 0; i < n; ++i) inst.supplier_rates.push_back(0.2 + 3.0 * rng.uniform());
    for (std::size_t j = 0; j < m; ++j) inst.customer_rates.push_back(0.2 + 3.0 * rng.uniform());
    inst.costs.assign(n, std::vector<double>(m));
    for (auto& row : inst.costs)
      for (double& c : row) c = rng.uniform();
    const double tau = slp_max_throughput(inst) * (0.1 + 0.85 * rng.uniform());
    const auto g = slp_greedy(inst, tau);
    const auto lp = solve(build_slp(inst, tau));
    if (!g.feasible || !lp.optimal()) {
      ++failures;
      continue;
    }
    worst = std::max(worst, std::abs(g.objective - lp.objective));
  }
  o.require(failures == 0, fmt("%zu unsolved", failures));
  o.require(worst <= 1e-6, fmt("max |greedy - LP| %.3g <= 1e-6", worst));
  return o;
}

// Forwards to a composite policy and records every decision that crosses a cell boundary.
class CrossingAudit final : public Policy {
 public:
  explicit CrossingAudit(const CellComposite& inner) : inner_(inner.clone()), view_(inner) {}
  CrossingAudit(const CrossingAudit& o) : inner_(o.inner_->clone()), view_(o.view_), crossings_(o.crossings_) {}

  std::unique_ptr<Policy> clone() const override { return std::make_unique<CrossingAudit>(*this); }
  std::string type() const override { return inner_->type(); }
  nlohmann::json to_json() const override { return inner_->to_json(); }
  std::size_t suppliers() const override { return inner_->suppliers(); }
  std::size_t customers() const override { return inner_->customers(); }
  bool lazy(std::size_t i) const override { return inner_->lazy(i); }
  bool admit(std::size_t i, std::span<const std::size_t> q) const override { return inner_->admit(i, q); }
  PolicyDecision on_customer(std::size_t j, std::span<const std::size_t> q, CounterRng& rng) override {
    const auto d = inner_->on_customer(j, q, rng);
    if (d.match_to && view_.cell_of_supplier(*d.match_to) != view_.cell_of_customer(j)) crossings_ += 1;
    return d;
  }
  std::vector<std::string> counter_names() const override {
    auto names = inner_->counter_names();
    names.push_back("audited_crossings");
    return names;
  }
  std::vector<double> counters() const override {
    auto v = inner_->counters();
    v.push_back(crossings_);
    return v;
  }

 private:
  std::unique_ptr<Policy> inner_;
  const CellComposite& view_;
  double crossings_ = 0.0;
};

double counter_total(const SimMetrics& m, const std::string& name) {
  for (std::size_t k = 0; k < m.counter_names.size(); ++k)
    if (m.counter_names[k] == name) {
      double s = 0.0;
      for (double x : m.counter_batches[k]) s += x;
      return s;
    }
  return -1.0;
}

Instance located_six() {
  Instance inst;
  inst.supplier_rates = {1.0, 2.0, 1.5};
  inst.customer_rates = {1.2, 1.5, 1.0};
  inst.locations = Locations{{{0.15}, {0.5}, {0.8}}, {{0.1508}, {0.5012}, {0.8005}}};
  inst.costs = distance_matrix(*inst.locations);
  return inst;
}

Outcome euclidean_pipeline() {
  Outcome o;
  const Instance inst = located_six();
  const Target target{0.0016, 1.6};
  const Accuracy acc{0.25};
  const double eps = acc.epsilon;
  const auto res = solve_euclidean(inst, target, acc, 1);
  const auto& grid = res.grid;
  const auto& dec = res.search.solution;
  o.detail = fmt("eta %.4f, %zu cells, %zu classes, tau_G %.4f%s", grid.eta, grid.cells.size(), grid.classes.size(),
                 res.search.tau_g, res.search.floored ? " (floored)" : "");

  SimConfig cfg;
  cfg.horizon = 4e4;
  cfg.replications = 4;
  cfg.seed = 11;
  cfg.jobs = 0;

  // (a) + (c): the assembled policy, audited decision by decision.
  const CrossingAudit audited(*res.assembled.policy);
  const auto full = simulate(inst, audited, cfg);
  const double crossings = counter_total(full, "audited_crossings") + counter_total(full, "cross_cell_matches");
  o.require(crossings == 0.0, fmt("(a) %.0f cross-cell matches", crossings));

  // (b): per-cell single-queue optimum at a proportional share of tau_G.
  double direct_cost = 0.0;
  bool direct_ok = true;
  std::vector<double> reach;
  std::vector<Instance> cells;
  double total_reach = 0.0;
  for (const auto& c : grid.cells) {
    cells.push_back(cell_instance(inst, grid, c));
    const auto& ci = cells.back();
    if (ci.n() > 1) direct_ok = false;
    const double r = ci.n() == 1 && ci.m() > 0 ? greedy_throughput(ci, 200) : 0.0;
    reach.push_back(r);
    total_reach += r;
  }
  for (std::size_t k = 0; direct_ok && k < cells.size(); ++k) {
    if (reach[k] == 0.0) continue;
    const double share = res.search.tau_g * reach[k] / total_reach;
    const auto d = solve_dlp_at(cells[k], share, 200);
    if (!d.feasible) direct_ok = false;
    else direct_cost += d.solution.objective;
  }
  o.require(direct_ok, "(b) direct per-cell construction available");
  if (direct_ok)
    o.require(dec.objective <= (1.0 + eps / 2.0) * direct_cost,
              fmt("(b) decomposition %.6g <= (1+eps/2) x direct %.6g", dec.objective, direct_cost));

  const double tau_floor = (1.0 - 2.0 * eps) * res.search.tau_g;
  o.require(full.throughput.value >= tau_floor - 3.0 * full.throughput.se,
            fmt("(c) throughput %.4f +- %.4f >= %.4f", full.throughput.value, full.throughput.se, tau_floor));
  const double cost_ceiling = (1.0 + eps) * target.cost_cap;
  o.require(full.cost.value <= cost_ceiling + 3.0 * full.cost.se,
            fmt("(c) cost %.6f +- %.6f <= %.6f", full.cost.value, full.cost.se, cost_ceiling));

  // (d): each cell's clustered policy on the clustered cell against its replay on the original cell.
  double c_clustered = 0.0, c_original = 0.0, var = 0.0, tput = 0.0, worst_pair = 0.0;
  for (std::size_t k = 0; k < grid.cells.size(); ++k) {
    const auto& cell = grid.cells[k];
    const auto local = local_phi_hat(cells[k], dec.class_target[cell.cls], target, acc);
    if (!local.policy) continue;
    const auto& merged = dynamic_cast<const MergedTypes&>(*local.policy);
    const auto cl = cluster_cell(cells[k], target, acc);
    for (std::size_t i = 0; i < cells[k].n(); ++i)
      for (std::size_t j = 0; j < cells[k].m(); ++j)
        worst_pair = std::max(worst_pair, std::abs(cl.inst.costs[cl.supplier_cluster[i]][cl.customer_cluster[j]] -
                                                   cells[k].costs[i][j]));
    const auto a = simulate(cl.inst, merged.inner(), cfg);
    const auto b = simulate(cells[k], merged, cfg);
    c_clustered += a.cost.value;
    c_original += b.cost.value;
    var += a.cost.se * a.cost.se + b.cost.se * b.cost.se;
    tput += b.throughput.value;
  }
  const double shift = std::abs(c_original - c_clustered), se = std::sqrt(var);
  const double allowed = eps * target.cost_cap * tput / (4.0 * target.throughput_floor);
  o.require(shift <= allowed + 3.0 * se,
            fmt("(d) cost shift %.3g <= %.3g + 3x%.2g (largest per-match shift %.3g)", shift, allowed, se, worst_pair));
  return o;
}

struct Criterion {
  int id;
  const char* name;
  double time_limit;  // seconds
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "hard-instance adaptivity gap", 120.0, hard_instance_gap},
      {2, "random-instance gap study", 900.0, random_study},
      {3, "full occupancy LP equals nested LP", 300.0, oracle_equivalence},
      {4, "dual structure", 300.0, dual_structure},
      {5, "empty probability of the drift chain", 1.0, empty_probability},
      {6, "no-match chain is Poisson", 1.0, poisson_stationarity},
      {7, "mean queue bound", 1.0, drift_bound},
      {8, "rounding policy dynamics", 600.0, priority_rounding_dynamics},
      {9, "greedy static LP", 60.0, slp_greedy_check},
      {10, "Euclidean pipeline", 600.0, euclidean_pipeline},
  };
  std::vector<int> wanted;
  for (int a = 1; a < argc; ++a) wanted.push_back(std::atoi(argv[a]));
  bool all_pass = true;
  for (const auto& c : all) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.id) == wanted.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    const double secs = seconds_since(t0);
    o.require(secs <= c.time_limit, fmt("%.1fs <= %.0fs", secs, c.time_limit));
    all_pass &= o.pass;
    std::printf("criterion %d %s: %s  [%s]\n", c.id, c.name, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return all_pass ? 0 : 1;
}
