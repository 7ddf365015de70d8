#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "matchq/dlp.hpp"
#include "matchq/instance.hpp"
#include "matchq/network.hpp"
#include "matchq/rng.hpp"
#include "matchq/static_policy.hpp"

namespace matchq {

struct PolicyDecision {
  std::optional<std::size_t> match_to;  // supplier type, or no match
};

// A policy object carries its parameters plus per-run state (buffers, counters);
// the simulator clones one per replication.
class Policy {
 public:
  virtual ~Policy() = default;

  virtual std::unique_ptr<Policy> clone() const = 0;
  virtual std::string type() const = 0;
  virtual nlohmann::json to_json() const = 0;
  virtual std::size_t suppliers() const = 0;
  virtual std::size_t customers() const = 0;

  // Lazy queues are only inspected at customer arrivals and never capped, so the
  // simulator may advance them in closed form between arrivals.
  virtual bool lazy(std::size_t /*supplier*/) const { return false; }
  virtual bool admit(std::size_t /*supplier*/, std::span<const std::size_t> /*queues*/) const { return true; }
  virtual PolicyDecision on_customer(std::size_t j, std::span<const std::size_t> queues, CounterRng& rng) = 0;

  virtual std::vector<std::string> counter_names() const { return {}; }
  virtual std::vector<double> counters() const { return {}; }
  // Virtual buffers, row-major with buffer_columns() entries per row.
  virtual std::span<const std::uint64_t> buffers() const { return {}; }
  virtual std::size_t buffer_columns() const { return 0; }
};

inline void check_compatible(const Policy& p, const Instance& inst) {
  if (p.suppliers() != inst.n() || p.customers() != inst.m())
    throw InputError("policy " + p.type() + " expects " + std::to_string(p.suppliers()) + " supplier and " +
                     std::to_string(p.customers()) + " customer types, instance has " + std::to_string(inst.n()) +
                     " and " + std::to_string(inst.m()));
}

class StaticThreshold final : public Policy {
 public:
  StaticThreshold(StaticThresholdPolicy p, std::size_t customers) : p_(std::move(p)), m_(customers) {
    if (p_.order.size() != m_) throw InputError("threshold policy order does not cover every customer type");
    if (p_.k < 1 || p_.k > m_ || p_.p < 0.0 || p_.p > 1.0) throw InputError("threshold policy (k, p) out of range");
  }

  std::unique_ptr<Policy> clone() const override { return std::make_unique<StaticThreshold>(*this); }
  std::string type() const override { return "static_threshold"; }
  std::size_t suppliers() const override { return 1; }
  std::size_t customers() const override { return m_; }
  const StaticThresholdPolicy& params() const { return p_; }

  nlohmann::json to_json() const override {
    return {{"type", type()}, {"k", p_.k}, {"p", p_.p}, {"order", p_.order}};
  }

  PolicyDecision on_customer(std::size_t j, std::span<const std::size_t> q, CounterRng& rng) override {
    const double s = p_.serve_probability(j);
    if (q[0] == 0 || s == 0.0) return {};
    if (s == 1.0 || rng.bernoulli(s)) return {0};
    return {};
  }

 private:
  StaticThresholdPolicy p_;
  std::size_t m_;
};

// Static randomized routing: customer j goes to supplier i with probability route[i][j].
class StaticRouting final : public Policy {
 public:
  explicit StaticRouting(Matrix route) : route_(std::move(route)) {
    if (route_.empty() || route_.front().empty()) throw InputError("routing table is empty");
    for (std::size_t j = 0; j < customers(); ++j) {
      double s = 0.0;
      for (const auto& row : route_) {
        if (row.size() != customers() || row[j] < 0.0) throw InputError("routing table is not a valid matrix");
        s += row[j];
      }
      if (s > 1.0 + 1e-9) throw InputError("routing probabilities for customer " + std::to_string(j) + " exceed 1");
    }
  }

  // Routing that realizes a static rate matrix z in the Poisson-supply regime.
  static StaticRouting from_rates(const Instance& inst, const Matrix& z) {
    Matrix r(inst.n(), std::vector<double>(inst.m(), 0.0));
    for (std::size_t i = 0; i < inst.n(); ++i)
      for (std::size_t j = 0; j < inst.m(); ++j) r[i][j] = z[i][j] / inst.customer_rates[j];
    return StaticRouting(std::move(r));
  }

  std::unique_ptr<Policy> clone() const override { return std::make_unique<StaticRouting>(*this); }
  std::string type() const override { return "static_routing"; }
  std::size_t suppliers() const override { return route_.size(); }
  std::size_t customers() const override { return route_.front().size(); }
  nlohmann::json to_json() const override { return {{"type", type()}, {"route", route_}}; }

  PolicyDecision on_customer(std::size_t j, std::span<const std::size_t> q, CounterRng& rng) override {
    double u = rng.uniform();
    for (std::size_t i = 0; i < route_.size(); ++i) {
      u -= route_[i][j];
      if (u < 0.0) return q[i] > 0 ? PolicyDecision{i} : PolicyDecision{};
    }
    return {};
  }

 private:
  Matrix route_;
};

// Single-queue adaptive policy from a DLP table. The committed nested set is a function of
// the state only, so drawing it when a customer arrives has the same law as redrawing it at
// every transition; a type-j arrival is then served with probability match_prob[l][j].
class DlpAdaptive final : public Policy {
 public:
  explicit DlpAdaptive(AdaptivePolicyTable t) : t_(std::move(t)) {}

  std::unique_ptr<Policy> clone() const override { return std::make_unique<DlpAdaptive>(*this); }
  std::string type() const override { return "dlp_adaptive"; }
  std::size_t suppliers() const override { return 1; }
  std::size_t customers() const override { return t_.family.rank_of.size(); }
  const AdaptivePolicyTable& table() const { return t_; }

  nlohmann::json to_json() const override {
    return {{"type", type()}, {"cap", t_.cap}, {"order", t_.family.order},
            {"boundary", t_.family.boundary}, {"rate", t_.family.rate}, {"cost_rate", t_.family.cost_rate},
            {"rank_of", t_.family.rank_of}, {"rows", t_.rows}, {"defaulted", t_.defaulted_states}};
  }

  bool admit(std::size_t, std::span<const std::size_t> q) const override { return q[0] < t_.cap; }

  PolicyDecision on_customer(std::size_t j, std::span<const std::size_t> q, CounterRng& rng) override {
    const std::size_t l = q[0];
    if (l == 0) return {};
    const double p = t_.match_prob[l][j];
    if (p >= 1.0 || (p > 0.0 && rng.bernoulli(p))) return {0};
    return {};
  }

 private:
  AdaptivePolicyTable t_;
};

enum class SurplusRule { printed, skip_after_empty_long };

// Online rounding of a Network LP solution with short-queue priority and virtual buffers.
class PriorityRounding final : public Policy {
 public:
  enum Counter : std::size_t {
    arrivals,
    noncontentious_arrivals,
    noncontentious_short_drawn,
    short_matches,
    long_matches,
    surplus_matches,
    buffer_increments,
    long_drawn_empty,
    unreachable_states,
    num_counters
  };

  PriorityRounding(std::size_t suppliers, NlpSolution sol, SurplusRule rule = SurplusRule::printed)
      : n_(suppliers), sol_(std::move(sol)), rule_(rule) {
    const auto& cls = sol_.classification;
    m_ = sol_.m();
    if (m_ == 0) m_ = sol_.y.empty() ? 0 : sol_.y.front().size();
    if (m_ == 0) throw InputError("Network LP solution has no customer types");
    kind_.assign(n_, Kind::removed);
    for (std::size_t i : cls.short_types) check_index(i), kind_[i] = Kind::short_queue;
    for (std::size_t p = 0; p < cls.long_types.size(); ++p) {
      check_index(cls.long_types[p]);
      kind_[cls.long_types[p]] = Kind::long_queue;
    }
    contentious_.assign(m_, 0);
    for (std::size_t j : sol_.contentious) {
      if (j >= m_) throw InputError("contentious customer index out of range");
      contentious_[j] = 1;
    }
    build_tables();
    buffers_.assign(cls.long_types.size() * m_, 0);
    counters_.assign(num_counters, 0.0);
  }

  std::unique_ptr<Policy> clone() const override { return std::make_unique<PriorityRounding>(*this); }
  std::string type() const override { return "priority_rounding"; }
  std::size_t suppliers() const override { return n_; }
  std::size_t customers() const override { return m_; }
  const NlpSolution& solution() const { return sol_; }
  SurplusRule surplus_rule() const { return rule_; }

  nlohmann::json to_json() const override {
    return {{"type", type()},
            {"suppliers", n_},
            {"surplus_rule", rule_ == SurplusRule::printed ? "printed" : "skip_after_empty_long"},
            {"nlp", matchq::to_json(sol_)}};
  }

  bool lazy(std::size_t i) const override { return kind_[i] != Kind::short_queue; }

  bool admit(std::size_t i, std::span<const std::size_t> q) const override {
    return kind_[i] != Kind::short_queue || q[i] < sol_.cap;
  }

  std::vector<std::string> counter_names() const override {
    return {"arrivals",           "noncontentious_arrivals", "noncontentious_short_drawn",
            "short_matches",      "long_matches",            "surplus_matches",
            "buffer_increments",  "long_drawn_empty",        "unreachable_states"};
  }
  std::vector<double> counters() const override { return counters_; }
  std::span<const std::uint64_t> buffers() const override { return buffers_; }
  std::size_t buffer_columns() const override { return m_; }

  PolicyDecision on_customer(std::size_t j, std::span<const std::size_t> q, CounterRng& rng) override {
    const auto& cls = sol_.classification;
    counters_[arrivals] += 1;
    const bool ct = contentious_[j] != 0;
    if (!ct) counters_[noncontentious_arrivals] += 1;

    // sampling
    std::optional<std::size_t> i_short;
    if (!cls.short_types.empty()) {
      std::size_t s = 0;
      for (std::size_t k = cls.short_types.size(); k-- > 0;) s = s * (sol_.cap + 1) + q[cls.short_types[k]];
      const auto& dist = assign_cdf_[s];
      if (dist.empty()) {
        counters_[unreachable_states] += 1;
      } else {
        const double u = rng.uniform() * dist.back().second;
        const auto it = std::upper_bound(dist.begin(), dist.end(), u,
                                         [](double v, const auto& e) { return v < e.second; });
        const std::size_t a = (it == dist.end() ? dist.back() : *it).first;
        if (const auto o = sol_.owner[a][j]) i_short = cls.short_types[o - 1];
      }
    }
    std::optional<std::size_t> p_long;
    {
      double u = rng.uniform();
      for (std::size_t p = 0; p < cls.long_types.size(); ++p) {
        u -= long_prob_[p][j];
        if (u < 0.0) {
          p_long = p;
          break;
        }
      }
    }
    if (i_short && !ct) counters_[noncontentious_short_drawn] += 1;

    // matching and scheduling
    PolicyDecision d;
    bool skip_surplus = false;
    if (i_short) {
      if (q[*i_short] == 0) {
        counters_[unreachable_states] += 1;  // excluded by non-degeneracy
      } else {
        d.match_to = *i_short;
        counters_[short_matches] += 1;
      }
      if (ct && p_long) {
        buffers_[*p_long * m_ + j] += 1;
        counters_[buffer_increments] += 1;
      }
    } else if (p_long) {
      const std::size_t i = cls.long_types[*p_long];
      if (q[i] > 0) {
        d.match_to = i;
        counters_[long_matches] += 1;
      } else {
        counters_[long_drawn_empty] += 1;
        skip_surplus = rule_ == SurplusRule::skip_after_empty_long;
      }
    }

    // surplus matching
    if (!d.match_to && ct && !skip_surplus && surplus_total_[j] > 0.0) {
      double u = rng.uniform() * surplus_total_[j];
      std::size_t p = 0;
      for (; p + 1 < cls.long_types.size(); ++p) {
        u -= sol_.y[p][j];
        if (u < 0.0) break;
      }
      auto& v = buffers_[p * m_ + j];
      const std::size_t i = cls.long_types[p];
      if (v > 0 && q[i] > 0) {
        d.match_to = i;
        counters_[surplus_matches] += 1;
      }
      if (v > 0) --v;
    }
    return d;
  }

 private:
  enum class Kind { short_queue, long_queue, removed };

  void check_index(std::size_t i) const {
    if (i >= n_) throw InputError("Network LP solution names supplier " + std::to_string(i) + " beyond the instance");
  }

  void build_tables() {
    assign_cdf_.resize(sol_.x.size());
    for (std::size_t s = 0; s < sol_.x.size(); ++s) {
      double c = 0.0;
      for (std::size_t a = 0; a < sol_.x[s].size(); ++a)
        if (sol_.x[s][a] > 0.0) {
          c += sol_.x[s][a];
          assign_cdf_[s].push_back({a, c});
        }
    }
    const std::size_t nl = sol_.classification.long_types.size();
    if (sol_.y.size() != nl) throw InputError("Network LP solution y has wrong row count");
    long_prob_.assign(nl, std::vector<double>(m_, 0.0));
    surplus_total_.assign(m_, 0.0);
    for (std::size_t p = 0; p < nl; ++p)
      for (std::size_t j = 0; j < m_; ++j) {
        long_prob_[p][j] = (1.0 - sol_.epsilon) * sol_.y[p][j];
        surplus_total_[j] += sol_.y[p][j];
      }
  }

  std::size_t n_, m_ = 0;
  NlpSolution sol_;
  SurplusRule rule_;
  std::vector<Kind> kind_;
  std::vector<char> contentious_;
  std::vector<std::vector<std::pair<std::size_t, double>>> assign_cdf_;
  Matrix long_prob_;
  std::vector<double> surplus_total_;
  std::vector<std::uint64_t> buffers_;
  std::vector<double> counters_;
};

// Runs a policy written for merged types: queues of one cluster are pooled, and a match to a
// cluster takes a uniformly random waiting supplier among its members.
class MergedTypes final : public Policy {
 public:
  MergedTypes(std::vector<std::size_t> supplier_cluster, std::vector<std::size_t> customer_cluster,
              std::unique_ptr<Policy> inner)
      : sc_(std::move(supplier_cluster)), cc_(std::move(customer_cluster)), inner_(std::move(inner)) {
    if (!inner_) throw InputError("merged-type policy needs an inner policy");
    for (auto c : sc_)
      if (c >= inner_->suppliers()) throw InputError("supplier cluster index out of range");
    for (auto c : cc_)
      if (c >= inner_->customers()) throw InputError("customer cluster index out of range");
  }
  MergedTypes(const MergedTypes& o) : sc_(o.sc_), cc_(o.cc_), inner_(o.inner_->clone()) {}

  std::unique_ptr<Policy> clone() const override { return std::make_unique<MergedTypes>(*this); }
  std::string type() const override { return "merged_types"; }
  std::size_t suppliers() const override { return sc_.size(); }
  std::size_t customers() const override { return cc_.size(); }
  const Policy& inner() const { return *inner_; }

  nlohmann::json to_json() const override {
    return {{"type", type()}, {"supplier_cluster", sc_}, {"customer_cluster", cc_}, {"inner", inner_->to_json()}};
  }

  bool lazy(std::size_t i) const override { return inner_->lazy(sc_[i]); }
  bool admit(std::size_t i, std::span<const std::size_t> q) const override { return inner_->admit(sc_[i], pooled(q)); }

  PolicyDecision on_customer(std::size_t j, std::span<const std::size_t> q, CounterRng& rng) override {
    const auto pool = pooled(q);
    const auto d = inner_->on_customer(cc_[j], pool, rng);
    if (!d.match_to) return {};
    const std::size_t c = *d.match_to;
    if (pool[c] == 0) return {};
    auto pick = static_cast<std::size_t>(rng.uniform() * static_cast<double>(pool[c]));
    for (std::size_t i = 0; i < sc_.size(); ++i) {
      if (sc_[i] != c) continue;
      if (pick < q[i]) return {i};
      pick -= q[i];
    }
    return {};
  }

  std::vector<std::string> counter_names() const override { return inner_->counter_names(); }
  std::vector<double> counters() const override { return inner_->counters(); }
  std::span<const std::uint64_t> buffers() const override { return inner_->buffers(); }
  std::size_t buffer_columns() const override { return inner_->buffer_columns(); }

 private:
  std::span<const std::size_t> pooled(std::span<const std::size_t> q) const {
    scratch_.assign(inner_->suppliers(), 0);
    for (std::size_t i = 0; i < sc_.size(); ++i) scratch_[sc_[i]] += q[i];
    return scratch_;
  }

  std::vector<std::size_t> sc_, cc_;
  std::unique_ptr<Policy> inner_;
  mutable std::vector<std::size_t> scratch_;
};

inline NestedFamily nested_family_from_json(const nlohmann::json& j) {
  NestedFamily f;
  f.order = j.at("order").get<std::vector<std::size_t>>();
  f.boundary = j.at("boundary").get<std::vector<std::size_t>>();
  f.rate = j.at("rate").get<std::vector<double>>();
  f.cost_rate = j.at("cost_rate").get<std::vector<double>>();
  f.rank_of = j.at("rank_of").get<std::vector<std::size_t>>();
  return f;
}

std::unique_ptr<Policy> policy_from_json(const nlohmann::json& j);

// Dispatches every arrival to the policy of its cell; types in cells without a policy never match.
class CellComposite final : public Policy {
 public:
  struct Cell {
    std::vector<std::size_t> suppliers;  // global indices, local order
    std::vector<std::size_t> customers;
    std::unique_ptr<Policy> policy;      // may be null
  };

  CellComposite(std::size_t n, std::size_t m, std::vector<Cell> cells)
      : n_(n), m_(m), cells_(std::move(cells)), supplier_cell_(n, kNone), customer_cell_(m, kNone),
        local_of_supplier_(n, 0) {
    for (std::size_t c = 0; c < cells_.size(); ++c) {
      const auto& cell = cells_[c];
      for (std::size_t k = 0; k < cell.suppliers.size(); ++k) {
        const std::size_t i = cell.suppliers[k];
        if (i >= n_ || supplier_cell_[i] != kNone) throw InputError("cell supplier lists must partition the suppliers");
        supplier_cell_[i] = c;
        local_of_supplier_[i] = k;
      }
      for (std::size_t j : cell.customers) {
        if (j >= m_ || customer_cell_[j] != kNone) throw InputError("cell customer lists must partition the customers");
        customer_cell_[j] = c;
      }
      if (cell.policy && (cell.policy->suppliers() != cell.suppliers.size() ||
                          cell.policy->customers() != cell.customers.size()))
        throw InputError("cell " + std::to_string(c) + " policy does not match its type lists");
    }
  }

  CellComposite(const CellComposite& o)
      : n_(o.n_), m_(o.m_), supplier_cell_(o.supplier_cell_), customer_cell_(o.customer_cell_),
        local_of_supplier_(o.local_of_supplier_), cross_cell_(o.cross_cell_) {
    for (const auto& c : o.cells_) cells_.push_back({c.suppliers, c.customers, c.policy ? c.policy->clone() : nullptr});
  }

  std::unique_ptr<Policy> clone() const override { return std::make_unique<CellComposite>(*this); }
  std::string type() const override { return "cell_composite"; }
  std::size_t suppliers() const override { return n_; }
  std::size_t customers() const override { return m_; }
  const std::vector<Cell>& cells() const { return cells_; }

  nlohmann::json to_json() const override {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& c : cells_)
      cells.push_back({{"suppliers", c.suppliers},
                       {"customers", c.customers},
                       {"policy", c.policy ? c.policy->to_json() : nlohmann::json(nullptr)}});
    return {{"type", type()}, {"suppliers", n_}, {"customers", m_}, {"cells", cells}};
  }

  bool lazy(std::size_t i) const override {
    const auto& cell = cells_[supplier_cell_[i]];
    return !cell.policy || cell.policy->lazy(local_of_supplier_[i]);
  }

  bool admit(std::size_t i, std::span<const std::size_t> q) const override {
    const auto& cell = cells_[supplier_cell_[i]];
    if (!cell.policy) return true;
    return cell.policy->admit(local_of_supplier_[i], local_view(cell, q));
  }

  PolicyDecision on_customer(std::size_t j, std::span<const std::size_t> q, CounterRng& rng) override {
    const std::size_t c = customer_cell_[j];
    if (c == kNone || !cells_[c].policy) return {};
    auto& cell = cells_[c];
    const std::size_t local_j = static_cast<std::size_t>(
        std::find(cell.customers.begin(), cell.customers.end(), j) - cell.customers.begin());
    const auto d = cell.policy->on_customer(local_j, local_view(cell, q), rng);
    if (!d.match_to) return {};
    const std::size_t i = cell.suppliers.at(*d.match_to);
    if (supplier_cell_[i] != c) {
      cross_cell_ += 1;
      return {};
    }
    return {i};
  }

  std::vector<std::string> counter_names() const override {
    std::vector<std::string> names{"cross_cell_matches"};
    for (std::size_t c = 0; c < cells_.size(); ++c)
      if (cells_[c].policy)
        for (const auto& s : cells_[c].policy->counter_names()) names.push_back("cell" + std::to_string(c) + "." + s);
    return names;
  }

  std::vector<double> counters() const override {
    std::vector<double> v{cross_cell_};
    for (const auto& c : cells_)
      if (c.policy)
        for (double x : c.policy->counters()) v.push_back(x);
    return v;
  }

  std::size_t cell_of_supplier(std::size_t i) const { return supplier_cell_[i]; }
  std::size_t cell_of_customer(std::size_t j) const { return customer_cell_[j]; }

 private:
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);

  std::span<const std::size_t> local_view(const Cell& cell, std::span<const std::size_t> q) const {
    scratch_.resize(cell.suppliers.size());
    for (std::size_t k = 0; k < cell.suppliers.size(); ++k) scratch_[k] = q[cell.suppliers[k]];
    return scratch_;
  }

  std::size_t n_, m_;
  std::vector<Cell> cells_;
  std::vector<std::size_t> supplier_cell_, customer_cell_, local_of_supplier_;
  double cross_cell_ = 0.0;
  mutable std::vector<std::size_t> scratch_;
};

inline std::unique_ptr<Policy> composite_policy_from_json(const nlohmann::json& j) {
  std::vector<CellComposite::Cell> cells;
  for (const auto& c : j.at("cells"))
    cells.push_back({c.at("suppliers").get<std::vector<std::size_t>>(), c.at("customers").get<std::vector<std::size_t>>(),
                     c.at("policy").is_null() ? nullptr : policy_from_json(c.at("policy"))});
  return std::make_unique<CellComposite>(j.at("suppliers").get<std::size_t>(), j.at("customers").get<std::size_t>(),
                                         std::move(cells));
}

inline std::unique_ptr<Policy> policy_from_json(const nlohmann::json& j) {
  try {
    const auto type = j.at("type").get<std::string>();
    if (type == "static_threshold") {
      StaticThresholdPolicy p{j.at("k").get<std::size_t>(), j.at("p").get<double>(),
                              j.at("order").get<std::vector<std::size_t>>()};
      const std::size_t m = p.order.size();
      return std::make_unique<StaticThreshold>(std::move(p), m);
    }
    if (type == "static_routing") return std::make_unique<StaticRouting>(j.at("route").get<Matrix>());
    if (type == "dlp_adaptive") {
      auto t = table_from_rows(j.at("cap").get<std::size_t>(), nested_family_from_json(j),
                               j.at("rows").get<std::vector<std::vector<double>>>());
      t.defaulted_states = j.at("defaulted").get<std::vector<std::size_t>>();
      return std::make_unique<DlpAdaptive>(std::move(t));
    }
    if (type == "priority_rounding") {
      const auto rule = j.at("surplus_rule").get<std::string>();
      if (rule != "printed" && rule != "skip_after_empty_long") throw InputError("unknown surplus rule " + rule);
      return std::make_unique<PriorityRounding>(j.at("suppliers").get<std::size_t>(),
                                                nlp_solution_from_json(j.at("nlp")),
                                                rule == "printed" ? SurplusRule::printed
                                                                  : SurplusRule::skip_after_empty_long);
    }
    if (type == "cell_composite") return composite_policy_from_json(j);
    if (type == "merged_types")
      return std::make_unique<MergedTypes>(j.at("supplier_cluster").get<std::vector<std::size_t>>(),
                                           j.at("customer_cluster").get<std::vector<std::size_t>>(),
                                           policy_from_json(j.at("inner")));
    throw InputError("unknown policy type " + type);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed policy document: ") + e.what());
  }
}

}  // namespace matchq
