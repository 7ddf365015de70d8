#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "matchq/error.hpp"

namespace matchq {

using Matrix = std::vector<std::vector<double>>;

struct Locations {
  std::vector<std::vector<double>> suppliers;
  std::vector<std::vector<double>> customers;

  std::size_t dimension() const {
    if (!suppliers.empty()) return suppliers.front().size();
    return customers.empty() ? 0 : customers.front().size();
  }
};

inline double euclidean_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(s);
}

struct Instance {
  std::vector<double> supplier_rates;
  std::vector<double> customer_rates;
  Matrix costs;  // rows = suppliers
  double abandonment_rate = 1.0;
  std::optional<Locations> locations;

  std::size_t n() const { return supplier_rates.size(); }
  std::size_t m() const { return customer_rates.size(); }

  double tau_max() const { return std::accumulate(customer_rates.begin(), customer_rates.end(), 0.0); }

  double c_max() const {
    double c = 0.0;
    for (const auto& row : costs)
      for (double v : row) c = std::max(c, v);
    return c;
  }

  double lambda_max() const { return *std::max_element(supplier_rates.begin(), supplier_rates.end()); }

  void validate() const {
    if (supplier_rates.empty()) throw InputError("instance has no supplier types");
    if (customer_rates.empty()) throw InputError("instance has no customer types");
    for (std::size_t i = 0; i < n(); ++i)
      if (!(supplier_rates[i] > 0.0) || !std::isfinite(supplier_rates[i]))
        throw InputError("supplier rate " + std::to_string(i) + " must be positive and finite");
    for (std::size_t j = 0; j < m(); ++j)
      if (!(customer_rates[j] > 0.0) || !std::isfinite(customer_rates[j]))
        throw InputError("customer rate " + std::to_string(j) + " must be positive and finite");
    if (!(abandonment_rate > 0.0) || !std::isfinite(abandonment_rate))
      throw InputError("abandonment rate must be positive and finite");
    if (costs.size() != n())
      throw InputError("cost matrix has " + std::to_string(costs.size()) + " rows, expected " +
                       std::to_string(n()));
    for (std::size_t i = 0; i < n(); ++i) {
      if (costs[i].size() != m())
        throw InputError("cost row " + std::to_string(i) + " has " + std::to_string(costs[i].size()) +
                         " entries, expected " + std::to_string(m()));
      for (double c : costs[i])
        if (!(c >= 0.0) || !std::isfinite(c)) throw InputError("costs must be finite and nonnegative");
    }
    if (locations) {
      const auto& loc = *locations;
      if (loc.suppliers.size() != n() || loc.customers.size() != m())
        throw InputError("location lists do not match the number of types");
      const std::size_t d = loc.dimension();
      if (d == 0) throw InputError("locations must have dimension at least 1");
      auto check = [d](const std::vector<double>& p) {
        if (p.size() != d) throw InputError("locations have inconsistent dimension");
        for (double x : p)
          if (!(x >= 0.0 && x <= 1.0)) throw InputError("location coordinates must lie in [0,1]");
      };
      for (const auto& p : loc.suppliers) check(p);
      for (const auto& p : loc.customers) check(p);
    }
  }
};

struct Target {
  double cost_cap = 0.0;
  double throughput_floor = 0.0;
};

struct Accuracy {
  double epsilon = 0.1;

  double delta(std::size_t n) const { return epsilon * epsilon / static_cast<double>(n); }
  // Short/long rate cutoffs for a given kappa.
  double short_cutoff(std::size_t n, int kappa) const { return std::pow(delta(n), -kappa); }
  double long_cutoff(std::size_t n, int kappa) const { return std::pow(delta(n), -(kappa + 1)); }
};

inline Matrix distance_matrix(const Locations& loc) {
  Matrix c(loc.suppliers.size(), std::vector<double>(loc.customers.size()));
  for (std::size_t i = 0; i < loc.suppliers.size(); ++i)
    for (std::size_t j = 0; j < loc.customers.size(); ++j)
      c[i][j] = euclidean_distance(loc.suppliers[i], loc.customers[j]);
  return c;
}

inline Instance instance_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw InputError("instance document must be a JSON object");
  Instance inst;
  try {
    for (const auto& s : doc.at("suppliers")) inst.supplier_rates.push_back(s.at("rate").get<double>());
    for (const auto& c : doc.at("customers")) inst.customer_rates.push_back(c.at("rate").get<double>());
    if (doc.contains("mu")) inst.abandonment_rate = doc.at("mu").get<double>();
    if (doc.contains("locations")) {
      Locations loc;
      loc.suppliers = doc.at("locations").at("suppliers").get<std::vector<std::vector<double>>>();
      loc.customers = doc.at("locations").at("customers").get<std::vector<std::vector<double>>>();
      inst.locations = std::move(loc);
    }
    if (doc.contains("costs")) {
      inst.costs = doc.at("costs").get<Matrix>();
    } else if (inst.locations) {
      inst.costs = distance_matrix(*inst.locations);
    } else {
      throw InputError("instance document lacks 'costs'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed instance document: ") + e.what());
  }
  inst.validate();
  if (inst.locations) {
    const Matrix dist = distance_matrix(*inst.locations);
    for (std::size_t i = 0; i < inst.n(); ++i)
      for (std::size_t j = 0; j < inst.m(); ++j)
        if (std::abs(dist[i][j] - inst.costs[i][j]) > 1e-12)
          throw InputError("cost (" + std::to_string(i) + "," + std::to_string(j) +
                           ") differs from the Euclidean distance of its locations");
    inst.costs = dist;
  }
  return inst;
}

inline Instance load_instance(std::istream& in) {
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("cannot parse instance: ") + e.what());
  }
  return instance_from_json(doc);
}

inline Instance parse_instance(const std::string& text) {
  std::istringstream in(text);
  return load_instance(in);
}

inline nlohmann::json to_json(const Instance& inst) {
  nlohmann::json doc;
  doc["suppliers"] = nlohmann::json::array();
  for (double r : inst.supplier_rates) doc["suppliers"].push_back({{"rate", r}});
  doc["customers"] = nlohmann::json::array();
  for (double r : inst.customer_rates) doc["customers"].push_back({{"rate", r}});
  doc["costs"] = inst.costs;
  doc["mu"] = inst.abandonment_rate;
  if (inst.locations) {
    doc["locations"] = {{"suppliers", inst.locations->suppliers}, {"customers", inst.locations->customers}};
  }
  return doc;
}

inline void save_instance(const Instance& inst, std::ostream& out) { out << to_json(inst).dump(2) << '\n'; }

// Time rescaling that makes the abandonment rate 1.
inline Instance rescale_abandonment(const Instance& inst) {
  inst.validate();
  Instance out = inst;
  const double mu = inst.abandonment_rate;
  for (double& r : out.supplier_rates) r /= mu;
  for (double& r : out.customer_rates) r /= mu;
  out.abandonment_rate = 1.0;
  return out;
}

inline Instance with_abandonment(const Instance& unit, double mu) {
  Instance out = unit;
  for (double& r : out.supplier_rates) r *= mu;
  for (double& r : out.customer_rates) r *= mu;
  out.abandonment_rate = mu;
  return out;
}

struct MergedCustomers {
  Instance instance;
  std::vector<std::size_t> group_of;  // original customer -> merged index
};

// Merges customer types whose cost columns coincide; rates add up.
inline MergedCustomers merge_equal_cost_customers(const Instance& inst) {
  MergedCustomers out;
  out.instance = inst;
  out.instance.customer_rates.clear();
  for (auto& row : out.instance.costs) row.clear();
  if (out.instance.locations) out.instance.locations->customers.clear();
  std::vector<std::size_t> rep;
  for (std::size_t j = 0; j < inst.m(); ++j) {
    std::size_t g = rep.size();
    for (std::size_t k = 0; k < rep.size(); ++k) {
      bool same = true;
      for (std::size_t i = 0; i < inst.n() && same; ++i) same = inst.costs[i][j] == inst.costs[i][rep[k]];
      if (same) {
        g = k;
        break;
      }
    }
    if (g == rep.size()) {
      rep.push_back(j);
      out.instance.customer_rates.push_back(0.0);
      for (std::size_t i = 0; i < inst.n(); ++i) out.instance.costs[i].push_back(inst.costs[i][j]);
      if (inst.locations) out.instance.locations->customers.push_back(inst.locations->customers[j]);
    }
    out.instance.customer_rates[g] += inst.customer_rates[j];
    out.group_of.push_back(g);
  }
  return out;
}

}  // namespace matchq
