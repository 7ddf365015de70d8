#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "matchq/error.hpp"

namespace matchq {

struct BirthDeathSpec {
  std::function<double(std::size_t)> birth;  // rate out of state l upwards
  std::function<double(std::size_t)> death;  // rate out of state l >= 1 downwards
  std::optional<std::size_t> cap;
  // Uncapped chains must satisfy death(l) >= l * death_floor.
  double death_floor = 1.0;
};

struct StationaryDistribution {
  std::vector<double> probs;

  std::size_t size() const { return probs.size(); }
  double operator[](std::size_t l) const { return l < probs.size() ? probs[l] : 0.0; }

  double mean() const {
    double s = 0.0;
    for (std::size_t l = 0; l < probs.size(); ++l) s += static_cast<double>(l) * probs[l];
    return s;
  }
};

inline double total_variation(const std::vector<double>& p, const std::vector<double>& q) {
  const std::size_t n = std::max(p.size(), q.size());
  double s = 0.0;
  for (std::size_t k = 0; k < n; ++k) s += std::abs((k < p.size() ? p[k] : 0.0) - (k < q.size() ? q[k] : 0.0));
  return 0.5 * s;
}

// Product-form solution in log space. For uncapped chains the support grows until
// a state adds less than tail_tol of the accumulated mass and death/birth >= 2.
inline StationaryDistribution birth_death_stationary(const BirthDeathSpec& spec, double tail_tol = 1e-14) {
  if (!(tail_tol > 0.0)) throw InputError("tail_tol must be positive");
  constexpr std::size_t kMaxStates = 50'000'000;
  std::vector<double> logw{0.0};
  double lmax = 0.0;
  double scaled_sum = 1.0;  // sum of exp(logw - lmax)
  for (std::size_t l = 1;; ++l) {
    if (spec.cap && l > *spec.cap) break;
    const double b = spec.birth(l - 1);
    const double d = spec.death(l);
    if (!(b >= 0.0) || !std::isfinite(b)) throw InputError("birth rate must be finite and nonnegative");
    if (!(d > 0.0)) throw InputError("death rate must be positive for l >= 1");
    if (b == 0.0) break;
    if (!spec.cap && d < static_cast<double>(l) * spec.death_floor * (1.0 - 1e-12))
      throw InputError("death rate does not dominate: uncapped chain may not converge");
    const double lw = logw.back() + std::log(b) - std::log(d);
    logw.push_back(lw);
    if (lw > lmax) {
      scaled_sum = scaled_sum * std::exp(lmax - lw) + 1.0;
      lmax = lw;
    } else {
      scaled_sum += std::exp(lw - lmax);
    }
    if (!spec.cap) {
      const double rel = std::exp(lw - lmax) / scaled_sum;
      if (rel < tail_tol && d >= 2.0 * b) break;
      if (logw.size() > kMaxStates) throw InputError("birth-death chain did not converge");
    }
  }
  StationaryDistribution out;
  out.probs.resize(logw.size());
  double total = 0.0;
  for (std::size_t l = 0; l < logw.size(); ++l) total += out.probs[l] = std::exp(logw[l] - lmax);
  for (double& p : out.probs) p /= total;
  return out;
}

// Smallest l with P(Poisson(mean) > l) < tail_tol. Any matching policy keeps a queue
// stochastically below the no-match M/M/inf queue, so states past this carry no mass.
inline std::size_t poisson_tail_cap(double mean, double tail_tol) {
  if (mean <= 0.0) return 1;
  const std::size_t mode = static_cast<std::size_t>(mean);
  std::size_t l = mode;
  double logp = static_cast<double>(l) * std::log(mean) - mean - std::lgamma(static_cast<double>(l) + 1.0);
  for (;;) {
    const double ratio = mean / static_cast<double>(l + 1);
    // Geometric bound on the tail beyond l.
    const double tail = std::exp(logp + std::log(ratio) - std::log1p(-ratio));
    if (ratio < 1.0 && tail < tail_tol) return std::max<std::size_t>(l, 1);
    logp += std::log(ratio);
    ++l;
  }
}

// Magnitude guess for the stationary mass at each level of a queue fed at rate lambda,
// abandoning at l * mu, and served at up to `drain` while non-empty. The true law lies
// between the no-service Poisson law and the full-service law; take the log midpoint,
// scaled so the largest weight is 1.
inline std::vector<double> occupancy_scale_hint(double lambda, double mu, double drain, std::size_t cap) {
  std::vector<double> lw(cap + 1, 0.0);
  for (std::size_t l = 1; l <= cap; ++l) {
    const double dl = static_cast<double>(l);
    lw[l] = lw[l - 1] + std::log(lambda) - 0.5 * (std::log(dl * mu) + std::log(dl * mu + drain));
  }
  const double top = *std::max_element(lw.begin(), lw.end());
  std::vector<double> w(cap + 1);
  for (std::size_t l = 0; l <= cap; ++l) w[l] = std::max(std::exp(lw[l] - top), 1e-250);
  return w;
}

struct Transition {
  std::size_t from;
  std::size_t to;
  double rate;
};

// Solves pi Q = 0, sum pi = 1 over an enumerated finite state space.
inline StationaryDistribution multivariate_stationary(std::size_t num_states,
                                                      const std::vector<Transition>& transitions) {
  if (num_states == 0) throw InputError("empty state space");
  if (num_states == 1) return {{1.0}};
  std::vector<std::vector<std::size_t>> fwd(num_states), bwd(num_states);
  std::vector<double> out_rate(num_states, 0.0);
  for (const auto& t : transitions) {
    if (t.from >= num_states || t.to >= num_states) throw InputError("transition references unknown state");
    if (!(t.rate >= 0.0) || !std::isfinite(t.rate)) throw InputError("transition rates must be finite and >= 0");
    if (t.from == t.to || t.rate == 0.0) continue;
    fwd[t.from].push_back(t.to);
    bwd[t.to].push_back(t.from);
    out_rate[t.from] += t.rate;
  }
  auto reach = [&](const std::vector<std::vector<std::size_t>>& g) {
    std::vector<char> seen(num_states, 0);
    std::vector<std::size_t> stack{0};
    seen[0] = 1;
    while (!stack.empty()) {
      const std::size_t s = stack.back();
      stack.pop_back();
      for (std::size_t t : g[s])
        if (!seen[t]) seen[t] = 1, stack.push_back(t);
    }
    return seen;
  };
  const auto f = reach(fwd), b = reach(bwd);
  for (std::size_t s = 0; s < num_states; ++s) {
    if (!f[s]) throw InputError("reducible chain: state " + std::to_string(s) + " is unreachable from state 0");
    if (!b[s]) throw InputError("reducible chain: state 0 is unreachable from state " + std::to_string(s));
  }

  // Rows of Q^T are balance equations; the last one is replaced by normalization.
  const auto n = static_cast<Eigen::Index>(num_states);
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(transitions.size() * 2 + num_states * 2);
  const std::size_t last = num_states - 1;
  for (const auto& t : transitions) {
    if (t.from == t.to || t.rate == 0.0) continue;
    if (t.to != last) trip.emplace_back(t.to, t.from, t.rate);
  }
  for (std::size_t s = 0; s < last; ++s) trip.emplace_back(s, s, -out_rate[s]);
  for (std::size_t s = 0; s < num_states; ++s) trip.emplace_back(last, s, 1.0);
  Eigen::SparseMatrix<double> a(n, n);
  a.setFromTriplets(trip.begin(), trip.end());
  a.makeCompressed();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  rhs[n - 1] = 1.0;
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.compute(a);
  if (lu.info() != Eigen::Success) throw NumericalError("sparse LU failed on global balance system");
  Eigen::VectorXd pi = lu.solve(rhs);
  StationaryDistribution out;
  out.probs.resize(num_states);
  double total = 0.0;
  for (std::size_t s = 0; s < num_states; ++s) total += out.probs[s] = std::max(0.0, pi[static_cast<Eigen::Index>(s)]);
  for (double& p : out.probs) p /= total;

  // Verify every balance equation, including the dropped one.
  std::vector<double> inflow(num_states, 0.0);
  for (const auto& t : transitions)
    if (t.from != t.to) inflow[t.to] += out.probs[t.from] * t.rate;
  double scale = 0.0;
  for (std::size_t s = 0; s < num_states; ++s) scale = std::max(scale, out.probs[s] * out_rate[s]);
  for (std::size_t s = 0; s < num_states; ++s) {
    if (std::abs(inflow[s] - out.probs[s] * out_rate[s]) > 1e-8 * scale)
      throw NumericalError("global balance residual too large at state " + std::to_string(s));
  }
  return out;
}

struct QueueBound {
  double mean;
  double bound;
};

// Chain with birth lambda and death l + lambda.
inline StationaryDistribution drift_chain(double lambda, double tail_tol = 1e-14) {
  return birth_death_stationary({[lambda](std::size_t) { return lambda; },
                                 [lambda](std::size_t l) { return static_cast<double>(l) + lambda; },
                                 std::nullopt, 1.0},
                                tail_tol);
}

inline QueueBound expected_queue_bound_check(double lambda) {
  if (!(lambda > 0.0)) throw InputError("lambda must be positive");
  return {drift_chain(lambda).mean(), std::sqrt(lambda)};
}

}  // namespace matchq
