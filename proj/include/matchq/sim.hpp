#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "matchq/ctmc.hpp"
#include "matchq/instance.hpp"
#include "matchq/network.hpp"
#include "matchq/parallel.hpp"
#include "matchq/policies.hpp"
#include "matchq/rng.hpp"

namespace matchq {

struct SimConfig {
  double horizon = 1e4;
  std::optional<double> warmup;  // default: 10% of the horizon
  std::uint64_t seed = 1;
  std::size_t replications = 1;
  std::size_t batches = 20;
  std::size_t jobs = 1;

  double warmup_time() const { return warmup ? *warmup : 0.1 * horizon; }

  void validate() const {
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw InputError("simulation horizon must be positive and finite");
    const double w = warmup_time();
    if (!(w >= 0.0) || !(horizon > w)) throw InputError("simulation needs horizon > warmup >= 0");
    if (replications < 1) throw InputError("simulation needs at least one replication");
    if (batches < 2) throw InputError("batch means need at least two batches");
  }
};

struct Estimate {
  double value = 0.0;
  double se = 0.0;
};

inline Estimate batch_estimate(const std::vector<double>& samples) {
  Estimate e;
  if (samples.empty()) return e;
  const double b = static_cast<double>(samples.size());
  for (double s : samples) e.value += s;
  e.value /= b;
  double ss = 0.0;
  for (double s : samples) ss += (s - e.value) * (s - e.value);
  e.se = samples.size() > 1 ? std::sqrt(ss / (b - 1.0) / b) : 0.0;
  return e;
}

// Ratio of totals, with the spread of per-batch ratios as its standard error.
inline Estimate ratio_estimate(const std::vector<double>& num, const std::vector<double>& den) {
  double sn = 0.0, sd = 0.0;
  std::vector<double> r;
  for (std::size_t b = 0; b < num.size(); ++b) {
    sn += num[b];
    sd += den[b];
    if (den[b] > 0.0) r.push_back(num[b] / den[b]);
  }
  Estimate e = batch_estimate(r);
  e.value = sd > 0.0 ? sn / sd : 0.0;
  return e;
}

// Whole-run event accounting, warmup included.
struct EventCounts {
  std::vector<std::uint64_t> customer_arrivals, customer_matched, customer_unmatched;
  std::vector<std::uint64_t> supplier_arrivals, supplier_matched, supplier_abandoned, supplier_discarded,
      supplier_waiting;
  std::uint64_t events = 0;

  void resize(std::size_t n, std::size_t m) {
    for (auto* v : {&customer_arrivals, &customer_matched, &customer_unmatched}) v->assign(m, 0);
    for (auto* v : {&supplier_arrivals, &supplier_matched, &supplier_abandoned, &supplier_discarded,
                    &supplier_waiting})
      v->assign(n, 0);
  }

  void add(const EventCounts& o) {
    auto acc = [](std::vector<std::uint64_t>& a, const std::vector<std::uint64_t>& b) {
      for (std::size_t k = 0; k < a.size(); ++k) a[k] += b[k];
    };
    acc(customer_arrivals, o.customer_arrivals);
    acc(customer_matched, o.customer_matched);
    acc(customer_unmatched, o.customer_unmatched);
    acc(supplier_arrivals, o.supplier_arrivals);
    acc(supplier_matched, o.supplier_matched);
    acc(supplier_abandoned, o.supplier_abandoned);
    acc(supplier_discarded, o.supplier_discarded);
    acc(supplier_waiting, o.supplier_waiting);
    events += o.events;
  }
};

struct ReplicationSummary {
  std::size_t replication = 0;
  double throughput = 0.0;
  double cost = 0.0;
  std::uint64_t events = 0;
};

struct SimMetrics {
  bool valid = false;
  double batch_length = 0.0;
  double measured_time = 0.0;  // post-warmup time summed over replications
  std::size_t batches = 0;     // pooled over replications
  Estimate throughput, cost;
  std::vector<std::vector<Estimate>> match_rate;  // [supplier][customer]
  std::vector<Estimate> empty_fraction;           // per supplier, seen by arriving customers
  std::size_t buffer_columns = 0;
  std::vector<Estimate> buffer_average;  // time average per buffer cell, row-major
  std::vector<std::string> counter_names;
  std::vector<std::vector<double>> counter_batches;  // [counter][batch]
  std::vector<std::size_t> state_queues;             // non-lazy queues, in index order
  bool state_tracked = false;
  std::map<std::vector<std::size_t>, double> state_distribution;  // time fractions
  EventCounts counts;
  std::vector<ReplicationSummary> replications;

  Estimate counter_ratio(const std::string& num, const std::string& den) const {
    auto find = [&](const std::string& name) -> const std::vector<double>& {
      const auto it = std::find(counter_names.begin(), counter_names.end(), name);
      if (it == counter_names.end()) throw InputError("no policy counter named " + name);
      return counter_batches[static_cast<std::size_t>(it - counter_names.begin())];
    };
    return ratio_estimate(find(num), find(den));
  }
};

namespace detail {

struct BatchStats {
  Matrix matches;  // counts
  std::vector<double> customer_arrivals, empty_seen, buffer_area, counters;
};

struct ReplicationResult {
  std::vector<BatchStats> batches;
  std::unordered_map<std::uint64_t, double> state_time;
  bool state_tracked = false;
  EventCounts counts;
};

inline constexpr std::size_t kMaxTrackedQueues = 4;
inline constexpr std::size_t kStateBits = 16;

class Replication {
 public:
  Replication(const Instance& inst, Policy& pol, const SimConfig& cfg, std::size_t rep)
      : inst_(inst), pol_(pol), rng_(cfg.seed, rep), n_(inst.n()), m_(inst.m()), mu_(inst.abandonment_rate),
        horizon_(cfg.horizon), warmup_(cfg.warmup_time()), nb_(cfg.batches),
        length_((cfg.horizon - cfg.warmup_time()) / static_cast<double>(cfg.batches)) {
    q_.assign(n_, 0);
    lazy_.assign(n_, 0);
    last_.assign(n_, 0.0);
    for (std::size_t i = 0; i < n_; ++i) {
      lazy_[i] = pol_.lazy(i) ? 1 : 0;
      if (!lazy_[i]) {
        tracked_.push_back(i);
        eager_arrival_ += inst.supplier_rates[i];
      }
    }
    for (double g : inst.customer_rates) customer_rate_ += g;
    out_.state_tracked = tracked_.size() <= kMaxTrackedQueues;
    out_.counts.resize(n_, m_);
    const std::size_t cells = pol_.buffers().size();
    out_.batches.resize(nb_);
    for (auto& b : out_.batches) {
      b.matches.assign(n_, std::vector<double>(m_, 0.0));
      b.customer_arrivals.assign(m_, 0.0);
      b.empty_seen.assign(n_, 0.0);
      b.buffer_area.assign(cells, 0.0);
    }
  }

  ReplicationResult run() {
    for (;;) {
      const double rate = eager_arrival_ + customer_rate_ + mu_ * static_cast<double>(eager_waiting_);
      const double next = t_ + rng_.exponential(rate);
      if (next >= horizon_) {
        advance(horizon_);
        break;
      }
      advance(next);
      ++out_.counts.events;
      double u = rng_.uniform() * rate;
      if (u < eager_arrival_) {
        supplier_arrival(pick_eager_arrival(u));
      } else if ((u -= eager_arrival_) < customer_rate_) {
        customer_arrival(pick_customer(u));
      } else {
        abandonment(pick_abandoning(u - customer_rate_));
      }
    }
    for (std::size_t i = 0; i < n_; ++i) {
      if (lazy_[i]) refresh(i);
      out_.counts.supplier_waiting[i] = q_[i];
    }
    return std::move(out_);
  }

 private:
  std::size_t batch() const { return passed_ - 1; }
  bool measuring() const { return passed_ >= 1 && passed_ <= nb_; }
  double boundary(std::size_t k) const {
    return k == nb_ ? horizon_ : warmup_ + static_cast<double>(k) * length_;
  }

  // Integrates time averages up to `to`, closing batches on the way.
  void advance(double to) {
    while (t_ < to) {
      const double seg_end = passed_ <= nb_ ? std::min(to, boundary(passed_)) : to;
      const double dt = seg_end - t_;
      if (measuring() && dt > 0.0) {
        if (out_.state_tracked) out_.state_time[state_key()] += dt;
        const auto buf = pol_.buffers();
        auto& area = out_.batches[batch()].buffer_area;
        for (std::size_t c = 0; c < buf.size(); ++c) area[c] += static_cast<double>(buf[c]) * dt;
      }
      t_ = seg_end;
      if (passed_ <= nb_ && t_ >= boundary(passed_)) close_boundary();
    }
  }

  void close_boundary() {
    auto now = pol_.counters();
    if (passed_ >= 1) {
      auto& c = out_.batches[passed_ - 1].counters;
      c.resize(now.size());
      for (std::size_t k = 0; k < now.size(); ++k) c[k] = now[k] - snapshot_[k];
    }
    snapshot_ = std::move(now);
    ++passed_;
  }

  std::uint64_t state_key() {
    std::uint64_t key = 0;
    for (std::size_t k = 0; k < tracked_.size(); ++k) {
      if (q_[tracked_[k]] >> kStateBits) {
        out_.state_tracked = false;  // lengths beyond the packing width; drop the distribution
        out_.state_time.clear();
        return 0;
      }
      key |= static_cast<std::uint64_t>(q_[tracked_[k]]) << (kStateBits * k);
    }
    return key;
  }

  std::size_t pick_eager_arrival(double u) const {
    for (std::size_t i : tracked_) {
      if (u < inst_.supplier_rates[i]) return i;
      u -= inst_.supplier_rates[i];
    }
    return tracked_.back();
  }

  std::size_t pick_customer(double u) const {
    for (std::size_t j = 0; j < m_; ++j) {
      if (u < inst_.customer_rates[j]) return j;
      u -= inst_.customer_rates[j];
    }
    return m_ - 1;
  }

  std::size_t pick_abandoning(double u) const {
    std::size_t last = tracked_.front();
    for (std::size_t i : tracked_) {
      const double r = mu_ * static_cast<double>(q_[i]);
      if (r > 0.0) last = i;
      if (u < r) return i;
      u -= r;
    }
    return last;
  }

  void supplier_arrival(std::size_t i) {
    ++out_.counts.supplier_arrivals[i];
    if (pol_.admit(i, q_)) {
      ++q_[i];
      ++eager_waiting_;
    } else {
      ++out_.counts.supplier_discarded[i];
    }
  }

  void abandonment(std::size_t i) {
    --q_[i];
    --eager_waiting_;
    ++out_.counts.supplier_abandoned[i];
  }

  // Exact M/M/infinity transition of a lazy queue since its last refresh: survivors of the
  // old content are binomial, and each new arrival is still present with probability
  // (1 - e^{-mu dt}) / (mu dt).
  void refresh(std::size_t i) {
    const double dt = t_ - last_[i];
    last_[i] = t_;
    if (dt <= 0.0) return;
    const double keep = std::exp(-mu_ * dt);
    std::uint64_t survivors = q_[i];
    if (q_[i] > 0) survivors = std::binomial_distribution<std::uint64_t>(q_[i], keep)(rng_);
    const double mean = inst_.supplier_rates[i] * dt;
    std::uint64_t arrived = 0, stayed = 0;
    if (mean > 0.0) arrived = std::poisson_distribution<std::uint64_t>(mean)(rng_);
    if (arrived > 0) stayed = std::binomial_distribution<std::uint64_t>(arrived, -std::expm1(-mu_ * dt) / (mu_ * dt))(rng_);
    out_.counts.supplier_arrivals[i] += arrived;
    out_.counts.supplier_abandoned[i] += (q_[i] - survivors) + (arrived - stayed);
    q_[i] = survivors + stayed;
  }

  void customer_arrival(std::size_t j) {
    ++out_.counts.customer_arrivals[j];
    for (std::size_t i = 0; i < n_; ++i)
      if (lazy_[i]) refresh(i);
    if (measuring()) {
      auto& b = out_.batches[batch()];
      b.customer_arrivals[j] += 1.0;
      for (std::size_t i = 0; i < n_; ++i)
        if (q_[i] == 0) b.empty_seen[i] += 1.0;
    }
    const PolicyDecision d = pol_.on_customer(j, q_, rng_);
    if (!d.match_to) {
      ++out_.counts.customer_unmatched[j];
      return;
    }
    const std::size_t i = *d.match_to;
    if (i >= n_ || q_[i] == 0)
      throw std::logic_error("policy " + pol_.type() + " matched customer type " + std::to_string(j) +
                             " to an empty queue " + std::to_string(i));
    --q_[i];
    if (!lazy_[i]) --eager_waiting_;
    ++out_.counts.customer_matched[j];
    ++out_.counts.supplier_matched[i];
    if (measuring()) out_.batches[batch()].matches[i][j] += 1.0;
  }

  const Instance& inst_;
  Policy& pol_;
  CounterRng rng_;
  std::size_t n_, m_;
  double mu_, horizon_, warmup_;
  std::size_t nb_;
  double length_;
  double t_ = 0.0;
  std::size_t passed_ = 0;  // batch boundaries crossed; boundary 0 ends the warmup
  std::vector<std::size_t> q_;
  std::vector<char> lazy_;
  std::vector<double> last_;
  std::vector<std::size_t> tracked_;
  double eager_arrival_ = 0.0, customer_rate_ = 0.0;
  std::uint64_t eager_waiting_ = 0;
  std::vector<double> snapshot_;
  ReplicationResult out_;
};

}  // namespace detail

inline SimMetrics simulate(const Instance& inst, const Policy& policy, const SimConfig& cfg) {
  cfg.validate();
  check_compatible(policy, inst);
  std::vector<detail::ReplicationResult> runs(cfg.replications);
  parallel_for(cfg.replications, cfg.jobs, [&](std::size_t r) {
    auto pol = policy.clone();
    runs[r] = detail::Replication(inst, *pol, cfg, r).run();
  });

  const std::size_t n = inst.n(), m = inst.m();
  SimMetrics out;
  out.valid = true;
  out.batch_length = (cfg.horizon - cfg.warmup_time()) / static_cast<double>(cfg.batches);
  out.measured_time = (cfg.horizon - cfg.warmup_time()) * static_cast<double>(cfg.replications);
  out.batches = cfg.batches * cfg.replications;
  out.counter_names = policy.counter_names();
  out.buffer_columns = policy.buffer_columns();
  for (std::size_t i = 0; i < n; ++i)
    if (!policy.lazy(i)) out.state_queues.push_back(i);
  out.counts.resize(n, m);
  out.state_tracked = true;

  const double len = out.batch_length;
  std::vector<double> thr, cost;
  std::vector<std::vector<std::vector<double>>> pair(n, std::vector<std::vector<double>>(m));
  std::vector<std::vector<double>> empty_num(n), arrivals_all;
  const std::size_t cells = policy.buffers().size();
  std::vector<std::vector<double>> buf(cells);
  out.counter_batches.assign(out.counter_names.size(), {});
  std::unordered_map<std::uint64_t, double> state_time;
  std::vector<double> customer_totals;

  for (std::size_t r = 0; r < runs.size(); ++r) {
    auto& run = runs[r];
    out.counts.add(run.counts);
    out.state_tracked = out.state_tracked && run.state_tracked;
    for (const auto& [k, v] : run.state_time) state_time[k] += v;
    double rep_matches = 0.0, rep_cost = 0.0;
    for (const auto& b : run.batches) {
      double t = 0.0, c = 0.0, arr = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          t += b.matches[i][j];
          c += b.matches[i][j] * inst.costs[i][j];
          pair[i][j].push_back(b.matches[i][j] / len);
        }
      for (double a : b.customer_arrivals) arr += a;
      customer_totals.push_back(arr);
      for (std::size_t i = 0; i < n; ++i) empty_num[i].push_back(b.empty_seen[i]);
      for (std::size_t k = 0; k < cells; ++k) buf[k].push_back(b.buffer_area[k] / len);
      for (std::size_t k = 0; k < out.counter_names.size(); ++k)
        out.counter_batches[k].push_back(k < b.counters.size() ? b.counters[k] : 0.0);
      thr.push_back(t / len);
      cost.push_back(c / len);
      rep_matches += t;
      rep_cost += c;
    }
    const double span = cfg.horizon - cfg.warmup_time();
    out.replications.push_back({r, rep_matches / span, rep_cost / span, run.counts.events});
  }
  out.throughput = batch_estimate(thr);
  out.cost = batch_estimate(cost);
  out.match_rate.assign(n, std::vector<Estimate>(m));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.match_rate[i][j] = batch_estimate(pair[i][j]);
  for (std::size_t i = 0; i < n; ++i) out.empty_fraction.push_back(ratio_estimate(empty_num[i], customer_totals));
  for (std::size_t k = 0; k < cells; ++k) out.buffer_average.push_back(batch_estimate(buf[k]));

  if (out.state_tracked) {
    for (const auto& [key, time] : state_time) {
      std::vector<std::size_t> l(out.state_queues.size());
      for (std::size_t k = 0; k < l.size(); ++k)
        l[k] = static_cast<std::size_t>(key >> (detail::kStateBits * k) & ((1u << detail::kStateBits) - 1));
      out.state_distribution[l] += time / out.measured_time;
    }
  }
  return out;
}

inline double total_variation(const std::map<std::vector<std::size_t>, double>& p,
                              const std::map<std::vector<std::size_t>, double>& q) {
  double s = 0.0;
  for (const auto& [k, v] : p) {
    const auto it = q.find(k);
    s += std::abs(v - (it == q.end() ? 0.0 : it->second));
  }
  for (const auto& [k, v] : q)
    if (!p.count(k)) s += std::abs(v);
  return 0.5 * s;
}

struct ConvergenceCheck {
  double tv = 0.0;
  bool low_confidence = false;
};

// Distance between the simulated short-queue law and the Network LP's state marginals.
inline ConvergenceCheck check_short_convergence(const SimMetrics& metrics, const NlpSolution& nlp) {
  ConvergenceCheck c;
  if (nlp.classification.short_types.empty()) return c;
  if (!metrics.state_tracked) throw InputError("simulation did not track the short-queue state distribution");
  if (metrics.state_queues != nlp.classification.short_types)
    throw InputError("simulated state queues differ from the Network LP short queues");
  std::map<std::vector<std::size_t>, double> lp;
  const auto marg = nlp.short_marginals();
  for (std::size_t s = 0; s < marg.size(); ++s)
    if (marg[s] > 0.0) lp[nlp.states.decode(s)] = marg[s];
  c.tv = total_variation(metrics.state_distribution, lp);
  c.low_confidence = metrics.measured_time < 1e3;
  return c;
}

struct StabilityVerdict {
  bool pass = true;
  std::vector<double> growth;  // per buffer cell: log2 growth of the mean per horizon doubling
  std::string detail;
};

// Buffers fail when their time average grows by more than sqrt(2) per horizon doubling on
// average and the increase between the first and last horizon exceeds 3 standard errors.
inline StabilityVerdict check_buffer_stability(const std::vector<SimMetrics>& runs) {
  if (runs.size() < 3) throw InputError("buffer stability needs at least three doubling horizons");
  StabilityVerdict v;
  const std::size_t cells = runs.front().buffer_average.size();
  const double steps = static_cast<double>(runs.size() - 1);
  for (std::size_t c = 0; c < cells; ++c) {
    const Estimate a = runs.front().buffer_average[c], b = runs.back().buffer_average[c];
    const double growth = (b.value > 0.0 && a.value > 0.0) ? std::log2(b.value / a.value) / steps
                          : b.value > 0.0                  ? kInf
                                                           : 0.0;
    v.growth.push_back(growth);
    const bool significant = b.value - a.value > 3.0 * std::hypot(a.se, b.se);
    if (growth > 0.5 && significant) {
      v.pass = false;
      std::ostringstream msg;
      msg << "buffer cell " << c << " mean " << a.value << " -> " << b.value << "; ";
      v.detail += msg.str();
    }
  }
  return v;
}

inline nlohmann::json to_json(const Estimate& e) { return {{"value", e.value}, {"stderr", e.se}}; }

inline nlohmann::json to_json(const EventCounts& c) {
  return {{"customer_arrivals", c.customer_arrivals}, {"customer_matched", c.customer_matched},
          {"customer_unmatched", c.customer_unmatched}, {"supplier_arrivals", c.supplier_arrivals},
          {"supplier_matched", c.supplier_matched},     {"supplier_abandoned", c.supplier_abandoned},
          {"supplier_discarded", c.supplier_discarded}, {"supplier_waiting", c.supplier_waiting},
          {"events", c.events}};
}

inline nlohmann::json to_json(const SimMetrics& s) {
  nlohmann::json rates = nlohmann::json::array(), empty = nlohmann::json::array(), buf = nlohmann::json::array();
  for (const auto& row : s.match_rate) {
    nlohmann::json r = nlohmann::json::array();
    for (const auto& e : row) r.push_back(to_json(e));
    rates.push_back(r);
  }
  for (const auto& e : s.empty_fraction) empty.push_back(to_json(e));
  for (const auto& e : s.buffer_average) buf.push_back(to_json(e));
  nlohmann::json states = nlohmann::json::array();
  for (const auto& [k, v] : s.state_distribution) states.push_back({{"state", k}, {"probability", v}});
  nlohmann::json counters = nlohmann::json::object();
  for (std::size_t k = 0; k < s.counter_names.size(); ++k) {
    double total = 0.0;
    for (double x : s.counter_batches[k]) total += x;
    counters[s.counter_names[k]] = total;
  }
  return {{"valid", s.valid},
          {"throughput_rate", to_json(s.throughput)},
          {"cost_rate", to_json(s.cost)},
          {"match_rate", rates},
          {"empty_fraction", empty},
          {"buffer_columns", s.buffer_columns},
          {"buffer_average", buf},
          {"counters", counters},
          {"state_queues", s.state_queues},
          {"state_distribution", s.state_tracked ? states : nlohmann::json(nullptr)},
          {"batches", s.batches},
          {"batch_length", s.batch_length},
          {"measured_time", s.measured_time},
          {"counts", to_json(s.counts)}};
}

inline std::string replications_csv(const SimMetrics& s) {
  std::ostringstream out;
  out.precision(12);
  out << "replication,throughput_rate,cost_rate,events\n";
  for (const auto& r : s.replications)
    out << r.replication << ',' << r.throughput << ',' << r.cost << ',' << r.events << '\n';
  return out.str();
}

// Long-format table: metric,row,col,value,stderr (row/col empty when not indexed).
inline std::string metrics_csv(const SimMetrics& s) {
  std::ostringstream out;
  out.precision(12);
  out << "metric,row,col,value,stderr\n";
  out << "throughput_rate,,," << s.throughput.value << ',' << s.throughput.se << '\n';
  out << "cost_rate,,," << s.cost.value << ',' << s.cost.se << '\n';
  for (std::size_t i = 0; i < s.match_rate.size(); ++i)
    for (std::size_t j = 0; j < s.match_rate[i].size(); ++j)
      out << "match_rate," << i << ',' << j << ',' << s.match_rate[i][j].value << ',' << s.match_rate[i][j].se << '\n';
  for (std::size_t i = 0; i < s.empty_fraction.size(); ++i)
    out << "empty_fraction," << i << ",," << s.empty_fraction[i].value << ',' << s.empty_fraction[i].se << '\n';
  for (std::size_t k = 0; k < s.buffer_average.size(); ++k)
    out << "buffer_average," << k / std::max<std::size_t>(s.buffer_columns, 1) << ','
        << k % std::max<std::size_t>(s.buffer_columns, 1) << ',' << s.buffer_average[k].value << ','
        << s.buffer_average[k].se << '\n';
  for (std::size_t k = 0; k < s.counter_names.size(); ++k) {
    double total = 0.0;
    for (double x : s.counter_batches[k]) total += x;
    out << "counter:" << s.counter_names[k] << ",,," << total << ",\n";
  }
  return out.str();
}

}  // namespace matchq
