#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "matchq/dlp.hpp"
#include "matchq/euclid.hpp"
#include "matchq/instance.hpp"
#include "matchq/network.hpp"
#include "matchq/oracle.hpp"
#include "matchq/policies.hpp"
#include "matchq/sim.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace matchq;

namespace {

struct Options {
  std::string instance;
  std::string policy;
  std::optional<double> tau;
  double cost_cap = kInf;
  double eps = 0.1;
  std::optional<std::size_t> cap_override;
  std::uint64_t seed = 1;
  double horizon = 1e4;
  std::optional<double> warmup;
  std::size_t replications = 1;
  std::size_t batches = 20;
  std::size_t jobs = 0;
  std::string out;
  std::string format = "json";
  // figure1
  std::string panel = "both";
  std::vector<double> mu_grid;
  double mu_step = 0.05;
  double mu_max = 3.0;
  std::size_t instances = 1000;
};

Instance read_instance(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open instance file '" + path + "'");
  return load_instance(in);
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InputError("cannot parse '" + path + "': " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out || !(out << text)) throw InputError("cannot write '" + path.string() + "'");
}

// Writes to the file named by --out, or stdout when it is empty.
void emit(const std::string& out, const std::string& text) {
  if (out.empty()) std::cout << text;
  else write_text(out, text);
}

fs::path output_dir(const std::string& out) {
  fs::path dir = out.empty() ? fs::path(".") : fs::path(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InputError("cannot create output directory '" + dir.string() + "': " + ec.message());
  return dir;
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json config_json(const Options& o, const Accuracy& acc) {
  return {{"instance", o.instance},
          {"tau", o.tau ? json(*o.tau) : json(nullptr)},
          {"cost_cap", finite_or_null(o.cost_cap)},
          {"eps", acc.epsilon},
          {"cap_override", o.cap_override ? json(*o.cap_override) : json(nullptr)},
          {"seed", o.seed},
          {"jobs", o.jobs}};
}

json trials_json(const std::vector<KappaTrial>& trials) {
  json out = json::array();
  for (const auto& t : trials)
    out.push_back({{"kappa", t.kappa}, {"cap", t.cap}, {"status", to_string(t.status)},
                   {"objective", finite_or_null(t.objective)}, {"note", t.note}});
  return out;
}

int cmd_solve(const Options& o) {
  const Instance inst = read_instance(o.instance);
  if (!o.tau) throw InputError("solve needs --tau");
  const Target target{o.cost_cap, *o.tau};
  const Accuracy acc{o.eps};
  if (!(acc.epsilon > 0.0 && acc.epsilon < 1.0)) throw InputError("--eps must lie in (0, 1)");
  const fs::path dir = output_dir(o.out);
  json report{{"config", config_json(o, acc)}};
  std::unique_ptr<Policy> policy;
  bool ok = true;
  std::string message;

  if (inst.locations) {
    report["pipeline"] = "euclid";
    EuclidOptions eo;
    eo.jobs = o.jobs;
    eo.nlp.cap_override = o.cap_override;
    const auto r = solve_euclidean(inst, target, acc, o.seed, eo);
    report["grid"] = to_json(r.grid);
    report["tau_g"] = r.search.tau_g;
    report["tau_g_floored"] = r.search.floored;
    report["decomposition"] = to_json(r.search.solution);
    report["cell_target"] = r.assembled.cell_target;
    json costs = json::array();
    for (double c : r.assembled.class_cost) costs.push_back(finite_or_null(c));
    report["class_cost"] = costs;
    report["cost_estimate"] = r.assembled.cost_estimate;
    report["throughput_estimate"] = r.assembled.throughput_estimate;
    policy = r.assembled.policy->clone();
  } else if (inst.n() == 1) {
    report["pipeline"] = "dlp";
    const auto r = solve_dlp(inst, target, acc, o.cap_override.value_or(0));
    report["tau_target"] = r.tau_target;
    report["feasible"] = r.feasible;
    report["within_cost_cap"] = r.within_cost_cap;
    report["certificate"] = r.certificate;
    if (!r.feasible) throw InfeasibleError(r.certificate);
    report["solution"] = to_json(r.solution);
    report["duals"] = to_json(r.duals);
    policy = std::make_unique<DlpAdaptive>(extract_policy(r.solution));
    ok = r.within_cost_cap;
    message = r.certificate;
  } else {
    report["pipeline"] = "network";
    NlpOptions no;
    no.cap_override = o.cap_override;
    no.jobs = o.jobs;
    const auto r = solve_nlp(inst, target, acc, no);
    report["feasible"] = r.feasible;
    report["within_cost_cap"] = r.within_cost_cap;
    report["reduced_target_retry"] = r.reduced_target_retry;
    report["certificate"] = r.certificate;
    report["trials"] = trials_json(r.trials);
    if (!r.feasible) throw InfeasibleError(r.certificate);
    report["solution"] = to_json(r.solution);
    policy = std::make_unique<PriorityRounding>(inst.n(), r.solution);
    ok = r.within_cost_cap;
    message = r.certificate;
  }

  report["policy_file"] = (dir / "policy.json").string();
  write_text(dir / "policy.json", policy->to_json().dump(2) + "\n");
  write_text(dir / "report.json", report.dump(2) + "\n");
  if (!ok) {
    std::cerr << "matchq: " << message << '\n';
    return static_cast<int>(ErrorKind::infeasible);
  }
  std::cout << "wrote " << (dir / "policy.json").string() << " and " << (dir / "report.json").string() << '\n';
  return 0;
}

int cmd_simulate(const Options& o) {
  const Instance inst = read_instance(o.instance);
  const auto policy = policy_from_json(read_json(o.policy));
  SimConfig cfg;
  cfg.horizon = o.horizon;
  cfg.warmup = o.warmup;
  cfg.seed = o.seed;
  cfg.replications = o.replications;
  cfg.batches = o.batches;
  cfg.jobs = o.jobs;
  const auto m = simulate(inst, *policy, cfg);
  if (o.format == "csv") {
    emit(o.out, metrics_csv(m));
  } else {
    json doc{{"config",
              {{"instance", o.instance}, {"policy", o.policy}, {"horizon", cfg.horizon},
               {"warmup", cfg.warmup_time()}, {"seed", cfg.seed}, {"replications", cfg.replications},
               {"batches", cfg.batches}}},
             {"metrics", to_json(m)}};
    emit(o.out, doc.dump(2) + "\n");
  }
  return 0;
}

std::string csv_number(double v) {
  if (std::isinf(v)) return "inf";
  std::ostringstream s;
  s.precision(12);
  s << v;
  return s.str();
}

int cmd_figure1(const Options& o) {
  const fs::path dir = output_dir(o.out);
  const bool csv = o.format == "csv";
  if (o.panel == "b" || o.panel == "both") {
    std::vector<double> grid = o.mu_grid;
    if (grid.empty()) {
      if (!(o.mu_step > 0.0)) throw InputError("--mu-step must be positive");
      const auto steps = static_cast<std::size_t>(std::floor(o.mu_max / o.mu_step + 1e-9));
      for (std::size_t k = 0; k <= steps; ++k) grid.push_back(static_cast<double>(k) * o.mu_step);
    }
    const double tau = o.tau.value_or(3.0);
    const auto pts = adaptivity_gap(hard_instance(), tau, grid, o.jobs);
    if (csv) {
      std::ostringstream s;
      s << "mu,feasible,static_cost,adaptive_cost,gap\n";
      for (const auto& p : pts)
        s << csv_number(p.mu) << ',' << p.feasible << ',' << csv_number(p.static_cost) << ','
          << csv_number(p.adaptive_cost) << ',' << csv_number(p.gap) << '\n';
      write_text(dir / "figure1b.csv", s.str());
    } else {
      json rows = json::array();
      for (const auto& p : pts)
        rows.push_back({{"mu", p.mu}, {"feasible", p.feasible}, {"static_cost", finite_or_null(p.static_cost)},
                        {"adaptive_cost", finite_or_null(p.adaptive_cost)}, {"gap", finite_or_null(p.gap)}});
      write_text(dir / "figure1b.json", json{{"tau", tau}, {"points", rows}}.dump(2) + "\n");
    }
    double best = 0.0;
    for (const auto& p : pts)
      if (p.feasible && std::isfinite(p.gap)) best = std::max(best, p.gap);
    std::cout << "panel b: " << pts.size() << " points, max finite gap " << best << '\n';
  }
  if (o.panel == "a" || o.panel == "both") {
    const auto s = random_instance_study(o.instances, default_tau_grid(), o.seed, o.jobs);
    if (csv) {
      std::ostringstream out;
      out << "instance,tau,mu,static_cost,adaptive_cost,gap\n";
      for (const auto& r : s.rows)
        out << r.instance_id << ',' << csv_number(r.tau) << ',' << csv_number(r.mu) << ','
            << csv_number(r.static_cost) << ',' << csv_number(r.adaptive_cost) << ',' << csv_number(r.gap) << '\n';
      write_text(dir / "figure1a.csv", out.str());
    } else {
      json rows = json::array();
      for (const auto& r : s.rows)
        rows.push_back({{"instance", r.instance_id}, {"tau", r.tau}, {"mu", r.mu},
                        {"static_cost", finite_or_null(r.static_cost)},
                        {"adaptive_cost", finite_or_null(r.adaptive_cost)}, {"gap", finite_or_null(r.gap)}});
      write_text(dir / "figure1a.json", json{{"seed", o.seed}, {"rows", rows}}.dump(2) + "\n");
    }
    std::cout << "panel a: " << s.pairs << " pairs, mean excess " << s.mean_excess << ", above 5% "
              << s.frac_above_5pct << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive matching policies for queues with abandonment"};
  app.require_subcommand(1);
  Options o;
  auto format = [&](CLI::App* c) {
    c->add_option("--format", o.format, "Output format")->check(CLI::IsMember({"csv", "json"}));
  };

  auto* solve = app.add_subcommand("solve", "Solve the relaxation and write policy.json and report.json");
  solve->add_option("--instance", o.instance, "Instance JSON file")->required();
  solve->add_option("--tau", o.tau, "Throughput target")->required();
  solve->add_option("--cost-cap", o.cost_cap, "Cost target (default: none)");
  solve->add_option("--eps", o.eps, "Accuracy parameter");
  solve->add_option("--cap-override", o.cap_override, "Queue-length truncation cap");
  solve->add_option("--seed", o.seed, "Seed for the random grid shift");
  solve->add_option("--jobs", o.jobs, "Worker threads (0 = all cores)");
  solve->add_option("--out", o.out, "Output directory");

  auto* sim = app.add_subcommand("simulate", "Simulate a saved policy");
  sim->add_option("--instance", o.instance, "Instance JSON file")->required();
  sim->add_option("--policy", o.policy, "Policy JSON file")->required();
  sim->add_option("--horizon", o.horizon, "Time units per replication");
  sim->add_option("--warmup", o.warmup, "Discarded prefix (default: 10% of the horizon)");
  sim->add_option("--replications", o.replications, "Independent replications");
  sim->add_option("--batches", o.batches, "Batches per replication");
  sim->add_option("--seed", o.seed, "Base seed");
  sim->add_option("--jobs", o.jobs, "Worker threads (0 = all cores)");
  sim->add_option("--out", o.out, "Output file (default: stdout)");
  format(sim);

  auto* fig = app.add_subcommand("figure1", "Static versus adaptive cost curves");
  fig->add_option("--panel", o.panel, "Panels to compute")->check(CLI::IsMember({"a", "b", "both"}));
  fig->add_option("--tau", o.tau, "Throughput target for panel b (default 3)");
  fig->add_option("--mu-grid", o.mu_grid, "Explicit abandonment rates for panel b")->delimiter(',');
  fig->add_option("--mu-step", o.mu_step, "Grid step for panel b");
  fig->add_option("--mu-max", o.mu_max, "Grid end for panel b");
  fig->add_option("--instances", o.instances, "Random instances for panel a");
  fig->add_option("--seed", o.seed, "Seed for panel a");
  fig->add_option("--jobs", o.jobs, "Worker threads (0 = all cores)");
  fig->add_option("--out", o.out, "Output directory");
  format(fig);
  o.format = "json";

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::input);
  }
  if (fig->parsed() && fig->count("--format") == 0) o.format = "csv";

  try {
    if (solve->parsed()) return cmd_solve(o);
    if (sim->parsed()) return cmd_simulate(o);
    return cmd_figure1(o);
  } catch (const Error& e) {
    std::cerr << "matchq: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "matchq: " << e.what() << '\n';
    return static_cast<int>(ErrorKind::numerical);
  }
}
