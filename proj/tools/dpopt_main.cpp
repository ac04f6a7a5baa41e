// Command-line front end: run / sweep experiments, query the privacy
// accountant, calibrate noise, and run the verification suites.
//
// Exit codes: 0 success, 2 configuration error, 3 divergence during a run,
// 4 failed verification.

#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include <dpopt/dpopt.hpp>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitVerifyFailed = 4;

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int cmd_run(const std::string& config_path) {
  dpopt::ExperimentConfig cfg = dpopt::load_config(config_path);
  dpopt::RunResult res = dpopt::run_experiment(cfg);
  nlohmann::json out;
  out["summary"] = res.summary_path;
  out["sigma"] = res.sigma_used;
  out["planned_steps"] = res.planned_steps;
  out["median_final_eval_loss"] = std::isnan(res.median_final_eval_loss)
                                      ? nlohmann::json()
                                      : nlohmann::json(res.median_final_eval_loss);
  out["seeds_diverged"] =
      static_cast<long>(std::count_if(res.seeds.begin(), res.seeds.end(),
                                      [](const dpopt::SeedResult& s) {
                                        return s.diverged;
                                      }));
  std::cout << out.dump(2) << std::endl;
  return res.any_diverged ? kExitDivergence : kExitOk;
}

int cmd_sweep(const std::string& config_path, const std::string& axis,
              const std::string& values) {
  dpopt::ExperimentConfig cfg = dpopt::load_config(config_path);
  dpopt::SweepResult res = dpopt::sweep(cfg, axis, split_csv(values));
  bool any_diverged = false;

  // Printed comparison table: one row per axis value.
  std::printf("%-14s %10s %8s %22s %22s\n", axis.c_str(), "sigma", "steps",
              "median_train_loss", "median_eval_loss");
  for (const dpopt::SweepCell& c : res.cells) {
    std::printf("%-14s %10.4g %8ld %22.10g %22.10g\n", c.value.c_str(),
                c.run.sigma_used, c.run.planned_steps,
                c.run.median_final_train_loss, c.run.median_final_eval_loss);
    any_diverged = any_diverged || c.run.any_diverged;
  }
  std::printf("summary: %s\n", res.summary_path.c_str());
  return any_diverged ? kExitDivergence : kExitOk;
}

int cmd_accountant(double sigma, double sample_rate, long steps, double delta) {
  dpopt::DpResult r = dpopt::compute_epsilon(sigma, sample_rate, steps, delta);
  nlohmann::json out;
  out["epsilon"] = std::isinf(r.epsilon) ? nlohmann::json("inf")
                                         : nlohmann::json(r.epsilon);
  out["best_order"] = r.best_order;
  out["sigma"] = sigma;
  out["sample_rate"] = sample_rate;
  out["steps"] = steps;
  out["delta"] = delta;
  std::cout << out.dump(2) << std::endl;
  return kExitOk;
}

int cmd_calibrate(double epsilon, double delta, double sample_rate, long steps) {
  double sigma = dpopt::calibrate_sigma(epsilon, delta, sample_rate, steps);
  dpopt::DpResult achieved = dpopt::compute_epsilon(sigma, sample_rate, steps, delta);
  nlohmann::json out;
  out["sigma"] = sigma;
  out["achieved_epsilon"] = achieved.epsilon;
  out["best_order"] = achieved.best_order;
  std::cout << out.dump(2) << std::endl;
  return kExitOk;
}

int cmd_verify(const std::string& suite, int runs) {
  nlohmann::json out;
  bool pass = false;
  if (suite == "lemmas") {
    dpopt::LemmaConfig cfg;
    if (runs > 0) cfg.runs = runs;
    dpopt::LemmaReport report = dpopt::lemma_suite(cfg);
    out["suite"] = "lemmas";
    out["runs"] = cfg.runs;
    out["realized_grad_bound"] = report.realized_grad_bound;
    out["realized_omega"] = report.realized_omega;
    out["q_omega"] = report.q_omega;
    nlohmann::json rows = nlohmann::json::array();
    bool all_conclusive = true;
    for (const dpopt::LemmaResult& r : report.results) {
      nlohmann::json row;
      row["lemma"] = r.id;
      row["empirical"] = r.empirical;
      row["bound"] = r.bound;
      row["deterministic"] = r.deterministic;
      row["samples"] = r.samples;
      row["conclusive"] = r.conclusive;
      row["pass"] = r.pass;
      rows.push_back(std::move(row));
      all_conclusive = all_conclusive && r.conclusive;
    }
    out["results"] = std::move(rows);
    pass = report.all_pass && all_conclusive;
    out["pass"] = pass;
  } else if (suite == "rate") {
    dpopt::RateCheckResult res = dpopt::run_rate_check(dpopt::RateCheckConfig{});
    out["suite"] = "rate";
    nlohmann::json pts = nlohmann::json::array();
    for (auto& [T, v] : res.averages) pts.push_back({{"T", T}, {"value", v}});
    out["points"] = std::move(pts);
    out["slope"] = res.fit.slope;
    out["r2"] = res.fit.r2;
    out["reliable"] = res.fit.reliable;
    pass = res.fit.reliable && res.fit.slope <= -0.4;
    out["pass"] = pass;
  } else if (suite == "oracle") {
    dpopt::OracleCheckResult res = dpopt::oracle_equivalence_check();
    out["suite"] = "oracle";
    out["steps"] = res.steps;
    out["max_rel_err"] = res.max_rel_err;
    pass = res.pass;
    out["pass"] = pass;
  } else {
    throw dpopt::ConfigError("unknown verify suite '" + suite +
                             "' (expected lemmas|rate|oracle)");
  }
  std::cout << out.dump(2) << std::endl;
  return pass ? kExitOk : kExitVerifyFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dpopt: differentially private optimization toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  auto* run = app.add_subcommand("run", "run an experiment from a JSON config");
  run->add_option("--config", config_path, "config file path")->required();

  std::string sweep_config, sweep_axis, sweep_values;
  auto* sw = app.add_subcommand("sweep", "run a one-axis sweep of a base config");
  sw->add_option("--config", sweep_config, "base config file path")->required();
  sw->add_option("--axis", sweep_axis, "sigma|epsilon|T|optimizer")->required();
  sw->add_option("--values", sweep_values, "comma-separated values")->required();

  double acc_sigma = 0.0, acc_rate = 0.0, acc_delta = 0.0;
  long acc_steps = 0;
  auto* acc = app.add_subcommand("accountant", "forward privacy accounting");
  acc->add_option("--sigma", acc_sigma, "noise multiplier")->required();
  acc->add_option("--sample-rate", acc_rate, "Poisson sampling rate")->required();
  acc->add_option("--steps", acc_steps, "number of steps")->required();
  acc->add_option("--delta", acc_delta, "target delta")->required();

  double cal_eps = 0.0, cal_delta = 0.0, cal_rate = 0.0;
  long cal_steps = 0;
  auto* cal = app.add_subcommand("calibrate", "solve for the noise multiplier");
  cal->add_option("--epsilon", cal_eps, "target epsilon")->required();
  cal->add_option("--delta", cal_delta, "target delta")->required();
  cal->add_option("--sample-rate", cal_rate, "Poisson sampling rate")->required();
  cal->add_option("--steps", cal_steps, "number of steps")->required();

  std::string verify_suite;
  int verify_runs = 0;
  auto* ver = app.add_subcommand("verify", "run a verification suite");
  ver->add_option("--suite", verify_suite, "lemmas|rate|oracle")->required();
  ver->add_option("--runs", verify_runs, "Monte-Carlo runs (lemmas suite)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (app.got_subcommand(run)) return cmd_run(config_path);
    if (app.got_subcommand(sw)) return cmd_sweep(sweep_config, sweep_axis, sweep_values);
    if (app.got_subcommand(acc))
      return cmd_accountant(acc_sigma, acc_rate, acc_steps, acc_delta);
    if (app.got_subcommand(cal))
      return cmd_calibrate(cal_eps, cal_delta, cal_rate, cal_steps);
    if (app.got_subcommand(ver)) return cmd_verify(verify_suite, verify_runs);
  } catch (const dpopt::DivergenceError& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kExitDivergence;
  } catch (const dpopt::ConfigError& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kExitConfig;
  } catch (const dpopt::Error& e) {
    // Bad parameter values reaching the library surface are configuration
    // mistakes from the CLI's point of view.
    std::cerr << "error: " << e.what() << std::endl;
    return kExitConfig;
  }
  return kExitConfig;
}
