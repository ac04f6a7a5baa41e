#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"

#include "errors.hpp"
#include "models.hpp"
#include "optimizers.hpp"
#include "privacy.hpp"
#include "rng.hpp"
#include "theory.hpp"
#include "vec.hpp"

namespace dpopt {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

enum class OptimizerVariant : std::uint8_t {
  dp_microadam = 0,
  noisy_microadam = 1,
  dp_sgd = 2,
  dp_adam = 3,
  dp_adambc = 4,
  scale_then_privatize = 5,
  adam_oracle = 6,  // non-private reference; requires privacy disabled
};

inline OptimizerVariant variant_from_string(const std::string& s) {
  if (s == "dp_microadam") return OptimizerVariant::dp_microadam;
  if (s == "noisy_microadam") return OptimizerVariant::noisy_microadam;
  if (s == "dp_sgd") return OptimizerVariant::dp_sgd;
  if (s == "dp_adam") return OptimizerVariant::dp_adam;
  if (s == "dp_adambc") return OptimizerVariant::dp_adambc;
  if (s == "scale_then_privatize") return OptimizerVariant::scale_then_privatize;
  if (s == "adam_oracle") return OptimizerVariant::adam_oracle;
  throw ConfigError("unknown optimizer variant '" + s + "'");
}

inline std::string to_string(OptimizerVariant v) {
  switch (v) {
    case OptimizerVariant::dp_microadam: return "dp_microadam";
    case OptimizerVariant::noisy_microadam: return "noisy_microadam";
    case OptimizerVariant::dp_sgd: return "dp_sgd";
    case OptimizerVariant::dp_adam: return "dp_adam";
    case OptimizerVariant::dp_adambc: return "dp_adambc";
    case OptimizerVariant::scale_then_privatize: return "scale_then_privatize";
    case OptimizerVariant::adam_oracle: return "adam_oracle";
  }
  throw InvariantError("unreachable variant");
}

struct ProblemConfig {
  ProblemKind kind = ProblemKind::quadratic;
  std::size_t n = 0;
  std::size_t p = 0;
  std::size_t eval_n = 0;  // 0 -> max(n/4, 1)
  std::size_t hidden = 0;
  std::size_t classes = 0;
  std::uint64_t seed = 1;
};

struct OptimizerConfig {
  OptimizerVariant variant = OptimizerVariant::dp_microadam;
  AdamHyper adam;
  double k_fraction = 0.01;  // used when k == 0
  std::size_t k = 0;         // absolute top-k; 0 means derive from fraction
  int bits = 4;
  std::size_t window = 10;
  Rounding rounding = Rounding::stochastic;
};

struct PrivacyConfig {
  bool enabled = false;
  double clip_norm = 1.0;
  double sigma = -1.0;           // < 0 means "not given"
  double target_epsilon = -1.0;  // < 0 means "not given" (calibration mode)
  double target_delta = 1e-5;

  bool has_sigma() const { return sigma >= 0.0; }
  bool has_target() const { return target_epsilon > 0.0; }
};

struct ExperimentConfig {
  ProblemConfig problem;
  OptimizerConfig optimizer;
  PrivacyConfig privacy;
  long steps = 0;                // 0 means "not given"
  double stop_at_epsilon = -1.0; // < 0 means "not given" (budget stopping)
  std::size_t batch_size = 0;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  long metric_every = 10;
  std::string output;
  bool save_checkpoint = false;

  double sample_rate() const {
    return static_cast<double>(batch_size) / static_cast<double>(problem.n);
  }
  std::size_t eval_count() const {
    return problem.eval_n > 0 ? problem.eval_n : std::max<std::size_t>(problem.n / 4, 1);
  }
};

namespace detail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed,
                       const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) {
      if (it.key() == a) {
        ok = true;
        break;
      }
    }
    if (!ok) throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("bad value for '") + key + "'");
  }
}

template <typename T>
T require(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError("missing key '" + std::string(key) + "' in " + where);
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("bad value for '") + key + "' in " + where);
  }
}

}  // namespace detail

inline void validate(const ExperimentConfig& cfg) {
  const ProblemConfig& pb = cfg.problem;
  if (pb.n < 1 || pb.p < 1) throw ConfigError("problem needs n >= 1 and p >= 1");
  if (pb.kind == ProblemKind::mlp) {
    if (pb.hidden < 1 || pb.classes < 2)
      throw ConfigError("mlp problem needs hidden >= 1 and classes >= 2");
  } else if (pb.hidden != 0 || pb.classes != 0) {
    throw ConfigError("hidden/classes only apply to the mlp problem");
  }

  if (cfg.batch_size < 1 || cfg.batch_size > pb.n)
    throw ConfigError("batch_size must lie in [1, n]");
  if (cfg.seeds.empty()) throw ConfigError("seeds must be nonempty");
  if (cfg.metric_every < 1) throw ConfigError("metric_every must be >= 1");
  if (cfg.output.empty()) throw ConfigError("output path must be set");
  if (cfg.steps < 0) throw ConfigError("steps must be positive");
  if (cfg.steps == 0 && cfg.stop_at_epsilon < 0.0)
    throw ConfigError("either steps or stop_at_epsilon must be given");

  try {
    cfg.optimizer.adam.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(std::string("optimizer: ") + e.what());
  }
  if (cfg.optimizer.k == 0) {
    if (!(cfg.optimizer.k_fraction > 0.0 && cfg.optimizer.k_fraction <= 1.0))
      throw ConfigError("k_fraction must lie in (0, 1]");
  }
  if (cfg.optimizer.bits < 1 || cfg.optimizer.bits > 16)
    throw ConfigError("bits must lie in [1, 16]");
  if (cfg.optimizer.window < 1) throw ConfigError("window must be >= 1");

  const PrivacyConfig& pv = cfg.privacy;
  if (pv.enabled) {
    if (!(pv.clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
    if (!(pv.target_delta > 0.0 && pv.target_delta < 1.0))
      throw ConfigError("target_delta must lie in (0, 1)");
    if (pv.has_sigma() == pv.has_target())
      throw ConfigError("privacy needs exactly one of sigma / target_epsilon");
    if (pv.has_target() && cfg.steps == 0)
      throw ConfigError("target_epsilon calibration requires steps");
    if (cfg.stop_at_epsilon >= 0.0) {
      if (!(cfg.stop_at_epsilon > 0.0))
        throw ConfigError("stop_at_epsilon must be positive");
      if (!pv.has_sigma())
        throw ConfigError("stop_at_epsilon requires privacy with sigma given");
    }
    if (cfg.optimizer.variant == OptimizerVariant::adam_oracle)
      throw ConfigError("adam_oracle is the non-private reference; disable privacy");
  } else {
    if (cfg.stop_at_epsilon >= 0.0)
      throw ConfigError("stop_at_epsilon requires privacy enabled");
  }
}

inline ExperimentConfig parse_config(const json& j) {
  detail::check_keys(j,
                     {"problem", "optimizer", "privacy", "steps", "stop_at_epsilon",
                      "batch_size", "seeds", "metric_every", "output",
                      "save_checkpoint"},
                     "config");
  ExperimentConfig cfg;

  const json& pj = j.contains("problem") ? j.at("problem") : json::object();
  detail::check_keys(pj, {"kind", "n", "p", "eval_n", "hidden", "classes", "seed"},
                     "problem");
  std::string kind = detail::require<std::string>(pj, "kind", "problem");
  if (kind == "quadratic") {
    cfg.problem.kind = ProblemKind::quadratic;
  } else if (kind == "logistic") {
    cfg.problem.kind = ProblemKind::logistic;
  } else if (kind == "mlp") {
    cfg.problem.kind = ProblemKind::mlp;
  } else {
    throw ConfigError("unknown problem kind '" + kind + "'");
  }
  cfg.problem.n = detail::require<std::size_t>(pj, "n", "problem");
  cfg.problem.p = detail::require<std::size_t>(pj, "p", "problem");
  cfg.problem.eval_n = detail::get_or<std::size_t>(pj, "eval_n", 0);
  cfg.problem.hidden = detail::get_or<std::size_t>(pj, "hidden", 0);
  cfg.problem.classes = detail::get_or<std::size_t>(pj, "classes", 0);
  cfg.problem.seed = detail::get_or<std::uint64_t>(pj, "seed", 1);

  const json& oj = j.contains("optimizer") ? j.at("optimizer") : json::object();
  detail::check_keys(oj,
                     {"variant", "lr", "beta1", "beta2", "eps_stab", "k_fraction",
                      "k", "bits", "window", "rounding"},
                     "optimizer");
  cfg.optimizer.variant =
      variant_from_string(detail::require<std::string>(oj, "variant", "optimizer"));
  cfg.optimizer.adam.lr = detail::get_or<double>(oj, "lr", 1e-3);
  cfg.optimizer.adam.beta1 = detail::get_or<double>(oj, "beta1", 0.9);
  cfg.optimizer.adam.beta2 = detail::get_or<double>(oj, "beta2", 0.999);
  cfg.optimizer.adam.eps_stab = detail::get_or<double>(oj, "eps_stab", 1e-8);
  if (oj.contains("k") && oj.contains("k_fraction"))
    throw ConfigError("give k or k_fraction, not both");
  cfg.optimizer.k = detail::get_or<std::size_t>(oj, "k", 0);
  cfg.optimizer.k_fraction = detail::get_or<double>(oj, "k_fraction", 0.01);
  cfg.optimizer.bits = detail::get_or<int>(oj, "bits", 4);
  cfg.optimizer.window = detail::get_or<std::size_t>(oj, "window", 10);
  std::string rounding = detail::get_or<std::string>(oj, "rounding", "stochastic");
  if (rounding == "stochastic") {
    cfg.optimizer.rounding = Rounding::stochastic;
  } else if (rounding == "deterministic") {
    cfg.optimizer.rounding = Rounding::deterministic;
  } else {
    throw ConfigError("rounding must be 'stochastic' or 'deterministic'");
  }

  if (j.contains("privacy") && !j.at("privacy").is_null()) {
    const json& vj = j.at("privacy");
    detail::check_keys(vj, {"clip_norm", "sigma", "target_epsilon", "target_delta"},
                       "privacy");
    cfg.privacy.enabled = true;
    cfg.privacy.clip_norm = detail::require<double>(vj, "clip_norm", "privacy");
    cfg.privacy.sigma = detail::get_or<double>(vj, "sigma", -1.0);
    cfg.privacy.target_epsilon = detail::get_or<double>(vj, "target_epsilon", -1.0);
    cfg.privacy.target_delta = detail::get_or<double>(vj, "target_delta", 1e-5);
    if (vj.contains("sigma") && !(cfg.privacy.sigma >= 0.0))
      throw ConfigError("sigma must be nonnegative");
    if (vj.contains("target_epsilon") && !(cfg.privacy.target_epsilon > 0.0))
      throw ConfigError("target_epsilon must be positive");
  }

  cfg.steps = detail::get_or<long>(j, "steps", 0);
  if (j.contains("steps") && cfg.steps < 1) throw ConfigError("steps must be >= 1");
  cfg.stop_at_epsilon = detail::get_or<double>(j, "stop_at_epsilon", -1.0);
  cfg.batch_size = detail::require<std::size_t>(j, "batch_size", "config");
  cfg.seeds = detail::get_or<std::vector<std::uint64_t>>(j, "seeds",
                                                         {1, 2, 3, 4, 5});
  cfg.metric_every = detail::get_or<long>(j, "metric_every", 10);
  cfg.output = detail::require<std::string>(j, "output", "config");
  cfg.save_checkpoint = detail::get_or<bool>(j, "save_checkpoint", false);

  validate(cfg);
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(j);
}

// ---------------------------------------------------------------------------
// Metrics formatting
// ---------------------------------------------------------------------------

// Shortest round-trippable decimal form; used for every float that lands in
// a metrics file so reruns are byte-identical.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0.0 ? "inf" : "-inf";
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline constexpr const char* kMetricsHeader =
    "step,train_loss,eval_loss,grad_norm,epsilon";

// ---------------------------------------------------------------------------
// Running experiments
// ---------------------------------------------------------------------------

struct SeedResult {
  std::uint64_t seed = 0;
  long steps_run = 0;
  double final_train_loss = std::numeric_limits<double>::quiet_NaN();
  double final_eval_loss = std::numeric_limits<double>::quiet_NaN();
  double final_epsilon = std::numeric_limits<double>::infinity();
  bool diverged = false;
  long diverged_at = -1;
  double wall_ms = 0.0;
  std::string metrics_path;
};

struct RunResult {
  double sigma_used = 0.0;
  long planned_steps = 0;
  std::vector<SeedResult> seeds;
  double median_final_train_loss = std::numeric_limits<double>::quiet_NaN();
  double median_final_eval_loss = std::numeric_limits<double>::quiet_NaN();
  bool any_diverged = false;
  std::string summary_path;
};

namespace detail {

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline Dataset dataset_slice(const Dataset& d, std::size_t start, std::size_t count) {
  if (start + count > d.n) throw InvariantError("dataset_slice out of range");
  Dataset out;
  out.n = count;
  out.p = d.p;
  out.label_kind = d.label_kind;
  out.seed = d.seed;
  out.features.assign(d.features.begin() + start * d.p,
                      d.features.begin() + (start + count) * d.p);
  out.labels.assign(d.labels.begin() + start, d.labels.begin() + start + count);
  return out;
}

inline Vec initial_theta(const ExperimentConfig& cfg, const Problem& pr,
                         std::uint64_t run_seed) {
  Vec theta(pr.param_dim, 0.0);
  if (pr.kind == ProblemKind::mlp) {
    // Symmetry breaking: scaled Gaussian fan-in init for the weights,
    // zero biases.
    RngStream init_rng = substream(run_seed, "init");
    const std::size_t p = pr.feature_dim, h = pr.hidden, c = pr.classes;
    double s1 = 1.0 / std::sqrt(static_cast<double>(p));
    double s2 = 1.0 / std::sqrt(static_cast<double>(h));
    for (std::size_t i = 0; i < h * p; ++i) theta[i] = s1 * init_rng.gaussian();
    for (std::size_t i = 0; i < c * h; ++i)
      theta[h * p + h + i] = s2 * init_rng.gaussian();
  }
  (void)cfg;
  return theta;
}

}  // namespace detail

// Runs every configured seed sequentially, writing one CSV per seed plus a
// summary JSON with the per-seed finals and their medians.  A diverging
// seed is recorded and the remaining seeds still run.
inline RunResult run_experiment(const ExperimentConfig& cfg) {
  validate(cfg);
  namespace fs = std::filesystem;
  fs::create_directories(cfg.output);

  const std::size_t eval_n = cfg.eval_count();
  Dataset all = make_synthetic(cfg.problem.kind, cfg.problem.n + eval_n,
                               cfg.problem.p, cfg.problem.seed,
                               cfg.problem.classes);
  Dataset train = detail::dataset_slice(all, 0, cfg.problem.n);
  Dataset eval = detail::dataset_slice(all, cfg.problem.n, eval_n);

  Problem pr = make_problem(cfg.problem.kind, cfg.problem.p, cfg.problem.hidden,
                            cfg.problem.classes);
  const std::size_t d = pr.param_dim;
  std::size_t k = cfg.optimizer.k;
  if (k == 0) {
    k = static_cast<std::size_t>(
        std::ceil(cfg.optimizer.k_fraction * static_cast<double>(d)));
    k = std::min(std::max<std::size_t>(k, 1), d);
  }
  if (k > d) throw ConfigError("k exceeds parameter dimension");

  const double q_s = cfg.sample_rate();
  const double nominal_batch = q_s * static_cast<double>(cfg.problem.n);

  RunResult result;

  // Noise level: given directly, or calibrated so the configured horizon
  // spends exactly the target budget.
  double sigma = 0.0;
  if (cfg.privacy.enabled) {
    sigma = cfg.privacy.has_sigma()
                ? cfg.privacy.sigma
                : calibrate_sigma(cfg.privacy.target_epsilon,
                                  cfg.privacy.target_delta, q_s, cfg.steps);
  }
  result.sigma_used = sigma;

  // Horizon: fixed steps, or the largest count the budget admits (capped by
  // steps when both are given).  No step executes past the budget.
  long planned = cfg.steps;
  if (cfg.stop_at_epsilon > 0.0) {
    long budget_steps = steps_until_budget(cfg.stop_at_epsilon,
                                           cfg.privacy.target_delta, q_s, sigma);
    planned = cfg.steps > 0 ? std::min(cfg.steps, budget_steps) : budget_steps;
  }
  result.planned_steps = planned;

  RDPCurve step_curve;
  const bool accounted = cfg.privacy.enabled && sigma > 0.0;
  if (accounted) step_curve = single_step_curve(q_s, sigma);
  auto epsilon_at = [&](long t) {
    if (!accounted) return std::numeric_limits<double>::infinity();
    return rdp_to_dp(compose(step_curve, t), cfg.privacy.target_delta).epsilon;
  };

  PrivacySpec spec;
  spec.clip_norm = cfg.privacy.enabled
                       ? cfg.privacy.clip_norm
                       : std::numeric_limits<double>::infinity();
  spec.noise_multiplier = sigma;
  spec.sample_rate = q_s;
  spec.target_delta = cfg.privacy.target_delta;

  for (std::uint64_t run_seed : cfg.seeds) {
    auto t_start = std::chrono::steady_clock::now();
    SeedResult sr;
    sr.seed = run_seed;
    sr.metrics_path =
        cfg.output + "/run_seed" + std::to_string(run_seed) + ".csv";

    std::ofstream csv(sr.metrics_path, std::ios::binary);
    if (!csv) throw InputError("cannot open metrics file: " + sr.metrics_path);
    csv << kMetricsHeader << "\n";

    Vec theta0 = detail::initial_theta(cfg, pr, run_seed);

    MicroAdamState micro;
    AmsState ams;
    BaselineState base;
    AdamOracleState oracle;
    const OptimizerVariant variant = cfg.optimizer.variant;
    switch (variant) {
      case OptimizerVariant::dp_microadam: {
        MicroAdamParams params;
        params.adam = cfg.optimizer.adam;
        params.k = k;
        params.bits = cfg.optimizer.bits;
        params.window = cfg.optimizer.window;
        params.rounding = cfg.optimizer.rounding;
        micro = make_microadam(theta0, params, spec, nominal_batch);
        break;
      }
      case OptimizerVariant::noisy_microadam: {
        NoisyMicroParams params;
        params.adam = cfg.optimizer.adam;
        params.k = k;
        params.compressor = ErrorCompressor::stochastic_quant;
        params.bits = cfg.optimizer.bits;
        ams = make_noisy_microadam(theta0, params);
        break;
      }
      case OptimizerVariant::dp_sgd:
      case OptimizerVariant::dp_adam:
      case OptimizerVariant::dp_adambc:
      case OptimizerVariant::scale_then_privatize: {
        BaselineVariant bv = variant == OptimizerVariant::dp_sgd
                                 ? BaselineVariant::dp_sgd
                             : variant == OptimizerVariant::dp_adam
                                 ? BaselineVariant::dp_adam
                             : variant == OptimizerVariant::dp_adambc
                                 ? BaselineVariant::dp_adambc
                                 : BaselineVariant::scale_then_privatize;
        base = make_baseline(bv, theta0, cfg.optimizer.adam, spec, nominal_batch);
        break;
      }
      case OptimizerVariant::adam_oracle: {
        oracle = make_adam_oracle(theta0, cfg.optimizer.adam);
        break;
      }
    }

    auto current_theta = [&]() -> const Vec& {
      switch (variant) {
        case OptimizerVariant::dp_microadam: return micro.theta;
        case OptimizerVariant::noisy_microadam: return ams.theta;
        case OptimizerVariant::adam_oracle: return oracle.theta;
        default: return base.theta;
      }
    };

    RngStream subsample_rng = substream(run_seed, "subsample");
    RngStream noise_rng = substream(run_seed, "noise");
    RngStream quantize_rng = substream(run_seed, "quantize");
    Vec zero_noise(d, 0.0);

    auto write_row = [&](long t) {
      double tl = loss(pr, current_theta(), train);
      double el = loss(pr, current_theta(), eval);
      double gn = l2_norm(full_grad(pr, current_theta(), train));
      csv << t << ',' << format_double(tl) << ',' << format_double(el) << ','
          << format_double(gn) << ',' << format_double(epsilon_at(t)) << "\n";
    };

    long t = 0;
    try {
      for (t = 1; t <= planned; ++t) {
        std::vector<std::size_t> batch =
            poisson_subsample(cfg.problem.n, q_s, subsample_rng);
        std::vector<Vec> grads =
            per_sample_gradients(pr, current_theta(), train, batch);
        switch (variant) {
          case OptimizerVariant::dp_microadam:
            microadam_step(micro, grads, noise_rng, quantize_rng);
            break;
          case OptimizerVariant::noisy_microadam: {
            PrivatizedGradient g =
                privatize(grads, d, spec, nominal_batch, noise_rng);
            noisy_microadam_step(ams, g.vector, zero_noise, quantize_rng);
            break;
          }
          case OptimizerVariant::adam_oracle: {
            Vec g(d, 0.0);
            for (const Vec& gi : grads)
              for (std::size_t i = 0; i < d; ++i) g[i] += gi[i];
            if (!grads.empty())
              for (double& v : g) v /= static_cast<double>(grads.size());
            adam_oracle_step(oracle, g);
            break;
          }
          default:
            baseline_step(base, grads, noise_rng);
            break;
        }
        if (t % cfg.metric_every == 0 || t == planned) write_row(t);
        sr.steps_run = t;
      }
      sr.final_train_loss = loss(pr, current_theta(), train);
      sr.final_eval_loss = loss(pr, current_theta(), eval);
      sr.final_epsilon = epsilon_at(sr.steps_run);
    } catch (const DivergenceError& e) {
      sr.diverged = true;
      sr.diverged_at = e.step;
      sr.steps_run = t - 1;
      sr.final_epsilon = epsilon_at(std::max(sr.steps_run, 0L));
      result.any_diverged = true;
    }
    csv.close();

    if (cfg.save_checkpoint && !sr.diverged) {
      std::string ckpt =
          cfg.output + "/checkpoint_seed" + std::to_string(run_seed) + ".bin";
      switch (variant) {
        case OptimizerVariant::dp_microadam: write_file(ckpt, serialize(micro)); break;
        case OptimizerVariant::noisy_microadam: write_file(ckpt, serialize(ams)); break;
        case OptimizerVariant::adam_oracle: write_file(ckpt, serialize(oracle)); break;
        default: write_file(ckpt, serialize(base)); break;
      }
    }

    auto t_end = std::chrono::steady_clock::now();
    sr.wall_ms =
        std::chrono::duration<double, std::milli>(t_end - t_start).count();
    result.seeds.push_back(std::move(sr));
  }

  std::vector<double> finals_train, finals_eval;
  for (const SeedResult& sr : result.seeds) {
    if (!sr.diverged) {
      finals_train.push_back(sr.final_train_loss);
      finals_eval.push_back(sr.final_eval_loss);
    }
  }
  result.median_final_train_loss = detail::median(finals_train);
  result.median_final_eval_loss = detail::median(finals_eval);

  json summary;
  summary["variant"] = to_string(cfg.optimizer.variant);
  summary["sigma"] = result.sigma_used;
  summary["planned_steps"] = result.planned_steps;
  summary["sample_rate"] = q_s;
  summary["privacy_enabled"] = cfg.privacy.enabled;
  json per_seed = json::array();
  for (const SeedResult& sr : result.seeds) {
    json e;
    e["seed"] = sr.seed;
    e["steps_run"] = sr.steps_run;
    e["final_train_loss"] =
        std::isnan(sr.final_train_loss) ? json() : json(sr.final_train_loss);
    e["final_eval_loss"] =
        std::isnan(sr.final_eval_loss) ? json() : json(sr.final_eval_loss);
    e["final_epsilon"] = std::isinf(sr.final_epsilon)
                             ? json("inf")
                             : json(sr.final_epsilon);
    e["diverged"] = sr.diverged;
    if (sr.diverged) e["diverged_at"] = sr.diverged_at;
    e["wall_ms"] = sr.wall_ms;
    e["metrics"] = sr.metrics_path;
    per_seed.push_back(std::move(e));
  }
  summary["per_seed"] = std::move(per_seed);
  summary["median_final_train_loss"] = std::isnan(result.median_final_train_loss)
                                           ? json()
                                           : json(result.median_final_train_loss);
  summary["median_final_eval_loss"] = std::isnan(result.median_final_eval_loss)
                                          ? json()
                                          : json(result.median_final_eval_loss);
  summary["seeds_diverged"] =
      static_cast<long>(std::count_if(result.seeds.begin(), result.seeds.end(),
                                      [](const SeedResult& s) { return s.diverged; }));

  result.summary_path = cfg.output + "/summary.json";
  std::ofstream out(result.summary_path, std::ios::binary);
  if (!out) throw InputError("cannot open summary file: " + result.summary_path);
  out << summary.dump(2) << "\n";
  return result;
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

struct SweepCell {
  std::string value;
  RunResult run;
};

struct SweepResult {
  std::string axis;
  std::vector<SweepCell> cells;
  std::string summary_path;
};

// Re-runs the base config once per axis value, each into its own output
// subdirectory, and writes a comparison table.
inline SweepResult sweep(const ExperimentConfig& base, const std::string& axis,
                         const std::vector<std::string>& values) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  SweepResult result;
  result.axis = axis;

  for (const std::string& raw : values) {
    ExperimentConfig cfg = base;
    cfg.output = base.output + "/" + axis + "=" + raw;
    if (axis == "sigma") {
      if (!base.privacy.enabled || !base.privacy.has_sigma())
        throw ConfigError("sigma sweep requires privacy with sigma given");
      cfg.privacy.sigma = std::stod(raw);
    } else if (axis == "epsilon") {
      if (base.stop_at_epsilon > 0.0) {
        cfg.stop_at_epsilon = std::stod(raw);
      } else if (base.privacy.enabled && base.privacy.has_target()) {
        cfg.privacy.target_epsilon = std::stod(raw);
      } else {
        throw ConfigError(
            "epsilon sweep requires stop_at_epsilon or target_epsilon in base");
      }
    } else if (axis == "T") {
      cfg.steps = std::stol(raw);
    } else if (axis == "optimizer") {
      cfg.optimizer.variant = variant_from_string(raw);
    } else {
      throw ConfigError("unknown sweep axis '" + axis +
                        "' (expected sigma|epsilon|T|optimizer)");
    }
    validate(cfg);
    SweepCell cell;
    cell.value = raw;
    cell.run = run_experiment(cfg);
    result.cells.push_back(std::move(cell));
  }

  json table;
  table["axis"] = axis;
  json rows = json::array();
  for (const SweepCell& c : result.cells) {
    json r;
    r["value"] = c.value;
    r["sigma"] = c.run.sigma_used;
    r["planned_steps"] = c.run.planned_steps;
    r["median_final_train_loss"] = std::isnan(c.run.median_final_train_loss)
                                       ? json()
                                       : json(c.run.median_final_train_loss);
    r["median_final_eval_loss"] = std::isnan(c.run.median_final_eval_loss)
                                      ? json()
                                      : json(c.run.median_final_eval_loss);
    r["seeds_diverged"] = static_cast<long>(
        std::count_if(c.run.seeds.begin(), c.run.seeds.end(),
                      [](const SeedResult& s) { return s.diverged; }));
    rows.push_back(std::move(r));
  }
  table["rows"] = std::move(rows);

  namespace fs = std::filesystem;
  fs::create_directories(base.output);
  result.summary_path = base.output + "/sweep_summary.json";
  std::ofstream out(result.summary_path, std::ios::binary);
  if (!out) throw InputError("cannot open sweep summary: " + result.summary_path);
  out << table.dump(2) << "\n";
  return result;
}

// ---------------------------------------------------------------------------
// Oracle-equivalence check (verify --suite oracle)
// ---------------------------------------------------------------------------

struct OracleCheckResult {
  double max_rel_err = 0.0;
  long steps = 0;
  bool pass = false;
};

// With k = d the error path is exactly lossless (the residual is the zero
// vector, whose quantization decodes to zero), so the sparsified optimizer
// must reproduce dense bias-corrected Adam up to float-summation-order
// noise.  Noise-free full-batch logistic run, compared coordinatewise.
inline OracleCheckResult oracle_equivalence_check(long steps = 100,
                                                  double tolerance = 1e-10) {
  const std::size_t n = 256, p = 20;
  Dataset data = make_synthetic(ProblemKind::logistic, n, p, 424242);
  Problem pr = make_problem(ProblemKind::logistic, p);

  PrivacySpec noise_free;
  noise_free.clip_norm = std::numeric_limits<double>::infinity();
  noise_free.noise_multiplier = 0.0;
  noise_free.sample_rate = 1.0;
  noise_free.target_delta = 1e-5;

  MicroAdamParams params;
  params.k = p;  // k = d
  params.bits = 4;
  params.window = static_cast<std::size_t>(steps) + 8;
  MicroAdamState micro = make_microadam(Vec(p, 0.0), params, noise_free,
                                        static_cast<double>(n));
  AdamOracleState oracle = make_adam_oracle(Vec(p, 0.0), params.adam);

  RngStream noise_rng = substream(99, "noise");
  RngStream quant_rng = substream(99, "quantize");
  std::vector<std::size_t> batch(n);
  for (std::size_t i = 0; i < n; ++i) batch[i] = i;

  OracleCheckResult res;
  res.steps = steps;
  for (long t = 0; t < steps; ++t) {
    std::vector<Vec> grads = per_sample_gradients(pr, micro.theta, data, batch);
    microadam_step(micro, grads, noise_rng, quant_rng);
    Vec g = full_grad(pr, oracle.theta, data);
    adam_oracle_step(oracle, g);
  }
  for (std::size_t i = 0; i < p; ++i) {
    double a = micro.theta[i], b = oracle.theta[i];
    double denom = std::max({std::abs(a), std::abs(b), 1e-300});
    res.max_rel_err = std::max(res.max_rel_err, std::abs(a - b) / denom);
  }
  res.pass = res.max_rel_err <= tolerance;
  return res;
}

}  // namespace dpopt
