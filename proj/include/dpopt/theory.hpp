#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "compression.hpp"
#include "errors.hpp"
#include "models.hpp"
#include "optimizers.hpp"
#include "rng.hpp"
#include "vec.hpp"

namespace dpopt {

// ---------------------------------------------------------------------------
// Convergence-bound constants
// ---------------------------------------------------------------------------

// The three constants appearing in the finite-horizon guarantee, together
// with the ingredients they were built from.  S abbreviates (G + sqrt(d)
// sigma)^2, the worst-case second moment of a noisy clipped gradient.
struct TheoryConstants {
  double q = 0.0;        // top-k contraction factor
  double omega = 0.0;    // quantizer relative-error bound
  double beta1 = 0.0;
  double grad_bound = 0.0;  // G
  double dim = 0.0;         // d
  double sigma = 0.0;       // per-coordinate noise std
  double eps_stab = 0.0;
  double q_omega = 0.0;  // (1 + omega) q, the joint contraction
  double s = 0.0;        // (G + sqrt(d) sigma)^2
  double c0 = 0.0;
  double c1 = 0.0;
  double c2 = 0.0;
};

// Requires the joint contraction (1 + omega) q < 1; otherwise the
// error-feedback recursion has no geometric envelope and the guarantee is
// void, which is reported as a validity failure rather than a number.
inline TheoryConstants constants(double q, double omega, double beta1, double G,
                                 double d, double sigma, double eps_stab) {
  if (!(q >= 0.0 && q < 1.0)) throw ParameterError("constants: q must lie in [0, 1)");
  if (!(omega >= 0.0)) throw ParameterError("constants: omega must be nonnegative");
  if (!(beta1 >= 0.0 && beta1 < 1.0))
    throw ParameterError("constants: beta1 must lie in [0, 1)");
  if (!(G >= 0.0)) throw ParameterError("constants: G must be nonnegative");
  if (!(d >= 1.0)) throw ParameterError("constants: d must be >= 1");
  if (!(sigma >= 0.0)) throw ParameterError("constants: sigma must be nonnegative");
  if (!(eps_stab > 0.0)) throw ParameterError("constants: eps_stab must be positive");

  TheoryConstants tc;
  tc.q = q;
  tc.omega = omega;
  tc.beta1 = beta1;
  tc.grad_bound = G;
  tc.dim = d;
  tc.sigma = sigma;
  tc.eps_stab = eps_stab;
  tc.q_omega = (1.0 + omega) * q;
  if (!(tc.q_omega < 1.0))
    throw ValidityError("constants: (1 + omega) q = " + std::to_string(tc.q_omega) +
                        " must be below 1");

  const double qw2 = tc.q_omega * tc.q_omega;
  const double gap = 1.0 - qw2;
  const double root_s = G + std::sqrt(d) * sigma;
  tc.s = root_s * root_s;
  tc.c0 = std::sqrt(8.0 * (1.0 + qw2) * (1.0 + qw2) * (1.0 + qw2) / (gap * gap) * tc.s +
                    eps_stab);
  tc.c2 = omega * q * (1.0 + 2.0 * tc.q_omega / gap);
  tc.c1 = beta1 / (1.0 - beta1) * (1.0 + tc.c2) + 2.0 * tc.q_omega / gap;
  return tc;
}

// Finite-horizon bound on (1/T) sum_t E ||grad f(theta_t)||^2.  The first
// group decays like 1/sqrt(T) (the stepsize eta = 1/sqrt(T) regime), the
// second like 1/T.
inline double theorem_bound(const TheoryConstants& tc, double smoothness,
                            double sigma_g, double f_gap, long steps) {
  if (steps < 1) throw ParameterError("theorem_bound: steps must be >= 1");
  if (!(smoothness >= 0.0))
    throw ParameterError("theorem_bound: smoothness must be nonnegative");
  if (!(sigma_g >= 0.0))
    throw ParameterError("theorem_bound: sigma_g must be nonnegative");
  if (!(f_gap >= 0.0))
    throw ParameterError("theorem_bound: f_gap must be nonnegative");

  const double T = static_cast<double>(steps);
  const double rt = std::sqrt(T);
  const double eps = tc.eps_stab;
  const double rte = std::sqrt(eps);
  const double rd = std::sqrt(tc.dim);
  const double var_term = sigma_g * sigma_g + tc.dim * tc.sigma * tc.sigma +
                          tc.c2 * tc.c2 * tc.s;

  double sqrt_group = f_gap / rt + smoothness * var_term / (eps * rt) +
                      (1.0 + tc.c1) * tc.s * rd / (rt * rte);
  double lin_group = (4.0 * smoothness * tc.c0 * f_gap / eps +
                      smoothness * smoothness * tc.c0 * tc.c1 * tc.c1 * tc.s /
                          (eps * eps) +
                      (1.0 + 2.0 * tc.c1) * tc.c1 * smoothness * tc.s * rd / rte) /
                     T;
  return 2.0 * tc.c0 * (sqrt_group + lin_group);
}

// ---------------------------------------------------------------------------
// Lemma verification suite
// ---------------------------------------------------------------------------

// Each row compares an empirical statistic against the analytic bound it is
// supposed to obey.  Deterministic rows must hold on every trajectory;
// stochastic rows test the one-sided 99% lower confidence limit of the
// estimated mean, and are marked inconclusive when there are too few runs
// for the normal approximation to mean anything.
struct LemmaResult {
  std::string id;
  double empirical = 0.0;  // worst observed statistic (or lower conf. limit)
  double bound = 0.0;
  bool deterministic = false;
  long samples = 0;
  bool conclusive = true;
  bool pass = false;
};

struct LemmaReport {
  std::vector<LemmaResult> results;
  double realized_grad_bound = 0.0;  // G over all trajectories
  double realized_omega = 0.0;       // worst-case quantizer certificate seen
  double q = 0.0;
  double q_omega = 0.0;
  bool all_pass = true;
};

struct LemmaConfig {
  std::size_t dim = 64;
  std::size_t n = 256;    // quadratic dataset size
  std::size_t k = 16;
  int bits = 8;
  double sigma = 0.05;    // injected per-coordinate noise std
  long steps = 60;
  int runs = 200;
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_stab = 1e-8;
  std::uint64_t seed = 20240817;
  double z_99 = 2.326;    // one-sided 99% normal quantile
  int min_runs_conclusive = 30;
};

inline LemmaReport lemma_suite(const LemmaConfig& cfg) {
  if (cfg.dim < 3) throw ParameterError("lemma_suite: dim must be >= 3");
  if (cfg.runs < 1) throw ParameterError("lemma_suite: runs must be >= 1");
  if (cfg.steps < 1) throw ParameterError("lemma_suite: steps must be >= 1");

  Dataset data = make_synthetic(ProblemKind::quadratic, cfg.n, cfg.dim, cfg.seed);

  const std::size_t d = cfg.dim;
  const long T = cfg.steps;
  const int R = cfg.runs;

  // Accumulators: per-step sums and sums of squares across runs.
  std::vector<double> e2_sum(T, 0.0), e2_sumsq(T, 0.0);
  std::vector<double> z2_sum(T, 0.0), z2_sumsq(T, 0.0);
  std::vector<double> vhat_sum(d, 0.0), vhat_sumsq(d, 0.0);
  double max_m_prime = 0.0;
  double max_g_norm = 0.0;
  double max_omega = 0.0;
  double max_denominator_path = 0.0;
  long monotone_violations = 0;

  NoisyMicroParams params;
  params.adam.beta1 = cfg.beta1;
  params.adam.beta2 = cfg.beta2;
  params.adam.lr = cfg.lr;
  params.adam.eps_stab = cfg.eps_stab;
  params.k = cfg.k;
  params.compressor = ErrorCompressor::stochastic_quant;
  params.bits = cfg.bits;

  for (int r = 0; r < R; ++r) {
    AmsState state = make_noisy_microadam(Vec(d, 0.0), params);
    Vec m_prime(d, 0.0);
    Vec v_hat_prev(d, 0.0);
    RngStream sample_rng = substream(cfg.seed, "lemma-sample", static_cast<std::uint64_t>(r));
    RngStream noise_rng = substream(cfg.seed, "lemma-noise", static_cast<std::uint64_t>(r));
    RngStream quant_rng = substream(cfg.seed, "lemma-quant", static_cast<std::uint64_t>(r));
    double denom_path = 0.0;

    for (long t = 0; t < T; ++t) {
      std::size_t i = static_cast<std::size_t>(sample_rng.next_below(cfg.n));
      auto x = data.row(i);
      Vec g(d);
      for (std::size_t j = 0; j < d; ++j) g[j] = state.theta[j] - x[j];
      Vec noise(d);
      for (double& v : noise) v = cfg.sigma * noise_rng.gaussian();

      NoisyStepProbe probe;
      noisy_microadam_step(state, g, noise, quant_rng, &probe);

      max_g_norm = std::max(max_g_norm, l2_norm(g));
      for (std::size_t j = 0; j < d; ++j)
        m_prime[j] = cfg.beta1 * m_prime[j] + (1.0 - cfg.beta1) * g[j];
      max_m_prime = std::max(max_m_prime, l2_norm(m_prime));

      double e2 = sq_norm(probe.error_next);
      e2_sum[t] += e2;
      e2_sumsq[t] += e2 * e2;
      double z2 = sq_norm(probe.zeta);
      z2_sum[t] += z2;
      z2_sumsq[t] += z2 * z2;
      denom_path += probe.d_norm2;

      // Certificate for this step's quantization input (e_next - zeta).
      double lo = probe.error_next[0] - probe.zeta[0];
      double hi = lo;
      Vec residual(d);
      for (std::size_t j = 0; j < d; ++j) {
        residual[j] = probe.error_next[j] - probe.zeta[j];
        lo = std::min(lo, residual[j]);
        hi = std::max(hi, residual[j]);
      }
      if (hi > lo) max_omega = std::max(max_omega, omega_bound(residual, cfg.bits));

      for (std::size_t j = 0; j < d; ++j) {
        if (state.v_hat[j] < v_hat_prev[j]) ++monotone_violations;
      }
      v_hat_prev = state.v_hat;
    }

    max_denominator_path = std::max(max_denominator_path, denom_path);
    for (std::size_t j = 0; j < d; ++j) {
      vhat_sum[j] += state.v_hat[j];
      vhat_sumsq[j] += state.v_hat[j] * state.v_hat[j];
    }
  }

  const double q = contraction_factor(d, cfg.k);
  TheoryConstants tc =
      constants(q, max_omega, cfg.beta1, max_g_norm, static_cast<double>(d),
                cfg.sigma, cfg.eps_stab);

  LemmaReport report;
  report.realized_grad_bound = max_g_norm;
  report.realized_omega = max_omega;
  report.q = q;
  report.q_omega = tc.q_omega;

  const bool conclusive = R >= cfg.min_runs_conclusive;
  auto lower_conf_max = [&](const std::vector<double>& sum,
                            const std::vector<double>& sumsq) {
    // max over positions of (mean - z * SE): the most bound-threatening
    // statistic after shaving off estimation noise.
    double worst = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < sum.size(); ++i) {
      double mean = sum[i] / R;
      double var = std::max(0.0, sumsq[i] / R - mean * mean);
      double se = std::sqrt(var / R);
      worst = std::max(worst, mean - cfg.z_99 * se);
    }
    return worst;
  };

  auto add = [&](const std::string& id, double empirical, double bound,
                 bool deterministic, long samples) {
    LemmaResult res;
    res.id = id;
    res.empirical = empirical;
    res.bound = bound;
    res.deterministic = deterministic;
    res.samples = samples;
    res.conclusive = deterministic || conclusive;
    res.pass = empirical <= bound * (1.0 + 1e-9);
    if (res.conclusive && !res.pass) report.all_pass = false;
    report.results.push_back(res);
  };

  const double gap = 1.0 - tc.q_omega * tc.q_omega;

  // First-moment envelope: the EMA of raw gradients never leaves the G ball.
  add("first_moment_envelope", max_m_prime, max_g_norm, true, R * T);

  // Error-feedback second moment: E||e_t||^2 <= 4 q_w^2 / (1-q_w^2)^2 * S.
  add("error_second_moment", lower_conf_max(e2_sum, e2_sumsq),
      4.0 * tc.q_omega * tc.q_omega / (gap * gap) * tc.s, false, R);

  // Quantizer perturbation: E||zeta_t||^2 <= C2^2 * S.
  add("quantizer_noise", lower_conf_max(z2_sum, z2_sumsq), tc.c2 * tc.c2 * tc.s,
      false, R);

  // v-hat never decreases.
  add("second_moment_monotone", static_cast<double>(monotone_violations), 0.0,
      true, R * T * static_cast<long>(d));

  // Per-coordinate cap: E[v-hat_i] <= 4 (1+q_w^2)^3 / (1-q_w^2)^2 * S.
  const double qw2 = tc.q_omega * tc.q_omega;
  add("second_moment_cap", lower_conf_max(vhat_sum, vhat_sumsq),
      4.0 * (1.0 + qw2) * (1.0 + qw2) * (1.0 + qw2) / (gap * gap) * tc.s, false,
      R);

  // Telescoping stepsize-denominator path: sum_t ||D_t||^2 <= d / eps_stab.
  add("denominator_path", max_denominator_path,
      static_cast<double>(d) / cfg.eps_stab, true, R);

  return report;
}

// ---------------------------------------------------------------------------
// Empirical rate fit
// ---------------------------------------------------------------------------

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  bool reliable = false;
};

// Least squares on (log T, log value).  The reliable flag demands at least
// three points, a negative slope, and a good fit; flat or rising sequences
// come back flagged instead of producing a spurious rate.
inline RateFit rate_fit(const std::vector<std::pair<double, double>>& points) {
  RateFit fit;
  if (points.size() < 2) throw ParameterError("rate_fit: need at least 2 points");
  const std::size_t n = points.size();
  std::vector<double> xs(n), ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(points[i].first > 0.0) || !(points[i].second > 0.0))
      throw InputError("rate_fit: T and values must be positive");
    xs[i] = std::log(points[i].first);
    ys[i] = std::log(points[i].second);
  }
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (!(sxx > 0.0)) throw InputError("rate_fit: degenerate T values");
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double pred = fit.intercept + fit.slope * xs[i];
    ss_res += (ys[i] - pred) * (ys[i] - pred);
  }
  fit.r2 = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
  fit.reliable = n >= 3 && fit.slope < 0.0 && fit.r2 >= 0.8;
  return fit;
}

// ---------------------------------------------------------------------------
// Rate check on a smooth non-convex objective
// ---------------------------------------------------------------------------

// Sum of sigmoided quadratics: f(theta) = (1/n) sum_i tanh(||theta - c_i||^2
// / (2d)).  Smooth, non-convex, bounded below by zero, with per-example
// gradients sech^2(u) (theta - c_i) / d.
inline double sigquad_loss(const Vec& theta, const std::vector<Vec>& centers) {
  if (centers.empty()) throw ParameterError("sigquad_loss: no centers");
  const double d = static_cast<double>(theta.size());
  double s = 0.0;
  for (const Vec& c : centers) {
    if (c.size() != theta.size()) throw InputError("sigquad_loss: dim mismatch");
    double u = 0.0;
    for (std::size_t j = 0; j < theta.size(); ++j) {
      double diff = theta[j] - c[j];
      u += diff * diff;
    }
    s += std::tanh(u / (2.0 * d));
  }
  return s / static_cast<double>(centers.size());
}

inline Vec sigquad_grad_single(const Vec& theta, const Vec& center) {
  if (center.size() != theta.size())
    throw InputError("sigquad_grad_single: dim mismatch");
  const double d = static_cast<double>(theta.size());
  double u = 0.0;
  for (std::size_t j = 0; j < theta.size(); ++j) {
    double diff = theta[j] - center[j];
    u += diff * diff;
  }
  double th = std::tanh(u / (2.0 * d));
  double sech2 = 1.0 - th * th;
  Vec g(theta.size());
  for (std::size_t j = 0; j < theta.size(); ++j)
    g[j] = sech2 * (theta[j] - center[j]) / d;
  return g;
}

inline Vec sigquad_full_grad(const Vec& theta, const std::vector<Vec>& centers) {
  Vec g(theta.size(), 0.0);
  for (const Vec& c : centers) {
    Vec gi = sigquad_grad_single(theta, c);
    for (std::size_t j = 0; j < theta.size(); ++j) g[j] += gi[j];
  }
  for (double& v : g) v /= static_cast<double>(centers.size());
  return g;
}

struct RateCheckConfig {
  std::size_t dim = 256;
  std::size_t n = 32;          // number of centers
  double center_scale = 3.0;
  std::vector<long> lengths = {256, 512, 1024, 2048, 4096, 8192, 16384};
  int seeds = 10;
  std::uint64_t seed = 7311;
  double lr_base = 0.5;        // eta = lr_base / sqrt(T)
  double sample_rate = 0.5;
  std::size_t k = 32;
  int bits = 8;
  std::size_t window = 16;
};

struct RateCheckResult {
  std::vector<std::pair<double, double>> averages;  // (T, mean of (1/T) sum ||grad||^2)
  RateFit fit;
};

// Noise-free sparsified Adam on the sigmoided-quadratic objective with
// eta = lr_base / sqrt(T) per horizon; returns the horizon-averaged squared
// full-gradient norm at each T plus the fitted log-log slope.
inline RateCheckResult run_rate_check(const RateCheckConfig& cfg) {
  if (cfg.seeds < 1) throw ParameterError("run_rate_check: seeds must be >= 1");
  RngStream center_rng = substream(cfg.seed, "rate-centers");
  std::vector<Vec> centers(cfg.n, Vec(cfg.dim));
  for (Vec& c : centers)
    for (double& v : c) v = cfg.center_scale * center_rng.gaussian();

  PrivacySpec noise_free;
  noise_free.clip_norm = std::numeric_limits<double>::infinity();
  noise_free.noise_multiplier = 0.0;
  noise_free.sample_rate = cfg.sample_rate;
  noise_free.target_delta = 1e-5;

  RateCheckResult result;
  for (long T : cfg.lengths) {
    double phi_sum = 0.0;
    for (int sd = 0; sd < cfg.seeds; ++sd) {
      MicroAdamParams params;
      params.adam.lr = cfg.lr_base / std::sqrt(static_cast<double>(T));
      params.k = cfg.k;
      params.bits = cfg.bits;
      params.window = cfg.window;
      MicroAdamState state = make_microadam(
          Vec(cfg.dim, 0.0), params, noise_free,
          cfg.sample_rate * static_cast<double>(cfg.n));

      RngStream sample_rng =
          substream(cfg.seed, "rate-sample",
                    static_cast<std::uint64_t>(sd) * 100003 + static_cast<std::uint64_t>(T));
      RngStream noise_rng =
          substream(cfg.seed, "rate-noise",
                    static_cast<std::uint64_t>(sd) * 100003 + static_cast<std::uint64_t>(T));
      RngStream quant_rng =
          substream(cfg.seed, "rate-quant",
                    static_cast<std::uint64_t>(sd) * 100003 + static_cast<std::uint64_t>(T));

      double phi = 0.0;
      for (long t = 0; t < T; ++t) {
        phi += sq_norm(sigquad_full_grad(state.theta, centers));
        std::vector<std::size_t> batch =
            poisson_subsample(cfg.n, cfg.sample_rate, sample_rng);
        std::vector<Vec> grads;
        grads.reserve(batch.size());
        for (std::size_t i : batch)
          grads.push_back(sigquad_grad_single(state.theta, centers[i]));
        microadam_step(state, grads, noise_rng, quant_rng);
      }
      phi_sum += phi / static_cast<double>(T);
    }
    result.averages.emplace_back(static_cast<double>(T),
                                 phi_sum / static_cast<double>(cfg.seeds));
  }
  result.fit = rate_fit(result.averages);
  return result;
}

}  // namespace dpopt
