#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"
#include "vec.hpp"

namespace dpopt {

// ---------------------------------------------------------------------------
// Per-example clipping and the subsampled Gaussian mechanism
// ---------------------------------------------------------------------------

struct PrivacySpec {
  double clip_norm = 1.0;        // C; may be +inf only when sigma == 0
  double noise_multiplier = 0.0; // sigma (noise std is sigma * C)
  double sample_rate = 1.0;      // Poisson inclusion probability
  double target_delta = 1e-5;

  double noise_std() const {
    return noise_multiplier == 0.0 ? 0.0 : noise_multiplier * clip_norm;
  }

  void validate() const {
    if (!(clip_norm > 0.0)) throw ParameterError("clip_norm must be positive");
    if (!(noise_multiplier >= 0.0))
      throw ParameterError("noise_multiplier must be nonnegative");
    if (!std::isfinite(noise_std()))
      throw ParameterError("noise std sigma*C must be finite");
    if (!(sample_rate > 0.0 && sample_rate <= 1.0))
      throw ParameterError("sample_rate must lie in (0, 1]");
    if (!(target_delta > 0.0 && target_delta < 1.0))
      throw ParameterError("target_delta must lie in (0, 1)");
  }
};

// Scale g down to norm at most c; direction is preserved.
inline Vec clip(const Vec& g, double c) {
  if (!(c > 0.0)) throw ParameterError("clip: threshold must be positive");
  double n = l2_norm(g);
  Vec out = g;
  if (n > c) {
    double s = c / n;
    for (double& v : out) v *= s;
  }
  return out;
}

// Independent coin per example; the batch size is itself random, which is
// what the subsampled-Gaussian accounting below assumes.
inline std::vector<std::size_t> poisson_subsample(std::size_t n, double q,
                                                  RngStream& rng) {
  if (!(q > 0.0 && q <= 1.0))
    throw ParameterError("poisson_subsample: q must lie in (0, 1]");
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < n; ++i) {
    if (rng.uniform() < q) idx.push_back(i);
  }
  return idx;
}

struct PrivatizedGradient {
  Vec vector;
  bool spent_step = false;  // true iff this output consumed one noise release
};

// The one operation allowed to touch raw per-example gradients: clip each,
// sum, add N(0, (sigma*C)^2 I) inside the average, divide by the nominal
// batch size B = n * q (a constant, not the realized Poisson count — the
// realized count is itself private information).
inline PrivatizedGradient privatize(const std::vector<Vec>& per_sample,
                                    std::size_t dim, const PrivacySpec& spec,
                                    double nominal_batch, RngStream& noise_rng) {
  spec.validate();
  if (!(nominal_batch > 0.0))
    throw ParameterError("privatize: nominal batch size must be positive");
  Vec sum(dim, 0.0);
  for (const Vec& g : per_sample) {
    if (g.size() != dim) throw InputError("privatize: gradient dim mismatch");
    Vec c = clip(g, spec.clip_norm);
    for (std::size_t i = 0; i < dim; ++i) sum[i] += c[i];
  }
  const double std = spec.noise_std();
  if (std > 0.0) {
    for (std::size_t i = 0; i < dim; ++i) sum[i] += std * noise_rng.gaussian();
  }
  for (double& v : sum) v /= nominal_batch;
  PrivatizedGradient out;
  out.vector = std::move(sum);
  out.spent_step = std > 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Renyi-DP accounting
// ---------------------------------------------------------------------------

namespace detail {

inline double log_binom(int n, int k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

inline double logsumexp(const std::vector<double>& v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace detail

// Renyi divergence of the Gaussian mechanism at order alpha: alpha / (2 sigma^2).
inline double rdp_gaussian(double alpha, double sigma) {
  if (!(alpha > 1.0)) throw ParameterError("rdp_gaussian: alpha must exceed 1");
  if (!(sigma > 0.0)) throw ParameterError("rdp_gaussian: sigma must be positive");
  return alpha / (2.0 * sigma * sigma);
}

// Poisson-subsampled Gaussian mechanism at integer order alpha >= 2:
//   (1/(alpha-1)) log sum_{j=0}^{alpha} C(alpha,j) (1-q)^(alpha-j) q^j
//                                        exp(j(j-1) / (2 sigma^2))
// evaluated in log space so large alpha and small q stay stable.
inline double rdp_subsampled_gaussian(int alpha, double q, double sigma) {
  if (alpha < 2) throw ParameterError("rdp_subsampled_gaussian: alpha must be >= 2");
  if (!(q > 0.0 && q <= 1.0))
    throw ParameterError("rdp_subsampled_gaussian: q must lie in (0, 1]");
  if (!(sigma > 0.0))
    throw ParameterError("rdp_subsampled_gaussian: sigma must be positive");
  if (q == 1.0) return rdp_gaussian(alpha, sigma);

  const double log_q = std::log(q);
  const double log_1mq = std::log1p(-q);
  std::vector<double> terms;
  terms.reserve(alpha + 1);
  for (int j = 0; j <= alpha; ++j) {
    double t = detail::log_binom(alpha, j) + (alpha - j) * log_1mq + j * log_q +
               j * (j - 1.0) / (2.0 * sigma * sigma);
    terms.push_back(t);
  }
  double lse = detail::logsumexp(terms);
  // The sum is an expectation of exp(...) >= 1, so the true value is
  // nonnegative; clamp the last-ulp noise from the log-space round trip.
  return std::max(0.0, lse) / (alpha - 1.0);
}

// Integer orders the accountant tracks: a dense band where the optimum
// lands for desk-scale noise levels, plus two coarse high orders.
inline std::vector<int> default_rdp_orders() {
  std::vector<int> orders;
  for (int a = 2; a <= 64; ++a) orders.push_back(a);
  orders.push_back(128);
  orders.push_back(256);
  return orders;
}

struct RDPCurve {
  std::vector<int> orders;
  std::vector<double> epsilons;  // Renyi epsilon at each order
};

inline RDPCurve single_step_curve(double q, double sigma,
                                  std::vector<int> orders = default_rdp_orders()) {
  RDPCurve c;
  c.orders = std::move(orders);
  c.epsilons.reserve(c.orders.size());
  for (int a : c.orders) {
    if (a < 2) throw ParameterError("rdp orders must be integers >= 2");
    c.epsilons.push_back(rdp_subsampled_gaussian(a, q, sigma));
  }
  return c;
}

// RDP composes additively: T identical steps multiply each order's epsilon.
inline RDPCurve compose(const RDPCurve& c, long steps) {
  if (steps < 0) throw ParameterError("compose: steps must be nonnegative");
  RDPCurve out = c;
  for (double& e : out.epsilons) e *= static_cast<double>(steps);
  return out;
}

struct DpResult {
  double epsilon = 0.0;
  int best_order = 0;
};

// Convert an RDP curve to (epsilon, delta)-DP by minimizing
// eps(alpha) + log(1/delta)/(alpha-1) over the tracked orders.
inline DpResult rdp_to_dp(const RDPCurve& c, double delta) {
  if (!(delta > 0.0 && delta < 1.0))
    throw ParameterError("rdp_to_dp: delta must lie in (0, 1)");
  if (c.orders.empty() || c.orders.size() != c.epsilons.size())
    throw InputError("rdp_to_dp: malformed curve");
  DpResult best;
  best.epsilon = std::numeric_limits<double>::infinity();
  const double log_inv_delta = std::log(1.0 / delta);
  for (std::size_t i = 0; i < c.orders.size(); ++i) {
    double eps = c.epsilons[i] + log_inv_delta / (c.orders[i] - 1.0);
    if (eps < best.epsilon) {
      best.epsilon = eps;
      best.best_order = c.orders[i];
    }
  }
  return best;
}

// End-to-end accounting for T steps of the subsampled Gaussian mechanism.
// sigma == 0 releases unnoised statistics: epsilon is infinite.
inline DpResult compute_epsilon(double sigma, double q, long steps, double delta) {
  if (steps < 0) throw ParameterError("compute_epsilon: steps must be nonnegative");
  if (sigma == 0.0) {
    DpResult r;
    r.epsilon = std::numeric_limits<double>::infinity();
    r.best_order = 0;
    return r;
  }
  return rdp_to_dp(compose(single_step_curve(q, sigma), steps), delta);
}

// Smallest noise multiplier in [0.3, 100] whose accounted epsilon matches
// the target within 0.1% relative, found by bisection (epsilon is strictly
// decreasing in sigma).  Targets looser than what sigma = 0.3 provides
// return the bracket floor.
inline double calibrate_sigma(double target_epsilon, double delta, double q,
                              long steps) {
  if (!(target_epsilon > 0.0))
    throw ParameterError("calibrate_sigma: target epsilon must be positive");
  if (steps < 1) throw ParameterError("calibrate_sigma: steps must be >= 1");
  double lo = 0.3, hi = 100.0;
  double eps_lo = compute_epsilon(lo, q, steps, delta).epsilon;
  if (eps_lo <= target_epsilon) return lo;
  double eps_hi = compute_epsilon(hi, q, steps, delta).epsilon;
  if (eps_hi > target_epsilon)
    throw CalibrationError(
        "calibrate_sigma: target epsilon " + std::to_string(target_epsilon) +
        " unreachable within sigma bracket [0.3, 100]; epsilon at sigma=100 is " +
        std::to_string(eps_hi));
  const double tol = 1e-3 * target_epsilon;
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    double eps = compute_epsilon(mid, q, steps, delta).epsilon;
    if (std::abs(eps - target_epsilon) <= tol) return mid;
    if (eps > target_epsilon) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  throw CalibrationError("calibrate_sigma: bisection failed to converge");
}

// Largest number of steps whose accounted epsilon stays within the budget.
// Returns 0 if even one step overshoots.
inline long steps_until_budget(double target_epsilon, double delta, double q,
                               double sigma, long cap = 1L << 40) {
  if (!(target_epsilon > 0.0))
    throw ParameterError("steps_until_budget: target epsilon must be positive");
  if (!(sigma > 0.0))
    throw ParameterError("steps_until_budget: sigma must be positive");
  RDPCurve base = single_step_curve(q, sigma);
  auto eps_at = [&](long t) { return rdp_to_dp(compose(base, t), delta).epsilon; };
  if (eps_at(1) > target_epsilon) return 0;
  long lo = 1, hi = 1;
  while (hi < cap && eps_at(hi) <= target_epsilon) {
    lo = hi;
    hi = std::min(cap, hi * 2);
  }
  if (hi == cap && eps_at(cap) <= target_epsilon) return cap;
  // invariant: eps(lo) <= target < eps(hi)
  while (hi - lo > 1) {
    long mid = lo + (hi - lo) / 2;
    if (eps_at(mid) <= target_epsilon) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo;
}

}  // namespace dpopt
