#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "compression.hpp"
#include "errors.hpp"
#include "io.hpp"
#include "privacy.hpp"
#include "rng.hpp"
#include "vec.hpp"

namespace dpopt {

// ---------------------------------------------------------------------------
// Shared pieces
// ---------------------------------------------------------------------------

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double lr = 1e-3;
  double eps_stab = 1e-8;

  void validate() const {
    if (!(beta1 >= 0.0 && beta1 < 1.0))
      throw ParameterError("beta1 must lie in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0))
      throw ParameterError("beta2 must lie in [0, 1)");
    if (!(lr > 0.0) || !std::isfinite(lr))
      throw ParameterError("lr must be positive and finite");
    if (!(eps_stab > 0.0))
      throw ParameterError("eps_stab must be positive");
  }
};

// Iterates that leave this box are treated as divergence rather than left
// to overflow into NaN arithmetic downstream.
inline constexpr double kDivergenceLimit = 1e12;

inline void check_iterate(const Vec& theta, long step) {
  for (double v : theta) {
    if (!std::isfinite(v) || std::abs(v) > kDivergenceLimit)
      throw DivergenceError("optimizer iterate diverged", step);
  }
}

// ---------------------------------------------------------------------------
// Ring buffer of sparse gradients
// ---------------------------------------------------------------------------

// Holds the last `window` top-k selections.  Age 0 is the newest slot;
// pushes past the window overwrite the oldest entry.
struct GradientRingBuffer {
  std::size_t window = 0;
  std::vector<SparseGradient> slots;
  std::size_t cursor = 0;  // next slot to overwrite
  long pushes = 0;

  GradientRingBuffer() = default;
  explicit GradientRingBuffer(std::size_t m) : window(m), slots(m) {
    if (m < 1) throw ParameterError("ring window must be >= 1");
  }

  void push(SparseGradient g) {
    if (window == 0) throw InvariantError("push into unsized ring");
    slots[cursor] = std::move(g);
    cursor = (cursor + 1) % window;
    ++pushes;
  }

  std::size_t filled() const {
    return static_cast<std::size_t>(
        std::min<long>(pushes, static_cast<long>(window)));
  }

  const SparseGradient& by_age(std::size_t age) const {
    if (age >= filled()) throw ParameterError("ring age out of range");
    return slots[(cursor + window - 1 - age) % window];
  }
};

// Bias-corrected moment estimate over the ring window:
//   (1 - beta) * sum_age beta^age * slot_age  /  (1 - beta^t)
// with slot values squared for the second moment.  With k = d and t within
// the window this reproduces dense Adam's m-hat / v-hat exactly; the
// windowing drops terms of weight beta^window and beyond.
inline Vec adam_stats(const GradientRingBuffer& ring, double beta, long t,
                      std::size_t dim, bool squared = false) {
  if (t < 1) throw ParameterError("adam_stats: step must be >= 1");
  if (!(beta >= 0.0 && beta < 1.0))
    throw ParameterError("adam_stats: beta must lie in [0, 1)");
  if (ring.filled() == 0) throw InvariantError("adam_stats on empty ring");
  Vec z(dim, 0.0);
  double w = 1.0;  // beta^age
  for (std::size_t age = 0; age < ring.filled(); ++age, w *= beta) {
    const SparseGradient& g = ring.by_age(age);
    if (g.dim != dim) throw InvariantError("adam_stats: slot dim mismatch");
    for (std::size_t j = 0; j < g.indices.size(); ++j) {
      double v = g.values[j];
      z[g.indices[j]] += w * (squared ? v * v : v);
    }
    if (w == 0.0) break;
  }
  double scale =
      (1.0 - beta) / (1.0 - std::pow(beta, static_cast<double>(t)));
  for (double& v : z) v *= scale;
  return z;
}

// ---------------------------------------------------------------------------
// DP-MicroAdam
// ---------------------------------------------------------------------------

struct MicroAdamParams {
  AdamHyper adam;
  std::size_t k = 0;       // coordinates kept per step
  int bits = 4;            // error-buffer quantization width
  std::size_t window = 10; // ring length m
  Rounding rounding = Rounding::stochastic;
};

struct MicroAdamState {
  MicroAdamParams params;
  PrivacySpec privacy;
  double nominal_batch = 1.0;
  Vec theta;
  GradientRingBuffer ring;
  QuantizedErrorState error;
  long step = 0;
};

inline QuantizedErrorState zero_error_state(std::size_t dim, int bits,
                                            Rounding rounding) {
  QuantizedErrorState e;
  e.dim = dim;
  e.bits = bits;
  e.rounding = rounding;
  e.lo = 0.0;
  e.hi = 0.0;
  e.codes.assign((dim * static_cast<std::size_t>(bits) + 7) / 8, 0);
  return e;
}

inline MicroAdamState make_microadam(Vec theta0, const MicroAdamParams& params,
                                     const PrivacySpec& privacy,
                                     double nominal_batch) {
  params.adam.validate();
  privacy.validate();
  const std::size_t d = theta0.size();
  if (d == 0) throw ParameterError("make_microadam: empty parameter vector");
  if (params.k < 1 || params.k > d)
    throw ParameterError("make_microadam: k must lie in [1, d]");
  if (params.bits < 1 || params.bits > 16)
    throw ParameterError("make_microadam: bits must lie in [1, 16]");
  if (params.window < 1)
    throw ParameterError("make_microadam: window must be >= 1");
  if (!(nominal_batch > 0.0))
    throw ParameterError("make_microadam: nominal batch must be positive");

  MicroAdamState s;
  s.params = params;
  s.privacy = privacy;
  s.nominal_batch = nominal_batch;
  s.theta = std::move(theta0);
  s.ring = GradientRingBuffer(params.window);
  s.error = zero_error_state(d, params.bits, params.rounding);
  return s;
}

// Post-processing half of a DP-MicroAdam step.  Consumes an already
// privatized gradient: adds the decoded error buffer, keeps the k largest
// magnitudes in the ring, re-quantizes the residual (whose range spans the
// zeroed positions too, so zero is always representable), then takes an
// Adam step from the windowed moment estimates.
inline void microadam_apply(MicroAdamState& s, const PrivatizedGradient& g,
                            RngStream& quant_rng) {
  const std::size_t d = s.theta.size();
  if (g.vector.size() != d) throw InputError("microadam_apply: dim mismatch");
  ++s.step;

  Vec a = dequantize(s.error);
  for (std::size_t i = 0; i < d; ++i) a[i] += g.vector[i];

  TopKResult tk = top_k(a, s.params.k);
  s.ring.push(std::move(tk.selected));

  double lo = tk.residual[0], hi = tk.residual[0];
  for (double v : tk.residual) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  s.error = quantize(tk.residual, lo, hi, s.params.bits, s.params.rounding,
                     quant_rng);

  Vec m_hat = adam_stats(s.ring, s.params.adam.beta1, s.step, d, false);
  Vec v_hat = adam_stats(s.ring, s.params.adam.beta2, s.step, d, true);
  for (std::size_t i = 0; i < d; ++i) {
    s.theta[i] -= s.params.adam.lr * m_hat[i] /
                  (s.params.adam.eps_stab + std::sqrt(v_hat[i]));
  }
  check_iterate(s.theta, s.step);
}

inline void microadam_step(MicroAdamState& s, const std::vector<Vec>& per_sample,
                           RngStream& noise_rng, RngStream& quant_rng) {
  PrivatizedGradient g =
      privatize(per_sample, s.theta.size(), s.privacy, s.nominal_batch, noise_rng);
  microadam_apply(s, g, quant_rng);
}

// ---------------------------------------------------------------------------
// Noisy-MicroAdam (dense-state AMSGrad form used by the convergence lemmas)
// ---------------------------------------------------------------------------

enum class ErrorCompressor : std::uint8_t { identity = 0, stochastic_quant = 1 };

struct NoisyMicroParams {
  AdamHyper adam;
  std::size_t k = 0;
  ErrorCompressor compressor = ErrorCompressor::stochastic_quant;
  int bits = 8;
};

struct AmsState {
  NoisyMicroParams params;
  Vec theta;
  Vec m;
  Vec v;
  Vec v_hat;
  Vec error;  // dense residual accumulator
  long step = 0;
};

inline AmsState make_noisy_microadam(Vec theta0, const NoisyMicroParams& params) {
  params.adam.validate();
  const std::size_t d = theta0.size();
  if (d == 0) throw ParameterError("make_noisy_microadam: empty parameter vector");
  if (params.k < 1 || params.k > d)
    throw ParameterError("make_noisy_microadam: k must lie in [1, d]");
  if (params.bits < 1 || params.bits > 16)
    throw ParameterError("make_noisy_microadam: bits must lie in [1, 16]");
  AmsState s;
  s.params = params;
  s.theta = std::move(theta0);
  s.m.assign(d, 0.0);
  s.v.assign(d, 0.0);
  s.v_hat.assign(d, 0.0);
  s.error.assign(d, 0.0);
  return s;
}

// Optional per-step measurements for the lemma verification suite.
struct NoisyStepProbe {
  Vec selected;      // the sparse update actually applied, densified
  Vec error_next;    // e_{t+1}
  Vec zeta;          // quantization noise injected into the error buffer
  double d_norm2 = 0.0;  // || 1/sqrt(v_hat_prev + eps) - 1/sqrt(v_hat + eps) ||^2
};

// One step of the noisy AMSGrad-style scheme: sparsify gradient + error +
// injected noise, feed the survivors into EMA moments with a running max on
// the second moment, and re-quantize the residual (which keeps the noise
// term, matching the error-feedback recursion the analysis tracks).
inline void noisy_microadam_step(AmsState& s, const Vec& grad, const Vec& noise,
                                 RngStream& quant_rng,
                                 NoisyStepProbe* probe = nullptr) {
  const std::size_t d = s.theta.size();
  if (grad.size() != d || noise.size() != d)
    throw InputError("noisy_microadam_step: dim mismatch");
  ++s.step;

  Vec a(d);
  for (std::size_t i = 0; i < d; ++i) a[i] = grad[i] + s.error[i] + noise[i];

  TopKResult tk = top_k(a, s.params.k);
  Vec selected = reconstruct(tk.selected);

  Vec e_next;
  Vec zeta(d, 0.0);
  if (s.params.compressor == ErrorCompressor::identity) {
    e_next = tk.residual;
  } else {
    double lo = tk.residual[0], hi = tk.residual[0];
    for (double v : tk.residual) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    QuantizedErrorState qs = quantize(tk.residual, lo, hi, s.params.bits,
                                      Rounding::stochastic, quant_rng);
    e_next = dequantize(qs);
    for (std::size_t i = 0; i < d; ++i) zeta[i] = e_next[i] - tk.residual[i];
  }

  const double b1 = s.params.adam.beta1, b2 = s.params.adam.beta2;
  for (std::size_t i = 0; i < d; ++i) {
    s.m[i] = b1 * s.m[i] + (1.0 - b1) * selected[i];
    s.v[i] = b2 * s.v[i] + (1.0 - b2) * selected[i] * selected[i];
  }

  double d_norm2 = 0.0;
  const double eps = s.params.adam.eps_stab;
  for (std::size_t i = 0; i < d; ++i) {
    double prev = 1.0 / std::sqrt(s.v_hat[i] + eps);
    s.v_hat[i] = std::max(s.v_hat[i], s.v[i]);
    double cur = 1.0 / std::sqrt(s.v_hat[i] + eps);
    double diff = prev - cur;
    d_norm2 += diff * diff;
  }

  for (std::size_t i = 0; i < d; ++i)
    s.theta[i] -= s.params.adam.lr * s.m[i] / std::sqrt(s.v_hat[i] + eps);

  s.error = std::move(e_next);
  check_iterate(s.theta, s.step);

  if (probe) {
    probe->selected = std::move(selected);
    probe->error_next = s.error;
    probe->zeta = std::move(zeta);
    probe->d_norm2 = d_norm2;
  }
}

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

enum class BaselineVariant : std::uint8_t {
  dp_sgd = 0,
  dp_adam = 1,
  dp_adambc = 2,
  scale_then_privatize = 3,
};

struct BaselineState {
  BaselineVariant variant = BaselineVariant::dp_sgd;
  AdamHyper adam;
  PrivacySpec privacy;
  double nominal_batch = 1.0;
  Vec theta;
  Vec m;
  Vec v;
  long step = 0;
};

inline BaselineState make_baseline(BaselineVariant variant, Vec theta0,
                                   const AdamHyper& adam,
                                   const PrivacySpec& privacy,
                                   double nominal_batch) {
  adam.validate();
  privacy.validate();
  if (theta0.empty()) throw ParameterError("make_baseline: empty parameter vector");
  if (!(nominal_batch > 0.0))
    throw ParameterError("make_baseline: nominal batch must be positive");
  BaselineState s;
  s.variant = variant;
  s.adam = adam;
  s.privacy = privacy;
  s.nominal_batch = nominal_batch;
  const std::size_t d = theta0.size();
  s.theta = std::move(theta0);
  s.m.assign(d, 0.0);
  s.v.assign(d, 0.0);
  return s;
}

inline void dp_sgd_apply(BaselineState& s, const PrivatizedGradient& g) {
  if (g.vector.size() != s.theta.size())
    throw InputError("dp_sgd_apply: dim mismatch");
  ++s.step;
  for (std::size_t i = 0; i < s.theta.size(); ++i)
    s.theta[i] -= s.adam.lr * g.vector[i];
  check_iterate(s.theta, s.step);
}

inline void dp_adam_apply(BaselineState& s, const PrivatizedGradient& g) {
  if (g.vector.size() != s.theta.size())
    throw InputError("dp_adam_apply: dim mismatch");
  ++s.step;
  const double b1 = s.adam.beta1, b2 = s.adam.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < s.theta.size(); ++i) {
    double gi = g.vector[i];
    s.m[i] = b1 * s.m[i] + (1.0 - b1) * gi;
    s.v[i] = b2 * s.v[i] + (1.0 - b2) * gi * gi;
    double m_hat = s.m[i] / bc1;
    double v_hat = s.v[i] / bc2;
    s.theta[i] -= s.adam.lr * m_hat / (std::sqrt(v_hat) + s.adam.eps_stab);
  }
  check_iterate(s.theta, s.step);
}

// DP-Adam with the injected-noise floor removed from the second moment:
// subtract the known noise variance (sigma C / B)^2 from v-hat and clamp at
// eps_stab^2 before the square root.
inline void dp_adambc_apply(BaselineState& s, const PrivatizedGradient& g) {
  if (g.vector.size() != s.theta.size())
    throw InputError("dp_adambc_apply: dim mismatch");
  ++s.step;
  const double b1 = s.adam.beta1, b2 = s.adam.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(s.step));
  const double noise_per_coord = s.privacy.noise_std() / s.nominal_batch;
  const double noise_var = noise_per_coord * noise_per_coord;
  const double floor = s.adam.eps_stab * s.adam.eps_stab;
  for (std::size_t i = 0; i < s.theta.size(); ++i) {
    double gi = g.vector[i];
    s.m[i] = b1 * s.m[i] + (1.0 - b1) * gi;
    s.v[i] = b2 * s.v[i] + (1.0 - b2) * gi * gi;
    double m_hat = s.m[i] / bc1;
    double v_hat = s.v[i] / bc2;
    double denom = std::sqrt(std::max(v_hat - noise_var, floor));
    s.theta[i] -= s.adam.lr * m_hat / denom;
  }
  check_iterate(s.theta, s.step);
}

// The scaling vector is a function of the previous step's second-moment
// estimate only, so it is data-independent at the time of use.
inline Vec stp_scale(const BaselineState& s) {
  Vec scale(s.theta.size());
  for (std::size_t i = 0; i < s.theta.size(); ++i)
    scale[i] = 1.0 / (std::sqrt(s.v[i]) + s.adam.eps_stab);
  return scale;
}

// Unscale + SGD step + second-moment refresh on the released gradient.
inline void scale_then_privatize_apply(BaselineState& s,
                                       const PrivatizedGradient& g,
                                       const Vec& scale) {
  if (g.vector.size() != s.theta.size() || scale.size() != s.theta.size())
    throw InputError("scale_then_privatize_apply: dim mismatch");
  ++s.step;
  const double b2 = s.adam.beta2;
  for (std::size_t i = 0; i < s.theta.size(); ++i) {
    double gi = g.vector[i] / scale[i];
    s.theta[i] -= s.adam.lr * gi;
    s.v[i] = b2 * s.v[i] + (1.0 - b2) * gi * gi;
  }
  check_iterate(s.theta, s.step);
}

// Full step for any baseline: privatize, then apply.  Scale-then-privatize
// additionally preconditions each per-example gradient before clipping
// (scaling by a data-independent vector keeps the sensitivity at C).
inline void baseline_step(BaselineState& s, const std::vector<Vec>& per_sample,
                          RngStream& noise_rng) {
  const std::size_t d = s.theta.size();
  switch (s.variant) {
    case BaselineVariant::dp_sgd: {
      dp_sgd_apply(s, privatize(per_sample, d, s.privacy, s.nominal_batch,
                                noise_rng));
      return;
    }
    case BaselineVariant::dp_adam: {
      dp_adam_apply(s, privatize(per_sample, d, s.privacy, s.nominal_batch,
                                 noise_rng));
      return;
    }
    case BaselineVariant::dp_adambc: {
      dp_adambc_apply(s, privatize(per_sample, d, s.privacy, s.nominal_batch,
                                   noise_rng));
      return;
    }
    case BaselineVariant::scale_then_privatize: {
      Vec scale = stp_scale(s);
      std::vector<Vec> scaled(per_sample.size());
      for (std::size_t j = 0; j < per_sample.size(); ++j) {
        if (per_sample[j].size() != d)
          throw InputError("baseline_step: gradient dim mismatch");
        scaled[j].resize(d);
        for (std::size_t i = 0; i < d; ++i)
          scaled[j][i] = scale[i] * per_sample[j][i];
      }
      PrivatizedGradient g =
          privatize(scaled, d, s.privacy, s.nominal_batch, noise_rng);
      scale_then_privatize_apply(s, g, scale);
      return;
    }
  }
  throw InvariantError("unreachable baseline variant");
}

// ---------------------------------------------------------------------------
// Dense Adam oracle (non-private reference)
// ---------------------------------------------------------------------------

struct AdamOracleState {
  AdamHyper adam;
  Vec theta;
  Vec m;
  Vec v;
  long step = 0;
};

inline AdamOracleState make_adam_oracle(Vec theta0, const AdamHyper& adam) {
  adam.validate();
  if (theta0.empty())
    throw ParameterError("make_adam_oracle: empty parameter vector");
  AdamOracleState s;
  s.adam = adam;
  const std::size_t d = theta0.size();
  s.theta = std::move(theta0);
  s.m.assign(d, 0.0);
  s.v.assign(d, 0.0);
  return s;
}

inline void adam_oracle_step(AdamOracleState& s, const Vec& g) {
  if (g.size() != s.theta.size())
    throw InputError("adam_oracle_step: dim mismatch");
  ++s.step;
  const double b1 = s.adam.beta1, b2 = s.adam.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < s.theta.size(); ++i) {
    s.m[i] = b1 * s.m[i] + (1.0 - b1) * g[i];
    s.v[i] = b2 * s.v[i] + (1.0 - b2) * g[i] * g[i];
    double m_hat = s.m[i] / bc1;
    double v_hat = s.v[i] / bc2;
    s.theta[i] -= s.adam.lr * m_hat / (std::sqrt(v_hat) + s.adam.eps_stab);
  }
  check_iterate(s.theta, s.step);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr std::uint64_t kCheckpointMagic = 0x3130706B636F7064ULL;  // "dpockp01"
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void write_vec(ByteWriter& w, const Vec& v) {
  w.u64(v.size());
  for (double x : v) w.f64(x);
}

inline Vec read_vec(ByteReader& r) {
  std::size_t n = r.u64();
  Vec v(n);
  for (double& x : v) x = r.f64();
  return v;
}

inline void write_hyper(ByteWriter& w, const AdamHyper& h) {
  w.f64(h.beta1);
  w.f64(h.beta2);
  w.f64(h.lr);
  w.f64(h.eps_stab);
}

inline AdamHyper read_hyper(ByteReader& r) {
  AdamHyper h;
  h.beta1 = r.f64();
  h.beta2 = r.f64();
  h.lr = r.f64();
  h.eps_stab = r.f64();
  return h;
}

inline void write_privacy(ByteWriter& w, const PrivacySpec& p) {
  w.f64(p.clip_norm);
  w.f64(p.noise_multiplier);
  w.f64(p.sample_rate);
  w.f64(p.target_delta);
}

inline PrivacySpec read_privacy(ByteReader& r) {
  PrivacySpec p;
  p.clip_norm = r.f64();
  p.noise_multiplier = r.f64();
  p.sample_rate = r.f64();
  p.target_delta = r.f64();
  return p;
}

inline void write_ring(ByteWriter& w, const GradientRingBuffer& ring) {
  w.u64(ring.window);
  w.u64(ring.cursor);
  w.u64(static_cast<std::uint64_t>(ring.pushes));
  for (const SparseGradient& g : ring.slots) {
    w.u64(g.dim);
    w.u64(g.indices.size());
    for (std::size_t i : g.indices) w.u64(i);
    for (double v : g.values) w.f64(v);
  }
}

inline GradientRingBuffer read_ring(ByteReader& r) {
  std::size_t window = r.u64();
  if (window < 1) throw InputError("checkpoint: ring window must be >= 1");
  GradientRingBuffer ring(window);
  ring.cursor = r.u64();
  if (ring.cursor >= window) throw InputError("checkpoint: ring cursor out of range");
  ring.pushes = static_cast<long>(r.u64());
  for (SparseGradient& g : ring.slots) {
    g.dim = r.u64();
    std::size_t cnt = r.u64();
    if (cnt > g.dim) throw InputError("checkpoint: slot larger than dim");
    g.indices.resize(cnt);
    for (std::size_t& i : g.indices) i = r.u64();
    g.values.resize(cnt);
    for (double& v : g.values) v = r.f64();
  }
  return ring;
}

inline void write_header(ByteWriter& w, std::uint8_t tag) {
  w.u64(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u8(tag);
}

inline std::uint8_t read_header(ByteReader& r) {
  if (r.u64() != kCheckpointMagic) throw InputError("checkpoint: bad magic");
  std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw InputError("checkpoint: unsupported version " + std::to_string(version));
  return r.u8();
}

}  // namespace detail

inline constexpr std::uint8_t kTagMicroAdam = 0;
inline constexpr std::uint8_t kTagBaseline = 1;
inline constexpr std::uint8_t kTagAms = 2;
inline constexpr std::uint8_t kTagOracle = 3;

inline std::vector<std::uint8_t> serialize(const MicroAdamState& s) {
  ByteWriter w;
  detail::write_header(w, kTagMicroAdam);
  detail::write_hyper(w, s.params.adam);
  w.u64(s.params.k);
  w.u8(static_cast<std::uint8_t>(s.params.bits));
  w.u8(static_cast<std::uint8_t>(s.params.rounding));
  w.u64(s.params.window);
  detail::write_privacy(w, s.privacy);
  w.f64(s.nominal_batch);
  w.u64(static_cast<std::uint64_t>(s.step));
  detail::write_vec(w, s.theta);
  detail::write_ring(w, s.ring);
  w.bytes(serialize(s.error));
  return w.take();
}

inline MicroAdamState deserialize_microadam(const std::vector<std::uint8_t>& buf) {
  ByteReader r(buf);
  if (detail::read_header(r) != kTagMicroAdam)
    throw InputError("checkpoint: not a microadam blob");
  MicroAdamState s;
  s.params.adam = detail::read_hyper(r);
  s.params.k = r.u64();
  s.params.bits = r.u8();
  std::uint8_t rounding = r.u8();
  if (rounding > 1) throw InputError("checkpoint: invalid rounding tag");
  s.params.rounding = static_cast<Rounding>(rounding);
  s.params.window = r.u64();
  s.privacy = detail::read_privacy(r);
  s.nominal_batch = r.f64();
  s.step = static_cast<long>(r.u64());
  s.theta = detail::read_vec(r);
  s.ring = detail::read_ring(r);
  s.error = deserialize_quantized_state(r);
  if (!r.done()) throw InputError("checkpoint: trailing bytes");
  if (s.error.dim != s.theta.size())
    throw InputError("checkpoint: error buffer dim mismatch");
  return s;
}

inline std::vector<std::uint8_t> serialize(const BaselineState& s) {
  ByteWriter w;
  detail::write_header(w, kTagBaseline);
  w.u8(static_cast<std::uint8_t>(s.variant));
  detail::write_hyper(w, s.adam);
  detail::write_privacy(w, s.privacy);
  w.f64(s.nominal_batch);
  w.u64(static_cast<std::uint64_t>(s.step));
  detail::write_vec(w, s.theta);
  detail::write_vec(w, s.m);
  detail::write_vec(w, s.v);
  return w.take();
}

inline BaselineState deserialize_baseline(const std::vector<std::uint8_t>& buf) {
  ByteReader r(buf);
  if (detail::read_header(r) != kTagBaseline)
    throw InputError("checkpoint: not a baseline blob");
  BaselineState s;
  std::uint8_t variant = r.u8();
  if (variant > 3) throw InputError("checkpoint: invalid baseline variant");
  s.variant = static_cast<BaselineVariant>(variant);
  s.adam = detail::read_hyper(r);
  s.privacy = detail::read_privacy(r);
  s.nominal_batch = r.f64();
  s.step = static_cast<long>(r.u64());
  s.theta = detail::read_vec(r);
  s.m = detail::read_vec(r);
  s.v = detail::read_vec(r);
  if (!r.done()) throw InputError("checkpoint: trailing bytes");
  if (s.m.size() != s.theta.size() || s.v.size() != s.theta.size())
    throw InputError("checkpoint: moment dim mismatch");
  return s;
}

inline std::vector<std::uint8_t> serialize(const AmsState& s) {
  ByteWriter w;
  detail::write_header(w, kTagAms);
  detail::write_hyper(w, s.params.adam);
  w.u64(s.params.k);
  w.u8(static_cast<std::uint8_t>(s.params.compressor));
  w.u8(static_cast<std::uint8_t>(s.params.bits));
  w.u64(static_cast<std::uint64_t>(s.step));
  detail::write_vec(w, s.theta);
  detail::write_vec(w, s.m);
  detail::write_vec(w, s.v);
  detail::write_vec(w, s.v_hat);
  detail::write_vec(w, s.error);
  return w.take();
}

inline AmsState deserialize_ams(const std::vector<std::uint8_t>& buf) {
  ByteReader r(buf);
  if (detail::read_header(r) != kTagAms)
    throw InputError("checkpoint: not an ams blob");
  AmsState s;
  s.params.adam = detail::read_hyper(r);
  s.params.k = r.u64();
  std::uint8_t comp = r.u8();
  if (comp > 1) throw InputError("checkpoint: invalid compressor tag");
  s.params.compressor = static_cast<ErrorCompressor>(comp);
  s.params.bits = r.u8();
  s.step = static_cast<long>(r.u64());
  s.theta = detail::read_vec(r);
  s.m = detail::read_vec(r);
  s.v = detail::read_vec(r);
  s.v_hat = detail::read_vec(r);
  s.error = detail::read_vec(r);
  if (!r.done()) throw InputError("checkpoint: trailing bytes");
  return s;
}

inline std::vector<std::uint8_t> serialize(const AdamOracleState& s) {
  ByteWriter w;
  detail::write_header(w, kTagOracle);
  detail::write_hyper(w, s.adam);
  w.u64(static_cast<std::uint64_t>(s.step));
  detail::write_vec(w, s.theta);
  detail::write_vec(w, s.m);
  detail::write_vec(w, s.v);
  return w.take();
}

inline AdamOracleState deserialize_adam_oracle(const std::vector<std::uint8_t>& buf) {
  ByteReader r(buf);
  if (detail::read_header(r) != kTagOracle)
    throw InputError("checkpoint: not an oracle blob");
  AdamOracleState s;
  s.adam = detail::read_hyper(r);
  s.step = static_cast<long>(r.u64());
  s.theta = detail::read_vec(r);
  s.m = detail::read_vec(r);
  s.v = detail::read_vec(r);
  if (!r.done()) throw InputError("checkpoint: trailing bytes");
  return s;
}

}  // namespace dpopt
