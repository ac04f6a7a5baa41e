#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "errors.hpp"
#include "io.hpp"
#include "rng.hpp"
#include "vec.hpp"

namespace dpopt {

// ---------------------------------------------------------------------------
// Top-k sparsification
// ---------------------------------------------------------------------------

// Sparse view of the k selected coordinates, kept in ascending index order.
struct SparseGradient {
  std::vector<std::size_t> indices;
  std::vector<double> values;
  std::size_t dim = 0;
};

inline Vec reconstruct(const SparseGradient& g) {
  Vec out(g.dim, 0.0);
  for (std::size_t j = 0; j < g.indices.size(); ++j) {
    if (g.indices[j] >= g.dim) throw InvariantError("sparse index out of range");
    out[g.indices[j]] = g.values[j];
  }
  return out;
}

struct TopKResult {
  SparseGradient selected;
  Vec residual;  // input with the selected coordinates zeroed
};

// Select the k entries of largest magnitude; ties break toward the lower
// index.  reconstruct(selected) + residual reproduces the input exactly,
// coordinate by coordinate.
inline TopKResult top_k(const Vec& x, std::size_t k) {
  const std::size_t d = x.size();
  if (d == 0) throw ParameterError("top_k: empty input");
  if (k < 1 || k > d) throw ParameterError("top_k: k must lie in [1, d]");
  if (!all_finite(x)) throw InputError("top_k: non-finite input");

  std::vector<std::size_t> idx(d);
  std::iota(idx.begin(), idx.end(), std::size_t(0));
  auto larger = [&x](std::size_t a, std::size_t b) {
    double fa = std::abs(x[a]);
    double fb = std::abs(x[b]);
    if (fa != fb) return fa > fb;
    return a < b;
  };
  if (k < d) {
    std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k) - 1,
                     idx.end(), larger);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());

  TopKResult r;
  r.selected.dim = d;
  r.selected.indices = idx;
  r.selected.values.reserve(k);
  r.residual = x;
  for (std::size_t i : idx) {
    r.selected.values.push_back(x[i]);
    r.residual[i] = 0.0;
  }
  return r;
}

// Worst-case contraction factor of top-k on R^d: the residual after
// removing the k largest magnitudes has norm at most sqrt(1 - k/d) times
// the input norm.
inline double contraction_factor(std::size_t d, std::size_t k) {
  if (d == 0) throw ParameterError("contraction_factor: d must be positive");
  if (k < 1 || k > d)
    throw ParameterError("contraction_factor: k must lie in [1, d]");
  return std::sqrt(1.0 - static_cast<double>(k) / static_cast<double>(d));
}

// ---------------------------------------------------------------------------
// b-bit linear quantization
// ---------------------------------------------------------------------------

enum class Rounding : std::uint8_t { deterministic = 0, stochastic = 1 };

// Bit-packed code buffer: code i occupies bits [i*b, (i+1)*b) of the byte
// stream, least significant bit first.  At the default b = 4 this is two
// codes per byte, low nibble first.
inline std::vector<std::uint8_t> pack_codes(const std::vector<std::uint16_t>& codes,
                                            int bits) {
  if (bits < 1 || bits > 16) throw ParameterError("pack_codes: bits must lie in [1,16]");
  const std::size_t total_bits = codes.size() * static_cast<std::size_t>(bits);
  std::vector<std::uint8_t> out((total_bits + 7) / 8, 0);
  std::size_t cursor = 0;
  for (std::uint16_t c : codes) {
    if (bits < 16 && c >= (std::uint16_t(1) << bits))
      throw InvariantError("pack_codes: code exceeds bit width");
    for (int b = 0; b < bits; ++b, ++cursor) {
      if ((c >> b) & 1u) out[cursor / 8] |= std::uint8_t(1u << (cursor % 8));
    }
  }
  return out;
}

inline std::vector<std::uint16_t> unpack_codes(const std::vector<std::uint8_t>& bytes,
                                               std::size_t n, int bits) {
  if (bits < 1 || bits > 16)
    throw ParameterError("unpack_codes: bits must lie in [1,16]");
  if (bytes.size() != (n * static_cast<std::size_t>(bits) + 7) / 8)
    throw InputError("unpack_codes: buffer size does not match n and bits");
  std::vector<std::uint16_t> codes(n, 0);
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::uint16_t c = 0;
    for (int b = 0; b < bits; ++b, ++cursor) {
      if (bytes[cursor / 8] & (1u << (cursor % 8))) c |= std::uint16_t(1u << b);
    }
    codes[i] = c;
  }
  return codes;
}

// Error accumulator held in quantized form: packed codes plus the shared
// range [lo, hi].  Storage is ceil(d*b/8) bytes plus the two scalars.
struct QuantizedErrorState {
  std::size_t dim = 0;
  int bits = 4;
  Rounding rounding = Rounding::stochastic;
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::uint8_t> codes;

  std::size_t storage_bytes() const { return codes.size(); }
};

// Number of quantization levels minus one, i.e. the largest code.
inline double quant_levels(int bits) {
  return static_cast<double>((std::uint32_t(1) << bits) - 1);
}

// Quantize x onto the uniform grid spanning [lo, hi] with 2^b levels.
// Deterministic rounding maps each value to the nearest level (ties up);
// stochastic rounding randomizes between the two neighbouring levels so
// the decoded value is unbiased.  All of x must lie within [lo, hi].
inline QuantizedErrorState quantize(const Vec& x, double lo, double hi, int bits,
                                    Rounding rounding, RngStream& rng) {
  if (bits < 1 || bits > 16) throw ParameterError("quantize: bits must lie in [1,16]");
  if (!std::isfinite(lo) || !std::isfinite(hi))
    throw ParameterError("quantize: range endpoints must be finite");
  if (lo > hi) throw ParameterError("quantize: lo must not exceed hi");
  if (!all_finite(x)) throw InputError("quantize: non-finite input");
  for (double v : x) {
    if (v < lo || v > hi) throw InputError("quantize: value outside [lo, hi]");
  }

  QuantizedErrorState s;
  s.dim = x.size();
  s.bits = bits;
  s.rounding = rounding;
  s.lo = lo;
  s.hi = hi;

  std::vector<std::uint16_t> codes(x.size(), 0);
  if (hi > lo) {
    const double levels = quant_levels(bits);
    const double u = (hi - lo) / levels;
    for (std::size_t i = 0; i < x.size(); ++i) {
      double t = (x[i] - lo) / u;
      double shifted = rounding == Rounding::deterministic ? t + 0.5
                                                           : t + rng.uniform();
      double f = std::floor(shifted);
      if (f < 0.0) f = 0.0;
      if (f > levels) f = levels;
      codes[i] = static_cast<std::uint16_t>(f);
    }
  }
  s.codes = pack_codes(codes, bits);
  return s;
}

inline Vec dequantize(const QuantizedErrorState& s) {
  std::vector<std::uint16_t> codes = unpack_codes(s.codes, s.dim, s.bits);
  Vec out(s.dim, 0.0);
  if (s.hi > s.lo) {
    const double u = (s.hi - s.lo) / quant_levels(s.bits);
    for (std::size_t i = 0; i < s.dim; ++i)
      out[i] = static_cast<double>(codes[i]) * u + s.lo;
  } else {
    for (std::size_t i = 0; i < s.dim; ++i) out[i] = s.lo;
  }
  return out;
}

// Relative-error certificate for quantizing x at b bits over its own
// min/max range: ||decode(encode(x)) - x|| <= omega_bound(x, b) * ||x||.
// The min and max coordinates land exactly on grid endpoints, which is
// where the d-2 comes from.  Requires d >= 3 and a nonzero range vector.
inline double omega_bound(const Vec& x, int bits) {
  if (bits < 1 || bits > 16)
    throw ParameterError("omega_bound: bits must lie in [1,16]");
  if (x.size() < 3) throw ParameterError("omega_bound: need d >= 3");
  if (!all_finite(x)) throw InputError("omega_bound: non-finite input");
  double lo = x[0], hi = x[0];
  for (double v : x) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  double denom = std::sqrt(hi * hi + lo * lo);
  if (denom == 0.0)
    throw InputError("omega_bound: degenerate input (min = max = 0)");
  double d = static_cast<double>(x.size());
  return std::sqrt(d - 2.0) / quant_levels(bits) * (hi - lo) / denom;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline std::vector<std::uint8_t> serialize(const QuantizedErrorState& s) {
  ByteWriter w;
  w.u64(s.dim);
  w.u8(static_cast<std::uint8_t>(s.bits));
  w.u8(static_cast<std::uint8_t>(s.rounding));
  w.f64(s.lo);
  w.f64(s.hi);
  w.bytes(s.codes);
  return w.take();
}

inline QuantizedErrorState deserialize_quantized_state(ByteReader& r) {
  QuantizedErrorState s;
  s.dim = r.u64();
  int bits = r.u8();
  if (bits < 1 || bits > 16)
    throw InputError("quantized state: invalid bit width");
  s.bits = bits;
  std::uint8_t rounding = r.u8();
  if (rounding > 1) throw InputError("quantized state: invalid rounding tag");
  s.rounding = static_cast<Rounding>(rounding);
  s.lo = r.f64();
  s.hi = r.f64();
  if (!std::isfinite(s.lo) || !std::isfinite(s.hi) || s.lo > s.hi)
    throw InputError("quantized state: invalid range");
  s.codes = r.bytes((s.dim * static_cast<std::size_t>(s.bits) + 7) / 8);
  return s;
}

inline QuantizedErrorState deserialize_quantized_state(
    const std::vector<std::uint8_t>& buf) {
  ByteReader r(buf);
  QuantizedErrorState s = deserialize_quantized_state(r);
  if (!r.done()) throw InputError("quantized state: trailing bytes");
  return s;
}

}  // namespace dpopt
