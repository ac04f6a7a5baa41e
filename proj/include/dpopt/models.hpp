#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "io.hpp"
#include "rng.hpp"
#include "vec.hpp"

namespace dpopt {

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

enum class LabelKind : std::uint8_t { none = 0, sign = 1, class_index = 2 };

struct Dataset {
  std::size_t n = 0;
  std::size_t p = 0;
  LabelKind label_kind = LabelKind::none;
  std::uint64_t seed = 0;
  std::vector<double> features;  // row-major n x p
  std::vector<double> labels;    // length n; +-1 or class index, 0 if unused

  std::span<const double> row(std::size_t i) const {
    if (i >= n) throw ParameterError("dataset row out of range");
    return std::span<const double>(features.data() + i * p, p);
  }
};

// ---------------------------------------------------------------------------
// Problems
// ---------------------------------------------------------------------------

enum class ProblemKind : std::uint8_t { quadratic = 0, logistic = 1, mlp = 2 };

// Desk-scale training problems with hand-derived per-example gradients.
// The mlp is a single tanh hidden layer with a softmax cross-entropy head;
// parameters are laid out as [W1 (h x p), b1 (h), W2 (c x h), b2 (c)],
// all row-major.
struct Problem {
  ProblemKind kind = ProblemKind::quadratic;
  std::size_t feature_dim = 0;
  std::size_t hidden = 0;   // mlp only
  std::size_t classes = 0;  // mlp only
  std::size_t param_dim = 0;
};

inline Problem make_problem(ProblemKind kind, std::size_t p,
                            std::size_t hidden = 0, std::size_t classes = 0) {
  if (p < 1) throw ParameterError("make_problem: feature dim must be >= 1");
  Problem pr;
  pr.kind = kind;
  pr.feature_dim = p;
  switch (kind) {
    case ProblemKind::quadratic:
    case ProblemKind::logistic:
      pr.param_dim = p;
      break;
    case ProblemKind::mlp: {
      if (hidden < 1 || classes < 2)
        throw ParameterError("make_problem: mlp needs hidden >= 1, classes >= 2");
      pr.hidden = hidden;
      pr.classes = classes;
      pr.param_dim = hidden * (p + 1) + classes * (hidden + 1);
      if (pr.param_dim > 20000)
        throw ParameterError("make_problem: mlp parameter count exceeds 20000");
      break;
    }
  }
  return pr;
}

namespace detail {

// log(1 + exp(-z)) without overflow on either tail.
inline double log1p_exp_neg(double z) {
  if (z > 0.0) return std::log1p(std::exp(-z));
  return -z + std::log1p(std::exp(z));
}

inline double sigmoid(double z) {
  if (z >= 0.0) {
    double e = std::exp(-z);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(z);
  return e / (1.0 + e);
}

struct MlpForward {
  std::vector<double> a1;     // tanh activations, length h
  std::vector<double> probs;  // softmax outputs, length c
  double loss = 0.0;
};

inline MlpForward mlp_forward(const Problem& pr, const Vec& theta,
                              std::span<const double> x, int label) {
  const std::size_t p = pr.feature_dim, h = pr.hidden, c = pr.classes;
  const double* w1 = theta.data();
  const double* b1 = w1 + h * p;
  const double* w2 = b1 + h;
  const double* b2 = w2 + c * h;

  MlpForward f;
  f.a1.resize(h);
  for (std::size_t j = 0; j < h; ++j) {
    double z = b1[j];
    const double* row = w1 + j * p;
    for (std::size_t k = 0; k < p; ++k) z += row[k] * x[k];
    f.a1[j] = std::tanh(z);
  }
  std::vector<double> z2(c);
  double zmax = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < c; ++j) {
    double z = b2[j];
    const double* row = w2 + j * h;
    for (std::size_t k = 0; k < h; ++k) z += row[k] * f.a1[k];
    z2[j] = z;
    zmax = std::max(zmax, z);
  }
  double sum = 0.0;
  f.probs.resize(c);
  for (std::size_t j = 0; j < c; ++j) {
    f.probs[j] = std::exp(z2[j] - zmax);
    sum += f.probs[j];
  }
  for (double& v : f.probs) v /= sum;
  f.loss = -(z2[static_cast<std::size_t>(label)] - zmax - std::log(sum));
  return f;
}

}  // namespace detail

inline double per_sample_loss(const Problem& pr, const Vec& theta,
                              std::span<const double> x, double label) {
  if (theta.size() != pr.param_dim)
    throw InputError("per_sample_loss: parameter dim mismatch");
  if (x.size() != pr.feature_dim)
    throw InputError("per_sample_loss: feature dim mismatch");
  switch (pr.kind) {
    case ProblemKind::quadratic: {
      double s = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        double d = theta[i] - x[i];
        s += d * d;
      }
      return 0.5 * s;
    }
    case ProblemKind::logistic: {
      if (label != 1.0 && label != -1.0)
        throw InputError("logistic labels must be +-1");
      double z = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) z += theta[i] * x[i];
      return detail::log1p_exp_neg(label * z);
    }
    case ProblemKind::mlp: {
      int y = static_cast<int>(label);
      if (y < 0 || static_cast<std::size_t>(y) >= pr.classes ||
          label != static_cast<double>(y))
        throw InputError("mlp label must be an integer class index");
      return detail::mlp_forward(pr, theta, x, y).loss;
    }
  }
  throw InvariantError("unreachable problem kind");
}

// Gradient of one example's loss, written into grad (resized to param_dim).
inline void per_sample_grad(const Problem& pr, const Vec& theta,
                            std::span<const double> x, double label, Vec& grad) {
  if (theta.size() != pr.param_dim)
    throw InputError("per_sample_grad: parameter dim mismatch");
  if (x.size() != pr.feature_dim)
    throw InputError("per_sample_grad: feature dim mismatch");
  grad.assign(pr.param_dim, 0.0);
  switch (pr.kind) {
    case ProblemKind::quadratic: {
      for (std::size_t i = 0; i < x.size(); ++i) grad[i] = theta[i] - x[i];
      return;
    }
    case ProblemKind::logistic: {
      if (label != 1.0 && label != -1.0)
        throw InputError("logistic labels must be +-1");
      double z = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) z += theta[i] * x[i];
      double s = detail::sigmoid(-label * z);  // = 1 - sigmoid(y z)
      for (std::size_t i = 0; i < x.size(); ++i) grad[i] = -label * s * x[i];
      return;
    }
    case ProblemKind::mlp: {
      int y = static_cast<int>(label);
      if (y < 0 || static_cast<std::size_t>(y) >= pr.classes ||
          label != static_cast<double>(y))
        throw InputError("mlp label must be an integer class index");
      const std::size_t p = pr.feature_dim, h = pr.hidden, c = pr.classes;
      detail::MlpForward f = detail::mlp_forward(pr, theta, x, y);

      const double* w2 = theta.data() + h * p + h;
      double* gw1 = grad.data();
      double* gb1 = gw1 + h * p;
      double* gw2 = gb1 + h;
      double* gb2 = gw2 + c * h;

      // dz2 = probs - onehot(y)
      std::vector<double> dz2 = f.probs;
      dz2[static_cast<std::size_t>(y)] -= 1.0;
      for (std::size_t j = 0; j < c; ++j) {
        gb2[j] = dz2[j];
        double* row = gw2 + j * h;
        for (std::size_t k = 0; k < h; ++k) row[k] = dz2[j] * f.a1[k];
      }
      for (std::size_t k = 0; k < h; ++k) {
        double da1 = 0.0;
        for (std::size_t j = 0; j < c; ++j) da1 += w2[j * h + k] * dz2[j];
        double dz1 = da1 * (1.0 - f.a1[k] * f.a1[k]);
        gb1[k] = dz1;
        double* row = gw1 + k * p;
        for (std::size_t i = 0; i < p; ++i) row[i] = dz1 * x[i];
      }
      return;
    }
  }
  throw InvariantError("unreachable problem kind");
}

inline std::vector<Vec> per_sample_gradients(const Problem& pr, const Vec& theta,
                                             const Dataset& data,
                                             const std::vector<std::size_t>& batch) {
  std::vector<Vec> out(batch.size());
  for (std::size_t j = 0; j < batch.size(); ++j) {
    std::size_t i = batch[j];
    per_sample_grad(pr, theta, data.row(i), data.labels[i], out[j]);
  }
  return out;
}

inline double batch_loss(const Problem& pr, const Vec& theta, const Dataset& data,
                         const std::vector<std::size_t>& batch) {
  if (batch.empty()) throw ParameterError("batch_loss: empty batch");
  double s = 0.0;
  for (std::size_t i : batch)
    s += per_sample_loss(pr, theta, data.row(i), data.labels[i]);
  return s / static_cast<double>(batch.size());
}

inline double loss(const Problem& pr, const Vec& theta, const Dataset& data) {
  if (data.n == 0) throw ParameterError("loss: empty dataset");
  double s = 0.0;
  for (std::size_t i = 0; i < data.n; ++i)
    s += per_sample_loss(pr, theta, data.row(i), data.labels[i]);
  return s / static_cast<double>(data.n);
}

inline Vec full_grad(const Problem& pr, const Vec& theta, const Dataset& data) {
  if (data.n == 0) throw ParameterError("full_grad: empty dataset");
  Vec sum(pr.param_dim, 0.0);
  Vec g;
  for (std::size_t i = 0; i < data.n; ++i) {
    per_sample_grad(pr, theta, data.row(i), data.labels[i], g);
    for (std::size_t j = 0; j < pr.param_dim; ++j) sum[j] += g[j];
  }
  for (double& v : sum) v /= static_cast<double>(data.n);
  return sum;
}

// Fraction of examples whose predicted label matches; defined for the two
// classification problems only.
inline double accuracy(const Problem& pr, const Vec& theta, const Dataset& data) {
  if (data.n == 0) throw ParameterError("accuracy: empty dataset");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.n; ++i) {
    auto x = data.row(i);
    switch (pr.kind) {
      case ProblemKind::logistic: {
        double z = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j) z += theta[j] * x[j];
        double pred = z >= 0.0 ? 1.0 : -1.0;
        if (pred == data.labels[i]) ++hits;
        break;
      }
      case ProblemKind::mlp: {
        detail::MlpForward f = detail::mlp_forward(pr, theta, x, 0);
        std::size_t arg = 0;
        for (std::size_t j = 1; j < f.probs.size(); ++j)
          if (f.probs[j] > f.probs[arg]) arg = j;
        if (static_cast<double>(arg) == data.labels[i]) ++hits;
        break;
      }
      case ProblemKind::quadratic:
        throw ParameterError("accuracy undefined for the quadratic problem");
    }
  }
  return static_cast<double>(hits) / static_cast<double>(data.n);
}

// Central-difference gradient of an arbitrary scalar function; the test
// oracle for every hand-derived gradient above.
inline Vec finite_diff(const std::function<double(const Vec&)>& f, const Vec& theta,
                       double h = 1e-6) {
  if (!(h > 0.0)) throw ParameterError("finite_diff: step must be positive");
  Vec g(theta.size());
  Vec t = theta;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    double orig = t[i];
    t[i] = orig + h;
    double fp = f(t);
    t[i] = orig - h;
    double fm = f(t);
    t[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline Vec finite_diff_grad(const Problem& pr, const Vec& theta, const Dataset& data,
                            double h = 1e-6) {
  return finite_diff([&](const Vec& t) { return loss(pr, t, data); }, theta, h);
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

// Deterministic in (kind, n, p, seed): every draw comes from named
// substreams of the seed, so regenerating the dataset is exact.
//
//   quadratic: rows are N(0, I_p), labels unused.
//   logistic:  rows are N(0, I_p), labels are the sign of a planted
//              teacher direction (so the problem is realizable).
//   mlp:       one Gaussian blob per class, center scale 2, within-class
//              scale 0.5; labels are uniform class indices.
inline Dataset make_synthetic(ProblemKind kind, std::size_t n, std::size_t p,
                              std::uint64_t seed, std::size_t classes = 0) {
  if (n < 1 || p < 1) throw ParameterError("make_synthetic: need n >= 1, p >= 1");
  Dataset d;
  d.n = n;
  d.p = p;
  d.seed = seed;
  d.features.resize(n * p);
  d.labels.assign(n, 0.0);

  RngStream data_rng = substream(seed, "data");
  switch (kind) {
    case ProblemKind::quadratic: {
      d.label_kind = LabelKind::none;
      for (double& v : d.features) v = data_rng.gaussian();
      break;
    }
    case ProblemKind::logistic: {
      d.label_kind = LabelKind::sign;
      for (double& v : d.features) v = data_rng.gaussian();
      RngStream teacher_rng = substream(seed, "teacher");
      Vec teacher(p);
      for (double& v : teacher) v = teacher_rng.gaussian();
      for (std::size_t i = 0; i < n; ++i) {
        double z = 0.0;
        for (std::size_t j = 0; j < p; ++j) z += d.features[i * p + j] * teacher[j];
        d.labels[i] = z >= 0.0 ? 1.0 : -1.0;
      }
      break;
    }
    case ProblemKind::mlp: {
      if (classes < 2) throw ParameterError("make_synthetic: mlp needs classes >= 2");
      d.label_kind = LabelKind::class_index;
      RngStream center_rng = substream(seed, "centers");
      std::vector<double> centers(classes * p);
      for (double& v : centers) v = 2.0 * center_rng.gaussian();
      RngStream label_rng = substream(seed, "labels");
      for (std::size_t i = 0; i < n; ++i)
        d.labels[i] = static_cast<double>(label_rng.next_below(classes));
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t y = static_cast<std::size_t>(d.labels[i]);
        for (std::size_t j = 0; j < p; ++j)
          d.features[i * p + j] = centers[y * p + j] + 0.5 * data_rng.gaussian();
      }
      break;
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Dataset on-disk format (columnar)
// ---------------------------------------------------------------------------

inline constexpr std::uint64_t kDatasetMagic = 0x31307461646F7064ULL;  // "dpodat01"

inline std::vector<std::uint8_t> serialize(const Dataset& d) {
  ByteWriter w;
  w.u64(kDatasetMagic);
  w.u64(d.n);
  w.u64(d.p);
  w.u64(d.seed);
  w.u8(static_cast<std::uint8_t>(d.label_kind));
  // Feature matrix stored one column at a time.
  for (std::size_t j = 0; j < d.p; ++j)
    for (std::size_t i = 0; i < d.n; ++i) w.f64(d.features[i * d.p + j]);
  for (double v : d.labels) w.f64(v);
  return w.take();
}

inline Dataset deserialize_dataset(const std::vector<std::uint8_t>& buf) {
  ByteReader r(buf);
  if (r.u64() != kDatasetMagic) throw InputError("dataset: bad magic");
  Dataset d;
  d.n = r.u64();
  d.p = r.u64();
  d.seed = r.u64();
  std::uint8_t lk = r.u8();
  if (lk > 2) throw InputError("dataset: invalid label kind");
  d.label_kind = static_cast<LabelKind>(lk);
  d.features.resize(d.n * d.p);
  for (std::size_t j = 0; j < d.p; ++j)
    for (std::size_t i = 0; i < d.n; ++i) d.features[i * d.p + j] = r.f64();
  d.labels.resize(d.n);
  for (double& v : d.labels) v = r.f64();
  if (!r.done()) throw InputError("dataset: trailing bytes");
  return d;
}

inline void save_dataset(const Dataset& d, const std::string& path) {
  write_file(path, serialize(d));
}

inline Dataset load_dataset(const std::string& path) {
  return deserialize_dataset(read_file(path));
}

// ---------------------------------------------------------------------------
// Analytic problem constants
// ---------------------------------------------------------------------------

struct ProblemBounds {
  double smoothness = 0.0;     // L
  double grad_bound = 0.0;     // G, on the stated domain
  double grad_variance = 0.0;  // sigma_g^2, per-example at a point
  double f_star = 0.0;         // minimum of the mean loss (lower bound for logistic)
};

// The quadratic mean loss has Hessian I (L = 1), minimizer at the feature
// mean, and per-example gradient variance equal to the feature variance,
// independent of theta.  G is reported over a ball of the given radius
// around the origin.
inline ProblemBounds quadratic_bounds(const Dataset& d, double radius) {
  if (d.n == 0) throw ParameterError("quadratic_bounds: empty dataset");
  ProblemBounds b;
  b.smoothness = 1.0;
  Vec mean(d.p, 0.0);
  for (std::size_t i = 0; i < d.n; ++i)
    for (std::size_t j = 0; j < d.p; ++j) mean[j] += d.features[i * d.p + j];
  for (double& v : mean) v /= static_cast<double>(d.n);
  double var = 0.0, max_norm = 0.0;
  for (std::size_t i = 0; i < d.n; ++i) {
    double s = 0.0, nrm = 0.0;
    for (std::size_t j = 0; j < d.p; ++j) {
      double f = d.features[i * d.p + j];
      double c = f - mean[j];
      s += c * c;
      nrm += f * f;
    }
    var += s;
    max_norm = std::max(max_norm, std::sqrt(nrm));
  }
  var /= static_cast<double>(d.n);
  b.grad_variance = var;
  b.f_star = 0.5 * var;
  b.grad_bound = radius + max_norm;
  return b;
}

// Logistic per-example gradients never exceed the feature norm, and the
// per-example Hessian is at most ||x||^2 / 4.  f_star = 0 is a valid lower
// bound (attained in the separable limit).
inline ProblemBounds logistic_bounds(const Dataset& d) {
  if (d.n == 0) throw ParameterError("logistic_bounds: empty dataset");
  ProblemBounds b;
  double max_norm = 0.0;
  for (std::size_t i = 0; i < d.n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d.p; ++j) {
      double f = d.features[i * d.p + j];
      s += f * f;
    }
    max_norm = std::max(max_norm, std::sqrt(s));
  }
  b.grad_bound = max_norm;
  b.smoothness = 0.25 * max_norm * max_norm;
  b.grad_variance = max_norm * max_norm;
  b.f_star = 0.0;
  return b;
}

}  // namespace dpopt
