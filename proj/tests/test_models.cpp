#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include <dpopt/models.hpp>
#include <dpopt/rng.hpp>

using namespace dpopt;

namespace {

double rel_err(const Vec& got, const Vec& want) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    double d = got[i] - want[i];
    num += d * d;
    den += want[i] * want[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

Vec random_theta(std::uint64_t seed, std::size_t d, double scale) {
  RngStream rng = substream(seed, "theta");
  Vec t(d);
  for (double& v : t) v = scale * rng.gaussian();
  return t;
}

}  // namespace

TEST_CASE("make_problem parameter counts") {
  REQUIRE(make_problem(ProblemKind::quadratic, 7).param_dim == 7);
  REQUIRE(make_problem(ProblemKind::logistic, 12).param_dim == 12);
  // h*(p+1) + c*(h+1) = 32*17 + 4*33 = 676
  Problem mlp = make_problem(ProblemKind::mlp, 16, 32, 4);
  REQUIRE(mlp.param_dim == 676);
  REQUIRE_THROWS_AS(make_problem(ProblemKind::mlp, 16, 0, 4), ParameterError);
  REQUIRE_THROWS_AS(make_problem(ProblemKind::mlp, 16, 32, 1), ParameterError);
  REQUIRE_THROWS_AS(make_problem(ProblemKind::mlp, 100, 100, 100), ParameterError);
  REQUIRE_THROWS_AS(make_problem(ProblemKind::quadratic, 0), ParameterError);
}

TEST_CASE("quadratic loss and gradient closed forms") {
  Problem pr = make_problem(ProblemKind::quadratic, 2);
  Vec theta = {1.0, 2.0};
  Vec x = {0.0, 0.0};
  REQUIRE(per_sample_loss(pr, theta, x, 0.0) == 2.5);
  Vec g;
  per_sample_grad(pr, theta, x, 0.0, g);
  REQUIRE(g == Vec{1.0, 2.0});
}

TEST_CASE("logistic loss closed forms and label validation") {
  Problem pr = make_problem(ProblemKind::logistic, 2);
  Vec theta = {0.0, 0.0};
  Vec x = {1.0, -1.0};
  REQUIRE(per_sample_loss(pr, theta, x, 1.0) ==
          Catch::Approx(std::log(2.0)).epsilon(1e-14));
  REQUIRE_THROWS_AS(per_sample_loss(pr, theta, x, 0.5), InputError);
  Vec g;
  REQUIRE_THROWS_AS(per_sample_grad(pr, theta, x, 2.0, g), InputError);
  // At theta = 0 the gradient is -y x / 2.
  per_sample_grad(pr, theta, x, 1.0, g);
  REQUIRE(g[0] == Catch::Approx(-0.5).epsilon(1e-14));
  REQUIRE(g[1] == Catch::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("logistic loss is stable at extreme margins") {
  Problem pr = make_problem(ProblemKind::logistic, 1);
  Vec theta = {800.0};
  Vec x = {1.0};
  double well_classified = per_sample_loss(pr, theta, x, 1.0);
  REQUIRE(std::isfinite(well_classified));
  REQUIRE(well_classified >= 0.0);
  REQUIRE(well_classified < 1e-300);
  double badly_classified = per_sample_loss(pr, theta, x, -1.0);
  REQUIRE(badly_classified == Catch::Approx(800.0).epsilon(1e-12));
  Vec g;
  per_sample_grad(pr, theta, x, -1.0, g);
  REQUIRE(g[0] == Catch::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("hand-derived gradients match central differences") {
  struct Case {
    ProblemKind kind;
    std::size_t p, h, c, n;
  };
  const Case cases[] = {
      {ProblemKind::quadratic, 6, 0, 0, 8},
      {ProblemKind::logistic, 5, 0, 0, 10},
      {ProblemKind::mlp, 4, 3, 3, 6},
  };
  for (const Case& cs : cases) {
    Problem pr = make_problem(cs.kind, cs.p, cs.h, cs.c);
    Dataset data = make_synthetic(cs.kind, cs.n, cs.p, 555, cs.c);
    Vec theta = random_theta(777, pr.param_dim, 0.5);

    Vec fd = finite_diff_grad(pr, theta, data);
    Vec an = full_grad(pr, theta, data);
    REQUIRE(rel_err(an, fd) <= 1e-5);

    // Per-example gradients, one sample at a time.
    for (std::size_t i = 0; i < 3; ++i) {
      Vec g;
      per_sample_grad(pr, theta, data.row(i), data.labels[i], g);
      Vec fd1 = finite_diff(
          [&](const Vec& t) {
            return per_sample_loss(pr, t, data.row(i), data.labels[i]);
          },
          theta);
      REQUIRE(rel_err(g, fd1) <= 1e-5);
    }
  }
}

TEST_CASE("loss averages per-example losses and batch_loss matches subsets") {
  Problem pr = make_problem(ProblemKind::quadratic, 3);
  Dataset data = make_synthetic(ProblemKind::quadratic, 5, 3, 99);
  Vec theta = random_theta(1, 3, 1.0);
  double manual = 0.0;
  for (std::size_t i = 0; i < data.n; ++i)
    manual += per_sample_loss(pr, theta, data.row(i), data.labels[i]);
  manual /= static_cast<double>(data.n);
  REQUIRE(loss(pr, theta, data) == Catch::Approx(manual).epsilon(1e-15));

  std::vector<std::size_t> batch = {1, 3};
  double sub = 0.5 * (per_sample_loss(pr, theta, data.row(1), data.labels[1]) +
                      per_sample_loss(pr, theta, data.row(3), data.labels[3]));
  REQUIRE(batch_loss(pr, theta, data, batch) == Catch::Approx(sub).epsilon(1e-15));
  REQUIRE_THROWS_AS(batch_loss(pr, theta, data, {}), ParameterError);
}

TEST_CASE("per_sample_gradients returns one gradient per batch index") {
  Problem pr = make_problem(ProblemKind::logistic, 4);
  Dataset data = make_synthetic(ProblemKind::logistic, 9, 4, 3);
  Vec theta = random_theta(2, 4, 1.0);
  std::vector<std::size_t> batch = {0, 4, 8};
  std::vector<Vec> grads = per_sample_gradients(pr, theta, data, batch);
  REQUIRE(grads.size() == 3);
  for (std::size_t j = 0; j < batch.size(); ++j) {
    Vec g;
    per_sample_grad(pr, theta, data.row(batch[j]), data.labels[batch[j]], g);
    REQUIRE(grads[j] == g);
  }
}

TEST_CASE("accuracy on crafted examples") {
  Problem pr = make_problem(ProblemKind::logistic, 2);
  Dataset d;
  d.n = 2;
  d.p = 2;
  d.label_kind = LabelKind::sign;
  d.features = {1.0, 0.0, -1.0, 0.0};
  d.labels = {1.0, -1.0};
  Vec theta = {1.0, 0.0};
  REQUIRE(accuracy(pr, theta, d) == 1.0);
  d.labels = {1.0, 1.0};
  REQUIRE(accuracy(pr, theta, d) == 0.5);

  Problem quad = make_problem(ProblemKind::quadratic, 2);
  REQUIRE_THROWS_AS(accuracy(quad, theta, d), ParameterError);
}

TEST_CASE("gradient descent reduces each problem's loss") {
  struct Case {
    ProblemKind kind;
    std::size_t p, h, c;
  };
  const Case cases[] = {
      {ProblemKind::quadratic, 8, 0, 0},
      {ProblemKind::logistic, 8, 0, 0},
      {ProblemKind::mlp, 6, 4, 3},
  };
  for (const Case& cs : cases) {
    Problem pr = make_problem(cs.kind, cs.p, cs.h, cs.c);
    Dataset data = make_synthetic(cs.kind, 64, cs.p, 2026, cs.c);
    Vec theta = random_theta(11, pr.param_dim, 0.1);
    double before = loss(pr, theta, data);
    for (int t = 0; t < 50; ++t) {
      Vec g = full_grad(pr, theta, data);
      for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= 0.1 * g[i];
    }
    REQUIRE(loss(pr, theta, data) < before);
  }
}

TEST_CASE("make_synthetic is deterministic in the seed") {
  Dataset a = make_synthetic(ProblemKind::logistic, 40, 6, 12345);
  Dataset b = make_synthetic(ProblemKind::logistic, 40, 6, 12345);
  REQUIRE(a.features == b.features);
  REQUIRE(a.labels == b.labels);
  Dataset c = make_synthetic(ProblemKind::logistic, 40, 6, 12346);
  REQUIRE(a.features != c.features);
}

TEST_CASE("make_synthetic label ranges") {
  Dataset lg = make_synthetic(ProblemKind::logistic, 100, 4, 7);
  REQUIRE(lg.label_kind == LabelKind::sign);
  for (double y : lg.labels) REQUIRE((y == 1.0 || y == -1.0));

  Dataset ml = make_synthetic(ProblemKind::mlp, 100, 4, 7, 5);
  REQUIRE(ml.label_kind == LabelKind::class_index);
  bool saw_nonzero = false;
  for (double y : ml.labels) {
    REQUIRE(y == std::floor(y));
    REQUIRE(y >= 0.0);
    REQUIRE(y <= 4.0);
    if (y != 0.0) saw_nonzero = true;
  }
  REQUIRE(saw_nonzero);
  REQUIRE_THROWS_AS(make_synthetic(ProblemKind::mlp, 10, 4, 7, 1), ParameterError);
  REQUIRE_THROWS_AS(make_synthetic(ProblemKind::quadratic, 0, 4, 7), ParameterError);
}

TEST_CASE("mlp blobs are separable by their planted structure") {
  // A well-specified generator should admit high training accuracy; check a
  // lightweight proxy: nearest-class-mean classification beats chance by a
  // wide margin.
  const std::size_t n = 400, p = 8, c = 4;
  Dataset d = make_synthetic(ProblemKind::mlp, n, p, 31415, c);
  std::vector<Vec> means(c, Vec(p, 0.0));
  std::vector<std::size_t> counts(c, 0);
  for (std::size_t i = 0; i < n; ++i) {
    auto y = static_cast<std::size_t>(d.labels[i]);
    auto x = d.row(i);
    for (std::size_t j = 0; j < p; ++j) means[y][j] += x[j];
    ++counts[y];
  }
  for (std::size_t k = 0; k < c; ++k) {
    REQUIRE(counts[k] > 0);
    for (double& v : means[k]) v /= static_cast<double>(counts[k]);
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    auto x = d.row(i);
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < c; ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < p; ++j) {
        double t = x[j] - means[k][j];
        s += t * t;
      }
      if (s < best_d) {
        best_d = s;
        best = k;
      }
    }
    if (static_cast<double>(best) == d.labels[i]) ++hits;
  }
  REQUIRE(static_cast<double>(hits) / n > 0.9);
}

TEST_CASE("dataset serialization round trip and error cases") {
  Dataset d = make_synthetic(ProblemKind::mlp, 23, 5, 606, 3);
  std::vector<std::uint8_t> blob = serialize(d);
  Dataset back = deserialize_dataset(blob);
  REQUIRE(back.n == d.n);
  REQUIRE(back.p == d.p);
  REQUIRE(back.seed == d.seed);
  REQUIRE(back.label_kind == d.label_kind);
  REQUIRE(back.features == d.features);
  REQUIRE(back.labels == d.labels);

  std::vector<std::uint8_t> bad_magic = blob;
  bad_magic[0] ^= 0xFF;
  REQUIRE_THROWS_AS(deserialize_dataset(bad_magic), InputError);
  std::vector<std::uint8_t> truncated(blob.begin(), blob.end() - 4);
  REQUIRE_THROWS_AS(deserialize_dataset(truncated), InputError);
  std::vector<std::uint8_t> trailing = blob;
  trailing.push_back(0);
  REQUIRE_THROWS_AS(deserialize_dataset(trailing), InputError);
}

TEST_CASE("dataset file round trip") {
  Dataset d = make_synthetic(ProblemKind::logistic, 17, 3, 41);
  std::string path = "test_models_dataset.bin";
  save_dataset(d, path);
  Dataset back = load_dataset(path);
  REQUIRE(back.features == d.features);
  REQUIRE(back.labels == d.labels);
  std::remove(path.c_str());
}

TEST_CASE("dataset row bounds checking") {
  Dataset d = make_synthetic(ProblemKind::quadratic, 4, 2, 1);
  REQUIRE(d.row(3).size() == 2);
  REQUIRE_THROWS_AS(d.row(4), ParameterError);
}

TEST_CASE("quadratic_bounds on a hand-checkable dataset") {
  Dataset d;
  d.n = 2;
  d.p = 2;
  d.features = {1.0, 0.0, -1.0, 0.0};
  d.labels = {0.0, 0.0};
  ProblemBounds b = quadratic_bounds(d, 3.0);
  REQUIRE(b.smoothness == 1.0);
  REQUIRE(b.grad_variance == Catch::Approx(1.0).epsilon(1e-15));
  REQUIRE(b.f_star == Catch::Approx(0.5).epsilon(1e-15));
  REQUIRE(b.grad_bound == Catch::Approx(4.0).epsilon(1e-15));

  // f_star is attained at the feature mean (here the origin).
  Problem pr = make_problem(ProblemKind::quadratic, 2);
  REQUIRE(loss(pr, {0.0, 0.0}, d) == Catch::Approx(b.f_star).epsilon(1e-15));
  Vec g = full_grad(pr, {0.0, 0.0}, d);
  REQUIRE(l2_norm(g) <= 1e-15);
}

TEST_CASE("logistic_bounds reflect the largest feature norm") {
  Dataset d;
  d.n = 2;
  d.p = 2;
  d.label_kind = LabelKind::sign;
  d.features = {3.0, 4.0, 0.0, 2.0};  // norms 5 and 2
  d.labels = {1.0, -1.0};
  ProblemBounds b = logistic_bounds(d);
  REQUIRE(b.grad_bound == Catch::Approx(5.0).epsilon(1e-15));
  REQUIRE(b.smoothness == Catch::Approx(6.25).epsilon(1e-15));
  REQUIRE(b.grad_variance == Catch::Approx(25.0).epsilon(1e-15));
  REQUIRE(b.f_star == 0.0);

  // The gradient bound really does dominate sampled per-example gradients.
  Problem pr = make_problem(ProblemKind::logistic, 2);
  Vec theta = random_theta(8, 2, 2.0);
  for (std::size_t i = 0; i < d.n; ++i) {
    Vec g;
    per_sample_grad(pr, theta, d.row(i), d.labels[i], g);
    REQUIRE(l2_norm(g) <= b.grad_bound * (1.0 + 1e-12));
  }
}
