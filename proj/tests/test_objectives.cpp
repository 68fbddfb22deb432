#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <map>

#include "sapef/objectives.hpp"

using namespace sapef;

namespace {

RandomStream test_stream(std::uint64_t seed) { return RandomStream(seed, {}); }

// Central-difference gradient of the global objective, h = 1e-6.
ModelVector fd_global_grad(const FederatedTask& task, const ModelVector& w) {
  const double h = 1e-6;
  ModelVector g(task.dimension);
  for (int j = 0; j < task.dimension; ++j) {
    ModelVector hi = w, lo = w;
    hi[j] += h;
    lo[j] -= h;
    g[j] = (value(task, hi) - value(task, lo)) / (2.0 * h);
  }
  return g;
}

FederatedTask identity_task(int d, const ModelVector& b) {
  FederatedTask task;
  task.dimension = d;
  task.clients.resize(1);
  task.clients[0].kind = TaskKind::kQuadratic;
  task.clients[0].features = Eigen::MatrixXd::Identity(d, d);
  task.clients[0].targets = b;
  return task;
}

}  // namespace

TEST_CASE("full gradient closed forms") {
  // A = I, b = (1,1): minimizer at w = (1,1).
  ModelVector b(2);
  b << 1, 1;
  FederatedTask task = identity_task(2, b);
  ModelVector w(2);
  w << 1, 1;
  CHECK(norm2_sq(full_grad(task, 0, w)) == 0.0);

  // grad of 0.5||w||^2 is w.
  FederatedTask zero_target = identity_task(2, ModelVector::Zero(2));
  w << 1, 2;
  CHECK(full_grad(zero_target, 0, w) == w);
}

TEST_CASE("logistic gradient at zero with all labels zero") {
  FederatedTask task;
  task.dimension = 3;
  task.clients.resize(1);
  ClientObjective& c = task.clients[0];
  c.kind = TaskKind::kLogistic;
  c.features = Eigen::MatrixXd::Random(5, 3);
  c.targets = Eigen::VectorXd::Zero(5);
  const ModelVector g = full_grad(task, 0, ModelVector::Zero(3));
  ModelVector expect = ModelVector::Zero(3);
  for (int i = 0; i < 5; ++i) expect += 0.5 * c.features.row(i).transpose();
  expect /= 5.0;
  CHECK(std::sqrt(norm2_sq(g - expect)) < 1e-14);
}

TEST_CASE("global gradient matches central differences") {
  int pairs = 0;
  for (int t = 0; t < 5; ++t) {
    const FederatedTask quad =
        make_quadratic_task(3, 6, 10, 1.0, t % 2 ? 0.01 : 0.0, test_stream(100 + t));
    const FederatedTask log =
        make_dirichlet_task(2, 3, 1.0, 30, 6, test_stream(200 + t));
    for (const FederatedTask* task : {&quad, &log}) {
      for (int p = 0; p < 10; ++p) {
        const ModelVector w = draw_gaussian(
            test_stream(300 + t).with({static_cast<std::uint32_t>(p), 0, 0,
                                       Purpose::kDissimilarityProbe}),
            task->dimension);
        const ModelVector g = global_grad(*task, w);
        const ModelVector fd = fd_global_grad(*task, w);
        const double rel = std::sqrt(norm2_sq(g - fd)) / std::max(1.0, std::sqrt(norm2_sq(g)));
        CHECK(rel <= 1e-5);
        ++pairs;
      }
    }
  }
  CHECK(pairs == 100);
}

TEST_CASE("stochastic gradient: full batch degenerates to the exact gradient") {
  const FederatedTask task = make_quadratic_task(2, 5, 8, 1.0, 0.0, test_stream(1));
  const ModelVector w = ModelVector::Ones(5);
  const ModelVector sg =
      stochastic_grad(task, 0, w, task.clients[0].samples(), test_stream(2));
  CHECK(sg == full_grad(task, 0, w));
}

TEST_CASE("stochastic gradient is unbiased (Monte Carlo, 3 sigma)") {
  const FederatedTask task = make_quadratic_task(1, 4, 12, 1.5, 0.0, test_stream(3));
  const ModelVector w = draw_gaussian(test_stream(4), 4);
  const ModelVector exact = full_grad(task, 0, w);
  const int n = 10000;
  ModelVector sum = ModelVector::Zero(4);
  ModelVector sum_sq = ModelVector::Zero(4);
  for (int s = 0; s < n; ++s) {
    const ModelVector g = stochastic_grad(
        task, 0, w, 2,
        test_stream(5).with({static_cast<std::uint32_t>(s), 0, 0, Purpose::kNoiseProbe}));
    sum += g;
    sum_sq += g.cwiseProduct(g);
  }
  for (int j = 0; j < 4; ++j) {
    const double mean = sum[j] / n;
    const double var = sum_sq[j] / n - mean * mean;
    const double se = std::sqrt(var / n);
    CHECK(std::abs(mean - exact[j]) <= 3.0 * se + 1e-12);
  }
}

TEST_CASE("smoothness constants") {
  FederatedTask eye = identity_task(3, ModelVector::Zero(3));
  CHECK(smoothness_constant(eye) == doctest::Approx(1.0).epsilon(1e-6));
  eye.weight_decay = 0.25;
  CHECK(smoothness_constant(eye) == doctest::Approx(1.25).epsilon(1e-6));

  FederatedTask diag;
  diag.dimension = 2;
  diag.clients.resize(1);
  diag.clients[0].kind = TaskKind::kQuadratic;
  diag.clients[0].features = Eigen::Vector2d(1, 2).asDiagonal().toDenseMatrix();
  diag.clients[0].targets = Eigen::VectorXd::Zero(2);
  CHECK(smoothness_constant(diag) == doctest::Approx(4.0).epsilon(1e-6));
}

TEST_CASE("fuzzed Lipschitz certificate") {
  const FederatedTask quad = make_quadratic_task(2, 6, 9, 1.0, 0.0, test_stream(6));
  const FederatedTask log = make_dirichlet_task(2, 2, 1.0, 40, 6, test_stream(7));
  for (const FederatedTask* task : {&quad, &log}) {
    const double L = smoothness_constant(*task);
    for (int k = 0; k < task->num_clients(); ++k) {
      for (int trial = 0; trial < 1000; ++trial) {
        RandomStream s = test_stream(8).with({static_cast<std::uint32_t>(trial),
                                              static_cast<std::uint32_t>(k), 0,
                                              Purpose::kNoiseProbe});
        StreamCursor cur(s);
        ModelVector x(task->dimension), y(task->dimension);
        for (int j = 0; j < task->dimension; ++j) {
          x[j] = 2.0 * cur.next_gaussian();
          y[j] = 2.0 * cur.next_gaussian();
        }
        const double lhs = std::sqrt(norm2_sq(full_grad(*task, k, y) - full_grad(*task, k, x)));
        const double rhs = L * std::sqrt(norm2_sq(y - x));
        CHECK(lhs <= rhs * (1.0 + 1e-9) + 1e-12);
      }
    }
  }
}

TEST_CASE("dissimilarity: homogeneous clients give beta^2 = 1, nu^2 = 0") {
  FederatedTask task;
  task.dimension = 4;
  task.clients.resize(3);
  ModelVector b(4);
  b << 1, -2, 0.5, 3;
  for (int k = 0; k < 3; ++k) {
    task.clients[k].kind = TaskKind::kQuadratic;
    task.clients[k].features = Eigen::MatrixXd::Identity(4, 4);
    task.clients[k].targets = b;
  }
  const DissimilarityEstimate est = estimate_dissimilarity(task, 50, test_stream(9));
  CHECK(est.beta_sq == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(est.nu_sq == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(est.max_violation <= 0.0);
}

TEST_CASE("dissimilarity: two-client closed form beta^2 = 1, nu^2 = shift^2") {
  const FederatedTask task = make_two_client_quadratic(6, 1.0);
  const DissimilarityEstimate est = estimate_dissimilarity(task, 60, test_stream(10));
  CHECK(est.beta_sq == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(est.nu_sq == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(est.max_violation <= 0.0);
  // Fresh probe set re-certifies the fitted pair (float-level slack only).
  const double fresh = dissimilarity_violation(task, est, 60, test_stream(10), 1);
  CHECK(fresh <= 1e-9);
}

TEST_CASE("noise estimator") {
  const FederatedTask task = make_quadratic_task(2, 5, 10, 1.0, 0.0, test_stream(11));
  const ModelVector w = draw_gaussian(test_stream(12), 5);
  CHECK(estimate_noise(task, w, task.clients[0].samples(), 100, test_stream(13)) == 0.0);

  const double s1 = estimate_noise(task, w, 1, 4000, test_stream(14));
  const double s2 = estimate_noise(task, w, 2, 4000, test_stream(15));
  CHECK(s1 >= 0.0);
  CHECK(s2 >= 0.0);
  CHECK(s1 / s2 == doctest::Approx(2.0).epsilon(0.2));
}

TEST_CASE("dirichlet partition statistics") {
  // Near-infinite concentration: per-client class histograms are uniform.
  const FederatedTask uniform = make_dirichlet_task(4, 5, 1e6, 1000, 3, test_stream(16));
  int total = 0;
  for (const ClientObjective& c : uniform.clients) {
    std::map<int, int> hist;
    for (int cls : c.sample_class) ++hist[cls];
    double tv = 0.0;
    for (int cls = 0; cls < 4; ++cls) {
      const double share = hist.count(cls) ? static_cast<double>(hist[cls]) / c.samples() : 0.0;
      tv += std::abs(share - 0.25);
    }
    CHECK(0.5 * tv <= 0.05);
    total += c.samples();
  }
  CHECK(total == 4 * 1000);  // conservation

  // Strong skew: most clients are dominated by one label.
  std::vector<double> majority;
  for (int seed = 0; seed < 20; ++seed) {
    const FederatedTask skew = make_dirichlet_task(2, 10, 0.1, 500, 3, test_stream(500 + seed));
    for (const ClientObjective& c : skew.clients) {
      std::map<int, int> hist;
      for (int cls : c.sample_class) ++hist[cls];
      int top = 0;
      for (const auto& [cls, n] : hist) top = std::max(top, n);
      majority.push_back(static_cast<double>(top) / c.samples());
    }
  }
  std::sort(majority.begin(), majority.end());
  CHECK(majority[majority.size() / 2] > 0.8);

  CHECK_THROWS_AS(make_dirichlet_task(2, 10, 0.5, 4, 3, test_stream(17)), ConfigError);
  CHECK_THROWS_AS(make_dirichlet_task(2, 10, 0.0, 100, 3, test_stream(18)), ConfigError);
}

TEST_CASE("task dump/load round trip") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "sapef_task_io";
  fs::create_directories(dir);
  const FederatedTask quad = make_quadratic_task(2, 4, 6, 1.0, 0.01, test_stream(19));
  const FederatedTask log = make_dirichlet_task(2, 3, 0.7, 30, 4, test_stream(20));
  int idx = 0;
  for (const FederatedTask* task : {&quad, &log}) {
    const std::string path = (dir / ("task_" + std::to_string(idx++) + ".txt")).string();
    save_task(*task, path);
    const FederatedTask back = load_task(path);
    REQUIRE(back.num_clients() == task->num_clients());
    CHECK(back.dimension == task->dimension);
    CHECK(back.weight_decay == task->weight_decay);
    for (int k = 0; k < task->num_clients(); ++k) {
      CHECK(back.clients[k].kind == task->clients[k].kind);
      CHECK(back.clients[k].features == task->clients[k].features);
      CHECK(back.clients[k].targets == task->clients[k].targets);
      CHECK(back.clients[k].sample_class == task->clients[k].sample_class);
    }
  }
}

TEST_CASE("error paths") {
  const FederatedTask task = make_quadratic_task(2, 4, 6, 1.0, 0.0, test_stream(21));
  CHECK_THROWS_AS(full_grad(task, 5, ModelVector::Zero(4)), ConfigError);
  CHECK_THROWS_AS(stochastic_grad(task, 0, ModelVector::Zero(4), 0, test_stream(22)),
                  ConfigError);
  CHECK_THROWS_AS(stochastic_grad(task, 0, ModelVector::Zero(4), 100, test_stream(23)),
                  ConfigError);
  CHECK_THROWS_AS(estimate_dissimilarity(task, 5, test_stream(24)), ConfigError);
  CHECK_THROWS_AS(estimate_noise(task, ModelVector::Zero(4), 1, 10, test_stream(25)),
                  ConfigError);
}
