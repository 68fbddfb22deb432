#include "sapef/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace sapef {

namespace {

constexpr std::uint64_t kInternalSeed = 0x9E3779B97F4A7C15ull;  // power iteration init

void check_client(const FederatedTask& task, int k) {
  if (k < 0 || k >= task.num_clients()) {
    throw ConfigError("client index " + std::to_string(k) + " out of range");
  }
  if (task.clients[k].samples() == 0) {
    throw ConfigError("client " + std::to_string(k) + " has an empty dataset");
  }
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) {
  if (z > 0.0) return z + std::log1p(std::exp(-z));
  return std::log1p(std::exp(z));
}

// Per-sample gradient of row i, scaled so the mean over all rows equals the
// exact data-term gradient. Weight decay is added by the caller.
void add_sample_grad(const ClientObjective& c, int i, const ModelVector& w, ModelVector* acc) {
  if (c.kind == TaskKind::kQuadratic) {
    const double r = c.features.row(i).dot(w) - c.targets[i];
    acc->noalias() += (static_cast<double>(c.samples()) * r) * c.features.row(i).transpose();
  } else {
    const double z = c.features.row(i).dot(w);
    acc->noalias() += (sigmoid(z) - c.targets[i]) * c.features.row(i).transpose();
  }
}

}  // namespace

double client_value(const FederatedTask& task, int k, const ModelVector& w) {
  check_client(task, k);
  const ClientObjective& c = task.clients[k];
  double v = 0.0;
  if (c.kind == TaskKind::kQuadratic) {
    for (int i = 0; i < c.samples(); ++i) {
      const double r = c.features.row(i).dot(w) - c.targets[i];
      v += 0.5 * r * r;
    }
  } else {
    for (int i = 0; i < c.samples(); ++i) {
      const double z = c.features.row(i).dot(w);
      v += softplus(z) - c.targets[i] * z;
    }
    v /= static_cast<double>(c.samples());
  }
  return v + 0.5 * task.weight_decay * norm2_sq(w);
}

double value(const FederatedTask& task, const ModelVector& w) {
  double v = 0.0;
  for (int k = 0; k < task.num_clients(); ++k) v += client_value(task, k, w);
  return v / static_cast<double>(task.num_clients());
}

ModelVector full_grad(const FederatedTask& task, int k, const ModelVector& w) {
  check_client(task, k);
  const ClientObjective& c = task.clients[k];
  ModelVector g = ModelVector::Zero(task.dimension);
  if (c.kind == TaskKind::kQuadratic) {
    for (int i = 0; i < c.samples(); ++i) {
      const double r = c.features.row(i).dot(w) - c.targets[i];
      g.noalias() += r * c.features.row(i).transpose();
    }
  } else {
    for (int i = 0; i < c.samples(); ++i) {
      const double z = c.features.row(i).dot(w);
      g.noalias() += (sigmoid(z) - c.targets[i]) * c.features.row(i).transpose();
    }
    g /= static_cast<double>(c.samples());
  }
  g += task.weight_decay * w;
  return g;
}

ModelVector global_grad(const FederatedTask& task, const ModelVector& w) {
  ModelVector g = ModelVector::Zero(task.dimension);
  for (int k = 0; k < task.num_clients(); ++k) g += full_grad(task, k, w);
  return g / static_cast<double>(task.num_clients());
}

ModelVector stochastic_grad(const FederatedTask& task, int k, const ModelVector& w,
                            int batch_size, const RandomStream& stream) {
  check_client(task, k);
  const ClientObjective& c = task.clients[k];
  const int n = c.samples();
  if (batch_size < 1 || batch_size > n) {
    throw ConfigError("batch_size " + std::to_string(batch_size) + " outside [1, " +
                      std::to_string(n) + "]");
  }
  if (batch_size == n) return full_grad(task, k, w);  // full batch: no sampling

  StreamCursor cur(stream);
  ModelVector g = ModelVector::Zero(task.dimension);
  for (int b = 0; b < batch_size; ++b) {
    const int i = static_cast<int>(cur.next_index(static_cast<std::uint64_t>(n)));
    add_sample_grad(c, i, w, &g);
  }
  g /= static_cast<double>(batch_size);
  g += task.weight_decay * w;
  return g;
}

namespace {

// lambda_max of features^T features, matrix free.
double data_gram_lambda_max(const Eigen::MatrixXd& features, int client_tag) {
  const int d = static_cast<int>(features.cols());
  RandomStream init(kInternalSeed,
                    {0, static_cast<std::uint32_t>(client_tag), 0, Purpose::kPowerIteration});
  ModelVector v = draw_gaussian(init, d);
  v /= std::sqrt(norm2_sq(v));
  double lambda = 0.0;
  constexpr int kMaxIters = 10000;
  constexpr double kRelTol = 1e-6;
  for (int it = 0; it < kMaxIters; ++it) {
    ModelVector mv = features.transpose() * (features * v);
    const double norm = std::sqrt(norm2_sq(mv));
    if (norm == 0.0) return 0.0;
    const double next = dot(v, mv);
    v = mv / norm;
    if (it > 0 && std::abs(next - lambda) <= kRelTol * std::max(std::abs(next), 1e-300)) {
      return next;
    }
    lambda = next;
  }
  throw NumericError("power iteration did not converge within 10000 steps");
}

}  // namespace

double client_smoothness(const FederatedTask& task, int k) {
  check_client(task, k);
  const ClientObjective& c = task.clients[k];
  const double lam = data_gram_lambda_max(c.features, k);
  const double data_term =
      c.kind == TaskKind::kQuadratic ? lam : lam / (4.0 * static_cast<double>(c.samples()));
  return data_term + task.weight_decay;
}

double smoothness_constant(const FederatedTask& task) {
  double L = 0.0;
  for (int k = 0; k < task.num_clients(); ++k) L = std::max(L, client_smoothness(task, k));
  return L;
}

ModelVector hessian_times(const FederatedTask& task, int k, const ModelVector& w,
                          const ModelVector& v) {
  check_client(task, k);
  const ClientObjective& c = task.clients[k];
  if (c.kind == TaskKind::kQuadratic) {
    return c.features.transpose() * (c.features * v) + task.weight_decay * v;
  }
  ModelVector hv = ModelVector::Zero(task.dimension);
  for (int i = 0; i < c.samples(); ++i) {
    const double s = sigmoid(c.features.row(i).dot(w));
    const double weight = s * (1.0 - s) * c.features.row(i).dot(v);
    hv.noalias() += weight * c.features.row(i).transpose();
  }
  hv /= static_cast<double>(c.samples());
  hv += task.weight_decay * v;
  return hv;
}

namespace {

ModelVector descend(const FederatedTask& task, const std::vector<int>& client_set) {
  // Deterministic full-batch descent for objectives without a closed form.
  double L = 0.0;
  for (int k : client_set) L = std::max(L, client_smoothness(task, k));
  if (L == 0.0) return ModelVector::Zero(task.dimension);
  ModelVector w = ModelVector::Zero(task.dimension);
  const double step = 1.0 / L;
  for (int it = 0; it < 2000; ++it) {
    ModelVector g = ModelVector::Zero(task.dimension);
    for (int k : client_set) g += full_grad(task, k, w);
    g /= static_cast<double>(client_set.size());
    w -= step * g;
    if (norm2_sq(g) < 1e-18) break;
  }
  return w;
}

}  // namespace

ModelVector client_minimizer(const FederatedTask& task, int k) {
  check_client(task, k);
  const ClientObjective& c = task.clients[k];
  if (c.kind == TaskKind::kQuadratic) {
    Eigen::MatrixXd gram = c.features.transpose() * c.features;
    gram.diagonal().array() += task.weight_decay;
    return Eigen::LDLT<Eigen::MatrixXd>(gram).solve(c.features.transpose() * c.targets);
  }
  return descend(task, {k});
}

ModelVector global_minimizer(const FederatedTask& task) {
  const int K = task.num_clients();
  if (K == 0) throw ConfigError("task has no clients");
  if (task.clients[0].kind == TaskKind::kQuadratic) {
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(task.dimension, task.dimension);
    ModelVector rhs = ModelVector::Zero(task.dimension);
    for (const ClientObjective& c : task.clients) {
      gram.noalias() += c.features.transpose() * c.features;
      rhs.noalias() += c.features.transpose() * c.targets;
    }
    gram /= static_cast<double>(K);
    rhs /= static_cast<double>(K);
    gram.diagonal().array() += task.weight_decay;
    return Eigen::LDLT<Eigen::MatrixXd>(gram).solve(rhs);
  }
  std::vector<int> all(K);
  std::iota(all.begin(), all.end(), 0);
  return descend(task, all);
}

namespace {

struct ProbePair {
  double g;  // ||grad f(x)||^2
  double h;  // (1/K) sum_k ||grad f_k(x)||^2
};

std::vector<ProbePair> sample_probe_pairs(const FederatedTask& task, int probes,
                                          const RandomStream& stream, int probe_set) {
  const int K = task.num_clients();
  std::vector<ModelVector> anchors;
  anchors.push_back(ModelVector::Zero(task.dimension));
  for (int k = 0; k < K; ++k) anchors.push_back(client_minimizer(task, k));

  std::vector<ProbePair> pairs;
  pairs.reserve(probes);
  for (int i = 0; i < probes; ++i) {
    const ModelVector& base = anchors[i % anchors.size()];
    RandomStream s = stream.with({static_cast<std::uint32_t>(i),
                                  static_cast<std::uint32_t>(probe_set), 0,
                                  Purpose::kDissimilarityProbe});
    const ModelVector x = base + draw_gaussian(s, task.dimension);
    double h = 0.0;
    for (int k = 0; k < K; ++k) h += norm2_sq(full_grad(task, k, x));
    pairs.push_back({norm2_sq(global_grad(task, x)), h / static_cast<double>(K)});
  }
  return pairs;
}

double envelope_slack(const std::vector<ProbePair>& pairs, double beta_sq, double nu_sq) {
  double worst = -std::numeric_limits<double>::infinity();
  for (const ProbePair& p : pairs) worst = std::max(worst, (p.h - beta_sq * p.g) - nu_sq);
  return worst;
}

}  // namespace

DissimilarityEstimate estimate_dissimilarity(const FederatedTask& task, int probes,
                                             const RandomStream& stream, int probe_set) {
  if (probes < 10) throw ConfigError("estimate_dissimilarity: need at least 10 probes");
  const std::vector<ProbePair> pairs = sample_probe_pairs(task, probes, stream, probe_set);

  // Feasible region in (beta^2, nu^2): nu^2 >= h_i - g_i beta^2 for all i,
  // beta^2 >= 1, nu^2 >= 0. Minimize the area under the envelope line on
  // [0, g_max]: (g_max^2/2) beta^2 + g_max nu^2. Only Pareto-maximal probes
  // (large h, small g) can be active, so candidate slopes come from their
  // pairwise intersections plus the two box constraints.
  double g_max = 0.0;
  for (const ProbePair& p : pairs) g_max = std::max(g_max, p.g);
  if (g_max == 0.0) g_max = 1.0;
  const double c_beta = 0.5 * g_max * g_max;
  const double c_nu = g_max;

  std::vector<ProbePair> frontier;
  for (const ProbePair& p : pairs) {
    bool dominated = false;
    for (const ProbePair& q : pairs) {
      if (q.h >= p.h && q.g <= p.g && (q.h > p.h || q.g < p.g)) {
        dominated = true;
        break;
      }
    }
    if (!dominated) frontier.push_back(p);
  }

  std::vector<double> candidates = {1.0};
  for (size_t a = 0; a < frontier.size(); ++a) {
    if (frontier[a].g > 0.0) candidates.push_back(frontier[a].h / frontier[a].g);
    for (size_t b = a + 1; b < frontier.size(); ++b) {
      const double dg = frontier[a].g - frontier[b].g;
      if (dg != 0.0) candidates.push_back((frontier[a].h - frontier[b].h) / -dg);
    }
  }

  double best_beta = 1.0;
  double best_nu = std::max(0.0, envelope_slack(pairs, 1.0, 0.0));
  double best_cost = c_beta * best_beta + c_nu * best_nu;
  for (double beta : candidates) {
    if (!(beta >= 1.0) || !std::isfinite(beta)) continue;
    const double nu = std::max(0.0, envelope_slack(pairs, beta, 0.0));
    const double cost = c_beta * beta + c_nu * nu;
    if (cost < best_cost) {
      best_cost = cost;
      best_beta = beta;
      best_nu = nu;
    }
  }

  DissimilarityEstimate est;
  est.beta_sq = best_beta;
  est.nu_sq = best_nu;
  est.probe_count = probes;
  est.max_violation = envelope_slack(pairs, best_beta, best_nu);
  return est;
}

double dissimilarity_violation(const FederatedTask& task, const DissimilarityEstimate& est,
                               int probes, const RandomStream& stream, int probe_set) {
  const std::vector<ProbePair> pairs = sample_probe_pairs(task, probes, stream, probe_set);
  return envelope_slack(pairs, est.beta_sq, est.nu_sq);
}

double estimate_noise(const FederatedTask& task, const ModelVector& w, int batch_size,
                      int samples, const RandomStream& stream) {
  if (samples < 100) throw ConfigError("estimate_noise: need at least 100 samples");
  double worst = 0.0;
  for (int k = 0; k < task.num_clients(); ++k) {
    const ModelVector exact = full_grad(task, k, w);
    double acc = 0.0;
    for (int s = 0; s < samples; ++s) {
      RandomStream rs = stream.with({static_cast<std::uint32_t>(s),
                                     static_cast<std::uint32_t>(k), 0, Purpose::kNoiseProbe});
      acc += norm2_sq(stochastic_grad(task, k, w, batch_size, rs) - exact);
    }
    worst = std::max(worst, acc / static_cast<double>(samples));
  }
  return worst;
}

namespace {

double draw_gamma(StreamCursor& cur, double shape) {
  // Marsaglia-Tsang; shapes below one via the boost Gamma(a) = Gamma(a+1) U^(1/a).
  if (shape < 1.0) {
    const double u = 1.0 - cur.next_uniform();
    return draw_gamma(cur, shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = cur.next_gaussian();
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    const double u = 1.0 - cur.next_uniform();
    if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
  }
}

// Integer allocation of `total` items proportional to weights (largest
// remainder; remainder ties go to the lowest index).
std::vector<int> apportion(const std::vector<double>& weights, int total) {
  const int n = static_cast<int>(weights.size());
  double wsum = 0.0;
  for (double w : weights) wsum += w;
  std::vector<int> counts(n, 0);
  std::vector<std::pair<double, int>> frac(n);
  int assigned = 0;
  for (int i = 0; i < n; ++i) {
    const double share = total * weights[i] / wsum;
    counts[i] = static_cast<int>(std::floor(share));
    assigned += counts[i];
    frac[i] = {share - counts[i], i};
  }
  std::sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (int r = 0; r < total - assigned; ++r) ++counts[frac[r].second];
  return counts;
}

}  // namespace

FederatedTask make_dirichlet_task(int classes, int K, double gamma, int per_class, int d,
                                  const RandomStream& stream) {
  if (K < 1) throw ConfigError("dirichlet task: K must be >= 1");
  if (gamma <= 0.0) throw ConfigError("dirichlet task: gamma must be > 0");
  if (classes < 1 || per_class < 1 || d < 1) {
    throw ConfigError("dirichlet task: classes, per_class, d must be >= 1");
  }
  if (static_cast<std::int64_t>(per_class) * classes < K) {
    throw ConfigError("dirichlet task: per_class*classes < K, cannot give every client a sample");
  }

  // Class-clustered blobs: center 3*N(0,I), unit isotropic noise.
  std::vector<Eigen::MatrixXd> class_features(classes);
  for (int c = 0; c < classes; ++c) {
    RandomStream cs = stream.with({static_cast<std::uint32_t>(c), 0, 0, Purpose::kTaskFeatures});
    StreamCursor cur(cs);
    ModelVector center(d);
    for (int j = 0; j < d; ++j) center[j] = 3.0 * cur.next_gaussian();
    Eigen::MatrixXd rows(per_class, d);
    for (int i = 0; i < per_class; ++i) {
      for (int j = 0; j < d; ++j) rows(i, j) = center[j] + cur.next_gaussian();
    }
    class_features[c] = std::move(rows);
  }

  // Dirichlet(gamma) client shares per class; redraw until no client is empty.
  std::vector<std::vector<int>> counts(classes);
  constexpr int kMaxAttempts = 10000;
  for (int attempt = 0;; ++attempt) {
    if (attempt == kMaxAttempts) {
      throw ConfigError("dirichlet task: could not give every client a sample after 10000 draws");
    }
    std::vector<int> per_client(K, 0);
    for (int c = 0; c < classes; ++c) {
      RandomStream ps = stream.with({static_cast<std::uint32_t>(attempt),
                                     static_cast<std::uint32_t>(c), 0, Purpose::kPartition});
      StreamCursor cur(ps);
      std::vector<double> weights(K);
      for (int k = 0; k < K; ++k) weights[k] = draw_gamma(cur, gamma);
      counts[c] = apportion(weights, per_class);
      for (int k = 0; k < K; ++k) per_client[k] += counts[c][k];
    }
    if (*std::min_element(per_client.begin(), per_client.end()) >= 1) break;
  }

  FederatedTask task;
  task.dimension = d;
  task.clients.resize(K);
  std::vector<int> client_rows(K, 0);
  for (int c = 0; c < classes; ++c) {
    for (int k = 0; k < K; ++k) client_rows[k] += counts[c][k];
  }
  for (int k = 0; k < K; ++k) {
    task.clients[k].kind = TaskKind::kLogistic;
    task.clients[k].features.resize(client_rows[k], d);
    task.clients[k].targets.resize(client_rows[k]);
    task.clients[k].sample_class.reserve(client_rows[k]);
  }
  std::vector<int> fill(K, 0);
  for (int c = 0; c < classes; ++c) {
    int row = 0;
    for (int k = 0; k < K; ++k) {
      for (int i = 0; i < counts[c][k]; ++i, ++row) {
        task.clients[k].features.row(fill[k]) = class_features[c].row(row);
        task.clients[k].targets[fill[k]] = static_cast<double>(c % 2);  // parity labels
        task.clients[k].sample_class.push_back(c);
        ++fill[k];
      }
    }
  }
  return task;
}

FederatedTask make_quadratic_task(int K, int d, int rows_per_client, double hetero,
                                  double weight_decay, const RandomStream& stream) {
  if (K < 1 || d < 1 || rows_per_client < 1) {
    throw ConfigError("quadratic task: K, d, rows_per_client must be >= 1");
  }
  FederatedTask task;
  task.dimension = d;
  task.weight_decay = weight_decay;
  task.clients.resize(K);
  for (int k = 0; k < K; ++k) {
    RandomStream fs = stream.with({0, static_cast<std::uint32_t>(k), 0, Purpose::kTaskFeatures});
    StreamCursor cur(fs);
    Eigen::MatrixXd A(rows_per_client, d);
    const double row_scale = 1.0 / std::sqrt(static_cast<double>(rows_per_client));
    for (int i = 0; i < rows_per_client; ++i) {
      for (int j = 0; j < d; ++j) A(i, j) = row_scale * cur.next_gaussian();
    }
    // Normalize to unit data smoothness so L = 1 + weight_decay for the task.
    A /= std::sqrt(data_gram_lambda_max(A, k));

    RandomStream ts = stream.with({0, static_cast<std::uint32_t>(k), 0, Purpose::kTaskTargets});
    const ModelVector target_w = hetero * draw_gaussian(ts, d);
    task.clients[k].kind = TaskKind::kQuadratic;
    task.clients[k].features = std::move(A);
    task.clients[k].targets = task.clients[k].features * target_w;
  }
  return task;
}

FederatedTask make_two_client_quadratic(int d, double shift) {
  if (d < 1) throw ConfigError("two-client quadratic: d must be >= 1");
  FederatedTask task;
  task.dimension = d;
  task.clients.resize(2);
  for (int k = 0; k < 2; ++k) {
    task.clients[k].kind = TaskKind::kQuadratic;
    task.clients[k].features = Eigen::MatrixXd::Identity(d, d);
    task.clients[k].targets = Eigen::VectorXd::Zero(d);
  }
  task.clients[0].targets[0] = shift;
  task.clients[1].targets[0] = -shift;
  return task;
}

namespace {

std::string fmt17(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace

void save_task(const FederatedTask& task, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("save_task: cannot open " + path);
  out << "sapef-task v1\n";
  out << "dimension " << task.dimension << "\n";
  out << "weight_decay " << fmt17(task.weight_decay) << "\n";
  out << "clients " << task.num_clients() << "\n";
  for (int k = 0; k < task.num_clients(); ++k) {
    const ClientObjective& c = task.clients[k];
    out << "client " << k << " kind "
        << (c.kind == TaskKind::kQuadratic ? "quadratic" : "logistic") << " samples "
        << c.samples() << " classes " << (c.sample_class.empty() ? 0 : 1) << "\n";
    for (int i = 0; i < c.samples(); ++i) {
      for (int j = 0; j < task.dimension; ++j) {
        out << (j ? " " : "") << fmt17(c.features(i, j));
      }
      out << "\n";
    }
    out << "targets";
    for (int i = 0; i < c.samples(); ++i) out << " " << fmt17(c.targets[i]);
    out << "\n";
    if (!c.sample_class.empty()) {
      out << "labels";
      for (int v : c.sample_class) out << " " << v;
      out << "\n";
    }
  }
  if (!out) throw ConfigError("save_task: write failed for " + path);
}

FederatedTask load_task(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("load_task: cannot open " + path);
  std::string word;
  auto expect = [&](const std::string& tag) {
    in >> word;
    if (word != tag) throw ConfigError("load_task: expected '" + tag + "', got '" + word + "'");
  };
  expect("sapef-task");
  expect("v1");
  FederatedTask task;
  int K = 0;
  expect("dimension");
  in >> task.dimension;
  expect("weight_decay");
  in >> task.weight_decay;
  expect("clients");
  in >> K;
  if (!in || task.dimension < 1 || K < 1) throw ConfigError("load_task: bad header");
  task.clients.resize(K);
  for (int k = 0; k < K; ++k) {
    expect("client");
    int idx, n, has_classes;
    std::string kind;
    in >> idx;
    expect("kind");
    in >> kind;
    expect("samples");
    in >> n;
    expect("classes");
    in >> has_classes;
    if (!in || idx != k || n < 1) throw ConfigError("load_task: bad client header");
    ClientObjective& c = task.clients[k];
    c.kind = kind == "quadratic" ? TaskKind::kQuadratic : TaskKind::kLogistic;
    c.features.resize(n, task.dimension);
    c.targets.resize(n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < task.dimension; ++j) in >> c.features(i, j);
    }
    expect("targets");
    for (int i = 0; i < n; ++i) in >> c.targets[i];
    if (has_classes) {
      expect("labels");
      c.sample_class.resize(n);
      for (int i = 0; i < n; ++i) in >> c.sample_class[i];
    }
    if (!in) throw ConfigError("load_task: truncated client block");
  }
  return task;
}

}  // namespace sapef
