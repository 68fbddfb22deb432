#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "sapef/numerics.hpp"

namespace sapef {

enum class TaskKind { kQuadratic, kLogistic };

// One client's local objective.
//   quadratic: f_k(w) = 1/2 ||A w - b||^2 + wd/2 ||w||^2   (A = features, b = targets)
//   logistic:  f_k(w) = mean_i [softplus(x_i.w) - y_i x_i.w] + wd/2 ||w||^2
// The weight-decay coefficient lives on the task and is folded into values,
// gradients, and smoothness constants analytically.
struct ClientObjective {
  TaskKind kind = TaskKind::kQuadratic;
  Eigen::MatrixXd features;  // n_k x d
  Eigen::VectorXd targets;   // n_k  (quadratic: b; logistic: labels in {0,1})
  std::vector<int> sample_class;  // original class per row; empty unless partitioned

  int samples() const { return static_cast<int>(features.rows()); }
};

struct FederatedTask {
  std::vector<ClientObjective> clients;
  int dimension = 0;
  double weight_decay = 0.0;

  int num_clients() const { return static_cast<int>(clients.size()); }
};

// Fitted gradient-dissimilarity constants: on every fit probe x,
//   (1/K) sum_k ||grad f_k(x)||^2 <= beta_sq ||grad f(x)||^2 + nu_sq + max_violation
// with max_violation <= 0.
struct DissimilarityEstimate {
  double beta_sq = 1.0;
  double nu_sq = 0.0;
  int probe_count = 0;
  double max_violation = 0.0;
};

double client_value(const FederatedTask& task, int k, const ModelVector& w);
double value(const FederatedTask& task, const ModelVector& w);

// Exact local gradient. Quadratic: A^T(Aw - b) + wd*w, accumulated row by row
// in a fixed order.
ModelVector full_grad(const FederatedTask& task, int k, const ModelVector& w);

// (1/K) sum_k full_grad, summed in client order.
ModelVector global_grad(const FederatedTask& task, const ModelVector& w);

// Mini-batch gradient: mean of per-sample gradients over batch_size rows drawn
// uniformly with replacement, plus the weight-decay term. batch_size == n_k
// degenerates to the exact full gradient (no sampling).
ModelVector stochastic_grad(const FederatedTask& task, int k, const ModelVector& w,
                            int batch_size, const RandomStream& stream);

// Largest Hessian eigenvalue of client k's data term (power iteration,
// relative tolerance 1e-6), plus weight decay.
double client_smoothness(const FederatedTask& task, int k);

// Global smoothness constant L = max_k L_k.
double smoothness_constant(const FederatedTask& task);

// Hessian-vector product of client k's objective at w (quadratic objectives
// have a constant Hessian and ignore w).
ModelVector hessian_times(const FederatedTask& task, int k, const ModelVector& w,
                          const ModelVector& v);

// Exact minimizer of client k (closed form for quadratics, full-batch descent
// for logistic), and of the global average objective.
ModelVector client_minimizer(const FederatedTask& task, int k);
ModelVector global_minimizer(const FederatedTask& task);

// Fits the minimal-area (beta^2, nu^2) envelope over probe points sampled
// around the origin and around per-client minimizers. probe_set selects
// disjoint probe draws so a fresh set can re-certify the fit.
DissimilarityEstimate estimate_dissimilarity(const FederatedTask& task, int probes,
                                             const RandomStream& stream, int probe_set = 0);

// Checks a fitted estimate against freshly sampled probes; returns the largest
// violation of the inequality (<= 0 means certified).
double dissimilarity_violation(const FederatedTask& task, const DissimilarityEstimate& est,
                               int probes, const RandomStream& stream, int probe_set);

// Monte-Carlo estimate of sigma^2 = max_k E||stochastic_grad - full_grad||^2 at w.
double estimate_noise(const FederatedTask& task, const ModelVector& w, int batch_size,
                      int samples, const RandomStream& stream);

// Class-clustered Gaussian blobs split across K clients by Dirichlet(gamma)
// label proportions; logistic labels are class parity. Shares are redrawn
// until every client owns at least one sample.
FederatedTask make_dirichlet_task(int classes, int K, double gamma, int per_class, int d,
                                  const RandomStream& stream);

// K random least-squares clients with unit smoothness and client minimizers
// spread by `hetero`.
FederatedTask make_quadratic_task(int K, int d, int rows_per_client, double hetero,
                                  double weight_decay, const RandomStream& stream);

// Two-client quadratic with A = I and b = +/- shift * e_1: L = 1 and the
// dissimilarity constants are exactly beta^2 = 1, nu^2 = shift^2.
FederatedTask make_two_client_quadratic(int d, double shift);

// Plain-text task dump/load for cross-implementation oracle checks
// (dimensions, matrices row-major, labels; 17 significant digits).
void save_task(const FederatedTask& task, const std::string& path);
FederatedTask load_task(const std::string& path);

}  // namespace sapef
