#include "sapef/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace sapef {

ProbeSet make_probe_set(const FederatedTask& task, int max_rows, const RandomStream& stream) {
  if (max_rows < 1) throw ConfigError("make_probe_set: max_rows must be >= 1");
  ProbeSet probes;
  probes.rows.resize(task.num_clients());
  for (int k = 0; k < task.num_clients(); ++k) {
    const int n = task.clients[k].samples();
    std::vector<int>& rows = probes.rows[k];
    if (n <= max_rows) {
      rows.resize(n);
      std::iota(rows.begin(), rows.end(), 0);
      continue;
    }
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    RandomStream rs = stream.with({0, static_cast<std::uint32_t>(k), 0, Purpose::kHoldoutProbe});
    StreamCursor cur(rs);
    for (int i = 0; i < max_rows; ++i) {
      const int j = i + static_cast<int>(cur.next_index(static_cast<std::uint64_t>(n - i)));
      std::swap(idx[i], idx[j]);
    }
    rows.assign(idx.begin(), idx.begin() + max_rows);
    std::sort(rows.begin(), rows.end());
  }
  return probes;
}

namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Deterministic gradient of the probe-batch loss at w.
ModelVector probe_grad(const FederatedTask& task, int k, const ModelVector& w,
                       const std::vector<int>& rows) {
  const ClientObjective& c = task.clients[k];
  ModelVector g = ModelVector::Zero(task.dimension);
  if (c.kind == TaskKind::kQuadratic) {
    for (int i : rows) {
      const double r = c.features.row(i).dot(w) - c.targets[i];
      g.noalias() += r * c.features.row(i).transpose();
    }
    g *= static_cast<double>(c.samples()) / static_cast<double>(rows.size());
  } else {
    for (int i : rows) {
      const double z = c.features.row(i).dot(w);
      g.noalias() += (sigmoid(z) - c.targets[i]) * c.features.row(i).transpose();
    }
    g /= static_cast<double>(rows.size());
  }
  g += task.weight_decay * w;
  return g;
}

}  // namespace

double gradient_mismatch(const FederatedTask& task, const ModelVector& w,
                         const std::vector<ClientState>& states, double alpha,
                         const ProbeSet& probes) {
  const int K = task.num_clients();
  if (static_cast<int>(states.size()) != K || static_cast<int>(probes.rows.size()) != K) {
    throw ConfigError("gradient_mismatch: need one state and one probe set per client");
  }
  double acc = 0.0;
  for (int k = 0; k < K; ++k) {
    const ModelVector base = probe_grad(task, k, w, probes.rows[k]);
    const ModelVector shifted =
        probe_grad(task, k, w - alpha * states[k].residual, probes.rows[k]);
    acc += norm2_sq(base - shifted);
  }
  return acc / static_cast<double>(K);
}

double quadratic_mismatch_oracle(const FederatedTask& task,
                                 const std::vector<ClientState>& states, double alpha) {
  const int K = task.num_clients();
  if (static_cast<int>(states.size()) != K) {
    throw ConfigError("quadratic_mismatch_oracle: need one state per client");
  }
  const ModelVector unused = ModelVector::Zero(task.dimension);
  double acc = 0.0;
  for (int k = 0; k < K; ++k) {
    if (task.clients[k].kind != TaskKind::kQuadratic) {
      throw ConfigError("quadratic_mismatch_oracle: task is not quadratic");
    }
    acc += norm2_sq(alpha * hessian_times(task, k, unused, states[k].residual));
  }
  return acc / static_cast<double>(K);
}

double virtual_identity_residual(const RoundTrace& trace, double eta, double alpha_r, double p) {
  const ModelVector x_before = trace.w_before - eta * trace.e_bar_all;
  const ModelVector x_after = trace.w_after - eta * trace.e_bar_all_next;
  ModelVector predicted;
  if (p >= 1.0) {
    predicted = x_before + eta * alpha_r * trace.e_bar_all - eta * trace.g_bar;
  } else {
    predicted = x_before + eta * (p * (alpha_r * trace.e_bar_active - trace.g_bar) -
                                  (1.0 - p) * trace.c_bar);
  }
  const double scale = std::max(1.0, std::sqrt(norm2_sq(x_after)));
  return std::sqrt(norm2_sq(x_after - predicted)) / scale;
}

MetricsRecord accumulate_comm(MetricsRecord record, const CompressorSpec& spec, int d, int m) {
  if (m < 1) throw ConfigError("accumulate_comm: participant count must be >= 1");
  const std::int64_t per_round = static_cast<std::int64_t>(m) * uplink_bits(spec, d);
  if (record.uplink_bits_cum > std::numeric_limits<std::int64_t>::max() - per_round) {
    throw AccountingError("communication counter would exceed 2^63 bits");
  }
  record.uplink_bits_cum += per_round;
  return record;
}

}  // namespace sapef
