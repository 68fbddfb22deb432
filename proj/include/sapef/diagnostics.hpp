#pragma once

#include <cstdint>
#include <vector>

#include "sapef/protocol.hpp"

namespace sapef {

// One row of the per-round metrics output. Fields describe the state at the
// start of the round except uplink_bits_cum, the identity defect, and wall
// time, which describe the executed round.
struct MetricsRecord {
  int round = 0;
  double f_w = 0.0;
  double grad_norm_sq = 0.0;
  double residual_energy_mean = 0.0;
  double mismatch = 0.0;
  std::int64_t uplink_bits_cum = 0;
  double virtual_identity_residual = 0.0;
  std::int64_t wall_time_ms = 0;
};

// Fixed per-client probe rows used by the gradient-mismatch measurement;
// drawn once per experiment so the mismatch series carries no probe noise.
struct ProbeSet {
  std::vector<std::vector<int>> rows;  // per client, ascending
};

// Probes use all rows when a client has at most max_rows samples, otherwise a
// fixed uniform subset of that size.
ProbeSet make_probe_set(const FederatedTask& task, int max_rows, const RandomStream& stream);

// Squared gradient mismatch (1/K) sum_k || grad_S(w) - grad_S(w - alpha e_k) ||^2
// with deterministic full-precision gradients on each client's probe rows
// (the same rows for both evaluation points).
double gradient_mismatch(const FederatedTask& task, const ModelVector& w,
                         const std::vector<ClientState>& states, double alpha,
                         const ProbeSet& probes);

// Closed form of the probe on quadratic tasks with full-data probes:
// (1/K) sum_k || alpha H_k e_k ||^2.
double quadratic_mismatch_oracle(const FederatedTask& task,
                                 const std::vector<ClientState>& states, double alpha);

// Relative defect of the virtual-iterate identity for the executed round;
// selects the full-participation or partial-participation form based on p.
// Under partial participation p must be the realized fraction m/K.
double virtual_identity_residual(const RoundTrace& trace, double eta, double alpha_r, double p);

// Adds one round of uplink traffic (m participants) to the cumulative
// counter. Throws AccountingError on 63-bit overflow.
MetricsRecord accumulate_comm(MetricsRecord record, const CompressorSpec& spec, int d, int m);

}  // namespace sapef
