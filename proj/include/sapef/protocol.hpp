#pragma once

#include <vector>

#include "sapef/compressors.hpp"
#include "sapef/numerics.hpp"
#include "sapef/objectives.hpp"

namespace sapef {

struct ClientState {
  ModelVector residual;         // e_r^(k), zero at round 0
  ModelVector momentum_buffer;  // local-step scratch; zero when momentum off

  static ClientState zero(int d) {
    return ClientState{ModelVector::Zero(d), ModelVector::Zero(d)};
  }
};

// Everything one round consumes: stepsizes, step-ahead coefficient, local
// step count, and the participation draw.
struct RoundSchedule {
  int r = 0;
  double eta = 1.0;      // server stepsize
  double eta_r = 0.1;    // local stepsize
  double alpha_r = 0.85;  // step-ahead coefficient in [0, 1]
  int local_steps = 5;   // T >= 1
  std::vector<int> participants;  // ascending client indices, size m = floor(pK)
  double momentum = 0.0;
  int batch_size = 1;
};

struct ClientMessage {
  CompressedUpdate compressed;
  int client = 0;
  double raw_update_norm_sq = 0.0;  // ||u_{r+1}||^2, diagnostic
  double residual_energy = 0.0;     // ||e_{r+1}||^2
};

struct ClientRoundResult {
  ClientMessage message;
  ClientState state;                // post-round state
  ModelVector accumulated_update;   // g_r^(k) = w_{r+1/2,0} - w_{r+1/2,T}
};

// Per-round observables needed by the virtual-iterate identities. The means
// over "all K" use every client's residual; participant means use only the
// active set, in ascending client order.
struct RoundTrace {
  ModelVector w_before;
  ModelVector w_after;
  ModelVector e_bar_all;       // all-K mean residual at round start
  ModelVector e_bar_active;    // participant mean residual at round start
  ModelVector e_bar_all_next;  // all-K mean residual after the round
  ModelVector g_bar;           // participant mean accumulated local update
  ModelVector c_bar;           // participant mean compressed update
  std::vector<double> residual_energy;  // per client, after the round
  int participant_count = 0;
  int client_count = 0;
};

struct RoundResult {
  ModelVector w_next;
  std::vector<ClientState> states;
  RoundTrace trace;
};

// One client's round: shift by alpha_r * residual, T local SGD steps,
// partial-EF composition u = (1-alpha_r) e + g, compression, residual update.
// Batch draws use contexts (sched.r, k, t) of the given stream's seed, so the
// same seed replays bit-identically regardless of scheduling.
ClientRoundResult client_round(const FederatedTask& task, int k, const ModelVector& w_r,
                               const ClientState& state, const RoundSchedule& sched,
                               const CompressorSpec& comp, const RandomStream& stream);

// Non-participating clients carry their state across the round untouched.
ClientState inactive_step(const ClientState& state);

// Participant mean of compressed updates, summed in ascending client order.
ModelVector compressed_mean(const std::vector<ClientMessage>& messages);

// w_{r+1} = w_r - eta * compressed_mean(messages)
ModelVector server_aggregate(const std::vector<ClientMessage>& messages, const ModelVector& w_r,
                             double eta);

// floor(p*K) distinct indices, uniform over subsets, deterministic per
// (seed, round).
std::vector<int> sample_participants(int K, double p, int round, const RandomStream& stream);

// Full round: participants run client_round (concurrently when threads > 1),
// the rest keep state, then the server aggregates in fixed client order.
RoundResult run_round(const FederatedTask& task, const std::vector<ClientState>& states,
                      const ModelVector& w_r, const RoundSchedule& sched,
                      const CompressorSpec& comp, const RandomStream& stream, int threads = 1);

}  // namespace sapef
