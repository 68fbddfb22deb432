#include "sapef/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <mutex>
#include <numeric>
#include <thread>

namespace sapef {

namespace {

void run_on_threads(int n, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  const int workers = std::min(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::exception_ptr first_error;
  std::mutex error_mutex;
  for (int t = 0; t < workers; ++t) {
    pool.emplace_back([&, t]() {
      try {
        for (int i = t; i < n; i += workers) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (std::thread& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace

ClientRoundResult client_round(const FederatedTask& task, int k, const ModelVector& w_r,
                               const ClientState& state, const RoundSchedule& sched,
                               const CompressorSpec& comp, const RandomStream& stream) {
  if (state.residual.size() != w_r.size()) {
    throw DimensionError("client_round: residual dimension mismatch");
  }
  if (sched.local_steps < 1) throw ConfigError("client_round: T must be >= 1");
  if (sched.alpha_r < 0.0 || sched.alpha_r > 1.0) {
    throw ConfigError("client_round: alpha_r must lie in [0, 1]");
  }

  const ModelVector start = w_r - sched.alpha_r * state.residual;
  ModelVector w_loc = start;
  ModelVector velocity = ModelVector::Zero(w_r.size());
  for (int t = 0; t < sched.local_steps; ++t) {
    const RandomStream step_stream =
        stream.with({static_cast<std::uint32_t>(sched.r), static_cast<std::uint32_t>(k),
                     static_cast<std::uint16_t>(t), Purpose::kBatchSampling});
    const ModelVector grad = stochastic_grad(task, k, w_loc, sched.batch_size, step_stream);
    if (sched.momentum > 0.0) {
      velocity = sched.momentum * velocity + grad;
      w_loc -= sched.eta_r * velocity;
    } else {
      w_loc -= sched.eta_r * grad;
    }
    if (!all_finite(w_loc)) throw DivergenceError(sched.r, k, t);
  }

  ClientRoundResult out;
  out.accumulated_update = start - w_loc;
  const ModelVector update = (1.0 - sched.alpha_r) * state.residual + out.accumulated_update;
  out.message.compressed = compress(comp, update);
  out.message.client = k;
  out.message.raw_update_norm_sq = norm2_sq(update);
  out.state.residual = residual(update, out.message.compressed);
  out.state.momentum_buffer =
      sched.momentum > 0.0 ? velocity : ModelVector::Zero(w_r.size());
  out.message.residual_energy = norm2_sq(out.state.residual);
  return out;
}

ClientState inactive_step(const ClientState& state) { return state; }

ModelVector compressed_mean(const std::vector<ClientMessage>& messages) {
  if (messages.empty()) throw ConfigError("server_aggregate: no participants");
  const Eigen::Index d = messages.front().compressed.dense.size();
  std::vector<int> order(messages.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return messages[a].client < messages[b].client; });
  ModelVector sum = ModelVector::Zero(d);
  for (int i : order) {
    if (messages[i].compressed.dense.size() != d) {
      throw DimensionError("server_aggregate: message dimension mismatch");
    }
    sum += messages[i].compressed.dense;
  }
  return sum / static_cast<double>(messages.size());
}

ModelVector server_aggregate(const std::vector<ClientMessage>& messages, const ModelVector& w_r,
                             double eta) {
  return w_r - eta * compressed_mean(messages);
}

std::vector<int> sample_participants(int K, double p, int round, const RandomStream& stream) {
  if (K < 1) throw ConfigError("sample_participants: K must be >= 1");
  if (p <= 0.0 || p > 1.0) throw ConfigError("sample_participants: p must lie in (0, 1]");
  const int m = static_cast<int>(std::floor(p * K));
  if (m < 1) throw ConfigError("sample_participants: floor(p*K) = 0");

  std::vector<int> idx(K);
  std::iota(idx.begin(), idx.end(), 0);
  RandomStream rs =
      stream.with({static_cast<std::uint32_t>(round), 0, 0, Purpose::kParticipation});
  StreamCursor cur(rs);
  for (int i = 0; i < m; ++i) {
    const int j = i + static_cast<int>(cur.next_index(static_cast<std::uint64_t>(K - i)));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(m);
  std::sort(idx.begin(), idx.end());
  return idx;
}

RoundResult run_round(const FederatedTask& task, const std::vector<ClientState>& states,
                      const ModelVector& w_r, const RoundSchedule& sched,
                      const CompressorSpec& comp, const RandomStream& stream, int threads) {
  const int K = task.num_clients();
  if (static_cast<int>(states.size()) != K) {
    throw ConfigError("run_round: need one state per client");
  }
  const int m = static_cast<int>(sched.participants.size());
  if (m < 1) throw ConfigError("run_round: empty participant set");

  RoundResult out;
  out.trace.w_before = w_r;
  out.trace.client_count = K;
  out.trace.participant_count = m;

  // Reference-population means are taken before any residual is updated.
  ModelVector e_sum = ModelVector::Zero(w_r.size());
  for (int k = 0; k < K; ++k) e_sum += states[k].residual;
  out.trace.e_bar_all = e_sum / static_cast<double>(K);
  ModelVector e_act = ModelVector::Zero(w_r.size());
  for (int k : sched.participants) e_act += states[k].residual;
  out.trace.e_bar_active = e_act / static_cast<double>(m);

  std::vector<ClientRoundResult> results(m);
  run_on_threads(m, threads, [&](int i) {
    const int k = sched.participants[i];
    results[i] = client_round(task, k, w_r, states[k], sched, comp, stream);
  });

  out.states.reserve(K);
  for (int k = 0; k < K; ++k) out.states.push_back(inactive_step(states[k]));
  std::vector<ClientMessage> messages;
  messages.reserve(m);
  ModelVector g_sum = ModelVector::Zero(w_r.size());
  for (int i = 0; i < m; ++i) {  // participants are already in ascending order
    out.states[sched.participants[i]] = results[i].state;
    g_sum += results[i].accumulated_update;
    messages.push_back(std::move(results[i].message));
  }
  out.trace.g_bar = g_sum / static_cast<double>(m);
  out.trace.c_bar = compressed_mean(messages);
  out.w_next = server_aggregate(messages, w_r, sched.eta);
  out.trace.w_after = out.w_next;

  ModelVector e_next = ModelVector::Zero(w_r.size());
  out.trace.residual_energy.resize(K);
  for (int k = 0; k < K; ++k) {
    e_next += out.states[k].residual;
    out.trace.residual_energy[k] = norm2_sq(out.states[k].residual);
  }
  out.trace.e_bar_all_next = e_next / static_cast<double>(K);
  return out;
}

}  // namespace sapef
