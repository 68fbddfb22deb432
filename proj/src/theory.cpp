#include "sapef/theory.hpp"

#include <cmath>
#include <limits>
#include <numeric>

namespace sapef {

DescentFlags descent_flags(const TheoryParams& params) {
  DescentFlags f;
  f.s0 = params.s0();
  f.s0_ok = f.s0 <= 0.125;
  f.dissimilarity_ok = 18.0 * params.beta_sq * f.s0 * f.s0 <= 0.125;
  f.server_step_ok =
      params.eta <= 1.0 / (256.0 * params.beta_sq * params.L * params.eta0 * params.T);
  return f;
}

double rho(double alpha, double s, double delta) {
  if (delta < 1.0) throw NumericError("rho: delta must be >= 1");
  if (alpha < 0.0 || alpha > 1.0) throw NumericError("rho: alpha must lie in [0, 1]");
  if (s < 0.0) throw NumericError("rho: s must be >= 0");
  return (1.0 - 1.0 / delta) * (2.0 * (1.0 - alpha) * (1.0 - alpha) + 24.0 * alpha * alpha * s * s);
}

double alpha_star(double s) {
  if (s < 0.0) throw NumericError("alpha_star: s must be >= 0");
  return 1.0 / (1.0 + 12.0 * s * s);
}

double rho_min(double s, double delta) {
  if (delta < 1.0) throw NumericError("rho_min: delta must be >= 1");
  return 2.0 * (1.0 - 1.0 / delta) * (1.0 - 1.0 / (1.0 + 12.0 * s * s));
}

double residual_coefficient(const TheoryParams& p) {
  if (p.eta0 * p.T <= 0.0) throw NumericError("residual_coefficient: eta0*T must be > 0");
  const double a2 = p.alpha * p.alpha;
  const double T = static_cast<double>(p.T);
  const double inner = a2 * (1.0 / (p.eta0 * T) + 1.5 * p.eta0 * p.L * p.L * T);
  const double quad =
      p.L * p.eta * p.eta * (2.0 * a2 + 24.0 * a2 * p.eta0 * p.eta0 * p.L * p.L * T * T);
  return p.eta * inner + quad + 0.5 * p.L * p.eta * p.eta;
}

namespace {

ThetaReport theta_impl(const TheoryParams& p, double rho_max, const char* which) {
  if (rho_max >= 1.0) {
    throw InfeasibleError(std::string(which) + ": contraction factor " +
                          std::to_string(rho_max) + " >= 1 (stalling regime)");
  }
  const double T = static_cast<double>(p.T);
  const double drive = 8.0 * p.eta0 * T + 288.0 * p.L * p.L * p.eta0 * p.eta0 * p.eta0 * T * T * T;
  ThetaReport rep;
  rep.rho_max = rho_max;
  rep.value = (16.0 / p.eta) * (residual_coefficient(p) / (1.0 - rho_max)) *
              (1.0 - 1.0 / p.delta) * p.beta_sq * drive;
  rep.absorption_ok = rep.value <= 0.5;
  return rep;
}

}  // namespace

ThetaReport theta(const TheoryParams& p) {
  return theta_impl(p, rho(p.alpha, p.s0(), p.delta), "theta");
}

ThetaReport theta_pp(const TheoryParams& p) {
  if (p.p <= 0.0 || p.p > 1.0) throw NumericError("theta_pp: p must lie in (0, 1]");
  const double rho_pp = (1.0 - p.p) + p.p * rho(p.alpha, p.s0(), p.delta);
  return theta_impl(p, rho_pp, "theta_pp");
}

Theorem1Rhs theorem1_rhs(const TheoryParams& p, double f0_minus_fstar, std::int64_t R) {
  if (R < 1) throw ConfigError("theorem1_rhs: R must be >= 1");
  Theorem1Rhs out;
  out.descent = descent_flags(p);
  const double T = static_cast<double>(p.T);
  out.rho_max = (1.0 - p.p) + p.p * rho(p.alpha, p.s0(), p.delta);
  out.contraction_ok = out.rho_max < 1.0;

  out.optimization_term =
      32.0 * f0_minus_fstar / (p.eta * p.p * p.eta0 * T * static_cast<double>(R));
  const double m = std::max(1.0, std::floor(p.p * p.K));
  out.minibatch_term = 128.0 * p.L * p.eta0 * p.sigma_sq / (p.p * m);

  if (out.contraction_ok) {
    const double geometric = residual_coefficient(p) / (1.0 - out.rho_max);
    out.c_sigma = (32.0 / p.eta) * (6.0 * p.eta * p.eta0 * p.eta0 * p.L * p.L * T +
                                    96.0 * p.L * p.L * p.L * p.eta * p.eta0 * p.eta0 * p.eta0 * T * T) +
                  (32.0 / p.eta) * geometric *
                      (4.0 * p.eta0 + 96.0 * p.L * p.L * p.eta0 * p.eta0 * p.eta0 * T * T);
    out.c_nu = (32.0 / p.eta) * (84.0 * p.eta * p.eta0 * p.eta0 * p.L * p.L * T * T +
                                 1344.0 * p.L * p.L * p.L * p.eta * p.eta0 * p.eta0 * p.eta0 * T * T * T) +
               (32.0 / p.eta) * geometric *
                   (8.0 * p.eta0 * T + 1344.0 * p.L * p.L * p.eta0 * p.eta0 * p.eta0 * T * T * T);
    const double bias = (1.0 - 1.0 / p.delta) / p.p;
    out.sigma_floor = bias * out.c_sigma * p.eta0 * p.eta0 * p.L * p.L * T * p.sigma_sq;
    out.nu_floor = bias * out.c_nu * p.eta0 * p.eta0 * p.L * p.L * T * T * p.nu_sq;
    out.absorption_ok = theta_impl(p, out.rho_max, "theorem1_rhs").absorption_ok;
  } else {
    // Stalling regime: the geometric series diverges, so the floors are
    // unbounded. Reported, not thrown.
    const bool lossless = p.delta == 1.0;
    out.c_sigma = out.c_nu = lossless ? 0.0 : std::numeric_limits<double>::infinity();
    out.sigma_floor = lossless || p.sigma_sq == 0.0
                          ? 0.0
                          : std::numeric_limits<double>::infinity();
    out.nu_floor = lossless || p.nu_sq == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    out.absorption_ok = false;
  }
  out.value = out.optimization_term + out.sigma_floor + out.nu_floor + out.minibatch_term;
  return out;
}

namespace {

// Local drift RHS of the drift lemma, valid for every t in 0..T-1.
double drift_rhs(const TheoryParams& p, double grad_sq, double e_bar_energy) {
  const double T = static_cast<double>(p.T);
  const double e2 = p.eta0 * p.eta0;
  return 12.0 * e2 * T * p.sigma_sq + 168.0 * e2 * T * T * p.nu_sq +
         36.0 * e2 * T * T * p.beta_sq * grad_sq +
         3.0 * p.alpha * p.alpha * e_bar_energy;
}

struct ForcingTerms {
  double grad = 0.0;        // B_r^(grad)
  double noise_hetero = 0.0;  // B_r^(nu, sigma)
};

ForcingTerms forcing_terms(const TheoryParams& p, double grad_sq) {
  const double T = static_cast<double>(p.T);
  const double e2 = p.eta0 * p.eta0;
  const double e4 = e2 * e2;
  const double L2 = p.L * p.L;
  ForcingTerms f;
  f.grad = (8.0 * e2 * T * T + 288.0 * L2 * e4 * T * T * T * T) * p.beta_sq * grad_sq;
  f.noise_hetero = 8.0 * e2 * T * T * p.nu_sq + 4.0 * e2 * T * p.sigma_sq +
                   96.0 * L2 * e4 * T * T * T * p.sigma_sq +
                   1344.0 * L2 * e4 * T * T * T * T * p.nu_sq;
  return f;
}

double mean(const std::vector<double>& xs) {
  double acc = 0.0;
  for (double x : xs) acc += x;
  return acc / static_cast<double>(xs.size());
}

double standard_error(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double mu = mean(xs);
  double acc = 0.0;
  for (double x : xs) acc += (x - mu) * (x - mu);
  return std::sqrt(acc / static_cast<double>(xs.size() - 1) /
                   static_cast<double>(xs.size()));
}

RoundSchedule replica_schedule(const TheoryParams& p, const StateSnapshot& snap, int replica,
                               int K) {
  RoundSchedule sched;
  sched.r = replica;
  sched.eta = p.eta;
  sched.eta_r = p.eta0;
  sched.alpha_r = p.alpha;
  sched.local_steps = p.T;
  sched.momentum = 0.0;
  sched.batch_size = snap.batch_size;
  sched.participants.resize(K);
  std::iota(sched.participants.begin(), sched.participants.end(), 0);
  return sched;
}

}  // namespace

BoundReport verify_bound(BoundKind kind, const FederatedTask& task, const TheoryParams& params,
                         const StateSnapshot& snapshot, int mc_samples,
                         const RandomStream& stream) {
  const int K = task.num_clients();
  BoundReport rep;
  rep.samples = mc_samples;

  if (kind == BoundKind::kStationarity) {
    rep.lemma = "stationarity";
    const std::int64_t R = mc_samples;
    if (R < 1) throw ConfigError("verify_bound: stationarity needs at least one round");
    ModelVector w = snapshot.w;
    std::vector<ClientState> states(K, ClientState::zero(task.dimension));
    double grad_acc = 0.0;
    for (int r = 0; r < R; ++r) {
      grad_acc += norm2_sq(global_grad(task, w));
      RoundSchedule sched = replica_schedule(params, snapshot, r, K);
      RoundResult res = run_round(task, states, w, sched, snapshot.compressor, stream);
      w = res.w_next;
      states = std::move(res.states);
    }
    const double f0 = value(task, snapshot.w);
    const double fstar = value(task, global_minimizer(task));
    const Theorem1Rhs rhs = theorem1_rhs(params, f0 - fstar, R);
    rep.empirical_lhs = grad_acc / static_cast<double>(R);
    rep.theoretical_rhs = rhs.value;
    rep.standard_error = 0.0;
    rep.precondition_ok = rhs.descent.all() && rhs.contraction_ok && rhs.absorption_ok;
    if (!rep.precondition_ok) rep.note = "descent/absorption preconditions violated";
    rep.satisfied = rep.empirical_lhs <= rep.theoretical_rhs;
    return rep;
  }

  if (mc_samples < 100) throw ConfigError("verify_bound: need at least 100 samples");
  if (static_cast<int>(snapshot.states.size()) != K) {
    throw ConfigError("verify_bound: snapshot must hold one state per client");
  }

  // Replica noise must stay independent of whatever run produced the frozen
  // state, so the Monte-Carlo draws use a scrambled root seed.
  const RandomStream mc(stream.root_seed() ^ 0x4D43524550ull, stream.context());

  rep.precondition_ok = params.eta0 <= 1.0 / (8.0 * params.L * params.T);
  if (!rep.precondition_ok) rep.note = "lemma precondition eta0 <= 1/(8LT) violated";

  const double grad_sq = norm2_sq(global_grad(task, snapshot.w));
  double e_bar_energy = 0.0;
  for (const ClientState& s : snapshot.states) e_bar_energy += norm2_sq(s.residual);
  e_bar_energy /= static_cast<double>(K);

  std::vector<double> draws;
  draws.reserve(mc_samples);

  switch (kind) {
    case BoundKind::kLocalDrift: {
      rep.lemma = "local_drift";
      // Mean drift per local step, maximized over t in 0..T-1.
      std::vector<std::vector<double>> per_t(params.T);
      for (int repl = 0; repl < mc_samples; ++repl) {
        std::vector<ModelVector> w_loc(K);
        for (int k = 0; k < K; ++k) {
          w_loc[k] = snapshot.w - params.alpha * snapshot.states[k].residual;
        }
        for (int t = 0; t < params.T; ++t) {
          double acc = 0.0;
          for (int k = 0; k < K; ++k) acc += norm2_sq(w_loc[k] - snapshot.w);
          per_t[t].push_back(acc / static_cast<double>(K));
          for (int k = 0; k < K; ++k) {
            const RandomStream rs = mc.with({static_cast<std::uint32_t>(repl),
                                                 static_cast<std::uint32_t>(k),
                                                 static_cast<std::uint16_t>(t),
                                                 Purpose::kMcReplica});
            w_loc[k] -= params.eta0 *
                        stochastic_grad(task, k, w_loc[k], snapshot.batch_size, rs);
          }
        }
      }
      int worst_t = 0;
      double worst = -1.0;
      for (int t = 0; t < params.T; ++t) {
        const double mu = mean(per_t[t]);
        if (mu > worst) {
          worst = mu;
          worst_t = t;
        }
      }
      draws = per_t[worst_t];
      rep.theoretical_rhs = drift_rhs(params, grad_sq, e_bar_energy);
      break;
    }
    case BoundKind::kSecondMoment: {
      rep.lemma = "second_moment";
      ModelVector e_bar = ModelVector::Zero(task.dimension);
      for (const ClientState& s : snapshot.states) e_bar += s.residual;
      e_bar /= static_cast<double>(K);
      for (int repl = 0; repl < mc_samples; ++repl) {
        ModelVector g_bar = ModelVector::Zero(task.dimension);
        for (int k = 0; k < K; ++k) {
          ModelVector w_loc = snapshot.w - params.alpha * snapshot.states[k].residual;
          const ModelVector start = w_loc;
          for (int t = 0; t < params.T; ++t) {
            const RandomStream rs = mc.with({static_cast<std::uint32_t>(repl),
                                                 static_cast<std::uint32_t>(k),
                                                 static_cast<std::uint16_t>(t),
                                                 Purpose::kMcReplica});
            w_loc -= params.eta0 *
                     stochastic_grad(task, k, w_loc, snapshot.batch_size, rs);
          }
          g_bar += start - w_loc;
        }
        g_bar /= static_cast<double>(K);
        draws.push_back(norm2_sq(params.alpha * e_bar - g_bar));
      }
      const double T = static_cast<double>(params.T);
      const double e2 = params.eta0 * params.eta0;
      const double L2 = params.L * params.L;
      rep.theoretical_rhs =
          2.0 * params.alpha * params.alpha * e_bar_energy +
          8.0 * e2 * T * T * grad_sq * (1.0 + 36.0 * L2 * e2 * T * T * params.beta_sq) +
          4.0 * e2 * T * params.sigma_sq / static_cast<double>(K) +
          96.0 * L2 * e2 * e2 * T * T * T * (params.sigma_sq + 14.0 * T * params.nu_sq) +
          24.0 * params.alpha * params.alpha * e2 * L2 * T * T * e_bar_energy;
      break;
    }
    case BoundKind::kResidualRecursion: {
      rep.lemma = "residual_recursion";
      for (int repl = 0; repl < mc_samples; ++repl) {
        RoundSchedule sched = replica_schedule(params, snapshot, repl, K);
        double acc = 0.0;
        for (int k = 0; k < K; ++k) {
          // Only the residual update matters here; reuse the exact round path.
          const ClientRoundResult res = client_round(
              task, k, snapshot.w, snapshot.states[k], sched, snapshot.compressor,
              mc.with({0, 0, 0, Purpose::kMcReplica}));
          acc += res.message.residual_energy;
        }
        draws.push_back(acc / static_cast<double>(K));
      }
      const ForcingTerms f = forcing_terms(params, grad_sq);
      rep.theoretical_rhs = rho(params.alpha, params.s0(), params.delta) * e_bar_energy +
                            (1.0 - 1.0 / params.delta) * (f.grad + f.noise_hetero);
      break;
    }
    case BoundKind::kStationarity:
      break;  // handled above
  }

  rep.empirical_lhs = mean(draws);
  rep.standard_error = standard_error(draws);
  rep.satisfied = rep.empirical_lhs <= rep.theoretical_rhs + 3.0 * rep.standard_error;
  return rep;
}

}  // namespace sapef
