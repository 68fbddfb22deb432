#pragma once

#include <cstdint>
#include <string>

#include "sapef/protocol.hpp"

namespace sapef {

// Inputs to every closed-form constant of the analysis.
struct TheoryParams {
  double L = 1.0;         // smoothness
  double beta_sq = 1.0;   // dissimilarity slope, >= 1
  double nu_sq = 0.0;     // dissimilarity offset
  double sigma_sq = 0.0;  // gradient-noise variance
  double delta = 1.0;     // compression constant, >= 1
  double eta = 1.0;       // server stepsize
  double eta0 = 0.1;      // local stepsize (constant schedule)
  int T = 5;              // local steps
  double alpha = 0.85;    // step-ahead coefficient
  double p = 1.0;         // participation fraction
  int K = 1;              // client count

  double s0() const { return eta0 * L * static_cast<double>(T); }
};

// Descent preconditions of the stationarity bound.
struct DescentFlags {
  double s0 = 0.0;
  bool s0_ok = false;           // s0 <= 1/8
  bool dissimilarity_ok = false;  // 18 beta^2 s0^2 <= 1/8
  bool server_step_ok = false;  // eta <= 1/(256 beta^2 L eta0 T)
  bool all() const { return s0_ok && dissimilarity_ok && server_step_ok; }
};

DescentFlags descent_flags(const TheoryParams& params);

// Residual contraction factor (1-1/delta)(2(1-alpha)^2 + 24 alpha^2 s^2).
double rho(double alpha, double s, double delta);

// Contraction-optimal step-ahead coefficient 1/(1+12 s^2).
double alpha_star(double s);

// Minimal contraction 2(1-1/delta)(1 - 1/(1+12 s^2)) = rho(alpha_star(s), s, delta).
double rho_min(double s, double delta);

// Residual-error coefficient of the telescoped descent inequality (constant
// schedule): eta a^2 (1/(eta0 T) + 3/2 eta0 L^2 T)
//            + L eta^2 (2 a^2 + 24 a^2 eta0^2 L^2 T^2) + L eta^2 / 2.
double residual_coefficient(const TheoryParams& params);

struct ThetaReport {
  double value = 0.0;
  double rho_max = 0.0;
  bool absorption_ok = false;  // value <= 1/2
};

// Effective error constant. Throws InfeasibleError when the contraction
// factor reaches 1 (the stalling regime).
ThetaReport theta(const TheoryParams& params);

// Partial-participation variant using rho_pp = (1-p) + p*rho; reduces to
// theta bit-for-bit at p = 1.
ThetaReport theta_pp(const TheoryParams& params);

struct Theorem1Rhs {
  double value = 0.0;
  double optimization_term = 0.0;
  double sigma_floor = 0.0;
  double nu_floor = 0.0;
  double minibatch_term = 0.0;
  double c_sigma = 0.0;
  double c_nu = 0.0;
  DescentFlags descent;
  double rho_max = 0.0;       // rho_pp when p < 1
  bool contraction_ok = false;  // rho_max < 1
  bool absorption_ok = false;   // Theta <= 1/2
};

// Full right-hand side of the averaged stationarity bound. Participation
// p < 1 slows the optimization term by 1/p, averages mini-batch noise over
// m = floor(pK) with an extra 1/p, and scales the compression floors by 1/p.
// Violated preconditions are reported through flags, never thrown.
Theorem1Rhs theorem1_rhs(const TheoryParams& params, double f0_minus_fstar, std::int64_t R);

enum class BoundKind { kLocalDrift, kSecondMoment, kResidualRecursion, kStationarity };

struct BoundReport {
  std::string lemma;
  double empirical_lhs = 0.0;
  double theoretical_rhs = 0.0;
  int samples = 0;
  double standard_error = 0.0;
  bool satisfied = false;
  bool precondition_ok = true;
  std::string note;
};

// Frozen protocol state plus the pieces of the run configuration the
// Monte-Carlo re-execution needs.
struct StateSnapshot {
  ModelVector w;
  std::vector<ClientState> states;
  CompressorSpec compressor;
  int batch_size = 1;
};

// Monte-Carlo verification of a lemma inequality from a frozen state: the
// relevant one-round computation is re-run mc_samples times with fresh noise
// streams, the left side averaged, and the right side evaluated from params
// and the frozen state. satisfied allows 3-standard-error slack. For
// kStationarity, mc_samples is the round count R of a fresh full run.
BoundReport verify_bound(BoundKind kind, const FederatedTask& task, const TheoryParams& params,
                         const StateSnapshot& snapshot, int mc_samples,
                         const RandomStream& stream);

}  // namespace sapef
