#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sapef/diagnostics.hpp"
#include "sapef/protocol.hpp"
#include "sapef/theory.hpp"

namespace sapef {

enum class AlphaRule { kConstant, kLinearDecay, kTheoryOptimal };
enum class LocalStepRule { kConstant, kInvSqrt };

struct TaskConfig {
  std::string kind = "quadratic";  // quadratic | two_client_quadratic | dirichlet_logistic
  int clients = 100;
  int dimension = 100;
  int rows_per_client = 50;     // quadratic
  double hetero = 1.0;          // quadratic: client-minimizer spread
  double shift = 1.0;           // two_client_quadratic
  int classes = 2;              // dirichlet_logistic
  double gamma = 0.5;           // dirichlet_logistic
  int per_class = 500;          // dirichlet_logistic
  double weight_decay = 0.0;
};

struct ScheduleConfig {
  double server_step = 1.0;  // eta
  double local_step = 0.1;   // eta_0
  LocalStepRule local_step_rule = LocalStepRule::kConstant;
  int local_steps = 5;  // T
  AlphaRule alpha_rule = AlphaRule::kConstant;
  double alpha = 0.85;
  double alpha_final = 0.0;  // linear-decay endpoint at round R-1
  double momentum = 0.0;
  int batch_size = 1;
};

struct ExperimentConfig {
  TaskConfig task;
  CompressorSpec compressor;
  ScheduleConfig schedule;
  int rounds = 200;
  double participation = 1.0;
  std::uint64_t seed = 1;
  int replicates = 1;
  std::string output_dir = "out";
  double grad_threshold = 1e-3;  // rounds-to-threshold epsilon
  bool record_timings = false;   // off: wall_time_ms column stays 0 for replay diffs

  void validate() const;
};

// Parses and validates a config file (JSON; unknown keys rejected, defaults
// applied). The SAPEF_OUTPUT_DIR environment variable overrides output_dir.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config(const std::string& json_text);

// Canonical serialized form; save(load(c)) is the identity on it.
std::string save_config(const ExperimentConfig& config);

struct RunSummary {
  double final_f = 0.0;
  double final_grad_norm_sq = 0.0;
  double min_grad_norm_sq = 0.0;
  int rounds_to_threshold = -1;  // -1: not reached
  std::int64_t uplink_bits_cum = 0;
  std::string metrics_path;
  std::uint64_t seed = 0;
  bool diverged = false;
  std::string failure;
  std::int64_t total_wall_ms = 0;
  std::vector<MetricsRecord> records;
};

// Deterministic task/probe construction and per-round schedule derivation for
// one (config, seed) pair.
struct PreparedExperiment {
  ExperimentConfig config;
  FederatedTask task;
  double smoothness = 0.0;
  ProbeSet probes;
  RandomStream stream;
};

PreparedExperiment prepare_experiment(const ExperimentConfig& config);

struct SimState {
  ModelVector w;
  std::vector<ClientState> states;
};

SimState initial_state(const PreparedExperiment& prep);
RoundSchedule schedule_for_round(const PreparedExperiment& prep, int r);

// Advances one round in place and returns its trace.
RoundTrace step_round(const PreparedExperiment& prep, SimState& sim, int r, int threads = 1);

// Executes config.rounds rounds, writing one metrics row per round plus a
// run summary under output_dir. Deterministic given (config, seed) for any
// thread count. A diverged run still leaves a valid partial metrics file and
// a <metrics>.FAILED marker, and is reported through the summary.
RunSummary run_experiment(const ExperimentConfig& config, int threads = 1);

// One run per alpha with shared seeds; writes a comparison table. Per-cell
// failures are recorded without aborting the sweep.
std::vector<RunSummary> sweep_alpha(const ExperimentConfig& config,
                                    const std::vector<double>& alphas, int threads = 1);

void emit_metrics(const std::vector<MetricsRecord>& records, const std::string& path);
std::vector<MetricsRecord> parse_metrics(const std::string& path);

// TheoryParams assembled from a prepared experiment: exact L, fitted
// dissimilarity envelope, Monte-Carlo noise at the initial point.
TheoryParams derive_theory_params(const PreparedExperiment& prep, int probes = 64,
                                  int noise_samples = 200);

}  // namespace sapef
