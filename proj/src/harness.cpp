#include "sapef/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "sapef/objectives.hpp"

namespace sapef {

namespace {

using nlohmann::json;

std::string fmt17(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

void reject_unknown_keys(const json& obj, const std::string& section,
                         const std::set<std::string>& allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw ConfigError("config: unknown key '" +
                        (section.empty() ? it.key() : section + "." + it.key()) + "'");
    }
  }
}

template <typename T>
void read_field(const json& obj, const std::string& section, const std::string& key, T* out) {
  if (!obj.contains(key)) return;
  try {
    *out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: field '" + section + "." + key + "' has the wrong type");
  }
}

CompressorFamily family_from_string(const std::string& s) {
  if (s == "top_k") return CompressorFamily::kTopK;
  if (s == "scaled_sign") return CompressorFamily::kScaledSign;
  if (s == "identity") return CompressorFamily::kIdentity;
  throw ConfigError("config: compressor.family must be top_k, scaled_sign, or identity");
}

std::string family_to_string(CompressorFamily f) {
  switch (f) {
    case CompressorFamily::kTopK: return "top_k";
    case CompressorFamily::kScaledSign: return "scaled_sign";
    case CompressorFamily::kIdentity: return "identity";
  }
  return "identity";
}

AlphaRule alpha_rule_from_string(const std::string& s) {
  if (s == "constant") return AlphaRule::kConstant;
  if (s == "linear_decay") return AlphaRule::kLinearDecay;
  if (s == "theory_optimal") return AlphaRule::kTheoryOptimal;
  throw ConfigError("config: schedule.alpha_rule must be constant, linear_decay, or theory_optimal");
}

std::string alpha_rule_to_string(AlphaRule r) {
  switch (r) {
    case AlphaRule::kConstant: return "constant";
    case AlphaRule::kLinearDecay: return "linear_decay";
    case AlphaRule::kTheoryOptimal: return "theory_optimal";
  }
  return "constant";
}

LocalStepRule step_rule_from_string(const std::string& s) {
  if (s == "constant") return LocalStepRule::kConstant;
  if (s == "inv_sqrt") return LocalStepRule::kInvSqrt;
  throw ConfigError("config: schedule.local_step_rule must be constant or inv_sqrt");
}

std::string step_rule_to_string(LocalStepRule r) {
  return r == LocalStepRule::kConstant ? "constant" : "inv_sqrt";
}

std::string alpha_tag(double alpha) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", alpha);
  std::string tag(buf);
  std::replace(tag.begin(), tag.end(), '.', 'p');
  return tag;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (rounds < 0) throw ConfigError("config: rounds must be >= 0");
  if (replicates < 1) throw ConfigError("config: replicates must be >= 1");
  if (grad_threshold <= 0.0) throw ConfigError("config: grad_threshold must be > 0");
  if (output_dir.empty()) throw ConfigError("config: output_dir must not be empty");

  if (task.dimension < 1) throw ConfigError("config: task.dimension must be >= 1");
  if (task.kind == "quadratic") {
    if (task.clients < 1) throw ConfigError("config: task.clients must be >= 1");
    if (task.rows_per_client < 1) throw ConfigError("config: task.rows_per_client must be >= 1");
  } else if (task.kind == "two_client_quadratic") {
    if (task.clients != 2) throw ConfigError("config: two_client_quadratic has exactly 2 clients");
  } else if (task.kind == "dirichlet_logistic") {
    if (task.clients < 1) throw ConfigError("config: task.clients must be >= 1");
    if (task.gamma <= 0.0) throw ConfigError("config: task.gamma must be > 0");
    if (task.classes < 1) throw ConfigError("config: task.classes must be >= 1");
    if (task.per_class < 1) throw ConfigError("config: task.per_class must be >= 1");
    if (static_cast<std::int64_t>(task.per_class) * task.classes < task.clients) {
      throw ConfigError("config: per_class*classes < clients leaves some client empty");
    }
  } else {
    throw ConfigError("config: task.kind must be quadratic, two_client_quadratic, or "
                      "dirichlet_logistic");
  }
  if (task.weight_decay < 0.0) throw ConfigError("config: task.weight_decay must be >= 0");

  compressor.validate(task.dimension);

  if (schedule.server_step <= 0.0) throw ConfigError("config: schedule.server_step must be > 0");
  if (schedule.local_step <= 0.0) throw ConfigError("config: schedule.local_step must be > 0");
  if (schedule.local_steps < 1) throw ConfigError("config: schedule.local_steps must be >= 1");
  if (schedule.alpha < 0.0 || schedule.alpha > 1.0) {
    throw ConfigError("config: schedule.alpha must lie in [0, 1]");
  }
  if (schedule.alpha_final < 0.0 || schedule.alpha_final > 1.0) {
    throw ConfigError("config: schedule.alpha_final must lie in [0, 1]");
  }
  if (schedule.momentum < 0.0 || schedule.momentum >= 1.0) {
    throw ConfigError("config: schedule.momentum must lie in [0, 1)");
  }
  if (schedule.batch_size < 1) throw ConfigError("config: schedule.batch_size must be >= 1");

  if (participation <= 0.0 || participation > 1.0) {
    throw ConfigError("config: participation must lie in (0, 1]");
  }
  if (static_cast<int>(std::floor(participation * task.clients)) < 1) {
    throw ConfigError("config: floor(participation * clients) = 0, no client would run");
  }
}

ExperimentConfig parse_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: parse error: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("config: top level must be an object");

  reject_unknown_keys(root, "",
                      {"task", "compressor", "schedule", "rounds", "participation", "seed",
                       "replicates", "output_dir", "grad_threshold", "record_timings"});

  ExperimentConfig cfg;
  if (!root.contains("task")) throw ConfigError("config: missing required section 'task'");
  {
    const json& t = root.at("task");
    reject_unknown_keys(t, "task",
                        {"kind", "clients", "dimension", "rows_per_client", "hetero", "shift",
                         "classes", "gamma", "per_class", "weight_decay"});
    read_field(t, "task", "kind", &cfg.task.kind);
    read_field(t, "task", "clients", &cfg.task.clients);
    read_field(t, "task", "dimension", &cfg.task.dimension);
    read_field(t, "task", "rows_per_client", &cfg.task.rows_per_client);
    read_field(t, "task", "hetero", &cfg.task.hetero);
    read_field(t, "task", "shift", &cfg.task.shift);
    read_field(t, "task", "classes", &cfg.task.classes);
    read_field(t, "task", "gamma", &cfg.task.gamma);
    read_field(t, "task", "per_class", &cfg.task.per_class);
    read_field(t, "task", "weight_decay", &cfg.task.weight_decay);
    if (cfg.task.kind == "two_client_quadratic") cfg.task.clients = 2;
  }
  if (root.contains("compressor")) {
    const json& c = root.at("compressor");
    reject_unknown_keys(c, "compressor", {"family", "k", "value_bits"});
    std::string family = "identity";
    read_field(c, "compressor", "family", &family);
    cfg.compressor.family = family_from_string(family);
    read_field(c, "compressor", "k", &cfg.compressor.k);
    read_field(c, "compressor", "value_bits", &cfg.compressor.value_bits);
  }
  if (root.contains("schedule")) {
    const json& s = root.at("schedule");
    reject_unknown_keys(s, "schedule",
                        {"server_step", "local_step", "local_step_rule", "local_steps",
                         "alpha_rule", "alpha", "alpha_final", "momentum", "batch_size"});
    read_field(s, "schedule", "server_step", &cfg.schedule.server_step);
    read_field(s, "schedule", "local_step", &cfg.schedule.local_step);
    std::string rule = step_rule_to_string(cfg.schedule.local_step_rule);
    read_field(s, "schedule", "local_step_rule", &rule);
    cfg.schedule.local_step_rule = step_rule_from_string(rule);
    read_field(s, "schedule", "local_steps", &cfg.schedule.local_steps);
    std::string arule = alpha_rule_to_string(cfg.schedule.alpha_rule);
    read_field(s, "schedule", "alpha_rule", &arule);
    cfg.schedule.alpha_rule = alpha_rule_from_string(arule);
    read_field(s, "schedule", "alpha", &cfg.schedule.alpha);
    read_field(s, "schedule", "alpha_final", &cfg.schedule.alpha_final);
    read_field(s, "schedule", "momentum", &cfg.schedule.momentum);
    read_field(s, "schedule", "batch_size", &cfg.schedule.batch_size);
  }
  read_field(root, "", "rounds", &cfg.rounds);
  read_field(root, "", "participation", &cfg.participation);
  read_field(root, "", "seed", &cfg.seed);
  read_field(root, "", "replicates", &cfg.replicates);
  read_field(root, "", "output_dir", &cfg.output_dir);
  read_field(root, "", "grad_threshold", &cfg.grad_threshold);
  read_field(root, "", "record_timings", &cfg.record_timings);

  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  ExperimentConfig cfg = parse_config(buf.str());
  if (const char* dir = std::getenv("SAPEF_OUTPUT_DIR")) {
    if (*dir) cfg.output_dir = dir;
  }
  return cfg;
}

std::string save_config(const ExperimentConfig& cfg) {
  json root;
  root["task"] = {{"kind", cfg.task.kind},
                  {"clients", cfg.task.clients},
                  {"dimension", cfg.task.dimension},
                  {"rows_per_client", cfg.task.rows_per_client},
                  {"hetero", cfg.task.hetero},
                  {"shift", cfg.task.shift},
                  {"classes", cfg.task.classes},
                  {"gamma", cfg.task.gamma},
                  {"per_class", cfg.task.per_class},
                  {"weight_decay", cfg.task.weight_decay}};
  root["compressor"] = {{"family", family_to_string(cfg.compressor.family)},
                        {"k", cfg.compressor.k},
                        {"value_bits", cfg.compressor.value_bits}};
  root["schedule"] = {{"server_step", cfg.schedule.server_step},
                      {"local_step", cfg.schedule.local_step},
                      {"local_step_rule", step_rule_to_string(cfg.schedule.local_step_rule)},
                      {"local_steps", cfg.schedule.local_steps},
                      {"alpha_rule", alpha_rule_to_string(cfg.schedule.alpha_rule)},
                      {"alpha", cfg.schedule.alpha},
                      {"alpha_final", cfg.schedule.alpha_final},
                      {"momentum", cfg.schedule.momentum},
                      {"batch_size", cfg.schedule.batch_size}};
  root["rounds"] = cfg.rounds;
  root["participation"] = cfg.participation;
  root["seed"] = cfg.seed;
  root["replicates"] = cfg.replicates;
  root["output_dir"] = cfg.output_dir;
  root["grad_threshold"] = cfg.grad_threshold;
  root["record_timings"] = cfg.record_timings;
  return root.dump(2) + "\n";
}

PreparedExperiment prepare_experiment(const ExperimentConfig& config) {
  config.validate();
  RandomStream stream(config.seed, {});
  FederatedTask task;
  if (config.task.kind == "quadratic") {
    task = make_quadratic_task(config.task.clients, config.task.dimension,
                               config.task.rows_per_client, config.task.hetero,
                               config.task.weight_decay, stream);
  } else if (config.task.kind == "two_client_quadratic") {
    task = make_two_client_quadratic(config.task.dimension, config.task.shift);
    task.weight_decay = config.task.weight_decay;
  } else {
    task = make_dirichlet_task(config.task.classes, config.task.clients, config.task.gamma,
                               config.task.per_class, config.task.dimension, stream);
    task.weight_decay = config.task.weight_decay;
  }

  int min_rows = task.clients.front().samples();
  int max_rows = min_rows;
  for (const ClientObjective& c : task.clients) {
    min_rows = std::min(min_rows, c.samples());
    max_rows = std::max(max_rows, c.samples());
  }
  if (config.schedule.batch_size > min_rows) {
    throw ConfigError("config: schedule.batch_size " + std::to_string(config.schedule.batch_size) +
                      " exceeds the smallest client dataset (" + std::to_string(min_rows) + ")");
  }

  PreparedExperiment prep{config, std::move(task), 0.0, {}, stream};
  prep.smoothness = smoothness_constant(prep.task);
  // Quadratic tasks probe on full client data (exact Hessian form); logistic
  // tasks cap the probe batch.
  const bool quadratic = prep.task.clients.front().kind == TaskKind::kQuadratic;
  prep.probes = make_probe_set(prep.task, quadratic ? max_rows : 256, stream);
  return prep;
}

SimState initial_state(const PreparedExperiment& prep) {
  SimState sim;
  sim.w = ModelVector::Zero(prep.task.dimension);
  sim.states.assign(prep.task.num_clients(), ClientState::zero(prep.task.dimension));
  return sim;
}

RoundSchedule schedule_for_round(const PreparedExperiment& prep, int r) {
  const ScheduleConfig& s = prep.config.schedule;
  RoundSchedule sched;
  sched.r = r;
  sched.eta = s.server_step;
  sched.eta_r = s.local_step_rule == LocalStepRule::kConstant
                    ? s.local_step
                    : s.local_step / std::sqrt(static_cast<double>(r + 1));
  switch (s.alpha_rule) {
    case AlphaRule::kConstant:
      sched.alpha_r = s.alpha;
      break;
    case AlphaRule::kLinearDecay: {
      const int R = std::max(prep.config.rounds, 1);
      const double frac = R > 1 ? static_cast<double>(r) / static_cast<double>(R - 1) : 0.0;
      sched.alpha_r = s.alpha + (s.alpha_final - s.alpha) * frac;
      break;
    }
    case AlphaRule::kTheoryOptimal:
      sched.alpha_r = alpha_star(sched.eta_r * prep.smoothness * s.local_steps);
      break;
  }
  sched.local_steps = s.local_steps;
  sched.momentum = s.momentum;
  sched.batch_size = s.batch_size;
  sched.participants = sample_participants(prep.task.num_clients(), prep.config.participation, r,
                                           prep.stream);
  return sched;
}

RoundTrace step_round(const PreparedExperiment& prep, SimState& sim, int r, int threads) {
  const RoundSchedule sched = schedule_for_round(prep, r);
  RoundResult res =
      run_round(prep.task, sim.states, sim.w, sched, prep.config.compressor, prep.stream, threads);
  sim.w = std::move(res.w_next);
  sim.states = std::move(res.states);
  return std::move(res.trace);
}

namespace {

void write_summary_file(const RunSummary& summary, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("summary: cannot open " + path);
  out << "seed " << summary.seed << "\n";
  out << "final_f " << fmt17(summary.final_f) << "\n";
  out << "final_grad_norm_sq " << fmt17(summary.final_grad_norm_sq) << "\n";
  out << "min_grad_norm_sq " << fmt17(summary.min_grad_norm_sq) << "\n";
  if (summary.rounds_to_threshold >= 0) {
    out << "rounds_to_threshold " << summary.rounds_to_threshold << "\n";
  } else {
    out << "rounds_to_threshold not_reached\n";
  }
  out << "uplink_bits_cum " << summary.uplink_bits_cum << "\n";
  out << "metrics " << summary.metrics_path << "\n";
  out << "diverged " << (summary.diverged ? 1 : 0) << "\n";
  if (summary.diverged) out << "failure " << summary.failure << "\n";
  out << "total_wall_ms " << summary.total_wall_ms << "\n";
}

}  // namespace

RunSummary run_experiment(const ExperimentConfig& config, int threads) {
  const PreparedExperiment prep = prepare_experiment(config);
  SimState sim = initial_state(prep);

  namespace fs = std::filesystem;
  fs::create_directories(config.output_dir);
  RunSummary summary;
  summary.seed = config.seed;
  summary.metrics_path =
      (fs::path(config.output_dir) / ("metrics_" + std::to_string(config.seed) + ".csv")).string();

  const auto run_start = std::chrono::steady_clock::now();
  std::int64_t bits_cum = 0;
  for (int r = 0; r < config.rounds; ++r) {
    const RoundSchedule sched = schedule_for_round(prep, r);
    MetricsRecord rec;
    rec.round = r;
    rec.f_w = value(prep.task, sim.w);
    rec.grad_norm_sq = norm2_sq(global_grad(prep.task, sim.w));
    double energy = 0.0;
    for (const ClientState& s : sim.states) energy += norm2_sq(s.residual);
    rec.residual_energy_mean = energy / static_cast<double>(sim.states.size());
    rec.mismatch = gradient_mismatch(prep.task, sim.w, sim.states, sched.alpha_r, prep.probes);

    const auto round_start = std::chrono::steady_clock::now();
    RoundResult res;
    try {
      res = run_round(prep.task, sim.states, sim.w, sched, config.compressor, prep.stream,
                      threads);
    } catch (const DivergenceError& e) {
      summary.diverged = true;
      summary.failure = e.what();
      break;
    }
    const auto round_end = std::chrono::steady_clock::now();

    const int m = static_cast<int>(sched.participants.size());
    rec.uplink_bits_cum = bits_cum;
    rec = accumulate_comm(rec, config.compressor, prep.task.dimension, m);
    bits_cum = rec.uplink_bits_cum;
    rec.virtual_identity_residual = virtual_identity_residual(
        res.trace, sched.eta, sched.alpha_r,
        static_cast<double>(m) / static_cast<double>(prep.task.num_clients()));
    if (config.record_timings) {
      rec.wall_time_ms = std::chrono::duration_cast<std::chrono::milliseconds>(round_end -
                                                                               round_start)
                             .count();
    }
    summary.records.push_back(rec);
    sim.w = std::move(res.w_next);
    sim.states = std::move(res.states);
  }

  summary.final_f = value(prep.task, sim.w);
  summary.final_grad_norm_sq = norm2_sq(global_grad(prep.task, sim.w));
  summary.min_grad_norm_sq = summary.final_grad_norm_sq;
  for (const MetricsRecord& rec : summary.records) {
    summary.min_grad_norm_sq = std::min(summary.min_grad_norm_sq, rec.grad_norm_sq);
  }
  summary.rounds_to_threshold = -1;
  for (const MetricsRecord& rec : summary.records) {
    if (rec.grad_norm_sq <= config.grad_threshold) {
      summary.rounds_to_threshold = rec.round;
      break;
    }
  }
  if (summary.rounds_to_threshold < 0 && !summary.diverged &&
      summary.final_grad_norm_sq <= config.grad_threshold) {
    summary.rounds_to_threshold = config.rounds;  // reached only at the final iterate
  }
  summary.uplink_bits_cum = bits_cum;
  summary.total_wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                              std::chrono::steady_clock::now() - run_start)
                              .count();

  emit_metrics(summary.records, summary.metrics_path);
  if (summary.diverged) {
    std::ofstream marker(summary.metrics_path + ".FAILED");
    marker << summary.failure << "\n";
  }
  write_summary_file(summary, (fs::path(config.output_dir) /
                               ("summary_" + std::to_string(config.seed) + ".txt"))
                                  .string());
  return summary;
}

std::vector<RunSummary> sweep_alpha(const ExperimentConfig& config,
                                    const std::vector<double>& alphas, int threads) {
  std::vector<RunSummary> cells;
  if (alphas.empty()) return cells;

  namespace fs = std::filesystem;
  fs::create_directories(config.output_dir);
  std::ofstream table((fs::path(config.output_dir) / "sweep_alpha.csv").string());
  table << "alpha,rounds_to_threshold,final_f,final_grad_norm_sq,min_grad_norm_sq,"
           "uplink_bits_cum,status\n";
  for (double alpha : alphas) {
    ExperimentConfig cell_cfg = config;
    cell_cfg.schedule.alpha_rule = AlphaRule::kConstant;
    cell_cfg.schedule.alpha = alpha;
    cell_cfg.output_dir =
        (fs::path(config.output_dir) / ("alpha_" + alpha_tag(alpha))).string();
    RunSummary cell;
    std::string status = "ok";
    try {
      cell = run_experiment(cell_cfg, threads);
      if (cell.diverged) status = "diverged";
    } catch (const std::exception& e) {
      cell.seed = config.seed;
      cell.diverged = true;
      cell.failure = e.what();
      status = "error";
    }
    table << fmt17(alpha) << ","
          << (cell.rounds_to_threshold >= 0 ? std::to_string(cell.rounds_to_threshold)
                                            : std::string("not_reached"))
          << "," << fmt17(cell.final_f) << "," << fmt17(cell.final_grad_norm_sq) << ","
          << fmt17(cell.min_grad_norm_sq) << "," << cell.uplink_bits_cum << "," << status
          << "\n";
    cells.push_back(std::move(cell));
  }
  return cells;
}

void emit_metrics(const std::vector<MetricsRecord>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("metrics: cannot open " + path);
  out << "round,f_w,grad_norm_sq,residual_energy_mean,mismatch,uplink_bits_cum,"
         "virtual_identity_residual,wall_time_ms\n";
  for (const MetricsRecord& r : records) {
    out << r.round << "," << fmt17(r.f_w) << "," << fmt17(r.grad_norm_sq) << ","
        << fmt17(r.residual_energy_mean) << "," << fmt17(r.mismatch) << "," << r.uplink_bits_cum
        << "," << fmt17(r.virtual_identity_residual) << "," << r.wall_time_ms << "\n";
  }
  if (!out) throw ConfigError("metrics: write failed for " + path);
}

std::vector<MetricsRecord> parse_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("metrics: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("metrics: missing header in " + path);
  const std::string expected =
      "round,f_w,grad_norm_sq,residual_energy_mean,mismatch,uplink_bits_cum,"
      "virtual_identity_residual,wall_time_ms";
  if (line != expected) throw ConfigError("metrics: unexpected header in " + path);
  std::vector<MetricsRecord> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 8) throw ConfigError("metrics: malformed row in " + path);
    MetricsRecord r;
    r.round = std::stoi(cells[0]);
    r.f_w = std::stod(cells[1]);
    r.grad_norm_sq = std::stod(cells[2]);
    r.residual_energy_mean = std::stod(cells[3]);
    r.mismatch = std::stod(cells[4]);
    r.uplink_bits_cum = std::stoll(cells[5]);
    r.virtual_identity_residual = std::stod(cells[6]);
    r.wall_time_ms = std::stoll(cells[7]);
    records.push_back(r);
  }
  return records;
}

TheoryParams derive_theory_params(const PreparedExperiment& prep, int probes,
                                  int noise_samples) {
  TheoryParams params;
  params.L = prep.smoothness;
  const DissimilarityEstimate dissim =
      estimate_dissimilarity(prep.task, std::max(probes, 10), prep.stream, 0);
  params.beta_sq = dissim.beta_sq;
  params.nu_sq = dissim.nu_sq;
  params.sigma_sq = estimate_noise(prep.task, ModelVector::Zero(prep.task.dimension),
                                   prep.config.schedule.batch_size,
                                   std::max(noise_samples, 100), prep.stream);
  params.delta = prep.config.compressor.delta(prep.task.dimension);
  params.eta = prep.config.schedule.server_step;
  params.eta0 = prep.config.schedule.local_step;
  params.T = prep.config.schedule.local_steps;
  params.alpha = prep.config.schedule.alpha;
  params.p = prep.config.participation;
  params.K = prep.task.num_clients();
  return params;
}

}  // namespace sapef
