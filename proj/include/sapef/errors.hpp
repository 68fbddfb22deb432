#pragma once

#include <stdexcept>
#include <string>

namespace sapef {

// Invalid experiment or task configuration (bad field values, infeasible combos).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Vector/matrix shape mismatch between operands.
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite input or a numerical routine that failed to converge.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A feasibility condition of the analysis is violated (e.g. contraction >= 1).
struct InfeasibleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Communication counter overflow.
struct AccountingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A local iterate went non-finite; carries the exact location.
struct DivergenceError : std::runtime_error {
  int round;
  int client;
  int step;
  DivergenceError(int round_, int client_, int step_)
      : std::runtime_error("non-finite iterate at round " + std::to_string(round_) +
                           ", client " + std::to_string(client_) + ", local step " +
                           std::to_string(step_)),
        round(round_),
        client(client_),
        step(step_) {}
};

}  // namespace sapef
