#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>

#include "sapef/errors.hpp"

namespace sapef {

// Dense d-dimensional parameter/update vector. All simulator state lives in
// these; one experiment fixes d for every vector it touches.
using ModelVector = Eigen::VectorXd;

bool all_finite(const ModelVector& x);

// a*x + y. Inputs are untouched.
ModelVector axpy(double a, const ModelVector& x, const ModelVector& y);

// Reductions below run strictly left-to-right so that replays are
// bit-identical independent of build vectorization and thread count.
double norm2_sq(const ModelVector& x);
double dot(const ModelVector& x, const ModelVector& y);
double l1_norm(const ModelVector& x);

// Disambiguates independent random streams that share (round, client, step).
enum class Purpose : std::uint16_t {
  kInit = 0,
  kBatchSampling = 1,
  kParticipation = 2,
  kTaskFeatures = 3,
  kTaskTargets = 4,
  kPartition = 5,
  kDissimilarityProbe = 6,
  kNoiseProbe = 7,
  kPowerIteration = 8,
  kMcReplica = 9,
  kHoldoutProbe = 10,
};

struct StreamContext {
  std::uint32_t round = 0;
  std::uint32_t client = 0;
  std::uint16_t step = 0;
  Purpose purpose = Purpose::kInit;
};

// Counter-based (Philox 4x32-10) random stream. The value sequence is a pure
// function of (root_seed, context); the object holds no mutable state, so
// clients in different threads can draw from disjoint contexts without
// synchronization and without perturbing each other's values.
class RandomStream {
 public:
  RandomStream(std::uint64_t root_seed, StreamContext ctx)
      : root_seed_(root_seed), ctx_(ctx) {}

  std::uint64_t root_seed() const { return root_seed_; }
  const StreamContext& context() const { return ctx_; }

  RandomStream with(StreamContext ctx) const { return RandomStream(root_seed_, ctx); }

  // Raw 128-bit output block at the given position of the stream.
  std::array<std::uint32_t, 4> block(std::uint32_t index) const;

 private:
  std::uint64_t root_seed_;
  StreamContext ctx_;
};

// Sequential reader over one stream. Routines that need a variable number of
// draws (rejection sampling, shuffles) create a local cursor; the cursor is
// the only stateful piece and never outlives the call.
class StreamCursor {
 public:
  explicit StreamCursor(const RandomStream& stream) : stream_(stream) {}

  std::uint64_t next_u64();
  // Uniform on [0, 1).
  double next_uniform();
  // Standard normal (Box-Muller).
  double next_gaussian();
  // Uniform integer in [0, n).
  std::uint64_t next_index(std::uint64_t n);

 private:
  RandomStream stream_;
  std::uint32_t block_index_ = 0;
  int lane_ = 0;  // 0 or 1: two 64-bit lanes per 128-bit block
  std::array<std::uint32_t, 4> block_{};
  bool have_spare_gaussian_ = false;
  double spare_gaussian_ = 0.0;
};

// n standard-normal variates; identical output for identical (seed, context).
ModelVector draw_gaussian(const RandomStream& stream, Eigen::Index n);
ModelVector draw_uniform(const RandomStream& stream, Eigen::Index n);

}  // namespace sapef
