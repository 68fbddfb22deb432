#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>

#include "sapef/compressors.hpp"

using namespace sapef;

namespace {

CompressorSpec top_k(int k) { return {CompressorFamily::kTopK, k, 32}; }
CompressorSpec scaled_sign() { return {CompressorFamily::kScaledSign, 0, 32}; }
CompressorSpec identity() { return {CompressorFamily::kIdentity, 0, 32}; }

ModelVector vec(std::initializer_list<double> xs) {
  ModelVector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

}  // namespace

TEST_CASE("top-k picks largest magnitudes, ties to lowest index") {
  const ModelVector u = vec({3, 1, -2});
  const CompressedUpdate c = compress(top_k(1), u);
  CHECK(c.dense == vec({3, 0, 0}));
  CHECK(c.support_size == 1);
  const ModelVector r = residual(u, c);
  CHECK(r == vec({0, 1, -2}));
  CHECK(norm2_sq(r) == 5.0);
  CHECK(norm2_sq(r) <= (1.0 - 1.0 / top_k(1).delta(3)) * norm2_sq(u));

  const ModelVector ties = vec({2, -2, 2});
  CHECK(compress(top_k(2), ties).dense == vec({2, -2, 0}));
}

TEST_CASE("top-k tightness when all magnitudes are equal") {
  const ModelVector u = ModelVector::Ones(4);
  const CompressedUpdate c = compress(top_k(1), u);
  const double lhs = norm2_sq(residual(u, c));
  const double rhs = (1.0 - 1.0 / 4.0) * norm2_sq(u);
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  CHECK(lhs == 3.0);
}

TEST_CASE("identity is lossless") {
  const ModelVector u = vec({0.5, -1.25, 7});
  const CompressedUpdate c = compress(identity(), u);
  CHECK(c.dense == u);
  CHECK(norm2_sq(residual(u, c)) == 0.0);
  CHECK(identity().delta(3) == 1.0);
}

TEST_CASE("scaled-sign closed form") {
  const ModelVector u = vec({3, 1});
  const CompressedUpdate c = compress(scaled_sign(), u);
  CHECK(c.dense == vec({2, 2}));
  const ModelVector r = residual(u, c);
  CHECK(r == vec({1, -1}));
  CHECK(norm2_sq(r) == norm2_sq(u) - l1_norm(u) * l1_norm(u) / 2.0);
}

TEST_CASE("zero input maps to zero for every family") {
  const ModelVector zero = ModelVector::Zero(5);
  for (const CompressorSpec& spec : {top_k(2), scaled_sign(), identity()}) {
    const CompressedUpdate c = compress(spec, zero);
    CHECK(norm2_sq(c.dense) == 0.0);
    CHECK(norm2_sq(residual(zero, c)) == 0.0);
  }
}

TEST_CASE("uplink bit accounting") {
  CHECK(uplink_bits(top_k(10), 1000) == 10 * (10 + 32));
  CHECK(uplink_bits(identity(), 100) == 3200);
  CHECK(uplink_bits(top_k(2), 2) == 2 * (1 + 32));
  CHECK(uplink_bits(scaled_sign(), 100) == 100 + 32);
  CHECK(uplink_bits(top_k(1), 1) == 32);  // ceil(log2 1) = 0
}

TEST_CASE("errors") {
  CHECK_THROWS_AS(compress(top_k(4), ModelVector::Zero(3)), ConfigError);
  ModelVector bad = ModelVector::Zero(3);
  bad[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(compress(top_k(1), bad), NumericError);
  CHECK_THROWS_AS(residual(ModelVector::Zero(3), compress(identity(), ModelVector::Zero(2))),
                  DimensionError);
}

TEST_CASE("fuzzed contraction for every family") {
  int draw = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    RandomStream s(123, {static_cast<std::uint32_t>(draw++), 0, 0, Purpose::kNoiseProbe});
    StreamCursor cur(s);
    const int d = 1 + static_cast<int>(cur.next_index(64));
    ModelVector u(d);
    for (int i = 0; i < d; ++i) u[i] = 10.0 * cur.next_gaussian();
    const int k = 1 + static_cast<int>(cur.next_index(static_cast<std::uint64_t>(d)));
    for (const CompressorSpec& spec : {top_k(k), scaled_sign(), identity()}) {
      const double delta = spec.delta(d);
      const double lhs = norm2_sq(residual(u, compress(spec, u)));
      const double budget = (1.0 - 1.0 / delta) * norm2_sq(u) + 1e-12 * norm2_sq(u);
      CHECK(lhs <= budget);
    }
  }
}

TEST_CASE("fuzzed top-k inner-product identity and energy sandwich") {
  for (int trial = 0; trial < 2000; ++trial) {
    RandomStream s(77, {static_cast<std::uint32_t>(trial), 0, 0, Purpose::kNoiseProbe});
    StreamCursor cur(s);
    const int d = 2 + static_cast<int>(cur.next_index(63));
    const int k = 1 + static_cast<int>(cur.next_index(static_cast<std::uint64_t>(d)));
    ModelVector u(d);
    for (int i = 0; i < d; ++i) u[i] = cur.next_gaussian();
    const CompressedUpdate c = compress(top_k(k), u);
    CHECK(dot(c.dense, u) == norm2_sq(c.dense));  // exact: same nonzero terms
    const double energy = norm2_sq(u);
    CHECK(static_cast<double>(k) / d * energy <= norm2_sq(c.dense) + 1e-12 * energy);
    CHECK(norm2_sq(c.dense) <= energy + 1e-12 * energy);
  }
}

TEST_CASE("fuzzed scaled-sign exact residual identity") {
  for (int trial = 0; trial < 2000; ++trial) {
    RandomStream s(99, {static_cast<std::uint32_t>(trial), 0, 0, Purpose::kNoiseProbe});
    StreamCursor cur(s);
    const int d = 1 + static_cast<int>(cur.next_index(64));
    ModelVector u(d);
    for (int i = 0; i < d; ++i) u[i] = cur.next_gaussian();
    if (trial % 3 == 0) u[static_cast<int>(cur.next_index(d))] = 0.0;  // zero coords too
    if (norm2_sq(u) == 0.0) continue;
    const double lhs = norm2_sq(residual(u, compress(scaled_sign(), u)));
    const double rhs = norm2_sq(u) - l1_norm(u) * l1_norm(u) / d;
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("top-k support is idempotent") {
  for (int trial = 0; trial < 500; ++trial) {
    RandomStream s(55, {static_cast<std::uint32_t>(trial), 0, 0, Purpose::kNoiseProbe});
    StreamCursor cur(s);
    const int d = 2 + static_cast<int>(cur.next_index(40));
    const int k = 1 + static_cast<int>(cur.next_index(static_cast<std::uint64_t>(d)));
    ModelVector u(d);
    for (int i = 0; i < d; ++i) u[i] = cur.next_gaussian();
    const CompressedUpdate once = compress(top_k(k), u);
    const CompressedUpdate twice = compress(top_k(k), once.dense);
    CHECK(once.dense == twice.dense);
  }
}
