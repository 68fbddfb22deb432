#pragma once

#include <cstdint>

#include "sapef/numerics.hpp"

namespace sapef {

enum class CompressorFamily {
  kTopK,
  kScaledSign,
  kIdentity,
};

// A contractive compressor family plus its parameters. The certified
// contraction constant delta satisfies ||u - C(u)||^2 <= (1 - 1/delta)||u||^2
// for every input u of the right dimension.
struct CompressorSpec {
  CompressorFamily family = CompressorFamily::kIdentity;
  int k = 0;               // top-k only, 1 <= k <= d
  int value_bits = 32;     // bits per transmitted value

  // Certified contraction constant for dimension d:
  //   top-k -> d/k, scaled-sign -> d (one-hot worst case), identity -> 1.
  double delta(int d) const;

  void validate(int d) const;
};

struct CompressedUpdate {
  ModelVector dense;        // the value C(u)
  int support_size = 0;     // nonzero transmitted entries
  std::int64_t uplink_bits = 0;
};

// Per-message uplink cost in bits:
//   top-k:       k * (ceil(log2 d) + value_bits)   (index + value per entry)
//   scaled-sign: d + value_bits                    (one sign bit/coord + scale)
//   identity:    d * value_bits
std::int64_t uplink_bits(const CompressorSpec& spec, int d);

// Applies the compressor. Deterministic for all shipped families; top-k ties
// are broken by lowest coordinate index so replays are bit-exact.
CompressedUpdate compress(const CompressorSpec& spec, const ModelVector& u);

// u - C(u)
ModelVector residual(const ModelVector& u, const CompressedUpdate& c);

}  // namespace sapef
