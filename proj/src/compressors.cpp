#include "sapef/compressors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace sapef {

double CompressorSpec::delta(int d) const {
  switch (family) {
    case CompressorFamily::kTopK:
      return static_cast<double>(d) / static_cast<double>(k);
    case CompressorFamily::kScaledSign:
      return static_cast<double>(d);
    case CompressorFamily::kIdentity:
      return 1.0;
  }
  throw ConfigError("unknown compressor family");
}

void CompressorSpec::validate(int d) const {
  if (d < 1) throw ConfigError("compressor: dimension must be >= 1");
  if (value_bits < 1) throw ConfigError("compressor: value_bits must be >= 1");
  if (family == CompressorFamily::kTopK) {
    if (k < 1) throw ConfigError("compressor: top_k requires k >= 1");
    if (k > d) {
      throw ConfigError("compressor: k = " + std::to_string(k) + " exceeds dimension d = " +
                        std::to_string(d));
    }
  }
}

namespace {

int ceil_log2(int d) {
  int bits = 0;
  while ((std::int64_t{1} << bits) < d) ++bits;
  return bits;
}

}  // namespace

std::int64_t uplink_bits(const CompressorSpec& spec, int d) {
  spec.validate(d);
  const auto vb = static_cast<std::int64_t>(spec.value_bits);
  switch (spec.family) {
    case CompressorFamily::kTopK:
      return static_cast<std::int64_t>(spec.k) * (ceil_log2(d) + vb);
    case CompressorFamily::kScaledSign:
      return static_cast<std::int64_t>(d) + vb;
    case CompressorFamily::kIdentity:
      return static_cast<std::int64_t>(d) * vb;
  }
  throw ConfigError("unknown compressor family");
}

CompressedUpdate compress(const CompressorSpec& spec, const ModelVector& u) {
  const int d = static_cast<int>(u.size());
  spec.validate(d);
  if (!all_finite(u)) throw NumericError("compress: input has non-finite entries");

  CompressedUpdate out;
  out.uplink_bits = uplink_bits(spec, d);

  switch (spec.family) {
    case CompressorFamily::kIdentity: {
      out.dense = u;
      out.support_size = d;
      return out;
    }
    case CompressorFamily::kTopK: {
      std::vector<int> idx(d);
      std::iota(idx.begin(), idx.end(), 0);
      const auto larger = [&u](int a, int b) {
        const double fa = std::abs(u[a]);
        const double fb = std::abs(u[b]);
        if (fa != fb) return fa > fb;
        return a < b;  // ties -> lowest index, for deterministic replay
      };
      std::partial_sort(idx.begin(), idx.begin() + spec.k, idx.end(), larger);
      out.dense = ModelVector::Zero(d);
      out.support_size = 0;
      for (int j = 0; j < spec.k; ++j) {
        out.dense[idx[j]] = u[idx[j]];
        if (u[idx[j]] != 0.0) ++out.support_size;
      }
      return out;
    }
    case CompressorFamily::kScaledSign: {
      const double scale = l1_norm(u) / static_cast<double>(d);
      out.dense = ModelVector::Zero(d);
      if (scale == 0.0) {  // C(0) = 0
        out.support_size = 0;
        return out;
      }
      // sign(0) maps to +1 so that ||u - C(u)||^2 = ||u||^2 - ||u||_1^2 / d
      // holds exactly for every nonzero u.
      for (int i = 0; i < d; ++i) out.dense[i] = u[i] < 0.0 ? -scale : scale;
      out.support_size = d;
      return out;
    }
  }
  throw ConfigError("unknown compressor family");
}

ModelVector residual(const ModelVector& u, const CompressedUpdate& c) {
  if (u.size() != c.dense.size()) {
    throw DimensionError("residual: size mismatch (" + std::to_string(u.size()) + " vs " +
                         std::to_string(c.dense.size()) + ")");
  }
  return u - c.dense;
}

}  // namespace sapef
