#include "sapef/numerics.hpp"

#include <cmath>

namespace sapef {

bool all_finite(const ModelVector& x) {
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) return false;
  }
  return true;
}

ModelVector axpy(double a, const ModelVector& x, const ModelVector& y) {
  if (x.size() != y.size()) {
    throw DimensionError("axpy: size mismatch (" + std::to_string(x.size()) + " vs " +
                         std::to_string(y.size()) + ")");
  }
  return a * x + y;
}

double norm2_sq(const ModelVector& x) {
  double acc = 0.0;
  const double* p = x.data();
  for (Eigen::Index i = 0; i < x.size(); ++i) acc += p[i] * p[i];
  return acc;
}

double dot(const ModelVector& x, const ModelVector& y) {
  if (x.size() != y.size()) {
    throw DimensionError("dot: size mismatch (" + std::to_string(x.size()) + " vs " +
                         std::to_string(y.size()) + ")");
  }
  double acc = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) acc += x[i] * y[i];
  return acc;
}

double l1_norm(const ModelVector& x) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) acc += std::abs(x[i]);
  return acc;
}

namespace {

// Philox 4x32-10 (Salmon et al., SC'11).
constexpr std::uint32_t kPhiloxW32A = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW32B = 0xBB67AE85u;
constexpr std::uint32_t kPhiloxM4x32A = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM4x32B = 0xCD9E8D57u;

inline void mul_hi_lo(std::uint32_t a, std::uint32_t b, std::uint32_t* lo, std::uint32_t* hi) {
  const std::uint64_t prod = static_cast<std::uint64_t>(a) * b;
  *lo = static_cast<std::uint32_t>(prod);
  *hi = static_cast<std::uint32_t>(prod >> 32);
}

inline void philox_round(std::array<std::uint32_t, 4>& ctr, const std::array<std::uint32_t, 2>& key) {
  std::uint32_t lo0, hi0, lo1, hi1;
  mul_hi_lo(kPhiloxM4x32A, ctr[0], &lo0, &hi0);
  mul_hi_lo(kPhiloxM4x32B, ctr[2], &lo1, &hi1);
  ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
}

}  // namespace

std::array<std::uint32_t, 4> RandomStream::block(std::uint32_t index) const {
  std::array<std::uint32_t, 4> ctr = {
      index,
      ctx_.round,
      ctx_.client,
      (static_cast<std::uint32_t>(ctx_.purpose) << 16) | ctx_.step,
  };
  std::array<std::uint32_t, 2> key = {
      static_cast<std::uint32_t>(root_seed_),
      static_cast<std::uint32_t>(root_seed_ >> 32),
  };
  for (int i = 0; i < 10; ++i) {
    philox_round(ctr, key);
    key[0] += kPhiloxW32A;
    key[1] += kPhiloxW32B;
  }
  return ctr;
}

std::uint64_t StreamCursor::next_u64() {
  if (lane_ == 0) {
    block_ = stream_.block(block_index_++);
  }
  const int base = 2 * lane_;
  lane_ = (lane_ + 1) % 2;
  return (static_cast<std::uint64_t>(block_[base]) << 32) | block_[base + 1];
}

double StreamCursor::next_uniform() {
  // 53 top bits -> double in [0, 1)
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double StreamCursor::next_gaussian() {
  if (have_spare_gaussian_) {
    have_spare_gaussian_ = false;
    return spare_gaussian_;
  }
  const double u1 = 1.0 - next_uniform();  // (0, 1], keeps log finite
  const double u2 = next_uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * M_PI * u2;
  spare_gaussian_ = radius * std::sin(angle);
  have_spare_gaussian_ = true;
  return radius * std::cos(angle);
}

std::uint64_t StreamCursor::next_index(std::uint64_t n) {
  // Modulo bias is ~n / 2^64, far below every statistical tolerance used here.
  return next_u64() % n;
}

ModelVector draw_gaussian(const RandomStream& stream, Eigen::Index n) {
  StreamCursor cur(stream);
  ModelVector out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = cur.next_gaussian();
  return out;
}

ModelVector draw_uniform(const RandomStream& stream, Eigen::Index n) {
  StreamCursor cur(stream);
  ModelVector out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = cur.next_uniform();
  return out;
}

}  // namespace sapef
