#include "pifm/rng.hpp"

#include <cmath>

namespace pifm {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view s, std::uint64_t h) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t rotl(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::string_view stream_id) {
  origin_ = fnv1a(stream_id, seed ^ 0xcbf29ce484222325ULL);
  std::uint64_t sm = origin_;
  for (auto& w : state_) w = splitmix64(sm);
  // all-zero state is invalid for xoshiro; splitmix cannot produce it
  // from four consecutive outputs, but guard anyway
  if ((state_[0] | state_[1] | state_[2] | state_[3]) == 0) state_[0] = 1;
}

std::uint64_t RngStream::next_u64() {
  const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

double RngStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double f = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * f;
  has_spare_ = true;
  return u * f;
}

std::size_t RngStream::index(std::size_t n) {
  if (n == 0) throw ParamError("RngStream::index: n must be positive");
  // rejection-free would bias for huge n; n here is always small
  return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
}

RngStream RngStream::fork(std::string_view label) const {
  RngStream child;
  child.origin_ = fnv1a(label, origin_ ^ 0x9e3779b97f4a7c15ULL);
  std::uint64_t sm = child.origin_;
  for (auto& w : child.state_) w = splitmix64(sm);
  if ((child.state_[0] | child.state_[1] | child.state_[2] | child.state_[3]) == 0)
    child.state_[0] = 1;
  return child;
}

}  // namespace pifm
