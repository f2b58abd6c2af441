#pragma once

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace fri {

// Error taxonomy mirrored by the CLI exit codes: config 2, numeric 3,
// infeasible data 4.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InfeasibleDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string str_printf(const char* fmt, ...) {
  va_list args;
  va_start(args, fmt);
  va_list args2;
  va_copy(args2, args);
  const int n = std::vsnprintf(nullptr, 0, fmt, args);
  va_end(args);
  std::string out(static_cast<size_t>(n), '\0');
  std::vsnprintf(out.data(), out.size() + 1, fmt, args2);
  va_end(args2);
  return out;
}

// ---------------------------------------------------------------------------
// Deterministic RNG. xoshiro256++ seeded through splitmix64; all sampling
// helpers are hand-rolled so streams are identical across compilers and
// standard libraries. Substreams are derived by mixing (seed, index), which
// makes dataset generation order-independent and safely parallel.
// ---------------------------------------------------------------------------

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline uint64_t mix_seed(uint64_t seed, uint64_t index) {
  uint64_t s = seed ^ (0x632be59bd9b4e019ULL + index * 0x9e3779b97f4a7c15ULL);
  splitmix64(s);
  return splitmix64(s);
}

class Rng {
 public:
  explicit Rng(uint64_t seed = 0) {
    uint64_t sm = seed;
    for (auto& word : s_) word = splitmix64(sm);
  }

  static Rng substream(uint64_t seed, uint64_t index) {
    return Rng(mix_seed(seed, index));
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1): 53-bit mantissa.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) {
    if (lo == hi) return lo;
    return lo + (hi - lo) * next_double();
  }

  // Box-Muller without the usual cached second value, so the stream state
  // is a pure function of the number of calls.
  double normal() {
    double u1 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    const double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  uint64_t s_[4];
};

// ---------------------------------------------------------------------------
// Threading. A chunked parallel_for where every index is processed by exactly
// one worker and per-index work uses a fixed evaluation order, so results are
// bit-identical for any thread count.
// ---------------------------------------------------------------------------

inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

template <typename Fn>
void parallel_for(size_t count, int threads, Fn&& fn) {
  threads = std::max(1, threads);
  if (threads == 1 || count <= 1) {
    fn(size_t{0}, count);
    return;
  }
  const size_t n_workers = std::min<size_t>(static_cast<size_t>(threads), count);
  const size_t chunk = (count + n_workers - 1) / n_workers;
  std::vector<std::thread> pool;
  pool.reserve(n_workers);
  for (size_t w = 0; w < n_workers; ++w) {
    const size_t begin = w * chunk;
    const size_t end = std::min(count, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto& t : pool) t.join();
}

inline void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) {
    throw NumericError(str_printf("non-finite value in %s", what));
  }
}

}  // namespace fri
