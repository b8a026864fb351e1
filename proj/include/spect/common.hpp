#ifndef SPECT_COMMON_HPP
#define SPECT_COMMON_HPP

#include <atomic>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace spect {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed input file (bad JSON, bad magic, truncation).
struct ParseError : Error {
  using Error::Error;
};

/// Structurally valid input violating a documented invariant.
struct ValidationError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

/// Raised when slice filtering removes every slice of a volume.
struct EmptyVolumeError : Error {
  using Error::Error;
};

struct ShapeError : Error {
  using Error::Error;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

// Deterministic random stream. The engine is the standard mt19937_64 but all
// value derivation is done here, because the standard library distributions
// are implementation-defined and would break byte-identical reruns across
// toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(detail::splitmix64(seed)) {}

  // Independent stream keyed by a tag plus up to two integer coordinates,
  // e.g. derive(seed, "aug", patient, step).
  static Rng derive(std::uint64_t seed, std::string_view tag, std::uint64_t a = 0,
                    std::uint64_t b = 0) {
    std::uint64_t h = detail::splitmix64(seed ^ detail::fnv1a(tag));
    h = detail::splitmix64(h ^ (0x9e3779b97f4a7c15ULL + a));
    h = detail::splitmix64(h ^ (0xc2b2ae3d27d4eb4fULL + b));
    return Rng(h);
  }

  std::uint64_t next_u64() { return eng_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n), n >= 1.
  std::uint64_t uniform_int(std::uint64_t n) {
    // Rejection sampling to avoid modulo bias.
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box-Muller.
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * 3.14159265358979323846 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

// Runs fn(chunk) for chunk in [0, n_chunks). Chunk boundaries are fixed by the
// caller, so results do not depend on the worker count as long as chunks write
// disjoint outputs and any cross-chunk reduction happens afterwards in chunk
// order.
template <typename Fn>
void parallel_for(std::int64_t n_chunks, int workers, Fn&& fn) {
  if (n_chunks <= 0) return;
  if (workers <= 1 || n_chunks == 1) {
    for (std::int64_t i = 0; i < n_chunks; ++i) fn(i);
    return;
  }
  int n_threads = static_cast<int>(std::min<std::int64_t>(workers, n_chunks));
  std::atomic<std::int64_t> next{0};
  std::exception_ptr err;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(n_threads));
  for (int t = 0; t < n_threads; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        std::int64_t i = next.fetch_add(1);
        if (i >= n_chunks || failed.load()) return;
        try {
          fn(i);
        } catch (...) {
          if (!failed.exchange(true)) err = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace spect

#endif  // SPECT_COMMON_HPP
