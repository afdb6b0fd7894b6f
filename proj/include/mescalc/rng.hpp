#pragma once
// Counter-based pseudo-random generator (SplitMix64 core).
//
// Contract: the i-th output of a stream is a pure function of
// (seed, stream, i). Distinct (seed, stream) pairs give statistically
// independent sequences, and consuming values from one stream never
// shifts another. Monte Carlo drivers split one substream per fixed-size
// chunk of samples, so estimates are byte-identical for a given seed no
// matter how many worker threads run the chunks.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <utility>
#include <vector>

#include "mescalc/common.hpp"

namespace mescalc {

namespace detail {

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ull;

// SplitMix64 output function (Steele, Lea, Flood 2014).
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace detail

class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
      : key_(detail::mix64(seed + detail::kGolden) ^
             detail::mix64(stream * detail::kGolden + 0x243f6a8885a308d3ull)) {}

  // Independent child stream; children of distinct ids never collide.
  Rng split(std::uint64_t substream) const {
    Rng r(0, 0);
    r.key_ = detail::mix64(key_ + detail::mix64(substream + detail::kGolden));
    r.counter_ = 0;
    r.cached_ = false;
    return r;
  }

  std::uint64_t next_u64() {
    return detail::mix64(key_ + (++counter_) * detail::kGolden);
  }

  // Uniform on [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; pairs share two uniform draws.
  double normal() {
    if (cached_) {
      cached_ = false;
      return cache_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double t = 6.283185307179586476925286766559 * u2;
    cache_ = r * std::sin(t);
    cached_ = true;
    return r * std::cos(t);
  }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  double cache_ = 0.0;
  bool cached_ = false;
};

// ---------------------------------------------------------------------------
// deterministic parallel Monte Carlo driver

inline constexpr std::int64_t kMcChunk = 4096;

// Run fn(begin, end, chunk_index) over [0, total) in fixed-size chunks on
// `workers` threads. Chunk boundaries depend only on total, never on the
// thread count, so per-chunk results (and any reduction done in chunk order)
// are reproducible on any machine load.
inline void parallel_chunks(
    std::int64_t total, int workers,
    const std::function<void(std::int64_t, std::int64_t, std::int64_t)>& fn,
    std::int64_t chunk = kMcChunk) {
  if (total <= 0) return;
  std::int64_t nchunks = (total + chunk - 1) / chunk;
  std::atomic<std::int64_t> next{0};
  std::exception_ptr first_error;
  std::mutex err_mutex;
  auto work = [&] {
    for (;;) {
      std::int64_t c = next.fetch_add(1);
      if (c >= nchunks) return;
      std::int64_t b = c * chunk;
      std::int64_t e = b + chunk < total ? b + chunk : total;
      try {
        fn(b, e, c);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  if (workers <= 1 || nchunks == 1) {
    work();
  } else {
    int nt = workers < nchunks ? workers : static_cast<int>(nchunks);
    std::vector<std::thread> ts;
    ts.reserve(nt);
    for (int i = 0; i < nt; ++i) ts.emplace_back(work);
    for (auto& t : ts) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);
}

struct McResult {
  double mean = 0.0;
  double std_error = 0.0;
  std::int64_t samples = 0;
};

// Mean and standard error of draw(rng) over `samples` evaluations. Each
// chunk gets its own substream keyed by (seed, stream, chunk index);
// chunk sums are combined in index order with compensated addition.
inline McResult mc_run(std::int64_t samples, std::uint64_t seed,
                       std::uint64_t stream,
                       const std::function<double(Rng&)>& draw) {
  if (samples <= 0) throw ArgumentError("mc_run: need samples >= 1");
  Rng base(seed, stream);
  std::int64_t nchunks = (samples + kMcChunk - 1) / kMcChunk;
  std::vector<double> sums(nchunks, 0.0), sums2(nchunks, 0.0);
  parallel_chunks(samples, worker_count(),
                  [&](std::int64_t b, std::int64_t e, std::int64_t c) {
                    Rng rng = base.split(static_cast<std::uint64_t>(c));
                    Kahan s, s2;
                    for (std::int64_t i = b; i < e; ++i) {
                      double x = draw(rng);
                      s.add(x);
                      s2.add(x * x);
                    }
                    sums[c] = s.value();
                    sums2[c] = s2.value();
                  });
  Kahan s, s2;
  for (std::int64_t c = 0; c < nchunks; ++c) {
    s.add(sums[c]);
    s2.add(sums2[c]);
  }
  McResult r;
  r.samples = samples;
  r.mean = s.value() / static_cast<double>(samples);
  if (samples > 1) {
    double var = (s2.value() / samples - r.mean * r.mean) *
                 (static_cast<double>(samples) / (samples - 1));
    r.std_error = var > 0.0 ? std::sqrt(var / samples) : 0.0;
  }
  return r;
}

struct McVecResult {
  std::vector<double> means;
  std::vector<double> std_errors;
  std::int64_t samples = 0;
};

// Vector-valued counterpart of mc_run: draw fills a length-`dim` buffer per
// sample; per-component means and standard errors use the same deterministic
// chunking.
inline McVecResult mc_run_vec(
    std::int64_t samples, std::uint64_t seed, std::uint64_t stream, long dim,
    const std::function<void(Rng&, std::vector<double>&)>& draw) {
  if (samples <= 0) throw ArgumentError("mc_run_vec: need samples >= 1");
  if (dim <= 0) throw ArgumentError("mc_run_vec: need dim >= 1");
  Rng base(seed, stream);
  std::int64_t nchunks = (samples + kMcChunk - 1) / kMcChunk;
  std::vector<std::vector<double>> sums(nchunks), sums2(nchunks);
  parallel_chunks(samples, worker_count(),
                  [&](std::int64_t b, std::int64_t e, std::int64_t c) {
                    Rng rng = base.split(static_cast<std::uint64_t>(c));
                    std::vector<Kahan> s(dim), s2(dim);
                    std::vector<double> x(dim, 0.0);
                    for (std::int64_t i = b; i < e; ++i) {
                      draw(rng, x);
                      for (long k = 0; k < dim; ++k) {
                        s[k].add(x[k]);
                        s2[k].add(x[k] * x[k]);
                      }
                    }
                    sums[c].resize(dim);
                    sums2[c].resize(dim);
                    for (long k = 0; k < dim; ++k) {
                      sums[c][k] = s[k].value();
                      sums2[c][k] = s2[k].value();
                    }
                  });
  McVecResult r;
  r.samples = samples;
  r.means.assign(dim, 0.0);
  r.std_errors.assign(dim, 0.0);
  for (long k = 0; k < dim; ++k) {
    Kahan s, s2;
    for (std::int64_t c = 0; c < nchunks; ++c) {
      s.add(sums[c][k]);
      s2.add(sums2[c][k]);
    }
    double mean = s.value() / static_cast<double>(samples);
    r.means[k] = mean;
    if (samples > 1) {
      double var = (s2.value() / samples - mean * mean) *
                   (static_cast<double>(samples) / (samples - 1));
      r.std_errors[k] = var > 0.0 ? std::sqrt(var / samples) : 0.0;
    }
  }
  return r;
}

}  // namespace mescalc
