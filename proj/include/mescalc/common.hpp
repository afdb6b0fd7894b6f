#pragma once
// Shared aliases, error types, environment limits and small numeric helpers.

#include <complex>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

namespace mescalc {

using cxd = std::complex<double>;
using MatrixC = Eigen::MatrixXcd;
using MatrixR = Eigen::MatrixXd;
using VectorR = Eigen::VectorXd;

// Every failure surfaced by the library derives from Error, so callers can
// catch one type at the boundary and map it to a process exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid argument values: bad flags, malformed configs, negative counts.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Violated mathematical precondition: non-Hermitian input, sum != id, ...
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// Scalar function evaluated outside its domain (sqrt of a negative spectrum).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Matrix dimension exceeds the configured cap.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Singular or near-singular linear problem.
class SingularError : public Error {
 public:
  using Error::Error;
};

// A Monte Carlo acceptance gate failed.
class StochasticError : public Error {
 public:
  using Error::Error;
};

// Dimension cap, overridable through the environment.
inline long max_dim() {
  const char* s = std::getenv("MESCALC_MAX_DIM");
  if (s == nullptr || *s == '\0') return 4096;
  char* end = nullptr;
  long v = std::strtol(s, &end, 10);
  if (end == s || *end != '\0' || v <= 0)
    throw ArgumentError("MESCALC_MAX_DIM must be a positive integer");
  return v;
}

inline void check_dim(long dim, const char* where) {
  long cap = max_dim();
  if (dim > cap)
    throw DimensionError(std::string(where) + ": dimension " +
                         std::to_string(dim) + " exceeds MESCALC_MAX_DIM=" +
                         std::to_string(cap));
}

// Worker count for Monte Carlo loops. Thread count never affects results,
// only wall time; see rng.hpp for the chunking scheme that guarantees it.
inline int worker_count() {
  const char* s = std::getenv("MESCALC_THREADS");
  if (s != nullptr && *s != '\0') {
    char* end = nullptr;
    long v = std::strtol(s, &end, 10);
    if (end == s || *end != '\0' || v <= 0)
      throw ArgumentError("MESCALC_THREADS must be a positive integer");
    return static_cast<int>(v);
  }
  unsigned hw = std::thread::hardware_concurrency();
  return static_cast<int>(hw == 0 ? 1 : (hw > 16 ? 16 : hw));
}

inline std::int64_t ipow(std::int64_t base, int exp) {
  if (exp < 0) throw ArgumentError("ipow: negative exponent");
  std::int64_t r = 1;
  for (int i = 0; i < exp; ++i) {
    if (base != 0 && r > std::numeric_limits<std::int64_t>::max() / base)
      throw ArgumentError("ipow: overflow");
    r *= base;
  }
  return r;
}

// Compensated (Kahan) accumulator for long Monte Carlo sums.
struct Kahan {
  double sum = 0.0;
  double carry = 0.0;
  void add(double x) {
    double y = x - carry;
    double t = sum + y;
    carry = (t - sum) - y;
    sum = t;
  }
  double value() const { return sum; }
};

// 17 significant digits round-trip IEEE doubles exactly.
inline std::string fmt17(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return std::string(buf);
}

}  // namespace mescalc
