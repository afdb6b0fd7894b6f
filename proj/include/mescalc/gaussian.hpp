#pragma once
// Normalized Hermite polynomial algebra on n Gaussian variables, the
// Ornstein-Uhlenbeck operator U_rho, correlated Gaussian sampling, inner
// products under correlated measures, and multilinear truncation. The
// univariate polynomials are orthonormal under the standard Gaussian, so
// every norm here is a plain coefficient sum.

#include <map>
#include <vector>

#include "mescalc/common.hpp"
#include "mescalc/fourier.hpp"
#include "mescalc/rng.hpp"

namespace mescalc {

// H_r(x_i) values for r = 0..rmax via the normalized three-term recurrence
// H_{r+1}(x) = (x H_r(x) - sqrt(r) H_{r-1}(x)) / sqrt(r+1).
inline std::vector<double> hermite_table(int rmax, double x) {
  if (rmax < 0) throw ArgumentError("hermite_table: negative degree");
  std::vector<double> t(static_cast<std::size_t>(rmax) + 1);
  t[0] = 1.0;
  if (rmax >= 1) t[1] = x;
  for (int r = 1; r < rmax; ++r)
    t[r + 1] = (x * t[r] - std::sqrt(static_cast<double>(r)) * t[r - 1]) /
               std::sqrt(static_cast<double>(r) + 1.0);
  return t;
}

inline double hermite_value(int r, double x) { return hermite_table(r, x)[r]; }

inline double hermite_eval(const MultiIndex& tau, const VectorR& x) {
  if (static_cast<long>(tau.size()) != x.size())
    throw ArgumentError("hermite_eval: index/point length mismatch");
  double prod = 1.0;
  for (std::size_t i = 0; i < tau.size(); ++i) {
    if (tau[i] < 0) throw ArgumentError("hermite_eval: negative degree");
    if (tau[i] > 0) prod *= hermite_value(tau[i], x[static_cast<long>(i)]);
  }
  return prod;
}

class HermitePoly {
 public:
  HermitePoly() = default;
  explicit HermitePoly(int n) : n_(n) {
    if (n < 0) throw ArgumentError("HermitePoly: negative variable count");
  }

  int n() const { return n_; }

  double coeff(const MultiIndex& tau) const {
    check_index(tau);
    auto it = coeffs_.find(tau);
    return it == coeffs_.end() ? 0.0 : it->second;
  }

  void set_coeff(const MultiIndex& tau, double v) {
    check_index(tau);
    if (std::fabs(v) <= 1e-13)
      coeffs_.erase(tau);
    else
      coeffs_[tau] = v;
  }

  void add_coeff(const MultiIndex& tau, double v) {
    check_index(tau);
    auto it = coeffs_.find(tau);
    double nv = (it == coeffs_.end() ? 0.0 : it->second) + v;
    if (std::fabs(nv) <= 1e-13)
      coeffs_.erase(tau);
    else
      coeffs_[tau] = nv;
  }

  std::size_t term_count() const { return coeffs_.size(); }

  void for_each(
      const std::function<void(const MultiIndex&, double)>& fn) const {
    for (const auto& [tau, v] : coeffs_) fn(tau, v);
  }

  double norm2sq() const {
    Kahan acc;
    for (const auto& [tau, v] : coeffs_) acc.add(v * v);
    return acc.value();
  }

  double norm2() const { return std::sqrt(norm2sq()); }

  int degree() const {
    int d = 0;
    for (const auto& [tau, v] : coeffs_) {
      (void)v;
      d = std::max(d, sigma_wt(tau));
    }
    return d;
  }

  // influence of variable i: mass of coefficients with tau_i != 0
  double influence(int i) const {
    if (i < 0 || i >= n_) throw ArgumentError("HermitePoly: variable out of range");
    Kahan acc;
    for (const auto& [tau, v] : coeffs_)
      if (tau[static_cast<std::size_t>(i)] != 0) acc.add(v * v);
    return acc.value();
  }

  double eval(const VectorR& x) const {
    if (x.size() != n_) throw ArgumentError("HermitePoly: point length mismatch");
    // per-variable value tables up to the max degree seen in that slot
    std::vector<int> dmax(static_cast<std::size_t>(n_), 0);
    for (const auto& [tau, v] : coeffs_) {
      (void)v;
      for (std::size_t i = 0; i < tau.size(); ++i)
        dmax[i] = std::max(dmax[i], tau[i]);
    }
    std::vector<std::vector<double>> tables(static_cast<std::size_t>(n_));
    for (std::size_t i = 0; i < tables.size(); ++i)
      tables[i] = hermite_table(dmax[i], x[static_cast<long>(i)]);
    Kahan acc;
    for (const auto& [tau, v] : coeffs_) {
      double term = v;
      for (std::size_t i = 0; i < tau.size(); ++i)
        if (tau[i] != 0) term *= tables[i][static_cast<std::size_t>(tau[i])];
      acc.add(term);
    }
    return acc.value();
  }

  HermitePoly scaled(double c) const {
    HermitePoly out(n_);
    for (const auto& [tau, v] : coeffs_) out.set_coeff(tau, c * v);
    return out;
  }

  HermitePoly plus(const HermitePoly& other) const {
    if (other.n_ != n_) throw ArgumentError("HermitePoly: variable count mismatch");
    HermitePoly out = *this;
    for (const auto& [tau, v] : other.coeffs_) out.add_coeff(tau, v);
    return out;
  }

 private:
  void check_index(const MultiIndex& tau) const {
    if (static_cast<int>(tau.size()) != n_)
      throw ArgumentError("HermitePoly: index length mismatch");
    for (int d : tau)
      if (d < 0) throw ArgumentError("HermitePoly: negative degree");
  }

  int n_ = 0;
  std::map<MultiIndex, double> coeffs_;
};

inline HermitePoly hermite_monomial(int n, const MultiIndex& tau,
                                    double c = 1.0) {
  HermitePoly p(n);
  p.set_coeff(tau, c);
  return p;
}

// U_rho: coefficient of tau scales by rho^{wt(tau)}
inline HermitePoly ou_apply(const HermitePoly& p, double rho) {
  if (rho < 0.0 || rho > 1.0) throw ArgumentError("ou_apply: rho must be in [0,1]");
  HermitePoly out(p.n());
  p.for_each([&](const MultiIndex& tau, double v) {
    out.set_coeff(tau, std::pow(rho, sigma_wt(tau)) * v);
  });
  return out;
}

inline HermitePoly multilinear_truncate(const HermitePoly& p) {
  HermitePoly out(p.n());
  p.for_each([&](const MultiIndex& tau, double v) {
    for (int d : tau)
      if (d > 1) return;
    out.set_coeff(tau, v);
  });
  return out;
}

// keep coefficients with wt(tau) <= d
inline HermitePoly degree_truncate(const HermitePoly& p, int d) {
  if (d < 0) throw ArgumentError("degree_truncate: negative degree");
  HermitePoly out(p.n());
  p.for_each([&](const MultiIndex& tau, double v) {
    if (sigma_wt(tau) <= d) out.set_coeff(tau, v);
  });
  return out;
}

// ---------------------------------------------------------------------------
// correlated Gaussian measure

struct CorrelatedGaussianSpec {
  int n = 0;
  std::vector<double> rhos;

  CorrelatedGaussianSpec() = default;
  CorrelatedGaussianSpec(int n_, std::vector<double> rhos_)
      : n(n_), rhos(std::move(rhos_)) {
    if (n < 0 || static_cast<int>(rhos.size()) != n)
      throw ArgumentError("CorrelatedGaussianSpec: rho count mismatch");
    for (double r : rhos)
      if (r < 0.0 || r > 1.0)
        throw ArgumentError("CorrelatedGaussianSpec: rho must be in [0,1]");
  }

  static CorrelatedGaussianSpec constant(int n_, double rho) {
    return CorrelatedGaussianSpec(n_, std::vector<double>(n_, rho));
  }
};

struct GaussianPair {
  VectorR g;
  VectorR h;
};

// (g_i, h_i) jointly standard normal with covariance rho_i, generated as
// h_i = rho_i g_i + sqrt(1 - rho_i^2) * fresh; draw order is g_i then fresh_i.
inline GaussianPair sample_correlated(const CorrelatedGaussianSpec& spec,
                                      Rng& rng) {
  GaussianPair out;
  out.g = VectorR(spec.n);
  out.h = VectorR(spec.n);
  for (int i = 0; i < spec.n; ++i) {
    double gi = rng.normal();
    double fresh = rng.normal();
    double rho = spec.rhos[static_cast<std::size_t>(i)];
    out.g[i] = gi;
    out.h[i] = rho * gi + std::sqrt(std::max(0.0, 1.0 - rho * rho)) * fresh;
  }
  return out;
}

inline GaussianPair sample_correlated(const CorrelatedGaussianSpec& spec,
                                      std::uint64_t seed) {
  Rng rng(seed, 0x67617573ull);
  return sample_correlated(spec, rng);
}

// exact inner product E[p(g) q(h)] = sum_tau (prod_i rho_i^{tau_i}) p(tau) q(tau)
inline double gauss_inner(const HermitePoly& p, const HermitePoly& q,
                          const CorrelatedGaussianSpec& spec) {
  if (p.n() != q.n() || p.n() != spec.n)
    throw ArgumentError("gauss_inner: variable count mismatch");
  Kahan acc;
  p.for_each([&](const MultiIndex& tau, double pv) {
    double qv = q.coeff(tau);
    if (qv == 0.0) return;
    double w = 1.0;
    for (int i = 0; i < spec.n; ++i)
      if (tau[static_cast<std::size_t>(i)] != 0)
        w *= std::pow(spec.rhos[static_cast<std::size_t>(i)],
                      tau[static_cast<std::size_t>(i)]);
    acc.add(w * pv * qv);
  });
  return acc.value();
}

// Monte Carlo expectation of f(g, h) over the correlated measure; fixed
// chunking makes the result independent of the worker count.
inline McResult mc_expect(
    const std::function<double(const VectorR&, const VectorR&)>& f,
    const CorrelatedGaussianSpec& spec, std::int64_t samples,
    std::uint64_t seed) {
  return mc_run(samples, seed, 0x6d635f65ull, [&](Rng& rng) {
    GaussianPair s = sample_correlated(spec, rng);
    return f(s.g, s.h);
  });
}

}  // namespace mescalc
