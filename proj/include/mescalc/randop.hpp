#pragma once
// Random operators: matrices on h quantum registers whose coefficients in a
// standard tensor basis are Hermite polynomials in n Gaussian variables.
// Provides the exact 2-norm, Monte Carlo p-norms, the hybrid noise operator
// Gamma_rho (scaling by rho^{|sigma| + wt(tau)}), quantum-to-Gaussian
// substitution of registers, exact correlated expectations, sampled
// E Tr zeta, and Monte Carlo re-estimation of Hermite coefficients for
// objects that are no longer polynomials.

#include <map>
#include <vector>

#include "mescalc/fourier.hpp"
#include "mescalc/gaussian.hpp"
#include "mescalc/matfun.hpp"
#include "mescalc/matspace.hpp"
#include "mescalc/rng.hpp"

namespace mescalc {

inline VectorR gauss_vector(Rng& rng, int n) {
  VectorR g(n);
  for (int i = 0; i < n; ++i) g[i] = rng.normal();
  return g;
}

class RandomOperator {
 public:
  RandomOperator() = default;
  RandomOperator(int m, int h, int nvars, const StandardBasis& basis)
      : m_(m), h_(h), nvars_(nvars), basis_(basis) {
    if (h < 0 || nvars < 0)
      throw ArgumentError("RandomOperator: negative shape");
    if (basis.m != m) throw ArgumentError("RandomOperator: basis dim mismatch");
    check_dim(ipow(m, h), "RandomOperator");
  }

  int m() const { return m_; }
  int h() const { return h_; }
  int nvars() const { return nvars_; }
  long dim() const { return ipow(m_, h_); }
  const StandardBasis& basis() const { return basis_; }

  const HermitePoly& poly(const MultiIndex& sigma) const {
    check_sigma(sigma);
    auto it = coeffs_.find(sigma);
    if (it != coeffs_.end()) return it->second;
    if (zero_.n() != nvars_) zero_ = HermitePoly(nvars_);
    return zero_;
  }

  void set_poly(const MultiIndex& sigma, const HermitePoly& p) {
    check_sigma(sigma);
    if (p.n() != nvars_)
      throw ArgumentError("RandomOperator: polynomial variable count mismatch");
    if (p.term_count() == 0) {
      coeffs_.erase(sigma);
      return;
    }
    cache_elem(sigma);
    coeffs_[sigma] = p;
  }

  void add_term(const MultiIndex& sigma, const MultiIndex& tau, double v) {
    check_sigma(sigma);
    auto it = coeffs_.find(sigma);
    if (it == coeffs_.end()) {
      cache_elem(sigma);
      it = coeffs_.emplace(sigma, HermitePoly(nvars_)).first;
    }
    it->second.add_coeff(tau, v);
    if (it->second.term_count() == 0) coeffs_.erase(it);
  }

  void for_each_term(
      const std::function<void(const MultiIndex&, const HermitePoly&)>& fn)
      const {
    for (const auto& [sigma, p] : coeffs_) fn(sigma, p);
  }

  std::size_t term_count() const { return coeffs_.size(); }

  MatrixC eval_matrix(const VectorR& g) const {
    if (g.size() != nvars_)
      throw ArgumentError("RandomOperator: point length mismatch");
    long d = dim();
    MatrixC out = MatrixC::Zero(d, d);
    for (const auto& [sigma, p] : coeffs_)
      out += p.eval(g) * elems_.at(sigma);
    return out;
  }

  HermitianOp eval(const VectorR& g) const {
    return HermitianOp(eval_matrix(g), m_, h_);
  }

  // exact: basis elements and Hermite monomials are orthonormal
  double n2sq() const {
    Kahan acc;
    for (const auto& [sigma, p] : coeffs_) acc.add(p.norm2sq());
    return acc.value();
  }
  double n2() const { return std::sqrt(n2sq()); }

  int poly_degree() const {
    int d = 0;
    for (const auto& [sigma, p] : coeffs_) d = std::max(d, p.degree());
    return d;
  }

  // max over terms of |sigma| + wt(tau); the degree the noise operator sees
  int total_degree() const {
    int d = 0;
    for (const auto& [sigma, p] : coeffs_) {
      int card = sigma_card(sigma);
      p.for_each([&](const MultiIndex& tau, double) {
        d = std::max(d, card + sigma_wt(tau));
      });
    }
    return d;
  }

 private:
  void check_sigma(const MultiIndex& sigma) const {
    if (static_cast<int>(sigma.size()) != h_)
      throw ArgumentError("RandomOperator: sigma length mismatch");
    long cap = static_cast<long>(m_) * m_;
    for (int b : sigma)
      if (b < 0 || b >= cap)
        throw ArgumentError("RandomOperator: basis index out of range");
  }

  void cache_elem(const MultiIndex& sigma) {
    if (elems_.count(sigma)) return;
    MatrixC e = MatrixC::Identity(1, 1);
    for (int b : sigma) e = kron(e, basis_.elems[static_cast<std::size_t>(b)]);
    elems_[sigma] = e;
  }

  int m_ = 2;
  int h_ = 0;
  int nvars_ = 0;
  StandardBasis basis_;
  std::map<MultiIndex, HermitePoly> coeffs_;
  std::map<MultiIndex, MatrixC> elems_;
  mutable HermitePoly zero_;
};

// Gamma_rho: coefficient of (sigma, tau) scales by rho^{|sigma| + wt(tau)}
inline RandomOperator gamma_apply(const RandomOperator& P, double rho) {
  if (rho < 0.0 || rho > 1.0)
    throw ArgumentError("gamma_apply: rho must be in [0,1]");
  RandomOperator out(P.m(), P.h(), P.nvars(), P.basis());
  P.for_each_term([&](const MultiIndex& sigma, const HermitePoly& p) {
    int card = sigma_card(sigma);
    HermitePoly q(P.nvars());
    p.for_each([&](const MultiIndex& tau, double v) {
      q.set_coeff(tau, std::pow(rho, card + sigma_wt(tau)) * v);
    });
    out.set_poly(sigma, q);
  });
  return out;
}

// drop terms with |sigma| + wt(tau) > d
inline RandomOperator truncate_total_degree(const RandomOperator& P, int d) {
  if (d < 0) throw ArgumentError("truncate_total_degree: negative degree");
  RandomOperator out(P.m(), P.h(), P.nvars(), P.basis());
  P.for_each_term([&](const MultiIndex& sigma, const HermitePoly& p) {
    int card = sigma_card(sigma);
    HermitePoly q(P.nvars());
    p.for_each([&](const MultiIndex& tau, double v) {
      if (card + sigma_wt(tau) <= d) q.set_coeff(tau, v);
    });
    out.set_poly(sigma, q);
  });
  return out;
}

struct NormEstimate {
  double value = 0.0;
  double std_error = 0.0;  // delta-method error of the p-th root
  McResult moment;         // raw Monte Carlo of the normalized p-th power
};

// Monte Carlo N_p(P) = (E |||P(g)|||_p^p)^{1/p} for p in {2, 4}
inline NormEstimate np_mc(const RandomOperator& P, int p, std::int64_t samples,
                          std::uint64_t seed) {
  if (p != 2 && p != 4) throw ArgumentError("np_mc: p must be 2 or 4");
  NormEstimate est;
  est.moment = mc_run(samples, seed, 0x6e705f6dull, [&](Rng& rng) {
    VectorR g = gauss_vector(rng, P.nvars());
    double nrm = schatten_norm(P.eval(g), static_cast<double>(p));
    return std::pow(nrm, p);
  });
  if (est.moment.mean > 0.0) {
    est.value = std::pow(est.moment.mean, 1.0 / p);
    est.std_error = est.value / (p * est.moment.mean) * est.moment.std_error;
  }
  return est;
}

// Replace the first k registers of a coefficient expansion by Gaussian
// variables: basis index b on register j becomes the variable g_{j,b}
// (index j (m^2 - 1) + b - 1), with index 0 contributing the constant 1.
// The map is a bijection on coefficients, so the 2-norm is unchanged.
inline RandomOperator hybrid_substitute(const FourierRep& M, int k) {
  int n = M.n();
  if (k < 0 || k > n) throw ArgumentError("hybrid_substitute: k out of range");
  int m = M.m();
  int per = m * m - 1;
  RandomOperator out(m, n - k, k * per, M.basis());
  M.for_each([&](std::uint64_t flat, double v) {
    MultiIndex sigma = M.decode(flat);
    MultiIndex rest(sigma.begin() + k, sigma.end());
    MultiIndex tau(static_cast<std::size_t>(k * per), 0);
    for (int j = 0; j < k; ++j)
      if (sigma[static_cast<std::size_t>(j)] != 0)
        tau[static_cast<std::size_t>(j * per +
                                     sigma[static_cast<std::size_t>(j)] - 1)] = 1;
    out.add_term(rest, tau, v);
  });
  return out;
}

// ---------------------------------------------------------------------------
// joint expectations

struct JointRandomOperators {
  RandomOperator P;
  RandomOperator Q;
  CorrelatedGaussianSpec spec;
};

namespace detail {
inline void require_same_basis(const StandardBasis& a, const StandardBasis& b,
                               const char* where) {
  if (a.m != b.m || a.elems.size() != b.elems.size())
    throw ArgumentError(std::string(where) + ": basis shape mismatch");
  for (std::size_t i = 0; i < a.elems.size(); ++i)
    if ((a.elems[i] - b.elems[i]).cwiseAbs().maxCoeff() > 1e-9)
      throw ArgumentError(std::string(where) +
                          ": bases differ beyond tolerance");
}
}  // namespace detail

// E over the correlated Gaussians and the shared state of the two-sided
// correlation: sum_sigma (prod_k c_{sigma_k}) <p_sigma, q_sigma>_{G_rho}.
// The operators must be expanded in the state's aligned bases.
inline double expect_corr(const JointRandomOperators& J,
                          const CorrelationData& aligned) {
  if (J.P.h() != J.Q.h())
    throw ArgumentError("expect_corr: register count mismatch");
  if (J.P.nvars() != J.Q.nvars() || J.P.nvars() != J.spec.n)
    throw ArgumentError("expect_corr: variable count mismatch");
  detail::require_same_basis(J.P.basis(), aligned.basisA, "expect_corr");
  detail::require_same_basis(J.Q.basis(), aligned.basisB, "expect_corr");
  const VectorR& c = aligned.singular_values;
  Kahan acc;
  J.P.for_each_term([&](const MultiIndex& sigma, const HermitePoly& p) {
    const HermitePoly& q = J.Q.poly(sigma);
    if (q.term_count() == 0) return;
    double w = 1.0;
    for (int b : sigma) {
      if (b >= c.size()) {
        w = 0.0;
        break;
      }
      w *= c[b];
    }
    if (w == 0.0) return;
    acc.add(w * gauss_inner(p, q, J.spec));
  });
  return acc.value();
}

inline double expect_corr(const JointRandomOperators& J,
                          const BipartiteState& psi) {
  return expect_corr(J, aligned_bases(psi));
}

// ---------------------------------------------------------------------------
// composed (dimension-reduced) operators

// Evaluates the base operator at M x / ||x||_2 (or M x when normalization is
// off). Not a polynomial in x, so only sampled functionals apply downstream.
struct ComposedRandomOperator {
  RandomOperator base;
  MatrixR map;  // base.nvars() x n_in
  bool normalize_input = true;

  int n_in() const { return static_cast<int>(map.cols()); }

  void validate() const {
    if (map.rows() != base.nvars())
      throw DimensionError("ComposedRandomOperator: map rows != base variables");
    if (map.cols() < 1)
      throw DimensionError("ComposedRandomOperator: need at least one input");
  }

  MatrixC eval_matrix(const VectorR& x) const {
    if (x.size() != map.cols())
      throw ArgumentError("ComposedRandomOperator: point length mismatch");
    VectorR y = map * x;
    if (normalize_input) {
      double nrm = x.norm();
      if (nrm <= 0.0)
        throw DomainError("ComposedRandomOperator: zero input cannot be normalized");
      y /= nrm;
    }
    return base.eval_matrix(y);
  }

  HermitianOp eval(const VectorR& x) const {
    return HermitianOp(eval_matrix(x), base.m(), base.h());
  }
};

// ---------------------------------------------------------------------------
// sampled spectral functionals

inline McResult expect_tr_zeta_fn(
    const std::function<MatrixC(const VectorR&)>& eval_matrix, int nvars,
    int m, int h, std::int64_t samples, std::uint64_t seed) {
  return mc_run(samples, seed, 0x7a657461ull, [&](Rng& rng) {
    VectorR g = gauss_vector(rng, nvars);
    HermitianOp op(eval_matrix(g), m, h);
    return zeta(op).trace_value;
  });
}

inline McResult expect_tr_zeta(const RandomOperator& P, std::int64_t samples,
                               std::uint64_t seed) {
  return expect_tr_zeta_fn(
      [&](const VectorR& g) { return P.eval_matrix(g); }, P.nvars(), P.m(),
      P.h(), samples, seed);
}

inline McResult expect_tr_zeta(const ComposedRandomOperator& C,
                               std::int64_t samples, std::uint64_t seed) {
  C.validate();
  return expect_tr_zeta_fn(
      [&](const VectorR& x) { return C.eval_matrix(x); }, C.n_in(),
      C.base.m(), C.base.h(), samples, seed);
}

// ---------------------------------------------------------------------------
// Hermite coefficient re-estimation

inline std::vector<MultiIndex> enumerate_wt_at_most(int n, int d) {
  if (n < 0 || d < 0) throw ArgumentError("enumerate_wt_at_most: bad shape");
  std::vector<MultiIndex> out;
  MultiIndex cur(static_cast<std::size_t>(n), 0);
  std::function<void(int, int)> rec = [&](int pos, int left) {
    if (pos == n) {
      out.push_back(cur);
      return;
    }
    for (int v = 0; v <= left; ++v) {
      cur[static_cast<std::size_t>(pos)] = v;
      rec(pos + 1, left - v);
    }
    cur[static_cast<std::size_t>(pos)] = 0;
  };
  rec(0, d);
  return out;
}

struct HermiteEstimate {
  RandomOperator op;
  // per-coefficient standard errors, aligned with (sigma, tau) lookups
  std::map<std::pair<MultiIndex, MultiIndex>, double> std_errors;
  std::int64_t samples = 0;
};

// Recover Hermite coefficients <B_sigma (x) H_tau, F> for wt(tau) <= d by
// Monte Carlo against an arbitrary evaluator (used after dimension
// reduction, where the object is no longer a polynomial). One shared sample
// stream covers every coefficient.
inline HermiteEstimate estimate_hermite(
    const std::function<MatrixC(const VectorR&)>& eval_matrix, int m, int h,
    const StandardBasis& basis, int nvars, int max_degree,
    std::int64_t samples, std::uint64_t seed) {
  std::vector<MultiIndex> taus = enumerate_wt_at_most(nvars, max_degree);
  std::vector<MatrixC> elems = build_tensor_elements(basis, h);
  long d = ipow(m, h);
  long ncoef = static_cast<long>(taus.size()) * static_cast<long>(elems.size());

  McVecResult mc = mc_run_vec(
      samples, seed, 0x68657374ull, ncoef,
      [&](Rng& rng, std::vector<double>& out) {
        VectorR g = gauss_vector(rng, nvars);
        MatrixC F = eval_matrix(g);
        std::vector<double> proj(elems.size());
        for (std::size_t s = 0; s < elems.size(); ++s)
          proj[s] = (elems[s] * F).trace().real() / static_cast<double>(d);
        std::vector<double> hval(taus.size());
        for (std::size_t t = 0; t < taus.size(); ++t)
          hval[t] = hermite_eval(taus[t], g);
        long idx = 0;
        for (std::size_t s = 0; s < elems.size(); ++s)
          for (std::size_t t = 0; t < taus.size(); ++t)
            out[static_cast<std::size_t>(idx++)] = proj[s] * hval[t];
      });

  HermiteEstimate est;
  est.samples = samples;
  est.op = RandomOperator(m, h, nvars, basis);
  FourierRep shape(basis, h);  // for decoding flat sigma indices
  long idx = 0;
  for (std::size_t s = 0; s < elems.size(); ++s) {
    MultiIndex sigma = shape.decode(static_cast<std::uint64_t>(s));
    for (std::size_t t = 0; t < taus.size(); ++t) {
      double v = mc.means[static_cast<std::size_t>(idx)];
      double se = mc.std_errors[static_cast<std::size_t>(idx)];
      ++idx;
      if (std::fabs(v) > 1e-13) {
        est.op.add_term(sigma, taus[t], v);
        est.std_errors[{sigma, taus[t]}] = se;
      }
    }
  }
  return est;
}

}  // namespace mescalc
