#pragma once
// Spectral penalty functions zeta and its C^2 smoothing zeta_lambda, PSD and
// sub-POVM rounding, the Lyapunov solver, the Hadamard-type maps ell and
// kappa, and closed-form Frechet derivatives for the spectral functions the
// rounding analysis needs. Tr zeta(M) is the squared (unnormalized) 2-norm
// distance from M to the PSD cone.

#include <string>
#include <vector>

#include "mescalc/matspace.hpp"

namespace mescalc {

inline double zeta_scalar(double x) { return x <= 0.0 ? x * x : 0.0; }

// piecewise-cubic smoothing; C^2, equals zeta outside (-lambda, lambda),
// and |zeta_lambda - zeta| <= lambda^2/3 everywhere
inline double zeta_lambda_scalar(double x, double lambda) {
  if (lambda <= 0.0) throw ArgumentError("zeta_lambda: lambda must be positive");
  if (x <= -lambda) return x * x + lambda * lambda / 3.0;
  if (x >= lambda) return 0.0;
  double t = lambda - x;
  return t * t * t / (6.0 * lambda);
}

struct ZetaParams {
  double lambda = 0.0;

  explicit ZetaParams(double l) : lambda(l) {
    if (l <= 0.0) throw ArgumentError("ZetaParams: lambda must be positive");
  }
};

struct ZetaResult {
  double trace_value = 0.0;  // unnormalized trace
  HermitianOp matrix;
};

inline ZetaResult zeta(const HermitianOp& H) {
  ZetaResult r;
  r.matrix = matrix_fn(H, zeta_scalar, "zeta");
  r.trace_value = r.matrix.mat.trace().real();
  if (r.trace_value < 0.0) r.trace_value = 0.0;
  return r;
}

inline ZetaResult zeta_lambda(const HermitianOp& H, double lambda) {
  ZetaParams params(lambda);
  ZetaResult r;
  r.matrix = matrix_fn(
      H, [lambda](double x) { return zeta_lambda_scalar(x, lambda); },
      "zeta_lambda");
  r.trace_value = r.matrix.mat.trace().real();
  if (r.trace_value < 0.0) r.trace_value = 0.0;
  return r;
}

// nearest PSD operator in 2-norm
inline HermitianOp round_to_psd(const HermitianOp& H) { return pos_part(H); }

// ---------------------------------------------------------------------------
// sub-POVM rounding

struct SubPovm {
  std::vector<HermitianOp> elements;

  void validate() const {
    if (elements.empty()) throw PreconditionError("SubPovm: no elements");
    long d = elements[0].dim();
    MatrixC sum = MatrixC::Zero(d, d);
    for (const HermitianOp& e : elements) {
      if (e.dim() != d) throw DimensionError("SubPovm: mixed dimensions");
      Spectral s = spectral_decompose(e);
      if (s.eigenvalues.minCoeff() < -1e-9)
        throw PreconditionError("SubPovm: element not PSD (min eigenvalue " +
                                fmt17(s.eigenvalues.minCoeff()) + ")");
      sum += e.mat;
    }
    Eigen::SelfAdjointEigenSolver<MatrixC> es(sum, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().maxCoeff() > 1.0 + 1e-9)
      throw PreconditionError("SubPovm: elements sum above identity (max " +
                              fmt17(es.eigenvalues().maxCoeff()) + ")");
  }
};

// L(X) = (sqrt(Y+) pos(X_1) sqrt(Y+), ...) with Y = sum of pos parts. The
// input must sum to the identity unless relax_sum is set; the output always
// satisfies the sub-POVM constraints because sqrt(Y+) Y sqrt(Y+) is an
// orthogonal projection.
inline SubPovm round_sub_povm(const std::vector<HermitianOp>& X,
                              bool relax_sum = false, double sum_tol = 1e-8) {
  if (X.empty()) throw ArgumentError("round_sub_povm: empty input");
  long d = X[0].dim();
  MatrixC total = MatrixC::Zero(d, d);
  for (const HermitianOp& x : X) {
    if (x.dim() != d) throw DimensionError("round_sub_povm: mixed dimensions");
    total += x.mat;
  }
  if (!relax_sum) {
    double dev = (total - MatrixC::Identity(d, d)).cwiseAbs().maxCoeff();
    if (dev > sum_tol)
      throw PreconditionError("round_sub_povm: input sums " + fmt17(dev) +
                              " away from identity; pass relax_sum to override");
  }

  std::vector<HermitianOp> pos(X.size());
  MatrixC ysum = MatrixC::Zero(d, d);
  for (std::size_t i = 0; i < X.size(); ++i) {
    pos[i] = pos_part(X[i]);
    ysum += pos[i].mat;
  }
  HermitianOp Y(ysum, X[0].m, X[0].n);
  Spectral s = spectral_decompose(Y);
  double cut = 1e-12 * std::max(1.0, std::fabs(s.eigenvalues.maxCoeff()));
  VectorR isqrt(s.eigenvalues.size());
  for (long k = 0; k < isqrt.size(); ++k)
    isqrt[k] = s.eigenvalues[k] > cut ? 1.0 / std::sqrt(s.eigenvalues[k]) : 0.0;
  MatrixC S = s.vectors * isqrt.asDiagonal() * s.vectors.adjoint();

  SubPovm out;
  out.elements.reserve(X.size());
  for (std::size_t i = 0; i < X.size(); ++i)
    out.elements.emplace_back(S * pos[i].mat * S, X[i].m, X[i].n);
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Lyapunov equation and the Hadamard-type maps

// unique X with PX + XP = Q; in P's eigenbasis X'_ij = Q'_ij / (d_i + d_j)
inline HermitianOp lyapunov_solve(const HermitianOp& P, const HermitianOp& Q) {
  if (P.dim() != Q.dim()) throw DimensionError("lyapunov_solve: shape mismatch");
  Spectral s = spectral_decompose(P);
  MatrixC qp = s.vectors.adjoint() * Q.mat * s.vectors;
  long d = P.dim();
  MatrixC xp(d, d);
  for (long i = 0; i < d; ++i)
    for (long j = 0; j < d; ++j) {
      double den = s.eigenvalues[i] + s.eigenvalues[j];
      if (std::fabs(den) <= 1e-10)
        throw SingularError("lyapunov_solve: eigenvalue sum " + fmt17(den) +
                            " makes the equation singular");
      xp(i, j) = qp(i, j) / den;
    }
  return HermitianOp(s.vectors * xp * s.vectors.adjoint(), P.m, P.n);
}

// ell_Q(P): entries Q'_ij (a_i + a_j)/(|a_i| + |a_j|) in P's eigenbasis;
// requires P invertible. Equals the Lyapunov solution L(|P|, PQ + QP).
inline HermitianOp ell(const HermitianOp& P, const HermitianOp& Q) {
  if (P.dim() != Q.dim()) throw DimensionError("ell: shape mismatch");
  Spectral s = spectral_decompose(P);
  for (long k = 0; k < s.eigenvalues.size(); ++k)
    if (std::fabs(s.eigenvalues[k]) <= 1e-10)
      throw SingularError("ell: singular P (eigenvalue " +
                          fmt17(s.eigenvalues[k]) + ")");
  MatrixC qp = s.vectors.adjoint() * Q.mat * s.vectors;
  long d = P.dim();
  MatrixC rp(d, d);
  for (long i = 0; i < d; ++i)
    for (long j = 0; j < d; ++j) {
      double ai = s.eigenvalues[i], aj = s.eigenvalues[j];
      rp(i, j) = qp(i, j) * (ai + aj) / (std::fabs(ai) + std::fabs(aj));
    }
  return HermitianOp(s.vectors * rp * s.vectors.adjoint(), P.m, P.n);
}

// kappa_Q(P): entries Q'_ij (a_i + a_j)^2/(|a_i| + |a_j|), with 0/0 -> 0
inline HermitianOp kappa(const HermitianOp& P, const HermitianOp& Q) {
  if (P.dim() != Q.dim()) throw DimensionError("kappa: shape mismatch");
  Spectral s = spectral_decompose(P);
  MatrixC qp = s.vectors.adjoint() * Q.mat * s.vectors;
  long d = P.dim();
  MatrixC rp(d, d);
  for (long i = 0; i < d; ++i)
    for (long j = 0; j < d; ++j) {
      double ai = s.eigenvalues[i], aj = s.eigenvalues[j];
      double den = std::fabs(ai) + std::fabs(aj);
      rp(i, j) = den == 0.0 ? 0.0 : qp(i, j) * (ai + aj) * (ai + aj) / den;
    }
  return HermitianOp(s.vectors * rp * s.vectors.adjoint(), P.m, P.n);
}

// ---------------------------------------------------------------------------
// Frechet derivatives

enum class FrechetKind { square, sqrt, abs, x_abs_x, pos_square };

inline const char* frechet_kind_name(FrechetKind k) {
  switch (k) {
    case FrechetKind::square: return "square";
    case FrechetKind::sqrt: return "sqrt";
    case FrechetKind::abs: return "abs";
    case FrechetKind::x_abs_x: return "x_abs_x";
    case FrechetKind::pos_square: return "pos_square";
  }
  return "?";
}

// General divided-difference derivative of a C^1 spectral function:
// (Df(P)[Q])'_ij = f[a_i, a_j] Q'_ij with the first divided difference,
// switching to f'(a_i) when |a_i - a_j| <= 1e-9 max|a|.
inline HermitianOp frechet_divided_difference(
    const HermitianOp& P, const HermitianOp& Q,
    const std::function<double(double)>& f,
    const std::function<double(double)>& fprime) {
  if (P.dim() != Q.dim())
    throw DimensionError("frechet_divided_difference: shape mismatch");
  Spectral s = spectral_decompose(P);
  double scale = 0.0;
  for (long k = 0; k < s.eigenvalues.size(); ++k)
    scale = std::max(scale, std::fabs(s.eigenvalues[k]));
  double collide = 1e-9 * scale;
  MatrixC qp = s.vectors.adjoint() * Q.mat * s.vectors;
  long d = P.dim();
  MatrixC rp(d, d);
  for (long i = 0; i < d; ++i)
    for (long j = 0; j < d; ++j) {
      double ai = s.eigenvalues[i], aj = s.eigenvalues[j];
      double dd = std::fabs(ai - aj) <= collide
                      ? fprime(ai)
                      : (f(ai) - f(aj)) / (ai - aj);
      rp(i, j) = qp(i, j) * dd;
    }
  return HermitianOp(s.vectors * rp * s.vectors.adjoint(), P.m, P.n);
}

// Closed forms: D(P^2)[Q] = {P,Q}; Dsqrt solves the Lyapunov equation
// sqrt(P) X + X sqrt(P) = Q; D|P|[Q] = ell_Q(P); D(P|P|)[Q] =
// ({|P|,Q} + kappa_Q(P))/2; and pos(x)^2 = (x^2 + x|x|)/2 combines them.
inline HermitianOp frechet(FrechetKind kind, const HermitianOp& P,
                           const HermitianOp& Q) {
  if (P.dim() != Q.dim()) throw DimensionError("frechet: shape mismatch");
  switch (kind) {
    case FrechetKind::square:
      return HermitianOp(anticommutator(P.mat, Q.mat), P.m, P.n);
    case FrechetKind::sqrt: {
      Spectral s = spectral_decompose(P);
      if (s.eigenvalues.minCoeff() <= 1e-10)
        throw DomainError("frechet(sqrt): P must be positive definite");
      return lyapunov_solve(sqrt_psd(P), Q);
    }
    case FrechetKind::abs:
      return ell(P, Q);
    case FrechetKind::x_abs_x: {
      MatrixC term = anticommutator(abs_op(P).mat, Q.mat) + kappa(P, Q).mat;
      return HermitianOp(0.5 * term, P.m, P.n);
    }
    case FrechetKind::pos_square: {
      MatrixC term = 0.5 * anticommutator(P.mat, Q.mat) +
                     0.25 * anticommutator(abs_op(P).mat, Q.mat) +
                     0.25 * kappa(P, Q).mat;
      return HermitianOp(term, P.m, P.n);
    }
  }
  throw ArgumentError("frechet: unknown kind");
}

// ---------------------------------------------------------------------------
// Taylor remainder diagnostics for Tr zeta_lambda

struct TaylorReport {
  double remainder = 0.0;        // |second-order Taylor residual|
  double smooth_scale = 0.0;     // ||Q||_2 ||Q||_4^2 / lambda
  double smooth_ratio = 0.0;     // remainder / smooth_scale
  double additivity_diff = 0.0;  // |Tr zeta(P+Q) - Tr zeta(P)|
  double additivity_bound = 0.0; // 2(||P||_2 ||Q||_2 + ||Q||_2^2)
  double additivity_ratio = 0.0;
};

// Second-order Taylor residual of s -> Tr zeta_lambda(P + sQ) at s=0..1 with
// derivatives from central differences, plus the non-smooth zeta difference
// against its additivity bound. All norms unnormalized.
inline TaylorReport tr_zeta_lambda_taylor_check(const HermitianOp& P,
                                                const HermitianOp& Q,
                                                double lambda) {
  ZetaParams params(lambda);
  auto phi = [&](double t) {
    HermitianOp M(P.mat + t * Q.mat, P.m, P.n);
    return zeta_lambda(M, lambda).trace_value;
  };
  double h = 1e-4;
  double p0 = phi(0.0);
  double d1 = (phi(h) - phi(-h)) / (2.0 * h);
  double d2 = (phi(h) - 2.0 * p0 + phi(-h)) / (h * h);
  TaylorReport rep;
  rep.remainder = std::fabs(phi(1.0) - p0 - d1 - 0.5 * d2);

  double q2 = schatten_norm(Q, 2.0, Normalization::unnormalized);
  double q4 = schatten_norm(Q, 4.0, Normalization::unnormalized);
  double p2 = schatten_norm(P, 2.0, Normalization::unnormalized);
  rep.smooth_scale = q2 * q4 * q4 / lambda;
  rep.smooth_ratio = rep.smooth_scale > 0.0 ? rep.remainder / rep.smooth_scale : 0.0;

  double za = zeta(HermitianOp(P.mat + Q.mat, P.m, P.n)).trace_value;
  double zb = zeta(P).trace_value;
  rep.additivity_diff = std::fabs(za - zb);
  rep.additivity_bound = 2.0 * (p2 * q2 + q2 * q2);
  rep.additivity_ratio =
      rep.additivity_bound > 0.0 ? rep.additivity_diff / rep.additivity_bound : 0.0;
  return rep;
}

}  // namespace mescalc
