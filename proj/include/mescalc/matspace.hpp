#pragma once
// Dense operators on (C^m)^{tensor n} with the normalized trace inner
// product <P,Q> = Tr(P^dag Q)/dim and the matching Schatten norms. The
// normalized p-norm of M is ((1/dim) sum_i s_i^p)^(1/p) over singular
// values; the unnormalized one drops the 1/dim. Register utilities
// (partial trace, permutation, embedding) index the n tensor factors
// left to right, register 0 being the leftmost kron factor.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mescalc/common.hpp"
#include "mescalc/rng.hpp"

namespace mescalc {

inline constexpr double kHermRelTol = 1e-10;   // relative hermiticity tolerance
inline constexpr double kHermAbsFloor = 1e-12; // absolute floor for tiny matrices

inline double herm_defect(const MatrixC& M) {
  return (M - M.adjoint()).cwiseAbs().maxCoeff();
}

inline bool is_hermitian(const MatrixC& M, double rel_tol = kHermRelTol) {
  if (M.rows() != M.cols()) return false;
  double scale = M.cwiseAbs().maxCoeff();
  return herm_defect(M) <= std::max(rel_tol * scale, kHermAbsFloor);
}

// Hermitian operator on n registers of local dimension m (dim = m^n).
// Construction validates shape and hermiticity, then symmetrizes so the
// stored matrix is exactly self-adjoint for downstream eigensolves.
struct HermitianOp {
  int m = 0;
  int n = 0;
  MatrixC mat;

  HermitianOp() = default;

  HermitianOp(const MatrixC& M, int m_, int n_) : m(m_), n(n_) {
    if (m_ < 1 || n_ < 0) throw ArgumentError("HermitianOp: need m >= 1, n >= 0");
    long d = ipow(m_, n_);
    check_dim(d, "HermitianOp");
    if (M.rows() != d || M.cols() != d)
      throw PreconditionError("HermitianOp: matrix is " + std::to_string(M.rows()) +
                              "x" + std::to_string(M.cols()) + ", expected " +
                              std::to_string(d) + "^2 for m=" + std::to_string(m_) +
                              ", n=" + std::to_string(n_));
    if (!is_hermitian(M))
      throw PreconditionError("HermitianOp: input is not Hermitian within tolerance");
    mat = 0.5 * (M + M.adjoint().eval());
  }

  long dim() const { return mat.rows(); }
};

inline HermitianOp identity_op(int m, int n) {
  return HermitianOp(MatrixC::Identity(ipow(m, n), ipow(m, n)), m, n);
}

// ---------------------------------------------------------------------------
// spectral decomposition and spectral functions

struct Spectral {
  VectorR eigenvalues;  // non-increasing
  MatrixC vectors;      // column k pairs with eigenvalues[k]
};

inline Spectral spectral_decompose(const HermitianOp& P) {
  Eigen::SelfAdjointEigenSolver<MatrixC> es(P.mat);
  if (es.info() != Eigen::Success)
    throw SingularError("spectral_decompose: eigensolver failed to converge");
  long d = P.dim();
  Spectral s;
  s.eigenvalues = VectorR(d);
  s.vectors = MatrixC(d, d);
  for (long k = 0; k < d; ++k) {  // Eigen sorts ascending; flip to non-increasing
    s.eigenvalues[k] = es.eigenvalues()[d - 1 - k];
    s.vectors.col(k) = es.eigenvectors().col(d - 1 - k);
  }
  return s;
}

// Apply a scalar function to the spectrum. Throws DomainError if f produces
// a non-finite value on any eigenvalue.
inline HermitianOp matrix_fn(const HermitianOp& P,
                             const std::function<double(double)>& f,
                             const char* what = "matrix_fn") {
  Spectral s = spectral_decompose(P);
  VectorR fe(s.eigenvalues.size());
  for (long k = 0; k < fe.size(); ++k) {
    double v = f(s.eigenvalues[k]);
    if (!std::isfinite(v))
      throw DomainError(std::string(what) + ": function not finite at eigenvalue " +
                        fmt17(s.eigenvalues[k]));
    fe[k] = v;
  }
  MatrixC M = s.vectors * fe.asDiagonal() * s.vectors.adjoint();
  return HermitianOp(M, P.m, P.n);
}

inline HermitianOp pos_part(const HermitianOp& P) {
  return matrix_fn(P, [](double x) { return x > 0.0 ? x : 0.0; }, "pos_part");
}

inline HermitianOp abs_op(const HermitianOp& P) {
  return matrix_fn(P, [](double x) { return std::fabs(x); }, "abs_op");
}

inline HermitianOp sqrt_psd(const HermitianOp& P, double neg_tol = 1e-10) {
  return matrix_fn(
      P,
      [neg_tol](double x) {
        if (x < -neg_tol) return std::numeric_limits<double>::quiet_NaN();
        return std::sqrt(x > 0.0 ? x : 0.0);
      },
      "sqrt_psd");
}

// Moore-Penrose inverse with spectral cutoff |lambda| <= 1e-12 * max|lambda|.
inline HermitianOp pseudo_inverse(const HermitianOp& P) {
  Spectral s = spectral_decompose(P);
  double scale = 0.0;
  for (long k = 0; k < s.eigenvalues.size(); ++k)
    scale = std::max(scale, std::fabs(s.eigenvalues[k]));
  double cut = 1e-12 * scale;
  VectorR inv(s.eigenvalues.size());
  for (long k = 0; k < inv.size(); ++k) {
    double x = s.eigenvalues[k];
    inv[k] = std::fabs(x) <= cut ? 0.0 : 1.0 / x;
  }
  return HermitianOp(s.vectors * inv.asDiagonal() * s.vectors.adjoint(), P.m, P.n);
}

// ---------------------------------------------------------------------------
// norms and inner products

enum class Normalization { normalized, unnormalized };

inline double norm_from_singvals(const VectorR& s, double p, Normalization kind,
                                 long dim) {
  if (p < 1.0) throw ArgumentError("schatten norm: need p >= 1");
  if (std::isinf(p)) return s.size() == 0 ? 0.0 : s.maxCoeff();
  double acc = 0.0;
  for (long k = 0; k < s.size(); ++k) acc += std::pow(s[k], p);
  if (kind == Normalization::normalized) acc /= static_cast<double>(dim);
  return std::pow(acc, 1.0 / p);
}

inline double schatten_norm(const MatrixC& M, double p,
                            Normalization kind = Normalization::normalized) {
  if (M.rows() != M.cols()) throw ArgumentError("schatten_norm: matrix not square");
  Eigen::JacobiSVD<MatrixC> svd(M);
  return norm_from_singvals(svd.singularValues(), p, kind, M.rows());
}

// Hermitian fast path: singular values are |eigenvalues|.
inline double schatten_norm(const HermitianOp& P, double p,
                            Normalization kind = Normalization::normalized) {
  Eigen::SelfAdjointEigenSolver<MatrixC> es(P.mat, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success)
    throw SingularError("schatten_norm: eigensolver failed to converge");
  VectorR s = es.eigenvalues().cwiseAbs();
  return norm_from_singvals(s, p, kind, P.dim());
}

inline double norm2(const HermitianOp& P) { return schatten_norm(P, 2.0); }

inline double op_norm(const HermitianOp& P) {
  return schatten_norm(P, std::numeric_limits<double>::infinity());
}

inline cxd inner_c(const MatrixC& P, const MatrixC& Q) {
  if (P.rows() != Q.rows() || P.cols() != Q.cols())
    throw ArgumentError("inner_c: shape mismatch");
  return (P.adjoint() * Q).trace() / static_cast<double>(P.rows());
}

// Normalized inner product of Hermitian operators; real by symmetry.
inline double inner(const HermitianOp& P, const HermitianOp& Q) {
  return inner_c(P.mat, Q.mat).real();
}

// ---------------------------------------------------------------------------
// small algebra helpers

inline MatrixC kron(const MatrixC& A, const MatrixC& B) {
  MatrixC R(A.rows() * B.rows(), A.cols() * B.cols());
  for (long i = 0; i < A.rows(); ++i)
    for (long j = 0; j < A.cols(); ++j)
      R.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
  return R;
}

inline MatrixC kron_pow(const MatrixC& A, int n) {
  MatrixC R = MatrixC::Identity(1, 1);
  for (int i = 0; i < n; ++i) R = kron(R, A);
  return R;
}

inline MatrixC anticommutator(const MatrixC& P, const MatrixC& Q) {
  return P * Q + Q * P;
}

inline MatrixC hadamard_product(const MatrixC& A, const MatrixC& B) {
  if (A.rows() != B.rows() || A.cols() != B.cols())
    throw ArgumentError("hadamard_product: shape mismatch");
  return A.cwiseProduct(B);
}

// ---------------------------------------------------------------------------
// register utilities (mixed-radix index juggling)

namespace detail {

inline void decompose_index(long idx, const std::vector<long>& dims,
                            std::vector<long>& digits) {
  digits.resize(dims.size());
  for (std::size_t k = dims.size(); k-- > 0;) {
    digits[k] = idx % dims[k];
    idx /= dims[k];
  }
}

inline long compose_index(const std::vector<long>& digits,
                          const std::vector<long>& dims) {
  long idx = 0;
  for (std::size_t k = 0; k < dims.size(); ++k) idx = idx * dims[k] + digits[k];
  return idx;
}

}  // namespace detail

// Trace out the registers listed in `traced`; remaining registers keep their
// relative order.
inline MatrixC partial_trace(const MatrixC& M, const std::vector<long>& dims,
                             const std::vector<int>& traced) {
  long D = 1;
  for (long d : dims) D *= d;
  if (M.rows() != D || M.cols() != D)
    throw ArgumentError("partial_trace: dims do not match matrix size");
  std::vector<bool> is_traced(dims.size(), false);
  for (int t : traced) {
    if (t < 0 || t >= static_cast<int>(dims.size()))
      throw ArgumentError("partial_trace: register index out of range");
    if (is_traced[t]) throw ArgumentError("partial_trace: duplicate register");
    is_traced[t] = true;
  }
  std::vector<int> kept;
  for (std::size_t k = 0; k < dims.size(); ++k)
    if (!is_traced[k]) kept.push_back(static_cast<int>(k));

  std::vector<long> kept_dims, traced_dims;
  for (int k : kept) kept_dims.push_back(dims[k]);
  long DK = 1, DT = 1;
  for (long d : kept_dims) DK *= d;
  for (std::size_t k = 0; k < dims.size(); ++k)
    if (is_traced[k]) {
      traced_dims.push_back(dims[k]);
      DT *= dims[k];
    }

  MatrixC R = MatrixC::Zero(DK, DK);
  std::vector<long> rk, ck, tt, full_r(dims.size()), full_c(dims.size());
  for (long r = 0; r < DK; ++r) {
    detail::decompose_index(r, kept_dims, rk);
    for (long c = 0; c < DK; ++c) {
      detail::decompose_index(c, kept_dims, ck);
      cxd acc = 0.0;
      for (long t = 0; t < DT; ++t) {
        detail::decompose_index(t, traced_dims, tt);
        std::size_t ik = 0, it = 0;
        for (std::size_t k = 0; k < dims.size(); ++k) {
          if (is_traced[k]) {
            full_r[k] = tt[it];
            full_c[k] = tt[it];
            ++it;
          } else {
            full_r[k] = rk[ik];
            full_c[k] = ck[ik];
            ++ik;
          }
        }
        acc += M(detail::compose_index(full_r, dims),
                 detail::compose_index(full_c, dims));
      }
      R(r, c) = acc;
    }
  }
  return R;
}

// Reorder tensor factors: new slot j holds old register perm[j].
inline MatrixC permute_registers(const MatrixC& M, const std::vector<long>& dims,
                                 const std::vector<int>& perm) {
  if (perm.size() != dims.size())
    throw ArgumentError("permute_registers: perm size mismatch");
  std::vector<bool> seen(dims.size(), false);
  for (int p : perm) {
    if (p < 0 || p >= static_cast<int>(dims.size()) || seen[p])
      throw ArgumentError("permute_registers: perm is not a permutation");
    seen[p] = true;
  }
  long D = 1;
  for (long d : dims) D *= d;
  if (M.rows() != D || M.cols() != D)
    throw ArgumentError("permute_registers: dims do not match matrix size");

  std::vector<long> new_dims(dims.size());
  for (std::size_t j = 0; j < perm.size(); ++j) new_dims[j] = dims[perm[j]];

  // old row index for each new row index
  std::vector<long> map(D);
  std::vector<long> nd, od(dims.size());
  for (long r = 0; r < D; ++r) {
    detail::decompose_index(r, new_dims, nd);
    for (std::size_t j = 0; j < perm.size(); ++j) od[perm[j]] = nd[j];
    map[r] = detail::compose_index(od, dims);
  }
  MatrixC R(D, D);
  for (long r = 0; r < D; ++r)
    for (long c = 0; c < D; ++c) R(r, c) = M(map[r], map[c]);
  return R;
}

// Place X (acting on the sorted register subset `slots` of an n-register
// space, local dimension m) into the full space, identity elsewhere.
inline MatrixC embed_registers(const MatrixC& X, const std::vector<int>& slots,
                               int m, int n) {
  long dx = ipow(m, static_cast<int>(slots.size()));
  if (X.rows() != dx || X.cols() != dx)
    throw ArgumentError("embed_registers: operator size does not match slots");
  for (std::size_t k = 0; k + 1 < slots.size(); ++k)
    if (slots[k] >= slots[k + 1])
      throw ArgumentError("embed_registers: slots must be strictly increasing");
  if (!slots.empty() && (slots.front() < 0 || slots.back() >= n))
    throw ArgumentError("embed_registers: slot out of range");

  long drest = ipow(m, n - static_cast<int>(slots.size()));
  MatrixC big = kron(X, MatrixC::Identity(drest, drest));
  // current factor order: slots..., then the remaining registers ascending
  std::vector<int> order(slots.begin(), slots.end());
  std::vector<bool> used(n, false);
  for (int s : slots) used[s] = true;
  for (int k = 0; k < n; ++k)
    if (!used[k]) order.push_back(k);
  // perm for permute_registers: new slot j (register j) = position of j in order
  std::vector<int> pos(n);
  for (int j = 0; j < n; ++j) pos[order[j]] = j;
  std::vector<int> perm(n);
  for (int j = 0; j < n; ++j) perm[j] = pos[j];
  std::vector<long> dims(n, m);
  return permute_registers(big, dims, perm);
}

// ---------------------------------------------------------------------------
// random test matter

// GUE-style random Hermitian, entries O(1).
inline HermitianOp random_hermitian(int m, int n, Rng& rng) {
  long d = ipow(m, n);
  MatrixC M(d, d);
  for (long i = 0; i < d; ++i) {
    M(i, i) = cxd(rng.normal(), 0.0);
    for (long j = i + 1; j < d; ++j) {
      cxd z(rng.normal() * 0.5, rng.normal() * 0.5);
      M(i, j) = z;
      M(j, i) = std::conj(z);
    }
  }
  return HermitianOp(M, m, n);
}

inline HermitianOp random_psd(int m, int n, Rng& rng) {
  HermitianOp H = random_hermitian(m, n, rng);
  MatrixC M = H.mat * H.mat.adjoint();
  M /= static_cast<double>(M.rows());
  return HermitianOp(M, m, n);
}

}  // namespace mescalc
