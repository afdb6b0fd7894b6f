#pragma once
// Orthonormal operator bases of M_m and Fourier analysis over their tensor
// powers. A standard basis has Hermitian elements, element 0 = id, and
// <B_i, B_j> = delta_ij under the normalized trace inner product. Operators
// on n registers expand as P = sum_sigma P(sigma) B_{sigma_1} x ... x
// B_{sigma_n} with real coefficients exactly when P is Hermitian. For a
// multi-index sigma, |sigma| counts nonzero entries (the degree grading),
// wt(sigma) sums the entries, supp(sigma) is the set of nonzero positions.

#include <cstdint>
#include <functional>
#include <map>
#include <vector>

#include "mescalc/matspace.hpp"

namespace mescalc {

using MultiIndex = std::vector<int>;

inline int sigma_card(const MultiIndex& s) {
  int c = 0;
  for (int v : s)
    if (v != 0) ++c;
  return c;
}

inline int sigma_wt(const MultiIndex& s) {
  int w = 0;
  for (int v : s) w += v;
  return w;
}

inline std::vector<int> sigma_supp(const MultiIndex& s) {
  std::vector<int> r;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s[i] != 0) r.push_back(static_cast<int>(i));
  return r;
}

// ---------------------------------------------------------------------------
// standard bases

struct StandardBasis {
  int m = 0;
  std::vector<MatrixC> elems;  // m*m elements, elems[0] = id_m

  long size() const { return static_cast<long>(elems.size()); }

  void validate() const {
    if (m < 2) throw ArgumentError("StandardBasis: need m >= 2");
    if (size() != static_cast<long>(m) * m)
      throw PreconditionError("StandardBasis: expected m^2 elements");
    if ((elems[0] - MatrixC::Identity(m, m)).cwiseAbs().maxCoeff() > 1e-10)
      throw PreconditionError("StandardBasis: element 0 must be the identity");
    for (long i = 0; i < size(); ++i) {
      if (!is_hermitian(elems[i]))
        throw PreconditionError("StandardBasis: element " + std::to_string(i) +
                                " is not Hermitian");
      for (long j = i; j < size(); ++j) {
        double want = i == j ? 1.0 : 0.0;
        if (std::abs(inner_c(elems[i], elems[j]) - want) > 1e-10)
          throw PreconditionError("StandardBasis: elements " + std::to_string(i) +
                                  "," + std::to_string(j) + " not orthonormal");
      }
    }
  }
};

// Generalized Gell-Mann construction, deterministic order: identity, the
// sqrt(m/2)-scaled symmetric pairs E_jk + E_kj (j < k, lexicographic), the
// matching antisymmetric pairs i(E_kj - E_jk), then the diagonal generators
// sqrt(m/(l(l+1))) (E_00 + ... + E_{l-1,l-1} - l E_ll). For m = 2 this is
// exactly {I, X, Y, Z}.
inline StandardBasis gell_mann_basis(int m) {
  if (m < 2) throw ArgumentError("gell_mann_basis: need m >= 2");
  StandardBasis b;
  b.m = m;
  b.elems.push_back(MatrixC::Identity(m, m));
  double s = std::sqrt(m / 2.0);
  for (int j = 0; j < m; ++j)
    for (int k = j + 1; k < m; ++k) {
      MatrixC e = MatrixC::Zero(m, m);
      e(j, k) = s;
      e(k, j) = s;
      b.elems.push_back(e);
    }
  for (int j = 0; j < m; ++j)
    for (int k = j + 1; k < m; ++k) {
      MatrixC e = MatrixC::Zero(m, m);
      e(j, k) = cxd(0.0, -s);
      e(k, j) = cxd(0.0, s);
      b.elems.push_back(e);
    }
  for (int l = 1; l < m; ++l) {
    MatrixC e = MatrixC::Zero(m, m);
    double w = std::sqrt(static_cast<double>(m) / (static_cast<double>(l) * (l + 1)));
    for (int r = 0; r < l; ++r) e(r, r) = w;
    e(l, l) = -w * l;
    b.elems.push_back(e);
  }
  return b;
}

// New basis B'_i = sum_j R(j,i) B_j for i >= 1, element 0 kept as identity.
// R must be orthogonal on the traceless block, so orthonormality survives.
inline StandardBasis rotate_basis(const StandardBasis& b, const MatrixR& R) {
  long k = b.size() - 1;
  if (R.rows() != k || R.cols() != k)
    throw ArgumentError("rotate_basis: R must be (m^2-1) square");
  if ((R.transpose() * R - MatrixR::Identity(k, k)).cwiseAbs().maxCoeff() > 1e-9)
    throw PreconditionError("rotate_basis: R is not orthogonal");
  StandardBasis out;
  out.m = b.m;
  out.elems.resize(b.elems.size());
  out.elems[0] = b.elems[0];
  for (long i = 1; i <= k; ++i) {
    MatrixC e = MatrixC::Zero(b.m, b.m);
    for (long j = 1; j <= k; ++j) e += R(j - 1, i - 1) * b.elems[j];
    out.elems[i] = e;
  }
  return out;
}

// All n-fold tensor products B_sigma, indexed by the flat sigma value
// (big-endian digits, base m^2). Dense; meant for small register counts.
inline std::vector<MatrixC> build_tensor_elements(const StandardBasis& b, int n) {
  long total = ipow(static_cast<long>(b.m) * b.m, n);
  check_dim(ipow(b.m, n), "build_tensor_elements");
  std::vector<MatrixC> out;
  out.reserve(total);
  if (n == 0) {
    out.push_back(MatrixC::Identity(1, 1));
    return out;
  }
  std::vector<MatrixC> prev = build_tensor_elements(b, n - 1);
  for (const MatrixC& p : prev)
    for (long j = 0; j < b.size(); ++j) out.push_back(kron(p, b.elems[j]));
  return out;
}

// ---------------------------------------------------------------------------
// Fourier representation

enum class TruncMode { at_most, at_least, exactly };

class FourierRep {
 public:
  FourierRep() = default;

  FourierRep(const StandardBasis& basis, int n) : basis_(basis), n_(n) {
    if (n < 0) throw ArgumentError("FourierRep: negative register count");
    size_ = ipow(static_cast<long>(basis.m) * basis.m, n);
    dense_mode_ = n <= 6 && size_ <= (1l << 22);
    if (dense_mode_) dense_.assign(size_, 0.0);
  }

  const StandardBasis& basis() const { return basis_; }
  int n() const { return n_; }
  int m() const { return basis_.m; }
  long coeff_count() const { return size_; }

  MultiIndex decode(std::uint64_t flat) const {
    MultiIndex s(n_);
    long base = static_cast<long>(basis_.m) * basis_.m;
    for (int k = n_; k-- > 0;) {
      s[k] = static_cast<int>(flat % base);
      flat /= base;
    }
    return s;
  }

  std::uint64_t encode(const MultiIndex& s) const {
    if (static_cast<int>(s.size()) != n_)
      throw ArgumentError("FourierRep: multi-index length mismatch");
    long base = static_cast<long>(basis_.m) * basis_.m;
    std::uint64_t flat = 0;
    for (int v : s) {
      if (v < 0 || v >= base) throw ArgumentError("FourierRep: index out of range");
      flat = flat * base + static_cast<std::uint64_t>(v);
    }
    return flat;
  }

  double coeff_flat(std::uint64_t flat) const {
    if (dense_mode_) return dense_[flat];
    auto it = sparse_.find(flat);
    return it == sparse_.end() ? 0.0 : it->second;
  }

  double coeff(const MultiIndex& s) const { return coeff_flat(encode(s)); }

  void set_coeff_flat(std::uint64_t flat, double v) {
    if (dense_mode_) {
      dense_[flat] = v;
    } else if (std::fabs(v) <= 1e-13) {  // prune to keep supports stable
      sparse_.erase(flat);
    } else {
      sparse_[flat] = v;
    }
  }

  void set_coeff(const MultiIndex& s, double v) { set_coeff_flat(encode(s), v); }

  // Visit nonzero coefficients in increasing flat order.
  void for_each(const std::function<void(std::uint64_t, double)>& fn) const {
    if (dense_mode_) {
      for (long i = 0; i < size_; ++i)
        if (dense_[i] != 0.0) fn(static_cast<std::uint64_t>(i), dense_[i]);
    } else {
      for (const auto& [k, v] : sparse_) fn(k, v);
    }
  }

  double norm2sq() const {  // Parseval
    Kahan acc;
    for_each([&](std::uint64_t, double v) { acc.add(v * v); });
    return acc.value();
  }

  double variance() const {
    Kahan acc;
    for_each([&](std::uint64_t flat, double v) {
      if (flat != 0) acc.add(v * v);
    });
    return acc.value();
  }

  int degree() const {
    int d = 0;
    for_each([&](std::uint64_t flat, double) {
      int c = card_of_flat(flat);
      if (c > d) d = c;
    });
    return d;
  }

  double influence(int i) const {
    if (i < 0 || i >= n_) throw ArgumentError("influence: register out of range");
    long base = static_cast<long>(basis_.m) * basis_.m;
    std::uint64_t div = 1;
    for (int k = 0; k < n_ - 1 - i; ++k) div *= base;
    Kahan acc;
    for_each([&](std::uint64_t flat, double v) {
      if ((flat / div) % base != 0) acc.add(v * v);
    });
    return acc.value();
  }

  double total_influence() const {
    Kahan acc;
    for_each([&](std::uint64_t flat, double v) {
      acc.add(static_cast<double>(card_of_flat(flat)) * v * v);
    });
    return acc.value();
  }

  FourierRep truncated(TruncMode mode, int t) const {
    FourierRep out(basis_, n_);
    for_each([&](std::uint64_t flat, double v) {
      int c = card_of_flat(flat);
      bool keep = mode == TruncMode::at_most    ? c <= t
                  : mode == TruncMode::at_least ? c >= t
                                                : c == t;
      if (keep) out.set_coeff_flat(flat, v);
    });
    return out;
  }

  // Keep exactly the coefficients with supp(sigma) = S.
  FourierRep efron_stein(const std::vector<int>& S) const {
    std::vector<bool> in(n_, false);
    for (int i : S) {
      if (i < 0 || i >= n_) throw ArgumentError("efron_stein: register out of range");
      in[i] = true;
    }
    FourierRep out(basis_, n_);
    for_each([&](std::uint64_t flat, double v) {
      MultiIndex s = decode(flat);
      bool match = true;
      for (int k = 0; k < n_; ++k)
        if ((s[k] != 0) != in[k]) {
          match = false;
          break;
        }
      if (match) out.set_coeff_flat(flat, v);
    });
    return out;
  }

  FourierRep mapped(const std::function<double(const MultiIndex&, double)>& fn) const {
    FourierRep out(basis_, n_);
    for_each([&](std::uint64_t flat, double v) {
      out.set_coeff_flat(flat, fn(decode(flat), v));
    });
    return out;
  }

  FourierRep minus(const FourierRep& other) const {
    if (other.n_ != n_ || other.m() != m())
      throw ArgumentError("FourierRep::minus: shape mismatch");
    FourierRep out = *this;
    other.for_each([&](std::uint64_t flat, double v) {
      out.set_coeff_flat(flat, out.coeff_flat(flat) - v);
    });
    return out;
  }

  // P_S: average out the registers not in S; acts on the registers of S,
  // in their original order.
  HermitianOp partial_average(const std::vector<int>& S) const;

  HermitianOp reconstruct() const;

  static FourierRep expand(const HermitianOp& P, const StandardBasis& basis);

 private:
  int card_of_flat(std::uint64_t flat) const {
    long base = static_cast<long>(basis_.m) * basis_.m;
    int c = 0;
    for (int k = 0; k < n_; ++k) {
      if (flat % base != 0) ++c;
      flat /= base;
    }
    return c;
  }

  StandardBasis basis_;
  int n_ = 0;
  long size_ = 0;
  bool dense_mode_ = true;
  std::vector<double> dense_;
  std::map<std::uint64_t, double> sparse_;
};

// ---------------------------------------------------------------------------
// expand / reconstruct via register-wise transforms

namespace detail {

// Matrix entry layout -> per-register (row,col) pair layout and back.
// Matrix index (r, c) has digits r_k, c_k base m; the tensor index packs
// (r_k*m + c_k) base m^2, big-endian in k.
inline std::vector<cxd> matrix_to_pair_tensor(const MatrixC& M, int m, int n) {
  long D = ipow(m, n);
  std::vector<cxd> t(D * D);
  std::vector<long> rd(n), cd(n);
  for (long r = 0; r < D; ++r) {
    long x = r;
    for (int k = n; k-- > 0;) {
      rd[k] = x % m;
      x /= m;
    }
    for (long c = 0; c < D; ++c) {
      long y = c;
      for (int k = n; k-- > 0;) {
        cd[k] = y % m;
        y /= m;
      }
      std::uint64_t idx = 0;
      for (int k = 0; k < n; ++k)
        idx = idx * (m * m) + static_cast<std::uint64_t>(rd[k] * m + cd[k]);
      t[idx] = M(r, c);
    }
  }
  return t;
}

inline MatrixC pair_tensor_to_matrix(const std::vector<cxd>& t, int m, int n) {
  long D = ipow(m, n);
  MatrixC M(D, D);
  std::vector<long> rd(n), cd(n);
  for (long r = 0; r < D; ++r) {
    long x = r;
    for (int k = n; k-- > 0;) {
      rd[k] = x % m;
      x /= m;
    }
    for (long c = 0; c < D; ++c) {
      long y = c;
      for (int k = n; k-- > 0;) {
        cd[k] = y % m;
        y /= m;
      }
      std::uint64_t idx = 0;
      for (int k = 0; k < n; ++k)
        idx = idx * (m * m) + static_cast<std::uint64_t>(rd[k] * m + cd[k]);
      M(r, c) = t[idx];
    }
  }
  return M;
}

// Apply an s x s matrix W along axis k of a base-s big-endian tensor.
inline void apply_axis(std::vector<cxd>& t, const std::vector<cxd>& W, long s,
                       int n, int k) {
  long stride = 1;
  for (int j = k + 1; j < n; ++j) stride *= s;
  long block = stride * s;
  long total = static_cast<long>(t.size());
  std::vector<cxd> tmp(s);
  for (long b = 0; b < total; b += block) {
    for (long off = 0; off < stride; ++off) {
      for (long a = 0; a < s; ++a) {
        cxd acc = 0.0;
        for (long x = 0; x < s; ++x)
          acc += W[a * s + x] * t[b + x * stride + off];
        tmp[a] = acc;
      }
      for (long a = 0; a < s; ++a) t[b + a * stride + off] = tmp[a];
    }
  }
}

}  // namespace detail

inline FourierRep FourierRep::expand(const HermitianOp& P,
                                     const StandardBasis& basis) {
  if (P.m != basis.m)
    throw ArgumentError("expand: operator local dim does not match basis");
  int m = basis.m, n = P.n;
  long s = static_cast<long>(m) * m;
  // W[sigma][(r,c)] = conj(B_sigma(r,c)) / m
  std::vector<cxd> W(s * s);
  for (long a = 0; a < s; ++a)
    for (long r = 0; r < m; ++r)
      for (long c = 0; c < m; ++c)
        W[a * s + (r * m + c)] = std::conj(basis.elems[a](r, c)) / double(m);

  std::vector<cxd> t = detail::matrix_to_pair_tensor(P.mat, m, n);
  for (int k = 0; k < n; ++k) detail::apply_axis(t, W, s, n, k);

  FourierRep rep(basis, n);
  double scale = 0.0;
  for (const cxd& z : t) scale = std::max(scale, std::abs(z));
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (std::fabs(t[i].imag()) > 1e-9 * std::max(scale, 1.0))
      throw PreconditionError("expand: complex coefficient; input not Hermitian?");
    if (t[i].real() != 0.0)
      rep.set_coeff_flat(static_cast<std::uint64_t>(i), t[i].real());
  }
  return rep;
}

inline HermitianOp FourierRep::reconstruct() const {
  int m = basis_.m;
  long s = static_cast<long>(m) * m;
  check_dim(ipow(m, n_), "reconstruct");
  // V[(r,c)][sigma] = B_sigma(r,c)
  std::vector<cxd> V(s * s);
  for (long r = 0; r < m; ++r)
    for (long c = 0; c < m; ++c)
      for (long a = 0; a < s; ++a)
        V[(r * m + c) * s + a] = basis_.elems[a](r, c);

  std::vector<cxd> t(size_, cxd(0.0, 0.0));
  for_each([&](std::uint64_t flat, double v) { t[flat] = v; });
  for (int k = 0; k < n_; ++k) detail::apply_axis(t, V, s, n_, k);
  return HermitianOp(detail::pair_tensor_to_matrix(t, m, n_), m, n_);
}

inline HermitianOp FourierRep::partial_average(const std::vector<int>& S) const {
  std::vector<bool> in(n_, false);
  for (int i : S) {
    if (i < 0 || i >= n_) throw ArgumentError("partial_average: register out of range");
    if (in[i]) throw ArgumentError("partial_average: duplicate register");
    in[i] = true;
  }
  for (std::size_t k = 0; k + 1 < S.size(); ++k)
    if (S[k] >= S[k + 1])
      throw ArgumentError("partial_average: S must be strictly increasing");

  FourierRep sub(basis_, static_cast<int>(S.size()));
  for_each([&](std::uint64_t flat, double v) {
    MultiIndex sig = decode(flat);
    MultiIndex kept;
    bool outside_zero = true;
    for (int k = 0; k < n_; ++k) {
      if (in[k])
        kept.push_back(sig[k]);
      else if (sig[k] != 0)
        outside_zero = false;
    }
    if (outside_zero) sub.set_coeff(kept, v);
  });
  return sub.reconstruct();
}

}  // namespace mescalc
