#pragma once
// Bipartite states with uniform marginals, depolarizing noise, the Markov
// super-operator T(Q) = m_A Tr_B((id x Q) psi), correlation matrices in
// standard bases, basis alignment by SVD, and maximal correlation. The
// noisy maximally entangled state is (1-eps)|Psi><Psi| + eps (id/m)x(id/m)
// and has maximal correlation 1 - eps.

#include <vector>

#include "mescalc/fourier.hpp"
#include "mescalc/matspace.hpp"

namespace mescalc {

struct BipartiteState {
  int mA = 0;
  int mB = 0;
  MatrixC rho;  // on A x B, A the left kron factor

  long dim() const { return rho.rows(); }
};

// Validating constructor used by all state factories and file loaders.
inline BipartiteState make_bipartite(const MatrixC& rho, int mA, int mB) {
  if (mA < 2 || mB < 2) throw ArgumentError("make_bipartite: need local dims >= 2");
  long d = static_cast<long>(mA) * mB;
  check_dim(d, "make_bipartite");
  if (rho.rows() != d || rho.cols() != d)
    throw PreconditionError("make_bipartite: matrix dim does not match mA*mB");
  if (!is_hermitian(rho))
    throw PreconditionError("make_bipartite: state is not Hermitian");
  BipartiteState psi;
  psi.mA = mA;
  psi.mB = mB;
  psi.rho = 0.5 * (rho + rho.adjoint().eval());
  if (std::fabs(psi.rho.trace().real() - 1.0) > 1e-9)
    throw PreconditionError("make_bipartite: trace != 1");
  Eigen::SelfAdjointEigenSolver<MatrixC> es(psi.rho, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-10)
    throw PreconditionError("make_bipartite: state is not PSD (min eigenvalue " +
                            fmt17(es.eigenvalues().minCoeff()) + ")");
  std::vector<long> dims{mA, mB};
  MatrixC margA = partial_trace(psi.rho, dims, {1});
  MatrixC margB = partial_trace(psi.rho, dims, {0});
  if ((margA - MatrixC::Identity(mA, mA) / double(mA)).cwiseAbs().maxCoeff() > 1e-9 ||
      (margB - MatrixC::Identity(mB, mB) / double(mB)).cwiseAbs().maxCoeff() > 1e-9)
    throw PreconditionError("make_bipartite: marginals are not uniform");
  return psi;
}

inline BipartiteState noisy_mes(int m, double eps) {
  if (m < 2) throw ArgumentError("noisy_mes: need m >= 2");
  if (eps < 0.0 || eps > 1.0) throw ArgumentError("noisy_mes: eps must be in [0,1]");
  long d = static_cast<long>(m) * m;
  Eigen::VectorXcd v = Eigen::VectorXcd::Zero(d);
  for (int i = 0; i < m; ++i) v[static_cast<long>(i) * m + i] = 1.0 / std::sqrt(double(m));
  MatrixC rho = (1.0 - eps) * (v * v.adjoint()) +
                (eps / static_cast<double>(d)) * MatrixC::Identity(d, d);
  return make_bipartite(rho, m, m);
}

inline BipartiteState uniform_product(int mA, int mB) {
  long d = static_cast<long>(mA) * mB;
  return make_bipartite(MatrixC::Identity(d, d) / static_cast<double>(d), mA, mB);
}

// View psi1 (x) psi2 as one bipartite state on (A1 A2 | B1 B2).
inline BipartiteState tensor_bipartite(const BipartiteState& p1,
                                       const BipartiteState& p2) {
  MatrixC big = kron(p1.rho, p2.rho);  // order A1 B1 A2 B2
  std::vector<long> dims{p1.mA, p1.mB, p2.mA, p2.mB};
  MatrixC perm = permute_registers(big, dims, {0, 2, 1, 3});
  return make_bipartite(perm, p1.mA * p2.mA, p1.mB * p2.mB);
}

// Exchange the two sides; used to drive the B -> A Markov operator.
inline BipartiteState swap_sides(const BipartiteState& psi) {
  std::vector<long> dims{psi.mA, psi.mB};
  return make_bipartite(permute_registers(psi.rho, dims, {1, 0}), psi.mB, psi.mA);
}

// psi^{(x) n} reordered to (A registers | B registers). Dense; cap-checked.
inline MatrixC state_power_grouped(const BipartiteState& psi, int n) {
  long d = ipow(static_cast<long>(psi.mA) * psi.mB, n);
  check_dim(d, "state_power_grouped");
  if (n == 0) return MatrixC::Identity(1, 1);
  MatrixC big = MatrixC::Identity(1, 1);
  for (int i = 0; i < n; ++i) big = kron(big, psi.rho);
  std::vector<long> dims;
  for (int i = 0; i < n; ++i) {
    dims.push_back(psi.mA);
    dims.push_back(psi.mB);
  }
  std::vector<int> perm;
  for (int i = 0; i < n; ++i) perm.push_back(2 * i);
  for (int i = 0; i < n; ++i) perm.push_back(2 * i + 1);
  return permute_registers(big, dims, perm);
}

// ---------------------------------------------------------------------------
// depolarizing noise

// Apply Delta_rho(P) = rho P + (1-rho) (id/m (x) Tr_reg P) on each register in
// `regs` (all registers when empty). Scales Fourier coefficients by
// rho^(number of touched registers with nonzero index); unital, positivity
// preserving, operator-norm non-increasing.
inline HermitianOp depolarize(const HermitianOp& P, double rho,
                              std::vector<int> regs = {}) {
  if (rho < 0.0 || rho > 1.0) throw ArgumentError("depolarize: rho must be in [0,1]");
  if (regs.empty())
    for (int i = 0; i < P.n; ++i) regs.push_back(i);
  std::vector<long> dims(P.n, P.m);
  MatrixC cur = P.mat;
  for (int k : regs) {
    if (k < 0 || k >= P.n) throw ArgumentError("depolarize: register out of range");
    MatrixC traced = partial_trace(cur, dims, {k});
    // re-embed Tr_k(P)/m with identity on slot k
    std::vector<int> others;
    for (int i = 0; i < P.n; ++i)
      if (i != k) others.push_back(i);
    MatrixC avg = embed_registers(traced, others, P.m, P.n) / double(P.m);
    // embed_registers wants the operator on `others`; identity fills slot k
    cur = rho * cur + (1.0 - rho) * avg;
  }
  return HermitianOp(cur, P.m, P.n);
}

// ---------------------------------------------------------------------------
// correlation data and alignment

struct CorrelationData {
  MatrixR corr;            // entry (i,j) = Tr((A_i x B_j) psi), current bases
  VectorR singular_values; // c_0 = 1 first, then the nontrivial block's svals
  StandardBasis basisA;
  StandardBasis basisB;
};

inline CorrelationData corr_matrix(const BipartiteState& psi,
                                   const StandardBasis& basisA,
                                   const StandardBasis& basisB) {
  if (basisA.m != psi.mA || basisB.m != psi.mB)
    throw ArgumentError("corr_matrix: basis dims do not match state");
  long sA = basisA.size(), sB = basisB.size();
  MatrixR corr(sA, sB);
  for (long i = 0; i < sA; ++i)
    for (long j = 0; j < sB; ++j) {
      cxd v = (kron(basisA.elems[i], basisB.elems[j]) * psi.rho).trace();
      if (std::fabs(v.imag()) > 1e-9)
        throw PreconditionError("corr_matrix: complex correlation entry");
      corr(i, j) = v.real();
    }
  // uniform marginals force first row and column to e_0
  if (std::fabs(corr(0, 0) - 1.0) > 1e-9)
    throw PreconditionError("corr_matrix: corr(0,0) != 1");
  for (long i = 1; i < sA; ++i)
    if (std::fabs(corr(i, 0)) > 1e-9)
      throw PreconditionError("corr_matrix: first column is not e_0");
  for (long j = 1; j < sB; ++j)
    if (std::fabs(corr(0, j)) > 1e-9)
      throw PreconditionError("corr_matrix: first row is not e_0");

  CorrelationData data;
  data.corr = corr;
  data.basisA = basisA;
  data.basisB = basisB;
  Eigen::JacobiSVD<MatrixR> svd(corr.block(1, 1, sA - 1, sB - 1));
  const VectorR& sv = svd.singularValues();
  data.singular_values = VectorR(sv.size() + 1);
  data.singular_values[0] = 1.0;
  for (long k = 0; k < sv.size(); ++k) data.singular_values[k + 1] = sv[k];
  return data;
}

// Rotate the Gell-Mann bases so the correlation matrix becomes
// diag(1, c_1, c_2, ...). Sign convention: each left singular vector is
// flipped (together with its right partner) so its largest-magnitude entry
// is positive, making the output deterministic up to degenerate blocks.
inline CorrelationData aligned_bases(const BipartiteState& psi) {
  StandardBasis bA = gell_mann_basis(psi.mA);
  StandardBasis bB = gell_mann_basis(psi.mB);
  CorrelationData raw = corr_matrix(psi, bA, bB);
  long kA = bA.size() - 1, kB = bB.size() - 1;
  Eigen::JacobiSVD<MatrixR> svd(raw.corr.block(1, 1, kA, kB),
                                Eigen::ComputeFullU | Eigen::ComputeFullV);
  MatrixR U = svd.matrixU();
  MatrixR V = svd.matrixV();
  long npairs = std::min(kA, kB);
  for (long k = 0; k < kA; ++k) {
    long argmax = 0;
    U.col(k).cwiseAbs().maxCoeff(&argmax);
    if (U(argmax, k) < 0.0) {
      U.col(k) *= -1.0;
      if (k < npairs && k < kB) V.col(k) *= -1.0;
    }
  }
  for (long k = npairs; k < kB; ++k) {  // right vectors beyond the shared rank
    long argmax = 0;
    V.col(k).cwiseAbs().maxCoeff(&argmax);
    if (V(argmax, k) < 0.0) V.col(k) *= -1.0;
  }

  CorrelationData out;
  out.basisA = rotate_basis(bA, U);
  out.basisB = rotate_basis(bB, V);
  CorrelationData check = corr_matrix(psi, out.basisA, out.basisB);
  out.corr = check.corr;
  out.singular_values = VectorR(npairs + 1);
  out.singular_values[0] = 1.0;
  for (long k = 0; k < npairs; ++k)
    out.singular_values[k + 1] = svd.singularValues()[k];
  return out;
}

inline double max_correlation(const BipartiteState& psi) {
  StandardBasis bA = gell_mann_basis(psi.mA);
  StandardBasis bB = gell_mann_basis(psi.mB);
  CorrelationData data = corr_matrix(psi, bA, bB);
  double rho = data.singular_values.size() > 1 ? data.singular_values[1] : 0.0;
  if (rho > 1.0 + 1e-9)
    throw PreconditionError("max_correlation: correlation exceeds 1");
  return rho < 0.0 ? 0.0 : (rho > 1.0 ? 1.0 : rho);
}

// ---------------------------------------------------------------------------
// Markov super-operator

// T(Q) = m_A^n Tr_{B^n}((id x Q) psi^{(x) n}), computed register-wise: in
// any standard bases, T(B_j) = sum_i corr(i,j) A_i, and T tensorizes.
inline HermitianOp markov_T(const HermitianOp& Q, const BipartiteState& psi,
                            int n) {
  if (Q.m != psi.mB || Q.n != n)
    throw ArgumentError("markov_T: Q must live on B^n");
  check_dim(ipow(psi.mA, n), "markov_T");
  StandardBasis bA = gell_mann_basis(psi.mA);
  StandardBasis bB = gell_mann_basis(psi.mB);
  CorrelationData data = corr_matrix(psi, bA, bB);
  FourierRep qrep = FourierRep::expand(Q, bB);

  long sA = bA.size(), sB = bB.size();
  FourierRep out(bA, n);
  // contract one register at a time through corr; intermediate keys mix
  // A-digits (already converted) and B-digits (pending)
  std::map<std::uint64_t, double> cur;
  qrep.for_each([&](std::uint64_t flat, double v) { cur[flat] = v; });
  for (int k = n - 1; k >= 0; --k) {
    // digit k is converted in this pass; digits to its right are A-digits
    long radix_left = sB, radix_right = sA;
    std::uint64_t div = 1;
    for (int j = k + 1; j < n; ++j) div *= static_cast<std::uint64_t>(radix_right);
    std::map<std::uint64_t, double> nxt;
    for (const auto& [key, v] : cur) {
      std::uint64_t right = key % div;
      std::uint64_t rest = key / div;
      std::uint64_t j = rest % static_cast<std::uint64_t>(radix_left);
      std::uint64_t left = rest / static_cast<std::uint64_t>(radix_left);
      for (long i = 0; i < sA; ++i) {
        double w = data.corr(i, static_cast<long>(j));
        if (w == 0.0) continue;
        // digit k switches to radix sA once converted
        std::uint64_t nk = (left * static_cast<std::uint64_t>(radix_right) +
                            static_cast<std::uint64_t>(i)) * div + right;
        nxt[nk] += w * v;
      }
    }
    cur.swap(nxt);
  }
  for (const auto& [key, v] : cur) out.set_coeff_flat(key, v);
  return out.reconstruct();
}

// ---------------------------------------------------------------------------
// correlation values Tr((P x Q) psi^{(x) n})

inline double correlation_value_dense(const HermitianOp& P, const HermitianOp& Q,
                                      const BipartiteState& psi, int n) {
  if (P.m != psi.mA || Q.m != psi.mB || P.n != n || Q.n != n)
    throw ArgumentError("correlation_value: operator shapes do not match state");
  MatrixC grouped = state_power_grouped(psi, n);
  cxd v = (kron(P.mat, Q.mat) * grouped).trace();
  if (std::fabs(v.imag()) > 1e-9)
    throw PreconditionError("correlation_value: non-real value");
  return v.real();
}

// sum_sigma c_sigma P(sigma) Q(sigma) over aligned coefficients, where
// c_sigma is the product of per-register singular values.
inline double aligned_corr_sum(const FourierRep& P, const FourierRep& Q,
                               const VectorR& c) {
  if (P.n() != Q.n() || P.m() != Q.m())
    throw ArgumentError("aligned_corr_sum: shape mismatch");
  Kahan acc;
  P.for_each([&](std::uint64_t flat, double pv) {
    double qv = Q.coeff_flat(flat);
    if (qv == 0.0) return;
    MultiIndex s = P.decode(flat);
    double w = 1.0;
    for (int d : s) w *= c[d];
    acc.add(w * pv * qv);
  });
  return acc.value();
}

inline double correlation_value_fourier(const HermitianOp& P, const HermitianOp& Q,
                                        const CorrelationData& aligned, int n) {
  if (P.n != n || Q.n != n)
    throw ArgumentError("correlation_value: register count mismatch");
  FourierRep prep = FourierRep::expand(P, aligned.basisA);
  FourierRep qrep = FourierRep::expand(Q, aligned.basisB);
  return aligned_corr_sum(prep, qrep, aligned.singular_values);
}

inline double correlation_value(const HermitianOp& P, const HermitianOp& Q,
                                const BipartiteState& psi, int n) {
  long dense_dim = 1;
  bool fits = true;
  for (int i = 0; i < n && fits; ++i) {
    dense_dim *= static_cast<long>(psi.mA) * psi.mB;
    if (dense_dim > max_dim()) fits = false;
  }
  if (fits) return correlation_value_dense(P, Q, psi, n);
  return correlation_value_fourier(P, Q, aligned_bases(psi), n);
}

// ---------------------------------------------------------------------------
// hypercontractivity search (empirical verifier for the 2->4 bound)

struct HyperSearchResult {
  double threshold = 0.0;      // 1/sqrt(3 sqrt(m))
  double rho = 0.0;            // noise rate actually tested
  double best_sampled = 0.0;   // max ratio over random trials
  double best_refined = 0.0;   // after projected-gradient ascent
  long trials = 0;
  int refine_steps = 0;
};

inline double hyper_ratio(const HermitianOp& P, double rho) {
  HermitianOp d = depolarize(P, rho);
  double n2 = schatten_norm(P, 2.0);
  if (n2 <= 0.0) return 0.0;
  return schatten_norm(d, 4.0) / n2;
}

// Randomized search for the worst ratio ||Delta_rho(P)||_4 / ||P||_2,
// followed by projected gradient ascent from the best sample. The gradient
// of ||Delta_rho(P)||_4^4 at unit 2-norm is (4/dim) Delta_rho((Delta_rho P)^3).
inline HyperSearchResult hypercontractivity_search(int m, int n, double rho,
                                                   long trials,
                                                   std::uint64_t seed,
                                                   int refine_steps = 300) {
  if (trials < 1) throw ArgumentError("hypercontractivity_search: trials >= 1");
  HyperSearchResult res;
  res.threshold = 1.0 / std::sqrt(3.0 * std::sqrt(static_cast<double>(m)));
  res.rho = rho;
  res.trials = trials;
  res.refine_steps = refine_steps;

  std::int64_t nchunks = (trials + kMcChunk - 1) / kMcChunk;
  std::vector<double> best(nchunks, 0.0);
  std::vector<std::int64_t> best_idx(nchunks, -1);
  Rng base(seed, 0x68797065ull);
  parallel_chunks(trials, worker_count(),
                  [&](std::int64_t b, std::int64_t e, std::int64_t c) {
                    Rng rng = base.split(static_cast<std::uint64_t>(c));
                    for (std::int64_t i = b; i < e; ++i) {
                      HermitianOp P = random_hermitian(m, n, rng);
                      double r = hyper_ratio(P, rho);
                      if (r > best[c]) {
                        best[c] = r;
                        best_idx[c] = i - b;
                      }
                    }
                  });
  std::int64_t win_chunk = 0;
  for (std::int64_t c = 1; c < nchunks; ++c)
    if (best[c] > best[win_chunk]) win_chunk = c;
  res.best_sampled = best[win_chunk];

  // regenerate the winning sample deterministically
  Rng rng = base.split(static_cast<std::uint64_t>(win_chunk));
  HermitianOp bestP = identity_op(m, n);
  for (std::int64_t i = 0; i <= best_idx[win_chunk]; ++i)
    bestP = random_hermitian(m, n, rng);

  // projected gradient ascent on the unit 2-norm sphere
  double dim = static_cast<double>(bestP.dim());
  MatrixC P = bestP.mat / schatten_norm(bestP, 2.0);
  double cur = hyper_ratio(HermitianOp(P, m, n), rho);
  double step = 0.1;
  for (int it = 0; it < refine_steps && step > 1e-13; ++it) {
    HermitianOp ph(P, m, n);
    HermitianOp x = depolarize(ph, rho);
    MatrixC x3 = x.mat * x.mat * x.mat;
    MatrixC grad = depolarize(HermitianOp(x3, m, n), rho).mat * (4.0 / dim);
    // project onto the tangent space of the sphere ||P||_2 = 1
    double overlap = (grad.adjoint() * P).trace().real() / dim;
    MatrixC tangent = grad - overlap * P;
    MatrixC cand = P + step * tangent;
    HermitianOp ch(cand, m, n);
    cand /= schatten_norm(ch, 2.0);
    double r = hyper_ratio(HermitianOp(cand, m, n), rho);
    if (r > cur) {
      P = cand;
      cur = r;
      step *= 1.25;
    } else {
      step *= 0.5;
    }
  }
  res.best_refined = cur > res.best_sampled ? cur : res.best_sampled;
  return res;
}

}  // namespace mescalc
