// Acceptance gate: eleven numbered end-to-end checks, each printing a single
// PASS/FAIL line with its measured quantities and wall-clock budget. Run with
// a number 1-11 to execute one check, or with no arguments to run them all.
// Exit status is zero only when every executed check passes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <tuple>
#include <vector>

#include "mescalc/channels.hpp"
#include "mescalc/fourier.hpp"
#include "mescalc/games.hpp"
#include "mescalc/matfun.hpp"
#include "mescalc/pipeline.hpp"
#include "mescalc/randop.hpp"

using namespace mescalc;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void note(const std::string& s) {
    if (!detail.empty()) detail += "; ";
    detail += s;
  }
  void require(bool ok, const std::string& why) {
    if (ok) return;
    pass = false;
    note(why);
  }
};

std::string num(double v, const char* fmt = "%.4g") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, v);
  return buf;
}

// ---------------------------------------------------------------------------
// 1: maximal correlation of the depolarized MES equals 1 - eps

Outcome crit_max_correlation() {
  Outcome out;
  double worst = 0.0;
  for (int m : {2, 3})
    for (double eps : {0.0, 0.1, 0.3, 0.7, 1.0}) {
      double got = max_correlation(noisy_mes(m, eps));
      worst = std::max(worst, std::fabs(got - (1.0 - eps)));
    }
  out.note("max |rho - (1 - eps)| = " + num(worst) + " over 10 (m, eps) pairs");
  out.require(worst <= 1e-8, "tolerance 1e-8 exceeded");
  return out;
}

// ---------------------------------------------------------------------------
// 2: the maximal correlation of a tensor power matches the single copy

Outcome crit_tensor_power() {
  Outcome out;
  BipartiteState psi = noisy_mes(2, 0.25);
  double one = max_correlation(psi);
  double two = max_correlation(tensor_bipartite(psi, psi));
  out.note("rho = " + num(one, "%.12g") + ", squared-system rho = " +
           num(two, "%.12g") + ", gap = " + num(std::fabs(two - one)));
  out.require(std::fabs(two - one) <= 1e-6, "tolerance 1e-6 exceeded");
  return out;
}

// ---------------------------------------------------------------------------
// 3: Parseval, reconstruction, orthogonal decomposition, influence identities

Outcome crit_fourier_identities() {
  Outcome out;
  Rng rng(301);
  const std::vector<std::pair<int, int>> shapes = {{2, 1}, {2, 2}, {2, 3},
                                                   {3, 1}, {3, 2}, {3, 3}};
  double worst = 0.0;
  int degree_violations = 0;
  for (int inst = 0; inst < 200; ++inst) {
    auto [m, n] = shapes[static_cast<std::size_t>(inst) % shapes.size()];
    StandardBasis b = gell_mann_basis(m);
    HermitianOp P = random_hermitian(m, n, rng);
    HermitianOp Q = random_hermitian(m, n, rng);
    FourierRep rp = FourierRep::expand(P, b);
    FourierRep rq = FourierRep::expand(Q, b);

    double n2 = schatten_norm(P, 2.0);
    worst = std::max(worst, std::fabs(rp.norm2sq() - n2 * n2));
    worst = std::max(worst,
                     (rp.reconstruct().mat - P.mat).cwiseAbs().maxCoeff());

    // support pieces partition the operator and have orthogonal ranges
    std::vector<HermitianOp> parts_p, parts_q;
    MatrixC acc = MatrixC::Zero(P.mat.rows(), P.mat.cols());
    for (int mask = 0; mask < (1 << n); ++mask) {
      std::vector<int> S;
      for (int i = 0; i < n; ++i)
        if (mask & (1 << i)) S.push_back(i);
      parts_p.push_back(rp.efron_stein(S).reconstruct());
      parts_q.push_back(rq.efron_stein(S).reconstruct());
      acc += parts_p.back().mat;
    }
    worst = std::max(worst, (acc - P.mat).cwiseAbs().maxCoeff());
    for (std::size_t a = 0; a < parts_p.size(); ++a)
      for (std::size_t c = 0; c < parts_q.size(); ++c) {
        if (a == c) continue;
        worst = std::max(worst, std::fabs(inner(parts_p[a], parts_q[c])));
      }

    // influences against the variance-operator oracle
    FourierRep rpp =
        FourierRep::expand(HermitianOp(P.mat.adjoint() * P.mat, m, n), b);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      std::vector<int> rest;
      for (int k = 0; k < n; ++k)
        if (k != i) rest.push_back(k);
      MatrixC a1 = rpp.partial_average(rest).mat;
      MatrixC a2 = rp.partial_average(rest).mat;
      MatrixC var = a1 - a2.adjoint() * a2;
      double oracle =
          var.trace().real() / static_cast<double>(var.rows());
      worst = std::max(worst, std::fabs(rp.influence(i) - oracle));
      total += rp.influence(i);
    }
    worst = std::max(worst, std::fabs(rp.total_influence() - total));
    if (rp.total_influence() > rp.degree() * rp.norm2sq() + 1e-9)
      ++degree_violations;
  }
  out.note("200 operators, max identity deviation = " + num(worst));
  out.require(worst <= 1e-9, "tolerance 1e-9 exceeded");
  out.require(degree_violations == 0,
              std::to_string(degree_violations) +
                  " total-influence degree bound violations");
  return out;
}

// ---------------------------------------------------------------------------
// 4: depolarizing 2->4 contraction at the critical noise rate

Outcome crit_depolarizing_contraction() {
  Outcome out;
  double worst = 0.0;
  for (int m : {2, 3}) {
    double rho = 1.0 / std::sqrt(3.0 * std::sqrt(static_cast<double>(m)));
    for (int n : {1, 2, 3}) {
      HyperSearchResult res = hypercontractivity_search(
          m, n, rho, 10000, 1000u * static_cast<unsigned>(m) + static_cast<unsigned>(n), 300);
      worst = std::max(worst, res.best_refined);
    }
  }
  out.note("max refined 2->4 ratio over 6 shapes at rho = 1/sqrt(3 sqrt(m)): " +
           num(worst, "%.12g"));
  out.require(worst <= 1.0 + 1e-9, "ratio above 1 + 1e-9");
  return out;
}

// ---------------------------------------------------------------------------
// 5: random-operator 2->4 contraction under the hybrid noise operator

Outcome crit_random_operator_contraction() {
  Outcome out;
  Rng rng(505);
  std::vector<std::tuple<int, int, int>> shapes;
  for (int m : {2, 3})
    for (int h : {0, 1, 2})
      for (int nv : {1, 2, 3}) shapes.push_back({m, h, nv});
  int violations = 0;
  double worst_ratio = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    auto [m, h, nv] = shapes[static_cast<std::size_t>(inst) % shapes.size()];
    StandardBasis basis = gell_mann_basis(m);
    RandomOperator P(m, h, nv, basis);
    long nsigma = ipow(m * m, h);
    for (long s = 0; s < nsigma; ++s) {
      MultiIndex sigma(static_cast<std::size_t>(h), 0);
      long rem = s;
      for (int k = 0; k < h; ++k) {
        sigma[static_cast<std::size_t>(k)] = static_cast<int>(rem % (m * m));
        rem /= m * m;
      }
      for (int mask = 0; mask < (1 << nv); ++mask) {
        MultiIndex tau(static_cast<std::size_t>(nv), 0);
        for (int k = 0; k < nv; ++k) tau[static_cast<std::size_t>(k)] = (mask >> k) & 1;
        if (rng.uniform() < 0.4) P.add_term(sigma, tau, rng.normal());
      }
    }
    if (P.n2sq() == 0.0)
      P.add_term(MultiIndex(static_cast<std::size_t>(h), 0),
                 MultiIndex(static_cast<std::size_t>(nv), 0), 1.0);

    double rho = 1.0 / std::sqrt(3.0 * std::sqrt(static_cast<double>(m)));
    NormEstimate np4 = np_mc(gamma_apply(P, rho), 4, 100000,
                             7000u + static_cast<unsigned>(inst));
    double n2 = P.n2();
    if (np4.value > n2 + 5.0 * np4.std_error) ++violations;
    worst_ratio = std::max(worst_ratio, np4.value / n2);
  }
  out.note("100 operators, max N4/N2 = " + num(worst_ratio, "%.8g") +
           ", violations = " + std::to_string(violations));
  out.require(violations == 0, "contraction gate exceeded");
  return out;
}

// ---------------------------------------------------------------------------
// 6: sub-POVM rounding distance bound on exactly-summing triples

Outcome crit_rounding_distance() {
  Outcome out;
  Rng rng(601);
  const double t = 3.0;
  int violations = 0;
  double worst_slack = -1e300;
  for (int inst = 0; inst < 1000; ++inst) {
    int n = 1 + inst % 3;
    long d = ipow(2, n);
    MatrixC id = MatrixC::Identity(d, d);
    HermitianOp g1 = random_hermitian(2, n, rng);
    HermitianOp g2 = random_hermitian(2, n, rng);
    std::vector<HermitianOp> xs = {
        HermitianOp(id / 3.0 + 0.3 * g1.mat, 2, n),
        HermitianOp(id / 3.0 + 0.3 * g2.mat, 2, n),
        HermitianOp(id / 3.0 - 0.3 * (g1.mat + g2.mat), 2, n)};
    SubPovm rounded = round_sub_povm(xs);
    double dist = 0.0, zsum = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      double dn = schatten_norm(
          HermitianOp(rounded.elements[i].mat - xs[i].mat, 2, n), 2.0);
      dist += dn * dn;
      zsum += zeta(xs[i]).trace_value;
    }
    double bound = 3.0 * (t + 1.0) / static_cast<double>(d) * zsum +
                   6.0 * std::sqrt(t / static_cast<double>(d) * zsum);
    if (dist > bound + 1e-12) ++violations;
    worst_slack = std::max(worst_slack, dist - bound);
  }
  out.note("1000 triples on dims 2, 4, 8; max dist - bound = " +
           num(worst_slack) + "; violations = " + std::to_string(violations));
  out.require(violations == 0, "distance bound violated");
  return out;
}

// ---------------------------------------------------------------------------
// 7: closed-form derivative maps vs finite differences, Lyapunov solver

HermitianOp with_spectrum(const std::vector<double>& eigs, Rng& rng) {
  int d = static_cast<int>(eigs.size());
  MatrixC a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = cxd(rng.normal(), rng.normal());
  Eigen::HouseholderQR<MatrixC> qr(a);
  MatrixC u = qr.householderQ();
  VectorR ev(d);
  for (int i = 0; i < d; ++i) ev[i] = eigs[static_cast<std::size_t>(i)];
  return HermitianOp(u * ev.asDiagonal() * u.adjoint(), 2, 1);
}

double fd_relative_gap(FrechetKind kind, const HermitianOp& p,
                       const HermitianOp& q,
                       const std::function<double(double)>& f) {
  HermitianOp closed = frechet(kind, p, q);
  double h = 1e-5;
  HermitianOp plus = matrix_fn(HermitianOp(p.mat + h * q.mat, p.m, p.n), f);
  HermitianOp minus = matrix_fn(HermitianOp(p.mat - h * q.mat, p.m, p.n), f);
  MatrixC fd = (plus.mat - minus.mat) / (2.0 * h);
  return (closed.mat - fd).norm() / std::max(1.0, closed.mat.norm());
}

Outcome crit_derivative_maps() {
  Outcome out;
  Rng rng(701);
  double worst_fd = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    HermitianOp q = random_hermitian(2, 1, rng);
    HermitianOp any = random_hermitian(2, 1, rng);
    worst_fd = std::max(worst_fd, fd_relative_gap(FrechetKind::square, any, q,
                                                  [](double x) { return x * x; }));
    HermitianOp pd(random_psd(2, 1, rng).mat + 0.5 * MatrixC::Identity(2, 2),
                   2, 1);
    worst_fd = std::max(worst_fd, fd_relative_gap(FrechetKind::sqrt, pd, q,
                                                  [](double x) { return std::sqrt(x); }));
    HermitianOp inv = with_spectrum({1.3, -0.8}, rng);
    worst_fd = std::max(worst_fd, fd_relative_gap(FrechetKind::abs, inv, q,
                                                  [](double x) { return std::fabs(x); }));
    worst_fd = std::max(worst_fd,
                        fd_relative_gap(FrechetKind::x_abs_x, inv, q,
                                        [](double x) { return x * std::fabs(x); }));
    worst_fd = std::max(worst_fd,
                        fd_relative_gap(FrechetKind::pos_square, inv, q,
                                        [](double x) {
                                          double p = x > 0.0 ? x : 0.0;
                                          return p * p;
                                        }));
  }

  double worst_res = 0.0, worst_int = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    HermitianOp p(random_psd(2, 1, rng).mat + 0.4 * MatrixC::Identity(2, 2),
                  2, 1);
    HermitianOp q = random_hermitian(2, 1, rng);
    HermitianOp x = lyapunov_solve(p, q);
    worst_res = std::max(
        worst_res,
        (p.mat * x.mat + x.mat * p.mat - q.mat).cwiseAbs().maxCoeff());

    // Simpson quadrature of int_0^T exp(-tP) Q exp(-tP) dt, tail cut at T=60
    double tmax = 60.0;
    int steps = 20000;
    double h = tmax / steps;
    MatrixC acc = MatrixC::Zero(2, 2);
    for (int k = 0; k <= steps; ++k) {
      double tk = k * h;
      HermitianOp e =
          matrix_fn(p, [tk](double v) { return std::exp(-tk * v); });
      double w = (k == 0 || k == steps) ? 1.0 : (k % 2 == 1 ? 4.0 : 2.0);
      acc += w * (e.mat * q.mat * e.mat);
    }
    acc *= h / 3.0;
    worst_int = std::max(worst_int, (x.mat - acc).cwiseAbs().maxCoeff());
  }
  out.note("max finite-difference gap = " + num(worst_fd) +
           " over 100 pairs x 5 kinds");
  out.note("max Lyapunov residual = " + num(worst_res) +
           ", max integral-oracle gap = " + num(worst_int) + " over 20 PSD");
  out.require(worst_fd <= 1e-5, "finite-difference tolerance 1e-5 exceeded");
  out.require(worst_res <= 1e-8, "residual tolerance 1e-8 exceeded");
  out.require(worst_int <= 1e-6, "integral tolerance 1e-6 exceeded");
  return out;
}

// ---------------------------------------------------------------------------
// 8: spectral penalty additivity bound and smoothing distance

Outcome crit_penalty_bounds() {
  Outcome out;
  Rng rng(801);
  const std::vector<std::pair<int, int>> shapes = {{2, 1}, {2, 2}, {3, 1}};
  int violations = 0;
  double worst_ratio = 0.0;
  for (int inst = 0; inst < 1000; ++inst) {
    auto [m, n] = shapes[static_cast<std::size_t>(inst) % shapes.size()];
    HermitianOp P = random_hermitian(m, n, rng);
    HermitianOp Q = random_hermitian(m, n, rng);
    TaylorReport rep = tr_zeta_lambda_taylor_check(P, Q, 0.1);
    if (rep.additivity_diff > rep.additivity_bound + 1e-12) ++violations;
    worst_ratio = std::max(worst_ratio, rep.additivity_ratio);
  }

  double worst_scaled = 0.0;
  int grid_violations = 0;
  for (double lambda : {1.0, 0.1, 0.01}) {
    double worst = 0.0;
    for (int k = 0; k < 10000; ++k) {
      double x = -3.0 + 6.0 * k / 9999.0;
      double exact = x < 0.0 ? x * x : 0.0;
      worst = std::max(worst, std::fabs(zeta_lambda_scalar(x, lambda) - exact));
    }
    if (worst > lambda * lambda / 2.0) ++grid_violations;
    worst_scaled = std::max(worst_scaled, worst / (lambda * lambda / 2.0));
  }
  out.note("1000 pairs, max additivity ratio = " + num(worst_ratio) +
           ", violations = " + std::to_string(violations));
  out.note("max smoothing gap / (lambda^2/2) = " + num(worst_scaled) +
           " on 10000-point grids");
  out.require(violations == 0, "additivity bound violated");
  out.require(grid_violations == 0, "smoothing distance above lambda^2/2");
  return out;
}

// ---------------------------------------------------------------------------
// 9: exactness anchors of the reconstruction and hybrid substitution

Outcome crit_reconstruction_anchors() {
  Outcome out;
  BipartiteState psi = noisy_mes(2, 0.3);
  CorrelationData aligned = aligned_bases(psi);
  double rho = aligned.singular_values[1];
  Rng rng(901);

  auto random_multilinear = [&](const StandardBasis& basis) {
    RandomOperator P(2, 1, 2, basis);
    for (int s = 0; s < 4; ++s)
      for (int mask = 0; mask < 4; ++mask) {
        MultiIndex sigma{s};
        MultiIndex tau{mask & 1, (mask >> 1) & 1};
        if (rng.uniform() < 0.6) P.add_term(sigma, tau, rng.normal());
      }
    if (P.n2sq() == 0.0) P.add_term({0}, {0, 0}, 1.0);
    return P;
  };

  double worst_n2 = 0.0, worst_corr = 0.0;
  int reconstruction_errors = 0;
  for (int inst = 0; inst < 50; ++inst) {
    JointRandomOperators J{random_multilinear(aligned.basisA),
                           random_multilinear(aligned.basisB),
                           CorrelatedGaussianSpec(2, {rho, rho})};
    try {
      FromRandomOp A = from_random_op(J.P);
      FromRandomOp B = from_random_op(J.Q);
      worst_n2 = std::max(worst_n2,
                          std::fabs(schatten_norm(A.op, 2.0) - J.P.n2()));
      worst_n2 = std::max(worst_n2,
                          std::fabs(schatten_norm(B.op, 2.0) - J.Q.n2()));
      double dense = aligned_corr_sum(A.rep, B.rep, aligned.singular_values);
      double expected = expect_corr(J, aligned);
      worst_corr = std::max(worst_corr, std::fabs(dense - expected));
      from_random(J, aligned);  // full path with its internal identity gates
    } catch (const Error&) {
      ++reconstruction_errors;
    }
  }

  // hybrid substitution is a coefficient bijection at every level
  StandardBasis b = gell_mann_basis(2);
  double worst_hyb = 0.0;
  for (int inst = 0; inst < 10; ++inst) {
    FourierRep M(b, 3);
    for (std::uint64_t flat = 0; flat < 64; ++flat)
      if (rng.uniform() < 0.5) M.set_coeff_flat(flat, rng.normal());
    for (int k = 0; k <= 3; ++k)
      worst_hyb = std::max(
          worst_hyb, std::fabs(hybrid_substitute(M, k).n2sq() - M.norm2sq()));
  }

  // constant operators keep a deterministic normalized penalty at every level
  double worst_const = 0.0, worst_se = 0.0;
  for (double c : {-0.7, 0.4}) {
    FourierRep M(b, 3);
    M.set_coeff_flat(0, c);
    double zc = c < 0.0 ? c * c : 0.0;
    for (int k = 0; k <= 3; ++k) {
      McResult z = expect_tr_zeta(hybrid_substitute(M, k), 32, 99);
      double dim = static_cast<double>(ipow(2, 3 - k));
      worst_const = std::max(worst_const, std::fabs(z.mean / dim - zc));
      worst_se = std::max(worst_se, z.std_error);
    }
  }
  out.note("50 pairs, max 2-norm gap = " + num(worst_n2) +
           ", max correlation gap = " + num(worst_corr) +
           ", reconstruction errors = " + std::to_string(reconstruction_errors));
  out.note("max hybrid 2-norm drift = " + num(worst_hyb) +
           ", max constant penalty drift = " + num(worst_const));
  out.require(worst_n2 <= 1e-9, "2-norm identity tolerance 1e-9 exceeded");
  out.require(worst_corr <= 1e-9, "correlation identity tolerance 1e-9 exceeded");
  out.require(reconstruction_errors == 0, "reconstruction raised errors");
  out.require(worst_hyb <= 1e-12, "hybrid substitution changed the 2-norm");
  out.require(worst_const <= 1e-12, "constant penalty drifted");
  out.require(worst_se == 0.0, "constant penalty has nonzero spread");
  return out;
}

// ---------------------------------------------------------------------------
// 10: CHSH reference values for the classical and entangled strategies

Outcome crit_game_values() {
  Outcome out;
  Game g = chsh();
  double cv = classical_value(g);
  out.note("classical value = " + num(cv, "%.17g"));
  out.require(cv == 0.75, "classical value is not exactly 0.75");

  Strategy s = chsh_optimal_strategy();
  double c = std::cos(std::acos(-1.0) / 8.0);
  double target = c * c;
  double mes = eval_strategy(g, s, noisy_mes(2, 0.0));
  out.note("perfect-state value = " + num(mes, "%.17g") + " vs cos^2(pi/8) = " +
           num(target, "%.17g"));
  out.require(std::fabs(mes - target) <= 1e-9,
              "perfect-state tolerance 1e-9 exceeded");

  for (double eps : {0.1, 0.5}) {
    double expected = 0.75 + (1.0 - eps) * (target - 0.75);
    double got = eval_strategy(g, s, noisy_mes(2, eps));
    out.note("eps = " + num(eps) + ": value = " + num(got, "%.17g") +
             ", interpolation target = " + num(expected, "%.17g"));
    out.require(std::fabs(got - expected) <= 1e-9,
                "off the interpolation target by " + num(got - expected));
  }
  return out;
}

// ---------------------------------------------------------------------------
// 11: end-to-end transport of computational-basis CHSH measurements

Outcome crit_pipeline_transport() {
  Outcome out;
  MatrixC e0 = MatrixC::Zero(2, 2), e1 = MatrixC::Zero(2, 2);
  e0(0, 0) = 1.0;
  e1(1, 1) = 1.0;
  std::vector<HermitianOp> fam = {HermitianOp(e0, 2, 1),
                                  HermitianOp(e1, 2, 1)};
  std::vector<std::vector<HermitianOp>> first = {fam, fam};
  std::vector<std::vector<HermitianOp>> second = {fam, fam};
  BipartiteState psi = noisy_mes(2, 0.2);

  PipelineParams params;
  params.m = 2;
  params.t = 2;
  params.a = 2;
  params.b = 2;
  params.s = 4;
  params.epsilon = 0.1;
  params.delta = 0.2;
  params.tau = 0.1;
  params.d1 = 2;
  params.d2 = 2;
  params.h = 1;
  params.n0 = 8;
  params.n1 = 4;
  params.mc_samples = 100000;
  params.seed = 1;

  PipelineResult r1 = run_pipeline(first, second, psi, params);
  PipelineResult r2 = run_pipeline(first, second, psi, params);

  int povm_failures = 0;
  for (const SubPovm& p : r1.first) {
    try {
      p.validate();
    } catch (const Error&) {
      ++povm_failures;
    }
  }
  for (const SubPovm& p : r1.second) {
    try {
      p.validate();
    } catch (const Error&) {
      ++povm_failures;
    }
  }
  out.require(povm_failures == 0, std::to_string(povm_failures) +
                                      " output families fail the sub-POVM "
                                      "invariants");

  // byte-exact determinism: a rerun and the duplicated input families
  double rerun_dev = 0.0;
  for (int u = 0; u < params.a; ++u)
    for (int i = 0; i < params.t; ++i)
      rerun_dev = std::max(
          rerun_dev, (r1.first[static_cast<std::size_t>(u)].elements[static_cast<std::size_t>(i)].mat -
                      r2.first[static_cast<std::size_t>(u)].elements[static_cast<std::size_t>(i)].mat)
                         .cwiseAbs()
                         .maxCoeff());
  for (int v = 0; v < params.b; ++v)
    for (int j = 0; j < params.t; ++j)
      rerun_dev = std::max(
          rerun_dev, (r1.second[static_cast<std::size_t>(v)].elements[static_cast<std::size_t>(j)].mat -
                      r2.second[static_cast<std::size_t>(v)].elements[static_cast<std::size_t>(j)].mat)
                         .cwiseAbs()
                         .maxCoeff());
  bool csv_equal = reports_to_csv(r1.reports) == reports_to_csv(r2.reports);
  double dup_dev = 0.0;
  for (int i = 0; i < params.t; ++i) {
    dup_dev = std::max(dup_dev,
                       (r1.first[0].elements[static_cast<std::size_t>(i)].mat -
                        r1.first[1].elements[static_cast<std::size_t>(i)].mat)
                           .cwiseAbs()
                           .maxCoeff());
    dup_dev = std::max(dup_dev,
                       (r1.second[0].elements[static_cast<std::size_t>(i)].mat -
                        r1.second[1].elements[static_cast<std::size_t>(i)].mat)
                           .cwiseAbs()
                           .maxCoeff());
  }
  out.note("rerun deviation = " + num(rerun_dev) + ", duplicate-family deviation = " +
           num(dup_dev) + ", rerun report bytes equal = " +
           (csv_equal ? "yes" : "no"));
  out.require(rerun_dev == 0.0, "rerun outputs differ");
  out.require(csv_equal, "rerun reports differ");
  out.require(dup_dev == 0.0, "duplicated input families produce different outputs");

  // recomputed game value against the drift ledger
  Game g = chsh();
  Strategy in_strategy{1, first, second};
  double v_in = eval_strategy(g, in_strategy, psi);
  const StageReport& round = r1.reports.back();
  out.require(round.stage == "round", "final stage is not the rounding stage");
  Kahan v_out_acc, drift_acc;
  for (int x = 0; x < g.nx; ++x)
    for (int y = 0; y < g.ny; ++y)
      for (int a = 0; a < g.na; ++a)
        for (int b2 = 0; b2 < g.nb; ++b2) {
          double w = g.mu[static_cast<std::size_t>(x)][static_cast<std::size_t>(y)] *
                     g.predicate(x, y, a, b2);
          if (w == 0.0) continue;
          v_out_acc.add(w * correlation_value(
                                r1.first[static_cast<std::size_t>(x)].elements[static_cast<std::size_t>(a)],
                                r1.second[static_cast<std::size_t>(y)].elements[static_cast<std::size_t>(b2)],
                                psi, r1.out_registers));
          std::string fam_key = "A" + std::to_string(x) + ",B" + std::to_string(y);
          std::string idx_key = std::to_string(a) + "," + std::to_string(b2);
          drift_acc.add(w * round.get("corr_drift", fam_key, idx_key));
        }
  double v_out = v_out_acc.value();
  double drift_budget = drift_acc.value();
  Kahan se_acc;
  for (const StageReport& r : r1.reports)
    for (const StageMetric& m : r.metrics)
      if (m.has_se) se_acc.add(m.std_error);
  double se_budget = se_acc.value();
  double gap = std::fabs(v_out - v_in);
  out.note("v_in = " + num(v_in, "%.12g") + ", v_out = " + num(v_out, "%.12g") +
           ", |gap| = " + num(gap) + ", drift budget = " + num(drift_budget) +
           ", 4 SE = " + num(4.0 * se_budget));
  out.require(gap <= drift_budget + 4.0 * se_budget + 1e-9,
              "value shift exceeds the reported drift budget");
  return out;
}

// ---------------------------------------------------------------------------

struct Criterion {
  int number;
  const char* label;
  double budget_seconds;
  Outcome (*run)();
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> table = {
      {1, "noisy-MES maximal correlation", 1.0, crit_max_correlation},
      {2, "tensor-power correlation", 5.0, crit_tensor_power},
      {3, "Fourier identities", 30.0, crit_fourier_identities},
      {4, "depolarizing 2->4 contraction", 120.0, crit_depolarizing_contraction},
      {5, "random-operator 2->4 contraction", 300.0,
       crit_random_operator_contraction},
      {6, "sub-POVM rounding distance", 60.0, crit_rounding_distance},
      {7, "derivative maps and Lyapunov", 60.0, crit_derivative_maps},
      {8, "spectral penalty bounds", 30.0, crit_penalty_bounds},
      {9, "reconstruction exactness", 60.0, crit_reconstruction_anchors},
      {10, "CHSH reference values", 1.0, crit_game_values},
      {11, "end-to-end measurement transport", 600.0, crit_pipeline_transport},
  };

  int only = 0;
  if (argc > 1) {
    only = std::atoi(argv[1]);
    if (only < 1 || only > 11) {
      std::fprintf(stderr, "usage: %s [1-11]\n", argv[0]);
      return 2;
    }
  }

  bool all_pass = true;
  for (const Criterion& c : table) {
    if (only != 0 && c.number != only) continue;
    auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out.pass = false;
      out.note(std::string("unexpected error: ") + e.what());
    }
    double secs = std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    if (secs > c.budget_seconds) {
      out.pass = false;
      out.note("exceeded the " + num(c.budget_seconds) + " s budget");
    }
    std::printf("criterion %d: %s  %s  [%.2f s / %.0f s]  %s\n", c.number,
                out.pass ? "PASS" : "FAIL", c.label, secs, c.budget_seconds,
                out.detail.c_str());
    std::fflush(stdout);
    all_pass = all_pass && out.pass;
  }
  return all_pass ? 0 : 1;
}
