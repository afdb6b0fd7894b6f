#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "mescalc/channels.hpp"
#include "mescalc/randop.hpp"

using namespace mescalc;

namespace {

MatrixC pauli_x() {
  MatrixC m(2, 2);
  m << 0, 1, 1, 0;
  return m;
}

MatrixC pauli_z() {
  MatrixC m(2, 2);
  m << 1, 0, 0, -1;
  return m;
}

MatrixR random_orthogonal(int d, Rng& rng) {
  MatrixR a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = rng.normal();
  Eigen::HouseholderQR<MatrixR> qr(a);
  MatrixR q = qr.householderQ();
  MatrixR r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int i = 0; i < d; ++i)
    if (r(i, i) < 0) q.col(i) *= -1.0;
  return q;
}

// dense random operator with every |sigma| + wt(tau) <= d term filled
RandomOperator random_bounded_op(int m, int h, int nvars, int d, Rng& rng) {
  StandardBasis basis = gell_mann_basis(m);
  RandomOperator out(m, h, nvars, basis);
  FourierRep shape(basis, h);
  std::vector<MultiIndex> taus = enumerate_wt_at_most(nvars, d);
  long nsigma = ipow(static_cast<long>(m) * m, h);
  for (long s = 0; s < nsigma; ++s) {
    MultiIndex sigma = shape.decode(static_cast<std::uint64_t>(s));
    int card = sigma_card(sigma);
    for (const MultiIndex& tau : taus)
      if (card + sigma_wt(tau) <= d) out.add_term(sigma, tau, rng.normal());
  }
  return out;
}

RandomOperator multilinear_bounded_op(int m, int h, int nvars, int d,
                                      Rng& rng) {
  RandomOperator full = random_bounded_op(m, h, nvars, d, rng);
  RandomOperator out(m, h, nvars, full.basis());
  full.for_each_term([&](const MultiIndex& sigma, const HermitePoly& p) {
    out.set_poly(sigma, multilinear_truncate(p));
  });
  return out;
}

}  // namespace

TEST_CASE("random operator shape and exact 2-norm", "[randop]") {
  StandardBasis b = gell_mann_basis(2);

  // constant identity
  RandomOperator id(2, 1, 0, b);
  id.add_term({0}, {}, 1.0);
  CHECK(id.n2() == Catch::Approx(1.0));
  CHECK(id.total_degree() == 0);
  VectorR none(0);
  CHECK((id.eval(none).mat - MatrixC::Identity(2, 2)).cwiseAbs().maxCoeff() <
        1e-14);

  // P = g_1 Z
  RandomOperator gz(2, 1, 1, b);
  gz.add_term({3}, {1}, 1.0);
  CHECK(gz.n2() == Catch::Approx(1.0));
  CHECK(gz.poly_degree() == 1);
  CHECK(gz.total_degree() == 2);
  VectorR g1(1);
  g1 << -0.8;
  CHECK((gz.eval(g1).mat + 0.8 * pauli_z()).cwiseAbs().maxCoeff() < 1e-14);

  // mixed terms evaluate to the hand-written matrix
  RandomOperator p(2, 1, 2, b);
  p.add_term({3}, {1, 0}, 1.0);
  p.add_term({1}, {0, 2}, 1.0);
  VectorR g(2);
  g << 0.5, 1.2;
  MatrixC expect = 0.5 * pauli_z() + hermite_value(2, 1.2) * pauli_x();
  CHECK((p.eval(g).mat - expect).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(p.n2sq() == Catch::Approx(2.0));

  CHECK_THROWS_AS(p.add_term({9}, {0, 0}, 1.0), ArgumentError);
  CHECK_THROWS_AS(p.add_term({1, 1}, {0, 0}, 1.0), ArgumentError);
  CHECK_THROWS_AS(p.eval(g1), ArgumentError);
  CHECK(p.poly({2}).term_count() == 0);
}

TEST_CASE("monte carlo norms track the exact 2-norm", "[randop]") {
  Rng rng(3);
  RandomOperator p = random_bounded_op(2, 1, 2, 3, rng);
  NormEstimate est = np_mc(p, 2, 200000, 11);
  CHECK(std::fabs(est.value - p.n2()) < 4.0 * est.std_error + 1e-9);
  CHECK_THROWS_AS(np_mc(p, 3, 100, 1), ArgumentError);
}

TEST_CASE("hybrid noise operator scales by combined degree", "[randop]") {
  StandardBasis b = gell_mann_basis(2);
  RandomOperator gz(2, 1, 1, b);
  gz.add_term({3}, {1}, 1.0);

  RandomOperator noisy = gamma_apply(gz, 0.5);
  CHECK(noisy.poly({3}).coeff({1}) == Catch::Approx(0.25));

  RandomOperator id(2, 1, 0, b);
  id.add_term({0}, {}, 1.0);
  RandomOperator idn = gamma_apply(id, 0.3);
  CHECK(idn.poly({0}).coeff({}) == Catch::Approx(1.0));

  Rng rng(7);
  RandomOperator p = random_bounded_op(2, 2, 2, 3, rng);
  RandomOperator same = gamma_apply(p, 1.0);
  p.for_each_term([&](const MultiIndex& sigma, const HermitePoly& poly) {
    poly.for_each([&](const MultiIndex& tau, double v) {
      CHECK(same.poly(sigma).coeff(tau) == Catch::Approx(v));
    });
  });

  // truncation keeps exactly the low-degree mass
  RandomOperator cut = truncate_total_degree(p, 2);
  CHECK(cut.total_degree() <= 2);
  double kept = 0.0;
  p.for_each_term([&](const MultiIndex& sigma, const HermitePoly& poly) {
    int card = sigma_card(sigma);
    poly.for_each([&](const MultiIndex& tau, double v) {
      if (card + sigma_wt(tau) <= 2) kept += v * v;
    });
  });
  CHECK(cut.n2sq() == Catch::Approx(kept));
}

TEST_CASE("register substitution preserves the 2-norm", "[randop]") {
  Rng rng(13);
  HermitianOp m = random_hermitian(2, 2, rng);
  StandardBasis b = gell_mann_basis(2);
  FourierRep rep = FourierRep::expand(m, b);

  // k = 0 reproduces the constant operator
  RandomOperator c0 = hybrid_substitute(rep, 0);
  CHECK(c0.nvars() == 0);
  VectorR none(0);
  CHECK((c0.eval(none).mat - m.mat).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(c0.n2sq() == Catch::Approx(rep.norm2sq()));

  // every substitution depth keeps N_2 equal to the matrix 2-norm
  for (int k = 1; k <= 2; ++k) {
    RandomOperator hy = hybrid_substitute(rep, k);
    CHECK(hy.h() == 2 - k);
    CHECK(hy.nvars() == 3 * k);
    CHECK(hy.n2sq() == Catch::Approx(rep.norm2sq()).epsilon(1e-12));
  }

  // Z (x) Z at k = 1 becomes the single variable attached to Z
  FourierRep zz(b, 2);
  zz.set_coeff_flat(zz.encode({3, 3}), 1.0);
  RandomOperator hz = hybrid_substitute(zz, 1);
  CHECK(hz.n2() == Catch::Approx(1.0));
  CHECK(hz.poly({3}).coeff({0, 0, 1}) == Catch::Approx(1.0));

  CHECK_THROWS_AS(hybrid_substitute(rep, 3), ArgumentError);
}

TEST_CASE("substituting a multiple of the identity changes nothing",
          "[randop]") {
  double c = -0.7;
  StandardBasis b = gell_mann_basis(2);
  FourierRep rep(b, 2);
  rep.set_coeff_flat(rep.encode({0, 0}), c);
  for (int k = 0; k <= 2; ++k) {
    RandomOperator hy = hybrid_substitute(rep, k);
    double dim = static_cast<double>(ipow(2, 2 - k));
    McResult z = expect_tr_zeta(hy, 1000, 5);
    CHECK(z.mean / dim == Catch::Approx(c * c));  // zeta(-0.7) per eigenvalue
    CHECK(z.std_error == Catch::Approx(0.0).margin(1e-12));
  }
}

TEST_CASE("exact correlated expectations", "[randop]") {
  BipartiteState psi = noisy_mes(2, 0.2);
  CorrelationData aligned = aligned_bases(psi);

  // identity against identity
  RandomOperator pid(2, 1, 1, aligned.basisA);
  pid.add_term({0}, {0}, 1.0);
  RandomOperator qid(2, 1, 1, aligned.basisB);
  qid.add_term({0}, {0}, 1.0);
  JointRandomOperators jid{pid, qid, CorrelatedGaussianSpec::constant(1, 0.5)};
  CHECK(expect_corr(jid, aligned) == Catch::Approx(1.0));

  // single paired coefficient picks up rho times the aligned value
  RandomOperator pa(2, 1, 1, aligned.basisA);
  pa.add_term({1}, {1}, 1.0);
  RandomOperator qb(2, 1, 1, aligned.basisB);
  qb.add_term({1}, {1}, 1.0);
  JointRandomOperators j1{pa, qb, CorrelatedGaussianSpec::constant(1, 0.5)};
  CHECK(expect_corr(j1, aligned) == Catch::Approx(0.5 * 0.8));

  // mismatched bases are rejected
  JointRandomOperators jbad{qb, qb, CorrelatedGaussianSpec::constant(1, 0.5)};
  CHECK_THROWS_AS(expect_corr(jbad, aligned), ArgumentError);
}

TEST_CASE("correlated expectation matches direct sampling", "[randop]") {
  BipartiteState psi = noisy_mes(2, 0.2);
  CorrelationData aligned = aligned_bases(psi);
  CorrelatedGaussianSpec spec = CorrelatedGaussianSpec::constant(2, 0.6);

  Rng rng(17);
  RandomOperator p(2, 1, 2, aligned.basisA);
  RandomOperator q(2, 1, 2, aligned.basisB);
  FourierRep shape(aligned.basisA, 1);
  std::vector<MultiIndex> taus = enumerate_wt_at_most(2, 1);
  for (long s = 0; s < 4; ++s) {
    MultiIndex sigma = shape.decode(static_cast<std::uint64_t>(s));
    for (const MultiIndex& tau : taus) {
      p.add_term(sigma, tau, 0.5 * rng.normal());
      q.add_term(sigma, tau, 0.5 * rng.normal());
    }
  }
  JointRandomOperators j{p, q, spec};
  double exact = expect_corr(j, aligned);

  McResult mc = mc_expect(
      [&](const VectorR& g, const VectorR& h) {
        MatrixC joint = kron(p.eval_matrix(g), q.eval_matrix(h));
        return (joint * psi.rho).trace().real();
      },
      spec, 400000, 19);
  CHECK(std::fabs(mc.mean - exact) < 4.0 * mc.std_error + 1e-9);
}

TEST_CASE("sampled zeta traces", "[randop]") {
  StandardBasis b = gell_mann_basis(2);

  // constant PSD operator has no negative part at all
  RandomOperator psd(2, 1, 1, b);
  psd.add_term({0}, {0}, 1.0);
  psd.add_term({3}, {0}, 0.5);
  McResult zero = expect_tr_zeta(psd, 2000, 3);
  CHECK(zero.mean == 0.0);
  CHECK(zero.std_error == 0.0);

  // P = g Z: E Tr zeta = E[zeta(g) + zeta(-g)] = E[g^2] = 1
  RandomOperator gz(2, 1, 1, b);
  gz.add_term({3}, {1}, 1.0);
  McResult one = expect_tr_zeta(gz, 200000, 5);
  CHECK(std::fabs(one.mean - 1.0) < 4.0 * one.std_error);

  // P = -id: every sample contributes exactly the dimension
  RandomOperator neg(2, 1, 1, b);
  neg.add_term({0}, {0}, -1.0);
  McResult two = expect_tr_zeta(neg, 2000, 7);
  CHECK(two.mean == Catch::Approx(2.0));
  CHECK(two.std_error == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("noise keeps the sampled 4-norm below the exact 2-norm",
          "[randop]") {
  struct Config {
    int m, h, n;
    std::uint64_t seed;
  };
  std::vector<Config> cases = {{2, 2, 2, 23}, {3, 1, 3, 29}};
  for (const Config& c : cases) {
    Rng rng(c.seed);
    RandomOperator p = multilinear_bounded_op(c.m, c.h, c.n, 3, rng);
    double rho = 1.0 / std::sqrt(3.0 * std::sqrt(static_cast<double>(c.m)));
    NormEstimate n4 = np_mc(gamma_apply(p, rho), 4, 200000, c.seed + 1);
    CHECK(n4.value <= p.n2() + 5.0 * n4.std_error + 1e-12);
  }
}

TEST_CASE("degree bound on the raw 4-norm", "[randop]") {
  Rng rng(31);
  RandomOperator p = random_bounded_op(2, 1, 2, 3, rng);
  int d = p.total_degree();
  NormEstimate n4 = np_mc(p, 4, 200000, 37);
  double cap = std::pow(3.0, d / 2.0) * std::pow(2.0, d / 4.0) * p.n2();
  CHECK(n4.value <= cap + 5.0 * n4.std_error + 1e-12);
}

TEST_CASE("hybrid gaps shrink as per-register influence drops", "[randop]") {
  StandardBasis b = gell_mann_basis(2);
  std::vector<double> gap0, gap1, err0, err1;
  for (double infl : {0.2, 0.05}) {
    double c0 = std::sqrt(1.0 - 2.0 * infl);
    double c1 = std::sqrt(infl);
    FourierRep rep(b, 2);
    rep.set_coeff_flat(rep.encode({0, 0}), c0);
    rep.set_coeff_flat(rep.encode({1, 0}), c1);
    rep.set_coeff_flat(rep.encode({0, 1}), c1);

    std::vector<double> z(3), se(3);
    for (int k = 0; k <= 2; ++k) {
      RandomOperator hy = hybrid_substitute(rep, k);
      McResult r = expect_tr_zeta(hy, 100000, 41);
      double dim = static_cast<double>(ipow(2, 2 - k));
      z[static_cast<std::size_t>(k)] = r.mean / dim;
      se[static_cast<std::size_t>(k)] = r.std_error / dim;
    }
    gap0.push_back(std::fabs(z[1] - z[0]));
    gap1.push_back(std::fabs(z[2] - z[1]));
    err0.push_back(se[0] + se[1]);
    err1.push_back(se[1] + se[2]);
  }
  CHECK(gap0[1] <= gap0[0] + 4.0 * (err0[0] + err0[1]));
  CHECK(gap1[1] <= gap1[0] + 4.0 * (err1[0] + err1[1]));
}

TEST_CASE("hybrid functionals do not depend on the expansion basis",
          "[randop]") {
  Rng rng(43);
  HermitianOp m = random_hermitian(2, 2, rng);
  StandardBasis b1 = gell_mann_basis(2);
  StandardBasis b2 = rotate_basis(b1, random_orthogonal(3, rng));

  RandomOperator h1 = hybrid_substitute(FourierRep::expand(m, b1), 1);
  RandomOperator h2 = hybrid_substitute(FourierRep::expand(m, b2), 1);
  CHECK(h1.n2sq() == Catch::Approx(h2.n2sq()).epsilon(1e-12));

  McResult z1 = expect_tr_zeta(h1, 100000, 47);
  McResult z2 = expect_tr_zeta(h2, 100000, 53);
  CHECK(std::fabs(z1.mean - z2.mean) <
        4.0 * (z1.std_error + z2.std_error) + 1e-9);
}

TEST_CASE("composed operators evaluate through the linear map", "[randop]") {
  Rng rng(59);
  RandomOperator base = random_bounded_op(2, 1, 2, 2, rng);

  ComposedRandomOperator ident{base, MatrixR::Identity(2, 2), false};
  ident.validate();
  VectorR x(2);
  x << 0.3, -1.1;
  CHECK((ident.eval_matrix(x) - base.eval_matrix(x)).cwiseAbs().maxCoeff() <
        1e-14);

  // same sample stream, same evaluator values: bitwise equal estimates
  McResult za = expect_tr_zeta(base, 20000, 61);
  McResult zb = expect_tr_zeta(ident, 20000, 61);
  CHECK(za.mean == zb.mean);

  // rotating the Gaussian inputs leaves the sampled functional unchanged
  ComposedRandomOperator rot{base, random_orthogonal(2, rng), false};
  McResult zr = expect_tr_zeta(rot, 100000, 67);
  McResult zd = expect_tr_zeta(base, 100000, 71);
  CHECK(std::fabs(zr.mean - zd.mean) <
        4.0 * (zr.std_error + zd.std_error) + 1e-9);

  // normalized evaluation rejects the zero vector
  ComposedRandomOperator norm{base, MatrixR::Identity(2, 2), true};
  CHECK_THROWS_AS(norm.eval_matrix(VectorR::Zero(2)), DomainError);

  ComposedRandomOperator bad{base, MatrixR::Identity(3, 3), false};
  CHECK_THROWS_AS(bad.validate(), DimensionError);
}

TEST_CASE("hermite re-estimation recovers known coefficients", "[randop]") {
  StandardBasis b = gell_mann_basis(2);
  RandomOperator p(2, 1, 2, b);
  p.add_term({0}, {0, 0}, 0.5);
  p.add_term({3}, {1, 0}, 0.8);
  p.add_term({3}, {0, 2}, 0.3);
  p.add_term({1}, {1, 1}, -0.4);

  HermiteEstimate est = estimate_hermite(
      [&](const VectorR& g) { return p.eval_matrix(g); }, 2, 1, b, 2, 2,
      400000, 73);

  // every estimated coefficient sits within five standard errors of truth
  est.op.for_each_term([&](const MultiIndex& sigma, const HermitePoly& poly) {
    poly.for_each([&](const MultiIndex& tau, double v) {
      double truth = p.poly(sigma).coeff(tau);
      double se = est.std_errors.at({sigma, tau});
      CHECK(std::fabs(v - truth) < 5.0 * se + 1e-4);
    });
  });
  // and the known nonzero ones are all present
  CHECK(est.op.poly({3}).coeff({1, 0}) == Catch::Approx(0.8).margin(0.02));
  CHECK(est.op.poly({3}).coeff({0, 2}) == Catch::Approx(0.3).margin(0.02));
  CHECK(est.op.poly({1}).coeff({1, 1}) == Catch::Approx(-0.4).margin(0.02));
  CHECK(est.op.n2() == Catch::Approx(p.n2()).margin(0.02));
  CHECK(est.samples == 400000);
}
