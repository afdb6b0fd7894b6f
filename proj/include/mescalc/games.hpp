#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mescalc/channels.hpp"
#include "mescalc/matfun.hpp"
#include "mescalc/rng.hpp"

namespace mescalc {

// ---------------------------------------------------------------------------
// two-player one-round games

struct Game {
  int nx = 0, ny = 0, na = 0, nb = 0;
  std::vector<std::vector<double>> mu;  // question distribution, mu[x][y]
  std::vector<int> v;                   // predicate, x-major then y, a, b

  std::size_t vidx(int x, int y, int a, int b) const {
    return ((static_cast<std::size_t>(x) * ny + y) * na + a) * nb + b;
  }

  int predicate(int x, int y, int a, int b) const { return v[vidx(x, y, a, b)]; }

  void validate() const {
    if (nx < 1 || ny < 1 || na < 1 || nb < 1)
      throw ArgumentError("Game: all sizes must be at least 1");
    if (static_cast<int>(mu.size()) != nx)
      throw ArgumentError("Game: mu has wrong row count");
    Kahan total;
    for (const std::vector<double>& row : mu) {
      if (static_cast<int>(row.size()) != ny)
        throw ArgumentError("Game: mu has wrong column count");
      for (double p : row) {
        if (p < 0.0) throw ArgumentError("Game: mu entries must be nonnegative");
        total.add(p);
      }
    }
    if (std::fabs(total.value() - 1.0) > 1e-12)
      throw ArgumentError("Game: mu must sum to 1");
    if (v.size() != static_cast<std::size_t>(nx) * ny * na * nb)
      throw ArgumentError("Game: predicate table has wrong size");
    for (int e : v)
      if (e != 0 && e != 1)
        throw ArgumentError("Game: predicate entries must be 0 or 1");
  }
};

inline Game chsh() {
  Game g;
  g.nx = g.ny = g.na = g.nb = 2;
  g.mu.assign(2, std::vector<double>(2, 0.25));
  g.v.assign(16, 0);
  for (int x = 0; x < 2; ++x)
    for (int y = 0; y < 2; ++y)
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
          g.v[g.vidx(x, y, a, b)] = ((a ^ b) == (x & y)) ? 1 : 0;
  return g;
}

inline nlohmann::json game_to_json(const Game& g) {
  nlohmann::json j;
  j["nx"] = g.nx;
  j["ny"] = g.ny;
  j["na"] = g.na;
  j["nb"] = g.nb;
  j["mu"] = g.mu;
  j["V"] = g.v;
  return j;
}

inline Game game_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ArgumentError("game_from_json: expected an object");
  Game g;
  try {
    g.nx = j.at("nx").get<int>();
    g.ny = j.at("ny").get<int>();
    g.na = j.at("na").get<int>();
    g.nb = j.at("nb").get<int>();
    g.mu = j.at("mu").get<std::vector<std::vector<double>>>();
    g.v = j.at("V").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("game_from_json: ") + e.what());
  }
  g.validate();
  return g;
}

// ---------------------------------------------------------------------------
// strategies

struct Strategy {
  int n = 1;  // shared-state copies
  std::vector<std::vector<HermitianOp>> alice;  // per question x, na outcomes
  std::vector<std::vector<HermitianOp>> bob;    // per question y, nb outcomes
};

namespace detail {

inline void check_strategy_side(const std::vector<std::vector<HermitianOp>>& side,
                                int questions, int outcomes, int m, int n,
                                const char* who) {
  if (static_cast<int>(side.size()) != questions)
    throw ArgumentError(std::string("Strategy: ") + who +
                        " question count mismatch");
  for (const std::vector<HermitianOp>& povm : side) {
    if (static_cast<int>(povm.size()) != outcomes)
      throw ArgumentError(std::string("Strategy: ") + who +
                          " outcome count mismatch");
    long d = ipow(m, n);
    MatrixC total = MatrixC::Zero(d, d);
    for (const HermitianOp& P : povm) {
      if (P.m != m || P.n != n)
        throw ArgumentError(std::string("Strategy: ") + who +
                            " operator shape mismatch");
      Spectral s = spectral_decompose(P);
      if (s.eigenvalues.minCoeff() < -1e-10)
        throw ArgumentError(std::string("Strategy: ") + who +
                            " element is not positive semidefinite");
      total += P.mat;
    }
    if ((total - MatrixC::Identity(d, d)).cwiseAbs().maxCoeff() > 1e-9)
      throw ArgumentError(std::string("Strategy: ") + who +
                          " does not sum to the identity");
  }
}

}  // namespace detail

inline void validate_strategy(const Game& g, const Strategy& s, int mA,
                              int mB) {
  if (s.n < 0) throw ArgumentError("Strategy: negative copy count");
  detail::check_strategy_side(s.alice, g.nx, g.na, mA, s.n, "first player");
  detail::check_strategy_side(s.bob, g.ny, g.nb, mB, s.n, "second player");
}

inline nlohmann::json matrix_entries_json(const MatrixC& M) {
  nlohmann::json arr = nlohmann::json::array();
  for (long i = 0; i < M.rows(); ++i)
    for (long j = 0; j < M.cols(); ++j)
      arr.push_back(nlohmann::json::array({M(i, j).real(), M(i, j).imag()}));
  return arr;
}

inline MatrixC matrix_from_entries(const nlohmann::json& arr, long rows,
                                   long cols) {
  if (!arr.is_array() || static_cast<long>(arr.size()) != rows * cols)
    throw ArgumentError("matrix_from_entries: wrong entry count");
  MatrixC M(rows, cols);
  long k = 0;
  for (long i = 0; i < rows; ++i)
    for (long j = 0; j < cols; ++j, ++k) {
      const nlohmann::json& e = arr[k];
      if (!e.is_array() || e.size() != 2)
        throw ArgumentError("matrix_from_entries: entries must be [re, im]");
      M(i, j) = cxd(e[0].get<double>(), e[1].get<double>());
    }
  return M;
}

inline nlohmann::json strategy_to_json(const Strategy& s) {
  if (s.alice.empty() || s.alice[0].empty())
    throw ArgumentError("strategy_to_json: empty strategy");
  nlohmann::json j;
  j["n"] = s.n;
  j["m"] = s.alice[0][0].m;
  auto side = [](const std::vector<std::vector<HermitianOp>>& fams) {
    nlohmann::json out = nlohmann::json::array();
    for (const std::vector<HermitianOp>& povm : fams) {
      nlohmann::json f = nlohmann::json::array();
      for (const HermitianOp& P : povm) f.push_back(matrix_entries_json(P.mat));
      out.push_back(f);
    }
    return out;
  };
  j["alice"] = side(s.alice);
  j["bob"] = side(s.bob);
  return j;
}

inline Strategy strategy_from_json(const nlohmann::json& j) {
  if (!j.is_object())
    throw ArgumentError("strategy_from_json: expected an object");
  Strategy s;
  int m = 0;
  try {
    s.n = j.at("n").get<int>();
    m = j.at("m").get<int>();
    long d = ipow(m, s.n);
    auto side = [&](const nlohmann::json& fams) {
      std::vector<std::vector<HermitianOp>> out;
      for (const nlohmann::json& f : fams) {
        std::vector<HermitianOp> povm;
        for (const nlohmann::json& mat : f)
          povm.push_back(HermitianOp(matrix_from_entries(mat, d, d), m, s.n));
        out.push_back(povm);
      }
      return out;
    };
    s.alice = side(j.at("alice"));
    s.bob = side(j.at("bob"));
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("strategy_from_json: ") + e.what());
  }
  return s;
}

// ---------------------------------------------------------------------------
// value of a strategy

inline double eval_strategy(const Game& g, const Strategy& s,
                            const BipartiteState& psi) {
  g.validate();
  validate_strategy(g, s, psi.mA, psi.mB);
  Kahan val;
  for (int x = 0; x < g.nx; ++x)
    for (int y = 0; y < g.ny; ++y) {
      double p = g.mu[x][y];
      if (p == 0.0) continue;
      for (int a = 0; a < g.na; ++a)
        for (int b = 0; b < g.nb; ++b) {
          if (!g.predicate(x, y, a, b)) continue;
          val.add(p * correlation_value(s.alice[x][a], s.bob[y][b], psi, s.n));
        }
    }
  double out = val.value();
  if (out < -1e-9 || out > 1.0 + 1e-9)
    throw PreconditionError("eval_strategy: value outside [0,1]: " +
                            fmt17(out));
  return out;
}

// ---------------------------------------------------------------------------
// classical value by brute force over deterministic strategies

inline double classical_value(const Game& g, long long cap = 10000000) {
  g.validate();
  double pairs = std::pow(static_cast<double>(g.na), g.nx) *
                 std::pow(static_cast<double>(g.nb), g.ny);
  if (pairs > static_cast<double>(cap))
    throw ArgumentError("classical_value: enumeration cap exceeded");

  std::vector<int> ha(g.nx, 0), hb(g.ny, 0);
  auto advance = [](std::vector<int>& h, int base) {
    for (std::size_t i = 0; i < h.size(); ++i) {
      if (++h[i] < base) return true;
      h[i] = 0;
    }
    return false;
  };
  double best = 0.0;
  do {
    std::fill(hb.begin(), hb.end(), 0);
    do {
      double val = 0.0;
      for (int x = 0; x < g.nx; ++x)
        for (int y = 0; y < g.ny; ++y)
          if (g.predicate(x, y, ha[x], hb[y])) val += g.mu[x][y];
      best = std::max(best, val);
    } while (advance(hb, g.nb));
  } while (advance(ha, g.na));
  return best;
}

// ---------------------------------------------------------------------------
// reference CHSH strategy
//
// One qubit each; both players measure in the Z-X plane, the observable at
// angle theta being cos(2 theta) Z + sin(2 theta) X. Angles (0, pi/4) against
// (pi/8, -pi/8) win CHSH on the maximally entangled state with probability
// cos^2(pi/8).

inline std::vector<HermitianOp> plane_measurement(double theta) {
  MatrixC obs(2, 2);
  double c = std::cos(2.0 * theta), s = std::sin(2.0 * theta);
  obs << c, s, s, -c;
  MatrixC id = MatrixC::Identity(2, 2);
  return {HermitianOp(0.5 * (id + obs), 2, 1),
          HermitianOp(0.5 * (id - obs), 2, 1)};
}

inline Strategy chsh_optimal_strategy() {
  Strategy s;
  s.n = 1;
  double pi = std::acos(-1.0);
  s.alice = {plane_measurement(0.0), plane_measurement(pi / 4.0)};
  s.bob = {plane_measurement(pi / 8.0), plane_measurement(-pi / 8.0)};
  return s;
}

// ---------------------------------------------------------------------------
// see-saw search

struct SeesawResult {
  Strategy strategy;
  std::vector<double> trace;  // value after each iteration, first entry initial
};

namespace detail {

inline std::vector<HermitianOp> random_povm(int m, int n, int t, Rng& rng) {
  long d = ipow(m, n);
  std::vector<MatrixC> gs;
  MatrixC total = MatrixC::Zero(d, d);
  for (int k = 0; k < t; ++k) {
    MatrixC A(d, d);
    for (long i = 0; i < d; ++i)
      for (long j = 0; j < d; ++j) A(i, j) = cxd(rng.normal(), rng.normal());
    MatrixC G = A * A.adjoint() + 1e-6 * MatrixC::Identity(d, d);
    gs.push_back(G);
    total += G;
  }
  HermitianOp S(total, m, n);
  MatrixC root = pseudo_inverse(sqrt_psd(S)).mat;
  std::vector<HermitianOp> out;
  for (const MatrixC& G : gs) out.push_back(HermitianOp(root * G * root, m, n));
  return out;
}

inline Strategy random_strategy(const Game& g, int m, int n,
                                std::uint64_t seed, std::uint64_t stream) {
  Rng rng(seed, 0x67616d65ull + stream);
  Strategy s;
  s.n = n;
  for (int x = 0; x < g.nx; ++x)
    s.alice.push_back(random_povm(m, n, g.na, rng));
  for (int y = 0; y < g.ny; ++y) s.bob.push_back(random_povm(m, n, g.nb, rng));
  return s;
}

// Best response to fixed score operators K_a: since sum_a P_a = id pins
// sum_a Tr(P_a Kbar) for the mean score Kbar, only the centered scores
// matter, and their unconstrained optimum over 0 <= P_a <= id is the
// projector onto each positive eigenspace (exact for two outcomes).
// Rounding restores the sub-POVM structure and the leftover identity mass
// is split evenly.
inline std::vector<HermitianOp> projector_response(
    const std::vector<HermitianOp>& scores) {
  long d = scores[0].dim();
  int m = scores[0].m, n = scores[0].n;
  MatrixC mean = MatrixC::Zero(d, d);
  for (const HermitianOp& K : scores) mean += K.mat;
  mean /= static_cast<double>(scores.size());
  std::vector<HermitianOp> proj;
  for (const HermitianOp& K : scores) {
    Spectral s = spectral_decompose(HermitianOp(K.mat - mean, m, n));
    MatrixC P = MatrixC::Zero(d, d);
    for (long k = 0; k < s.eigenvalues.size(); ++k)
      if (s.eigenvalues[k] > 0.0)
        P += s.vectors.col(k) * s.vectors.col(k).adjoint();
    proj.push_back(HermitianOp(P, m, n));
  }
  SubPovm rounded = round_sub_povm(proj, true);
  MatrixC total = MatrixC::Zero(d, d);
  for (const HermitianOp& P : rounded.elements) total += P.mat;
  MatrixC rest = (MatrixC::Identity(d, d) - total) /
                 static_cast<double>(scores.size());
  std::vector<HermitianOp> out;
  for (const HermitianOp& P : rounded.elements)
    out.push_back(HermitianOp(P.mat + rest, m, n));
  return out;
}

}  // namespace detail

namespace detail {

inline SeesawResult seesaw_single(const Game& g, const BipartiteState& psi,
                                  int n, int iterations, Strategy cur) {
  validate_strategy(g, cur, psi.mA, psi.mB);
  double val = eval_strategy(g, cur, psi);
  SeesawResult res;
  res.trace.push_back(val);

  BipartiteState flipped = swap_sides(psi);
  for (int it = 0; it < iterations; ++it) {
    // first player responds to the second player's fixed measurements
    Strategy prop = cur;
    for (int x = 0; x < g.nx; ++x) {
      std::vector<HermitianOp> scores;
      for (int a = 0; a < g.na; ++a) {
        long d = ipow(psi.mA, n);
        MatrixC K = MatrixC::Zero(d, d);
        for (int y = 0; y < g.ny; ++y) {
          if (g.mu[x][y] == 0.0) continue;
          for (int b = 0; b < g.nb; ++b)
            if (g.predicate(x, y, a, b))
              K += g.mu[x][y] * markov_T(cur.bob[y][b], psi, n).mat;
        }
        scores.push_back(HermitianOp(K, psi.mA, n));
      }
      prop.alice[x] = detail::projector_response(scores);
    }
    double v2 = eval_strategy(g, prop, psi);
    if (v2 > val - 1e-12) {
      cur = prop;
      val = v2;
    }

    // second player responds symmetrically through the swapped state
    prop = cur;
    for (int y = 0; y < g.ny; ++y) {
      std::vector<HermitianOp> scores;
      for (int b = 0; b < g.nb; ++b) {
        long d = ipow(psi.mB, n);
        MatrixC K = MatrixC::Zero(d, d);
        for (int x = 0; x < g.nx; ++x) {
          if (g.mu[x][y] == 0.0) continue;
          for (int a = 0; a < g.na; ++a)
            if (g.predicate(x, y, a, b))
              K += g.mu[x][y] * markov_T(cur.alice[x][a], flipped, n).mat;
        }
        scores.push_back(HermitianOp(K, psi.mB, n));
      }
      prop.bob[y] = detail::projector_response(scores);
    }
    v2 = eval_strategy(g, prop, psi);
    if (v2 > val - 1e-12) {
      cur = prop;
      val = v2;
    }
    res.trace.push_back(val);
  }
  res.strategy = cur;
  return res;
}

}  // namespace detail

// Alternating best responses from independently seeded restarts; the run
// with the best final value is returned, so the trace stays monotone. When
// an initial strategy is supplied it seeds the first restart.
inline SeesawResult seesaw_optimize(const Game& g, const BipartiteState& psi,
                                    int n, int iterations, std::uint64_t seed,
                                    const Strategy* init = nullptr,
                                    int restarts = 4) {
  g.validate();
  if (iterations < 1)
    throw ArgumentError("seesaw_optimize: need at least one iteration");
  if (restarts < 1)
    throw ArgumentError("seesaw_optimize: need at least one restart");
  if (psi.mA != psi.mB)
    throw ArgumentError("seesaw_optimize: local dimensions must match");
  SeesawResult best;
  for (int r = 0; r < restarts; ++r) {
    Strategy start =
        (r == 0 && init)
            ? *init
            : detail::random_strategy(g, psi.mA, n, seed,
                                      static_cast<std::uint64_t>(r));
    SeesawResult cand = detail::seesaw_single(g, psi, n, iterations, start);
    if (best.trace.empty() || cand.trace.back() > best.trace.back())
      best = cand;
  }
  return best;
}

}  // namespace mescalc
