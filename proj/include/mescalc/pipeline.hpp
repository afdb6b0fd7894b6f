#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mescalc/channels.hpp"
#include "mescalc/matfun.hpp"
#include "mescalc/randop.hpp"

namespace mescalc {

// ---------------------------------------------------------------------------
// seed derivation
//
// Every stochastic draw in the pipeline is keyed on (run seed, stage tag,
// small index). Family indices never enter a key, so identical input
// families see identical draws.

namespace seedtag {
inline constexpr std::uint64_t kDimMap = 0x6d617464ull;    // dimension-reduction map
inline constexpr std::uint64_t kDimNorm = 0x6e326d63ull;   // composed 2/4-norm MC
inline constexpr std::uint64_t kDimCorr = 0x63726d63ull;   // composed correlation MC
inline constexpr std::uint64_t kDimZeta = 0x7a746d63ull;   // composed zeta MC
inline constexpr std::uint64_t kHermite = 0x68726563ull;   // coefficient re-estimation
}  // namespace seedtag

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag,
                                 std::uint64_t k = 0) {
  return detail::mix64(seed ^ detail::mix64(tag * detail::kGolden) ^
                       detail::mix64((k + 1) * 0x94d049bb133111ebull));
}

// ---------------------------------------------------------------------------
// smoothing rate shared by the operator and Gaussian smoothing stages

inline double smoothing_rate(double rho, double delta, double c_smooth = 1.0) {
  if (delta <= 0.0 || delta >= 1.0)
    throw ArgumentError("smoothing_rate: delta must be in (0,1)");
  if (rho < 0.0 || rho >= 1.0)
    throw ArgumentError("smoothing_rate: rho must be in [0,1)");
  if (c_smooth <= 0.0)
    throw ArgumentError("smoothing_rate: c_smooth must be positive");
  return c_smooth * (1.0 - rho) * (delta / 2.0) / std::log(2.0 / delta);
}

// Degree after which the smoothed tail mass drops below delta: the noise
// factor (1-gamma)^{2d} <= exp(-2 gamma d) <= delta for d >= log(1/delta)/(2 gamma).
inline long long smoothing_degree(double delta, double gamma) {
  if (gamma <= 0.0) throw ArgumentError("smoothing_degree: gamma must be positive");
  double d = std::ceil(std::log(1.0 / delta) / (2.0 * gamma));
  double cap = 9.0e18;
  return static_cast<long long>(std::min(d, cap));
}

// ---------------------------------------------------------------------------
// full-scale parameter magnitudes
//
// The closed-form parameter chain produces numbers far past double range, so
// quantities are tracked as log10 values, falling back to log10(log10(x))
// when even the exponent overflows.

struct Magnitude {
  double log10 = 0.0;
  double log10_log10 = std::numeric_limits<double>::quiet_NaN();

  bool finite() const { return std::isfinite(log10); }

  double value() const {
    return log10 < 308.0 ? std::pow(10.0, log10)
                         : std::numeric_limits<double>::infinity();
  }

  std::string str() const {
    char buf[64];
    if (std::isfinite(log10) && std::fabs(log10) < 15.0) {
      std::snprintf(buf, sizeof buf, "%.6g", std::pow(10.0, log10));
    } else if (std::isfinite(log10)) {
      std::snprintf(buf, sizeof buf, "1e%.6g", log10);
    } else if (std::isfinite(log10_log10)) {
      std::snprintf(buf, sizeof buf, "10^(1e%.6g)", log10_log10);
    } else {
      return "inf";
    }
    return buf;
  }
};

inline Magnitude mag_from_log10(double l) {
  Magnitude x;
  x.log10 = l;
  x.log10_log10 = l > 0.0 ? std::log10(l) : std::numeric_limits<double>::quiet_NaN();
  return x;
}

// log10(10^a + 10^b) without overflow
inline double logsum10(double a, double b) {
  if (!std::isfinite(a)) return std::isfinite(b) ? std::max(a, b) : std::max(a, b);
  if (!std::isfinite(b)) return std::max(a, b);
  double hi = std::max(a, b), lo = std::min(a, b);
  return hi + std::log10(1.0 + std::pow(10.0, lo - hi));
}

struct PaperScale {
  double delta = 0.0;   // smoothing budget, exactly representable
  double gamma = 0.0;   // stage-1 depolarizing rate
  Magnitude tau;        // influence threshold
  Magnitude d1;         // operator smoothing degree
  Magnitude d2;         // Gaussian smoothing degree
  Magnitude h_bound;    // high-influence register bound 2*s*t*d1/tau
  Magnitude n0;         // reduced Gaussian dimension
  Magnitude n1;         // multilinearization blow-up
  Magnitude big_d;      // total output registers n0*n1 + h
  long max_registers = 0;
  bool executable = false;
};

// Full-scale parameter chain with every unspecified leading constant set to
// one. s is taken as the total family count a + b. The result is for
// reporting only; run_pipeline always takes desk-scale values.
inline PaperScale compute_params_paper(double epsilon, double rho, int m,
                                       int t, int a, int b,
                                       double c_smooth = 1.0) {
  if (epsilon <= 0.0 || epsilon >= 1.0)
    throw ArgumentError("compute_params_paper: epsilon must be in (0,1)");
  if (rho <= 0.0 || rho >= 1.0)
    throw ArgumentError("compute_params_paper: rho must be in (0,1)");
  if (m < 2) throw ArgumentError("compute_params_paper: need m >= 2");
  if (t < 1 || a < 1 || b < 1)
    throw ArgumentError("compute_params_paper: need t, a, b >= 1");
  if (c_smooth <= 0.0)
    throw ArgumentError("compute_params_paper: c_smooth must be positive");

  double s = static_cast<double>(a) + static_cast<double>(b);
  double td = static_cast<double>(t);
  double ln10 = std::log(10.0);

  PaperScale out;
  double ln_delta =
      8.0 * std::log(epsilon) - 16.0 * ln10 - 2.0 * std::log(td) - std::log(s);
  out.delta = std::exp(ln_delta);
  double big_l = -ln_delta;  // log(1/delta)
  out.gamma = c_smooth * (1.0 - rho) * (out.delta / 2.0) /
              (std::log(2.0) + big_l);

  double log10_tau =
      (12.0 * std::log(epsilon) - 2.0 * std::log(s) - 3.0 * std::log(td) -
       std::log(static_cast<double>(m)) * big_l * big_l /
           ((1.0 - rho) * out.delta)) /
      ln10;
  out.tau = mag_from_log10(log10_tau);

  double log10_d1 = (std::log(2.0) + 2.0 * std::log(big_l) -
                     std::log(c_smooth) - std::log(1.0 - rho) - ln_delta) /
                    ln10;
  out.d1 = mag_from_log10(log10_d1);

  double log10_d2 =
      (2.0 * std::log(big_l) - ln_delta - std::log(1.0 - rho)) / ln10;
  out.d2 = mag_from_log10(log10_d2);

  double log10_h = std::log10(2.0 * s * td) + log10_d1 - log10_tau;
  out.h_bound = mag_from_log10(log10_h);

  // n0 = m^h d1^d1 s^6 t^12 / delta^6, dominated by the first two factors
  double h_val = std::pow(10.0, log10_h);
  double d1_val = std::pow(10.0, log10_d1);
  double log10_n0 = h_val * std::log10(static_cast<double>(m)) +
                    d1_val * std::max(log10_d1, 0.5) +
                    6.0 * std::log10(s) + 12.0 * std::log10(td) -
                    6.0 * ln_delta / ln10;
  out.n0 = mag_from_log10(log10_n0);
  if (!std::isfinite(log10_n0)) {
    double ll_mh = log10_h + std::log10(std::log10(static_cast<double>(m)));
    double ll_dd = log10_d1 + std::log10(std::max(log10_d1, 0.5));
    out.n0.log10_log10 = logsum10(ll_mh, ll_dd);
  }

  double log10_n1 = 2.0 * log10_d2 - 2.0 * log10_tau;
  out.n1 = mag_from_log10(log10_n1);

  double log10_bigd = logsum10(out.n0.log10 + log10_n1, log10_h);
  out.big_d = mag_from_log10(log10_bigd);
  if (!std::isfinite(log10_bigd))
    out.big_d.log10_log10 = logsum10(out.n0.log10_log10, std::log10(log10_n1));

  out.max_registers = static_cast<long>(
      std::log(static_cast<double>(max_dim())) / std::log(static_cast<double>(m)));
  out.executable = out.big_d.finite() &&
                   out.big_d.log10 <=
                       std::log10(static_cast<double>(out.max_registers) + 0.5);
  return out;
}

// ---------------------------------------------------------------------------
// desk-scale parameters

struct PipelineParams {
  double epsilon = 0.1;
  double delta = 0.2;
  double tau = 0.3;
  double rho = 0.8;
  double lambda = 0.1;
  int m = 2;
  int t = 2;
  int a = 1;
  int b = 1;
  int s = 2;
  int d1 = 2;
  int d2 = 2;
  int h = 1;   // high-influence register budget
  int n0 = 8;  // reduced Gaussian dimension
  int n1 = 4;  // multilinearization copies per variable
  long long mc_samples = 100000;
  std::uint64_t seed = 1;
  double c_smooth = 1.0;
  // dimension-reduction retry gates
  int dim_retries = 10;
  double corr_gate = 0.1;   // allowed correlation shift per unit N2*N2
  double n2_gate = 1.25;    // allowed 2-norm inflation factor
  double zeta_gate = 10.0;  // allowed E Tr zeta inflation factor

  void validate() const {
    auto in01 = [](double x) { return x > 0.0 && x < 1.0; };
    if (!in01(epsilon)) throw ArgumentError("PipelineParams: epsilon must be in (0,1)");
    if (!in01(delta)) throw ArgumentError("PipelineParams: delta must be in (0,1)");
    if (!in01(tau)) throw ArgumentError("PipelineParams: tau must be in (0,1)");
    if (rho < 0.0 || rho >= 1.0)
      throw ArgumentError("PipelineParams: rho must be in [0,1)");
    if (lambda <= 0.0) throw ArgumentError("PipelineParams: lambda must be positive");
    if (m < 2) throw ArgumentError("PipelineParams: need m >= 2");
    if (t < 1 || a < 1 || b < 1 || s < 1)
      throw ArgumentError("PipelineParams: need t, a, b, s >= 1");
    if (d1 < 1) throw ArgumentError("PipelineParams: need d1 >= 1");
    if (d2 < 0) throw ArgumentError("PipelineParams: need d2 >= 0");
    if (h < 0) throw ArgumentError("PipelineParams: need h >= 0");
    if (n0 < 1) throw ArgumentError("PipelineParams: need n0 >= 1");
    if (n1 < 1) throw ArgumentError("PipelineParams: need n1 >= 1");
    if (mc_samples < 1) throw ArgumentError("PipelineParams: need mc_samples >= 1");
    if (c_smooth <= 0.0)
      throw ArgumentError("PipelineParams: c_smooth must be positive");
    if (dim_retries < 1)
      throw ArgumentError("PipelineParams: need dim_retries >= 1");
    if (corr_gate <= 0.0 || n2_gate <= 0.0 || zeta_gate <= 0.0)
      throw ArgumentError("PipelineParams: gates must be positive");
  }
};

inline PipelineParams compute_params_desk(const PipelineParams& overrides) {
  overrides.validate();
  return overrides;
}

inline nlohmann::json params_to_json(const PipelineParams& p) {
  nlohmann::json j;
  j["epsilon"] = p.epsilon;
  j["delta"] = p.delta;
  j["tau"] = p.tau;
  j["rho"] = p.rho;
  j["lambda"] = p.lambda;
  j["m"] = p.m;
  j["t"] = p.t;
  j["a"] = p.a;
  j["b"] = p.b;
  j["s"] = p.s;
  j["d1"] = p.d1;
  j["d2"] = p.d2;
  j["h"] = p.h;
  j["n0"] = p.n0;
  j["n1"] = p.n1;
  j["mc_samples"] = p.mc_samples;
  j["seed"] = p.seed;
  j["c_smooth"] = p.c_smooth;
  j["dim_retries"] = p.dim_retries;
  j["corr_gate"] = p.corr_gate;
  j["n2_gate"] = p.n2_gate;
  j["zeta_gate"] = p.zeta_gate;
  return j;
}

inline PipelineParams params_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ArgumentError("params_from_json: expected an object");
  PipelineParams p;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    try {
      if (k == "epsilon") p.epsilon = it.value().get<double>();
      else if (k == "delta") p.delta = it.value().get<double>();
      else if (k == "tau") p.tau = it.value().get<double>();
      else if (k == "rho") p.rho = it.value().get<double>();
      else if (k == "lambda") p.lambda = it.value().get<double>();
      else if (k == "m") p.m = it.value().get<int>();
      else if (k == "t") p.t = it.value().get<int>();
      else if (k == "a") p.a = it.value().get<int>();
      else if (k == "b") p.b = it.value().get<int>();
      else if (k == "s") p.s = it.value().get<int>();
      else if (k == "d1") p.d1 = it.value().get<int>();
      else if (k == "d2") p.d2 = it.value().get<int>();
      else if (k == "h") p.h = it.value().get<int>();
      else if (k == "n0") p.n0 = it.value().get<int>();
      else if (k == "n1") p.n1 = it.value().get<int>();
      else if (k == "mc_samples") p.mc_samples = it.value().get<long long>();
      else if (k == "seed") p.seed = it.value().get<std::uint64_t>();
      else if (k == "c_smooth") p.c_smooth = it.value().get<double>();
      else if (k == "dim_retries") p.dim_retries = it.value().get<int>();
      else if (k == "corr_gate") p.corr_gate = it.value().get<double>();
      else if (k == "n2_gate") p.n2_gate = it.value().get<double>();
      else if (k == "zeta_gate") p.zeta_gate = it.value().get<double>();
      else throw ArgumentError("params_from_json: unknown key '" + k + "'");
    } catch (const nlohmann::json::exception&) {
      throw ArgumentError("params_from_json: bad value for key '" + k + "'");
    }
  }
  p.validate();
  return p;
}

// ---------------------------------------------------------------------------
// stage reports

struct StageMetric {
  std::string quantity;
  std::string family;  // empty for stage-level scalars
  std::string index;
  double value = 0.0;
  double std_error = 0.0;
  bool has_se = false;
};

struct StageReport {
  std::string stage;
  std::vector<StageMetric> metrics;
  double elapsed_seconds = 0.0;

  void add(const std::string& quantity, const std::string& family,
           const std::string& index, double value) {
    metrics.push_back({quantity, family, index, value, 0.0, false});
  }

  void add_se(const std::string& quantity, const std::string& family,
              const std::string& index, double value, double se) {
    metrics.push_back({quantity, family, index, value, se, true});
  }

  double get(const std::string& quantity, const std::string& family = "",
             const std::string& index = "") const {
    for (const StageMetric& m : metrics)
      if (m.quantity == quantity && m.family == family && m.index == index)
        return m.value;
    throw ArgumentError("StageReport: no metric '" + quantity + "' for '" +
                        family + "'/'" + index + "'");
  }
};

inline nlohmann::json report_to_json(const StageReport& r,
                                     bool include_elapsed = false) {
  nlohmann::json j;
  j["stage"] = r.stage;
  if (include_elapsed) j["elapsed_seconds"] = r.elapsed_seconds;
  nlohmann::json ms = nlohmann::json::array();
  for (const StageMetric& m : r.metrics) {
    nlohmann::json e;
    e["quantity"] = m.quantity;
    e["family"] = m.family;
    e["index"] = m.index;
    e["value"] = m.value;
    if (m.has_se) e["std_error"] = m.std_error;
    ms.push_back(e);
  }
  j["metrics"] = ms;
  return j;
}

inline nlohmann::json reports_to_json(const std::vector<StageReport>& rs,
                                      bool include_elapsed = false) {
  nlohmann::json j = nlohmann::json::array();
  for (const StageReport& r : rs) j.push_back(report_to_json(r, include_elapsed));
  return j;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline std::string reports_to_csv(const std::vector<StageReport>& rs) {
  std::string out = "stage,quantity,family,index,value,std_error\n";
  for (const StageReport& r : rs)
    for (const StageMetric& m : r.metrics) {
      out += csv_field(r.stage) + ',' + csv_field(m.quantity) + ',' +
             csv_field(m.family) + ',' + csv_field(m.index) + ',' +
             fmt17(m.value) + ',' + (m.has_se ? fmt17(m.std_error) : "") + '\n';
    }
  return out;
}

// ---------------------------------------------------------------------------
// stage 1: operator smoothing

struct SmoothResult {
  std::vector<HermitianOp> ops;
  double gamma = 0.0;
  long long d1 = 0;
};

inline SmoothResult smooth_operators(const std::vector<HermitianOp>& ops,
                                     const BipartiteState& psi, double delta,
                                     double c_smooth = 1.0) {
  double rho = max_correlation(psi);
  SmoothResult out;
  out.gamma = smoothing_rate(rho, delta, c_smooth);
  out.d1 = smoothing_degree(delta, out.gamma);
  out.ops.reserve(ops.size());
  for (const HermitianOp& P : ops) {
    Spectral s = spectral_decompose(P);
    if (s.eigenvalues.minCoeff() < -1e-9 ||
        s.eigenvalues.maxCoeff() > 1.0 + 1e-9)
      throw DomainError("smooth_operators: input outside [0, id]");
    out.ops.push_back(depolarize(P, 1.0 - out.gamma));
  }
  return out;
}

// ---------------------------------------------------------------------------
// stage 2: high-influence registers

// Union over inputs of the registers whose influence on the degree-d
// truncation reaches tau. |H| <= (2d/tau) * (number of inputs) because each
// input's truncated total influence is at most d * norm2sq <= d.
inline std::vector<int> regularize(const std::vector<FourierRep>& reps,
                                   int d, double tau) {
  if (reps.empty()) throw ArgumentError("regularize: no inputs");
  if (d < 0) throw ArgumentError("regularize: negative degree");
  if (tau <= 0.0) throw ArgumentError("regularize: tau must be positive");
  int n = reps[0].n();
  std::set<int> high;
  for (const FourierRep& rep : reps) {
    if (rep.n() != n)
      throw ArgumentError("regularize: register counts differ");
    FourierRep low = rep.truncated(TruncMode::at_most, d);
    for (int i = 0; i < n; ++i)
      if (low.influence(i) >= tau) high.insert(i);
  }
  return std::vector<int>(high.begin(), high.end());
}

// ---------------------------------------------------------------------------
// stage 3: substitution into joint random operators
//
// Registers in H keep their basis elements; each remaining register's
// nontrivial basis index b becomes a Gaussian variable. The two sides use
// disjoint halves of 2*(m^2-1)*(n-h) rho-correlated pairs: the first side
// reads variable slot*(m^2-1)+(b-1) directly, and the second side expands
// each factor as (c_b/rho) * paired + sqrt(1-(c_b/rho)^2) * fresh, so the
// cross moment of a matched factor is exactly c_b.

inline RandomOperator to_random_side(const FourierRep& rep,
                                     const std::vector<int>& H,
                                     const CorrelationData& aligned,
                                     int d, bool second_side) {
  int n = rep.n(), m = rep.m();
  detail::require_same_basis(
      rep.basis(), second_side ? aligned.basisB : aligned.basisA, "to_random");
  std::vector<int> slot(n, -1);
  std::vector<bool> in_h(n, false);
  for (int i : H) {
    if (i < 0 || i >= n) throw ArgumentError("to_random: register out of range");
    if (in_h[i]) throw ArgumentError("to_random: duplicate register in H");
    in_h[i] = true;
  }
  int nfree = 0;
  for (int i = 0; i < n; ++i)
    if (!in_h[i]) slot[i] = nfree++;
  int per = m * m - 1;
  int nv = 2 * per * nfree;
  double rho = aligned.singular_values.size() > 1
                   ? std::max(aligned.singular_values[1], 0.0)
                   : 0.0;

  RandomOperator out(m, static_cast<int>(H.size()), nv, rep.basis());
  FourierRep low = rep.truncated(TruncMode::at_most, d);
  low.for_each([&](std::uint64_t flat, double v) {
    MultiIndex s = low.decode(flat);
    MultiIndex sigma_h;
    sigma_h.reserve(H.size());
    for (int i = 0; i < n; ++i)
      if (in_h[i]) sigma_h.push_back(s[i]);
    std::vector<std::pair<int, int>> factors;  // (slot, basis index)
    for (int i = 0; i < n; ++i)
      if (!in_h[i] && s[i] != 0) factors.push_back({slot[i], s[i]});

    if (!second_side) {
      MultiIndex tau(nv, 0);
      for (auto [sl, bidx] : factors) tau[sl * per + bidx - 1] = 1;
      out.add_term(sigma_h, tau, v);
      return;
    }
    // expand paired/fresh choices for the second side
    MultiIndex tau(nv, 0);
    std::function<void(std::size_t, double)> branch = [&](std::size_t k,
                                                          double coef) {
      if (coef == 0.0) return;
      if (k == factors.size()) {
        out.add_term(sigma_h, tau, coef);
        return;
      }
      auto [sl, bidx] = factors[k];
      double cb = bidx < aligned.singular_values.size()
                      ? aligned.singular_values[bidx]
                      : 0.0;
      double ratio = cb <= 0.0 ? 0.0 : std::min(cb / rho, 1.0);
      int paired = sl * per + bidx - 1;
      int fresh = (nfree + sl) * per + bidx - 1;
      if (ratio > 0.0) {
        tau[paired] = 1;
        branch(k + 1, coef * ratio);
        tau[paired] = 0;
      }
      double rest = std::sqrt(std::max(0.0, 1.0 - ratio * ratio));
      if (rest > 0.0) {
        tau[fresh] = 1;
        branch(k + 1, coef * rest);
        tau[fresh] = 0;
      }
    };
    branch(0, v);
  });
  return out;
}

inline JointRandomOperators to_random(const FourierRep& P, const FourierRep& Q,
                                      const std::vector<int>& H,
                                      const CorrelationData& aligned, int d) {
  if (P.n() != Q.n() || P.m() != Q.m())
    throw ArgumentError("to_random: operator shapes differ");
  JointRandomOperators J;
  J.P = to_random_side(P, H, aligned, d, false);
  J.Q = to_random_side(Q, H, aligned, d, true);
  double rho = aligned.singular_values.size() > 1
                   ? std::min(std::max(aligned.singular_values[1], 0.0), 1.0)
                   : 0.0;
  J.spec = CorrelatedGaussianSpec::constant(J.P.nvars(), rho);
  return J;
}

// ---------------------------------------------------------------------------
// sampled functionals of composed operators

inline NormEstimate composed_np_mc(const ComposedRandomOperator& C, int p,
                                   std::int64_t samples, std::uint64_t seed) {
  if (p != 2 && p != 4) throw ArgumentError("composed_np_mc: p must be 2 or 4");
  C.validate();
  NormEstimate est;
  est.moment = mc_run(samples, seed, 0x636e706dull, [&](Rng& rng) {
    VectorR x = gauss_vector(rng, C.n_in());
    double nrm = schatten_norm(C.eval(x), static_cast<double>(p));
    return std::pow(nrm, p);
  });
  if (est.moment.mean > 0.0) {
    est.value = std::pow(est.moment.mean, 1.0 / p);
    est.std_error = est.value / (p * est.moment.mean) * est.moment.std_error;
  }
  return est;
}

// Monte Carlo of sum_sigma c_sigma <B_sigma, F_A(g)> <B_sigma, F_B(h)> over
// correlated pairs (g, h); matches expect_corr when the evaluators are
// polynomial.
inline McResult expect_corr_mc(
    const std::function<MatrixC(const VectorR&)>& eval_a,
    const std::function<MatrixC(const VectorR&)>& eval_b, int m, int h,
    const CorrelationData& aligned, const CorrelatedGaussianSpec& spec,
    std::int64_t samples, std::uint64_t seed) {
  std::vector<MatrixC> elems_a = build_tensor_elements(aligned.basisA, h);
  std::vector<MatrixC> elems_b = build_tensor_elements(aligned.basisB, h);
  long base = static_cast<long>(m) * m;
  std::vector<double> weight(elems_a.size(), 1.0);
  for (std::size_t k = 0; k < weight.size(); ++k) {
    std::uint64_t flat = k;
    double w = 1.0;
    for (int r = 0; r < h; ++r) {
      long digit = static_cast<long>(flat % base);
      flat /= base;
      w *= digit < aligned.singular_values.size()
               ? aligned.singular_values[digit]
               : 0.0;
    }
    weight[k] = w;
  }
  return mc_run(samples, seed, 0x636f726dull, [&](Rng& rng) {
    GaussianPair s = sample_correlated(spec, rng);
    MatrixC fa = eval_a(s.g), fb = eval_b(s.h);
    Kahan acc;
    for (std::size_t k = 0; k < weight.size(); ++k) {
      if (weight[k] == 0.0) continue;
      acc.add(weight[k] * inner_c(elems_a[k], fa).real() *
              inner_c(elems_b[k], fb).real());
    }
    return acc.value();
  });
}

// ---------------------------------------------------------------------------
// stage 4: Gaussian dimension reduction

struct DimReduceGates {
  double corr_gate = 0.1;   // |corr shift| <= corr_gate * N2(P) * N2(Q) + 4 SE
  double n2_gate = 1.25;    // N2 after <= n2_gate * N2 before + 4 SE
  double zeta_gate = 10.0;  // E Tr zeta after <= zeta_gate * before + 4 SE
  int max_attempts = 10;
};

struct DimReduceResult {
  std::vector<ComposedRandomOperator> first;
  std::vector<ComposedRandomOperator> second;
  CorrelatedGaussianSpec spec;  // n0 fresh correlated pairs
  MatrixR map;                  // shared n_in x n0 Gaussian matrix
  int attempts = 0;
  StageReport report;
};

// Shared-map reduction for whole operator families: one Gaussian matrix is
// drawn per attempt and judged against the gates on every operator and every
// cross pair; a failed gate redraws the map for all of them.
inline DimReduceResult dim_reduce_ops(
    const std::vector<RandomOperator>& ops_a,
    const std::vector<RandomOperator>& ops_b,
    const std::vector<std::pair<std::string, std::string>>& labels_a,
    const std::vector<std::pair<std::string, std::string>>& labels_b,
    const CorrelationData& aligned, int n0, std::uint64_t seed,
    const DimReduceGates& gates = {}, std::int64_t mc_samples = 100000) {
  if (ops_a.empty() || ops_b.empty())
    throw ArgumentError("dim_reduce: empty operator list");
  if (n0 < 1) throw ArgumentError("dim_reduce: need n0 >= 1");
  if (gates.max_attempts < 1)
    throw ArgumentError("dim_reduce: need at least one attempt");
  if (labels_a.size() != ops_a.size() || labels_b.size() != ops_b.size())
    throw ArgumentError("dim_reduce: label count mismatch");
  int n_in = ops_a[0].nvars();
  int h = ops_a[0].h();
  int m = ops_a[0].m();
  for (const RandomOperator& P : ops_a)
    if (P.nvars() != n_in || P.h() != h || P.m() != m)
      throw ArgumentError("dim_reduce: operator shapes differ");
  for (const RandomOperator& Q : ops_b)
    if (Q.nvars() != n_in || Q.h() != h || Q.m() != m)
      throw ArgumentError("dim_reduce: operator shapes differ");

  double rho = aligned.singular_values.size() > 1
                   ? std::min(std::max(aligned.singular_values[1], 0.0), 1.0)
                   : 0.0;
  CorrelatedGaussianSpec in_spec = CorrelatedGaussianSpec::constant(n_in, rho);
  CorrelatedGaussianSpec out_spec = CorrelatedGaussianSpec::constant(n0, rho);

  DimReduceResult res;
  res.spec = out_spec;
  res.report.stage = "dim_reduce";

  bool all_const = true;
  for (const RandomOperator& P : ops_a) all_const &= P.poly_degree() == 0;
  for (const RandomOperator& Q : ops_b) all_const &= Q.poly_degree() == 0;

  // exact values before the reduction
  std::vector<double> n2_a, n2_b;
  for (const RandomOperator& P : ops_a) n2_a.push_back(P.n2());
  for (const RandomOperator& Q : ops_b) n2_b.push_back(Q.n2());
  std::vector<std::vector<double>> corr_before(ops_a.size(),
                                               std::vector<double>(ops_b.size()));
  for (std::size_t i = 0; i < ops_a.size(); ++i)
    for (std::size_t j = 0; j < ops_b.size(); ++j)
      corr_before[i][j] =
          expect_corr({ops_a[i], ops_b[j], in_spec}, aligned);

  if (all_const) {
    // constant polynomials do not read their input; keep them exact
    res.map = MatrixR::Zero(n_in, n0);
    for (const RandomOperator& P : ops_a)
      res.first.push_back({P, res.map, true});
    for (const RandomOperator& Q : ops_b)
      res.second.push_back({Q, res.map, true});
    res.attempts = 0;
    res.report.add("attempts", "", "", 0.0);
    for (std::size_t i = 0; i < ops_a.size(); ++i) {
      res.report.add("n2_before", labels_a[i].first, labels_a[i].second, n2_a[i]);
      res.report.add("n2_after", labels_a[i].first, labels_a[i].second, n2_a[i]);
    }
    for (std::size_t j = 0; j < ops_b.size(); ++j) {
      res.report.add("n2_before", labels_b[j].first, labels_b[j].second, n2_b[j]);
      res.report.add("n2_after", labels_b[j].first, labels_b[j].second, n2_b[j]);
    }
    for (std::size_t i = 0; i < ops_a.size(); ++i)
      for (std::size_t j = 0; j < ops_b.size(); ++j) {
        std::string fam = labels_a[i].first + "," + labels_b[j].first;
        std::string idx = labels_a[i].second + "," + labels_b[j].second;
        res.report.add("corr_before", fam, idx, corr_before[i][j]);
        res.report.add("corr_after", fam, idx, corr_before[i][j]);
      }
    return res;
  }

  // MC zeta baselines, once
  std::vector<McResult> zeta_a, zeta_b;
  for (std::size_t i = 0; i < ops_a.size(); ++i)
    zeta_a.push_back(expect_tr_zeta(
        ops_a[i], mc_samples, derive_seed(seed, seedtag::kDimZeta, 2 * i)));
  for (std::size_t j = 0; j < ops_b.size(); ++j)
    zeta_b.push_back(expect_tr_zeta(
        ops_b[j], mc_samples, derive_seed(seed, seedtag::kDimZeta, 2 * j + 1)));

  char msg[256] = "dim_reduce: no attempt made";
  for (int attempt = 0; attempt < gates.max_attempts; ++attempt) {
    Rng mrng(derive_seed(seed, seedtag::kDimMap, attempt), 0);
    MatrixR map(n_in, n0);
    for (int r = 0; r < n_in; ++r)
      for (int c = 0; c < n0; ++c) map(r, c) = mrng.normal();

    std::vector<ComposedRandomOperator> comp_a, comp_b;
    for (const RandomOperator& P : ops_a) comp_a.push_back({P, map, true});
    for (const RandomOperator& Q : ops_b) comp_b.push_back({Q, map, true});

    auto key = [&](std::uint64_t side, std::uint64_t i, std::uint64_t j) {
      return ((static_cast<std::uint64_t>(attempt) * 2 + side) << 24) |
             (i << 12) | j;
    };

    bool ok = true;
    std::vector<NormEstimate> n2a_after(comp_a.size()), n2b_after(comp_b.size());
    std::vector<McResult> za_after(comp_a.size()), zb_after(comp_b.size());
    for (std::size_t i = 0; i < comp_a.size() && ok; ++i) {
      n2a_after[i] = composed_np_mc(comp_a[i], 2, mc_samples,
                                    derive_seed(seed, seedtag::kDimNorm, key(0, i, 0)));
      za_after[i] = expect_tr_zeta(comp_a[i], mc_samples,
                                   derive_seed(seed, seedtag::kDimZeta, key(0, i, 1)));
      if (n2a_after[i].value > gates.n2_gate * n2_a[i] + 4.0 * n2a_after[i].std_error) {
        std::snprintf(msg, sizeof msg,
                      "dim_reduce: 2-norm inflated %.6g -> %.6g (se %.2g)",
                      n2_a[i], n2a_after[i].value, n2a_after[i].std_error);
        ok = false;
      } else if (za_after[i].mean >
                 gates.zeta_gate * zeta_a[i].mean +
                     4.0 * (za_after[i].std_error + zeta_a[i].std_error) + 1e-12) {
        std::snprintf(msg, sizeof msg,
                      "dim_reduce: E Tr zeta inflated %.6g -> %.6g",
                      zeta_a[i].mean, za_after[i].mean);
        ok = false;
      }
    }
    for (std::size_t j = 0; j < comp_b.size() && ok; ++j) {
      n2b_after[j] = composed_np_mc(comp_b[j], 2, mc_samples,
                                    derive_seed(seed, seedtag::kDimNorm, key(1, j, 0)));
      zb_after[j] = expect_tr_zeta(comp_b[j], mc_samples,
                                   derive_seed(seed, seedtag::kDimZeta, key(1, j, 1)));
      if (n2b_after[j].value > gates.n2_gate * n2_b[j] + 4.0 * n2b_after[j].std_error) {
        std::snprintf(msg, sizeof msg,
                      "dim_reduce: 2-norm inflated %.6g -> %.6g (se %.2g)",
                      n2_b[j], n2b_after[j].value, n2b_after[j].std_error);
        ok = false;
      } else if (zb_after[j].mean >
                 gates.zeta_gate * zeta_b[j].mean +
                     4.0 * (zb_after[j].std_error + zeta_b[j].std_error) + 1e-12) {
        std::snprintf(msg, sizeof msg,
                      "dim_reduce: E Tr zeta inflated %.6g -> %.6g",
                      zeta_b[j].mean, zb_after[j].mean);
        ok = false;
      }
    }
    std::vector<std::vector<McResult>> corr_after(
        comp_a.size(), std::vector<McResult>(comp_b.size()));
    for (std::size_t i = 0; i < comp_a.size() && ok; ++i)
      for (std::size_t j = 0; j < comp_b.size() && ok; ++j) {
        corr_after[i][j] = expect_corr_mc(
            [&](const VectorR& x) { return comp_a[i].eval_matrix(x); },
            [&](const VectorR& y) { return comp_b[j].eval_matrix(y); }, m, h,
            aligned, out_spec, mc_samples,
            derive_seed(seed, seedtag::kDimCorr, key(0, i, j)));
        double shift = std::fabs(corr_after[i][j].mean - corr_before[i][j]);
        double allowed = gates.corr_gate * n2_a[i] * n2_b[j] +
                         4.0 * corr_after[i][j].std_error;
        if (shift > allowed) {
          std::snprintf(msg, sizeof msg,
                        "dim_reduce: correlation shifted %.6g -> %.6g "
                        "(|shift| %.3g > %.3g)",
                        corr_before[i][j], corr_after[i][j].mean, shift, allowed);
          ok = false;
        }
      }
    if (!ok) continue;

    res.map = map;
    res.first = comp_a;
    res.second = comp_b;
    res.attempts = attempt + 1;
    res.report.add("attempts", "", "", static_cast<double>(res.attempts));
    for (std::size_t i = 0; i < comp_a.size(); ++i) {
      res.report.add("n2_before", labels_a[i].first, labels_a[i].second, n2_a[i]);
      res.report.add_se("n2_after", labels_a[i].first, labels_a[i].second,
                        n2a_after[i].value, n2a_after[i].std_error);
      res.report.add_se("zeta_before", labels_a[i].first, labels_a[i].second,
                        zeta_a[i].mean, zeta_a[i].std_error);
      res.report.add_se("zeta_after", labels_a[i].first, labels_a[i].second,
                        za_after[i].mean, za_after[i].std_error);
    }
    for (std::size_t j = 0; j < comp_b.size(); ++j) {
      res.report.add("n2_before", labels_b[j].first, labels_b[j].second, n2_b[j]);
      res.report.add_se("n2_after", labels_b[j].first, labels_b[j].second,
                        n2b_after[j].value, n2b_after[j].std_error);
      res.report.add_se("zeta_before", labels_b[j].first, labels_b[j].second,
                        zeta_b[j].mean, zeta_b[j].std_error);
      res.report.add_se("zeta_after", labels_b[j].first, labels_b[j].second,
                        zb_after[j].mean, zb_after[j].std_error);
    }
    for (std::size_t i = 0; i < comp_a.size(); ++i)
      for (std::size_t j = 0; j < comp_b.size(); ++j) {
        std::string fam = labels_a[i].first + "," + labels_b[j].first;
        std::string idx = labels_a[i].second + "," + labels_b[j].second;
        res.report.add("corr_before", fam, idx, corr_before[i][j]);
        res.report.add_se("corr_after", fam, idx, corr_after[i][j].mean,
                          corr_after[i][j].std_error);
      }
    return res;
  }
  throw StochasticError(std::string(msg) + " after " +
                        std::to_string(gates.max_attempts) + " attempts");
}

inline DimReduceResult dim_reduce(const JointRandomOperators& J,
                                  const CorrelationData& aligned, int n0,
                                  std::uint64_t seed,
                                  const DimReduceGates& gates = {},
                                  std::int64_t mc_samples = 100000) {
  return dim_reduce_ops({J.P}, {J.Q}, {{"P", "0"}}, {{"Q", "0"}}, aligned, n0,
                        seed, gates, mc_samples);
}

// ---------------------------------------------------------------------------
// stage 5: Gaussian smoothing

inline RandomOperator smooth_random_op(const RandomOperator& P, double gamma,
                                       int d2) {
  if (gamma < 0.0 || gamma > 1.0)
    throw ArgumentError("smooth_random: gamma must be in [0,1]");
  RandomOperator out(P.m(), P.h(), P.nvars(), P.basis());
  P.for_each_term([&](const MultiIndex& sigma, const HermitePoly& p) {
    HermitePoly q = degree_truncate(ou_apply(p, 1.0 - gamma), d2);
    if (q.term_count() > 0) out.set_poly(sigma, q);
  });
  return out;
}

struct SmoothRandomResult {
  JointRandomOperators J;
  double gamma = 0.0;
  int d2 = 0;
};

inline SmoothRandomResult smooth_random(const JointRandomOperators& J,
                                        double delta, double rho,
                                        int d2 = -1, double c_smooth = 1.0) {
  SmoothRandomResult out;
  out.gamma = smoothing_rate(rho, delta, c_smooth);
  if (d2 < 0) {
    long long auto_d = smoothing_degree(delta, out.gamma);
    out.d2 = static_cast<int>(
        std::min<long long>(auto_d, std::numeric_limits<int>::max()));
  } else {
    out.d2 = d2;
  }
  out.J.P = smooth_random_op(J.P, out.gamma, out.d2);
  out.J.Q = smooth_random_op(J.Q, out.gamma, out.d2);
  out.J.spec = J.spec;
  return out;
}

// ---------------------------------------------------------------------------
// stage 6: multilinearization

// H_r((y_1+...+y_t)/sqrt(t)) splits over distributions of r among the t
// copies; the multilinear part keeps the r-subsets, each with coefficient
// sqrt(r!) t^{-r/2}. Variable i maps to the block [i*t, (i+1)*t).
inline HermitePoly multilinearize_poly(const HermitePoly& p, int t) {
  if (t < 1) throw ArgumentError("multilinearize: need t >= 1");
  int n = p.n();
  HermitePoly out(static_cast<int>(n) * t);
  p.for_each([&](const MultiIndex& tau, double v) {
    std::vector<std::pair<int, int>> active;  // (variable, power)
    for (int i = 0; i < n; ++i)
      if (tau[i] > 0) active.push_back({i, tau[i]});
    MultiIndex ntau(static_cast<std::size_t>(n) * t, 0);
    std::function<void(std::size_t, double)> expand = [&](std::size_t k,
                                                          double coef) {
      if (k == active.size()) {
        out.add_coeff(ntau, coef);
        return;
      }
      auto [var, r] = active[k];
      if (r > t) return;  // fewer copies than the power: nothing multilinear
      double fact = 1.0;
      for (int q = 2; q <= r; ++q) fact *= q;
      double w = std::sqrt(fact) * std::pow(static_cast<double>(t), -0.5 * r);
      std::vector<int> pick(r);
      std::function<void(int, int)> choose = [&](int start, int depth) {
        if (depth == r) {
          for (int j : pick) ntau[static_cast<std::size_t>(var) * t + j] = 1;
          expand(k + 1, coef * w);
          for (int j : pick) ntau[static_cast<std::size_t>(var) * t + j] = 0;
          return;
        }
        for (int j = start; j <= t - (r - depth); ++j) {
          pick[depth] = j;
          choose(j + 1, depth + 1);
        }
      };
      choose(0, 0);
    };
    expand(0, v);
  });
  return out;
}

inline RandomOperator multilinearize_op(const RandomOperator& P, int t) {
  RandomOperator out(P.m(), P.h(), P.nvars() * t, P.basis());
  P.for_each_term([&](const MultiIndex& sigma, const HermitePoly& p) {
    HermitePoly q = multilinearize_poly(p, t);
    if (q.term_count() > 0) out.set_poly(sigma, q);
  });
  return out;
}

inline JointRandomOperators multilinearize(const JointRandomOperators& J,
                                           int t) {
  JointRandomOperators out;
  out.P = multilinearize_op(J.P, t);
  out.Q = multilinearize_op(J.Q, t);
  std::vector<double> rhos;
  rhos.reserve(static_cast<std::size_t>(J.spec.n) * t);
  for (int i = 0; i < J.spec.n; ++i)
    for (int j = 0; j < t; ++j) rhos.push_back(J.spec.rhos[i]);
  out.spec = CorrelatedGaussianSpec(J.spec.n * t, rhos);
  return out;
}

// ---------------------------------------------------------------------------
// variable compression before reconstruction

inline std::vector<int> used_variables(const std::vector<RandomOperator>& ops) {
  if (ops.empty()) throw ArgumentError("used_variables: no operators");
  int nv = ops[0].nvars();
  std::vector<bool> used(nv, false);
  for (const RandomOperator& P : ops) {
    if (P.nvars() != nv)
      throw ArgumentError("used_variables: variable counts differ");
    P.for_each_term([&](const MultiIndex&, const HermitePoly& p) {
      p.for_each([&](const MultiIndex& tau, double) {
        for (int i = 0; i < nv; ++i)
          if (tau[i] != 0) used[i] = true;
      });
    });
  }
  std::vector<int> keep;
  for (int i = 0; i < nv; ++i)
    if (used[i]) keep.push_back(i);
  return keep;
}

inline RandomOperator restrict_variables(const RandomOperator& P,
                                         const std::vector<int>& keep) {
  std::vector<int> pos(P.nvars(), -1);
  for (std::size_t k = 0; k < keep.size(); ++k) {
    int i = keep[k];
    if (i < 0 || i >= P.nvars())
      throw ArgumentError("restrict_variables: index out of range");
    pos[i] = static_cast<int>(k);
  }
  RandomOperator out(P.m(), P.h(), static_cast<int>(keep.size()), P.basis());
  P.for_each_term([&](const MultiIndex& sigma, const HermitePoly& p) {
    p.for_each([&](const MultiIndex& tau, double v) {
      MultiIndex nt(keep.size(), 0);
      for (int i = 0; i < P.nvars(); ++i) {
        if (tau[i] == 0) continue;
        if (pos[i] < 0)
          throw ArgumentError("restrict_variables: dropped variable in use");
        nt[pos[i]] = tau[i];
      }
      out.add_term(sigma, nt, v);
    });
  });
  return out;
}

inline CorrelatedGaussianSpec restrict_spec(const CorrelatedGaussianSpec& spec,
                                            const std::vector<int>& keep) {
  std::vector<double> rhos;
  rhos.reserve(keep.size());
  for (int i : keep) {
    if (i < 0 || i >= spec.n)
      throw ArgumentError("restrict_spec: index out of range");
    rhos.push_back(spec.rhos[i]);
  }
  return CorrelatedGaussianSpec(static_cast<int>(keep.size()), rhos);
}

// ---------------------------------------------------------------------------
// stage 7: reconstruction on quantum registers

struct FromRandomOp {
  HermitianOp op;
  FourierRep rep;
};

// Each Gaussian variable becomes a fresh register carrying either the
// identity (power 0) or the first nontrivial aligned basis element (power 1);
// the h quantum registers keep their indices after them. The coefficient map
// is a bijection, so the normalized 2-norm is preserved exactly.
inline FromRandomOp from_random_op(const RandomOperator& P) {
  int n = P.nvars(), h = P.h(), m = P.m();
  check_dim(ipow(m, n + h), "from_random");
  FourierRep rep(P.basis(), n + h);
  P.for_each_term([&](const MultiIndex& sigma, const HermitePoly& p) {
    p.for_each([&](const MultiIndex& tau, double v) {
      MultiIndex full(static_cast<std::size_t>(n) + h, 0);
      for (int j = 0; j < n; ++j) {
        if (tau[j] > 1)
          throw PreconditionError("from_random: polynomials must be multilinear");
        full[j] = tau[j];
      }
      for (int k = 0; k < h; ++k) full[n + k] = sigma[k];
      rep.set_coeff(full, v);
    });
  });
  FromRandomOp out{rep.reconstruct(), rep};
  double dense_n2 = schatten_norm(out.op, 2.0);
  if (std::fabs(dense_n2 - P.n2()) > 1e-9)
    throw PreconditionError("from_random: 2-norm identity violated: " +
                            fmt17(dense_n2) + " vs " + fmt17(P.n2()));
  return out;
}

inline std::pair<HermitianOp, HermitianOp> from_random(
    const JointRandomOperators& J, const CorrelationData& aligned) {
  if (J.P.h() != J.Q.h() || J.P.nvars() != J.Q.nvars())
    throw ArgumentError("from_random: operator shapes differ");
  detail::require_same_basis(J.P.basis(), aligned.basisA, "from_random");
  detail::require_same_basis(J.Q.basis(), aligned.basisB, "from_random");
  double rho = aligned.singular_values.size() > 1
                   ? std::min(std::max(aligned.singular_values[1], 0.0), 1.0)
                   : 0.0;
  for (double r : J.spec.rhos)
    if (std::fabs(r - rho) > 1e-9)
      throw ArgumentError(
          "from_random: pair correlations must equal the state's maximal "
          "correlation");
  FromRandomOp A = from_random_op(J.P);
  FromRandomOp B = from_random_op(J.Q);
  double corr_dense = aligned_corr_sum(A.rep, B.rep, aligned.singular_values);
  double corr_rand = expect_corr(J, aligned);
  if (std::fabs(corr_dense - corr_rand) > 1e-9)
    throw PreconditionError("from_random: correlation identity violated: " +
                            fmt17(corr_dense) + " vs " + fmt17(corr_rand));
  return {A.op, B.op};
}

// ---------------------------------------------------------------------------
// full chain

struct PipelineResult {
  std::vector<SubPovm> first;   // one per first-side family
  std::vector<SubPovm> second;  // one per second-side family
  std::vector<StageReport> reports;
  std::vector<int> high_influence;  // H
  std::vector<int> active_vars;     // Gaussian variables kept at reconstruction
  double gamma1 = 0.0;
  double gamma2 = 0.0;
  long long d1_auto = 0;
  int dim_attempts = 0;
  int out_registers = 0;
};

namespace detail {

inline void check_povm_family(const std::vector<HermitianOp>& fam, int m,
                              int n, int t, const char* side) {
  if (static_cast<int>(fam.size()) != t)
    throw ArgumentError(std::string("run_pipeline: ") + side +
                        " family size differs from t");
  long d = ipow(m, n);
  MatrixC total = MatrixC::Zero(d, d);
  for (const HermitianOp& P : fam) {
    if (P.m != m || P.n != n)
      throw ArgumentError(std::string("run_pipeline: ") + side +
                          " operator shape mismatch");
    Spectral s = spectral_decompose(P);
    if (s.eigenvalues.minCoeff() < -1e-9 ||
        s.eigenvalues.maxCoeff() > 1.0 + 1e-9)
      throw DomainError(std::string("run_pipeline: ") + side +
                        " element outside [0, id]");
    total += P.mat;
  }
  if ((total - MatrixC::Identity(d, d)).cwiseAbs().maxCoeff() > 1e-8)
    throw ArgumentError(std::string("run_pipeline: ") + side +
                        " family does not sum to the identity");
}

}  // namespace detail

inline PipelineResult run_pipeline(
    const std::vector<std::vector<HermitianOp>>& first_families,
    const std::vector<std::vector<HermitianOp>>& second_families,
    const BipartiteState& psi, const PipelineParams& params) {
  params.validate();
  if (psi.mA != psi.mB)
    throw ArgumentError("run_pipeline: state must have equal local dimensions");
  if (psi.mA != params.m)
    throw ArgumentError("run_pipeline: params.m does not match the state");
  if (static_cast<int>(first_families.size()) != params.a ||
      static_cast<int>(second_families.size()) != params.b)
    throw ArgumentError("run_pipeline: family counts do not match a, b");
  if (first_families.empty() || first_families[0].empty())
    throw ArgumentError("run_pipeline: empty input");
  int m = params.m;
  int n = first_families[0][0].n;
  for (const auto& fam : first_families)
    detail::check_povm_family(fam, m, n, params.t, "first-side");
  for (const auto& fam : second_families)
    detail::check_povm_family(fam, m, n, params.t, "second-side");

  CorrelationData aligned = aligned_bases(psi);
  double rho = aligned.singular_values.size() > 1
                   ? std::min(std::max(aligned.singular_values[1], 0.0), 1.0)
                   : 0.0;

  PipelineResult result;
  auto labels = [&](bool first_side, int u, int i) {
    return std::pair<std::string, std::string>(
        (first_side ? "A" : "B") + std::to_string(u), std::to_string(i));
  };
  auto timed = [&](StageReport& r, const std::chrono::steady_clock::time_point& t0) {
    r.elapsed_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
  };

  // flattened views: index k = u * t + i
  std::vector<HermitianOp> ops_a, ops_b;
  std::vector<std::pair<std::string, std::string>> lab_a, lab_b;
  for (int u = 0; u < params.a; ++u)
    for (int i = 0; i < params.t; ++i) {
      ops_a.push_back(first_families[u][i]);
      lab_a.push_back(labels(true, u, i));
    }
  for (int v = 0; v < params.b; ++v)
    for (int j = 0; j < params.t; ++j) {
      ops_b.push_back(second_families[v][j]);
      lab_b.push_back(labels(false, v, j));
    }

  std::vector<std::vector<double>> corr_initial(
      ops_a.size(), std::vector<double>(ops_b.size()));
  for (std::size_t i = 0; i < ops_a.size(); ++i)
    for (std::size_t j = 0; j < ops_b.size(); ++j)
      corr_initial[i][j] = correlation_value(ops_a[i], ops_b[j], psi, n);

  // stage 1: depolarizing smoothing
  auto t0 = std::chrono::steady_clock::now();
  StageReport r1;
  r1.stage = "smooth";
  SmoothResult sa = smooth_operators(ops_a, psi, params.delta, params.c_smooth);
  SmoothResult sb = smooth_operators(ops_b, psi, params.delta, params.c_smooth);
  result.gamma1 = sa.gamma;
  result.d1_auto = sa.d1;
  r1.add("gamma", "", "", sa.gamma);
  r1.add("d1_auto", "", "", static_cast<double>(sa.d1));
  r1.add("d1", "", "", static_cast<double>(params.d1));
  for (std::size_t i = 0; i < ops_a.size(); ++i) {
    r1.add("n2_before", lab_a[i].first, lab_a[i].second, schatten_norm(ops_a[i], 2.0));
    r1.add("n2_after", lab_a[i].first, lab_a[i].second, schatten_norm(sa.ops[i], 2.0));
  }
  for (std::size_t j = 0; j < ops_b.size(); ++j) {
    r1.add("n2_before", lab_b[j].first, lab_b[j].second, schatten_norm(ops_b[j], 2.0));
    r1.add("n2_after", lab_b[j].first, lab_b[j].second, schatten_norm(sb.ops[j], 2.0));
  }
  for (std::size_t i = 0; i < ops_a.size(); ++i)
    for (std::size_t j = 0; j < ops_b.size(); ++j) {
      std::string fam = lab_a[i].first + "," + lab_b[j].first;
      std::string idx = lab_a[i].second + "," + lab_b[j].second;
      r1.add("corr_before", fam, idx, corr_initial[i][j]);
      r1.add("corr_after", fam, idx,
             correlation_value(sa.ops[i], sb.ops[j], psi, n));
    }
  timed(r1, t0);
  result.reports.push_back(r1);

  // stage 2: high-influence registers from the truncated expansions
  t0 = std::chrono::steady_clock::now();
  StageReport r2;
  r2.stage = "regularize";
  int d_reg = static_cast<int>(std::min<long long>(params.d1, n));
  std::vector<FourierRep> reps_a, reps_b, all_reps;
  for (const HermitianOp& P : sa.ops) {
    reps_a.push_back(FourierRep::expand(P, aligned.basisA));
    all_reps.push_back(reps_a.back());
  }
  for (const HermitianOp& Q : sb.ops) {
    reps_b.push_back(FourierRep::expand(Q, aligned.basisB));
    all_reps.push_back(reps_b.back());
  }
  result.high_influence = regularize(all_reps, d_reg, params.tau);
  if (static_cast<int>(result.high_influence.size()) > params.h)
    throw ArgumentError("run_pipeline: " +
                        std::to_string(result.high_influence.size()) +
                        " high-influence registers exceed the budget h = " +
                        std::to_string(params.h));
  r2.add("H_size", "", "", static_cast<double>(result.high_influence.size()));
  for (std::size_t i = 0; i < reps_a.size(); ++i)
    for (int reg = 0; reg < n; ++reg)
      r2.add("influence", lab_a[i].first, lab_a[i].second + ":" + std::to_string(reg),
             reps_a[i].truncated(TruncMode::at_most, d_reg).influence(reg));
  for (std::size_t j = 0; j < reps_b.size(); ++j)
    for (int reg = 0; reg < n; ++reg)
      r2.add("influence", lab_b[j].first, lab_b[j].second + ":" + std::to_string(reg),
             reps_b[j].truncated(TruncMode::at_most, d_reg).influence(reg));
  timed(r2, t0);
  result.reports.push_back(r2);

  // stage 3: joint random operators
  t0 = std::chrono::steady_clock::now();
  StageReport r3;
  r3.stage = "to_random";
  std::vector<RandomOperator> rand_a, rand_b;
  for (const FourierRep& rep : reps_a)
    rand_a.push_back(to_random_side(rep, result.high_influence, aligned, d_reg, false));
  for (const FourierRep& rep : reps_b)
    rand_b.push_back(to_random_side(rep, result.high_influence, aligned, d_reg, true));
  int nv = rand_a[0].nvars();
  CorrelatedGaussianSpec spec_nv = CorrelatedGaussianSpec::constant(nv, rho);
  r3.add("n_vars", "", "", static_cast<double>(nv));
  for (std::size_t i = 0; i < rand_a.size(); ++i) {
    r3.add("n2_before", lab_a[i].first, lab_a[i].second, std::sqrt(reps_a[i].norm2sq()));
    r3.add("n2_after", lab_a[i].first, lab_a[i].second, rand_a[i].n2());
  }
  for (std::size_t j = 0; j < rand_b.size(); ++j) {
    r3.add("n2_before", lab_b[j].first, lab_b[j].second, std::sqrt(reps_b[j].norm2sq()));
    r3.add("n2_after", lab_b[j].first, lab_b[j].second, rand_b[j].n2());
  }
  for (std::size_t i = 0; i < rand_a.size(); ++i)
    for (std::size_t j = 0; j < rand_b.size(); ++j) {
      std::string fam = lab_a[i].first + "," + lab_b[j].first;
      std::string idx = lab_a[i].second + "," + lab_b[j].second;
      double tail_a = std::sqrt(std::max(
          0.0, reps_a[i].norm2sq() -
                   reps_a[i].truncated(TruncMode::at_most, d_reg).norm2sq()));
      double tail_b = std::sqrt(std::max(
          0.0, reps_b[j].norm2sq() -
                   reps_b[j].truncated(TruncMode::at_most, d_reg).norm2sq()));
      r3.add("corr_after", fam, idx,
             expect_corr({rand_a[i], rand_b[j], spec_nv}, aligned));
      r3.add("corr_tail_bound", fam, idx, tail_a * tail_b);
    }
  timed(r3, t0);
  result.reports.push_back(r3);

  // stage 4: shared-map dimension reduction
  t0 = std::chrono::steady_clock::now();
  DimReduceGates gates{params.corr_gate, params.n2_gate, params.zeta_gate,
                       params.dim_retries};
  DimReduceResult dim = dim_reduce_ops(rand_a, rand_b, lab_a, lab_b, aligned,
                                       params.n0, params.seed, gates,
                                       params.mc_samples);
  result.dim_attempts = dim.attempts;
  timed(dim.report, t0);
  result.reports.push_back(dim.report);

  bool all_const = dim.attempts == 0;  // constants passed through exactly

  // stage 4b: coefficient re-estimation on the reduced variables
  t0 = std::chrono::steady_clock::now();
  StageReport r4b;
  r4b.stage = "re_estimate";
  std::vector<RandomOperator> est_a, est_b;
  int hh = static_cast<int>(result.high_influence.size());
  if (all_const) {
    // constant coefficients transfer exactly to the reduced variables
    for (const RandomOperator& P : rand_a) {
      RandomOperator e(m, hh, params.n0, P.basis());
      P.for_each_term([&](const MultiIndex& sigma, const HermitePoly& p) {
        e.add_term(sigma, MultiIndex(params.n0, 0), p.coeff(MultiIndex(P.nvars(), 0)));
      });
      est_a.push_back(e);
    }
    for (const RandomOperator& Q : rand_b) {
      RandomOperator e(m, hh, params.n0, Q.basis());
      Q.for_each_term([&](const MultiIndex& sigma, const HermitePoly& q) {
        e.add_term(sigma, MultiIndex(params.n0, 0), q.coeff(MultiIndex(Q.nvars(), 0)));
      });
      est_b.push_back(e);
    }
    r4b.add("exact", "", "", 1.0);
  } else {
    for (std::size_t i = 0; i < dim.first.size(); ++i) {
      const ComposedRandomOperator& C = dim.first[i];
      est_a.push_back(estimate_hermite(
                          [&](const VectorR& x) { return C.eval_matrix(x); },
                          m, hh, C.base.basis(), params.n0, params.d2,
                          params.mc_samples,
                          derive_seed(params.seed, seedtag::kHermite, 0))
                          .op);
    }
    for (std::size_t j = 0; j < dim.second.size(); ++j) {
      const ComposedRandomOperator& C = dim.second[j];
      est_b.push_back(estimate_hermite(
                          [&](const VectorR& x) { return C.eval_matrix(x); },
                          m, hh, C.base.basis(), params.n0, params.d2,
                          params.mc_samples,
                          derive_seed(params.seed, seedtag::kHermite, 1))
                          .op);
    }
    r4b.add("exact", "", "", 0.0);
  }
  CorrelatedGaussianSpec spec_n0 = dim.spec;
  for (std::size_t i = 0; i < est_a.size(); ++i)
    r4b.add("n2_after", lab_a[i].first, lab_a[i].second, est_a[i].n2());
  for (std::size_t j = 0; j < est_b.size(); ++j)
    r4b.add("n2_after", lab_b[j].first, lab_b[j].second, est_b[j].n2());
  for (std::size_t i = 0; i < est_a.size(); ++i)
    for (std::size_t j = 0; j < est_b.size(); ++j)
      r4b.add("corr_after", lab_a[i].first + "," + lab_b[j].first,
              lab_a[i].second + "," + lab_b[j].second,
              expect_corr({est_a[i], est_b[j], spec_n0}, aligned));
  timed(r4b, t0);
  result.reports.push_back(r4b);

  // stage 5: Gaussian smoothing and degree cap
  t0 = std::chrono::steady_clock::now();
  StageReport r5;
  r5.stage = "smooth_random";
  result.gamma2 = smoothing_rate(rho, params.delta, params.c_smooth);
  r5.add("gamma", "", "", result.gamma2);
  r5.add("d2", "", "", static_cast<double>(params.d2));
  std::vector<RandomOperator> smo_a, smo_b;
  for (std::size_t i = 0; i < est_a.size(); ++i) {
    smo_a.push_back(smooth_random_op(est_a[i], result.gamma2, params.d2));
    r5.add("n2_before", lab_a[i].first, lab_a[i].second, est_a[i].n2());
    r5.add("n2_after", lab_a[i].first, lab_a[i].second, smo_a[i].n2());
  }
  for (std::size_t j = 0; j < est_b.size(); ++j) {
    smo_b.push_back(smooth_random_op(est_b[j], result.gamma2, params.d2));
    r5.add("n2_before", lab_b[j].first, lab_b[j].second, est_b[j].n2());
    r5.add("n2_after", lab_b[j].first, lab_b[j].second, smo_b[j].n2());
  }
  for (std::size_t i = 0; i < smo_a.size(); ++i)
    for (std::size_t j = 0; j < smo_b.size(); ++j)
      r5.add("corr_after", lab_a[i].first + "," + lab_b[j].first,
             lab_a[i].second + "," + lab_b[j].second,
             expect_corr({smo_a[i], smo_b[j], spec_n0}, aligned));
  timed(r5, t0);
  result.reports.push_back(r5);

  // stage 6: multilinearization
  t0 = std::chrono::steady_clock::now();
  StageReport r6;
  r6.stage = "multilinearize";
  std::vector<RandomOperator> ml_a, ml_b;
  CorrelatedGaussianSpec spec_ml =
      CorrelatedGaussianSpec::constant(params.n0 * params.n1, rho);
  for (std::size_t i = 0; i < smo_a.size(); ++i) {
    ml_a.push_back(multilinearize_op(smo_a[i], params.n1));
    r6.add("n2_before", lab_a[i].first, lab_a[i].second, smo_a[i].n2());
    r6.add("n2_after", lab_a[i].first, lab_a[i].second, ml_a[i].n2());
  }
  for (std::size_t j = 0; j < smo_b.size(); ++j) {
    ml_b.push_back(multilinearize_op(smo_b[j], params.n1));
    r6.add("n2_before", lab_b[j].first, lab_b[j].second, smo_b[j].n2());
    r6.add("n2_after", lab_b[j].first, lab_b[j].second, ml_b[j].n2());
  }
  for (std::size_t i = 0; i < ml_a.size(); ++i)
    for (std::size_t j = 0; j < ml_b.size(); ++j)
      r6.add("corr_after", lab_a[i].first + "," + lab_b[j].first,
             lab_a[i].second + "," + lab_b[j].second,
             expect_corr({ml_a[i], ml_b[j], spec_ml}, aligned));
  timed(r6, t0);
  result.reports.push_back(r6);

  // stage 7: drop unused variables, rebuild on quantum registers
  t0 = std::chrono::steady_clock::now();
  StageReport r7;
  r7.stage = "from_random";
  std::vector<RandomOperator> all_ml = ml_a;
  all_ml.insert(all_ml.end(), ml_b.begin(), ml_b.end());
  result.active_vars = used_variables(all_ml);
  int n_act = static_cast<int>(result.active_vars.size());
  result.out_registers = n_act + hh;
  r7.add("n_active", "", "", static_cast<double>(n_act));
  r7.add("out_registers", "", "", static_cast<double>(result.out_registers));
  std::vector<FromRandomOp> out_a, out_b;
  for (std::size_t i = 0; i < ml_a.size(); ++i) {
    out_a.push_back(from_random_op(restrict_variables(ml_a[i], result.active_vars)));
    r7.add("n2_after", lab_a[i].first, lab_a[i].second,
           schatten_norm(out_a[i].op, 2.0));
  }
  for (std::size_t j = 0; j < ml_b.size(); ++j) {
    out_b.push_back(from_random_op(restrict_variables(ml_b[j], result.active_vars)));
    r7.add("n2_after", lab_b[j].first, lab_b[j].second,
           schatten_norm(out_b[j].op, 2.0));
  }
  CorrelatedGaussianSpec spec_act = restrict_spec(spec_ml, result.active_vars);
  for (std::size_t i = 0; i < out_a.size(); ++i)
    for (std::size_t j = 0; j < out_b.size(); ++j) {
      double corr_rep =
          aligned_corr_sum(out_a[i].rep, out_b[j].rep, aligned.singular_values);
      double corr_rand = expect_corr(
          {restrict_variables(ml_a[i], result.active_vars),
           restrict_variables(ml_b[j], result.active_vars), spec_act},
          aligned);
      if (std::fabs(corr_rep - corr_rand) > 1e-9)
        throw PreconditionError("run_pipeline: correlation identity violated "
                                "at reconstruction: " +
                                fmt17(corr_rep) + " vs " + fmt17(corr_rand));
      r7.add("corr_after", lab_a[i].first + "," + lab_b[j].first,
             lab_a[i].second + "," + lab_b[j].second, corr_rep);
    }
  timed(r7, t0);
  result.reports.push_back(r7);

  // final: round each family to a sub-POVM
  t0 = std::chrono::steady_clock::now();
  StageReport r8;
  r8.stage = "round";
  long dout = ipow(m, result.out_registers);
  auto round_side = [&](const std::vector<FromRandomOp>& outs,
                        const std::vector<std::pair<std::string, std::string>>& lab,
                        int families) {
    std::vector<SubPovm> povms;
    for (int u = 0; u < families; ++u) {
      std::vector<HermitianOp> elems;
      MatrixC total = MatrixC::Zero(dout, dout);
      for (int i = 0; i < params.t; ++i) {
        elems.push_back(outs[static_cast<std::size_t>(u) * params.t + i].op);
        total += elems.back().mat;
      }
      double sum_dev = (total - MatrixC::Identity(dout, dout)).cwiseAbs().maxCoeff();
      r8.add("sum_dev", lab[static_cast<std::size_t>(u) * params.t].first, "",
             sum_dev);
      povms.push_back(round_sub_povm(elems, true));
    }
    return povms;
  };
  result.first = round_side(out_a, lab_a, params.a);
  result.second = round_side(out_b, lab_b, params.b);
  for (std::size_t i = 0; i < out_a.size(); ++i)
    for (std::size_t j = 0; j < out_b.size(); ++j) {
      int ui = static_cast<int>(i) / params.t, ii = static_cast<int>(i) % params.t;
      int vj = static_cast<int>(j) / params.t, jj = static_cast<int>(j) % params.t;
      const HermitianOp& fp = result.first[ui].elements[ii];
      const HermitianOp& fq = result.second[vj].elements[jj];
      double final_corr =
          correlation_value(fp, fq, psi, result.out_registers);
      std::string fam = lab_a[i].first + "," + lab_b[j].first;
      std::string idx = lab_a[i].second + "," + lab_b[j].second;
      r8.add("corr_after", fam, idx, final_corr);
      r8.add("corr_drift", fam, idx, std::fabs(final_corr - corr_initial[i][j]));
    }
  timed(r8, t0);
  result.reports.push_back(r8);
  return result;
}

}  // namespace mescalc
