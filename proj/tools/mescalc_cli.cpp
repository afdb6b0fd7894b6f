// mescalc: command-line front end for the library. Every subcommand is a
// thin shell over library calls; all numeric output is printed with fmt17
// so identical invocations produce byte-identical files.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mescalc/games.hpp"
#include "mescalc/pipeline.hpp"

using namespace mescalc;

namespace {

constexpr std::uint64_t kHyperTag = 0x68797074ull;    // hypertest instances
constexpr std::uint64_t kInvOpTag = 0x696e766full;    // invariance operators
constexpr std::uint64_t kInvMcTag = 0x696e766dull;    // invariance sampling

// ---------------------------------------------------------------------------
// CSV plumbing: columns (quantity, value, std_error, gate, pass)

struct CsvRow {
  std::string quantity;
  double value = 0.0;
  bool has_se = false;
  double se = 0.0;
  bool has_gate = false;
  double gate = 0.0;
  int pass = -1;  // -1 ungated, else 0/1
};

CsvRow plain_row(const std::string& q, double v) {
  CsvRow r;
  r.quantity = q;
  r.value = v;
  return r;
}

CsvRow gated_row(const std::string& q, double v, double se, double gate,
                 bool pass) {
  CsvRow r;
  r.quantity = q;
  r.value = v;
  r.has_se = true;
  r.se = se;
  r.has_gate = true;
  r.gate = gate;
  r.pass = pass ? 1 : 0;
  return r;
}

std::string rows_to_csv(const std::vector<CsvRow>& rows) {
  std::string out = "quantity,value,std_error,gate,pass\n";
  for (const CsvRow& r : rows) {
    out += csv_field(r.quantity) + ',' + fmt17(r.value) + ',';
    if (r.has_se) out += fmt17(r.se);
    out += ',';
    if (r.has_gate) out += fmt17(r.gate);
    out += ',';
    if (r.pass >= 0) out += r.pass ? "true" : "false";
    out += '\n';
  }
  return out;
}

void deliver(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::fputs(text.c_str(), stdout);
    return;
  }
  std::ofstream f(out_path, std::ios::binary);
  if (!f) throw ArgumentError("cannot open output file " + out_path);
  f << text;
  if (!f) throw ArgumentError("cannot write output file " + out_path);
}

bool any_gate_failed(const std::vector<CsvRow>& rows) {
  for (const CsvRow& r : rows)
    if (r.pass == 0) return true;
  return false;
}

// ---------------------------------------------------------------------------
// states

nlohmann::json load_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ArgumentError("cannot open file " + path);
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(path + ": " + e.what());
  }
}

// A state file is a JSON array of row-major [re, im] entries; square local
// dimensions are inferred unless overridden.
BipartiteState state_from_file(const std::string& path, int ma, int mb) {
  nlohmann::json j = load_json_file(path);
  if (!j.is_array()) throw ArgumentError(path + ": expected an entry array");
  long d = 1;
  while (d * d < static_cast<long>(j.size())) ++d;
  if (d * d != static_cast<long>(j.size()))
    throw ArgumentError(path + ": entry count is not a perfect square");
  if (ma == 0 && mb == 0) {
    while (ma * ma < d) ++ma;
    if (static_cast<long>(ma) * ma != d)
      throw ArgumentError(path +
                          ": cannot infer local dims, pass --ma and --mb");
    mb = ma;
  } else if (ma == 0 || mb == 0 || static_cast<long>(ma) * mb != d) {
    throw ArgumentError(path + ": --ma * --mb must equal the matrix dimension");
  }
  return make_bipartite(matrix_from_entries(j, d, d), ma, mb);
}

// "mes", "noisy-mes:<eps>", "product", or a JSON file path
BipartiteState parse_state(const std::string& name, int local_dim) {
  if (name == "mes") return noisy_mes(local_dim, 0.0);
  if (name == "product") return uniform_product(local_dim, local_dim);
  const std::string prefix = "noisy-mes:";
  if (name.rfind(prefix, 0) == 0) {
    double eps = 0.0;
    try {
      eps = std::stod(name.substr(prefix.size()));
    } catch (const std::exception&) {
      throw ArgumentError("bad state '" + name + "'");
    }
    return noisy_mes(local_dim, eps);
  }
  return state_from_file(name, 0, 0);
}

// ---------------------------------------------------------------------------
// maxcorr

int run_maxcorr(int m, double eps, bool has_eps, const std::string& state_file,
                int ma, int mb, const std::string& out_path) {
  BipartiteState psi = has_eps ? noisy_mes(m, eps)
                               : state_from_file(state_file, ma, mb);
  CorrelationData data = aligned_bases(psi);
  std::printf("rho=%s\n", fmt17(max_correlation(psi)).c_str());
  std::vector<CsvRow> rows;
  for (long i = 0; i < data.singular_values.size(); ++i)
    rows.push_back(
        plain_row("c_" + std::to_string(i), data.singular_values[i]));
  deliver(rows_to_csv(rows), out_path);
  return 0;
}

// ---------------------------------------------------------------------------
// hypertest: sampled check that noise keeps N4 below the exact N2

RandomOperator random_multilinear_instance(int m, int nvars, int degree,
                                           const StandardBasis& basis,
                                           Rng& rng) {
  RandomOperator P(m, 1, nvars, basis);
  long sigmas = static_cast<long>(m) * m;
  for (const MultiIndex& tau : enumerate_wt_at_most(nvars, degree)) {
    if (sigma_wt(tau) != sigma_card(tau)) continue;  // multilinear only
    for (long s = 0; s < sigmas; ++s)
      P.add_term(MultiIndex{static_cast<int>(s)}, tau, 0.4 * rng.normal());
  }
  return P;
}

int run_hypertest(int m, int n, double rho, std::int64_t trials,
                  std::uint64_t seed, const std::string& out_path) {
  std::vector<CsvRow> rows;
  double threshold = 1.0 / std::sqrt(3.0 * std::sqrt(static_cast<double>(m)));
  rows.push_back(gated_row("rho", rho, 0.0, threshold,
                           rho <= threshold + 1e-12));

  StandardBasis basis = gell_mann_basis(m);
  int degree = std::min(n, 3);
  for (int k = 0; k < 5; ++k) {
    Rng rng(derive_seed(seed, kHyperTag, static_cast<std::uint64_t>(k)), 0);
    RandomOperator P = random_multilinear_instance(m, n, degree, basis, rng);
    double n2 = P.n2();
    NormEstimate n4 = np_mc(gamma_apply(P, rho), 4, trials,
                            derive_seed(seed, kHyperTag, 100 + k));
    double ratio = n4.value / n2;
    double se = n4.std_error / n2;
    rows.push_back(gated_row("n4_ratio_" + std::to_string(k), ratio, se,
                             1.0 + 5.0 * se, ratio <= 1.0 + 5.0 * se));
  }
  deliver(rows_to_csv(rows), out_path);
  if (any_gate_failed(rows)) {
    std::fprintf(stderr, "hypertest: gate failure (see measurements)\n");
    return 3;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// invariance-demo: full Gaussian substitution gap as influence drops

int run_invariance(int m, int n, const std::vector<double>& taus,
                   std::int64_t samples, std::uint64_t seed,
                   const std::string& out_path) {
  StandardBasis basis = gell_mann_basis(m);
  FourierRep probe(basis, n);
  if (probe.coeff_count() > 65536)
    throw ArgumentError("invariance-demo: m^(2n) coefficient table too large");
  double dim = static_cast<double>(ipow(m, n));

  std::vector<CsvRow> rows;
  for (std::size_t k = 0; k < taus.size(); ++k) {
    double tau = taus[k];
    if (tau <= 0.0) throw ArgumentError("invariance-demo: tau must be > 0");
    Rng rng(derive_seed(seed, kInvOpTag, k), 0);
    FourierRep rep(basis, n);
    for (std::uint64_t flat = 1;
         flat < static_cast<std::uint64_t>(rep.coeff_count()); ++flat)
      rep.set_coeff_flat(flat, rng.normal());
    double worst = 0.0;
    for (int i = 0; i < n; ++i) worst = std::max(worst, rep.influence(i));
    double scale = std::sqrt(tau / worst);
    rep.for_each([&](std::uint64_t flat, double v) {
      rep.set_coeff_flat(flat, v * scale);
    });

    double exact = zeta(rep.reconstruct()).trace_value / dim;
    McResult gauss = expect_tr_zeta(hybrid_substitute(rep, n), samples,
                                    derive_seed(seed, kInvMcTag, k));
    std::string suffix = "_" + std::to_string(k);
    rows.push_back(plain_row("tau" + suffix, tau));
    rows.push_back(plain_row("n2" + suffix, std::sqrt(rep.norm2sq())));
    rows.push_back(plain_row("matrix_tr_zeta" + suffix, exact));
    CsvRow g = plain_row("gauss_tr_zeta" + suffix, gauss.mean);
    g.has_se = true;
    g.se = gauss.std_error;
    rows.push_back(g);
    CsvRow gap = plain_row("gap" + suffix, std::fabs(gauss.mean - exact));
    gap.has_se = true;
    gap.se = gauss.std_error;
    rows.push_back(gap);
  }
  deliver(rows_to_csv(rows), out_path);
  return 0;
}

// ---------------------------------------------------------------------------
// pipeline-run

std::vector<std::vector<HermitianOp>> families_from_json(
    const nlohmann::json& j, int m, int n, const char* key) {
  if (!j.is_array() || j.empty())
    throw ArgumentError(std::string("pipeline config: ") + key +
                        " must be a non-empty array of families");
  long d = ipow(m, n);
  std::vector<std::vector<HermitianOp>> out;
  for (const nlohmann::json& fam : j) {
    std::vector<HermitianOp> ops;
    for (const nlohmann::json& mat : fam)
      ops.push_back(HermitianOp(matrix_from_entries(mat, d, d), m, n));
    out.push_back(ops);
  }
  return out;
}

int run_pipeline_cmd(const std::string& config_path,
                     const std::string& out_path, const std::string& format) {
  nlohmann::json cfg = load_json_file(config_path);
  if (!cfg.is_object())
    throw ArgumentError(config_path + ": expected a config object");
  PipelineParams params = params_from_json(cfg.value("params", nlohmann::json::object()));
  int copies = cfg.value("copies", 1);

  BipartiteState psi = [&]() {
    if (!cfg.contains("state")) return noisy_mes(params.m, params.epsilon);
    const nlohmann::json& st = cfg.at("state");
    if (st.is_string()) return parse_state(st.get<std::string>(), params.m);
    if (st.is_object())
      return make_bipartite(
          matrix_from_entries(st.at("entries"),
                              static_cast<long>(st.at("ma").get<int>()) *
                                  st.at("mb").get<int>(),
                              static_cast<long>(st.at("ma").get<int>()) *
                                  st.at("mb").get<int>()),
          st.at("ma").get<int>(), st.at("mb").get<int>());
    throw ArgumentError(config_path + ": bad state entry");
  }();

  PipelineResult res = run_pipeline(
      families_from_json(cfg.at("first"), params.m, copies, "first"),
      families_from_json(cfg.at("second"), params.m, copies, "second"), psi,
      params);

  Kahan total;
  for (const StageMetric& metric : res.reports.back().metrics)
    if (metric.quantity == "corr_drift") total.add(metric.value);
  std::printf("total_drift=%s\n", fmt17(total.value()).c_str());

  std::string text = format == "json" ? reports_to_json(res.reports).dump(2) + "\n"
                                      : reports_to_csv(res.reports);
  deliver(text, out_path);
  return 0;
}

// ---------------------------------------------------------------------------
// game-eval

int run_game_eval(const std::string& game_name, const std::string& strategy_path,
                  bool seesaw, const std::string& state_name, int copies,
                  int iterations, std::uint64_t seed, int local_dim,
                  const std::string& out_path) {
  Game g = game_name == "chsh" ? chsh() : game_from_json(load_json_file(game_name));
  std::vector<CsvRow> rows;
  double value = 0.0;
  if (seesaw) {
    BipartiteState psi = parse_state(state_name, local_dim);
    SeesawResult res = seesaw_optimize(g, psi, copies, iterations, seed);
    value = res.trace.back();
    rows.push_back(plain_row("value", value));
    rows.push_back(plain_row("initial", res.trace.front()));
    rows.push_back(
        plain_row("iterations", static_cast<double>(res.trace.size() - 1)));
  } else {
    Strategy s = strategy_from_json(load_json_file(strategy_path));
    if (s.alice.empty() || s.alice[0].empty())
      throw ArgumentError("game-eval: empty strategy");
    if (copies != s.n)
      throw ArgumentError("game-eval: --copies does not match the strategy");
    BipartiteState psi = parse_state(state_name, s.alice[0][0].m);
    value = eval_strategy(g, s, psi);
    rows.push_back(plain_row("value", value));
  }
  std::printf("value=%s\n", fmt17(value).c_str());
  deliver(rows_to_csv(rows), out_path);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"matrix-space Fourier analysis and strategy transport"};
  app.require_subcommand(1);

  // maxcorr
  CLI::App* mc = app.add_subcommand(
      "maxcorr", "maximal correlation and aligned singular values of a state");
  int mc_m = 2, mc_ma = 0, mc_mb = 0;
  double mc_eps = 0.0;
  std::string mc_file, mc_out;
  mc->add_option("--m", mc_m, "local dimension")->check(CLI::Range(2, 1 << 20));
  CLI::Option* mc_eps_opt =
      mc->add_option("--epsilon", mc_eps, "noisy MES noise rate")
          ->check(CLI::Range(0.0, 1.0));
  CLI::Option* mc_file_opt =
      mc->add_option("--state-file", mc_file, "JSON entry array");
  mc->add_option("--ma", mc_ma, "first local dimension of --state-file");
  mc->add_option("--mb", mc_mb, "second local dimension of --state-file");
  mc_eps_opt->excludes(mc_file_opt);
  mc_file_opt->excludes(mc_eps_opt);
  mc->add_option("--out", mc_out, "write the CSV here instead of stdout");

  // hypertest
  CLI::App* hy = app.add_subcommand(
      "hypertest", "sampled 2->4 hypercontractivity check under noise");
  int hy_m = 2, hy_n = 2;
  double hy_rho = 0.4;
  std::int64_t hy_trials = 10000;
  std::uint64_t hy_seed = 1;
  std::string hy_out;
  hy->add_option("--m", hy_m, "local dimension")->check(CLI::Range(2, 6));
  hy->add_option("--n", hy_n, "Gaussian variable count")->check(CLI::Range(1, 8));
  hy->add_option("--rho", hy_rho, "noise parameter")->check(CLI::Range(0.0, 1.0));
  hy->add_option("--trials", hy_trials, "Monte Carlo samples")
      ->check(CLI::Range(static_cast<std::int64_t>(1), static_cast<std::int64_t>(1) << 32));
  hy->add_option("--seed", hy_seed, "random seed");
  hy->add_option("--out", hy_out, "write the CSV here instead of stdout");

  // invariance-demo
  CLI::App* iv = app.add_subcommand(
      "invariance-demo", "Gaussian substitution gap across an influence sweep");
  int iv_m = 2, iv_n = 2;
  std::vector<double> iv_taus{0.2, 0.05};
  std::int64_t iv_samples = 20000;
  std::uint64_t iv_seed = 1;
  std::string iv_out;
  iv->add_option("--m", iv_m, "local dimension")->check(CLI::Range(2, 6));
  iv->add_option("--n", iv_n, "register count")->check(CLI::Range(1, 8));
  iv->add_option("--tau-sweep", iv_taus, "influence targets, comma separated")
      ->delimiter(',');
  iv->add_option("--samples", iv_samples, "Monte Carlo samples")
      ->check(CLI::Range(static_cast<std::int64_t>(1), static_cast<std::int64_t>(1) << 32));
  iv->add_option("--seed", iv_seed, "random seed");
  iv->add_option("--out", iv_out, "write the CSV here instead of stdout");

  // pipeline-run
  CLI::App* pr = app.add_subcommand(
      "pipeline-run", "run the strategy transport pipeline from a config file");
  std::string pr_config, pr_out, pr_format = "csv";
  pr->add_option("--config", pr_config, "JSON config")->required();
  pr->add_option("--out", pr_out, "write the stage report here");
  pr->add_option("--format", pr_format, "report format")
      ->check(CLI::IsMember({"csv", "json"}));

  // game-eval
  CLI::App* ge = app.add_subcommand(
      "game-eval", "evaluate or see-saw optimize a two-player game");
  std::string ge_game = "chsh", ge_strategy, ge_state = "mes", ge_out;
  bool ge_seesaw = false;
  int ge_copies = 1, ge_iterations = 50, ge_dim = 2;
  std::uint64_t ge_seed = 1;
  ge->add_option("--game", ge_game, "builtin name or game JSON path");
  CLI::Option* ge_strat_opt =
      ge->add_option("--strategy", ge_strategy, "strategy JSON path");
  CLI::Option* ge_seesaw_opt =
      ge->add_flag("--seesaw", ge_seesaw, "optimize instead of evaluating");
  ge_strat_opt->excludes(ge_seesaw_opt);
  ge_seesaw_opt->excludes(ge_strat_opt);
  ge->add_option("--state", ge_state, "mes, noisy-mes:<eps>, product, or file");
  ge->add_option("--copies", ge_copies, "shared-state copies")->check(CLI::Range(0, 12));
  ge->add_option("--iterations", ge_iterations, "see-saw iterations")
      ->check(CLI::Range(1, 100000));
  ge->add_option("--seed", ge_seed, "see-saw seed");
  ge->add_option("--local-dim", ge_dim, "local dimension for builtin states")
      ->check(CLI::Range(2, 1 << 20));
  ge->add_option("--out", ge_out, "write the CSV here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (mc->parsed()) {
      if (static_cast<bool>(*mc_eps_opt) == static_cast<bool>(*mc_file_opt))
        throw ArgumentError("maxcorr: pass exactly one of --epsilon, --state-file");
      return run_maxcorr(mc_m, mc_eps, static_cast<bool>(*mc_eps_opt), mc_file,
                         mc_ma, mc_mb, mc_out);
    }
    if (hy->parsed())
      return run_hypertest(hy_m, hy_n, hy_rho, hy_trials, hy_seed, hy_out);
    if (iv->parsed())
      return run_invariance(iv_m, iv_n, iv_taus, iv_samples, iv_seed, iv_out);
    if (pr->parsed()) return run_pipeline_cmd(pr_config, pr_out, pr_format);
    if (ge->parsed()) {
      if (!ge_seesaw && ge_strategy.empty())
        throw ArgumentError("game-eval: pass --strategy or --seesaw");
      return run_game_eval(ge_game, ge_strategy, ge_seesaw, ge_state, ge_copies,
                           ge_iterations, ge_seed, ge_dim, ge_out);
    }
  } catch (const StochasticError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const ArgumentError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
