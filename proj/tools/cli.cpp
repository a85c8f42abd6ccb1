#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <algorithm>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>

#include "cli_io.hpp"
#include "qte/qte.hpp"
#include "reference.hpp"

namespace qte::cli {

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
  mallopt(M_TOP_PAD, 64 << 20);
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
#endif
}

namespace {

// Stream ids under the run seed. Replicate r's data uses {r}, so `simulate`
// and `replicate` with the same seed see the same datasets.
constexpr std::uint64_t kTruthStream = 0xffffffffull;
constexpr std::uint64_t kFitSeedStream = 1;

// Options that never enter the echoed config.
const std::set<std::string> kNotEchoed = {"help", "config", "out"};

// ---------------------------------------------------------------- config

std::map<std::string, std::string> parse_config_text(const std::string& text, const std::string& label) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  for (int no = 1; std::getline(is, line); ++no) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) {
      throw UsageError(label + ":" + std::to_string(no) + ": expected key=value");
    }
    const std::string key(detail::trim(body.substr(0, eq)));
    if (key.empty()) throw UsageError(label + ":" + std::to_string(no) + ": empty key");
    kv[key] = std::string(detail::trim(body.substr(eq + 1)));
  }
  return kv;
}

/// Loads a key=value file, or the resolved config of a manifest.json.
std::map<std::string, std::string> load_config(const std::string& path, const std::string& command) {
  const std::string text = read_file(path);
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string::npos || text[first] != '{') return parse_config_text(text, path);
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(path + ": not a valid manifest: " + e.what());
  }
  if (!m.contains("config") || !m["config"].is_object()) throw UsageError(path + ": manifest has no config");
  if (m.value("command", "") != command) {
    throw UsageError(path + ": manifest is for '" + m.value("command", "?") + "', not '" + command + "'");
  }
  std::map<std::string, std::string> kv;
  for (const auto& [k, v] : m["config"].items()) kv[k] = v.get<std::string>();
  return kv;
}

bool mentions(const std::vector<std::string>& args, const std::string& key) {
  const std::string flag = "--" + key;
  return std::any_of(args.begin(), args.end(), [&](const std::string& a) {
    return a == flag || a.rfind(flag + "=", 0) == 0;
  });
}

/// Splices config entries in front of the user's flags; explicit flags win.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  if (args.empty()) return args;
  std::optional<std::string> path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (!path) return args;
  std::vector<std::string> out{args.front()};
  for (const auto& [k, v] : load_config(*path, args.front())) {
    // an empty value is the option's default
    if (!v.empty() && !mentions(args, k)) out.push_back("--" + k + "=" + v);
  }
  out.insert(out.end(), args.begin() + 1, args.end());
  return out;
}

/// Drops all but the last occurrence of each --option, so a repeated list flag replaces rather than appends.
std::vector<std::string> keep_last_occurrence(const std::vector<std::string>& args) {
  struct Span {
    std::string key;
    std::size_t begin, end;
  };
  std::vector<Span> spans;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a.rfind("--", 0) != 0 || a.size() == 2) continue;
    const auto eq = a.find('=');
    std::size_t end = i + 1;
    if (eq == std::string::npos && end < args.size() && args[end].rfind("--", 0) != 0) ++end;
    spans.push_back({a.substr(2, eq == std::string::npos ? std::string::npos : eq - 2), i, end});
    i = end - 1;
  }
  std::vector<bool> drop(args.size(), false);
  std::map<std::string, std::size_t> last;
  for (std::size_t s = 0; s < spans.size(); ++s) last[spans[s].key] = s;
  for (std::size_t s = 0; s < spans.size(); ++s) {
    if (last[spans[s].key] == s) continue;
    for (std::size_t i = spans[s].begin; i < spans[s].end; ++i) drop[i] = true;
  }
  std::vector<std::string> out;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (!drop[i]) out.push_back(args[i]);
  }
  return out;
}

std::string strip_brackets(std::string s) {
  if (s.size() >= 2 && s.front() == '[' && s.back() == ']') s = s.substr(1, s.size() - 2);
  s.erase(std::remove(s.begin(), s.end(), ' '), s.end());
  return s;
}

/// key -> value as resolved after defaults, config file and flags.
std::map<std::string, std::string> resolved_config(const CLI::App& app) {
  std::map<std::string, std::string> kv;
  for (const CLI::Option* o : app.get_options()) {
    const std::string name = o->get_single_name();
    if (kNotEchoed.count(name)) continue;
    std::string value;
    const auto& res = o->results();
    if (res.empty()) {
      value = strip_brackets(o->get_default_str());
      if (o->get_type_size() == 0 && value.empty()) value = "false";
    } else if (o->get_items_expected_max() > 1) {
      for (std::size_t i = 0; i < res.size(); ++i) value += (i ? "," : "") + res[i];
    } else {
      value = res.back();
    }
    kv[name] = value;
  }
  return kv;
}

// --------------------------------------------------------------- options

struct DesignOptions {
  int design = 4;
  int J = 0;
  int n = 500;
  double rate0 = 2.0;
  double rate1 = 4.0;
  int truth_mc = TrueMarginals::kDefaultMonteCarlo;

  SimulationDesign to_design() const { return {design, J, n, rate0, rate1}; }
};

void add_design_options(CLI::App* app, DesignOptions& o) {
  app->add_option("--design", o.design, "Simulation design 1-4");
  app->add_option("--J", o.J, "Confounders in design 1 (0 or 2 in the published study)");
  app->add_option("--n", o.n, "Sample size per replicate");
  app->add_option("--rate0", o.rate0, "Design 4 control-arm exponential rate");
  app->add_option("--rate1", o.rate1, "Design 4 treated-arm exponential rate");
  app->add_option("--truth-mc", o.truth_mc, "Monte Carlo size of the true marginals (designs 1-3)");
}

struct ModelOptions {
  std::vector<int> K{8, 10, 12};
  std::vector<int> V{5, 8, 10};
  int n_iter = 3000;
  int burnin = 1000;
  int thin = 10;
  double target_accept = 0.8;
  int max_depth = 10;
  std::string metric = "gradient";
  int n_pi = 5;
  int pi_iter = 1000;
  int pi_burnin = 500;
  int pi_hidden = 10;
  int grid_size = 200;
  std::vector<double> taus = standard_taus();
  double ci_level = 0.95;
  double margin = 0.0;
};

void add_model_options(CLI::App* app, ModelOptions& o) {
  app->add_option("--K", o.K, "Spline basis sizes to select from")->delimiter(',')->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  app->add_option("--V", o.V, "Hidden widths to select from")->delimiter(',')->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  app->add_option("--n-iter", o.n_iter, "Outcome MCMC iterations");
  app->add_option("--burnin", o.burnin, "Outcome MCMC burn-in");
  app->add_option("--thin", o.thin, "Keep every thin-th post burn-in draw");
  app->add_option("--target-accept", o.target_accept, "NUTS dual-averaging target");
  app->add_option("--max-depth", o.max_depth, "NUTS maximum tree depth");
  app->add_option("--metric", o.metric, "Warmup mass matrix")
      ->check(CLI::IsMember({"gradient", "variance", "unit"}));
  app->add_option("--n-pi", o.n_pi, "Propensity draws N_pi");
  app->add_option("--pi-iter", o.pi_iter, "Propensity MCMC iterations");
  app->add_option("--pi-burnin", o.pi_burnin, "Propensity MCMC burn-in");
  app->add_option("--pi-hidden", o.pi_hidden, "Propensity network hidden width");
  app->add_option("--grid-size", o.grid_size, "Density/CDF grid points");
  app->add_option("--taus", o.taus, "Quantile levels")->delimiter(',')->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  app->add_option("--ci-level", o.ci_level, "Credible interval level");
  app->add_option("--margin", o.margin, "Outcome normalization margin as a fraction of the range");
}

MetricKind parse_metric(const std::string& s) {
  if (s == "variance") return MetricKind::Variance;
  if (s == "unit") return MetricKind::Unit;
  return MetricKind::GradientScaled;
}

PipelineConfig to_pipeline(const ModelOptions& o, ScoreType score, std::uint64_t seed, int threads) {
  PipelineConfig pc;
  EstimateConfig& e = pc.estimate;
  e.K = o.K.front();
  e.hidden = {o.V.front()};
  e.sampler.n_iter = o.n_iter;
  e.sampler.n_burnin = o.burnin;
  e.sampler.thin = o.thin;
  e.sampler.target_accept = o.target_accept;
  e.sampler.max_tree_depth = o.max_depth;
  e.sampler.metric = parse_metric(o.metric);
  e.score = score;
  e.grid_size = o.grid_size;
  e.taus = o.taus;
  e.ci_level = o.ci_level;
  e.margin_fraction = o.margin;
  e.seed = seed;
  e.threads = threads;
  pc.propensity.num_draws = o.n_pi;
  pc.propensity.n_iter = o.pi_iter;
  pc.propensity.n_burnin = o.pi_burnin;
  pc.propensity.hidden = o.pi_hidden;
  pc.candidates.clear();
  for (int k : o.K) {
    for (int v : o.V) pc.candidates.push_back({k, v});
  }
  if (o.K.empty() || o.V.empty()) throw std::invalid_argument("--K and --V need at least one value");
  if (o.n_pi < 1) throw std::invalid_argument("--n-pi must be positive");
  if (o.pi_burnin >= o.pi_iter) throw std::invalid_argument("--pi-burnin must be below --pi-iter");
  if (o.pi_iter - o.pi_burnin < o.n_pi) throw std::invalid_argument("fewer propensity iterations than N_pi");
  if (o.n_iter - o.burnin < 2 * o.thin) throw std::invalid_argument("need at least two retained draws");
  e.validate();
  return pc;
}

TrueMarginals build_truth(const SimulationDesign& d, int n_mc, std::uint64_t seed) {
  Rng rng = make_stream(seed, {kTruthStream});
  return TrueMarginals(d, n_mc, rng);
}

std::string csv_of(const std::function<void(std::ostream&)>& writer) {
  std::ostringstream os;
  writer(os);
  return os.str();
}

// ---------------------------------------------------------- aggregation

struct MetricRow {
  std::string method;
  int replicate = 0;
  double tau = 0, estimate = 0, truth = 0, lo = 0, hi = 0;
};

struct MethodAggregate {
  std::string method;
  int n_ok = 0;
  std::vector<double> taus, rmse, coverage;
  AabSummary aab;
};

/// Per-method RMSE, interval coverage of the truth and AAB. Methods keep first-seen order.
std::vector<MethodAggregate> aggregate(const std::vector<MetricRow>& rows) {
  std::vector<std::string> order;
  std::map<std::string, std::map<int, std::vector<const MetricRow*>>> by;
  for (const auto& r : rows) {
    if (!by.count(r.method)) order.push_back(r.method);
    by[r.method][r.replicate].push_back(&r);
  }
  std::vector<MethodAggregate> out;
  for (const auto& m : order) {
    MethodAggregate a;
    a.method = m;
    const auto& reps = by[m];
    a.n_ok = static_cast<int>(reps.size());
    std::vector<double> truth;
    for (const MetricRow* r : reps.begin()->second) {
      a.taus.push_back(r->tau);
      truth.push_back(r->truth);
    }
    const std::size_t Q = a.taus.size();
    std::vector<std::vector<double>> est_by_tau(Q), curves;
    std::vector<int> covered(Q, 0);
    for (const auto& [rep, rs] : reps) {
      if (rs.size() != Q) throw std::invalid_argument("metrics: replicate " + std::to_string(rep) + " of " + m + " has a different tau set");
      std::vector<double> curve;
      for (std::size_t q = 0; q < Q; ++q) {
        if (rs[q]->tau != a.taus[q]) throw std::invalid_argument("metrics: tau sets differ across replicates of " + m);
        est_by_tau[q].push_back(rs[q]->estimate);
        covered[q] += (rs[q]->lo <= rs[q]->truth && rs[q]->truth <= rs[q]->hi) ? 1 : 0;
        curve.push_back(rs[q]->estimate);
      }
      curves.push_back(std::move(curve));
    }
    for (std::size_t q = 0; q < Q; ++q) {
      a.rmse.push_back(rmse_tau(est_by_tau[q], truth[q]));
      a.coverage.push_back(static_cast<double>(covered[q]) / static_cast<double>(a.n_ok));
    }
    a.aab = summarize_aab(curves, truth, true);
    out.push_back(std::move(a));
  }
  return out;
}

std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::ostringstream os;
  os << "method,replicate,tau,estimate,truth,error,ci_lo,ci_hi\n";
  for (const auto& r : rows) {
    os << r.method << ',' << r.replicate << ',' << fmt(r.tau) << ',' << fmt(r.estimate) << ','
       << fmt(r.truth) << ',' << fmt(r.estimate - r.truth) << ',' << fmt(r.lo) << ',' << fmt(r.hi) << '\n';
  }
  return os.str();
}

std::vector<MetricRow> parse_metrics_csv(const std::string& text, const std::string& label) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || detail::trim(line).rfind("method,replicate,tau,estimate,truth", 0) != 0) {
    throw ValidationError({label + ":1: not a metrics table"});
  }
  std::vector<MetricRow> rows;
  std::vector<std::string> diags;
  for (int no = 2; std::getline(is, line); ++no) {
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    const auto f = detail::split(body);
    MetricRow r;
    double rep = 0, err = 0;
    const bool ok = f.size() == 8 && detail::parse_double(f[1], rep) && detail::parse_double(f[2], r.tau) &&
                    detail::parse_double(f[3], r.estimate) && detail::parse_double(f[4], r.truth) &&
                    detail::parse_double(f[5], err) && detail::parse_double(f[6], r.lo) &&
                    detail::parse_double(f[7], r.hi);
    if (!ok) {
      diags.push_back(label + ":" + std::to_string(no) + ": malformed row");
      continue;
    }
    r.method = std::string(f[0]);
    r.replicate = static_cast<int>(rep);
    rows.push_back(std::move(r));
  }
  if (!diags.empty()) throw ValidationError(std::move(diags));
  return rows;
}

const ReferenceValue* find_reference(int design, int J, const std::string& method, const std::string& metric, double tau) {
  for (const auto& r : kReference) {
    if (r.design == design && r.J == (design == 1 ? J : 0) && r.method == method && r.metric == metric &&
        std::abs(r.tau - tau) < 1e-9) {
      return &r;
    }
  }
  return nullptr;
}

/// Aggregate tables: rmse.csv, aab.csv and comparison.csv (against the published values).
void write_aggregates(OutputDir& out, const std::vector<MethodAggregate>& aggs, int design, int J,
                      const std::vector<std::string>& empty_methods) {
  std::ostringstream rmse, aab, cmp;
  rmse << "method,tau,rmse,coverage,n_ok\n";
  aab << "method,aab,aab_sd,aab_of_mean,n_ok\n";
  cmp << "method,metric,tau,value,sd,reference,reference_sd\n";
  for (const auto& a : aggs) {
    for (std::size_t q = 0; q < a.taus.size(); ++q) {
      rmse << a.method << ',' << fmt(a.taus[q]) << ',' << fmt(a.rmse[q]) << ',' << fmt(a.coverage[q]) << ','
           << a.n_ok << '\n';
      if (const auto* ref = find_reference(design, J, a.method, "rmse", a.taus[q])) {
        cmp << a.method << ",rmse," << fmt(a.taus[q]) << ',' << fmt(a.rmse[q]) << ",," << fmt(ref->value) << ",\n";
      }
    }
    aab << a.method << ',' << fmt(a.aab.replicate.mean) << ',' << fmt(a.aab.replicate.sd) << ','
        << fmt(a.aab.of_mean) << ',' << a.n_ok << '\n';
    if (const auto* ref = find_reference(design, J, a.method, "aab", 0.0)) {
      cmp << a.method << ",aab,," << fmt(a.aab.replicate.mean) << ',' << fmt(a.aab.replicate.sd) << ','
          << fmt(ref->value) << ',' << fmt(ref->sd) << '\n';
    }
  }
  for (const auto& m : empty_methods) aab << m << ",nan,nan,nan,0\n";
  out.write("rmse.csv", rmse.str());
  out.write("aab.csv", aab.str());
  out.write("comparison.csv", cmp.str());
}

std::string format_report(const std::vector<MethodAggregate>& aggs, int design, int J) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3);
  os << "design " << design;
  if (design == 1) os << " J=" << J;
  os << "\n";
  for (const auto& a : aggs) {
    os << a.method << " (" << a.n_ok << " replicates)\n";
    os << "  AAB " << a.aab.replicate.mean << " (" << a.aab.replicate.sd << ")";
    if (const auto* ref = find_reference(design, J, a.method, "aab", 0.0)) {
      os << "   reference " << ref->value << " (" << ref->sd << ")";
    }
    os << "\n  tau     rmse    cover   reference\n";
    for (std::size_t q = 0; q < a.taus.size(); ++q) {
      os << "  " << std::setw(5) << std::setprecision(2) << a.taus[q] << std::setprecision(3) << "  "
         << std::setw(6) << a.rmse[q] << "  " << std::setw(6) << a.coverage[q];
      if (const auto* ref = find_reference(design, J, a.method, "rmse", a.taus[q])) os << "  " << std::setw(6) << ref->value;
      os << '\n';
    }
  }
  return os.str();
}

// ------------------------------------------------------------- commands

struct SimulateOptions {
  DesignOptions design;
  int reps = 1;
  std::uint64_t seed = 0;
  int truth_grid = 200;
  std::vector<double> taus = standard_taus();
  std::string out;
};

int cmd_simulate(const SimulateOptions& o, const CLI::App& app, std::ostream& os) {
  const SimulationDesign d = o.design.to_design();
  d.validate();
  if (o.reps < 1) throw std::invalid_argument("--reps must be positive");
  if (o.truth_grid < 2) throw std::invalid_argument("--truth-grid must be at least 2");
  for (double t : o.taus) {
    if (!(t > 0.0 && t < 1.0)) throw std::invalid_argument("tau outside (0, 1)");
  }
  OutputDir out(o.out);
  const int width = std::max(3, static_cast<int>(std::to_string(o.reps).size()));
  for (int r = 0; r < o.reps; ++r) {
    Rng rng = make_stream(o.seed, {static_cast<std::uint64_t>(r)});
    const Dataset data = simulate(d, rng);
    std::ostringstream name;
    name << "data_" << std::setw(width) << std::setfill('0') << r + 1 << ".csv";
    out.write(name.str(), csv_of([&](std::ostream& s) { write_dataset_csv(s, data); }));
  }

  const TrueMarginals truth = build_truth(d, o.design.truth_mc, o.seed);
  std::ostringstream q;
  q << "tau,q0,q1,qte\n";
  for (double t : o.taus) {
    const double q0 = truth.quantile(0, t), q1 = truth.quantile(1, t);
    q << fmt(t) << ',' << fmt(q0) << ',' << fmt(q1) << ',' << fmt(q1 - q0) << '\n';
  }
  out.write("truth_qte.csv", q.str());
  const double lo = std::min(truth.quantile(0, 1e-3), truth.quantile(1, 1e-3));
  const double hi = std::max(truth.quantile(0, 1.0 - 1e-3), truth.quantile(1, 1.0 - 1e-3));
  std::ostringstream g;
  g << "y,f0,F0,f1,F1\n";
  for (int i = 0; i < o.truth_grid; ++i) {
    const double y = lo + (hi - lo) * i / (o.truth_grid - 1);
    g << fmt(y) << ',' << fmt(truth.pdf(0, y)) << ',' << fmt(truth.cdf(0, y)) << ',' << fmt(truth.pdf(1, y))
      << ',' << fmt(truth.cdf(1, y)) << '\n';
  }
  out.write("truth_dist.csv", g.str());

  auto m = make_manifest("simulate", resolved_config(app));
  m["seed"] = o.seed;
  m["design"] = {{"id", d.id}, {"J", d.J}, {"n", d.n}, {"covariates", d.num_covariates()}};
  m["truth"] = {{"exact", truth.exact()}, {"monte_carlo", truth.exact() ? 0 : o.design.truth_mc}};
  write_manifest(out, m);
  os << "wrote " << o.reps << " dataset(s) and the true marginals to " << out.root().string() << "\n";
  return kOk;
}

struct FitOptions {
  std::string data;
  std::string out;
  std::string score = "double";
  std::string propensity = "estimate";
  std::string propensity_csv;
  ModelOptions model;
  std::uint64_t seed = 1;
  int threads = default_thread_count();
  bool chain_dump = false;
};

int cmd_fit(const FitOptions& o, const CLI::App& app, std::ostream& os, std::ostream& err) {
  const std::string data_text = read_file(o.data);
  std::istringstream data_in(data_text);
  const Dataset data = read_dataset_csv(data_in, o.data);
  const ScoreType score = parse_score_type(o.score);
  PipelineConfig pc = to_pipeline(o.model, score, o.seed, o.threads);

  if (o.propensity == "known") {
    if (data.pi.size() != data.y.size()) throw ValidationError({o.data + ": --propensity known needs a 'pi' column"});
    pc.source = PropensitySource::Known;
  } else if (o.propensity == "file") {
    if (o.propensity_csv.empty()) throw UsageError("--propensity file needs --propensity-csv");
    std::istringstream pin(read_file(o.propensity_csv));
    pc.source = PropensitySource::Provided;
    try {
      pc.provided = read_propensity_csv(pin);
    } catch (const std::invalid_argument& e) {
      throw ValidationError({o.propensity_csv + ": " + e.what()});
    }
  }
  err << "note: ignorability (no unmeasured confounding) cannot be checked from data; the estimates assume it\n";

  const PipelineResult res = run_pipeline(data, pc);

  const Eigen::VectorXd pbar = res.propensity.posterior_mean();
  if (score != ScoreType::XOnly && (pbar.minCoeff() < 0.01 || pbar.maxCoeff() > 0.99)) {
    err << "warning: estimated propensities reach " << pbar.minCoeff() << " .. " << pbar.maxCoeff()
        << "; overlap is weak\n";
  }
  double worst_div = 0.0;
  for (double r : res.draws.divergence_rate) worst_div = std::max(worst_div, r);
  if (worst_div > 0.05) err << "warning: " << 100 * worst_div << "% of retained transitions diverged\n";

  OutputDir out(o.out);
  out.write("qte.csv", csv_of([&](std::ostream& s) { write_qte_csv(s, res.summary); }));
  out.write("density.csv", csv_of([&](std::ostream& s) { write_density_csv(s, res.summary); }));
  out.write("cdf.csv", csv_of([&](std::ostream& s) { write_cdf_csv(s, res.summary); }));
  out.write("propensity.csv", csv_of([&](std::ostream& s) { write_propensity_csv(s, res.propensity); }));
  if (res.selection) {
    std::ostringstream sel;
    sel << "K,V1,num_weights,waic,chosen\n";
    const auto& s = *res.selection;
    for (std::size_t c = 0; c < s.candidates.size(); ++c) {
      sel << s.candidates[c].K << ',' << s.candidates[c].V1 << ',' << s.num_weights[c] << ',' << fmt(s.waic[c])
          << ',' << (static_cast<int>(c) == s.best ? 1 : 0) << '\n';
    }
    out.write("selection.csv", sel.str());
  }
  if (o.chain_dump) {
    for (std::size_t j = 0; j < res.draws.chains.size(); ++j) {
      out.write("chain_" + std::to_string(j + 1) + ".csv",
                csv_of([&](std::ostream& s) { write_chain_dump(s, res.draws.chains[j]); }));
    }
  }

  auto m = make_manifest("fit", resolved_config(app));
  m["seed"] = o.seed;
  m["input"] = {{"data", o.data}, {"hash", hex64(fnv1a(data_text))}, {"n", data.size()}, {"covariates", data.dim()}};
  m["model"] = {{"K", res.chosen.K}, {"V1", res.chosen.V1}, {"score", to_string(score)},
                {"N_pi", res.draws.n_pi}, {"N_W", res.draws.n_w}};
  std::vector<std::string> steps, divs;
  for (double s : res.draws.step_size) steps.push_back(fmt(s));
  for (double d : res.draws.divergence_rate) divs.push_back(fmt(d));
  m["diagnostics"] = {{"step_size", steps},
                      {"divergence_rate", divs},
                      {"quantile_flags", res.draws.quantile_flags},
                      {"ignorability", "not checkable from data"}};
  write_manifest(out, m);

  os << "K=" << res.chosen.K << " V1=" << res.chosen.V1 << " N_pi=" << res.draws.n_pi
     << " N_W=" << res.draws.n_w << "\n";
  for (std::size_t i = 0; i < res.summary.taus.size(); ++i) {
    if (std::abs(res.summary.taus[i] - 0.5) < 1e-12) {
      os << "QTE(0.5) = " << res.summary.qte.mean[i] << " [" << res.summary.qte.lo[i] << ", "
         << res.summary.qte.hi[i] << "]\n";
    }
  }
  return kOk;
}

struct ReplicateOptions {
  DesignOptions design;
  int reps = 20;
  std::uint64_t seed = 0;
  std::vector<std::string> methods{"double"};
  std::string propensity = "auto";
  ModelOptions model;
  int workers = default_thread_count();
  std::string out;
};

struct MethodOutcome {
  bool ok = false;
  std::string error;
  std::vector<double> est, lo, hi;
  double ise0 = 0, ise1 = 0, sup0 = 0, sup1 = 0;
  Candidate chosen;
  double divergence = 0;
};

double sup_distance(const std::vector<double>& grid, const std::vector<double>& F, const TrueMarginals& truth, int arm) {
  double s = 0.0;
  for (std::size_t g = 0; g < grid.size(); ++g) s = std::max(s, std::abs(F[g] - truth.cdf(arm, grid[g])));
  return s;
}

double density_ise(const std::vector<double>& grid, const std::vector<double>& f, const TrueMarginals& truth, int arm) {
  GridFunction fh{grid, f}, ft{grid, {}};
  for (double y : grid) ft.values.push_back(truth.pdf(arm, y));
  return ise(fh, ft);
}

int cmd_replicate(const ReplicateOptions& o, const CLI::App& app, std::ostream& os, std::ostream& err) {
  const SimulationDesign d = o.design.to_design();
  d.validate();
  if (o.reps < 1) throw std::invalid_argument("--reps must be positive");
  if (o.workers < 1) throw std::invalid_argument("--workers must be positive");
  std::vector<ScoreType> scores;
  for (const auto& m : o.methods) scores.push_back(parse_score_type(m));
  const bool known = o.propensity == "known" || (o.propensity == "auto" && d.id == 4);
  // validates the model options up front
  (void)to_pipeline(o.model, scores.front(), 0, 1);

  const TrueMarginals truth = build_truth(d, o.design.truth_mc, o.seed);
  std::vector<double> true_qte;
  for (double t : o.model.taus) true_qte.push_back(truth.qte(t));

  const int R = o.reps;
  const auto M = scores.size();
  std::vector<std::vector<MethodOutcome>> results(R, std::vector<MethodOutcome>(M));
  std::mutex log_mu;
  parallel_for(R, o.workers, [&](int r) {
    Rng data_rng = make_stream(o.seed, {static_cast<std::uint64_t>(r)});
    const Dataset data = simulate(d, data_rng);
    const std::uint64_t fit_seed = make_stream(o.seed, {static_cast<std::uint64_t>(r), kFitSeedStream})();

    std::optional<PropensityDraws> prop;
    std::string prop_error;
    if (std::any_of(scores.begin(), scores.end(), [](ScoreType s) { return s != ScoreType::XOnly; })) {
      try {
        if (known) {
          prop = known_propensity(data.pi);
        } else {
          const PipelineConfig pc = to_pipeline(o.model, ScoreType::Double, fit_seed, 1);
          Rng prng = make_stream(fit_seed, {0});
          prop = fit_propensity(data.x, data.t, pc.propensity, prng);
        }
      } catch (const std::exception& e) {
        prop_error = std::string("propensity: ") + e.what();
      }
    }

    for (std::size_t mi = 0; mi < M; ++mi) {
      MethodOutcome& mo = results[r][mi];
      try {
        if (scores[mi] != ScoreType::XOnly && !prop) throw std::runtime_error(prop_error);
        PipelineConfig pc = to_pipeline(o.model, scores[mi], fit_seed, 1);
        if (prop) {
          pc.source = PropensitySource::Provided;
          pc.provided = *prop;
        }
        const PipelineResult res = run_pipeline(data, pc);
        const Summary& s = res.summary;
        mo.est = s.qte.mean;
        mo.lo = s.qte.lo;
        mo.hi = s.qte.hi;
        mo.ise0 = density_ise(s.grid_y, s.f0.mean, truth, 0);
        mo.ise1 = density_ise(s.grid_y, s.f1.mean, truth, 1);
        mo.sup0 = sup_distance(s.grid_y, s.F0.mean, truth, 0);
        mo.sup1 = sup_distance(s.grid_y, s.F1.mean, truth, 1);
        mo.chosen = res.chosen;
        for (double v : res.draws.divergence_rate) mo.divergence = std::max(mo.divergence, v);
        mo.ok = true;
      } catch (const std::exception& e) {
        mo.error = e.what();
      }
      std::lock_guard lock(log_mu);
      err << "replicate " << r + 1 << "/" << R << " " << o.methods[mi] << ": "
          << (mo.ok ? "ok" : "FAILED: " + mo.error) << "\n";
    }
  });

  // fixed-order aggregation
  std::vector<MetricRow> rows;
  std::ostringstream ise_csv, fail_csv;
  ise_csv << "method,replicate,ise_f0,ise_f1,cdf_sup0,cdf_sup1,K,V1,max_divergence\n";
  fail_csv << "method,replicate,error\n";
  int n_ok = 0, n_failed = 0;
  std::vector<std::string> empty_methods;
  for (std::size_t mi = 0; mi < M; ++mi) {
    int ok_here = 0;
    for (int r = 0; r < R; ++r) {
      const MethodOutcome& mo = results[r][mi];
      if (!mo.ok) {
        ++n_failed;
        std::string msg = mo.error;
        std::replace(msg.begin(), msg.end(), ',', ';');
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        fail_csv << o.methods[mi] << ',' << r + 1 << ',' << msg << '\n';
        continue;
      }
      ++n_ok;
      ++ok_here;
      for (std::size_t q = 0; q < o.model.taus.size(); ++q) {
        rows.push_back({o.methods[mi], r + 1, o.model.taus[q], mo.est[q], true_qte[q], mo.lo[q], mo.hi[q]});
      }
      ise_csv << o.methods[mi] << ',' << r + 1 << ',' << fmt(mo.ise0) << ',' << fmt(mo.ise1) << ','
              << fmt(mo.sup0) << ',' << fmt(mo.sup1) << ',' << mo.chosen.K << ',' << mo.chosen.V1 << ','
              << fmt(mo.divergence) << '\n';
    }
    if (ok_here == 0) empty_methods.push_back(o.methods[mi]);
  }

  OutputDir out(o.out);
  const auto aggs = aggregate(rows);
  out.write("metrics.csv", metrics_csv(rows));
  out.write("ise.csv", ise_csv.str());
  out.write("failures.csv", fail_csv.str());
  write_aggregates(out, aggs, d.id, d.J, empty_methods);

  auto m = make_manifest("replicate", resolved_config(app));
  m["seed"] = o.seed;
  m["design"] = {{"id", d.id}, {"J", d.J}, {"n", d.n}, {"covariates", d.num_covariates()}};
  m["propensity"] = known ? "known" : "estimate";
  m["replicates"] = {{"requested", R * static_cast<int>(M)}, {"succeeded", n_ok}, {"failed", n_failed}};
  write_manifest(out, m);

  os << format_report(aggs, d.id, d.J);
  if (n_ok == 0) {
    err << "error: no replicate succeeded; aggregates are empty\n";
    return kRuntime;
  }
  if (n_failed > 0) {
    err << "warning: " << n_failed << " of " << R * static_cast<int>(M) << " fits failed (see failures.csv)\n";
    return kPartial;
  }
  return kOk;
}

struct ReportOptions {
  std::string in;
  std::string out;
};

int cmd_report(const ReportOptions& o, std::ostream& os) {
  const std::filesystem::path dir(o.in);
  const std::string metrics_path = (dir / "metrics.csv").string();
  if (!std::filesystem::exists(metrics_path)) throw ValidationError({metrics_path + ": not found"});
  const auto rows = parse_metrics_csv(read_file(metrics_path), metrics_path);
  int design = 0, J = 0;
  if (std::filesystem::exists(dir / "manifest.json")) {
    const auto m = nlohmann::json::parse(read_file(dir / "manifest.json"));
    if (m.contains("design")) {
      design = m["design"].value("id", 0);
      J = m["design"].value("J", 0);
    }
  }
  const auto aggs = aggregate(rows);
  const std::string text = format_report(aggs, design, J);
  OutputDir out(o.out.empty() ? o.in : o.out);
  out.write("report.txt", text);
  os << text;
  return aggs.empty() ? kRuntime : kOk;
}

}  // namespace

int run(const std::vector<std::string>& raw_args, std::ostream& os, std::ostream& err) {
  CLI::App app{"Bayesian semiparametric quantile treatment effects"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  auto configure = [](CLI::App* sub) {
    sub->option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    sub->add_option("--config", "key=value file or manifest.json; explicit flags override it");
  };

  SimulateOptions sim;
  auto* simulate_cmd = app.add_subcommand("simulate", "Generate replicate datasets and the true marginals");
  configure(simulate_cmd);
  add_design_options(simulate_cmd, sim.design);
  simulate_cmd->add_option("--reps", sim.reps, "Number of datasets");
  simulate_cmd->add_option("--seed", sim.seed, "Seed")->required();
  simulate_cmd->add_option("--truth-grid", sim.truth_grid, "Points in the true density/CDF table");
  simulate_cmd->add_option("--taus", sim.taus, "Quantile levels of the true QTE table")
      ->delimiter(',')
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  simulate_cmd->add_option("--out", sim.out, "Output directory")->required();

  FitOptions fit;
  auto* fit_cmd = app.add_subcommand("fit", "Fit the model to one dataset and estimate QTEs");
  configure(fit_cmd);
  fit_cmd->add_option("--data", fit.data, "Dataset CSV (y,t,x1..xd[,pi,y0,y1])")->required();
  fit_cmd->add_option("--out", fit.out, "Output directory")->required();
  fit_cmd->add_option("--score", fit.score, "Balancing score")->check(CLI::IsMember({"double", "ps-only", "x-only"}));
  fit_cmd->add_option("--propensity", fit.propensity, "estimate, known (pi column) or file")
      ->check(CLI::IsMember({"estimate", "known", "file"}));
  fit_cmd->add_option("--propensity-csv", fit.propensity_csv, "n x N_pi propensity draws for --propensity file");
  add_model_options(fit_cmd, fit.model);
  fit_cmd->add_option("--seed", fit.seed, "Seed");
  fit_cmd->add_option("--threads", fit.threads, "Worker threads");
  fit_cmd->add_flag("--chain-dump", fit.chain_dump, "Write every retained outcome-model draw");

  ReplicateOptions rep;
  auto* rep_cmd = app.add_subcommand("replicate", "Simulate, fit and score many replicates");
  configure(rep_cmd);
  add_design_options(rep_cmd, rep.design);
  rep_cmd->add_option("--reps", rep.reps, "Replicates");
  rep_cmd->add_option("--seed", rep.seed, "Seed")->required();
  rep_cmd->add_option("--methods", rep.methods, "Score types to compare")
      ->delimiter(',')
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll)
      ->check(CLI::IsMember({"double", "ps-only", "x-only"}));
  rep_cmd->add_option("--propensity", rep.propensity, "auto (known for design 4), known or estimate")
      ->check(CLI::IsMember({"auto", "known", "estimate"}));
  add_model_options(rep_cmd, rep.model);
  rep_cmd->add_option("--workers", rep.workers, "Replicates run in parallel");
  rep_cmd->add_option("--out", rep.out, "Output directory")->required();

  ReportOptions report;
  auto* report_cmd = app.add_subcommand("report", "Aggregate a replicate run's metrics table");
  report_cmd->add_option("--in", report.in, "Directory written by replicate")->required();
  report_cmd->add_option("--out", report.out, "Directory for report.txt (default: --in)");

  try {
    std::vector<std::string> args = keep_last_occurrence(expand_config(raw_args));
    std::reverse(args.begin(), args.end());
    app.parse(args);
    if (*simulate_cmd) return cmd_simulate(sim, *simulate_cmd, os);
    if (*fit_cmd) return cmd_fit(fit, *fit_cmd, os, err);
    if (*rep_cmd) return cmd_replicate(rep, *rep_cmd, os, err);
    if (*report_cmd) return cmd_report(report, os);
    return kUsage;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, os, err);
    return code == 0 ? kOk : kUsage;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const ValidationError& e) {
    for (const auto& d : e.diagnostics) err << "invalid: " << d << "\n";
    return kValidation;
  } catch (const std::invalid_argument& e) {
    err << "invalid: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntime;
  }
}

}  // namespace qte::cli
