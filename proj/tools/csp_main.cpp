// Command-line front end: generate, reduce, fit, eval, grid, simulate.

#include "csp/io.hpp"
#include "csp/pipeline.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iostream>

using namespace csp;

namespace {

const std::vector<std::string> kReservedColumns{"cell_id", "coupled_row", "method"};

struct Columns {
  std::vector<std::string> covariates;
  std::string response = "y";
};

void add_column_flags(CLI::App* cmd, Columns& c) {
  cmd->add_option("--covariates", c.covariates, "Covariate column names (default: every other column)")
      ->delimiter(',');
  cmd->add_option("--response", c.response, "Response column name");
}

Json rejections_json(const std::vector<CsvRejection>& rej) {
  Json j = Json::array();
  for (const auto& r : rej) j.push_back({{"line", r.line}, {"reason", r.reason}});
  return j;
}

CsvReadResult load(const std::string& path, Columns& c) {
  if (c.covariates.empty()) {
    for (const auto& h : read_csv_header(path))
      if (h != c.response && std::find(kReservedColumns.begin(), kReservedColumns.end(), h) == kReservedColumns.end())
        c.covariates.push_back(h);
  }
  CsvReadResult r = read_dataset_csv(path, c.covariates, c.response);
  for (const auto& rej : r.rejected) std::cerr << path << ':' << rej.line << ": rejected: " << rej.reason << '\n';
  if (r.data.rows() == 0) throw DomainError("'" + path + "' has no usable rows");
  return r;
}

Json columns_json(const Columns& c) { return {{"covariates", c.covariates}, {"response", c.response}}; }

// Domain and covariate ranges come either from flags or from a generate
// metadata file, so a split data set can be fitted on the ranges of the
// full data.
struct Ranges {
  std::vector<double> domain;
  std::string domain_from;
  std::vector<double> x_ranges;
  std::string x_ranges_from;

  void add_flags(CLI::App* cmd) {
    cmd->add_option("--domain", domain, "Response domain lo,hi")->delimiter(',')->expected(2);
    cmd->add_option("--domain-from", domain_from, "JSON file with a \"domain\" entry");
    cmd->add_option("--x-ranges", x_ranges, "Covariate ranges lo1,hi1,lo2,hi2,...")->delimiter(',');
    cmd->add_option("--x-ranges-from", x_ranges_from, "JSON file with an \"x_ranges\" entry");
  }

  std::optional<Interval> resolved_domain() const {
    if (!domain.empty()) return Interval{domain[0], domain[1]};
    if (!domain_from.empty()) return interval_from_json(read_json(domain_from).at("domain"));
    return std::nullopt;
  }

  std::optional<std::vector<Interval>> resolved_x_ranges(std::size_t d) const {
    std::vector<Interval> r;
    if (!x_ranges.empty()) {
      if (x_ranges.size() != 2 * d) throw DomainError("--x-ranges needs two values per covariate");
      for (std::size_t q = 0; q < d; ++q) r.push_back({x_ranges[2 * q], x_ranges[2 * q + 1]});
    } else if (!x_ranges_from.empty()) {
      const Json doc = read_json(x_ranges_from);
      for (const auto& v : doc.at("x_ranges")) r.push_back(interval_from_json(v));
      if (r.size() != d) throw DomainError("'" + x_ranges_from + "' has the wrong number of covariate ranges");
    } else {
      return std::nullopt;
    }
    return r;
  }
};

// ---------------------------------------------------------------- generate

struct GenerateArgs {
  std::string case_name = "case1";
  std::size_t N = 20000;
  std::uint64_t seed = 0;
  std::size_t rep = 0;
  double train_fraction = 0.95;
  std::string out, train, test, meta;
};

int run_generate(const GenerateArgs& a) {
  const CaseId c = parse_case_id(a.case_name);
  const ReplicateSeeds s = replicate_seeds(a.seed, a.rep, 0);
  Replicate rep = prepare_replicate(c, a.N, s.data, s.split, a.train_fraction);
  if (!a.out.empty()) write_dataset_csv(a.out, rep.full);
  if (!a.train.empty()) write_dataset_csv(a.train, rep.train);
  if (!a.test.empty()) write_dataset_csv(a.test, rep.test);
  if (!a.meta.empty()) {
    Json j;
    j["config"] = {{"case", to_string(c)}, {"N", a.N}, {"seed", a.seed}, {"rep", a.rep},
                   {"train_fraction", a.train_fraction}};
    j["seeds"] = {{"data", s.data}, {"split", s.split}};
    j["domain"] = interval_to_json(rep.domain);
    Json xr = Json::array();
    for (const auto& r : rep.x_ranges) xr.push_back(interval_to_json(r));
    j["x_ranges"] = xr;
    j["rows"] = {{"full", rep.full.rows()}, {"train", rep.train.rows()}, {"test", rep.test.rows()}};
    write_json(a.meta, j);
  }
  return 0;
}

// ------------------------------------------------------------------ reduce

struct ReduceArgs {
  std::string input, out, provenance;
  Columns cols;
  std::string method = "csp", strategy = "bins", allocation = "proportional";
  std::size_t n = 0;
  std::size_t K_target = 0;
  std::vector<std::size_t> n_q;
  std::uint64_t seed = 0;
  unsigned threads = default_thread_count();
  int sp_max_iters = 500;
};

int run_reduce(ReduceArgs a) {
  CsvReadResult in = load(a.input, a.cols);
  ReduceSpec spec;
  spec.method = parse_reduction_method(a.method);
  spec.n = a.n;
  spec.strategy = parse_partition_strategy(a.strategy);
  if (a.K_target > 0) spec.K_target = a.K_target;
  spec.allocation = parse_allocation_mode(a.allocation);
  if (!a.n_q.empty()) spec.n_q = a.n_q;
  spec.seed = a.seed;
  spec.threads = a.threads;
  spec.sp_max_iters = a.sp_max_iters;

  const auto t0 = std::chrono::steady_clock::now();
  ReducedSet red = run_reduction(in.data, spec);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  write_reduced_csv(a.out, red, a.cols.covariates, a.cols.response);
  if (!a.provenance.empty()) {
    Json j;
    j["config"] = {{"input", a.input},
                   {"columns", columns_json(a.cols)},
                   {"method", a.method},
                   {"n", a.n},
                   {"strategy", a.strategy},
                   {"K_target", spec.K_target.value_or(choose_K(a.n))},
                   {"allocation", a.allocation},
                   {"n_q", a.n_q},
                   {"seed", a.seed},
                   {"threads", a.threads},
                   {"sp_max_iters", a.sp_max_iters}};
    j["input_rows"] = in.data.rows();
    j["rejected_rows"] = rejections_json(in.rejected);
    j["reduction"] = reduced_provenance(red);
    j["timing"] = {{"seconds", secs}};
    write_json(a.provenance, j);
  }
  return 0;
}

// --------------------------------------------------------------------- fit

struct FitArgs {
  std::string input, out, report;
  Columns cols;
  Ranges ranges;
  std::string mode = "likelihood", reference = "uniform";
  std::vector<double> lambdas;
  std::size_t y_knots = 12, x_knots = 6;
  double holdout = 0.2;
  std::uint64_t seed = 0;
  unsigned threads = default_thread_count();
};

int run_fit(FitArgs a) {
  CsvReadResult in = load(a.input, a.cols);
  const std::size_t d = in.data.dims();
  FitConfig cfg;
  cfg.basis = BasisConfig::defaults(d);
  cfg.basis.y_knots = a.y_knots;
  cfg.basis.x_knots_per_dim = a.x_knots;
  cfg.mode = parse_fit_mode(a.mode);
  cfg.reference = parse_pseudo_reference(a.reference);
  if (!a.lambdas.empty()) cfg.lambdas = a.lambdas;
  cfg.holdout_fraction = a.holdout;
  cfg.seed = a.seed;
  cfg.threads = a.threads;
  cfg.domain = a.ranges.resolved_domain().value_or(expanded_range(in.data.responses(), 0.01));
  cfg.x_ranges = a.ranges.resolved_x_ranges(d);

  FitResult fit = fit_density(in.data, cfg);
  Json model = model_to_json(fit.model);
  Json config = {{"input", a.input},   {"columns", columns_json(a.cols)}, {"mode", a.mode},
                 {"reference", a.reference}, {"lambdas", cfg.lambdas}, {"y_knots", a.y_knots},
                 {"x_knots", a.x_knots}, {"holdout_fraction", a.holdout}, {"seed", a.seed},
                 {"threads", a.threads}};
  model["config"] = config;
  model["columns"] = columns_json(a.cols);
  write_json(a.out, model);
  if (!a.report.empty()) {
    Json r = fit_report_to_json(fit.report);
    r["config"] = config;
    write_json(a.report, r);
  }
  for (const auto& w : fit.report.warnings) std::cerr << "warning: " << w << '\n';
  if (!fit.report.converged) std::cerr << "warning: gradient norm " << fit.report.gradient_norm << " above tolerance\n";
  return 0;
}

// -------------------------------------------------------------------- eval

struct EvalArgs {
  std::string model, input, out, per_row, truth_case;
};

Columns model_columns(const Json& m) {
  Columns c;
  if (m.contains("columns")) {
    c.covariates = m["columns"].at("covariates").get<std::vector<std::string>>();
    c.response = m["columns"].at("response").get<std::string>();
  }
  return c;
}

int run_eval(const EvalArgs& a, Columns cols) {
  const Json mj = read_json(a.model);
  DensityModel model = model_from_json(mj);
  if (cols.covariates.empty()) {
    const Columns stored = model_columns(mj);
    cols.covariates = stored.covariates;
    if (!stored.covariates.empty() && cols.response == "y") cols.response = stored.response;
  }
  CsvReadResult in = load(a.input, cols);
  if (in.data.dims() != model.basis().dims()) throw DomainError("test data and model differ in covariate count");

  const Dataset& test = in.data;
  std::vector<double> crps(test.rows());
  std::size_t clamped_rows = 0;
  for (std::size_t i = 0; i < test.rows(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    bool clamped = false;
    crps[i] = model.distribution(row_span(test.x, r), &clamped).crps(test.y[r]);
    clamped_rows += clamped;
  }
  double mean = 0.0;
  for (double v : crps) mean += v;
  mean /= static_cast<double>(crps.size());

  Json j;
  j["config"] = {{"model", a.model}, {"input", a.input}, {"columns", columns_json(cols)}, {"truth_case", a.truth_case}};
  j["rows"] = test.rows();
  j["rejected_rows"] = rejections_json(in.rejected);
  j["mean_crps"] = mean;
  j["log_crps"] = std::log10(mean);
  j["clamped_rows"] = clamped_rows;
  if (!a.truth_case.empty()) {
    const CaseId c = parse_case_id(a.truth_case);
    j["truth_crps"] = truth_crps(truth_oracle(c), test.x, test.responses(), model.domain());
  }
  write_json(a.out, j);

  if (!a.per_row.empty()) {
    std::ofstream out(a.per_row);
    if (!out) throw DomainError("cannot write '" + a.per_row + "'");
    out << "row,crps\n";
    for (std::size_t i = 0; i < crps.size(); ++i) out << i << ',' << format_double(crps[i]) << '\n';
  }
  return 0;
}

// -------------------------------------------------------------------- grid

struct GridArgs {
  std::string model, out;
  std::vector<double> x;
  std::size_t points = 200;
};

int run_grid(const GridArgs& a) {
  DensityModel model = model_from_json(read_json(a.model));
  const std::size_t d = model.basis().dims();
  if (a.x.empty() || a.x.size() % d != 0) throw DomainError("--x needs a multiple of " + std::to_string(d) + " values");
  if (a.points < 2) throw DomainError("--points must be at least 2");
  std::ofstream out(a.out);
  if (!out) throw DomainError("cannot write '" + a.out + "'");
  out << "x_index,";
  for (std::size_t q = 0; q < d; ++q) out << 'x' << q + 1 << ',';
  out << "y,density,cdf\n";
  const Interval dom = model.domain();
  for (std::size_t k = 0; k < a.x.size() / d; ++k) {
    std::span<const double> x(a.x.data() + k * d, d);
    std::vector<double> ys(a.points);
    for (std::size_t i = 0; i < a.points; ++i)
      ys[i] = dom.lo + dom.length() * static_cast<double>(i) / static_cast<double>(a.points - 1);
    ys.back() = dom.hi;
    const auto dens = model.cond_density(x, ys);
    const ConditionalDistribution dist = model.distribution(x);
    for (std::size_t i = 0; i < a.points; ++i) {
      out << k << ',';
      for (double v : x) out << format_double(v) << ',';
      out << format_double(ys[i]) << ',' << format_double(dens[i]) << ',' << format_double(dist.cdf(ys[i])) << '\n';
    }
  }
  return 0;
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
  std::string case_name = "case1";
  std::size_t N = 20000;
  std::vector<std::size_t> n_grid{32, 100, 316, 1000};
  std::size_t reps = 5;
  std::uint64_t seed = 0;
  std::vector<std::string> methods{"csp"};
  std::vector<std::string> allocations{"proportional"};
  std::string strategy = "bins";
  std::string mode = "likelihood", reference = "uniform";
  std::vector<double> lambdas;
  double train_fraction = 0.95;
  int vanilla_max_iters = 50;
  bool no_truth = false;
  unsigned threads = default_thread_count();
  std::string out;
  bool quiet = false;
};

int run_simulate(const SimulateArgs& a) {
  ExperimentConfig cfg;
  cfg.case_id = parse_case_id(a.case_name);
  cfg.N = a.N;
  cfg.n_grid = a.n_grid;
  cfg.reps = a.reps;
  cfg.seed = a.seed;
  cfg.methods.clear();
  for (const auto& m : a.methods) cfg.methods.push_back(parse_reduction_method(m));
  cfg.allocations.clear();
  for (const auto& m : a.allocations) cfg.allocations.push_back(parse_allocation_mode(m));
  cfg.strategy = parse_partition_strategy(a.strategy);
  cfg.fit.mode = parse_fit_mode(a.mode);
  cfg.fit.reference = parse_pseudo_reference(a.reference);
  if (!a.lambdas.empty()) cfg.fit.lambdas = a.lambdas;
  cfg.train_fraction = a.train_fraction;
  cfg.vanilla_max_iters = a.vanilla_max_iters;
  cfg.with_truth = !a.no_truth;
  cfg.threads = a.threads;

  auto rows = run_experiment(cfg, [&](const ExperimentRow& r) {
    if (!a.quiet)
      std::cerr << r.case_name << " rep " << r.rep << " n " << r.n << ' ' << r.method << '/' << r.allocation
                << " crps " << r.crps << " (" << r.reduce_seconds + r.fit_seconds << " s)\n";
  });
  write_experiment_csv(a.out, rows);
  Json j;
  j["config"] = {{"case", a.case_name},   {"N", a.N},
                 {"n_grid", a.n_grid},    {"reps", a.reps},
                 {"seed", a.seed},        {"methods", a.methods},
                 {"allocations", a.allocations}, {"strategy", a.strategy},
                 {"mode", a.mode},        {"reference", a.reference},
                 {"lambdas", cfg.fit.lambdas}, {"train_fraction", a.train_fraction},
                 {"vanilla_max_iters", a.vanilla_max_iters}, {"with_truth", !a.no_truth},
                 {"threads", a.threads}};
  j["rows"] = rows.size();
  write_json(a.out + ".json", j);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conditional support points for density regression"};
  app.require_subcommand(1);

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "Simulate a case and write full, train and test CSVs");
  gen->add_option("--case", ga.case_name, "Simulation case")->required();
  gen->add_option("--N", ga.N, "Rows");
  gen->add_option("--seed", ga.seed, "Master seed");
  gen->add_option("--rep", ga.rep, "Replicate index");
  gen->add_option("--train-fraction", ga.train_fraction, "Training share of the split");
  gen->add_option("--out", ga.out, "Full data CSV");
  gen->add_option("--train", ga.train, "Training CSV");
  gen->add_option("--test", ga.test, "Test CSV");
  gen->add_option("--meta", ga.meta, "JSON with seeds, response domain and covariate ranges");

  ReduceArgs ra;
  auto* red = app.add_subcommand("reduce", "Reduce a data set to n representative pairs");
  red->add_option("--input", ra.input, "Input CSV")->required()->check(CLI::ExistingFile);
  add_column_flags(red, ra.cols);
  red->add_option("--method", ra.method, "csp, mcsp, uniform or vanilla_sp");
  red->add_option("--n", ra.n, "Reduced size")->required();
  red->add_option("--strategy", ra.strategy, "bins, voronoi_kmeans or voronoi_sp");
  red->add_option("--K-target", ra.K_target, "Target cell count (default from n)");
  red->add_option("--allocation", ra.allocation, "proportional or equal");
  red->add_option("--n-q", ra.n_q, "MCSP per-dimension sizes")->delimiter(',');
  red->add_option("--seed", ra.seed, "Seed");
  red->add_option("--threads", ra.threads, "Worker threads");
  red->add_option("--sp-max-iters", ra.sp_max_iters, "Support point iteration cap");
  red->add_option("--out", ra.out, "Reduced set CSV")->required();
  red->add_option("--provenance", ra.provenance, "Provenance JSON");

  FitArgs fa;
  auto* fit = app.add_subcommand("fit", "Fit a conditional density model");
  fit->add_option("--input", fa.input, "Reduced set or data CSV")->required()->check(CLI::ExistingFile);
  add_column_flags(fit, fa.cols);
  fa.ranges.add_flags(fit);
  fit->add_option("--mode", fa.mode, "likelihood or pseudo");
  fit->add_option("--reference", fa.reference, "Pseudo likelihood reference: uniform or marginal");
  fit->add_option("--lambda", fa.lambdas, "Smoothing parameter or grid")->delimiter(',');
  fit->add_option("--y-knots", fa.y_knots, "Response knots, boundaries included");
  fit->add_option("--x-knots", fa.x_knots, "Knots per covariate, boundaries included");
  fit->add_option("--holdout", fa.holdout, "Held-out share for choosing lambda");
  fit->add_option("--seed", fa.seed, "Seed");
  fit->add_option("--threads", fa.threads, "Worker threads");
  fit->add_option("--out", fa.out, "Model JSON")->required();
  fit->add_option("--report", fa.report, "Fit report JSON");

  EvalArgs ea;
  Columns eval_cols;
  auto* ev = app.add_subcommand("eval", "Out-of-sample CRPS of a model");
  ev->add_option("--model", ea.model, "Model JSON")->required()->check(CLI::ExistingFile);
  ev->add_option("--input", ea.input, "Test CSV")->required()->check(CLI::ExistingFile);
  add_column_flags(ev, eval_cols);
  ev->add_option("--truth-case", ea.truth_case, "Also report the CRPS of this case's true conditional law");
  ev->add_option("--out", ea.out, "Evaluation JSON")->required();
  ev->add_option("--per-row", ea.per_row, "Per-row CRPS CSV");

  GridArgs gra;
  auto* grid = app.add_subcommand("grid", "Conditional density and CDF on a response grid");
  grid->add_option("--model", gra.model, "Model JSON")->required()->check(CLI::ExistingFile);
  grid->add_option("--x", gra.x, "Covariate vectors, concatenated")->required()->delimiter(',');
  grid->add_option("--points", gra.points, "Grid points per covariate vector");
  grid->add_option("--out", gra.out, "Output CSV")->required();

  SimulateArgs sa;
  auto* sim = app.add_subcommand("simulate", "Repeated generate, reduce, fit and eval over an n grid");
  sim->add_option("--case", sa.case_name, "Simulation case")->required();
  sim->add_option("--N", sa.N, "Rows per replicate");
  sim->add_option("--n-grid", sa.n_grid, "Reduced sizes")->delimiter(',');
  sim->add_option("--reps", sa.reps, "Replicates");
  sim->add_option("--seed", sa.seed, "Master seed");
  sim->add_option("--methods", sa.methods, "Reduction methods")->delimiter(',');
  sim->add_option("--allocations", sa.allocations, "Allocation modes for csp and mcsp")->delimiter(',');
  sim->add_option("--strategy", sa.strategy, "CSP partition strategy");
  sim->add_option("--mode", sa.mode, "likelihood or pseudo");
  sim->add_option("--reference", sa.reference, "Pseudo likelihood reference");
  sim->add_option("--lambda", sa.lambdas, "Smoothing parameter or grid")->delimiter(',');
  sim->add_option("--train-fraction", sa.train_fraction, "Training share of each replicate");
  sim->add_option("--vanilla-max-iters", sa.vanilla_max_iters, "Iteration cap for vanilla support points");
  sim->add_flag("--no-truth", sa.no_truth, "Skip the true-law CRPS column");
  sim->add_option("--threads", sa.threads, "Worker threads");
  sim->add_flag("--quiet", sa.quiet, "No progress lines");
  sim->add_option("--out", sa.out, "Result CSV (config goes to <out>.json)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*gen) return run_generate(ga);
    if (*red) return run_reduce(ra);
    if (*fit) return run_fit(fa);
    if (*ev) return run_eval(ea, eval_cols);
    if (*grid) return run_grid(gra);
    if (*sim) return run_simulate(sa);
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const Json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
