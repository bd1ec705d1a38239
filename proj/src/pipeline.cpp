#include "csp/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

namespace csp {

ReducedSet run_reduction(const Dataset& data, const ReduceSpec& spec) {
  if (spec.n == 0) throw DomainError("run_reduction: n must be positive");
  SpConfig sp;
  sp.seed = spec.seed;
  sp.threads = spec.threads;
  sp.max_iters = spec.sp_max_iters;
  PartitionConfig part;
  part.strategy = spec.strategy;
  part.K_target = spec.K_target.value_or(choose_K(spec.n));
  part.seed = spec.seed;
  CspOptions opts{spec.allocation, spec.threads};
  switch (spec.method) {
    case ReductionMethod::csp: return csp_reduce(data, spec.n, part, sp, opts);
    case ReductionMethod::mcsp: return mcsp_reduce(data, spec.n, spec.n_q, part, sp, opts);
    case ReductionMethod::uniform: return uniform_subsample(data, spec.n, spec.seed);
    case ReductionMethod::vanilla_sp: return vanilla_sp_reduce(data, spec.n, sp);
  }
  throw DomainError("run_reduction: unknown method");
}

std::vector<Interval> covariate_ranges(const PointMatrix& x) {
  std::vector<Interval> r;
  std::vector<double> col(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index q = 0; q < x.cols(); ++q) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) col[static_cast<std::size_t>(i)] = x(i, q);
    r.push_back(expanded_range(col, 0.01));
  }
  return r;
}

double mean_crps(const DensityModel& model, const Dataset& test) {
  if (test.rows() == 0) throw DomainError("mean_crps: empty test set");
  double s = 0.0;
  for (std::size_t i = 0; i < test.rows(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    s += model.distribution(row_span(test.x, r)).crps(test.y[r]);
  }
  return s / static_cast<double>(test.rows());
}

Replicate prepare_replicate(CaseId c, std::size_t N, std::uint64_t data_seed, std::uint64_t split_seed,
                            double train_fraction) {
  Replicate rep;
  GeneratedCase g = generate({c, N, data_seed});
  rep.truth = std::move(g.truth);
  rep.full = std::move(g.data);
  TrainTestSplit split = train_test_split(rep.full, train_fraction, split_seed);
  rep.train = std::move(split.train);
  rep.test = std::move(split.test);
  rep.domain = case_domain(c, rep.full.responses());
  rep.x_ranges = covariate_ranges(rep.full.x);
  return rep;
}

ReplicateSeeds replicate_seeds(std::uint64_t seed, std::size_t rep, std::size_t n) {
  const std::uint64_t s = derive_seed(seed, rep);
  return {derive_seed(s, 0), derive_seed(s, 1), derive_seed(s, 1000 + n), derive_seed(s, 2000 + n)};
}

std::vector<ExperimentRow> run_experiment(const ExperimentConfig& cfg,
                                          const std::function<void(const ExperimentRow&)>& on_row) {
  if (cfg.n_grid.empty() || cfg.reps == 0 || cfg.methods.empty() || cfg.allocations.empty())
    throw DomainError("run_experiment: empty grid");
  using clock = std::chrono::steady_clock;
  std::vector<ExperimentRow> rows;
  for (std::size_t r = 0; r < cfg.reps; ++r) {
    const ReplicateSeeds base = replicate_seeds(cfg.seed, r, 0);
    Replicate rep = prepare_replicate(cfg.case_id, cfg.N, base.data, base.split, cfg.train_fraction);
    const double truth = cfg.with_truth ? truth_crps(rep.truth, rep.test.x, rep.test.responses(), rep.domain) : NAN;
    for (std::size_t n : cfg.n_grid) {
      const ReplicateSeeds seeds = replicate_seeds(cfg.seed, r, n);
      for (ReductionMethod m : cfg.methods) {
        const bool partitions = m == ReductionMethod::csp || m == ReductionMethod::mcsp;
        const std::size_t n_alloc = partitions ? cfg.allocations.size() : 1;
        for (std::size_t a = 0; a < n_alloc; ++a) {
          ReduceSpec rs;
          rs.method = m;
          rs.n = n;
          rs.strategy = cfg.strategy;
          rs.allocation = cfg.allocations[a];
          rs.seed = seeds.reduce;
          rs.threads = cfg.threads;
          if (m == ReductionMethod::vanilla_sp) rs.sp_max_iters = cfg.vanilla_max_iters;
          auto t0 = clock::now();
          ReducedSet red = run_reduction(rep.train, rs);
          auto t1 = clock::now();

          FitConfig fc = cfg.fit;
          fc.domain = rep.domain;
          fc.x_ranges = rep.x_ranges;
          fc.seed = seeds.fit;
          fc.threads = cfg.threads;
          if (fc.basis.included_terms.empty()) fc.basis = BasisConfig::defaults(rep.full.dims());
          FitResult fit = fit_density(red.as_dataset(rep.train.covariate_names, rep.train.response_name), fc);
          auto t2 = clock::now();

          ExperimentRow row;
          row.case_name = to_string(cfg.case_id);
          row.method = to_string(m);
          row.allocation = partitions ? to_string(cfg.allocations[a]) : "none";
          row.strategy = m == ReductionMethod::csp ? to_string(cfg.strategy) : (m == ReductionMethod::mcsp ? "bins" : "none");
          row.rep = r;
          row.N = cfg.N;
          row.n = n;
          row.K = red.K;
          row.crps = mean_crps(fit.model, rep.test);
          row.truth_crps = truth;
          row.lambda = fit.report.lambda;
          row.converged = fit.report.converged;
          row.seeds = seeds;
          row.reduce_seconds = std::chrono::duration<double>(t1 - t0).count();
          row.fit_seconds = std::chrono::duration<double>(t2 - t1).count();
          if (on_row) on_row(row);
          rows.push_back(std::move(row));
        }
      }
    }
  }
  return rows;
}

void write_experiment_csv(const std::string& path, const std::vector<ExperimentRow>& rows) {
  std::ofstream out(path);
  if (!out) throw DomainError("cannot write '" + path + "'");
  out << "case,method,allocation,strategy,rep,N,n,K,log_n,crps,log_crps,truth_crps,lambda,converged,"
         "data_seed,split_seed,reduce_seed,fit_seed,reduce_seconds,fit_seconds\n";
  for (const auto& r : rows) {
    out << r.case_name << ',' << r.method << ',' << r.allocation << ',' << r.strategy << ',' << r.rep << ',' << r.N
        << ',' << r.n << ',' << r.K << ',' << format_double(std::log10(static_cast<double>(r.n))) << ','
        << format_double(r.crps) << ',' << format_double(std::log10(r.crps)) << ',' << format_double(r.truth_crps)
        << ',' << format_double(r.lambda) << ',' << (r.converged ? 1 : 0) << ',' << r.seeds.data << ','
        << r.seeds.split << ',' << r.seeds.reduce << ',' << r.seeds.fit << ',' << format_double(r.reduce_seconds)
        << ',' << format_double(r.fit_seconds) << '\n';
  }
}

}  // namespace csp
