// Benchmark harness: experiment runs, ρ sweeps, parameter certificates, data generation and LIBSVM checks.

#include <CLI11.hpp>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <thread>
#include <variant>

#include <ncadmm/json.hpp>
#include <ncadmm/ncadmm.hpp>

namespace fs = std::filesystem;
using namespace ncadmm;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;

constexpr const char* kCsvHeader =
    "t,wall_time_s,ifo,objective,test_error,test_loss,feas_sq,dual_sq,subgrad_sq,lyapunov";

// ---------------------------------------------------------------- spec file

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items()) {
    if (!ok.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

struct ProblemSpec {
  std::string type;
  Index n = 2000;
  Index d = 50;
  std::uint64_t seed = 0;
  double nu = 1e-5;
  std::optional<double> edge_weight;  // nullopt: certifiable weight
  double train_fraction = 0.5;
  Index grid = 20;
  Index classes = 5;
  double nu1 = 1e-5;
  double nu2 = 1e-4;
  double beta = 1.0;
  double theta = 1.0;
  std::string path;
  LabelMode labels = LabelMode::kAuto;
  Index dim = 0;
  Index copies = 1;
};

struct SolverSpec {
  std::string name;
  Variant variant = Variant::kStoc;
  std::optional<double> eta;
  std::optional<double> rho;
  double r = 0.0;
  std::optional<Index> batch_size;
  std::optional<Index> epoch_length;
  std::int64_t iterations = 1000;
  double beta = 1.0;
  std::optional<Variant> certify_as;
};

struct ExperimentSpec {
  ProblemSpec problem;
  std::vector<SolverSpec> solvers;
  int repetitions = 1;
  std::uint64_t seed_base = 0;
  std::int64_t trace_stride = 10;
  std::string output_dir = "out";
  double time_budget = std::numeric_limits<double>::infinity();
  bool lyapunov = true;
};

LabelMode parse_label_mode(const std::string& s) {
  if (s == "auto") return LabelMode::kAuto;
  if (s == "binary") return LabelMode::kBinary;
  if (s == "multiclass") return LabelMode::kMulticlass;
  throw ConfigError("labels must be auto, binary or multiclass");
}

ProblemSpec parse_problem(const json& j) {
  ProblemSpec p;
  if (!j.is_object() || !j.contains("type")) throw ConfigError("problem needs a 'type'");
  p.type = j.at("type").get<std::string>();
  if (p.type == "graph_guided") {
    check_keys(j, {"type", "n", "d", "seed", "nu", "edge_weight", "train_fraction"}, "problem");
    if (j.contains("edge_weight")) {
      const json& w = j.at("edge_weight");
      if (w.is_string()) {
        if (w.get<std::string>() != "certifiable") throw ConfigError("edge_weight must be a number or \"certifiable\"");
      } else {
        p.edge_weight = w.get<double>();
      }
    }
  } else if (p.type == "overlap") {
    check_keys(j, {"type", "n", "grid", "seed", "nu", "train_fraction"}, "problem");
    p.n = 1000;
  } else if (p.type == "multitask") {
    check_keys(j, {"type", "path", "n", "d", "classes", "seed", "nu1", "nu2", "beta", "theta", "dim",
                   "train_fraction"},
               "problem");
    p.n = 1000;
    p.d = 20;
  } else if (p.type == "libsvm") {
    check_keys(j, {"type", "path", "labels", "dim", "nu", "copies", "seed", "train_fraction"}, "problem");
    if (!j.contains("path")) throw ConfigError("libsvm problem needs a 'path'");
  } else {
    throw ConfigError("unknown problem type '" + p.type + "'");
  }
  p.n = j.value("n", p.n);
  p.d = j.value("d", p.d);
  p.seed = j.value("seed", p.seed);
  p.nu = j.value("nu", p.nu);
  p.train_fraction = j.value("train_fraction", p.train_fraction);
  p.grid = j.value("grid", p.grid);
  p.classes = j.value("classes", p.classes);
  p.nu1 = j.value("nu1", p.nu1);
  p.nu2 = j.value("nu2", p.nu2);
  p.beta = j.value("beta", p.beta);
  p.theta = j.value("theta", p.theta);
  p.path = j.value("path", p.path);
  p.dim = j.value("dim", p.dim);
  p.copies = j.value("copies", p.copies);
  if (j.contains("labels")) p.labels = parse_label_mode(j.at("labels").get<std::string>());
  if (!(p.train_fraction > 0.0 && p.train_fraction <= 1.0)) throw ConfigError("train_fraction must lie in (0, 1]");
  if (!(p.nu >= 0.0) || !(p.nu1 >= 0.0) || !(p.nu2 >= 0.0)) throw ConfigError("regularization weights must be >= 0");
  return p;
}

SolverSpec parse_solver(const json& j) {
  check_keys(j, {"name", "variant", "eta", "rho", "r", "M", "m", "T", "beta", "certify_as"}, "solver");
  SolverSpec s;
  s.variant = parse_variant(j.at("variant").get<std::string>());
  s.name = j.value("name", std::string(to_string(s.variant)));
  if (j.contains("eta")) s.eta = j.at("eta").get<double>();
  if (j.contains("rho")) s.rho = j.at("rho").get<double>();
  s.r = j.value("r", s.r);
  if (j.contains("M")) s.batch_size = j.at("M").get<Index>();
  if (j.contains("m")) s.epoch_length = j.at("m").get<Index>();
  s.iterations = j.value("T", s.iterations);
  s.beta = j.value("beta", s.beta);
  if (j.contains("certify_as")) s.certify_as = parse_variant(j.at("certify_as").get<std::string>());
  if (s.name.empty() || s.name.find_first_of("/\\ ") != std::string::npos)
    throw ConfigError("solver name '" + s.name + "' is not usable as a file name");
  if (s.iterations < 0) throw ConfigError("T must be nonnegative");
  if (!(s.beta > 0.0)) throw ConfigError("beta must be positive");
  return s;
}

ExperimentSpec parse_spec(const json& j) {
  check_keys(j, {"version", "problem", "solvers", "repetitions", "seed_base", "trace_stride", "output_dir",
                 "time_budget", "lyapunov"},
             "spec");
  if (j.value("version", std::string()) != "v1") throw ConfigError("spec needs \"version\": \"v1\"");
  ExperimentSpec e;
  e.problem = parse_problem(j.at("problem"));
  if (!j.contains("solvers") || !j.at("solvers").is_array() || j.at("solvers").empty())
    throw ConfigError("spec needs a non-empty 'solvers' list");
  std::set<std::string> names;
  for (const auto& s : j.at("solvers")) {
    e.solvers.push_back(parse_solver(s));
    if (!names.insert(e.solvers.back().name).second)
      throw ConfigError("duplicate solver name '" + e.solvers.back().name + "'");
  }
  e.repetitions = j.value("repetitions", e.repetitions);
  e.seed_base = j.value("seed_base", e.seed_base);
  e.trace_stride = j.value("trace_stride", e.trace_stride);
  e.output_dir = j.value("output_dir", e.output_dir);
  if (j.contains("time_budget")) e.time_budget = j.at("time_budget").get<double>();
  e.lyapunov = j.value("lyapunov", e.lyapunov);
  if (e.repetitions < 1) throw ConfigError("repetitions must be at least 1");
  if (e.trace_stride < 1) throw ConfigError("trace_stride must be at least 1");
  if (!(e.time_budget > 0.0)) throw ConfigError("time_budget must be positive");
  return e;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw InputError("'" + path + "' is not valid JSON: " + e.what());
  }
}

// ---------------------------------------------------------------- problems

template <class Loss>
struct Experiment {
  CompositeProblem<Loss> problem;
  std::optional<Loss> test;
  DatasetMeta meta;
  Index default_batch = 100;
};

using AnyExperiment = std::variant<Experiment<SigmoidLoss<RowMatrix>>, Experiment<SigmoidLoss<SparseRowMatrix>>,
                                   Experiment<SmoothedMultiTaskLoss<RowMatrix>>,
                                   Experiment<SmoothedMultiTaskLoss<SparseRowMatrix>>>;

template <class Features>
std::pair<Dataset<Features>, std::optional<Dataset<Features>>> train_test(const Dataset<Features>& ds,
                                                                          const ProblemSpec& p) {
  if (p.train_fraction >= 1.0) return {ds, std::nullopt};
  SplitResult<Features> s = split(ds, p.train_fraction, p.seed);
  return {std::move(s.train), std::move(s.test)};
}

template <class Features>
AnyExperiment sigmoid_experiment(const Dataset<Features>& ds, const ProblemSpec& p, ConstraintSystem cs,
                                 Index default_batch) {
  auto [train, test] = train_test(ds, p);
  const Index q = cs.q();
  Experiment<SigmoidLoss<Features>> e{
      make_problem(SigmoidLoss<Features>(train.features, train.binary_labels()),
                   BlockSeparableRegularizer::l1(q, p.nu), std::move(cs)),
      std::nullopt, ds.meta, default_batch};
  if (test) e.test.emplace(test->features, test->binary_labels());
  return e;
}

template <class Features>
AnyExperiment multitask_experiment(const Dataset<Features>& ds, const ProblemSpec& p) {
  auto [train, test] = train_test(ds, p);
  const Index m = ds.meta.classes;
  const double kappa0 = p.beta / p.theta;
  MultitaskConstraints mc = build_multitask_constraints(m, ds.d(), p.nu1, kappa0, p.nu2);
  Experiment<SmoothedMultiTaskLoss<Features>> e{
      make_problem(SmoothedMultiTaskLoss<Features>(train.features, train.class_labels(), m, p.nu1, p.beta, p.theta),
                   std::move(mc.regularizer), std::move(mc.constraints)),
      std::nullopt, ds.meta, 100};
  if (test) e.test.emplace(test->features, test->class_labels(), m, p.nu1, p.beta, p.theta);
  return e;
}

SparseDataset load_libsvm(const std::string& path, LabelMode labels, Index dim) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  SparseDataset ds = parse_libsvm(in, LibsvmOptions{labels, dim});
  ds.meta.name = fs::path(path).filename().string();
  return ds;
}

AnyExperiment build_experiment(const ProblemSpec& p) {
  if (p.type == "graph_guided") {
    GraphGuidedData g = gen_graph_guided(p.n, p.d, p.seed);
    const double w = p.edge_weight ? *p.edge_weight : certifiable_edge_weight(g.precision.support);
    return sigmoid_experiment(g.data, p, build_graph_guided_a(g.precision.support, w), 100);
  }
  if (p.type == "overlap") {
    OverlapData o = gen_overlap(p.n, p.seed, p.grid);
    return sigmoid_experiment(o.data, p, build_overlap_a(o.data.d(), 2), 200);
  }
  if (p.type == "multitask") {
    if (!p.path.empty()) return multitask_experiment(load_libsvm(p.path, LabelMode::kMulticlass, p.dim), p);
    return multitask_experiment(gen_multiclass(p.n, p.d, p.classes, p.seed).data, p);
  }
  SparseDataset ds = load_libsvm(p.path, p.labels, p.dim);
  if (!ds.binary()) throw InputError("libsvm problem needs binary labels; use the multitask type for multiclass data");
  ConstraintSystem cs = build_overlap_a(ds.d(), p.copies);
  return sigmoid_experiment(ds, p, std::move(cs), 100);
}

template <class Loss>
TestMetrics evaluate_test(const Loss& test, const Vector& x) {
  double err = 0.0, loss = 0.0;
  for (Index i = 0; i < test.n(); ++i) {
    err += test.misclassified(i, x) ? 1.0 : 0.0;
    loss += test.data_loss(i, x);
  }
  const double n = static_cast<double>(test.n());
  return {err / n, loss / n};
}

// ---------------------------------------------------------------- solvers

struct ResolvedSolver {
  SolverSpec spec;
  SolverConfig config;
  Certificate own;   // certificate of the solver's own variant
  Certificate used;  // certificate the run is admitted on (certify_as, or own)
  bool suggested = false;
  std::optional<LyapunovSpec> lyapunov;
};

template <class Loss>
ResolvedSolver resolve_solver(const Experiment<Loss>& ex, const SolverSpec& s, bool with_lyapunov) {
  const CompositeProblem<Loss>& p = ex.problem;
  const ConstraintSystem& cs = p.constraints;
  const Index n = p.n();
  ResolvedSolver out;
  out.spec = s;
  SolverConfig& cfg = out.config;
  cfg.variant = s.variant;
  cfg.batch_size = s.batch_size ? *s.batch_size : std::min(ex.default_batch, n);
  cfg.epoch_length = s.epoch_length ? *s.epoch_length : std::max<Index>(1, n / std::max<Index>(1, cfg.batch_size));
  cfg.iterations = s.iterations;
  const CertificateShape shape{n, cfg.batch_size, cfg.epoch_length, std::max<std::int64_t>(1, cfg.iterations), s.beta};
  const Variant cv = s.certify_as.value_or(s.variant);

  if (s.eta && s.rho) {
    cfg.eta = *s.eta;
    cfg.rho = *s.rho;
    cfg.r = s.r;
  } else {
    if (s.rho) throw ConfigError("solver '" + s.name + "': rho given without eta");
    SuggestOptions opt;
    opt.shape = shape;
    if (s.r > 0.0) {
      opt.r_policy = RPolicy::kFixed;
      opt.fixed_r = s.r;
    }
    if (s.eta) opt.fixed_eta = *s.eta;
    const Suggestion sg = suggest_params(p, cv, opt);
    if (!sg.found)
      throw ConfigError("solver '" + s.name + "': no (eta, rho) passes the " + to_string(cv) + " certificate");
    cfg.eta = sg.config.eta;
    cfg.rho = sg.config.rho;
    cfg.r = sg.config.r;
    out.suggested = true;
  }
  validate(cfg, n, cs);

  const double L = estimate_lipschitz(p);
  const double r = cfg.resolved_r(cs);
  out.used = certify(cv, L, cs, cfg.eta, cfg.rho, r, shape);
  out.own = cv == s.variant ? out.used : certify(s.variant, L, cs, cfg.eta, cfg.rho, r, shape);

  if (with_lyapunov) {
    LyapunovSpec ly;
    ly.constants = TheoryConstants::compute(L, cs, cfg.eta, cfg.rho, r);
    if (s.variant == Variant::kSvrg) {
      ly.kind = LyapunovKind::kPhi;
      ly.schedule = svrg_h_schedule(L, cs.phi_min_a(), cfg.rho, cfg.batch_size, cfg.epoch_length, s.beta).values;
    } else if (s.variant == Variant::kSaga) {
      ly.kind = LyapunovKind::kTheta;
      ly.schedule = saga_alpha_schedule(L, cs.phi_min_a(), cfg.rho, cfg.batch_size, n, shape.iterations, s.beta).values;
      cfg.store_saga_points = true;
    }
    out.lyapunov = std::move(ly);
  }
  return out;
}

// ---------------------------------------------------------------- running

struct RunOutcome {
  std::size_t solver = 0;
  int rep = 0;
  std::uint64_t seed = 0;
  std::vector<TraceRecord> trace;
  bool diverged = false;
  std::int64_t diverged_at = 0;
  std::string message;
  std::int64_t ifo = 0;
  double wall_time = 0.0;
  bool stopped_by_budget = false;
  std::int64_t output_index = 0;
  std::optional<StationarityReport> output_stationarity;
  double min_theta = std::numeric_limits<double>::quiet_NaN();
  double slope = std::numeric_limits<double>::quiet_NaN();
};

template <class Loss>
RunOutcome execute(const Experiment<Loss>& ex, const ResolvedSolver& rs, const ExperimentSpec& spec, int rep) {
  RunOutcome o;
  o.rep = rep;
  o.seed = spec.seed_base + static_cast<std::uint64_t>(rep);
  SolverConfig cfg = rs.config;
  cfg.seed = o.seed;
  RunOptions opt;
  opt.trace_stride = spec.trace_stride;
  opt.time_budget = spec.time_budget;
  opt.lyapunov = rs.lyapunov;
  opt.on_record = [&](const TraceRecord& r) { o.trace.push_back(r); };
  if (ex.test) opt.test_metrics = [&](const Vector& x) { return evaluate_test(*ex.test, x); };
  try {
    RunResult res = run(ex.problem, cfg, opt);
    o.ifo = res.ifo;
    o.wall_time = res.wall_time;
    o.stopped_by_budget = res.stopped_by_budget;
    o.output_index = res.output_index;
    try {
      o.output_stationarity = stationarity(ex.problem, res.output_x, res.output_y, res.output_lambda);
    } catch (const CapabilityError&) {
      // nuclear blocks need the iterate before the output one, which is not kept
    }
    const RateSummary rate = rate_summary(res.step_sq);
    if (!rate.min_theta_by_T.empty()) o.min_theta = rate.min_theta_by_T.back();
    if (!rate.tail.flat) o.slope = rate.tail.slope;
  } catch (const DivergenceError& e) {
    o.diverged = true;
    o.diverged_at = e.iteration();
    o.message = e.what();
    if (!o.trace.empty()) {
      o.ifo = o.trace.back().ifo;
      o.wall_time = o.trace.back().wall_time;
    }
  }
  return o;
}

int default_workers() {
  if (const char* env = std::getenv("NC_ADMM_WORKERS")) {
    const int w = std::atoi(env);
    if (w > 0) return w;
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

/// Runs every job on a pool of `workers` threads; results come back in job order.
template <class Job>
std::vector<RunOutcome> run_pool(const std::vector<Job>& jobs, int workers) {
  std::vector<RunOutcome> results(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t k = next++; k < jobs.size(); k = next++) {
      try {
        results[k] = jobs[k]();
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  const int w = std::max(1, std::min<int>(workers, static_cast<int>(jobs.size())));
  if (w == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < w; ++i) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

// ---------------------------------------------------------------- output

std::string fmt(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double plotted_objective(const TraceRecord& r) {
  return std::isnan(r.objective_composite) ? r.objective : r.objective_composite;
}

void write_atomic(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write '" + tmp.string() + "'");
    out << content;
    if (!out.flush()) throw InputError("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

std::string trace_csv(const std::vector<TraceRecord>& trace) {
  std::ostringstream s;
  s << kCsvHeader << '\n';
  for (const TraceRecord& r : trace) {
    s << r.t << ',' << fmt(r.wall_time) << ',' << r.ifo << ',' << fmt(plotted_objective(r)) << ','
      << fmt(r.test_error) << ',' << fmt(r.test_loss) << ',' << fmt(r.feasibility) << ',' << fmt(r.dual_residual)
      << ',' << fmt(r.subgrad_dist_sq) << ',' << fmt(r.lyapunov) << '\n';
  }
  return s.str();
}

/// Row-wise means over the non-diverged runs of each solver; `runs` counts the rows averaged.
std::string aggregate_csv(const std::vector<ResolvedSolver>& solvers, const std::vector<RunOutcome>& runs) {
  std::ostringstream s;
  s << "solver," << kCsvHeader << ",runs\n";
  for (std::size_t k = 0; k < solvers.size(); ++k) {
    std::vector<const RunOutcome*> ok;
    std::size_t rows = 0;
    for (const RunOutcome& o : runs) {
      if (o.solver == k && !o.diverged) {
        ok.push_back(&o);
        rows = std::max(rows, o.trace.size());
      }
    }
    for (std::size_t i = 0; i < rows; ++i) {
      double col[9] = {};
      int count = 0;
      std::int64_t t = 0;
      for (const RunOutcome* o : ok) {
        if (i >= o->trace.size()) continue;
        const TraceRecord& r = o->trace[i];
        t = r.t;
        const double v[9] = {r.wall_time,   static_cast<double>(r.ifo), plotted_objective(r),
                             r.test_error,  r.test_loss,                r.feasibility,
                             r.dual_residual, r.subgrad_dist_sq,        r.lyapunov};
        for (int c = 0; c < 9; ++c) col[c] += v[c];
        ++count;
      }
      s << solvers[k].spec.name << ',' << t;
      for (double c : col) s << ',' << fmt(c / count);
      s << ',' << count << '\n';
    }
  }
  return s.str();
}

json stationarity_json(const std::optional<StationarityReport>& r) {
  if (!r) return nullptr;
  return *r;
}

json solver_json(const ResolvedSolver& rs) {
  json j{{"name", rs.spec.name},
         {"config", rs.config},
         {"suggested", rs.suggested},
         {"certified", rs.used.accepted},
         {"certificate", rs.own}};
  if (rs.spec.certify_as) {
    j["certify_as"] = *rs.spec.certify_as;
    j["certificate_used"] = rs.used;
  }
  return j;
}

json run_json(const RunOutcome& o) {
  json j{{"rep", o.rep},
         {"seed", o.seed},
         {"status", o.diverged ? "diverged" : "ok"},
         {"ifo", o.ifo},
         {"wall_time_s", detail::num(o.wall_time)},
         {"stopped_by_budget", o.stopped_by_budget}};
  if (o.diverged) {
    j["diverged_at"] = o.diverged_at;
    j["message"] = o.message;
  }
  if (!o.trace.empty()) {
    const TraceRecord& r = o.trace.back();
    j["final"] = json{{"t", r.t},
                      {"objective", detail::num(plotted_objective(r))},
                      {"test_error", detail::num(r.test_error)},
                      {"test_loss", detail::num(r.test_loss)},
                      {"feasibility_sq", detail::num(r.feasibility)},
                      {"dual_sq", detail::num(r.dual_residual)},
                      {"subgrad_dist_sq", detail::num(r.subgrad_dist_sq)}};
  }
  if (!o.diverged) {
    j["output_index"] = o.output_index;
    j["output_stationarity"] = stationarity_json(o.output_stationarity);
    j["min_theta"] = detail::num(o.min_theta);
    j["min_theta_slope"] = detail::num(o.slope);
  }
  return j;
}

struct ProblemInfo {
  DatasetMeta meta;
  Index n_train = 0;
  Index dim = 0;
  double L = 0.0;
  double phi_min_a = 0.0;
  double norm_ata = 0.0;
  double rho_star = 0.0;
};

template <class Loss>
ProblemInfo problem_info(const Experiment<Loss>& ex) {
  const ConstraintSystem& cs = ex.problem.constraints;
  ProblemInfo pi{ex.meta, ex.problem.n(), ex.problem.d(), estimate_lipschitz(ex.problem), cs.phi_min_a(),
                 cs.norm_ata(), 0.0};
  pi.rho_star = pi.phi_min_a > 0.0 ? rho_star(pi.L, pi.phi_min_a) : std::numeric_limits<double>::infinity();
  return pi;
}

json problem_json(const ProblemInfo& pi) {
  return json{{"meta", pi.meta},          {"n_train", pi.n_train},
              {"dim", pi.dim},            {"L", detail::num(pi.L)},
              {"phi_min_A", detail::num(pi.phi_min_a)}, {"norm_AtA", detail::num(pi.norm_ata)},
              {"rho_star", detail::num(pi.rho_star)}};
}

/// Writes runs/, aggregate.csv and summary.json under `dir`; returns true when some
/// solver diverged in every repetition.
bool write_outputs(const fs::path& dir, const ProblemInfo& pi, const std::vector<ResolvedSolver>& solvers,
                   const std::vector<RunOutcome>& runs) {
  for (const RunOutcome& o : runs)
    write_atomic(dir / "runs" / (solvers[o.solver].spec.name + "_rep" + std::to_string(o.rep) + ".csv"),
                 trace_csv(o.trace));
  write_atomic(dir / "aggregate.csv", aggregate_csv(solvers, runs));

  bool all_diverged_somewhere = false;
  json js = json::array();
  for (std::size_t k = 0; k < solvers.size(); ++k) {
    json sj = solver_json(solvers[k]);
    sj["runs"] = json::array();
    int diverged = 0, total = 0;
    for (const RunOutcome& o : runs) {
      if (o.solver != k) continue;
      sj["runs"].push_back(run_json(o));
      ++total;
      diverged += o.diverged ? 1 : 0;
    }
    sj["diverged_runs"] = diverged;
    if (total > 0 && diverged == total) all_diverged_somewhere = true;
    js.push_back(std::move(sj));
  }
  json summary{{"schema", "ncadmm.summary/v1"}, {"problem", problem_json(pi)}, {"solvers", std::move(js)}};
  write_atomic(dir / "summary.json", summary.dump(2) + "\n");
  return all_diverged_somewhere;
}

void report_rejection(const ResolvedSolver& rs) {
  std::cerr << "solver '" << rs.spec.name << "' is not certified (" << rs.used.reason
            << "); pass --allow-uncertified to run it anyway\n"
            << json(rs.used).dump(2) << '\n';
}

/// Resolves every solver, runs all repetitions and writes the outputs; returns the exit code.
template <class Loss>
int run_experiment(const Experiment<Loss>& ex, const ExperimentSpec& spec, std::vector<ResolvedSolver> solvers,
                   const fs::path& dir, int workers, bool allow_uncertified, std::vector<RunOutcome>* keep = nullptr) {
  if (!allow_uncertified) {
    for (const ResolvedSolver& rs : solvers) {
      if (!rs.used.accepted) {
        report_rejection(rs);
        return kExitConfig;
      }
    }
  }
  std::vector<std::function<RunOutcome()>> jobs;
  for (std::size_t k = 0; k < solvers.size(); ++k) {
    for (int rep = 0; rep < spec.repetitions; ++rep) {
      jobs.push_back([&, k, rep] {
        RunOutcome o = execute(ex, solvers[k], spec, rep);
        o.solver = k;
        return o;
      });
    }
  }
  std::vector<RunOutcome> runs = run_pool(jobs, workers);
  const bool diverged = write_outputs(dir, problem_info(ex), solvers, runs);
  for (const RunOutcome& o : runs) {
    if (o.diverged)
      std::cerr << "warning: " << solvers[o.solver].spec.name << " rep " << o.rep << " " << o.message << '\n';
  }
  if (keep) *keep = std::move(runs);
  return diverged ? kExitDiverged : kExitOk;
}

// ---------------------------------------------------------------- commands

struct CommonOptions {
  std::string spec;
  std::string out;
  std::optional<std::uint64_t> seed;
  int workers = default_workers();
  bool allow_uncertified = false;
};

ExperimentSpec load_spec(const CommonOptions& c) {
  ExperimentSpec spec = parse_spec(read_json_file(c.spec));
  if (!c.out.empty()) spec.output_dir = c.out;
  if (c.seed) spec.seed_base = *c.seed;
  return spec;
}

int cmd_run(const CommonOptions& c) {
  const ExperimentSpec spec = load_spec(c);
  const AnyExperiment ex = build_experiment(spec.problem);
  return std::visit(
      [&](const auto& e) {
        std::vector<ResolvedSolver> solvers;
        for (const SolverSpec& s : spec.solvers) solvers.push_back(resolve_solver(e, s, spec.lyapunov));
        return run_experiment(e, spec, std::move(solvers), spec.output_dir, c.workers, c.allow_uncertified);
      },
      ex);
}

struct SweepOptions {
  std::vector<double> rhos;
  std::vector<double> multiples;
  std::optional<double> eta;
};

int cmd_rho_sweep(const CommonOptions& c, const SweepOptions& so) {
  const ExperimentSpec spec = load_spec(c);
  if (so.rhos.empty() == so.multiples.empty()) throw ConfigError("give exactly one of --rhos or --rho-star-multiples");
  for (double v : so.rhos.empty() ? so.multiples : so.rhos) {
    if (!(v > 0.0)) throw ConfigError("rho values must be positive");
  }
  const AnyExperiment ex = build_experiment(spec.problem);
  return std::visit(
      [&](const auto& e) {
        const ProblemInfo pi = problem_info(e);
        std::vector<double> rhos = so.rhos;
        for (double k : so.multiples) rhos.push_back(k * pi.rho_star);
        const fs::path root = spec.output_dir;
        std::ostringstream table;
        table << "solver,rho,certified,final_objective,final_test_error,final_test_loss,min_theta,diverged_runs\n";
        json points = json::array();
        bool every_point_diverged = true;
        for (std::size_t i = 0; i < rhos.size(); ++i) {
          std::vector<ResolvedSolver> solvers;
          for (SolverSpec s : spec.solvers) {
            if (so.eta) s.eta = so.eta;
            if (!s.eta) throw ConfigError("rho sweep needs --eta or an eta on solver '" + s.name + "'");
            s.rho = rhos[i];
            solvers.push_back(resolve_solver(e, s, spec.lyapunov));
          }
          const std::string label = "rho_" + std::to_string(i);
          std::vector<RunOutcome> runs;
          const int code = run_experiment(e, spec, solvers, root / label, c.workers, true, &runs);
          if (code != kExitDiverged) every_point_diverged = false;
          for (std::size_t k = 0; k < solvers.size(); ++k) {
            double obj = 0.0, err = 0.0, loss = 0.0, theta = 0.0;
            int ok = 0, diverged = 0;
            for (const RunOutcome& o : runs) {
              if (o.solver != k) continue;
              if (o.diverged) {
                ++diverged;
                continue;
              }
              const TraceRecord& r = o.trace.back();
              obj += plotted_objective(r);
              err += r.test_error;
              loss += r.test_loss;
              theta += o.min_theta;
              ++ok;
            }
            const double nan = std::numeric_limits<double>::quiet_NaN();
            const auto mean = [&](double s) { return ok > 0 ? s / ok : nan; };
            table << solvers[k].spec.name << ',' << fmt(rhos[i]) << ',' << (solvers[k].used.accepted ? 1 : 0) << ','
                  << fmt(mean(obj)) << ',' << fmt(mean(err)) << ',' << fmt(mean(loss)) << ',' << fmt(mean(theta))
                  << ',' << diverged << '\n';
          }
          json pj{{"dir", label}, {"rho", rhos[i]}, {"certified", json::object()}};
          for (const ResolvedSolver& rs : solvers) pj["certified"][rs.spec.name] = rs.used.accepted;
          points.push_back(std::move(pj));
          std::cout << label << " rho=" << fmt(rhos[i]);
          for (const ResolvedSolver& rs : solvers)
            std::cout << ' ' << rs.spec.name << '=' << (rs.used.accepted ? "certified" : "uncertified");
          std::cout << '\n';
        }
        write_atomic(root / "rho_table.csv", table.str());
        write_atomic(root / "sweep.json",
                     json{{"schema", "ncadmm.sweep/v1"}, {"problem", problem_json(pi)}, {"points", points}}.dump(2) +
                         "\n");
        return every_point_diverged ? kExitDiverged : kExitOk;
      },
      ex);
}

struct CheckOptions {
  std::string variant = "STOC";
  std::optional<double> eta;
  std::optional<double> rho;
  double r = 0.0;
  std::optional<Index> batch_size;
  std::optional<Index> epoch_length;
  std::int64_t iterations = 1000;
  double beta = 1.0;
  bool suggest = false;
  std::string out;
};

int cmd_check_params(const CommonOptions& c, const CheckOptions& co) {
  const json j = read_json_file(c.spec);
  const json pj = j.contains("problem") ? j.at("problem") : j;
  const AnyExperiment ex = build_experiment(parse_problem(pj));
  SolverSpec s;
  s.name = "check";
  s.variant = parse_variant(co.variant);
  s.r = co.r;
  s.batch_size = co.batch_size;
  s.epoch_length = co.epoch_length;
  s.iterations = co.iterations;
  s.beta = co.beta;
  if (!co.suggest) {
    if (!co.eta || !co.rho) throw ConfigError("check-params needs --eta and --rho, or --suggest");
    s.eta = co.eta;
    s.rho = co.rho;
  } else {
    s.eta = co.eta;
  }
  const ResolvedSolver rs = std::visit([&](const auto& e) { return resolve_solver(e, s, false); }, ex);
  const std::string text = json(rs.used).dump(2) + "\n";
  std::cout << text;
  if (!co.out.empty()) write_atomic(co.out, text);
  std::cerr << (rs.used.accepted ? "accepted" : "rejected: " + rs.used.reason) << '\n';
  return rs.used.accepted ? kExitOk : kExitConfig;
}

struct GenOptions {
  std::string problem = "graph_guided";
  Index n = 2000;
  Index d = 50;
  Index classes = 5;
  Index grid = 20;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_gen_data(const GenOptions& g) {
  if (g.out.empty()) throw ConfigError("gen-data needs --out");
  std::ostringstream data;
  json side;
  if (g.problem == "graph_guided") {
    const GraphGuidedData gg = gen_graph_guided(g.n, g.d, g.seed);
    write_libsvm(data, gg.data);
    side = json{{"meta", gg.data.meta},
                {"x_star", std::vector<double>(gg.x_star.begin(), gg.x_star.end())},
                {"precision_shift", gg.precision.shift}};
  } else if (g.problem == "overlap") {
    const OverlapData o = gen_overlap(g.n, g.seed, g.grid);
    write_libsvm(data, o.data);
    side = json{{"meta", o.data.meta}, {"x_star", std::vector<double>(o.x_star.begin(), o.x_star.end())}};
  } else if (g.problem == "multitask") {
    const MulticlassData mc = gen_multiclass(g.n, g.d, g.classes, g.seed);
    write_libsvm(data, mc.data);
    const Vector w = Eigen::Map<const Vector>(mc.w_star.data(), mc.w_star.size());
    side = json{{"meta", mc.data.meta}, {"w_star", std::vector<double>(w.begin(), w.end())}};
  } else {
    throw ConfigError("unknown problem '" + g.problem + "'");
  }
  write_atomic(g.out, data.str());
  write_atomic(g.out + ".json", side.dump(2) + "\n");
  return kExitOk;
}

int cmd_parse(const std::string& file, const std::string& labels, Index dim) {
  std::ifstream in(file);
  if (!in) throw InputError("cannot open '" + file + "'");
  try {
    const SparseDataset ds = parse_libsvm(in, LibsvmOptions{parse_label_mode(labels), dim});
    std::cout << json{{"n", ds.n()}, {"d", ds.d()}, {"classes", ds.meta.classes}, {"nnz", ds.features.nonZeros()}}
                     .dump()
              << '\n';
  } catch (const ParseError& e) {
    std::cerr << file << ":" << e.line() << ": " << e.what() << '\n';
    return kExitConfig;
  }
  return kExitOk;
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("bad number '" + item + "' in list");
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Nonconvex mini-batch stochastic ADMM benchmark harness"};
  app.require_subcommand(1);

  CommonOptions common;
  auto add_common = [&](CLI::App* sub, bool with_run_flags) {
    sub->add_option("--spec", common.spec, "Experiment spec (JSON, version v1)")->required();
    if (!with_run_flags) return;
    sub->add_option("--out", common.out, "Output directory (overrides output_dir)");
    sub->add_option("--seed", common.seed, "Base seed (overrides seed_base)");
    sub->add_option("--workers", common.workers, "Worker threads (default: NC_ADMM_WORKERS or core count)")
        ->check(CLI::PositiveNumber);
    sub->add_flag("--allow-uncertified", common.allow_uncertified, "Run solvers whose certificate rejects them");
  };

  CLI::App* run_cmd = app.add_subcommand("run", "Run every solver of a spec and write traces");
  add_common(run_cmd, true);

  SweepOptions sweep;
  std::string rhos, multiples;
  CLI::App* sweep_cmd = app.add_subcommand("rho-sweep", "Run the spec's solvers across a grid of rho values");
  add_common(sweep_cmd, true);
  sweep_cmd->add_option("--rhos", rhos, "Comma-separated rho values");
  sweep_cmd->add_option("--rho-star-multiples", multiples, "Comma-separated multiples of rho*");
  sweep_cmd->add_option("--eta", sweep.eta, "Fixed step size for every solver");

  CheckOptions check;
  CLI::App* check_cmd = app.add_subcommand("check-params", "Print the step-size certificate for one configuration");
  add_common(check_cmd, false);
  check_cmd->add_option("--variant", check.variant, "DETE, STOC, SVRG or SAGA");
  check_cmd->add_option("--eta", check.eta);
  check_cmd->add_option("--rho", check.rho);
  check_cmd->add_option("--r", check.r, "Uzawa scalar (0: minimal admissible)");
  check_cmd->add_option("--M", check.batch_size, "Mini-batch size");
  check_cmd->add_option("--m", check.epoch_length, "SVRG epoch length");
  check_cmd->add_option("--T", check.iterations, "Iterations (SAGA schedule length)");
  check_cmd->add_option("--beta", check.beta);
  check_cmd->add_flag("--suggest", check.suggest, "Certify the suggested parameters instead");
  check_cmd->add_option("--out", check.out, "Also write the certificate JSON here");

  GenOptions gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic dataset as LIBSVM plus a JSON sidecar");
  gen_cmd->add_option("--problem", gen.problem, "graph_guided, overlap or multitask");
  gen_cmd->add_option("--n", gen.n);
  gen_cmd->add_option("--d", gen.d);
  gen_cmd->add_option("--classes", gen.classes);
  gen_cmd->add_option("--grid", gen.grid);
  gen_cmd->add_option("--seed", gen.seed);
  gen_cmd->add_option("--out", gen.out)->required();

  std::string parse_file, parse_labels = "auto";
  Index parse_dim = 0;
  CLI::App* parse_cmd = app.add_subcommand("parse", "Validate a LIBSVM file and print its shape");
  parse_cmd->add_option("file", parse_file)->required();
  parse_cmd->add_option("--labels", parse_labels, "auto, binary or multiclass");
  parse_cmd->add_option("--dim", parse_dim, "Declared feature count (0: infer)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run_cmd) return cmd_run(common);
    if (*sweep_cmd) {
      sweep.rhos = parse_list(rhos);
      sweep.multiples = parse_list(multiples);
      return cmd_rho_sweep(common, sweep);
    }
    if (*check_cmd) return cmd_check_params(common, check);
    if (*gen_cmd) return cmd_gen_data(gen);
    if (*parse_cmd) return cmd_parse(parse_file, parse_labels, parse_dim);
  } catch (const ncadmm::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const json::exception& e) {
    std::cerr << "error: bad spec: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kExitOk;
}
