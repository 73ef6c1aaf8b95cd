#include "cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <json.hpp>

#include "vcomp/errors.hpp"
#include "vcomp/matrix_io.hpp"
#include "vcomp/spectral.hpp"

namespace vcomp::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

[[noreturn]] void bad(const std::string& where, const std::string& what) {
  raise(ErrorKind::InvalidArgument, "config " + where + ": " + what);
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) bad(where, "expected an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items())
    if (!ok.count(k)) bad(where, "unknown key \"" + k + "\"");
}

double get_number(const json& j, const std::string& where) {
  if (!j.is_number()) bad(where, "expected a number");
  return j.get<double>();
}

bool get_bool(const json& j, const std::string& where) {
  if (!j.is_boolean()) bad(where, "expected true or false");
  return j.get<bool>();
}

std::int64_t get_int(const json& j, const std::string& where) {
  if (!j.is_number_integer()) bad(where, "expected an integer");
  return j.get<std::int64_t>();
}

std::uint64_t get_u64(const json& j, const std::string& where) {
  if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<std::int64_t>() >= 0))
    bad(where, "expected a non-negative integer");
  return j.get<std::uint64_t>();
}

std::string get_string(const json& j, const std::string& where) {
  if (!j.is_string()) bad(where, "expected a string");
  return j.get<std::string>();
}

std::vector<double> get_numbers(const json& j, const std::string& where) {
  if (!j.is_array()) bad(where, "expected an array of numbers");
  std::vector<double> out;
  for (const auto& x : j) out.push_back(get_number(x, where));
  return out;
}

ModelParams parse_params(const json& j) {
  check_keys(j, {"sigma0_sq", "eta0_sq"}, "params");
  ModelParams p;
  if (j.contains("sigma0_sq")) p.sigma0_sq = get_number(j["sigma0_sq"], "params.sigma0_sq");
  if (j.contains("eta0_sq")) p.eta0_sq = get_number(j["eta0_sq"], "params.eta0_sq");
  p.validate();
  return p;
}

EffectLaws parse_laws(const json& j) {
  EffectLaws l;
  if (j.is_string()) {
    l.beta = l.eps = SubGaussianLaw::from_name(j.get<std::string>());
    return l;
  }
  check_keys(j, {"beta", "eps"}, "laws");
  if (j.contains("beta")) l.beta = SubGaussianLaw::from_name(get_string(j["beta"], "laws.beta"));
  if (j.contains("eps")) l.eps = SubGaussianLaw::from_name(get_string(j["eps"], "laws.eps"));
  return l;
}

DesignSpec parse_design(const json& j) {
  std::string type;
  if (j.is_string()) {
    type = j.get<std::string>();
  } else {
    check_keys(j, {"type", "lambdas"}, "design");
    if (!j.contains("type")) bad("design", "missing \"type\"");
    type = get_string(j["type"], "design.type");
  }
  if (type == "gaussian_iid") return GaussianIIDDesign{};
  if (type == "identity") return IdentityDesign{};
  if (type == "fixed_spectrum") {
    if (!j.is_object() || !j.contains("lambdas")) bad("design", "fixed_spectrum needs \"lambdas\"");
    const auto v = get_numbers(j["lambdas"], "design.lambdas");
    return FixedSpectrumDesign{Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()))};
  }
  bad("design.type", "unknown design \"" + type + "\"");
}

CouplingScheme parse_scheme(const json& j) {
  check_keys(j, {"type", "delta", "fraction"}, "coupling");
  const std::string type = j.contains("type") ? get_string(j["type"], "coupling.type") : "none";
  if (type == "none") return NoCoupling{};
  if (type == "additive") {
    if (!j.contains("delta")) bad("coupling", "additive coupling needs \"delta\"");
    return AdditivePerturb{get_number(j["delta"], "coupling.delta")};
  }
  if (type == "sparse") {
    if (!j.contains("fraction")) bad("coupling", "sparse coupling needs \"fraction\"");
    return SparseZero{get_number(j["fraction"], "coupling.fraction")};
  }
  bad("coupling.type", "unknown coupling \"" + type + "\"");
}

SmoothTestFn parse_test_fn(const json& j) {
  check_keys(j, {"type", "scale", "shift", "value"}, "test_functions[]");
  const std::string type = j.contains("type") ? get_string(j["type"], "test_functions[].type")
                                              : "tanh_product";
  if (type == "constant") {
    if (!j.contains("value")) bad("test_functions[]", "constant needs \"value\"");
    return SmoothTestFn::constant(get_number(j["value"], "test_functions[].value"));
  }
  if (type == "tanh_product") {
    if (!j.contains("scale")) bad("test_functions[]", "tanh_product needs \"scale\"");
    std::vector<double> shift;
    if (j.contains("shift")) shift = get_numbers(j["shift"], "test_functions[].shift");
    return SmoothTestFn::tanh_product(get_numbers(j["scale"], "test_functions[].scale"), shift);
  }
  bad("test_functions[].type", "unknown test function \"" + type + "\"");
}

std::optional<fs::path> parse_out(const RunConfig& cfg, const json& j) {
  if (!j.contains("out")) return std::nullopt;
  return cfg.resolve(get_string(j["out"], "out"));
}

json parse_json_text(const RunConfig& cfg) {
  try {
    return json::parse(cfg.text);
  } catch (const json::parse_error& e) {
    raise(ErrorKind::InvalidArgument, cfg.path.string() + ": malformed JSON: " + e.what());
  }
}

fs::path out_dir(const Overrides& ov, const std::optional<fs::path>& cfg_out) {
  if (ov.out) return *ov.out;
  if (cfg_out) return *cfg_out;
  return fs::path("out");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorKind::Io, "cannot write " + path.string());
  out << text;
  if (!out) raise(ErrorKind::Io, "write failed: " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) raise(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
}

void write_manifest(const fs::path& dir, const std::string& command, const RunConfig& cfg,
                    std::optional<std::uint64_t> seed, std::optional<std::uint64_t> plan_hash,
                    const std::vector<std::string>& outputs) {
  ojson m;
  m["command"] = command;
  m["config_hash"] = hex(cfg.hash);
  if (seed) m["seed"] = *seed;
  if (plan_hash) m["plan_hash"] = hex(*plan_hash);
  m["versions"] = {
      {"vcomp", VCOMP_VERSION},
      {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                    "." + std::to_string(EIGEN_MINOR_VERSION)},
      {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                            std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                            std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
      {"cli11", CLI11_VERSION}};
  m["outputs"] = outputs;
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

}  // namespace

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::Io, "cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  RunConfig cfg;
  cfg.path = path;
  cfg.base_dir = fs::absolute(path).parent_path();
  cfg.text = ss.str();
  cfg.hash = fnv1a(cfg.text);
  return cfg;
}

fs::path RunConfig::resolve(const std::string& p) const {
  const fs::path q(p);
  return q.is_absolute() ? q : base_dir / q;
}

GenerateConfig parse_generate(const RunConfig& cfg) {
  const json j = parse_json_text(cfg);
  check_keys(j, {"n", "p", "design", "params", "laws", "coupling", "seed", "out"}, "(generate)");
  GenerateConfig g;
  if (!j.contains("n") || !j.contains("p")) bad("(generate)", "\"n\" and \"p\" are required");
  g.n = get_int(j["n"], "n");
  g.p = get_int(j["p"], "p");
  if (g.n < 1 || g.p < 1) bad("(generate)", "n and p must be >= 1");
  if (j.contains("design")) g.design = parse_design(j["design"]);
  if (j.contains("params")) g.params = parse_params(j["params"]);
  if (j.contains("laws")) g.laws = parse_laws(j["laws"]);
  if (j.contains("coupling")) g.coupling = parse_scheme(j["coupling"]);
  if (j.contains("seed")) g.seed = get_u64(j["seed"], "seed");
  g.out = parse_out(cfg, j);
  return g;
}

FitConfig parse_fit(const RunConfig& cfg) {
  const json j = parse_json_text(cfg);
  check_keys(j, {"x", "y", "trace", "options", "out"}, "(fit)");
  if (!j.contains("x") || !j.contains("y")) bad("(fit)", "\"x\" and \"y\" are required");
  FitConfig f;
  f.x_path = cfg.resolve(get_string(j["x"], "x"));
  f.y_path = cfg.resolve(get_string(j["y"], "y"));
  if (j.contains("trace")) f.trace = get_bool(j["trace"], "trace");
  if (j.contains("options")) {
    const json& o = j["options"];
    check_keys(o, {"grid", "golden_width", "newton_max_iter", "t_cap"}, "options");
    if (o.contains("grid")) f.options.grid = static_cast<int>(get_int(o["grid"], "options.grid"));
    if (o.contains("golden_width")) f.options.golden_width = get_number(o["golden_width"], "options.golden_width");
    if (o.contains("newton_max_iter"))
      f.options.newton_max_iter = static_cast<int>(get_int(o["newton_max_iter"], "options.newton_max_iter"));
    if (o.contains("t_cap")) f.options.t_cap = get_number(o["t_cap"], "options.t_cap");
  }
  f.options.keep_trace = f.trace;
  f.out = parse_out(cfg, j);
  return f;
}

ExperimentConfig parse_experiment(const RunConfig& cfg) {
  const json j = parse_json_text(cfg);
  check_keys(j, {"kind", "n_grid", "replicates", "laws", "params", "design", "p_ratio",
                 "test_functions", "seed", "workers", "tail", "coupling", "stein", "out"},
             "(experiment)");
  ExperimentConfig e;
  ExperimentPlan& p = e.plan;
  if (!j.contains("kind")) bad("(experiment)", "\"kind\" is required");
  p.kind = experiment_kind_from_name(get_string(j["kind"], "kind"));
  if (!j.contains("n_grid")) bad("(experiment)", "\"n_grid\" is required");
  for (double v : get_numbers(j["n_grid"], "n_grid")) {
    if (v != std::floor(v)) bad("n_grid", "entries must be integers");
    p.n_grid.push_back(static_cast<Eigen::Index>(v));
  }
  if (j.contains("replicates")) p.replicates = static_cast<int>(get_int(j["replicates"], "replicates"));
  if (j.contains("laws")) p.laws = parse_laws(j["laws"]);
  if (j.contains("params")) p.params = parse_params(j["params"]);
  if (j.contains("design")) p.design = parse_design(j["design"]);
  if (j.contains("p_ratio")) p.p_ratio = get_number(j["p_ratio"], "p_ratio");
  if (j.contains("test_functions")) {
    if (!j["test_functions"].is_array()) bad("test_functions", "expected an array");
    for (const auto& f : j["test_functions"]) p.test_functions.push_back(parse_test_fn(f));
  }
  if (j.contains("seed")) {
    p.master_seed = get_u64(j["seed"], "seed");
    e.seed_given = true;
  }
  if (j.contains("workers")) p.workers = static_cast<int>(get_int(j["workers"], "workers"));
  if (j.contains("tail")) {
    const json& t = j["tail"];
    check_keys(t, {"r_grid", "primary_r", "radius", "grid"}, "tail");
    if (t.contains("r_grid")) p.tail.r_grid = get_numbers(t["r_grid"], "tail.r_grid");
    p.tail.primary_r = t.contains("primary_r") ? get_number(t["primary_r"], "tail.primary_r")
                                               : p.tail.r_grid.front();
    if (t.contains("radius")) p.tail.radius = get_number(t["radius"], "tail.radius");
    if (t.contains("grid")) p.tail.grid = static_cast<int>(get_int(t["grid"], "tail.grid"));
  }
  if (j.contains("coupling")) {
    const json& c = j["coupling"];
    check_keys(c, {"delta_grid", "scale_inverse_n", "sparse_fraction"}, "coupling");
    if (c.contains("delta_grid")) p.coupling.delta_grid = get_numbers(c["delta_grid"], "coupling.delta_grid");
    if (c.contains("scale_inverse_n"))
      p.coupling.scale_inverse_n = get_bool(c["scale_inverse_n"], "coupling.scale_inverse_n");
    if (c.contains("sparse_fraction"))
      p.coupling.sparse_fraction = get_number(c["sparse_fraction"], "coupling.sparse_fraction");
  }
  if (j.contains("stein")) {
    const json& s = j["stein"];
    check_keys(s, {"K", "eig_lo", "eig_hi", "matrix"}, "stein");
    if (s.contains("K")) p.stein.K = static_cast<int>(get_int(s["K"], "stein.K"));
    if (s.contains("eig_lo")) p.stein.eig_lo = get_number(s["eig_lo"], "stein.eig_lo");
    if (s.contains("eig_hi")) p.stein.eig_hi = get_number(s["eig_hi"], "stein.eig_hi");
    if (s.contains("matrix")) p.stein.matrix = get_string(s["matrix"], "stein.matrix");
  }
  e.out = parse_out(cfg, j);
  return e;
}

std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::optional<std::uint64_t> config) {
  if (flag) return *flag;
  if (config) return *config;
  if (const char* env = std::getenv("VCOMP_SEED"); env && *env) {
    try {
      std::size_t pos = 0;
      const unsigned long long v = std::stoull(env, &pos, 10);
      if (pos != std::string(env).size()) throw std::invalid_argument("trailing characters");
      return v;
    } catch (const std::exception&) {
      raise(ErrorKind::InvalidArgument, std::string("VCOMP_SEED is not an unsigned integer: ") + env);
    }
  }
  return 0;
}

int cmd_generate(const RunConfig& cfg, const Overrides& ov) {
  const GenerateConfig g = parse_generate(cfg);
  const std::uint64_t seed = resolve_seed(ov.seed, g.seed);
  const SeedSpec s{seed, 0};
  Eigen::MatrixXd X = gen_design(g.n, g.p, g.design, s.child(100));
  const Dataset data = std::holds_alternative<NoCoupling>(g.coupling)
                           ? gen_independent(std::move(X), g.params, g.laws, s)
                           : gen_coupled(std::move(X), g.params, g.laws, g.coupling, s);
  const fs::path dir = out_dir(ov, g.out);
  export_dataset(data, dir);
  write_manifest(dir, "generate", cfg, seed, std::nullopt, {"X.csv", "y.csv", "truth.json"});
  std::cout << "wrote dataset n=" << g.n << " p=" << g.p << " to " << dir.string() << "\n";
  return kOk;
}

int cmd_fit(const RunConfig& cfg, const Overrides& ov) {
  const FitConfig f = parse_fit(cfg);
  const Eigen::MatrixXd X = io::read_matrix(f.x_path);
  const Eigen::VectorXd y = io::read_csv_vector(f.y_path);
  if (y.size() != X.rows())
    raise(ErrorKind::DimensionMismatch, "y has " + std::to_string(y.size()) + " entries but X has " +
                                            std::to_string(X.rows()) + " rows");
  const GramSpectrum spec = decompose_gram(X);
  const FitResult res = fit_mle(ScoreState(spec, y), f.options);
  const fs::path dir = out_dir(ov, f.out);
  ensure_dir(dir);
  write_text(dir / "fit.json", fit_result_json(res, f.trace));
  write_manifest(dir, "fit", cfg, std::nullopt, std::nullopt, {"fit.json"});
  std::cout << "sigma2_hat=" << io::format_double(res.theta_hat.sigma_sq)
            << " eta2_hat=" << io::format_double(res.theta_hat.eta_sq)
            << (res.boundary_flag ? " (boundary)" : "") << "\n";
  if (res.identifiability_flag) {
    std::cerr << "vcomp: eigenvalue variance below the identifiability floor; "
                 "sigma^2 and eta^2 are not separately identified\n";
    return kStatistical;
  }
  return kOk;
}

int cmd_experiment(const RunConfig& cfg, const Overrides& ov) {
  ExperimentConfig e = parse_experiment(cfg);
  e.plan.master_seed =
      resolve_seed(ov.seed, e.seed_given ? std::optional<std::uint64_t>(e.plan.master_seed) : std::nullopt);
  if (ov.workers) e.plan.workers = *ov.workers;
  const ExperimentReport rep = run_experiment(e.plan);
  const fs::path dir = out_dir(ov, e.out);
  rep.write(dir);
  write_manifest(dir, "experiment", cfg, e.plan.master_seed, rep.plan_hash,
                 {"report.json", "cells.csv", "timing.json"});
  for (const auto& g : rep.gates)
    std::cout << (g.pass ? "PASS " : "FAIL ") << g.name << " value=" << io::format_double(g.value)
              << " stderr=" << io::format_double(g.stderr_) << "\n";
  return kOk;
}

int run(int argc, char** argv) {
  CLI::App app{"Variance-components estimation and Monte Carlo verification"};
  app.require_subcommand(1);
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  int workers = 1;
  CLI::App* gen = app.add_subcommand("generate", "Simulate a random-effects dataset");
  CLI::App* fit = app.add_subcommand("fit", "Maximum-likelihood fit of (sigma^2, eta^2)");
  CLI::App* exp = app.add_subcommand("experiment", "Run a Monte Carlo experiment");
  struct Opts {
    CLI::Option* out;
    CLI::Option* seed;
    CLI::Option* workers;
  };
  std::vector<std::pair<CLI::App*, Opts>> subs;
  for (CLI::App* sub : {gen, fit, exp}) {
    sub->add_option("--config", config, "JSON config file")->required();
    Opts o{};
    o.out = sub->add_option("--out", out, "Output directory");
    o.seed = sub->add_option("--seed", seed, "Master seed (falls back to VCOMP_SEED)");
    o.workers = sub->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
    subs.emplace_back(sub, o);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kFailure;
  }

  try {
    for (const auto& [sub, o] : subs) {
      if (!sub->parsed()) continue;
      Overrides ov;
      if (o.out->count()) ov.out = fs::path(out);
      if (o.seed->count()) ov.seed = seed;
      if (o.workers->count()) ov.workers = workers;
      const RunConfig cfg = RunConfig::load(config);
      if (sub == gen) return cmd_generate(cfg, ov);
      if (sub == fit) return cmd_fit(cfg, ov);
      return cmd_experiment(cfg, ov);
    }
  } catch (const Error& e) {
    std::cerr << "vcomp: " << e.what() << "\n";
    return e.is_statistical() ? kStatistical : kFailure;
  } catch (const std::exception& e) {
    std::cerr << "vcomp: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}

}  // namespace vcomp::cli
