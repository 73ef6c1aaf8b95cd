#include "vcomp/mcverify.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include <Eigen/LU>
#include <json.hpp>

#include "vcomp/errors.hpp"
#include "vcomp/matrix_io.hpp"
#include "vcomp/quadrature.hpp"
#include "vcomp/spectral.hpp"
#include "vcomp/vcest.hpp"

namespace vcomp {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using json = nlohmann::ordered_json;

namespace {

constexpr const char* kHeader =
    "Absolute constants in the underlying bounds are unknown; the gates test shapes "
    "(slopes, monotone trends, log-linearity) rather than bound values.";

constexpr double kChi2Df2Q95 = 5.991464547107979;

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Design matrices are keyed by n only, so the experiments of one master seed share X.
SeedSpec design_seed(std::uint64_t master, Index n) {
  return SeedSpec{master, mix64(0x44455349474eULL ^ static_cast<std::uint64_t>(n))};
}

struct Cell {
  Index n = 0, p = 0;
  MatrixXd X;
  GramSpectrum spec;
};

Cell make_cell(const ExperimentPlan& plan, Index n) {
  Cell c;
  c.n = n;
  c.p = std::max<Index>(1, std::llround(plan.p_ratio * static_cast<double>(n)));
  c.X = gen_design(n, c.p, plan.design, design_seed(plan.master_seed, n));
  c.spec = decompose_gram(c.X);
  return c;
}

FitOptions fast_fit() {
  FitOptions o;
  o.keep_trace = false;
  o.compute_psi = false;
  return o;
}

double theta_error(const Theta& t, const ModelParams& p) {
  return std::hypot(t.sigma_sq - p.sigma0_sq, t.eta_sq - p.eta0_sq);
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

MeanSe mean_se(const std::vector<double>& v) {
  MeanSe out;
  const double N = static_cast<double>(v.size());
  double m = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double d = v[i] - m;
    m += d / static_cast<double>(i + 1);
    m2 += d * (v[i] - m);
  }
  out.mean = m;
  out.se = v.size() > 1 ? std::sqrt(m2 / (N - 1.0) / N) : 0.0;
  return out;
}

ReportCell cell(Index n, std::vector<std::pair<std::string, double>> params, std::string quantity,
                double estimate, double se, std::string gate = {}) {
  ReportCell c;
  c.n = n;
  c.params = std::move(params);
  c.quantity = std::move(quantity);
  c.estimate = estimate;
  c.stderr_ = se;
  c.gate = std::move(gate);
  return c;
}

void mark_gate(ExperimentReport& rep, const std::string& gate, bool pass) {
  for (auto& c : rep.cells)
    if (c.gate == gate) c.pass = pass;
}

ExperimentReport start_report(const ExperimentPlan& plan) {
  plan.validate();
  ExperimentReport rep;
  rep.kind = plan.kind;
  rep.header = kHeader;
  rep.master_seed = plan.master_seed;
  rep.plan_hash = plan.hash();
  return rep;
}

std::vector<SmoothTestFn> test_functions_or(const ExperimentPlan& plan, SmoothTestFn fallback) {
  if (!plan.test_functions.empty()) return plan.test_functions;
  return {std::move(fallback)};
}

// Largest |alpha| = k product of sup|tanh^(alpha_j)| / a_j^alpha_j.
double tanh_product_norm(const std::vector<double>& a, int k) {
  static constexpr double sup[4] = {1.0, 1.0, 0.769800358919501, 2.0};  // 4/(3 sqrt 3)
  const std::size_t m = a.size();
  double best = 0.0;
  std::vector<int> alpha(m, 0);
  std::function<void(std::size_t, int)> rec = [&](std::size_t j, int left) {
    if (j + 1 == m) {
      alpha[j] = left;
      double v = 1.0;
      for (std::size_t i = 0; i < m; ++i) v *= sup[alpha[i]] / std::pow(a[i], alpha[i]);
      best = std::max(best, v);
      return;
    }
    for (int t = 0; t <= left; ++t) {
      alpha[j] = t;
      rec(j + 1, left - t);
    }
  };
  rec(0, k);
  return best;
}

std::string fmt(double v) { return io::format_double(v); }

}  // namespace

std::string_view to_string(ExperimentKind kind) noexcept {
  switch (kind) {
    case ExperimentKind::Consistency: return "consistency";
    case ExperimentKind::TailEnvelope: return "tail";
    case ExperimentKind::Normality: return "normality";
    case ExperimentKind::Coupling: return "coupling";
    case ExperimentKind::SteinDiscrepancy: return "stein";
  }
  return "unknown";
}

ExperimentKind experiment_kind_from_name(std::string_view name) {
  const std::string s = lower(name);
  if (s == "consistency") return ExperimentKind::Consistency;
  if (s == "tail" || s == "tailenvelope") return ExperimentKind::TailEnvelope;
  if (s == "normality") return ExperimentKind::Normality;
  if (s == "coupling") return ExperimentKind::Coupling;
  if (s == "stein" || s == "steindiscrepancy") return ExperimentKind::SteinDiscrepancy;
  raise(ErrorKind::InvalidArgument, "unknown experiment kind: " + std::string(name));
}

// ---------------------------------------------------------------- test functions

SmoothTestFn SmoothTestFn::tanh_product(std::vector<double> scale, std::vector<double> shift) {
  require(!scale.empty(), ErrorKind::InvalidArgument, "tanh_product needs at least one scale");
  for (double a : scale)
    require(std::isfinite(a) && a > 0.0, ErrorKind::InvalidArgument, "scales must be > 0");
  if (shift.empty()) shift.assign(scale.size(), 0.0);
  require(shift.size() == scale.size(), ErrorKind::DimensionMismatch,
          "shift and scale must have equal length");
  SmoothTestFn f;
  f.scale_ = std::move(scale);
  f.shift_ = std::move(shift);
  std::ostringstream os;
  os << "tanh_product(a=";
  for (std::size_t j = 0; j < f.scale_.size(); ++j) os << (j ? "," : "") << fmt(f.scale_[j]);
  os << ";b=";
  for (std::size_t j = 0; j < f.shift_.size(); ++j) os << (j ? "," : "") << fmt(f.shift_[j]);
  os << ")";
  f.name_ = os.str();
  f.norms_[0] = 1.0;
  for (int k = 1; k <= 3; ++k) f.norms_[k] = tanh_product_norm(f.scale_, k);
  return f;
}

SmoothTestFn SmoothTestFn::constant(double c) {
  require(std::isfinite(c), ErrorKind::InvalidArgument, "constant must be finite");
  SmoothTestFn f;
  f.constant_ = c;
  f.name_ = "constant(" + fmt(c) + ")";
  f.norms_ = {std::abs(c), 0.0, 0.0, 0.0};
  return f;
}

double SmoothTestFn::operator()(const VectorXd& x) const {
  if (is_constant()) return constant_;
  require(x.size() >= arity(), ErrorKind::DimensionMismatch, "test function argument too short");
  double v = 1.0;
  for (std::size_t j = 0; j < scale_.size(); ++j)
    v *= std::tanh((x[static_cast<Index>(j)] - shift_[j]) / scale_[j]);
  return v;
}

double SmoothTestFn::gaussian_expectation(const MatrixXd& cov) const {
  if (is_constant()) return constant_;
  require(cov.rows() >= arity() && cov.cols() >= arity(), ErrorKind::DimensionMismatch,
          "covariance smaller than the test function arity");
  const MatrixXd block = cov.topLeftCorner(arity(), arity());
  return vcomp::gaussian_expectation([this](const VectorXd& z) { return (*this)(z); }, block).value;
}

// ---------------------------------------------------------------- plan

void ExperimentPlan::validate() const {
  require(!n_grid.empty(), ErrorKind::EmptyInput, "n_grid must not be empty");
  for (std::size_t i = 0; i < n_grid.size(); ++i) {
    require(n_grid[i] >= 2, ErrorKind::InvalidArgument, "n_grid entries must be >= 2");
    if (i > 0)
      require(n_grid[i] > n_grid[i - 1], ErrorKind::InvalidArgument,
              "n_grid must be strictly increasing");
  }
  require(replicates >= 100, ErrorKind::InvalidArgument, "replicates must be >= 100");
  require(workers >= 1, ErrorKind::InvalidArgument, "workers must be >= 1");
  require(std::isfinite(p_ratio) && p_ratio > 0.0, ErrorKind::InvalidArgument,
          "p_ratio must be > 0");
  params.validate();
  switch (kind) {
    case ExperimentKind::TailEnvelope:
      require(!tail.r_grid.empty(), ErrorKind::EmptyInput, "r_grid must not be empty");
      for (double r : tail.r_grid)
        require(std::isfinite(r) && r > 0.0, ErrorKind::InvalidArgument, "r must be > 0");
      require(std::find(tail.r_grid.begin(), tail.r_grid.end(), tail.primary_r) !=
                  tail.r_grid.end(),
              ErrorKind::InvalidArgument, "primary_r must be one of r_grid");
      require(tail.radius > 0.0 && tail.grid >= 2, ErrorKind::InvalidArgument,
              "tail radius must be > 0 and grid >= 2");
      break;
    case ExperimentKind::Coupling:
      require(!coupling.delta_grid.empty(), ErrorKind::EmptyInput, "delta_grid must not be empty");
      for (double d : coupling.delta_grid)
        require(std::isfinite(d) && d >= 0.0, ErrorKind::InvalidArgument, "delta must be >= 0");
      if (coupling.sparse_fraction)
        require(*coupling.sparse_fraction >= 0.0 && *coupling.sparse_fraction <= 1.0,
                ErrorKind::InvalidArgument, "sparse fraction must lie in [0, 1]");
      break;
    case ExperimentKind::Normality:
      for (const auto& f : test_functions)
        require(f.arity() <= 2, ErrorKind::InvalidArgument, "normality test functions take 2 arguments");
      require(params.eta0_sq > 0.0, ErrorKind::InvalidArgument, "normality needs eta0^2 > 0");
      break;
    case ExperimentKind::SteinDiscrepancy:
      require(stein.K == 1 || stein.K == 2, ErrorKind::InvalidArgument, "K must be 1 or 2");
      require(stein.eig_lo > 0.0 && stein.eig_hi >= stein.eig_lo, ErrorKind::InvalidArgument,
              "need 0 < eig_lo <= eig_hi");
      require(stein.matrix == "equispaced" || stein.matrix == "identity",
              ErrorKind::InvalidArgument, "stein matrix must be equispaced or identity");
      for (const auto& f : test_functions)
        require(f.arity() <= 2 * stein.K, ErrorKind::InvalidArgument,
                "test function arity exceeds 2K");
      break;
    case ExperimentKind::Consistency:
      break;
  }
}

std::string ExperimentPlan::canonical_json() const {
  json j;
  j["kind"] = to_string(kind);
  j["n_grid"] = n_grid;
  j["replicates"] = replicates;
  j["laws"] = {{"beta", laws.beta.name()}, {"eps", laws.eps.name()}};
  j["params"] = {{"sigma0_sq", params.sigma0_sq}, {"eta0_sq", params.eta0_sq}};
  std::visit(
      [&](const auto& d) {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, GaussianIIDDesign>) {
          j["design"] = {{"type", "gaussian_iid"}};
        } else if constexpr (std::is_same_v<T, IdentityDesign>) {
          j["design"] = {{"type", "identity"}};
        } else {
          j["design"] = {{"type", "fixed_spectrum"},
                         {"lambdas", std::vector<double>(d.lambdas.data(),
                                                         d.lambdas.data() + d.lambdas.size())}};
        }
      },
      design);
  j["p_ratio"] = p_ratio;
  auto& tf = j["test_functions"] = json::array();
  for (const auto& f : test_functions) tf.push_back(f.name());
  j["master_seed"] = master_seed;
  j["tail"] = {{"r_grid", tail.r_grid},
               {"primary_r", tail.primary_r},
               {"radius", tail.radius},
               {"grid", tail.grid}};
  j["coupling"] = {{"delta_grid", coupling.delta_grid},
                   {"scale_inverse_n", coupling.scale_inverse_n},
                   {"sparse_fraction", coupling.sparse_fraction ? json(*coupling.sparse_fraction)
                                                                : json(nullptr)}};
  j["stein"] = {{"K", stein.K},
                {"eig_lo", stein.eig_lo},
                {"eig_hi", stein.eig_hi},
                {"matrix", stein.matrix}};
  return j.dump();
}

std::uint64_t ExperimentPlan::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical_json()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------- statistics helpers

MedianEstimate median_with_stderr(std::vector<double> v) {
  require(!v.empty(), ErrorKind::EmptyInput, "median of an empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t N = v.size();
  MedianEstimate out;
  out.median = (N % 2 == 1) ? v[N / 2] : 0.5 * (v[N / 2 - 1] + v[N / 2]);
  const double half = static_cast<double>(N) / 2.0;
  const double w = 0.98 * std::sqrt(static_cast<double>(N));
  const auto lo = static_cast<long>(std::floor(half - w));
  const auto hi = static_cast<long>(std::ceil(half + w));
  const auto clamp = [&](long r) {
    return static_cast<std::size_t>(std::clamp<long>(r, 1, static_cast<long>(N)) - 1);
  };
  out.stderr_ = (v[clamp(hi)] - v[clamp(lo)]) / (2.0 * 1.96);
  return out;
}

WilsonInterval wilson_interval(long k, long N, double z) {
  require(N > 0 && k >= 0 && k <= N, ErrorKind::InvalidArgument, "invalid binomial counts");
  const double n = static_cast<double>(N);
  const double ph = static_cast<double>(k) / n;
  const double z2 = z * z;
  const double centre = (ph + z2 / (2.0 * n)) / (1.0 + z2 / n);
  const double half = z * std::sqrt(ph * (1.0 - ph) / n + z2 / (4.0 * n * n)) / (1.0 + z2 / n);
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

LinearFit ols_fit(const std::vector<double>& x, const std::vector<double>& y,
                  const std::vector<double>& y_se) {
  require(x.size() == y.size() && x.size() >= 2, ErrorKind::InvalidArgument,
          "OLS needs two or more matched points");
  require(y_se.empty() || y_se.size() == y.size(), ErrorKind::DimensionMismatch,
          "stderr length mismatch");
  const double m = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i] / m;
    my += y[i] / m;
  }
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  require(sxx > 0.0, ErrorKind::Degenerate, "OLS with constant x");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double rss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - f.intercept - f.slope * x[i];
    rss += r * r;
  }
  f.r_squared = syy > 0.0 ? 1.0 - rss / syy : 1.0;
  if (!y_se.empty()) {
    double var = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double w = (x[i] - mx) / sxx;
      var += w * w * y_se[i] * y_se[i];
    }
    f.slope_stderr = std::sqrt(var);
  } else if (x.size() > 2) {
    f.slope_stderr = std::sqrt(rss / (m - 2.0) / sxx);
  }
  return f;
}

void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& body) {
  if (workers <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  auto work = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lk(err_mu);
        if (!err) err = std::current_exception();
        next = count;
      }
    }
  };
  const auto nthreads = std::min<std::size_t>(static_cast<std::size_t>(workers), count);
  std::vector<std::thread> pool;
  pool.reserve(nthreads);
  for (std::size_t t = 0; t < nthreads; ++t) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

SeedSpec replicate_seed(std::uint64_t master, std::uint64_t cell, std::uint64_t r) {
  return SeedSpec{master, mix64(mix64(cell + 0x9e3779b97f4a7c15ULL) ^ r)};
}

// ---------------------------------------------------------------- report

bool ExperimentReport::pass() const {
  return std::all_of(gates.begin(), gates.end(), [](const Gate& g) { return g.pass; });
}

const Gate* ExperimentReport::gate(std::string_view name) const {
  for (const auto& g : gates)
    if (g.name == name) return &g;
  return nullptr;
}

std::optional<double> ExperimentReport::summary_value(std::string_view key) const {
  for (const auto& [k, v] : summary)
    if (k == key) return v;
  return std::nullopt;
}

std::string ExperimentReport::to_json() const {
  json j;
  j["kind"] = to_string(kind);
  j["header"] = header;
  j["master_seed"] = master_seed;
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(plan_hash));
  j["plan_hash"] = hash;
  j["pass"] = pass();
  auto& s = j["summary"] = json::object();
  for (const auto& [k, v] : summary) s[k] = v;
  auto& g = j["gates"] = json::array();
  for (const auto& x : gates)
    g.push_back({{"name", x.name}, {"rule", x.rule}, {"value", x.value},
                 {"stderr", x.stderr_}, {"pass", x.pass}});
  auto& c = j["cells"] = json::array();
  for (const auto& x : cells) {
    json params = json::object();
    for (const auto& [k, v] : x.params) params[k] = v;
    c.push_back({{"n", x.n}, {"params", params}, {"quantity", x.quantity},
                 {"estimate", x.estimate}, {"stderr", x.stderr_}, {"gate", x.gate},
                 {"pass", x.pass}, {"reliable", x.reliable}});
  }
  j["notes"] = notes;
  return j.dump(2) + "\n";
}

std::string ExperimentReport::cells_csv() const {
  std::ostringstream os;
  os << "n,params,quantity,estimate,stderr,gate,pass,reliable\n";
  for (const auto& c : cells) {
    std::string params;
    for (const auto& [k, v] : c.params) {
      if (!params.empty()) params += ';';
      params += k + "=" + fmt(v);
    }
    os << c.n << ',' << params << ',' << c.quantity << ',' << fmt(c.estimate) << ','
       << fmt(c.stderr_) << ',' << c.gate << ',' << (c.pass ? 1 : 0) << ','
       << (c.reliable ? 1 : 0) << '\n';
  }
  return os.str();
}

void ExperimentReport::write(const std::filesystem::path& dir) const {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) raise(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
  const auto put = [](const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorKind::Io, "cannot write " + path.string());
    out << text;
    if (!out) raise(ErrorKind::Io, "write failed: " + path.string());
  };
  put(dir / "report.json", to_json());
  put(dir / "cells.csv", cells_csv());
  put(dir / "timing.json", "{\n  \"runtime_seconds\": " + fmt(runtime_seconds) + "\n}\n");
}

// ---------------------------------------------------------------- experiments

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct FitSample {
  Theta theta;
  bool flagged = false;
  bool boundary = false;
};

FitSample fit_replicate(const Cell& c, const ExperimentPlan& plan, const Effects& eff,
                        const VectorXd* beta_override = nullptr) {
  const VectorXd y = c.X * (beta_override ? *beta_override : eff.beta) + eff.eps;
  const FitResult fr = fit_mle(ScoreState(c.spec, y), fast_fit());
  (void)plan;
  return {fr.theta_hat, fr.identifiability_flag, fr.boundary_flag};
}

void require_identifiable(const Cell& c) {
  if (!is_identifiable(c.spec.lambdas))
    raise(ErrorKind::NonIdentifiable,
          "design spectrum has (numerically) zero eigenvalue variance at n = " +
              std::to_string(c.n));
}

void check_flag_rate(const std::vector<FitSample>& fits, Index n) {
  const auto flagged = std::count_if(fits.begin(), fits.end(), [](const FitSample& f) { return f.flagged; });
  if (static_cast<double>(flagged) > 0.01 * static_cast<double>(fits.size()))
    raise(ErrorKind::NonIdentifiable,
          "identifiability flagged in more than 1% of fits at n = " + std::to_string(n));
}

}  // namespace

ExperimentReport run_consistency(const ExperimentPlan& plan) {
  const auto t0 = Clock::now();
  ExperimentReport rep = start_report(plan);
  const auto R = static_cast<std::size_t>(plan.replicates);
  std::vector<double> logn, logmed, logse, meds;
  for (Index n : plan.n_grid) {
    const Cell c = make_cell(plan, n);
    require_identifiable(c);
    std::vector<FitSample> fits(R);
    parallel_for(R, plan.workers, [&](std::size_t r) {
      const Effects eff = draw_effects(n, c.p, plan.params, plan.laws,
                                       replicate_seed(plan.master_seed, n, r));
      fits[r] = fit_replicate(c, plan, eff);
    });
    check_flag_rate(fits, n);
    std::vector<double> err(R);
    long boundary = 0;
    for (std::size_t r = 0; r < R; ++r) {
      err[r] = theta_error(fits[r].theta, plan.params);
      boundary += fits[r].boundary ? 1 : 0;
    }
    const MedianEstimate m = median_with_stderr(err);
    rep.cells.push_back(cell(n, {{"p", static_cast<double>(c.p)}}, "median_error", m.median,
                             m.stderr_, "slope_window"));
    const double bf = static_cast<double>(boundary) / static_cast<double>(R);
    rep.cells.push_back(cell(n, {}, "boundary_fraction", bf,
                             std::sqrt(bf * (1.0 - bf) / static_cast<double>(R))));
    logn.push_back(std::log(static_cast<double>(n)));
    logmed.push_back(std::log(m.median));
    logse.push_back(m.stderr_ / m.median);
    meds.push_back(m.median);
  }
  bool decreasing = true;
  for (std::size_t i = 1; i < meds.size(); ++i) decreasing = decreasing && meds[i] < meds[i - 1];
  if (plan.n_grid.size() >= 2) {
    const LinearFit fit = ols_fit(logn, logmed, logse);
    const bool in_window = fit.slope >= -0.7 && fit.slope <= -0.3;
    rep.gates.push_back({"slope_window", "OLS slope of log median error on log n in [-0.7, -0.3]",
                         fit.slope, fit.slope_stderr, in_window});
    rep.summary.emplace_back("slope", fit.slope);
    rep.summary.emplace_back("slope_stderr", fit.slope_stderr);
    rep.summary.emplace_back("slope_ci_lo", fit.slope - 1.96 * fit.slope_stderr);
    rep.summary.emplace_back("slope_ci_hi", fit.slope + 1.96 * fit.slope_stderr);
    rep.summary.emplace_back("r_squared", fit.r_squared);
    mark_gate(rep, "slope_window", in_window);
  }
  rep.gates.push_back({"medians_decreasing", "median error strictly decreasing in n",
                       decreasing ? 1.0 : 0.0, 0.0, decreasing});
  rep.runtime_seconds = seconds_since(t0);
  return rep;
}

ExperimentReport run_tail(const ExperimentPlan& plan) {
  const auto t0 = Clock::now();
  ExperimentReport rep = start_report(plan);
  const auto R = static_cast<std::size_t>(plan.replicates);
  const auto& rs = plan.tail.r_grid;
  std::vector<double> ns, logp, logp_se;
  bool all_positive = true, nested_ok = true, any_exceed = false;
  for (Index n : plan.n_grid) {
    const Cell c = make_cell(plan, n);
    // sigma_*^2(eta^2) = zeta^T V diag(t(eta^2)) V^T zeta with unit-variance zeta.
    MatrixXd V(c.p + n, n);
    V.topRows(c.p) = std::sqrt(plan.params.tau0_sq() / static_cast<double>(c.p)) *
                     (c.X.transpose() * c.spec.U);
    V.bottomRows(n) = std::sqrt(plan.params.sigma0_sq) * c.spec.U;
    V /= std::sqrt(static_cast<double>(n));
    const QFFamily fam = resolvent_family(std::move(V), c.spec.lambdas, plan.tail.radius);
    std::vector<double> sup(R);
    double grid_err = 0.0;
    std::vector<double> grid_errs(R);
    parallel_for(R, plan.workers, [&](std::size_t r) {
      RandomStream rng(replicate_seed(plan.master_seed, n, r));
      VectorXd z(c.p + n);
      rng.fill(plan.laws.beta, z.head(c.p));
      rng.fill(plan.laws.eps, z.tail(n));
      const SupDeviation sd = sup_deviation_detail(fam, z, plan.tail.grid);
      sup[r] = sd.value;
      grid_errs[r] = sd.grid_error_bound;
    });
    for (double g : grid_errs) grid_err += g / static_cast<double>(R);
    rep.cells.push_back(cell(n, {}, "mean_grid_error_bound", grid_err, 0.0));
    long prev = std::numeric_limits<long>::max();
    for (double r : rs) {
      const long k = std::count_if(sup.begin(), sup.end(), [r](double s) { return s > r; });
      const double ph = static_cast<double>(k) / static_cast<double>(R);
      const WilsonInterval wi = wilson_interval(k, static_cast<long>(R));
      const bool primary = r == plan.tail.primary_r;
      ReportCell tc = cell(n, {{"r", r}, {"exceedances", static_cast<double>(k)},
                               {"wilson_lo", wi.lo}, {"wilson_hi", wi.hi}},
                           "tail_prob", ph, std::sqrt(ph * (1.0 - ph) / static_cast<double>(R)),
                           primary ? "log_tail_linear" : "");
      tc.reliable = k >= 5;
      rep.cells.push_back(tc);
      any_exceed = any_exceed || k > 0;
      if (k > prev) nested_ok = false;
      prev = k;
      if (primary) {
        ns.push_back(static_cast<double>(n));
        if (k > 0) {
          logp.push_back(std::log(ph));
          logp_se.push_back(std::sqrt((1.0 - ph) / static_cast<double>(k)));
        } else {
          all_positive = false;
          logp.push_back(-std::numeric_limits<double>::infinity());
          logp_se.push_back(std::numeric_limits<double>::infinity());
        }
      }
    }
  }
  if (!any_exceed)
    raise(ErrorKind::InvalidArgument,
          "no exceedances at any (n, r); lower r_grid or widen the eta^2 grid");
  // Nested events only when r_grid is sorted ascending.
  if (std::is_sorted(rs.begin(), rs.end()))
    rep.gates.push_back({"tail_nonincreasing_in_r", "P(sup > r) nonincreasing in r at each n",
                         nested_ok ? 1.0 : 0.0, 0.0, nested_ok});
  bool decreasing = all_positive;
  for (std::size_t i = 1; decreasing && i < logp.size(); ++i) decreasing = logp[i] < logp[i - 1];
  rep.gates.push_back({"log_tail_decreasing", "log P(sup > r) strictly decreasing in n at the primary r",
                       decreasing ? 1.0 : 0.0, 0.0, decreasing});
  double r2 = 0.0, slope = 0.0, slope_se = 0.0;
  if (all_positive && ns.size() >= 2) {
    const LinearFit fit = ols_fit(ns, logp, logp_se);
    r2 = fit.r_squared;
    slope = fit.slope;
    slope_se = fit.slope_stderr;
  }
  const bool linear = all_positive && r2 > 0.8;
  rep.gates.push_back({"log_tail_linear", "R^2 of linear fit of log P(sup > r) on n exceeds 0.8",
                       r2, 0.0, linear});
  mark_gate(rep, "log_tail_linear", linear && decreasing);
  rep.summary.emplace_back("primary_r", plan.tail.primary_r);
  rep.summary.emplace_back("log_tail_slope", slope);
  rep.summary.emplace_back("log_tail_slope_stderr", slope_se);
  rep.summary.emplace_back("r_squared", r2);
  for (const auto& c : rep.cells)
    if (c.quantity == "tail_prob" && !c.reliable) {
      rep.notes.push_back("cells with fewer than 5 exceedances are marked unreliable");
      break;
    }
  rep.runtime_seconds = seconds_since(t0);
  return rep;
}

ExperimentReport run_normality(const ExperimentPlan& plan) {
  const auto t0 = Clock::now();
  ExperimentReport rep = start_report(plan);
  const auto R = static_cast<std::size_t>(plan.replicates);
  const auto fns = test_functions_or(plan, SmoothTestFn::tanh_product({3.0, 3.0}));
  std::vector<MeanSe> first_disc;
  double last_cov = 0.0, last_cov_se = 0.0;
  for (Index n : plan.n_grid) {
    const Cell c = make_cell(plan, n);
    require_identifiable(c);
    const Eigen::Matrix2d psi = asymptotic_cov(plan.params, c.spec, c.X, plan.laws);
    const Eigen::Matrix2d psi_inv = psi.inverse();
    std::vector<FitSample> fits(R);
    parallel_for(R, plan.workers, [&](std::size_t r) {
      const Effects eff = draw_effects(n, c.p, plan.params, plan.laws,
                                       replicate_seed(plan.master_seed, n, r));
      fits[r] = fit_replicate(c, plan, eff);
    });
    check_flag_rate(fits, n);
    const double rn = std::sqrt(static_cast<double>(n));
    std::vector<VectorXd> u(R, VectorXd(2));
    std::vector<double> inside(R), far(R);
    const double radius = plan.params.sigma0_sq * std::log(static_cast<double>(n)) / (2.0 * rn);
    for (std::size_t r = 0; r < R; ++r) {
      u[r] << rn * (fits[r].theta.sigma_sq - plan.params.sigma0_sq),
          rn * (fits[r].theta.eta_sq - plan.params.eta0_sq);
      inside[r] = u[r].dot(psi_inv * u[r]) <= kChi2Df2Q95 ? 1.0 : 0.0;
      far[r] = theta_error(fits[r].theta, plan.params) > radius ? 1.0 : 0.0;
    }
    for (std::size_t k = 0; k < fns.size(); ++k) {
      std::vector<double> vals(R);
      for (std::size_t r = 0; r < R; ++r) vals[r] = fns[k](u[r]);
      const MeanSe ms = mean_se(vals);
      const double target = fns[k].gaussian_expectation(psi);
      const double disc = std::abs(ms.mean - target);
      rep.cells.push_back(cell(n, {{"function", static_cast<double>(k)}, {"gaussian_value", target}},
                               "discrepancy", disc, ms.se, k == 0 ? "discrepancy_decrease" : ""));
      if (k == 0) first_disc.push_back({disc, ms.se});
    }
    const MeanSe cov = mean_se(inside);
    const MeanSe fr = mean_se(far);
    rep.cells.push_back(cell(n, {{"level", 0.95}}, "wald_coverage", cov.mean, cov.se,
                             n == plan.n_grid.back() ? "wald_coverage" : ""));
    rep.cells.push_back(cell(n, {{"radius", radius}}, "large_deviation_prob", fr.mean, fr.se));
    rep.cells.push_back(cell(n, {}, "psi_11", psi(0, 0), 0.0));
    rep.cells.push_back(cell(n, {}, "psi_12", psi(0, 1), 0.0));
    rep.cells.push_back(cell(n, {}, "psi_22", psi(1, 1), 0.0));
    last_cov = cov.mean;
    last_cov_se = cov.se;
  }
  if (first_disc.size() >= 2) {
    const MeanSe a = first_disc.front(), b = first_disc.back();
    const double diff = a.mean - b.mean;
    const double se = std::hypot(a.se, b.se);
    const bool ok = diff > 2.0 * se;
    rep.gates.push_back({"discrepancy_decrease",
                         "discrepancy at the smallest n exceeds that at the largest n by more than 2 stderr",
                         diff, se, ok});
    mark_gate(rep, "discrepancy_decrease", ok);
  }
  const bool cov_ok = last_cov >= 0.92 && last_cov <= 0.975;
  rep.gates.push_back({"wald_coverage", "95% Wald ellipse coverage at the largest n in [0.92, 0.975]",
                       last_cov, last_cov_se, cov_ok});
  mark_gate(rep, "wald_coverage", cov_ok);
  rep.summary.emplace_back("test_function_0_norm_2", fns[0].norms()[2]);
  rep.notes.push_back("test function 0: " + fns[0].name());
  rep.notes.push_back(
      "large_deviation_prob estimates P(||theta-hat - theta_0|| > sigma0^2 log n / (2 sqrt n)); "
      "no target value is specified");
  rep.runtime_seconds = seconds_since(t0);
  return rep;
}

ExperimentReport run_coupling(const ExperimentPlan& plan) {
  const auto t0 = Clock::now();
  ExperimentReport rep = start_report(plan);
  const auto R = static_cast<std::size_t>(plan.replicates);
  const auto& deltas = plan.coupling.delta_grid;
  const std::size_t D = deltas.size();
  bool bitwise = true, have_zero = false, sparse_finite = true;
  double worst_ratio = 1.0;
  for (Index n : plan.n_grid) {
    const Cell c = make_cell(plan, n);
    require_identifiable(c);
    const std::size_t S = plan.coupling.sparse_fraction ? 1 : 0;
    std::vector<FitSample> indep(R);
    std::vector<std::vector<FitSample>> coupled(D + S, std::vector<FitSample>(R));
    std::vector<std::vector<double>> dist(D + S, std::vector<double>(R));
    parallel_for(R, plan.workers, [&](std::size_t r) {
      const SeedSpec seed = replicate_seed(plan.master_seed, n, r);
      const Effects eff = draw_effects(n, c.p, plan.params, plan.laws, seed);
      indep[r] = fit_replicate(c, plan, eff);
      for (std::size_t k = 0; k < D + S; ++k) {
        CouplingScheme scheme;
        if (k < D) {
          const double d = plan.coupling.scale_inverse_n ? deltas[k] / static_cast<double>(n)
                                                         : deltas[k];
          scheme = AdditivePerturb{d};
        } else {
          scheme = SparseZero{*plan.coupling.sparse_fraction};
        }
        const CouplingSpec cs = couple(eff.beta, plan.params, scheme, seed);
        coupled[k][r] = fit_replicate(c, plan, eff, &cs.beta_tilde);
        dist[k][r] = cs.coupling_distance;
      }
    });
    std::vector<double> err(R);
    for (std::size_t r = 0; r < R; ++r) err[r] = theta_error(indep[r].theta, plan.params);
    const MedianEstimate mi = median_with_stderr(err);
    rep.cells.push_back(cell(n, {}, "median_error_independent", mi.median, mi.stderr_));
    std::vector<double> meds;
    for (std::size_t k = 0; k < D + S; ++k) {
      const bool sparse = k >= D;
      const double d = sparse ? *plan.coupling.sparse_fraction : deltas[k];
      const std::string key = sparse ? "sparse_fraction" : "delta";
      std::vector<double> ce(R);
      long same = 0;
      bool finite = true;
      for (std::size_t r = 0; r < R; ++r) {
        const Theta& a = coupled[k][r].theta;
        const Theta& b = indep[r].theta;
        ce[r] = theta_error(a, plan.params);
        finite = finite && std::isfinite(a.sigma_sq) && std::isfinite(a.eta_sq);
        same += (std::memcmp(&a.sigma_sq, &b.sigma_sq, sizeof(double)) == 0 &&
                 std::memcmp(&a.eta_sq, &b.eta_sq, sizeof(double)) == 0)
                    ? 1
                    : 0;
      }
      const MedianEstimate mc = median_with_stderr(ce);
      const MedianEstimate md = median_with_stderr(dist[k]);
      const bool at_max = n == plan.n_grid.back();
      rep.cells.push_back(cell(n, {{key, d}}, "median_error_coupled", mc.median, mc.stderr_,
                               (!sparse && d > 0.0 && at_max) ? "ratio_within_2x" : ""));
      rep.cells.push_back(cell(n, {{key, d}}, "median_coupling_distance", md.median, md.stderr_));
      rep.cells.push_back(cell(n, {{key, d}}, "error_ratio", mc.median / mi.median, 0.0));
      if (!sparse && d == 0.0) {
        have_zero = true;
        const double frac = static_cast<double>(same) / static_cast<double>(R);
        rep.cells.push_back(cell(n, {{key, d}}, "bitwise_identical_fraction", frac, 0.0,
                                 "delta0_bitwise"));
        bitwise = bitwise && same == static_cast<long>(R);
      }
      if (sparse) sparse_finite = sparse_finite && finite;
      if (!sparse) meds.push_back(mc.median);
      if (!sparse && d > 0.0 && at_max) {
        const double ratio = mc.median / mi.median;
        worst_ratio = std::max(worst_ratio, std::max(ratio, 1.0 / ratio));
      }
    }
    bool trend = true;
    for (std::size_t i = 1; i < meds.size(); ++i) trend = trend && meds[i] >= meds[i - 1];
    rep.summary.emplace_back("trend_nondecreasing_n" + std::to_string(n), trend ? 1.0 : 0.0);
  }
  if (have_zero) {
    rep.gates.push_back({"delta0_bitwise", "delta = 0 reproduces the independent estimates bitwise",
                         bitwise ? 1.0 : 0.0, 0.0, bitwise});
    mark_gate(rep, "delta0_bitwise", bitwise);
  }
  const bool any_positive = std::any_of(deltas.begin(), deltas.end(), [](double d) { return d > 0.0; });
  if (any_positive) {
    const bool ok = worst_ratio <= 2.0;
    rep.gates.push_back({"ratio_within_2x",
                         "coupled median error within a factor 2 of the independent one at the largest n",
                         worst_ratio, 0.0, ok});
    mark_gate(rep, "ratio_within_2x", ok);
  }
  if (plan.coupling.sparse_fraction) {
    rep.gates.push_back({"sparse_finite", "estimates under SparseZero coupling are finite",
                         sparse_finite ? 1.0 : 0.0, 0.0, sparse_finite});
    rep.notes.push_back("SparseZero cells are misspecified; median_coupling_distance reports ||beta~ - beta||");
  }
  rep.summary.emplace_back("delta_scaled_inverse_n", plan.coupling.scale_inverse_n ? 1.0 : 0.0);
  rep.runtime_seconds = seconds_since(t0);
  return rep;
}

ExperimentReport run_stein(const ExperimentPlan& plan) {
  const auto t0 = Clock::now();
  ExperimentReport rep = start_report(plan);
  const auto R = static_cast<std::size_t>(plan.replicates);
  const SubGaussianLaw law = plan.laws.beta;
  const int K = plan.stein.K;
  const auto fns = test_functions_or(plan, SmoothTestFn::tanh_product({1.5}));
  std::vector<MeanSe> disc;
  bool all_degenerate = true, w_zero = true;
  for (Index d : plan.n_grid) {
    std::vector<QuadraticForm> qforms;
    RandomStream rng(design_seed(plan.master_seed, d));
    VectorXd mu(d);
    for (Index i = 0; i < d; ++i)
      mu[i] = d == 1 ? plan.stein.eig_lo
                     : plan.stein.eig_lo + (plan.stein.eig_hi - plan.stein.eig_lo) *
                                               static_cast<double>(i) / static_cast<double>(d - 1);
    for (int k = 0; k < K; ++k) {
      if (plan.stein.matrix == "identity") {
        qforms.emplace_back(MatrixXd::Identity(d, d));
      } else {
        const MatrixXd O = haar_orthogonal(d, rng);
        qforms.emplace_back((O * (mu / std::sqrt(static_cast<double>(d))).asDiagonal() *
                             O.transpose()).eval());
      }
    }
    const WVector w(qforms, law.moments());
    const bool degenerate = w.degenerate();
    all_degenerate = all_degenerate && degenerate;
    const double rate = napprox_rate(qforms, d, law.gamma(), fns[0].derivative_norms());
    std::vector<VectorXd> ws(R);
    parallel_for(R, plan.workers, [&](std::size_t r) {
      RandomStream zr(replicate_seed(plan.master_seed, d, r));
      VectorXd z(d);
      zr.fill(law, z);
      ws[r] = w.value(z);
    });
    double wmax = 0.0;
    for (const auto& v : ws) wmax = std::max(wmax, v.cwiseAbs().maxCoeff());
    w_zero = w_zero && wmax == 0.0;
    for (std::size_t k = 0; k < fns.size(); ++k) {
      std::vector<double> vals(R);
      for (std::size_t r = 0; r < R; ++r) vals[r] = fns[k](ws[r]);
      const MeanSe ms = mean_se(vals);
      // Degenerate w is a point mass at 0.
      const double target = degenerate ? fns[k](VectorXd::Zero(2 * K))
                                       : fns[k].gaussian_expectation(w.covariance());
      ReportCell dc = cell(d, {{"function", static_cast<double>(k)}, {"gaussian_value", target},
                               {"degenerate", degenerate ? 1.0 : 0.0}},
                           "discrepancy", std::abs(ms.mean - target), ms.se,
                           (k == 0 && !degenerate) ? "discrepancy_decrease" : "");
      rep.cells.push_back(dc);
      if (k == 0) disc.push_back({std::abs(ms.mean - target), ms.se});
    }
    rep.cells.push_back(cell(d, {}, "napprox_rate", rate, 0.0, degenerate ? "" : "rate_decrease"));
    rep.cells.push_back(cell(d, {}, "max_abs_w", wmax, 0.0));
    double min_sigma = std::numeric_limits<double>::infinity();
    for (const auto& q : qforms) min_sigma = std::min(min_sigma, sigma_k_sq(q, law.moments().excess_kurtosis()));
    rep.cells.push_back(cell(d, {}, "min_sigma_k_sq", min_sigma, 0.0));
  }
  if (all_degenerate) {
    const bool ok = w_zero;
    rep.gates.push_back({"degeneracy_detected",
                         "sigma_k^2 = 0 and w identically 0; compared against a point mass",
                         ok ? 1.0 : 0.0, 0.0, ok});
    rep.notes.push_back("w is degenerate (e.g. Rademacher coordinates with Q = I); "
                        "the Gaussian surrogate is the point mass at 0");
  } else if (disc.size() >= 2) {
    const double diff = disc.front().mean - disc.back().mean;
    const double se = std::hypot(disc.front().se, disc.back().se);
    const bool ok = diff > 2.0 * se;
    rep.gates.push_back({"discrepancy_decrease",
                         "discrepancy at the smallest d exceeds that at the largest d by more than 2 stderr",
                         diff, se, ok});
    mark_gate(rep, "discrepancy_decrease", ok);
  }
  // Rate gate from the recorded cells.
  std::vector<double> rr;
  for (const auto& c : rep.cells)
    if (c.quantity == "napprox_rate") rr.push_back(c.estimate);
  if (!all_degenerate && rr.size() >= 2) {
    bool mono = true;
    for (std::size_t i = 1; i < rr.size(); ++i) mono = mono && rr[i] < rr[i - 1];
    const bool ok = rr.back() < rr.front();
    rep.gates.push_back({"rate_decrease", "napprox_rate at the largest d below that at the smallest d",
                         rr.back() / rr.front(), 0.0, ok});
    mark_gate(rep, "rate_decrease", ok);
    rep.summary.emplace_back("rate_monotone", mono ? 1.0 : 0.0);
  }
  rep.summary.emplace_back("K", K);
  rep.notes.push_back("zeta law: " + std::string(law.name()) + "; test function 0: " + fns[0].name());
  rep.runtime_seconds = seconds_since(t0);
  return rep;
}

ExperimentReport run_experiment(const ExperimentPlan& plan) {
  switch (plan.kind) {
    case ExperimentKind::Consistency: return run_consistency(plan);
    case ExperimentKind::TailEnvelope: return run_tail(plan);
    case ExperimentKind::Normality: return run_normality(plan);
    case ExperimentKind::Coupling: return run_coupling(plan);
    case ExperimentKind::SteinDiscrepancy: return run_stein(plan);
  }
  raise(ErrorKind::InvalidArgument, "unknown experiment kind");
}

}  // namespace vcomp
