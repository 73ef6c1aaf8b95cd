#include <benchmark/benchmark.h>

#include <Eigen/Core>

#include "vcomp/qform.hpp"
#include "vcomp/remodel.hpp"
#include "vcomp/spectral.hpp"
#include "vcomp/vcest.hpp"

namespace {

Eigen::MatrixXd design(Eigen::Index n, Eigen::Index p) {
  return vcomp::gen_design(n, p, vcomp::GaussianIIDDesign{}, vcomp::SeedSpec{1, 0});
}

void BM_DecomposeGram(benchmark::State& state) {
  const auto n = state.range(0);
  const Eigen::MatrixXd X = design(n, 2 * n);
  for (auto _ : state) benchmark::DoNotOptimize(vcomp::decompose_gram(X));
}
BENCHMARK(BM_DecomposeGram)->Arg(100)->Arg(200)->Arg(400)->Unit(benchmark::kMillisecond);

void BM_FitMle(benchmark::State& state) {
  const auto n = state.range(0);
  const Eigen::MatrixXd X = design(n, 2 * n);
  const vcomp::GramSpectrum spec = vcomp::decompose_gram(X);
  const auto data = vcomp::gen_independent(X, {1.0, 1.0}, {}, vcomp::SeedSpec{2, 0});
  const vcomp::ScoreState st(spec, data.y);
  vcomp::FitOptions opt;
  opt.keep_trace = false;
  for (auto _ : state) benchmark::DoNotOptimize(vcomp::fit_mle(st, opt));
}
BENCHMARK(BM_FitMle)->Arg(100)->Arg(800)->Unit(benchmark::kMicrosecond);

void BM_QfCovariance(benchmark::State& state) {
  const auto d = state.range(0);
  const Eigen::MatrixXd G = design(d, d);
  const vcomp::QuadraticForm a(G * G.transpose() / double(d));
  const vcomp::QuadraticForm b(G.transpose() * G / double(d));
  const auto m = vcomp::SubGaussianLaw(vcomp::LawFamily::UniformScaled).moments();
  for (auto _ : state) benchmark::DoNotOptimize(vcomp::qf_covariance(a, b, m));
}
BENCHMARK(BM_QfCovariance)->Arg(64)->Arg(256)->Arg(1024)->Unit(benchmark::kMicrosecond);

}  // namespace
BENCHMARK_MAIN();
