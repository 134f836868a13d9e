#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <numbers>
#include <random>

#include "mmgmrf/eval.hpp"
#include "mmgmrf/synth.hpp"

using namespace mmgmrf;

namespace {

TravelTimeDistribution single(double mu, double var) {
  TravelTimeDistribution d;
  d.components = {{1.0, mu, var}};
  return d;
}

double median(std::vector<double> v) {
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
  return v[v.size() / 2];
}

// Model built straight from a synthetic world's true parameters. With
// `diagonal`, couplings are dropped and each variable keeps its true marginal
// variance.
InferenceModel truth_model(const GroundTruth& t, bool diagonal) {
  PrecisionModel p;
  p.mu = t.mu;
  p.observed.assign(t.mu.size(), true);
  if (diagonal) {
    const auto cov = t.covariance_on_pattern();
    p.pattern = std::make_shared<const EdgePattern>(EdgePattern::from_pairs(t.mu.size(), {}));
    p.S.resize(t.mu.size());
    for (VarId u = 0; u < t.mu.size(); ++u) p.S[u] = 1.0 / cov[t.pattern->diag_entry(u)];
  } else {
    p.pattern = t.pattern;
    p.S = t.S.values;
  }
  return make_inference_model(t.network, t.markov, std::move(p));
}

std::shared_ptr<const RoadNetwork> chain(std::size_t n) {
  auto net = std::make_shared<RoadNetwork>();
  net->downstream.resize(n);
  for (LinkId l = 0; l + 1 < n; ++l) net->downstream[l].push_back(l + 1);
  net->modes.assign(n, 2);
  net->length_m.assign(n, 150.0);
  return net;
}

InferenceModel chain_model(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto net = chain(n);
  const auto index = build_variable_index(*net);
  PrecisionModel p;
  p.pattern = std::make_shared<const EdgePattern>(build_edge_pattern(*net, index));
  p.S.assign(p.pattern->entry_count(), 0.0);
  std::vector<double> rowsum(index.size(), 0.0);
  for (std::size_t e = 0; e < p.S.size(); ++e) {
    const auto [u, v] = p.pattern->entries()[e];
    if (u == v) continue;
    p.S[e] = -0.05 * unit(rng);
    rowsum[u] -= p.S[e];
    rowsum[v] -= p.S[e];
  }
  for (VarId u = 0; u < index.size(); ++u) p.S[p.pattern->diag_entry(u)] = rowsum[u] + 0.02 + 0.02 * unit(rng);
  p.mu.resize(index.size());
  for (VarId u = 0; u < index.size(); ++u) p.mu[u] = 15.0 + 10.0 * unit(rng) + 25.0 * index.state_of(u);
  p.observed.assign(index.size(), true);
  MarkovParams mk(*net);
  for (LinkId l = 0; l < n; ++l) {
    const double a = 0.2 + 0.6 * unit(rng);
    mk.set_pi(l, {a, 1 - a});
    if (l + 1 < n) {
      const double s0 = 0.5 + 0.4 * unit(rng), s1 = 0.5 + 0.4 * unit(rng);
      mk.set_T(l, l + 1, {s0, 1 - s0, 1 - s1, s1});
    }
  }
  return make_inference_model(net, std::move(mk), std::move(p));
}

// KL(p || q) on a fixed grid with p's density precomputed; matches
// kl_divergence whenever q's components are a subset of p's.
struct FixedGridKl {
  double lo, h;
  std::vector<double> dens;
  explicit FixedGridKl(const TravelTimeDistribution& p, std::size_t points = 4096) {
    const auto [a, b] = support_range(p, 6.0);
    lo = a;
    h = (b - a) / static_cast<double>(points - 1);
    for (std::size_t i = 0; i < points; ++i) dens.push_back(std::max(pdf(p, lo + h * static_cast<double>(i)), 1e-300));
  }
  double operator()(const TravelTimeDistribution& q) const {
    CompensatedSum s;
    for (std::size_t i = 0; i < dens.size(); ++i) {
      const double b = std::max(pdf(q, lo + h * static_cast<double>(i)), 1e-300);
      s.add((i == 0 || i + 1 == dens.size() ? 0.5 : 1.0) * dens[i] * std::log(dens[i] / b));
    }
    return std::max(0.0, s.value() * h);
  }
};

}  // namespace

TEST(LogLik, GaussianAtMean) {
  EXPECT_NEAR(log_density(single(10.0, 4.0), 10.0), std::log(1.0 / std::sqrt(8.0 * std::numbers::pi)), 1e-14);
}

TEST(LogLik, FarTailIsFloored) {
  const double ll = log_density(single(10.0, 4.0), 1e6);
  EXPECT_TRUE(std::isfinite(ll));
  EXPECT_NEAR(ll, std::log(1e-300), 1e-9);
}

TEST(LogLik, PathLoglikUsesTotalTime) {
  const auto model = chain_model(3, 1);
  CompressedObservation obs;
  obs.path = {0, 1, 2};
  obs.states = {0, 0, 0};
  obs.travel_times = {10.0, 20.0, 30.5};
  PathQuery q;
  q.path = obs.path;
  q.K = 200;
  q.seed = 5;
  q.query_id = 2;
  EXPECT_DOUBLE_EQ(path_loglik(model, obs, 200, 5, 2), log_density(infer_distribution(model, q), 60.5));
}

TEST(LogLik, TrueCorrelatedModelBeatsDiagonalAblation) {
  std::vector<double> full_means, diag_means;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto t = generate_world(5, 5, 2, 100 + seed);
    const auto full = truth_model(t, false), diag = truth_model(t, true);
    auto rng = make_rng(seed, 77);
    CompensatedSum sf, sd;
    const int n = 1000;
    for (int k = 0; k < n; ++k) {
      const auto obs = sample_trajectory(t, 3 + static_cast<std::size_t>(k % 8), rng);
      sf.add(path_loglik(full, obs, 300, seed, static_cast<std::uint64_t>(k)));
      sd.add(path_loglik(diag, obs, 300, seed, static_cast<std::uint64_t>(k)));
    }
    full_means.push_back(sf.value() / n);
    diag_means.push_back(sd.value() / n);
  }
  EXPECT_GE(median(full_means), median(diag_means));
}

TEST(LogLik, BinsByPathLength) {
  EXPECT_EQ(LoglikBins::bin(1), 0u);
  EXPECT_EQ(LoglikBins::bin(3), 0u);
  EXPECT_EQ(LoglikBins::bin(4), 1u);
  EXPECT_EQ(LoglikBins::bin(6), 1u);
  EXPECT_EQ(LoglikBins::bin(7), 2u);
  EXPECT_EQ(LoglikBins::bin(10), 2u);
  EXPECT_EQ(LoglikBins::bin(11), 3u);
  LoglikBins b;
  b.add(2, -1.0);
  b.add(2, -3.0);
  b.add(12, -10.0);
  const auto j = b.json();
  EXPECT_DOUBLE_EQ(j["bins"]["1-3"]["mean"].get<double>(), -2.0);
  EXPECT_EQ(j["bins"]["4-6"]["count"].get<std::size_t>(), 0u);
  EXPECT_NEAR(b.mean(), -14.0 / 3.0, 1e-15);
}

TEST(Pp, UniformValuesAreCalibrated) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(10000);
  for (auto& x : v) x = u(rng);
  const auto c = pp_metrics(v);
  EXPECT_EQ(c.alpha.size(), 101u);
  EXPECT_LE(c.a, 0.02);
  EXPECT_LE(c.b, 0.02);
}

TEST(Pp, AllZerosIsPureOverestimation) {
  const std::vector<double> v(500, 0.0);
  const auto c = pp_metrics(v);
  for (std::size_t i = 1; i < c.f.size(); ++i) EXPECT_EQ(c.f[i], 1.0);
  EXPECT_NEAR(c.a, 0.5, 1e-12);
  EXPECT_EQ(c.b, 0.0);
}

TEST(Pp, QuadraticCurve) {
  const auto c = pp_metrics_curve([](double a) { return a * a; });
  EXPECT_EQ(c.a, 0.0);
  EXPECT_NEAR(c.b, 1.0 / 6.0, 1e-4);
}

TEST(Pp, PermutationInvariantAndBounded) {
  std::mt19937_64 rng(2);
  std::gamma_distribution<double> g1(2.0), g2(5.0);
  std::vector<double> v(3000);
  for (auto& x : v) {
    const double a = g1(rng), b = g2(rng);
    x = a / (a + b);
  }
  const auto c1 = pp_metrics(v);
  std::shuffle(v.begin(), v.end(), rng);
  const auto c2 = pp_metrics(v);
  EXPECT_EQ(c1.a, c2.a);
  EXPECT_EQ(c1.b, c2.b);
  EXPECT_EQ(c1.f, c2.f);
  for (std::size_t i = 1; i < c1.f.size(); ++i) EXPECT_GE(c1.f[i], c1.f[i - 1]);
  EXPECT_GE(c1.a, 0.0);
  EXPECT_GE(c1.b, 0.0);
  EXPECT_LE(c1.a, 0.5);
  EXPECT_LE(c1.b, 0.5);
}

TEST(Pp, RejectsBadInput) {
  EXPECT_THROW(pp_metrics(std::vector<double>{}), InvalidArgument);
  EXPECT_THROW(pp_metrics(std::vector<double>{0.5, 1.5}), InvalidArgument);
}

TEST(Kl, NonNegativeAndZeroOnIdentical) {
  const auto model = chain_model(6, 3);
  const std::vector<LinkId> path{0, 1, 2, 3, 4, 5};
  const auto exact = exact_mixture(model, path);
  EXPECT_NEAR(kl_divergence(exact, exact), 0.0, 1e-8);
  const std::vector<std::size_t> Ks{5, 50, 500};
  for (double kl : kl_vs_exact(model, path, Ks, 1)) EXPECT_GE(kl, 0.0);
}

TEST(Kl, StratifiedModeIsNearlyExact) {
  const auto model = chain_model(8, 4);
  const std::vector<LinkId> path{0, 1, 2, 3, 4, 5, 6, 7};
  EXPECT_LE(kl_divergence(exact_mixture(model, path), stratified_mixture(model, path, 10000000)), 1e-6);
}

TEST(Kl, TenLinksAtThousandLogISamples) {
  const auto model = chain_model(10, 5);
  std::vector<LinkId> path(10);
  for (LinkId l = 0; l < 10; ++l) path[l] = l;
  const std::vector<std::size_t> Ks{static_cast<std::size_t>(std::round(1000 * std::log(10.0)))};
  EXPECT_EQ(Ks[0], 2303u);
  std::vector<double> kl;
  for (std::uint64_t seed = 0; seed < 10; ++seed) kl.push_back(kl_vs_exact(model, path, Ks, seed)[0]);
  EXPECT_LE(median(kl), 0.05);
}

TEST(Kl, SeventeenLinksMoreSamplesHelp) {
  const std::size_t n = 17;
  const auto model = chain_model(n, 6);
  std::vector<LinkId> path(n);
  for (LinkId l = 0; l < n; ++l) path[l] = l;
  const auto exact = exact_mixture(model, path);
  ASSERT_EQ(exact.components.size(), std::size_t{1} << n);
  const FixedGridKl kl(exact);
  const double ln_i = std::log(static_cast<double>(n));
  std::vector<double> small, large;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    PathQuery q;
    q.path = path;
    q.seed = seed;
    q.K = static_cast<std::size_t>(std::round(100 * ln_i));
    small.push_back(kl(infer_distribution(model, q)));
    q.K = static_cast<std::size_t>(std::round(1000 * ln_i));
    large.push_back(kl(infer_distribution(model, q)));
  }
  EXPECT_LT(median(large), median(small));
}

TEST(Kl, FixedGridHelperAgreesWithLibrary) {
  const auto model = chain_model(7, 8);
  const std::vector<LinkId> path{0, 1, 2, 3, 4, 5, 6};
  const auto exact = exact_mixture(model, path);
  PathQuery q;
  q.path = path;
  q.K = 40;
  const auto approx = infer_distribution(model, q);
  EXPECT_NEAR(FixedGridKl(exact)(approx), kl_divergence(exact, approx), 1e-12);
}

TEST(Scaling, NeedsThreeSizes) {
  const std::vector<int> two{1, 2};
  EXPECT_THROW(scaling_report(two, [](int s) { return static_cast<std::size_t>(s); }), InvalidArgument);
}

TEST(Scaling, LinearWorkGivesUnitSlope) {
  volatile double sink = 0;
  auto work = [&](int s) {
    double acc = 0;
    for (long i = 0; i < 4000000L * s; ++i) acc += 1.0 / static_cast<double>(i + 1);
    sink = acc;
    return static_cast<std::size_t>(1000 * s);
  };
  const std::vector<int> sizes{1, 2, 4, 8};
  const auto rep = scaling_report(sizes, work);
  ASSERT_EQ(rep.rows.size(), 4u);
  EXPECT_EQ(rep.rows[2].d, 4000u);
  EXPECT_NEAR(rep.slope, 1.0, 0.3);
  EXPECT_EQ(rep.csv().substr(0, 10), "d,seconds\n");

  const std::vector<int> same{2, 2, 2};
  const auto rep2 = scaling_report(same, work);
  double lo = 1e300, hi = 0;
  for (const auto& r : rep2.rows) {
    lo = std::min(lo, r.seconds);
    hi = std::max(hi, r.seconds);
  }
  EXPECT_LE(hi / lo, 2.0);
}
