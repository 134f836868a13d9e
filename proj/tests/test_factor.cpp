#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <random>
#include <sstream>

#include "mmgmrf/factor.hpp"
#include "mmgmrf/numeric.hpp"

using namespace mmgmrf;

namespace {

// Random sparse symmetric matrix, strictly diagonally dominant hence PD.
PatternMatrix random_pd(std::size_t d, double density, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::pair<VarId, VarId>> pairs;
  for (VarId u = 1; u < d; ++u) pairs.emplace_back(u - 1, u);  // connected backbone
  for (VarId u = 0; u < d; ++u)
    for (VarId v = u + 2; v < d; ++v)
      if (unit(rng) < density) pairs.emplace_back(u, v);
  PatternMatrix m(std::make_shared<const EdgePattern>(EdgePattern::from_pairs(d, pairs)));
  std::vector<double> rowsum(d, 0.0);
  const auto& ents = m.pattern->entries();
  for (std::size_t e = 0; e < ents.size(); ++e) {
    if (ents[e].first == ents[e].second) continue;
    m.values[e] = 2.0 * unit(rng) - 1.0;
    rowsum[ents[e].first] += std::abs(m.values[e]);
    rowsum[ents[e].second] += std::abs(m.values[e]);
  }
  for (VarId u = 0; u < d; ++u) m.values[m.pattern->diag_entry(u)] = rowsum[u] + 0.5 + unit(rng);
  return m;
}

PatternMatrix identity(std::size_t d) {
  PatternMatrix m(std::make_shared<const EdgePattern>(EdgePattern::from_pairs(d, {})));
  for (auto& v : m.values) v = 1.0;
  return m;
}

PatternMatrix two_by_two() {
  PatternMatrix m(std::make_shared<const EdgePattern>(EdgePattern::from_pairs(2, {{0, 1}})));
  m.values[m.pattern->diag_entry(0)] = 2.0;
  m.values[m.pattern->diag_entry(1)] = 2.0;
  m.values[static_cast<std::size_t>(m.pattern->find(0, 1))] = 1.0;
  return m;
}

// Grid precision: 4-neighbour lattice Laplacian plus a diagonal shift.
PatternMatrix grid_precision(int w, int h) {
  std::vector<std::pair<VarId, VarId>> pairs;
  auto id = [&](int x, int y) { return static_cast<VarId>(y * w + x); };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (x + 1 < w) pairs.emplace_back(id(x, y), id(x + 1, y));
      if (y + 1 < h) pairs.emplace_back(id(x, y), id(x, y + 1));
    }
  const auto d = static_cast<std::size_t>(w * h);
  PatternMatrix m(std::make_shared<const EdgePattern>(EdgePattern::from_pairs(d, pairs)));
  for (std::size_t e = 0; e < m.values.size(); ++e) {
    const auto [u, v] = m.pattern->entries()[e];
    m.values[e] = u == v ? 4.2 : -1.0;
  }
  return m;
}

Eigen::SparseMatrix<double> sparse_l(const CholeskyFactor& f) {
  const auto& sym = f.symbolic();
  std::vector<Eigen::Triplet<double>> t;
  for (std::size_t j = 0; j < f.dim(); ++j)
    for (std::size_t p = sym.col_ptr()[j]; p < sym.col_ptr()[j + 1]; ++p)
      t.emplace_back(sym.row_idx()[p], static_cast<int>(j), f.values()[p]);
  Eigen::SparseMatrix<double> l(static_cast<Eigen::Index>(f.dim()), static_cast<Eigen::Index>(f.dim()));
  l.setFromTriplets(t.begin(), t.end());
  return l;
}

double median(std::vector<double> v) {
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
  return v[v.size() / 2];
}

}  // namespace

TEST(Factorize, IdentityGivesIdentity) {
  const auto f = factorize(identity(7));
  EXPECT_EQ(f.nnz(), 7u);
  for (double v : f.values()) EXPECT_EQ(v, 1.0);
  EXPECT_EQ(f.log_det(), 0.0);
}

TEST(Factorize, TwoByTwo) {
  for (auto ord : {Ordering::amd, Ordering::natural}) {
    const auto s = two_by_two();
    const auto f = factorize(s, ord);
    EXPECT_LE((f.reconstruct_dense() - s.to_dense()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(f.log_det(), std::log(3.0), 1e-14);
    const std::vector<std::pair<VarId, VarId>> pairs{{0, 0}, {0, 1}, {1, 1}};
    const auto inv = exact_inverse_entries(f, pairs);
    EXPECT_NEAR(inv[0], 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(inv[1], -1.0 / 3.0, 1e-15);
    EXPECT_NEAR(inv[2], 2.0 / 3.0, 1e-15);
  }
}

TEST(Factorize, DiagonalInverse) {
  PatternMatrix s(std::make_shared<const EdgePattern>(EdgePattern::from_pairs(4, {})));
  s.values = {2.0, 4.0, 0.5, 10.0};
  const auto f = factorize(s);
  const auto w = f.pattern_inverse();
  for (VarId u = 0; u < 4; ++u) EXPECT_DOUBLE_EQ(w[s.pattern->diag_entry(u)], 1.0 / s.diag(u));
}

TEST(Factorize, ReportsPivotOfIndefiniteMatrix) {
  auto s = two_by_two();
  s.values[static_cast<std::size_t>(s.pattern->find(0, 1))] = 3.0;
  try {
    (void)factorize(s, Ordering::natural);
    FAIL() << "expected NotPositiveDefinite";
  } catch (const NotPositiveDefinite& e) {
    EXPECT_EQ(e.pivot(), 1u);
  }
}

TEST(Factorize, GridReconstructionAndFill) {
  const auto s = grid_precision(40, 80);  // d = 3200
  const auto f = factorize(s);
  const auto l = sparse_l(f);
  const Eigen::SparseMatrix<double> llt = l * Eigen::SparseMatrix<double>(l.transpose());
  // P S P' in factor order.
  const auto& perm = f.symbolic().perm();
  std::vector<Eigen::Triplet<double>> t;
  for (std::size_t e = 0; e < s.values.size(); ++e) {
    const auto [u, v] = s.pattern->entries()[e];
    t.emplace_back(perm[u], perm[v], s.values[e]);
    if (u != v) t.emplace_back(perm[v], perm[u], s.values[e]);
  }
  Eigen::SparseMatrix<double> pspt(llt.rows(), llt.cols());
  pspt.setFromTriplets(t.begin(), t.end());
  const Eigen::SparseMatrix<double> diff = llt - pspt;
  double worst = 0.0;
  for (int k = 0; k < diff.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(diff, k); it; ++it) worst = std::max(worst, std::abs(it.value()));
  EXPECT_LE(worst, 1e-8 * 4.2);
  EXPECT_LT(f.fill_ratio(), 10.0);
  for (std::size_t j = 0; j < f.dim(); ++j) EXPECT_GT(f.values()[f.symbolic().col_ptr()[j]], 0.0);
}

TEST(Factorize, AmdBeatsNaturalOrderingOnGrids) {
  const auto s = grid_precision(30, 30);
  EXPECT_LT(factorize(s, Ordering::amd).nnz(), factorize(s, Ordering::natural).nnz());
}

TEST(Inverse, SelectedAndColumnSolvesMatchDense) {
  const auto s = random_pd(500, 0.004, 3);
  const Eigen::MatrixXd dense_inv = s.to_dense().inverse();
  const auto f = factorize(s);
  const auto sel = f.pattern_inverse();
  const auto cols = exact_inverse_entries(f, s.pattern->entries());
  for (std::size_t e = 0; e < sel.size(); ++e) {
    const auto [u, v] = s.pattern->entries()[e];
    EXPECT_NEAR(sel[e], dense_inv(u, v), 1e-8);
    EXPECT_NEAR(cols[e], dense_inv(u, v), 1e-8);
  }
}

TEST(Inverse, OrderingDoesNotChangeInverse) {
  const auto s = random_pd(120, 0.03, 8);
  const auto a = factorize(s, Ordering::amd).pattern_inverse();
  const auto b = factorize(s, Ordering::natural).pattern_inverse();
  for (std::size_t e = 0; e < a.size(); ++e) EXPECT_NEAR(a[e], b[e], 1e-12);
}

TEST(Inverse, PolarizationIdentity) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto s = random_pd(60, 0.05, seed);
    const auto f = factorize(s);
    std::mt19937_64 rng(seed);
    for (int trial = 0; trial < 20; ++trial) {
      const auto u = static_cast<VarId>(rng() % 60), v = static_cast<VarId>(rng() % 60);
      if (u == v) continue;
      const std::vector<VarId> uu{u}, vv{v}, uv{u, v};
      const double polar = 0.5 * (f.quad_form(uv) - f.quad_form(uu) - f.quad_form(vv));
      const std::vector<std::pair<VarId, VarId>> pair{{u, v}};
      EXPECT_NEAR(polar, exact_inverse_entries(f, pair)[0], 1e-10);
    }
  }
}

TEST(Inverse, QuadFormMatchesDense) {
  const auto s = random_pd(80, 0.05, 2);
  const Eigen::MatrixXd inv = s.to_dense().inverse();
  const std::vector<VarId> sel{3, 17, 17, 40, 79};
  Eigen::VectorXd e = Eigen::VectorXd::Zero(80);
  for (VarId u : sel) e[u] += 1.0;
  EXPECT_NEAR(factorize(s).quad_form(sel), e.dot(inv * e), 1e-10);
}

TEST(Sketch, IdentityRowsHaveUnitNorm) {
  const auto f = factorize(identity(30));
  const auto sk = build_sketch(f, 64, 5);
  for (VarId u = 0; u < 30; ++u) {
    const std::vector<VarId> sel{u};
    EXPECT_NEAR(quad_form(sk, sel), 1.0, 1e-14);
    EXPECT_DOUBLE_EQ(inverse_entry(sk, u, u), quad_form(sk, sel));
    for (double q : sk.row(u)) EXPECT_NEAR(std::abs(q), 1.0 / 8.0, 1e-15);
  }
}

TEST(Sketch, DeterministicGivenSeed) {
  const auto f = factorize(random_pd(40, 0.05, 1));
  EXPECT_EQ(build_sketch(f, 32, 9).q, build_sketch(f, 32, 9).q);
  EXPECT_NE(build_sketch(f, 32, 9).q, build_sketch(f, 32, 10).q);
}

TEST(Sketch, WidthBound) {
  EXPECT_EQ(jl_width(0.3, 200), static_cast<std::size_t>(std::ceil(24.0 / 0.09 * std::log(200.0))));
  EXPECT_THROW(jl_width(0.0, 10), InvalidArgument);
  EXPECT_THROW(build_sketch(factorize(identity(2)), 0, 1), InvalidArgument);
}

TEST(Sketch, DiagonalCoverageAtBound) {
  const std::size_t d = 50;
  const double eps = 0.3;
  const auto s = random_pd(d, 0.08, 17);
  const Eigen::MatrixXd inv = s.to_dense().inverse();
  const auto f = factorize(s);
  const std::size_t k = jl_width(eps, d);
  int good_seeds = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto sk = build_sketch(f, k, seed, eps);
    std::size_t inside = 0;
    for (VarId u = 0; u < d; ++u) {
      const double est = inverse_entry(sk, u, u);
      inside += std::abs(est / inv(u, u) - 1.0) <= eps;
    }
    good_seeds += static_cast<double>(inside) >= (1.0 - 1.0 / static_cast<double>(d)) * static_cast<double>(d);
  }
  EXPECT_GE(good_seeds, 19);
}

TEST(Sketch, ErrorShrinksAsInverseSqrtK) {
  const std::size_t d = 50;
  const auto s = random_pd(d, 0.08, 23);
  const Eigen::MatrixXd inv = s.to_dense().inverse();
  const auto f = factorize(s);
  std::vector<double> ks, errs;
  for (std::size_t k : {64, 256, 1024, 4096}) {
    std::vector<double> per_seed;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto sk = build_sketch(f, k, 100 + seed);
      std::vector<double> rel;
      for (VarId u = 0; u < d; ++u) rel.push_back(std::abs(inverse_entry(sk, u, u) / inv(u, u) - 1.0));
      per_seed.push_back(median(rel));
    }
    ks.push_back(static_cast<double>(k));
    errs.push_back(median(per_seed));
  }
  EXPECT_NEAR(loglog_slope(ks, errs), -0.5, 0.15);
}

TEST(Sketch, UnbiasedInverseEntries) {
  const std::size_t d = 30;
  const auto s = random_pd(d, 0.15, 4);
  const Eigen::MatrixXd inv = s.to_dense().inverse();
  const auto f = factorize(s);
  const std::vector<std::pair<VarId, VarId>> probes{{0, 0}, {0, 1}, {5, 9}, {12, 29}, {7, 7}};
  std::vector<std::vector<double>> draws(probes.size());
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto sk = build_sketch(f, 16, 1000 + seed);
    for (std::size_t p = 0; p < probes.size(); ++p) draws[p].push_back(inverse_entry(sk, probes[p].first, probes[p].second));
  }
  for (std::size_t p = 0; p < probes.size(); ++p) {
    double m = 0, v = 0;
    for (double x : draws[p]) m += x;
    m /= static_cast<double>(draws[p].size());
    for (double x : draws[p]) v += (x - m) * (x - m);
    const double se = std::sqrt(v / static_cast<double>(draws[p].size() - 1) / static_cast<double>(draws[p].size()));
    EXPECT_LE(std::abs(m - inv(probes[p].first, probes[p].second)), 3.0 * se + 1e-12) << "probe " << p;
  }
}

TEST(Sketch, IdentityOffDiagonalConcentratesAtZero) {
  const std::size_t d = 50;
  const double eps = 0.3;
  const auto f = factorize(identity(d));
  const std::size_t k = jl_width(eps, d);
  int bad = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto sk = build_sketch(f, k, seed, eps);
    double worst = 0.0;
    for (VarId u = 0; u < d; ++u)
      for (VarId v = u + 1; v < d; ++v) worst = std::max(worst, std::abs(inverse_entry(sk, u, v)));
    bad += worst > eps;
  }
  EXPECT_LE(bad, 1);
}

TEST(Sketch, PathSelectorWithinBand) {
  const std::size_t d = 200;
  const double eps = 0.3;
  const auto s = random_pd(d, 0.01, 31);
  const Eigen::MatrixXd inv = s.to_dense().inverse();
  const auto f = factorize(s);
  const auto sk = build_sketch(f, jl_width(eps, d), 77, eps);
  int inside = 0;
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<VarId> sel;
    Eigen::VectorXd e = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
    const auto start = static_cast<VarId>(rng() % (d - 10));
    for (VarId i = 0; i < 10; ++i) {
      sel.push_back(start + i);
      e[start + i] = 1.0;
    }
    const double exact = e.dot(inv * e);
    inside += std::abs(quad_form(sk, sel) / exact - 1.0) <= eps;
  }
  EXPECT_GE(inside, 48);
}

TEST(Sketch, PersistenceRoundTripInFloat) {
  const auto f = factorize(random_pd(25, 0.1, 6));
  const auto sk = build_sketch(f, 40, 3, 0.3);
  std::stringstream ss;
  write_sketch(ss, sk);
  const auto back = read_sketch(ss);
  EXPECT_EQ(back.dim, sk.dim);
  EXPECT_EQ(back.width, sk.width);
  EXPECT_EQ(back.seed, sk.seed);
  EXPECT_EQ(back.epsilon, sk.epsilon);
  for (std::size_t i = 0; i < sk.q.size(); ++i) EXPECT_NEAR(back.q[i], sk.q[i], 1e-6 * std::abs(sk.q[i]) + 1e-30);
}
