#pragma once

// Sparse Cholesky of pattern-supported SPD matrices, exact selected inversion,
// and the random-projection sketch used for fast quadratic forms x' S^-1 x.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/OrderingMethods>
#include <Eigen/SparseCore>

#include "mmgmrf/binary_io.hpp"
#include "mmgmrf/error.hpp"
#include "mmgmrf/network.hpp"

namespace mmgmrf {

/// Symmetric matrix whose structural nonzeros lie on an EdgePattern.
struct PatternMatrix {
  std::shared_ptr<const EdgePattern> pattern;
  std::vector<double> values;  // one per pattern entry

  PatternMatrix() = default;
  explicit PatternMatrix(std::shared_ptr<const EdgePattern> p)
      : pattern(std::move(p)), values(pattern->entry_count(), 0.0) {}
  PatternMatrix(std::shared_ptr<const EdgePattern> p, std::vector<double> v)
      : pattern(std::move(p)), values(std::move(v)) {
    if (values.size() != pattern->entry_count())
      throw InvalidArgument("PatternMatrix: value count does not match pattern");
  }

  std::size_t dim() const { return pattern->dim(); }

  double at(VarId u, VarId v) const {
    const auto e = pattern->find(u, v);
    return e < 0 ? 0.0 : values[static_cast<std::size_t>(e)];
  }
  double diag(VarId u) const { return values[pattern->diag_entry(u)]; }

  Eigen::MatrixXd to_dense() const {
    const auto d = static_cast<Eigen::Index>(dim());
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(d, d);
    const auto& ents = pattern->entries();
    for (std::size_t e = 0; e < ents.size(); ++e) {
      m(ents[e].first, ents[e].second) = values[e];
      m(ents[e].second, ents[e].first) = values[e];
    }
    return m;
  }

  /// Frobenius inner product <this, other> over the full symmetric matrices.
  double frobenius_dot(std::span<const double> other) const {
    double s = 0.0;
    const auto& ents = pattern->entries();
    for (std::size_t e = 0; e < ents.size(); ++e)
      s += (ents[e].first == ents[e].second ? 1.0 : 2.0) * values[e] * other[e];
    return s;
  }
};

enum class Ordering { amd, natural };

class SymbolicCholesky;
class CholeskyFactor;
std::optional<CholeskyFactor> try_factorize(std::shared_ptr<const SymbolicCholesky> sym,
                                            std::span<const double> values,
                                            std::size_t* failed_pivot = nullptr);

/// Ordering, elimination tree and the nonzero structure of L for one pattern.
/// Shared by every numeric factorization with the same pattern.
class SymbolicCholesky {
 public:
  SymbolicCholesky(const EdgePattern& pattern, Ordering ordering) : n_(pattern.dim()) {
    compute_ordering(pattern, ordering);
    build_permuted_upper(pattern);
    compute_etree();
    compute_structure();
    map_entries(pattern);
  }

  std::size_t dim() const noexcept { return n_; }
  std::size_t nnz() const noexcept { return Li_.size(); }
  /// perm()[u] is the position of variable u in factor order.
  const std::vector<int>& perm() const noexcept { return perm_; }
  const std::vector<int>& iperm() const noexcept { return iperm_; }
  const std::vector<std::size_t>& col_ptr() const noexcept { return Lp_; }
  const std::vector<int>& row_idx() const noexcept { return Li_; }
  /// Position in L (column min, row max of the permuted pair) of each pattern entry.
  const std::vector<std::size_t>& entry_slots() const noexcept { return entry_slot_; }
  std::size_t pattern_nnz() const noexcept { return pattern_nnz_; }

 private:
  friend class CholeskyFactor;
  friend std::optional<CholeskyFactor> try_factorize(std::shared_ptr<const SymbolicCholesky>,
                                                    std::span<const double>, std::size_t*);

  void compute_ordering(const EdgePattern& pattern, Ordering ordering) {
    perm_.resize(n_);
    iperm_.resize(n_);
    if (ordering == Ordering::natural || n_ == 0) {
      for (std::size_t i = 0; i < n_; ++i) perm_[i] = iperm_[i] = static_cast<int>(i);
      return;
    }
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(pattern.nnz());
    for (VarId u = 0; u < n_; ++u)
      for (VarId v : pattern.row(u)) trips.emplace_back(static_cast<int>(u), static_cast<int>(v), 1.0);
    Eigen::SparseMatrix<double> a(static_cast<Eigen::Index>(n_), static_cast<Eigen::Index>(n_));
    a.setFromTriplets(trips.begin(), trips.end());
    Eigen::AMDOrdering<int> amd;
    Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> pinv;
    amd(a, pinv);
    // pinv maps factor position -> original variable.
    for (std::size_t k = 0; k < n_; ++k) {
      iperm_[k] = pinv.indices()[static_cast<Eigen::Index>(k)];
      perm_[static_cast<std::size_t>(iperm_[k])] = static_cast<int>(k);
    }
  }

  void build_permuted_upper(const EdgePattern& pattern) {
    // Upper triangle of P S P' in compressed-column form; slot -> pattern entry.
    std::vector<std::size_t> count(n_ + 1, 0);
    const auto& ents = pattern.entries();
    for (const auto& [u, v] : ents) {
      const int a = perm_[u], b = perm_[v];
      ++count[static_cast<std::size_t>(std::max(a, b)) + 1];
    }
    Cp_.assign(n_ + 1, 0);
    for (std::size_t k = 0; k < n_; ++k) Cp_[k + 1] = Cp_[k] + count[k + 1];
    Ci_.resize(ents.size());
    c_entry_.resize(ents.size());
    std::vector<std::size_t> next(Cp_.begin(), Cp_.end() - 1);
    for (std::size_t e = 0; e < ents.size(); ++e) {
      const int a = perm_[ents[e].first], b = perm_[ents[e].second];
      const auto col = static_cast<std::size_t>(std::max(a, b));
      const std::size_t slot = next[col]++;
      Ci_[slot] = std::min(a, b);
      c_entry_[slot] = static_cast<std::uint32_t>(e);
    }
    pattern_nnz_ = pattern.nnz();
  }

  void compute_etree() {
    parent_.assign(n_, -1);
    std::vector<int> ancestor(n_, -1);
    for (std::size_t k = 0; k < n_; ++k) {
      for (std::size_t p = Cp_[k]; p < Cp_[k + 1]; ++p) {
        int i = Ci_[p];
        while (i != -1 && i < static_cast<int>(k)) {
          const int inext = ancestor[static_cast<std::size_t>(i)];
          ancestor[static_cast<std::size_t>(i)] = static_cast<int>(k);
          if (inext == -1) parent_[static_cast<std::size_t>(i)] = static_cast<int>(k);
          i = inext;
        }
      }
    }
  }

  void compute_structure() {
    // Row patterns of L (excluding the diagonal) in topological order, via ereach.
    std::vector<int> mark(n_, -1), stack(n_);
    row_ptr_.assign(n_ + 1, 0);
    row_pattern_.clear();
    std::vector<std::size_t> colcount(n_, 1);
    for (std::size_t k = 0; k < n_; ++k) {
      std::size_t top = n_;
      mark[k] = static_cast<int>(k);
      for (std::size_t p = Cp_[k]; p < Cp_[k + 1]; ++p) {
        int i = Ci_[p];
        if (i > static_cast<int>(k)) continue;
        std::size_t len = 0;
        while (mark[static_cast<std::size_t>(i)] != static_cast<int>(k)) {
          stack[len++] = i;
          mark[static_cast<std::size_t>(i)] = static_cast<int>(k);
          i = parent_[static_cast<std::size_t>(i)];
        }
        while (len > 0) stack[--top] = stack[--len];
      }
      for (std::size_t t = top; t < n_; ++t) {
        row_pattern_.push_back(stack[t]);
        ++colcount[static_cast<std::size_t>(stack[t])];
      }
      row_ptr_[k + 1] = row_pattern_.size();
    }
    Lp_.assign(n_ + 1, 0);
    for (std::size_t j = 0; j < n_; ++j) Lp_[j + 1] = Lp_[j] + colcount[j];
    Li_.resize(Lp_[n_]);
    std::vector<std::size_t> next(Lp_.begin(), Lp_.end() - 1);
    for (std::size_t k = 0; k < n_; ++k) {
      for (std::size_t t = row_ptr_[k]; t < row_ptr_[k + 1]; ++t)
        Li_[next[static_cast<std::size_t>(row_pattern_[t])]++] = static_cast<int>(k);
      Li_[next[k]++] = static_cast<int>(k);
    }
  }

  void map_entries(const EdgePattern& pattern) {
    const auto& ents = pattern.entries();
    entry_slot_.resize(ents.size());
    for (std::size_t e = 0; e < ents.size(); ++e) {
      const int a = perm_[ents[e].first], b = perm_[ents[e].second];
      const auto col = static_cast<std::size_t>(std::min(a, b));
      const int row = std::max(a, b);
      auto first = Li_.begin() + static_cast<std::ptrdiff_t>(Lp_[col]);
      auto last = Li_.begin() + static_cast<std::ptrdiff_t>(Lp_[col + 1]);
      auto it = std::lower_bound(first, last, row);
      entry_slot_[e] = static_cast<std::size_t>(it - Li_.begin());
    }
  }

  std::size_t n_;
  std::size_t pattern_nnz_ = 0;
  std::vector<int> perm_, iperm_, parent_;
  std::vector<std::size_t> Cp_;
  std::vector<int> Ci_;
  std::vector<std::uint32_t> c_entry_;
  std::vector<std::size_t> row_ptr_;
  std::vector<int> row_pattern_;
  std::vector<std::size_t> Lp_;
  std::vector<int> Li_;
  std::vector<std::size_t> entry_slot_;
};

/// Numeric factor P S P' = L L' (L lower triangular, positive diagonal,
/// diagonal stored first in each column).
class CholeskyFactor {
 public:
  CholeskyFactor(std::shared_ptr<const SymbolicCholesky> symbolic, std::vector<double> lx)
      : symbolic_(std::move(symbolic)), Lx_(std::move(lx)) {}

  const SymbolicCholesky& symbolic() const noexcept { return *symbolic_; }
  std::shared_ptr<const SymbolicCholesky> symbolic_ptr() const noexcept { return symbolic_; }
  const std::vector<double>& values() const noexcept { return Lx_; }
  std::size_t dim() const noexcept { return symbolic_->dim(); }
  std::size_t nnz() const noexcept { return Lx_.size(); }
  /// nnz(L) relative to the lower triangle of S.
  double fill_ratio() const {
    const double lower = 0.5 * static_cast<double>(symbolic_->pattern_nnz() + dim());
    return static_cast<double>(nnz()) / lower;
  }

  double log_det() const {
    double s = 0.0;
    const auto& lp = symbolic_->col_ptr();
    for (std::size_t j = 0; j < dim(); ++j) s += std::log(Lx_[lp[j]]);
    return 2.0 * s;
  }

  /// x <- L^-1 x, factor order.
  void solve_lower(std::span<double> x) const {
    const auto& lp = symbolic_->col_ptr();
    const auto& li = symbolic_->row_idx();
    for (std::size_t j = 0; j < dim(); ++j) {
      if (x[j] == 0.0) continue;
      x[j] /= Lx_[lp[j]];
      const double xj = x[j];
      for (std::size_t p = lp[j] + 1; p < lp[j + 1]; ++p) x[static_cast<std::size_t>(li[p])] -= Lx_[p] * xj;
    }
  }

  /// x <- L^-T x, factor order.
  void solve_upper(std::span<double> x) const {
    const auto& lp = symbolic_->col_ptr();
    const auto& li = symbolic_->row_idx();
    for (std::size_t j = dim(); j-- > 0;) {
      double s = x[j];
      for (std::size_t p = lp[j] + 1; p < lp[j + 1]; ++p) s -= Lx_[p] * x[static_cast<std::size_t>(li[p])];
      x[j] = s / Lx_[lp[j]];
    }
  }

  /// Solves S x = b in the original variable order.
  Eigen::VectorXd solve(const Eigen::VectorXd& b) const {
    const auto& perm = symbolic_->perm();
    std::vector<double> y(dim());
    for (std::size_t u = 0; u < dim(); ++u) y[static_cast<std::size_t>(perm[u])] = b[static_cast<Eigen::Index>(u)];
    solve_lower(y);
    solve_upper(y);
    Eigen::VectorXd x(static_cast<Eigen::Index>(dim()));
    for (std::size_t u = 0; u < dim(); ++u) x[static_cast<Eigen::Index>(u)] = y[static_cast<std::size_t>(perm[u])];
    return x;
  }

  /// e' S^-1 e = ||L^-1 P e||^2 for a selector given as variable ids (repeats add).
  double quad_form(std::span<const VarId> selector) const {
    const auto& perm = symbolic_->perm();
    std::vector<double> y(dim(), 0.0);
    for (VarId u : selector) y[static_cast<std::size_t>(perm[u])] += 1.0;
    solve_lower(y);
    double s = 0.0;
    for (double v : y) s += v * v;
    return s;
  }

  /// Entries of S^-1 on the structure of L (Takahashi recurrences), aligned
  /// with values(). Cost is of the same order as the factorization.
  std::vector<double> selected_inverse() const {
    const auto& lp = symbolic_->col_ptr();
    const auto& li = symbolic_->row_idx();
    std::vector<double> z(Lx_.size(), 0.0);
    std::vector<double> acc;
    for (std::size_t j = dim(); j-- > 0;) {
      const std::size_t p0 = lp[j];
      const std::size_t c = lp[j + 1] - p0 - 1;
      acc.assign(c, 0.0);
      for (std::size_t b = 0; b < c; ++b) {
        const auto k = static_cast<std::size_t>(li[p0 + 1 + b]);
        const double lb = Lx_[p0 + 1 + b];
        std::size_t q = lp[k];
        acc[b] += lb * z[q];
        ++q;
        for (std::size_t a = b + 1; a < c; ++a) {
          const int ra = li[p0 + 1 + a];
          while (li[q] != ra) ++q;
          const double zab = z[q];
          acc[a] += lb * zab;
          acc[b] += Lx_[p0 + 1 + a] * zab;
        }
      }
      const double ljj = Lx_[p0];
      double s = 0.0;
      for (std::size_t a = 0; a < c; ++a) {
        z[p0 + 1 + a] = -acc[a] / ljj;
        s += Lx_[p0 + 1 + a] * z[p0 + 1 + a];
      }
      z[p0] = 1.0 / (ljj * ljj) - s / ljj;
    }
    return z;
  }

  /// (S^-1)_uv for every entry of the pattern the factor was built from.
  std::vector<double> pattern_inverse() const {
    const auto z = selected_inverse();
    const auto& slots = symbolic_->entry_slots();
    std::vector<double> w(slots.size());
    for (std::size_t e = 0; e < slots.size(); ++e) w[e] = z[slots[e]];
    return w;
  }

  /// Dense reconstruction of P' L L' P in original order (tests and diagnostics).
  Eigen::MatrixXd reconstruct_dense() const {
    const auto n = static_cast<Eigen::Index>(dim());
    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
    const auto& lp = symbolic_->col_ptr();
    const auto& li = symbolic_->row_idx();
    for (std::size_t j = 0; j < dim(); ++j)
      for (std::size_t p = lp[j]; p < lp[j + 1]; ++p) l(li[p], static_cast<Eigen::Index>(j)) = Lx_[p];
    Eigen::MatrixXd llt = l * l.transpose();
    Eigen::MatrixXd out(n, n);
    const auto& perm = symbolic_->perm();
    for (Eigen::Index u = 0; u < n; ++u)
      for (Eigen::Index v = 0; v < n; ++v) out(u, v) = llt(perm[static_cast<std::size_t>(u)], perm[static_cast<std::size_t>(v)]);
    return out;
  }

 private:
  std::shared_ptr<const SymbolicCholesky> symbolic_;
  std::vector<double> Lx_;
};

/// Numeric factorization against a precomputed symbolic analysis. Returns
/// nullopt on a non-positive pivot (reported through failed_pivot when given).
inline std::optional<CholeskyFactor> try_factorize(std::shared_ptr<const SymbolicCholesky> sym,
                                                   std::span<const double> values,
                                                   std::size_t* failed_pivot) {
  const SymbolicCholesky& s = *sym;
  const std::size_t n = s.n_;
  std::vector<double> lx(s.Li_.size(), 0.0);
  std::vector<double> x(n, 0.0);
  std::vector<std::size_t> next(s.Lp_.begin(), s.Lp_.end() - 1);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t p = s.Cp_[k]; p < s.Cp_[k + 1]; ++p)
      x[static_cast<std::size_t>(s.Ci_[p])] = values[s.c_entry_[p]];
    double d = x[k];
    x[k] = 0.0;
    for (std::size_t t = s.row_ptr_[k]; t < s.row_ptr_[k + 1]; ++t) {
      const auto i = static_cast<std::size_t>(s.row_pattern_[t]);
      const double lki = x[i] / lx[s.Lp_[i]];
      x[i] = 0.0;
      for (std::size_t p = s.Lp_[i] + 1; p < next[i]; ++p) x[static_cast<std::size_t>(s.Li_[p])] -= lx[p] * lki;
      d -= lki * lki;
      lx[next[i]++] = lki;
    }
    if (!(d > 0.0) || !std::isfinite(d)) {
      if (failed_pivot) *failed_pivot = k;
      return std::nullopt;
    }
    lx[next[k]++] = std::sqrt(d);
  }
  return CholeskyFactor(std::move(sym), std::move(lx));
}

inline CholeskyFactor factorize(std::shared_ptr<const SymbolicCholesky> sym, std::span<const double> values) {
  std::size_t pivot = 0;
  auto f = try_factorize(std::move(sym), values, &pivot);
  if (!f) throw NotPositiveDefinite(pivot, "matrix is not positive definite (pivot " + std::to_string(pivot) + ")");
  return std::move(*f);
}

inline CholeskyFactor factorize(const PatternMatrix& s, Ordering ordering = Ordering::amd) {
  auto sym = std::make_shared<const SymbolicCholesky>(*s.pattern, ordering);
  return factorize(std::move(sym), s.values);
}

/// Exact (S^-1)_uv via one pair of triangular solves per distinct column.
inline std::vector<double> exact_inverse_entries(const CholeskyFactor& factor,
                                                 std::span<const std::pair<VarId, VarId>> pairs) {
  std::map<VarId, Eigen::VectorXd> columns;
  std::vector<double> out;
  out.reserve(pairs.size());
  for (auto [u, v] : pairs) {
    auto it = columns.find(v);
    if (it == columns.end()) {
      Eigen::VectorXd e = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(factor.dim()));
      e[v] = 1.0;
      it = columns.emplace(v, factor.solve(e)).first;
    }
    out.push_back(it->second[u]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Random projection sketch.

/// k >= 24 eps^-2 ln n, the width that preserves n squared norms within (1 +- eps)
/// with probability at least 1 - 1/n.
inline std::size_t jl_width(double epsilon, std::size_t n) {
  if (!(epsilon > 0.0)) throw InvalidArgument("epsilon must be positive");
  const double k = 24.0 / (epsilon * epsilon) * std::log(static_cast<double>(std::max<std::size_t>(n, 2)));
  return static_cast<std::size_t>(std::ceil(k));
}

/// Q (d x k, row-major in original variable order) with L' P Q = R' for a
/// Rademacher R (entries +-1/sqrt(k)), so that Q Q' approximates S^-1.
struct ProjectionSketch {
  std::size_t dim = 0;
  std::size_t width = 0;
  double epsilon = 0.0;
  std::uint64_t seed = 0;
  std::vector<double> q;

  std::span<const double> row(VarId u) const { return {q.data() + static_cast<std::size_t>(u) * width, width}; }
};

inline ProjectionSketch build_sketch(const CholeskyFactor& factor, std::size_t k, std::uint64_t seed,
                                     double epsilon = 0.0) {
  if (k == 0) throw InvalidArgument("sketch width must be >= 1");
  const std::size_t n = factor.dim();
  const auto& sym = factor.symbolic();
  const auto& lp = sym.col_ptr();
  const auto& li = sym.row_idx();
  const auto& lx = factor.values();

  // Y = R' in factor order, then back-substitution on all k columns at once.
  std::vector<double> y(n * k);
  std::mt19937_64 rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(k));
  std::uint64_t bits = 0;
  int left = 0;
  for (double& v : y) {
    if (left == 0) {
      bits = rng();
      left = 64;
    }
    v = (bits & 1u) ? scale : -scale;
    bits >>= 1;
    --left;
  }
  for (std::size_t j = n; j-- > 0;) {
    double* yj = y.data() + j * k;
    for (std::size_t p = lp[j] + 1; p < lp[j + 1]; ++p) {
      const double a = lx[p];
      const double* yi = y.data() + static_cast<std::size_t>(li[p]) * k;
      for (std::size_t r = 0; r < k; ++r) yj[r] -= a * yi[r];
    }
    const double inv = 1.0 / lx[lp[j]];
    for (std::size_t r = 0; r < k; ++r) yj[r] *= inv;
  }

  ProjectionSketch sk;
  sk.dim = n;
  sk.width = k;
  sk.epsilon = epsilon;
  sk.seed = seed;
  sk.q.resize(n * k);
  const auto& perm = sym.perm();
  for (std::size_t u = 0; u < n; ++u) {
    const double* src = y.data() + static_cast<std::size_t>(perm[u]) * k;
    std::copy(src, src + k, sk.q.data() + u * k);
  }
  return sk;
}

/// ||sum_i Q_row(i)||^2 over the selected variables; O(|selector| k).
inline double quad_form(const ProjectionSketch& sketch, std::span<const VarId> selector) {
  const std::size_t k = sketch.width;
  if (selector.size() == 1) {
    const auto r = sketch.row(selector[0]);
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) s += r[i] * r[i];
    return s;
  }
  std::vector<double> acc(k, 0.0);
  for (VarId u : selector) {
    const auto r = sketch.row(u);
    for (std::size_t i = 0; i < k; ++i) acc[i] += r[i];
  }
  double s = 0.0;
  for (double a : acc) s += a * a;
  return s;
}

inline double inverse_entry(const ProjectionSketch& sketch, VarId u, VarId v) {
  const auto a = sketch.row(u);
  const auto b = sketch.row(v);
  double s = 0.0;
  for (std::size_t i = 0; i < sketch.width; ++i) s += a[i] * b[i];
  return s;
}

// Persistence: header (d:u64, k:u64, eps:f64, seed:u64, elem_bytes:u32 = 4)
// followed by the row-major f32 payload.

inline void write_sketch(std::ostream& os, const ProjectionSketch& sk) {
  binary::write_le<std::uint64_t>(os, sk.dim);
  binary::write_le<std::uint64_t>(os, sk.width);
  binary::write_le<double>(os, sk.epsilon);
  binary::write_le<std::uint64_t>(os, sk.seed);
  binary::write_le<std::uint32_t>(os, 4);
  for (double v : sk.q) binary::write_le<float>(os, static_cast<float>(v));
}

inline ProjectionSketch read_sketch(std::istream& is) {
  ProjectionSketch sk;
  sk.dim = binary::read_le<std::uint64_t>(is);
  sk.width = binary::read_le<std::uint64_t>(is);
  sk.epsilon = binary::read_le<double>(is);
  sk.seed = binary::read_le<std::uint64_t>(is);
  const auto elem = binary::read_le<std::uint32_t>(is);
  if (elem != 4) throw ParseError("sketch payload must be f32");
  sk.q.resize(sk.dim * sk.width);
  for (double& v : sk.q) v = binary::read_le<float>(is);
  return sk;
}

}  // namespace mmgmrf
