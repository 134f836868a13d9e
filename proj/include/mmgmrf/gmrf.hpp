#pragma once

// Partial moment statistics, the corrected partial empirical covariance
// (PECM) and the pattern-constrained maximum-likelihood precision fit
//   minimise  -log det S + <S, Sigma_hat>   subject to S_uv = 0 off the pattern.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmgmrf/binary_io.hpp"
#include "mmgmrf/error.hpp"
#include "mmgmrf/factor.hpp"
#include "mmgmrf/network.hpp"
#include "mmgmrf/numeric.hpp"
#include "mmgmrf/observation.hpp"

namespace mmgmrf {

/// Streaming marginal and co-observation moments over a pattern. Off-diagonal
/// fields are indexed by pattern entry id; diagonal entries are unused there.
class PecmStats {
 public:
  PecmStats() = default;
  explicit PecmStats(std::shared_ptr<const EdgePattern> pattern)
      : pattern_(std::move(pattern)),
        n_(pattern_->dim(), 0),
        sum_y_(pattern_->dim()),
        sum_ysq_(pattern_->dim()),
        n_pair_(pattern_->entry_count(), 0),
        sum_yy_(pattern_->entry_count()),
        sum_ysq_first_(pattern_->entry_count()),
        sum_ysq_second_(pattern_->entry_count()) {}

  const std::shared_ptr<const EdgePattern>& pattern() const noexcept { return pattern_; }
  std::size_t dim() const noexcept { return n_.size(); }

  /// Adds one observation given as (variable, value) pairs in path order.
  /// Every occurrence feeds the marginal moments; every pair of distinct
  /// positions holding distinct on-pattern variables feeds the pair moments once.
  void add(std::span<const std::pair<VarId, double>> obs) {
    for (auto [u, y] : obs) {
      ++n_[u];
      sum_y_[u].add(y);
      sum_ysq_[u].add(y * y);
    }
    for (std::size_t a = 0; a < obs.size(); ++a) {
      for (std::size_t b = a + 1; b < obs.size(); ++b) {
        auto [u, yu] = obs[a];
        auto [v, yv] = obs[b];
        if (u == v) continue;
        const auto e = pattern_->find(u, v);
        if (e < 0) continue;
        if (u > v) std::swap(yu, yv);
        const auto k = static_cast<std::size_t>(e);
        ++n_pair_[k];
        sum_yy_[k].add(yu * yv);
        sum_ysq_first_[k].add(yu * yu);
        sum_ysq_second_[k].add(yv * yv);
      }
    }
  }

  void add(const VariableIndex& index, const CompressedObservation& obs) {
    const auto vars = observed_variables(index, obs);
    add(vars);
  }

  void merge(const PecmStats& other) {
    if (other.dim() != dim() || other.n_pair_.size() != n_pair_.size())
      throw InvalidArgument("cannot merge statistics over different patterns");
    for (std::size_t i = 0; i < n_.size(); ++i) {
      n_[i] += other.n_[i];
      sum_y_[i].merge(other.sum_y_[i]);
      sum_ysq_[i].merge(other.sum_ysq_[i]);
    }
    for (std::size_t e = 0; e < n_pair_.size(); ++e) {
      if (other.n_pair_[e] == 0) continue;
      n_pair_[e] += other.n_pair_[e];
      sum_yy_[e].merge(other.sum_yy_[e]);
      sum_ysq_first_[e].merge(other.sum_ysq_first_[e]);
      sum_ysq_second_[e].merge(other.sum_ysq_second_[e]);
    }
  }

  std::uint64_t count(VarId u) const { return n_[u]; }
  double sum_y(VarId u) const { return sum_y_[u].value(); }
  double sum_ysq(VarId u) const { return sum_ysq_[u].value(); }
  std::uint64_t pair_count(std::size_t entry) const { return n_pair_[entry]; }
  double pair_sum_yy(std::size_t entry) const { return sum_yy_[entry].value(); }
  /// Sum of y_first^2 (resp. y_second^2) over co-observations, where
  /// (first, second) = pattern->entries()[entry].
  double pair_sum_ysq_first(std::size_t entry) const { return sum_ysq_first_[entry].value(); }
  double pair_sum_ysq_second(std::size_t entry) const { return sum_ysq_second_[entry].value(); }

  std::uint64_t pair_count(VarId u, VarId v) const {
    const auto e = pattern_->find(u, v);
    return e < 0 || u == v ? 0 : n_pair_[static_cast<std::size_t>(e)];
  }

 private:
  std::shared_ptr<const EdgePattern> pattern_;
  std::vector<std::uint64_t> n_;
  std::vector<CompensatedSum> sum_y_, sum_ysq_;
  std::vector<std::uint64_t> n_pair_;
  std::vector<CompensatedSum> sum_yy_, sum_ysq_first_, sum_ysq_second_;
};

struct PecmOptions {
  std::uint64_t prune_min_count = 10;
  bool alpha_correction = true;
  double variance_floor = 1e-6;
  /// Multipliers of trace/d tried in order until Sigma_hat + delta I factorizes.
  std::vector<double> boost_schedule{0.0, 1e-8, 1e-6, 1e-4, 1e-2, 1.0, 100.0};
  /// Prior for variables without data: mean = length / speed, sd = cv * mean.
  double prior_speed_mps = 30.0 / 3.6;
  double prior_cv = 0.5;
  Ordering ordering = Ordering::amd;
};

/// Prior travel time (mean, variance) for a link without data.
inline std::pair<double, double> link_prior(double length_m, const PecmOptions& opt = {}) {
  const double mean = length_m / opt.prior_speed_mps;
  const double sd = opt.prior_cv * mean;
  return {mean, sd * sd};
}

/// Corrected partial empirical covariance on the (pruned) pattern.
struct Pecm {
  std::shared_ptr<const EdgePattern> pattern;  // pattern after pruning
  std::vector<double> mu;
  std::vector<double> sigma;                   // per entry of `pattern`, without boost
  std::vector<bool> observed;
  double diag_boost = 0.0;
  std::vector<std::pair<VarId, VarId>> pruned;
  std::vector<VarId> floored;

  std::size_t dim() const noexcept { return mu.size(); }

  /// Sigma_hat + delta I.
  std::vector<double> boosted() const {
    auto s = sigma;
    for (VarId u = 0; u < dim(); ++u) s[pattern->diag_entry(u)] += diag_boost;
    return s;
  }
  PatternMatrix boosted_matrix() const { return PatternMatrix(pattern, boosted()); }
};

/// trace(Sigma_hat) / d, the unit of the boost schedule.
inline double boost_scale(const Pecm& pecm) {
  double trace = 0.0;
  for (VarId u = 0; u < pecm.dim(); ++u) trace += pecm.sigma[pecm.pattern->diag_entry(u)];
  return trace / static_cast<double>(pecm.dim());
}

/// Smallest scheduled boost for which the zero-filled Sigma_hat + delta I
/// factorizes. That matrix is itself a completion, so the fit is bounded.
inline double certified_boost(const Pecm& pecm, const PecmOptions& opt = {}) {
  const double scale = boost_scale(pecm);
  auto sym = std::make_shared<const SymbolicCholesky>(*pecm.pattern, opt.ordering);
  auto s = pecm.sigma;
  for (double mult : opt.boost_schedule) {
    const double delta = mult * scale;
    for (VarId u = 0; u < pecm.dim(); ++u) s[pecm.pattern->diag_entry(u)] = pecm.sigma[pecm.pattern->diag_entry(u)] + delta;
    if (try_factorize(sym, s)) return delta;
  }
  throw NotPositiveDefinite(0, "partial covariance is not positive definite for any diagonal boost");
}

inline Pecm assemble_pecm(const PecmStats& stats, const VariableIndex& index, const RoadNetwork& network,
                          const PecmOptions& opt = {}) {
  const auto& full = *stats.pattern();
  const std::size_t d = full.dim();
  if (d == 0) throw InvalidArgument("cannot assemble a covariance over zero variables");
  Pecm out;
  out.mu.assign(d, 0.0);
  out.observed.assign(d, false);
  std::vector<double> var(d, 0.0), second(d, 0.0);
  for (VarId u = 0; u < d; ++u) {
    const auto n = stats.count(u);
    if (n == 0) {
      const auto [m, v] = link_prior(network.length_m[index.link_of(u)], opt);
      out.mu[u] = m;
      var[u] = v;
      continue;
    }
    out.observed[u] = true;
    const double nn = static_cast<double>(n);
    out.mu[u] = stats.sum_y(u) / nn;
    second[u] = stats.sum_ysq(u) / nn;
    var[u] = second[u] - out.mu[u] * out.mu[u];
    if (!(var[u] >= opt.variance_floor)) {
      var[u] = opt.variance_floor;
      out.floored.push_back(u);
    }
  }

  std::vector<std::pair<VarId, VarId>> kept;
  std::vector<double> kept_value;
  for (std::size_t e = 0; e < full.entry_count(); ++e) {
    const auto [u, v] = full.entries()[e];
    if (u == v) continue;
    const auto n = stats.pair_count(e);
    if (n < opt.prune_min_count || n == 0) {
      out.pruned.emplace_back(u, v);
      continue;
    }
    const double nn = static_cast<double>(n);
    const double eyy = stats.pair_sum_yy(e) / nn;
    double alpha = 1.0;
    if (opt.alpha_correction) {
      const double cu = stats.pair_sum_ysq_first(e) / nn;
      const double cv = stats.pair_sum_ysq_second(e) / nn;
      if (cu > 0.0 && cv > 0.0) alpha = std::sqrt(second[u] * second[v] / (cu * cv));
    }
    kept.emplace_back(u, v);
    kept_value.push_back(alpha * eyy - out.mu[u] * out.mu[v]);
  }

  out.pattern = std::make_shared<const EdgePattern>(EdgePattern::from_pairs(d, kept));
  out.sigma.assign(out.pattern->entry_count(), 0.0);
  for (VarId u = 0; u < d; ++u) out.sigma[out.pattern->diag_entry(u)] = var[u];
  for (std::size_t k = 0; k < kept.size(); ++k)
    out.sigma[static_cast<std::size_t>(out.pattern->find(kept[k].first, kept[k].second))] = kept_value[k];

  out.diag_boost = certified_boost(out, opt);
  return out;
}

// ---------------------------------------------------------------------------
// Precision fit

enum class InverseMode { selected, exact_columns, sketch };
enum class FitStatus { converged, not_converged, line_search_failed, unbounded };

inline const char* to_string(FitStatus s) {
  switch (s) {
    case FitStatus::converged: return "converged";
    case FitStatus::not_converged: return "not_converged";
    case FitStatus::line_search_failed: return "line_search_failed";
    case FitStatus::unbounded: return "unbounded";
  }
  return "unknown";
}

struct FitOptions {
  std::size_t max_iter = 500;
  /// Stop when max over the pattern of |Sigma_hat_uv - (S^-1)_uv| <= tol.
  double tol = 1e-6;
  InverseMode inverse = InverseMode::selected;
  std::size_t sketch_k = 256;
  std::uint64_t seed = 1;
  std::size_t memory = 10;
  double armijo = 1e-4;
  std::size_t max_backtracks = 60;
  /// The objective is declared unbounded below (no positive-definite
  /// completion of Sigma_hat) once some S_uu * Sigma_hat_uu exceeds this.
  double unbounded_ratio = 1e8;
  /// When nonzero, also declare the objective unbounded if stationarity at
  /// this iteration is still above its starting value.
  std::size_t divergence_check_iter = 0;
  Ordering ordering = Ordering::amd;
};

struct FitDiagnostics {
  FitStatus status = FitStatus::not_converged;
  std::size_t iterations = 0;
  double stationarity = std::numeric_limits<double>::infinity();
  double objective = std::numeric_limits<double>::infinity();
  std::vector<double> objective_history;
  std::size_t factorizations = 0;
};

struct PrecisionModel {
  std::shared_ptr<const EdgePattern> pattern;
  std::vector<double> S;  // per pattern entry
  std::vector<double> mu;
  std::vector<bool> observed;
  double diag_boost = 0.0;
  std::size_t prune_count = 0;
  FitDiagnostics diagnostics;

  std::size_t dim() const noexcept { return mu.size(); }
  PatternMatrix matrix() const { return PatternMatrix(pattern, S); }
};

namespace detail {

struct Evaluation {
  std::optional<CholeskyFactor> factor;
  double f = std::numeric_limits<double>::infinity();
};

inline Evaluation evaluate_objective(const std::shared_ptr<const SymbolicCholesky>& sym, const PatternMatrix& sigma,
                                     std::span<const double> x) {
  Evaluation ev;
  ev.factor = try_factorize(sym, x);
  if (ev.factor) ev.f = -ev.factor->log_det() + sigma.frobenius_dot(x);
  return ev;
}

inline std::vector<double> inverse_on_pattern(const CholeskyFactor& factor, const EdgePattern& pattern,
                                              const FitOptions& opt, std::size_t iteration) {
  switch (opt.inverse) {
    case InverseMode::selected:
      return factor.pattern_inverse();
    case InverseMode::exact_columns:
      return exact_inverse_entries(factor, pattern.entries());
    case InverseMode::sketch: {
      const auto sk = build_sketch(factor, opt.sketch_k, opt.seed + 0x9E3779B97F4A7C15ULL * (iteration + 1));
      std::vector<double> w(pattern.entry_count());
      for (std::size_t e = 0; e < w.size(); ++e)
        w[e] = inverse_entry(sk, pattern.entries()[e].first, pattern.entries()[e].second);
      return w;
    }
  }
  return {};
}

}  // namespace detail

/// Pattern-constrained Gaussian MLE. L-BFGS over the pattern entries with a
/// diagonal Newton preconditioner and backtracking; trial points whose
/// Cholesky fails count as +infinity. The sketch inverse mode uses plain
/// preconditioned gradient steps since its gradients are noisy.
inline PrecisionModel fit_precision(const Pecm& pecm, const FitOptions& opt = {}) {
  const auto& pattern = *pecm.pattern;
  const std::size_t d = pattern.dim();
  const std::size_t ne = pattern.entry_count();
  const PatternMatrix sigma(pecm.pattern, pecm.boosted());
  const auto& ents = pattern.entries();
  auto sym = std::make_shared<const SymbolicCholesky>(pattern, opt.ordering);

  PrecisionModel model;
  model.pattern = pecm.pattern;
  model.mu = pecm.mu;
  model.observed = pecm.observed;
  model.diag_boost = pecm.diag_boost;
  model.prune_count = pecm.pruned.size();
  auto& diag = model.diagnostics;

  std::vector<double> x(ne, 0.0);
  for (VarId u = 0; u < d; ++u) x[pattern.diag_entry(u)] = 1.0 / sigma.diag(u);

  auto ev = detail::evaluate_objective(sym, sigma, x);
  ++diag.factorizations;
  if (!ev.factor) throw NotPositiveDefinite(0, "initial precision is not positive definite");

  std::vector<double> w, g(ne), h(ne), dir(ne), xn(ne), gn(ne);
  auto gradient = [&](const CholeskyFactor& f, std::size_t it, std::vector<double>& grad, double& stat) {
    w = detail::inverse_on_pattern(f, pattern, opt, it);
    stat = 0.0;
    for (std::size_t e = 0; e < ne; ++e) {
      const double r = sigma.values[e] - w[e];
      grad[e] = (ents[e].first == ents[e].second ? 1.0 : 2.0) * r;
      stat = std::max(stat, std::abs(r));
    }
  };
  auto precondition = [&] {
    for (std::size_t e = 0; e < ne; ++e) {
      const auto [u, v] = ents[e];
      const double wuu = w[pattern.diag_entry(u)];
      if (u == v) {
        h[e] = wuu * wuu;
      } else {
        const double wvv = w[pattern.diag_entry(v)];
        h[e] = 2.0 * (w[e] * w[e] + wuu * wvv);
      }
      if (!(h[e] > 0.0)) h[e] = 1.0;
    }
  };

  double stat = 0.0;
  gradient(*ev.factor, 0, g, stat);
  diag.objective_history.push_back(ev.f);
  std::deque<std::pair<std::vector<double>, std::vector<double>>> memory;
  const bool quasi_newton = opt.inverse != InverseMode::sketch;

  auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };

  std::size_t it = 0;
  const double stat0 = stat;
  diag.status = FitStatus::not_converged;
  while (true) {
    diag.stationarity = stat;
    diag.objective = ev.f;
    if (stat <= opt.tol) {
      diag.status = FitStatus::converged;
      break;
    }
    if (opt.divergence_check_iter > 0 && it == opt.divergence_check_iter && stat > stat0) {
      diag.status = FitStatus::unbounded;
      break;
    }
    if (it >= opt.max_iter) break;
    ++it;

    // Two-loop recursion with H0 = diag(1/h).
    precondition();
    dir = g;
    std::vector<double> alphas(memory.size());
    for (std::size_t k = memory.size(); k-- > 0;) {
      const auto& [s, y] = memory[k];
      alphas[k] = dot(s, dir) / dot(y, s);
      for (std::size_t i = 0; i < ne; ++i) dir[i] -= alphas[k] * y[i];
    }
    for (std::size_t i = 0; i < ne; ++i) dir[i] /= h[i];
    for (std::size_t k = 0; k < memory.size(); ++k) {
      const auto& [s, y] = memory[k];
      const double beta = dot(y, dir) / dot(y, s);
      for (std::size_t i = 0; i < ne; ++i) dir[i] += s[i] * (alphas[k] - beta);
    }
    for (double& v : dir) v = -v;
    double slope = dot(g, dir);
    if (!(slope < 0.0)) {
      memory.clear();
      for (std::size_t i = 0; i < ne; ++i) dir[i] = -g[i] / h[i];
      slope = dot(g, dir);
    }

    double step = 1.0;
    detail::Evaluation trial;
    bool accepted = false, have_gradient = false;
    double stat_new = 0.0;
    for (std::size_t bt = 0; bt <= opt.max_backtracks; ++bt) {
      for (std::size_t i = 0; i < ne; ++i) xn[i] = x[i] + step * dir[i];
      trial = detail::evaluate_objective(sym, sigma, xn);
      ++diag.factorizations;
      if (trial.factor) {
        const double df = trial.f - ev.f;
        if (df <= opt.armijo * step * slope) {
          accepted = true;
          break;
        }
        // Close to the optimum f changes by less than its own rounding error.
        // Judge the step by the trapezoid estimate of the decrease,
        // step * (slope + g(xn).dir) / 2, which needs only gradients.
        if (quasi_newton && std::abs(df) <= 1e-10 * (1.0 + std::abs(ev.f))) {
          gradient(*trial.factor, it, gn, stat_new);
          have_gradient = true;
          if (dot(gn, dir) <= (1.0 - 2.0 * opt.armijo) * -slope) {
            accepted = true;
            break;
          }
        }
      }
      step *= 0.5;
    }
    if (!accepted) {
      // A sketched gradient stops being a descent direction once the iterate
      // is within sketch noise of the optimum; that is a stall, not a failure.
      diag.status = quasi_newton ? FitStatus::line_search_failed : FitStatus::not_converged;
      break;
    }
    if (!have_gradient) gradient(*trial.factor, it, gn, stat_new);
    if (quasi_newton) {
      std::vector<double> s(ne), y(ne);
      for (std::size_t i = 0; i < ne; ++i) {
        s[i] = xn[i] - x[i];
        y[i] = gn[i] - g[i];
      }
      if (dot(s, y) > 1e-16 * std::sqrt(dot(s, s) * dot(y, y))) {
        memory.emplace_back(std::move(s), std::move(y));
        if (memory.size() > opt.memory) memory.pop_front();
      }
    }
    x.swap(xn);
    g.swap(gn);
    ev = std::move(trial);
    stat = stat_new;
    diag.objective_history.push_back(ev.f);
    bool runaway = false;
    for (VarId u = 0; u < d && !runaway; ++u) runaway = x[pattern.diag_entry(u)] * sigma.diag(u) > opt.unbounded_ratio;
    if (runaway) {
      diag.stationarity = stat;
      diag.objective = ev.f;
      diag.status = FitStatus::unbounded;
      break;
    }
  }
  diag.iterations = it;
  model.S = std::move(x);
  return model;
}

/// Fits with the smallest boost from `schedule` whose fit converges.
/// assemble_pecm certifies a boost by factorizing the zero-filled matrix, but
/// the objective only needs Sigma_hat + delta I to have some positive-definite
/// completion, which often holds with a far smaller delta. Smaller candidates
/// are tried first; the certified boost is the fallback. Updates
/// pecm.diag_boost to the boost used.
inline PrecisionModel fit_with_boost(Pecm& pecm, const FitOptions& opt = {}, const PecmOptions& popt = {}) {
  const double certified = pecm.diag_boost;
  const double scale = boost_scale(pecm);
  // Without a completion f falls without bound while the gradient grows;
  // bounded problems have cut stationarity by orders of magnitude by then.
  FitOptions trial = opt;
  if (trial.divergence_check_iter == 0) trial.divergence_check_iter = 100;
  for (double mult : popt.boost_schedule) {
    const double delta = mult * scale;
    if (delta >= certified * (1.0 - 1e-12)) break;
    pecm.diag_boost = delta;
    auto model = fit_precision(pecm, trial);
    if (model.diagnostics.status == FitStatus::converged) return model;
  }
  pecm.diag_boost = certified;
  return fit_precision(pecm, opt);
}

// ---------------------------------------------------------------------------
// Persistence: header (d:u64, nnz:u64, delta:f64, prune_count:u64), then
// (u:u32, v:u32, value:f64) triplets with u <= v, little-endian.

inline void write_sparse_matrix(std::ostream& os, const EdgePattern& pattern, std::span<const double> values,
                                double delta, std::size_t prune_count) {
  binary::write_le<std::uint64_t>(os, pattern.dim());
  binary::write_le<std::uint64_t>(os, pattern.entry_count());
  binary::write_le<double>(os, delta);
  binary::write_le<std::uint64_t>(os, prune_count);
  for (std::size_t e = 0; e < pattern.entry_count(); ++e) {
    binary::write_le<std::uint32_t>(os, pattern.entries()[e].first);
    binary::write_le<std::uint32_t>(os, pattern.entries()[e].second);
    binary::write_le<double>(os, values[e]);
  }
}

struct SparseMatrixFile {
  std::shared_ptr<const EdgePattern> pattern;
  std::vector<double> values;
  double delta = 0.0;
  std::size_t prune_count = 0;
};

inline SparseMatrixFile read_sparse_matrix(std::istream& is) {
  SparseMatrixFile out;
  const auto d = binary::read_le<std::uint64_t>(is);
  const auto nnz = binary::read_le<std::uint64_t>(is);
  out.delta = binary::read_le<double>(is);
  out.prune_count = binary::read_le<std::uint64_t>(is);
  if (d > std::numeric_limits<std::uint32_t>::max() || nnz > d * d) throw ParseError("implausible matrix header");
  std::vector<std::pair<VarId, VarId>> pairs(nnz);
  std::vector<double> vals(nnz);
  for (std::size_t k = 0; k < nnz; ++k) {
    pairs[k].first = binary::read_le<std::uint32_t>(is);
    pairs[k].second = binary::read_le<std::uint32_t>(is);
    vals[k] = binary::read_le<double>(is);
    if (pairs[k].first > pairs[k].second || pairs[k].second >= d) throw ParseError("bad matrix triplet");
  }
  out.pattern = std::make_shared<const EdgePattern>(EdgePattern::from_pairs(d, pairs));
  if (out.pattern->entry_count() != nnz) throw ParseError("matrix file omits diagonal entries or repeats pairs");
  out.values.assign(nnz, 0.0);
  for (std::size_t k = 0; k < nnz; ++k)
    out.values[static_cast<std::size_t>(out.pattern->find(pairs[k].first, pairs[k].second))] = vals[k];
  return out;
}

inline nlohmann::json diagnostics_json(const FitDiagnostics& d) {
  return {{"status", to_string(d.status)},
          {"iterations", d.iterations},
          {"stationarity", d.stationarity},
          {"objective", d.objective},
          {"factorizations", d.factorizations},
          {"objective_history", d.objective_history}};
}

inline void save_pecm(const std::string& path, const Pecm& pecm) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  write_sparse_matrix(out, *pecm.pattern, pecm.sigma, pecm.diag_boost, pecm.pruned.size());
  std::ofstream side(path + ".json", std::ios::binary);
  if (!side) throw IoError("cannot write " + path + ".json");
  nlohmann::json pruned = nlohmann::json::array();
  for (auto [u, v] : pecm.pruned) pruned.push_back({u, v});
  side << nlohmann::json{{"mu", pecm.mu},
                         {"observed", pecm.observed},
                         {"diag_boost", pecm.diag_boost},
                         {"floored", pecm.floored},
                         {"pruned", std::move(pruned)}}
              .dump()
       << '\n';
}

inline Pecm load_pecm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  auto m = read_sparse_matrix(in);
  std::ifstream side(path + ".json");
  if (!side) throw IoError("cannot open " + path + ".json");
  Pecm p;
  try {
    nlohmann::json j;
    side >> j;
    p.mu = j.at("mu").get<std::vector<double>>();
    p.observed = j.at("observed").get<std::vector<bool>>();
    p.floored = j.at("floored").get<std::vector<VarId>>();
    for (const auto& pr : j.at("pruned")) p.pruned.emplace_back(pr.at(0).get<VarId>(), pr.at(1).get<VarId>());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ".json: " + e.what());
  }
  p.pattern = m.pattern;
  p.sigma = std::move(m.values);
  p.diag_boost = m.delta;
  if (p.mu.size() != p.pattern->dim()) throw ParseError(path + ": sidecar dimension mismatch");
  return p;
}

inline void save_precision(const std::string& path, const PrecisionModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  write_sparse_matrix(out, *model.pattern, model.S, model.diag_boost, model.prune_count);
  std::ofstream side(path + ".json", std::ios::binary);
  if (!side) throw IoError("cannot write " + path + ".json");
  side << nlohmann::json{{"mu", model.mu}, {"observed", model.observed}, {"diagnostics", diagnostics_json(model.diagnostics)}}
              .dump()
       << '\n';
}

inline PrecisionModel load_precision(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  auto m = read_sparse_matrix(in);
  std::ifstream side(path + ".json");
  if (!side) throw IoError("cannot open " + path + ".json");
  PrecisionModel model;
  try {
    nlohmann::json j;
    side >> j;
    model.mu = j.at("mu").get<std::vector<double>>();
    model.observed = j.at("observed").get<std::vector<bool>>();
    const auto& dj = j.at("diagnostics");
    const auto status = dj.at("status").get<std::string>();
    model.diagnostics.status = status == "converged"            ? FitStatus::converged
                               : status == "not_converged"      ? FitStatus::not_converged
                               : status == "line_search_failed" ? FitStatus::line_search_failed
                                                                : FitStatus::unbounded;
    model.diagnostics.iterations = dj.at("iterations").get<std::size_t>();
    model.diagnostics.stationarity = dj.at("stationarity").get<double>();
    model.diagnostics.objective = dj.at("objective").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ".json: " + e.what());
  }
  model.pattern = m.pattern;
  model.S = std::move(m.values);
  model.diag_boost = m.delta;
  model.prune_count = m.prune_count;
  if (model.mu.size() != model.pattern->dim()) throw ParseError(path + ": sidecar dimension mismatch");
  return model;
}

}  // namespace mmgmrf
