#pragma once

// Stop-and-go compression of a link trace: piecewise-constant nonnegative
// speeds fitted by l1-penalised least squares, BIC choice of the penalty, and
// per-link (state, travel time) extraction along a trajectory.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mmgmrf/error.hpp"
#include "mmgmrf/network.hpp"
#include "mmgmrf/observation.hpp"

namespace mmgmrf {

/// Samples (t_j, x_j), j = 0..J, on one link.
struct LinkTrace {
  LinkId link = 0;
  std::vector<double> t;
  std::vector<double> x;

  std::size_t intervals() const noexcept { return t.empty() ? 0 : t.size() - 1; }
};

/// Least-squares system A v = b with A[i][k] = dt_k for k <= i and
/// b[i] = x_{i+1} - x_0. Stored implicitly through dt.
struct LsSystem {
  std::vector<double> dt;
  std::vector<double> b;

  std::size_t size() const noexcept { return b.size(); }

  Eigen::MatrixXd dense_matrix() const {
    const auto n = static_cast<Eigen::Index>(size());
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index k = 0; k <= i; ++k) a(i, k) = dt[static_cast<std::size_t>(k)];
    return a;
  }

  std::vector<double> apply(std::span<const double> v) const {
    std::vector<double> out(size());
    double acc = 0.0;
    for (std::size_t i = 0; i < size(); ++i) {
      acc += dt[i] * v[i];
      out[i] = acc;
    }
    return out;
  }

  std::vector<double> apply_transpose(std::span<const double> r) const {
    std::vector<double> out(size());
    double acc = 0.0;
    for (std::size_t k = size(); k-- > 0;) {
      acc += r[k];
      out[k] = dt[k] * acc;
    }
    return out;
  }

  double rss(std::span<const double> v) const {
    const auto fit = apply(v);
    double s = 0.0;
    for (std::size_t i = 0; i < size(); ++i) s += (fit[i] - b[i]) * (fit[i] - b[i]);
    return s;
  }
};

inline LsSystem build_ls_system(const LinkTrace& trace) {
  if (trace.t.size() != trace.x.size()) throw InvalidArgument("trace time/offset lengths differ");
  if (trace.t.size() < 2) throw TooFewSamples("link trace needs at least two samples");
  LsSystem sys;
  const std::size_t j = trace.intervals();
  sys.dt.resize(j);
  sys.b.resize(j);
  for (std::size_t k = 0; k < j; ++k) {
    sys.dt[k] = trace.t[k + 1] - trace.t[k];
    if (!(sys.dt[k] > 0.0))
      throw NonMonotonicTimestamps("timestamps must be strictly increasing on link " + std::to_string(trace.link));
    sys.b[k] = trace.x[k + 1] - trace.x[0];
  }
  return sys;
}

/// Minimiser of 1/2 ||A v - b||^2 + lambda * sum(v) over v >= 0.
///
/// With z = A v the feasible set is 0 <= z_0 <= ... <= z_{J-1} and the penalty
/// is linear in z, so the problem is an isotonic regression of b - lambda * c
/// (pool-adjacent-violators) followed by clipping at zero. Exact in O(J).
inline std::vector<double> solve_lasso(const LsSystem& sys, double lambda) {
  if (!(lambda >= 0.0)) throw InvalidArgument("lambda must be nonnegative");
  const std::size_t n = sys.size();
  std::vector<double> target(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double c = (k + 1 < n) ? 1.0 / sys.dt[k] - 1.0 / sys.dt[k + 1] : 1.0 / sys.dt[k];
    target[k] = sys.b[k] - lambda * c;
  }

  struct Block {
    double sum;
    std::size_t count;
    double mean() const { return sum / static_cast<double>(count); }
  };
  std::vector<Block> blocks;
  blocks.reserve(n);
  for (double y : target) {
    blocks.push_back({y, 1});
    while (blocks.size() > 1 && blocks[blocks.size() - 2].mean() >= blocks.back().mean()) {
      blocks[blocks.size() - 2].sum += blocks.back().sum;
      blocks[blocks.size() - 2].count += blocks.back().count;
      blocks.pop_back();
    }
  }
  std::vector<double> z;
  z.reserve(n);
  for (const auto& blk : blocks) z.insert(z.end(), blk.count, std::max(0.0, blk.mean()));

  std::vector<double> v(n);
  double prev = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    v[k] = (z[k] - prev) / sys.dt[k];
    prev = z[k];
  }
  return v;
}

/// Largest violation of the optimality conditions of the nonnegative problem:
/// g = A'(Av - b) + lambda must vanish where v > 0 and be >= 0 where v = 0.
inline double kkt_residual(const LsSystem& sys, std::span<const double> v, double lambda) {
  auto r = sys.apply(v);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] -= sys.b[i];
  const auto g = sys.apply_transpose(r);
  double worst = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) {
    if (v[k] < 0.0) worst = std::max(worst, -v[k]);
    const double gk = g[k] + lambda;
    worst = std::max(worst, v[k] > 0.0 ? std::abs(gk) : std::max(0.0, -gk));
  }
  return worst;
}

/// 30 log-spaced values from lambda_max = max(A'b) (all-zero solution) down to
/// lambda_max * 1e-4.
inline std::vector<double> default_lambda_grid(const LsSystem& sys, std::size_t count = 30) {
  const auto atb = sys.apply_transpose(sys.b);
  double lmax = 0.0;
  for (double a : atb) lmax = std::max(lmax, std::abs(a));
  if (lmax <= 0.0) return {0.0};
  std::vector<double> grid(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double frac = count == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(count - 1);
    grid[i] = lmax * std::pow(1e-4, frac);
  }
  return grid;
}

struct StopCountOptions {
  double min_stop_s = 2.0;
  /// Zero-speed runs separated by a reconstructed displacement of at most
  /// merge_sigmas * sigma_hat belong to the same stop.
  double merge_sigmas = 3.0;
  double sigma_floor_m = 0.25;
};

/// Number of stop phases in a speed profile (see StopCountOptions).
inline int count_stops(const LsSystem& sys, std::span<const double> v, double sigma_hat,
                       const StopCountOptions& opt = {}) {
  const double zero_tol = 1e-9;
  const double merge_dist = opt.merge_sigmas * std::max(sigma_hat, opt.sigma_floor_m);
  int stops = 0;
  bool open = false;
  double span = 0.0;      // duration from the first zero interval of the group
  double pending = 0.0;   // displacement since the group's last zero interval
  double pending_t = 0.0;
  auto close = [&] {
    if (open && span >= opt.min_stop_s - 1e-9) ++stops;
    open = false;
  };
  for (std::size_t k = 0; k < v.size(); ++k) {
    if (v[k] <= zero_tol) {
      if (open) {
        span += pending_t;
      } else {
        open = true;
        span = 0.0;
      }
      span += sys.dt[k];
      pending = pending_t = 0.0;
    } else if (open) {
      pending += v[k] * sys.dt[k];
      pending_t += sys.dt[k];
      if (pending > merge_dist) close();
    }
  }
  close();
  return stops;
}

struct StopGoResult {
  std::vector<double> speeds;
  int stop_count = 0;
  double travel_time = 0.0;  // sample span t_J - t_0; decompose_trajectory extends it to link boundaries
  double lambda_used = 0.0;
  double bic = 0.0;
  std::size_t df = 0;
  double rss = 0.0;
  double sigma_hat = 0.0;
};

inline double bic_score(double rss, std::size_t df, std::size_t n) {
  const double nn = static_cast<double>(n);
  const double floor = 1e-12 * nn;
  return nn * std::log(std::max(rss, floor) / nn) + static_cast<double>(df) * std::log(nn);
}

/// Fits every lambda of the grid and keeps the BIC minimiser (ties go to the
/// larger lambda).
inline StopGoResult select_lambda_bic(const LinkTrace& trace, std::span<const double> grid,
                                      const StopCountOptions& opt = {}) {
  const LsSystem sys = build_ls_system(trace);
  if (grid.empty()) throw InvalidArgument("lambda grid is empty");
  StopGoResult best;
  best.bic = std::numeric_limits<double>::infinity();
  for (double lambda : grid) {
    auto v = solve_lasso(sys, lambda);
    const std::size_t df = static_cast<std::size_t>(std::count_if(v.begin(), v.end(), [](double s) { return s > 0.0; }));
    const double rss = sys.rss(v);
    const double bic = bic_score(rss, df, sys.size());
    if (bic < best.bic) {
      best.bic = bic;
      best.speeds = std::move(v);
      best.lambda_used = lambda;
      best.df = df;
      best.rss = rss;
    }
  }
  const std::size_t dof = sys.size() > best.df ? sys.size() - best.df : 1;
  best.sigma_hat = std::sqrt(best.rss / static_cast<double>(dof));
  best.stop_count = count_stops(sys, best.speeds, best.sigma_hat, opt);
  best.travel_time = trace.t.back() - trace.t.front();
  return best;
}

inline StopGoResult select_lambda_bic(const LinkTrace& trace, const StopCountOptions& opt = {}) {
  const auto grid = default_lambda_grid(build_ls_system(trace));
  return select_lambda_bic(trace, grid, opt);
}

// ---------------------------------------------------------------------------
// Trajectory decomposition

/// Consecutive samples on the same link, in time order. Throws
/// NonMonotonicTimestamps if time does not strictly increase.
inline std::vector<LinkTrace> split_by_link(const Trajectory& tr) {
  std::vector<LinkTrace> out;
  for (std::size_t i = 0; i < tr.points.size(); ++i) {
    const auto& p = tr.points[i];
    if (i > 0 && !(p.t > tr.points[i - 1].t))
      throw NonMonotonicTimestamps("trajectory " + tr.id + ": timestamps must be strictly increasing");
    if (out.empty() || out.back().link != p.link) out.push_back({p.link, {}, {}});
    out.back().t.push_back(p.t);
    out.back().x.push_back(p.offset);
  }
  return out;
}

struct DecomposeStats {
  std::size_t links_seen = 0;
  std::size_t links_dropped = 0;  // fewer than three samples
  std::size_t breaks = 0;         // non-adjacent consecutive links
};

/// Per-link (state, travel time) along a link-contiguous sequence of traces.
/// Interior link boundaries are interpolated between the last sample on one
/// link and the first on the next; the outer entry/exit times are extrapolated
/// with the reconstructed speed, by at most one sampling interval. Links with
/// fewer than three samples are dropped and split the observation into
/// contiguous runs, named "<id>.0", "<id>.1", ... when there is more than one.
inline std::vector<CompressedObservation> decompose_trajectory(const RoadNetwork& network, const std::string& id,
                                                               const std::vector<LinkTrace>& traces,
                                                               const StopCountOptions& opt = {},
                                                               DecomposeStats* stats = nullptr) {
  const std::size_t g = traces.size();
  for (const auto& tr : traces) {
    if (tr.link >= network.size())
      throw InvalidArgument("trajectory " + id + ": unknown link " + std::to_string(tr.link));
    if (tr.t.empty() || tr.t.size() != tr.x.size())
      throw InvalidArgument("trajectory " + id + ": malformed link trace");
  }
  for (std::size_t i = 1; i < g; ++i)
    if (!(traces[i].t.front() > traces[i - 1].t.back()))
      throw NonMonotonicTimestamps("trajectory " + id + ": timestamps must be strictly increasing");

  std::vector<bool> usable(g);
  std::vector<StopGoResult> fits(g);
  for (std::size_t i = 0; i < g; ++i) {
    usable[i] = traces[i].t.size() >= 3;
    if (usable[i]) fits[i] = select_lambda_bic(traces[i], opt);
  }
  std::vector<bool> joined(g > 0 ? g - 1 : 0);
  for (std::size_t i = 0; i + 1 < g; ++i) joined[i] = network.adjacent(traces[i].link, traces[i + 1].link);

  // Boundary between i and i+1 when they are joined.
  std::vector<double> boundary(joined.size(), 0.0);
  for (std::size_t i = 0; i + 1 < g; ++i) {
    if (!joined[i]) continue;
    const double len = network.length_m[traces[i].link];
    const double ta = traces[i].t.back(), tb = traces[i + 1].t.front();
    const double rest = len - std::clamp(traces[i].x.back(), 0.0, len);
    const double ahead = std::clamp(traces[i + 1].x.front(), 0.0, network.length_m[traces[i + 1].link]);
    const double total = rest + ahead;
    boundary[i] = total > 0.0 ? ta + (tb - ta) * rest / total : 0.5 * (ta + tb);
  }

  // Outer entry/exit: least-squares line through the samples of the leading
  // (trailing) go phase, at most six, extended to offset 0 (length). The
  // first reconstructed speed alone carries the full noise of x_0.
  auto line_crossing = [&](std::size_t i, bool at_entry) -> std::optional<double> {
    const auto& tr = traces[i];
    const auto& v = fits[i].speeds;
    const double len = network.length_m[tr.link];
    const std::size_t n = v.size();
    std::size_t count = 1;
    while (count < 6 && count <= n && v[at_entry ? count - 1 : n - count] > 0.0) ++count;
    if (count < 3) return std::nullopt;
    auto sample = [&](std::size_t r) { return at_entry ? r : n - r; };
    double mt = 0.0, mx = 0.0;
    for (std::size_t r = 0; r < count; ++r) {
      mt += tr.t[sample(r)];
      mx += tr.x[sample(r)];
    }
    mt /= static_cast<double>(count);
    mx /= static_cast<double>(count);
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t r = 0; r < count; ++r) {
      sxy += (tr.t[sample(r)] - mt) * (tr.x[sample(r)] - mx);
      sxx += (tr.t[sample(r)] - mt) * (tr.t[sample(r)] - mt);
    }
    const double slope = sxy / sxx;
    if (!(slope > 0.0)) return std::nullopt;
    return mt + ((at_entry ? 0.0 : len) - mx) / slope;
  };
  auto entry_time = [&](std::size_t i) {
    if (i > 0 && joined[i - 1]) return boundary[i - 1];
    const auto& tr = traces[i];
    const double dt0 = tr.t[1] - tr.t[0];
    if (const auto t = line_crossing(i, true)) return std::clamp(*t, tr.t.front() - dt0, tr.t.front());
    const double x0 = std::clamp(tr.x.front(), 0.0, network.length_m[tr.link]);
    const double v0 = fits[i].speeds.front();
    return tr.t.front() - (v0 > 0.0 ? std::min(x0 / v0, dt0) : (x0 > 0.0 ? dt0 : 0.0));
  };
  auto exit_time = [&](std::size_t i) {
    if (i + 1 < g && joined[i]) return boundary[i];
    const auto& tr = traces[i];
    const double dtj = tr.t[tr.t.size() - 1] - tr.t[tr.t.size() - 2];
    if (const auto t = line_crossing(i, false)) return std::clamp(*t, tr.t.back(), tr.t.back() + dtj);
    const double rest = network.length_m[tr.link] - std::clamp(tr.x.back(), 0.0, network.length_m[tr.link]);
    const double vj = fits[i].speeds.back();
    return tr.t.back() + (vj > 0.0 ? std::min(rest / vj, dtj) : (rest > 0.0 ? dtj : 0.0));
  };

  std::vector<CompressedObservation> runs;
  CompressedObservation cur;
  auto flush = [&] {
    if (cur.size() > 0) runs.push_back(std::move(cur));
    cur = CompressedObservation{};
  };
  DecomposeStats local;
  for (std::size_t i = 0; i < g; ++i) {
    ++local.links_seen;
    if (i > 0 && !joined[i - 1]) {
      ++local.breaks;
      flush();
    }
    if (!usable[i]) {
      ++local.links_dropped;
      flush();
      continue;
    }
    const LinkId link = traces[i].link;
    const int state = std::min(fits[i].stop_count, network.modes[link] - 1);
    const double tt = exit_time(i) - entry_time(i);
    cur.push(link, state, tt);
  }
  flush();
  if (runs.size() == 1) {
    runs[0].id = id;
  } else {
    for (std::size_t r = 0; r < runs.size(); ++r) runs[r].id = id + "." + std::to_string(r);
  }
  if (stats) {
    stats->links_seen += local.links_seen;
    stats->links_dropped += local.links_dropped;
    stats->breaks += local.breaks;
  }
  return runs;
}

inline std::vector<CompressedObservation> decompose_trajectory(const RoadNetwork& network, const Trajectory& tr,
                                                               const StopCountOptions& opt = {},
                                                               DecomposeStats* stats = nullptr) {
  return decompose_trajectory(network, tr.id, split_by_link(tr), opt, stats);
}

}  // namespace mmgmrf
