#pragma once

// Validation metrics: held-out path log-likelihood, p-p calibration curve with
// over/under-estimation integrals, KL against the exact mixture, and
// training-time scaling.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmgmrf/error.hpp"
#include "mmgmrf/inference.hpp"
#include "mmgmrf/numeric.hpp"

namespace mmgmrf {

/// log of the mixture density at t, density floored at 1e-300.
inline double log_density(const TravelTimeDistribution& dist, double t) {
  return std::log(std::max(pdf(dist, t), 1e-300));
}

inline double total_time(const CompressedObservation& obs) {
  CompensatedSum s;
  for (double y : obs.travel_times) s.add(y);
  return s.value();
}

/// Log-likelihood of the observation's total time under the inferred mixture.
inline double path_loglik(const InferenceModel& model, const CompressedObservation& obs, std::size_t K,
                          std::uint64_t seed, std::uint64_t query_id, const InferenceOptions& opt = {}) {
  PathQuery q;
  q.path = obs.path;
  q.K = K;
  q.seed = seed;
  q.query_id = query_id;
  return log_density(infer_distribution(model, q, opt), total_time(obs));
}

struct PpCurve {
  std::vector<double> alpha;
  std::vector<double> f;
  double a = 0.0;  // integral of max(f - alpha, 0): overestimation of travel time
  double b = 0.0;  // integral of max(alpha - f, 0): underestimation
};

namespace detail {

inline double trapezoid(std::span<const double> x, std::span<const double> y) {
  CompensatedSum s;
  for (std::size_t i = 1; i < x.size(); ++i) s.add(0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]));
  return s.value();
}

inline PpCurve finish_pp(std::vector<double> alpha, std::vector<double> f) {
  PpCurve c;
  std::vector<double> over(alpha.size()), under(alpha.size());
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    over[i] = std::max(f[i] - alpha[i], 0.0);
    under[i] = std::max(alpha[i] - f[i], 0.0);
  }
  c.a = trapezoid(alpha, over);
  c.b = trapezoid(alpha, under);
  c.alpha = std::move(alpha);
  c.f = std::move(f);
  return c;
}

inline std::vector<double> alpha_grid(std::size_t points) {
  std::vector<double> a(points);
  for (std::size_t i = 0; i < points; ++i) a[i] = static_cast<double>(i) / static_cast<double>(points - 1);
  return a;
}

}  // namespace detail

/// p-p curve of the values P_p(z_p) (predicted cdf at the observed time):
/// f(alpha) = fraction of values <= alpha on a `points` grid.
inline PpCurve pp_metrics(std::span<const double> values, std::size_t points = 101) {
  if (values.empty()) throw InvalidArgument("pp metrics need at least one value");
  std::vector<double> sorted(values.begin(), values.end());
  for (double v : sorted)
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("pp values must lie in [0, 1]");
  std::sort(sorted.begin(), sorted.end());
  auto alpha = detail::alpha_grid(points);
  std::vector<double> f(points);
  for (std::size_t i = 0; i < points; ++i)
    f[i] = static_cast<double>(std::upper_bound(sorted.begin(), sorted.end(), alpha[i]) - sorted.begin()) /
           static_cast<double>(sorted.size());
  return detail::finish_pp(std::move(alpha), std::move(f));
}

/// Same integrals for a given calibration function f.
inline PpCurve pp_metrics_curve(const std::function<double(double)>& f_of_alpha, std::size_t points = 101) {
  auto alpha = detail::alpha_grid(points);
  std::vector<double> f(points);
  for (std::size_t i = 0; i < points; ++i) f[i] = f_of_alpha(alpha[i]);
  return detail::finish_pp(std::move(alpha), std::move(f));
}

/// KL(exact || sampled) for each K, using the query seed for sampling.
inline std::vector<double> kl_vs_exact(const InferenceModel& model, std::span<const LinkId> path,
                                       std::span<const std::size_t> K_list, std::uint64_t seed,
                                       const InferenceOptions& opt = {}) {
  const auto exact = exact_mixture(model, path, opt);
  std::vector<double> out;
  for (std::size_t i = 0; i < K_list.size(); ++i) {
    PathQuery q;
    q.path.assign(path.begin(), path.end());
    q.K = K_list[i];
    q.seed = seed;
    q.query_id = i;
    out.push_back(kl_divergence(exact, infer_distribution(model, q, opt)));
  }
  return out;
}

struct ScalingRow {
  std::size_t d = 0;
  double seconds = 0.0;
};

struct ScalingReport {
  std::vector<ScalingRow> rows;
  double slope = 0.0;

  std::string csv() const {
    std::string s = "d,seconds\n";
    for (const auto& r : rows) s += std::to_string(r.d) + "," + std::to_string(r.seconds) + "\n";
    return s;
  }
};

/// Times `run(size)` (which returns the problem dimension d) for each size and
/// fits the log-log slope of time against d.
inline ScalingReport scaling_report(std::span<const int> sizes, const std::function<std::size_t(int)>& run) {
  if (sizes.size() < 3) throw InvalidArgument("scaling report needs at least three sizes");
  ScalingReport rep;
  std::vector<double> x, y;
  for (int s : sizes) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t d = run(s);
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rep.rows.push_back({d, sec});
    x.push_back(static_cast<double>(d));
    y.push_back(sec);
  }
  rep.slope = loglog_slope(x, y);
  return rep;
}

/// Log-likelihood averages binned by path length I: 1-3, 4-6, 7-10, 11+.
struct LoglikBins {
  static constexpr std::array<const char*, 4> labels{"1-3", "4-6", "7-10", "11+"};
  std::array<CompensatedSum, 4> sum{};
  std::array<std::size_t, 4> count{};
  CompensatedSum total;
  std::size_t n = 0;

  static std::size_t bin(std::size_t len) { return len <= 3 ? 0 : len <= 6 ? 1 : len <= 10 ? 2 : 3; }

  void add(std::size_t path_len, double ll) {
    const auto b = bin(path_len);
    sum[b].add(ll);
    ++count[b];
    total.add(ll);
    ++n;
  }
  double mean() const { return n ? total.value() / static_cast<double>(n) : 0.0; }

  nlohmann::json json() const {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t b = 0; b < 4; ++b)
      j[labels[b]] = {{"count", count[b]}, {"mean", count[b] ? sum[b].value() / static_cast<double>(count[b]) : 0.0}};
    return {{"bins", std::move(j)}, {"mean", mean()}, {"count", n}, {"binning", "path length I: 1-3, 4-6, 7-10, 11+"}};
  }
};

}  // namespace mmgmrf
