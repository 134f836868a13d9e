#pragma once

// Path travel-time distributions: Gaussian mixtures over the path's state
// sequences, either sampled (weights from K ancestral draws, variances from
// the sketch) or enumerated exactly, plus the O(I m^2) exact mean.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmgmrf/error.hpp"
#include "mmgmrf/factor.hpp"
#include "mmgmrf/gmrf.hpp"
#include "mmgmrf/markov.hpp"
#include "mmgmrf/network.hpp"
#include "mmgmrf/numeric.hpp"

namespace mmgmrf {

/// Everything needed online: graph, chain, GMRF mean/precision, and the
/// factor and/or sketch used for variances.
struct InferenceModel {
  std::shared_ptr<const RoadNetwork> network;
  VariableIndex index;
  MarkovParams markov;
  PrecisionModel precision;
  std::optional<CholeskyFactor> factor;
  std::optional<ProjectionSketch> sketch;
  PecmOptions prior;

  /// A link is covered when at least one of its variables had training data.
  bool covered(LinkId l) const {
    for (int s = 0; s < index.modes(l); ++s)
      if (precision.observed[index.beta(l, s)]) return true;
    return false;
  }
};

/// Builds the factor (and optionally a sketch of width k) for a fitted model.
inline InferenceModel make_inference_model(std::shared_ptr<const RoadNetwork> network, MarkovParams markov,
                                           PrecisionModel precision, std::size_t sketch_k = 0,
                                           std::uint64_t sketch_seed = 1, double epsilon = 0.0) {
  InferenceModel m;
  m.index = build_variable_index(*network);
  if (m.index.size() != precision.dim()) throw InvalidArgument("model dimension does not match the network");
  m.network = std::move(network);
  m.markov = std::move(markov);
  m.precision = std::move(precision);
  m.factor = factorize(m.precision.matrix());
  if (sketch_k > 0) m.sketch = build_sketch(*m.factor, sketch_k, sketch_seed, epsilon);
  return m;
}

struct Component {
  double w = 0.0;
  double mu = 0.0;
  double sigma2 = 0.0;
};

enum class Provenance { sampled, exact, stratified };

struct TravelTimeDistribution {
  std::vector<Component> components;
  Provenance provenance = Provenance::sampled;
  std::size_t samples = 0;
  std::vector<LinkId> fallback_links;
  double negative_mass = 0.0;  // P(T < 0); reported, not truncated
};

struct PathQuery {
  std::vector<LinkId> path;
  std::size_t K = 1000;
  std::uint64_t seed = 0;
  std::uint64_t query_id = 0;
  std::optional<double> budget_s;
};

struct InferenceOptions {
  bool allow_fallback = true;
  /// Use the sketch for variances when present; otherwise the exact factor.
  bool prefer_sketch = true;
};

// ---------------------------------------------------------------------------
// Mixture numerics

inline double pdf(const TravelTimeDistribution& dist, double t) {
  double s = 0.0;
  for (const auto& c : dist.components) s += c.w * normal_pdf(t, c.mu, c.sigma2);
  return s;
}

inline double cdf(const TravelTimeDistribution& dist, double t) {
  double s = 0.0;
  for (const auto& c : dist.components) s += c.w * normal_cdf((t - c.mu) / std::sqrt(c.sigma2));
  return std::clamp(s, 0.0, 1.0);
}

inline double mean(const TravelTimeDistribution& dist) {
  CompensatedSum s;
  for (const auto& c : dist.components) s.add(c.w * c.mu);
  return s.value();
}

inline std::pair<double, double> support_range(const TravelTimeDistribution& dist, double sigmas) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& c : dist.components) {
    const double sd = std::sqrt(c.sigma2);
    lo = std::min(lo, c.mu - sigmas * sd);
    hi = std::max(hi, c.mu + sigmas * sd);
  }
  return {lo, hi};
}

/// Smallest t (to 1e-6 s) with cdf(t) >= q.
inline double quantile(const TravelTimeDistribution& dist, double q) {
  if (!(q > 0.0 && q < 1.0)) throw InvalidArgument("quantile level must lie in (0, 1)");
  auto [lo, hi] = support_range(dist, 40.0);
  while (cdf(dist, lo) > q) lo -= (hi - lo);
  while (cdf(dist, hi) < q) hi += (hi - lo);
  while (hi - lo > 1e-7) {
    const double mid = 0.5 * (lo + hi);
    if (cdf(dist, mid) < q) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return hi;
}

/// KL(p || q) by the trapezoid rule on `points` nodes spanning +-6 sigma of
/// both mixtures; densities are floored at 1e-300.
inline double kl_divergence(const TravelTimeDistribution& p, const TravelTimeDistribution& q,
                            std::size_t points = 4096) {
  auto [plo, phi] = support_range(p, 6.0);
  auto [qlo, qhi] = support_range(q, 6.0);
  const double lo = std::min(plo, qlo), hi = std::max(phi, qhi);
  const double h = (hi - lo) / static_cast<double>(points - 1);
  CompensatedSum s;
  for (std::size_t i = 0; i < points; ++i) {
    const double t = lo + h * static_cast<double>(i);
    const double a = std::max(pdf(p, t), 1e-300);
    const double b = std::max(pdf(q, t), 1e-300);
    const double wgt = (i == 0 || i + 1 == points) ? 0.5 : 1.0;
    s.add(wgt * a * std::log(a / b));
  }
  return std::max(0.0, s.value() * h);
}

// ---------------------------------------------------------------------------
// Per-query view of the path: local chain parameters and means, so sampling
// cost does not depend on the network size.

namespace detail {

struct PathView {
  std::vector<int> modes;
  std::vector<double> pi0;
  std::vector<std::vector<double>> T;  // T[i] for the step (i-1) -> i, row-major
  std::vector<std::vector<double>> mean;
  std::vector<bool> fallback;
  std::vector<double> prior_var;
  std::vector<LinkId> fallback_links;
};

inline PathView make_path_view(const InferenceModel& model, std::span<const LinkId> path,
                               const InferenceOptions& opt) {
  if (path.empty()) throw InvalidArgument("query path is empty");
  const auto& net = *model.network;
  for (std::size_t i = 0; i < path.size(); ++i) {
    if (path[i] >= net.size()) throw InvalidArgument("unknown link " + std::to_string(path[i]));
    if (i > 0 && !net.adjacent(path[i - 1], path[i]))
      throw InvalidArgument("links " + std::to_string(path[i - 1]) + " and " + std::to_string(path[i]) +
                            " are not adjacent");
  }
  PathView v;
  const std::size_t n = path.size();
  v.modes.resize(n);
  v.T.resize(n);
  v.mean.resize(n);
  v.fallback.resize(n);
  v.prior_var.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const LinkId l = path[i];
    v.modes[i] = model.index.modes(l);
    if (i == 0) {
      v.pi0 = model.markov.pi(l);
    } else {
      v.T[i] = model.markov.T(path[i - 1], l);
    }
    v.fallback[i] = !model.covered(l);
    v.mean[i].resize(static_cast<std::size_t>(v.modes[i]));
    if (v.fallback[i]) {
      if (!opt.allow_fallback)
        throw UncoveredLink(l, "link " + std::to_string(l) + " has no training data");
      const auto [m, var] = link_prior(net.length_m[l], model.prior);
      std::fill(v.mean[i].begin(), v.mean[i].end(), m);
      v.prior_var[i] = var;
      v.fallback_links.push_back(l);
    } else {
      for (int s = 0; s < v.modes[i]; ++s)
        v.mean[i][static_cast<std::size_t>(s)] = model.precision.mu[model.index.beta(l, s)];
    }
  }
  return v;
}

/// Mean and variance of the path time given a state sequence.
class ComponentEvaluator {
 public:
  ComponentEvaluator(const InferenceModel& model, std::span<const LinkId> path, const PathView& view, bool use_sketch)
      : model_(model), path_(path), view_(view), use_sketch_(use_sketch && model.sketch.has_value()) {
    if (!use_sketch_ && !model.factor) throw InvalidArgument("model has neither a sketch nor a factor");
  }

  Component operator()(std::span<const int> states) {
    Component c;
    selector_.clear();
    double var_prior = 0.0;
    CompensatedSum mu;
    for (std::size_t i = 0; i < path_.size(); ++i) {
      mu.add(view_.mean[i][static_cast<std::size_t>(states[i])]);
      if (view_.fallback[i]) {
        var_prior += view_.prior_var[i];
      } else {
        selector_.push_back(model_.index.beta(path_[i], states[i]));
      }
    }
    c.mu = mu.value();
    double q = 0.0;
    if (!selector_.empty()) q = use_sketch_ ? quad_form(*model_.sketch, selector_) : model_.factor->quad_form(selector_);
    c.sigma2 = std::max(q + var_prior, 1e-12);
    return c;
  }

 private:
  const InferenceModel& model_;
  std::span<const LinkId> path_;
  const PathView& view_;
  bool use_sketch_;
  std::vector<VarId> selector_;
};

inline std::vector<int> canonical_states(std::vector<int> states, const PathView& view) {
  for (std::size_t i = 0; i < states.size(); ++i)
    if (view.fallback[i]) states[i] = 0;
  return states;
}

inline void finish(TravelTimeDistribution& dist) {
  double total = 0.0;
  for (const auto& c : dist.components) total += c.w;
  for (auto& c : dist.components) c.w /= total;
  dist.negative_mass = cdf(dist, 0.0);
}

}  // namespace detail

/// Sampled mixture: K ancestral draws of the state sequence, deduplicated into
/// components weighted by their empirical frequency. Deterministic in
/// (seed, query_id).
inline TravelTimeDistribution infer_distribution(const InferenceModel& model, const PathQuery& query,
                                                 const InferenceOptions& opt = {}) {
  if (query.K == 0) throw InvalidArgument("K must be >= 1");
  const auto view = detail::make_path_view(model, query.path, opt);
  auto rng = make_rng(query.seed, query.query_id);
  const std::size_t n = query.path.size();
  std::map<std::vector<int>, std::size_t> counts;
  std::vector<int> states(n);
  std::vector<double> row;
  for (std::size_t k = 0; k < query.K; ++k) {
    states[0] = static_cast<int>(sample_categorical(std::span<const double>(view.pi0), rng));
    for (std::size_t i = 1; i < n; ++i) {
      const auto m = static_cast<std::size_t>(view.modes[i]);
      const double* r = view.T[i].data() + static_cast<std::size_t>(states[i - 1]) * m;
      states[i] = static_cast<int>(sample_categorical(std::span<const double>(r, m), rng));
    }
    ++counts[detail::canonical_states(states, view)];
  }
  TravelTimeDistribution dist;
  dist.provenance = Provenance::sampled;
  dist.samples = query.K;
  dist.fallback_links = view.fallback_links;
  detail::ComponentEvaluator eval(model, query.path, view, opt.prefer_sketch);
  for (const auto& [seq, c] : counts) {
    auto comp = eval(seq);
    comp.w = static_cast<double>(c) / static_cast<double>(query.K);
    dist.components.push_back(comp);
  }
  detail::finish(dist);
  return dist;
}

/// Visits every state sequence of the path with its exact chain probability.
template <class F>
void enumerate_sequences(const detail::PathView& view, F&& visit, std::size_t limit = std::size_t{1} << 20) {
  const std::size_t n = view.modes.size();
  double total = 1.0;
  for (int m : view.modes) {
    total *= m;
    if (total > static_cast<double>(limit))
      throw PathTooLong("path has more than " + std::to_string(limit) + " state sequences");
  }
  std::vector<int> states(n, 0);
  std::vector<double> prob(n);  // probability of states[0..i]
  auto refresh = [&](std::size_t from) {
    for (std::size_t i = from; i < n; ++i) {
      if (i == 0) {
        prob[0] = view.pi0[static_cast<std::size_t>(states[0])];
      } else {
        const auto m = static_cast<std::size_t>(view.modes[i]);
        prob[i] = prob[i - 1] * view.T[i][static_cast<std::size_t>(states[i - 1]) * m + static_cast<std::size_t>(states[i])];
      }
    }
  };
  refresh(0);
  while (true) {
    visit(std::span<const int>(states), prob[n - 1]);
    std::size_t i = n;
    while (i > 0 && states[i - 1] + 1 >= view.modes[i - 1]) --i;
    if (i == 0) return;
    ++states[i - 1];
    std::fill(states.begin() + static_cast<std::ptrdiff_t>(i), states.end(), 0);
    refresh(i - 1);
  }
}

/// Full m^I mixture with exact weights and exact variances (requires the factor).
inline TravelTimeDistribution exact_mixture(const InferenceModel& model, std::span<const LinkId> path,
                                            const InferenceOptions& opt = {}) {
  if (!model.factor) throw InvalidArgument("exact mixture needs the Cholesky factor");
  const auto view = detail::make_path_view(model, path, opt);
  const std::size_t n = path.size();

  // Dense covariance block over every variable of the path's covered links.
  std::vector<VarId> vars;
  for (std::size_t i = 0; i < n; ++i)
    if (!view.fallback[i])
      for (int s = 0; s < view.modes[i]; ++s) vars.push_back(model.index.beta(path[i], s));
  std::sort(vars.begin(), vars.end());
  vars.erase(std::unique(vars.begin(), vars.end()), vars.end());
  const auto nv = static_cast<Eigen::Index>(vars.size());
  Eigen::MatrixXd block(nv, nv);
  for (Eigen::Index b = 0; b < nv; ++b) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.factor->dim()));
    e[vars[static_cast<std::size_t>(b)]] = 1.0;
    const Eigen::VectorXd col = model.factor->solve(e);
    for (Eigen::Index a = 0; a < nv; ++a) block(a, b) = col[vars[static_cast<std::size_t>(a)]];
  }
  auto pos = [&](VarId u) {
    return static_cast<Eigen::Index>(std::lower_bound(vars.begin(), vars.end(), u) - vars.begin());
  };
  double prior_var = 0.0;
  for (std::size_t i = 0; i < n; ++i) prior_var += view.prior_var[i];

  TravelTimeDistribution dist;
  dist.provenance = Provenance::exact;
  dist.fallback_links = view.fallback_links;
  std::map<std::vector<int>, double> weights;
  enumerate_sequences(view, [&](std::span<const int> states, double p) {
    if (p > 0.0) weights[detail::canonical_states({states.begin(), states.end()}, view)] += p;
  });
  std::vector<Eigen::Index> sel;
  for (const auto& [states, p] : weights) {
    Component c;
    CompensatedSum mu;
    sel.clear();
    for (std::size_t i = 0; i < n; ++i) {
      mu.add(view.mean[i][static_cast<std::size_t>(states[i])]);
      if (!view.fallback[i]) sel.push_back(pos(model.index.beta(path[i], states[i])));
    }
    double v = prior_var;
    for (auto a : sel)
      for (auto b : sel) v += block(a, b);
    c.w = p;
    c.mu = mu.value();
    c.sigma2 = std::max(v, 1e-12);
    dist.components.push_back(c);
  }
  detail::finish(dist);
  return dist;
}

/// Deterministic stand-in for sampling: exact weights rounded to multiples of
/// 1/K (debug and testing aid).
inline TravelTimeDistribution stratified_mixture(const InferenceModel& model, std::span<const LinkId> path,
                                                 std::size_t K, const InferenceOptions& opt = {}) {
  auto exact = exact_mixture(model, path, opt);
  TravelTimeDistribution dist;
  dist.provenance = Provenance::stratified;
  dist.samples = K;
  dist.fallback_links = exact.fallback_links;
  for (auto c : exact.components) {
    const double rounded = std::round(c.w * static_cast<double>(K));
    if (rounded <= 0.0) continue;
    c.w = rounded;
    dist.components.push_back(c);
  }
  if (dist.components.empty()) throw InvalidArgument("K too small for a stratified mixture");
  detail::finish(dist);
  return dist;
}

/// E[T] by forward propagation of the state marginals; O(I m^2).
inline double exact_mean(const InferenceModel& model, std::span<const LinkId> path, const InferenceOptions& opt = {}) {
  const auto view = detail::make_path_view(model, path, opt);
  CompensatedSum total;
  std::vector<double> p = view.pi0;
  for (std::size_t i = 0; i < path.size(); ++i) {
    if (i > 0) {
      const auto m = static_cast<std::size_t>(view.modes[i]);
      std::vector<double> q(m, 0.0);
      for (std::size_t a = 0; a < p.size(); ++a)
        for (std::size_t b = 0; b < m; ++b) q[b] += p[a] * view.T[i][a * m + b];
      p = std::move(q);
    }
    for (std::size_t s = 0; s < p.size(); ++s) total.add(p[s] * view.mean[i][s]);
  }
  return total.value();
}

// ---------------------------------------------------------------------------
// Query JSON

inline PathQuery query_from_json(const nlohmann::json& j, std::size_t default_K = 1000,
                                 std::uint64_t default_seed = 0) {
  try {
    PathQuery q;
    q.path = j.at("path").get<std::vector<LinkId>>();
    q.K = j.value("K", default_K);
    q.seed = j.value("seed", default_seed);
    if (j.contains("budget_s") && !j.at("budget_s").is_null()) q.budget_s = j.at("budget_s").get<double>();
    return q;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("query: ") + e.what());
  }
}

inline nlohmann::json response_json(const TravelTimeDistribution& dist, std::optional<double> budget_s) {
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : dist.components) comps.push_back({{"w", c.w}, {"mu", c.mu}, {"sigma2", c.sigma2}});
  nlohmann::json out{{"components", std::move(comps)},
                     {"mean", mean(dist)},
                     {"quantiles", {{"0.5", quantile(dist, 0.5)}, {"0.9", quantile(dist, 0.9)}}},
                     {"fallback_links", dist.fallback_links},
                     {"negative_mass", dist.negative_mass}};
  if (budget_s) out["p_on_time"] = cdf(dist, *budget_s);
  return out;
}

}  // namespace mmgmrf
