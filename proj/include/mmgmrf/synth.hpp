#pragma once

// Synthetic ground-truth worlds (grid network, Markov chain, GMRF) and
// generative sampling of compressed observations and noisy link traces.

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmgmrf/error.hpp"
#include "mmgmrf/factor.hpp"
#include "mmgmrf/markov.hpp"
#include "mmgmrf/network.hpp"
#include "mmgmrf/numeric.hpp"
#include "mmgmrf/observation.hpp"

namespace mmgmrf {

struct WorldOptions {
  double length_min_m = 100.0, length_max_m = 250.0;
  double speed_min_mps = 8.0, speed_max_mps = 12.0;
  /// Added mean travel time per extra stop.
  double stop_cost_min_s = 20.0, stop_cost_max_s = 40.0;
  /// Marginal coefficient of variation of each variable.
  double cv_min = 0.1, cv_max = 0.2;
  /// Off-diagonal couplings of the unit-diagonal base precision are
  /// -coupling / max(deg_u, deg_v), so every row is diagonally dominant.
  double coupling = 0.9;
  double persistence_min = 0.6, persistence_max = 0.9;
  /// Diagonal-only precision (independent variables).
  bool independent = false;
};

struct GroundTruth {
  std::shared_ptr<const RoadNetwork> network;
  VariableIndex index;
  std::shared_ptr<const EdgePattern> pattern;
  MarkovParams markov;
  std::vector<double> mu;
  PatternMatrix S;
  std::shared_ptr<const CholeskyFactor> factor;
  std::uint64_t seed = 0;

  /// Exact covariance entries of the truth on its pattern.
  std::vector<double> covariance_on_pattern() const { return factor->pattern_inverse(); }
};

namespace synth_streams {
inline constexpr std::uint64_t world = 1;
inline constexpr std::uint64_t trajectory = 2;
inline constexpr std::uint64_t render = 3;
}  // namespace synth_streams

inline GroundTruth generate_world(int grid_w, int grid_h, int m, std::uint64_t seed, const WorldOptions& opt = {}) {
  if (m < 1) throw InvalidArgument("m must be >= 1");
  auto rng = make_rng(seed, synth_streams::world);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double a, double b) { return a + (b - a) * unit(rng); };

  auto net = make_grid_network(grid_w, grid_h, m);
  std::vector<double> free_speed(net.size());
  for (LinkId l = 0; l < net.size(); ++l) {
    net.length_m[l] = uniform(opt.length_min_m, opt.length_max_m);
    free_speed[l] = uniform(opt.speed_min_mps, opt.speed_max_mps);
  }

  GroundTruth truth;
  truth.seed = seed;
  truth.index = build_variable_index(net);
  truth.pattern = std::make_shared<const EdgePattern>(build_edge_pattern(net, truth.index));
  const std::size_t d = truth.index.size();
  const auto& pat = *truth.pattern;

  truth.mu.resize(d);
  for (LinkId l = 0; l < net.size(); ++l) {
    double mean = net.length_m[l] / free_speed[l];
    for (int s = 0; s < m; ++s) {
      if (s > 0) mean += uniform(opt.stop_cost_min_s, opt.stop_cost_max_s);
      truth.mu[truth.index.beta(l, s)] = mean;
    }
  }
  std::vector<double> cv(d);
  for (auto& c : cv) c = uniform(opt.cv_min, opt.cv_max);

  // Base precision with unit diagonal, then D S_base D to hit the target
  // marginal standard deviations cv * mu.
  PatternMatrix base(truth.pattern);
  for (std::size_t e = 0; e < pat.entry_count(); ++e) {
    const auto [u, v] = pat.entries()[e];
    if (u == v) {
      base.values[e] = 1.0;
    } else if (!opt.independent) {
      const auto deg = std::max(pat.row(u).size(), pat.row(v).size()) - 1;
      base.values[e] = -opt.coupling / static_cast<double>(deg);
    }
  }
  auto sym = std::make_shared<const SymbolicCholesky>(pat, Ordering::amd);
  const auto base_factor = factorize(sym, base.values);
  const auto base_inv = base_factor.pattern_inverse();
  std::vector<double> scale(d);
  for (VarId u = 0; u < d; ++u)
    scale[u] = std::sqrt(base_inv[pat.diag_entry(u)]) / (cv[u] * truth.mu[u]);
  truth.S = PatternMatrix(truth.pattern);
  for (std::size_t e = 0; e < pat.entry_count(); ++e) {
    const auto [u, v] = pat.entries()[e];
    truth.S.values[e] = scale[u] * base.values[e] * scale[v];
  }
  truth.factor = std::make_shared<const CholeskyFactor>(factorize(sym, truth.S.values));

  MarkovParams markov(net, 0.0);
  for (LinkId l = 0; l < net.size(); ++l) {
    std::vector<double> p(static_cast<std::size_t>(m));
    double total = 0.0;
    for (auto& x : p) total += (x = uniform(0.2, 1.0));
    for (auto& x : p) x /= total;
    markov.set_pi(l, std::move(p));
  }
  for (LinkId u = 0; u < net.size(); ++u) {
    for (LinkId l : net.downstream[u]) {
      const int mu_ = net.modes[u], ml = net.modes[l];
      std::vector<double> t(static_cast<std::size_t>(mu_ * ml), 0.0);
      for (int a = 0; a < mu_; ++a) {
        double* row = t.data() + a * ml;
        if (ml == 1) {
          row[0] = 1.0;
          continue;
        }
        const int keep = std::min(a, ml - 1);
        const double stay = uniform(opt.persistence_min, opt.persistence_max);
        double rest = 0.0;
        for (int b = 0; b < ml; ++b)
          if (b != keep) rest += (row[b] = uniform(0.2, 1.0));
        for (int b = 0; b < ml; ++b) row[b] = b == keep ? stay : (1.0 - stay) * row[b] / rest;
      }
      markov.set_T(u, l, std::move(t));
    }
  }
  truth.markov = std::move(markov);
  truth.network = std::make_shared<const RoadNetwork>(std::move(net));
  return truth;
}

/// Random walk of path_len links (U-turns only where the grid forces them).
template <class Rng>
std::vector<LinkId> random_walk(const RoadNetwork& net, std::size_t path_len, Rng& rng) {
  if (path_len == 0) throw InvalidArgument("path length must be >= 1");
  if (net.size() == 0) throw InvalidArgument("network has no links");
  std::vector<LinkId> path;
  path.push_back(static_cast<LinkId>(std::uniform_int_distribution<std::size_t>(0, net.size() - 1)(rng)));
  while (path.size() < path_len) {
    const auto& ds = net.downstream[path.back()];
    if (ds.empty()) break;
    path.push_back(ds[std::uniform_int_distribution<std::size_t>(0, ds.size() - 1)(rng)]);
  }
  return path;
}

/// One joint draw Y = mu + P' L^-T z of all variables.
template <class Rng>
std::vector<double> sample_gmrf(const GroundTruth& truth, Rng& rng) {
  const std::size_t d = truth.mu.size();
  std::normal_distribution<double> normal;
  std::vector<double> z(d);
  for (auto& x : z) x = normal(rng);
  truth.factor->solve_upper(z);
  const auto& perm = truth.factor->symbolic().perm();
  std::vector<double> y(d);
  for (std::size_t u = 0; u < d; ++u) y[u] = truth.mu[u] + z[static_cast<std::size_t>(perm[u])];
  return y;
}

inline constexpr double travel_time_floor_s = 0.5;

/// Path, states and travel times drawn from the model. `floor_hits` counts
/// times raised to the 0.5 s floor.
template <class Rng>
CompressedObservation sample_trajectory(const GroundTruth& truth, std::size_t path_len, Rng& rng,
                                        std::size_t* floor_hits = nullptr) {
  CompressedObservation obs;
  obs.path = random_walk(*truth.network, path_len, rng);
  obs.states = sample_state_sequence(truth.markov, obs.path, rng);
  const auto y = sample_gmrf(truth, rng);
  obs.travel_times.resize(obs.path.size());
  for (std::size_t i = 0; i < obs.path.size(); ++i) {
    double t = y[truth.index.beta(obs.path[i], obs.states[i])];
    if (t < travel_time_floor_s) {
      t = travel_time_floor_s;
      if (floor_hits) ++*floor_hits;
    }
    obs.travel_times[i] = t;
  }
  return obs;
}

struct RenderOptions {
  double period_s = 1.0;
  double noise_sigma_m = 2.0;
  double plateau_min_s = 5.0, plateau_max_s = 30.0;
  /// Go-phase speed is kept within [min, max] by narrowing the plateau draw.
  double go_speed_min_mps = 6.0, go_speed_max_mps = 25.0;
  double start_time_s = 0.0;
};

/// Piecewise-linear offset function on one link: breakpoints (t, x).
struct LinkMotion {
  LinkId link = 0;
  std::vector<double> t, x;

  double offset_at(double time) const {
    auto it = std::upper_bound(t.begin(), t.end(), time);
    if (it == t.begin()) return x.front();
    if (it == t.end()) return x.back();
    const auto k = static_cast<std::size_t>(it - t.begin());
    const double a = (time - t[k - 1]) / (t[k] - t[k - 1]);
    return x[k - 1] + a * (x[k] - x[k - 1]);
  }
};

/// Ground-truth motion along the observation: state s renders s zero-speed
/// plateaus at interior offsets, and one go speed per link makes its time
/// equal the observed travel time.
template <class Rng>
std::vector<LinkMotion> render_motion(const RoadNetwork& net, const CompressedObservation& obs, Rng& rng,
                                      const RenderOptions& opt = {}) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<LinkMotion> out;
  double clock = opt.start_time_s;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const LinkId l = obs.path[i];
    const double len = net.length_m[l];
    const double y = obs.travel_times[i];
    const int stops = obs.states[i];
    LinkMotion mo;
    mo.link = l;
    std::vector<double> dur(static_cast<std::size_t>(stops), 0.0);
    if (stops > 0) {
      const double lo = std::max(opt.plateau_min_s * stops, y - len / opt.go_speed_min_mps);
      const double hi = std::min(opt.plateau_max_s * stops, y - len / opt.go_speed_max_mps);
      double total = lo <= hi ? lo + (hi - lo) * unit(rng) : std::clamp(hi, 0.0, y * 0.9);
      // Split the total into per-stop durations with the same bounds.
      double left = total;
      for (int k = 0; k < stops; ++k) {
        const int remaining = stops - k - 1;
        const double a = std::max(opt.plateau_min_s, left - opt.plateau_max_s * remaining);
        const double b = std::min(opt.plateau_max_s, left - opt.plateau_min_s * remaining);
        dur[static_cast<std::size_t>(k)] = remaining == 0 ? left : (a <= b ? a + (b - a) * unit(rng) : left / (remaining + 1));
        left -= dur[static_cast<std::size_t>(k)];
      }
    }
    double stopped = 0.0;
    for (double d : dur) stopped += d;
    const double go_speed = len / (y - stopped);
    // Plateau k sits in the middle 60% of the k-th of `stops` equal slots of [0.1L, 0.9L].
    mo.t.push_back(clock);
    mo.x.push_back(0.0);
    double pos = 0.0;
    for (int k = 0; k < stops; ++k) {
      const double slot = 0.8 * len / stops;
      const double at = 0.1 * len + slot * (k + 0.2 + 0.6 * unit(rng));
      clock += (at - pos) / go_speed;
      mo.t.push_back(clock);
      mo.x.push_back(at);
      clock += dur[static_cast<std::size_t>(k)];
      mo.t.push_back(clock);
      mo.x.push_back(at);
      pos = at;
    }
    clock += (len - pos) / go_speed;
    mo.t.push_back(clock);
    mo.x.push_back(len);
    out.push_back(std::move(mo));
  }
  return out;
}

/// Noisy samples of the motion every period_s (random phase), as a trajectory.
template <class Rng>
Trajectory sample_gps(const std::vector<LinkMotion>& motion, const std::string& id, Rng& rng,
                      const RenderOptions& opt = {}) {
  Trajectory tr;
  tr.id = id;
  if (motion.empty()) return tr;
  std::normal_distribution<double> noise(0.0, opt.noise_sigma_m);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double start = motion.front().t.front();
  const double end = motion.back().t.back();
  std::size_t link = 0;
  for (double t = start + opt.period_s * unit(rng); t < end; t += opt.period_s) {
    while (link + 1 < motion.size() && t >= motion[link].t.back()) ++link;
    const auto& mo = motion[link];
    const double len = mo.x.back();
    double x = mo.offset_at(t);
    if (opt.noise_sigma_m > 0.0) x += noise(rng);
    tr.points.push_back({t, mo.link, std::clamp(x, 0.0, len)});
  }
  return tr;
}

template <class Rng>
Trajectory render_gps_trace(const RoadNetwork& net, const CompressedObservation& obs, Rng& rng,
                            const RenderOptions& opt = {}) {
  const auto motion = render_motion(net, obs, rng, opt);
  return sample_gps(motion, obs.id, rng, opt);
}

/// Ground truth summary for evaluation artifacts.
inline nlohmann::json truth_json(const GroundTruth& truth) {
  nlohmann::json s = nlohmann::json::array();
  for (std::size_t e = 0; e < truth.pattern->entry_count(); ++e)
    s.push_back({truth.pattern->entries()[e].first, truth.pattern->entries()[e].second, truth.S.values[e]});
  return {{"seed", truth.seed}, {"mu", truth.mu}, {"S", std::move(s)}, {"markov", to_json(truth.markov)}};
}

}  // namespace mmgmrf
