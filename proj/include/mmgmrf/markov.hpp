#pragma once

// Per-link discrete state chain: initial distributions pi^l and transition
// matrices T^{u->l} estimated from smoothed counts, ancestral sampling and
// sequence log-probabilities.

#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mmgmrf/error.hpp"
#include "mmgmrf/network.hpp"
#include "mmgmrf/numeric.hpp"
#include "mmgmrf/observation.hpp"

namespace mmgmrf {

using Edge = std::pair<LinkId, LinkId>;

/// Raw initial-state and transition counts. Merging is plain addition, so
/// shards can be counted independently.
struct MarkovCounts {
  std::map<LinkId, std::vector<double>> initial;
  std::map<Edge, std::vector<double>> transitions;  // row-major m_u x m_l

  void add(const RoadNetwork& network, const CompressedObservation& obs) {
    if (obs.size() == 0) return;
    auto& init = initial[obs.path[0]];
    init.resize(static_cast<std::size_t>(network.modes[obs.path[0]]), 0.0);
    init[static_cast<std::size_t>(obs.states[0])] += 1.0;
    for (std::size_t i = 1; i < obs.size(); ++i) {
      const LinkId u = obs.path[i - 1], l = obs.path[i];
      const auto ml = static_cast<std::size_t>(network.modes[l]);
      auto& t = transitions[{u, l}];
      t.resize(static_cast<std::size_t>(network.modes[u]) * ml, 0.0);
      t[static_cast<std::size_t>(obs.states[i - 1]) * ml + static_cast<std::size_t>(obs.states[i])] += 1.0;
    }
  }

  void merge(const MarkovCounts& other) {
    for (const auto& [l, c] : other.initial) {
      auto& mine = initial[l];
      mine.resize(c.size(), 0.0);
      for (std::size_t i = 0; i < c.size(); ++i) mine[i] += c[i];
    }
    for (const auto& [e, c] : other.transitions) {
      auto& mine = transitions[e];
      mine.resize(c.size(), 0.0);
      for (std::size_t i = 0; i < c.size(); ++i) mine[i] += c[i];
    }
  }

  /// Number of observed transitions across edge u -> l.
  double transit_count(LinkId u, LinkId l) const {
    auto it = transitions.find({u, l});
    if (it == transitions.end()) return 0.0;
    double s = 0.0;
    for (double c : it->second) s += c;
    return s;
  }
};

/// pi^l and T^{u->l}. Links and edges without data are not stored and use a
/// uniform distribution.
class MarkovParams {
 public:
  MarkovParams() = default;
  explicit MarkovParams(const RoadNetwork& network, double smoothing = 0.0)
      : modes_(network.modes), smoothing_(smoothing) {}

  double smoothing() const noexcept { return smoothing_; }
  int modes(LinkId l) const { return modes_.at(l); }
  std::size_t link_count() const noexcept { return modes_.size(); }

  const std::map<LinkId, std::vector<double>>& stored_pi() const noexcept { return pi_; }
  const std::map<Edge, std::vector<double>>& stored_T() const noexcept { return T_; }

  /// Initial distribution at l (uniform when unseen).
  std::vector<double> pi(LinkId l) const {
    auto it = pi_.find(l);
    if (it != pi_.end()) return it->second;
    return std::vector<double>(static_cast<std::size_t>(modes(l)), 1.0 / modes(l));
  }
  double pi(LinkId l, int s) const {
    auto it = pi_.find(l);
    if (it != pi_.end()) return it->second[static_cast<std::size_t>(s)];
    return 1.0 / modes(l);
  }

  /// T^{u->l}_{a,b} (uniform row when the edge is unseen).
  double T(LinkId u, LinkId l, int a, int b) const {
    auto it = T_.find({u, l});
    if (it != T_.end()) return it->second[static_cast<std::size_t>(a * modes(l) + b)];
    return 1.0 / modes(l);
  }
  /// Row-major m_u x m_l matrix.
  std::vector<double> T(LinkId u, LinkId l) const {
    auto it = T_.find({u, l});
    if (it != T_.end()) return it->second;
    const auto n = static_cast<std::size_t>(modes(u) * modes(l));
    return std::vector<double>(n, 1.0 / modes(l));
  }

  void set_pi(LinkId l, std::vector<double> p) {
    if (p.size() != static_cast<std::size_t>(modes(l))) throw InvalidArgument("pi size does not match m_l");
    pi_[l] = std::move(p);
  }
  void set_T(LinkId u, LinkId l, std::vector<double> t) {
    if (t.size() != static_cast<std::size_t>(modes(u) * modes(l)))
      throw InvalidArgument("transition matrix size does not match m_u x m_l");
    T_[{u, l}] = std::move(t);
  }

 private:
  std::vector<int> modes_;
  double smoothing_ = 0.0;
  std::map<LinkId, std::vector<double>> pi_;
  std::map<Edge, std::vector<double>> T_;
};

namespace detail {

inline void normalize_smoothed(std::vector<double>& v, double smoothing) {
  double total = 0.0;
  for (double& x : v) {
    x += smoothing;
    total += x;
  }
  if (total > 0.0) {
    for (double& x : v) x /= total;
  } else {
    for (double& x : v) x = 1.0 / static_cast<double>(v.size());
  }
}

}  // namespace detail

inline MarkovParams fit_markov(const RoadNetwork& network, const MarkovCounts& counts, double smoothing = 0.5) {
  if (!(smoothing >= 0.0)) throw InvalidArgument("smoothing must be nonnegative");
  MarkovParams params(network, smoothing);
  for (const auto& [l, c] : counts.initial) {
    auto p = c;
    detail::normalize_smoothed(p, smoothing);
    params.set_pi(l, std::move(p));
  }
  for (const auto& [e, c] : counts.transitions) {
    const auto ml = static_cast<std::size_t>(network.modes[e.second]);
    auto t = c;
    for (std::size_t r = 0; r * ml < t.size(); ++r) {
      std::vector<double> row(t.begin() + static_cast<std::ptrdiff_t>(r * ml),
                              t.begin() + static_cast<std::ptrdiff_t>((r + 1) * ml));
      detail::normalize_smoothed(row, smoothing);
      std::copy(row.begin(), row.end(), t.begin() + static_cast<std::ptrdiff_t>(r * ml));
    }
    params.set_T(e.first, e.second, std::move(t));
  }
  return params;
}

inline MarkovParams fit_markov(const RoadNetwork& network, std::span<const CompressedObservation> observations,
                               double smoothing = 0.5) {
  MarkovCounts counts;
  for (const auto& obs : observations) counts.add(network, obs);
  return fit_markov(network, counts, smoothing);
}

/// Ancestral (forward) sampling of the states along a path.
template <class Rng>
std::vector<int> sample_state_sequence(const MarkovParams& params, std::span<const LinkId> path, Rng& rng) {
  std::vector<int> states(path.size());
  if (path.empty()) return states;
  const auto p0 = params.pi(path[0]);
  states[0] = static_cast<int>(sample_categorical(std::span<const double>(p0), rng));
  std::vector<double> row;
  for (std::size_t i = 1; i < path.size(); ++i) {
    const int ml = params.modes(path[i]);
    row.resize(static_cast<std::size_t>(ml));
    for (int b = 0; b < ml; ++b) row[static_cast<std::size_t>(b)] = params.T(path[i - 1], path[i], states[i - 1], b);
    states[i] = static_cast<int>(sample_categorical(std::span<const double>(row), rng));
  }
  return states;
}

/// log pi + sum log T; -infinity when any factor is zero.
inline double state_sequence_logprob(const MarkovParams& params, std::span<const LinkId> path,
                                     std::span<const int> states) {
  if (path.size() != states.size()) throw InvalidArgument("path and state lengths differ");
  if (path.empty()) return 0.0;
  constexpr double neg_inf = -std::numeric_limits<double>::infinity();
  double p = params.pi(path[0], states[0]);
  if (p <= 0.0) return neg_inf;
  double lp = std::log(p);
  for (std::size_t i = 1; i < path.size(); ++i) {
    p = params.T(path[i - 1], path[i], states[i - 1], states[i]);
    if (p <= 0.0) return neg_inf;
    lp += std::log(p);
  }
  return lp;
}

// ---------------------------------------------------------------------------
// JSON: {"pi": {"<link>": [..]}, "T": {"<u>-><l>": [[..]]}, "smoothing": x}

inline nlohmann::json to_json(const MarkovParams& params) {
  nlohmann::json pi = nlohmann::json::object();
  for (const auto& [l, p] : params.stored_pi()) pi[std::to_string(l)] = p;
  nlohmann::json t = nlohmann::json::object();
  for (const auto& [e, m] : params.stored_T()) {
    const auto ml = static_cast<std::size_t>(params.modes(e.second));
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r * ml < m.size(); ++r)
      rows.push_back(std::vector<double>(m.begin() + static_cast<std::ptrdiff_t>(r * ml),
                                         m.begin() + static_cast<std::ptrdiff_t>((r + 1) * ml)));
    t[std::to_string(e.first) + "->" + std::to_string(e.second)] = std::move(rows);
  }
  return {{"pi", std::move(pi)}, {"T", std::move(t)}, {"smoothing", params.smoothing()}};
}

inline MarkovParams markov_from_json(const nlohmann::json& j, const RoadNetwork& network) {
  try {
    MarkovParams params(network, j.value("smoothing", 0.0));
    auto link_id = [&](const std::string& s) {
      const unsigned long v = std::stoul(s);
      if (v >= network.size()) throw InvalidArgument("markov model references unknown link " + s);
      return static_cast<LinkId>(v);
    };
    for (const auto& [key, val] : j.at("pi").items()) params.set_pi(link_id(key), val.get<std::vector<double>>());
    for (const auto& [key, val] : j.at("T").items()) {
      const auto arrow = key.find("->");
      if (arrow == std::string::npos) throw ParseError("bad transition key '" + key + "'");
      std::vector<double> flat;
      for (const auto& row : val)
        for (double x : row) flat.push_back(x);
      params.set_T(link_id(key.substr(0, arrow)), link_id(key.substr(arrow + 2)), std::move(flat));
    }
    return params;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("markov model: ") + e.what());
  } catch (const std::logic_error& e) {
    throw ParseError(std::string("markov model: ") + e.what());
  }
}

inline void save_markov(const std::string& path, const MarkovParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << to_json(params).dump(1) << '\n';
}

inline MarkovParams load_markov(const std::string& path, const RoadNetwork& network) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return markov_from_json(j, network);
}

}  // namespace mmgmrf
