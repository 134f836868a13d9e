#pragma once

// Raw trajectories (timestamped link offsets) and their compressed per-link
// (state, travel time) form, with JSON Lines persistence.

#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmgmrf/error.hpp"
#include "mmgmrf/network.hpp"

namespace mmgmrf {

struct GpsPoint {
  double t = 0.0;
  LinkId link = 0;
  double offset = 0.0;
};

struct Trajectory {
  std::string id;
  std::vector<GpsPoint> points;
};

/// One pass of a vehicle along a path: states s_i and travel times y_i per link.
struct CompressedObservation {
  std::string id;
  std::vector<LinkId> path;
  std::vector<int> states;
  std::vector<double> travel_times;

  std::size_t size() const noexcept { return path.size(); }

  void push(LinkId link, int state, double tt) {
    path.push_back(link);
    states.push_back(state);
    travel_times.push_back(tt);
  }

  void validate(const RoadNetwork& network) const {
    if (states.size() != path.size() || travel_times.size() != path.size())
      throw InvalidArgument("observation " + id + ": field lengths differ");
    for (std::size_t i = 0; i < path.size(); ++i) {
      if (path[i] >= network.size())
        throw InvalidArgument("observation " + id + ": unknown link " + std::to_string(path[i]));
      if (states[i] < 0 || states[i] >= network.modes[path[i]])
        throw InvalidArgument("observation " + id + ": state out of range on link " +
                              std::to_string(path[i]));
      if (!(travel_times[i] > 0.0))
        throw InvalidArgument("observation " + id + ": non-positive travel time");
      if (i > 0 && !network.adjacent(path[i - 1], path[i]))
        throw InvalidArgument("observation " + id + ": links " + std::to_string(path[i - 1]) + " and " +
                              std::to_string(path[i]) + " are not adjacent");
    }
  }
};

/// Flat (variable, value) view of an observation.
inline std::vector<std::pair<VarId, double>> observed_variables(const VariableIndex& index,
                                                                const CompressedObservation& obs) {
  std::vector<std::pair<VarId, double>> out;
  out.reserve(obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i)
    out.emplace_back(index.beta(obs.path[i], obs.states[i]), obs.travel_times[i]);
  return out;
}

// ---------------------------------------------------------------------------
// JSON Lines

inline nlohmann::json to_json(const Trajectory& tr) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : tr.points) pts.push_back({{"t", p.t}, {"link", p.link}, {"offset", p.offset}});
  return {{"id", tr.id}, {"points", std::move(pts)}};
}

inline nlohmann::json to_json(const CompressedObservation& obs) {
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t i = 0; i < obs.size(); ++i)
    arr.push_back({{"link", obs.path[i]}, {"state", obs.states[i]}, {"tt", obs.travel_times[i]}});
  return {{"id", obs.id}, {"obs", std::move(arr)}};
}

namespace detail {

template <class T, class F>
std::vector<T> read_jsonl(std::istream& is, const char* what, F&& convert) {
  std::vector<T> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(convert(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string(what) + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace detail

inline std::vector<Trajectory> read_trajectories(std::istream& is) {
  return detail::read_jsonl<Trajectory>(is, "trace", [](const nlohmann::json& j) {
    Trajectory tr;
    tr.id = j.at("id").get<std::string>();
    for (const auto& p : j.at("points"))
      tr.points.push_back({p.at("t").get<double>(), p.at("link").get<LinkId>(), p.at("offset").get<double>()});
    return tr;
  });
}

inline std::vector<CompressedObservation> read_observations(std::istream& is) {
  return detail::read_jsonl<CompressedObservation>(is, "observation", [](const nlohmann::json& j) {
    CompressedObservation obs;
    obs.id = j.at("id").get<std::string>();
    for (const auto& o : j.at("obs"))
      obs.push(o.at("link").get<LinkId>(), o.at("state").get<int>(), o.at("tt").get<double>());
    return obs;
  });
}

template <class Range>
void write_jsonl(std::ostream& os, const Range& items) {
  for (const auto& item : items) os << to_json(item).dump() << '\n';
}

}  // namespace mmgmrf
