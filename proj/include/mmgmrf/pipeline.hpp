#pragma once

// Offline pipeline stages (compress, learn) and the on-disk model bundle.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmgmrf/error.hpp"
#include "mmgmrf/factor.hpp"
#include "mmgmrf/gmrf.hpp"
#include "mmgmrf/inference.hpp"
#include "mmgmrf/markov.hpp"
#include "mmgmrf/network.hpp"
#include "mmgmrf/observation.hpp"
#include "mmgmrf/parallel.hpp"
#include "mmgmrf/stopgo.hpp"

namespace mmgmrf {

struct LearnConfig {
  int modes = 2;
  std::uint64_t prune_min_count = 10;
  double smoothing = 0.5;
  double epsilon = 0.3;
  std::size_t sketch_k = 0;  // 0: derive from epsilon and d
  std::size_t max_sketch_k = 512;
  double fit_tol = 1e-6;
  std::size_t fit_max_iter = 500;
  InverseMode inverse = InverseMode::selected;
  std::uint64_t seed = 1;
  unsigned threads = 1;

  void validate() const {
    if (modes < 1) throw InvalidArgument("m must be >= 1");
    if (!(smoothing >= 0.0)) throw InvalidArgument("smoothing must be >= 0");
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw InvalidArgument("epsilon must lie in (0, 1)");
    if (!(fit_tol > 0.0)) throw InvalidArgument("fit tolerance must be positive");
  }

  std::size_t sketch_width(std::size_t d) const {
    if (sketch_k > 0) return sketch_k;
    return std::min(jl_width(epsilon, d), max_sketch_k);
  }
};

inline InverseMode parse_inverse_mode(const std::string& s) {
  if (s == "selected") return InverseMode::selected;
  if (s == "exact") return InverseMode::exact_columns;
  if (s == "sketch") return InverseMode::sketch;
  throw InvalidArgument("unknown inverse mode '" + s + "' (selected, exact, sketch)");
}

inline const char* inverse_mode_name(InverseMode m) {
  switch (m) {
    case InverseMode::selected: return "selected";
    case InverseMode::exact_columns: return "exact";
    case InverseMode::sketch: return "sketch";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Stages

/// Compressed observations in input order (each trajectory may yield several runs).
inline std::vector<CompressedObservation> compress_trajectories(const RoadNetwork& network,
                                                                const std::vector<Trajectory>& trajectories,
                                                                unsigned threads = 1, DecomposeStats* stats = nullptr) {
  std::vector<std::vector<CompressedObservation>> per(trajectories.size());
  std::vector<DecomposeStats> st(trajectories.size());
  parallel_for(trajectories.size(), threads,
               [&](std::size_t i) { per[i] = decompose_trajectory(network, trajectories[i], {}, &st[i]); });
  std::vector<CompressedObservation> out;
  for (std::size_t i = 0; i < per.size(); ++i) {
    for (auto& o : per[i]) out.push_back(std::move(o));
    if (stats) {
      stats->links_seen += st[i].links_seen;
      stats->links_dropped += st[i].links_dropped;
      stats->breaks += st[i].breaks;
    }
  }
  return out;
}

/// Moment statistics over a canonical (id-sorted) order, folded in fixed
/// chunks, so the result is independent of input order and thread count.
inline PecmStats accumulate_stats(const VariableIndex& index, std::shared_ptr<const EdgePattern> pattern,
                                  std::vector<const CompressedObservation*> obs, unsigned threads = 1) {
  std::stable_sort(obs.begin(), obs.end(), [](auto* a, auto* b) { return a->id < b->id; });
  PecmStats total(pattern);
  chunked_reduce(
      obs.size(), 4096, threads, total,
      [&](std::size_t b, std::size_t e) {
        PecmStats part(pattern);
        for (std::size_t i = b; i < e; ++i) part.add(index, *obs[i]);
        return part;
      },
      [](PecmStats& acc, const PecmStats& part) { acc.merge(part); });
  return total;
}

struct LearnedModel {
  MarkovCounts counts;
  MarkovParams markov;
  Pecm pecm;
  PrecisionModel precision;
  std::optional<CholeskyFactor> factor;
  std::optional<ProjectionSketch> sketch;
};

inline LearnedModel learn_model(const RoadNetwork& network, const std::vector<CompressedObservation>& observations,
                                const LearnConfig& cfg) {
  cfg.validate();
  for (const auto& o : observations) o.validate(network);
  LearnedModel out;
  for (const auto& o : observations) out.counts.add(network, o);
  out.markov = fit_markov(network, out.counts, cfg.smoothing);

  const auto index = build_variable_index(network);
  auto pattern = std::make_shared<const EdgePattern>(build_edge_pattern(network, index));
  std::vector<const CompressedObservation*> ptrs;
  ptrs.reserve(observations.size());
  for (const auto& o : observations) ptrs.push_back(&o);
  const auto stats = accumulate_stats(index, pattern, std::move(ptrs), cfg.threads);

  PecmOptions popt;
  popt.prune_min_count = cfg.prune_min_count;
  out.pecm = assemble_pecm(stats, index, network, popt);

  FitOptions fopt;
  fopt.tol = cfg.fit_tol;
  fopt.max_iter = cfg.fit_max_iter;
  fopt.inverse = cfg.inverse;
  fopt.seed = cfg.seed;
  out.precision = fit_with_boost(out.pecm, fopt, popt);
  out.factor = factorize(out.precision.matrix());
  const std::size_t k = cfg.sketch_width(index.size());
  out.sketch = build_sketch(*out.factor, k, cfg.seed, cfg.epsilon);
  return out;
}

// ---------------------------------------------------------------------------
// Model directory: model.json, markov.json, pecm.bin(.json),
// precision.bin(.json), sketch.bin

inline void save_model(const std::filesystem::path& dir, const LearnedModel& model, const LearnConfig& cfg) {
  std::filesystem::create_directories(dir);
  save_markov((dir / "markov.json").string(), model.markov);
  save_pecm((dir / "pecm.bin").string(), model.pecm);
  save_precision((dir / "precision.bin").string(), model.precision);
  {
    std::ofstream out(dir / "sketch.bin", std::ios::binary);
    if (!out) throw IoError("cannot write " + (dir / "sketch.bin").string());
    write_sketch(out, *model.sketch);
  }
  std::ofstream manifest(dir / "model.json", std::ios::binary);
  if (!manifest) throw IoError("cannot write " + (dir / "model.json").string());
  manifest << nlohmann::json{{"m", cfg.modes},
                             {"seed", cfg.seed},
                             {"prune_min_count", cfg.prune_min_count},
                             {"smoothing", cfg.smoothing},
                             {"epsilon", cfg.epsilon},
                             {"sketch_k", model.sketch->width},
                             {"fit_tol", cfg.fit_tol},
                             {"inverse", inverse_mode_name(cfg.inverse)},
                             {"d", model.precision.dim()}}
                  .dump(1)
           << '\n';
}

inline nlohmann::json read_json_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open " + p.string());
  try {
    nlohmann::json j;
    in >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(p.string() + ": " + e.what());
  }
}

/// Loads the bundle for online inference; the factor is rebuilt from S.
inline InferenceModel load_inference_model(const std::filesystem::path& dir, std::shared_ptr<const RoadNetwork> network,
                                           bool with_factor = true) {
  const auto manifest = read_json_file(dir / "model.json");
  const int m = manifest.value("m", 2);
  for (int ml : network->modes)
    if (ml != m) throw InvalidArgument("network modes do not match the model (m = " + std::to_string(m) + ")");
  InferenceModel model;
  model.index = build_variable_index(*network);
  model.markov = load_markov((dir / "markov.json").string(), *network);
  model.precision = load_precision((dir / "precision.bin").string());
  if (model.precision.dim() != model.index.size())
    throw InvalidArgument("model has " + std::to_string(model.precision.dim()) + " variables but the network has " +
                          std::to_string(model.index.size()));
  std::ifstream sk(dir / "sketch.bin", std::ios::binary);
  if (!sk) throw IoError("cannot open " + (dir / "sketch.bin").string());
  model.sketch = read_sketch(sk);
  if (model.sketch->dim != model.index.size()) throw ParseError("sketch dimension does not match the model");
  if (with_factor) model.factor = factorize(model.precision.matrix());
  model.network = std::move(network);
  return model;
}

}  // namespace mmgmrf
