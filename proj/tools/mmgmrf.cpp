// mmgmrf: generate -> compress -> learn -> infer -> evaluate.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mmgmrf/mmgmrf.hpp"

namespace fs = std::filesystem;
using namespace mmgmrf;
using nlohmann::json;

namespace {

void log_event(const std::string& stage, const std::string& event, json fields = json::object()) {
  fields["stage"] = stage;
  fields["event"] = event;
  std::cerr << fields.dump() << '\n';
}

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string());
  return out;
}

std::ifstream open_in(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open " + p.string());
  return in;
}

std::pair<int, int> parse_grid(const std::string& s) {
  const auto x = s.find_first_of("xX");
  try {
    if (x == std::string::npos) throw std::invalid_argument(s);
    std::size_t used = 0;
    const int w = std::stoi(s.substr(0, x), &used);
    if (used != x) throw std::invalid_argument(s);
    const int h = std::stoi(s.substr(x + 1), &used);
    if (used != s.size() - x - 1) throw std::invalid_argument(s);
    if (w < 1 || h < 1) throw std::invalid_argument(s);
    return {w, h};
  } catch (const std::logic_error&) {
    throw InvalidArgument("--grid expects WxH with positive integers, got '" + s + "'");
  }
}

struct Globals {
  unsigned threads = 1;
  std::uint64_t seed = 1;
};

// ---------------------------------------------------------------------------

struct GenerateArgs {
  std::string grid = "5x5";
  int m = 2;
  std::size_t trajectories = 1000;
  std::size_t min_len = 3, max_len = 12;
  double period = 1.0, noise = 2.0;
  std::string out = ".";
};

int run_generate(const Globals& g, const GenerateArgs& a) {
  if (a.min_len < 1 || a.max_len < a.min_len) throw InvalidArgument("path lengths must satisfy 1 <= min <= max");
  Timer timer;
  const auto [w, h] = parse_grid(a.grid);
  const auto truth = generate_world(w, h, a.m, g.seed);
  const fs::path dir(a.out);
  fs::create_directories(dir);
  save_network((dir / "network.csv").string(), *truth.network);

  RenderOptions ropt;
  ropt.period_s = a.period;
  ropt.noise_sigma_m = a.noise;
  std::vector<CompressedObservation> obs(a.trajectories);
  std::vector<Trajectory> traces(a.trajectories);
  std::vector<std::size_t> floor_hits(a.trajectories, 0);
  parallel_for(a.trajectories, g.threads, [&](std::size_t i) {
    auto rng = make_rng(g.seed, synth_streams::trajectory, i);
    const auto len = std::uniform_int_distribution<std::size_t>(a.min_len, a.max_len)(rng);
    obs[i] = sample_trajectory(truth, len, rng, &floor_hits[i]);
    obs[i].id = "t" + std::to_string(i);
    auto rrng = make_rng(g.seed, synth_streams::render, i);
    traces[i] = render_gps_trace(*truth.network, obs[i], rrng, ropt);
  });
  std::size_t hits = 0, total = 0;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    hits += floor_hits[i];
    total += obs[i].size();
  }
  const double floor_rate = total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
  if (floor_rate >= 1e-3)
    throw Error(ErrorCategory::config, "WorldRejected",
                "travel-time floor hit on " + std::to_string(floor_rate * 100.0) + "% of links; world rejected");
  {
    auto out = open_out(dir / "traces.jsonl");
    write_jsonl(out, traces);
  }
  {
    auto out = open_out(dir / "truth_observations.jsonl");
    write_jsonl(out, obs);
  }
  {
    auto out = open_out(dir / "truth.json");
    auto j = truth_json(truth);
    j["grid"] = {w, h};
    j["m"] = a.m;
    out << j.dump() << '\n';
  }
  log_event("generate", "done",
            {{"links", truth.network->size()},
             {"d", truth.index.size()},
             {"trajectories", a.trajectories},
             {"floor_hit_rate", floor_rate},
             {"seconds", timer.seconds()}});
  return 0;
}

// ---------------------------------------------------------------------------

struct CompressArgs {
  std::string network, traces, out = "compressed.jsonl";
  int m = 2;
};

int run_compress(const Globals& g, const CompressArgs& a) {
  Timer timer;
  const auto network = load_network(a.network, a.m);
  auto in = open_in(a.traces);
  const auto trajectories = read_trajectories(in);
  DecomposeStats stats;
  const auto obs = compress_trajectories(network, trajectories, g.threads, &stats);
  auto out = open_out(a.out);
  write_jsonl(out, obs);
  std::size_t points = 0;
  for (const auto& t : trajectories) points += t.points.size();
  log_event("compress", "done",
            {{"trajectories", trajectories.size()},
             {"points", points},
             {"observations", obs.size()},
             {"links", stats.links_seen},
             {"links_dropped", stats.links_dropped},
             {"breaks", stats.breaks},
             {"seconds", timer.seconds()}});
  return 0;
}

// ---------------------------------------------------------------------------

struct LearnArgs {
  std::string network, observations, out = "model";
  std::string inverse = "selected";
  LearnConfig cfg;
};

int run_learn(const Globals& g, LearnArgs a) {
  Timer timer;
  a.cfg.seed = g.seed;
  a.cfg.threads = g.threads;
  a.cfg.inverse = parse_inverse_mode(a.inverse);
  const auto network = load_network(a.network, a.cfg.modes);
  if (network.component_count() > 1)
    log_event("learn", "warning", {{"message", "network is disconnected"}, {"components", network.component_count()}});
  auto in = open_in(a.observations);
  const auto obs = read_observations(in);
  const auto model = learn_model(network, obs, a.cfg);
  save_model(a.out, model, a.cfg);
  const auto& dg = model.precision.diagnostics;
  log_event("learn", "done",
            {{"observations", obs.size()},
             {"d", model.precision.dim()},
             {"pruned", model.pecm.pruned.size()},
             {"diag_boost", model.pecm.diag_boost},
             {"fit_status", to_string(dg.status)},
             {"iterations", dg.iterations},
             {"stationarity", dg.stationarity},
             {"sketch_k", model.sketch->width},
             {"fill_ratio", model.factor->fill_ratio()},
             {"seconds", timer.seconds()}});
  if (dg.status == FitStatus::line_search_failed || dg.status == FitStatus::unbounded) return static_cast<int>(ErrorCategory::numeric);
  return 0;
}

// ---------------------------------------------------------------------------

struct InferArgs {
  std::string network, model, query, queries, out;
  int m = 2;
  std::size_t K = 0;
  bool exact = false;
  bool no_fallback = false;
};

int run_infer(const Globals& g, const InferArgs& a) {
  if (a.query.empty() == a.queries.empty()) throw InvalidArgument("give exactly one of --query or --queries");
  Timer load_timer;
  auto network = std::make_shared<const RoadNetwork>(load_network(a.network, a.m));
  const auto model = load_inference_model(a.model, network, a.exact);
  log_event("infer", "loaded", {{"d", model.index.size()}, {"seconds", load_timer.seconds()}});

  std::vector<json> requests;
  if (!a.query.empty()) {
    try {
      requests.push_back(json::parse(a.query));
    } catch (const json::exception& e) {
      throw ParseError(std::string("--query: ") + e.what());
    }
  } else {
    auto in = open_in(a.queries);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        requests.push_back(json::parse(line));
      } catch (const json::exception& e) {
        throw ParseError(a.queries + " line " + std::to_string(lineno) + ": " + e.what());
      }
    }
  }
  InferenceOptions opt;
  opt.allow_fallback = !a.no_fallback;
  std::vector<json> responses(requests.size());
  std::vector<double> latency(requests.size());
  parallel_for(requests.size(), g.threads, [&](std::size_t i) {
    Timer t;
    auto q = query_from_json(requests[i], a.K ? a.K : 1000, g.seed);
    if (a.K) q.K = a.K;
    q.query_id = i;
    const auto dist = a.exact ? exact_mixture(model, q.path, opt) : infer_distribution(model, q, opt);
    responses[i] = response_json(dist, q.budget_s);
    latency[i] = t.seconds();
  });
  std::ofstream file;
  if (!a.out.empty()) file = open_out(a.out);
  std::ostream& out = a.out.empty() ? std::cout : file;
  for (const auto& r : responses) out << r.dump() << '\n';
  double worst = 0.0;
  for (double l : latency) worst = std::max(worst, l);
  log_event("infer", "done", {{"queries", requests.size()}, {"max_latency_s", worst}});
  return 0;
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
  std::string network, model, observations, out = "eval";
  int m = 2;
  std::size_t K = 1000;
  std::size_t kl_paths = 0;
  std::vector<int> scaling;
};

int run_evaluate(const Globals& g, const EvaluateArgs& a) {
  Timer timer;
  auto network = std::make_shared<const RoadNetwork>(load_network(a.network, a.m));
  const auto model = load_inference_model(a.model, network, true);
  auto in = open_in(a.observations);
  const auto obs = read_observations(in);
  const fs::path dir(a.out);
  fs::create_directories(dir);

  LoglikBins bins;
  std::vector<double> pp_values(obs.size());
  std::vector<double> ll(obs.size());
  parallel_for(obs.size(), g.threads, [&](std::size_t i) {
    PathQuery q;
    q.path = obs[i].path;
    q.K = a.K;
    q.seed = g.seed;
    q.query_id = i;
    const auto dist = infer_distribution(model, q);
    const double t = total_time(obs[i]);
    ll[i] = log_density(dist, t);
    pp_values[i] = cdf(dist, t);
  });
  for (std::size_t i = 0; i < obs.size(); ++i) bins.add(obs[i].size(), ll[i]);
  json metrics{{"loglik", bins.json()}, {"K", a.K}, {"seed", g.seed}};
  if (!obs.empty()) {
    const auto pp = pp_metrics(pp_values);
    metrics["pp"] = {{"a", pp.a}, {"b", pp.b}, {"count", obs.size()}};
    auto csv = open_out(dir / "pp_curve.csv");
    csv << "alpha,f\n";
    for (std::size_t i = 0; i < pp.alpha.size(); ++i) csv << pp.alpha[i] << ',' << pp.f[i] << '\n';
  }

  if (a.kl_paths > 0) {
    auto csv = open_out(dir / "kl.csv");
    csv << "path,I,K,kl\n";
    std::size_t done = 0;
    for (std::size_t i = 0; i < obs.size() && done < a.kl_paths; ++i) {
      const std::size_t I = obs[i].size();
      if (I < 2 || I > 12) continue;
      const double lnI = std::log(static_cast<double>(I));
      const std::vector<std::size_t> Ks{static_cast<std::size_t>(std::ceil(100 * lnI)),
                                        static_cast<std::size_t>(std::ceil(1000 * lnI))};
      const auto kl = kl_vs_exact(model, obs[i].path, Ks, g.seed + i);
      for (std::size_t k = 0; k < Ks.size(); ++k) csv << obs[i].id << ',' << I << ',' << Ks[k] << ',' << kl[k] << '\n';
      ++done;
    }
    metrics["kl_paths"] = done;
  }

  if (!a.scaling.empty()) {
    const auto rep = scaling_report(a.scaling, [&](int n) {
      const auto truth = generate_world(n, n, a.m, g.seed);
      Pecm pecm;
      pecm.pattern = truth.pattern;
      pecm.mu = truth.mu;
      pecm.observed.assign(truth.mu.size(), true);
      pecm.sigma = truth.covariance_on_pattern();
      const auto fitted = fit_precision(pecm);
      (void)factorize(fitted.matrix());
      return truth.mu.size();
    });
    auto csv = open_out(dir / "scaling.csv");
    csv << rep.csv();
    log_event("evaluate", "scaling", {{"slope", rep.slope}});
  }

  auto out = open_out(dir / "metrics.json");
  out << metrics.dump(1) << '\n';
  log_event("evaluate", "done", {{"paths", obs.size()}, {"seconds", timer.seconds()}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal GMRF travel-time toolkit"};
  app.set_config("--config", "", "TOML configuration file with one [section] per command; flags take precedence");
  app.allow_config_extras(false);
  app.require_subcommand(1);
  Globals g;
  app.add_option("--threads", g.threads, "worker threads")->check(CLI::Range(1u, 1024u));
  app.add_option("--seed", g.seed, "root random seed");

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "synthetic world, traces and ground truth");
  gen->add_option("--grid", ga.grid, "grid size WxH");
  gen->add_option("--m", ga.m, "states per link")->check(CLI::Range(1, 16));
  gen->add_option("--trajectories", ga.trajectories, "number of trajectories");
  gen->add_option("--min-len", ga.min_len, "minimum path length (links)");
  gen->add_option("--max-len", ga.max_len, "maximum path length (links)");
  gen->add_option("--period", ga.period, "sampling period (s)")->check(CLI::PositiveNumber);
  gen->add_option("--noise", ga.noise, "offset noise sigma (m)")->check(CLI::NonNegativeNumber);
  gen->add_option("--out", ga.out, "output directory");

  CompressArgs ca;
  auto* comp = app.add_subcommand("compress", "stop-and-go compression of traces");
  comp->add_option("--network", ca.network, "network CSV")->required();
  comp->add_option("--traces", ca.traces, "trace JSON lines")->required();
  comp->add_option("--out", ca.out, "compressed observations (JSON lines)");
  comp->add_option("--m", ca.m, "states per link")->check(CLI::Range(1, 16));

  LearnArgs la;
  auto* learn = app.add_subcommand("learn", "fit the Markov chain, PECM, precision and sketch");
  learn->add_option("--network", la.network, "network CSV")->required();
  learn->add_option("--observations", la.observations, "compressed observations")->required();
  learn->add_option("--out", la.out, "model directory");
  learn->add_option("--m", la.cfg.modes, "states per link")->check(CLI::Range(1, 16));
  learn->add_option("--prune-min-count", la.cfg.prune_min_count, "minimum co-observations per edge");
  learn->add_option("--smoothing", la.cfg.smoothing, "additive count smoothing")->check(CLI::NonNegativeNumber);
  learn->add_option("--epsilon", la.cfg.epsilon, "sketch distortion target");
  learn->add_option("--sketch-k", la.cfg.sketch_k, "sketch width (0: from epsilon, capped by --max-sketch-k)");
  learn->add_option("--max-sketch-k", la.cfg.max_sketch_k, "cap on the derived sketch width");
  learn->add_option("--tol", la.cfg.fit_tol, "precision fit stationarity tolerance");
  learn->add_option("--max-iter", la.cfg.fit_max_iter, "precision fit iteration cap");
  learn->add_option("--inverse", la.inverse, "inverse entries: selected, exact or sketch");

  InferArgs ia;
  auto* infer = app.add_subcommand("infer", "answer path travel-time queries");
  infer->add_option("--network", ia.network, "network CSV")->required();
  infer->add_option("--model", ia.model, "model directory")->required();
  infer->add_option("--query", ia.query, "single JSON query");
  infer->add_option("--queries", ia.queries, "JSON lines file of queries");
  infer->add_option("--out", ia.out, "output file (default: stdout)");
  infer->add_option("--m", ia.m, "states per link")->check(CLI::Range(1, 16));
  infer->add_option("--K", ia.K, "override number of samples");
  infer->add_flag("--exact", ia.exact, "enumerate the exact mixture instead of sampling");
  infer->add_flag("--no-fallback", ia.no_fallback, "fail on links without training data");

  EvaluateArgs ea;
  auto* eval = app.add_subcommand("evaluate", "validation metrics");
  eval->add_option("--network", ea.network, "network CSV")->required();
  eval->add_option("--model", ea.model, "model directory")->required();
  eval->add_option("--observations", ea.observations, "held-out compressed observations")->required();
  eval->add_option("--out", ea.out, "output directory");
  eval->add_option("--m", ea.m, "states per link")->check(CLI::Range(1, 16));
  eval->add_option("--K", ea.K, "samples per query");
  eval->add_option("--kl-paths", ea.kl_paths, "number of paths for the KL-vs-K table");
  eval->add_option("--scaling", ea.scaling, "grid sizes for the training-time scaling table")->delimiter(',');

  for (auto* sub : {gen, comp, learn, infer, eval}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ErrorCategory::config);
  }

  try {
    if (*gen) return run_generate(g, ga);
    if (*comp) return run_compress(g, ca);
    if (*learn) return run_learn(g, la);
    if (*infer) return run_infer(g, ia);
    if (*eval) return run_evaluate(g, ea);
  } catch (const Error& e) {
    log_event(app.get_subcommands().front()->get_name(), "error", {{"code", e.code()}, {"message", e.what()}});
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.category());
  } catch (const fs::filesystem_error& e) {
    log_event(app.get_subcommands().front()->get_name(), "error", {{"code", "IoError"}, {"message", e.what()}});
    return static_cast<int>(ErrorCategory::io);
  } catch (const std::bad_alloc&) {
    log_event(app.get_subcommands().front()->get_name(), "error", {{"code", "OutOfMemory"}});
    return static_cast<int>(ErrorCategory::numeric);
  }
  return 0;
}
