#pragma once

#include <algorithm>
#include <bit>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "fasmap/antenna.hpp"
#include "fasmap/baselines.hpp"
#include "fasmap/channel.hpp"
#include "fasmap/error.hpp"
#include "fasmap/io.hpp"
#include "fasmap/log.hpp"
#include "fasmap/parallel.hpp"
#include "fasmap/rng.hpp"
#include "fasmap/sampling.hpp"
#include "fasmap/scenario.hpp"
#include "fasmap/solver.hpp"
#include "fasmap/tensor.hpp"

namespace fasmap {

enum class Method { kPrLrtc, kLrtc, kPrOnly, kKnn, kKriging };

inline constexpr Method kAllMethods[] = {Method::kPrLrtc, Method::kLrtc, Method::kPrOnly, Method::kKnn,
                                         Method::kKriging};

inline std::string method_name(Method m) {
  switch (m) {
    case Method::kPrLrtc: return "pr_lrtc";
    case Method::kLrtc: return "lrtc";
    case Method::kPrOnly: return "pr_only";
    case Method::kKnn: return "knn";
    case Method::kKriging: return "kriging";
  }
  return "?";
}

inline Method parse_method(const std::string& name) {
  for (Method m : kAllMethods)
    if (method_name(m) == name) return m;
  throw ConfigError("unknown method '" + name + "' (expected pr_lrtc, lrtc, pr_only, knn or kriging)");
}

inline bool is_solver_method(Method m) {
  return m == Method::kPrLrtc || m == Method::kLrtc || m == Method::kPrOnly;
}

struct AntennaConfig {
  int modes = 12;
  int eadof = 7;
  double target_corr = 0.96;
  double peak_gain_dbi = kDefaultPeakGainDbi;
};

struct SamplingConfig {
  std::vector<double> ratios{0.05, 0.10, 0.15, 0.20};
  double noise_sigma_db = 0.0;
};

struct ExperimentConfig {
  ScenarioConfig scenario;
  ChannelParams channel;
  AntennaConfig antenna;
  SolverConfig solver;
  BaselineParams baselines;
  SamplingConfig sampling;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<Method> methods{std::begin(kAllMethods), std::end(kAllMethods)};
  std::string output_dir = "out";
  /// Worker pool size for sweep cells.
  int threads = 1;
  /// When false, results.csv carries wall_ms = 0 so reruns are byte-identical;
  /// timings still land in the convergence reports.
  bool record_wall_time = false;
  /// Write truth and reconstruction tensors next to the CSVs.
  bool write_tensors = true;

  void validate() const {
    if (sampling.ratios.empty()) throw ConfigError("sampling.ratios must not be empty");
    for (double r : sampling.ratios)
      if (!(r > 0.0 && r <= 1.0)) throw ConfigError("sampling ratios must lie in (0, 1]");
    if (sampling.noise_sigma_db < 0.0) throw ConfigError("sampling.noise_sigma_db must be >= 0");
    if (seeds.empty()) throw ConfigError("experiment.seeds must not be empty");
    if (methods.empty()) throw ConfigError("experiment.methods must not be empty");
    if (threads < 1) throw ConfigError("experiment.threads must be >= 1");
    if (antenna.modes < 2) throw ConfigError("antenna.modes must be >= 2");
    channel.validate();
    solver.validate();
    baselines.validate();
  }
};

// ---- config document ------------------------------------------------------

namespace detail {

using io::json;

inline void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw ConfigError("unknown key '" + where + "." + key + "'");
  }
}

template <typename T>
void read(const json& j, const std::string& where, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("bad value for '" + where + "." + key + "': " + e.what());
  }
}

inline void read_vec2(const json& j, const std::string& where, const char* key, Vec2& out) {
  if (!j.contains(key)) return;
  try {
    out = io::vec2_from_json(j.at(key), where + "." + key);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

inline std::string short_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

/// Parses the nested config document. Missing keys keep their defaults;
/// unknown keys are errors.
inline ExperimentConfig config_from_json(const io::json& root) {
  using detail::check_keys;
  using detail::read;
  ExperimentConfig c;
  check_keys(root, "config", {"scenario", "channel", "antenna", "solver", "baselines", "sampling", "experiment"});

  if (root.contains("scenario")) {
    const auto& j = root["scenario"];
    check_keys(j, "scenario", {"width_m", "height_m", "rows", "cols", "bs_position", "obstacle_count",
                               "obstacle_size", "fixed_obstacles", "mask_obstacle_cells"});
    read(j, "scenario", "width_m", c.scenario.width_m);
    read(j, "scenario", "height_m", c.scenario.height_m);
    read(j, "scenario", "rows", c.scenario.rows);
    read(j, "scenario", "cols", c.scenario.cols);
    detail::read_vec2(j, "scenario", "bs_position", c.scenario.bs_position);
    read(j, "scenario", "obstacle_count", c.scenario.obstacle_count);
    detail::read_vec2(j, "scenario", "obstacle_size", c.scenario.obstacle_size);
    read(j, "scenario", "mask_obstacle_cells", c.scenario.mask_obstacle_cells);
    if (j.contains("fixed_obstacles") && !j["fixed_obstacles"].is_null()) {
      std::vector<Obstacle> fixed;
      try {
        for (const auto& o : j["fixed_obstacles"]) fixed.push_back(io::obstacle_from_json(o));
      } catch (const std::exception& e) {
        throw ConfigError(std::string("scenario.fixed_obstacles: ") + e.what());
      }
      c.scenario.fixed_obstacles = std::move(fixed);
    }
  }
  if (root.contains("channel")) {
    const auto& j = root["channel"];
    check_keys(j, "channel", {"p_tx_dbm", "alpha_los", "alpha_nlos", "beta_los_db", "beta_nlos_db",
                              "sigma_los_db", "sigma_nlos_db", "d_corr_m"});
    read(j, "channel", "p_tx_dbm", c.channel.p_tx_dbm);
    read(j, "channel", "alpha_los", c.channel.alpha_los);
    read(j, "channel", "alpha_nlos", c.channel.alpha_nlos);
    read(j, "channel", "beta_los_db", c.channel.beta_los_db);
    read(j, "channel", "beta_nlos_db", c.channel.beta_nlos_db);
    read(j, "channel", "sigma_los_db", c.channel.sigma_los_db);
    read(j, "channel", "sigma_nlos_db", c.channel.sigma_nlos_db);
    read(j, "channel", "d_corr_m", c.channel.d_corr_m);
  }
  if (root.contains("antenna")) {
    const auto& j = root["antenna"];
    check_keys(j, "antenna", {"modes", "eadof", "target_corr", "peak_gain_dbi"});
    read(j, "antenna", "modes", c.antenna.modes);
    read(j, "antenna", "eadof", c.antenna.eadof);
    read(j, "antenna", "target_corr", c.antenna.target_corr);
    read(j, "antenna", "peak_gain_dbi", c.antenna.peak_gain_dbi);
  }
  if (root.contains("solver")) {
    const auto& j = root["solver"];
    check_keys(j, "solver", {"lambda1", "lambda2", "rho", "alpha", "eps_pri", "eps_dual", "max_iters",
                             "adaptive_penalty", "balance_ratio", "balance_factor", "track_objective",
                             "threads"});
    read(j, "solver", "lambda1", c.solver.lambda1);
    read(j, "solver", "lambda2", c.solver.lambda2);
    read(j, "solver", "rho", c.solver.rho);
    read(j, "solver", "alpha", c.solver.alpha);
    read(j, "solver", "eps_pri", c.solver.eps_pri);
    read(j, "solver", "eps_dual", c.solver.eps_dual);
    read(j, "solver", "max_iters", c.solver.max_iters);
    read(j, "solver", "adaptive_penalty", c.solver.adaptive_penalty);
    read(j, "solver", "balance_ratio", c.solver.balance_ratio);
    read(j, "solver", "balance_factor", c.solver.balance_factor);
    read(j, "solver", "track_objective", c.solver.track_objective);
    read(j, "solver", "threads", c.solver.threads);
  }
  if (root.contains("baselines")) {
    const auto& j = root["baselines"];
    check_keys(j, "baselines", {"knn", "kriging"});
    if (j.contains("knn")) {
      check_keys(j["knn"], "baselines.knn", {"k", "power"});
      read(j["knn"], "baselines.knn", "k", c.baselines.knn.k);
      read(j["knn"], "baselines.knn", "power", c.baselines.knn.power);
    }
    if (j.contains("kriging")) {
      const auto& k = j["kriging"];
      check_keys(k, "baselines.kriging", {"lag_bins", "min_observations", "fallback_range_m"});
      read(k, "baselines.kriging", "lag_bins", c.baselines.kriging.lag_bins);
      read(k, "baselines.kriging", "min_observations", c.baselines.kriging.min_observations);
      read(k, "baselines.kriging", "fallback_range_m", c.baselines.kriging.fallback_range_m);
    }
  }
  if (root.contains("sampling")) {
    const auto& j = root["sampling"];
    check_keys(j, "sampling", {"ratios", "noise_sigma_db"});
    read(j, "sampling", "ratios", c.sampling.ratios);
    read(j, "sampling", "noise_sigma_db", c.sampling.noise_sigma_db);
  }
  if (root.contains("experiment")) {
    const auto& j = root["experiment"];
    check_keys(j, "experiment", {"seeds", "methods", "output_dir", "threads", "record_wall_time", "write_tensors"});
    read(j, "experiment", "seeds", c.seeds);
    if (j.contains("methods")) {
      std::vector<std::string> names;
      read(j, "experiment", "methods", names);
      c.methods.clear();
      for (const auto& n : names) c.methods.push_back(parse_method(n));
    }
    read(j, "experiment", "output_dir", c.output_dir);
    read(j, "experiment", "threads", c.threads);
    read(j, "experiment", "record_wall_time", c.record_wall_time);
    read(j, "experiment", "write_tensors", c.write_tensors);
  }
  c.validate();
  return c;
}

inline io::json to_json(const ExperimentConfig& c) {
  io::json fixed = nullptr;
  if (c.scenario.fixed_obstacles) {
    fixed = io::json::array();
    for (const auto& o : *c.scenario.fixed_obstacles)
      fixed.push_back({{"min", {o.min_corner.x(), o.min_corner.y()}}, {"max", {o.max_corner.x(), o.max_corner.y()}}});
  }
  std::vector<std::string> methods;
  for (Method m : c.methods) methods.push_back(method_name(m));
  const auto& s = c.scenario;
  return {
      {"scenario",
       {{"width_m", s.width_m}, {"height_m", s.height_m}, {"rows", s.rows}, {"cols", s.cols},
        {"bs_position", {s.bs_position.x(), s.bs_position.y()}}, {"obstacle_count", s.obstacle_count},
        {"obstacle_size", {s.obstacle_size.x(), s.obstacle_size.y()}}, {"fixed_obstacles", fixed},
        {"mask_obstacle_cells", s.mask_obstacle_cells}}},
      {"channel",
       {{"p_tx_dbm", c.channel.p_tx_dbm}, {"alpha_los", c.channel.alpha_los}, {"alpha_nlos", c.channel.alpha_nlos},
        {"beta_los_db", c.channel.beta_los_db}, {"beta_nlos_db", c.channel.beta_nlos_db},
        {"sigma_los_db", c.channel.sigma_los_db}, {"sigma_nlos_db", c.channel.sigma_nlos_db},
        {"d_corr_m", c.channel.d_corr_m}}},
      {"antenna",
       {{"modes", c.antenna.modes}, {"eadof", c.antenna.eadof}, {"target_corr", c.antenna.target_corr},
        {"peak_gain_dbi", c.antenna.peak_gain_dbi}}},
      {"solver",
       {{"lambda1", c.solver.lambda1}, {"lambda2", c.solver.lambda2}, {"rho", c.solver.rho},
        {"alpha", c.solver.alpha}, {"eps_pri", c.solver.eps_pri}, {"eps_dual", c.solver.eps_dual},
        {"max_iters", c.solver.max_iters}, {"adaptive_penalty", c.solver.adaptive_penalty},
        {"balance_ratio", c.solver.balance_ratio}, {"balance_factor", c.solver.balance_factor},
        {"track_objective", c.solver.track_objective}, {"threads", c.solver.threads}}},
      {"baselines",
       {{"knn", {{"k", c.baselines.knn.k}, {"power", c.baselines.knn.power}}},
        {"kriging",
         {{"lag_bins", c.baselines.kriging.lag_bins}, {"min_observations", c.baselines.kriging.min_observations},
          {"fallback_range_m", c.baselines.kriging.fallback_range_m}}}}},
      {"sampling", {{"ratios", c.sampling.ratios}, {"noise_sigma_db", c.sampling.noise_sigma_db}}},
      {"experiment",
       {{"seeds", c.seeds}, {"methods", methods}, {"output_dir", c.output_dir}, {"threads", c.threads},
        {"record_wall_time", c.record_wall_time}, {"write_tensors", c.write_tensors}}}};
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  try {
    return config_from_json(io::read_json(path));
  } catch (const FormatError& e) {
    throw ConfigError(e.what());
  }
}

// ---- pipeline -----------------------------------------------------------

/// Everything that depends only on the seed: geometry, truth and prior.
struct World {
  Scenario scenario;
  Codebook codebook;
  Tensor3 truth;
  DifferentialPrior prior;
  Tensor3 eligible;  // 1 where sampling is allowed
};

inline Codebook make_codebook(const AntennaConfig& a) {
  return synthesize_codebook(a.modes, a.eadof, a.target_corr, a.peak_gain_dbi);
}

inline Tensor3 sampling_eligibility(const Scenario& s, std::size_t modes, bool mask_obstacle_cells) {
  Tensor3 eligible(Dims{s.rows, s.cols, modes}, 1.0);
  auto exclude = [&](std::size_t i, std::size_t j) { eligible.fiber(i, j).setZero(); };
  if (auto bs = degenerate_cell(s)) exclude(bs->first, bs->second);
  if (mask_obstacle_cells)
    for (std::size_t i = 0; i < s.rows; ++i)
      for (std::size_t j = 0; j < s.cols; ++j) {
        const Vec2 r = cell_center(s, i, j);
        if (std::any_of(s.obstacles.begin(), s.obstacles.end(), [&](const Obstacle& o) { return o.contains(r); }))
          exclude(i, j);
      }
  return eligible;
}

inline World make_world(const ExperimentConfig& cfg, std::uint64_t seed, const Codebook& codebook) {
  World w;
  w.scenario = generate_scenario(cfg.scenario, seed);
  w.codebook = codebook;
  w.truth = ground_truth_tensor(w.scenario, codebook, cfg.channel, seed);
  w.prior = differential_prior(codebook, w.scenario);
  w.eligible = sampling_eligibility(w.scenario, static_cast<std::size_t>(codebook.modes),
                                    cfg.scenario.mask_obstacle_cells);
  return w;
}

inline World make_world(const ExperimentConfig& cfg, std::uint64_t seed) {
  return make_world(cfg, seed, make_codebook(cfg.antenna));
}

/// The observation draw depends on the seed and the ratio value only, so
/// every method at a given (seed, ratio) sees the same set.
inline std::uint64_t observation_seed(std::uint64_t seed, double ratio) {
  return derive_seed(seed, stream::kSampling, std::bit_cast<std::uint64_t>(ratio));
}

inline ObservationSet observe(const World& w, double ratio, double noise_sigma_db, std::uint64_t seed) {
  return sample_observations(w.truth, ratio, noise_sigma_db, observation_seed(seed, ratio), &w.eligible);
}

struct Reconstruction {
  Tensor3 x;
  std::optional<ConvergenceReport> report;  // solver methods only
};

inline GridSpacing grid_spacing(const Scenario& s) { return {s.cell_width(), s.cell_height()}; }

inline Reconstruction reconstruct(Method method, const ObservationSet& obs, const DifferentialPrior& prior,
                                  const ExperimentConfig& cfg, const GridSpacing& spacing) {
  switch (method) {
    case Method::kPrLrtc: {
      auto r = solve(obs, prior, cfg.solver);
      return {std::move(r.x), std::move(r.report)};
    }
    case Method::kLrtc: {
      auto r = lrtc_reconstruct(obs, cfg.solver);
      return {std::move(r.x), std::move(r.report)};
    }
    case Method::kPrOnly: {
      auto r = pr_only_reconstruct(obs, prior, cfg.solver);
      return {std::move(r.x), std::move(r.report)};
    }
    case Method::kKnn:
      return {knn_reconstruct(obs, cfg.baselines.knn, spacing, cfg.baselines.threads), std::nullopt};
    case Method::kKriging:
      return {kriging_reconstruct(obs, cfg.baselines.kriging, spacing, cfg.baselines.threads), std::nullopt};
  }
  throw ConfigError("unknown method");
}

// ---- metrics ------------------------------------------------------------

enum class RmseScope { kAll, kUnobserved };

inline double rmse_db(const Tensor3& recon, const Tensor3& truth, RmseScope scope = RmseScope::kAll,
                      const Tensor3* mask = nullptr) {
  recon.require_same(truth);
  if (scope == RmseScope::kUnobserved) {
    if (mask == nullptr) throw ConfigError("unobserved-only RMSE needs the observation mask");
    truth.require_same(*mask);
  }
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < truth.size(); ++k) {
    if (scope == RmseScope::kUnobserved && (*mask)[k] != 0.0) continue;
    const double e = recon[k] - truth[k];
    sum += e * e;
    ++n;
  }
  if (n == 0) throw ConfigError("RMSE scope is empty");
  return std::sqrt(sum / static_cast<double>(n));
}

// ---- sweep --------------------------------------------------------------

struct ResultRecord {
  std::string method;
  double ratio = 0.0;
  std::uint64_t seed = 0;
  double rmse_all_db = std::numeric_limits<double>::quiet_NaN();
  double rmse_unobs_db = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;  // 0 for non-iterative baselines
  double wall_ms = 0.0;
  std::string status = "ok";  // ok | max_iters | error
  std::string message;
};

struct PlotRow {
  double ratio = 0.0;
  std::string method;
  double mean_rmse_db = 0.0;
  double std_rmse_db = 0.0;
  std::size_t n_seeds = 0;
};

struct ExperimentResult {
  std::vector<ResultRecord> records;
  std::vector<PlotRow> plot;
  bool any_error() const {
    return std::any_of(records.begin(), records.end(), [](const auto& r) { return r.status == "error"; });
  }
};

inline ResultRecord error_record(Method m, double ratio, std::uint64_t seed, const std::string& message) {
  ResultRecord r;
  r.method = method_name(m);
  r.ratio = ratio;
  r.seed = seed;
  r.status = "error";
  r.message = message;
  return r;
}

inline std::string artifact_stem(const std::string& method, double ratio, std::uint64_t seed) {
  return method + "_r" + detail::short_double(ratio) + "_s" + std::to_string(seed);
}

/// Mean and sample standard deviation of rmse_all_db over non-error seeds.
inline std::vector<PlotRow> summarize(const std::vector<ResultRecord>& records) {
  std::map<std::pair<double, std::string>, std::vector<double>> groups;
  for (const auto& r : records)
    if (r.status != "error") groups[{r.ratio, r.method}].push_back(r.rmse_all_db);
  std::vector<PlotRow> out;
  for (const auto& [key, v] : groups) {
    PlotRow row{key.first, key.second, 0.0, 0.0, v.size()};
    for (double x : v) row.mean_rmse_db += x;
    row.mean_rmse_db /= static_cast<double>(v.size());
    if (v.size() > 1) {
      for (double x : v) row.std_rmse_db += (x - row.mean_rmse_db) * (x - row.mean_rmse_db);
      row.std_rmse_db = std::sqrt(row.std_rmse_db / static_cast<double>(v.size() - 1));
    }
    out.push_back(row);
  }
  return out;
}

inline std::string results_csv(const std::vector<ResultRecord>& records) {
  using detail::short_double;
  std::ostringstream os;
  os << "method,ratio,seed,rmse_all_db,rmse_unobs_db,iterations,wall_ms,status\n";
  for (const auto& r : records)
    os << r.method << "," << short_double(r.ratio) << "," << r.seed << "," << short_double(r.rmse_all_db) << ","
       << short_double(r.rmse_unobs_db) << "," << r.iterations << "," << short_double(r.wall_ms) << ","
       << r.status << "\n";
  return os.str();
}

inline std::string plotdata_csv(const std::vector<PlotRow>& rows) {
  using detail::short_double;
  std::ostringstream os;
  os << "ratio,method,mean_rmse_db,std_rmse_db,n_seeds\n";
  for (const auto& r : rows)
    os << short_double(r.ratio) << "," << r.method << "," << short_double(r.mean_rmse_db) << ","
       << short_double(r.std_rmse_db) << "," << r.n_seeds << "\n";
  return os.str();
}

/// Runs every (seed, ratio, method) cell. A failing cell is recorded with
/// status "error" and the sweep continues. Artifacts go to cfg.output_dir
/// unless it is empty.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  using clock = std::chrono::steady_clock;
  namespace fs = std::filesystem;
  cfg.validate();
  const bool write = !cfg.output_dir.empty();
  const fs::path out_dir = cfg.output_dir;
  if (write) {
    fs::create_directories(out_dir);
    io::write_text(out_dir / "config.json", to_json(cfg).dump(2) + "\n");
  }

  const Codebook codebook = make_codebook(cfg.antenna);
  if (write) io::write_codebook(out_dir / "codebook.txt", codebook);

  struct Cell {
    std::size_t world;
    std::size_t obs;
    Method method;
    double ratio;
    std::uint64_t seed;
  };
  std::vector<World> worlds;
  std::vector<ObservationSet> observations;
  std::vector<std::string> setup_errors(cfg.seeds.size());
  std::vector<Cell> cells;
  std::vector<ResultRecord> records;

  for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
    const std::uint64_t seed = cfg.seeds[si];
    std::optional<World> w;
    try {
      w = make_world(cfg, seed, codebook);
    } catch (const std::exception& e) {
      log::warn("seed " + std::to_string(seed) + ": " + e.what());
      for (double ratio : cfg.sampling.ratios)
        for (Method m : cfg.methods) records.push_back(error_record(m, ratio, seed, e.what()));
      continue;
    }
    if (write && cfg.write_tensors) {
      const io::TensorMeta meta{io::scenario_hash(w->scenario), seed};
      io::write_text(out_dir / "scenarios" / ("seed_" + std::to_string(seed) + ".json"),
                     io::to_json(w->scenario).dump(2) + "\n");
      io::write_tensor(out_dir / "truth" / ("seed_" + std::to_string(seed) + ".json"), w->truth, meta);
    }
    worlds.push_back(std::move(*w));
    for (double ratio : cfg.sampling.ratios) {
      try {
        observations.push_back(observe(worlds.back(), ratio, cfg.sampling.noise_sigma_db, seed));
      } catch (const std::exception& e) {
        for (Method m : cfg.methods) records.push_back(error_record(m, ratio, seed, e.what()));
        continue;
      }
      for (Method m : cfg.methods) cells.push_back({worlds.size() - 1, observations.size() - 1, m, ratio, seed});
    }
  }

  std::vector<ResultRecord> cell_records(cells.size());
  parallel_for(cells.size(), cfg.threads, [&](std::size_t c) {
    const Cell& cell = cells[c];
    const World& w = worlds[cell.world];
    const ObservationSet& obs = observations[cell.obs];
    ResultRecord& rec = cell_records[c];
    rec.method = method_name(cell.method);
    rec.ratio = cell.ratio;
    rec.seed = cell.seed;
    const auto start = clock::now();
    try {
      Reconstruction r = reconstruct(cell.method, obs, w.prior, cfg, grid_spacing(w.scenario));
      const double ms = std::chrono::duration<double, std::milli>(clock::now() - start).count();
      if (!r.x.all_finite()) throw NumericalError("reconstruction contains non-finite values");
      rec.rmse_all_db = rmse_db(r.x, w.truth);
      if (obs.omega.size() < obs.dims().size())
        rec.rmse_unobs_db = rmse_db(r.x, w.truth, RmseScope::kUnobserved, &obs.mask);
      rec.wall_ms = cfg.record_wall_time ? ms : 0.0;
      if (r.report) {
        rec.iterations = r.report->iterations;
        if (r.report->decision == Decision::kMaxIters) rec.status = "max_iters";
      }
      if (write) {
        const std::string stem = artifact_stem(rec.method, rec.ratio, rec.seed);
        if (cfg.write_tensors)
          io::write_tensor(out_dir / "recon" / (stem + ".json"), r.x,
                           {io::scenario_hash(w.scenario), cell.seed});
        if (r.report) {
          auto j = io::to_json(*r.report);
          j["method"] = rec.method;
          j["ratio"] = rec.ratio;
          j["seed"] = rec.seed;
          io::write_text(out_dir / "convergence" / (stem + ".json"), j.dump(1) + "\n");
        }
      }
    } catch (const std::exception& e) {
      rec.status = "error";
      rec.message = e.what();
      rec.rmse_all_db = rec.rmse_unobs_db = std::numeric_limits<double>::quiet_NaN();
      log::warn(rec.method + " ratio " + detail::short_double(rec.ratio) + " seed " + std::to_string(rec.seed) +
                ": " + e.what());
    }
  });
  records.insert(records.end(), cell_records.begin(), cell_records.end());
  std::sort(records.begin(), records.end(), [](const ResultRecord& a, const ResultRecord& b) {
    return std::tie(a.method, a.ratio, a.seed) < std::tie(b.method, b.ratio, b.seed);
  });

  ExperimentResult result{records, summarize(records)};
  if (write) {
    io::write_text(out_dir / "results.csv", results_csv(result.records));
    io::write_text(out_dir / "plotdata.csv", plotdata_csv(result.plot));
    std::ostringstream errors;
    for (const auto& r : result.records)
      if (r.status == "error")
        errors << r.method << "," << detail::short_double(r.ratio) << "," << r.seed << ": " << r.message << "\n";
    if (!errors.str().empty()) io::write_text(out_dir / "errors.txt", errors.str());
  }
  return result;
}

// ---- map slices ---------------------------------------------------------

/// Writes one I x J CSV of dBm values per requested mode.
inline std::vector<std::filesystem::path> export_map_slices(const Tensor3& x, const std::vector<std::size_t>& modes,
                                                            const std::filesystem::path& dir,
                                                            const std::string& prefix = "mode") {
  const Dims& d = x.dims();
  for (std::size_t m : modes)
    if (m >= d.modes)
      throw ConfigError("mode " + std::to_string(m) + " out of range for " + std::to_string(d.modes) + " modes");
  std::vector<std::filesystem::path> written;
  for (std::size_t m : modes) {
    std::ostringstream os;
    for (std::size_t i = 0; i < d.rows; ++i) {
      for (std::size_t j = 0; j < d.cols; ++j) os << (j ? "," : "") << io::format_double(x(i, j, m));
      os << "\n";
    }
    const auto path = dir / (prefix + "_" + std::to_string(m) + ".csv");
    io::write_text(path, os.str());
    written.push_back(path);
  }
  return written;
}

}  // namespace fasmap
