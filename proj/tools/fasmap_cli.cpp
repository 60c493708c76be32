// Command-line front end for scenario generation, simulation, sampling,
// reconstruction and the benchmark sweep.

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "fasmap/fasmap.hpp"

namespace fs = std::filesystem;
using namespace fasmap;

namespace {

struct Globals {
  std::string config_path;
  std::uint64_t seed = 1;
  std::string out_dir;
  int threads = 0;
  int verbose = 0;
};

ExperimentConfig resolve(const Globals& g) {
  ExperimentConfig cfg = g.config_path.empty() ? ExperimentConfig{} : load_config(g.config_path);
  if (!g.out_dir.empty()) cfg.output_dir = g.out_dir;
  if (g.threads > 0) {
    cfg.threads = g.threads;
    cfg.solver.threads = g.threads;
    cfg.baselines.threads = g.threads;
  }
  cfg.validate();
  return cfg;
}

std::string seed_tag(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

void write_world(const fs::path& dir, const World& w, std::uint64_t seed) {
  io::write_text(dir / "scenario.json", io::to_json(w.scenario).dump(2) + "\n");
  io::write_codebook(dir / "codebook.txt", w.codebook);
  io::write_tensor(dir / "truth.json", w.truth, {io::scenario_hash(w.scenario), seed});
}

void print_table(const std::vector<PlotRow>& rows) {
  std::printf("%-8s %-9s %10s %9s %4s\n", "ratio", "method", "mean_db", "std_db", "n");
  for (const auto& r : rows)
    std::printf("%-8.3g %-9s %10.4f %9.4f %4zu\n", r.ratio, r.method.c_str(), r.mean_rmse_db, r.std_rmse_db,
                r.n_seeds);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Radio-map reconstruction for pixel-antenna mode tensors"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "JSON experiment config")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Scenario/channel seed");
  app.add_option("--out-dir", g.out_dir, "Output directory (overrides experiment.output_dir)");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::NonNegativeNumber);
  app.add_flag("-v,--verbose", g.verbose, "Increase log verbosity");

  auto* gen = app.add_subcommand("gen-scenario", "Write scenario and codebook files");
  auto* sim = app.add_subcommand("simulate", "Write the ground-truth tensor");

  auto* smp = app.add_subcommand("sample", "Draw observations from the ground truth");
  double ratio = 0.1;
  double noise = -1.0;
  smp->add_option("--ratio", ratio, "Sampling ratio in (0, 1]");
  smp->add_option("--noise", noise, "Measurement noise sigma in dB (default: config)");

  auto* rec = app.add_subcommand("reconstruct", "Reconstruct a map from observations");
  std::string method_arg = "pr_lrtc";
  std::string omega_path;
  rec->add_option("--method", method_arg, "pr_lrtc, lrtc, pr_only, knn or kriging");
  rec->add_option("--ratio", ratio, "Sampling ratio when drawing observations");
  rec->add_option("--omega", omega_path, "Observation CSV (i,j,m,value_dbm) instead of drawing")
      ->check(CLI::ExistingFile);

  auto* bench = app.add_subcommand("benchmark", "Full sweep over ratios, seeds and methods");

  auto* slices = app.add_subcommand("export-slices", "Write per-mode I x J CSV slices of a tensor");
  std::string tensor_path;
  std::vector<std::size_t> modes;
  slices->add_option("tensor", tensor_path, "RMT header (.json)")->required()->check(CLI::ExistingFile);
  slices->add_option("--modes", modes, "Mode indices (default: all)")->delimiter(',');

  CLI11_PARSE(app, argc, argv);
  log::verbosity() = 1 + g.verbose;

  try {
    ExperimentConfig cfg = resolve(g);
    const fs::path out = cfg.output_dir;

    if (*gen) {
      const World w = make_world(cfg, g.seed);
      io::write_text(out / "scenario.json", io::to_json(w.scenario).dump(2) + "\n");
      io::write_codebook(out / "codebook.txt", w.codebook);
      std::cout << "wrote " << (out / "scenario.json").string() << " and " << (out / "codebook.txt").string()
                << "\n";
    } else if (*sim) {
      const World w = make_world(cfg, g.seed);
      write_world(out, w, g.seed);
      std::cout << "wrote " << (out / "truth.json").string() << " " << w.truth.dims().str() << "\n";
    } else if (*smp) {
      const World w = make_world(cfg, g.seed);
      const double sigma = noise >= 0.0 ? noise : cfg.sampling.noise_sigma_db;
      const ObservationSet obs = observe(w, ratio, sigma, g.seed);
      write_world(out, w, g.seed);
      io::write_omega_csv(out / "omega.csv", obs);
      io::write_tensor(out / "observed.json", obs.y, {io::scenario_hash(w.scenario), g.seed});
      std::cout << "sampled " << obs.omega.size() << " of " << obs.dims().size() << " entries into "
                << (out / "omega.csv").string() << "\n";
    } else if (*rec) {
      const Method method = parse_method(method_arg);
      const World w = make_world(cfg, g.seed);
      const ObservationSet obs = omega_path.empty() ? observe(w, ratio, cfg.sampling.noise_sigma_db, g.seed)
                                                    : io::read_omega_csv(omega_path, w.truth.dims());
      const Reconstruction r = reconstruct(method, obs, w.prior, cfg, grid_spacing(w.scenario));
      const std::string stem = method_name(method) + "_" + seed_tag(g.seed);
      io::write_tensor(out / (stem + ".json"), r.x, {io::scenario_hash(w.scenario), g.seed});
      if (r.report) io::write_text(out / (stem + "_report.json"), io::to_json(*r.report).dump(1) + "\n");
      std::printf("%s: rmse_all %.4f dB", method_name(method).c_str(), rmse_db(r.x, w.truth));
      if (obs.omega.size() < obs.dims().size())
        std::printf(", rmse_unobs %.4f dB", rmse_db(r.x, w.truth, RmseScope::kUnobserved, &obs.mask));
      if (r.report) std::printf(", %d iterations (%s)", r.report->iterations, to_string(r.report->decision));
      std::printf("\n");
    } else if (*bench) {
      const ExperimentResult res = run_experiment(cfg);
      print_table(res.plot);
      std::cout << "wrote " << (out / "results.csv").string() << "\n";
      if (res.any_error()) {
        std::cerr << "some sweep cells failed; see " << (out / "errors.txt").string() << "\n";
        return 2;
      }
    } else if (*slices) {
      const Tensor3 x = io::read_tensor(tensor_path);
      if (modes.empty())
        for (std::size_t m = 0; m < x.dims().modes; ++m) modes.push_back(m);
      const auto files = export_map_slices(x, modes, out, fs::path(tensor_path).stem().string());
      std::cout << "wrote " << files.size() << " slice files to " << out.string() << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
