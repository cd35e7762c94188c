#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <iostream>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "slipstep/slipstep.hpp"

using namespace slipstep;
using nlohmann::json;

namespace {

// exit codes
constexpr int kOk = 0;
constexpr int kUsage = 2;
constexpr int kIo = 3;
constexpr int kFall = 4;
constexpr int kSelection = 5;
constexpr int kRunFailed = 6;

int fail(int code, const std::string& status, const std::string& message, const std::string& stage = "") {
  json j{{"status", status}, {"message", message}};
  if (!stage.empty()) j["stage"] = stage;
  std::cout << j.dump() << std::endl;
  spdlog::error("{}: {}", status, message);
  return code;
}

// status goes to stdout, diagnostics to stderr
std::string status_code(ErrorKind kind) {
  std::string s;
  for (char c : std::string(to_string(kind)))
    if (c == ' ') s += '_';
    else if (c != '/') s += c;
  return s;
}

void setup_logging() {
  spdlog::set_default_logger(spdlog::stderr_color_mt("slipstep"));
  spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
  spdlog::set_level(spdlog::level::warn);
  if (const char* lvl = std::getenv("SLIPSTEP_LOG_LEVEL")) {
    const auto level = spdlog::level::from_str(lvl);
    if (level == spdlog::level::off && std::string(lvl) != "off")
      spdlog::warn("unknown SLIPSTEP_LOG_LEVEL '{}', keeping warn", lvl);
    else
      spdlog::set_level(level);
  }
}

struct GridSource {
  TemplateParams params;
  LibraryGrid grid;
};

GridSource read_grid(const std::string& source) {
  if (source == "default") return {TemplateParams{}, LibraryGrid::default_grid()};
  const KeyValueConfig cfg = KeyValueConfig::load(source);
  return {params_from_config(cfg), grid_from_config(cfg)};
}

unsigned default_jobs() { return std::max(1u, std::thread::hardware_concurrency()); }

int cmd_build_library(const std::string& grid_source, const std::string& out, unsigned jobs) {
  const GridSource src = read_grid(grid_source);
  spdlog::info("solving {} grid points on {} threads", src.grid.cardinality(), jobs);
  const auto t0 = std::chrono::steady_clock::now();
  const TrajectoryLibrary lib = build_library(src.params, src.grid, jobs);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  save_library(lib, out);
  for (const GridFailure& f : lib.failures)
    spdlog::warn("no periodic solution at th2={} h={} k={} vx={}: {}", f.th2, f.h, f.k, f.vx, f.reason);
  double worst = 0.0;
  for (const TrajectoryEntry& e : lib.entries) worst = std::max(worst, e.residual);
  std::cout << json{{"status", "ok"},
                    {"entries", lib.size()},
                    {"failures", lib.failures.size()},
                    {"max_residual", worst},
                    {"seconds", secs},
                    {"out", out}}
                   .dump()
            << std::endl;
  return kOk;
}

int cmd_build_gains(const std::string& dir, unsigned jobs, double omega) {
  const TrajectoryLibrary lib = load_library(dir);
  spdlog::info("estimating Jacobians for {} entries", lib.size());
  const auto t0 = std::chrono::steady_clock::now();
  const GainLibrary gains = build_gain_library(lib, PdGains::critically_damped(lib.params.m, omega), {}, jobs);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  save_gains(gains, dir);
  json failed = json::array();
  for (std::size_t i : gains.failures()) {
    spdlog::warn("entry {}: {}", i, gains[i].error);
    failed.push_back({{"index", i}, {"error", gains[i].error}});
  }
  std::cout << json{{"status", "ok"}, {"gains", gains.size()}, {"failed", failed}, {"seconds", secs}}.dump()
            << std::endl;
  return kOk;
}

int cmd_run(const std::string& scenario_file, const std::string& dir, std::uint64_t seed, bool seed_set,
            const std::string& noise_file, const std::string& out, const std::string& format) {
  ScenarioConfig sc = ScenarioConfig::from_config(KeyValueConfig::load(scenario_file));
  if (seed_set) sc.seed = seed;
  const NoiseConfig noise =
      noise_file.empty() || noise_file == "none" ? NoiseConfig{} : NoiseConfig::from_config(KeyValueConfig::load(noise_file));
  const TrajectoryLibrary lib = load_library(dir);
  const GainLibrary gains = load_gains(dir, lib.size());
  spdlog::info("running {} seed {}", to_string(sc.kind), sc.seed);

  const RunLog log = run_closed_loop(sc, lib, gains, noise);
  if (!out.empty()) export_log(log, out, format == "json" ? LogFormat::Json : LogFormat::Csv);

  const RunSummary& s = log.summary;
  for (const StepRecord& r : log.steps)
    spdlog::debug("step {} entry {}/{} foothold ({:.3f}, {:.3f}, {:.3f}) {}", r.step, r.entry, r.td_entry,
                  r.foothold.x(), r.foothold.y(), r.foothold.z(), r.note);
  json j{{"status", s.status},   {"message", s.message},   {"steps", s.steps},
         {"duration", s.duration}, {"vx_rmse", s.vx_rmse}, {"vy_rmse", s.vy_rmse},
         {"seed", sc.seed}};
  if (!s.failed_stage.empty()) j["stage"] = s.failed_stage;
  std::cout << j.dump() << std::endl;
  if (s.status == "ok") return kOk;
  if (s.status == "fall") return kFall;
  if (s.status == "selection_error") return kSelection;
  return kRunFailed;
}

// Stones liftoff selection from a periodic liftoff near 1 m/s, random stones.
int cmd_bench(const std::string& dir, int iterations, std::uint64_t seed) {
  const TrajectoryLibrary lib = load_library(dir);
  const GainLibrary gains = load_gains(dir, lib.size());
  const Selector sel(lib, gains);
  const std::size_t j = nearest_entry(lib, gains, 1.0, 0.95, 8000.0);
  const TemplateParams P = lib.params.with_stiffness(lib[j].k);
  const ApexStep st = passive_apex_step(P, lib[j].apex(), lib[j].command(P));
  ComState lo;
  lo.p = side_mirror(-1) * (st.liftoff.p - st.pf);
  lo.v = side_mirror(-1) * st.liftoff.v;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dx(0.6, 1.0), dy(0.35, 0.45), dz(-0.1, 0.1);
  std::vector<double> us;
  us.reserve(iterations);
  int found = 0;
  for (int i = 0; i < iterations; ++i) {
    const SteppingStone s1{Vec3(dx(rng), dy(rng), dz(rng))};
    const SteppingStone s2{Vec3(dx(rng), -dy(rng), dz(rng))};
    const auto t0 = std::chrono::steady_clock::now();
    try {
      sel.select_stones_liftoff(s1, s2, lo);
      ++found;
    } catch (const SelectionError&) {
    }
    us.push_back(std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(us.begin(), us.end());
  std::cout << json{{"status", "ok"},
                    {"entries", lib.size()},
                    {"iterations", iterations},
                    {"feasible", found},
                    {"median_us", us[us.size() / 2]},
                    {"p95_us", us[us.size() * 95 / 100]}}
                   .dump()
            << std::endl;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"slipstep: SLIP trajectory libraries, deadbeat gains and step adaptation"};
  app.require_subcommand(1);

  std::string grid = "default", out, dir, scenario, noise, format = "csv";
  unsigned jobs = default_jobs();
  double omega = 20.0;
  std::uint64_t seed = 1;
  int iterations = 2000;

  auto* bl = app.add_subcommand("build-library", "solve the periodic trajectory grid");
  bl->add_option("--grid", grid, "grid file (key = value) or 'default'");
  bl->add_option("--out", out, "output directory")->required();
  bl->add_option("--jobs", jobs, "worker threads");

  auto* bg = app.add_subcommand("build-gains", "deadbeat gains for a library directory");
  bg->add_option("--library", dir, "library directory")->required();
  bg->add_option("--jobs", jobs, "worker threads");
  bg->add_option("--omega", omega, "PD natural frequency [rad/s]");

  auto* run = app.add_subcommand("run", "closed-loop scenario");
  run->add_option("--scenario", scenario, "scenario file")->required();
  run->add_option("--library", dir, "library directory")->required();
  auto* seed_opt = run->add_option("--seed", seed, "scenario seed");
  run->add_option("--noise", noise, "noise file or 'none'");
  run->add_option("--out", out, "log path");
  run->add_option("--format", format, "log format")->check(CLI::IsMember({"csv", "json"}));

  auto* bench = app.add_subcommand("bench-selection", "stepping-stone liftoff selection latency");
  bench->add_option("--library", dir, "library directory")->required();
  bench->add_option("--iterations", iterations, "selections to time")->check(CLI::PositiveNumber);
  bench->add_option("--seed", seed, "stone seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return fail(kUsage, "usage_error", e.what());
  }

  try {
    if (*bl) return cmd_build_library(grid, out, jobs);
    if (*bg) return cmd_build_gains(dir, jobs, omega);
    if (*run) return cmd_run(scenario, dir, seed, seed_opt->count() > 0, noise, out, format);
    if (*bench) return cmd_bench(dir, iterations, seed);
  } catch (const Error& e) {
    const int code = e.kind() == ErrorKind::Io ? kIo : e.kind() == ErrorKind::InvalidArgument ? kUsage : kRunFailed;
    return fail(code, status_code(e.kind()), e.what());
  } catch (const std::exception& e) {
    return fail(kRunFailed, "error", e.what());
  }
  return kUsage;
}
