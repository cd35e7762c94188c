#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "slipstep/harness/closed_loop.hpp"
#include "support.hpp"

using namespace slipstep;
using slipstep::testing::default_built;

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  auto dir = std::filesystem::temp_directory_path() / "slipstep_harness" / info->name();
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir / name;
}

RunLog run(const ScenarioConfig& sc, const NoiseConfig& noise = {}, HarnessOptions opt = {}) {
  return run_closed_loop(sc, default_built().lib, default_built().gains, noise, opt);
}

void expect_same_log(const RunLog& a, const RunLog& b) {
  ASSERT_EQ(a.ticks.size(), b.ticks.size());
  for (std::size_t i = 0; i < a.ticks.size(); ++i) {
    const TickRecord &x = a.ticks[i], &y = b.ticks[i];
    ASSERT_EQ(x.t, y.t) << i;
    ASSERT_EQ(x.phase, y.phase) << i;
    ASSERT_EQ(x.p, y.p) << i;
    ASSERT_EQ(x.v, y.v) << i;
    ASSERT_EQ(x.f, y.f) << i;
    ASSERT_EQ(x.pf, y.pf) << i;
    ASSERT_EQ(x.ref_id, y.ref_id) << i;
    ASSERT_EQ(x.v_ref, y.v_ref) << i;
    ASSERT_EQ(x.heading, y.heading) << i;
  }
  ASSERT_EQ(a.steps.size(), b.steps.size());
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    const StepRecord &x = a.steps[i], &y = b.steps[i];
    EXPECT_EQ(x.step, y.step);
    EXPECT_EQ(x.t_touchdown, y.t_touchdown);
    EXPECT_EQ(x.side, y.side);
    EXPECT_EQ(x.entry, y.entry);
    EXPECT_EQ(x.td_entry, y.td_entry);
    EXPECT_EQ(x.u, y.u);
    EXPECT_EQ(x.foothold, y.foothold);
    EXPECT_EQ(x.targeted, y.targeted);
    EXPECT_EQ(x.target, y.target);
    EXPECT_EQ(x.target_l, y.target_l);
    EXPECT_EQ(x.target_w, y.target_w);
    EXPECT_EQ(x.landing_error, y.landing_error);
    EXPECT_EQ(x.inside, y.inside);
    EXPECT_EQ(x.apex, y.apex);
    EXPECT_EQ(x.apex_ref, y.apex_ref);
    EXPECT_EQ(x.heading, y.heading);
    EXPECT_EQ(x.note, y.note);
  }
  EXPECT_EQ(a.summary.status, b.summary.status);
  EXPECT_EQ(a.summary.message, b.summary.message);
  EXPECT_EQ(a.summary.failed_stage, b.summary.failed_stage);
  EXPECT_EQ(a.summary.steps, b.summary.steps);
  EXPECT_EQ(a.summary.duration, b.summary.duration);
  EXPECT_EQ(a.summary.vx_rmse, b.summary.vx_rmse);
  EXPECT_EQ(a.summary.vy_rmse, b.summary.vy_rmse);
  EXPECT_EQ(a.summary.rmse_samples, b.summary.rmse_samples);
  EXPECT_EQ(a.summary.fell, b.summary.fell);
}

// Running direction from two consecutive apexes; the lateral sway cancels.
double travel_direction(const StepRecord& a, const StepRecord& b) {
  const Vec2 v = a.apex.head<2>() + b.apex.head<2>();
  return std::atan2(v.y(), v.x());
}

double wrap(double a) { return std::remainder(a, 2 * M_PI); }

ScenarioConfig stones(std::uint64_t seed) {
  ScenarioConfig sc;
  sc.kind = ScenarioKind::Stones;
  sc.seed = seed;
  return sc;
}

}  // namespace

TEST(ScenarioConfig, ParsesFile) {
  const KeyValueConfig c = KeyValueConfig::parse(
      "kind = turns\nseed = 42\nsteps = 14\nvx0 = 1.0\ncommands = 4:1.0:0.785, 9 : 1.5 : 0\nstones.w = 0.4\n");
  const ScenarioConfig s = ScenarioConfig::from_config(c);
  EXPECT_EQ(s.kind, ScenarioKind::Turns);
  EXPECT_EQ(s.seed, 42u);
  EXPECT_EQ(s.steps, 14);
  ASSERT_EQ(s.commands.size(), 2u);
  EXPECT_EQ(s.commands[0].step, 4);
  EXPECT_EQ(s.commands[0].heading, 0.785);
  EXPECT_EQ(s.commands[1].vx, 1.5);
  EXPECT_EQ(s.stones.w, 0.4);
}

TEST(ScenarioConfig, Errors) {
  EXPECT_THROW(ScenarioConfig::from_config(KeyValueConfig::parse("kind = hopscotch")), Error);
  EXPECT_THROW(ScenarioConfig::from_config(KeyValueConfig::parse("commands = 4:1.0")), Error);
  EXPECT_THROW(ScenarioConfig::from_config(KeyValueConfig::parse("steps = 0")), Error);
  EXPECT_THROW(ScenarioConfig::from_config(KeyValueConfig::parse("stones.dx_min = 2")), Error);
  EXPECT_THROW(ScenarioConfig::from_config(KeyValueConfig::parse("stones.l = 0")), Error);
  EXPECT_THROW(ScenarioConfig::from_config(KeyValueConfig::parse("obstacles.height_max = 0.01")), Error);
}

TEST(ScenarioConfig, ShippedConfigsLoad) {
  const std::filesystem::path dir = SLIPSTEP_SOURCE_DIR "/configs";
  for (const char* name : {"flat.cfg", "accel.cfg", "decel_no_deadbeat.cfg", "stones.cfg", "obstacles.cfg",
                           "slalom.cfg", "turn.cfg"})
    EXPECT_NO_THROW(ScenarioConfig::from_config(KeyValueConfig::load((dir / name).string()))) << name;
  for (const char* name : {"noise_none.cfg", "noise_typical.cfg"})
    EXPECT_NO_THROW(NoiseConfig::from_config(KeyValueConfig::load((dir / name).string()))) << name;
  EXPECT_TRUE(NoiseConfig::from_config(KeyValueConfig::load((dir / "noise_none.cfg").string())).is_zero());
}

TEST(NoiseConfig, Validation) {
  NoiseConfig n;
  n.velocity_std = -0.1;
  EXPECT_THROW(n.validate(), Error);
  n = {};
  n.force_delay = -1;
  EXPECT_THROW(n.validate(), Error);
  EXPECT_FALSE(NoiseConfig::typical().is_zero());
  EXPECT_TRUE(NoiseConfig::none().is_zero());
}

TEST(NoiseModel, ZeroConfigIsIdentity) {
  NoiseModel m(NoiseConfig::none(), 3);
  ComState s{Vec3(1, 2, 3), Vec3(0.5, -0.1, 0.2), 0.7};
  const ComState seen = m.measure(s);
  EXPECT_EQ(seen.p, s.p);
  EXPECT_EQ(seen.v, s.v);
  EXPECT_EQ(m.actuate(Vec3(10, 20, 700)), Vec3(10, 20, 700));
}

TEST(NoiseModel, DelaysByTicks) {
  NoiseConfig c;
  c.measurement_delay = 2;
  c.force_delay = 1;
  NoiseModel m(c, 3);
  std::vector<double> seen;
  for (int i = 0; i < 5; ++i) seen.push_back(m.measure({Vec3(i, 0, 0), Vec3::Zero(), 0.0}).p.x());
  EXPECT_EQ(seen, (std::vector<double>{0, 0, 0, 1, 2}));
  EXPECT_EQ(m.actuate(Vec3(1, 0, 0)).x(), 1.0);
  EXPECT_EQ(m.actuate(Vec3(2, 0, 0)).x(), 1.0);
  EXPECT_EQ(m.actuate(Vec3(3, 0, 0)).x(), 2.0);
}

TEST(StoneCourse, RangesAndAlternation) {
  const auto c = generate_stone_course(7, 10);
  ASSERT_EQ(c.size(), 11u);
  EXPECT_EQ(c[0].center, Vec3::Zero());
  for (std::size_t i = 1; i < c.size(); ++i) {
    const Vec3 d = c[i].center - c[i - 1].center;
    EXPECT_GE(d.x(), 0.6);
    EXPECT_LE(d.x(), 1.0);
    EXPECT_GE(std::abs(d.y()), 0.35);
    EXPECT_LE(std::abs(d.y()), 0.45);
    EXPECT_EQ(d.y() > 0, i % 2 == 1);
    EXPECT_GE(d.z(), -0.1);
    EXPECT_LE(d.z(), 0.1);
    EXPECT_EQ(c[i].l, 0.25);
    EXPECT_EQ(c[i].w, 0.3);
  }
}

TEST(StoneCourse, DeterministicAndDegenerate) {
  const auto a = generate_stone_course(11, 10), b = generate_stone_course(11, 10), c = generate_stone_course(12, 10);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].center, b[i].center);
  EXPECT_NE(a[3].center, c[3].center);
  StoneRanges r;
  r.dx_min = r.dx_max = 0.8;
  r.dy_min = r.dy_max = 0.4;
  r.dz_min = r.dz_max = 0.0;
  const auto d = generate_stone_course(5, 4, r);
  for (std::size_t i = 1; i < d.size(); ++i)
    EXPECT_NEAR((d[i].center - d[i - 1].center - Vec3(0.8, i % 2 ? 0.4 : -0.4, 0.0)).norm(), 0.0, 1e-12);
  EXPECT_THROW(generate_stone_course(1, 0), Error);
}

TEST(Obstacles, RangesDeterminismAndEmpty) {
  const auto a = generate_obstacles(9, 50), b = generate_obstacles(9, 50);
  ASSERT_EQ(a.size(), 50u);
  const ObstacleRanges r;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].width, b[i].width);
    EXPECT_GE(a[i].width, 0.05);
    EXPECT_LE(a[i].width, 0.30);
    EXPECT_GE(a[i].height, 0.10);
    EXPECT_LE(a[i].height, 0.15);
    const Obstacle o = obstacle_from_box(a[i], r);
    EXPECT_EQ(o.d1x, 0.40 + a[i].width);
    EXPECT_EQ(o.d1z, a[i].height);
  }
  EXPECT_TRUE(generate_obstacles(9, 0).empty());
}

TEST(ClosedLoop, ZeroNoiseEqualsBypass) {
  const ScenarioConfig sc = stones(3);
  HarnessOptions bypass;
  bypass.bypass_noise = true;
  expect_same_log(run(sc, NoiseConfig::none()), run(sc, NoiseConfig::typical(), bypass));
}

TEST(ClosedLoop, Deterministic) {
  ScenarioConfig sc;
  sc.kind = ScenarioKind::Obstacles;
  sc.steps = 25;
  sc.seed = 21;
  expect_same_log(run(sc, NoiseConfig::typical()), run(sc, NoiseConfig::typical()));
}

TEST(ClosedLoop, MonotoneTimeAndLandingErrorOnlyWhenTargeted) {
  const RunLog log = run(stones(4));
  for (std::size_t i = 1; i < log.ticks.size(); ++i) EXPECT_GT(log.ticks[i].t, log.ticks[i - 1].t);
  for (std::size_t i = 1; i < log.steps.size(); ++i) EXPECT_GT(log.steps[i].t_touchdown, log.steps[i - 1].t_touchdown);
  for (const StepRecord& s : log.steps)
    if (!s.targeted) EXPECT_EQ(s.landing_error, Vec3::Zero());
}

TEST(ClosedLoop, AccelerationFromJogging) {
  ScenarioConfig sc;
  sc.vx0 = 0.0;
  sc.steps = 8;
  sc.commands = {{2, 1.0, 0.0}};
  const RunLog log = run(sc);
  ASSERT_TRUE(log.ok()) << log.summary.message;
  // first apex after the commanded stance
  ASSERT_GE(log.steps.size(), 3u);
  EXPECT_LT(std::abs(log.steps[0].apex.x()), 1e-6);
  EXPECT_LT(std::abs(log.steps[2].apex.x() - 1.0), 0.05);
  for (std::size_t i = 3; i < log.steps.size(); ++i) EXPECT_LT(std::abs(log.steps[i].apex.x() - 1.0), 0.01);
}

TEST(ClosedLoop, DecelerationNeedsDeadbeat) {
  ScenarioConfig sc;
  sc.vx0 = 2.0;
  sc.steps = 6;
  sc.commands = {{3, 1.0, 0.0}};
  const RunLog with = run(sc);
  sc.use_deadbeat = false;
  const RunLog without = run(sc);
  ASSERT_TRUE(with.ok()) << with.summary.message;
  // the apex before touchdown 5 is the first one the leg command reaches
  auto err = [](const RunLog& log) {
    if (log.steps.size() < 5) return std::numeric_limits<double>::infinity();
    return (log.steps[4].apex - log.steps[4].apex_ref).norm();
  };
  EXPECT_GT(err(without), 2.0 * err(with));
}

TEST(ClosedLoop, NoFallAtLibraryVelocities) {
  ScenarioConfig sc;
  sc.duration = 30.0;
  for (int i = 0; i <= 20; ++i) {
    sc.vx0 = 0.1 * i;
    const RunLog log = run(sc);
    EXPECT_TRUE(log.ok()) << sc.vx0 << ": " << log.summary.status << " " << log.summary.message;
    EXPECT_FALSE(log.summary.fell);
    EXPECT_GE(log.summary.duration, 30.0 - 1.0) << sc.vx0;
  }
}

TEST(ClosedLoop, StoneLandingAccuracy) {
  int ok = 0;
  for (std::uint64_t seed = 1000; seed < 1006; ++seed) {
    const RunLog log = run(stones(seed));
    if (!log.ok()) {
      EXPECT_FALSE(log.summary.failed_stage.empty() && log.summary.status == "selection_error");
      continue;
    }
    ++ok;
    int targeted = 0;
    for (const StepRecord& s : log.steps) {
      if (!s.targeted) continue;
      ++targeted;
      EXPECT_TRUE(s.inside) << seed << " step " << s.step;
      EXPECT_LT(std::abs(s.foothold.x() - s.target.x()), 0.5 * s.target_w);
      EXPECT_LT(std::abs(s.foothold.y() - s.target.y()), 0.5 * s.target_l);
    }
    EXPECT_EQ(targeted, static_cast<int>(generate_stone_course(seed, 10).size())) << seed;
  }
  EXPECT_GE(ok, 4);
}

TEST(ClosedLoop, TurnsOnEitherLeg) {
  for (int step : {4, 5})
    for (double heading : {M_PI / 4, -M_PI / 4}) {
      ScenarioConfig sc;
      sc.kind = ScenarioKind::Turns;
      sc.steps = 12;
      sc.commands = {{step, 1.0, heading}};
      const RunLog log = run(sc);
      ASSERT_TRUE(log.ok()) << step << " " << heading << " " << log.summary.message;
      const int n = step + 3;  // third apex after the command
      const double err = wrap(travel_direction(log.steps[n - 2], log.steps[n - 1]) - heading);
      EXPECT_LT(std::abs(err), 5.0 * M_PI / 180) << step << " " << heading;
      EXPECT_NE(log.steps[step - 1].side, log.steps[step].side);
    }
}

TEST(ClosedLoop, NoiseDoesNotTopple) {
  ScenarioConfig sc;
  sc.duration = 30.0;
  const RunLog log = run(sc, NoiseConfig::typical());
  EXPECT_TRUE(log.ok()) << log.summary.message;
  EXPECT_LT(log.summary.vx_rmse, 0.15);
  EXPECT_GT(log.summary.vx_rmse, 0.0);
}

TEST(RunLogIo, CsvRoundTrip) {
  const RunLog log = run(stones(5));
  const auto path = scratch("run.csv");
  export_log(log, path, LogFormat::Csv);
  expect_same_log(read_log(path, LogFormat::Csv), log);
}

TEST(RunLogIo, JsonRoundTrip) {
  ScenarioConfig sc;
  sc.kind = ScenarioKind::Obstacles;
  sc.steps = 20;
  RunLog log = run(sc);
  log.summary.message = "quote \" and comma, here";
  const auto path = scratch("run.json");
  export_log(log, path, LogFormat::Json);
  expect_same_log(read_log(path, LogFormat::Json), log);
}

TEST(RunLogIo, EmptyLogHasHeadersOnly) {
  const auto path = scratch("empty.csv");
  export_log(RunLog{}, path, LogFormat::Csv);
  auto lines = [](const std::filesystem::path& p) {
    std::ifstream f(p);
    int n = 0;
    for (std::string l; std::getline(f, l);) ++n;
    return n;
  };
  EXPECT_EQ(lines(path), 1);
  EXPECT_EQ(lines(steps_path(path)), 1);
  const RunLog back = read_log(path, LogFormat::Csv);
  EXPECT_TRUE(back.ticks.empty());
  EXPECT_TRUE(back.steps.empty());
}

TEST(RunLogIo, RmseRecomputesFromTicks) {
  const RunLog log = run(stones(6), NoiseConfig::typical());
  const auto path = scratch("rmse.csv");
  export_log(log, path, LogFormat::Csv);
  const RunLog back = read_log(path, LogFormat::Csv);
  // independent sum in the heading frame
  double sx = 0, sy = 0;
  int n = 0;
  for (const TickRecord& t : back.ticks) {
    if (t.ref_id < 0) continue;
    const Vec3 e = t.v - t.v_ref;
    const double c = std::cos(t.heading), s = std::sin(t.heading);
    const double ex = c * e.x() + s * e.y(), ey = -s * e.x() + c * e.y();
    sx += ex * ex;
    sy += ey * ey;
    ++n;
  }
  ASSERT_GT(n, 0);
  EXPECT_EQ(n, back.summary.rmse_samples);
  EXPECT_NEAR(std::sqrt(sx / n), back.summary.vx_rmse, 1e-12);
  EXPECT_NEAR(std::sqrt(sy / n), back.summary.vy_rmse, 1e-12);
}

TEST(RunLogIo, MissingFileIsIoError) {
  try {
    read_log("/nonexistent/run.csv", LogFormat::Csv);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Io);
  }
}
