#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "slipstep/harness/config.hpp"
#include "slipstep/step_adaptation.hpp"

namespace slipstep {

enum class ScenarioKind { FlatRun, Stones, Obstacles, Slalom, Turns };

inline const char* to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::FlatRun: return "flat-run";
    case ScenarioKind::Stones: return "stones";
    case ScenarioKind::Obstacles: return "obstacles";
    case ScenarioKind::Slalom: return "slalom";
    case ScenarioKind::Turns: return "turns";
  }
  return "?";
}

inline ScenarioKind scenario_kind_from_string(const std::string& s) {
  for (ScenarioKind k : {ScenarioKind::FlatRun, ScenarioKind::Stones, ScenarioKind::Obstacles, ScenarioKind::Slalom,
                         ScenarioKind::Turns})
    if (s == to_string(k)) return k;
  throw Error(ErrorKind::InvalidArgument, "unknown scenario kind '" + s + "'");
}

/// Uniform draw ranges for consecutive stone offsets; lateral sign
/// alternates with the stance side.
struct StoneRanges {
  double dx_min = 0.6, dx_max = 1.0;
  double dy_min = 0.35, dy_max = 0.45;
  double dz_min = -0.1, dz_max = 0.1;
  double l = 0.25;  // y extent
  double w = 0.3;   // x extent
};

struct ObstacleRanges {
  double appear = 0.40;  // back of the current foot to the near edge
  double width_min = 0.05, width_max = 0.30;
  double height_min = 0.10, height_max = 0.15;
};

/// World-frame stone: axis-aligned rectangle around `center`.
struct Stone {
  Vec3 center = Vec3::Zero();
  double l = 0.25;
  double w = 0.3;

  bool contains(const Vec3& p) const {
    return std::abs(p.x() - center.x()) < 0.5 * w && std::abs(p.y() - center.y()) < 0.5 * l;
  }
};

/// Obstacle box along the running direction: [near, near + width] in x,
/// full height `height` above the ground it stands on.
struct ObstacleBox {
  double width = 0.1;
  double height = 0.1;
};

/// A commanded change applied at touchdown number `step`.
struct Command {
  int step = 0;
  double vx = 1.0;
  double heading = 0.0;
};

struct ScenarioConfig {
  ScenarioKind kind = ScenarioKind::FlatRun;
  std::uint64_t seed = 1;
  int steps = 20;
  double duration = 0.0;  // seconds; 0 means use `steps`
  double vx0 = 1.0;
  double h = 0.95;
  double k = 8000.0;
  int n_stones = 10;
  StoneRanges stones;
  int n_obstacles = 3;
  int obstacle_spacing = 6;  // steps between obstacle appearances
  ObstacleRanges obstacles;
  double slalom_angle = 0.3;
  int slalom_period = 4;
  std::vector<Command> commands;
  bool use_deadbeat = true;
  double fall_height = 0.3;

  static ScenarioConfig from_config(const KeyValueConfig& c) {
    ScenarioConfig s;
    s.kind = scenario_kind_from_string(c.get_string("kind", to_string(s.kind)));
    s.seed = static_cast<std::uint64_t>(c.get_int("seed", static_cast<long long>(s.seed)));
    s.steps = static_cast<int>(c.get_int("steps", s.steps));
    s.duration = c.get_double("duration", s.duration);
    s.vx0 = c.get_double("vx0", s.vx0);
    s.h = c.get_double("h", s.h);
    s.k = c.get_double("k", s.k);
    s.n_stones = static_cast<int>(c.get_int("stones.count", s.n_stones));
    s.stones.dx_min = c.get_double("stones.dx_min", s.stones.dx_min);
    s.stones.dx_max = c.get_double("stones.dx_max", s.stones.dx_max);
    s.stones.dy_min = c.get_double("stones.dy_min", s.stones.dy_min);
    s.stones.dy_max = c.get_double("stones.dy_max", s.stones.dy_max);
    s.stones.dz_min = c.get_double("stones.dz_min", s.stones.dz_min);
    s.stones.dz_max = c.get_double("stones.dz_max", s.stones.dz_max);
    s.stones.l = c.get_double("stones.l", s.stones.l);
    s.stones.w = c.get_double("stones.w", s.stones.w);
    s.n_obstacles = static_cast<int>(c.get_int("obstacles.count", s.n_obstacles));
    s.obstacle_spacing = static_cast<int>(c.get_int("obstacles.spacing", s.obstacle_spacing));
    s.obstacles.appear = c.get_double("obstacles.appear", s.obstacles.appear);
    s.obstacles.width_min = c.get_double("obstacles.width_min", s.obstacles.width_min);
    s.obstacles.width_max = c.get_double("obstacles.width_max", s.obstacles.width_max);
    s.obstacles.height_min = c.get_double("obstacles.height_min", s.obstacles.height_min);
    s.obstacles.height_max = c.get_double("obstacles.height_max", s.obstacles.height_max);
    s.slalom_angle = c.get_double("slalom.angle", s.slalom_angle);
    s.slalom_period = static_cast<int>(c.get_int("slalom.period", s.slalom_period));
    s.use_deadbeat = c.get_bool("deadbeat", s.use_deadbeat);
    s.fall_height = c.get_double("fall_height", s.fall_height);
    // commands: "step:vx:heading, step:vx:heading"
    const std::string cmds = c.get_string("commands", "");
    std::stringstream ss(cmds);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.find_first_not_of(" \t") == std::string::npos) continue;
      Command cmd;
      char a = 0, b = 0;
      std::stringstream is(item);
      if (!(is >> cmd.step >> a >> cmd.vx >> b >> cmd.heading) || a != ':' || b != ':')
        throw Error(ErrorKind::InvalidArgument, "bad command '" + item + "', expected step:vx:heading");
      s.commands.push_back(cmd);
    }
    s.validate();
    return s;
  }

  void validate() const {
    if (steps < 1 && duration <= 0) throw Error(ErrorKind::InvalidArgument, "steps must be >= 1");
    if (n_stones < 1 && kind == ScenarioKind::Stones) throw Error(ErrorKind::InvalidArgument, "need >= 1 stone");
    if (stones.dx_min > stones.dx_max || stones.dy_min > stones.dy_max || stones.dz_min > stones.dz_max)
      throw Error(ErrorKind::InvalidArgument, "stone ranges inverted");
    if (!(stones.l > 0) || !(stones.w > 0)) throw Error(ErrorKind::InvalidArgument, "stone size must be positive");
    if (obstacles.width_min > obstacles.width_max || obstacles.height_min > obstacles.height_max)
      throw Error(ErrorKind::InvalidArgument, "obstacle ranges inverted");
  }
};

namespace detail {

inline double draw(std::mt19937_64& rng, double lo, double hi) {
  if (lo == hi) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace detail

/// `n` stones after the start stone at the origin (returned first). Stone k
/// is offset from stone k-1 by (dx, +-dy, dz), with the lateral sign
/// starting at +1 and alternating.
inline std::vector<Stone> generate_stone_course(std::uint64_t seed, int n, const StoneRanges& r = {}) {
  if (n < 1) throw Error(ErrorKind::InvalidArgument, "stone count must be >= 1");
  std::mt19937_64 rng(seed);
  std::vector<Stone> out;
  out.push_back({Vec3::Zero(), r.l, r.w});
  int side = 1;
  for (int i = 0; i < n; ++i, side = -side) {
    const double dx = detail::draw(rng, r.dx_min, r.dx_max);
    const double dy = detail::draw(rng, r.dy_min, r.dy_max);
    const double dz = detail::draw(rng, r.dz_min, r.dz_max);
    out.push_back({out.back().center + Vec3(dx, side * dy, dz), r.l, r.w});
  }
  return out;
}

inline std::vector<ObstacleBox> generate_obstacles(std::uint64_t seed, int n, const ObstacleRanges& r = {}) {
  std::mt19937_64 rng(seed);
  std::vector<ObstacleBox> out;
  for (int i = 0; i < n; ++i) {
    const double w = detail::draw(rng, r.width_min, r.width_max);
    const double h = detail::draw(rng, r.height_min, r.height_max);
    out.push_back({w, h});
  }
  return out;
}

/// The box as the selection policies see it: far edge measured from the
/// back of the current foot.
inline Obstacle obstacle_from_box(const ObstacleBox& box, const ObstacleRanges& r) {
  return {r.appear + box.width, box.height};
}

}  // namespace slipstep
