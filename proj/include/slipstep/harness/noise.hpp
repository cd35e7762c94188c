#pragma once

#include <cstdint>
#include <deque>
#include <random>

#include "slipstep/harness/config.hpp"
#include "slipstep/types.hpp"

namespace slipstep {

struct NoiseConfig {
  double velocity_std = 0.0;     // m/s
  int measurement_delay = 0;     // control ticks
  double force_rel_std = 0.0;    // fraction of each force component
  int force_delay = 0;           // control ticks
  double mass_error = 0.0;       // plant mass = m (1 + mass_error)

  static NoiseConfig none() { return {}; }

  /// Defaults of the noisy robustness scenario.
  static NoiseConfig typical() { return {0.05, 2, 0.02, 1, 0.05}; }

  bool is_zero() const {
    return velocity_std == 0.0 && measurement_delay == 0 && force_rel_std == 0.0 && force_delay == 0 &&
           mass_error == 0.0;
  }

  void validate() const {
    if (velocity_std < 0 || force_rel_std < 0) throw Error(ErrorKind::InvalidArgument, "noise std must be >= 0");
    if (measurement_delay < 0 || force_delay < 0) throw Error(ErrorKind::InvalidArgument, "delays must be >= 0");
    if (mass_error <= -1.0) throw Error(ErrorKind::InvalidArgument, "mass error must be > -1");
  }

  static NoiseConfig from_config(const KeyValueConfig& c) {
    NoiseConfig n;
    n.velocity_std = c.get_double("velocity_std", n.velocity_std);
    n.measurement_delay = static_cast<int>(c.get_int("measurement_delay", n.measurement_delay));
    n.force_rel_std = c.get_double("force_rel_std", n.force_rel_std);
    n.force_delay = static_cast<int>(c.get_int("force_delay", n.force_delay));
    n.mass_error = c.get_double("mass_error", n.mass_error);
    n.validate();
    return n;
  }
};

/// Per-run noise state: delay lines and a seeded generator. With a zero
/// config every call is the identity and no random numbers are drawn.
class NoiseModel {
 public:
  NoiseModel(const NoiseConfig& cfg, std::uint64_t seed) : cfg_(cfg), rng_(seed ^ 0x9e3779b97f4a7c15ULL) {
    cfg_.validate();
  }

  const NoiseConfig& config() const { return cfg_; }

  /// Feeds the true state of this tick and returns what the controller sees.
  ComState measure(const ComState& truth) {
    meas_.push_back(truth);
    while (static_cast<int>(meas_.size()) > cfg_.measurement_delay + 1) meas_.pop_front();
    ComState seen = meas_.front();
    seen.v += velocity_noise();
    return seen;
  }

  /// Event-triggered capture (touchdown, liftoff): undelayed, velocity noise.
  ComState capture(const ComState& truth) {
    ComState seen = truth;
    seen.v += velocity_noise();
    return seen;
  }

  /// Feeds this tick's command and returns the force applied to the plant.
  Vec3 actuate(const Vec3& command) {
    cmd_.push_back(command);
    while (static_cast<int>(cmd_.size()) > cfg_.force_delay + 1) cmd_.pop_front();
    Vec3 f = cmd_.front();
    if (cfg_.force_rel_std > 0)
      for (int i = 0; i < 3; ++i) f[i] += cfg_.force_rel_std * std::abs(f[i]) * normal_(rng_);
    return f;
  }

  /// Drops queued commands (the foot left the ground).
  void clear_commands() { cmd_.clear(); }

  double plant_mass(double m) const { return m * (1.0 + cfg_.mass_error); }

 private:
  Vec3 velocity_noise() {
    if (cfg_.velocity_std == 0.0) return Vec3::Zero();
    return cfg_.velocity_std * Vec3(normal_(rng_), normal_(rng_), normal_(rng_));
  }

  NoiseConfig cfg_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::deque<ComState> meas_;
  std::deque<Vec3> cmd_;
};

}  // namespace slipstep
