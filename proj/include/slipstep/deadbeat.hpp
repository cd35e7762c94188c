#pragma once

#include <cmath>
#include <future>
#include <string>
#include <vector>

#include "slipstep/active_template.hpp"

namespace slipstep {

struct Jacobians {
  Mat3 Jx = Mat3::Zero();
  Mat3 Ju = Mat3::Zero();
};

struct JacobianSteps {
  Vec3 eps_x{0.02, 0.02, 0.005};
  Vec3 eps_u{0.005, 0.005, 0.002};
};

/// Central-difference Jacobians of the active return map about an entry's
/// periodic point. A failed perturbed run halves that step (up to 3 times).
inline Jacobians estimate_jacobians(const TrajectoryEntry& entry, const TemplateParams& params,
                                    const PdGains& gains, const JacobianSteps& steps = {}) {
  if ((steps.eps_x.array() <= 0).any() || (steps.eps_u.array() <= 0).any())
    throw Error(ErrorKind::InvalidArgument, "perturbation sizes must be positive");
  const TemplateParams P = params.with_stiffness(entry.k);
  const ReferenceTrajectory ref = make_reference(entry, P);
  const Vec3 x0 = entry.apex().as_vector();
  const Vec3 u0 = entry.command(P).as_vector();

  auto map = [&](const Vec3& x, const Vec3& u) {
    return active_return_map(P, ApexState::from_vector(x), LegCommand::from_vector(u, 1), ref, gains).as_vector();
  };

  Jacobians J;
  auto column = [&](bool wrt_x, int i, double eps) -> Vec3 {
    for (int attempt = 0; attempt <= 3; ++attempt, eps *= 0.5) {
      try {
        Vec3 xp = x0, xm = x0, up = u0, um = u0;
        if (wrt_x) {
          xp[i] += eps;
          xm[i] -= eps;
        } else {
          up[i] += eps;
          um[i] -= eps;
        }
        return (map(xp, up) - map(xm, um)) / (2.0 * eps);
      } catch (const Error& err) {
        if (attempt == 3) throw;
      }
    }
    return Vec3::Zero();
  };
  for (int i = 0; i < 3; ++i) {
    J.Jx.col(i) = column(true, i, steps.eps_x[i]);
    J.Ju.col(i) = column(false, i, steps.eps_u[i]);
  }
  return J;
}

inline double condition_number(const Mat3& A) {
  const Eigen::JacobiSVD<Mat3> svd(A);
  const Vec3 s = svd.singularValues();
  return s[2] > 0 ? s[0] / s[2] : std::numeric_limits<double>::infinity();
}

/// Deadbeat gain K = -Ju^-1 Jx.
inline Mat3 compute_gain(const Mat3& Jx, const Mat3& Ju, double max_cond = 1e6) {
  const double c = condition_number(Ju);
  if (!(c < max_cond)) throw Error(ErrorKind::SingularJacobian, "cond(Ju) = " + std::to_string(c));
  return -Ju.fullPivLu().solve(Jx);
}

/// u = u* + K (x - x*), not clamped. The result carries the +1 stance side.
inline LegCommand deadbeat_command(const TrajectoryEntry& entry, const Mat3& K, const ApexState& x,
                                   const TemplateParams& P) {
  const Vec3 u = entry.command(P).as_vector() + K * (x.as_vector() - entry.apex().as_vector());
  return LegCommand::from_vector(u, 1);
}

struct GainEntry {
  Mat3 K = Mat3::Zero();
  double cond = 0.0;
  bool ok = false;
  std::string error;
};

struct GainLibrary {
  std::vector<GainEntry> gains;

  std::size_t size() const { return gains.size(); }
  const GainEntry& operator[](std::size_t i) const { return gains[i]; }

  std::vector<std::size_t> failures() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < gains.size(); ++i)
      if (!gains[i].ok) out.push_back(i);
    return out;
  }
};

struct GainOptions {
  JacobianSteps steps;
  double max_cond = 1e6;
  double max_norm = 50.0;
};

inline GainEntry gain_for_entry(const TrajectoryEntry& entry, const TemplateParams& params, const PdGains& gains,
                                const GainOptions& opt = {}) {
  GainEntry g;
  try {
    const Jacobians J = estimate_jacobians(entry, params, gains, opt.steps);
    g.cond = condition_number(J.Ju);
    g.K = compute_gain(J.Jx, J.Ju, opt.max_cond);
    if (!g.K.allFinite() || g.K.norm() > opt.max_norm)
      g.error = "gain norm " + std::to_string(g.K.norm()) + " exceeds limit";
    else
      g.ok = true;
  } catch (const Error& err) {
    g.error = err.what();
  }
  return g;
}

/// Gains for every entry, index-aligned with the library. Parallel runs give
/// the same result as sequential ones.
inline GainLibrary build_gain_library(const TrajectoryLibrary& lib, const PdGains& gains,
                                      const GainOptions& opt = {}, unsigned jobs = 1) {
  GainLibrary out;
  out.gains.resize(lib.size());
  if (jobs <= 1) {
    for (std::size_t i = 0; i < lib.size(); ++i) out.gains[i] = gain_for_entry(lib[i], lib.params, gains, opt);
    return out;
  }
  for (std::size_t start = 0; start < lib.size(); start += jobs) {
    std::vector<std::future<GainEntry>> batch;
    for (std::size_t i = start; i < std::min(lib.size(), start + jobs); ++i)
      batch.push_back(
          std::async(std::launch::async, [&, i] { return gain_for_entry(lib[i], lib.params, gains, opt); }));
    for (std::size_t i = 0; i < batch.size(); ++i) out.gains[start + i] = batch[i].get();
  }
  return out;
}

inline GainLibrary build_gain_library(const TrajectoryLibrary& lib) {
  return build_gain_library(lib, PdGains::critically_damped(lib.params.m));
}

}  // namespace slipstep
