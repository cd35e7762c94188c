#pragma once

#include <mutex>

#include "slipstep/slipstep.hpp"

namespace slipstep::testing {

// Default library and gains, built once per test binary.
struct Built {
  TrajectoryLibrary lib;
  GainLibrary gains;
};

inline const Built& default_built() {
  static Built b;
  static std::once_flag once;
  std::call_once(once, [] {
    b.lib = build_library(TemplateParams{}, LibraryGrid::default_grid(), 4);
    b.gains = build_gain_library(b.lib, PdGains::critically_damped(b.lib.params.m), {}, 4);
  });
  return b;
}

inline std::size_t find_entry(const TrajectoryLibrary& lib, double vx, double h, double k) {
  for (std::size_t i = 0; i < lib.size(); ++i)
    if (std::abs(lib[i].vx_apex - vx) < 1e-9 && std::abs(lib[i].h_apex - h) < 1e-9 && std::abs(lib[i].k - k) < 1e-9)
      return i;
  return lib.size();
}

// Periodic liftoff of entry `e`, expressed relative to its foot in the frame
// of the next (mirrored) stance.
inline ComState periodic_liftoff(const TrajectoryEntry& e, const TemplateParams& params) {
  const TemplateParams P = params.with_stiffness(e.k);
  const ApexStep st = passive_apex_step(P, e.apex(), e.command(P));
  ComState lo;
  lo.p = side_mirror(-1) * (st.liftoff.p - st.pf);
  lo.v = side_mirror(-1) * st.liftoff.v;
  return lo;
}

}  // namespace slipstep::testing

namespace slipstep::testing {

// Actively controlled stance from the periodic touchdown against the passive
// spring force along the same reference, compared per substep at its
// midpoint: RMS of the difference over RMS of the passive force.
inline double grf_normalized_rms(const TrajectoryEntry& e, const TemplateParams& params) {
  const TemplateParams P = params.with_stiffness(e.k);
  const ApexStep pass = passive_apex_step(P, e.apex(), e.command(P));
  const ReferenceTrajectory ref = make_reference(e, P);
  const ActiveStanceOptions opt;
  const ActiveStanceResult act = simulate_active_stance(P, ref.anchored(pass.pf), pass.touchdown, pass.pf,
                                                        PdGains::critically_damped(P.m), opt);
  const double h = opt.tick / opt.substeps;
  double se = 0.0, sp = 0.0;
  for (std::size_t i = 1; i < act.trace.samples.size(); ++i) {
    const TraceSample& s = act.trace.samples[i];
    const double dt = s.state.t - act.trace.samples[i - 1].state.t;
    if (dt < 0.5 * h) continue;  // partial liftoff substep
    const double t = s.state.t - 0.5 * dt - pass.touchdown.t;
    const Vec3 fp = P.m * (ref.relative_at(t).a - P.gravity());
    se += (s.f - fp).squaredNorm();
    sp += fp.squaredNorm();
  }
  return std::sqrt(se / sp);
}

}  // namespace slipstep::testing
