#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace slipstep;
using slipstep::testing::default_built;
using slipstep::testing::find_entry;

namespace {

double one_step_error(const TrajectoryEntry& e, const Mat3& K, const TemplateParams& params, const Vec3& dx) {
  const TemplateParams P = params.with_stiffness(e.k);
  const ApexState x = ApexState::from_vector(e.apex().as_vector() + dx);
  const LegCommand u = deadbeat_command(e, K, x, P);
  const ApexState next = active_return_map(P, x, u, e, PdGains::critically_damped(P.m));
  return (e.apex().as_vector() - leg_switch() * next.as_vector()).norm();
}

}  // namespace

TEST(ComputeGain, Identity) {
  EXPECT_NEAR((compute_gain(Mat3::Identity(), Mat3::Identity()) + Mat3::Identity()).norm(), 0.0, 1e-15);
}

TEST(ComputeGain, Diagonal) {
  const Mat3 K = compute_gain(Mat3::Identity(), Vec3(2, 4, 8).asDiagonal());
  EXPECT_NEAR((K - Mat3(Vec3(-0.5, -0.25, -0.125).asDiagonal())).norm(), 0.0, 1e-15);
}

TEST(ComputeGain, ResidualIdentity) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int n = 0; n < 50; ++n) {
    Mat3 Jx, Ju;
    for (int i = 0; i < 9; ++i) {
      Jx(i) = u(rng);
      Ju(i) = u(rng);
    }
    Ju += 2.0 * Mat3::Identity();
    const Mat3 K = compute_gain(Jx, Ju);
    EXPECT_LT((Ju * K + Jx).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(ComputeGain, SingularInput) {
  Mat3 Ju = Mat3::Identity();
  Ju(2, 2) = 1e-9;
  try {
    compute_gain(Mat3::Identity(), Ju);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::SingularJacobian);
    EXPECT_NE(std::string(e.what()).find("cond"), std::string::npos);
  }
}

TEST(Jacobians, RejectsNonPositiveSteps) {
  const TrajectoryLibrary& lib = default_built().lib;
  JacobianSteps s;
  s.eps_u[1] = 0.0;
  EXPECT_THROW(estimate_jacobians(lib[0], lib.params, PdGains::critically_damped(73.4), s), Error);
}

TEST(Jacobians, VerticalHopSymmetryZeros) {
  TemplateParams P;
  P.yh = 0.0;
  LibraryGrid g;
  g.vx = {0.0};
  g.h = {0.95};
  g.k = {8000};
  g.th2 = {0.0};
  const TrajectoryLibrary lib = build_library(P, g);
  ASSERT_EQ(lib.size(), 1u);
  const Jacobians J = estimate_jacobians(lib[0], P, PdGains::critically_damped(P.m));
  EXPECT_LT(std::abs(J.Jx(2, 1)), 1e-3);  // dh'/dvy
  EXPECT_LT(std::abs(J.Ju(0, 1)), 1e-3);  // dvx'/dth2
}

TEST(Jacobians, ActiveMapAbsorbsApexErrors) {
  // stance tracking pulls the CoM back onto the reference, so an apex error
  // barely reaches the next apex
  const TrajectoryLibrary& lib = default_built().lib;
  const PdGains pd = PdGains::critically_damped(lib.params.m);
  for (double vx : {0.5, 1.0, 1.5}) {
    const TrajectoryEntry& e = lib[find_entry(lib, vx, 0.95, 8000)];
    const TemplateParams P = lib.params.with_stiffness(e.k);
    const ReferenceTrajectory ref = make_reference(e, P);
    const Vec3 dx(0.05, 0, 0);
    auto map = [&](const Vec3& d) {
      return active_return_map(P, ApexState::from_vector(e.apex().as_vector() + d), e.command(P), ref, pd)
          .as_vector();
    };
    const Vec3 base = map(Vec3::Zero());
    const Vec3 up = map(dx) - base, down = map(-dx) - base;
    EXPECT_LT(up.norm(), 0.02 * dx.norm()) << "vx " << vx;
    EXPECT_LT(down.norm(), 0.02 * dx.norm()) << "vx " << vx;
  }
}

TEST(Jacobians, HalvedStepStillGivesRejectingGain) {
  const TrajectoryLibrary& lib = default_built().lib;
  const PdGains pd = PdGains::critically_damped(lib.params.m);
  const TrajectoryEntry& e = lib[find_entry(lib, 1.0, 0.95, 8000)];
  JacobianSteps half;
  half.eps_x /= 2;
  half.eps_u /= 2;
  for (const JacobianSteps& s : {JacobianSteps{}, half}) {
    const Jacobians J = estimate_jacobians(e, lib.params, pd, s);
    const Mat3 K = compute_gain(J.Jx, J.Ju);
    const Vec3 dx(0.1, 0, 0);
    EXPECT_LT(one_step_error(e, K, lib.params, dx), 0.15 * dx.norm());
  }
}

TEST(DeadbeatCommand, ZeroErrorAndLinearity) {
  const auto& [lib, gains] = default_built();
  const std::size_t i = find_entry(lib, 1.0, 0.95, 8000);
  const TrajectoryEntry& e = lib[i];
  const Mat3& K = gains[i].K;
  const LegCommand u0 = deadbeat_command(e, K, e.apex(), lib.params);
  EXPECT_EQ(u0.as_vector(), e.command(lib.params).as_vector());
  ApexState x = e.apex();
  x.vx += 0.1;
  const LegCommand u1 = deadbeat_command(e, K, x, lib.params);
  EXPECT_NEAR((u1.as_vector() - (u0.as_vector() + 0.1 * K.col(0))).norm(), 0.0, 1e-15);
  EXPECT_EQ(u1.sigma, 1);
}

TEST(DeadbeatCommand, NotClamped) {
  const auto& [lib, gains] = default_built();
  const std::size_t i = find_entry(lib, 1.0, 0.95, 8000);
  Mat3 K = Mat3::Zero();
  K(0, 0) = 10.0;
  ApexState x = lib[i].apex();
  x.vx += 1.0;
  EXPECT_GT(deadbeat_command(lib[i], K, x, lib.params).th1, lib.params.th1_max);
}

TEST(GainLibrary, DefaultIsCompleteAndConsistent) {
  const auto& [lib, gains] = default_built();
  ASSERT_EQ(gains.size(), lib.size());
  EXPECT_TRUE(gains.failures().empty());
  const PdGains pd = PdGains::critically_damped(lib.params.m);
  for (std::size_t i = 0; i < lib.size(); i += 31) {
    const Jacobians J = estimate_jacobians(lib[i], lib.params, pd);
    EXPECT_LT((J.Ju * gains[i].K + J.Jx).cwiseAbs().maxCoeff(), 1e-10) << i;
    EXPECT_NEAR(gains[i].cond, condition_number(J.Ju), 1e-9 * gains[i].cond);
  }
}

TEST(GainLibrary, OneStepRejection) {
  const auto& [lib, gains] = default_built();
  for (std::size_t i = 0; i < lib.size(); i += 5) {
    const Vec3 dx(0.1, 0, 0);
    EXPECT_LT(one_step_error(lib[i], gains[i].K, lib.params, dx), 0.15 * dx.norm()) << i;
  }
}

TEST(GainLibrary, ContractsBetterThanNominalCommand) {
  const auto& [lib, gains] = default_built();
  const std::size_t i = find_entry(lib, 1.5, 0.95, 8000);
  const Vec3 dx(0.1, 0.05, 0.02);
  EXPECT_LT(one_step_error(lib[i], gains[i].K, lib.params, dx), one_step_error(lib[i], Mat3::Zero(), lib.params, dx));
}

TEST(GainLibrary, SingleEntry) {
  const TrajectoryLibrary& full = default_built().lib;
  TrajectoryLibrary lib;
  lib.params = full.params;
  lib.entries = {full[find_entry(full, 1.0, 0.95, 8000)]};
  const GainLibrary g = build_gain_library(lib);
  ASSERT_EQ(g.size(), 1u);
  EXPECT_TRUE(g[0].ok);
}

TEST(GainLibrary, DeterministicAndParallelSafe) {
  const TrajectoryLibrary& full = default_built().lib;
  TrajectoryLibrary lib;
  lib.params = full.params;
  for (std::size_t i = 0; i < full.size(); i += 40) lib.entries.push_back(full[i]);
  const PdGains pd = PdGains::critically_damped(lib.params.m);
  const GainLibrary a = build_gain_library(lib, pd, {}, 1);
  const GainLibrary b = build_gain_library(lib, pd, {}, 1);
  const GainLibrary c = build_gain_library(lib, pd, {}, 3);
  for (std::size_t i = 0; i < lib.size(); ++i) {
    EXPECT_EQ(a[i].K, b[i].K);
    EXPECT_EQ(a[i].K, c[i].K);
    EXPECT_EQ(a[i].cond, c[i].cond);
  }
}

TEST(GainLibrary, FailureIsRecordedNotThrown) {
  const TrajectoryLibrary& full = default_built().lib;
  TrajectoryLibrary lib;
  lib.params = full.params;
  lib.entries = {full[0]};
  GainOptions opt;
  opt.max_cond = 1.0;  // nothing passes
  const GainLibrary g = build_gain_library(lib, PdGains::critically_damped(lib.params.m), opt);
  ASSERT_EQ(g.failures().size(), 1u);
  EXPECT_FALSE(g[0].error.empty());
}
