#pragma once

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "slipstep/deadbeat.hpp"
#include "slipstep/harness/config.hpp"

namespace slipstep {

namespace io_detail {

inline std::string f17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

inline double to_d(const std::string& s, const std::string& where) {
  char* end = nullptr;
  const double v = s.empty() ? 0.0 : std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || std::isspace(static_cast<unsigned char>(s.front())))
    throw Error(ErrorKind::Io, where + ": malformed number '" + s + "'");
  return v;
}

inline std::string join(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + f17(v[i]);
  return out;
}

inline std::string version_line(const char* kind, int version) {
  return std::string("# slipstep ") + kind + " v" + std::to_string(version);
}

inline void expect_version(std::istream& in, const char* kind, int version, const std::string& where) {
  std::string line;
  if (!std::getline(in, line) || line != version_line(kind, version))
    throw Error(ErrorKind::Io, where + ": expected '" + version_line(kind, version) + "'");
}

}  // namespace io_detail

constexpr const char* kLibraryHeader = "th2,h_apex,k,vx_apex,th1,vy_apex,dfx,dfy,residual";
constexpr const char* kGainHeader = "index,k11,k12,k13,k21,k22,k23,k31,k32,k33,cond_ju,status";

inline void write_library_csv(const TrajectoryLibrary& lib, std::ostream& out) {
  using io_detail::f17;
  out << io_detail::version_line("library", lib.version) << '\n' << kLibraryHeader << '\n';
  for (const TrajectoryEntry& e : lib.entries)
    out << f17(e.th2) << ',' << f17(e.h_apex) << ',' << f17(e.k) << ',' << f17(e.vx_apex) << ',' << f17(e.th1) << ','
        << f17(e.vy_apex) << ',' << f17(e.dfx) << ',' << f17(e.dfy) << ',' << f17(e.residual) << '\n';
}

inline std::vector<TrajectoryEntry> read_library_csv(std::istream& in, const std::string& where = "library") {
  io_detail::expect_version(in, "library", TrajectoryLibrary::kFormatVersion, where);
  std::string line;
  if (!std::getline(in, line) || line != kLibraryHeader) throw Error(ErrorKind::Io, where + ": bad header");
  std::vector<TrajectoryEntry> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = io_detail::split(line);
    if (c.size() != 9) throw Error(ErrorKind::Io, where + ": expected 9 columns");
    TrajectoryEntry e;
    double* fields[] = {&e.th2, &e.h_apex, &e.k, &e.vx_apex, &e.th1, &e.vy_apex, &e.dfx, &e.dfy, &e.residual};
    for (int i = 0; i < 9; ++i) *fields[i] = io_detail::to_d(c[i], where);
    out.push_back(e);
  }
  return out;
}

inline void write_failures_csv(const std::vector<GridFailure>& failures, std::ostream& out) {
  using io_detail::f17;
  out << "th2,h,k,vx,reason\n";
  for (const GridFailure& f : failures) {
    std::string reason = f.reason;
    for (char& ch : reason)
      if (ch == ',' || ch == '\n') ch = ';';
    out << f17(f.th2) << ',' << f17(f.h) << ',' << f17(f.k) << ',' << f17(f.vx) << ',' << reason << '\n';
  }
}

inline std::vector<GridFailure> read_failures_csv(std::istream& in, const std::string& where = "failures") {
  std::string line;
  std::getline(in, line);
  std::vector<GridFailure> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = io_detail::split(line);
    if (c.size() < 4) throw Error(ErrorKind::Io, where + ": bad row");
    out.push_back({io_detail::to_d(c[0], where), io_detail::to_d(c[1], where), io_detail::to_d(c[2], where),
                   io_detail::to_d(c[3], where), c.size() > 4 ? c[4] : ""});
  }
  return out;
}

inline void write_params(const TemplateParams& P, const LibraryGrid& grid, std::ostream& out) {
  using io_detail::f17;
  out << "m = " << f17(P.m) << "\nk = " << f17(P.k) << "\nr0 = " << f17(P.r0) << "\nyh = " << f17(P.yh)
      << "\ng = " << f17(P.g) << "\nmu = " << f17(P.mu) << "\nfoot_len = " << f17(P.foot_len)
      << "\nfoot_wid = " << f17(P.foot_wid) << "\nlh_min = " << f17(P.lh_min) << "\nlh_max = " << f17(P.lh_max)
      << "\nth1_min = " << f17(P.th1_min) << "\nth1_max = " << f17(P.th1_max) << "\nth2_min = " << f17(P.th2_min)
      << "\nth2_max = " << f17(P.th2_max) << "\ndt_stance = " << f17(P.dt_stance)
      << "\ndt_flight = " << f17(P.dt_flight) << "\nevent_tol = " << f17(P.event_tol)
      << "\nmax_phase_time = " << f17(P.max_phase_time) << '\n';
  out << "grid.vx = " << io_detail::join(grid.vx) << "\ngrid.h = " << io_detail::join(grid.h)
      << "\ngrid.k = " << io_detail::join(grid.k) << "\ngrid.th2 = " << io_detail::join(grid.th2) << '\n';
}

inline TemplateParams params_from_config(const KeyValueConfig& c, TemplateParams P = {}) {
  P.m = c.get_double("m", P.m);
  P.k = c.get_double("k", P.k);
  P.r0 = c.get_double("r0", P.r0);
  P.yh = c.get_double("yh", P.yh);
  P.g = c.get_double("g", P.g);
  P.mu = c.get_double("mu", P.mu);
  P.foot_len = c.get_double("foot_len", P.foot_len);
  P.foot_wid = c.get_double("foot_wid", P.foot_wid);
  P.lh_min = c.get_double("lh_min", P.lh_min);
  P.lh_max = c.get_double("lh_max", P.lh_max);
  P.th1_min = c.get_double("th1_min", P.th1_min);
  P.th1_max = c.get_double("th1_max", P.th1_max);
  P.th2_min = c.get_double("th2_min", P.th2_min);
  P.th2_max = c.get_double("th2_max", P.th2_max);
  P.dt_stance = c.get_double("dt_stance", P.dt_stance);
  P.dt_flight = c.get_double("dt_flight", P.dt_flight);
  P.event_tol = c.get_double("event_tol", P.event_tol);
  P.max_phase_time = c.get_double("max_phase_time", P.max_phase_time);
  P.validate();
  return P;
}

inline LibraryGrid grid_from_config(const KeyValueConfig& c, const std::string& prefix = "grid.") {
  LibraryGrid g = LibraryGrid::default_grid();
  g.vx = c.get_list(prefix + "vx", g.vx);
  g.h = c.get_list(prefix + "h", g.h);
  g.k = c.get_list(prefix + "k", g.k);
  g.th2 = c.get_list(prefix + "th2", g.th2);
  return g;
}

inline void write_gains_csv(const GainLibrary& gains, std::ostream& out) {
  using io_detail::f17;
  out << io_detail::version_line("gains", 1) << '\n' << kGainHeader << '\n';
  for (std::size_t i = 0; i < gains.size(); ++i) {
    const GainEntry& g = gains[i];
    out << i;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) out << ',' << f17(g.K(r, c));
    std::string status = g.ok ? "ok" : g.error.empty() ? "failed" : g.error;
    for (char& ch : status)
      if (ch == ',' || ch == '\n') ch = ';';
    out << ',' << f17(g.cond) << ',' << status << '\n';
  }
}

inline GainLibrary read_gains_csv(std::istream& in, const std::string& where = "gains") {
  io_detail::expect_version(in, "gains", 1, where);
  std::string line;
  if (!std::getline(in, line) || line != kGainHeader) throw Error(ErrorKind::Io, where + ": bad header");
  GainLibrary out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = io_detail::split(line);
    if (c.size() != 12) throw Error(ErrorKind::Io, where + ": expected 12 columns");
    if (static_cast<std::size_t>(io_detail::to_d(c[0], where)) != out.size())
      throw Error(ErrorKind::Io, where + ": rows out of order");
    GainEntry g;
    for (int r = 0; r < 3; ++r)
      for (int k = 0; k < 3; ++k) g.K(r, k) = io_detail::to_d(c[1 + 3 * r + k], where);
    g.cond = io_detail::to_d(c[10], where);
    g.ok = c[11] == "ok";
    if (!g.ok) g.error = c[11];
    out.gains.push_back(g);
  }
  return out;
}

/// On-disk layout of a library directory.
struct LibraryPaths {
  std::filesystem::path dir;
  std::filesystem::path library() const { return dir / "library.csv"; }
  std::filesystem::path failures() const { return dir / "failures.csv"; }
  std::filesystem::path params() const { return dir / "params.cfg"; }
  std::filesystem::path gains() const { return dir / "gains.csv"; }
};

namespace io_detail {

inline std::ofstream out_file(const std::filesystem::path& p) {
  std::ofstream f(p);
  if (!f) throw Error(ErrorKind::Io, "cannot write " + p.string());
  f.precision(17);
  return f;
}

inline std::ifstream in_file(const std::filesystem::path& p) {
  std::ifstream f(p);
  if (!f) throw Error(ErrorKind::Io, "cannot read " + p.string());
  return f;
}

}  // namespace io_detail

inline void save_library(const TrajectoryLibrary& lib, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
  const LibraryPaths p{dir};
  auto lf = io_detail::out_file(p.library());
  write_library_csv(lib, lf);
  auto ff = io_detail::out_file(p.failures());
  write_failures_csv(lib.failures, ff);
  auto pf = io_detail::out_file(p.params());
  write_params(lib.params, lib.grid, pf);
}

inline TrajectoryLibrary load_library(const std::filesystem::path& dir) {
  const LibraryPaths p{dir};
  TrajectoryLibrary lib;
  const KeyValueConfig cfg = KeyValueConfig::load(p.params().string());
  lib.params = params_from_config(cfg);
  lib.grid = grid_from_config(cfg);
  auto lf = io_detail::in_file(p.library());
  lib.entries = read_library_csv(lf, p.library().string());
  if (std::filesystem::exists(p.failures())) {
    auto ff = io_detail::in_file(p.failures());
    lib.failures = read_failures_csv(ff, p.failures().string());
  }
  return lib;
}

inline void save_gains(const GainLibrary& gains, const std::filesystem::path& dir) {
  auto f = io_detail::out_file(LibraryPaths{dir}.gains());
  write_gains_csv(gains, f);
}

inline GainLibrary load_gains(const std::filesystem::path& dir, std::size_t expected) {
  const auto path = LibraryPaths{dir}.gains();
  auto f = io_detail::in_file(path);
  GainLibrary g = read_gains_csv(f, path.string());
  if (g.size() != expected)
    throw Error(ErrorKind::Io, path.string() + ": " + std::to_string(g.size()) + " gains for " +
                                   std::to_string(expected) + " entries");
  return g;
}

}  // namespace slipstep
