#pragma once

#include <cmath>
#include <cstdlib>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "slipstep/types.hpp"

namespace slipstep {

struct TickRecord {
  double t = 0.0;
  Phase phase = Phase::Flight;
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Vec3 f = Vec3::Zero();
  Vec3 pf = Vec3::Zero();
  int ref_id = -1;
  Vec3 v_ref = Vec3::Zero();
  double heading = 0.0;
};

struct StepRecord {
  int step = 0;
  double t_touchdown = 0.0;
  int side = 1;
  int entry = -1;     // chosen at liftoff
  int td_entry = -1;  // chosen at touchdown, tracked during stance
  Vec3 u = Vec3::Zero();
  Vec3 foothold = Vec3::Zero();
  bool targeted = false;
  Vec3 target = Vec3::Zero();
  double target_l = 0.0;
  double target_w = 0.0;
  Vec3 landing_error = Vec3::Zero();
  bool inside = true;
  Vec3 apex = Vec3::Zero();      // apex before this touchdown: world vx, vy, height over takeoff
  Vec3 apex_ref = Vec3::Zero();  // the same for the tracked periodic trajectory
  double heading = 0.0;
  std::string note;
};

struct RunSummary {
  std::string status = "ok";
  std::string message;
  std::string failed_stage;
  int steps = 0;
  double duration = 0.0;
  double vx_rmse = 0.0;
  double vy_rmse = 0.0;
  int rmse_samples = 0;
  bool fell = false;
};

struct RunLog {
  std::vector<TickRecord> ticks;
  std::vector<StepRecord> steps;
  RunSummary summary;

  bool ok() const { return summary.status == "ok"; }
};

/// Heading-frame velocity tracking error over all ticks with a reference.
inline void compute_rmse(const std::vector<TickRecord>& ticks, double& vx_rmse, double& vy_rmse, int& n) {
  double sx = 0.0, sy = 0.0;
  n = 0;
  for (const TickRecord& r : ticks) {
    if (r.ref_id < 0) continue;
    const Vec3 e = yaw_rotation(r.heading).transpose() * (r.v - r.v_ref);
    sx += e.x() * e.x();
    sy += e.y() * e.y();
    ++n;
  }
  vx_rmse = n ? std::sqrt(sx / n) : 0.0;
  vy_rmse = n ? std::sqrt(sy / n) : 0.0;
}

namespace detail {

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string sanitize(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  return s;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double num(const std::string& s) {
  char* end = nullptr;
  const double v = s.empty() ? 0.0 : std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw Error(ErrorKind::Io, "malformed number '" + s + "'");
  return v;
}

inline Phase phase_from(const std::string& s) {
  if (s == "stance") return Phase::Stance;
  if (s == "flight") return Phase::Flight;
  throw Error(ErrorKind::Io, "unknown phase '" + s + "'");
}

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream f(p);
  if (!f) throw Error(ErrorKind::Io, "cannot write " + p.string());
  return f;
}

inline std::ifstream open_in(const std::filesystem::path& p) {
  std::ifstream f(p);
  if (!f) throw Error(ErrorKind::Io, "cannot read " + p.string());
  return f;
}

inline void put3(std::ostream& o, const Vec3& v) {
  o << ',' << fmt17(v.x()) << ',' << fmt17(v.y()) << ',' << fmt17(v.z());
}

inline Vec3 get3(const std::vector<std::string>& c, std::size_t i) { return {num(c[i]), num(c[i + 1]), num(c[i + 2])}; }

}  // namespace detail

constexpr const char* kTickHeader = "t,phase,px,py,pz,vx,vy,vz,fx,fy,fz,pfx,pfy,pfz,ref_id,vx_ref,vy_ref,vz_ref,heading";
constexpr const char* kStepHeader =
    "step,t_touchdown,side,entry,td_entry,th1,th2,lh,foot_x,foot_y,foot_z,targeted,target_x,target_y,target_z,"
    "target_l,target_w,err_x,err_y,err_z,inside,apex_vx,apex_vy,apex_h,ref_vx,ref_vy,ref_h,heading,note";

/// Sidecar paths for the CSV export of `path`: steps and summary tables.
inline std::filesystem::path steps_path(const std::filesystem::path& path) {
  std::filesystem::path p = path;
  return p.replace_extension(".steps.csv");
}

inline std::filesystem::path summary_path(const std::filesystem::path& path) {
  std::filesystem::path p = path;
  return p.replace_extension(".summary.csv");
}

inline void write_log_csv(const RunLog& log, const std::filesystem::path& path) {
  using detail::fmt17;
  {
    auto f = detail::open_out(path);
    f << kTickHeader << '\n';
    for (const TickRecord& r : log.ticks) {
      f << fmt17(r.t) << ',' << to_string(r.phase);
      detail::put3(f, r.p);
      detail::put3(f, r.v);
      detail::put3(f, r.f);
      detail::put3(f, r.pf);
      f << ',' << r.ref_id;
      detail::put3(f, r.v_ref);
      f << ',' << fmt17(r.heading) << '\n';
    }
    if (!f) throw Error(ErrorKind::Io, "write failed: " + path.string());
  }
  {
    auto f = detail::open_out(steps_path(path));
    f << kStepHeader << '\n';
    for (const StepRecord& s : log.steps) {
      f << s.step << ',' << fmt17(s.t_touchdown) << ',' << s.side << ',' << s.entry << ',' << s.td_entry;
      detail::put3(f, s.u);
      detail::put3(f, s.foothold);
      f << ',' << (s.targeted ? 1 : 0);
      detail::put3(f, s.target);
      f << ',' << fmt17(s.target_l) << ',' << fmt17(s.target_w);
      detail::put3(f, s.landing_error);
      f << ',' << (s.inside ? 1 : 0);
      detail::put3(f, s.apex);
      detail::put3(f, s.apex_ref);
      f << ',' << fmt17(s.heading) << ',' << detail::sanitize(s.note) << '\n';
    }
    if (!f) throw Error(ErrorKind::Io, "write failed: " + steps_path(path).string());
  }
  {
    auto f = detail::open_out(summary_path(path));
    const RunSummary& s = log.summary;
    f << "key,value\n";
    f << "status," << detail::sanitize(s.status) << '\n';
    f << "message," << detail::sanitize(s.message) << '\n';
    f << "failed_stage," << detail::sanitize(s.failed_stage) << '\n';
    f << "steps," << s.steps << '\n';
    f << "duration," << fmt17(s.duration) << '\n';
    f << "vx_rmse," << fmt17(s.vx_rmse) << '\n';
    f << "vy_rmse," << fmt17(s.vy_rmse) << '\n';
    f << "rmse_samples," << s.rmse_samples << '\n';
    f << "fell," << (s.fell ? 1 : 0) << '\n';
    if (!f) throw Error(ErrorKind::Io, "write failed: " + summary_path(path).string());
  }
}

inline RunLog read_log_csv(const std::filesystem::path& path) {
  RunLog log;
  std::string line;
  {
    auto f = detail::open_in(path);
    if (!std::getline(f, line) || line != kTickHeader) throw Error(ErrorKind::Io, "bad tick header in " + path.string());
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      const auto c = detail::split_csv(line);
      if (c.size() != 19) throw Error(ErrorKind::Io, "bad tick row in " + path.string());
      TickRecord r;
      r.t = detail::num(c[0]);
      r.phase = detail::phase_from(c[1]);
      r.p = detail::get3(c, 2);
      r.v = detail::get3(c, 5);
      r.f = detail::get3(c, 8);
      r.pf = detail::get3(c, 11);
      r.ref_id = static_cast<int>(detail::num(c[14]));
      r.v_ref = detail::get3(c, 15);
      r.heading = detail::num(c[18]);
      log.ticks.push_back(r);
    }
  }
  {
    const auto p = steps_path(path);
    auto f = detail::open_in(p);
    if (!std::getline(f, line) || line != kStepHeader) throw Error(ErrorKind::Io, "bad step header in " + p.string());
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      const auto c = detail::split_csv(line);
      if (c.size() != 29) throw Error(ErrorKind::Io, "bad step row in " + p.string());
      StepRecord s;
      s.step = static_cast<int>(detail::num(c[0]));
      s.t_touchdown = detail::num(c[1]);
      s.side = static_cast<int>(detail::num(c[2]));
      s.entry = static_cast<int>(detail::num(c[3]));
      s.td_entry = static_cast<int>(detail::num(c[4]));
      s.u = detail::get3(c, 5);
      s.foothold = detail::get3(c, 8);
      s.targeted = c[11] == "1";
      s.target = detail::get3(c, 12);
      s.target_l = detail::num(c[15]);
      s.target_w = detail::num(c[16]);
      s.landing_error = detail::get3(c, 17);
      s.inside = c[20] == "1";
      s.apex = detail::get3(c, 21);
      s.apex_ref = detail::get3(c, 24);
      s.heading = detail::num(c[27]);
      s.note = c[28];
      log.steps.push_back(s);
    }
  }
  {
    const auto p = summary_path(path);
    auto f = detail::open_in(p);
    std::getline(f, line);
    RunSummary& s = log.summary;
    while (std::getline(f, line)) {
      const auto comma = line.find(',');
      if (comma == std::string::npos) continue;
      const std::string key = line.substr(0, comma), val = line.substr(comma + 1);
      if (key == "status") s.status = val;
      else if (key == "message") s.message = val;
      else if (key == "failed_stage") s.failed_stage = val;
      else if (key == "steps") s.steps = static_cast<int>(detail::num(val));
      else if (key == "duration") s.duration = detail::num(val);
      else if (key == "vx_rmse") s.vx_rmse = detail::num(val);
      else if (key == "vy_rmse") s.vy_rmse = detail::num(val);
      else if (key == "rmse_samples") s.rmse_samples = static_cast<int>(detail::num(val));
      else if (key == "fell") s.fell = val == "1";
    }
  }
  return log;
}

inline nlohmann::json to_json(const RunLog& log) {
  using nlohmann::json;
  auto arr = [](const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); };
  json j;
  j["ticks"] = json::array();
  for (const TickRecord& r : log.ticks)
    j["ticks"].push_back({{"t", r.t},
                          {"phase", to_string(r.phase)},
                          {"p", arr(r.p)},
                          {"v", arr(r.v)},
                          {"f", arr(r.f)},
                          {"pf", arr(r.pf)},
                          {"ref_id", r.ref_id},
                          {"v_ref", arr(r.v_ref)},
                          {"heading", r.heading}});
  j["steps"] = json::array();
  for (const StepRecord& s : log.steps)
    j["steps"].push_back({{"step", s.step},
                          {"t_touchdown", s.t_touchdown},
                          {"side", s.side},
                          {"entry", s.entry},
                          {"td_entry", s.td_entry},
                          {"u", arr(s.u)},
                          {"foothold", arr(s.foothold)},
                          {"targeted", s.targeted},
                          {"target", arr(s.target)},
                          {"target_l", s.target_l},
                          {"target_w", s.target_w},
                          {"landing_error", arr(s.landing_error)},
                          {"inside", s.inside},
                          {"apex", arr(s.apex)},
                          {"apex_ref", arr(s.apex_ref)},
                          {"heading", s.heading},
                          {"note", s.note}});
  const RunSummary& s = log.summary;
  j["summary"] = {{"status", s.status},     {"message", s.message}, {"failed_stage", s.failed_stage},
                  {"steps", s.steps},       {"duration", s.duration}, {"vx_rmse", s.vx_rmse},
                  {"vy_rmse", s.vy_rmse},   {"rmse_samples", s.rmse_samples}, {"fell", s.fell}};
  return j;
}

inline RunLog from_json(const nlohmann::json& j) {
  auto vec = [](const nlohmann::json& a) { return Vec3(a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>()); };
  RunLog log;
  try {
    for (const auto& r : j.at("ticks")) {
      TickRecord t;
      t.t = r.at("t").get<double>();
      t.phase = detail::phase_from(r.at("phase").get<std::string>());
      t.p = vec(r.at("p"));
      t.v = vec(r.at("v"));
      t.f = vec(r.at("f"));
      t.pf = vec(r.at("pf"));
      t.ref_id = r.at("ref_id").get<int>();
      t.v_ref = vec(r.at("v_ref"));
      t.heading = r.at("heading").get<double>();
      log.ticks.push_back(t);
    }
    for (const auto& r : j.at("steps")) {
      StepRecord s;
      s.step = r.at("step").get<int>();
      s.t_touchdown = r.at("t_touchdown").get<double>();
      s.side = r.at("side").get<int>();
      s.entry = r.at("entry").get<int>();
      s.td_entry = r.at("td_entry").get<int>();
      s.u = vec(r.at("u"));
      s.foothold = vec(r.at("foothold"));
      s.targeted = r.at("targeted").get<bool>();
      s.target = vec(r.at("target"));
      s.target_l = r.at("target_l").get<double>();
      s.target_w = r.at("target_w").get<double>();
      s.landing_error = vec(r.at("landing_error"));
      s.inside = r.at("inside").get<bool>();
      s.apex = vec(r.at("apex"));
      s.apex_ref = vec(r.at("apex_ref"));
      s.heading = r.at("heading").get<double>();
      s.note = r.at("note").get<std::string>();
      log.steps.push_back(s);
    }
    const auto& s = j.at("summary");
    log.summary.status = s.at("status").get<std::string>();
    log.summary.message = s.at("message").get<std::string>();
    log.summary.failed_stage = s.at("failed_stage").get<std::string>();
    log.summary.steps = s.at("steps").get<int>();
    log.summary.duration = s.at("duration").get<double>();
    log.summary.vx_rmse = s.at("vx_rmse").get<double>();
    log.summary.vy_rmse = s.at("vy_rmse").get<double>();
    log.summary.rmse_samples = s.at("rmse_samples").get<int>();
    log.summary.fell = s.at("fell").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Io, std::string("malformed run log: ") + e.what());
  }
  return log;
}

inline void write_log_json(const RunLog& log, const std::filesystem::path& path) {
  auto f = detail::open_out(path);
  f << to_json(log).dump(1) << '\n';
  if (!f) throw Error(ErrorKind::Io, "write failed: " + path.string());
}

inline RunLog read_log_json(const std::filesystem::path& path) {
  auto f = detail::open_in(path);
  try {
    return from_json(nlohmann::json::parse(f));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::Io, path.string() + ": " + e.what());
  }
}

enum class LogFormat { Csv, Json };

inline void export_log(const RunLog& log, const std::filesystem::path& path, LogFormat fmt) {
  if (fmt == LogFormat::Csv)
    write_log_csv(log, path);
  else
    write_log_json(log, path);
}

inline RunLog read_log(const std::filesystem::path& path, LogFormat fmt) {
  return fmt == LogFormat::Csv ? read_log_csv(path) : read_log_json(path);
}

}  // namespace slipstep
