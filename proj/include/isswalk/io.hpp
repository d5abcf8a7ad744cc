#pragma once

// CSV tables, gait artifact JSON and the hashed output manifest. Only the
// command line driver and the tests need this header; it pulls in OpenSSL.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "json.hpp"

#include "isswalk/gait.hpp"

namespace isswalk {

using Json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

/// Fixed formatting so repeated runs produce identical bytes.
inline std::string fmt_num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int col(const std::string& name) const {
    auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : static_cast<int>(it - header.begin());
  }
  bool has(const std::string& name) const { return col(name) >= 0; }

  double num(size_t row, int c) const {
    const std::string& s = rows.at(row).at(c);
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    try {
      return std::stod(s);
    } catch (const std::exception&) {
      throw SchemaMismatch("non-numeric cell '" + s + "' in column " + header.at(c));
    }
  }
  double num(size_t row, const std::string& name) const {
    const int c = col(name);
    if (c < 0) throw SchemaMismatch("missing column " + name);
    return num(row, c);
  }
  std::vector<double> column(const std::string& name) const {
    std::vector<double> out;
    const int c = col(name);
    if (c < 0) throw SchemaMismatch("missing column " + name);
    for (size_t r = 0; r < rows.size(); ++r) out.push_back(num(r, c));
    return out;
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline Csv read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  Csv csv;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (csv.header.empty()) {
      csv.header = std::move(cells);
      continue;
    }
    if (cells.size() != csv.header.size())
      throw SchemaMismatch(path.string() + ":" + std::to_string(lineno) + ": expected " +
                           std::to_string(csv.header.size()) + " cells, got " +
                           std::to_string(cells.size()));
    csv.rows.push_back(std::move(cells));
  }
  return csv;
}

/// Serializes with schema_version as the first column.
inline std::string csv_text(const std::vector<std::string>& header,
                            const std::vector<std::vector<std::string>>& rows) {
  std::string out = "schema_version";
  for (const auto& h : header) out += "," + h;
  out += "\n";
  const std::string v = std::to_string(kSchemaVersion);
  for (const auto& r : rows) {
    out += v;
    for (const auto& c : r) out += "," + c;
    out += "\n";
  }
  return out;
}

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr);
  static const char* kHex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[md[i] >> 4];
    out += kHex[md[i] & 15];
  }
  return out;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// The single writer for one run: every artifact goes through here and ends
/// up in manifest.json with its SHA-256.
class OutputSet {
 public:
  explicit OutputSet(std::filesystem::path dir) : dir_(std::move(dir)) {}

  const std::filesystem::path& dir() const { return dir_; }

  void write(const std::string& name, const std::string& bytes) {
    std::filesystem::create_directories(dir_);
    std::ofstream out(dir_ / name, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + (dir_ / name).string());
    out << bytes;
    files_.push_back({name, sha256_hex(bytes), bytes.size()});
  }

  void write_csv(const std::string& name, const std::vector<std::string>& header,
                 const std::vector<std::vector<std::string>>& rows) {
    write(name, csv_text(header, rows));
  }

  void write_json(const std::string& name, const Json& j) { write(name, j.dump(2) + "\n"); }

  /// Rewrites manifest.json. Entries from earlier runs into the same
  /// directory are kept unless this run rewrote the file.
  void write_manifest(const std::string& subcommand, const std::string& verdict) {
    Json m;
    m["schema_version"] = kSchemaVersion;
    Json runs = Json::array();
    auto sorted = files_;
    const auto path = dir_ / "manifest.json";
    if (std::filesystem::exists(path)) {
      try {
        const Json old = Json::parse(read_file(path));
        if (old.contains("runs")) runs = old.at("runs");
        for (const auto& f : old.at("files")) {
          const std::string name = f.at("path").get<std::string>();
          const bool rewritten = std::any_of(files_.begin(), files_.end(),
                                             [&](const Entry& e) { return e.name == name; });
          if (!rewritten && std::filesystem::exists(dir_ / name))
            sorted.push_back({name, f.at("sha256").get<std::string>(), f.at("bytes").get<size_t>()});
        }
      } catch (const std::exception&) {
        // Unreadable manifest: start over.
        runs = Json::array();
        sorted = files_;
      }
    }
    runs.push_back({{"subcommand", subcommand}, {"verdict", verdict}});
    m["runs"] = runs;
    Json files = Json::array();
    std::sort(sorted.begin(), sorted.end(),
              [](const auto& a, const auto& b) { return a.name < b.name; });
    for (const auto& f : sorted)
      files.push_back({{"path", f.name}, {"sha256", f.sha}, {"bytes", f.bytes}});
    m["files"] = files;
    std::filesystem::create_directories(dir_);
    std::ofstream(dir_ / "manifest.json", std::ios::binary) << m.dump(2) << "\n";
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& f : files_) out.push_back(f.name);
    return out;
  }

 private:
  struct Entry {
    std::string name, sha;
    size_t bytes;
  };
  std::filesystem::path dir_;
  std::vector<Entry> files_;
};

// ---------------------------------------------------------------------------
// Gait artifact JSON.

inline Json mat_json(const Mat& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json r = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(r);
  }
  return rows;
}

inline Json vec_json(const Vec& v) {
  Json a = Json::array();
  for (double x : v) a.push_back(x);
  return a;
}

inline Vec json_vec(const Json& j) {
  Vec v(j.size());
  for (size_t i = 0; i < j.size(); ++i) v[i] = j[i].get<double>();
  return v;
}

inline Mat json_mat(const Json& j) {
  const size_t r = j.size(), c = r ? j[0].size() : 0;
  Mat m(r, c);
  for (size_t i = 0; i < r; ++i) {
    if (j[i].size() != c) throw ConfigError("ragged matrix in gait artifact");
    for (size_t k = 0; k < c; ++k) m(i, k) = j[i][k].get<double>();
  }
  return m;
}

inline Json seed_json(const GaitSeed& s) {
  return {{"v_d", s.v_d},
          {"step_length", s.step_length},
          {"hip_height", s.hip_height},
          {"torso_pitch", s.torso_pitch},
          {"hip_x_impact", s.hip_x_impact},
          {"land_speed", s.land_speed},
          {"clearance", s.clearance},
          {"foot_vx_impact", s.foot_vx_impact},
          {"t_ds", s.t_ds},
          {"phase_margin", s.phase_margin}};
}

inline GaitSeed json_seed(const Json& j) {
  GaitSeed s;
  s.v_d = j.at("v_d").get<double>();
  s.step_length = j.at("step_length").get<double>();
  s.hip_height = j.at("hip_height").get<double>();
  s.torso_pitch = j.at("torso_pitch").get<double>();
  s.hip_x_impact = j.at("hip_x_impact").get<double>();
  s.land_speed = j.at("land_speed").get<double>();
  s.clearance = j.at("clearance").get<double>();
  s.foot_vx_impact = j.at("foot_vx_impact").get<double>();
  s.t_ds = j.at("t_ds").get<double>();
  s.phase_margin = j.at("phase_margin").get<double>();
  return s;
}

inline Json gait_json(const GaitArtifact& g) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["seed"] = seed_json(g.seed);
  j["v_d"] = g.v_d;
  j["epsilon"] = g.epsilon;
  j["alpha_ds"] = mat_json(g.alpha_ds);
  j["alpha_ss"] = mat_json(g.alpha_ss);
  j["t_ds"] = g.t_ds;
  j["t_ss"] = g.t_ss;
  j["p_plus_ds"] = g.p_plus_ds;
  j["p_plus_ss"] = g.p_plus_ss;
  j["duration_ds"] = g.duration_ds;
  j["duration_ss"] = g.duration_ss;
  j["time_origin_ds"] = g.time_origin_ds;
  j["time_origin_ss"] = g.time_origin_ss;
  j["foot_vx_impact"] = g.foot_vx_impact;
  j["chart_ds"] = vec_json(g.chart_ds);
  j["chart_ss"] = vec_json(g.chart_ss);
  j["x_star_q"] = vec_json(g.x_star.q);
  j["x_star_qdot"] = vec_json(g.x_star.qdot);
  j["invariance_residual"] = g.invariance_residual;
  j["periodicity_residual"] = g.periodicity_residual;
  j["design_residual"] = g.design_residual;
  j["spectral_radius"] = g.spectral_radius;
  return j;
}

inline GaitArtifact json_gait(const Json& j) {
  try {
    GaitArtifact g;
    if (j.at("schema_version").get<int>() != kSchemaVersion)
      throw SchemaMismatch("gait artifact schema_version differs");
    g.seed = json_seed(j.at("seed"));
    g.v_d = j.at("v_d").get<double>();
    g.epsilon = j.at("epsilon").get<double>();
    g.alpha_ds = json_mat(j.at("alpha_ds"));
    g.alpha_ss = json_mat(j.at("alpha_ss"));
    g.t_ds = j.at("t_ds").get<double>();
    g.t_ss = j.at("t_ss").get<double>();
    g.p_plus_ds = j.at("p_plus_ds").get<double>();
    g.p_plus_ss = j.at("p_plus_ss").get<double>();
    g.duration_ds = j.at("duration_ds").get<double>();
    g.duration_ss = j.at("duration_ss").get<double>();
    g.time_origin_ds = j.at("time_origin_ds").get<double>();
    g.time_origin_ss = j.at("time_origin_ss").get<double>();
    g.foot_vx_impact = j.at("foot_vx_impact").get<double>();
    g.chart_ds = json_vec(j.at("chart_ds"));
    g.chart_ss = json_vec(j.at("chart_ss"));
    g.x_star = State{json_vec(j.at("x_star_q")), json_vec(j.at("x_star_qdot"))};
    g.invariance_residual = j.at("invariance_residual").get<double>();
    g.periodicity_residual = j.at("periodicity_residual").get<double>();
    g.design_residual = j.at("design_residual").get<double>();
    g.spectral_radius = j.at("spectral_radius").get<double>();
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaMismatch(std::string("gait artifact: ") + e.what());
  }
}

}  // namespace isswalk
