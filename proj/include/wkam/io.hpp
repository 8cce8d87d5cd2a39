#pragma once

#include <openssl/evp.h>

#include <boost/archive/iterators/base64_from_binary.hpp>
#include <boost/archive/iterators/binary_from_base64.hpp>
#include <boost/archive/iterators/transform_width.hpp>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <sstream>

#include "wkam/measure_hj.hpp"
#include "wkam/transport.hpp"

namespace wkam::io {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

/// Writes through a sibling temporary and renames, so readers never observe a partial file.
inline void atomic_write(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".part";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  EVP_DigestUpdate(ctx, data.data(), data.size());
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream ss;
  for (unsigned int i = 0; i < len; ++i) ss << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return ss.str();
}

inline std::string base64_encode(const std::string& bytes) {
  using namespace boost::archive::iterators;
  using It = base64_from_binary<transform_width<std::string::const_iterator, 6, 8>>;
  std::string out(It(bytes.begin()), It(bytes.end()));
  out.append((3 - bytes.size() % 3) % 3, '=');
  return out;
}

inline std::string base64_decode(std::string text) {
  using namespace boost::archive::iterators;
  using It = transform_width<binary_from_base64<std::string::const_iterator>, 8, 6>;
  const auto pad = std::count(text.begin(), text.end(), '=');
  std::replace(text.begin(), text.end(), '=', 'A');
  std::string out(It(text.begin()), It(text.end()));
  out.erase(out.end() - pad, out.end());
  return out;
}

/// Fixed formatting so that identical runs produce identical bytes.
inline std::string fmt(double v) {
  std::ostringstream ss;
  ss << std::setprecision(12) << v;
  return ss.str();
}

template <int D>
std::string axis_header(const char* prefix = "x") {
  std::string h;
  for (int a = 0; a < D; ++a) h += std::string(a ? "," : "") + prefix + std::to_string(a);
  return h;
}

template <int D>
std::string coords(const Vec<D>& x) {
  std::string s;
  for (int a = 0; a < D; ++a) s += (a ? "," : "") + fmt(x[a]);
  return s;
}

/// One row per node: coordinates then one column per named field.
template <int D>
std::string fields_csv(const Grid<D>& grid, const std::vector<std::pair<std::string, const std::vector<double>*>>& cols) {
  std::ostringstream ss;
  ss << axis_header<D>();
  for (const auto& c : cols) ss << "," << c.first;
  ss << "\n";
  for (std::size_t f = 0; f < grid.size(); ++f) {
    ss << coords<D>(grid.node(f));
    for (const auto& c : cols) ss << "," << fmt((*c.second)[f]);
    ss << "\n";
  }
  return ss.str();
}

inline std::string mask_csv(const std::vector<char>& mask) {
  std::ostringstream ss;
  ss << "node,value\n";
  for (std::size_t f = 0; f < mask.size(); ++f) ss << f << "," << int(mask[f]) << "\n";
  return ss.str();
}

template <int D>
std::string path_csv(const CharacteristicPath<D>& p) {
  std::ostringstream ss;
  ss << "t," << axis_header<D>() << "," << axis_header<D>("p") << "," << axis_header<D>("v") << "\n";
  for (std::size_t i = 0; i < p.size(); ++i) {
    ss << fmt(p.times[i]) << "," << coords<D>(p.position(i)) << "," << coords<D>(p.momenta[i]) << ","
       << coords<D>(i < p.velocities.size() ? p.velocities[i] : Vec<D>(Vec<D>::Zero())) << "\n";
  }
  return ss.str();
}

template <int D>
std::string snapshots_csv(const TransportRun<D>& run) {
  std::ostringstream ss;
  ss << "t,particle," << axis_header<D>() << ",weight\n";
  for (std::size_t s = 0; s < run.snapshots.size(); ++s)
    for (std::size_t i = 0; i < run.snapshots[s].size(); ++i)
      ss << fmt(run.times[s]) << "," << i << "," << coords<D>(run.snapshots[s].points[i]) << ","
         << fmt(run.snapshots[s].weights[i]) << "\n";
  return ss.str();
}

template <int D>
std::string measure_csv(const EmpiricalMeasure<D>& m) {
  std::ostringstream ss;
  ss << axis_header<D>() << "\n";
  for (const auto& x : m.points) ss << coords<D>(x) << "\n";
  return ss.str();
}

template <int D>
EmpiricalMeasure<D> parse_measure_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  EmpiricalMeasure<D> m;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    Vec<D> x;
    for (int a = 0; a < D; ++a) {
      std::string cell;
      std::getline(row, cell, ',');
      x[a] = std::stod(cell);
    }
    m.points.push_back(x);
  }
  return m;
}

inline std::string plan_csv(const CouplingPlan& plan) {
  std::ostringstream ss;
  ss << "i,sigma,pair_cost\n";
  for (std::size_t i = 0; i < plan.sigma.size(); ++i) ss << i << "," << plan.sigma[i] << "," << fmt(plan.pair_cost[i]) << "\n";
  return ss.str();
}

inline json invariant_report_json(const InvariantMeasureReport& r) {
  json j;
  j["shift_defect"] = r.shift_defect;
  j["energy_integral"] = r.energy_integral;
  j["c_gap"] = r.c_gap;
  j["inv_tol"] = r.inv_tol;
  j["invariant"] = r.invariant;
  j["proxy"] = "finite evaluation marginals";
  return j;
}

// ---------------------------------------------------------------------------
// CSV comparison for golden files.

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (first) t.header = std::move(cells);
    else t.rows.push_back(std::move(cells));
    first = false;
  }
  return t;
}

}  // namespace wkam::io
