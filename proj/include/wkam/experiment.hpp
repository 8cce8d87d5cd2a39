#pragma once

#include <chrono>
#include <ctime>
#include <map>
#include <toml.hpp>

#include "wkam/io.hpp"

namespace wkam {

inline constexpr const char* kVersion = "0.3.0";
inline constexpr int kSchemaVersion = 1;

struct ConfigError : std::runtime_error {
  std::string field;
  ConfigError(std::string f, const std::string& what) : std::runtime_error(f + ": " + what), field(std::move(f)) {}
};

struct PipelineError : std::runtime_error {
  std::string stage;
  PipelineError(std::string s, const std::string& cause)
      : std::runtime_error("stage " + s + ": " + cause), stage(std::move(s)) {}
};

enum class ExperimentKind { kWeakKam, kCutLocus, kCharacteristics, kTransport, kErgodic, kMeasureHj, kFullSuite };

inline const std::vector<std::pair<std::string, ExperimentKind>>& experiment_kinds() {
  static const std::vector<std::pair<std::string, ExperimentKind>> kinds{
      {"weak_kam", ExperimentKind::kWeakKam},         {"cut_locus", ExperimentKind::kCutLocus},
      {"characteristics", ExperimentKind::kCharacteristics}, {"transport", ExperimentKind::kTransport},
      {"ergodic", ExperimentKind::kErgodic},          {"measure_hj", ExperimentKind::kMeasureHj},
      {"full_suite", ExperimentKind::kFullSuite}};
  return kinds;
}

inline std::string kind_name(ExperimentKind k) {
  for (const auto& [name, kind] : experiment_kinds())
    if (kind == k) return name;
  return "unknown";
}

struct HamiltonianDescriptor {
  std::string family = "pendulum";
  std::map<std::string, double> params;

  double param(const std::string& key, double fallback) const {
    const auto it = params.find(key);
    return it == params.end() ? fallback : it->second;
  }
};

struct HamiltonianEntry {
  std::string family;
  std::string dimensions;
  std::string params;
  std::string critical_value;
};

inline std::vector<HamiltonianEntry> hamiltonian_registry() {
  return {
      {"pendulum", "1", "amplitude=1, shift=0", "amplitude"},
      {"mechanical", "1,2", "amplitude0=1, amplitude1=1, shift0=0, shift1=0", "sum of |amplitude_i|"},
      {"free", "1,2", "-", "0"},
      {"shifted_quadratic", "1,2", "p0_0=0, p0_1=0", "|p0|^2 / 2"},
      {"quartic", "1,2", "beta=0.2, amplitude=1", "d * |amplitude|"},
  };
}

namespace detail {
inline std::string axis_key(const std::string& base, int i, int D) { return D == 1 ? base : base + std::to_string(i); }

inline void require_known_params(const HamiltonianDescriptor& d, const std::vector<std::string>& allowed) {
  for (const auto& [k, v] : d.params)
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
      throw ConfigError("hamiltonian." + k, "unknown parameter for family '" + d.family + "'");
}
}  // namespace detail

template <int D>
HamiltonianSpec<D> make_hamiltonian(const HamiltonianDescriptor& d) {
  const std::string& f = d.family;
  if (f == "pendulum") detail::require_known_params(d, {"amplitude", "shift"});
  else if (f == "mechanical") detail::require_known_params(d, {"amplitude", "shift", "amplitude0", "amplitude1", "shift0", "shift1"});
  else if (f == "free") detail::require_known_params(d, {});
  else if (f == "shifted_quadratic") detail::require_known_params(d, {"p0_0", "p0_1"});
  else if (f == "quartic") detail::require_known_params(d, {"beta", "amplitude"});
  if (f == "pendulum") {
    if constexpr (D == 1) return pendulum(d.param("amplitude", 1.0), d.param("shift", 0.0));
    else throw ConfigError("hamiltonian.family", "pendulum is one-dimensional; use mechanical in 2D");
  }
  if (f == "mechanical") {
    Vec<D> a, s;
    for (int i = 0; i < D; ++i) {
      a[i] = d.param(detail::axis_key("amplitude", i, D), d.param("amplitude", 1.0));
      s[i] = d.param(detail::axis_key("shift", i, D), d.param("shift", 0.0));
    }
    return cosine_mechanical<D>(a, s);
  }
  if (f == "free") return free_particle<D>();
  if (f == "shifted_quadratic") {
    Vec<D> p0;
    for (int i = 0; i < D; ++i) p0[i] = d.param("p0_" + std::to_string(i), 0.0);
    return shifted_quadratic<D>(p0);
  }
  if (f == "quartic") return quartic_mechanical<D>(d.param("beta", 0.2), d.param("amplitude", 1.0));
  throw ConfigError("hamiltonian.family", "unknown family '" + f + "'");
}

/// Closed-form critical value for the built-in families.
inline double known_critical_value(const HamiltonianDescriptor& d, int D) {
  const std::string& f = d.family;
  if (f == "pendulum") return std::abs(d.param("amplitude", 1.0));
  if (f == "mechanical") {
    double c = 0.0;
    for (int i = 0; i < D; ++i) c += std::abs(d.param(detail::axis_key("amplitude", i, D), d.param("amplitude", 1.0)));
    return c;
  }
  if (f == "free") return 0.0;
  if (f == "shifted_quadratic") {
    double s = 0.0;
    for (int i = 0; i < D; ++i) s += std::pow(d.param("p0_" + std::to_string(i), 0.0), 2);
    return 0.5 * s;
  }
  if (f == "quartic") return D * std::abs(d.param("amplitude", 1.0));
  throw ConfigError("hamiltonian.family", "unknown family '" + f + "'");
}

struct ExperimentConfig {
  int schema_version = kSchemaVersion;
  ExperimentKind kind = ExperimentKind::kWeakKam;
  HamiltonianDescriptor hamiltonian;
  int dimension = 1;
  int n = 512;
  // steps
  double t_step = 0.2;
  double dt = 1e-3;
  std::vector<double> taus{0.1, 0.05, 0.025};
  double horizon = 1.0;       // cut-time horizon
  double ladder_step = 0.05;  // commutator-defect ladder spacing
  double path_horizon = 2.0;  // characteristics length
  double solve_tol = 1e-9;
  int max_iter = 5000;
  // tolerances; unset ones are derived from the data
  std::optional<double> defect_tol, slope_tol, jump_tol, inv_tol;
  double cut_tol = 0.05;
  // ensembles
  int particles = 1000;
  std::vector<double> snapshots{0.0, 0.5, 1.0, 2.0, 5.0};
  int start_points = 8;
  int measure_points = 8;
  std::string output_dir;
  std::uint64_t seed = 1;
  int threads = 1;

  io::json to_json() const {
    io::json j;
    j["schema_version"] = schema_version;
    j["kind"] = kind_name(kind);
    j["seed"] = seed;
    j["threads"] = threads;
    io::json h;
    h["family"] = hamiltonian.family;
    for (const auto& [k, v] : hamiltonian.params) h[k] = v;
    j["hamiltonian"] = h;
    j["grid"] = {{"dimension", dimension}, {"n", n}};
    j["steps"] = {{"t_step", t_step},   {"dt", dt},         {"taus", taus},           {"horizon", horizon},
                  {"ladder_step", ladder_step}, {"path_horizon", path_horizon}, {"solve_tol", solve_tol},
                  {"max_iter", max_iter}};
    io::json tol = {{"cut_tol", cut_tol}};
    if (defect_tol) tol["defect_tol"] = *defect_tol;
    if (slope_tol) tol["slope_tol"] = *slope_tol;
    if (jump_tol) tol["jump_tol"] = *jump_tol;
    if (inv_tol) tol["inv_tol"] = *inv_tol;
    j["tolerances"] = tol;
    j["ensembles"] = {{"particles", particles},
                      {"snapshots", snapshots},
                      {"start_points", start_points},
                      {"measure_points", measure_points}};
    j["output"] = {{"dir", output_dir}};
    return j;
  }

  void validate() const {
    if (schema_version != kSchemaVersion)
      throw ConfigError("schema_version", "unsupported version " + std::to_string(schema_version));
    if (dimension != 1 && dimension != 2) throw ConfigError("grid.dimension", "must be 1 or 2");
    const bool pow2 = n > 0 && (n & (n - 1)) == 0;
    const int lo = 64, hi = dimension == 1 ? 2048 : 256;
    if (!pow2 || n < lo || n > hi)
      throw ConfigError("grid.n", "must be a power of two in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    auto positive = [](const std::string& field, double v) {
      if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(field, "must be positive");
    };
    positive("steps.t_step", t_step);
    if (t_step > 1.0) throw ConfigError("steps.t_step", "must not exceed 1");
    positive("steps.dt", dt);
    if (dt > 1e-2) throw ConfigError("steps.dt", "must not exceed 1e-2");
    positive("steps.horizon", horizon);
    positive("steps.ladder_step", ladder_step);
    positive("steps.path_horizon", path_horizon);
    positive("steps.solve_tol", solve_tol);
    if (max_iter < 1) throw ConfigError("steps.max_iter", "must be at least 1");
    if (taus.empty()) throw ConfigError("steps.taus", "needs at least one step");
    for (std::size_t i = 0; i < taus.size(); ++i) positive("steps.taus[" + std::to_string(i) + "]", taus[i]);
    positive("tolerances.cut_tol", cut_tol);
    if (defect_tol) positive("tolerances.defect_tol", *defect_tol);
    if (slope_tol) positive("tolerances.slope_tol", *slope_tol);
    if (jump_tol) positive("tolerances.jump_tol", *jump_tol);
    if (inv_tol) positive("tolerances.inv_tol", *inv_tol);
    if (particles < 1) throw ConfigError("ensembles.particles", "must be at least 1");
    if (snapshots.empty() || snapshots.front() != 0.0) throw ConfigError("ensembles.snapshots", "must start at 0");
    for (std::size_t i = 1; i < snapshots.size(); ++i)
      if (!(snapshots[i] > snapshots[i - 1])) throw ConfigError("ensembles.snapshots", "must increase");
    if (start_points < 1) throw ConfigError("ensembles.start_points", "must be at least 1");
    if (measure_points < 1) throw ConfigError("ensembles.measure_points", "must be at least 1");
    if (threads < 1) throw ConfigError("threads", "must be at least 1");
    if (dimension == 1) (void)make_hamiltonian<1>(hamiltonian);
    else (void)make_hamiltonian<2>(hamiltonian);
  }
};

namespace detail {

inline io::json toml_to_json(const toml::node& node) {
  if (auto t = node.as_table()) {
    io::json j = io::json::object();
    for (const auto& [k, v] : *t) j[std::string(k.str())] = toml_to_json(v);
    return j;
  }
  if (auto a = node.as_array()) {
    io::json j = io::json::array();
    for (const auto& v : *a) j.push_back(toml_to_json(v));
    return j;
  }
  if (auto v = node.as_string()) return v->get();
  if (auto v = node.as_integer()) return v->get();
  if (auto v = node.as_floating_point()) return v->get();
  if (auto v = node.as_boolean()) return v->get();
  throw ConfigError("<document>", "unsupported TOML value type");
}

inline const io::json* child(const io::json& j, const std::string& key) {
  if (!j.is_object()) return nullptr;
  const auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

inline double get_number(const io::json& v, const std::string& field) {
  if (!v.is_number()) throw ConfigError(field, "expected a number");
  return v.get<double>();
}

inline int get_int(const io::json& v, const std::string& field) {
  if (!v.is_number_integer()) throw ConfigError(field, "expected an integer");
  return v.get<int>();
}

inline std::vector<double> get_numbers(const io::json& v, const std::string& field) {
  if (!v.is_array()) throw ConfigError(field, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(get_number(v[i], field + "[" + std::to_string(i) + "]"));
  return out;
}

template <typename Fn>
void for_each_key(const io::json& section, const std::string& prefix, const std::vector<std::string>& known, Fn&& fn) {
  if (!section.is_object()) throw ConfigError(prefix, "expected a table");
  for (auto it = section.begin(); it != section.end(); ++it) {
    const std::string field = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!known.empty() && std::find(known.begin(), known.end(), it.key()) == known.end())
      throw ConfigError(field, "unknown key");
    fn(it.key(), it.value(), field);
  }
}

}  // namespace detail

/// Reads the versioned schema from its JSON form (TOML documents are converted first).
inline ExperimentConfig config_from_json(const io::json& j) {
  using namespace detail;
  ExperimentConfig c;
  for_each_key(j, "", {"schema_version", "kind", "seed", "threads", "hamiltonian", "grid", "steps", "tolerances", "ensembles", "output"},
               [&](const std::string& key, const io::json& v, const std::string& field) {
                 if (key == "schema_version") c.schema_version = get_int(v, field);
                 else if (key == "kind") {
                   if (!v.is_string()) throw ConfigError(field, "expected a string");
                   bool found = false;
                   for (const auto& [name, kind] : experiment_kinds())
                     if (name == v.get<std::string>()) {
                       c.kind = kind;
                       found = true;
                     }
                   if (!found) throw ConfigError(field, "unknown experiment kind '" + v.get<std::string>() + "'");
                 } else if (key == "seed") {
                   if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError(field, "expected a non-negative integer");
                   c.seed = v.get<std::uint64_t>();
                 } else if (key == "threads") c.threads = get_int(v, field);
                 else if (key == "hamiltonian") {
                   for_each_key(v, field, {}, [&](const std::string& k, const io::json& hv, const std::string& hf) {
                     if (k == "family") {
                       if (!hv.is_string()) throw ConfigError(hf, "expected a string");
                       c.hamiltonian.family = hv.get<std::string>();
                     } else {
                       c.hamiltonian.params[k] = get_number(hv, hf);
                     }
                   });
                 } else if (key == "grid") {
                   for_each_key(v, field, {"dimension", "n"}, [&](const std::string& k, const io::json& gv, const std::string& gf) {
                     if (k == "dimension") c.dimension = get_int(gv, gf);
                     else c.n = get_int(gv, gf);
                   });
                 } else if (key == "steps") {
                   for_each_key(v, field, {"t_step", "dt", "taus", "horizon", "ladder_step", "path_horizon", "solve_tol", "max_iter"},
                                [&](const std::string& k, const io::json& sv, const std::string& sf) {
                                  if (k == "t_step") c.t_step = get_number(sv, sf);
                                  else if (k == "dt") c.dt = get_number(sv, sf);
                                  else if (k == "taus") c.taus = get_numbers(sv, sf);
                                  else if (k == "horizon") c.horizon = get_number(sv, sf);
                                  else if (k == "ladder_step") c.ladder_step = get_number(sv, sf);
                                  else if (k == "path_horizon") c.path_horizon = get_number(sv, sf);
                                  else if (k == "solve_tol") c.solve_tol = get_number(sv, sf);
                                  else c.max_iter = get_int(sv, sf);
                                });
                 } else if (key == "tolerances") {
                   for_each_key(v, field, {"defect_tol", "slope_tol", "jump_tol", "inv_tol", "cut_tol"},
                                [&](const std::string& k, const io::json& tv, const std::string& tf) {
                                  const double x = get_number(tv, tf);
                                  if (k == "defect_tol") c.defect_tol = x;
                                  else if (k == "slope_tol") c.slope_tol = x;
                                  else if (k == "jump_tol") c.jump_tol = x;
                                  else if (k == "inv_tol") c.inv_tol = x;
                                  else c.cut_tol = x;
                                });
                 } else if (key == "ensembles") {
                   for_each_key(v, field, {"particles", "snapshots", "start_points", "measure_points"},
                                [&](const std::string& k, const io::json& ev, const std::string& ef) {
                                  if (k == "particles") c.particles = get_int(ev, ef);
                                  else if (k == "snapshots") c.snapshots = get_numbers(ev, ef);
                                  else if (k == "start_points") c.start_points = get_int(ev, ef);
                                  else c.measure_points = get_int(ev, ef);
                                });
                 } else if (key == "output") {
                   for_each_key(v, field, {"dir"}, [&](const std::string&, const io::json& ov, const std::string& of) {
                     if (!ov.is_string()) throw ConfigError(of, "expected a string");
                     c.output_dir = ov.get<std::string>();
                   });
                 }
               });
  c.validate();
  return c;
}

inline ExperimentConfig parse_config(const std::string& text, bool json_format) {
  io::json j;
  if (json_format) {
    try {
      j = io::json::parse(text);
    } catch (const io::json::parse_error& e) {
      throw ConfigError("<document>", std::string("JSON parse error: ") + e.what());
    }
  } else {
    try {
      j = detail::toml_to_json(toml::parse(text));
    } catch (const toml::parse_error& e) {
      std::ostringstream ss;
      ss << "TOML parse error at line " << e.source().begin.line << ": " << e.description();
      throw ConfigError("<document>", ss.str());
    }
  }
  return config_from_json(j);
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError("<file>", e.what());
  }
  return parse_config(text, path.extension() == ".json");
}

// ---------------------------------------------------------------------------
// Pipelines.

struct Assertion {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct ExperimentManifest {
  io::json data;
  std::vector<Assertion> assertions;
  std::filesystem::path dir;

  bool passed() const {
    return std::all_of(assertions.begin(), assertions.end(), [](const Assertion& a) { return a.passed; });
  }
};

namespace detail {

template <int D>
class Pipeline {
 public:
  Pipeline(const ExperimentConfig& cfg, std::filesystem::path dir)
      : cfg_(cfg), dir_(std::move(dir)), H_(make_hamiltonian<D>(cfg.hamiltonian)), L_(H_), rng_(cfg.seed) {}

  ExperimentManifest run() {
    const auto start = std::chrono::steady_clock::now();
    const auto kind = cfg_.kind;
    const bool all = kind == ExperimentKind::kFullSuite;
    stage("solve", [&] { solve(); });
    if (all || kind == ExperimentKind::kCutLocus || kind == ExperimentKind::kTransport || kind == ExperimentKind::kErgodic)
      stage("cut_locus", [&] { cut_locus(); });
    if (all || kind == ExperimentKind::kCharacteristics) stage("characteristics", [&] { characteristics(); });
    if (all || kind == ExperimentKind::kTransport) stage("transport", [&] { transport(); });
    if (all || kind == ExperimentKind::kErgodic) stage("ergodic", [&] { ergodic(); });
    if (all || kind == ExperimentKind::kMeasureHj) stage("measure_hj", [&] { measure(); });

    ExperimentManifest m;
    m.dir = dir_;
    m.assertions = assertions_;
    io::json& j = m.data;
    j["schema_version"] = kSchemaVersion;
    j["config"] = cfg_.to_json();
    j["version"] = {{"code", kVersion}, {"config_sha256", io::sha256_hex(cfg_.to_json().dump())}};
    const std::time_t now = std::time(nullptr);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    j["timestamp"] = stamp;
    j["wall_clock_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    j["constants"] = constants_;
    j["reports"] = reports_;
    io::json asserts = io::json::array();
    for (const auto& a : assertions_) asserts.push_back({{"name", a.name}, {"passed", a.passed}, {"detail", a.detail}});
    j["assertions"] = asserts;
    j["status"] = m.passed() ? "pass" : "fail";
    io::json files = io::json::array();
    for (const auto& [name, hash, bytes] : files_) files.push_back({{"name", name}, {"sha256", hash}, {"bytes", bytes}});
    j["files"] = files;
    io::atomic_write(dir_ / "manifest.json", j.dump(2) + "\n");
    return m;
  }

 private:
  template <typename Fn>
  void stage(const std::string& name, Fn&& fn) {
    try {
      fn();
    } catch (const PipelineError&) {
      throw;
    } catch (const std::exception& e) {
      throw PipelineError(name, e.what());
    }
  }

  void write(const std::string& name, const std::string& content) {
    io::atomic_write(dir_ / name, content);
    files_.emplace_back(name, io::sha256_hex(content), content.size());
  }

  void check(const std::string& name, bool ok, const std::string& detail) { assertions_.push_back({name, ok, detail}); }

  static std::string num(double v) { return io::fmt(v); }

  void solve() {
    auto res = weak_kam_solve<D>(H_, cfg_.n, cfg_.t_step, cfg_.solve_tol, cfg_.max_iter, cfg_.threads);
    phi_ = res.phi;
    c_ = res.c_value;
    solver_ = std::make_unique<CharacteristicSolver<D>>(*phi_, L_, short_time_constants(*phi_, L_), cfg_.threads);
    const auto& k = solver_->constants();
    const double oracle = known_critical_value(cfg_.hamiltonian, D);
    constants_["c_value"] = c_;
    constants_["c_oracle"] = oracle;
    constants_["solve_iterations"] = res.iterations;
    constants_["solve_residual"] = res.residual;
    constants_["C1"] = k.C1;
    constants_["C2"] = k.C2;
    constants_["lambda"] = k.lambda;
    constants_["tau_phi"] = k.tau_phi_step;
    constants_["grid_spacing"] = phi_->grid().spacing();
    const double tol = D == 1 ? 1e-2 : 5e-2;
    check("critical_value", std::abs(c_ - oracle) <= tol * std::max(1.0, std::abs(oracle)),
          "c = " + num(c_) + ", closed form " + num(oracle));
    std::vector<double> vals = phi_->values();
    write("phi.csv", io::fields_csv<D>(phi_->grid(), {{"phi", &vals}}));
  }

  void cut_locus() {
    if (cut_) return;
    const auto& lo = solver_->lax_oleinik();
    auto ladder = std::make_shared<const DefectLadder<D>>(DefectLadder<D>::build(lo, *phi_, cfg_.horizon, cfg_.ladder_step));
    double tol;
    if (cfg_.defect_tol) {
      tol = *cfg_.defect_tol;
    } else {
      const auto cal = calibrate_defect_tol(*ladder, aubry_probes(H_, phi_->grid(), c_));
      tol = cal.defect_tol;
      constants_["defect_self"] = cal.self_defect;
    }
    constants_["defect_tol"] = tol;
    cut_.emplace(cut_time_field(ladder, tol));
    const double slope_tol = cfg_.slope_tol.value_or(solver_->slope_tol());
    const double jump_tol = cfg_.jump_tol.value_or(2.5 * slope_tol);
    constants_["slope_tol"] = slope_tol;
    constants_["jump_tol"] = jump_tol;
    mask_.emplace(singular_mask(*phi_, jump_tol, slope_tol, cfg_.threads));
    std::vector<char> cut_mask(phi_->grid().size());
    for (std::size_t f = 0; f < cut_mask.size(); ++f) cut_mask[f] = cut_->tau[f] <= cfg_.cut_tol;
    std::vector<double> tau = cut_->tau.values();
    std::vector<double> last = ladder->defect(ladder->steps()).values();
    write("cut_time.csv", io::fields_csv<D>(phi_->grid(), {{"cut_time", &tau}, {"defect_at_horizon", &last}}));
    write("cut_mask.csv", io::mask_csv(cut_mask));
    write("singular_mask.csv", io::mask_csv(mask_->singular));
    const auto aubry = cut_->aubry_candidates();
    constants_["aubry_nodes"] = aubry.size();
    constants_["cut_nodes"] = std::count(cut_mask.begin(), cut_mask.end(), 1);
    constants_["singular_nodes"] = mask_->count();
    reports_["singular_mask_b64"] = io::base64_encode(std::string(mask_->singular.begin(), mask_->singular.end()));
    check("aubry_nonempty", !aubry.empty(), std::to_string(aubry.size()) + " nodes reach the horizon");
  }

  std::vector<Vec<D>> start_points() {
    std::vector<Vec<D>> pts;
    if (mask_ && mask_->count() > 0) pts.push_back(phi_->grid().node(mask_->nodes().front()));
    std::uniform_real_distribution<double> u(0.0, phi_->grid().period());
    while (static_cast<int>(pts.size()) < cfg_.start_points) {
      Vec<D> x;
      for (int a = 0; a < D; ++a) x[a] = u(rng_);
      pts.push_back(x);
    }
    return pts;
  }

  void characteristics() {
    const auto pts = start_points();
    double edi_max = 0.0;
    std::vector<double> taus;
    for (double tau : cfg_.taus)
      if (tau <= solver_->tau_step()) taus.push_back(tau);
    std::vector<double> err(taus.size(), 0.0);
    io::json rows = io::json::array();
    for (std::size_t i = 0; i < pts.size(); ++i) {
      auto path = solver_->strict_singular_characteristic(pts[i], cfg_.path_horizon, cfg_.dt);
      const double edi = edi_residual(path, *phi_, H_, 1.0).max_per_unit_time;
      edi_max = std::max(edi_max, edi);
      io::json row = {{"start", std::vector<double>(pts[i].data(), pts[i].data() + D)}, {"edi", edi}};
      std::vector<double> d;
      for (std::size_t k = 0; k < taus.size(); ++k) {
        d.push_back(path_sup_distance(path, solver_->intrinsic_characteristic(pts[i], taus[k], cfg_.path_horizon)));
        err[k] = std::max(err[k], d.back());
      }
      row["intrinsic_distance"] = d;
      rows.push_back(row);
      char name[32];
      std::snprintf(name, sizeof name, "path_%02zu.csv", i);
      write(name, io::path_csv(path));
    }
    reports_["characteristics"] = {{"paths", rows}, {"taus", taus}, {"max_distance", err}};
    check("edi_identity", edi_max <= 1e-3, "max EDI residual per unit time " + num(edi_max));
    if (taus.size() >= 2 && err.front() > 1e-12) {
      const double order = fitted_order(taus, err);
      reports_["characteristics"]["fitted_order"] = order;
      check("intrinsic_convergence", order >= 0.8, "fitted order " + num(order));
    }
  }

  void transport() {
    auto mu = ParticleEnsemble<D>::uniform(static_cast<std::size_t>(cfg_.particles), rng_(), phi_->grid().period());
    const auto run = push_forward(mu, *solver_, cfg_.snapshots, cfg_.dt, cfg_.threads);
    write("snapshots.csv", io::snapshots_csv(run));
    const CutMassProbe<D> probe(*cut_, cfg_.cut_tol, *mask_, 3);
    std::vector<double> on_cut, on_sing;
    double mass_drift = 0.0;
    for (const auto& s : run.snapshots) {
      const auto m = probe.measure(s);
      on_cut.push_back(m.on_cut);
      on_sing.push_back(m.on_singular);
      mass_drift = std::max(mass_drift, std::abs(s.total_mass() - 1.0));
    }
    const double slack = 1.0 / cfg_.particles + 1e-12;
    const auto ce = weak_ce_residual(run, *solver_, FourierMode<D>::basis(3));
    reports_["transport"] = {{"times", cfg_.snapshots}, {"mass_on_cut", on_cut}, {"mass_on_singular", on_sing},
                             {"weak_ce_residual", ce.max_residual}};
    check("mass_conservation", mass_drift <= 1e-12, "max drift " + num(mass_drift));
    check("mass_monotone", non_decreasing(on_cut, slack) && non_decreasing(on_sing, slack), "cut/singular mass series");
  }

  void ergodic() {
    // A single equilibrium of energy c: neighbouring probe nodes drift along the separatrix.
    std::vector<Vec<D>> support;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t f : aubry_probes(H_, phi_->grid(), c_)) {
      const Vec<D> x = phi_->grid().node(f);
      const double gap = std::abs(H_(x, Vec<D>::Zero()) - c_);
      if (gap < best) {
        best = gap;
        support.assign(1, x);
      }
    }
    if (support.empty()) {
      check("mather_lift", false, "no Aubry probe nodes");
      return;
    }
    const auto lift = mather_lift_and_verify(*solver_, c_, support);
    reports_["ergodic"] = io::invariant_report_json(lift.report);
    reports_["ergodic"]["support_size"] = support.size();
    const bool ok = lift.report.invariant && std::abs(lift.report.c_gap) <= 1e-2;
    check("mather_lift", ok, "energy " + num(lift.report.energy_integral) + ", shift defect " + num(lift.report.shift_defect));
  }

  void measure() {
    const auto& lo = solver_->lax_oleinik();
    const auto mu = EmpiricalMeasure<D>::random(static_cast<std::size_t>(cfg_.measure_points), rng_, phi_->grid().period());
    const auto nu = EmpiricalMeasure<D>::random(static_cast<std::size_t>(cfg_.measure_points), rng_, phi_->grid().period());
    const double t = std::min(0.5, 2.0 * solver_->tau_step());
    double phi_mean = 0.0;
    for (const auto& x : mu.points) phi_mean += phi_->value(x) / static_cast<double>(mu.size());
    const double fixed = std::abs(p_minus_potential(*phi_, L_, mu, t, lo.lambda()) + c_ * t - phi_mean);
    const auto plan = dynamical_cost(L_, mu, nu, t, cfg_.threads);
    write("measure_mu.csv", io::measure_csv(mu));
    write("measure_nu.csv", io::measure_csv(nu));
    write("plan.csv", io::plan_csv(plan));
    int mismatches = 0;
    for (int inst = 0; inst < 10; ++inst) {
      const int n = 2 + inst % 5;
      const auto a = EmpiricalMeasure<D>::random(static_cast<std::size_t>(n), rng_, phi_->grid().period());
      const auto b = EmpiricalMeasure<D>::random(static_cast<std::size_t>(n), rng_, phi_->grid().period());
      const auto cost = action_cost_matrix(L_, a, b, t);
      if (std::abs(solve_assignment(cost, n).cost - brute_force_assignment(cost, n).cost) > 1e-10) ++mismatches;
    }
    reports_["measure_hj"] = {{"t", t}, {"fixed_point_residual", fixed}, {"dynamical_cost", plan.cost},
                              {"assignment_mismatches", mismatches}};
    check("p_minus_fixed_point", fixed <= 5e-3, "residual " + num(fixed));
    check("assignment_brute_force", mismatches == 0, std::to_string(mismatches) + " mismatching instances");
  }

  const ExperimentConfig& cfg_;
  std::filesystem::path dir_;
  HamiltonianSpec<D> H_;
  LagrangianSpec<D> L_;
  std::mt19937_64 rng_;
  std::optional<GridField<D>> phi_;
  double c_ = 0.0;
  std::unique_ptr<CharacteristicSolver<D>> solver_;
  std::optional<CutTimeField<D>> cut_;
  std::optional<SingularMask<D>> mask_;
  io::json constants_ = io::json::object();
  io::json reports_ = io::json::object();
  std::vector<Assertion> assertions_;
  std::vector<std::tuple<std::string, std::string, std::size_t>> files_;
};

}  // namespace detail

/// Output root: explicit directory, else config output.dir, else $WKAM_OUTPUT_ROOT/<kind>-<seed>,
/// else runs/<kind>-<seed>.
inline std::filesystem::path resolve_output_dir(const ExperimentConfig& cfg) {
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  const char* root = std::getenv("WKAM_OUTPUT_ROOT");
  const std::filesystem::path base = root && *root ? root : "runs";
  return base / (kind_name(cfg.kind) + "-" + std::to_string(cfg.seed));
}

inline ExperimentManifest run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto dir = resolve_output_dir(cfg);
  std::filesystem::create_directories(dir);
  if (cfg.dimension == 1) return detail::Pipeline<1>(cfg, dir).run();
  return detail::Pipeline<2>(cfg, dir).run();
}

// ---------------------------------------------------------------------------
// Golden comparison.

struct CompareReport {
  bool passed = true;
  std::vector<std::string> failures;
  void fail(std::string msg) {
    passed = false;
    failures.push_back(std::move(msg));
  }
};

/// Tolerance schema:
///   {"default_abs": 1e-9, "fields": {"constants.c_value": 1e-2, "phi.csv:phi": 1e-6},
///    "byte_exact": ["*mask*.csv", "plan.csv"], "ignore": ["constants.solve_iterations"]}
struct ToleranceSchema {
  double default_abs = 1e-9;
  std::map<std::string, double> fields;
  std::vector<std::string> byte_exact{"*mask*.csv", "plan.csv"};
  std::vector<std::string> ignore;

  static ToleranceSchema from_json(const io::json& j) {
    ToleranceSchema s;
    if (auto v = detail::child(j, "default_abs")) s.default_abs = detail::get_number(*v, "default_abs");
    if (auto v = detail::child(j, "fields"))
      for (auto it = v->begin(); it != v->end(); ++it) s.fields[it.key()] = detail::get_number(it.value(), "fields." + it.key());
    if (auto v = detail::child(j, "byte_exact")) s.byte_exact = v->get<std::vector<std::string>>();
    if (auto v = detail::child(j, "ignore")) s.ignore = v->get<std::vector<std::string>>();
    return s;
  }
  double tol(const std::string& field) const {
    const auto it = fields.find(field);
    return it == fields.end() ? default_abs : it->second;
  }
  bool ignored(const std::string& field) const { return std::find(ignore.begin(), ignore.end(), field) != ignore.end(); }
};

/// Shell-style match supporting '*' only.
inline bool wildcard_match(const std::string& pattern, const std::string& text) {
  std::size_t p = 0, t = 0, star = std::string::npos, mark = 0;
  while (t < text.size()) {
    if (p < pattern.size() && pattern[p] == text[t]) {
      ++p;
      ++t;
    } else if (p < pattern.size() && pattern[p] == '*') {
      star = p++;
      mark = t;
    } else if (star != std::string::npos) {
      p = star + 1;
      t = ++mark;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

namespace detail {

inline void compare_numbers(const io::json& run, const io::json& gold, const std::string& path,
                            const ToleranceSchema& tol, CompareReport& rep) {
  if (tol.ignored(path)) return;
  if (gold.is_object()) {
    for (auto it = gold.begin(); it != gold.end(); ++it) {
      const std::string sub = path + "." + it.key();
      if (!run.is_object() || !run.contains(it.key())) {
        if (!tol.ignored(sub)) rep.fail(sub + ": missing in run");
        continue;
      }
      compare_numbers(run[it.key()], it.value(), sub, tol, rep);
    }
  } else if (gold.is_array()) {
    if (!run.is_array() || run.size() != gold.size()) {
      rep.fail(path + ": array length differs");
      return;
    }
    for (std::size_t i = 0; i < gold.size(); ++i) compare_numbers(run[i], gold[i], path + "[" + std::to_string(i) + "]", tol, rep);
  } else if (gold.is_number()) {
    if (!run.is_number()) {
      rep.fail(path + ": expected a number");
      return;
    }
    const double a = run.get<double>(), b = gold.get<double>(), t = tol.tol(path);
    if (!(std::abs(a - b) <= t)) rep.fail(path + ": run " + io::fmt(a) + " vs golden " + io::fmt(b) + " exceeds tol " + io::fmt(t));
  } else if (gold != run) {
    rep.fail(path + ": value differs");
  }
}

inline void compare_csv(const std::string& name, const std::string& run, const std::string& gold,
                        const ToleranceSchema& tol, CompareReport& rep) {
  const auto a = io::parse_csv(run), b = io::parse_csv(gold);
  if (a.header != b.header) {
    rep.fail(name + ": header differs");
    return;
  }
  if (a.rows.size() != b.rows.size()) {
    rep.fail(name + ": row count " + std::to_string(a.rows.size()) + " vs " + std::to_string(b.rows.size()));
    return;
  }
  int reported = 0;
  for (std::size_t r = 0; r < b.rows.size(); ++r)
    for (std::size_t c = 0; c < b.header.size(); ++c) {
      const std::string field = name + ":" + b.header[c];
      if (tol.ignored(field)) continue;
      const double x = std::stod(a.rows[r].at(c)), y = std::stod(b.rows[r].at(c)), t = tol.tol(field);
      if (!(std::abs(x - y) <= t) && reported++ < 10)
        rep.fail(name + "[row " + std::to_string(r) + "]." + b.header[c] + ": run " + io::fmt(x) + " vs golden " + io::fmt(y));
    }
  if (reported > 10) rep.fail(name + ": " + std::to_string(reported - 10) + " further mismatches");
}

inline void compare_bytes(const std::string& name, const std::string& run, const std::string& gold, CompareReport& rep) {
  if (run == gold) return;
  // Masks: list the nodes that flipped.
  const auto a = io::parse_csv(run), b = io::parse_csv(gold);
  if (a.header == b.header && a.rows.size() == b.rows.size() && !a.header.empty() && a.header[0] == "node") {
    for (std::size_t r = 0; r < a.rows.size(); ++r)
      if (a.rows[r] != b.rows[r])
        rep.fail(name + ": node " + b.rows[r][0] + " differs (run " + a.rows[r].back() + ", golden " + b.rows[r].back() + ")");
    return;
  }
  rep.fail(name + ": bytes differ");
}

}  // namespace detail

inline CompareReport compare_golden(const std::filesystem::path& run_dir, const std::filesystem::path& golden_dir,
                                    const ToleranceSchema& tol = {}) {
  CompareReport rep;
  io::json run_m, gold_m;
  try {
    gold_m = io::json::parse(io::read_file(golden_dir / "manifest.json"));
  } catch (const std::exception& e) {
    rep.fail(std::string("golden manifest: ") + e.what());
    return rep;
  }
  try {
    run_m = io::json::parse(io::read_file(run_dir / "manifest.json"));
  } catch (const std::exception& e) {
    rep.fail(std::string("run manifest: ") + e.what());
    return rep;
  }
  detail::compare_numbers(run_m["constants"], gold_m["constants"], "constants", tol, rep);
  detail::compare_numbers(run_m["reports"], gold_m["reports"], "reports", tol, rep);
  for (const auto& f : gold_m["files"]) {
    const std::string name = f["name"].get<std::string>();
    std::string run, gold;
    try {
      gold = io::read_file(golden_dir / name);
    } catch (const std::exception&) {
      rep.fail(name + ": missing in golden directory");
      continue;
    }
    try {
      run = io::read_file(run_dir / name);
    } catch (const std::exception&) {
      rep.fail(name + ": missing in run");
      continue;
    }
    const bool exact = std::any_of(tol.byte_exact.begin(), tol.byte_exact.end(),
                                   [&](const std::string& p) { return wildcard_match(p, name); });
    if (exact) detail::compare_bytes(name, run, gold, rep);
    else detail::compare_csv(name, run, gold, tol, rep);
  }
  return rep;
}

}  // namespace wkam
