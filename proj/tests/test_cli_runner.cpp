#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sys/wait.h>

#include "wkam/experiment.hpp"

using namespace wkam;
namespace fs = std::filesystem;

namespace {

const char* kCutLocusToml = R"(schema_version = 1
kind = "cut_locus"
seed = 3

[hamiltonian]
family = "pendulum"
amplitude = 1.0

[grid]
dimension = 1
n = 128

[steps]
dt = 1e-3
taus = [0.1, 0.05]
)";

const char* kCutLocusJson = R"({"schema_version": 1, "kind": "cut_locus", "seed": 3,
  "hamiltonian": {"family": "pendulum", "amplitude": 1.0},
  "grid": {"dimension": 1, "n": 128},
  "steps": {"dt": 0.001, "taus": [0.1, 0.05]}})";

class Workspace : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    root_ = fs::temp_directory_path() / ("wkam-cli-" + std::string(info->test_suite_name()) + "-" + info->name());
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  fs::path file(const std::string& name, const std::string& content) const {
    const fs::path p = root_ / name;
    std::ofstream(p) << content;
    return p;
  }

  /// Runs the CLI and returns its exit status; stdout and stderr land in root_/out.txt.
  int cli(const std::string& args) const {
    const std::string cmd = std::string(WKAM_CLI_PATH) + " " + args + " > " + (root_ / "out.txt").string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
  std::string output() const { return io::read_file(root_ / "out.txt"); }

  fs::path root_;
};

std::string config_error_field(const std::string& text, bool json) {
  try {
    parse_config(text, json);
  } catch (const ConfigError& e) {
    return e.field;
  }
  return "";
}

}  // namespace

TEST(ConfigParse, ReportsTheOffendingField) {
  EXPECT_EQ(config_error_field("schema_version = 1\n[grid]\nm = 128\n", false), "grid.m");
  EXPECT_EQ(config_error_field("schema_version = 1\n[grid]\nn = 500\n", false), "grid.n");
  EXPECT_EQ(config_error_field("schema_version = 1\n[steps]\ndt = \"small\"\n", false), "steps.dt");
  EXPECT_EQ(config_error_field("schema_version = 1\n[steps]\ntaus = [0.1, -0.05]\n", false), "steps.taus[1]");
  EXPECT_EQ(config_error_field("schema_version = 1\n[tolerances]\ndefect_tol = -1\n", false), "tolerances.defect_tol");
  EXPECT_EQ(config_error_field("schema_version = 1\n[ensembles]\nsnapshots = [0.5, 1.0]\n", false), "ensembles.snapshots");
  EXPECT_EQ(config_error_field(R"({"schema_version": 2})", true), "schema_version");
  EXPECT_EQ(config_error_field(R"({"kind": "nonsense"})", true), "kind");
  EXPECT_EQ(config_error_field(R"({"hamiltonian": {"family": "pendulum"}, "grid": {"dimension": 2, "n": 64}})", true),
            "hamiltonian.family");
  EXPECT_EQ(config_error_field("[grid\n", false), "<document>");
  EXPECT_EQ(config_error_field("{", true), "<document>");
}

TEST(ConfigParse, TomlAndJsonAgree) {
  const auto a = parse_config(kCutLocusToml, false), b = parse_config(kCutLocusJson, true);
  EXPECT_EQ(a.to_json(), b.to_json());
  EXPECT_EQ(a.kind, ExperimentKind::kCutLocus);
  EXPECT_EQ(a.n, 128);
  EXPECT_EQ(a.taus, (std::vector<double>{0.1, 0.05}));
}

TEST(ConfigParse, RoundTripsThroughJson) {
  auto cfg = parse_config(kCutLocusToml, false);
  cfg.defect_tol = 2e-4;
  cfg.output_dir = "somewhere";
  EXPECT_EQ(config_from_json(cfg.to_json()).to_json(), cfg.to_json());
}

TEST(Registry, CriticalValuesOfBuiltInFamilies) {
  HamiltonianDescriptor d;
  d.family = "mechanical";
  d.params = {{"amplitude0", 1.0}, {"amplitude1", 1.0}};
  EXPECT_DOUBLE_EQ(known_critical_value(d, 2), 2.0);
  d.family = "shifted_quadratic";
  d.params = {{"p0_0", 0.3}};
  EXPECT_NEAR(known_critical_value(d, 1), 0.045, 1e-15);
  d.params = {{"p0", 0.3}};
  try {
    make_hamiltonian<1>(d);
    ADD_FAILURE() << "unknown parameter accepted";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field, "hamiltonian.p0");
  }
  EXPECT_GE(hamiltonian_registry().size(), 5u);
}

TEST(OutputDir, ResolutionOrder) {
  ExperimentConfig cfg;
  cfg.kind = ExperimentKind::kTransport;
  cfg.seed = 9;
  ::unsetenv("WKAM_OUTPUT_ROOT");
  EXPECT_EQ(resolve_output_dir(cfg), fs::path("runs") / "transport-9");
  ::setenv("WKAM_OUTPUT_ROOT", "/tmp/elsewhere", 1);
  EXPECT_EQ(resolve_output_dir(cfg), fs::path("/tmp/elsewhere") / "transport-9");
  cfg.output_dir = "explicit";
  EXPECT_EQ(resolve_output_dir(cfg), fs::path("explicit"));
  ::unsetenv("WKAM_OUTPUT_ROOT");
}

TEST(Wildcard, StarOnly) {
  EXPECT_TRUE(wildcard_match("*mask*.csv", "singular_mask.csv"));
  EXPECT_TRUE(wildcard_match("plan.csv", "plan.csv"));
  EXPECT_FALSE(wildcard_match("*mask*.csv", "phi.csv"));
  EXPECT_FALSE(wildcard_match("plan.csv", "plan.csv.part"));
}

TEST_F(Workspace, RunIsDeterministicAndComparesClean) {
  const auto cfg = file("cut.toml", kCutLocusToml);
  ASSERT_EQ(cli("run " + cfg.string() + " --out " + (root_ / "a").string()), 0) << output();
  ASSERT_EQ(cli("run " + cfg.string() + " --out " + (root_ / "b").string()), 0) << output();
  for (const char* name : {"phi.csv", "cut_time.csv", "cut_mask.csv", "singular_mask.csv"})
    EXPECT_EQ(io::read_file(root_ / "a" / name), io::read_file(root_ / "b" / name)) << name;
  for (const auto& e : fs::recursive_directory_iterator(root_)) EXPECT_NE(e.path().extension(), ".part");
  EXPECT_EQ(cli("compare " + (root_ / "a").string() + " " + (root_ / "b").string()), 0) << output();

  const auto m = io::json::parse(io::read_file(root_ / "a" / "manifest.json"));
  EXPECT_EQ(m["status"], "pass");
  EXPECT_EQ(m["version"]["code"], kVersion);
  for (const auto& f : m["files"])
    EXPECT_EQ(f["sha256"], io::sha256_hex(io::read_file(root_ / "a" / f["name"].get<std::string>())));
}

TEST_F(Workspace, CompareReportsPerturbedConstantAndFlippedNode) {
  const auto cfg = file("cut.toml", kCutLocusToml);
  ASSERT_EQ(cli("run " + cfg.string() + " --out " + (root_ / "gold").string()), 0) << output();
  fs::copy(root_ / "gold", root_ / "run");

  auto m = io::json::parse(io::read_file(root_ / "run" / "manifest.json"));
  m["constants"]["c_value"] = m["constants"]["c_value"].get<double>() + 0.05;
  io::atomic_write(root_ / "run" / "manifest.json", m.dump(2));
  const auto tol = file("tol.json", R"({"fields": {"constants.c_value": 0.01}})");
  EXPECT_EQ(cli("compare " + (root_ / "run").string() + " " + (root_ / "gold").string() + " --tolerances " +
                tol.string()),
            1);
  EXPECT_NE(output().find("constants.c_value"), std::string::npos) << output();

  // Undo the constant, then flip node 5 of the cut mask.
  fs::copy_file(root_ / "gold" / "manifest.json", root_ / "run" / "manifest.json", fs::copy_options::overwrite_existing);
  auto mask = io::read_file(root_ / "run" / "cut_mask.csv");
  const auto pos = mask.find("\n5,");
  ASSERT_NE(pos, std::string::npos);
  char& bit = mask[pos + 3];
  bit = bit == '0' ? '1' : '0';
  io::atomic_write(root_ / "run" / "cut_mask.csv", mask);
  EXPECT_EQ(cli("compare " + (root_ / "run").string() + " " + (root_ / "gold").string()), 1);
  EXPECT_NE(output().find("cut_mask.csv: node 5"), std::string::npos) << output();
}

TEST_F(Workspace, ExitCodes) {
  const auto bad_n = file("bad.toml", "schema_version = 1\n[grid]\nn = 500\n");
  EXPECT_EQ(cli("run " + bad_n.string()), 2);
  EXPECT_NE(output().find("grid.n"), std::string::npos);
  EXPECT_EQ(cli("run " + (root_ / "missing.toml").string()), 2);
  EXPECT_EQ(cli(""), 2);
  EXPECT_EQ(cli("run " + file("ok.toml", kCutLocusToml).string() + " --threads 0"), 2);

  // One solver iteration leaves c far from the closed form: an assertion failure.
  const auto short_solve = file("short.toml", "schema_version = 1\n[grid]\nn = 128\n[steps]\nmax_iter = 1\n");
  EXPECT_EQ(cli("run " + short_solve.string() + " --out " + (root_ / "short").string()), 1);
  EXPECT_NE(output().find("FAIL critical_value"), std::string::npos);
  EXPECT_EQ(io::json::parse(io::read_file(root_ / "short" / "manifest.json"))["status"], "fail");

  // Output path is a regular file.
  const auto blocker = file("blocker", "");
  EXPECT_EQ(cli("run " + file("ok.toml", kCutLocusToml).string() + " --out " + blocker.string()), 3);
}

TEST_F(Workspace, FreeParticleSolution) {
  const auto cfg = file("free.json", R"({"schema_version": 1, "kind": "weak_kam", "hamiltonian": {"family": "free"},
                                         "grid": {"dimension": 1, "n": 128}})");
  ASSERT_EQ(cli("run " + cfg.string() + " --out " + (root_ / "free").string()), 0) << output();
  const auto m = io::json::parse(io::read_file(root_ / "free" / "manifest.json"));
  EXPECT_NEAR(m["constants"]["c_value"].get<double>(), 0.0, 1e-12);
  std::istringstream csv(io::read_file(root_ / "free" / "phi.csv"));
  std::string line;
  std::getline(csv, line);
  std::vector<double> phi;
  while (std::getline(csv, line)) phi.push_back(std::stod(line.substr(line.find(',') + 1)));
  ASSERT_EQ(phi.size(), 128u);
  EXPECT_LE(*std::max_element(phi.begin(), phi.end()) - *std::min_element(phi.begin(), phi.end()), 1e-12);
}

TEST_F(Workspace, ListHamiltonians) {
  EXPECT_EQ(cli("list-hamiltonians"), 0);
  const auto out = output();
  for (const char* f : {"pendulum", "mechanical", "free", "shifted_quadratic", "quartic"})
    EXPECT_NE(out.find(f), std::string::npos) << f;
}
