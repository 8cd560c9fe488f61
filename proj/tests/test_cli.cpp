#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "mfe/commands.hpp"
#include "mfe/surface.hpp"

using namespace mfe;
using json = nlohmann::json;

namespace {
constexpr double kPi = 3.14159265358979323846;

json sphere_cfg(int level) {
  return json{{"mesh", {{"type", "sphere"}, {"subdivision", level}}}};
}

std::string find_binary() {
  for (const char* cand : {"./tools/mfe", "../tools/mfe", "./build/tools/mfe"}) {
    if (std::filesystem::exists(cand)) return cand;
  }
  return "";
}
}  // namespace

TEST_CASE("mesh info reports topology and spectrum") {
  CommandResult sphere = run_command("mesh_info", sphere_cfg(2));
  CHECK(sphere.exit_code == 0);
  CHECK(sphere.output.at("chi").get<int>() == 2);
  CHECK(std::abs(sphere.output.at("total_area").get<double>() - 1.0) <= 1e-12);
  CHECK(sphere.output.at("lambda1").get<double>() > 0.0);
  CHECK(sphere.output.at("seed").get<std::uint64_t>() == 0x6d6665ULL);

  json torus = {{"mesh", {{"type", "torus"}, {"n", 16}, {"m", 16}}}};
  CommandResult tres = run_command("mesh_info", torus);
  CHECK(tres.exit_code == 0);
  CHECK(tres.output.at("chi").get<int>() == 0);
  CHECK(std::abs(tres.output.at("lambda1").get<double>() - 4.0 * kPi * kPi) <=
        0.02 * 4.0 * kPi * kPi);
}

TEST_CASE("seed precedence: config then override") {
  json cfg = sphere_cfg(1);
  cfg["seed"] = 123;
  CommandResult from_cfg = run_command("mesh_info", cfg);
  CHECK(from_cfg.output.at("seed").get<std::uint64_t>() == 123);
  CommandResult overridden = run_command("mesh_info", cfg, 77);
  CHECK(overridden.output.at("seed").get<std::uint64_t>() == 77);
}

TEST_CASE("outputs are byte-identical across repeated runs") {
  json cfg = sphere_cfg(3);
  cfg["asymptotics"] = {{"k", 1}, {"lambda_grid", {10.0, 20.0, 50.0}}};
  CommandResult a = run_command("verify_asymptotics", cfg);
  CommandResult b = run_command("verify_asymptotics", cfg);
  CHECK(a.exit_code == b.exit_code);
  CHECK(a.output.dump() == b.output.dump());

  json mt = sphere_cfg(3);
  mt["mt"] = {{"samples", 40}};
  CommandResult m1 = run_command("mt_suite", mt);
  CommandResult m2 = run_command("mt_suite", mt);
  CHECK(m1.output.dump() == m2.output.dump());
}

TEST_CASE("asymptotics verdicts pass on an adequate mesh") {
  // The verdict tolerances are calibrated for a fine mesh: on coarser
  // spheres either the low-lambda end biases the fitted slope or the
  // high-lambda end inflates the raw moment spread.
  json cfg = sphere_cfg(5);
  cfg["asymptotics"] = {{"k", 1}, {"lambda_grid", {10.0, 20.0, 50.0, 100.0, 200.0}}};
  CommandResult res = run_command("verify_asymptotics", cfg);
  CHECK(res.exit_code == 0);
  const auto& summary = res.output.at("summary");
  for (const char* key : {"mean_slope", "neg_exp_slope", "dirichlet_coeff", "pos_exp_spread"})
    CHECK(summary.contains(key));
  CHECK(summary.at("pass").get<bool>());
  CHECK(res.output.at("rows").size() == 5);
}

TEST_CASE("configuration errors exit with code 2") {
  CommandResult unknown = run_command("frobnicate", sphere_cfg(1));
  CHECK(unknown.exit_code == 2);
  CHECK(unknown.output.contains("error"));

  CommandResult no_mesh = run_command("mesh_info", json::object());
  CHECK(no_mesh.exit_code == 2);

  json bad_type = {{"mesh", {{"type", "klein_bottle"}}}};
  CHECK(run_command("mesh_info", bad_type).exit_code == 2);

  json empty_grid = sphere_cfg(2);
  empty_grid["asymptotics"] = {{"lambda_grid", json::array()}};
  CHECK(run_command("verify_asymptotics", empty_grid).exit_code == 2);

  json no_path = {{"mesh", {{"type", "file"}}}};
  CHECK(run_command("mesh_info", no_path).exit_code == 2);

  json bad_params = sphere_cfg(1);
  bad_params["params"] = {{"rho1", 10.0}, {"rho2", 0.0}, {"t", 2.0}};
  CHECK(run_command("solve", bad_params).exit_code == 2);
}

TEST_CASE("under-resolved sweeps exit with code 3") {
  json cfg = sphere_cfg(2);
  cfg["asymptotics"] = {{"lambda_grid", {10.0, 30.0, 100.0, 300.0}}};
  CommandResult res = run_command("verify_asymptotics", cfg);
  CHECK(res.exit_code == 3);
  CHECK(res.output.at("error").get<std::string>().find("guard") != std::string::npos);
}

TEST_CASE("solve covers the three parameter regimes") {
  json nothing = {{"mesh", {{"type", "torus"}, {"n", 10}, {"m", 10}}}};
  nothing["params"] = {{"rho1", 0.0}, {"rho2", 0.0}};
  CommandResult zero = run_command("solve", nothing);
  CHECK(zero.exit_code == 0);
  CHECK(zero.output.at("converged").get<bool>());
  CHECK(zero.output.at("regime").get<std::string>() == "subcritical");
  CHECK(zero.output.at("method").get<std::string>() == "minimize");
  CHECK(std::abs(zero.output.at("energy").get<double>()) <= 1e-8);
  CHECK(zero.output.at("trivial").get<bool>());

  json boundary = sphere_cfg(2);
  boundary["params"] = {{"rho1", 8.0 * kPi}, {"rho2", 8.0 * kPi}};
  boundary["solve"] = {{"max_descent_iter", 300}};
  CommandResult bres = run_command("solve", boundary);
  CHECK(bres.output.at("regime").get<std::string>() == "boundary");
  CHECK(bres.output.at("out_of_regime_warning").get<bool>());
  CHECK((bres.exit_code == 0 || bres.exit_code == 4));

  json super = {{"mesh", {{"type", "torus"}, {"n", 20}, {"m", 20}}}};
  super["params"] = {{"rho1", 10.0 * kPi}, {"rho2", 0.0}};
  super["solve"] = {{"minmax", {{"sigma_samples", 4}}}};
  CommandResult sres = run_command("solve", super);
  CHECK(sres.exit_code == 0);
  CHECK(sres.output.at("k").get<int>() == 1);
  CHECK(sres.output.at("regime").get<std::string>() == "supercritical");
  CHECK(sres.output.at("method").get<std::string>() == "minmax_newton");
  CHECK(sres.output.at("converged").get<bool>());
  CHECK(sres.output.at("bracket_ok").get<bool>());
  CHECK_FALSE(sres.output.at("trivial").get<bool>());
  CHECK(sres.output.at("residual_norm").get<double>() < 1e-6);
}

TEST_CASE("trudinger suite emits all verdicts and the zero row") {
  // Level 3 is the coarsest mesh whose resolution keeps a three-point
  // bubble grid under the quadrature guard.
  json cfg = sphere_cfg(3);
  cfg["mt"] = {{"samples", 40}};
  const std::string csv_path = "/tmp/mfe_mt_rows.csv";
  cfg["csv_out"] = csv_path;
  std::filesystem::remove(csv_path);

  CommandResult res = run_command("mt_suite", cfg);
  CHECK(res.exit_code == 0);
  const auto& verdicts = res.output.at("verdicts");
  for (const char* key : {"halves_stable", "bubble_offset_bounded", "pos_integral_bounded",
                          "energy_decreasing_beyond_8pi"}) {
    REQUIRE(verdicts.contains(key));
    CHECK(verdicts.at(key).is_boolean());
    CHECK(verdicts.at(key).get<bool>());
  }
  CHECK(res.output.at("zero_row").at("lhs").get<double>() == 0.0);
  CHECK(res.output.at("zero_row").at("constant_input").get<bool>());
  CHECK(std::isfinite(res.output.at("c_mesh").get<double>()));

  REQUIRE(std::filesystem::exists(csv_path));
  std::ifstream csv(csv_path);
  std::string header;
  std::getline(csv, header);
  CHECK(header == "sample,lhs,dirichlet,offset");
}

TEST_CASE("blow-up classification over synthetic families") {
  json one = sphere_cfg(3);
  one["params"] = {{"rho1", 8.0 * kPi}, {"rho2", 0.0}};
  one["blowup"] = {{"kind", "one_sided"},
                   {"vertices", {7}},
                   {"lambda_grid", {40.0, 80.0, 160.0}}};
  CommandResult ores = run_command("blowup", one);
  CHECK(ores.exit_code == 0);
  CHECK(ores.output.at("alternative").get<std::string>() == "one_sided");
  REQUIRE(ores.output.at("points_S1").size() == 1);
  const auto& pt = ores.output.at("points_S1")[0];
  CHECK(std::abs(pt.at("mass").get<double>() - 8.0 * kPi) <= 0.05 * 8.0 * kPi);
  CHECK(ores.output.at("points_S2").empty());
  CHECK(ores.output.at("quantization_residual").empty());
  for (const char* key : {"alternative", "r_mass", "points_S1", "points_S2",
                          "quantization_residual"})
    CHECK(ores.output.contains(key));

  json flat = sphere_cfg(3);
  flat["params"] = {{"rho1", 8.0 * kPi}, {"rho2", 0.0}};
  flat["blowup"] = {{"kind", "bounded"}, {"lambda_grid", {1.0, 2.0, 4.0}}};
  CommandResult bres = run_command("blowup", flat);
  CHECK(bres.exit_code == 0);
  CHECK(bres.output.at("alternative").get<std::string>() == "compactness");
}

TEST_CASE("blow-up families load from disk") {
  SurfaceMesh icosa = SurfaceMesh::unit_sphere(0);
  json family;
  family["params"] = {1.0, 2.0, 3.0};
  json fields = json::array();
  for (int i = 0; i < 3; ++i) fields.push_back(std::vector<double>(12, 0.1 * i));
  family["fields"] = fields;
  const std::string path = "/tmp/mfe_family.json";
  std::ofstream(path) << family.dump();

  json cfg = sphere_cfg(0);
  cfg["params"] = {{"rho1", 8.0 * kPi}, {"rho2", 0.0}};
  cfg["blowup"] = {{"family_file", path}};
  CommandResult res = run_command("blowup", cfg);
  CHECK(res.exit_code == 0);
  CHECK(res.output.at("alternative").get<std::string>() == "compactness");

  cfg["blowup"]["family_file"] = "/tmp/definitely_missing_family.json";
  CHECK(run_command("blowup", cfg).exit_code == 2);
}

TEST_CASE("meshes load from files through the config") {
  SurfaceMesh src = SurfaceMesh::unit_sphere(1);
  const std::string path = "/tmp/mfe_cli_mesh.off";
  std::ofstream out(path);
  out << "OFF\n" << src.vertex_count() << " " << src.face_count() << " 0\n";
  out.precision(17);
  for (const auto& p : src.positions()) out << p.x() << " " << p.y() << " " << p.z() << "\n";
  for (const auto& f : src.faces()) out << "3 " << f[0] << " " << f[1] << " " << f[2] << "\n";
  out.close();

  json cfg = {{"mesh", {{"type", "file"}, {"path", path}}}};
  CommandResult res = run_command("mesh_info", cfg);
  CHECK(res.exit_code == 0);
  CHECK(res.output.at("V").get<int>() == src.vertex_count());
  CHECK(res.output.at("chi").get<int>() == 2);
}

TEST_CASE("command line binary round-trips configs and output files") {
  const std::string bin = find_binary();
  REQUIRE_MESSAGE(!bin.empty(), "mfe binary not found next to the test tree");

  const std::string cfg_path = "/tmp/mfe_cli_cfg.json";
  std::ofstream(cfg_path) << sphere_cfg(1).dump();
  const std::string out_path = "/tmp/mfe_cli_out.json";
  std::filesystem::remove(out_path);

  std::string cmd = bin + " mesh_info --config " + cfg_path + " --out " + out_path +
                    " > /dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  CHECK(rc == 0);
  REQUIRE(std::filesystem::exists(out_path));
  std::ifstream in(out_path);
  json written = json::parse(in);
  CHECK(written.at("chi").get<int>() == 2);
  CHECK(written.at("command").get<std::string>() == "mesh_info");

  // Seed flag overrides the config seed end to end.
  std::string seeded = bin + " mesh_info --config " + cfg_path + " --seed 99 --out " +
                       out_path + " > /dev/null 2>&1";
  CHECK(std::system(seeded.c_str()) == 0);
  std::ifstream in2(out_path);
  CHECK(json::parse(in2).at("seed").get<std::uint64_t>() == 99);

  // A malformed config file is a validation failure.
  const std::string broken = "/tmp/mfe_cli_broken.json";
  std::ofstream(broken) << "{ not json";
  std::string bad = bin + " mesh_info --config " + broken + " > /dev/null 2>&1";
  int bad_rc = std::system(bad.c_str());
  CHECK(WEXITSTATUS(bad_rc) == 2);
}
