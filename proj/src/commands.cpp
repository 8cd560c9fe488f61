#include "mfe/commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "mfe/barycenter.hpp"
#include "mfe/functional.hpp"
#include "mfe/operators.hpp"
#include "mfe/solver.hpp"
#include "mfe/surface.hpp"
#include "mfe/util.hpp"

namespace mfe {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr std::uint64_t kDefaultSeed = 0x6d6665ULL;

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

SurfaceMesh mesh_from_config(const json& config) {
  if (!config.contains("mesh")) throw std::invalid_argument("config needs a \"mesh\" section");
  const json& m = config.at("mesh");
  const std::string type = m.value("type", "");
  if (type == "sphere") return SurfaceMesh::unit_sphere(m.value("subdivision", 3));
  if (type == "torus")
    return SurfaceMesh::flat_torus(m.value("n", 16), m.value("m", 16), m.value("aspect", 1.0));
  if (type == "file") {
    if (!m.contains("path")) throw std::invalid_argument("mesh type \"file\" needs a path");
    return SurfaceMesh::from_file(m.at("path").get<std::string>());
  }
  throw std::invalid_argument("mesh type must be sphere, torus, or file");
}

MfeParams params_from_config(const json& config) {
  MfeParams p;
  if (config.contains("params")) {
    const json& pj = config.at("params");
    p.rho1 = pj.value("rho1", 0.0);
    p.rho2 = pj.value("rho2", 0.0);
    p.t = pj.value("t", 1.0);
  }
  validate_params(p);
  return p;
}

std::vector<double> lambda_grid_from(const json& section, const std::string& key) {
  std::vector<double> grid;
  if (section.contains(key)) {
    for (const auto& v : section.at(key)) grid.push_back(v.get<double>());
    // An explicitly empty grid is a config mistake; only a missing entry
    // falls back to the built-in default.
    if (grid.empty()) throw std::invalid_argument(key + " must not be empty");
  }
  return grid;
}

void maybe_write_csv(const json& config, const std::string& header,
                     const std::vector<std::vector<double>>& rows) {
  if (!config.contains("csv_out")) return;
  std::ofstream out(config.at("csv_out").get<std::string>());
  if (!out) throw std::invalid_argument("cannot open csv_out for writing");
  out << header << "\n";
  out.precision(17);
  for (const auto& row : rows) {
    for (size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
    out << "\n";
  }
}

int exit_for_exception(const std::exception& e, ojson& output) {
  output["error"] = e.what();
  if (dynamic_cast<const ResolutionGuardError*>(&e) != nullptr) return 3;
  return 2;
}

}  // namespace

CommandResult cmd_mesh_info(const json& config, std::uint64_t seed) {
  CommandResult res;
  res.output["command"] = "mesh_info";
  res.output["seed"] = seed;
  try {
    SurfaceMesh mesh = mesh_from_config(config);
    res.output.update(mesh.summary_json());
    DiscreteOperators ops(mesh);
    EigenPairs pairs = ops.low_eigenpairs(2);
    res.output["lambda1"] = pairs.values[1];
  } catch (const std::exception& e) {
    res.exit_code = exit_for_exception(e, res.output);
  }
  return res;
}

CommandResult cmd_verify_asymptotics(const json& config, std::uint64_t seed) {
  CommandResult res;
  res.output["command"] = "verify_asymptotics";
  res.output["seed"] = seed;
  try {
    SurfaceMesh mesh = mesh_from_config(config);
    DiscreteOperators ops(mesh);
    const json section = config.value("asymptotics", json::object());
    const int k = section.value("k", 1);
    std::vector<double> grid = lambda_grid_from(section, "lambda_grid");
    if (grid.empty()) grid = {10.0, 20.0, 50.0, 100.0, 200.0};

    std::vector<int> atoms;
    if (section.contains("atoms"))
      for (const auto& v : section.at("atoms")) atoms.push_back(v.get<int>());
    else
      atoms = mesh.farthest_point_sample(k);
    if (static_cast<int>(atoms.size()) != k)
      throw std::invalid_argument("asymptotics needs exactly k atoms");
    std::vector<BarycenterAtom> sigma_atoms;
    for (int a : atoms) sigma_atoms.push_back({1.0 / k, a});
    BarycenterMeasure sigma(sigma_atoms);

    SlopeOptions sopts;
    sopts.resolution_guard = section.value("resolution_guard", sopts.resolution_guard);
    SlopeReport rep = asymptotic_slopes(ops, sigma, grid, sopts);

    const double slope_tol = section.value("slope_tol", 0.05);
    const double dir_factor = section.value("dirichlet_factor", 1.1);
    const double dir_target = 32.0 * kPi * k;
    const bool mean_ok = std::abs(rep.mean_slope + 2.0) <= slope_tol * 2.0;
    const bool neg_ok = std::abs(rep.neg_exp_slope - 2.0) <= slope_tol * 2.0;
    const bool dir_ok = k == 1 ? (rep.dirichlet_coeff >= 0.8 * dir_target &&
                                  rep.dirichlet_coeff <= dir_factor * dir_target)
                               : rep.dirichlet_coeff <= dir_factor * dir_target;
    const bool spread_ok = rep.pos_exp_spread < section.value("spread_tol", 1.0);

    std::vector<std::vector<double>> csv_rows;
    res.output["rows"] = ojson::array();
    for (const auto& row : rep.rows) {
      ojson r;
      r["lambda"] = row.lambda;
      r["mean_phi"] = row.mean_phi;
      r["log_int_exp_pos"] = row.log_int_exp_pos;
      r["log_int_exp_neg"] = row.log_int_exp_neg;
      r["dirichlet"] = row.dirichlet;
      r["grad_bounds_ok"] = row.grad_bounds_ok;
      res.output["rows"].push_back(r);
      csv_rows.push_back({row.lambda, row.mean_phi, row.log_int_exp_pos, row.log_int_exp_neg,
                          row.dirichlet});
    }
    ojson summary;
    summary["k"] = rep.k;
    summary["mean_slope"] = rep.mean_slope;
    summary["neg_exp_slope"] = rep.neg_exp_slope;
    summary["dirichlet_coeff"] = rep.dirichlet_coeff;
    summary["pos_exp_spread"] = rep.pos_exp_spread;
    summary["mean_ok"] = mean_ok;
    summary["neg_ok"] = neg_ok;
    summary["dirichlet_ok"] = dir_ok;
    summary["spread_ok"] = spread_ok;
    summary["grad_bounds_ok"] = rep.grad_bounds_ok;
    const bool pass = mean_ok && neg_ok && dir_ok && spread_ok && rep.grad_bounds_ok;
    summary["pass"] = pass;
    res.output["summary"] = summary;
    maybe_write_csv(config, "lambda,mean_phi,log_int_exp_pos,log_int_exp_neg,dirichlet",
                    csv_rows);
    res.exit_code = pass ? 0 : 1;
  } catch (const std::exception& e) {
    res.exit_code = exit_for_exception(e, res.output);
  }
  return res;
}

CommandResult cmd_solve(const json& config, std::uint64_t seed) {
  CommandResult res;
  res.output["command"] = "solve";
  res.output["seed"] = seed;
  try {
    SurfaceMesh mesh = mesh_from_config(config);
    DiscreteOperators ops(mesh);
    MfeParams p = params_from_config(config);
    const json section = config.value("solve", json::object());

    SolveOptions opts;
    opts.tol = section.value("tol", opts.tol);
    opts.max_descent_iter = section.value("max_descent_iter", opts.max_descent_iter);
    opts.max_newton_iter = section.value("max_newton_iter", opts.max_newton_iter);

    // Regime selection: both below 8 pi -> minimize; rho1 in a window
    // (8k pi, 8(k+1) pi) with rho2 < 4 pi -> min-max with that k; anything
    // else -> minimize with a warning flag.
    const double k8 = 8.0 * kPi;
    const bool subcritical = p.rho1 < k8 && p.rho2 < k8;
    const int k = static_cast<int>(std::floor(p.rho1 / k8));
    const bool window = k >= 1 && p.rho1 > k * k8 + 1e-12 && p.rho1 < (k + 1) * k8 - 1e-12;
    const bool minmax_regime = window && p.rho2 < 4.0 * kPi;

    SolveReport rep;
    bool warning = false;
    if (subcritical) {
      rep = minimize(ops, p, Field::Zero(mesh.vertex_count()), opts);
    } else if (minmax_regime) {
      MinMaxConfig mcfg;
      mcfg.k = k;
      mcfg.seed = seed;
      mcfg.inner = opts;
      if (section.contains("minmax")) {
        const json& mj = section.at("minmax");
        mcfg.sigma_samples = mj.value("sigma_samples", mcfg.sigma_samples);
        mcfg.cone_s_steps = mj.value("cone_s_steps", mcfg.cone_s_steps);
        mcfg.t0 = mj.value("t0", mcfg.t0);
        mcfg.lambda_bar = mj.value("lambda_bar", mcfg.lambda_bar);
        mcfg.level_L = mj.value("level_L", mcfg.level_L);
        mcfg.max_seed_attempts = mj.value("max_seed_attempts", mcfg.max_seed_attempts);
      }
      rep = minmax_solve(ops, p, mcfg);
      res.output["k"] = k;
    } else {
      warning = true;
      rep = minimize(ops, p, Field::Zero(mesh.vertex_count()), opts);
    }

    res.output["rho1"] = p.rho1;
    res.output["rho2"] = p.rho2;
    res.output["t"] = p.t;
    res.output["regime"] = rep.regime;
    res.output["method"] = rep.method;
    res.output["out_of_regime_warning"] = warning;
    res.output["converged"] = rep.converged;
    res.output["trivial"] = rep.trivial_flag;
    res.output["energy"] = rep.energy;
    res.output["residual_norm"] = rep.residual_norm;
    res.output["iterations"] = rep.iterations;
    res.output["rho2_below_4pi"] = rep.rho2_below_4pi;
    res.output["rho2_below_8pi"] = rep.rho2_below_8pi;
    if (rep.method != "minimize") {
      res.output["minmax_level"] = rep.minmax_level;
      res.output["level_L"] = rep.level_L;
      res.output["lambda_bar"] = rep.lambda_bar;
      res.output["cone_boundary_max"] = rep.cone_boundary_max;
      res.output["bracket_ok"] = rep.bracket_ok;
      res.output["level_reduced"] = rep.level_reduced;
    }
    res.output["u_min"] = rep.u.size() ? rep.u.minCoeff() : 0.0;
    res.output["u_max"] = rep.u.size() ? rep.u.maxCoeff() : 0.0;

    std::vector<std::vector<double>> csv_rows;
    for (const auto& row : rep.iterates)
      csv_rows.push_back({static_cast<double>(row.iteration), row.energy, row.residual_norm});
    maybe_write_csv(config, "iteration,energy,residual_norm", csv_rows);
    res.exit_code = rep.converged ? 0 : 4;
  } catch (const std::exception& e) {
    res.exit_code = exit_for_exception(e, res.output);
  }
  return res;
}

CommandResult cmd_mt_suite(const json& config, std::uint64_t seed) {
  CommandResult res;
  res.output["command"] = "mt_suite";
  res.output["seed"] = seed;
  try {
    SurfaceMesh mesh = mesh_from_config(config);
    DiscreteOperators ops(mesh);
    const json section = config.value("mt", json::object());
    const int samples = section.value("samples", 1000);
    const double amplitude = section.value("amplitude", 0.2);
    const int modes = section.value("modes", 12);
    if (samples < 2) throw std::invalid_argument("mt suite needs at least 2 samples");

    EigenPairs basis = ops.low_eigenpairs(std::min(modes + 1, mesh.vertex_count() - 1));
    Rng rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    std::vector<double> offsets;
    std::vector<std::vector<double>> csv_rows;
    for (int i = 0; i < samples; ++i) {
      Field u = Field::Zero(mesh.vertex_count());
      for (int j = 1; j < basis.vectors.cols(); ++j) u += gauss(rng) * basis.vectors.col(j);
      const double sup = (u.array() - ops.mean_value(u)).abs().maxCoeff();
      if (sup > 0.0) u *= amplitude / sup;
      MtReport mt = mt_check(ops, u);
      offsets.push_back(mt.offset);
      csv_rows.push_back({static_cast<double>(i), mt.lhs, mt.dirichlet, mt.offset});
    }
    const double c_mesh = *std::max_element(offsets.begin(), offsets.end());
    const int half = samples / 2;
    const double c1 = *std::max_element(offsets.begin(), offsets.begin() + half);
    const double c2 = *std::max_element(offsets.begin() + half, offsets.end());
    const bool stable = std::abs(c1 - c2) <= 0.1 * std::max({1.0, std::abs(c1), std::abs(c2)});

    MtReport zero_row = mt_check(ops, Field::Zero(mesh.vertex_count()));

    // Bubble sweep: boundedness of the positive exponential integral and
    // strict energy decrease beyond the 8 pi threshold.
    const json bubble = section.value("bubble", json::object());
    std::vector<double> grid = lambda_grid_from(bubble, "lambda_grid");
    if (grid.empty()) grid = {10.0, 20.0, 50.0, 100.0, 200.0};
    std::sort(grid.begin(), grid.end());
    // The exponential integral needs the bubble core spread over a few
    // cells, a stricter cap than the pointwise resolution guard.
    const double guard = 3.0 / mesh.mean_edge_length();
    while (!grid.empty() && grid.back() > guard) grid.pop_back();
    if (grid.size() < 3) throw std::invalid_argument("bubble grid too short under the guard");
    const int vertex = bubble.value("vertex", 0);
    const double rho1_sweep = bubble.value("rho1", 10.0 * kPi);

    std::vector<double> bubble_offsets, bubble_energies, log_pos;
    for (double lambda : grid) {
      Field phi = test_function(mesh, BarycenterMeasure::single(vertex), lambda);
      MtReport mt = mt_check(ops, phi);
      bubble_offsets.push_back(mt.offset);
      // Raw positive integral: the centered moment mt.lhs grows with the
      // concentration scale by design, so it is not the bounded quantity.
      log_pos.push_back(ops.log_int_exp(phi));
      bubble_energies.push_back(energy(ops, {rho1_sweep, 0.0, 1.0}, phi));
    }
    const double spread =
        *std::max_element(log_pos.begin(), log_pos.end()) -
        *std::min_element(log_pos.begin(), log_pos.end());
    bool decreasing = true;
    for (size_t i = 1; i < bubble_energies.size(); ++i)
      if (bubble_energies[i] >= bubble_energies[i - 1]) decreasing = false;
    const double bubble_offset_max =
        *std::max_element(bubble_offsets.begin(), bubble_offsets.end());
    // The deficiency climbs toward its sharp limit along a concentrating
    // family, so the meaningful check is an O(1) upper bound, not decrease.
    const bool bubble_bounded = bubble_offset_max <= std::max(c_mesh, 0.0) + 1.5;

    res.output["samples"] = samples;
    res.output["amplitude"] = amplitude;
    res.output["c_mesh"] = c_mesh;
    res.output["c_half_1"] = c1;
    res.output["c_half_2"] = c2;
    ojson zr;
    zr["lhs"] = zero_row.lhs;
    zr["dirichlet"] = zero_row.dirichlet;
    zr["offset"] = zero_row.offset;
    zr["constant_input"] = zero_row.constant_input;
    res.output["zero_row"] = zr;
    res.output["bubble_lambda_grid"] = grid;
    res.output["bubble_rho1"] = rho1_sweep;
    res.output["bubble_offset_max"] = bubble_offset_max;
    res.output["bubble_pos_spread"] = spread;
    ojson verdicts;
    verdicts["halves_stable"] = stable;
    verdicts["bubble_offset_bounded"] = bubble_bounded;
    verdicts["pos_integral_bounded"] = spread < 1.0;
    verdicts["energy_decreasing_beyond_8pi"] = decreasing;
    res.output["verdicts"] = verdicts;
    maybe_write_csv(config, "sample,lhs,dirichlet,offset", csv_rows);
    const bool pass = stable && bubble_bounded && spread < 1.0 && decreasing;
    res.exit_code = pass ? 0 : 1;
  } catch (const std::exception& e) {
    res.exit_code = exit_for_exception(e, res.output);
  }
  return res;
}

CommandResult cmd_blowup(const json& config, std::uint64_t seed) {
  CommandResult res;
  res.output["command"] = "blowup";
  res.output["seed"] = seed;
  try {
    SurfaceMesh mesh = mesh_from_config(config);
    DiscreteOperators ops(mesh);
    MfeParams p = params_from_config(config);
    const json section = config.value("blowup", json::object());

    std::vector<Field> family;
    std::vector<double> fam_params;
    if (section.contains("family_file")) {
      std::ifstream in(section.at("family_file").get<std::string>());
      if (!in) throw std::invalid_argument("cannot open family_file");
      json data = json::parse(in);
      for (const auto& v : data.at("params")) fam_params.push_back(v.get<double>());
      for (const auto& row : data.at("fields")) {
        Field u(static_cast<int>(row.size()));
        int i = 0;
        for (const auto& v : row) u[i++] = v.get<double>();
        family.push_back(normalize_exp(ops, u));
      }
    } else {
      const std::string kind = section.value("kind", "one_sided");
      std::vector<int> vertices;
      if (section.contains("vertices"))
        for (const auto& v : section.at("vertices")) vertices.push_back(v.get<int>());
      else
        vertices = mesh.farthest_point_sample(2);
      fam_params = lambda_grid_from(section, "lambda_grid");
      if (fam_params.empty()) fam_params = {25.0, 50.0, 100.0, 200.0};
      family = synthetic_family(ops, kind, vertices, fam_params, seed);
      res.output["kind"] = kind;
    }

    ClassifyOptions copts;
    copts.peak_sigmas = section.value("peak_sigmas", copts.peak_sigmas);
    copts.r_mass_factor = section.value("r_mass_factor", copts.r_mass_factor);
    copts.mass_floor = section.value("mass_floor", copts.mass_floor);
    ConcentrationReport rep = classify_concentration(ops, p, family, fam_params, copts);

    res.output["alternative"] = rep.alternative;
    res.output["r_mass"] = rep.r_mass;
    auto points_json = [](const std::vector<ConcentrationPoint>& pts) {
      ojson arr = ojson::array();
      for (const auto& pt : pts) {
        ojson row;
        row["vertex"] = pt.vertex;
        row["mass"] = pt.mass;
        row["mass_last"] = pt.mass_last;
        row["eight_pi_deviation"] = pt.eight_pi_deviation;
        arr.push_back(row);
      }
      return arr;
    };
    res.output["points_S1"] = points_json(rep.points_pos);
    res.output["points_S2"] = points_json(rep.points_neg);
    ojson rows = ojson::array();
    for (const auto& q : rep.quantization) {
      ojson row;
      row["vertex_pos"] = q.vertex_pos;
      row["vertex_neg"] = q.vertex_neg;
      row["m1"] = q.m1;
      row["m2"] = q.m2;
      row["residual"] = q.residual;
      rows.push_back(row);
    }
    res.output["quantization_residual"] = rows;
  } catch (const std::exception& e) {
    res.exit_code = exit_for_exception(e, res.output);
  }
  return res;
}

CommandResult run_command(const std::string& name, const json& config,
                          std::optional<std::uint64_t> seed_override) {
  std::uint64_t seed = kDefaultSeed;
  if (config.contains("seed")) seed = config.at("seed").get<std::uint64_t>();
  if (seed_override) seed = *seed_override;

  if (name == "mesh_info") return cmd_mesh_info(config, seed);
  if (name == "verify_asymptotics") return cmd_verify_asymptotics(config, seed);
  if (name == "solve") return cmd_solve(config, seed);
  if (name == "mt_suite") return cmd_mt_suite(config, seed);
  if (name == "blowup") return cmd_blowup(config, seed);
  CommandResult res;
  res.exit_code = 2;
  res.output["error"] = "unknown command: " + name;
  return res;
}

}  // namespace mfe
