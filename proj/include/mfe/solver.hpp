#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mfe/barycenter.hpp"
#include "mfe/functional.hpp"
#include "mfe/operators.hpp"

namespace mfe {

struct SolveOptions {
  double tol = 1e-8;          // mass-norm residual target
  int max_descent_iter = 4000;
  int max_newton_iter = 80;
  double newton_switch = 1e-3;  // residual level where minimize tries Newton
  double step_cap = 20.0;       // sup-norm cap on Newton steps
  bool record_iterates = true;
};

struct IterateRow {
  int iteration = 0;
  double energy = 0.0;
  double residual_norm = 0.0;
};

struct SolveReport {
  Field u;                    // normalized representative (mass mean zero)
  double energy = 0.0;
  double residual_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  bool trivial_flag = false;  // sup |u - mean| < 1e-6
  std::string regime;         // subcritical | boundary | supercritical
  std::string method;         // minimize | minmax_newton | t_continuation
  double t = 1.0;
  // min-max diagnostics (zero/false for plain minimization)
  double minmax_level = 0.0;
  double level_L = 0.0;
  double lambda_bar = 0.0;
  double cone_boundary_max = 0.0;
  bool bracket_ok = false;
  bool level_reduced = false;      // calibration had to shrink L under the resolution guard
  bool rho2_below_4pi = false;
  bool rho2_below_8pi = false;
  std::vector<IterateRow> iterates;
};

// Energy minimization: mass-preconditioned gradient descent with Armijo
// backtracking, plus a Newton polish accepted only when it lowers both the
// energy and the residual. The recorded energy trace is non-increasing.
// Hitting the iteration cap reports converged = false (no throw).
SolveReport minimize(const DiscreteOperators& ops, const MfeParams& params, const Field& u0,
                     const SolveOptions& opts = {});

// Point on the min-max cone: s * phi_{sigma, lambda_bar}. s = 0 gives the
// zero field exactly.
Field cone_point(const SurfaceMesh& mesh, const BarycenterMeasure& sigma, double lambda_bar,
                 double s);

struct MinMaxConfig {
  int k = 1;                 // expected concentration number, rho1 in (8k pi, 8(k+1) pi)
  double lambda_bar = 0.0;   // 0 = calibrate
  double level_L = 0.0;      // 0 = calibrate
  int sigma_samples = 6;     // farthest-point atom sites
  int max_sigma_candidates = 60;
  int weight_divisions = 2;  // barycentric weight grid per atom set
  int cone_s_steps = 16;
  double t0 = 0.1;           // half-width of the t window
  std::uint64_t seed = 0x6d666573631ULL;
  int max_seed_attempts = 3;
  bool allow_regime_override = false;
  SolveOptions inner;
};

// Finite sample of the min-max cone with its calibration data.
struct ConeSample {
  std::vector<BarycenterMeasure> sigmas;
  std::vector<Field> phis;          // test functions at lambda_bar
  std::vector<double> s_grid;       // includes 0 and 1
  double lambda_bar = 0.0;
  double level_L = 0.0;
  bool level_reduced = false;
  double median_abs_energy = 0.0;   // of the calibration ensemble
  double boundary_max = 0.0;        // max over sigma of E_t(phi) at t = 1 -+ t0
  // Saddle-search seed pool: bubbles across the whole scale ladder, not just
  // lambda_bar (the class level and bracket always use lambda_bar).
  std::vector<Field> seed_directions;
  std::vector<int> seed_sigma;
  std::vector<double> seed_lambda;
};

ConeSample build_cone(const DiscreteOperators& ops, const MfeParams& params,
                      const MinMaxConfig& cfg);

// max over the cone sample of the t-scaled energy; the sample is fixed, so
// t -> alpha_hat(t)/t inherits monotonicity from each member.
double cone_level(const DiscreteOperators& ops, const MfeParams& params, const ConeSample& cone,
                  double t);

// Saddle search for rho1 in (8k pi, 8(k+1) pi), rho2 < 4 pi: seeds damped
// Newton from the highest cone points, retries on trivial results, then
// falls back to continuation in t. Never throws on non-convergence.
SolveReport minmax_solve(const DiscreteOperators& ops, const MfeParams& params,
                         const MinMaxConfig& cfg = {});

struct ContinuationStep {
  double t = 0.0;
  SolveReport report;
  double alpha_over_t = 0.0;  // cone_level(t) / t
  bool bisected = false;
};

// Damped-Newton continuation along a t grid ending at 1, warm-starting each
// step and bisecting once on failure.
std::vector<ContinuationStep> continue_in_t(const DiscreteOperators& ops, const MfeParams& params,
                                            const MinMaxConfig& cfg, std::vector<double> t_grid);

// |(E_t(u)/t - E_s(u)/s) - (1/t - 1/s) * D(u)/2|; identically zero in exact
// arithmetic for fixed u.
double energy_identity_residual(const DiscreteOperators& ops, const MfeParams& params,
                                const Field& u, double t_a, double t_b);

struct ClassifyOptions {
  double peak_sigmas = 3.0;       // deviation threshold above the mean
  double r_mass_factor = 10.0;    // mass radius in mean edge lengths
  double mass_floor = 2.0 * 3.14159265358979323846;
  int growth_window = 3;          // members that must show growth
  double growth_min_total = 0.5;  // required peak increase across the window
};

struct ConcentrationPoint {
  int vertex = -1;
  double mass = 0.0;       // extrapolated local mass
  double mass_last = 0.0;  // on the last family member
  double eight_pi_deviation = 0.0;  // mass - 8 pi (one-sided test)
};

struct QuantizationRow {
  int vertex_pos = -1;
  int vertex_neg = -1;
  double m1 = 0.0;
  double m2 = 0.0;
  double residual = 0.0;  // (m1 - m2)^2 - 8 pi (m1 + m2)
};

struct ConcentrationReport {
  std::string alternative;  // compactness | one_sided | two_sided
  std::vector<ConcentrationPoint> points_pos, points_neg;
  std::vector<QuantizationRow> quantization;
  double r_mass = 0.0;
};

// Classifies a family of fields indexed by a growth parameter (ascending):
// detects concentration of e^u and e^-u separately via peak height, growth
// across the trailing members, and a local-mass floor; reports extrapolated
// masses and quantization residuals for paired two-sided points.
ConcentrationReport classify_concentration(const DiscreteOperators& ops, const MfeParams& params,
                                           const std::vector<Field>& family,
                                           const std::vector<double>& family_params,
                                           const ClassifyOptions& opts = {});

// Synthetic blow-up families on a mesh: "one_sided" (single bubble),
// "two_sided" (bubble minus bubble at distinct sites), "bounded" (fixed
// random smooth field repeated). Fields are normalized.
std::vector<Field> synthetic_family(const DiscreteOperators& ops, const std::string& kind,
                                    const std::vector<int>& vertices,
                                    const std::vector<double>& lambdas, std::uint64_t seed);

}  // namespace mfe
