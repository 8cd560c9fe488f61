#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mfe/operators.hpp"
#include "mfe/transport.hpp"

namespace mfe {

struct BarycenterAtom {
  double weight = 0.0;
  int vertex = -1;
};

// Finitely supported probability measure on mesh vertices. Construction
// merges duplicate vertices, drops zero weights, sorts by vertex, and
// requires nonnegative weights summing to 1 within 1e-12.
class BarycenterMeasure {
 public:
  explicit BarycenterMeasure(std::vector<BarycenterAtom> atoms);
  static BarycenterMeasure single(int vertex);
  // Rescales weights to unit total before validating.
  static BarycenterMeasure normalized(std::vector<BarycenterAtom> atoms);

  const std::vector<BarycenterAtom>& atoms() const { return atoms_; }
  int size() const { return static_cast<int>(atoms_.size()); }

 private:
  std::vector<BarycenterAtom> atoms_;
};

// <sigma, phi> = sum_i t_i phi(x_i)
double pair_with(const BarycenterMeasure& sigma, const Field& phi);

// Bubble profile anchored on sigma:
//   phi(y) = log sum_i t_i (lambda / (1 + lambda^2 d_i(y)^2))^2 - log pi,
// d_i = geodesic distance to atom i. Requires lambda >= 1. At an atom of a
// single-atom sigma the value is exactly 2 log lambda - log pi.
Field test_function(const SurfaceMesh& mesh, const BarycenterMeasure& sigma, double lambda);

// Greedy projection onto k-atom measures: repeatedly grab the vertex whose
// geodesic ball of radius r_cluster captures the most remaining mass of f
// (ties to the lowest index), then remove that ball. Weights are the
// captured masses, renormalized. r_cluster <= 0 selects 5% of the diameter.
BarycenterMeasure project_to_barycenters(const SurfaceMesh& mesh, const Field& f, int k,
                                         double r_cluster = 0.0);

// Bracketed distance from a density to the k-atom measures.
//  upper: min over candidate measures of W1(f, sigma); candidates are built
//    from local maxima of f and the projection output, with free-weight
//    (nearest-assignment) optima over candidate atom subsets plus the
//    projection measure itself.
//  lower: best C1-normalized dictionary test function evaluated against the
//    argmin measure; each element is additionally rescaled by its
//    vertex-to-atom Lipschitz ratio so lower <= upper holds structurally.
struct DistReport {
  double lower = 0.0;
  double upper = 0.0;
  std::optional<BarycenterMeasure> argmin;
  std::string transport_method;  // transport path used for the winner
  bool exact_transport = true;
};

struct DistOptions {
  const EigenPairs* dictionary_basis = nullptr;  // reuse a precomputed basis
  int eigen_dictionary = 30;
  int exact_vertex_limit = 2000;      // SSP below, Sinkhorn above
  double sinkhorn_eps_factor = 0.01;  // times diameter
  int sinkhorn_iters = 500;
  int max_candidate_atoms = 14;
  int max_sigma_candidates = 256;
};

DistReport dist_to_barycenters(const DiscreteOperators& ops, const Field& f, int k,
                               const DistOptions& opts = {});

// Raised when a bubble sweep is attempted beyond the mesh resolution
// (lambda_max * mean_edge > guard).
struct ResolutionGuardError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct SlopeRow {
  double lambda = 0.0;
  double mean_phi = 0.0;
  double log_int_exp_pos = 0.0;
  double log_int_exp_neg = 0.0;
  double dirichlet = 0.0;
  bool grad_bounds_ok = true;
  double max_grad_over_lambda = 0.0;  // max |grad phi| / lambda over faces
  double max_grad_times_dmin = 0.0;   // max |grad phi| * d_min over faces
};

struct SlopeReport {
  std::vector<SlopeRow> rows;
  double mean_slope = 0.0;      // d(mean phi)/d(log lambda), expect -2
  double neg_exp_slope = 0.0;   // d(log int e^-phi)/d(log lambda), expect +2
  double dirichlet_coeff = 0.0; // d(dirichlet)/d(log lambda), expect ~32 k pi
  double pos_exp_spread = 0.0;  // max - min of log int e^phi
  bool grad_bounds_ok = true;
  int k = 0;
};

struct SlopeOptions {
  double resolution_guard = 10.0;  // refuse when lambda_max * mean_edge exceeds this
  double mesh_tol = 0.25;          // slack on the pointwise gradient bounds
  double c_pointwise = 2.0;        // |grad phi| <= c * lambda
};

// Sweeps the bubble over an ascending lambda grid spanning at least one
// decade and fits the asymptotic slopes.
SlopeReport asymptotic_slopes(const DiscreteOperators& ops, const BarycenterMeasure& sigma,
                              const std::vector<double>& lambda_grid, const SlopeOptions& opts = {});

}  // namespace mfe
