#pragma once

#include <memory>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "mfe/surface.hpp"
#include "mfe/util.hpp"

namespace mfe {

// Lowest generalized eigenpairs of (stiffness, mass): values ascending
// starting at 0 (constants), columns mass-orthonormal.
struct EigenPairs {
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;
};

// Cotangent stiffness and lumped (barycentric) mass on a SurfaceMesh.
// The stiffness is assembled intrinsically from face side lengths, so the
// same code path serves embedded meshes and the flat torus. Row sums vanish
// to rounding, the matrix is exactly symmetric, and each element block is
// the Dirichlet form of a flat triangle (hence PSD).
//
// The Poisson solve works on the mean-zero complement by deflation: the
// right-hand side is projected, the solution is shifted to mass mean zero.
// For fewer than 20000 vertices a sparse Cholesky of the one-vertex-pinned
// system is prepared eagerly (pinning is exact for compatible data); larger
// meshes use Jacobi-preconditioned CG at rtol 1e-10.
class DiscreteOperators {
 public:
  explicit DiscreteOperators(const SurfaceMesh& mesh);
  DiscreteOperators(const DiscreteOperators&) = delete;
  DiscreteOperators& operator=(const DiscreteOperators&) = delete;

  const SurfaceMesh& mesh() const { return *mesh_; }
  const Eigen::SparseMatrix<double>& stiffness() const { return stiffness_; }
  const Eigen::VectorXd& mass() const { return mass_; }

  double mean_value(const Field& u) const;       // mass-weighted mean
  double dirichlet_energy(const Field& u) const; // u' K u
  double mass_norm(const Field& u) const;        // sqrt(u' M u)
  // log of the mass-weighted integral of e^u, max-shifted.
  double log_int_exp(const Field& u) const;

  // Solves -Lap u = f weakly: K u = M f, result mass-mean-zero. Requires
  // |mean f| <= 1e-10. Residual contract ||K u - M f|| <= rtol ||M f||.
  Field solve_poisson(const Field& f, double rtol = 1e-10) const;

  // Green column at a source vertex: K g = e_source - m, mean-zero shift.
  Field green_column(int source) const;

  EigenPairs low_eigenpairs(int count) const;

  // P1 gradient magnitude of u on face f (intrinsic reconstruction).
  double face_gradient_norm(const Field& u, int f) const;

  // Element stiffness of face f; assembly is the sum of these blocks.
  Eigen::Matrix3d face_stiffness(int f) const;

 private:
  Field solve_stiffness(const Eigen::VectorXd& b, double rtol) const;

  const SurfaceMesh* mesh_;
  Eigen::SparseMatrix<double> stiffness_;
  Eigen::VectorXd mass_;
  std::unique_ptr<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>> pinned_;  // V < 20000
};

}  // namespace mfe
