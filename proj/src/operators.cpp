#include "mfe/operators.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace mfe {

namespace {
constexpr int kDirectSolveLimit = 20000;
}

Eigen::Matrix3d DiscreteOperators::face_stiffness(int f) const {
  const auto len = mesh_->face_side_lengths(f);
  const double area = mesh_->face_areas()[f];
  Eigen::Matrix3d ke = Eigen::Matrix3d::Zero();
  for (int c = 0; c < 3; ++c) {
    // Cotangent of the angle at corner c (opposite side len[c]).
    const double a = len[c], b = len[(c + 1) % 3], d = len[(c + 2) % 3];
    const double w = (b * b + d * d - a * a) / (8.0 * area);  // cot/2
    const int i = (c + 1) % 3, j = (c + 2) % 3;
    ke(i, i) += w;
    ke(j, j) += w;
    ke(i, j) -= w;
    ke(j, i) -= w;
  }
  return ke;
}

DiscreteOperators::DiscreteOperators(const SurfaceMesh& mesh) : mesh_(&mesh) {
  const int nv = mesh.vertex_count();
  const int nf = mesh.face_count();

  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(nf) * 12);
  for (int f = 0; f < nf; ++f) {
    const auto& tri = mesh.faces()[f];
    const Eigen::Matrix3d ke = face_stiffness(f);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) triplets.emplace_back(tri[r], tri[c], ke(r, c));
  }
  stiffness_.resize(nv, nv);
  stiffness_.setFromTriplets(triplets.begin(), triplets.end());
  stiffness_.makeCompressed();

  mass_ = mesh.vertex_areas();

  if (nv < kDirectSolveLimit) {
    // Pin vertex 0: for compatible right-hand sides the reduced SPD solve
    // reproduces the full singular system exactly.
    Eigen::SparseMatrix<double> reduced = stiffness_.block(1, 1, nv - 1, nv - 1);
    pinned_ = std::make_unique<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>>();
    pinned_->compute(reduced);
    if (pinned_->info() != Eigen::Success)
      throw std::runtime_error("operators: factorization of the pinned stiffness failed");
  }
}

double DiscreteOperators::mean_value(const Field& u) const { return mass_.dot(u); }

double DiscreteOperators::dirichlet_energy(const Field& u) const { return u.dot(stiffness_ * u); }

double DiscreteOperators::mass_norm(const Field& u) const {
  return std::sqrt(u.dot(mass_.cwiseProduct(u)));
}

double DiscreteOperators::log_int_exp(const Field& u) const { return log_sum_exp(u, mass_); }

Field DiscreteOperators::solve_stiffness(const Eigen::VectorXd& b, double rtol) const {
  const int nv = mesh_->vertex_count();
  const double bnorm = b.norm();
  if (bnorm == 0.0) return Field::Zero(nv);

  Field u = Field::Zero(nv);
  if (pinned_) {
    u.tail(nv - 1) = pinned_->solve(b.tail(nv - 1));
    // One step of iterative refinement tightens the tail of the factorization.
    Eigen::VectorXd r = b - stiffness_ * u;
    if (r.norm() > rtol * bnorm) {
      Field du = Field::Zero(nv);
      du.tail(nv - 1) = pinned_->solve(r.tail(nv - 1));
      u += du;
    }
  } else {
    // Deflated Jacobi-PCG on the consistent singular system.
    Eigen::VectorXd diag = stiffness_.diagonal().cwiseMax(1e-300);
    Eigen::VectorXd x = Field::Zero(nv);
    Eigen::VectorXd r = b;
    auto deflate = [nv](Eigen::VectorXd& v) { v.array() -= v.sum() / nv; };
    deflate(r);
    Eigen::VectorXd z = r.cwiseQuotient(diag);
    Eigen::VectorXd p = z;
    double rz = r.dot(z);
    const int max_iter = 20 * nv;
    for (int it = 0; it < max_iter && r.norm() > rtol * bnorm; ++it) {
      Eigen::VectorXd kp = stiffness_ * p;
      const double alpha = rz / p.dot(kp);
      x += alpha * p;
      r -= alpha * kp;
      if (it % 50 == 49) {
        r = b - stiffness_ * x;
        deflate(r);
      }
      z = r.cwiseQuotient(diag);
      const double rz_new = r.dot(z);
      p = z + (rz_new / rz) * p;
      rz = rz_new;
    }
    u = x;
  }

  if ((b - stiffness_ * u).norm() > rtol * bnorm)
    throw std::runtime_error("operators: linear solve missed its residual tolerance");
  return u;
}

Field DiscreteOperators::solve_poisson(const Field& f, double rtol) const {
  const int nv = mesh_->vertex_count();
  if (f.size() != nv) throw std::invalid_argument("solve_poisson: field size mismatch");
  if (!f.allFinite()) throw std::invalid_argument("solve_poisson: non-finite data");
  if (std::abs(mean_value(f)) > 1e-10)
    throw std::invalid_argument("solve_poisson: data must have mass mean zero within 1e-10");

  Eigen::VectorXd b = mass_.cwiseProduct(f);
  b.array() -= b.sum() / nv;  // deflate compatibility dust
  Field u = solve_stiffness(b, rtol);
  u.array() -= mean_value(u);
  return u;
}

Field DiscreteOperators::green_column(int source) const {
  const int nv = mesh_->vertex_count();
  if (source < 0 || source >= nv) throw std::invalid_argument("green_column: source out of range");
  Eigen::VectorXd b = -mass_;
  b[source] += 1.0;
  b.array() -= b.sum() / nv;
  Field g = solve_stiffness(b, 1e-10);
  g.array() -= mean_value(g);
  return g;
}

EigenPairs DiscreteOperators::low_eigenpairs(int count) const {
  const int nv = mesh_->vertex_count();
  if (count < 1 || count > nv) throw std::invalid_argument("low_eigenpairs: bad count");

  // Shift-inverted subspace iteration on the (K, M) pencil.
  const double sigma = 1.0;
  Eigen::SparseMatrix<double> shifted = stiffness_;
  for (int i = 0; i < nv; ++i) shifted.coeffRef(i, i) += sigma * mass_[i];
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(shifted);
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("low_eigenpairs: factorization failed");

  const int block = std::min(nv, count + std::max(8, count / 2));
  Rng rng(0x6d66655f65696730ULL);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  Eigen::MatrixXd x(nv, block);
  for (int j = 0; j < block; ++j)
    for (int i = 0; i < nv; ++i) x(i, j) = unit(rng);
  x.col(0).setOnes();  // seed the kernel direction

  auto m_orthonormalize = [&](Eigen::MatrixXd& y) {
    Eigen::MatrixXd g = y.transpose() * mass_.asDiagonal() * y;
    Eigen::LLT<Eigen::MatrixXd> llt(g);
    if (llt.info() != Eigen::Success) {
      // Rare loss of rank: re-randomize the offending block.
      for (int j = 0; j < y.cols(); ++j)
        for (int i = 0; i < y.rows(); ++i) y(i, j) += 1e-8 * unit(rng);
      g = y.transpose() * mass_.asDiagonal() * y;
      llt.compute(g);
      if (llt.info() != Eigen::Success)
        throw std::runtime_error("low_eigenpairs: orthonormalization failed");
    }
    Eigen::MatrixXd solved = llt.matrixU().solve<Eigen::OnTheRight>(y);
    y = std::move(solved);
  };

  Eigen::VectorXd values(block);
  const int max_iter = 400;
  const double tol = 1e-9;
  for (int it = 0; it < max_iter; ++it) {
    Eigen::MatrixXd y = solver.solve(mass_.asDiagonal() * x);
    m_orthonormalize(y);
    Eigen::MatrixXd a = y.transpose() * (stiffness_ * y);
    a = 0.5 * (a + a.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ritz(a);
    x = y * ritz.eigenvectors();
    values = ritz.eigenvalues();

    bool done = true;
    for (int j = 0; j < count; ++j) {
      Eigen::VectorXd res = stiffness_ * x.col(j) - values[j] * mass_.cwiseProduct(x.col(j));
      if (res.norm() > tol * (1.0 + std::abs(values[j]))) {
        done = false;
        break;
      }
    }
    if (done) break;
  }

  EigenPairs out;
  out.values = values.head(count);
  out.vectors = x.leftCols(count);
  if (std::abs(out.values[0]) < 1e-7) out.values[0] = std::max(out.values[0], 0.0);
  // Deterministic sign convention.
  for (int j = 0; j < count; ++j) {
    int imax = 0;
    out.vectors.col(j).cwiseAbs().maxCoeff(&imax);
    if (out.vectors(imax, j) < 0) out.vectors.col(j) = -out.vectors.col(j);
  }
  return out;
}

double DiscreteOperators::face_gradient_norm(const Field& u, int f) const {
  const auto& tri = mesh_->faces()[f];
  const auto len = mesh_->face_side_lengths(f);
  // Local frame: v0 at origin, v1 on the x-axis.
  const double l0 = len[0], l1 = len[1], l2 = len[2];
  const double x2 = (l2 * l2 + l1 * l1 - l0 * l0) / (2.0 * l2);
  const double y2 = std::sqrt(std::max(0.0, l1 * l1 - x2 * x2));
  const double du1 = u[tri[1]] - u[tri[0]];
  const double du2 = u[tri[2]] - u[tri[0]];
  const double gx = du1 / l2;
  const double gy = (du2 - x2 * gx) / y2;
  return std::hypot(gx, gy);
}

}  // namespace mfe
