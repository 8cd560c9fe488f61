#include "mfe/functional.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mfe {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double k16Pi = 16.0 * kPi;
}  // namespace

void validate_params(const MfeParams& p) {
  if (!std::isfinite(p.rho1) || !std::isfinite(p.rho2))
    throw std::invalid_argument("params: rho must be finite");
  if (p.rho1 < 0.0 || p.rho2 < 0.0)
    throw std::invalid_argument("params: rho must be nonnegative");
  if (!(p.t >= 0.8 && p.t <= 1.2))
    throw std::invalid_argument("params: t must lie in [0.8, 1.2]");
}

double energy(const DiscreteOperators& ops, const MfeParams& p, const Field& u) {
  validate_params(p);
  if (!u.allFinite()) throw std::invalid_argument("energy: non-finite field");
  const double ubar = ops.mean_value(u);
  const Field centered = u.array() - ubar;
  const double lse_pos = ops.log_int_exp(centered);
  const double lse_neg = ops.log_int_exp(-centered);
  return 0.5 * ops.dirichlet_energy(u) - p.t * p.rho1 * lse_pos - p.t * p.rho2 * lse_neg;
}

Field residual(const DiscreteOperators& ops, const MfeParams& p, const Field& u) {
  validate_params(p);
  if (!u.allFinite()) throw std::invalid_argument("residual: non-finite field");
  const double ubar = ops.mean_value(u);
  const Field centered = u.array() - ubar;
  const double lse_pos = ops.log_int_exp(centered);
  const double lse_neg = ops.log_int_exp(-centered);
  const Field dens_pos = (centered.array() - lse_pos).exp();
  const Field dens_neg = ((-centered).array() - lse_neg).exp();
  Field r = (ops.stiffness() * u).cwiseQuotient(ops.mass());
  r += p.t * p.rho1 * (1.0 - dens_pos.array()).matrix();
  r -= p.t * p.rho2 * (1.0 - dens_neg.array()).matrix();
  return r;
}

Field normalize_exp(const DiscreteOperators& ops, const Field& u) {
  if (!u.allFinite()) throw std::invalid_argument("normalize_exp: non-finite field");
  Field v = u;
  for (int pass = 0; pass < 4; ++pass) {
    const double shift = ops.log_int_exp(v);
    const double cutoff = 8.0 * std::numeric_limits<double>::epsilon() *
                          (1.0 + v.cwiseAbs().maxCoeff());
    if (std::abs(shift) <= cutoff) return v;  // fixed point: repeat call is bit-identical
    v.array() -= shift;
  }
  return v;
}

double neg_exp_moment(const DiscreteOperators& ops, const Field& u, double p) {
  if (!u.allFinite() || !std::isfinite(p)) throw std::invalid_argument("neg_exp_moment: non-finite input");
  return std::exp(ops.log_int_exp(-p * u));
}

MtReport mt_check(const DiscreteOperators& ops, const Field& u) {
  if (!u.allFinite()) throw std::invalid_argument("mt_check: non-finite field");
  MtReport rep;
  if (u.maxCoeff() - u.minCoeff() == 0.0) {
    rep.constant_input = true;
    return rep;
  }
  const double ubar = ops.mean_value(u);
  rep.lhs = ops.log_int_exp(Field(u.array() - ubar));
  rep.dirichlet = ops.dirichlet_energy(u);
  const double rhs = rep.dirichlet / k16Pi;
  rep.offset = rep.lhs - rhs;
  if (rhs > 0.0) rep.ratio = rep.lhs / rhs;
  return rep;
}

ImprovedMtReport improved_mt_check(const DiscreteOperators& ops, const Field& u,
                                   const std::vector<std::vector<int>>& sets, double gamma0,
                                   double eps_tilde) {
  const auto& mesh = ops.mesh();
  const int nv = mesh.vertex_count();
  const int ell = static_cast<int>(sets.size());
  if (ell < 1) throw std::invalid_argument("improved_mt_check: need at least one set");
  if (!(gamma0 > 0.0 && gamma0 < 1.0 / ell))
    throw std::invalid_argument("improved_mt_check: gamma0 must lie in (0, 1/ell)");
  if (!(eps_tilde > 0.0 && eps_tilde < k16Pi))
    throw std::invalid_argument("improved_mt_check: eps_tilde must lie in (0, 16 pi)");
  if (!u.allFinite()) throw std::invalid_argument("improved_mt_check: non-finite field");

  std::vector<char> owner(nv, 0);
  for (const auto& set : sets) {
    if (set.empty()) throw std::invalid_argument("improved_mt_check: empty set");
    for (int v : set) {
      if (v < 0 || v >= nv) throw std::invalid_argument("improved_mt_check: vertex out of range");
      if (owner[v]) throw std::invalid_argument("improved_mt_check: sets overlap at vertex " + std::to_string(v));
      owner[v] = 1;
    }
  }

  ImprovedMtReport rep;
  rep.ell = ell;
  rep.gamma0 = gamma0;
  rep.eps_tilde = eps_tilde;

  rep.min_set_distance = std::numeric_limits<double>::infinity();
  for (int a = 0; a < ell; ++a)
    for (int b = a + 1; b < ell; ++b)
      for (int va : sets[a]) {
        const Eigen::VectorXd d = mesh.distances_from(va);
        for (int vb : sets[b]) rep.min_set_distance = std::min(rep.min_set_distance, d[vb]);
      }
  if (ell == 1) rep.min_set_distance = 0.0;

  // Mass fractions of e^u per set, shift-stable.
  const double lse_total = ops.log_int_exp(u);
  rep.set_fractions.reserve(static_cast<std::size_t>(ell));
  bool ok = true;
  for (const auto& set : sets) {
    Eigen::VectorXd vals(static_cast<Eigen::Index>(set.size()));
    Eigen::VectorXd wts(static_cast<Eigen::Index>(set.size()));
    for (std::size_t i = 0; i < set.size(); ++i) {
      vals[static_cast<Eigen::Index>(i)] = u[set[i]];
      wts[static_cast<Eigen::Index>(i)] = ops.mass()[set[i]];
    }
    const double frac = std::exp(log_sum_exp(vals, wts) - lse_total);
    rep.set_fractions.push_back(frac);
    ok = ok && frac >= gamma0;
  }
  rep.hypothesis_ok = ok;

  const double ubar = ops.mean_value(u);
  const Field centered = u.array() - ubar;
  rep.lhs = ell * ops.log_int_exp(centered) + ops.log_int_exp(-centered);
  rep.dirichlet = ops.dirichlet_energy(u);
  rep.rhs_coeff = 1.0 / (k16Pi - eps_tilde);
  rep.slack = rep.rhs_coeff * rep.dirichlet - rep.lhs;
  return rep;
}

}  // namespace mfe
