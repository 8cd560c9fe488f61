#pragma once

#include <optional>
#include <vector>

#include "mfe/operators.hpp"

namespace mfe {

// Parameter pair (rho1, rho2) with a scaling t for continuation; t is kept
// within [0.8, 1.2].
struct MfeParams {
  double rho1 = 0.0;
  double rho2 = 0.0;
  double t = 1.0;
};

void validate_params(const MfeParams& p);

// E(u) = 1/2 u'Ku - t*rho1*log int e^{u-ubar} - t*rho2*log int e^{-(u-ubar)}.
// Translation invariant; exponentials are max-shifted so the value is finite
// for every finite field.
double energy(const DiscreteOperators& ops, const MfeParams& p, const Field& u);

// Mass-weighted gradient field r with <r, v>_M = d/ds E(u + s v):
// r = M^{-1}Ku - t*rho1*(e^u/int e^u - 1) + t*rho2*(e^{-u}/int e^{-u} - 1).
// Mass mean zero within 1e-10.
Field residual(const DiscreteOperators& ops, const MfeParams& p, const Field& u);

// u - log int e^u, early-exit stabilized so a second application returns its
// input bit for bit.
Field normalize_exp(const DiscreteOperators& ops, const Field& u);

// int e^{-p u}
double neg_exp_moment(const DiscreteOperators& ops, const Field& u, double p);

// Trudinger-type ratio diagnostics: lhs = log int e^{u-ubar},
// offset = lhs - dirichlet/(16 pi). Constant input is flagged (ratio empty).
struct MtReport {
  double lhs = 0.0;
  double dirichlet = 0.0;
  double offset = 0.0;
  std::optional<double> ratio;
  bool constant_input = false;
};
MtReport mt_check(const DiscreteOperators& ops, const Field& u);

// Improved inequality under a mass-spread hypothesis: ell disjoint vertex
// sets, each holding fraction >= gamma0 of int e^u. A failed hypothesis is a
// verdict, not an error; overlapping sets are an error.
struct ImprovedMtReport {
  bool hypothesis_ok = false;
  std::vector<double> set_fractions;
  double min_set_distance = 0.0;
  double lhs = 0.0;       // ell*log int e^{u-ubar} + log int e^{-(u-ubar)}
  double dirichlet = 0.0;
  double rhs_coeff = 0.0; // 1/(16 pi - eps_tilde)
  double slack = 0.0;     // rhs_coeff*dirichlet - lhs
  int ell = 0;
  double gamma0 = 0.0;
  double eps_tilde = 0.0;
};
ImprovedMtReport improved_mt_check(const DiscreteOperators& ops, const Field& u,
                                   const std::vector<std::vector<int>>& sets, double gamma0,
                                   double eps_tilde);

}  // namespace mfe
