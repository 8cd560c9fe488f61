#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace mfe {

// W1 transport from a discrete measure (supply[i] at site i, cost column
// cost[j][i] = d(site i, sink j)) onto a handful of sinks with fixed
// demands. Supplies and demands must balance to 1e-12.
//
// Two paths, chosen by the caller via `exact`:
//  - exact: successive shortest paths with potentials (optimal LP value);
//  - entropic: log-domain Sinkhorn (eps, max_iter) followed by feasibility
//    rounding, so the returned cost is still attained by an admissible plan
//    (a true upper bound on the optimum).
struct TransportResult {
  double cost = 0.0;
  bool exact = true;
  int iterations = 0;
  std::string method;  // "ssp" or "sinkhorn"
};

TransportResult transport_cost(const std::vector<Eigen::VectorXd>& cost_columns,
                               const Eigen::VectorXd& supply, const Eigen::VectorXd& demand,
                               bool exact, double sinkhorn_eps = 0.0, int sinkhorn_iters = 500);

}  // namespace mfe
