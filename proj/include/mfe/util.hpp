#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

namespace mfe {

// Scalar field sampled at mesh vertices.
using Field = Eigen::VectorXd;

// Compensated summation; used wherever a sum carries a 1e-12 contract.
double kahan_sum(const double* x, std::size_t n);
double kahan_sum(const Eigen::VectorXd& x);
double kahan_sum(const std::vector<double>& x);

// log(sum_i w_i * exp(v_i)) with max shift, w_i > 0. Never returns inf for
// finite inputs.
double log_sum_exp(const Eigen::VectorXd& values, const Eigen::VectorXd& weights);

// Least-squares line y ~ slope*x + intercept.
struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
};
LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y);

// Worker count: MFE_THREADS if set and positive, else hardware concurrency.
int thread_count();

// Runs fn(i) for i in [0, n). Items must be independent; results keyed by
// index so the outcome does not depend on the schedule.
void parallel_for(int n, const std::function<void(int)>& fn);

// Deterministic 64-bit generator for everything randomized.
using Rng = std::mt19937_64;

}  // namespace mfe
