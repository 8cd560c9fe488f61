#include "mfe/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include <Eigen/SparseLU>

#include "mfe/util.hpp"

namespace mfe {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double k8Pi = 8.0 * kPi;

Field centered(const DiscreteOperators& ops, const Field& u) {
  return (u.array() - ops.mean_value(u)).matrix();
}

bool is_trivial(const DiscreteOperators& ops, const Field& u) {
  return (u.array() - ops.mean_value(u)).abs().maxCoeff() < 1e-6;
}

std::string regime_label(const MfeParams& p) {
  for (int k = 1; k <= 64; ++k) {
    if (std::abs(p.rho1 - k * k8Pi) < 1e-9) return "boundary";
    if (std::abs(p.rho2 - k * k8Pi) < 1e-9) return "boundary";
  }
  if (std::abs(p.rho2 - 4.0 * kPi) < 1e-9) return "boundary";
  if (p.rho1 < k8Pi && p.rho2 < k8Pi) return "subcritical";
  return "supercritical";
}

struct NewtonOutcome {
  Field u;
  double energy = 0.0;
  double residual_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<IterateRow> iterates;
};

// Damped Newton on the residual with a three-column Woodbury correction:
// the Hessian is K - t*rho1*(diag(w) - w w') - t*rho2*(diag(v) - v v')
// plus a rank-one mass deflation c*m m' that fixes the constant direction.
// Only the sparse part B = K - t*rho1*diag(w) - t*rho2*diag(v) (+ mu*M when
// regularized) is factored; the rank-one terms enter via Sherman-Morrison-
// Woodbury.
NewtonOutcome damped_newton(const DiscreteOperators& ops, const MfeParams& p, const Field& u0,
                            const SolveOptions& opts) {
  const Eigen::SparseMatrix<double>& K = ops.stiffness();
  const Eigen::VectorXd& m = ops.mass();
  const int nv = static_cast<int>(m.size());
  const double c_defl = K.diagonal().sum() / nv;

  NewtonOutcome out;
  out.u = centered(ops, u0);
  double mu = 0.0;

  Field r = residual(ops, p, out.u);
  double rn = ops.mass_norm(r);
  for (int it = 0; it < opts.max_newton_iter; ++it) {
    if (opts.record_iterates)
      out.iterates.push_back({it, energy(ops, p, out.u), rn});
    out.iterations = it;
    if (rn <= opts.tol) {
      out.converged = true;
      break;
    }

    const double lse_pos = ops.log_int_exp(out.u);
    const double lse_neg = ops.log_int_exp(-out.u);
    Eigen::VectorXd w = (m.array() * (out.u.array() - lse_pos).exp()).matrix();
    Eigen::VectorXd v = (m.array() * ((-out.u).array() - lse_neg).exp()).matrix();

    Eigen::SparseMatrix<double> B = K;
    for (int i = 0; i < nv; ++i)
      B.coeffRef(i, i) += mu * m[i] - p.t * p.rho1 * w[i] - p.t * p.rho2 * v[i];
    B.makeCompressed();
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(B);
    bool accepted = false;
    if (lu.info() == Eigen::Success) {
      std::vector<std::pair<const Eigen::VectorXd*, double>> rank_ones;
      if (p.t * p.rho1 != 0.0) rank_ones.push_back({&w, p.t * p.rho1});
      if (p.t * p.rho2 != 0.0) rank_ones.push_back({&v, p.t * p.rho2});
      rank_ones.push_back({&m, c_defl});
      const int q = static_cast<int>(rank_ones.size());
      Eigen::MatrixXd U(nv, q);
      Eigen::VectorXd coeff(q);
      for (int j = 0; j < q; ++j) {
        U.col(j) = *rank_ones[static_cast<size_t>(j)].first;
        coeff[j] = rank_ones[static_cast<size_t>(j)].second;
      }
      Eigen::VectorXd rhs = -(m.array() * r.array()).matrix();
      Eigen::VectorXd x = lu.solve(rhs);
      Eigen::MatrixXd XU = lu.solve(U);
      Eigen::MatrixXd cap = coeff.cwiseInverse().asDiagonal();
      cap += U.transpose() * XU;
      Eigen::VectorXd delta = x - XU * cap.lu().solve(U.transpose() * x);

      if (delta.allFinite()) {
        const double linf = delta.lpNorm<Eigen::Infinity>();
        if (linf > opts.step_cap) delta *= opts.step_cap / linf;
        double alpha = 1.0;
        for (int bt = 0; bt < 40; ++bt, alpha *= 0.5) {
          Field u_try = centered(ops, out.u + alpha * delta);
          Field r_try = residual(ops, p, u_try);
          const double rn_try = ops.mass_norm(r_try);
          if (std::isfinite(rn_try) && rn_try <= (1.0 - 1e-4 * alpha) * rn) {
            out.u = std::move(u_try);
            r = std::move(r_try);
            rn = rn_try;
            accepted = true;
            break;
          }
        }
      }
    }
    if (accepted) {
      if (mu > 0.0) {
        mu *= 0.1;
        if (mu < 1e-12 * c_defl) mu = 0.0;
      }
    } else {
      mu = (mu == 0.0) ? 1e-8 * c_defl : mu * 100.0;
      if (mu > 1e8 * c_defl) break;  // give up honestly
    }
  }
  out.residual_norm = rn;
  out.energy = energy(ops, p, out.u);
  if (rn <= opts.tol) out.converged = true;
  return out;
}

// Maximizes E along the ray {s * v : s in (0, s_hi]} by grid scan plus
// golden-section refinement; returns the maximizing s (0 if the ray is
// degenerate).
double ray_max(const DiscreteOperators& ops, const MfeParams& p, const Field& v, double s_hi) {
  if (!(v.array().abs().maxCoeff() > 0.0)) return 0.0;
  const int grid = 32;
  double best_s = 0.0, best_e = 0.0;  // s = 0 has E = 0 (up to rounding)
  for (int i = 1; i <= grid; ++i) {
    const double s = s_hi * i / grid;
    const double e = energy(ops, p, s * v);
    if (e > best_e) {
      best_e = e;
      best_s = s;
    }
  }
  if (best_s == 0.0) return 0.0;
  double lo = std::max(0.0, best_s - s_hi / grid), hi = std::min(s_hi, best_s + s_hi / grid);
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = hi - gr * (hi - lo), b = lo + gr * (hi - lo);
  double ea = energy(ops, p, a * v), eb = energy(ops, p, b * v);
  for (int it = 0; it < 40; ++it) {
    if (ea < eb) {
      lo = a;
      a = b;
      ea = eb;
      b = lo + gr * (hi - lo);
      eb = energy(ops, p, b * v);
    } else {
      hi = b;
      b = a;
      eb = ea;
      a = hi - gr * (hi - lo);
      ea = energy(ops, p, a * v);
    }
  }
  return 0.5 * (lo + hi);
}

// Mountain-pass walk (ray re-maximization plus gradient descent on the
// ridge): from a direction whose ray crosses the mountain ridge, converges
// toward the pass point, where the damped Newton polish takes over. Returns
// the refined point, or the empty field when the ridge collapses.
Field mountain_pass_walk(const DiscreteOperators& ops, const MfeParams& p, const Field& v0,
                         double switch_tol, int max_iter) {
  Field v = v0;
  double s = ray_max(ops, p, v, 1.0);
  if (s == 0.0) return Field();
  Field u = s * v;
  double ridge = energy(ops, p, u);
  double step = 0.1;
  for (int it = 0; it < max_iter; ++it) {
    Field r = residual(ops, p, u);
    const double rn = ops.mass_norm(r);
    if (rn <= switch_tol) break;
    bool accepted = false;
    for (int bt = 0; bt < 25; ++bt) {
      Field dir = u - step * r;
      const double s_try = ray_max(ops, p, dir, 2.0);
      if (s_try > 0.0) {
        Field u_try = s_try * dir;
        const double e_try = energy(ops, p, u_try);
        if (e_try <= ridge + 1e-12) {
          u = std::move(u_try);
          ridge = e_try;
          accepted = true;
          step = std::min(step * 1.3, 10.0);
          break;
        }
      }
      step *= 0.5;
    }
    if (!accepted) break;
  }
  return u;
}

std::vector<std::vector<int>> lex_subsets(int n, int k, int cap) {
  std::vector<std::vector<int>> result;
  if (k > n || k <= 0) return result;
  std::vector<int> idx(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) idx[static_cast<size_t>(i)] = i;
  while (static_cast<int>(result.size()) < cap) {
    result.push_back(idx);
    int pos = k - 1;
    while (pos >= 0 && idx[static_cast<size_t>(pos)] == n - k + pos) --pos;
    if (pos < 0) break;
    ++idx[static_cast<size_t>(pos)];
    for (int i = pos + 1; i < k; ++i)
      idx[static_cast<size_t>(i)] = idx[static_cast<size_t>(i - 1)] + 1;
  }
  return result;
}

// Ordered positive integer compositions of total into k parts.
void compositions(int total, int k, std::vector<int>& cur, std::vector<std::vector<int>>& out) {
  if (k == 1) {
    if (total >= 1) {
      cur.push_back(total);
      out.push_back(cur);
      cur.pop_back();
    }
    return;
  }
  for (int first = 1; first + (k - 1) <= total; ++first) {
    cur.push_back(first);
    compositions(total - first, k - 1, cur, out);
    cur.pop_back();
  }
}

Field random_eigen_field(const DiscreteOperators& ops, const EigenPairs& basis, Rng& rng,
                         double amplitude) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int nv = static_cast<int>(ops.mass().size());
  Field u = Field::Zero(nv);
  for (int j = 1; j < basis.vectors.cols(); ++j) u += gauss(rng) * basis.vectors.col(j);
  const double sup = (u.array() - ops.mean_value(u)).abs().maxCoeff();
  if (sup > 0.0) u *= amplitude / sup;
  return u;
}

}  // namespace

SolveReport minimize(const DiscreteOperators& ops, const MfeParams& p, const Field& u0,
                     const SolveOptions& opts) {
  validate_params(p);
  if (u0.size() != ops.mass().size()) throw std::invalid_argument("initial field size mismatch");
  if (!u0.allFinite()) throw std::invalid_argument("initial field has non-finite entries");

  SolveReport rep;
  rep.regime = regime_label(p);
  rep.method = "minimize";
  rep.t = p.t;
  rep.rho2_below_4pi = p.rho2 < 4.0 * kPi;
  rep.rho2_below_8pi = p.rho2 < k8Pi;

  Field u = centered(ops, u0);
  double e_cur = energy(ops, p, u);
  double step = 1.0;
  double last_polish_rn = std::numeric_limits<double>::infinity();

  // Limited-memory quasi-Newton state in the mass inner product. The
  // curvature pairs turn the long shallow valleys that appear when
  // rho1 + rho2 sits near an eigenvalue from a crawl into a few dozen steps,
  // while the monotone Armijo check below keeps the energy trace
  // non-increasing exactly as with plain descent.
  constexpr int kMemory = 8;
  std::vector<Field> mem_s, mem_y;
  std::vector<double> mem_rho;
  const auto mdot = [&ops](const Field& a, const Field& b) {
    return a.dot(ops.mass().cwiseProduct(b));
  };
  Field r_prev, u_prev;

  int it = 0;
  for (; it < opts.max_descent_iter; ++it) {
    Field r = residual(ops, p, u);
    const double rn = ops.mass_norm(r);
    if (opts.record_iterates && (it < 200 || it % 10 == 0))
      rep.iterates.push_back({it, e_cur, rn});
    if (rn <= opts.tol) {
      rep.converged = true;
      break;
    }
    // Try the guarded polish below the switch level, and also periodically
    // from further out: near-degenerate Hessians let first-order steps crawl
    // while Newton still converges, and the accept-only-if-better check
    // keeps a failed attempt harmless.
    const bool periodic_probe = it > 0 && it % 50 == 0;
    if ((rn <= opts.newton_switch && rn < 0.1 * last_polish_rn) || periodic_probe) {
      last_polish_rn = std::min(last_polish_rn, rn);
      SolveOptions popts = opts;
      popts.max_newton_iter = 30;
      popts.record_iterates = false;
      NewtonOutcome polish = damped_newton(ops, p, u, popts);
      // Accept the polish only when it improves both energy and residual,
      // preserving the non-increasing energy trace.
      if (polish.converged && polish.energy <= e_cur + 1e-12 && polish.residual_norm < rn) {
        u = polish.u;
        e_cur = polish.energy;
        rep.converged = true;
        if (opts.record_iterates)
          rep.iterates.push_back({it + polish.iterations, e_cur, polish.residual_norm});
        it += polish.iterations;
        break;
      }
    }

    if (u_prev.size() > 0) {
      Field s = u - u_prev;
      Field y = r - r_prev;
      const double sy = mdot(s, y);
      if (sy > 1e-12 * ops.mass_norm(s) * ops.mass_norm(y)) {
        mem_s.push_back(std::move(s));
        mem_y.push_back(std::move(y));
        mem_rho.push_back(1.0 / sy);
        if (static_cast<int>(mem_s.size()) > kMemory) {
          mem_s.erase(mem_s.begin());
          mem_y.erase(mem_y.begin());
          mem_rho.erase(mem_rho.begin());
        }
      }
    }
    u_prev = u;
    r_prev = r;

    // Two-loop recursion for d = -H_approx * r; fall back to steepest
    // descent whenever the result is not a descent direction.
    Field d = -r;
    bool quasi_newton = false;
    if (!mem_s.empty()) {
      Field q = r;
      std::vector<double> alpha_mem(mem_s.size());
      for (int j = static_cast<int>(mem_s.size()) - 1; j >= 0; --j) {
        alpha_mem[static_cast<size_t>(j)] =
            mem_rho[static_cast<size_t>(j)] * mdot(mem_s[static_cast<size_t>(j)], q);
        q -= alpha_mem[static_cast<size_t>(j)] * mem_y[static_cast<size_t>(j)];
      }
      const double gamma = 1.0 / (mem_rho.back() * mdot(mem_y.back(), mem_y.back()));
      Field z = gamma * q;
      for (size_t j = 0; j < mem_s.size(); ++j) {
        const double beta = mem_rho[j] * mdot(mem_y[j], z);
        z += (alpha_mem[j] - beta) * mem_s[j];
      }
      if (z.allFinite() && mdot(r, z) > 0.0) {
        d = -z;
        quasi_newton = true;
      }
    }
    double slope = mdot(r, d);  // negative for a descent direction

    double alpha = quasi_newton ? 1.0 : step;
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt, alpha *= 0.5) {
      Field u_try = centered(ops, u + alpha * d);
      const double e_try = energy(ops, p, u_try);
      if (std::isfinite(e_try) && e_try <= e_cur + 1e-4 * alpha * slope) {
        u = std::move(u_try);
        e_cur = e_try;
        if (!quasi_newton) step = std::min(alpha * 1.5, 1e3);
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      // Retry once along steepest descent before giving up; a stale
      // curvature memory can propose a bad direction after a polish.
      mem_s.clear();
      mem_y.clear();
      mem_rho.clear();
      alpha = step;
      slope = -rn * rn;
      for (int bt = 0; bt < 60; ++bt, alpha *= 0.5) {
        Field u_try = centered(ops, u - alpha * r);
        const double e_try = energy(ops, p, u_try);
        if (std::isfinite(e_try) && e_try <= e_cur + 1e-4 * alpha * slope) {
          u = std::move(u_try);
          e_cur = e_try;
          step = std::min(alpha * 1.5, 1e3);
          accepted = true;
          break;
        }
      }
    }
    if (!accepted) break;  // stagnation at line-search floor
  }
  rep.u = centered(ops, u);
  rep.energy = energy(ops, p, rep.u);
  Field r_final = residual(ops, p, rep.u);
  rep.residual_norm = ops.mass_norm(r_final);
  rep.converged = rep.residual_norm <= opts.tol;
  rep.iterations = it;
  rep.trivial_flag = is_trivial(ops, rep.u);
  if (opts.record_iterates)
    rep.iterates.push_back({it, rep.energy, rep.residual_norm});
  return rep;
}

Field cone_point(const SurfaceMesh& mesh, const BarycenterMeasure& sigma, double lambda_bar,
                 double s) {
  if (s == 0.0) return Field::Zero(mesh.vertex_count());
  return s * test_function(mesh, sigma, lambda_bar);
}

ConeSample build_cone(const DiscreteOperators& ops, const MfeParams& p, const MinMaxConfig& cfg) {
  validate_params(p);
  if (cfg.k < 1) throw std::invalid_argument("minmax k must be >= 1");
  if (cfg.sigma_samples < cfg.k) throw std::invalid_argument("need at least k atom sites");
  if (cfg.cone_s_steps < 1) throw std::invalid_argument("cone_s_steps must be >= 1");
  if (!(cfg.t0 > 0.0 && cfg.t0 <= 0.2)) throw std::invalid_argument("t0 must lie in (0, 0.2]");

  const SurfaceMesh& mesh = ops.mesh();
  const int nv = mesh.vertex_count();
  ConeSample cone;

  std::vector<int> sites = mesh.farthest_point_sample(cfg.sigma_samples);
  std::vector<std::vector<double>> weight_sets;
  if (cfg.k == 1) {
    weight_sets.push_back({1.0});
  } else {
    const int parts = std::max(cfg.weight_divisions, cfg.k);
    std::vector<std::vector<int>> comp;
    std::vector<int> cur;
    compositions(parts, cfg.k, cur, comp);
    for (const auto& c : comp) {
      std::vector<double> w;
      for (int a : c) w.push_back(static_cast<double>(a) / parts);
      weight_sets.push_back(w);
    }
  }
  for (const auto& subset : lex_subsets(static_cast<int>(sites.size()), cfg.k,
                                        cfg.max_sigma_candidates)) {
    for (const auto& w : weight_sets) {
      if (static_cast<int>(cone.sigmas.size()) >= cfg.max_sigma_candidates) break;
      std::vector<BarycenterAtom> atoms;
      for (size_t j = 0; j < subset.size(); ++j)
        atoms.push_back({w[j], sites[static_cast<size_t>(subset[j])]});
      cone.sigmas.emplace_back(std::move(atoms));
    }
  }

  // Calibration ensemble: the target level is an order of magnitude above
  // the typical energy of a bounded random field.
  EigenPairs basis = ops.low_eigenpairs(std::min(21, nv - 1));
  Rng rng(cfg.seed);
  std::vector<double> abs_energies;
  MfeParams p1{p.rho1, p.rho2, 1.0};
  for (int i = 0; i < 33; ++i) {
    Field u = random_eigen_field(ops, basis, rng, 0.5);
    abs_energies.push_back(std::abs(energy(ops, p1, u)));
  }
  std::sort(abs_energies.begin(), abs_energies.end());
  cone.median_abs_energy = abs_energies[abs_energies.size() / 2];
  double level = 10.0 * cone.median_abs_energy;
  if (!(level > 0.0)) level = 1.0;
  if (cfg.level_L > 0.0) level = cfg.level_L;

  const double guard_lambda = 10.0 / mesh.mean_edge_length();
  auto boundary_for = [&](double lambda) {
    double worst = -std::numeric_limits<double>::infinity();
    for (const auto& sigma : cone.sigmas) {
      Field phi = test_function(mesh, sigma, lambda);
      for (double t : {1.0 - cfg.t0, 1.0 + cfg.t0})
        worst = std::max(worst, energy(ops, {p.rho1, p.rho2, t}, phi));
    }
    return worst;
  };

  if (cfg.lambda_bar > 0.0) {
    if (cfg.lambda_bar > guard_lambda)
      throw ResolutionGuardError("lambda_bar exceeds the mesh resolution guard");
    cone.lambda_bar = cfg.lambda_bar;
    cone.boundary_max = boundary_for(cone.lambda_bar);
  } else {
    double lambda = 8.0;
    double chosen = 0.0, chosen_boundary = 0.0;
    double largest = 0.0, largest_boundary = 0.0;
    while (lambda <= guard_lambda) {
      const double b = boundary_for(lambda);
      largest = lambda;
      largest_boundary = b;
      if (b < -2.0 * level) {
        chosen = lambda;
        chosen_boundary = b;
        break;
      }
      lambda *= 1.6;
    }
    if (chosen == 0.0) {
      if (largest == 0.0) throw ResolutionGuardError("mesh too coarse for any bubble scale");
      chosen = largest;
      chosen_boundary = largest_boundary;
    }
    cone.lambda_bar = chosen;
    cone.boundary_max = chosen_boundary;
  }

  if (cfg.level_L > 0.0) {
    cone.level_L = cfg.level_L;
  } else if (cone.boundary_max < -2.0 * level) {
    cone.level_L = level;
  } else {
    // Resolution-limited: shrink the level so the bracket stays meaningful.
    cone.level_L = std::min(level, std::max(std::abs(cone.boundary_max), 1e-6) / 2.5);
    cone.level_reduced = true;
  }

  for (const auto& sigma : cone.sigmas)
    cone.phis.push_back(test_function(mesh, sigma, cone.lambda_bar));
  for (int i = 0; i <= cfg.cone_s_steps; ++i)
    cone.s_grid.push_back(static_cast<double>(i) / cfg.cone_s_steps);

  for (size_t si = 0; si < cone.sigmas.size(); ++si) {
    for (double lambda = 8.0; lambda < cone.lambda_bar; lambda *= 1.6) {
      cone.seed_directions.push_back(test_function(mesh, cone.sigmas[si], lambda));
      cone.seed_sigma.push_back(static_cast<int>(si));
      cone.seed_lambda.push_back(lambda);
    }
    cone.seed_directions.push_back(cone.phis[si]);
    cone.seed_sigma.push_back(static_cast<int>(si));
    cone.seed_lambda.push_back(cone.lambda_bar);
  }
  return cone;
}

double cone_level(const DiscreteOperators& ops, const MfeParams& p, const ConeSample& cone,
                  double t) {
  MfeParams pt{p.rho1, p.rho2, t};
  validate_params(pt);
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& phi : cone.phis)
    for (double s : cone.s_grid)
      best = std::max(best, energy(ops, pt, s == 0.0 ? Field(Field::Zero(phi.size()))
                                                     : Field(s * phi)));
  return best;
}

SolveReport minmax_solve(const DiscreteOperators& ops, const MfeParams& p,
                         const MinMaxConfig& cfg) {
  validate_params(p);
  const double lo = cfg.k * k8Pi, hi = (cfg.k + 1) * k8Pi;
  const bool in_window = p.rho1 > lo + 1e-12 && p.rho1 < hi - 1e-12;
  const bool rho2_ok = p.rho2 < 4.0 * kPi;
  if (!cfg.allow_regime_override) {
    if (!in_window)
      throw std::invalid_argument("rho1 must lie strictly inside (8k*pi, 8(k+1)*pi) for k = " +
                                  std::to_string(cfg.k));
    if (!rho2_ok)
      throw std::invalid_argument("rho2 must lie below 4*pi (set allow_regime_override to force)");
  }

  ConeSample cone = build_cone(ops, p, cfg);
  MfeParams p1{p.rho1, p.rho2, 1.0};

  // Score the cone sample at t = 1; the max is the min-max level estimate
  // and the top points seed the saddle search.
  struct Scored {
    double e;
    int sigma;
    double s;
  };
  std::vector<Scored> scored;
  for (size_t si = 0; si < cone.phis.size(); ++si)
    for (double s : cone.s_grid) {
      Field u = s == 0.0 ? Field(Field::Zero(cone.phis[si].size())) : Field(s * cone.phis[si]);
      scored.push_back({energy(ops, p1, u), static_cast<int>(si), s});
    }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const Scored& a, const Scored& b) { return a.e > b.e; });
  const double level_estimate = scored.front().e;

  SolveReport rep;
  rep.regime = "supercritical";
  rep.method = "minmax_newton";
  rep.t = 1.0;
  rep.minmax_level = level_estimate;
  rep.level_L = cone.level_L;
  rep.lambda_bar = cone.lambda_bar;
  rep.cone_boundary_max = cone.boundary_max;
  rep.level_reduced = cone.level_reduced;
  rep.bracket_ok = cone.boundary_max < -2.0 * cone.level_L &&
                   level_estimate > -0.5 * cone.level_L;
  rep.rho2_below_4pi = p.rho2 < 4.0 * kPi;
  rep.rho2_below_8pi = p.rho2 < k8Pi;

  // Rank the whole seed pool (all sigma and bubble scales) by the height of
  // the ridge its ray crosses, then walk each attempted seed to the pass
  // before polishing with Newton.
  struct SeedScore {
    double ridge;
    int pool_index;
  };
  std::vector<SeedScore> seed_scores;
  for (size_t j = 0; j < cone.seed_directions.size(); ++j) {
    const Field& dir = cone.seed_directions[j];
    double best = 0.0;
    for (double s : cone.s_grid)
      if (s > 0.0) best = std::max(best, energy(ops, p1, Field(s * dir)));
    seed_scores.push_back({best, static_cast<int>(j)});
  }
  std::stable_sort(seed_scores.begin(), seed_scores.end(),
                   [](const SeedScore& a, const SeedScore& b) { return a.ridge > b.ridge; });

  std::optional<NewtonOutcome> trivial_fallback;
  std::vector<int> used_sigmas;
  int attempts = 0;
  for (const SeedScore& sc : seed_scores) {
    if (attempts >= cfg.max_seed_attempts) break;
    const int sigma_idx = cone.seed_sigma[static_cast<size_t>(sc.pool_index)];
    if (std::find(used_sigmas.begin(), used_sigmas.end(), sigma_idx) != used_sigmas.end())
      continue;
    used_sigmas.push_back(sigma_idx);
    ++attempts;
    Field pass = mountain_pass_walk(ops, p1,
                                    cone.seed_directions[static_cast<size_t>(sc.pool_index)],
                                    cfg.inner.newton_switch, 300);
    if (pass.size() == 0) continue;
    NewtonOutcome outcome = damped_newton(ops, p1, pass, cfg.inner);
    if (outcome.converged && !is_trivial(ops, outcome.u)) {
      rep.u = outcome.u;
      rep.energy = outcome.energy;
      rep.residual_norm = outcome.residual_norm;
      rep.iterations = outcome.iterations;
      rep.converged = true;
      rep.trivial_flag = false;
      rep.iterates = std::move(outcome.iterates);
      return rep;
    }
    if (outcome.converged && !trivial_fallback) trivial_fallback = std::move(outcome);
  }

  // Continuation fallback from above t = 1.
  std::vector<double> grid = {1.0 + cfg.t0, 1.0 + 2.0 * cfg.t0 / 3.0, 1.0 + cfg.t0 / 3.0, 1.0};
  std::vector<ContinuationStep> chain = continue_in_t(ops, p, cfg, grid);
  if (!chain.empty() && std::abs(chain.back().t - 1.0) < 1e-12 && chain.back().report.converged &&
      !chain.back().report.trivial_flag) {
    rep = chain.back().report;
    rep.method = "t_continuation";
    rep.minmax_level = level_estimate;
    rep.level_L = cone.level_L;
    rep.lambda_bar = cone.lambda_bar;
    rep.cone_boundary_max = cone.boundary_max;
    rep.level_reduced = cone.level_reduced;
    rep.bracket_ok = cone.boundary_max < -2.0 * cone.level_L &&
                     level_estimate > -0.5 * cone.level_L;
    return rep;
  }

  if (trivial_fallback) {
    rep.u = trivial_fallback->u;
    rep.energy = trivial_fallback->energy;
    rep.residual_norm = trivial_fallback->residual_norm;
    rep.iterations = trivial_fallback->iterations;
    rep.converged = true;
    rep.trivial_flag = true;
    rep.iterates = std::move(trivial_fallback->iterates);
    return rep;
  }

  // Honest failure: report the best seed's end state.
  NewtonOutcome last = damped_newton(
      ops, p1, Field(scored.front().s * cone.phis[static_cast<size_t>(scored.front().sigma)]),
      cfg.inner);
  rep.u = last.u;
  rep.energy = last.energy;
  rep.residual_norm = last.residual_norm;
  rep.iterations = last.iterations;
  rep.converged = false;
  rep.trivial_flag = is_trivial(ops, last.u);
  rep.iterates = std::move(last.iterates);
  return rep;
}

std::vector<ContinuationStep> continue_in_t(const DiscreteOperators& ops, const MfeParams& p,
                                            const MinMaxConfig& cfg, std::vector<double> t_grid) {
  if (t_grid.empty()) throw std::invalid_argument("continuation grid is empty");
  if (std::abs(t_grid.back() - 1.0) > 1e-12)
    throw std::invalid_argument("continuation grid must end at t = 1");
  for (double t : t_grid) validate_params({p.rho1, p.rho2, t});

  ConeSample cone = build_cone(ops, p, cfg);
  std::vector<ContinuationStep> chain;
  std::optional<Field> warm;
  std::optional<double> warm_t;

  auto best_cone_seed = [&](double t) {
    MfeParams pt{p.rho1, p.rho2, t};
    double best = -std::numeric_limits<double>::infinity();
    Field seed = Field::Zero(ops.mass().size());
    for (const auto& phi : cone.seed_directions)
      for (double s : cone.s_grid) {
        if (s == 0.0) continue;
        Field u = s * phi;
        const double e = energy(ops, pt, u);
        if (e > best) {
          best = e;
          seed = std::move(u);
        }
      }
    return seed;
  };

  for (double t : t_grid) {
    MfeParams pt{p.rho1, p.rho2, t};
    ContinuationStep step;
    step.t = t;
    step.alpha_over_t = cone_level(ops, p, cone, t) / t;

    Field seed = warm ? *warm : best_cone_seed(t);
    if (!warm) {
      Field pass = mountain_pass_walk(ops, pt, seed, cfg.inner.newton_switch, 300);
      if (pass.size() > 0) seed = pass;
    }
    NewtonOutcome outcome = damped_newton(ops, pt, seed, cfg.inner);
    if (!outcome.converged && warm && warm_t) {
      // One bisection: consolidate at the midpoint, then retry.
      const double tm = 0.5 * (*warm_t + t);
      NewtonOutcome mid = damped_newton(ops, {p.rho1, p.rho2, tm}, *warm, cfg.inner);
      if (mid.converged) {
        outcome = damped_newton(ops, pt, mid.u, cfg.inner);
        step.bisected = true;
      }
    }
    SolveReport& r = step.report;
    r.u = outcome.u;
    r.energy = outcome.energy;
    r.residual_norm = outcome.residual_norm;
    r.iterations = outcome.iterations;
    r.converged = outcome.converged;
    r.trivial_flag = is_trivial(ops, outcome.u);
    r.regime = "supercritical";
    r.method = "t_continuation";
    r.t = t;
    r.lambda_bar = cone.lambda_bar;
    r.level_L = cone.level_L;
    r.cone_boundary_max = cone.boundary_max;
    r.level_reduced = cone.level_reduced;
    r.iterates = std::move(outcome.iterates);
    const bool ok = outcome.converged;
    if (ok) {
      warm = r.u;
      warm_t = t;
    }
    chain.push_back(std::move(step));
    if (!ok) break;
  }
  return chain;
}

double energy_identity_residual(const DiscreteOperators& ops, const MfeParams& p, const Field& u,
                                double t_a, double t_b) {
  const double ea = energy(ops, {p.rho1, p.rho2, t_a}, u);
  const double eb = energy(ops, {p.rho1, p.rho2, t_b}, u);
  const double d = ops.dirichlet_energy(u);
  return std::abs(ea / t_a - eb / t_b - 0.5 * d * (1.0 / t_a - 1.0 / t_b));
}

namespace {

struct SidePoints {
  std::vector<ConcentrationPoint> points;
};

SidePoints detect_side(const DiscreteOperators& ops, double rho, int sign,
                       const std::vector<Field>& family, const std::vector<double>& params,
                       double r_mass, const ClassifyOptions& opts) {
  SidePoints side;
  if (rho <= 0.0) return side;
  const SurfaceMesh& mesh = ops.mesh();
  const int nv = mesh.vertex_count();
  const int n = static_cast<int>(family.size());

  std::vector<Field> v;
  v.reserve(static_cast<size_t>(n));
  for (const Field& u : family) v.push_back(centered(ops, sign * u));

  const Field& last = v.back();
  const double spread = ops.mass_norm(last);
  const double threshold = opts.peak_sigmas * spread;

  std::vector<int> candidates;
  const auto& adj = mesh.adjacency();
  for (int i = 0; i < nv; ++i) {
    if (last[i] <= threshold) continue;
    bool peak = true;
    for (const auto& [w, len] : adj[static_cast<size_t>(i)])
      if (last[w] > last[i]) {
        peak = false;
        break;
      }
    if (peak) candidates.push_back(i);
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [&](int a, int b) { return last[a] > last[b]; });

  std::vector<int> kept;
  for (int c : candidates) {
    bool fresh = true;
    for (int k : kept)
      if (mesh.distance(k, c) <= r_mass) {
        fresh = false;
        break;
      }
    if (fresh) kept.push_back(c);
  }

  const Eigen::VectorXd& m = ops.mass();
  const int window = std::min(opts.growth_window, n);
  for (int x : kept) {
    std::vector<int> ball = mesh.ball(x, r_mass);
    Eigen::VectorXd wts(static_cast<int>(ball.size()));
    for (size_t bi = 0; bi < ball.size(); ++bi)
      wts[static_cast<int>(bi)] = m[ball[bi]];

    // Peak growth across the trailing window, tracked inside the ball so the
    // peak may drift by a few vertices.
    std::vector<double> heights;
    for (int j = n - window; j < n; ++j) {
      double hmax = -std::numeric_limits<double>::infinity();
      for (int b : ball) hmax = std::max(hmax, v[static_cast<size_t>(j)][b]);
      heights.push_back(hmax);
    }
    bool growth = heights.back() - heights.front() >= opts.growth_min_total;
    for (size_t j = 1; j < heights.size() && growth; ++j)
      if (heights[j] < heights[j - 1] - 1e-9) growth = false;
    if (!growth) continue;

    // Local masses over the whole family, extrapolated in 1 / param^2.
    std::vector<double> masses;
    for (int j = 0; j < n; ++j) {
      Eigen::VectorXd vals(static_cast<int>(ball.size()));
      for (size_t bi = 0; bi < ball.size(); ++bi)
        vals[static_cast<int>(bi)] = v[static_cast<size_t>(j)][ball[bi]];
      const double frac =
          std::exp(log_sum_exp(vals, wts) - ops.log_int_exp(v[static_cast<size_t>(j)]));
      masses.push_back(rho * frac);
    }
    if (masses.back() < opts.mass_floor) continue;

    const int tail = std::min(n, 5);
    std::vector<double> xs, ys;
    for (int j = n - tail; j < n; ++j) {
      xs.push_back(1.0 / (params[static_cast<size_t>(j)] * params[static_cast<size_t>(j)]));
      ys.push_back(masses[static_cast<size_t>(j)]);
    }
    double extrapolated = linear_fit(xs, ys).intercept;
    extrapolated = std::min(std::max(extrapolated, 0.0), rho);

    ConcentrationPoint pt;
    pt.vertex = x;
    pt.mass = extrapolated;
    pt.mass_last = masses.back();
    pt.eight_pi_deviation = extrapolated - k8Pi;
    side.points.push_back(pt);
  }
  return side;
}

}  // namespace

ConcentrationReport classify_concentration(const DiscreteOperators& ops, const MfeParams& params,
                                           const std::vector<Field>& family,
                                           const std::vector<double>& family_params,
                                           const ClassifyOptions& opts) {
  if (family.size() < 3) throw std::invalid_argument("family needs at least 3 members");
  if (family.size() != family_params.size())
    throw std::invalid_argument("family and parameter counts differ");
  const int nv = ops.mesh().vertex_count();
  for (const Field& u : family) {
    if (u.size() != nv) throw std::invalid_argument("family member size mismatch");
    if (!u.allFinite()) throw std::invalid_argument("family member has non-finite entries");
  }
  for (size_t j = 0; j < family_params.size(); ++j) {
    if (!(family_params[j] > 0.0))
      throw std::invalid_argument("family parameters must be positive");
    if (j > 0 && family_params[j] <= family_params[j - 1])
      throw std::invalid_argument("family parameters must be strictly increasing");
  }

  ConcentrationReport rep;
  rep.r_mass = opts.r_mass_factor * ops.mesh().mean_edge_length();
  rep.points_pos =
      detect_side(ops, params.rho1, +1, family, family_params, rep.r_mass, opts).points;
  rep.points_neg =
      detect_side(ops, params.rho2, -1, family, family_params, rep.r_mass, opts).points;

  for (const auto& a : rep.points_pos) {
    for (const auto& b : rep.points_neg) {
      if (ops.mesh().distance(a.vertex, b.vertex) <= rep.r_mass) {
        QuantizationRow row;
        row.vertex_pos = a.vertex;
        row.vertex_neg = b.vertex;
        row.m1 = a.mass;
        row.m2 = b.mass;
        row.residual = (a.mass - b.mass) * (a.mass - b.mass) - k8Pi * (a.mass + b.mass);
        rep.quantization.push_back(row);
      }
    }
  }

  const bool has_pos = !rep.points_pos.empty();
  const bool has_neg = !rep.points_neg.empty();
  if (has_pos && has_neg)
    rep.alternative = "two_sided";
  else if (has_pos || has_neg)
    rep.alternative = "one_sided";
  else
    rep.alternative = "compactness";
  return rep;
}

std::vector<Field> synthetic_family(const DiscreteOperators& ops, const std::string& kind,
                                    const std::vector<int>& vertices,
                                    const std::vector<double>& lambdas, std::uint64_t seed) {
  const SurfaceMesh& mesh = ops.mesh();
  if (lambdas.empty()) throw std::invalid_argument("family needs a lambda grid");
  std::vector<Field> family;
  if (kind == "one_sided") {
    if (vertices.empty()) throw std::invalid_argument("one_sided family needs a vertex");
    for (double lambda : lambdas)
      family.push_back(
          normalize_exp(ops, test_function(mesh, BarycenterMeasure::single(vertices[0]), lambda)));
  } else if (kind == "two_sided") {
    if (vertices.size() < 2)
      throw std::invalid_argument("two_sided family needs two vertices");
    for (double lambda : lambdas) {
      Field u = test_function(mesh, BarycenterMeasure::single(vertices[0]), lambda) -
                test_function(mesh, BarycenterMeasure::single(vertices[1]), lambda);
      family.push_back(normalize_exp(ops, u));
    }
  } else if (kind == "bounded") {
    EigenPairs basis = ops.low_eigenpairs(std::min(13, mesh.vertex_count() - 1));
    Rng rng(seed);
    Field u = random_eigen_field(ops, basis, rng, 0.5);
    for (size_t j = 0; j < lambdas.size(); ++j) family.push_back(normalize_exp(ops, u));
  } else {
    throw std::invalid_argument("unknown synthetic family kind: " + kind);
  }
  return family;
}

}  // namespace mfe
