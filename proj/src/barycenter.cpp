#include "mfe/barycenter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include "mfe/util.hpp"

namespace mfe {

namespace {

constexpr double kPi = 3.14159265358979323846;

}  // namespace

BarycenterMeasure::BarycenterMeasure(std::vector<BarycenterAtom> atoms) {
  if (atoms.empty()) throw std::invalid_argument("barycenter measure needs at least one atom");
  std::map<int, double> merged;
  for (const auto& a : atoms) {
    if (a.vertex < 0) throw std::invalid_argument("barycenter atom has negative vertex index");
    if (!std::isfinite(a.weight) || a.weight < -1e-12)
      throw std::invalid_argument("barycenter atom weight must be nonnegative");
    merged[a.vertex] += std::max(0.0, a.weight);
  }
  double total = 0.0;
  for (const auto& [v, w] : merged) total += w;
  if (std::abs(total - 1.0) > 1e-12)
    throw std::invalid_argument("barycenter weights must sum to 1");
  for (const auto& [v, w] : merged)
    if (w > 0.0) atoms_.push_back({w, v});
  if (atoms_.empty()) throw std::invalid_argument("barycenter measure has no positive atom");
}

BarycenterMeasure BarycenterMeasure::single(int vertex) {
  return BarycenterMeasure({{1.0, vertex}});
}

BarycenterMeasure BarycenterMeasure::normalized(std::vector<BarycenterAtom> atoms) {
  double total = 0.0;
  for (const auto& a : atoms) total += std::max(0.0, a.weight);
  if (!(total > 0.0)) throw std::invalid_argument("cannot normalize a zero measure");
  for (auto& a : atoms) a.weight = std::max(0.0, a.weight) / total;
  return BarycenterMeasure(std::move(atoms));
}

double pair_with(const BarycenterMeasure& sigma, const Field& phi) {
  std::vector<double> terms;
  terms.reserve(sigma.size());
  for (const auto& a : sigma.atoms()) {
    if (a.vertex >= phi.size()) throw std::invalid_argument("atom vertex outside field range");
    terms.push_back(a.weight * phi[a.vertex]);
  }
  return kahan_sum(terms);
}

Field test_function(const SurfaceMesh& mesh, const BarycenterMeasure& sigma, double lambda) {
  if (!(lambda >= 1.0)) throw std::invalid_argument("test_function requires lambda >= 1");
  const int nv = mesh.vertex_count();
  const int k = sigma.size();
  Eigen::MatrixXd dist(nv, k);
  Eigen::VectorXd logw(k);
  for (int j = 0; j < k; ++j) {
    const auto& a = sigma.atoms()[static_cast<size_t>(j)];
    if (a.vertex >= nv) throw std::invalid_argument("atom vertex outside mesh");
    dist.col(j) = mesh.distances_from(a.vertex);
    logw[j] = std::log(a.weight);
  }
  const double two_log_lambda = 2.0 * std::log(lambda);
  Field phi(nv);
  for (int i = 0; i < nv; ++i) {
    // log sum_j exp(log t_j + 2 log lambda - 2 log(1 + lambda^2 d^2)) - log pi
    double best = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd expo(k);
    for (int j = 0; j < k; ++j) {
      const double d = dist(i, j);
      expo[j] = logw[j] + two_log_lambda - 2.0 * std::log1p(lambda * lambda * d * d);
      best = std::max(best, expo[j]);
    }
    double acc = 0.0;
    for (int j = 0; j < k; ++j) acc += std::exp(expo[j] - best);
    phi[i] = best + std::log(acc) - std::log(kPi);
  }
  return phi;
}

BarycenterMeasure project_to_barycenters(const SurfaceMesh& mesh, const Field& f, int k,
                                         double r_cluster) {
  const int nv = mesh.vertex_count();
  if (f.size() != nv) throw std::invalid_argument("field size does not match mesh");
  if (k < 1) throw std::invalid_argument("projection needs k >= 1");
  if (r_cluster <= 0.0) r_cluster = 0.05 * mesh.diameter();

  Eigen::VectorXd remaining = mesh.vertex_areas().cwiseProduct(f.cwiseMax(0.0));
  std::vector<BarycenterAtom> atoms;
  for (int round = 0; round < k; ++round) {
    // Scatter each vertex's remaining mass into all balls containing it.
    Eigen::VectorXd ball_mass = Eigen::VectorXd::Zero(nv);
    for (int w = 0; w < nv; ++w) {
      if (remaining[w] <= 0.0) continue;
      for (int v : mesh.ball(w, r_cluster)) ball_mass[v] += remaining[w];
    }
    int best = 0;
    for (int v = 1; v < nv; ++v)
      if (ball_mass[v] > ball_mass[best]) best = v;
    if (ball_mass[best] <= 0.0) break;  // mass exhausted
    atoms.push_back({ball_mass[best], best});
    for (int v : mesh.ball(best, r_cluster)) remaining[v] = 0.0;
  }
  if (atoms.empty()) throw std::invalid_argument("field has no positive mass to project");
  return BarycenterMeasure::normalized(std::move(atoms));
}

namespace {

// Non-strict local maxima of f over the vertex adjacency, sorted by
// descending value (ties to the lower index).
std::vector<int> local_maxima(const SurfaceMesh& mesh, const Field& f) {
  const auto& adj = mesh.adjacency();
  std::vector<int> peaks;
  for (int v = 0; v < mesh.vertex_count(); ++v) {
    bool is_peak = true;
    for (const auto& [w, len] : adj[static_cast<size_t>(v)])
      if (f[w] > f[v]) {
        is_peak = false;
        break;
      }
    if (is_peak) peaks.push_back(v);
  }
  std::stable_sort(peaks.begin(), peaks.end(), [&](int a, int b) { return f[a] > f[b]; });
  return peaks;
}

// Enumerates k-subsets of {0,..,n-1} in lexicographic order, up to a cap.
std::vector<std::vector<int>> k_subsets(int n, int k, int cap) {
  std::vector<std::vector<int>> out;
  if (k > n) return out;
  std::vector<int> idx(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) idx[static_cast<size_t>(i)] = i;
  while (static_cast<int>(out.size()) < cap) {
    out.push_back(idx);
    int pos = k - 1;
    while (pos >= 0 && idx[static_cast<size_t>(pos)] == n - k + pos) --pos;
    if (pos < 0) break;
    ++idx[static_cast<size_t>(pos)];
    for (int i = pos + 1; i < k; ++i)
      idx[static_cast<size_t>(i)] = idx[static_cast<size_t>(i - 1)] + 1;
  }
  return out;
}

struct DistanceCache {
  const SurfaceMesh& mesh;
  std::map<int, Eigen::VectorXd> columns;
  const Eigen::VectorXd& from(int v) {
    auto it = columns.find(v);
    if (it == columns.end()) it = columns.emplace(v, mesh.distances_from(v)).first;
    return it->second;
  }
};

}  // namespace

DistReport dist_to_barycenters(const DiscreteOperators& ops, const Field& f, int k,
                               const DistOptions& opts) {
  const SurfaceMesh& mesh = ops.mesh();
  const int nv = mesh.vertex_count();
  if (f.size() != nv) throw std::invalid_argument("field size does not match mesh");
  if (k < 1) throw std::invalid_argument("dist_to_barycenters needs k >= 1");
  if (!f.allFinite()) throw std::invalid_argument("field has non-finite entries");
  if (f.minCoeff() < -1e-9) throw std::invalid_argument("density must be nonnegative");

  Eigen::VectorXd supply = mesh.vertex_areas().cwiseProduct(f.cwiseMax(0.0));
  const double total = kahan_sum(supply);
  if (std::abs(total - 1.0) > 1e-6)
    throw std::invalid_argument("density must integrate to 1");
  supply /= total;

  // Candidate atom sites: local maxima (capped) plus projection atoms.
  std::vector<int> peaks = local_maxima(mesh, f);
  if (static_cast<int>(peaks.size()) > opts.max_candidate_atoms)
    peaks.resize(static_cast<size_t>(opts.max_candidate_atoms));
  BarycenterMeasure proj = project_to_barycenters(mesh, f, k);
  std::vector<int> sites = peaks;
  for (const auto& a : proj.atoms())
    if (std::find(sites.begin(), sites.end(), a.vertex) == sites.end()) sites.push_back(a.vertex);
  const int ns = static_cast<int>(sites.size());

  DistanceCache cache{mesh, {}};

  // Free-weight optimum over a fixed atom set: every unit of mass moves to
  // its nearest atom, which is simultaneously the optimal coupling and the
  // optimal weight assignment, so the cost is exact.
  double upper = std::numeric_limits<double>::infinity();
  std::optional<BarycenterMeasure> argmin;
  std::string method = "nearest_assignment";
  bool exact = true;

  for (const auto& subset : k_subsets(ns, std::min(k, ns), opts.max_sigma_candidates)) {
    std::vector<double> cost_terms;
    cost_terms.reserve(static_cast<size_t>(nv));
    std::vector<double> weights(subset.size(), 0.0);
    std::vector<const Eigen::VectorXd*> cols;
    cols.reserve(subset.size());
    for (int s : subset) cols.push_back(&cache.from(sites[static_cast<size_t>(s)]));
    for (int i = 0; i < nv; ++i) {
      if (supply[i] <= 0.0) continue;
      int best_j = 0;
      double best_d = (*cols[0])[i];
      for (size_t j = 1; j < cols.size(); ++j)
        if ((*cols[j])[i] < best_d) {
          best_d = (*cols[j])[i];
          best_j = static_cast<int>(j);
        }
      cost_terms.push_back(supply[i] * best_d);
      weights[static_cast<size_t>(best_j)] += supply[i];
    }
    const double cost = kahan_sum(cost_terms);
    if (cost < upper) {
      std::vector<BarycenterAtom> atoms;
      for (size_t j = 0; j < subset.size(); ++j)
        if (weights[j] > 0.0)
          atoms.push_back({weights[j], sites[static_cast<size_t>(subset[j])]});
      upper = cost;
      argmin = BarycenterMeasure::normalized(std::move(atoms));
      method = "nearest_assignment";
      exact = true;
    }
  }

  // The projection measure has fixed weights, so score it with a real
  // transport solve (exact on small meshes, entropic upper bound above).
  {
    std::vector<Eigen::VectorXd> cost_cols;
    Eigen::VectorXd demand(proj.size());
    for (int j = 0; j < proj.size(); ++j) {
      cost_cols.push_back(cache.from(proj.atoms()[static_cast<size_t>(j)].vertex));
      demand[j] = proj.atoms()[static_cast<size_t>(j)].weight;
    }
    const bool use_exact = nv <= opts.exact_vertex_limit;
    TransportResult tr = transport_cost(cost_cols, supply, demand, use_exact,
                                        opts.sinkhorn_eps_factor * mesh.diameter(),
                                        opts.sinkhorn_iters);
    if (tr.cost < upper) {
      upper = tr.cost;
      argmin = proj;
      method = tr.method;
      exact = tr.exact;
    }
  }

  // Dual lower bound from a dictionary of normalized test functions.
  double lower = 0.0;
  const BarycenterMeasure& target = *argmin;
  std::vector<Field> dictionary;
  EigenPairs local_basis;
  const EigenPairs* basis = opts.dictionary_basis;
  if (basis == nullptr && opts.eigen_dictionary > 0) {
    local_basis = ops.low_eigenpairs(std::min(opts.eigen_dictionary + 1, nv - 1));
    basis = &local_basis;
  }
  if (basis != nullptr)
    for (int j = 1; j < basis->vectors.cols(); ++j) dictionary.push_back(basis->vectors.col(j));
  const double diam = mesh.diameter();
  for (int site : sites) {
    const Eigen::VectorXd& d = cache.from(site);
    for (double frac : {0.05, 0.15, 0.4}) {
      const double r = frac * diam;
      dictionary.push_back((1.0 - d.array() / r).cwiseMax(0.0).matrix());
    }
  }

  for (const Field& phi : dictionary) {
    // C1 normalization plus the per-atom Lipschitz ratio, so that the scaled
    // element is admissible for the dual problem against `target`.
    double grad_max = 0.0;
    for (int fct = 0; fct < mesh.face_count(); ++fct)
      grad_max = std::max(grad_max, ops.face_gradient_norm(phi, fct));
    double scale = phi.cwiseAbs().maxCoeff() + grad_max;
    for (const auto& a : target.atoms()) {
      const Eigen::VectorXd& d = cache.from(a.vertex);
      for (int i = 0; i < nv; ++i) {
        if (i == a.vertex || d[i] <= 0.0) continue;
        scale = std::max(scale, std::abs(phi[i] - phi[a.vertex]) / d[i]);
      }
    }
    if (!(scale > 0.0)) continue;
    const double value = std::abs(supply.dot(phi) - pair_with(target, phi)) / scale;
    lower = std::max(lower, value);
  }
  lower = std::min(lower, upper);

  DistReport rep;
  rep.lower = lower;
  rep.upper = upper;
  rep.argmin = argmin;
  rep.transport_method = method;
  rep.exact_transport = exact;
  return rep;
}

SlopeReport asymptotic_slopes(const DiscreteOperators& ops, const BarycenterMeasure& sigma,
                              const std::vector<double>& lambda_grid, const SlopeOptions& opts) {
  const SurfaceMesh& mesh = ops.mesh();
  if (lambda_grid.empty()) throw std::invalid_argument("lambda grid is empty");
  std::vector<double> grid = lambda_grid;
  std::sort(grid.begin(), grid.end());
  if (!(grid.front() >= 1.0)) throw std::invalid_argument("lambda grid must start at >= 1");
  if (grid.size() < 2 || grid.back() < 10.0 * grid.front())
    throw std::invalid_argument("lambda grid must span at least one decade");
  const double h = mesh.mean_edge_length();
  if (grid.back() * h > opts.resolution_guard)
    throw ResolutionGuardError("bubble under-resolved: lambda_max * mean_edge = " +
                               std::to_string(grid.back() * h) + " exceeds guard " +
                               std::to_string(opts.resolution_guard));

  // Per-face distance to the nearest atom, minimized over corners.
  const int nf = mesh.face_count();
  std::vector<Eigen::VectorXd> atom_dist;
  for (const auto& a : sigma.atoms()) atom_dist.push_back(mesh.distances_from(a.vertex));
  Eigen::VectorXd face_dmin(nf);
  for (int f = 0; f < nf; ++f) {
    double dm = std::numeric_limits<double>::infinity();
    for (int c = 0; c < 3; ++c)
      for (const auto& col : atom_dist) dm = std::min(dm, col[mesh.faces()[static_cast<size_t>(f)][static_cast<size_t>(c)]]);
    face_dmin[f] = dm;
  }

  SlopeReport rep;
  rep.k = sigma.size();
  std::vector<double> logl, means, negs, dirs;
  for (double lambda : grid) {
    Field phi = test_function(mesh, sigma, lambda);
    SlopeRow row;
    row.lambda = lambda;
    row.mean_phi = ops.mean_value(phi);
    row.log_int_exp_pos = ops.log_int_exp(phi);
    row.log_int_exp_neg = ops.log_int_exp(-phi);
    row.dirichlet = ops.dirichlet_energy(phi);
    const double tol = 1.0 + opts.mesh_tol;
    for (int f = 0; f < nf; ++f) {
      const double g = ops.face_gradient_norm(phi, f);
      row.max_grad_over_lambda = std::max(row.max_grad_over_lambda, g / lambda);
      row.max_grad_times_dmin = std::max(row.max_grad_times_dmin, g * face_dmin[f]);
      if (g > opts.c_pointwise * lambda * tol) row.grad_bounds_ok = false;
      if (face_dmin[f] > 0.0 && g > 4.0 * tol / face_dmin[f]) row.grad_bounds_ok = false;
    }
    rep.grad_bounds_ok = rep.grad_bounds_ok && row.grad_bounds_ok;
    rep.rows.push_back(row);
    logl.push_back(std::log(lambda));
    means.push_back(row.mean_phi);
    negs.push_back(row.log_int_exp_neg);
    dirs.push_back(row.dirichlet);
  }
  rep.mean_slope = linear_fit(logl, means).slope;
  rep.neg_exp_slope = linear_fit(logl, negs).slope;
  rep.dirichlet_coeff = linear_fit(logl, dirs).slope;
  double pos_min = rep.rows.front().log_int_exp_pos, pos_max = pos_min;
  for (const auto& row : rep.rows) {
    pos_min = std::min(pos_min, row.log_int_exp_pos);
    pos_max = std::max(pos_max, row.log_int_exp_pos);
  }
  rep.pos_exp_spread = pos_max - pos_min;
  return rep;
}

}  // namespace mfe
