#include "mfe/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <stdexcept>
#include <vector>

#include "mfe/util.hpp"

namespace mfe {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Successive shortest paths with potentials on the bipartite transportation
// graph. Sources have no incoming arcs except flow reversals, so Dijkstra
// alternates source -> sink (forward, always available) and sink -> source
// (backward, present where flow sits).
TransportResult solve_ssp(const std::vector<Eigen::VectorXd>& cost, Eigen::VectorXd supply,
                          Eigen::VectorXd demand) {
  const int n = static_cast<int>(supply.size());
  const int k = static_cast<int>(demand.size());
  const double total = supply.sum();
  const double mass_tol = 1e-14 * std::max(1.0, total);

  Eigen::MatrixXd flow = Eigen::MatrixXd::Zero(n, k);
  Eigen::VectorXd pot_src = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd pot_snk = Eigen::VectorXd::Zero(k);

  // Node ids: 0..n-1 sources, n..n+k-1 sinks.
  std::vector<double> dist(static_cast<std::size_t>(n + k));
  std::vector<int> parent(static_cast<std::size_t>(n + k));
  struct Entry {
    double d;
    int v;
    bool operator>(const Entry& o) const { return d > o.d; }
  };

  int augmentations = 0;
  for (int src = 0; src < n; ++src) {
    while (supply[src] > mass_tol) {
      std::fill(dist.begin(), dist.end(), kInf);
      std::fill(parent.begin(), parent.end(), -1);
      std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue;
      dist[src] = 0.0;
      queue.push({0.0, src});
      int target = -1;
      while (!queue.empty()) {
        auto [d, v] = queue.top();
        queue.pop();
        if (d > dist[static_cast<std::size_t>(v)]) continue;
        if (v >= n && demand[v - n] > mass_tol) {
          target = v;
          break;
        }
        if (v < n) {
          for (int j = 0; j < k; ++j) {
            const double rc = cost[static_cast<std::size_t>(j)][v] - pot_src[v] + pot_snk[j];
            const double nd = d + std::max(0.0, rc);
            if (nd < dist[static_cast<std::size_t>(n + j)]) {
              dist[static_cast<std::size_t>(n + j)] = nd;
              parent[static_cast<std::size_t>(n + j)] = v;
              queue.push({nd, n + j});
            }
          }
        } else {
          const int j = v - n;
          for (int i = 0; i < n; ++i) {
            if (flow(i, j) <= mass_tol) continue;
            const double rc = -(cost[static_cast<std::size_t>(j)][i] - pot_src[i] + pot_snk[j]);
            const double nd = d + std::max(0.0, rc);
            if (nd < dist[static_cast<std::size_t>(i)]) {
              dist[static_cast<std::size_t>(i)] = nd;
              parent[static_cast<std::size_t>(i)] = v;
              queue.push({nd, i});
            }
          }
        }
      }
      if (target < 0) throw std::runtime_error("transport: no augmenting path (unbalanced problem?)");

      const double dt = dist[static_cast<std::size_t>(target)];
      for (int i = 0; i < n; ++i) pot_src[i] -= std::min(dist[static_cast<std::size_t>(i)], dt);
      for (int j = 0; j < k; ++j) pot_snk[j] -= std::min(dist[static_cast<std::size_t>(n + j)], dt);

      // Bottleneck along the alternating path.
      double push = std::min(supply[src], demand[target - n]);
      for (int v = target; parent[static_cast<std::size_t>(v)] != -1; v = parent[static_cast<std::size_t>(v)]) {
        const int u = parent[static_cast<std::size_t>(v)];
        if (u >= n) push = std::min(push, flow(v, u - n));  // backward arc u(sink) -> v(source)
      }
      for (int v = target; parent[static_cast<std::size_t>(v)] != -1; v = parent[static_cast<std::size_t>(v)]) {
        const int u = parent[static_cast<std::size_t>(v)];
        if (u < n)
          flow(u, v - n) += push;
        else
          flow(v, u - n) -= push;
      }
      supply[src] -= push;
      demand[target - n] -= push;
      if (supply[src] < mass_tol) supply[src] = 0.0;
      if (demand[target - n] < mass_tol) demand[target - n] = 0.0;
      ++augmentations;
      if (augmentations > 50 * (n + k))
        throw std::runtime_error("transport: augmentation budget exceeded");
    }
  }

  std::vector<double> terms;
  terms.reserve(static_cast<std::size_t>(n) * k);
  for (int j = 0; j < k; ++j)
    for (int i = 0; i < n; ++i)
      if (flow(i, j) > 0.0) terms.push_back(flow(i, j) * cost[static_cast<std::size_t>(j)][i]);
  TransportResult out;
  out.cost = kahan_sum(terms.data(), terms.size());
  out.exact = true;
  out.iterations = augmentations;
  out.method = "ssp";
  return out;
}

TransportResult solve_sinkhorn(const std::vector<Eigen::VectorXd>& cost, const Eigen::VectorXd& supply,
                               const Eigen::VectorXd& demand, double eps, int max_iter) {
  const int n = static_cast<int>(supply.size());
  const int k = static_cast<int>(demand.size());
  if (!(eps > 0.0)) throw std::invalid_argument("transport: entropic path needs eps > 0");

  // Work on positive-supply rows only; empty rows carry no mass.
  std::vector<int> rows;
  rows.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    if (supply[i] > 0.0) rows.push_back(i);
  const int na = static_cast<int>(rows.size());

  Eigen::MatrixXd c(na, k);
  Eigen::VectorXd a(na);
  for (int r = 0; r < na; ++r) {
    a[r] = supply[rows[static_cast<std::size_t>(r)]];
    for (int j = 0; j < k; ++j) c(r, j) = cost[static_cast<std::size_t>(j)][rows[static_cast<std::size_t>(r)]];
  }
  const Eigen::VectorXd log_a = a.array().log();
  const Eigen::VectorXd log_b = demand.array().max(1e-300).log();

  Eigen::VectorXd f = Eigen::VectorXd::Zero(na), g = Eigen::VectorXd::Zero(k);
  auto lse_rows = [&](const Eigen::VectorXd& gv) {
    Eigen::VectorXd out(na);
    for (int r = 0; r < na; ++r) {
      Eigen::VectorXd z(k);
      for (int j = 0; j < k; ++j) z[j] = (gv[j] - c(r, j)) / eps;
      const double m = z.maxCoeff();
      out[r] = m + std::log((z.array() - m).exp().sum());
    }
    return out;
  };
  auto lse_cols = [&](const Eigen::VectorXd& fv) {
    Eigen::VectorXd out(k);
    for (int j = 0; j < k; ++j) {
      Eigen::VectorXd z(na);
      for (int r = 0; r < na; ++r) z[r] = (fv[r] - c(r, j)) / eps;
      const double m = z.maxCoeff();
      out[j] = m + std::log((z.array() - m).exp().sum());
    }
    return out;
  };

  int it = 0;
  for (; it < max_iter; ++it) {
    f = eps * (log_a - lse_rows(g));
    g = eps * (log_b - lse_cols(f));
  }

  Eigen::MatrixXd plan(na, k);
  for (int r = 0; r < na; ++r)
    for (int j = 0; j < k; ++j) plan(r, j) = std::exp((f[r] + g[j] - c(r, j)) / eps);

  // Feasibility rounding: scale rows/cols under their marginals, then patch
  // the leftover with a rank-one correction. Keeps the plan admissible.
  for (int r = 0; r < na; ++r) {
    const double rs = plan.row(r).sum();
    if (rs > a[r] && rs > 0.0) plan.row(r) *= a[r] / rs;
  }
  for (int j = 0; j < k; ++j) {
    const double cs = plan.col(j).sum();
    if (cs > demand[j] && cs > 0.0) plan.col(j) *= demand[j] / cs;
  }
  Eigen::VectorXd err_a = a - plan.rowwise().sum();
  Eigen::VectorXd err_b = demand - plan.colwise().sum().transpose();
  const double left = err_a.sum();
  if (left > 1e-300) plan += (err_a / left) * err_b.transpose();

  TransportResult out;
  out.cost = (plan.array() * c.array()).sum();
  out.exact = false;
  out.iterations = it;
  out.method = "sinkhorn";
  return out;
}

}  // namespace

TransportResult transport_cost(const std::vector<Eigen::VectorXd>& cost_columns,
                               const Eigen::VectorXd& supply, const Eigen::VectorXd& demand,
                               bool exact, double sinkhorn_eps, int sinkhorn_iters) {
  const int n = static_cast<int>(supply.size());
  const int k = static_cast<int>(demand.size());
  if (k < 1 || static_cast<int>(cost_columns.size()) != k)
    throw std::invalid_argument("transport: need one cost column per sink");
  for (const auto& col : cost_columns)
    if (static_cast<int>(col.size()) != n) throw std::invalid_argument("transport: cost column size mismatch");
  if (supply.minCoeff() < -1e-12 || demand.minCoeff() < -1e-12)
    throw std::invalid_argument("transport: negative mass");
  const double sa = supply.sum(), sb = demand.sum();
  if (std::abs(sa - sb) > 1e-9 * std::max(1.0, sa))
    throw std::invalid_argument("transport: unbalanced supply and demand");

  Eigen::VectorXd a = supply.cwiseMax(0.0);
  Eigen::VectorXd b = demand.cwiseMax(0.0) * (a.sum() / std::max(1e-300, demand.cwiseMax(0.0).sum()));

  if (exact) return solve_ssp(cost_columns, a, b);
  return solve_sinkhorn(cost_columns, a, b, sinkhorn_eps, sinkhorn_iters);
}

}  // namespace mfe
