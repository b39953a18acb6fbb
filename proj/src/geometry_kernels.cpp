#include "pdssl/geometry_kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace pdssl {
namespace {

void require_same_size(const PointCloud& p, const PointCloud& q, const char* op) {
  if (p.size() != q.size())
    throw Error(std::string(op) + ": size mismatch (" + std::to_string(p.size()) + " vs " +
                std::to_string(q.size()) + ")");
  if (p.empty()) throw Error(std::string(op) + ": empty clouds");
}

// Row-major n x n matrix of pairwise distances |P_i - Q_j|.
std::vector<double> distance_matrix(const PointCloud& p, const PointCloud& q, double& max_entry) {
  const std::size_t n = p.size();
  std::vector<double> c(n * n);
  max_entry = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3& pi = p[i];
    double* row = c.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = (pi - q[j]).norm();
      max_entry = std::max(max_entry, row[j]);
    }
  }
  return c;
}

}  // namespace

double assignment_cost(const PointCloud& p, const PointCloud& q, std::span<const std::size_t> mapping) {
  double total = 0.0;
  for (std::size_t i = 0; i < mapping.size(); ++i) total += (p[i] - q[mapping[i]]).norm();
  return mapping.empty() ? 0.0 : total / static_cast<double>(mapping.size());
}

Assignment emd_exact(const PointCloud& p, const PointCloud& q) {
  require_same_size(p, q, "emd_exact");
  const std::size_t n = p.size();
  double unused = 0.0;
  const std::vector<double> c = distance_matrix(p, q, unused);
  constexpr double inf = std::numeric_limits<double>::infinity();

  // Shortest augmenting path Hungarian method with row/column potentials;
  // arrays are 1-based, column 0 is the virtual source.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> owner(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    owner[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = owner[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = c[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) minv[j] = cur, way[j] = j0;
        if (minv[j] < delta) delta = minv[j], j1 = j;
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[owner[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (owner[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      owner[j0] = owner[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  Assignment a;
  a.mapping.resize(n);
  for (std::size_t j = 1; j <= n; ++j) a.mapping[owner[j] - 1] = j - 1;
  a.cost = assignment_cost(p, q, a.mapping);
  return a;
}

Assignment emd_auction(const PointCloud& p, const PointCloud& q, const AuctionParams& params) {
  require_same_size(p, q, "emd_auction");
  if (!(params.eps_scale > 1.0)) throw Error("emd_auction: eps_scale must exceed 1");
  const std::size_t n = p.size();
  double diameter = 0.0;
  const std::vector<double> c = distance_matrix(p, q, diameter);

  Assignment a;
  a.mapping.resize(n);
  if (n == 1 || diameter == 0.0) {
    std::iota(a.mapping.begin(), a.mapping.end(), std::size_t{0});
    a.cost = assignment_cost(p, q, a.mapping);
    return a;
  }

  const double eps_final = params.eps_final > 0.0 ? params.eps_final : params.eps_final_relative * diameter;
  if (!(eps_final > 0.0)) throw Error("emd_auction: eps_final must be positive");

  constexpr std::size_t none = std::numeric_limits<std::size_t>::max();
  std::vector<double> price(n, 0.0);
  std::vector<std::size_t> owner(n), assigned(n);
  std::vector<std::size_t> queue, displaced;
  queue.reserve(n);
  displaced.reserve(n);
  std::size_t rounds = 0;

  double eps = std::max(diameter / params.eps_scale, eps_final);
  for (;;) {
    std::fill(owner.begin(), owner.end(), none);
    std::fill(assigned.begin(), assigned.end(), none);
    queue.resize(n);
    std::iota(queue.begin(), queue.end(), std::size_t{0});

    while (!queue.empty()) {
      if (++rounds > params.max_rounds) {
        std::ostringstream msg;
        msg << "auction stalled after " << params.max_rounds << " rounds at eps=" << eps;
        throw Error(msg.str());
      }
      displaced.clear();
      for (const std::size_t i : queue) {
        // Best and second-best net value -c_ij - price_j over all objects.
        const double* row = c.data() + i * n;
        double best = -std::numeric_limits<double>::infinity(), second = best;
        std::size_t best_j = 0;
        for (std::size_t j = 0; j < n; ++j) {
          const double value = -row[j] - price[j];
          if (value > best) {
            second = best;
            best = value;
            best_j = j;
          } else if (value > second) {
            second = value;
          }
        }
        price[best_j] += best - second + eps;
        if (owner[best_j] != none) {
          assigned[owner[best_j]] = none;
          displaced.push_back(owner[best_j]);
        }
        owner[best_j] = i;
        assigned[i] = best_j;
      }
      queue.swap(displaced);
    }
    if (eps <= eps_final) break;
    eps = std::max(eps / params.eps_scale, eps_final);
  }

  a.mapping = assigned;
  a.cost = assignment_cost(p, q, a.mapping);
  return a;
}

std::vector<Vec3> emd_gradient(const PointCloud& p, const PointCloud& q, const Assignment& a) {
  const std::size_t n = p.size();
  if (a.mapping.size() != n || q.size() != n) throw Error("emd_gradient: assignment does not match clouds");
  std::vector<Vec3> grad(n, Vec3::Zero());
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 d = p[i] - q[a.mapping[i]];
    const double len = d.norm();
    if (len >= 1e-12) grad[i] = inv_n * d / len;
  }
  return grad;
}

double chamfer_distance(const PointCloud& p, const PointCloud& q) {
  if (p.empty() || q.empty()) throw Error("chamfer_distance: empty cloud");
  auto one_way = [](const PointCloud& from, const PointCloud& to) {
    double total = 0.0;
    for (const auto& x : from.points) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& y : to.points) best = std::min(best, (x - y).squaredNorm());
      total += std::sqrt(best);
    }
    return total / static_cast<double>(from.size());
  };
  return one_way(p, q) + one_way(q, p);
}

std::vector<Edge> minimum_spanning_tree(std::span<const Vec3> points) {
  const std::size_t n = points.size();
  if (n < 2) throw Error("minimum_spanning_tree: need at least 2 points");
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> best(n, inf);
  std::vector<std::size_t> parent(n, 0);
  std::vector<char> in_tree(n, 0);
  std::vector<Edge> edges;
  edges.reserve(n - 1);

  auto pair_less = [](std::size_t a0, std::size_t b0, std::size_t a1, std::size_t b1) {
    const auto k0 = std::minmax(a0, b0), k1 = std::minmax(a1, b1);
    return k0 < k1;
  };

  std::size_t current = 0;
  in_tree[0] = 1;
  for (std::size_t added = 1; added < n; ++added) {
    for (std::size_t j = 0; j < n; ++j) {
      if (in_tree[j]) continue;
      const double d = (points[current] - points[j]).norm();
      if (d < best[j] || (d == best[j] && pair_less(current, j, parent[j], j))) {
        best[j] = d;
        parent[j] = current;
      }
    }
    std::size_t next = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (in_tree[j]) continue;
      if (next == n || best[j] < best[next] ||
          (best[j] == best[next] && pair_less(parent[j], j, parent[next], next)))
        next = j;
    }
    in_tree[next] = 1;
    const auto [a, b] = std::minmax(parent[next], next);
    edges.push_back({a, b, best[next]});
    current = next;
  }
  return edges;
}

namespace {

// Flags the long edges of one patch; `offset` maps patch-local indices back.
void flag_patch(std::span<const Vec3> patch, std::size_t offset, double lambda_edge, ExpansionTerms& terms) {
  const auto mst = minimum_spanning_tree(patch);
  double mean = 0.0;
  for (const auto& e : mst) mean += e.length;
  mean /= static_cast<double>(mst.size());
  for (const auto& e : mst)
    if (e.length >= lambda_edge * mean) {
      terms.flagged.push_back({e.a + offset, e.b + offset, e.length});
      terms.value += e.length;
    }
  terms.edge_count += mst.size();
}

}  // namespace

double expansion_penalty(const std::vector<PointCloud>& patches, double lambda_edge) {
  if (!(lambda_edge > 1.0)) throw Error("expansion_penalty: lambda_edge must exceed 1");
  ExpansionTerms terms;
  for (const auto& patch : patches) {
    if (patch.size() < 2) throw Error("expansion_penalty: patch needs at least 2 points");
    flag_patch(patch.points, 0, lambda_edge, terms);
  }
  return terms.edge_count == 0 ? 0.0 : terms.value / static_cast<double>(terms.edge_count);
}

ExpansionTerms expansion_terms(const PointCloud& cloud, std::size_t patch_count, double lambda_edge) {
  if (!(lambda_edge > 1.0)) throw Error("expansion_penalty: lambda_edge must exceed 1");
  if (patch_count == 0 || cloud.size() % patch_count != 0) throw Error("expansion_terms: patch count must divide cloud size");
  const std::size_t per = cloud.size() / patch_count;
  if (per < 2) throw Error("expansion_penalty: patch needs at least 2 points");
  ExpansionTerms terms;
  const std::span<const Vec3> all(cloud.points);
  for (std::size_t k = 0; k < patch_count; ++k) flag_patch(all.subspan(k * per, per), k * per, lambda_edge, terms);
  terms.value /= static_cast<double>(terms.edge_count);
  return terms;
}

double expansion_value(const PointCloud& cloud, const ExpansionTerms& terms) {
  if (terms.edge_count == 0) return 0.0;
  double total = 0.0;
  for (const auto& e : terms.flagged) total += (cloud[e.a] - cloud[e.b]).norm();
  return total / static_cast<double>(terms.edge_count);
}

void add_expansion_gradient(const PointCloud& cloud, const ExpansionTerms& terms, double scale,
                            std::vector<Vec3>& grad) {
  if (terms.edge_count == 0) return;
  const double w = scale / static_cast<double>(terms.edge_count);
  for (const auto& e : terms.flagged) {
    const Vec3 d = cloud[e.a] - cloud[e.b];
    const double len = d.norm();
    if (len < 1e-12) continue;
    grad[e.a] += w * d / len;
    grad[e.b] -= w * d / len;
  }
}

std::vector<std::pair<std::size_t, std::size_t>> KnnGraph::edges() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(neighbors.size());
  for (std::size_t i = 0; i < neighbors.size(); ++i) out.emplace_back(i / k, neighbors[i]);
  return out;
}

KnnGraph knn_graph(std::span<const Vec3> points, std::size_t k) {
  const std::size_t n = points.size();
  if (k == 0 || k >= n) throw Error("knn_graph: k must satisfy 0 < k < n");
  KnnGraph g;
  g.k = k;
  g.neighbors.resize(n * k);
  std::vector<std::pair<double, std::size_t>> cand(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t m = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) cand[m++] = {(points[i] - points[j]).squaredNorm(), j};
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    for (std::size_t r = 0; r < k; ++r) g.neighbors[i * k + r] = cand[r].second;
  }
  return g;
}

}  // namespace pdssl
