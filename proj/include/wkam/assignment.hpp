#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

#include "wkam/core.hpp"

namespace wkam {

struct Assignment {
  std::vector<int> sigma;  // row i is matched to column sigma[i]
  double cost = 0.0;       // sum of matched entries
};

/// Minimum-cost perfect matching on a square matrix (row-major, n x n), Jonker-Volgenant style
/// shortest augmenting paths with potentials. O(n^3).
inline Assignment solve_assignment(const std::vector<double>& cost, int n) {
  if (n < 0 || cost.size() != static_cast<std::size_t>(n) * static_cast<std::size_t>(n))
    throw SizeMismatch("assignment matrix must be n x n");
  Assignment out;
  if (n == 0) return out;
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based arrays; column 0 is the virtual source.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> match(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = match[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[static_cast<std::size_t>(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0);
  }
  out.sigma.assign(n, -1);
  for (int j = 1; j <= n; ++j) out.sigma[match[j] - 1] = j - 1;
  for (int i = 0; i < n; ++i) out.cost += cost[static_cast<std::size_t>(i) * n + out.sigma[i]];
  return out;
}

/// Exhaustive search over all n! permutations (reference for small n).
inline Assignment brute_force_assignment(const std::vector<double>& cost, int n) {
  if (cost.size() != static_cast<std::size_t>(n) * static_cast<std::size_t>(n))
    throw SizeMismatch("assignment matrix must be n x n");
  if (n > 10) throw InvalidArgument("brute force assignment limited to n <= 10");
  std::vector<int> p(n);
  std::iota(p.begin(), p.end(), 0);
  Assignment best;
  best.cost = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (int i = 0; i < n; ++i) c += cost[static_cast<std::size_t>(i) * n + p[i]];
    if (c < best.cost) {
      best.cost = c;
      best.sigma = p;
    }
  } while (std::next_permutation(p.begin(), p.end()));
  return best;
}

/// Wasserstein-1 distance between two equal-size, equally weighted point clouds on the torus.
template <int D>
double wasserstein1(const std::vector<Vec<D>>& a, const std::vector<Vec<D>>& b, double period = kTwoPi) {
  if (a.size() != b.size()) throw SizeMismatch("point clouds must have equal size");
  const int n = static_cast<int>(a.size());
  if (n == 0) return 0.0;
  std::vector<double> cost(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) cost[static_cast<std::size_t>(i) * n + j] = torus_distance<D>(a[i], b[j], period);
  return solve_assignment(cost, n).cost / n;
}

}  // namespace wkam
