#pragma once

// Maximum-weight perfect assignment on a square matrix (Kuhn-Munkres with
// row/column potentials, O(n^3)).

#include <cstddef>
#include <limits>
#include <vector>

#include "kpx/error.hpp"

namespace kpx {

struct Assignment {
  std::vector<std::size_t> column_of_row;
  double total = 0.0;
};

/// `weights` is n x n, row-major. Rectangular problems should be padded with
/// zeros by the caller.
inline Assignment max_weight_assignment(const std::vector<double>& weights,
                                        std::size_t n) {
  if (weights.size() != n * n) {
    throw ContractViolation("assignment matrix must be n x n");
  }
  Assignment result;
  if (n == 0) return result;

  // Minimise cost = -weight. 1-based indexing with a virtual column 0.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> row_of_col(n + 1, 0), way(n + 1, 0);
  const auto cost = [&](std::size_t i, std::size_t j) {
    return -weights[(i - 1) * n + (j - 1)];
  };

  for (std::size_t i = 1; i <= n; ++i) {
    row_of_col[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = row_of_col[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[row_of_col[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (row_of_col[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      row_of_col[j0] = row_of_col[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  result.column_of_row.assign(n, 0);
  for (std::size_t j = 1; j <= n; ++j) {
    result.column_of_row[row_of_col[j] - 1] = j - 1;
  }
  // Sum the original weights in row order so the total does not carry the
  // potentials' rounding.
  for (std::size_t i = 0; i < n; ++i) {
    result.total += weights[i * n + result.column_of_row[i]];
  }
  return result;
}

}  // namespace kpx
