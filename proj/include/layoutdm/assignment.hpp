#pragma once

#include <algorithm>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "layoutdm/error.hpp"

namespace layoutdm {

struct Assignment {
  std::vector<int> row_to_col;  // -1 for rows left unmatched (when rows > cols)
  double total = 0;
};

/// Minimum-cost rectangular assignment (Hungarian method with potentials). Every row is
/// matched when rows <= cols, otherwise every column is.
inline Assignment min_cost_assignment(const Eigen::MatrixXd& cost) {
  Assignment out;
  const int rows = static_cast<int>(cost.rows());
  const int cols = static_cast<int>(cost.cols());
  out.row_to_col.assign(rows, -1);
  if (rows == 0 || cols == 0) return out;
  LAYOUTDM_REQUIRE(cost.allFinite(), ErrorCode::kInvalidArgument, "assignment costs must be finite");
  const bool transpose = rows > cols;
  const Eigen::MatrixXd a = transpose ? Eigen::MatrixXd(cost.transpose()) : cost;
  const int n = static_cast<int>(a.rows());
  const int m = static_cast<int>(a.cols());
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0), v(m + 1, 0), minv(m + 1);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  std::vector<char> used(m + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  for (int j = 1; j <= m; ++j) {
    if (p[j] == 0) continue;
    const int r = p[j] - 1, c = j - 1;
    if (transpose) {
      out.row_to_col[c] = r;
    } else {
      out.row_to_col[r] = c;
    }
  }
  for (int r = 0; r < rows; ++r) {
    if (out.row_to_col[r] >= 0) out.total += cost(r, out.row_to_col[r]);
  }
  return out;
}

/// Maximum-weight rectangular assignment.
inline Assignment max_weight_assignment(const Eigen::MatrixXd& weight) {
  Assignment out = min_cost_assignment(-weight);
  out.total = -out.total;
  return out;
}

}  // namespace layoutdm
