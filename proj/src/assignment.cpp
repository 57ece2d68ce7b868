#include "gid/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "gid/common.hpp"

namespace gid {
namespace {

struct DualSolution {
    std::vector<int> row_to_col;
    std::vector<double> u;  // row potentials
    std::vector<double> v;  // column potentials
};

// Shortest augmenting path Hungarian method, O(K^3). Potentials stay dual
// feasible: cost(i, j) - u[i] - v[j] >= 0 with equality on the matching.
DualSolution solve_dual(const Eigen::MatrixXd& cost) {
    const int n = static_cast<int>(cost.rows());
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    std::vector<char> used(n + 1);

    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            double delta = inf;
            int j1 = 0;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) {
                    continue;
                }
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
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

    DualSolution out;
    out.row_to_col.assign(n, -1);
    for (int j = 1; j <= n; ++j) {
        out.row_to_col[p[j] - 1] = j - 1;
    }
    out.u.assign(u.begin() + 1, u.end());
    out.v.assign(v.begin() + 1, v.end());
    return out;
}

// Every optimal assignment uses only edges of zero reduced cost under an
// optimal dual, so the lexicographically smallest optimum is the smallest
// perfect matching of that "tight" subgraph. Rows are fixed in order; a smaller
// column is taken whenever an alternating path can release it.
class TightMatcher {
public:
    TightMatcher(std::vector<std::vector<int>> adjacency, std::vector<int> row_to_col)
        : adj_(std::move(adjacency)), row_to_col_(std::move(row_to_col)) {
        const auto n = row_to_col_.size();
        col_to_row_.assign(n, -1);
        for (std::size_t i = 0; i < n; ++i) {
            col_to_row_[static_cast<std::size_t>(row_to_col_[i])] = static_cast<int>(i);
        }
        fixed_col_.assign(n, 0);
        visited_.assign(n, 0);
    }

    std::vector<int> run() {
        const int n = static_cast<int>(row_to_col_.size());
        for (int i = 0; i < n; ++i) {
            for (int j : adj_[i]) {
                if (fixed_col_[j]) {
                    continue;
                }
                if (j == row_to_col_[i]) {
                    break;
                }
                const int holder = col_to_row_[j];
                const int released = row_to_col_[i];
                std::fill(visited_.begin(), visited_.end(), 0);
                visited_[j] = 1;
                if (augment(holder, i, released)) {
                    row_to_col_[i] = j;
                    col_to_row_[j] = i;
                    break;
                }
            }
            fixed_col_[row_to_col_[i]] = 1;
        }
        return row_to_col_;
    }

private:
    // Rematch `row` (and transitively others after `frozen_row`) so that
    // `target` becomes its column or is taken along the path.
    bool augment(int row, int frozen_row, int target) {
        for (int c : adj_[row]) {
            if (fixed_col_[c] || visited_[c]) {
                continue;
            }
            visited_[c] = 1;
            const int owner = col_to_row_[c];
            if (c == target || (owner != frozen_row && owner >= 0 && augment(owner, frozen_row, target))) {
                row_to_col_[row] = c;
                col_to_row_[c] = row;
                return true;
            }
        }
        return false;
    }

    std::vector<std::vector<int>> adj_;
    std::vector<int> row_to_col_;
    std::vector<int> col_to_row_;
    std::vector<char> fixed_col_;
    std::vector<char> visited_;
};

}  // namespace

Mapping hungarian(const Eigen::MatrixXd& cost) {
    if (cost.rows() != cost.cols()) {
        throw ValidationError("hungarian: cost matrix must be square, got " +
                              std::to_string(cost.rows()) + "x" + std::to_string(cost.cols()));
    }
    if (!cost.allFinite()) {
        throw ValidationError("hungarian: cost matrix has non-finite entries");
    }
    const int n = static_cast<int>(cost.rows());
    Mapping mapping;
    if (n == 0) {
        return mapping;
    }

    const DualSolution dual = solve_dual(cost);
    const double tol = 1e-9 * std::max(1.0, cost.cwiseAbs().maxCoeff());
    std::vector<std::vector<int>> adjacency(n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (cost(i, j) - dual.u[i] - dual.v[j] <= tol || j == dual.row_to_col[i]) {
                adjacency[i].push_back(j);
            }
        }
    }
    mapping.perm = TightMatcher(std::move(adjacency), dual.row_to_col).run();
    for (int i = 0; i < n; ++i) {
        mapping.total_cost += cost(i, mapping.perm[i]);
    }
    return mapping;
}

Mapping align_clusters(const Eigen::MatrixXd& previous, const Eigen::MatrixXd& current) {
    if (previous.rows() != current.rows()) {
        throw ValidationError("align_clusters: centroid counts differ (" +
                              std::to_string(previous.rows()) + " vs " +
                              std::to_string(current.rows()) + ")");
    }
    if (previous.cols() != current.cols()) {
        throw ValidationError("align_clusters: centroid dimensions differ");
    }
    const auto k = previous.rows();
    Eigen::MatrixXd cost(k, k);
    for (Eigen::Index i = 0; i < k; ++i) {
        for (Eigen::Index j = 0; j < k; ++j) {
            cost(i, j) = (previous.row(i) - current.row(j)).squaredNorm();
        }
    }
    return hungarian(cost);
}

std::vector<int> relabel_from_alignment(const Mapping& alignment) {
    std::vector<int> relabel(alignment.perm.size(), -1);
    for (std::size_t i = 0; i < alignment.perm.size(); ++i) {
        relabel[static_cast<std::size_t>(alignment.perm[i])] = static_cast<int>(i);
    }
    return relabel;
}

}  // namespace gid
