#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "cmdplab/errors.hpp"

namespace cmdplab {

/// Dense two-phase primal simplex for
///     maximize c'x  subject to  A x = b,  x >= 0.
/// Bland's rule prevents cycling; redundant equality rows are tolerated
/// (their artificial variables stay basic at zero).  The returned solution is
/// re-solved against the final basis with a rank-revealing QR factorization,
/// so constraint residuals are at machine precision rather than accumulated
/// pivot error.  Intended for small instances (tens of variables).
struct SimplexResult {
    Eigen::VectorXd x;
    double value = 0.0;
};

inline SimplexResult simplex_maximize(const Eigen::MatrixXd& a_in, const Eigen::VectorXd& b_in,
                                      const Eigen::VectorXd& c) {
    using Eigen::MatrixXd;
    using Eigen::VectorXd;
    const double tol = 1e-9;
    const int m = static_cast<int>(a_in.rows());
    const int n = static_cast<int>(a_in.cols());
    if (b_in.size() != m || c.size() != n) throw ConfigError("simplex: inconsistent shapes");

    // Normalize signs so the right-hand side is nonnegative, then append one
    // artificial variable per row.
    MatrixXd tab(m, n + m + 1);
    tab.setZero();
    for (int i = 0; i < m; ++i) {
        double sign = (b_in(i) < 0.0) ? -1.0 : 1.0;
        tab.block(i, 0, 1, n) = sign * a_in.row(i);
        tab(i, n + i) = 1.0;
        tab(i, n + m) = sign * b_in(i);
    }
    std::vector<int> basis(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) basis[static_cast<size_t>(i)] = n + i;

    auto pivot = [&](int row, int col) {
        tab.row(row) /= tab(row, col);
        for (int i = 0; i < m; ++i) {
            if (i == row) continue;
            double f = tab(i, col);
            if (f != 0.0) tab.row(i) -= f * tab.row(row);
        }
        basis[static_cast<size_t>(row)] = col;
    };

    // Runs simplex iterations for the objective `obj` (length n + m),
    // considering only columns in [0, active_cols) as entering candidates.
    auto run_phase = [&](const VectorXd& obj, int active_cols) {
        for (int iter = 0; iter < 10000 * (m + n + 1); ++iter) {
            int enter = -1;
            for (int j = 0; j < active_cols; ++j) {
                double reduced = obj(j);
                for (int i = 0; i < m; ++i) reduced -= obj(basis[static_cast<size_t>(i)]) * tab(i, j);
                if (reduced > tol) {
                    enter = j; // Bland: first improving index
                    break;
                }
            }
            if (enter < 0) return;
            int leave = -1;
            double best_ratio = 0.0;
            for (int i = 0; i < m; ++i) {
                if (tab(i, enter) > tol) {
                    double ratio = tab(i, n + m) / tab(i, enter);
                    if (leave < 0 || ratio < best_ratio - tol ||
                        (std::abs(ratio - best_ratio) <= tol &&
                         basis[static_cast<size_t>(i)] < basis[static_cast<size_t>(leave)])) {
                        leave = i;
                        best_ratio = ratio;
                    }
                }
            }
            if (leave < 0) throw std::runtime_error("simplex: objective unbounded");
            pivot(leave, enter);
        }
        throw std::runtime_error("simplex: iteration limit reached");
    };

    // Phase 1: drive the artificial variables to zero.
    VectorXd phase1 = VectorXd::Zero(n + m);
    phase1.tail(m).setConstant(-1.0);
    run_phase(phase1, n + m);
    double infeas = 0.0;
    for (int i = 0; i < m; ++i)
        if (basis[static_cast<size_t>(i)] >= n) infeas += tab(i, n + m);
    if (infeas > 1e-8) throw InfeasibleModel("linear program infeasible (phase-1 residual " +
                                             std::to_string(infeas) + ")");
    // Pivot artificials out of the basis where possible; rows whose structural
    // part vanished are redundant constraints and stay parked at zero.
    for (int i = 0; i < m; ++i) {
        if (basis[static_cast<size_t>(i)] < n) continue;
        for (int j = 0; j < n; ++j) {
            if (std::abs(tab(i, j)) > tol) {
                pivot(i, j);
                break;
            }
        }
    }

    // Phase 2: optimize the real objective over structural columns only.
    VectorXd phase2 = VectorXd::Zero(n + m);
    phase2.head(n) = c;
    run_phase(phase2, n);

    // Polish: re-solve the original equalities restricted to the basic
    // structural columns.
    std::vector<int> cols;
    for (int i = 0; i < m; ++i)
        if (basis[static_cast<size_t>(i)] < n) cols.push_back(basis[static_cast<size_t>(i)]);
    MatrixXd ab(m, static_cast<int>(cols.size()));
    for (int k = 0; k < static_cast<int>(cols.size()); ++k) ab.col(k) = a_in.col(cols[static_cast<size_t>(k)]);
    VectorXd xb = ab.colPivHouseholderQr().solve(b_in);
    SimplexResult res;
    res.x = VectorXd::Zero(n);
    for (int k = 0; k < static_cast<int>(cols.size()); ++k) {
        double v = xb(k);
        res.x(cols[static_cast<size_t>(k)]) = (v > 0.0) ? v : 0.0;
    }
    res.value = c.dot(res.x);
    return res;
}

} // namespace cmdplab
