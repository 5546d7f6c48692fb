#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <vector>

#include "cmdplab/model.hpp"
#include "cmdplab/simplex.hpp"

namespace cmdplab {

// ---------------------------------------------------------------------------
// Exact quantities for a fixed policy on a validated unichain model.  These
// routines are the ground truth that the sampling machinery is tested
// against; they use dense linear algebra throughout.
// ---------------------------------------------------------------------------

/// Stationary distribution of the induced chain (Cesaro limit).  Zero on
/// transient states; solved on the recurrent class as the unique probability
/// vector fixed under the transposed kernel.
inline Vector stationary_distribution(const CmdpModel& model, const Matrix& policy_matrix,
                                      const UnichainPartition& part) {
    const Matrix kernel = induced_kernel(model, policy_matrix);
    const int nr = static_cast<int>(part.recurrent.size());
    Matrix kr(nr, nr);
    for (int i = 0; i < nr; ++i)
        for (int j = 0; j < nr; ++j) kr(i, j) = kernel(part.recurrent[static_cast<size_t>(i)],
                                                       part.recurrent[static_cast<size_t>(j)]);
    // Stack (K' - I) d = 0 with the normalization row 1'd = 1; the system has
    // full column rank for a single recurrent class, so least squares is exact.
    Matrix sys(nr + 1, nr);
    sys.topRows(nr) = kr.transpose() - Matrix::Identity(nr, nr);
    sys.row(nr).setOnes();
    Vector rhs = Vector::Zero(nr + 1);
    rhs(nr) = 1.0;
    Vector dr = sys.colPivHouseholderQr().solve(rhs);
    Vector d = Vector::Zero(model.n_states);
    for (int i = 0; i < nr; ++i) d(part.recurrent[static_cast<size_t>(i)]) = std::max(dr(i), 0.0);
    d /= d.sum();
    return d;
}

inline Vector stationary_distribution(const CmdpModel& model, const SoftmaxPolicy& policy,
                                      const UnichainPartition& part) {
    return stationary_distribution(model, policy.matrix(model), part);
}

/// Long-run average of a per-step signal: J_g = sum_s d(s) sum_a pi(a|s) g(s,a).
inline double average_objective(const CmdpModel& model, const Matrix& policy_matrix,
                                const Vector& d, CmdpModel::Signal g) {
    const Matrix& sig = model.signal_matrix(g);
    double j = 0.0;
    for (int s = 0; s < model.n_states; ++s) j += d(s) * policy_matrix.row(s).dot(sig.row(s));
    return j;
}

/// Solution of the average-reward evaluation equations for one signal.
struct PoissonSolution {
    double gain = 0.0; // J_g
    Vector v;          // state bias, normalized so d'v = 0
    Matrix q;          // q(s,a) = g(s,a) - gain + E[v(s') | s,a]
    Matrix advantage;  // q(s,a) - v(s)
};

/// Solves (I - P_pi) v = g_pi - J 1 jointly with d'v = 0 as one stacked
/// full-rank system (unichain makes the solution unique).
inline PoissonSolution solve_poisson(const CmdpModel& model, const Matrix& policy_matrix,
                                     const Vector& d, CmdpModel::Signal g) {
    const int n = model.n_states;
    const Matrix kernel = induced_kernel(model, policy_matrix);
    const Matrix& sig = model.signal_matrix(g);
    Vector g_pi(n);
    for (int s = 0; s < n; ++s) g_pi(s) = policy_matrix.row(s).dot(sig.row(s));
    PoissonSolution sol;
    sol.gain = d.dot(g_pi);

    Matrix sys(n + 1, n);
    sys.topRows(n) = Matrix::Identity(n, n) - kernel;
    sys.row(n) = d.transpose();
    Vector rhs(n + 1);
    rhs.head(n) = g_pi.array() - sol.gain;
    rhs(n) = 0.0;
    sol.v = sys.colPivHouseholderQr().solve(rhs);

    sol.q.resize(n, model.n_actions);
    sol.advantage.resize(n, model.n_actions);
    for (int a = 0; a < model.n_actions; ++a)
        sol.q.col(a) = sig.col(a).array() - sol.gain +
                       (model.transition[static_cast<size_t>(a)] * sol.v).array();
    for (int s = 0; s < n; ++s)
        sol.advantage.row(s) = sol.q.row(s).array() - sol.v(s);
    return sol;
}

/// Mixing-related constants of the induced chain.
///
/// c_hit: worst-case expected time to enter the recurrent class (zero when
/// every state is recurrent).  c_tar: expected time, from the worst recurrent
/// start, to reach a target state drawn from the stationary distribution.
/// c_total = c_hit + c_tar enters the bias and advantage bounds.
struct UnichainConstants {
    double c_hit = 0.0;
    double c_tar = 0.0;
    double c_total = 0.0;
    Vector hit_time;           // E_s[time to reach the recurrent class], 0 on it
    Vector c_tar_per_state;    // indexed like states; NaN on transient states
};

inline UnichainConstants hitting_constants(const CmdpModel& model, const Matrix& policy_matrix,
                                           const Vector& d, const UnichainPartition& part) {
    const int n = model.n_states;
    const Matrix kernel = induced_kernel(model, policy_matrix);
    UnichainConstants uc;
    uc.hit_time = Vector::Zero(n);
    const int nt = static_cast<int>(part.transient.size());
    if (nt > 0) {
        Matrix ktt(nt, nt);
        for (int i = 0; i < nt; ++i)
            for (int j = 0; j < nt; ++j)
                ktt(i, j) = kernel(part.transient[static_cast<size_t>(i)],
                                   part.transient[static_cast<size_t>(j)]);
        Vector h = (Matrix::Identity(nt, nt) - ktt).partialPivLu().solve(Vector::Ones(nt));
        for (int i = 0; i < nt; ++i) uc.hit_time(part.transient[static_cast<size_t>(i)]) = h(i);
        uc.c_hit = h.maxCoeff();
    }

    const int nr = static_cast<int>(part.recurrent.size());
    Matrix krr(nr, nr);
    for (int i = 0; i < nr; ++i)
        for (int j = 0; j < nr; ++j)
            krr(i, j) = kernel(part.recurrent[static_cast<size_t>(i)],
                               part.recurrent[static_cast<size_t>(j)]);
    // expected_hit(i, j) = E[ time to first reach recurrent state j | start i ].
    Matrix expected_hit = Matrix::Zero(nr, nr);
    for (int j = 0; j < nr; ++j) {
        if (nr == 1) break;
        Matrix sub(nr - 1, nr - 1);
        std::vector<int> others;
        for (int i = 0; i < nr; ++i)
            if (i != j) others.push_back(i);
        for (int r = 0; r < nr - 1; ++r)
            for (int c = 0; c < nr - 1; ++c)
                sub(r, c) = krr(others[static_cast<size_t>(r)], others[static_cast<size_t>(c)]);
        Vector h = (Matrix::Identity(nr - 1, nr - 1) - sub).partialPivLu().solve(
            Vector::Ones(nr - 1));
        for (int r = 0; r < nr - 1; ++r) expected_hit(others[static_cast<size_t>(r)], j) = h(r);
    }
    uc.c_tar_per_state = Vector::Constant(n, std::numeric_limits<double>::quiet_NaN());
    for (int i = 0; i < nr; ++i) {
        double v = 0.0;
        for (int j = 0; j < nr; ++j) v += d(part.recurrent[static_cast<size_t>(j)]) * expected_hit(i, j);
        uc.c_tar_per_state(part.recurrent[static_cast<size_t>(i)]) = v;
        uc.c_tar = std::max(uc.c_tar, v);
    }
    uc.c_total = uc.c_hit + uc.c_tar;
    return uc;
}

/// Visits every stationary transition (s, a, s') with weight
/// d(s) pi(a|s) P(s'|s,a) > 0.
template <typename Fn>
inline void for_each_stationary_transition(const CmdpModel& model, const Matrix& policy_matrix,
                                           const Vector& d, Fn&& fn) {
    for (int s = 0; s < model.n_states; ++s) {
        if (d(s) == 0.0) continue;
        for (int a = 0; a < model.n_actions; ++a) {
            double wa = d(s) * policy_matrix(s, a);
            if (wa == 0.0) continue;
            for (int s2 = 0; s2 < model.n_states; ++s2) {
                double w = wa * model.p(s, a, s2);
                if (w > 0.0) fn(s, a, s2, w);
            }
        }
    }
}

/// Exact policy gradient of J_g for a tabular softmax policy:
/// sum_{s,a} d(s) pi(a|s) advantage(s,a) score(s,a).
inline Vector policy_gradient_exact(const CmdpModel& model, const SoftmaxPolicy& policy,
                                    const Vector& d, const Matrix& advantage) {
    const Matrix pi = policy.matrix(model);
    Vector grad = Vector::Zero(policy.theta.size());
    for (int s = 0; s < model.n_states; ++s) {
        if (d(s) == 0.0) continue;
        for (int a = 0; a < model.n_actions; ++a) {
            double w = d(s) * pi(s, a);
            if (w == 0.0) continue;
            grad += w * advantage(s, a) * policy.score(model, s, a);
        }
    }
    return grad;
}

/// Fisher information of the softmax policy under the stationary state-action
/// occupancy, with an explicit ridge term.
struct FisherInfo {
    Matrix f;          // unregularized Fisher matrix
    double eps = 0.0;  // ridge added when solving
    Eigen::LDLT<Matrix> factor; // of f + eps * I

    Vector solve(const Vector& v) const { return factor.solve(v); }
};

inline FisherInfo fisher_exact(const CmdpModel& model, const SoftmaxPolicy& policy,
                               const Vector& d, double eps) {
    const Matrix pi = policy.matrix(model);
    const auto dim = policy.theta.size();
    FisherInfo info;
    info.f = Matrix::Zero(dim, dim);
    info.eps = eps;
    for (int s = 0; s < model.n_states; ++s) {
        if (d(s) == 0.0) continue;
        for (int a = 0; a < model.n_actions; ++a) {
            double w = d(s) * pi(s, a);
            if (w == 0.0) continue;
            Vector sc = policy.score(model, s, a);
            info.f.noalias() += w * (sc * sc.transpose());
        }
    }
    info.factor.compute(info.f + eps * Matrix::Identity(dim, dim));
    return info;
}

/// Ridge-regularized natural gradient direction (F + eps I)^{-1} grad.
inline Vector npg_exact(const FisherInfo& fisher, const Vector& grad) {
    return fisher.solve(grad);
}

/// Minimum-norm solution of F w = grad via a thresholded pseudoinverse;
/// diagnostic companion to the regularized direction.
inline Vector npg_minimum_norm(const FisherInfo& fisher, const Vector& grad,
                               double rel_threshold = 1e-8) {
    Eigen::JacobiSVD<Matrix> svd(fisher.f, Eigen::ComputeThinU | Eigen::ComputeThinV);
    svd.setThreshold(rel_threshold);
    return svd.solve(grad);
}

/// Exact fixed-point data for the linear average-reward critic.
///
/// The critic estimates xi = (eta, zeta) from the linear system
/// a_mat * xi = b_vec, where
///   a_mat = [[c_gamma, 0], [E phi(s), M]],   M = E[phi(s)(phi(s)-phi(s'))'],
///   b_vec = (c_gamma J_g, E[g(s,a) phi(s)]),
/// expectations under the stationary transition law.  xi_star is the
/// minimum-norm solution; kernel_basis spans ker(M); lambda_subspace is the
/// smallest quadratic-form value of M on the orthogonal complement of ker(M)
/// (+inf when the complement is trivial).
struct CriticGroundTruth {
    Matrix a_mat;          // (1+m) x (1+m)
    Vector b_vec;          // 1+m
    Vector xi_star;        // 1+m
    Matrix m_mat;          // m x m
    Matrix kernel_basis;   // m x k, orthonormal columns spanning ker(M)
    Matrix a_kernel_basis; // (1+m) x k, orthonormal columns spanning ker(a_mat)
    double lambda_subspace = 0.0;
    double gain = 0.0;

    /// Projects xi = (eta, zeta) onto the complement of ker(a_mat): eta kept,
    /// zeta projected off ker(M).
    Vector project(const Vector& xi) const {
        Vector out = xi;
        const auto m = m_mat.rows();
        if (kernel_basis.cols() > 0) {
            Vector zeta = xi.tail(m);
            out.tail(m) = zeta - kernel_basis * (kernel_basis.transpose() * zeta);
        }
        return out;
    }
};

inline CriticGroundTruth critic_ground_truth(const CmdpModel& model, const Matrix& policy_matrix,
                                             const FeatureMap& features, const Vector& d,
                                             CmdpModel::Signal g, double c_gamma,
                                             double kernel_rel_threshold = 1e-8) {
    const int m = features.dimension;
    std::vector<Vector> phi(static_cast<size_t>(model.n_states));
    for (int s = 0; s < model.n_states; ++s) phi[static_cast<size_t>(s)] = features.phi(s);

    CriticGroundTruth gt;
    gt.m_mat = Matrix::Zero(m, m);
    Vector mean_phi = Vector::Zero(m);
    Vector gphi = Vector::Zero(m);
    double j = 0.0;
    for_each_stationary_transition(model, policy_matrix, d, [&](int s, int a, int s2, double w) {
        gt.m_mat.noalias() +=
            w * (phi[static_cast<size_t>(s)] *
                 (phi[static_cast<size_t>(s)] - phi[static_cast<size_t>(s2)]).transpose());
        mean_phi += w * phi[static_cast<size_t>(s)];
        double val = model.signal(g, s, a);
        gphi += w * val * phi[static_cast<size_t>(s)];
        j += w * val;
    });
    gt.gain = j;
    gt.a_mat = Matrix::Zero(1 + m, 1 + m);
    gt.a_mat(0, 0) = c_gamma;
    gt.a_mat.block(1, 0, m, 1) = mean_phi;
    gt.a_mat.block(1, 1, m, m) = gt.m_mat;
    gt.b_vec.resize(1 + m);
    gt.b_vec(0) = c_gamma * j;
    gt.b_vec.tail(m) = gphi;

    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(gt.a_mat);
    cod.setThreshold(kernel_rel_threshold);
    gt.xi_star = cod.solve(gt.b_vec);

    Eigen::JacobiSVD<Matrix> svd(gt.m_mat, Eigen::ComputeFullU | Eigen::ComputeFullV);
    double smax = svd.singularValues().size() > 0 ? svd.singularValues()(0) : 0.0;
    double thresh = kernel_rel_threshold * std::max(smax, 1.0);
    int rank = 0;
    for (int i = 0; i < svd.singularValues().size(); ++i)
        if (svd.singularValues()(i) > thresh) ++rank;
    const int kdim = m - rank;
    gt.kernel_basis = svd.matrixV().rightCols(kdim);
    gt.a_kernel_basis = Matrix::Zero(1 + m, kdim);
    gt.a_kernel_basis.bottomRows(m) = gt.kernel_basis;

    if (rank == 0) {
        gt.lambda_subspace = std::numeric_limits<double>::infinity();
    } else {
        Matrix w = svd.matrixV().leftCols(rank); // complement of ker(M)
        Matrix sym = w.transpose() * (0.5 * (gt.m_mat + gt.m_mat.transpose())) * w;
        Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
        gt.lambda_subspace = eig.eigenvalues().minCoeff();
    }
    return gt;
}

/// Compatible-approximation error of a direction w for the mixed advantage
/// A_r - lambda A_c:  L(w) = 0.5 E_nu[(A_mix(s,a) - w'score(s,a))^2].
inline double compat_error_exact(const CmdpModel& model, const SoftmaxPolicy& policy,
                                 const Vector& d, const Matrix& adv_r, const Matrix& adv_c,
                                 double lambda, const Vector& omega) {
    const Matrix pi = policy.matrix(model);
    double total = 0.0;
    for (int s = 0; s < model.n_states; ++s) {
        if (d(s) == 0.0) continue;
        for (int a = 0; a < model.n_actions; ++a) {
            double w = d(s) * pi(s, a);
            if (w == 0.0) continue;
            double resid = adv_r(s, a) - lambda * adv_c(s, a) - omega.dot(policy.score(model, s, a));
            total += w * resid * resid;
        }
    }
    return 0.5 * total;
}

/// Total-variation distance between the t-step Cesaro average of the induced
/// kernel started at s0 and the stationary distribution:
/// || (1/t) sum_{i=1..t} P^i(s0, .) - d ||_TV.
inline double cesaro_tv(const Matrix& kernel, const Vector& d, int s0, int t) {
    if (t < 1) throw ConfigError("cesaro_tv requires t >= 1");
    Vector row = Vector::Zero(d.size());
    row(s0) = 1.0;
    Vector acc = Vector::Zero(d.size());
    for (int i = 0; i < t; ++i) {
        row = kernel.transpose() * row;
        acc += row;
    }
    acc /= static_cast<double>(t);
    return 0.5 * (acc - d).lpNorm<1>();
}

// ---------------------------------------------------------------------------
// Occupancy-measure linear program.
// ---------------------------------------------------------------------------

/// Solution of the constrained average-reward program over occupancy
/// measures: maximize sum nu.r subject to nu being a stationary occupancy
/// (nonnegative, normalized, flow-conserving) and sum nu.c >= 0.
/// slater_delta is the best attainable average cost, from a second program
/// without the cost constraint.
struct CmdpLpSolution {
    Matrix nu;            // n_states x n_actions occupancy at the optimum
    double j_r_star = 0.0;
    double j_c_at_opt = 0.0;
    double slater_delta = 0.0;
};

inline CmdpLpSolution solve_cmdp_lp(const CmdpModel& model) {
    const int ns = model.n_states;
    const int na = model.n_actions;
    const int nv = ns * na;
    auto idx = [na](int s, int a) { return s * na + a; };

    // Shared rows: normalization and flow conservation.
    Matrix a_base = Matrix::Zero(1 + ns, nv);
    Vector b_base = Vector::Zero(1 + ns);
    a_base.row(0).setOnes();
    b_base(0) = 1.0;
    for (int s2 = 0; s2 < ns; ++s2) {
        for (int a = 0; a < na; ++a) {
            a_base(1 + s2, idx(s2, a)) += 1.0;
            for (int s = 0; s < ns; ++s) a_base(1 + s2, idx(s, a)) -= model.p(s, a, s2);
        }
    }
    Vector r_obj(nv), c_obj(nv);
    for (int s = 0; s < ns; ++s)
        for (int a = 0; a < na; ++a) {
            r_obj(idx(s, a)) = model.reward(s, a);
            c_obj(idx(s, a)) = model.cost(s, a);
        }

    CmdpLpSolution sol;
    // Best attainable average cost (no cost constraint): Slater margin.
    {
        Matrix a1(1 + ns, nv);
        a1 = a_base;
        SimplexResult best_cost = simplex_maximize(a1, b_base, c_obj);
        sol.slater_delta = best_cost.value;
    }
    if (sol.slater_delta < 0.0)
        throw InfeasibleModel("no occupancy measure satisfies the cost constraint (best average cost " +
                              std::to_string(sol.slater_delta) + ")");

    // Constrained program with one slack variable: sum nu.c - slack = 0.
    Matrix a2 = Matrix::Zero(2 + ns, nv + 1);
    Vector b2 = Vector::Zero(2 + ns);
    a2.block(0, 0, 1 + ns, nv) = a_base;
    b2.head(1 + ns) = b_base;
    a2.block(1 + ns, 0, 1, nv) = c_obj.transpose();
    a2(1 + ns, nv) = -1.0;
    Vector obj2 = Vector::Zero(nv + 1);
    obj2.head(nv) = r_obj;
    SimplexResult best = simplex_maximize(a2, b2, obj2);

    sol.nu.resize(ns, na);
    for (int s = 0; s < ns; ++s)
        for (int a = 0; a < na; ++a) sol.nu(s, a) = best.x(idx(s, a));
    sol.j_r_star = best.value;
    sol.j_c_at_opt = c_obj.dot(best.x.head(nv));
    return sol;
}

/// Extracts a policy from an occupancy measure; states with no occupancy get
/// the uniform distribution (their actions do not affect long-run averages).
inline Matrix occupancy_policy(const CmdpModel& model, const Matrix& nu) {
    Matrix pi(model.n_states, model.n_actions);
    for (int s = 0; s < model.n_states; ++s) {
        double mass = nu.row(s).sum();
        if (mass > 1e-12)
            pi.row(s) = nu.row(s) / mass;
        else
            pi.row(s).setConstant(1.0 / model.n_actions);
    }
    return pi;
}

} // namespace cmdplab
