#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "cmdplab/env_zoo.hpp"
#include "cmdplab/oracle.hpp"

using namespace cmdplab;

namespace {

Vector random_theta(const CmdpModel& model, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    Vector theta(static_cast<Eigen::Index>(model.n_states) * model.n_actions);
    for (Eigen::Index i = 0; i < theta.size(); ++i) theta(i) = normal(rng);
    return theta;
}

struct Setup {
    CmdpModel model;
    UnichainPartition part;
    SoftmaxPolicy policy;
    Matrix pi;
    Vector d;
};

Setup at(CmdpModel model, Vector theta) {
    Setup s{std::move(model), {}, {}, {}, {}};
    s.part = validate_unichain(s.model);
    s.policy = SoftmaxPolicy{std::move(theta), 1.0};
    s.pi = s.policy.matrix(s.model);
    s.d = stationary_distribution(s.model, s.pi, s.part);
    return s;
}

Setup at_uniform(CmdpModel model) {
    Vector theta =
        Vector::Zero(static_cast<Eigen::Index>(model.n_states) * model.n_actions);
    return at(std::move(model), std::move(theta));
}

} // namespace

TEST_CASE("stationary distribution: closed forms") {
    SECTION("two_ring alternates evenly") {
        Setup s = at_uniform(make_two_ring());
        REQUIRE(s.d(0) == Catch::Approx(0.5).margin(1e-12));
        REQUIRE(s.d(1) == Catch::Approx(0.5).margin(1e-12));
    }
    SECTION("transient_funnel concentrates on the absorbing state") {
        Setup s = at_uniform(make_transient_funnel(0.5));
        REQUIRE(s.d(0) == Catch::Approx(0.0).margin(1e-12));
        REQUIRE(s.d(1) == Catch::Approx(1.0).margin(1e-12));
    }
    SECTION("periodic_ring is uniform on the cycle") {
        Setup s = at_uniform(make_periodic_ring(5));
        for (int i = 0; i < 5; ++i) REQUIRE(s.d(i) == Catch::Approx(0.2).margin(1e-12));
    }
}

TEST_CASE("stationary distribution: fixed point and support properties") {
    std::mt19937_64 rng(5);
    for (const char* name : {"two_ring", "funnel_ring", "random_unichain"}) {
        CmdpModel model = build_env(name, {});
        for (int rep = 0; rep < 10; ++rep) {
            Setup s = at(model, random_theta(model, rng, 1.5));
            Matrix k = induced_kernel(s.model, s.pi);
            REQUIRE((s.d.transpose() * k - s.d.transpose()).cwiseAbs().maxCoeff() < 1e-10);
            REQUIRE(s.d.sum() == Catch::Approx(1.0).margin(1e-12));
            REQUIRE(s.d.minCoeff() >= 0.0);
            for (int t : s.part.transient) REQUIRE(s.d(t) == 0.0);
        }
    }
}

TEST_CASE("average objective matches direct summation") {
    Setup s = at_uniform(make_funnel_ring(0.5, 3));
    // Ring states carry all the mass; uniform policy mixes rewards 1 and 0.
    REQUIRE(average_objective(s.model, s.pi, s.d, CmdpModel::Signal::Reward) ==
            Catch::Approx(0.5).margin(1e-12));
    // Costs mix -0.5 and 1.
    REQUIRE(average_objective(s.model, s.pi, s.d, CmdpModel::Signal::Cost) ==
            Catch::Approx(0.25).margin(1e-12));
}

TEST_CASE("poisson solution: two_ring closed form") {
    Setup s = at_uniform(make_two_ring());
    PoissonSolution ps = solve_poisson(s.model, s.pi, s.d, CmdpModel::Signal::Reward);
    REQUIRE(ps.gain == Catch::Approx(0.5).margin(1e-12));
    REQUIRE(ps.v(0) == Catch::Approx(-0.25).margin(1e-10));
    REQUIRE(ps.v(1) == Catch::Approx(0.25).margin(1e-10));
    // q(s, a) = g - J + v(next).
    REQUIRE(ps.q(0, 0) == Catch::Approx(0.0 - 0.5 + 0.25).margin(1e-10));
    REQUIRE(ps.q(1, 0) == Catch::Approx(1.0 - 0.5 - 0.25).margin(1e-10));
    REQUIRE(ps.advantage(0, 0) == Catch::Approx(0.0).margin(1e-10));
    REQUIRE(ps.advantage(1, 0) == Catch::Approx(0.0).margin(1e-10));
}

TEST_CASE("poisson solution: residual properties on random policies") {
    std::mt19937_64 rng(7);
    for (const EnvEntry& e : env_catalog()) {
        CmdpModel model = build_env(e.name, {});
        for (int rep = 0; rep < 5; ++rep) {
            Setup s = at(model, random_theta(model, rng));
            for (CmdpModel::Signal g : {CmdpModel::Signal::Reward, CmdpModel::Signal::Cost}) {
                PoissonSolution ps = solve_poisson(s.model, s.pi, s.d, g);
                Matrix k = induced_kernel(s.model, s.pi);
                Vector g_pi(s.model.n_states);
                for (int st = 0; st < s.model.n_states; ++st)
                    g_pi(st) = s.pi.row(st).dot(s.model.signal_matrix(g).row(st));
                // Bellman residual of the gain/bias pair.
                Vector resid = (Matrix::Identity(s.model.n_states, s.model.n_states) - k) * ps.v -
                               (g_pi.array() - ps.gain).matrix();
                REQUIRE(resid.cwiseAbs().maxCoeff() < 1e-10);
                // Normalization.
                REQUIRE(std::abs(s.d.dot(ps.v)) < 1e-10);
                // Advantage is policy-centered on recurrent states.
                for (int st : s.part.recurrent)
                    REQUIRE(std::abs(s.pi.row(st).dot(ps.advantage.row(st))) < 1e-10);
                // Gain equals the stationary average.
                REQUIRE(ps.gain ==
                        Catch::Approx(average_objective(s.model, s.pi, s.d, g)).margin(1e-12));
            }
        }
    }
}

TEST_CASE("hitting constants: closed forms") {
    SECTION("two_ring") {
        Setup s = at_uniform(make_two_ring());
        UnichainConstants uc = hitting_constants(s.model, s.pi, s.d, s.part);
        REQUIRE(uc.c_hit == 0.0);
        // From either state: half the targets are hit immediately in one
        // step, the stationary-weighted mean time is 0.5 * 0 + ... = 0.5.
        REQUIRE(uc.c_tar == Catch::Approx(0.5).margin(1e-10));
        REQUIRE(uc.c_total == Catch::Approx(0.5).margin(1e-10));
        REQUIRE(uc.c_tar_per_state(0) == Catch::Approx(0.5).margin(1e-10));
        REQUIRE(uc.c_tar_per_state(1) == Catch::Approx(0.5).margin(1e-10));
    }
    SECTION("transient_funnel(0.5) takes two expected steps to fall in") {
        Setup s = at_uniform(make_transient_funnel(0.5));
        UnichainConstants uc = hitting_constants(s.model, s.pi, s.d, s.part);
        REQUIRE(uc.c_hit == Catch::Approx(2.0).margin(1e-10));
        REQUIRE(uc.hit_time(0) == Catch::Approx(2.0).margin(1e-10));
        REQUIRE(uc.hit_time(1) == 0.0);
        REQUIRE(uc.c_tar == Catch::Approx(0.0).margin(1e-10));
        REQUIRE(std::isnan(uc.c_tar_per_state(0)));
    }
    SECTION("periodic_ring(3): stationary-weighted hit time is 1") {
        Setup s = at_uniform(make_periodic_ring(3));
        UnichainConstants uc = hitting_constants(s.model, s.pi, s.d, s.part);
        REQUIRE(uc.c_hit == 0.0);
        REQUIRE(uc.c_tar == Catch::Approx(1.0).margin(1e-10));
    }
}

TEST_CASE("policy gradient matches central finite differences") {
    std::mt19937_64 rng(13);
    for (const EnvEntry& e : env_catalog()) {
        CmdpModel model = build_env(e.name, {});
        UnichainPartition part = validate_unichain(model);
        for (int rep = 0; rep < 3; ++rep) {
            Vector theta = random_theta(model, rng);
            SoftmaxPolicy pol{theta, 1.0};
            Matrix pi = pol.matrix(model);
            Vector d = stationary_distribution(model, pi, part);
            for (CmdpModel::Signal g : {CmdpModel::Signal::Reward, CmdpModel::Signal::Cost}) {
                PoissonSolution ps = solve_poisson(model, pi, d, g);
                Vector grad = policy_gradient_exact(model, pol, d, ps.advantage);
                const double h = 1e-5;
                for (Eigen::Index i = 0; i < theta.size(); ++i) {
                    SoftmaxPolicy up{theta, 1.0}, down{theta, 1.0};
                    up.theta(i) += h;
                    down.theta(i) -= h;
                    Matrix pi_u = up.matrix(model), pi_d = down.matrix(model);
                    double ju = average_objective(
                        model, pi_u, stationary_distribution(model, pi_u, part), g);
                    double jd = average_objective(
                        model, pi_d, stationary_distribution(model, pi_d, part), g);
                    REQUIRE(grad(i) == Catch::Approx((ju - jd) / (2.0 * h)).margin(1e-6));
                }
            }
        }
    }
}

TEST_CASE("fisher information structure") {
    std::mt19937_64 rng(19);
    CmdpModel model = make_funnel_ring(0.5, 3);
    UnichainPartition part = validate_unichain(model);
    Vector theta = random_theta(model, rng);
    SoftmaxPolicy pol{theta, 1.0};
    Vector d = stationary_distribution(model, pol.matrix(model), part);
    FisherInfo fisher = fisher_exact(model, pol, d, 1e-3);

    SECTION("symmetric positive semidefinite") {
        REQUIRE((fisher.f - fisher.f.transpose()).cwiseAbs().maxCoeff() < 1e-12);
        Eigen::SelfAdjointEigenSolver<Matrix> eig(fisher.f);
        REQUIRE(eig.eigenvalues().minCoeff() > -1e-12);
    }
    SECTION("per-state constant directions are annihilated") {
        for (int s = 0; s < model.n_states; ++s) {
            Vector dir = Vector::Zero(theta.size());
            for (int a = 0; a < model.n_actions; ++a) dir(param_index(model, s, a)) = 1.0;
            REQUIRE((fisher.f * dir).cwiseAbs().maxCoeff() < 1e-12);
        }
    }
    SECTION("ridge solve inverts f + eps I") {
        Vector v = random_theta(model, rng);
        Vector x = fisher.solve(v);
        Vector back = fisher.f * x + fisher.eps * x;
        REQUIRE((back - v).cwiseAbs().maxCoeff() < 1e-9);
    }
    SECTION("npg_exact agrees with the ridge solve") {
        Vector v = random_theta(model, rng);
        REQUIRE((npg_exact(fisher, v) - fisher.solve(v)).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("minimum-norm natural gradient achieves zero compatible error") {
    std::mt19937_64 rng(29);
    for (const char* name : {"constrained_self_loop", "funnel_ring"}) {
        CmdpModel model = build_env(name, {});
        UnichainPartition part = validate_unichain(model);
        for (int rep = 0; rep < 5; ++rep) {
            SoftmaxPolicy pol{random_theta(model, rng), 1.0};
            Matrix pi = pol.matrix(model);
            Vector d = stationary_distribution(model, pi, part);
            PoissonSolution pr = solve_poisson(model, pi, d, CmdpModel::Signal::Reward);
            PoissonSolution pc = solve_poisson(model, pi, d, CmdpModel::Signal::Cost);
            double lambda = std::uniform_real_distribution<double>(0.0, 2.0)(rng);
            Matrix adv_mix = pr.advantage - lambda * pc.advantage;
            Vector grad = policy_gradient_exact(model, pol, d, adv_mix);
            FisherInfo fisher = fisher_exact(model, pol, d, 0.0);
            Vector omega = npg_minimum_norm(fisher, grad);
            REQUIRE(compat_error_exact(model, pol, d, pr.advantage, pc.advantage, lambda,
                                       omega) < 1e-10);
        }
    }
}

TEST_CASE("critic ground truth: two_ring closed form") {
    Setup s = at_uniform(make_two_ring());
    FeatureMap f = FeatureMap::one_hot(2);
    CriticGroundTruth gt =
        critic_ground_truth(s.model, s.pi, f, s.d, CmdpModel::Signal::Reward, 2.0);
    REQUIRE(gt.gain == Catch::Approx(0.5).margin(1e-12));
    // xi* = (gain, bias centered on the recurrent class).
    REQUIRE(gt.xi_star(0) == Catch::Approx(0.5).margin(1e-10));
    REQUIRE(gt.xi_star(1) == Catch::Approx(-0.25).margin(1e-10));
    REQUIRE(gt.xi_star(2) == Catch::Approx(0.25).margin(1e-10));
    // Fixed point: A xi* = b.
    REQUIRE((gt.a_mat * gt.xi_star - gt.b_vec).cwiseAbs().maxCoeff() < 1e-10);
    // ker(M) is the constant direction; modulus on its complement is 1.
    REQUIRE(gt.kernel_basis.cols() == 1);
    REQUIRE(std::abs(std::abs(gt.kernel_basis(0, 0)) - std::sqrt(0.5)) < 1e-10);
    REQUIRE(gt.lambda_subspace == Catch::Approx(1.0).margin(1e-10));
    SECTION("projection removes the kernel component") {
        Vector xi(3);
        xi << 0.3, 1.0, 1.0; // zeta is purely constant
        Vector proj = gt.project(xi);
        REQUIRE(proj(0) == 0.3);
        REQUIRE(std::abs(proj(1)) < 1e-12);
        REQUIRE(std::abs(proj(2)) < 1e-12);
    }
}

TEST_CASE("critic ground truth: transient and degenerate cases") {
    SECTION("transient_funnel has a fully degenerate feature operator") {
        Setup s = at_uniform(make_transient_funnel(0.5));
        FeatureMap f = FeatureMap::one_hot(2);
        CriticGroundTruth gt =
            critic_ground_truth(s.model, s.pi, f, s.d, CmdpModel::Signal::Reward, 2.0);
        // Stationary mass sits on the absorbing state whose feature
        // difference vanishes, so M = 0 and the kernel is everything.
        REQUIRE(gt.m_mat.cwiseAbs().maxCoeff() < 1e-15);
        REQUIRE(gt.kernel_basis.cols() == 2);
        REQUIRE(std::isinf(gt.lambda_subspace));
        REQUIRE(gt.xi_star(0) == Catch::Approx(1.0).margin(1e-10));
        REQUIRE(gt.xi_star.tail(2).cwiseAbs().maxCoeff() < 1e-10);
    }
    SECTION("periodic_ring(3) has modulus 1/2") {
        Setup s = at_uniform(make_periodic_ring(3));
        FeatureMap f = FeatureMap::one_hot(3);
        CriticGroundTruth gt =
            critic_ground_truth(s.model, s.pi, f, s.d, CmdpModel::Signal::Reward, 2.0);
        REQUIRE(gt.lambda_subspace == Catch::Approx(0.5).margin(1e-10));
    }
}

TEST_CASE("critic ground truth: fixed point reproduces the poisson solution") {
    std::mt19937_64 rng(31);
    for (const char* name : {"two_ring", "funnel_ring", "random_unichain"}) {
        CmdpModel model = build_env(name, {});
        FeatureMap f = FeatureMap::one_hot(model.n_states);
        for (int rep = 0; rep < 5; ++rep) {
            Setup s = at(model, random_theta(model, rng));
            for (CmdpModel::Signal g : {CmdpModel::Signal::Reward, CmdpModel::Signal::Cost}) {
                CriticGroundTruth gt = critic_ground_truth(s.model, s.pi, f, s.d, g, 2.0);
                PoissonSolution ps = solve_poisson(s.model, s.pi, s.d, g);
                REQUIRE(gt.gain == Catch::Approx(ps.gain).margin(1e-10));
                // A xi* = b exactly (the system is consistent).
                REQUIRE((gt.a_mat * gt.xi_star - gt.b_vec).cwiseAbs().maxCoeff() < 1e-9);
                // On recurrent states, zeta* matches the bias up to the
                // class-constant shift that ker(M) cannot see.
                double shift = 0.0;
                for (int st : s.part.recurrent)
                    shift += gt.xi_star(1 + st) - ps.v(st);
                shift /= static_cast<double>(s.part.recurrent.size());
                for (int st : s.part.recurrent)
                    REQUIRE(gt.xi_star(1 + st) - ps.v(st) ==
                            Catch::Approx(shift).margin(1e-8));
                // Kernel vectors solve A (0, zeta) = 0.
                if (gt.a_kernel_basis.cols() > 0)
                    REQUIRE((gt.a_mat * gt.a_kernel_basis).cwiseAbs().maxCoeff() < 1e-9);
            }
        }
    }
}

TEST_CASE("cesaro averages approach the stationary distribution") {
    Setup s = at_uniform(make_two_ring());
    Matrix k = induced_kernel(s.model, s.pi);
    // The two-step Cesaro average from either state is exact.
    REQUIRE(cesaro_tv(k, s.d, 0, 2) < 1e-12);
    REQUIRE(cesaro_tv(k, s.d, 0, 1) == Catch::Approx(0.5).margin(1e-12));

    Setup f = at_uniform(make_funnel_ring(0.5, 3));
    Matrix kf = induced_kernel(f.model, f.pi);
    REQUIRE(cesaro_tv(kf, f.d, 0, 3000) < 1e-2);
}

TEST_CASE("occupancy LP: closed forms") {
    SECTION("constrained_self_loop balances the two actions") {
        CmdpModel m = make_constrained_self_loop();
        CmdpLpSolution lp = solve_cmdp_lp(m);
        REQUIRE(lp.j_r_star == Catch::Approx(0.5).margin(1e-9));
        REQUIRE(lp.nu(0, 0) == Catch::Approx(0.5).margin(1e-9));
        REQUIRE(lp.nu(0, 1) == Catch::Approx(0.5).margin(1e-9));
        REQUIRE(lp.j_c_at_opt == Catch::Approx(0.0).margin(1e-9));
        REQUIRE(lp.slater_delta == Catch::Approx(1.0).margin(1e-9));
    }
    SECTION("two_ring has no choice") {
        CmdpLpSolution lp = solve_cmdp_lp(make_two_ring());
        REQUIRE(lp.j_r_star == Catch::Approx(0.5).margin(1e-9));
        REQUIRE(lp.slater_delta == Catch::Approx(1.0).margin(1e-9));
    }
    SECTION("funnel_ring optimum plays the paying action 2/3 of the time") {
        CmdpLpSolution lp = solve_cmdp_lp(make_funnel_ring(0.5, 3));
        REQUIRE(lp.j_r_star == Catch::Approx(2.0 / 3.0).margin(1e-9));
        REQUIRE(lp.j_c_at_opt == Catch::Approx(0.0).margin(1e-9));
        REQUIRE(lp.slater_delta == Catch::Approx(1.0).margin(1e-9));
        // All occupancy on the ring, split 2:1 between the actions.
        double on_action0 = lp.nu.col(0).sum();
        REQUIRE(on_action0 == Catch::Approx(2.0 / 3.0).margin(1e-9));
    }
    SECTION("a model whose every cost is negative is infeasible") {
        CmdpModel m = make_constrained_self_loop();
        m.cost(0, 0) = -1.0;
        m.cost(0, 1) = -0.5;
        REQUIRE_THROWS_AS(solve_cmdp_lp(m), InfeasibleModel);
    }
}

TEST_CASE("occupancy LP: the induced policy realizes the optimum") {
    for (const char* name : {"constrained_self_loop", "funnel_ring", "random_unichain"}) {
        CmdpModel model = build_env(name, {});
        UnichainPartition part = validate_unichain(model);
        CmdpLpSolution lp = solve_cmdp_lp(model);
        Matrix pi = occupancy_policy(model, lp.nu);
        Vector d = stationary_distribution(model, pi, part);
        REQUIRE(average_objective(model, pi, d, CmdpModel::Signal::Reward) ==
                Catch::Approx(lp.j_r_star).margin(1e-8));
        REQUIRE(average_objective(model, pi, d, CmdpModel::Signal::Cost) >= -1e-8);
    }
}

TEST_CASE("bias and advantage respect the hitting-constant bounds") {
    std::mt19937_64 rng(37);
    for (const EnvEntry& e : env_catalog()) {
        CmdpModel model = build_env(e.name, {});
        UnichainPartition part = validate_unichain(model);
        for (int rep = 0; rep < 5; ++rep) {
            SoftmaxPolicy pol{random_theta(model, rng), 1.0};
            Matrix pi = pol.matrix(model);
            Vector d = stationary_distribution(model, pi, part);
            UnichainConstants uc = hitting_constants(model, pi, d, part);
            PoissonSolution ps = solve_poisson(model, pi, d, CmdpModel::Signal::Reward);
            const double c = uc.c_total;
            REQUIRE(ps.v.cwiseAbs().maxCoeff() <= 2.0 * c + 1e-9);
            REQUIRE(ps.advantage.cwiseAbs().maxCoeff() <= 1.0 + 4.0 * c + 1e-9);
        }
    }
}
