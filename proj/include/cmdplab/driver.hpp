#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cmdplab/model.hpp"
#include "cmdplab/oracle.hpp"
#include "cmdplab/sampling.hpp"

namespace cmdplab {

// ---------------------------------------------------------------------------
// Primal-dual natural actor-critic with burn-in, inner linear critic, and
// multilevel gradient estimates.  Each epoch runs, on one continuing chain:
// burn-in, a critic loop per signal, a natural-gradient loop per signal, then
// one primal step and one projected dual step.
// ---------------------------------------------------------------------------

struct AlgoConfig {
    long total_steps = 1L << 14; // sample budget T the schedule is derived from
    int epochs = -1;             // K; -1 derives floor(T / (B + 2H(log2 t_max + 1)))
    int inner_iters = -1;        // H; -1 derives ceil(log2 T)
    int burn_in = -1;            // B; -1 derives ceil((4 c_hit + 1) log2 T)
    long t_max = 256;            // per-draw trajectory cap, power of two
    double alpha = -1.0;         // primal step; -1 derives 1/sqrt(T)
    double beta = -1.0;          // dual step; -1 derives 1/sqrt(T)
    double gamma_xi = -1.0;      // critic step; -1 derives min(8 ln T / (lambda H), cap)
    double gamma_omega = -1.0;   // gradient-solver step; -1 derives min(8 ln T / (mu H), cap)
    double c_gamma = -1.0;       // gain coupling; -1 derives from lambda_subspace
    double eps_reg = 1e-3;       // Fisher ridge; also the mu in the omega step rule
    double slater_delta = -1.0;  // -1 derives from the occupancy LP, clipped to (0, 1]
    double temperature = 1.0;
    bool debug_exact = false;    // replace every estimator by its exact mean
    std::uint64_t seed = 1;

    void validate() const {
        if (total_steps < 1) throw ConfigError("total_steps must be positive");
        if (!is_power_of_two(t_max)) throw ConfigError("t_max must be a positive power of two");
        if (epochs < 0 || inner_iters < 0 || burn_in < 0)
            throw ConfigError("schedule not resolved (epochs/inner_iters/burn_in unset)");
        if (alpha < 0 || beta < 0 || gamma_xi <= 0 || gamma_omega <= 0)
            throw ConfigError("step sizes must be resolved and positive");
        if (c_gamma <= 0) throw ConfigError("c_gamma must be positive");
        if (eps_reg <= 0) throw ConfigError("eps_reg must be positive");
        if (slater_delta <= 0 || slater_delta > 1)
            throw ConfigError("slater_delta must lie in (0, 1]");
        if (temperature <= 0) throw ConfigError("temperature must be positive");
    }
};

/// Fills every derived field of the schedule that is still unset (-1).
/// The rate shapes follow the analysis (H ~ log T, alpha = beta = 1/sqrt(T),
/// inner steps ~ 8 ln T / (modulus * H)); the inner steps are additionally
/// capped by a stability bound since the nominal rule exceeds the contraction
/// region for small T.
inline void resolve_schedule(AlgoConfig& cfg, const CmdpModel& model,
                             const UnichainPartition& part, const FeatureMap& features_r,
                             const FeatureMap& features_c, const Vector& theta0) {
    const double t = static_cast<double>(cfg.total_steps);
    const double log2t = std::log2(std::max(t, 2.0));
    SoftmaxPolicy pol{theta0, cfg.temperature};
    const Matrix pi = pol.matrix(model);
    const Vector d = stationary_distribution(model, pi, part);

    if (cfg.slater_delta < 0) {
        CmdpLpSolution lp = solve_cmdp_lp(model);
        cfg.slater_delta = std::min(lp.slater_delta, 1.0);
        if (cfg.slater_delta <= 0)
            throw InfeasibleModel("slater margin is not strictly positive");
    }
    if (cfg.burn_in < 0) {
        UnichainConstants uc = hitting_constants(model, pi, d, part);
        cfg.burn_in = static_cast<int>(std::ceil((4.0 * uc.c_hit + 1.0) * log2t));
    }
    if (cfg.inner_iters < 0) cfg.inner_iters = static_cast<int>(std::ceil(log2t));
    if (cfg.alpha < 0) cfg.alpha = 1.0 / std::sqrt(t);
    if (cfg.beta < 0) cfg.beta = 1.0 / std::sqrt(t);

    double lambda_hat = std::numeric_limits<double>::infinity();
    for (CmdpModel::Signal g : {CmdpModel::Signal::Reward, CmdpModel::Signal::Cost}) {
        const FeatureMap& f = g == CmdpModel::Signal::Reward ? features_r : features_c;
        CriticGroundTruth gt = critic_ground_truth(model, pi, f, d, g, 1.0);
        lambda_hat = std::min(lambda_hat, gt.lambda_subspace);
    }
    if (cfg.c_gamma < 0) {
        // The modulus estimate can land an ulp below 1 on chains where it is
        // exactly 1, which would send the coupling to its lower clamp.
        if (!std::isfinite(lambda_hat) || lambda_hat >= 1.0 - 1e-9)
            cfg.c_gamma = 2.0;
        else
            cfg.c_gamma = std::clamp(lambda_hat + std::sqrt(1.0 / (lambda_hat * lambda_hat) - 1.0),
                                     1.0, 10.0);
    }
    const double h = static_cast<double>(cfg.inner_iters);
    if (cfg.gamma_xi <= 0) {
        double nominal = std::isfinite(lambda_hat) ? 8.0 * std::log(t) / (lambda_hat * h)
                                                   : 8.0 * std::log(t) / h;
        cfg.gamma_xi = std::min(nominal, 1.0 / (2.0 * (cfg.c_gamma + 3.0)));
    }
    if (cfg.gamma_omega <= 0) {
        double g1_sq = 2.0 / (cfg.temperature * cfg.temperature);
        double nominal = 8.0 * std::log(t) / (cfg.eps_reg * h);
        cfg.gamma_omega = std::min(nominal, 1.0 / (2.0 * (g1_sq + cfg.eps_reg)));
    }
    if (cfg.epochs < 0) {
        long j = floor_log2(cfg.t_max);
        long per_epoch = cfg.burn_in + 2L * cfg.inner_iters * (j + 1);
        cfg.epochs = static_cast<int>(cfg.total_steps / per_epoch);
    }
    cfg.validate();
}

/// Dual variable with its projection interval [0, 2/delta].
struct DualVariable {
    double lambda = 0.0;
    double upper = 0.0;
};

struct BurnInResult {
    bool hit = false;       // some visited state (including the start) is recurrent
    int first_hit_step = -1;
    int final_state = 0;
};

/// Rolls the chain forward b steps, recording transitions and checking entry
/// into the recurrent class (oracle-side diagnostic only; the updates never
/// consume this flag).
inline BurnInResult burn_in(const PolicySampler& sampler, const UnichainPartition& part,
                            int& state, int b, std::mt19937_64& rng,
                            std::vector<Transition>& out) {
    BurnInResult res;
    if (part.is_recurrent[static_cast<size_t>(state)]) {
        res.hit = true;
        res.first_hit_step = 0;
    }
    for (int i = 0; i < b; ++i) {
        out.push_back(sampler.step(state, rng));
        if (!res.hit && part.is_recurrent[static_cast<size_t>(state)]) {
            res.hit = true;
            res.first_hit_step = i + 1;
        }
    }
    res.final_state = state;
    return res;
}

namespace detail {

inline void check_finite(const Vector& v, const std::string& where) {
    if (!v.allFinite()) throw NonFiniteUpdate("non-finite iterate in " + where);
}

/// Per-epoch cache of features, scores, and signal values for tight loops.
struct EpochWorkspace {
    const CmdpModel* model = nullptr;
    std::vector<Vector> phi_r, phi_c; // per state
    std::vector<Vector> scores;       // per (s, a), flat index
    Matrix pi;

    EpochWorkspace(const CmdpModel& m, const SoftmaxPolicy& policy, const FeatureMap& fr,
                   const FeatureMap& fc)
        : model(&m), pi(policy.matrix(m)) {
        phi_r.reserve(static_cast<size_t>(m.n_states));
        phi_c.reserve(static_cast<size_t>(m.n_states));
        for (int s = 0; s < m.n_states; ++s) {
            phi_r.push_back(fr.phi(s));
            phi_c.push_back(fc.phi(s));
        }
        scores.reserve(static_cast<size_t>(m.n_states * m.n_actions));
        for (int s = 0; s < m.n_states; ++s)
            for (int a = 0; a < m.n_actions; ++a) scores.push_back(policy.score(m, s, a));
    }

    const std::vector<Vector>& phi(CmdpModel::Signal g) const {
        return g == CmdpModel::Signal::Reward ? phi_r : phi_c;
    }
};

} // namespace detail

/// Stochastic critic loop: h multilevel draws on the continuing chain, each
/// one a step xi <- xi - gamma_xi * estimate.  Returns xi_H; transitions are
/// appended to `out`.
inline Vector run_critic_phase(const CmdpModel& model, const detail::EpochWorkspace& ws,
                               const PolicySampler& sampler, CmdpModel::Signal g,
                               const AlgoConfig& cfg, Phase phase, std::uint32_t epoch,
                               int& state, std::vector<Transition>& out) {
    const auto& phi = ws.phi(g);
    const int m = static_cast<int>(phi[0].size());
    const Matrix& sig = model.signal_matrix(g);
    Vector xi = Vector::Zero(1 + m);
    Vector term(1 + m);
    for (int h = 0; h < cfg.inner_iters; ++h) {
        auto rng = RngStream{cfg.seed, epoch, phase, static_cast<std::uint32_t>(h)}.engine();
        auto next = [&]() {
            Transition z = sampler.step(state, rng);
            const Vector& ps = phi[static_cast<size_t>(z.s)];
            double td = xi(0) + (ps - phi[static_cast<size_t>(z.s_next)]).dot(xi.tail(m)) -
                        sig(z.s, z.a);
            term(0) = cfg.c_gamma * (xi(0) - sig(z.s, z.a));
            term.tail(m) = ps * td;
            return std::make_pair(term, z);
        };
        MlmcDraw draw = mlmc_estimate(next, 1 + m, cfg.t_max, rng);
        xi -= cfg.gamma_xi * draw.estimate;
        detail::check_finite(xi, "critic phase (epoch " + std::to_string(epoch) + ", h " +
                                     std::to_string(h) + ")");
        out.insert(out.end(), draw.trajectory.begin(), draw.trajectory.end());
    }
    return xi;
}

/// Deterministic critic loop against the exact update direction A xi - b.
inline Vector run_critic_phase_exact(const CriticGroundTruth& gt, double gamma_xi, int h_iters) {
    Vector xi = Vector::Zero(gt.b_vec.size());
    for (int h = 0; h < h_iters; ++h) {
        xi -= gamma_xi * (gt.a_mat * xi - gt.b_vec);
        detail::check_finite(xi, "exact critic phase");
    }
    return xi;
}

/// Stochastic natural-gradient loop for one signal.  Each step applies the
/// multilevel estimate of (score score' omega - A_hat score) plus the ridge
/// eps_reg * omega, so the noiseless fixed point is
/// (F + eps_reg I) omega = E[A_hat score].
inline Vector run_npg_phase(const CmdpModel& model, const detail::EpochWorkspace& ws,
                            const PolicySampler& sampler, CmdpModel::Signal g, const Vector& xi,
                            const AlgoConfig& cfg, Phase phase, std::uint32_t epoch, int& state,
                            std::vector<Transition>& out) {
    const auto& phi = ws.phi(g);
    const auto m = xi.size() - 1;
    const auto dim = ws.scores[0].size();
    const Matrix& sig = model.signal_matrix(g);
    Vector omega = Vector::Zero(dim);
    Vector term(dim);
    for (int h = 0; h < cfg.inner_iters; ++h) {
        auto rng = RngStream{cfg.seed, epoch, phase, static_cast<std::uint32_t>(h)}.engine();
        auto next = [&]() {
            Transition z = sampler.step(state, rng);
            const Vector& sc = ws.scores[static_cast<size_t>(z.s * model.n_actions + z.a)];
            double a_hat = sig(z.s, z.a) - xi(0) +
                           xi.tail(m).dot(phi[static_cast<size_t>(z.s_next)] -
                                          phi[static_cast<size_t>(z.s)]);
            term = (sc.dot(omega) - a_hat) * sc;
            return std::make_pair(term, z);
        };
        MlmcDraw draw = mlmc_estimate(next, dim, cfg.t_max, rng);
        omega -= cfg.gamma_omega * (draw.estimate + cfg.eps_reg * omega);
        detail::check_finite(omega, "npg phase (epoch " + std::to_string(epoch) + ", h " +
                                        std::to_string(h) + ")");
        out.insert(out.end(), draw.trajectory.begin(), draw.trajectory.end());
    }
    return omega;
}

/// The exact stationary mean of the per-sample natural-gradient term at
/// omega = 0: E[A_hat(xi) score].  Used by the deterministic loop and tests.
inline Vector critic_parameterized_gradient(const CmdpModel& model, const SoftmaxPolicy& policy,
                                            const FeatureMap& features, const Vector& d,
                                            CmdpModel::Signal g, const Vector& xi) {
    const Matrix pi = policy.matrix(model);
    const auto m = xi.size() - 1;
    Vector grad = Vector::Zero(policy.theta.size());
    for_each_stationary_transition(model, pi, d, [&](int s, int a, int s2, double w) {
        double a_hat =
            model.signal(g, s, a) - xi(0) + xi.tail(m).dot(features.phi(s2) - features.phi(s));
        grad += w * a_hat * policy.score(model, s, a);
    });
    return grad;
}

/// Deterministic natural-gradient loop: omega <- omega - gamma ((F + eps I) omega - grad).
inline Vector run_npg_phase_exact(const FisherInfo& fisher, const Vector& grad,
                                  double gamma_omega, int h_iters) {
    const auto dim = grad.size();
    Vector omega = Vector::Zero(dim);
    const Matrix reg = fisher.f + fisher.eps * Matrix::Identity(dim, dim);
    for (int h = 0; h < h_iters; ++h) {
        omega -= gamma_omega * (reg * omega - grad);
        detail::check_finite(omega, "exact npg phase");
    }
    return omega;
}

/// One primal ascent step and one projected dual descent step.
inline std::pair<Vector, double> primal_dual_step(const Vector& theta, double lambda,
                                                  const Vector& omega_r, const Vector& omega_c,
                                                  double eta_c, double alpha, double beta,
                                                  double dual_upper) {
    Vector combined = omega_r + lambda * omega_c;
    Vector theta_next = theta + alpha * combined;
    detail::check_finite(theta_next, "primal step");
    double lambda_next = lambda - beta * eta_c;
    if (!std::isfinite(lambda_next)) throw NonFiniteUpdate("non-finite dual update");
    lambda_next = std::clamp(lambda_next, 0.0, dual_upper);
    return {theta_next, lambda_next};
}

// ---------------------------------------------------------------------------
// Full run.
// ---------------------------------------------------------------------------

struct StepRecord {
    long t = 0;
    int state = 0;
    int action = 0;
    double reward = 0.0;
    double cost = 0.0;
};

struct EpochRecord {
    int k = 0;
    Vector theta;
    double lambda = 0.0;
    double j_r = 0.0; // exact averages of the epoch's policy (instrumentation)
    double j_c = 0.0;
    double eta_r = 0.0;
    double eta_c = 0.0;
    Vector xi_r, xi_c;
    Vector omega_r, omega_c, omega_combined;
    bool burn_in_hit = false;
    int burn_in_step = -1;
    long samples_used = 0;
};

struct RegretTrace {
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;
};

struct RunResult {
    RegretTrace trace;
    Vector theta_final;
    double lambda_final = 0.0;
    long total_samples = 0;
};

/// Runs the full primal-dual loop for cfg.epochs epochs.  The chain is never
/// reset: burn-in, critic draws, and gradient draws continue from the last
/// visited state.  In debug_exact mode every estimator is replaced by its
/// exact mean and no samples are consumed.
inline RunResult run_algorithm(const CmdpModel& model, const UnichainPartition& part,
                               const FeatureMap& features_r, const FeatureMap& features_c,
                               const AlgoConfig& cfg, const Vector& theta0) {
    cfg.validate();
    features_r.validate(model);
    features_c.validate(model);
    RunResult result;
    Vector theta = theta0;
    DualVariable dual{0.0, 2.0 / cfg.slater_delta};

    auto init_rng = RngStream{cfg.seed, 0, Phase::Init, 0}.engine();
    int state = sample_index(model.initial_dist, init_rng);
    long t_global = 0;

    std::vector<Transition> segment;
    auto flush_segment = [&](long& used) {
        for (const Transition& z : segment) {
            result.trace.steps.push_back({t_global++, z.s, z.a, z.reward, z.cost});
        }
        used += static_cast<long>(segment.size());
        segment.clear();
    };

    for (int k = 0; k < cfg.epochs; ++k) {
        SoftmaxPolicy policy{theta, cfg.temperature};
        const Matrix pi = policy.matrix(model);
        const Vector d = stationary_distribution(model, pi, part);

        EpochRecord rec;
        rec.k = k;
        rec.theta = theta;
        rec.lambda = dual.lambda;
        rec.j_r = average_objective(model, pi, d, CmdpModel::Signal::Reward);
        rec.j_c = average_objective(model, pi, d, CmdpModel::Signal::Cost);

        if (cfg.debug_exact) {
            CriticGroundTruth gt_r = critic_ground_truth(model, pi, features_r, d,
                                                         CmdpModel::Signal::Reward, cfg.c_gamma);
            CriticGroundTruth gt_c = critic_ground_truth(model, pi, features_c, d,
                                                         CmdpModel::Signal::Cost, cfg.c_gamma);
            rec.xi_r = run_critic_phase_exact(gt_r, cfg.gamma_xi, cfg.inner_iters);
            rec.xi_c = run_critic_phase_exact(gt_c, cfg.gamma_xi, cfg.inner_iters);
            FisherInfo fisher = fisher_exact(model, policy, d, cfg.eps_reg);
            Vector grad_r = critic_parameterized_gradient(model, policy, features_r, d,
                                                          CmdpModel::Signal::Reward, rec.xi_r);
            Vector grad_c = critic_parameterized_gradient(model, policy, features_c, d,
                                                          CmdpModel::Signal::Cost, rec.xi_c);
            rec.omega_r = run_npg_phase_exact(fisher, grad_r, cfg.gamma_omega, cfg.inner_iters);
            rec.omega_c = run_npg_phase_exact(fisher, grad_c, cfg.gamma_omega, cfg.inner_iters);
            rec.burn_in_hit = true;
            rec.burn_in_step = 0;
        } else {
            PolicySampler sampler(model, policy);
            detail::EpochWorkspace ws(model, policy, features_r, features_c);
            auto burn_rng =
                RngStream{cfg.seed, static_cast<std::uint32_t>(k), Phase::BurnIn, 0}.engine();
            BurnInResult burn = burn_in(sampler, part, state, cfg.burn_in, burn_rng, segment);
            rec.burn_in_hit = burn.hit;
            rec.burn_in_step = burn.first_hit_step;
            flush_segment(rec.samples_used);

            rec.xi_r = run_critic_phase(model, ws, sampler, CmdpModel::Signal::Reward, cfg,
                                        Phase::CriticReward, static_cast<std::uint32_t>(k), state,
                                        segment);
            flush_segment(rec.samples_used);
            rec.xi_c = run_critic_phase(model, ws, sampler, CmdpModel::Signal::Cost, cfg,
                                        Phase::CriticCost, static_cast<std::uint32_t>(k), state,
                                        segment);
            flush_segment(rec.samples_used);
            rec.omega_r = run_npg_phase(model, ws, sampler, CmdpModel::Signal::Reward, rec.xi_r,
                                        cfg, Phase::NpgReward, static_cast<std::uint32_t>(k),
                                        state, segment);
            flush_segment(rec.samples_used);
            rec.omega_c = run_npg_phase(model, ws, sampler, CmdpModel::Signal::Cost, rec.xi_c,
                                        cfg, Phase::NpgCost, static_cast<std::uint32_t>(k),
                                        state, segment);
            flush_segment(rec.samples_used);
        }
        rec.eta_r = rec.xi_r(0);
        rec.eta_c = rec.xi_c(0);
        rec.omega_combined = rec.omega_r + dual.lambda * rec.omega_c;

        auto [theta_next, lambda_next] =
            primal_dual_step(theta, dual.lambda, rec.omega_r, rec.omega_c, rec.eta_c, cfg.alpha,
                             cfg.beta, dual.upper);
        theta = theta_next;
        dual.lambda = lambda_next;
        result.trace.epochs.push_back(std::move(rec));
    }
    result.theta_final = theta;
    result.lambda_final = dual.lambda;
    result.total_samples = t_global;
    return result;
}

} // namespace cmdplab
