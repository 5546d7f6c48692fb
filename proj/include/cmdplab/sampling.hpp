#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "cmdplab/model.hpp"

namespace cmdplab {

// ---------------------------------------------------------------------------
// Reproducible randomness.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Phase identifiers used to key independent random streams.
enum class Phase : std::uint32_t {
    Init = 0,
    BurnIn = 1,
    CriticReward = 2,
    CriticCost = 3,
    NpgReward = 4,
    NpgCost = 5,
    Aux = 6,
};

/// Addressable random stream: the same (seed, epoch, phase, inner) tuple
/// always yields the same engine; distinct tuples are decorrelated by a
/// splitmix64 hash chain.
struct RngStream {
    std::uint64_t seed = 0;
    std::uint32_t epoch = 0;
    Phase phase = Phase::Init;
    std::uint32_t inner = 0;

    std::mt19937_64 engine() const {
        std::uint64_t h = splitmix64(seed);
        h = splitmix64(h ^ (static_cast<std::uint64_t>(epoch) + 0x1000003ULL));
        h = splitmix64(h ^ (static_cast<std::uint64_t>(phase) + 0x2000003ULL));
        h = splitmix64(h ^ (static_cast<std::uint64_t>(inner) + 0x3000003ULL));
        return std::mt19937_64(h);
    }
};

/// Samples an index from an explicit probability row (inverse CDF).
template <typename Derived>
inline int sample_index(const Eigen::MatrixBase<Derived>& probs, std::mt19937_64& rng) {
    double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    double acc = 0.0;
    int last = 0;
    for (int i = 0; i < probs.size(); ++i) {
        acc += probs(i);
        last = i;
        if (u <= acc) return i;
    }
    return last; // guard against rounding when u ~ 1
}

// ---------------------------------------------------------------------------
// Chain interaction.
// ---------------------------------------------------------------------------

/// One sampled environment interaction.
struct Transition {
    int s = 0;
    int a = 0;
    int s_next = 0;
    double reward = 0.0;
    double cost = 0.0;
};

/// Samples a ~ pi(.|s), s' ~ P(.|s,a); returns the transition and advances
/// the caller's state.
inline Transition step_chain(const CmdpModel& model, const SoftmaxPolicy& policy, int& state,
                             std::mt19937_64& rng) {
    Vector probs = policy.action_distribution(model, state);
    int a = sample_index(probs, rng);
    int s2 = sample_index(model.transition[static_cast<size_t>(a)].row(state), rng);
    Transition z{state, a, s2, model.reward(state, a), model.cost(state, a)};
    state = s2;
    return z;
}

/// Sampler with a cached policy matrix for tight loops.
class PolicySampler {
public:
    PolicySampler(const CmdpModel& model, const SoftmaxPolicy& policy)
        : model_(&model), pi_(policy.matrix(model)) {}

    Transition step(int& state, std::mt19937_64& rng) const {
        int a = sample_index(pi_.row(state), rng);
        int s2 = sample_index(model_->transition[static_cast<size_t>(a)].row(state), rng);
        Transition z{state, a, s2, model_->reward(state, a), model_->cost(state, a)};
        state = s2;
        return z;
    }

    const Matrix& policy_matrix() const { return pi_; }

private:
    const CmdpModel* model_;
    Matrix pi_;
};

// ---------------------------------------------------------------------------
// Per-sample estimator terms.
// ---------------------------------------------------------------------------

/// Critic iterate xi = (eta, zeta): scalar gain estimate plus linear value
/// weights.
struct CriticState {
    Vector xi;

    explicit CriticState(int feature_dim) : xi(Vector::Zero(1 + feature_dim)) {}
    explicit CriticState(Vector v) : xi(std::move(v)) {}

    double eta() const { return xi(0); }
    Eigen::VectorBlock<const Vector> zeta() const { return xi.tail(xi.size() - 1); }
};

/// Per-sample critic update direction A(z) xi - b(z) for one transition,
/// where A(z) = [[c_gamma, 0], [phi(s), phi(s)(phi(s)-phi(s'))']] and
/// b(z) = (c_gamma g, g phi(s)).
inline Vector critic_sample(const CmdpModel& model, const FeatureMap& features,
                            CmdpModel::Signal g, double c_gamma, const Vector& xi,
                            const Transition& z) {
    const int m = features.dimension;
    Vector phi_s = features.phi(z.s);
    Vector phi_diff = phi_s - features.phi(z.s_next);
    double val = model.signal(g, z.s, z.a);
    double eta = xi(0);
    Vector out(1 + m);
    out(0) = c_gamma * (eta - val);
    out.tail(m) = phi_s * (eta + phi_diff.dot(xi.tail(m)) - val);
    return out;
}

/// Per-sample quadratic-surrogate gradient for the natural-gradient solver:
/// (score'omega - A_hat) score, with the critic-parameterized advantage
/// A_hat = g(s,a) - eta + zeta'(phi(s') - phi(s)).
inline Vector npg_sample(const CmdpModel& model, const SoftmaxPolicy& policy,
                         const FeatureMap& features, CmdpModel::Signal g, const Vector& xi,
                         const Vector& omega, const Transition& z) {
    Vector sc = policy.score(model, z.s, z.a);
    const auto m = xi.size() - 1;
    double a_hat = model.signal(g, z.s, z.a) - xi(0) +
                   xi.tail(m).dot(features.phi(z.s_next) - features.phi(z.s));
    return (sc.dot(omega) - a_hat) * sc;
}

// ---------------------------------------------------------------------------
// Multilevel Monte Carlo estimator for stationary expectations.
// ---------------------------------------------------------------------------

/// Outcome of one multilevel draw.  The trajectory is the contiguous chain
/// segment consumed by the draw; level averages are means over its nested
/// prefixes of length 1, 2^{q-1}, and 2^q.
struct MlmcDraw {
    int level_q = 0;
    bool truncated = false;
    std::vector<Transition> trajectory;
    Vector g0;
    Vector g_qm1; // empty when truncated
    Vector g_q;   // empty when truncated
    Vector estimate;
};

inline bool is_power_of_two(long v) { return v > 0 && (v & (v - 1)) == 0; }

inline int floor_log2(long v) {
    int j = 0;
    while ((1L << (j + 1)) <= v) ++j;
    return j;
}

/// Expected chain samples consumed per draw: floor(log2 t_max) + 2^{-floor(log2 t_max)}.
inline double expected_mlmc_samples(long t_max) {
    int j = floor_log2(t_max);
    return static_cast<double>(j) + std::ldexp(1.0, -j);
}

/// Draws Q ~ Geometric(1/2) on {1, 2, ...}, rolls the per-sample stream
/// forward 2^Q steps (one step if 2^Q exceeds t_max), and combines prefix
/// averages into the debiased estimate g0 + 2^Q (g^Q - g^{Q-1}).
///
/// `next` must return std::pair<Vector, Transition>: the per-sample term and
/// the transition that produced it, advancing the underlying chain.
template <typename NextFn>
inline MlmcDraw mlmc_estimate(NextFn&& next, Eigen::Index dim, long t_max, std::mt19937_64& rng) {
    if (!is_power_of_two(t_max)) throw ConfigError("mlmc t_max must be a positive power of two");
    MlmcDraw draw;
    draw.level_q = std::geometric_distribution<int>(0.5)(rng) + 1;
    const bool fits = draw.level_q < 62 && (1L << draw.level_q) <= t_max;
    draw.truncated = !fits;
    const long len = fits ? (1L << draw.level_q) : 1;
    draw.trajectory.reserve(static_cast<size_t>(len));

    Vector sum = Vector::Zero(dim);
    for (long t = 0; t < len; ++t) {
        auto [term, z] = next();
        sum += term;
        draw.trajectory.push_back(z);
        if (t == 0) draw.g0 = sum;
        if (fits && t + 1 == len / 2) draw.g_qm1 = sum / static_cast<double>(len / 2);
        if (fits && t + 1 == len) draw.g_q = sum / static_cast<double>(len);
    }
    if (draw.truncated) {
        draw.estimate = draw.g0;
    } else {
        draw.estimate =
            draw.g0 + std::ldexp(1.0, draw.level_q) * (draw.g_q - draw.g_qm1);
    }
    return draw;
}

// ---------------------------------------------------------------------------
// Empirical moment measurement, used to validate estimator scalings.
// ---------------------------------------------------------------------------

struct MomentReport {
    Vector mean;       // empirical mean of the estimator
    double bias_sq = 0.0;  // squared norm of (mean - truth)
    double mse = 0.0;      // mean squared deviation from truth
    double mean_len = 0.0; // average chain samples per draw
};

/// Monte Carlo moments of the multilevel estimator for a per-transition
/// functional with known stationary mean.  Each trial starts a fresh
/// trajectory at start_state.
template <typename Functional>
inline MomentReport measure_mlmc_moments(const CmdpModel& model, const SoftmaxPolicy& policy,
                                         Functional&& functional, Eigen::Index dim,
                                         const Vector& truth, long t_max, int n_trials,
                                         int start_state, std::mt19937_64& rng) {
    PolicySampler sampler(model, policy);
    MomentReport rep;
    rep.mean = Vector::Zero(dim);
    double mse = 0.0, len = 0.0;
    for (int trial = 0; trial < n_trials; ++trial) {
        int state = start_state;
        auto next = [&]() {
            Transition z = sampler.step(state, rng);
            return std::make_pair(functional(z), z);
        };
        MlmcDraw draw = mlmc_estimate(next, dim, t_max, rng);
        rep.mean += draw.estimate;
        mse += (draw.estimate - truth).squaredNorm();
        len += static_cast<double>(draw.trajectory.size());
    }
    rep.mean /= static_cast<double>(n_trials);
    rep.bias_sq = (rep.mean - truth).squaredNorm();
    rep.mse = mse / static_cast<double>(n_trials);
    rep.mean_len = len / static_cast<double>(n_trials);
    return rep;
}

/// Mean squared error of the plain n-sample trajectory average of a
/// per-transition functional, fresh trajectory per trial.
template <typename Functional>
inline double level_average_mse(const CmdpModel& model, const SoftmaxPolicy& policy,
                                Functional&& functional, Eigen::Index dim, const Vector& truth,
                                long n_samples, int n_trials, int start_state,
                                std::mt19937_64& rng) {
    PolicySampler sampler(model, policy);
    double mse = 0.0;
    for (int trial = 0; trial < n_trials; ++trial) {
        int state = start_state;
        Vector sum = Vector::Zero(dim);
        for (long t = 0; t < n_samples; ++t) sum += functional(sampler.step(state, rng));
        mse += (sum / static_cast<double>(n_samples) - truth).squaredNorm();
    }
    return mse / static_cast<double>(n_trials);
}

} // namespace cmdplab
