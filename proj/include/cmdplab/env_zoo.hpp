#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmdplab/model.hpp"
#include "cmdplab/oracle.hpp"

namespace cmdplab {

// ---------------------------------------------------------------------------
// Small hand-built chains plus a seeded random generator.  Every entry is a
// single-recurrent-class model with rewards in [0, 1], costs in [-1, 1], and
// a strictly positive constraint margin.
// ---------------------------------------------------------------------------

/// Two states, one action, deterministic swap.  Period 2, no transients.
inline CmdpModel make_two_ring() {
    CmdpModel m;
    m.n_states = 2;
    m.n_actions = 1;
    m.transition = {Matrix::Zero(2, 2)};
    m.transition[0](0, 1) = 1.0;
    m.transition[0](1, 0) = 1.0;
    m.reward = Matrix::Zero(2, 1);
    m.reward(1, 0) = 1.0;
    m.cost = Matrix::Ones(2, 1);
    m.initial_dist = Vector::Zero(2);
    m.initial_dist(0) = 1.0;
    m.validate();
    return m;
}

/// One transient state that falls into an absorbing state with probability p.
inline CmdpModel make_transient_funnel(double p) {
    if (p <= 0.0 || p > 1.0) throw ConfigError("transient_funnel requires p in (0, 1]");
    CmdpModel m;
    m.n_states = 2;
    m.n_actions = 1;
    m.transition = {Matrix::Zero(2, 2)};
    m.transition[0](0, 0) = 1.0 - p;
    m.transition[0](0, 1) = p;
    m.transition[0](1, 1) = 1.0;
    m.reward = Matrix::Zero(2, 1);
    m.reward(1, 0) = 1.0;
    m.cost = Matrix::Ones(2, 1);
    m.initial_dist = Vector::Zero(2);
    m.initial_dist(0) = 1.0;
    m.validate();
    return m;
}

/// One state, two actions.  Action 0 pays reward 1 at cost -1; action 1 pays
/// nothing at cost +1.  The constraint J_c >= 0 forces an even mixture, so
/// the optimum is interior: J_r* = 1/2 with the constraint active.
inline CmdpModel make_constrained_self_loop() {
    CmdpModel m;
    m.n_states = 1;
    m.n_actions = 2;
    m.transition = {Matrix::Ones(1, 1), Matrix::Ones(1, 1)};
    m.reward = Matrix::Zero(1, 2);
    m.reward(0, 0) = 1.0;
    m.cost = Matrix::Zero(1, 2);
    m.cost(0, 0) = -1.0;
    m.cost(0, 1) = 1.0;
    m.initial_dist = Vector::Ones(1);
    m.validate();
    return m;
}

/// Deterministic one-action cycle over k states; reward 1 only at state 0.
inline CmdpModel make_periodic_ring(int k) {
    if (k < 2) throw ConfigError("periodic_ring requires k >= 2");
    CmdpModel m;
    m.n_states = k;
    m.n_actions = 1;
    m.transition = {Matrix::Zero(k, k)};
    for (int s = 0; s < k; ++s) m.transition[0](s, (s + 1) % k) = 1.0;
    m.reward = Matrix::Zero(k, 1);
    m.reward(0, 0) = 1.0;
    m.cost = Matrix::Ones(k, 1);
    m.initial_dist = Vector::Zero(k);
    m.initial_dist(0) = 1.0;
    m.validate();
    return m;
}

/// A transient entry state feeding a deterministic k-ring.  Both actions move
/// identically, so only rewards and costs depend on the action: on the ring,
/// action 0 pays reward 1 at cost -1/2 and action 1 pays 0 at cost +1.  The
/// optimal stationary mix plays action 0 with probability 2/3 (J_r* = 2/3,
/// constraint active, margin 1).
inline CmdpModel make_funnel_ring(double p, int k) {
    if (p <= 0.0 || p > 1.0) throw ConfigError("funnel_ring requires p in (0, 1]");
    if (k < 2) throw ConfigError("funnel_ring requires k >= 2");
    CmdpModel m;
    m.n_states = k + 1;
    m.n_actions = 2;
    Matrix t = Matrix::Zero(k + 1, k + 1);
    t(0, 0) = 1.0 - p;
    t(0, 1) = p;
    for (int s = 1; s <= k; ++s) t(s, s == k ? 1 : s + 1) = 1.0;
    m.transition = {t, t};
    m.reward = Matrix::Zero(k + 1, 2);
    m.cost = Matrix::Zero(k + 1, 2);
    for (int s = 1; s <= k; ++s) {
        m.reward(s, 0) = 1.0;
        m.cost(s, 0) = -0.5;
        m.cost(s, 1) = 1.0;
    }
    m.initial_dist = Vector::Zero(k + 1);
    m.initial_dist(0) = 1.0;
    m.validate();
    return m;
}

/// Seeded sparse random unichain.  States [0, n_transient) are transient and
/// the rest form one aperiodic-ish recurrent block (a covering cycle plus
/// random extra edges).  Rewards ~ U[0, 1], costs ~ U[-1, 1]; resampled until
/// the constraint margin exceeds 0.05.
inline CmdpModel make_random_unichain(int n_states, int n_actions, int n_transient,
                                      std::uint64_t seed) {
    if (n_states < 1 || n_actions < 1) throw ConfigError("random_unichain: bad sizes");
    if (n_transient < 0 || n_transient >= n_states)
        throw ConfigError("random_unichain: n_transient must lie in [0, n_states)");
    const int n_rec = n_states - n_transient;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    for (int attempt = 0; attempt < 1000; ++attempt) {
        CmdpModel m;
        m.n_states = n_states;
        m.n_actions = n_actions;
        m.transition.assign(static_cast<size_t>(n_actions), Matrix::Zero(n_states, n_states));
        auto fill_row = [&](int a, int s, int mandatory, int pool_lo, int pool_hi) {
            std::vector<int> succ{mandatory};
            std::uniform_int_distribution<int> pick(pool_lo, pool_hi);
            int extras = 1 + static_cast<int>(rng() % 2); // 1 or 2 extras -> 2-3 successors
            extras = std::min(extras, pool_hi - pool_lo);
            while (extras > 0) {
                int cand = pick(rng);
                if (std::find(succ.begin(), succ.end(), cand) == succ.end()) {
                    succ.push_back(cand);
                    --extras;
                }
            }
            std::sort(succ.begin(), succ.end());
            Vector w(static_cast<Eigen::Index>(succ.size()));
            for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = 0.1 + unit(rng);
            w /= w.sum();
            for (Eigen::Index i = 0; i < w.size(); ++i)
                m.transition[static_cast<size_t>(a)](s, succ[static_cast<size_t>(i)]) = w(i);
        };
        for (int s = 0; s < n_states; ++s) {
            for (int a = 0; a < n_actions; ++a) {
                if (s < n_transient) {
                    // Successor s+1 guarantees escape toward the recurrent block.
                    fill_row(a, s, s + 1, 0, n_states - 1);
                } else if (n_rec == 1) {
                    m.transition[static_cast<size_t>(a)](s, s) = 1.0;
                } else {
                    int next = n_transient + ((s - n_transient + 1) % n_rec);
                    fill_row(a, s, next, n_transient, n_states - 1);
                }
            }
        }
        m.reward = Matrix::NullaryExpr(n_states, n_actions, [&]() { return unit(rng); });
        m.cost = Matrix::NullaryExpr(n_states, n_actions, [&]() { return 2.0 * unit(rng) - 1.0; });
        m.initial_dist = Vector::Zero(n_states);
        m.initial_dist(0) = 1.0;
        m.validate();

        UnichainPartition part = validate_unichain(m);
        if (static_cast<int>(part.transient.size()) != n_transient) continue;
        try {
            CmdpLpSolution lp = solve_cmdp_lp(m);
            if (lp.slater_delta > 0.05) return m;
        } catch (const InfeasibleModel&) {
            continue;
        }
    }
    throw ConfigError("random_unichain: no feasible model found in 1000 attempts");
}

/// Period of the recurrent class of the action-union support graph: the gcd
/// of (depth(u) + 1 - depth(v)) over support edges u -> v inside the class.
inline int recurrent_period(const CmdpModel& model, const UnichainPartition& part) {
    const int n = model.n_states;
    std::vector<int> depth(static_cast<size_t>(n), -1);
    const int root = part.recurrent.at(0);
    std::deque<int> queue{root};
    depth[static_cast<size_t>(root)] = 0;
    auto has_edge = [&](int u, int v) {
        for (const Matrix& t : model.transition)
            if (t(u, v) > 0.0) return true;
        return false;
    };
    while (!queue.empty()) {
        int u = queue.front();
        queue.pop_front();
        for (int v : part.recurrent) {
            if (has_edge(u, v) && depth[static_cast<size_t>(v)] < 0) {
                depth[static_cast<size_t>(v)] = depth[static_cast<size_t>(u)] + 1;
                queue.push_back(v);
            }
        }
    }
    int g = 0;
    for (int u : part.recurrent)
        for (int v : part.recurrent)
            if (has_edge(u, v))
                g = std::gcd(g, depth[static_cast<size_t>(u)] + 1 - depth[static_cast<size_t>(v)]);
    return std::abs(g);
}

// ---------------------------------------------------------------------------
// Catalog.
// ---------------------------------------------------------------------------

struct EnvEntry {
    std::string name;
    nlohmann::json default_params;
    std::string summary;
};

inline const std::vector<EnvEntry>& env_catalog() {
    static const std::vector<EnvEntry> entries = {
        {"two_ring", nlohmann::json::object(), "two-state deterministic swap, period 2"},
        {"transient_funnel", {{"p", 0.5}}, "one transient state falling into a self-loop"},
        {"constrained_self_loop", nlohmann::json::object(),
         "one state, two actions, reward and cost in tension"},
        {"periodic_ring", {{"k", 3}}, "deterministic k-cycle, single action"},
        {"funnel_ring", {{"p", 0.5}, {"k", 3}},
         "transient entry into a k-ring; two actions trade reward against cost"},
        {"random_unichain", {{"n_states", 6}, {"n_actions", 2}, {"n_transient", 2}, {"seed", 7}},
         "seeded sparse random chain with transient prefix"},
    };
    return entries;
}

/// Builds an environment by catalog name.  Unknown parameter keys are
/// rejected; missing ones take the catalog defaults.
inline CmdpModel build_env(const std::string& name, const nlohmann::json& params) {
    const EnvEntry* entry = nullptr;
    for (const EnvEntry& e : env_catalog())
        if (e.name == name) entry = &e;
    if (entry == nullptr) throw ConfigError("unknown environment: " + name);
    nlohmann::json merged = entry->default_params;
    for (auto it = params.begin(); it != params.end(); ++it) {
        if (!merged.contains(it.key()))
            throw ConfigError("environment " + name + ": unknown parameter '" + it.key() + "'");
        merged[it.key()] = it.value();
    }
    if (name == "two_ring") return make_two_ring();
    if (name == "transient_funnel") return make_transient_funnel(merged.at("p").get<double>());
    if (name == "constrained_self_loop") return make_constrained_self_loop();
    if (name == "periodic_ring") return make_periodic_ring(merged.at("k").get<int>());
    if (name == "funnel_ring")
        return make_funnel_ring(merged.at("p").get<double>(), merged.at("k").get<int>());
    return make_random_unichain(
        merged.at("n_states").get<int>(), merged.at("n_actions").get<int>(),
        merged.at("n_transient").get<int>(), merged.at("seed").get<std::uint64_t>());
}

} // namespace cmdplab
