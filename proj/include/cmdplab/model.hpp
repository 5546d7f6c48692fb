#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmdplab/errors.hpp"

namespace cmdplab {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kRowSumTol = 1e-12;

/// Finite average-reward constrained MDP.
///
/// Transitions are stored per action: transition[a](s, s') is the probability
/// of moving to s' when action a is taken in state s.  Rewards live in [0, 1],
/// costs in [-1, 1].  The constraint convention is "average cost >= 0".
struct CmdpModel {
    int n_states = 0;
    int n_actions = 0;
    std::vector<Matrix> transition; // indexed by action, each n_states x n_states
    Matrix reward;                  // n_states x n_actions
    Matrix cost;                    // n_states x n_actions
    Vector initial_dist;            // length n_states

    double p(int s, int a, int s2) const { return transition[static_cast<size_t>(a)](s, s2); }

    /// Signal selector: the algorithm runs identical machinery on reward and cost.
    enum class Signal { Reward, Cost };

    double signal(Signal g, int s, int a) const {
        return g == Signal::Reward ? reward(s, a) : cost(s, a);
    }

    const Matrix& signal_matrix(Signal g) const {
        return g == Signal::Reward ? reward : cost;
    }

    /// Throws ConfigError unless all stochasticity and range constraints hold.
    void validate() const {
        if (n_states < 1 || n_actions < 1)
            throw ConfigError("model must have at least one state and one action");
        if (static_cast<int>(transition.size()) != n_actions)
            throw ConfigError("transition tensor has wrong action count");
        for (int a = 0; a < n_actions; ++a) {
            const Matrix& pa = transition[static_cast<size_t>(a)];
            if (pa.rows() != n_states || pa.cols() != n_states)
                throw ConfigError("transition matrix has wrong shape");
            for (int s = 0; s < n_states; ++s) {
                double row_sum = pa.row(s).sum();
                if (std::abs(row_sum - 1.0) > kRowSumTol)
                    throw ConfigError("transition row (s=" + std::to_string(s) + ", a=" +
                                      std::to_string(a) + ") sums to " + std::to_string(row_sum));
                if ((pa.row(s).array() < 0.0).any())
                    throw ConfigError("negative transition probability");
            }
        }
        if (reward.rows() != n_states || reward.cols() != n_actions)
            throw ConfigError("reward matrix has wrong shape");
        if (cost.rows() != n_states || cost.cols() != n_actions)
            throw ConfigError("cost matrix has wrong shape");
        if ((reward.array() < 0.0).any() || (reward.array() > 1.0).any())
            throw ConfigError("rewards must lie in [0, 1]");
        if ((cost.array() < -1.0).any() || (cost.array() > 1.0).any())
            throw ConfigError("costs must lie in [-1, 1]");
        if (initial_dist.size() != n_states)
            throw ConfigError("initial distribution has wrong length");
        if ((initial_dist.array() < 0.0).any() ||
            std::abs(initial_dist.sum() - 1.0) > kRowSumTol)
            throw ConfigError("initial distribution is not a probability vector");
    }
};

/// Flat parameter index for state-action pair (s, a), row-major by state.
inline int param_index(const CmdpModel& model, int s, int a) { return s * model.n_actions + a; }

/// Tabular softmax policy: pi(a|s) proportional to exp(theta[s,a] / temperature).
struct SoftmaxPolicy {
    Vector theta;             // length n_states * n_actions
    double temperature = 1.0;

    static SoftmaxPolicy uniform(const CmdpModel& model) {
        return SoftmaxPolicy{Vector::Zero(model.n_states * model.n_actions), 1.0};
    }

    Vector action_distribution(const CmdpModel& model, int s) const {
        const int na = model.n_actions;
        Vector logits(na);
        for (int a = 0; a < na; ++a) logits(a) = theta(param_index(model, s, a)) / temperature;
        double m = logits.maxCoeff();
        Vector probs = (logits.array() - m).exp();
        probs /= probs.sum();
        return probs;
    }

    /// n_states x n_actions matrix of action probabilities.
    Matrix matrix(const CmdpModel& model) const {
        Matrix pi(model.n_states, model.n_actions);
        for (int s = 0; s < model.n_states; ++s) pi.row(s) = action_distribution(model, s).transpose();
        return pi;
    }

    /// Gradient of log pi(a|s) with respect to theta.  Only the block for
    /// state s is nonzero: (1{a'=a} - pi(a'|s)) / temperature.
    Vector score(const CmdpModel& model, int s, int a) const {
        Vector out = Vector::Zero(theta.size());
        Vector probs = action_distribution(model, s);
        for (int a2 = 0; a2 < model.n_actions; ++a2)
            out(param_index(model, s, a2)) = (((a2 == a) ? 1.0 : 0.0) - probs(a2)) / temperature;
        return out;
    }
};

/// State feature map used by the linear critic.  All features must satisfy
/// ||phi(s)|| <= 1.
struct FeatureMap {
    int dimension = 0;
    std::function<Vector(int)> phi;

    static FeatureMap one_hot(int n_states) {
        FeatureMap f;
        f.dimension = n_states;
        f.phi = [n_states](int s) {
            Vector e = Vector::Zero(n_states);
            e(s) = 1.0;
            return e;
        };
        return f;
    }

    /// Throws ConfigError if any state feature exceeds unit norm.
    void validate(const CmdpModel& model) const {
        if (dimension < 1) throw ConfigError("feature map must have positive dimension");
        for (int s = 0; s < model.n_states; ++s) {
            Vector v = phi(s);
            if (v.size() != dimension) throw ConfigError("feature vector has wrong length");
            if (v.norm() > 1.0 + 1e-12)
                throw ConfigError("feature norm exceeds 1 at state " + std::to_string(s));
        }
    }
};

/// State-to-state kernel induced by a policy: P(s, s') = sum_a P(s'|s,a) pi(a|s).
inline Matrix induced_kernel(const CmdpModel& model, const Matrix& policy_matrix) {
    if (policy_matrix.rows() != model.n_states || policy_matrix.cols() != model.n_actions)
        throw ConfigError("policy matrix has wrong shape");
    Matrix k = Matrix::Zero(model.n_states, model.n_states);
    for (int a = 0; a < model.n_actions; ++a)
        k += policy_matrix.col(a).asDiagonal() * model.transition[static_cast<size_t>(a)];
    return k;
}

inline Matrix induced_kernel(const CmdpModel& model, const SoftmaxPolicy& policy) {
    return induced_kernel(model, policy.matrix(model));
}

/// Partition of the state space produced by validate_unichain.
struct UnichainPartition {
    std::vector<int> recurrent; // sorted
    std::vector<int> transient; // sorted
    std::vector<bool> is_recurrent;
};

namespace detail {

/// Kosaraju strongly connected components on a dense adjacency grid.
inline std::vector<int> scc_labels(const std::vector<std::vector<bool>>& adj) {
    const int n = static_cast<int>(adj.size());
    std::vector<int> order;
    order.reserve(n);
    std::vector<bool> seen(n, false);
    for (int s0 = 0; s0 < n; ++s0) {
        if (seen[s0]) continue;
        // Iterative post-order DFS.
        std::vector<std::pair<int, int>> stack{{s0, 0}};
        seen[s0] = true;
        while (!stack.empty()) {
            auto& [u, next] = stack.back();
            bool pushed = false;
            for (int v = next; v < n; ++v) {
                if (adj[u][v] && !seen[v]) {
                    stack.back().second = v + 1;
                    seen[v] = true;
                    stack.emplace_back(v, 0);
                    pushed = true;
                    break;
                }
            }
            if (!pushed) {
                order.push_back(u);
                stack.pop_back();
            }
        }
    }
    std::vector<int> label(n, -1);
    int n_comp = 0;
    for (int i = n - 1; i >= 0; --i) {
        int s0 = order[static_cast<size_t>(i)];
        if (label[s0] != -1) continue;
        std::vector<int> stack{s0};
        label[s0] = n_comp;
        while (!stack.empty()) {
            int u = stack.back();
            stack.pop_back();
            for (int v = 0; v < n; ++v) {
                if (adj[v][u] && label[v] == -1) { // reversed edge
                    label[v] = n_comp;
                    stack.push_back(v);
                }
            }
        }
        ++n_comp;
    }
    return label;
}

} // namespace detail

/// Classifies states using the union support graph (an edge s -> s' exists
/// iff P(s'|s,a) > 0 for some action).  Because every policy of interest has
/// full support, this classification is policy independent.  Throws
/// MultipleRecurrentClasses unless exactly one closed communicating class
/// exists; states outside it are transient.
inline UnichainPartition validate_unichain(const CmdpModel& model) {
    const int n = model.n_states;
    std::vector<std::vector<bool>> adj(n, std::vector<bool>(n, false));
    for (int s = 0; s < n; ++s)
        for (int a = 0; a < model.n_actions; ++a)
            for (int s2 = 0; s2 < n; ++s2)
                if (model.p(s, a, s2) > 0.0) adj[s][s2] = true;

    std::vector<int> label = detail::scc_labels(adj);
    int n_comp = *std::max_element(label.begin(), label.end()) + 1;
    std::vector<bool> closed(n_comp, true);
    for (int s = 0; s < n; ++s)
        for (int s2 = 0; s2 < n; ++s2)
            if (adj[s][s2] && label[s] != label[s2]) closed[static_cast<size_t>(label[s])] = false;

    std::vector<int> closed_comps;
    for (int c = 0; c < n_comp; ++c)
        if (closed[static_cast<size_t>(c)]) closed_comps.push_back(c);
    if (closed_comps.size() != 1)
        throw MultipleRecurrentClasses("support graph has " + std::to_string(closed_comps.size()) +
                                       " closed communicating classes (expected exactly 1)");

    UnichainPartition part;
    part.is_recurrent.assign(n, false);
    for (int s = 0; s < n; ++s) {
        if (label[s] == closed_comps[0]) {
            part.recurrent.push_back(s);
            part.is_recurrent[static_cast<size_t>(s)] = true;
        } else {
            part.transient.push_back(s);
        }
    }
    return part;
}

// ---------------------------------------------------------------------------
// Model (de)serialization.  Schema: n_states, n_actions, transition as a
// [state][action][next_state] array, reward and cost as [state][action]
// arrays, initial_dist as a vector.
// ---------------------------------------------------------------------------

inline nlohmann::json model_to_json(const CmdpModel& model) {
    nlohmann::json j;
    j["n_states"] = model.n_states;
    j["n_actions"] = model.n_actions;
    auto trans = nlohmann::json::array();
    for (int s = 0; s < model.n_states; ++s) {
        auto per_action = nlohmann::json::array();
        for (int a = 0; a < model.n_actions; ++a) {
            auto row = nlohmann::json::array();
            for (int s2 = 0; s2 < model.n_states; ++s2) row.push_back(model.p(s, a, s2));
            per_action.push_back(row);
        }
        trans.push_back(per_action);
    }
    j["transition"] = trans;
    auto mat_to_json = [&](const Matrix& m) {
        auto rows = nlohmann::json::array();
        for (int s = 0; s < m.rows(); ++s) {
            auto row = nlohmann::json::array();
            for (int a = 0; a < m.cols(); ++a) row.push_back(m(s, a));
            rows.push_back(row);
        }
        return rows;
    };
    j["reward"] = mat_to_json(model.reward);
    j["cost"] = mat_to_json(model.cost);
    auto rho = nlohmann::json::array();
    for (int s = 0; s < model.n_states; ++s) rho.push_back(model.initial_dist(s));
    j["initial_dist"] = rho;
    return j;
}

inline CmdpModel model_from_json(const nlohmann::json& j) {
    static const std::vector<std::string> known{"n_states", "n_actions", "transition",
                                                "reward",   "cost",      "initial_dist"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            throw ConfigError("unknown model key: " + it.key());
    CmdpModel m;
    try {
        m.n_states = j.at("n_states").get<int>();
        m.n_actions = j.at("n_actions").get<int>();
        if (m.n_states < 1 || m.n_actions < 1) throw ConfigError("empty model");
        m.transition.assign(static_cast<size_t>(m.n_actions),
                            Matrix::Zero(m.n_states, m.n_states));
        const auto& trans = j.at("transition");
        if (static_cast<int>(trans.size()) != m.n_states)
            throw ConfigError("transition array has wrong state count");
        for (int s = 0; s < m.n_states; ++s) {
            const auto& per_action = trans.at(static_cast<size_t>(s));
            if (static_cast<int>(per_action.size()) != m.n_actions)
                throw ConfigError("transition array has wrong action count");
            for (int a = 0; a < m.n_actions; ++a) {
                const auto& row = per_action.at(static_cast<size_t>(a));
                if (static_cast<int>(row.size()) != m.n_states)
                    throw ConfigError("transition row has wrong length");
                for (int s2 = 0; s2 < m.n_states; ++s2)
                    m.transition[static_cast<size_t>(a)](s, s2) =
                        row.at(static_cast<size_t>(s2)).get<double>();
            }
        }
        auto mat_from_json = [&](const nlohmann::json& rows) {
            Matrix out(m.n_states, m.n_actions);
            if (static_cast<int>(rows.size()) != m.n_states)
                throw ConfigError("matrix has wrong row count");
            for (int s = 0; s < m.n_states; ++s) {
                const auto& row = rows.at(static_cast<size_t>(s));
                if (static_cast<int>(row.size()) != m.n_actions)
                    throw ConfigError("matrix row has wrong length");
                for (int a = 0; a < m.n_actions; ++a)
                    out(s, a) = row.at(static_cast<size_t>(a)).get<double>();
            }
            return out;
        };
        m.reward = mat_from_json(j.at("reward"));
        m.cost = mat_from_json(j.at("cost"));
        const auto& rho = j.at("initial_dist");
        if (static_cast<int>(rho.size()) != m.n_states)
            throw ConfigError("initial_dist has wrong length");
        m.initial_dist.resize(m.n_states);
        for (int s = 0; s < m.n_states; ++s)
            m.initial_dist(s) = rho.at(static_cast<size_t>(s)).get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed model JSON: ") + e.what());
    }
    m.validate();
    return m;
}

inline void save_model(const CmdpModel& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open " + path + " for writing");
    out << model_to_json(model).dump(2) << "\n";
}

inline CmdpModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open model file " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("cannot parse model JSON: ") + e.what());
    }
    return model_from_json(j);
}

} // namespace cmdplab
