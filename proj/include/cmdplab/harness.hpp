#pragma once

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "cmdplab/config.hpp"
#include "cmdplab/driver.hpp"
#include "cmdplab/env_zoo.hpp"

namespace cmdplab {

// ---------------------------------------------------------------------------
// Accounting.
// ---------------------------------------------------------------------------

/// Realized regret against the best stationary value: sum_t (j_star - r_t).
inline double trace_regret(const std::vector<StepRecord>& steps, double j_r_star) {
    double total = 0.0;
    for (const StepRecord& s : steps) total += j_r_star - s.reward;
    return total;
}

/// Signed constraint violation accumulated over the trace: sum_t (-c_t).
inline double trace_violation_sum(const std::vector<StepRecord>& steps) {
    double total = 0.0;
    for (const StepRecord& s : steps) total -= s.cost;
    return total;
}

inline double clipped(double v) { return v > 0.0 ? v : 0.0; }

// ---------------------------------------------------------------------------
// Log-log exponent fits with a 95% confidence interval on the slope.
// ---------------------------------------------------------------------------

struct ExponentFit {
    double slope = 0.0;
    double intercept = 0.0;
    double stderr_slope = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    int n = 0;
};

namespace detail {

inline double student_t_95(int df) {
    static const double table[] = {12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306,
                                   2.262,  2.228, 2.201, 2.179, 2.160, 2.145, 2.131, 2.120,
                                   2.110,  2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064,
                                   2.060,  2.056, 2.052, 2.048, 2.045, 2.042};
    if (df < 1) throw DegenerateFit("need at least 3 points for a slope interval");
    if (df <= 30) return table[df - 1];
    return 1.96;
}

} // namespace detail

/// Ordinary least squares of log(y) on log(x).  Throws DegenerateFit when the
/// data cannot support a power-law fit (fewer than 3 points, non-positive
/// values, or zero spread in x).
inline ExponentFit fit_exponent(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw DegenerateFit("fit_exponent: size mismatch");
    const int n = static_cast<int>(x.size());
    if (n < 3) throw DegenerateFit("fit_exponent: need at least 3 points");
    std::vector<double> lx(x.size()), ly(y.size());
    for (size_t i = 0; i < x.size(); ++i) {
        if (x[i] <= 0.0 || y[i] <= 0.0)
            throw DegenerateFit("fit_exponent: non-positive value at index " + std::to_string(i));
        lx[i] = std::log(x[i]);
        ly[i] = std::log(y[i]);
    }
    double mx = 0.0, my = 0.0;
    for (int i = 0; i < n; ++i) {
        mx += lx[static_cast<size_t>(i)];
        my += ly[static_cast<size_t>(i)];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (int i = 0; i < n; ++i) {
        double dx = lx[static_cast<size_t>(i)] - mx;
        sxx += dx * dx;
        sxy += dx * (ly[static_cast<size_t>(i)] - my);
    }
    if (sxx <= 0.0) throw DegenerateFit("fit_exponent: no spread in x");
    ExponentFit fit;
    fit.n = n;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    double sse = 0.0;
    for (int i = 0; i < n; ++i) {
        double resid = ly[static_cast<size_t>(i)] - fit.intercept -
                       fit.slope * lx[static_cast<size_t>(i)];
        sse += resid * resid;
    }
    double var = n > 2 ? sse / (n - 2) : 0.0;
    fit.stderr_slope = std::sqrt(var / sxx);
    double t = detail::student_t_95(n - 2);
    fit.ci_lo = fit.slope - t * fit.stderr_slope;
    fit.ci_hi = fit.slope + t * fit.stderr_slope;
    return fit;
}

// ---------------------------------------------------------------------------
// CSV I/O.
// ---------------------------------------------------------------------------

inline void write_steps_csv(const std::string& path, const std::vector<StepRecord>& steps) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open for writing: " + path);
    out << "t,state,action,reward,cost\n" << std::setprecision(17);
    for (const StepRecord& s : steps)
        out << s.t << ',' << s.state << ',' << s.action << ',' << s.reward << ',' << s.cost
            << '\n';
}

inline void write_epochs_csv(const std::string& path, const std::vector<EpochRecord>& epochs) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open for writing: " + path);
    out << "k,j_r,j_c,lambda,burn_in_hit,samples_used\n" << std::setprecision(17);
    for (const EpochRecord& e : epochs)
        out << e.k << ',' << e.j_r << ',' << e.j_c << ',' << e.lambda << ','
            << (e.burn_in_hit ? 1 : 0) << ',' << e.samples_used << '\n';
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) fields.push_back(field);
    return fields;
}

} // namespace detail

inline std::vector<StepRecord> read_steps_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open for reading: " + path);
    std::string line;
    if (!std::getline(in, line) || detail::trim(line) != "t,state,action,reward,cost")
        throw ConfigError("bad step csv header in " + path);
    std::vector<StepRecord> steps;
    while (std::getline(in, line)) {
        if (detail::trim(line).empty()) continue;
        auto f = detail::split_csv_line(line);
        if (f.size() != 5) throw ConfigError("bad step csv row in " + path);
        steps.push_back({std::stol(f[0]), std::stoi(f[1]), std::stoi(f[2]), std::stod(f[3]),
                         std::stod(f[4])});
    }
    return steps;
}

inline std::vector<EpochRecord> read_epochs_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open for reading: " + path);
    std::string line;
    if (!std::getline(in, line) ||
        detail::trim(line) != "k,j_r,j_c,lambda,burn_in_hit,samples_used")
        throw ConfigError("bad epoch csv header in " + path);
    std::vector<EpochRecord> epochs;
    while (std::getline(in, line)) {
        if (detail::trim(line).empty()) continue;
        auto f = detail::split_csv_line(line);
        if (f.size() != 6) throw ConfigError("bad epoch csv row in " + path);
        EpochRecord e;
        e.k = std::stoi(f[0]);
        e.j_r = std::stod(f[1]);
        e.j_c = std::stod(f[2]);
        e.lambda = std::stod(f[3]);
        e.burn_in_hit = std::stoi(f[4]) != 0;
        e.samples_used = std::stol(f[5]);
        epochs.push_back(std::move(e));
    }
    return epochs;
}

// ---------------------------------------------------------------------------
// Experiment execution.
// ---------------------------------------------------------------------------

struct SeedOutcome {
    std::uint64_t seed = 0;
    bool completed = false;
    std::string error;
    long n_steps = 0;
    int n_epochs = 0;
    double regret = 0.0;
    double violation_sum = 0.0;
    double violation_clipped = 0.0;
    double j_r_final = 0.0;
    double j_c_final = 0.0;
    double lambda_final = 0.0;
    RunResult result; // full trace, kept for tests and file output
};

struct ExperimentResult {
    CmdpModel model;
    UnichainPartition partition;
    AlgoConfig resolved;
    double j_r_star = 0.0;
    double slater_delta = 0.0;
    std::vector<SeedOutcome> outcomes;
    bool all_complete = false;
};

inline int worker_count(size_t jobs) {
    long n = 0;
    if (const char* env = std::getenv("CMDP_LAB_THREADS")) {
        n = std::strtol(env, nullptr, 10);
        if (n < 1) n = 1;
    } else {
        n = static_cast<long>(std::thread::hardware_concurrency());
        if (n < 1) n = 1;
    }
    return static_cast<int>(std::min<size_t>(static_cast<size_t>(n), std::max<size_t>(jobs, 1)));
}

inline Vector resolve_theta0(const RunConfig& cfg, const CmdpModel& model) {
    const auto dim = static_cast<Eigen::Index>(model.n_states) * model.n_actions;
    if (cfg.theta0.empty()) return Vector::Zero(dim);
    if (static_cast<Eigen::Index>(cfg.theta0.size()) != dim)
        throw ConfigError("theta0 must have n_states * n_actions entries");
    return Eigen::Map<const Vector>(cfg.theta0.data(), dim);
}

/// Runs every seed of the configuration (in parallel up to CMDP_LAB_THREADS
/// workers) and gathers per-seed accounting.  Never throws for a failing
/// seed; the failure is recorded on its outcome.
inline ExperimentResult run_experiment(const RunConfig& cfg) {
    ExperimentResult ex;
    ex.model = build_env(cfg.env_name, cfg.env_params);
    ex.partition = validate_unichain(ex.model);
    FeatureMap features = FeatureMap::one_hot(ex.model.n_states);
    Vector theta0 = resolve_theta0(cfg, ex.model);

    CmdpLpSolution lp = solve_cmdp_lp(ex.model);
    ex.j_r_star = lp.j_r_star;
    ex.slater_delta = lp.slater_delta;

    ex.resolved = cfg.algo;
    resolve_schedule(ex.resolved, ex.model, ex.partition, features, features, theta0);

    ex.outcomes.resize(cfg.seeds.size());
    std::atomic<size_t> cursor{0};
    auto worker = [&]() {
        while (true) {
            size_t i = cursor.fetch_add(1);
            if (i >= cfg.seeds.size()) return;
            SeedOutcome& out = ex.outcomes[i];
            out.seed = cfg.seeds[i];
            try {
                AlgoConfig algo = ex.resolved;
                algo.seed = cfg.seeds[i];
                out.result = run_algorithm(ex.model, ex.partition, features, features, algo,
                                           theta0);
                out.n_steps = static_cast<long>(out.result.trace.steps.size());
                out.n_epochs = static_cast<int>(out.result.trace.epochs.size());
                out.regret = trace_regret(out.result.trace.steps, ex.j_r_star);
                out.violation_sum = trace_violation_sum(out.result.trace.steps);
                out.violation_clipped = clipped(out.violation_sum);
                SoftmaxPolicy final_policy{out.result.theta_final, ex.resolved.temperature};
                Matrix pi = final_policy.matrix(ex.model);
                Vector d = stationary_distribution(ex.model, pi, ex.partition);
                out.j_r_final = average_objective(ex.model, pi, d, CmdpModel::Signal::Reward);
                out.j_c_final = average_objective(ex.model, pi, d, CmdpModel::Signal::Cost);
                out.lambda_final = out.result.lambda_final;
                out.completed = true;
            } catch (const std::exception& e) {
                out.completed = false;
                out.error = e.what();
            }
        }
    };
    int n_workers = worker_count(cfg.seeds.size());
    if (n_workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<size_t>(n_workers));
        for (int i = 0; i < n_workers; ++i) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }
    ex.all_complete = true;
    for (const SeedOutcome& o : ex.outcomes) ex.all_complete = ex.all_complete && o.completed;
    return ex;
}

inline nlohmann::json algo_to_json(const AlgoConfig& a) {
    return {{"total_steps", a.total_steps},
            {"epochs", a.epochs},
            {"inner_iters", a.inner_iters},
            {"burn_in", a.burn_in},
            {"t_max", a.t_max},
            {"alpha", a.alpha},
            {"beta", a.beta},
            {"gamma_xi", a.gamma_xi},
            {"gamma_omega", a.gamma_omega},
            {"c_gamma", a.c_gamma},
            {"eps_reg", a.eps_reg},
            {"slater_delta", a.slater_delta},
            {"temperature", a.temperature},
            {"debug_exact", a.debug_exact}};
}

inline nlohmann::json experiment_summary(const RunConfig& cfg, const ExperimentResult& ex) {
    nlohmann::json seeds = nlohmann::json::array();
    double mean_regret = 0.0, mean_violation = 0.0;
    int completed = 0;
    for (const SeedOutcome& o : ex.outcomes) {
        nlohmann::json row = {{"seed", o.seed},       {"completed", o.completed},
                              {"n_steps", o.n_steps}, {"n_epochs", o.n_epochs},
                              {"regret", o.regret},   {"violation_sum", o.violation_sum},
                              {"violation_clipped", o.violation_clipped},
                              {"j_r_final", o.j_r_final}, {"j_c_final", o.j_c_final},
                              {"lambda_final", o.lambda_final}};
        if (!o.completed) row["error"] = o.error;
        seeds.push_back(row);
        if (o.completed) {
            mean_regret += o.regret;
            mean_violation += o.violation_clipped;
            ++completed;
        }
    }
    nlohmann::json agg;
    if (completed > 0) {
        agg = {{"mean_regret", mean_regret / completed},
               {"mean_violation_clipped", mean_violation / completed}};
    }
    return {{"env", {{"name", cfg.env_name}, {"params", cfg.env_params}}},
            {"algo", algo_to_json(ex.resolved)},
            {"j_r_star", ex.j_r_star},
            {"slater_delta", ex.slater_delta},
            {"seeds", seeds},
            {"aggregate", agg},
            {"all_complete", ex.all_complete}};
}

/// Writes per-seed CSVs plus summary.json under out_dir.
inline void write_experiment_files(const RunConfig& cfg, const ExperimentResult& ex,
                                   const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    for (const SeedOutcome& o : ex.outcomes) {
        if (!o.completed) continue;
        fs::path dir = fs::path(out_dir) / ("seed_" + std::to_string(o.seed));
        fs::create_directories(dir);
        write_steps_csv((dir / "steps.csv").string(), o.result.trace.steps);
        write_epochs_csv((dir / "epochs.csv").string(), o.result.trace.epochs);
    }
    std::ofstream out(fs::path(out_dir) / "summary.json");
    out << experiment_summary(cfg, ex).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Budget sweep: rerun the same configuration across total-step budgets and
// fit power laws for regret and clipped violation against the nominal budget.
// ---------------------------------------------------------------------------

struct SweepPoint {
    long budget = 0;
    double mean_regret = 0.0;
    double mean_violation_clipped = 0.0;
    double mean_steps = 0.0;
    bool all_complete = false;
};

struct SweepResult {
    std::vector<SweepPoint> points;
    ExponentFit regret_fit;
    bool regret_fit_ok = false;
    std::string regret_fit_error;
    ExponentFit violation_fit;
    bool violation_fit_ok = false;
    std::string violation_fit_error;
    bool all_complete = false;
};

inline SweepResult run_sweep(const RunConfig& base) {
    if (base.sweep_budgets.size() < 3)
        throw ConfigError("sweep requires at least 3 budgets");
    SweepResult sweep;
    sweep.all_complete = true;
    for (long budget : base.sweep_budgets) {
        RunConfig cfg = base;
        cfg.algo.total_steps = budget;
        ExperimentResult ex = run_experiment(cfg);
        SweepPoint point;
        point.budget = budget;
        point.all_complete = ex.all_complete;
        int completed = 0;
        for (const SeedOutcome& o : ex.outcomes) {
            if (!o.completed) continue;
            point.mean_regret += o.regret;
            point.mean_violation_clipped += o.violation_clipped;
            point.mean_steps += static_cast<double>(o.n_steps);
            ++completed;
        }
        if (completed > 0) {
            point.mean_regret /= completed;
            point.mean_violation_clipped /= completed;
            point.mean_steps /= completed;
        } else {
            sweep.all_complete = false;
        }
        sweep.all_complete = sweep.all_complete && ex.all_complete;
        sweep.points.push_back(point);
    }
    std::vector<double> xs, regrets, violations;
    for (const SweepPoint& p : sweep.points) {
        xs.push_back(static_cast<double>(p.budget));
        regrets.push_back(p.mean_regret);
        violations.push_back(p.mean_violation_clipped);
    }
    try {
        sweep.regret_fit = fit_exponent(xs, regrets);
        sweep.regret_fit_ok = true;
    } catch (const DegenerateFit& e) {
        sweep.regret_fit_ok = false;
        sweep.regret_fit_error = e.what();
    }
    try {
        sweep.violation_fit = fit_exponent(xs, violations);
        sweep.violation_fit_ok = true;
    } catch (const DegenerateFit& e) {
        sweep.violation_fit_ok = false;
        sweep.violation_fit_error = e.what();
    }
    return sweep;
}

inline nlohmann::json fit_to_json(const ExponentFit& f) {
    return {{"slope", f.slope},   {"intercept", f.intercept},
            {"stderr", f.stderr_slope}, {"ci_lo", f.ci_lo},
            {"ci_hi", f.ci_hi},   {"n", f.n}};
}

inline nlohmann::json sweep_summary(const SweepResult& sweep) {
    nlohmann::json points = nlohmann::json::array();
    for (const SweepPoint& p : sweep.points)
        points.push_back({{"budget", p.budget},
                          {"mean_regret", p.mean_regret},
                          {"mean_violation_clipped", p.mean_violation_clipped},
                          {"mean_steps", p.mean_steps},
                          {"all_complete", p.all_complete}});
    nlohmann::json out = {{"points", points}, {"all_complete", sweep.all_complete}};
    if (sweep.regret_fit_ok)
        out["regret_fit"] = fit_to_json(sweep.regret_fit);
    else
        out["regret_fit_error"] = sweep.regret_fit_error;
    if (sweep.violation_fit_ok)
        out["violation_fit"] = fit_to_json(sweep.violation_fit);
    else
        out["violation_fit_error"] = sweep.violation_fit_error;
    return out;
}

// ---------------------------------------------------------------------------
// Structural diagnostics for one environment at a given policy parameter.
// ---------------------------------------------------------------------------

inline nlohmann::json diagnostics_report(const CmdpModel& model, const Vector& theta,
                                         double temperature = 1.0) {
    UnichainPartition part = validate_unichain(model);
    SoftmaxPolicy policy{theta, temperature};
    Matrix pi = policy.matrix(model);
    Vector d = stationary_distribution(model, pi, part);
    UnichainConstants uc = hitting_constants(model, pi, d, part);
    FeatureMap features = FeatureMap::one_hot(model.n_states);
    CmdpLpSolution lp = solve_cmdp_lp(model);

    nlohmann::json per_signal;
    for (CmdpModel::Signal g : {CmdpModel::Signal::Reward, CmdpModel::Signal::Cost}) {
        CriticGroundTruth gt = critic_ground_truth(model, pi, features, d, g, 1.0);
        PoissonSolution ps = solve_poisson(model, pi, d, g);
        const char* key = g == CmdpModel::Signal::Reward ? "reward" : "cost";
        per_signal[key] = {{"gain", gt.gain},
                           {"lambda_subspace", std::isfinite(gt.lambda_subspace)
                                                   ? nlohmann::json(gt.lambda_subspace)
                                                   : nlohmann::json("inf")},
                           {"kernel_dim", gt.kernel_basis.cols()},
                           {"bias_span", ps.v.maxCoeff() - ps.v.minCoeff()}};
    }
    std::vector<double> c_tar_per_state;
    for (int s : part.recurrent)
        c_tar_per_state.push_back(uc.c_tar_per_state(s));
    return {{"n_states", model.n_states},
            {"n_actions", model.n_actions},
            {"recurrent_states", part.recurrent},
            {"transient_states", part.transient},
            {"period", recurrent_period(model, part)},
            {"stationary", std::vector<double>(d.data(), d.data() + d.size())},
            {"c_hit", uc.c_hit},
            {"c_tar", uc.c_tar},
            {"c_total", uc.c_total},
            {"c_tar_per_recurrent_state", c_tar_per_state},
            {"j_r_star", lp.j_r_star},
            {"j_c_at_opt", lp.j_c_at_opt},
            {"slater_delta", lp.slater_delta},
            {"signals", per_signal}};
}

} // namespace cmdplab
