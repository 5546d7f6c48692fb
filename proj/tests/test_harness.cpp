#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "cmdplab/config.hpp"
#include "cmdplab/harness.hpp"

using namespace cmdplab;

namespace {

std::filesystem::path temp_dir(const std::string& leaf) {
    auto p = std::filesystem::temp_directory_path() / leaf;
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

} // namespace

TEST_CASE("toml subset parsing") {
    SECTION("sections, scalars, arrays, comments") {
        const std::string text = R"(# experiment
[env]
name = "funnel_ring"   # catalog entry

[env.params]
p = 0.5
k = 3

[algo]
total_steps = 4096
alpha = 0.125

[run]
seeds = [1, 2, 3]
out_dir = "results"
debug_exact = false
)";
        nlohmann::json doc = parse_toml(text);
        REQUIRE(doc["env"]["name"] == "funnel_ring");
        REQUIRE(doc["env"]["params"]["p"] == 0.5);
        REQUIRE(doc["env"]["params"]["k"] == 3);
        REQUIRE(doc["algo"]["total_steps"] == 4096);
        REQUIRE(doc["algo"]["alpha"] == 0.125);
        REQUIRE(doc["run"]["seeds"] == nlohmann::json::array({1, 2, 3}));
        REQUIRE(doc["run"]["out_dir"] == "results");
        REQUIRE(doc["run"]["debug_exact"] == false);
    }
    SECTION("strings keep hashes and escapes") {
        nlohmann::json doc = parse_toml("[a]\nkey = \"va#lue\\\"x\"\n");
        REQUIRE(doc["a"]["key"] == "va#lue\"x");
    }
    SECTION("errors carry line numbers") {
        REQUIRE_THROWS_AS(parse_toml("[a\n"), ConfigError);
        REQUIRE_THROWS_AS(parse_toml("key\n"), ConfigError);
        REQUIRE_THROWS_AS(parse_toml("k = \n"), ConfigError);
        REQUIRE_THROWS_AS(parse_toml("k = [1, 2\n"), ConfigError);
        REQUIRE_THROWS_AS(parse_toml("k = 1\nk = 2\n"), ConfigError);
        REQUIRE_THROWS_AS(parse_toml("k = nope\n"), ConfigError);
    }
    SECTION("json detection") {
        nlohmann::json doc = parse_config_text(R"({"env": {"name": "two_ring"}})");
        REQUIRE(doc["env"]["name"] == "two_ring");
        nlohmann::json toml = parse_config_text("[env]\nname = \"two_ring\"\n");
        REQUIRE(toml["env"]["name"] == "two_ring");
    }
}

TEST_CASE("run config schema") {
    SECTION("full document") {
        nlohmann::json doc = parse_toml(R"([env]
name = "funnel_ring"
[env.params]
k = 4
[algo]
total_steps = 2048
t_max = 32
gamma_xi = 0.05
[run]
seeds = [5, 6]
out_dir = "x"
theta0 = [0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
[sweep]
budgets = [1024, 2048, 4096]
)");
        RunConfig cfg = run_config_from_json(doc);
        REQUIRE(cfg.env_name == "funnel_ring");
        REQUIRE(cfg.env_params["k"] == 4);
        REQUIRE(cfg.algo.total_steps == 2048);
        REQUIRE(cfg.algo.t_max == 32);
        REQUIRE(cfg.algo.gamma_xi == 0.05);
        REQUIRE(cfg.seeds == std::vector<std::uint64_t>{5, 6});
        REQUIRE(cfg.out_dir == "x");
        REQUIRE(cfg.theta0.size() == 10);
        REQUIRE(cfg.sweep_budgets == std::vector<long>{1024, 2048, 4096});
    }
    SECTION("missing env is rejected") {
        REQUIRE_THROWS_AS(run_config_from_json(parse_toml("[algo]\ntotal_steps = 10\n")),
                          ConfigError);
    }
    SECTION("unknown keys are rejected at every level") {
        REQUIRE_THROWS_AS(
            run_config_from_json(parse_toml("[env]\nname = \"two_ring\"\n[extra]\nx = 1\n")),
            ConfigError);
        REQUIRE_THROWS_AS(
            run_config_from_json(parse_toml("[env]\nname = \"two_ring\"\nweird = 1\n")),
            ConfigError);
        REQUIRE_THROWS_AS(run_config_from_json(parse_toml(
                              "[env]\nname = \"two_ring\"\n[algo]\nlearning_rate = 0.5\n")),
                          ConfigError);
    }
    SECTION("type errors are rejected") {
        REQUIRE_THROWS_AS(run_config_from_json(parse_toml(
                              "[env]\nname = \"two_ring\"\n[algo]\ntotal_steps = 0.5\n")),
                          ConfigError);
        REQUIRE_THROWS_AS(
            run_config_from_json(parse_toml("[env]\nname = \"two_ring\"\n[run]\nseeds = 3\n")),
            ConfigError);
    }
}

TEST_CASE("exponent fitting") {
    SECTION("recovers an exact power law") {
        std::vector<double> x{16, 64, 256, 1024};
        std::vector<double> y;
        for (double v : x) y.push_back(3.0 / v);
        ExponentFit fit = fit_exponent(x, y);
        REQUIRE(fit.slope == Catch::Approx(-1.0).margin(1e-12));
        REQUIRE(fit.intercept == Catch::Approx(std::log(3.0)).margin(1e-12));
        REQUIRE(fit.stderr_slope < 1e-12);
        REQUIRE(fit.ci_lo <= -1.0);
        REQUIRE(fit.ci_hi >= -1.0);
    }
    SECTION("confidence interval widens with noise") {
        std::vector<double> x{2, 4, 8, 16, 32, 64};
        std::vector<double> clean, noisy;
        for (size_t i = 0; i < x.size(); ++i) {
            clean.push_back(10.0 / x[i]);
            noisy.push_back(10.0 / x[i] * (i % 2 == 0 ? 1.4 : 0.7));
        }
        REQUIRE(fit_exponent(x, noisy).stderr_slope > fit_exponent(x, clean).stderr_slope);
    }
    SECTION("degenerate inputs are reported") {
        REQUIRE_THROWS_AS(fit_exponent({1, 2}, {1, 2}), DegenerateFit);
        REQUIRE_THROWS_AS(fit_exponent({1, 2, 3}, {1, 0, 3}), DegenerateFit);
        REQUIRE_THROWS_AS(fit_exponent({2, 2, 2}, {1, 2, 3}), DegenerateFit);
        REQUIRE_THROWS_AS(fit_exponent({1, 2, 3}, {1, 2}), DegenerateFit);
    }
}

TEST_CASE("csv round trips") {
    auto dir = temp_dir("cmdplab_csv_test");
    SECTION("steps") {
        std::vector<StepRecord> steps = {{0, 1, 0, 0.125, -0.25},
                                         {1, 0, 1, 1.0 / 3.0, 0.7071067811865476}};
        auto path = (dir / "steps.csv").string();
        write_steps_csv(path, steps);
        std::vector<StepRecord> back = read_steps_csv(path);
        REQUIRE(back.size() == steps.size());
        for (size_t i = 0; i < steps.size(); ++i) {
            REQUIRE(back[i].t == steps[i].t);
            REQUIRE(back[i].state == steps[i].state);
            REQUIRE(back[i].action == steps[i].action);
            REQUIRE(back[i].reward == steps[i].reward); // bit exact
            REQUIRE(back[i].cost == steps[i].cost);
        }
    }
    SECTION("epochs") {
        EpochRecord e;
        e.k = 3;
        e.j_r = 0.123456789012345678;
        e.j_c = -0.5;
        e.lambda = 1.75;
        e.burn_in_hit = true;
        e.samples_used = 421;
        auto path = (dir / "epochs.csv").string();
        write_epochs_csv(path, {e});
        auto back = read_epochs_csv(path);
        REQUIRE(back.size() == 1);
        REQUIRE(back[0].k == 3);
        REQUIRE(back[0].j_r == e.j_r);
        REQUIRE(back[0].j_c == e.j_c);
        REQUIRE(back[0].lambda == e.lambda);
        REQUIRE(back[0].burn_in_hit);
        REQUIRE(back[0].samples_used == 421);
    }
    SECTION("bad headers are rejected") {
        auto path = (dir / "bad.csv").string();
        std::ofstream(path) << "a,b,c\n";
        REQUIRE_THROWS_AS(read_steps_csv(path), ConfigError);
        REQUIRE_THROWS_AS(read_epochs_csv(path), ConfigError);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("accounting helpers") {
    std::vector<StepRecord> steps = {{0, 0, 0, 0.0, 1.0}, {1, 1, 0, 1.0, -0.5}};
    REQUIRE(trace_regret(steps, 0.75) == Catch::Approx(0.5).margin(1e-15));
    REQUIRE(trace_violation_sum(steps) == Catch::Approx(-0.5).margin(1e-15));
    REQUIRE(clipped(-0.5) == 0.0);
    REQUIRE(clipped(0.5) == 0.5);
}

TEST_CASE("experiment execution end to end") {
    RunConfig cfg;
    cfg.env_name = "two_ring";
    cfg.algo.total_steps = 512;
    cfg.algo.t_max = 8;
    cfg.seeds = {1, 2, 3};

    ExperimentResult ex = run_experiment(cfg);
    REQUIRE(ex.all_complete);
    REQUIRE(ex.outcomes.size() == 3);
    REQUIRE(ex.j_r_star == Catch::Approx(0.5).margin(1e-9));
    for (const SeedOutcome& o : ex.outcomes) {
        REQUIRE(o.completed);
        REQUIRE(o.n_steps > 0);
        REQUIRE(o.n_epochs == ex.resolved.epochs);
        // Alternating rewards keep the partial regret within one half step.
        REQUIRE(std::abs(o.regret) <= 0.5 + 1e-12);
        REQUIRE(o.j_r_final == Catch::Approx(0.5).margin(1e-9));
    }

    SECTION("thread count does not change results") {
        RunConfig cfg1 = cfg;
        setenv("CMDP_LAB_THREADS", "1", 1);
        ExperimentResult serial = run_experiment(cfg1);
        setenv("CMDP_LAB_THREADS", "3", 1);
        ExperimentResult parallel = run_experiment(cfg1);
        unsetenv("CMDP_LAB_THREADS");
        REQUIRE(serial.outcomes.size() == parallel.outcomes.size());
        for (size_t i = 0; i < serial.outcomes.size(); ++i) {
            REQUIRE(serial.outcomes[i].regret == parallel.outcomes[i].regret);
            REQUIRE(serial.outcomes[i].n_steps == parallel.outcomes[i].n_steps);
        }
    }
}

TEST_CASE("experiment files and summary") {
    RunConfig cfg;
    cfg.env_name = "funnel_ring";
    cfg.algo.total_steps = 1024;
    cfg.algo.t_max = 16;
    cfg.seeds = {4, 9};
    auto dir = temp_dir("cmdplab_files_test");
    cfg.out_dir = dir.string();

    ExperimentResult ex = run_experiment(cfg);
    REQUIRE(ex.all_complete);
    write_experiment_files(cfg, ex, cfg.out_dir);

    SECTION("summary json structure") {
        std::ifstream in(dir / "summary.json");
        REQUIRE(in.good());
        nlohmann::json summary = nlohmann::json::parse(in);
        REQUIRE(summary["env"]["name"] == "funnel_ring");
        REQUIRE(summary["all_complete"] == true);
        REQUIRE(summary["seeds"].size() == 2);
        REQUIRE(summary["seeds"][0].contains("regret"));
        REQUIRE(summary["seeds"][0].contains("violation_clipped"));
        REQUIRE(summary["algo"]["epochs"].get<int>() > 0);
        REQUIRE(summary["aggregate"].contains("mean_regret"));
    }
    SECTION("regret recomputed from the csv matches the in-memory value") {
        for (const SeedOutcome& o : ex.outcomes) {
            auto steps =
                read_steps_csv((dir / ("seed_" + std::to_string(o.seed)) / "steps.csv").string());
            REQUIRE(steps.size() == static_cast<size_t>(o.n_steps));
            double regret = trace_regret(steps, ex.j_r_star);
            REQUIRE(regret == Catch::Approx(o.regret).margin(1e-9));
            double violation = trace_violation_sum(steps);
            REQUIRE(violation == Catch::Approx(o.violation_sum).margin(1e-9));
        }
    }
    SECTION("epoch csv matches the trace") {
        const SeedOutcome& o = ex.outcomes[0];
        auto epochs =
            read_epochs_csv((dir / ("seed_" + std::to_string(o.seed)) / "epochs.csv").string());
        REQUIRE(epochs.size() == o.result.trace.epochs.size());
        for (size_t i = 0; i < epochs.size(); ++i) {
            REQUIRE(epochs[i].j_r == o.result.trace.epochs[i].j_r);
            REQUIRE(epochs[i].lambda == o.result.trace.epochs[i].lambda);
            REQUIRE(epochs[i].samples_used == o.result.trace.epochs[i].samples_used);
        }
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("failing seeds are reported, not thrown") {
    RunConfig cfg;
    cfg.env_name = "two_ring";
    cfg.algo.total_steps = 512;
    cfg.algo.t_max = 8;
    cfg.algo.gamma_xi = 1e200; // force a divergence
    cfg.seeds = {1};
    ExperimentResult ex = run_experiment(cfg);
    REQUIRE_FALSE(ex.all_complete);
    REQUIRE_FALSE(ex.outcomes[0].completed);
    REQUIRE_FALSE(ex.outcomes[0].error.empty());
    nlohmann::json summary = experiment_summary(cfg, ex);
    REQUIRE(summary["all_complete"] == false);
    REQUIRE(summary["seeds"][0].contains("error"));
}

TEST_CASE("theta0 length is validated") {
    RunConfig cfg;
    cfg.env_name = "two_ring";
    cfg.theta0 = {0.0, 1.0, 2.0}; // needs 2 entries
    REQUIRE_THROWS_AS(run_experiment(cfg), ConfigError);
}

TEST_CASE("budget sweep produces points and fits") {
    RunConfig cfg;
    cfg.env_name = "funnel_ring";
    cfg.algo.t_max = 16;
    cfg.seeds = {1, 2};
    cfg.sweep_budgets = {512, 1024, 2048};

    SweepResult sweep = run_sweep(cfg);
    REQUIRE(sweep.points.size() == 3);
    REQUIRE(sweep.all_complete);
    for (const SweepPoint& p : sweep.points) {
        REQUIRE(p.mean_steps > 0.0);
        REQUIRE(p.all_complete);
    }
    // Realized steps grow with the budget.
    REQUIRE(sweep.points[0].mean_steps < sweep.points[2].mean_steps);

    nlohmann::json summary = sweep_summary(sweep);
    REQUIRE(summary["points"].size() == 3);
    REQUIRE((summary.contains("regret_fit") || summary.contains("regret_fit_error")));

    SECTION("too few budgets are rejected") {
        RunConfig bad = cfg;
        bad.sweep_budgets = {512, 1024};
        REQUIRE_THROWS_AS(run_sweep(bad), ConfigError);
    }
}

TEST_CASE("diagnostics report") {
    CmdpModel m = make_two_ring();
    nlohmann::json rep = diagnostics_report(m, Vector::Zero(2));
    REQUIRE(rep["n_states"] == 2);
    REQUIRE(rep["period"] == 2);
    REQUIRE(rep["c_hit"] == 0.0);
    REQUIRE(rep["c_tar"].get<double>() == Catch::Approx(0.5).margin(1e-10));
    REQUIRE(rep["j_r_star"].get<double>() == Catch::Approx(0.5).margin(1e-9));
    REQUIRE(rep["signals"]["reward"]["lambda_subspace"].get<double>() ==
            Catch::Approx(1.0).margin(1e-10));
    REQUIRE(rep["transient_states"].empty());

    CmdpModel f = make_transient_funnel(0.5);
    nlohmann::json repf = diagnostics_report(f, Vector::Zero(2));
    REQUIRE(repf["c_hit"].get<double>() == Catch::Approx(2.0).margin(1e-10));
    REQUIRE(repf["signals"]["reward"]["lambda_subspace"] == "inf");
}

TEST_CASE("worker count respects the environment cap") {
    setenv("CMDP_LAB_THREADS", "2", 1);
    REQUIRE(worker_count(8) == 2);
    REQUIRE(worker_count(1) == 1);
    setenv("CMDP_LAB_THREADS", "0", 1);
    REQUIRE(worker_count(8) == 1);
    unsetenv("CMDP_LAB_THREADS");
    REQUIRE(worker_count(3) >= 1);
}
