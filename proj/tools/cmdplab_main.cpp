// Command-line front end: run experiments, sweep budgets, inspect the
// environment catalog, and print oracle diagnostics.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cmdplab/config.hpp"
#include "cmdplab/harness.hpp"

namespace {

nlohmann::json parse_params_arg(const std::string& text) {
    if (text.empty()) return nlohmann::json::object();
    nlohmann::json params = nlohmann::json::parse(text);
    if (!params.is_object()) throw cmdplab::ConfigError("--params must be a JSON object");
    return params;
}

int cmd_run(const std::string& config_path, const std::vector<std::uint64_t>& seeds,
            const std::string& out_dir, bool debug_exact) {
    cmdplab::RunConfig cfg = cmdplab::load_run_config(config_path);
    if (!seeds.empty()) cfg.seeds = seeds;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (debug_exact) cfg.algo.debug_exact = true;

    cmdplab::ExperimentResult ex = cmdplab::run_experiment(cfg);
    cmdplab::write_experiment_files(cfg, ex, cfg.out_dir);
    for (const cmdplab::SeedOutcome& o : ex.outcomes) {
        if (o.completed) {
            std::cout << "seed " << o.seed << ": steps=" << o.n_steps
                      << " epochs=" << o.n_epochs << " regret=" << o.regret
                      << " violation=" << o.violation_clipped << " j_r=" << o.j_r_final
                      << " j_c=" << o.j_c_final << "\n";
        } else {
            std::cout << "seed " << o.seed << ": FAILED (" << o.error << ")\n";
        }
    }
    std::cout << "wrote " << cfg.out_dir << "/summary.json\n";
    return ex.all_complete ? 0 : 1;
}

int cmd_sweep(const std::string& config_path, const std::string& out_dir) {
    cmdplab::RunConfig cfg = cmdplab::load_run_config(config_path);
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    cmdplab::SweepResult sweep = cmdplab::run_sweep(cfg);
    nlohmann::json summary = cmdplab::sweep_summary(sweep);
    std::filesystem::create_directories(cfg.out_dir);
    std::ofstream out(std::filesystem::path(cfg.out_dir) / "sweep.json");
    out << summary.dump(2) << '\n';
    for (const cmdplab::SweepPoint& p : sweep.points)
        std::cout << "budget " << p.budget << ": regret=" << p.mean_regret
                  << " violation=" << p.mean_violation_clipped << "\n";
    if (sweep.regret_fit_ok)
        std::cout << "regret exponent " << sweep.regret_fit.slope << " (95% ci ["
                  << sweep.regret_fit.ci_lo << ", " << sweep.regret_fit.ci_hi << "])\n";
    else
        std::cout << "regret exponent unavailable: " << sweep.regret_fit_error << "\n";
    if (sweep.violation_fit_ok)
        std::cout << "violation exponent " << sweep.violation_fit.slope << " (95% ci ["
                  << sweep.violation_fit.ci_lo << ", " << sweep.violation_fit.ci_hi << "])\n";
    else
        std::cout << "violation exponent unavailable: " << sweep.violation_fit_error << "\n";
    std::cout << "wrote " << cfg.out_dir << "/sweep.json\n";
    return sweep.all_complete ? 0 : 1;
}

int cmd_envs_list() {
    for (const cmdplab::EnvEntry& e : cmdplab::env_catalog())
        std::cout << e.name << "  defaults=" << e.default_params.dump() << "  (" << e.summary
                  << ")\n";
    return 0;
}

int cmd_envs_export(const std::string& name, const std::string& params_text,
                    const std::string& out_path) {
    cmdplab::CmdpModel model = cmdplab::build_env(name, parse_params_arg(params_text));
    cmdplab::save_model(model, out_path);
    std::cout << "wrote " << out_path << "\n";
    return 0;
}

int cmd_oracle(const std::string& name, const std::string& params_text) {
    cmdplab::CmdpModel model = cmdplab::build_env(name, parse_params_arg(params_text));
    cmdplab::CmdpLpSolution lp = cmdplab::solve_cmdp_lp(model);
    cmdplab::UnichainPartition part = cmdplab::validate_unichain(model);
    cmdplab::SoftmaxPolicy uniform = cmdplab::SoftmaxPolicy::uniform(model);
    cmdplab::Matrix pi = uniform.matrix(model);
    cmdplab::Vector d = cmdplab::stationary_distribution(model, pi, part);
    nlohmann::json occupancy = nlohmann::json::array();
    for (int s = 0; s < model.n_states; ++s)
        for (int a = 0; a < model.n_actions; ++a)
            if (lp.nu(s, a) > 1e-12) occupancy.push_back({{"state", s}, {"action", a},
                                                          {"mass", lp.nu(s, a)}});
    nlohmann::json report = {
        {"j_r_star", lp.j_r_star},
        {"j_c_at_opt", lp.j_c_at_opt},
        {"slater_delta", lp.slater_delta},
        {"optimal_occupancy", occupancy},
        {"uniform_policy",
         {{"j_r", cmdplab::average_objective(model, pi, d, cmdplab::CmdpModel::Signal::Reward)},
          {"j_c", cmdplab::average_objective(model, pi, d, cmdplab::CmdpModel::Signal::Cost)}}}};
    std::cout << report.dump(2) << "\n";
    return 0;
}

int cmd_diagnose(const std::string& name, const std::string& params_text) {
    cmdplab::CmdpModel model = cmdplab::build_env(name, parse_params_arg(params_text));
    cmdplab::Vector theta0 =
        cmdplab::Vector::Zero(static_cast<Eigen::Index>(model.n_states) * model.n_actions);
    std::cout << cmdplab::diagnostics_report(model, theta0).dump(2) << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"average-reward constrained MDP lab"};
    app.require_subcommand(1);

    std::string config_path, out_dir, env_name, params_text, export_path;
    std::vector<std::uint64_t> seeds;
    bool debug_exact = false;

    CLI::App* run = app.add_subcommand("run", "run one experiment from a config file");
    run->add_option("--config", config_path, "TOML or JSON config")->required();
    run->add_option("--seed", seeds, "override config seeds (repeatable)");
    run->add_option("--out-dir", out_dir, "override output directory");
    run->add_flag("--debug-exact", debug_exact, "replace estimators by exact means");

    CLI::App* sweep = app.add_subcommand("sweep", "sweep total-step budgets and fit exponents");
    sweep->add_option("--config", config_path, "TOML or JSON config with [sweep]")->required();
    sweep->add_option("--out-dir", out_dir, "override output directory");

    CLI::App* envs = app.add_subcommand("envs", "environment catalog");
    CLI::App* envs_list = envs->add_subcommand("list", "list catalog entries");
    CLI::App* envs_export = envs->add_subcommand("export", "write one model as JSON");
    envs_export->add_option("--env", env_name, "catalog name")->required();
    envs_export->add_option("--params", params_text, "JSON parameter overrides");
    envs_export->add_option("--out", export_path, "output path")->required();
    envs->require_subcommand(1);

    CLI::App* oracle = app.add_subcommand("oracle", "print exact optimum and margins");
    oracle->add_option("--env", env_name, "catalog name")->required();
    oracle->add_option("--params", params_text, "JSON parameter overrides");

    CLI::App* diagnose = app.add_subcommand("diagnose", "print structural diagnostics");
    diagnose->add_option("--env", env_name, "catalog name")->required();
    diagnose->add_option("--params", params_text, "JSON parameter overrides");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(config_path, seeds, out_dir, debug_exact);
        if (sweep->parsed()) return cmd_sweep(config_path, out_dir);
        if (envs->parsed()) {
            if (envs_list->parsed()) return cmd_envs_list();
            if (envs_export->parsed())
                return cmd_envs_export(env_name, params_text, export_path);
        }
        if (oracle->parsed()) return cmd_oracle(env_name, params_text);
        if (diagnose->parsed()) return cmd_diagnose(env_name, params_text);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
