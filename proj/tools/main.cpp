#include <CLI11.hpp>

#include <iostream>

#include "dtr/cli.hpp"

namespace {

void add_common(CLI::App* cmd, dtr::RunConfig& cfg) {
    cmd->add_option("--seed", cfg.seed, "Root seed; all randomness derives from it")
        ->capture_default_str();
    cmd->add_option("--threads", cfg.threads,
                    "Worker threads (results are identical for any value)")
        ->capture_default_str();
}

void add_data_spec(CLI::App* cmd, dtr::RunConfig& cfg) {
    cmd->add_option("--data", cfg.dataset_path, "Dataset CSV")->required();
    cmd->add_option("--spec", cfg.spec_path, "Q-function spec (JSON)")->required();
    cmd->add_option("--coding", cfg.coding_pair,
                    "Treatment coding pair t1 t2 (default: inferred, ascending)")
        ->expected(2);
}

void add_fit_flags(CLI::App* cmd, dtr::RunConfig& cfg) {
    cmd->add_option("--epsilon", cfg.epsilon, "Convergence threshold on the iterate step")
        ->capture_default_str();
    cmd->add_option("--max-iters", cfg.max_iters, "Iteration cap")->capture_default_str();
    cmd->add_option("--lambda", cfg.lambda,
                    "Ridge weight (penalized; default: 10-fold CV over the grid)");
    cmd->add_option("--divergence-guard", cfg.divergence_guard,
                    "Abort when the iterate norm exceeds this")
        ->capture_default_str();
    cmd->add_option("--init", cfg.init, "Initial values: sa|ivwa|max|min|zero")
        ->capture_default_str();
    cmd->add_option("--lambda-grid", cfg.lambda_grid,
                    "Explicit CV grid (default: 25 log-spaced points in [1e-4, 1e2])");
    cmd->add_flag("--standardize", cfg.standardize,
                  "Scale columns to unit RMS around the ridge solve");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "Shared-parameter dynamic treatment regimens: simulation, estimation (Q-shared and "
        "ridge-penalized Q-shared), convergence diagnostics, and m-out-of-n bootstrap "
        "inference"};
    app.require_subcommand(1);

    dtr::RunConfig cfg;

    auto* simulate = app.add_subcommand("simulate", "Generate a three-stage SMART cohort CSV");
    simulate->add_option("--scenario", cfg.scenario_paths, "Scenario config (JSON)")->required();
    simulate->add_option("--out", cfg.out_path, "Output CSV path")->required();
    simulate->add_option("--n", cfg.n_override, "Override the scenario's cohort size");
    add_common(simulate, cfg);

    auto* fit = app.add_subcommand("fit", "Fit a regimen to a dataset");
    add_data_spec(fit, cfg);
    fit->add_option("--method", cfg.method, "q_shared|penalized|unshared")
        ->capture_default_str();
    add_fit_flags(fit, cfg);
    fit->add_option("--out", cfg.out_path, "Report JSON path");
    fit->add_option("--trace", cfg.trace_path, "Iteration trace CSV (iter,param,value)");
    add_common(fit, cfg);

    auto* diagnose = app.add_subcommand(
        "diagnose", "Hat-matrix infinity-norm check; exits 1 when the norm exceeds 1");
    add_data_spec(diagnose, cfg);
    diagnose->add_option("--out", cfg.out_path, "Report JSON path");
    add_common(diagnose, cfg);

    auto* bootstrap =
        app.add_subcommand("bootstrap", "m-out-of-n bootstrap variances and 95% CIs");
    add_data_spec(bootstrap, cfg);
    bootstrap->add_option("--method", cfg.method, "q_shared|penalized")->capture_default_str();
    add_fit_flags(bootstrap, cfg);
    bootstrap->add_option("--B", cfg.B, "Bootstrap replications")->capture_default_str();
    bootstrap->add_option("--m-exponent", cfg.m_exponent, "m = ceil(n^exponent)")
        ->capture_default_str();
    bootstrap->add_option("--m", cfg.m_override, "Override m directly");
    bootstrap->add_option("--trace-replicates", cfg.trace_replicates,
                          "Traced replicates in the --trace CSV (default 50 when --trace is set)")
        ->capture_default_str();
    bootstrap->add_option("--out", cfg.out_path, "Summary CSV path");
    bootstrap->add_option("--trace", cfg.trace_path,
                          "Replicate trace CSV (replicate,iter,param,value)");
    add_common(bootstrap, cfg);

    auto* cv = app.add_subcommand("cv", "10-fold cross-validation curve for the ridge weight");
    add_data_spec(cv, cfg);
    add_fit_flags(cv, cfg);
    cv->add_option("--out", cfg.out_path, "Curve CSV path (lambda,cv_error)");
    add_common(cv, cfg);

    auto* compare = app.add_subcommand(
        "compare", "Monte Carlo comparison of methods against the oracle regimen");
    compare->add_option("--scenario", cfg.scenario_paths, "Scenario configs (repeatable)")
        ->required();
    compare->add_option("--spec", cfg.spec_path, "Q-function spec (JSON)")->required();
    compare->add_option("--methods", cfg.methods_csv, "Comma list: q_shared,penalized,oracle")
        ->capture_default_str();
    compare->add_option("--inits", cfg.inits_csv, "Comma list of init strategies")
        ->capture_default_str();
    compare->add_option("--reps", cfg.reps, "Replications per scenario")->capture_default_str();
    compare->add_option("--eval-n", cfg.eval_n, "Evaluation cohort size per replication")
        ->capture_default_str();
    add_fit_flags(compare, cfg);
    compare->add_option("--out", cfg.out_path, "Comparison CSV path");
    add_common(compare, cfg);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? dtr::kExitOk : dtr::kExitValidation;
    }

    cfg.subcommand = app.get_subcommands().front()->get_name();
    return dtr::run(cfg, std::cout, std::cerr);
}
