#include "dtr/cli.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dtr/config.hpp"
#include "dtr/diagnostics.hpp"
#include "dtr/errors.hpp"
#include "dtr/estimators.hpp"
#include "dtr/io.hpp"
#include "dtr/resampling.hpp"
#include "dtr/rng.hpp"
#include "dtr/simulator.hpp"

namespace dtr {

namespace {

using nlohmann::ordered_json;

std::vector<std::string> split_list(const std::string& csv) {
    std::vector<std::string> out;
    std::istringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(item);
    return out;
}

void require(bool ok, const std::string& message) {
    if (!ok) throw ValidationError(message);
}

std::ofstream open_out(const std::string& path) {
    std::ofstream f(path);
    if (!f) throw ValidationError("cannot write '" + path + "'");
    return f;
}

SmartDataset load_dataset(const RunConfig& cfg) {
    require(!cfg.dataset_path.empty(), "--data is required for this subcommand");
    std::optional<TreatmentCoding> coding;
    if (!cfg.coding_pair.empty()) {
        require(cfg.coding_pair.size() == 2, "--coding takes exactly two values");
        coding = TreatmentCoding{cfg.coding_pair[0], cfg.coding_pair[1]};
    }
    return ingest_csv(cfg.dataset_path, coding);
}

FitConfig fit_config(const RunConfig& cfg) {
    FitConfig f;
    f.epsilon = cfg.epsilon;
    f.max_iters = cfg.max_iters;
    f.divergence_guard = cfg.divergence_guard;
    f.standardize = cfg.standardize;
    if (cfg.lambda) f.lambda = *cfg.lambda;
    return f;
}

void write_trace_csv(const std::vector<Eigen::VectorXd>& trace,
                     const std::vector<std::string>& names, const std::string& path) {
    std::ofstream f = open_out(path);
    f << "iter,param_name,value\n";
    for (std::size_t k = 0; k < trace.size(); ++k)
        for (Eigen::Index i = 0; i < trace[k].size(); ++i)
            f << k << "," << names[i] << "," << format_double(trace[k][i]) << "\n";
}

ParameterVector initial_theta(const SmartDataset& data, const ModelSpec& spec,
                              const std::string& init_name) {
    const InitStrategy strategy = parse_init_strategy(init_name);
    if (strategy == InitStrategy::ZERO) return zero_parameters(spec);
    return initial_values(q_unshared_fit(data, spec, data.coding), spec, strategy);
}

double resolve_lambda(const RunConfig& cfg, const SmartDataset& data, const ModelSpec& spec,
                      const ParameterVector& theta0, std::ostream& out) {
    if (cfg.lambda) return *cfg.lambda;
    const std::vector<double> grid =
        cfg.lambda_grid.empty() ? default_lambda_grid() : cfg.lambda_grid;
    const CvResult cv = select_lambda(data, spec, data.coding, theta0, grid,
                                      derive_seed(cfg.seed, 0xCAFEULL), fit_config(cfg),
                                      cfg.threads);
    out << "lambda selected by 10-fold CV: " << format_double(cv.lambda_hat) << "\n";
    return cv.lambda_hat;
}

// ---------------------------------------------------------------------------

int cmd_simulate(const RunConfig& cfg, std::ostream& out) {
    require(cfg.scenario_paths.size() == 1, "simulate takes exactly one --scenario");
    require(!cfg.out_path.empty(), "--out is required for simulate");
    Scenario scenario = load_scenario(cfg.scenario_paths[0]);
    scenario.seed = cfg.seed;
    if (cfg.n_override) scenario.n = *cfg.n_override;
    const SmartDataset data = generate_smart(scenario);
    write_csv(data, cfg.out_path);
    out << "wrote " << data.size() << " patients to " << cfg.out_path << "\n";
    return kExitOk;
}

int cmd_diagnose(const RunConfig& cfg, std::ostream& out) {
    const SmartDataset data = load_dataset(cfg);
    require(!cfg.spec_path.empty(), "--spec is required for diagnose");
    const ModelSpec spec = load_model_spec(cfg.spec_path);
    const StackedDesign design = build_stacked_design(data, spec, data.coding);
    const ExpansionReport report = nonexpansion_check(design.Z);

    out << "rows: " << design.rows_count() << "\n"
        << "cols: " << design.Z.cols() << "\n"
        << "rank: " << report.rank << "\n"
        << "inf_op_norm: " << format_double(report.inf_op_norm) << "\n"
        << "worst_row: " << report.worst_row << " (patient " <<
        design.rows[report.worst_row].patient_id << ", stage " <<
        design.rows[report.worst_row].stage << ")\n"
        << "non_expansion: " << (report.is_nonexpansion ? "true" : "false") << "\n";
    if (!report.is_nonexpansion)
        out << "note: the hat matrix exceeds 1 in the infinity operator norm; convergence of "
               "the shared-parameter iteration is not guaranteed\n";

    if (!cfg.out_path.empty()) {
        ordered_json doc;
        doc["rows"] = design.rows_count();
        doc["cols"] = design.Z.cols();
        doc["rank"] = report.rank;
        doc["inf_op_norm"] = report.inf_op_norm;
        doc["worst_row"] = report.worst_row;
        doc["non_expansion"] = report.is_nonexpansion;
        open_out(cfg.out_path) << doc.dump(2) << "\n";
    }
    return report.is_nonexpansion ? kExitOk : kExitDiagnoseGate;
}

int cmd_fit(const RunConfig& cfg, std::ostream& out) {
    const SmartDataset data = load_dataset(cfg);
    require(!cfg.spec_path.empty(), "--spec is required for fit");
    const ModelSpec spec = load_model_spec(cfg.spec_path);

    ordered_json doc;
    doc["method"] = cfg.method;
    doc["seed"] = cfg.seed;

    if (cfg.method == "unshared") {
        const std::vector<StageFit> fits = q_unshared_fit(data, spec, data.coding);
        ordered_json stages = ordered_json::array();
        for (int j = 1; j <= spec.num_stages; ++j) {
            const StageFit& f = fits[j - 1];
            ordered_json st;
            st["stage"] = j;
            for (Eigen::Index i = 0; i < f.beta.size(); ++i)
                st["beta"][spec.stage(j).main[i].text()] = f.beta[i];
            for (Eigen::Index i = 0; i < f.psi.size(); ++i) {
                const auto& slot = spec.stage(j).interaction[i];
                const std::string name =
                    slot.is_shared() ? slot.shared_name : slot.feature.text();
                st["psi"][name] = f.psi[i];
                st["psi_variance"][name] = f.psi_variance[i];
            }
            stages.push_back(std::move(st));
        }
        doc["stages"] = std::move(stages);
        if (!cfg.out_path.empty()) open_out(cfg.out_path) << doc.dump(2) << "\n";
        out << doc.dump(2) << "\n";
        return kExitOk;
    }

    require(cfg.method == "q_shared" || cfg.method == "penalized",
            "--method must be q_shared, penalized, or unshared");
    const ParameterVector theta0 = initial_theta(data, spec, cfg.init);
    FitConfig fc = fit_config(cfg);
    FitResult result;
    if (cfg.method == "penalized") {
        fc.lambda = resolve_lambda(cfg, data, spec, theta0, out);
        result = penalized_q_shared_fit(data, spec, data.coding, theta0, fc);
        doc["lambda"] = fc.lambda;
    } else {
        result = q_shared_fit(data, spec, data.coding, theta0, fc);
    }

    doc["init"] = cfg.init;
    doc["status"] = to_string(result.status);
    doc["iterations"] = result.iterations;
    doc["epsilon"] = fc.epsilon;
    doc["final_delta"] = result.final_delta;
    if (result.hat_inf_norm) doc["hat_inf_norm"] = *result.hat_inf_norm;
    const auto& names = spec.layout->names;
    for (Eigen::Index i = 0; i < result.theta_hat.values.size(); ++i)
        doc["estimates"][names[i]] = result.theta_hat.values[i];
    for (int s = 0; s < spec.layout->psi_size; ++s)
        doc["shared"][spec.shared_names[s]] =
            result.theta_hat.values[spec.layout->psi_offset + s];

    if (!cfg.out_path.empty()) open_out(cfg.out_path) << doc.dump(2) << "\n";
    if (!cfg.trace_path.empty()) write_trace_csv(result.trace, names, cfg.trace_path);
    out << doc.dump(2) << "\n";
    return result.status == FitStatus::Converged ? kExitOk : kExitNumerical;
}

int cmd_bootstrap(const RunConfig& cfg, std::ostream& out) {
    const SmartDataset data = load_dataset(cfg);
    require(!cfg.spec_path.empty(), "--spec is required for bootstrap");
    require(cfg.method == "q_shared" || cfg.method == "penalized",
            "bootstrap supports --method q_shared or penalized");
    const ModelSpec spec = load_model_spec(cfg.spec_path);
    const ParameterVector theta0 = initial_theta(data, spec, cfg.init);

    FitConfig fc = fit_config(cfg);
    fc.compute_hat_norm = false;
    if (cfg.method == "penalized") fc.lambda = resolve_lambda(cfg, data, spec, theta0, out);
    const bool penalized = cfg.method == "penalized";

    const auto& layout = *spec.layout;
    ReplicateFitFn fit_fn = [&](const SmartDataset& d, bool want_trace) {
        FitConfig rc = fc;
        rc.keep_trace = want_trace;
        const StackedDesign design = build_stacked_design(d, spec, d.coding);
        const FitResult r = penalized ? penalized_q_shared_fit(design, theta0, rc)
                                      : q_shared_fit(design, theta0, rc);
        ReplicateFit rep;
        rep.shared = r.theta_hat.values.segment(layout.psi_offset, layout.psi_size);
        rep.status = r.status;
        if (want_trace)
            for (const auto& t : r.trace)
                rep.trace.push_back(t.segment(layout.psi_offset, layout.psi_size));
        return rep;
    };

    const int m = cfg.m_override ? *cfg.m_override : choose_m(data.size(), cfg.m_exponent);
    // A trace request without an explicit count keeps the customary 50
    // replicates used for convergence-pattern plots.
    const int traced = !cfg.trace_path.empty() && cfg.trace_replicates == 0
                           ? std::min(50, cfg.B)
                           : cfg.trace_replicates;
    const BootstrapSummary summary =
        m_out_of_n_bootstrap(data, fit_fn, m, cfg.B, cfg.seed, cfg.threads, traced);

    out << "n: " << summary.n << "  m: " << summary.m << "  B: " << summary.B
        << "  seed: " << summary.seed << "\n"
        << "replicates: converged " << summary.count_converged << ", max_iters "
        << summary.count_max_iters << ", diverged " << summary.count_diverged << ", failed "
        << summary.count_failed << "\n"
        << "parameter,estimate,variance,ci_low,ci_high\n";
    std::ostringstream table;
    table << "parameter,estimate,variance,ci_low,ci_high\n";
    for (int s = 0; s < layout.psi_size; ++s) {
        std::ostringstream line;
        line << spec.shared_names[s] << "," << format_double(summary.point_estimate[s]) << ","
             << format_double(summary.variance[s]) << "," << format_double(summary.ci_low[s])
             << "," << format_double(summary.ci_high[s]) << "\n";
        out << line.str();
        table << line.str();
    }
    if (!cfg.out_path.empty()) open_out(cfg.out_path) << table.str();

    if (!cfg.trace_path.empty()) {
        std::ofstream f = open_out(cfg.trace_path);
        f << "replicate,iter,param_name,value\n";
        for (std::size_t b = 0; b < summary.traces.size(); ++b)
            for (std::size_t k = 0; k < summary.traces[b].size(); ++k)
                for (int s = 0; s < layout.psi_size; ++s)
                    f << b << "," << k << "," << spec.shared_names[s] << ","
                      << format_double(summary.traces[b][k][s]) << "\n";
    }
    return kExitOk;
}

int cmd_cv(const RunConfig& cfg, std::ostream& out) {
    const SmartDataset data = load_dataset(cfg);
    require(!cfg.spec_path.empty(), "--spec is required for cv");
    const ModelSpec spec = load_model_spec(cfg.spec_path);
    const ParameterVector theta0 = initial_theta(data, spec, cfg.init);
    const std::vector<double> grid =
        cfg.lambda_grid.empty() ? default_lambda_grid() : cfg.lambda_grid;

    FitConfig fc = fit_config(cfg);
    fc.compute_hat_norm = false;
    const CvResult cv =
        select_lambda(data, spec, data.coding, theta0, grid, cfg.seed, fc, cfg.threads);

    std::ostringstream table;
    table << "lambda,cv_error\n";
    for (std::size_t g = 0; g < grid.size(); ++g)
        table << format_double(cv.lambda_grid[g]) << ","
              << (std::isnan(cv.cv_error[g]) ? "invalid" : format_double(cv.cv_error[g]))
              << "\n";
    out << table.str();
    out << "lambda_hat: " << format_double(cv.lambda_hat) << "\n";
    if (!cfg.out_path.empty()) open_out(cfg.out_path) << table.str();
    return kExitOk;
}

int cmd_compare(const RunConfig& cfg, std::ostream& out) {
    require(!cfg.scenario_paths.empty(), "compare needs at least one --scenario");
    require(!cfg.spec_path.empty(), "--spec is required for compare");
    const ModelSpec spec = load_model_spec(cfg.spec_path);

    CompareConfig cc;
    cc.reps = cfg.reps;
    cc.eval_n = cfg.eval_n;
    cc.seed = cfg.seed;
    cc.threads = cfg.threads;
    cc.lambda_grid = cfg.lambda_grid;
    cc.fit = fit_config(cfg);
    cc.methods.clear();
    for (const std::string& m : split_list(cfg.methods_csv)) cc.methods.push_back(parse_method(m));
    cc.inits.clear();
    for (const std::string& i : split_list(cfg.inits_csv)) cc.inits.push_back(parse_init_strategy(i));

    std::ostringstream table;
    table << "scenario,method,init,bias_psi0,M,M_tilde,fit_failures\n";
    for (const std::string& path : cfg.scenario_paths) {
        const Scenario scenario = load_scenario(path);
        for (const CompareCell& cell : run_comparison(scenario, spec, cc))
            table << cell.scenario << "," << to_string(cell.method) << ","
                  << to_string(cell.init) << "," << format_double(cell.bias_psi0) << ","
                  << format_double(cell.weighted_match) << ","
                  << format_double(cell.overall_match) << "," << cell.fit_failures << "\n";
    }
    out << table.str();
    if (!cfg.out_path.empty()) open_out(cfg.out_path) << table.str();
    return kExitOk;
}

}  // namespace

int run(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    try {
        if (cfg.subcommand == "simulate") return cmd_simulate(cfg, out);
        if (cfg.subcommand == "fit") return cmd_fit(cfg, out);
        if (cfg.subcommand == "diagnose") return cmd_diagnose(cfg, out);
        if (cfg.subcommand == "bootstrap") return cmd_bootstrap(cfg, out);
        if (cfg.subcommand == "cv") return cmd_cv(cfg, out);
        if (cfg.subcommand == "compare") return cmd_compare(cfg, out);
        err << "error: unknown subcommand '" << cfg.subcommand << "'\n";
        return kExitValidation;
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitValidation;
    }
}

}  // namespace dtr
