#include "dtr/simulator.hpp"

#include <cmath>
#include <utility>

#include "dtr/errors.hpp"
#include "dtr/parallel.hpp"
#include "dtr/resampling.hpp"
#include "dtr/rng.hpp"

namespace dtr {

void validate_scenario(const Scenario& s) {
    validate_coding(s.coding);
    if (s.n < 1) throw ValidationError("scenario requires n >= 1");
    if (!(s.noise_sd >= 0.0)) throw ValidationError("scenario requires noise_sd >= 0");
    for (double p : s.response_probs)
        if (!(p >= 0.0 && p <= 1.0))
            throw ValidationError("scenario response probabilities must lie in [0, 1]");
    for (double g : s.gamma)
        if (!std::isfinite(g)) throw ValidationError("scenario gamma values must be finite");
}

namespace {

double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

SmartDataset generate_smart(const Scenario& s) {
    validate_scenario(s);
    SmartDataset data;
    data.num_stages = 3;
    data.coding = s.coding;
    data.patients.reserve(s.n);

    const auto& g = s.gamma;
    RngStream rng(s.seed);
    for (int i = 0; i < s.n; ++i) {
        Trajectory t;
        t.id = std::to_string(i + 1);

        const double o1 = rng.sign_pm1();
        const double a1 = rng.pick(s.coding.t1, s.coding.t2);
        const double y1 = g[0] + g[1] * o1 + g[2] * a1 + g[3] * o1 * a1 +
                          s.noise_sd * rng.normal();
        t.covariates.push_back({o1});
        t.treatments.push_back(a1);
        t.stage_outcomes.push_back(y1);

        const int r1 = rng.bernoulli(s.response_probs[0]) ? 1 : 0;
        t.responders.push_back(r1);
        if (r1 == 1) {
            t.primary_outcome = primary_outcome(y1, 0.0, 0.0, 1, 0);
            data.patients.push_back(std::move(t));
            continue;
        }

        const double o2 =
            rng.bernoulli(expit(s.delta2[0] * o1 + s.delta2[1] * a1)) ? 1.0 : -1.0;
        const double a2 = rng.pick(s.coding.t1, s.coding.t2);
        const double y2 = y1 +
                          1.5 * (g[4] * o2 + g[5] * a2 + g[6] * o2 * a2 + g[7] * a1 * a2) +
                          s.noise_sd * rng.normal();
        t.covariates.push_back({o2});
        t.treatments.push_back(a2);
        t.stage_outcomes.push_back(y2);

        const int r2 = rng.bernoulli(s.response_probs[1]) ? 1 : 0;
        t.responders.push_back(r2);
        if (r2 == 1) {
            t.primary_outcome = primary_outcome(y1, y2, 0.0, 0, 1);
            data.patients.push_back(std::move(t));
            continue;
        }

        const double o3 =
            rng.bernoulli(expit(s.delta3[0] * o2 + s.delta3[1] * a2 + s.delta3[2] * a1 * a2))
                ? 1.0
                : -1.0;
        const double a3 = rng.pick(s.coding.t1, s.coding.t2);
        const double y3 = y2 +
                          3.0 * (g[8] * o3 + g[9] * a3 + g[10] * o3 * a3 + g[11] * a2 * a3 +
                                 g[12] * a1 * a2 * a3) +
                          s.noise_sd * rng.normal();
        t.covariates.push_back({o3});
        t.treatments.push_back(a3);
        t.stage_outcomes.push_back(y3);
        t.primary_outcome = primary_outcome(y1, y2, y3, 0, 0);
        data.patients.push_back(std::move(t));
    }
    return data;
}

DecisionRule oracle_policy(const Scenario& scenario, const ModelSpec& spec) {
    validate_scenario(scenario);
    if (spec.num_stages != 3)
        throw ValidationError("oracle_policy expects the three-stage model");

    // The spec's interaction features must match the generative interaction
    // structure so the true contrasts map onto the declared slots.
    const std::vector<std::vector<const char*>> expected = {
        {"1", "O1"}, {"1", "O2", "A1"}, {"1", "O3", "A2", "A1*A2"}};
    for (int j = 1; j <= 3; ++j) {
        const auto& slots = spec.stage(j).interaction;
        if (slots.size() != expected[j - 1].size())
            throw ValidationError("oracle_policy: stage " + std::to_string(j) +
                                  " interaction features do not match the generative model");
        for (std::size_t k = 0; k < slots.size(); ++k)
            if (!slots[k].feature.same_as(parse_feature(expected[j - 1][k])))
                throw ValidationError("oracle_policy: stage " + std::to_string(j) +
                                      " interaction slot " + std::to_string(k) + " is '" +
                                      slots[k].feature.text() + "', expected '" +
                                      expected[j - 1][k] + "'");
    }

    const auto& g = scenario.gamma;
    const std::vector<Eigen::VectorXd> contrast_coefs = {
        Eigen::Vector2d(g[2], g[3]),
        Eigen::Vector3d(g[5], g[6], g[7]),
        Eigen::Vector4d(g[9], g[10], g[11], g[12])};
    auto owned = std::make_shared<const ModelSpec>(spec);
    const TreatmentCoding coding = scenario.coding;
    return [owned, contrast_coefs, coding](const Trajectory& traj, int stage) {
        if (stage < 1 || stage > 3)
            throw ValidationError("oracle rule: stage " + std::to_string(stage) + " out of range");
        const auto& slots = owned->stage(stage).interaction;
        double contrast = 0.0;
        for (std::size_t s = 0; s < slots.size(); ++s)
            contrast += slots[s].feature.eval(traj) * contrast_coefs[stage - 1][s];
        return choose_treatment(contrast, coding);
    };
}

MatchingReport allocation_matching(const DecisionRule& fitted, const DecisionRule& oracle,
                                   const SmartDataset& eval_data) {
    if (eval_data.patients.empty())
        throw ValidationError("allocation matching needs a non-empty evaluation set");
    const int J = eval_data.num_stages;
    MatchingReport report;
    report.stage_match.assign(J, 0.0);
    report.stage_sizes.assign(J, 0);

    std::vector<int> matches(J, 0);
    int all_match_patients = 0;
    for (const Trajectory& t : eval_data.patients) {
        bool all = true;
        for (int j = 1; j <= t.stages_present(); ++j) {
            ++report.stage_sizes[j - 1];
            const bool match = fitted(t, j) == oracle(t, j);
            matches[j - 1] += match;
            all = all && match;
        }
        all_match_patients += all;
    }

    double weighted_num = 0.0;
    int weighted_den = 0;
    for (int j = 0; j < J; ++j) {
        report.stage_match[j] =
            report.stage_sizes[j] ? static_cast<double>(matches[j]) / report.stage_sizes[j] : 0.0;
        weighted_num += matches[j];
        weighted_den += report.stage_sizes[j];
    }
    report.weighted_match = weighted_num / weighted_den;
    report.overall_match = static_cast<double>(all_match_patients) / eval_data.size();
    return report;
}

// ---------------------------------------------------------------------------

Method parse_method(const std::string& name) {
    if (name == "q_shared") return Method::QShared;
    if (name == "penalized") return Method::Penalized;
    if (name == "oracle") return Method::Oracle;
    throw ValidationError("unknown method '" + name + "' (use q_shared|penalized|oracle)");
}

std::string to_string(Method m) {
    switch (m) {
        case Method::QShared: return "q_shared";
        case Method::Penalized: return "penalized";
        case Method::Oracle: return "oracle";
    }
    return "unknown";
}

std::vector<CompareCell> run_comparison(const Scenario& scenario, const ModelSpec& spec,
                                        const CompareConfig& cfg) {
    validate_scenario(scenario);
    if (cfg.reps < 1) throw ValidationError("run_comparison requires reps >= 1");
    if (cfg.eval_n < 1) throw ValidationError("run_comparison requires eval_n >= 1");
    if (cfg.methods.empty() || cfg.inits.empty())
        throw ValidationError("run_comparison requires at least one method and init strategy");

    const std::vector<double> grid =
        cfg.lambda_grid.empty() ? default_lambda_grid() : cfg.lambda_grid;
    const int cells = static_cast<int>(cfg.methods.size() * cfg.inits.size());
    const double psi0_true = oracle_psi0(scenario);

    struct RepCell {
        double psi0 = 0.0, M = 0.0, Mt = 0.0;
        bool failed = false;
    };
    std::vector<std::vector<RepCell>> results(cfg.reps, std::vector<RepCell>(cells));

    FitConfig fit_cfg = cfg.fit;
    fit_cfg.keep_trace = false;
    fit_cfg.compute_hat_norm = false;

    parallel_for(cfg.reps, cfg.threads, [&](int rep) {
        Scenario train_sc = scenario;
        train_sc.seed = derive_seed(cfg.seed, 2ULL * rep);
        Scenario eval_sc = scenario;
        eval_sc.seed = derive_seed(cfg.seed, 2ULL * rep + 1);
        eval_sc.n = cfg.eval_n;

        const SmartDataset train = generate_smart(train_sc);
        const SmartDataset eval = generate_smart(eval_sc);
        const DecisionRule oracle = oracle_policy(scenario, spec);
        const StackedDesign design = build_stacked_design(train, spec, scenario.coding);

        // Initial values shared across methods; the lambda is CV-selected once
        // per replication (zero start) and reused for every init strategy.
        std::vector<StageFit> unshared;
        bool have_unshared = false;
        std::string unshared_error;
        try {
            unshared = q_unshared_fit(train, spec, scenario.coding);
            have_unshared = true;
        } catch (const std::exception& e) {
            unshared_error = e.what();
        }

        double lambda_hat = 0.0;
        bool have_lambda = false;
        bool need_penalized = false;
        for (Method m : cfg.methods) need_penalized = need_penalized || m == Method::Penalized;
        if (need_penalized) {
            try {
                CvResult cv = select_lambda(train, spec, scenario.coding, zero_parameters(spec),
                                            grid, derive_seed(cfg.seed, 0xC0FFEE00ULL + rep),
                                            fit_cfg);
                lambda_hat = cv.lambda_hat;
                have_lambda = true;
            } catch (const std::exception&) {
            }
        }

        int cell = 0;
        for (Method method : cfg.methods) {
            for (InitStrategy init : cfg.inits) {
                RepCell& out = results[rep][cell++];
                try {
                    if (method == Method::Oracle) {
                        const MatchingReport r = allocation_matching(oracle, oracle, eval);
                        out.psi0 = psi0_true;
                        out.M = r.weighted_match;
                        out.Mt = r.overall_match;
                        continue;
                    }
                    if (init != InitStrategy::ZERO && !have_unshared)
                        throw NumericalError("unshared initializer failed: " + unshared_error);
                    const ParameterVector theta0 =
                        init == InitStrategy::ZERO
                            ? zero_parameters(spec)
                            : initial_values(unshared, spec, init);

                    FitConfig run_cfg = fit_cfg;
                    FitResult fit;
                    if (method == Method::Penalized) {
                        if (!have_lambda)
                            throw NumericalError("lambda selection failed for this replicate");
                        run_cfg.lambda = lambda_hat;
                        fit = penalized_q_shared_fit(design, theta0, run_cfg);
                    } else {
                        fit = q_shared_fit(design, theta0, run_cfg);
                    }
                    const DecisionRule rule =
                        make_decision_rule(fit.theta_hat, spec, scenario.coding);
                    const MatchingReport r = allocation_matching(rule, oracle, eval);
                    out.psi0 = fit.theta_hat.values[spec.layout->psi_offset];
                    out.M = r.weighted_match;
                    out.Mt = r.overall_match;
                } catch (const std::exception&) {
                    out.failed = true;
                }
            }
        }
    });

    std::vector<CompareCell> table;
    int cell = 0;
    for (Method method : cfg.methods) {
        for (InitStrategy init : cfg.inits) {
            CompareCell c;
            c.scenario = scenario.name;
            c.method = method;
            c.init = init;
            int ok = 0;
            double psi0 = 0.0, M = 0.0, Mt = 0.0;
            for (int rep = 0; rep < cfg.reps; ++rep) {
                const RepCell& r = results[rep][cell];
                if (r.failed) {
                    ++c.fit_failures;
                    continue;
                }
                ++ok;
                psi0 += r.psi0;
                M += r.M;
                Mt += r.Mt;
            }
            if (ok > 0) {
                c.bias_psi0 = psi0 / ok - psi0_true;
                c.weighted_match = 100.0 * M / ok;
                c.overall_match = 100.0 * Mt / ok;
            }
            table.push_back(std::move(c));
            ++cell;
        }
    }
    return table;
}

}  // namespace dtr
