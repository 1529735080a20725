#include "dtr/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dtr/diagnostics.hpp"
#include "dtr/errors.hpp"

namespace dtr {

namespace {

constexpr double kRankTolerance = 1e-10;  // sigma_min < tol * sigma_max => singular

struct SvdSolver {
    Eigen::BDCSVD<Eigen::MatrixXd> svd;
    int rank = 0;

    explicit SvdSolver(const Eigen::MatrixXd& Z)
        : svd(Z, Eigen::ComputeThinU | Eigen::ComputeThinV) {
        const auto& sv = svd.singularValues();
        const double smax = sv.size() ? sv[0] : 0.0;
        for (Eigen::Index i = 0; i < sv.size(); ++i)
            if (sv[i] > kRankTolerance * smax) ++rank;
        if (rank < Z.cols())
            throw NumericalError("singular normal equations: design has rank " +
                                 std::to_string(rank) + " but " + std::to_string(Z.cols()) +
                                 " columns");
    }

    Eigen::VectorXd solve(const Eigen::VectorXd& y) const {
        return svd.matrixV() *
               (svd.singularValues().array().inverse() * (svd.matrixU().transpose() * y).array())
                   .matrix();
    }
};

struct RidgeSolver {
    Eigen::LDLT<Eigen::MatrixXd> ldlt;
    Eigen::MatrixXd Zt;

    RidgeSolver(const Eigen::MatrixXd& Z, double lambda) : Zt(Z.transpose()) {
        Eigen::MatrixXd gram = Zt * Z;
        gram.diagonal().array() += lambda;
        ldlt.compute(gram);
        if (ldlt.info() != Eigen::Success)
            throw NumericalError("ridge normal equations factorization failed");
    }

    Eigen::VectorXd solve(const Eigen::VectorXd& y) const { return ldlt.solve(Zt * y); }
};

// Column standardization (unit RMS) applied around the ridge solve so the
// penalty weighs features comparably; estimates are mapped back to the
// original scale. Off by default.
struct ColumnScaling {
    Eigen::VectorXd scale;

    explicit ColumnScaling(const Eigen::MatrixXd& Z) {
        scale = (Z.array().square().colwise().mean()).sqrt();
        for (Eigen::Index i = 0; i < scale.size(); ++i)
            if (scale[i] == 0.0) scale[i] = 1.0;
    }
};

FitResult iterate_fit(const StackedDesign& design, const ParameterVector& theta0,
                      const FitConfig& cfg, bool penalized) {
    if (!theta0.layout || !(*theta0.layout == *design.layout))
        throw ValidationError("initial parameter vector layout does not match the design");
    if (cfg.epsilon <= 0.0) throw ValidationError("fit config requires epsilon > 0");
    if (cfg.max_iters < 1) throw ValidationError("fit config requires max_iters >= 1");
    if (cfg.lambda < 0.0) throw ValidationError("fit config requires lambda >= 0");

    const Eigen::MatrixXd* Z = &design.Z;
    Eigen::MatrixXd scaled;
    ColumnScaling scaling(design.Z);
    const bool standardize = penalized && cfg.standardize && cfg.lambda > 0.0;
    if (standardize) {
        scaled = design.Z * scaling.scale.cwiseInverse().asDiagonal();
        Z = &scaled;
    }

    // Z never changes across iterations, so factor once.
    std::optional<SvdSolver> ols;
    std::optional<RidgeSolver> ridge;
    const bool use_ridge = penalized && cfg.lambda > 0.0;
    if (use_ridge)
        ridge.emplace(*Z, cfg.lambda);
    else
        ols.emplace(*Z);

    auto solve = [&](const Eigen::VectorXd& y) {
        Eigen::VectorXd t = use_ridge ? ridge->solve(y) : ols->solve(y);
        if (standardize) t.array() /= scaling.scale.array();
        return t;
    };

    FitResult result;
    result.theta_hat = theta0;
    if (cfg.keep_trace) result.trace.push_back(theta0.values);

    ParameterVector theta = theta0;
    for (int k = 0; k < cfg.max_iters; ++k) {
        const Eigen::VectorXd y = stacked_response(design, theta);
        ParameterVector next{solve(y), design.layout};
        result.iterations = k + 1;
        result.final_delta = (next.values - theta.values).norm();
        if (cfg.keep_trace) result.trace.push_back(next.values);

        if (!next.values.allFinite() || next.values.norm() > cfg.divergence_guard) {
            result.status = FitStatus::Diverged;
            result.theta_hat = std::move(next);
            break;
        }
        if (!design.has_backup_rows) {
            // Y* has no theta dependence: the first solve is the fixed point.
            result.status = FitStatus::Converged;
            result.final_delta = 0.0;
            result.theta_hat = std::move(next);
            break;
        }
        if (result.final_delta < cfg.epsilon) {
            result.status = FitStatus::Converged;
            result.theta_hat = std::move(next);
            break;
        }
        theta = std::move(next);
        result.theta_hat = theta;
        result.status = FitStatus::MaxItersExceeded;
    }

    if (cfg.compute_hat_norm) result.hat_inf_norm = nonexpansion_check(design.Z).inf_op_norm;
    return result;
}

}  // namespace

Eigen::VectorXd ols_solve(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y) {
    if (Z.rows() != y.size())
        throw ValidationError("ols_solve: design has " + std::to_string(Z.rows()) +
                              " rows but response has " + std::to_string(y.size()));
    return SvdSolver(Z).solve(y);
}

Eigen::VectorXd ridge_solve(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, double lambda) {
    if (lambda < 0.0) throw ValidationError("ridge_solve: lambda must be >= 0");
    if (Z.rows() != y.size())
        throw ValidationError("ridge_solve: design has " + std::to_string(Z.rows()) +
                              " rows but response has " + std::to_string(y.size()));
    if (lambda == 0.0) return ols_solve(Z, y);
    return RidgeSolver(Z, lambda).solve(y);
}

std::string to_string(FitStatus s) {
    switch (s) {
        case FitStatus::Converged: return "converged";
        case FitStatus::MaxItersExceeded: return "max_iters_exceeded";
        case FitStatus::Diverged: return "diverged";
    }
    return "unknown";
}

FitResult q_shared_fit(const StackedDesign& design, const ParameterVector& theta0,
                       const FitConfig& cfg) {
    return iterate_fit(design, theta0, cfg, /*penalized=*/false);
}

FitResult penalized_q_shared_fit(const StackedDesign& design, const ParameterVector& theta0,
                                 const FitConfig& cfg) {
    return iterate_fit(design, theta0, cfg, /*penalized=*/true);
}

FitResult q_shared_fit(const SmartDataset& data, const ModelSpec& spec,
                       const TreatmentCoding& coding, const ParameterVector& theta0,
                       const FitConfig& cfg) {
    check_layout(theta0, spec);
    return q_shared_fit(build_stacked_design(data, spec, coding), theta0, cfg);
}

FitResult penalized_q_shared_fit(const SmartDataset& data, const ModelSpec& spec,
                                 const TreatmentCoding& coding, const ParameterVector& theta0,
                                 const FitConfig& cfg) {
    check_layout(theta0, spec);
    return penalized_q_shared_fit(build_stacked_design(data, spec, coding), theta0, cfg);
}

// ---------------------------------------------------------------------------

std::vector<StageFit> q_unshared_fit(const SmartDataset& data, const ModelSpec& spec,
                                     const TreatmentCoding& coding) {
    validate_coding(coding);
    if (data.num_stages != spec.num_stages)
        throw ValidationError("dataset and model spec disagree on the number of stages");
    const int J = spec.num_stages;
    std::vector<StageFit> fits(J);

    for (int j = J; j >= 1; --j) {
        const StageModel& st = spec.stage(j);
        const int n_main = static_cast<int>(st.main.size());
        const int n_inter = static_cast<int>(st.interaction.size());
        const int p = n_main + n_inter;

        std::vector<int> idx;
        for (int i = 0; i < data.size(); ++i)
            if (data.patients[i].present_at(j)) idx.push_back(i);
        const int n = static_cast<int>(idx.size());
        if (n == 0) throw ValidationError("no patients present at stage " + std::to_string(j));

        Eigen::MatrixXd X(n, p);
        Eigen::VectorXd y(n);
        for (int r = 0; r < n; ++r) {
            const Trajectory& traj = data.patients[idx[r]];
            const auto [h0, h1] = stage_features(traj, j, spec);
            X.row(r).head(n_main) = h0.transpose();
            X.row(r).tail(n_inter) = (h1 * traj.treatments[j - 1]).transpose();
            if (j == J || traj.responded_at(j)) {
                y[r] = traj.primary_outcome;
            } else {
                // Backup from the next stage's unshared fit.
                const auto [nh0, nh1] = stage_features(traj, j + 1, spec);
                const StageFit& next = fits[j];
                const double contrast = nh1.dot(next.psi);
                y[r] = nh0.dot(next.beta) +
                       std::max(coding.t1 * contrast, coding.t2 * contrast);
            }
        }

        SvdSolver solver(X);
        Eigen::VectorXd coef;
        try {
            coef = solver.solve(y);
        } catch (const NumericalError& e) {
            throw NumericalError("stage " + std::to_string(j) + ": " + e.what());
        }
        if (n <= p)
            throw ValidationError("stage " + std::to_string(j) + " has " + std::to_string(n) +
                                  " rows for " + std::to_string(p) + " parameters");

        const double rss = (y - X * coef).squaredNorm();
        const double sigma2 = rss / (n - p);
        // diag((X'X)^{-1}) = sum_k V_{ik}^2 / s_k^2 from the SVD.
        const Eigen::MatrixXd& V = solver.svd.matrixV();
        const Eigen::VectorXd s2 = solver.svd.singularValues().array().square();
        StageFit fit;
        fit.beta = coef.head(n_main);
        fit.psi = coef.tail(n_inter);
        fit.psi_variance.resize(n_inter);
        for (int s = 0; s < n_inter; ++s) {
            double inv_kk = 0.0;
            for (Eigen::Index k = 0; k < s2.size(); ++k)
                inv_kk += V(n_main + s, k) * V(n_main + s, k) / s2[k];
            fit.psi_variance[s] = sigma2 * inv_kk;
        }
        fits[j - 1] = std::move(fit);
    }
    return fits;
}

InitStrategy parse_init_strategy(const std::string& name) {
    if (name == "sa") return InitStrategy::SA;
    if (name == "ivwa") return InitStrategy::IVWA;
    if (name == "max") return InitStrategy::MAX;
    if (name == "min") return InitStrategy::MIN;
    if (name == "zero") return InitStrategy::ZERO;
    throw ValidationError("unknown init strategy '" + name + "' (use sa|ivwa|max|min|zero)");
}

std::string to_string(InitStrategy s) {
    switch (s) {
        case InitStrategy::SA: return "sa";
        case InitStrategy::IVWA: return "ivwa";
        case InitStrategy::MAX: return "max";
        case InitStrategy::MIN: return "min";
        case InitStrategy::ZERO: return "zero";
    }
    return "unknown";
}

ParameterVector initial_values(const std::vector<StageFit>& unshared, const ModelSpec& spec,
                               InitStrategy strategy) {
    ParameterVector theta = zero_parameters(spec);
    if (strategy == InitStrategy::ZERO) return theta;
    if (static_cast<int>(unshared.size()) != spec.num_stages)
        throw ValidationError("initial_values: expected " + std::to_string(spec.num_stages) +
                              " stage fits, got " + std::to_string(unshared.size()));

    const ParamLayout& layout = *spec.layout;
    for (int j = 1; j <= spec.num_stages; ++j) {
        const StageFit& fit = unshared[j - 1];
        theta.values.segment(layout.beta_offset[j - 1], layout.main_size[j - 1]) = fit.beta;
        const StageModel& st = spec.stage(j);
        for (std::size_t s = 0; s < st.interaction.size(); ++s)
            if (!st.interaction[s].is_shared())
                theta.values[layout.interaction_cols[j - 1][s]] = fit.psi[s];
    }

    for (int shared = 0; shared < layout.psi_size; ++shared) {
        std::vector<double> est, var;
        for (int j = 1; j <= spec.num_stages; ++j) {
            const StageModel& st = spec.stage(j);
            for (std::size_t s = 0; s < st.interaction.size(); ++s) {
                if (layout.interaction_cols[j - 1][s] != layout.psi_offset + shared) continue;
                est.push_back(unshared[j - 1].psi[s]);
                var.push_back(unshared[j - 1].psi_variance[s]);
            }
        }
        double value = 0.0;
        switch (strategy) {
            case InitStrategy::SA: {
                for (double e : est) value += e;
                value /= static_cast<double>(est.size());
                break;
            }
            case InitStrategy::IVWA: {
                double num = 0.0, den = 0.0;
                for (std::size_t i = 0; i < est.size(); ++i) {
                    if (var[i] <= 0.0)
                        throw ValidationError("IVWA requires positive stage variances; shared '" +
                                              spec.shared_names[shared] + "' has variance " +
                                              std::to_string(var[i]));
                    num += est[i] / var[i];
                    den += 1.0 / var[i];
                }
                value = num / den;
                break;
            }
            case InitStrategy::MAX:
                value = *std::max_element(est.begin(), est.end());
                break;
            case InitStrategy::MIN:
                value = *std::min_element(est.begin(), est.end());
                break;
            case InitStrategy::ZERO:
                break;
        }
        theta.values[layout.psi_offset + shared] = value;
    }
    return theta;
}

// ---------------------------------------------------------------------------

double decision_rule(const ParameterVector& theta, const ModelSpec& spec,
                     const TreatmentCoding& coding, const Trajectory& history, int stage) {
    validate_coding(coding);
    return choose_treatment(stage_contrast(theta, history, stage, spec), coding);
}

DecisionRule make_decision_rule(ParameterVector theta, const ModelSpec& spec,
                                TreatmentCoding coding) {
    check_layout(theta, spec);
    validate_coding(coding);
    auto owned = std::make_shared<const ModelSpec>(spec);
    return [theta = std::move(theta), owned, coding](const Trajectory& traj, int stage) {
        if (stage < 1 || stage > owned->num_stages)
            throw ValidationError("decision rule: stage " + std::to_string(stage) +
                                  " out of range");
        const StageModel& st = owned->stage(stage);
        const auto& cols = owned->layout->interaction_cols[stage - 1];
        double contrast = 0.0;
        for (std::size_t s = 0; s < st.interaction.size(); ++s)
            contrast += st.interaction[s].feature.eval(traj) * theta.values[cols[s]];
        return choose_treatment(contrast, coding);
    };
}

}  // namespace dtr
