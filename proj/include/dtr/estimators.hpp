#ifndef DTR_ESTIMATORS_HPP
#define DTR_ESTIMATORS_HPP

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dtr/model.hpp"

namespace dtr {

// ---------------------------------------------------------------------------
// Linear solvers
// ---------------------------------------------------------------------------

// Least-squares minimizer of ||Z theta - y||_2 via SVD. Throws NumericalError
// when the smallest singular value falls below 1e-10 times the largest,
// naming the deficient rank.
Eigen::VectorXd ols_solve(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y);

// Ridge minimizer (Z'Z + lambda I)^{-1} Z'y. lambda = 0 delegates to OLS.
Eigen::VectorXd ridge_solve(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, double lambda);

// ---------------------------------------------------------------------------
// Iterative shared-parameter fits
// ---------------------------------------------------------------------------

struct FitConfig {
    double epsilon = 1e-6;          // stop when ||theta_{k+1} - theta_k||_2 < epsilon
    int max_iters = 1000;
    double lambda = 0.0;            // penalized variant only
    double divergence_guard = 1e8;  // abort when ||theta_k||_2 exceeds this
    bool keep_trace = true;
    bool compute_hat_norm = true;
    bool standardize = false;       // optional column standardization before the ridge solve
};

enum class FitStatus { Converged, MaxItersExceeded, Diverged };

std::string to_string(FitStatus s);

struct FitResult {
    ParameterVector theta_hat;
    int iterations = 0;
    FitStatus status = FitStatus::Converged;
    std::vector<Eigen::VectorXd> trace;  // theta^(0), theta^(1), ... (when kept)
    double final_delta = 0.0;            // ||theta_last - theta_prev||
    std::optional<double> hat_inf_norm;
};

// Shared-parameter fit: iterate theta_{k+1} = ols_solve(Z, Y*(theta_k)) with
// Z fixed across iterations. When no row's response depends on theta (J = 1,
// or every patient exited as a responder), the single solve is the exact
// fixed point and the fit converges in one iteration.
FitResult q_shared_fit(const SmartDataset& data, const ModelSpec& spec,
                       const TreatmentCoding& coding, const ParameterVector& theta0,
                       const FitConfig& cfg);

// Same iteration with the ridge solve; lambda = 0 reproduces q_shared_fit
// iterate for iterate.
FitResult penalized_q_shared_fit(const SmartDataset& data, const ModelSpec& spec,
                                 const TreatmentCoding& coding, const ParameterVector& theta0,
                                 const FitConfig& cfg);

// Internal entry points reusing a prebuilt design (bootstrap, cross-validation).
FitResult q_shared_fit(const StackedDesign& design, const ParameterVector& theta0,
                       const FitConfig& cfg);
FitResult penalized_q_shared_fit(const StackedDesign& design, const ParameterVector& theta0,
                                 const FitConfig& cfg);

// ---------------------------------------------------------------------------
// Unshared (stage-wise) Q-learning and initial values
// ---------------------------------------------------------------------------

struct StageFit {
    Eigen::VectorXd beta;          // main-effect coefficients
    Eigen::VectorXd psi;           // interaction coefficients, one per slot
    Eigen::VectorXd psi_variance;  // classical OLS variances of the psi slots
};

// Backward induction: fit stage J on observed outcomes, then each earlier
// stage on its pseudo-outcomes from the next stage's fit. Index 0 = stage 1.
std::vector<StageFit> q_unshared_fit(const SmartDataset& data, const ModelSpec& spec,
                                     const TreatmentCoding& coding);

enum class InitStrategy { SA, IVWA, MAX, MIN, ZERO };

InitStrategy parse_init_strategy(const std::string& name);
std::string to_string(InitStrategy s);

// Aggregates each shared slot across the stages declaring it (simple average,
// inverse-variance weighted average, max, min); beta blocks and stage-local
// slots come from the corresponding stage fit. ZERO ignores the stage fits.
ParameterVector initial_values(const std::vector<StageFit>& unshared, const ModelSpec& spec,
                               InitStrategy strategy);

// ---------------------------------------------------------------------------
// Decision rules
// ---------------------------------------------------------------------------

// argmax over {t1, t2} of a * contrast_j(history); exact ties return t2.
double decision_rule(const ParameterVector& theta, const ModelSpec& spec,
                     const TreatmentCoding& coding, const Trajectory& history, int stage);

using DecisionRule = std::function<double(const Trajectory&, int stage)>;

DecisionRule make_decision_rule(ParameterVector theta, const ModelSpec& spec,
                                TreatmentCoding coding);

// Shared helper so every rule breaks ties identically.
inline double choose_treatment(double contrast, const TreatmentCoding& coding) {
    return coding.t1 * contrast > coding.t2 * contrast ? coding.t1 : coding.t2;
}

}  // namespace dtr

#endif
