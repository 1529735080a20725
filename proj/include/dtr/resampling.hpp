#ifndef DTR_RESAMPLING_HPP
#define DTR_RESAMPLING_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "dtr/estimators.hpp"
#include "dtr/model.hpp"

namespace dtr {

// What a bootstrap replicate fit reports back: the shared-parameter estimates
// plus how the iteration ended. `trace` rows are per-iteration shared
// estimates, kept only when the replicate was asked to record them.
struct ReplicateFit {
    Eigen::VectorXd shared;
    FitStatus status = FitStatus::Converged;
    std::vector<Eigen::VectorXd> trace;
};

using ReplicateFitFn = std::function<ReplicateFit(const SmartDataset&, bool want_trace)>;

struct BootstrapConfig {
    int B = 1000;
    std::optional<int> m;     // override; default ceil(n^m_exponent)
    double m_exponent = 0.8;
    std::uint64_t seed = 0;
    int threads = 1;
    int trace_replicates = 0;  // keep iteration traces for the first K replicates
};

struct BootstrapSummary {
    int n = 0, m = 0, B = 0;
    std::uint64_t seed = 0;
    Eigen::VectorXd point_estimate;  // full-data fit
    Eigen::VectorXd variance;        // sample variance across replicates
    Eigen::VectorXd ci_low, ci_high;
    int count_converged = 0, count_max_iters = 0, count_diverged = 0;
    int count_failed = 0;  // replicates whose fit raised (excluded from stats)
    std::vector<std::vector<Eigen::VectorXd>> traces;  // per traced replicate
};

// m-out-of-n bootstrap at whole-trajectory granularity. Replicate b draws m
// patients with replacement using an independent substream of `seed`, refits,
// and contributes its estimates whether or not the fit converged (the status
// mix is reported). The confidence interval is the centered percentile
// interval of the rescaled root sqrt(m) (theta*_m - theta_n):
//   [theta_n - q_{0.975}/sqrt(n), theta_n - q_{0.025}/sqrt(n)].
BootstrapSummary m_out_of_n_bootstrap(const SmartDataset& data, const ReplicateFitFn& fit_fn,
                                      int m, int B, std::uint64_t seed, int threads = 1,
                                      int trace_replicates = 0);

// ceil(n^exponent) clamped to [2, n].
int choose_m(int n, double exponent);

// Default 25-point logarithmic grid on [1e-4, 1e2].
std::vector<double> default_lambda_grid();

struct CvResult {
    std::vector<double> lambda_grid;
    std::vector<double> cv_error;  // NaN marks a grid point invalidated by a singular fold
    double lambda_hat = 0.0;
    std::vector<int> fold_assignment;  // per patient, 0..9
};

// 10-fold cross-validation for the ridge weight. Folds are a function of
// (seed, n) only. For each lambda and fold, the penalized fit runs to its
// final iterate K on the training folds; the held-out score for a subject is
// ||Y*_u(theta^(K)) - Z_u theta^(K)||^2 over the subject's stacked rows,
// averaged per fold and then across folds.
CvResult select_lambda(const SmartDataset& data, const ModelSpec& spec,
                       const TreatmentCoding& coding, const ParameterVector& theta0,
                       const std::vector<double>& grid, std::uint64_t seed,
                       const FitConfig& fit_cfg, int threads = 1);

}  // namespace dtr

#endif
