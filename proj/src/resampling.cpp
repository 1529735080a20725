#include "dtr/resampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "dtr/errors.hpp"
#include "dtr/parallel.hpp"
#include "dtr/rng.hpp"

namespace dtr {

namespace {

// Type-7 empirical quantile (linear interpolation between order statistics).
double quantile(std::vector<double> sorted, double p) {
    const std::size_t n = sorted.size();
    if (n == 1) return sorted[0];
    const double h = (static_cast<double>(n) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, n - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

SmartDataset resample(const SmartDataset& data, int m, RngStream& rng) {
    SmartDataset out;
    out.num_stages = data.num_stages;
    out.coding = data.coding;
    out.patients.reserve(m);
    const auto n = static_cast<std::uint64_t>(data.size());
    for (int i = 0; i < m; ++i)
        out.patients.push_back(data.patients[rng.uniform_int(n)]);
    return out;
}

}  // namespace

int choose_m(int n, double exponent) {
    if (n < 1) throw ValidationError("choose_m requires n >= 1");
    if (!(exponent > 0.0 && exponent <= 1.0))
        throw ValidationError("choose_m requires 0 < exponent <= 1");
    const auto m = static_cast<int>(std::ceil(std::pow(static_cast<double>(n), exponent)));
    return std::clamp(m, std::min(2, n), n);
}

BootstrapSummary m_out_of_n_bootstrap(const SmartDataset& data, const ReplicateFitFn& fit_fn,
                                      int m, int B, std::uint64_t seed, int threads,
                                      int trace_replicates) {
    const int n = data.size();
    if (n < 1) throw ValidationError("bootstrap requires a non-empty dataset");
    if (m < 1 || m > n)
        throw ValidationError("bootstrap requires 1 <= m <= n, got m = " + std::to_string(m) +
                              ", n = " + std::to_string(n));
    if (B < 2) throw ValidationError("bootstrap variance requires B >= 2 replications");

    BootstrapSummary summary;
    summary.n = n;
    summary.m = m;
    summary.B = B;
    summary.seed = seed;

    const ReplicateFit full = fit_fn(data, false);
    summary.point_estimate = full.shared;
    const auto p = static_cast<int>(full.shared.size());

    struct Slot {
        Eigen::VectorXd estimate;
        FitStatus status = FitStatus::Converged;
        bool failed = false;
        std::vector<Eigen::VectorXd> trace;
    };
    std::vector<Slot> slots(B);

    parallel_for(B, threads, [&](int b) {
        RngStream rng(derive_seed(seed, static_cast<std::uint64_t>(b) + 1));
        const SmartDataset replicate = resample(data, m, rng);
        Slot& slot = slots[b];
        try {
            ReplicateFit fit = fit_fn(replicate, b < trace_replicates);
            slot.estimate = std::move(fit.shared);
            slot.status = fit.status;
            slot.trace = std::move(fit.trace);
        } catch (const std::exception&) {
            slot.failed = true;
        }
    });

    std::vector<const Eigen::VectorXd*> kept;
    kept.reserve(B);
    for (const Slot& s : slots) {
        if (s.failed) {
            ++summary.count_failed;
            continue;
        }
        switch (s.status) {
            case FitStatus::Converged: ++summary.count_converged; break;
            case FitStatus::MaxItersExceeded: ++summary.count_max_iters; break;
            case FitStatus::Diverged: ++summary.count_diverged; break;
        }
        kept.push_back(&s.estimate);
    }
    if (static_cast<int>(kept.size()) < 2)
        throw NumericalError("bootstrap: fewer than 2 usable replicates (" +
                             std::to_string(summary.count_failed) + " failed)");

    const auto kept_n = static_cast<double>(kept.size());
    summary.variance.resize(p);
    summary.ci_low.resize(p);
    summary.ci_high.resize(p);
    const double root_scale = std::sqrt(static_cast<double>(m));
    for (int k = 0; k < p; ++k) {
        double mean = 0.0;
        for (const auto* e : kept) mean += (*e)[k];
        mean /= kept_n;
        double ss = 0.0;
        std::vector<double> roots;
        roots.reserve(kept.size());
        for (const auto* e : kept) {
            const double d = (*e)[k] - mean;
            ss += d * d;
            roots.push_back(root_scale * ((*e)[k] - summary.point_estimate[k]));
        }
        summary.variance[k] = ss / (kept_n - 1.0);
        std::sort(roots.begin(), roots.end());
        const double q_hi = quantile(roots, 0.975);
        const double q_lo = quantile(roots, 0.025);
        const double scale_back = std::sqrt(static_cast<double>(n));
        summary.ci_low[k] = summary.point_estimate[k] - q_hi / scale_back;
        summary.ci_high[k] = summary.point_estimate[k] - q_lo / scale_back;
    }

    for (Slot& s : slots)
        if (!s.trace.empty()) summary.traces.push_back(std::move(s.trace));
    return summary;
}

std::vector<double> default_lambda_grid() {
    std::vector<double> grid;
    const int points = 25;
    const double lo = std::log10(1e-4), hi = std::log10(1e2);
    for (int i = 0; i < points; ++i)
        grid.push_back(std::pow(10.0, lo + (hi - lo) * i / (points - 1)));
    return grid;
}

CvResult select_lambda(const SmartDataset& data, const ModelSpec& spec,
                       const TreatmentCoding& coding, const ParameterVector& theta0,
                       const std::vector<double>& grid, std::uint64_t seed,
                       const FitConfig& fit_cfg, int threads) {
    if (grid.empty()) throw ValidationError("lambda grid must be non-empty");
    for (double l : grid)
        if (l < 0.0) throw ValidationError("lambda grid values must be >= 0");
    const int n = data.size();
    if (n < 10) throw ValidationError("10-fold cross-validation needs at least 10 patients");
    check_layout(theta0, spec);

    CvResult result;
    result.lambda_grid = grid;

    // Fold assignment depends on (seed, n) only: shuffle indices, deal round
    // robin. The same folds serve every lambda so the curve is comparable.
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    RngStream rng(derive_seed(seed, 0xF01D5ULL));
    for (int i = n - 1; i > 0; --i) {
        const auto j = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(i) + 1));
        std::swap(order[i], order[j]);
    }
    result.fold_assignment.assign(n, 0);
    for (int i = 0; i < n; ++i) result.fold_assignment[order[i]] = i % 10;

    struct FoldData {
        StackedDesign train_design;
        StackedDesign heldout_design;
        std::vector<int> heldout_row_patient;  // row -> local held-out patient index
        int heldout_count = 0;
    };
    std::vector<FoldData> folds(10);
    for (int v = 0; v < 10; ++v) {
        SmartDataset train, heldout;
        train.num_stages = heldout.num_stages = data.num_stages;
        train.coding = heldout.coding = data.coding;
        for (int i = 0; i < n; ++i) {
            if (result.fold_assignment[i] == v)
                heldout.patients.push_back(data.patients[i]);
            else
                train.patients.push_back(data.patients[i]);
        }
        FoldData fd;
        fd.train_design = build_stacked_design(train, spec, coding);
        fd.heldout_design = build_stacked_design(heldout, spec, coding);
        fd.heldout_count = heldout.size();
        fd.heldout_row_patient.reserve(fd.heldout_design.rows_count());
        for (const RowProvenance& r : fd.heldout_design.rows)
            fd.heldout_row_patient.push_back(r.patient_index);
        folds[v] = std::move(fd);
    }

    const auto G = static_cast<int>(grid.size());
    result.cv_error.assign(G, 0.0);
    std::vector<char> invalid(G, 0);

    FitConfig cfg = fit_cfg;
    cfg.keep_trace = false;
    cfg.compute_hat_norm = false;

    parallel_for(G, threads, [&](int g) {
        double total = 0.0;
        for (int v = 0; v < 10; ++v) {
            const FoldData& fd = folds[v];
            FitConfig cell = cfg;
            cell.lambda = grid[g];
            FitResult fit;
            try {
                fit = penalized_q_shared_fit(fd.train_design, theta0, cell);
            } catch (const NumericalError&) {
                invalid[g] = 1;
                return;
            }
            // Held-out score: per-subject squared residual of the subject's
            // stacked block, evaluated at the trained final iterate.
            const Eigen::VectorXd y_obs = stacked_response(fd.heldout_design, fit.theta_hat);
            const Eigen::VectorXd y_pred = fd.heldout_design.Z * fit.theta_hat.values;
            std::vector<double> per_subject(static_cast<std::size_t>(fd.heldout_count), 0.0);
            for (int r = 0; r < fd.heldout_design.rows_count(); ++r) {
                const double d = y_obs[r] - y_pred[r];
                per_subject[fd.heldout_row_patient[r]] += d * d;
            }
            double fold_sum = 0.0;
            for (double s : per_subject) fold_sum += s;
            total += fold_sum / fd.heldout_count;
        }
        result.cv_error[g] = total / 10.0;
    });

    double best = std::numeric_limits<double>::infinity();
    int best_idx = -1;
    for (int g = 0; g < G; ++g) {
        if (invalid[g]) {
            result.cv_error[g] = std::numeric_limits<double>::quiet_NaN();
            continue;
        }
        if (result.cv_error[g] < best) {
            best = result.cv_error[g];
            best_idx = g;
        }
    }
    if (best_idx < 0)
        throw NumericalError("cross-validation failed at every grid point");
    result.lambda_hat = grid[best_idx];
    return result;
}

}  // namespace dtr
