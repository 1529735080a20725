#include "dtr/diagnostics.hpp"

#include <algorithm>
#include <string>

#include "dtr/errors.hpp"

namespace dtr {

namespace {

constexpr double kRankTolerance = 1e-10;

// Thin orthonormal basis of col(Z); throws when Z is rank-deficient.
Eigen::MatrixXd orthonormal_basis(const Eigen::MatrixXd& Z, int* rank_out) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(Z, Eigen::ComputeThinU);
    const auto& sv = svd.singularValues();
    const double smax = sv.size() ? sv[0] : 0.0;
    int rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (sv[i] > kRankTolerance * smax) ++rank;
    if (rank < Z.cols())
        throw NumericalError("hat matrix undefined: design has rank " + std::to_string(rank) +
                             " but " + std::to_string(Z.cols()) + " columns");
    if (rank_out) *rank_out = rank;
    return svd.matrixU().leftCols(rank);
}

}  // namespace

Eigen::MatrixXd hat_matrix(const Eigen::MatrixXd& Z) {
    const Eigen::MatrixXd Q = orthonormal_basis(Z, nullptr);
    return Q * Q.transpose();
}

double inf_operator_norm(const Eigen::MatrixXd& H) {
    if (H.rows() != H.cols())
        throw ValidationError("inf_operator_norm requires a square matrix, got " +
                              std::to_string(H.rows()) + "x" + std::to_string(H.cols()));
    return H.cwiseAbs().rowwise().sum().maxCoeff();
}

ExpansionReport nonexpansion_check(const Eigen::MatrixXd& Z, int materialize_limit) {
    ExpansionReport report;
    const Eigen::MatrixXd Q = orthonormal_basis(Z, &report.rank);
    const Eigen::Index n = Q.rows();

    Eigen::VectorXd row_sums = Eigen::VectorXd::Zero(n);
    if (n <= materialize_limit) {
        row_sums = (Q * Q.transpose()).cwiseAbs().rowwise().sum();
    } else {
        // H = QQ'; accumulate |H| row sums one column block at a time so only
        // an n x block panel is ever in memory.
        constexpr Eigen::Index block = 1024;
        for (Eigen::Index c0 = 0; c0 < n; c0 += block) {
            const Eigen::Index w = std::min(block, n - c0);
            row_sums.noalias() += (Q * Q.middleRows(c0, w).transpose()).cwiseAbs() *
                                  Eigen::VectorXd::Ones(w);
        }
    }

    Eigen::Index worst = 0;
    report.inf_op_norm = row_sums.maxCoeff(&worst);
    report.worst_row = static_cast<int>(worst);
    // Boundary inclusive, with slack for accumulated rounding in QQ'.
    report.is_nonexpansion = report.inf_op_norm <= 1.0 + 1e-9;
    return report;
}

}  // namespace dtr
