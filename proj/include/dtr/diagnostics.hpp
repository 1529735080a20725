#ifndef DTR_DIAGNOSTICS_HPP
#define DTR_DIAGNOSTICS_HPP

#include <Eigen/Dense>

namespace dtr {

struct ExpansionReport {
    double inf_op_norm = 0.0;
    bool is_nonexpansion = false;  // inf_op_norm <= 1 (boundary inclusive)
    int worst_row = 0;             // row attaining the maximum absolute row sum
    int rank = 0;
};

// Orthogonal projector onto the column space of Z, H = Z (Z'Z)^{-1} Z'.
// Throws NumericalError on a rank-deficient design.
Eigen::MatrixXd hat_matrix(const Eigen::MatrixXd& Z);

// Maximum absolute row sum; requires a square matrix.
double inf_operator_norm(const Eigen::MatrixXd& H);

// ||H||_op(inf) for the hat matrix of Z. Above `materialize_limit` rows the
// n x n projector is never formed; absolute row sums are accumulated from the
// thin orthogonal factor in column blocks.
ExpansionReport nonexpansion_check(const Eigen::MatrixXd& Z, int materialize_limit = 5000);

}  // namespace dtr

#endif
