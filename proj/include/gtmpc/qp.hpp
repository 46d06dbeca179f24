#pragma once

#include <Eigen/Dense>

namespace gtmpc::detail {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct WorkingSetStep {
  VectorXd dx;
  VectorXd lambda;  // full-length multipliers, zero off the working set
  bool ok = false;
};

// One SQP direction for min-like subproblems with inequality rows c + A dx <= 0:
// equality-KKT solves over a working set, dropping negative multipliers and
// adding linearized violations until the set settles. H may be nonsymmetric
// (stacked game systems); rows with an all-zero Jacobian are never activated.
WorkingSetStep working_set_direction(const MatrixXd& H, const VectorXd& F, const MatrixXd& A,
                                     const VectorXd& c, const VectorXd& lambda,
                                     double nu_reg, double active_tol, int max_updates);

// Nonnegative multiplier recovery for degenerate active sets: coordinate
// descent on || H dx + F + A' lambda ||^2 with lambda >= 0 over near-active rows.
void polish_multipliers(const MatrixXd& H, const VectorXd& F, const MatrixXd& A,
                        const VectorXd& c, const VectorXd& dx, VectorXd& lambda,
                        double active_tol);

}  // namespace gtmpc::detail
