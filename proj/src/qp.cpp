#include "gtmpc/qp.hpp"

#include <cstdio>
#include <cstdlib>
#include <vector>

namespace gtmpc::detail {

WorkingSetStep working_set_direction(const MatrixXd& H, const VectorXd& F, const MatrixXd& A,
                                     const VectorXd& c, const VectorXd& lambda,
                                     double nu_reg, double active_tol, int max_updates) {
  const int n = static_cast<int>(H.rows());
  const int m = static_cast<int>(c.size());
  WorkingSetStep out;
  out.lambda = VectorXd::Zero(m);

  // seed with carried-over multipliers on rows that are still near-active,
  // plus outright violations; a stale positive multiplier on a strictly
  // inactive row must not force that row back to its boundary
  std::vector<char> in_w(m, 0);
  std::vector<char> pinned(m, 0);
  std::vector<int> add_count(m, 0);
  for (int j = 0; j < m; ++j)
    if ((lambda[j] > 0.0 && c[j] > -1e-5) || c[j] > active_tol) in_w[j] = 1;
  for (int j = 0; j < m; ++j)
    if (in_w[j] && A.row(j).lpNorm<Eigen::Infinity>() < 1e-14) in_w[j] = 0;

  const MatrixXd Hreg = H + nu_reg * MatrixXd::Identity(n, n);
  for (int update = 0; update < max_updates; ++update) {
    std::vector<int> w;
    for (int j = 0; j < m; ++j)
      if (in_w[j]) w.push_back(j);
    const int nw = static_cast<int>(w.size());
    MatrixXd K = MatrixXd::Zero(n + nw, n + nw);
    K.topLeftCorner(n, n) = Hreg;
    for (int r = 0; r < nw; ++r) {
      K.block(0, n + r, n, 1) = A.row(w[r]).transpose();
      K.block(n + r, 0, 1, n) = A.row(w[r]);
      K(n + r, n + r) = -1e-10;
    }
    VectorXd rhs(n + nw);
    rhs.head(n) = -F;
    for (int r = 0; r < nw; ++r) rhs[n + r] = -c[w[r]];
    Eigen::PartialPivLU<MatrixXd> lu(K);
    const VectorXd sol = lu.solve(rhs);
    if (!sol.allFinite()) return out;
    out.dx = sol.head(n);
    out.lambda.setZero();
    for (int r = 0; r < nw; ++r) out.lambda[w[r]] = sol[n + r];

    // removals: batch when many multipliers are negative, single most-negative
    // otherwise; rows that keep re-entering are pinned to stop cycling
    std::vector<int> negative;
    int most_neg_row = -1;
    double most_neg = -1e-10;
    for (int r = 0; r < nw; ++r) {
      const int j = w[r];
      if (out.lambda[j] < -1e-10 && !pinned[j]) {
        negative.push_back(j);
        if (out.lambda[j] < most_neg) {
          most_neg = out.lambda[j];
          most_neg_row = j;
        }
      }
    }
    if (!negative.empty()) {
      if (negative.size() > 8) {
        for (int j : negative) {
          in_w[j] = 0;
          out.lambda[j] = 0.0;
        }
      } else {
        in_w[most_neg_row] = 0;
        out.lambda[most_neg_row] = 0.0;
      }
      continue;
    }
    bool added = false;
    for (int j = 0; j < m; ++j) {
      if (in_w[j]) continue;
      if (A.row(j).lpNorm<Eigen::Infinity>() < 1e-14) continue;
      if (c[j] + A.row(j).dot(out.dx) > active_tol) {
        in_w[j] = 1;
        added = true;
        if (++add_count[j] > 3) pinned[j] = 1;
      }
    }
    if (!added) {
      out.ok = true;
      return out;
    }
  }
  if (std::getenv("GTMPC_QP_TRACE")) {
    int nw = 0, neg = 0;
    for (int j = 0; j < m; ++j)
      if (in_w[j]) ++nw;
    for (int j = 0; j < m; ++j)
      if (out.lambda[j] < -1e-10) ++neg;
    std::fprintf(stderr, "  [qp] working set did NOT settle: nw=%d neg=%d\n", nw, neg);
  }
  out.ok = out.dx.size() == n;  // set did not settle; let the line search judge
  return out;
}

void polish_multipliers(const MatrixXd& H, const VectorXd& F, const MatrixXd& A,
                        const VectorXd& c, const VectorXd& dx, VectorXd& lambda,
                        double active_tol) {
  // Degenerate active sets (linearly dependent rows at box/rate corners) can
  // leave sign-indefinite multipliers. Project onto the nonnegative cone by
  // coordinate descent on || H dx + F + A' lambda ||^2 over near-active rows.
  const int m = static_cast<int>(c.size());
  std::vector<int> cand;
  std::vector<double> diag;
  for (int j = 0; j < m; ++j) {
    const double a2 = A.row(j).squaredNorm();
    if (a2 < 1e-20) {
      lambda[j] = 0.0;
      continue;
    }
    if (lambda[j] != 0.0 || c[j] > -active_tol * 10.0) {
      cand.push_back(j);
      diag.push_back(a2);
    }
  }
  if (cand.empty()) return;
  VectorXd r = F + H * dx;
  for (int j : cand) {
    if (lambda[j] != 0.0) r.noalias() += lambda[j] * A.row(j).transpose();
  }
  for (int sweep = 0; sweep < 60; ++sweep) {
    double change = 0.0;
    for (std::size_t i = 0; i < cand.size(); ++i) {
      const int j = cand[i];
      const double step = A.row(j).dot(r) / diag[i];
      const double next = std::max(0.0, lambda[j] - step);
      const double delta = next - lambda[j];
      if (delta != 0.0) {
        r.noalias() += delta * A.row(j).transpose();
        lambda[j] = next;
        change = std::max(change, std::abs(delta));
      }
    }
    if (change < 1e-14) break;
  }
}

}  // namespace gtmpc::detail
