#pragma once

// Dense Levenberg-Marquardt shared by pose refinement and calibration.

#include <algorithm>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "qsts/error.hpp"
#include "qsts/geometry.hpp"

namespace qsts::detail {

struct LmOutcome {
  std::vector<double> cost_trace;
  int iterations = 0;
  bool convergence_warning = false;
};

// Problem must provide
//   bool evaluate(const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd* J) const;
// returning false when x is outside the model's domain.
template <class Problem>
LmOutcome levenberg_marquardt(const Problem& problem, Eigen::VectorXd& x,
                              const LmOptions& opt) {
  LmOutcome out;
  Eigen::VectorXd r;
  Eigen::MatrixXd J;
  if (!problem.evaluate(x, r, &J)) {
    throw Error(ErrorKind::kProjection, "initial parameters cannot be evaluated");
  }
  double cost = r.squaredNorm();
  out.cost_trace.push_back(cost);

  Eigen::MatrixXd A = J.transpose() * J;
  Eigen::VectorXd g = J.transpose() * r;
  double lambda = 1e-3 * A.diagonal().mean();
  if (!(lambda > 0.0)) lambda = 1e-3;

  Eigen::VectorXd r_new;
  for (int iter = 0; iter < opt.max_iterations; ++iter) {
    if (cost <= opt.absolute_cost_tolerance) break;

    bool accepted = false;
    Eigen::VectorXd delta;
    double cost_new = cost;
    for (int retry = 0; retry <= opt.max_damping_retries; ++retry) {
      Eigen::MatrixXd damped = A;
      damped.diagonal().array() += lambda;
      delta = damped.ldlt().solve(-g);
      const Eigen::VectorXd candidate = x + delta;
      if (delta.allFinite() && problem.evaluate(candidate, r_new, nullptr)) {
        cost_new = r_new.squaredNorm();
        if (cost_new < cost) {
          accepted = true;
          break;
        }
      }
      lambda *= 10.0;
    }
    ++out.iterations;
    if (!accepted) {
      if (iter == 0) out.convergence_warning = true;
      break;
    }

    const double rel_decrease = (cost - cost_new) / cost;
    x += delta;
    cost = cost_new;
    out.cost_trace.push_back(cost);
    lambda = std::max(lambda / 10.0, 1e-300);

    if (delta.norm() < opt.step_tolerance || rel_decrease < opt.relative_cost_tolerance) break;

    problem.evaluate(x, r, &J);
    A.noalias() = J.transpose() * J;
    g.noalias() = J.transpose() * r;
  }
  return out;
}

}  // namespace qsts::detail
