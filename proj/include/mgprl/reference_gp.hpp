// Serial brute-force multi-output GP reference. Assembles the stacked
// covariance explicitly (the Kronecker product written out element by
// element) and solves with a dense LDLT: no caching, no eigendecomposition,
// no OpenMP. Deliberately a different route from the optimized library so the
// two can check each other; linked only by tests, the selftest command and
// the benchmark.

#pragma once

#include <Eigen/Dense>
#include <vector>

#include "mgprl/geometry.hpp"
#include "mgprl/mogp.hpp"

namespace mgprl::reference {

struct DenseGpProblem {
    Eigen::MatrixXd locations;  // gamma x 2
    std::vector<MogpObservation> observations;
    double sigma_f2 = 1.0;
    double length_scale = 1.0;
    double noise_variance = 0.1;
    Eigen::MatrixXd coreg;      // m x m PSD
    Eigen::VectorXd out_mean;   // m
};

// Copies data and hyperparameters out of a fitted model.
DenseGpProblem problem_from_model(const MogpModel& model);

// Direct Gaussian log-density of the stacked centered observations.
double dense_log_marginal_likelihood(const DenseGpProblem& p);

// Posterior at a single query for one output, via the dense solve.
void dense_predict(const DenseGpProblem& p, const Vec2& query, int output, double& mean,
                   double& variance);

// Serial reference field prediction (one dense posterior per cell).
void dense_predict_field(const DenseGpProblem& p, const GridSpec& grid, int output,
                         ScalarField& mean, ScalarField& variance);

}  // namespace mgprl::reference
