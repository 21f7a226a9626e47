#include "mgprl/reference_gp.hpp"

#include <cmath>
#include <stdexcept>

namespace mgprl::reference {

namespace {

double se_kernel(const DenseGpProblem& p, double ax, double ay, double bx, double by) {
    const double dx = ax - bx, dy = ay - by;
    return p.sigma_f2 *
           std::exp(-(dx * dx + dy * dy) / (2.0 * p.length_scale * p.length_scale));
}

Eigen::MatrixXd stacked_covariance(const DenseGpProblem& p) {
    const int n = static_cast<int>(p.observations.size());
    Eigen::MatrixXd K(n, n);
    for (int a = 0; a < n; ++a) {
        const auto& oa = p.observations[static_cast<size_t>(a)];
        for (int b = 0; b < n; ++b) {
            const auto& ob = p.observations[static_cast<size_t>(b)];
            K(a, b) = se_kernel(p, p.locations(oa.location, 0), p.locations(oa.location, 1),
                                p.locations(ob.location, 0), p.locations(ob.location, 1)) *
                      p.coreg(oa.output, ob.output);
        }
    }
    K.diagonal().array() += p.noise_variance;
    return K;
}

Eigen::VectorXd centered_values(const DenseGpProblem& p) {
    Eigen::VectorXd y(static_cast<int>(p.observations.size()));
    for (size_t i = 0; i < p.observations.size(); ++i)
        y(static_cast<int>(i)) = p.observations[i].value_dbm - p.out_mean(p.observations[i].output);
    return y;
}

}  // namespace

DenseGpProblem problem_from_model(const MogpModel& model) {
    DenseGpProblem p;
    p.locations = model.locations();
    p.observations = model.observations();
    p.sigma_f2 = model.kernel().signal_variance;
    p.length_scale = model.kernel().length_scale;
    p.noise_variance = model.noise_variance();
    p.coreg = model.coreg().matrix();
    p.out_mean = model.output_mean();
    return p;
}

double dense_log_marginal_likelihood(const DenseGpProblem& p) {
    const Eigen::MatrixXd K = stacked_covariance(p);
    const Eigen::VectorXd y = centered_values(p);
    const int n = static_cast<int>(y.size());
    Eigen::LDLT<Eigen::MatrixXd> ldlt(K);
    if (ldlt.info() != Eigen::Success)
        throw std::runtime_error("reference: dense covariance factorization failed");
    const Eigen::VectorXd alpha = ldlt.solve(y);
    const double logdet = ldlt.vectorD().array().max(1e-300).log().sum();
    return -0.5 * y.dot(alpha) - 0.5 * logdet - 0.5 * n * std::log(2.0 * M_PI);
}

void dense_predict(const DenseGpProblem& p, const Vec2& query, int output, double& mean,
                   double& variance) {
    const Eigen::MatrixXd K = stacked_covariance(p);
    const Eigen::VectorXd y = centered_values(p);
    const int n = static_cast<int>(y.size());
    Eigen::VectorXd kstar(n);
    for (int a = 0; a < n; ++a) {
        const auto& oa = p.observations[static_cast<size_t>(a)];
        kstar(a) = se_kernel(p, query.x, query.y, p.locations(oa.location, 0),
                             p.locations(oa.location, 1)) *
                   p.coreg(oa.output, output);
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(K);
    if (ldlt.info() != Eigen::Success)
        throw std::runtime_error("reference: dense covariance factorization failed");
    mean = p.out_mean(output) + kstar.dot(ldlt.solve(y));
    variance = p.sigma_f2 * p.coreg(output, output) - kstar.dot(ldlt.solve(kstar));
}

void dense_predict_field(const DenseGpProblem& p, const GridSpec& grid, int output,
                         ScalarField& mean, ScalarField& variance) {
    mean = ScalarField(grid);
    variance = ScalarField(grid);
    // Factor once, then one serial solve per cell.
    const Eigen::MatrixXd K = stacked_covariance(p);
    const Eigen::VectorXd y = centered_values(p);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(K);
    if (ldlt.info() != Eigen::Success)
        throw std::runtime_error("reference: dense covariance factorization failed");
    const Eigen::VectorXd alpha = ldlt.solve(y);
    const int n = static_cast<int>(y.size());
    Eigen::VectorXd kstar(n);
    for (int j = 0; j < grid.height; ++j) {
        for (int i = 0; i < grid.width; ++i) {
            const Vec2 q = grid_cell_center(grid, i, j);
            for (int a = 0; a < n; ++a) {
                const auto& oa = p.observations[static_cast<size_t>(a)];
                kstar(a) = se_kernel(p, q.x, q.y, p.locations(oa.location, 0),
                                     p.locations(oa.location, 1)) *
                           p.coreg(oa.output, output);
            }
            mean.at(i, j) = p.out_mean(output) + kstar.dot(alpha);
            variance.at(i, j) = p.sigma_f2 * p.coreg(output, output) - kstar.dot(ldlt.solve(kstar));
        }
    }
}

}  // namespace mgprl::reference
