// Co-regionalized multi-output Gaussian-process regression over RSSI
// measurements from m APs: shared squared-exponential spatial kernel combined
// with a PSD cross-output matrix B = A A^T + diag(kappa), marginal-likelihood
// hyperparameter fitting, and posterior field prediction.
//
// Two factorization routes sit behind the same contract. When every output is
// observed at every training location the stacked covariance is
// K_s (x) B + sigma_n^2 I whose inverse separates through the
// eigendecompositions of K_s and B; that path costs O(gamma^3 + m^3) per
// likelihood evaluation instead of the O((gamma m)^3) dense solve and is what
// makes the joint model cheaper than m independent GPs. Partially observed
// data falls back to a Cholesky of the covariance restricted to the observed
// (location, output) pairs.

#pragma once

#include <Eigen/Dense>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mgprl/geometry.hpp"
#include "mgprl/rfsim.hpp"

namespace mgprl {

struct SeKernelParams {
    double signal_variance = 1.0;  // sigma_f^2
    double length_scale = 1.0;     // l, meters

    void validate() const;
};

// sigma_f^2 * exp(-|x - x'|^2 / (2 l^2))
double kernel_eval(const SeKernelParams& params, const Vec2& a, const Vec2& b);

// B = factor * factor^T + diag(diag); PSD for any parameter values.
struct Coregionalization {
    Eigen::MatrixXd factor;  // m x rank
    Eigen::VectorXd diag;    // m, nonnegative

    int outputs() const { return static_cast<int>(factor.rows()); }
    int rank() const { return static_cast<int>(factor.cols()); }
    Eigen::MatrixXd matrix() const { return factor * factor.transpose() + Eigen::MatrixXd(diag.asDiagonal()); }
};

struct FitOptions {
    int restarts = 3;         // multi-restart count for full fits
    int update_restarts = 1;  // restarts used by cadence refits inside update()
    int max_iters = 150;
    double learning_rate = 0.08;
    bool use_gradients = true;  // false selects the derivative-free compass search
    int coreg_rank = 1;
    double log_param_min = -9.0;  // clamp for log-domain parameters
    double log_param_max = 9.0;
    int refit_cadence = 5;  // hyperparameters re-optimized every k-th update
    uint64_t seed = 0;
};

// One observation: training location index, output index, measured dBm.
struct MogpObservation {
    int location = 0;
    int output = 0;
    double value_dbm = 0.0;
};

class MogpModel {
public:
    MogpModel() = default;

    // Opaque factorization state; defined in the implementation.
    struct Cache;

    const std::vector<std::string>& outputs() const { return outputs_; }
    int output_index(const std::string& ap_id) const;
    int num_outputs() const { return static_cast<int>(outputs_.size()); }
    int num_locations() const { return static_cast<int>(locations_.rows()); }
    int num_observations() const { return static_cast<int>(observations_.size()); }
    // True when every (location, output) pair is observed exactly once.
    bool isotopic() const { return isotopic_; }

    const Eigen::MatrixXd& locations() const { return locations_; }
    const std::vector<MogpObservation>& observations() const { return observations_; }
    const SeKernelParams& kernel() const { return kernel_; }
    const Coregionalization& coreg() const { return coreg_; }
    double noise_variance() const { return noise_variance_; }
    const Eigen::VectorXd& output_mean() const { return output_mean_; }
    bool fit_warning() const { return fit_warning_; }
    const FitOptions& fit_options() const { return fit_opts_; }
    int updates_since_refit() const { return updates_since_refit_; }

    friend MogpModel fit(const std::vector<RssiSample>& samples,
                         const std::vector<std::string>& ap_ids, const FitOptions& opts);
    friend MogpModel update(const MogpModel& model, const std::vector<RssiSample>& new_samples);
    friend MogpModel with_hyperparameters(const MogpModel& model, const SeKernelParams& kernel,
                                          const Coregionalization& coreg, double noise_variance);
    friend double log_marginal_likelihood(const MogpModel& model);
    friend void predict(const MogpModel& model, std::span<const Vec2> queries,
                        const std::string& ap_id, std::vector<double>& mean,
                        std::vector<double>& variance);
    friend Eigen::VectorXd pack_hyperparameters(const MogpModel& model);
    friend double lml_at(const MogpModel& model, const Eigen::VectorXd& packed,
                         Eigen::VectorXd* gradient);
    friend std::string model_to_json_text(const MogpModel& model);
    friend MogpModel model_from_json_text(const std::string& text);

private:
    std::vector<std::string> outputs_;
    Eigen::MatrixXd locations_;  // gamma x 2
    std::vector<MogpObservation> observations_;
    bool isotopic_ = false;

    SeKernelParams kernel_;
    Coregionalization coreg_;
    double noise_variance_ = 1.0;  // sigma_n^2
    Eigen::VectorXd output_mean_;  // per-output prior mean (training-sample mean)
    bool fit_warning_ = false;
    FitOptions fit_opts_;
    int updates_since_refit_ = 0;

    std::shared_ptr<const Cache> cache_;

    void rebuild_dataset_flags();
    void rebuild_cache();
};

// Fits hyperparameters {sigma_f, l, A, kappa, sigma_n} by maximizing the log
// marginal likelihood with multi-restart, then caches the factorization.
// Requires at least one sample per AP in ap_ids. Throws std::invalid_argument
// when all samples are co-located with more than one sample per output.
MogpModel fit(const std::vector<RssiSample>& samples, const std::vector<std::string>& ap_ids,
              const FitOptions& opts = {});

// Appends data and refreshes the factorization; hyperparameters are
// re-optimized every refit_cadence-th non-empty update. Returns a new model.
MogpModel update(const MogpModel& model, const std::vector<RssiSample>& new_samples);

// Same data, explicit hyperparameters (no optimization). Used by tests and by
// the incremental-vs-batched equivalence checks.
MogpModel with_hyperparameters(const MogpModel& model, const SeKernelParams& kernel,
                               const Coregionalization& coreg, double noise_variance);

// Gaussian log-density of the stacked centered observations. Throws
// std::runtime_error if the covariance stays non-PSD after jitter escalation.
double log_marginal_likelihood(const MogpModel& model);

// Posterior mean (dBm) and variance (dB^2) for one output at each query.
void predict(const MogpModel& model, std::span<const Vec2> queries, const std::string& ap_id,
             std::vector<double>& mean, std::vector<double>& variance);

// Batched prediction over all cell centers; the inner loop is OpenMP-parallel
// across cells.
void predict_field(const MogpModel& model, const GridSpec& grid, const std::string& ap_id,
                   ScalarField& mean, ScalarField& variance);

// Hyperparameters packed as
//   [log sigma_f^2, log l, vec(A), log kappa, log sigma_n^2]
// which is the optimizer's coordinate system. lml_at evaluates the marginal
// likelihood (and, when requested, its analytic gradient) for the model's
// training data at the packed parameters; exposed for the finite-difference
// checks and the optimizer.
Eigen::VectorXd pack_hyperparameters(const MogpModel& model);
double lml_at(const MogpModel& model, const Eigen::VectorXd& packed, Eigen::VectorXd* gradient);

// Versioned model file ("mgprl-mogp/1"): hyperparameters plus training data.
std::string model_to_json_text(const MogpModel& model);
MogpModel model_from_json_text(const std::string& text);
void save_model(const MogpModel& model, const std::string& path);
MogpModel load_model(const std::string& path);

}  // namespace mgprl
