#include "mgprl/mogp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <map>
#include <sstream>

#include "mgprl/rng.hpp"

using json = nlohmann::ordered_json;

namespace mgprl {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

struct HyperParams {
    double sigma_f2 = 1.0;
    double length_scale = 1.0;
    Eigen::MatrixXd factor;  // m x r
    Eigen::VectorXd kappa;   // m
    double sigma_n2 = 0.1;

    Eigen::MatrixXd coreg_matrix() const {
        return factor * factor.transpose() + Eigen::MatrixXd(kappa.asDiagonal());
    }
};

int packed_size(int m, int r) { return 2 + m * r + m + 1; }

Eigen::VectorXd pack(const HyperParams& p) {
    const int m = static_cast<int>(p.kappa.size());
    const int r = static_cast<int>(p.factor.cols());
    Eigen::VectorXd v(packed_size(m, r));
    v(0) = std::log(p.sigma_f2);
    v(1) = std::log(p.length_scale);
    int k = 2;
    for (int j = 0; j < r; ++j)
        for (int i = 0; i < m; ++i) v(k++) = p.factor(i, j);
    for (int i = 0; i < m; ++i) v(k++) = std::log(std::max(p.kappa(i), 1e-300));
    v(k) = std::log(std::max(p.sigma_n2, 1e-300));
    return v;
}

HyperParams unpack(const Eigen::VectorXd& v, int m, int r) {
    HyperParams p;
    p.sigma_f2 = std::exp(v(0));
    p.length_scale = std::exp(v(1));
    p.factor.resize(m, r);
    int k = 2;
    for (int j = 0; j < r; ++j)
        for (int i = 0; i < m; ++i) p.factor(i, j) = v(k++);
    p.kappa.resize(m);
    for (int i = 0; i < m; ++i) p.kappa(i) = std::exp(v(k++));
    p.sigma_n2 = std::exp(v(k));
    return p;
}

Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& X) {
    const int n = static_cast<int>(X.rows());
    Eigen::MatrixXd d2(n, n);
    for (int i = 0; i < n; ++i) {
        d2(i, i) = 0.0;
        for (int j = i + 1; j < n; ++j) {
            const double dx = X(i, 0) - X(j, 0);
            const double dy = X(i, 1) - X(j, 1);
            d2(i, j) = d2(j, i) = dx * dx + dy * dy;
        }
    }
    return d2;
}

struct LmlEval {
    double value = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd gradient;
    bool ok = false;
};

}  // namespace

// Cached factorization. Kronecker variant when the data is isotopic,
// otherwise Cholesky of the covariance restricted to observed pairs.
struct MogpModel::Cache {
    bool kronecker = false;
    double lml = 0.0;

    // stacked path
    Eigen::MatrixXd chol_lower;  // L with L L^T = Sigma (+ jitter)
    Eigen::VectorXd alpha;       // Sigma^{-1} (y - mean)

    // kronecker path
    Eigen::MatrixXd Qs;         // gamma x gamma eigenvectors of K_s
    Eigen::VectorXd lam;        // gamma eigenvalues (clamped >= 0)
    Eigen::MatrixXd Qb;         // m x m eigenvectors of B
    Eigen::VectorXd mu;         // m eigenvalues (clamped >= 0)
    Eigen::MatrixXd Dinv;       // gamma x m
    Eigen::MatrixXd alpha_mat;  // gamma x m
    Eigen::MatrixXd W;          // alpha_mat * B, for posterior means
    Eigen::MatrixXd B;          // m x m
};

void SeKernelParams::validate() const {
    if (!(signal_variance > 0.0) || !(length_scale > 0.0))
        throw std::invalid_argument("SE kernel parameters must be strictly positive");
}

double kernel_eval(const SeKernelParams& params, const Vec2& a, const Vec2& b) {
    const double d2 = (a - b).squared_norm();
    return params.signal_variance *
           std::exp(-d2 / (2.0 * params.length_scale * params.length_scale));
}

int MogpModel::output_index(const std::string& ap_id) const {
    for (size_t i = 0; i < outputs_.size(); ++i)
        if (outputs_[i] == ap_id) return static_cast<int>(i);
    throw std::out_of_range("MogpModel: unknown output '" + ap_id + "'");
}

void MogpModel::rebuild_dataset_flags() {
    const int gamma = num_locations();
    const int m = num_outputs();
    std::sort(observations_.begin(), observations_.end(),
              [](const MogpObservation& a, const MogpObservation& b) {
                  return std::tie(a.location, a.output) < std::tie(b.location, b.output);
              });
    isotopic_ = (static_cast<int>(observations_.size()) == gamma * m);
    if (isotopic_) {
        for (int i = 0; i < gamma * m && isotopic_; ++i) {
            const auto& o = observations_[static_cast<size_t>(i)];
            if (o.location != i / m || o.output != i % m) isotopic_ = false;
        }
    }
    // Per-output training mean doubles as the prior mean.
    output_mean_ = Eigen::VectorXd::Zero(m);
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(m);
    for (const auto& o : observations_) {
        output_mean_(o.output) += o.value_dbm;
        counts(o.output) += 1.0;
    }
    for (int i = 0; i < m; ++i) {
        if (counts(i) == 0.0)
            throw std::invalid_argument("MogpModel: output '" + outputs_[static_cast<size_t>(i)] +
                                        "' has no samples");
        output_mean_(i) /= counts(i);
    }
}

namespace {

// Marginal likelihood (and gradient) through the separable eigendecomposition.
// Valid only for isotopic data.
LmlEval lml_kronecker(const Eigen::MatrixXd& d2, const Eigen::MatrixXd& Ycent,
                      const HyperParams& p, bool want_grad, MogpModel::Cache* cache_out) {
    const int m = static_cast<int>(Ycent.cols());
    const int r = static_cast<int>(p.factor.cols());
    const double n_total = static_cast<double>(Ycent.rows()) * m;

    const Eigen::MatrixXd Ks =
        p.sigma_f2 * (-d2 / (2.0 * p.length_scale * p.length_scale)).array().exp().matrix();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig_s(Ks);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig_b(p.coreg_matrix());
    if (eig_s.info() != Eigen::Success || eig_b.info() != Eigen::Success) return {};

    const Eigen::MatrixXd& Qs = eig_s.eigenvectors();
    const Eigen::MatrixXd& Qb = eig_b.eigenvectors();
    const Eigen::VectorXd lam = eig_s.eigenvalues().cwiseMax(0.0);
    const Eigen::VectorXd mu = eig_b.eigenvalues().cwiseMax(0.0);

    Eigen::MatrixXd D = lam * mu.transpose();
    D.array() += p.sigma_n2;
    const double floor = std::max(1e-300, 1e-14 * D.maxCoeff());
    D = D.cwiseMax(floor);

    const Eigen::MatrixXd Yrot = Qs.transpose() * Ycent * Qb;
    const Eigen::MatrixXd Arot = Yrot.cwiseQuotient(D);

    LmlEval res;
    res.value = -0.5 * (Yrot.cwiseProduct(Arot)).sum() - 0.5 * D.array().log().sum() -
                0.5 * n_total * kLog2Pi;
    res.ok = std::isfinite(res.value);
    if (!res.ok) return res;

    const Eigen::MatrixXd alpha_mat = Qs * Arot * Qb.transpose();

    if (cache_out) {
        cache_out->kronecker = true;
        cache_out->Qs = Qs;
        cache_out->lam = lam;
        cache_out->Qb = Qb;
        cache_out->mu = mu;
        cache_out->Dinv = D.cwiseInverse();
        cache_out->alpha_mat = alpha_mat;
        cache_out->B = p.coreg_matrix();
        cache_out->W = alpha_mat * cache_out->B;
    }
    if (!want_grad) return res;

    const Eigen::MatrixXd Dinv = D.cwiseInverse();
    const Eigen::MatrixXd B = p.coreg_matrix();
    const Eigen::MatrixXd S = alpha_mat.transpose() * Ks * alpha_mat;  // m x m
    const Eigen::VectorXd mu_over_d = Dinv * mu;                // per i: sum_o mu_o / D_io
    const Eigen::VectorXd lam_over_d = Dinv.transpose() * lam;  // per o: sum_i lam_i / D_io

    Eigen::VectorXd g(packed_size(m, r));

    // log sigma_f^2: dSigma = Ks (x) B
    g(0) = 0.5 * ((S.cwiseProduct(B)).sum() - lam.dot(mu_over_d));

    // log l: dK_s = Ks .* d2 / l^2
    const Eigen::MatrixXd P = Ks.cwiseProduct(d2) / (p.length_scale * p.length_scale);
    const Eigen::MatrixXd PQ = P * Qs;
    const Eigen::VectorXd diagP = (Qs.cwiseProduct(PQ)).colwise().sum().transpose();
    const Eigen::MatrixXd SP = alpha_mat.transpose() * P * alpha_mat;
    g(1) = 0.5 * ((SP.cwiseProduct(B)).sum() - diagP.dot(mu_over_d));

    // factor entries: dB = e_u a_v^T + a_v e_u^T
    const Eigen::MatrixXd SA = S * p.factor;                // m x r
    const Eigen::MatrixXd AtQ = p.factor.transpose() * Qb;  // r x m
    const Eigen::MatrixXd traceA = Qb * lam_over_d.asDiagonal() * AtQ.transpose();  // m x r
    int k = 2;
    for (int j = 0; j < r; ++j)
        for (int i = 0; i < m; ++i) g(k++) = SA(i, j) - traceA(i, j);

    // log kappa_u: dB = kappa_u e_u e_u^T
    for (int u = 0; u < m; ++u) {
        double tr = 0.0;
        for (int o = 0; o < m; ++o) tr += Qb(u, o) * Qb(u, o) * lam_over_d(o);
        g(k++) = 0.5 * p.kappa(u) * (S(u, u) - tr);
    }

    // log sigma_n^2
    g(k) = 0.5 * p.sigma_n2 * (alpha_mat.squaredNorm() - Dinv.sum());

    res.gradient = std::move(g);
    return res;
}

// General path over the observed (location, output) pairs.
LmlEval lml_stacked(const Eigen::MatrixXd& d2, const std::vector<MogpObservation>& obs,
                    const Eigen::VectorXd& ycent, const HyperParams& p, bool want_grad,
                    MogpModel::Cache* cache_out) {
    const int n = static_cast<int>(obs.size());
    const int m = static_cast<int>(p.kappa.size());
    const int r = static_cast<int>(p.factor.cols());
    const Eigen::MatrixXd B = p.coreg_matrix();
    const double inv2l2 = 1.0 / (2.0 * p.length_scale * p.length_scale);

    Eigen::MatrixXd Ksonly(n, n);  // spatial kernel between observations, no B
    Eigen::MatrixXd D2obs(n, n);
    for (int a = 0; a < n; ++a) {
        for (int b = a; b < n; ++b) {
            const double dd =
                d2(obs[static_cast<size_t>(a)].location, obs[static_cast<size_t>(b)].location);
            const double ks = p.sigma_f2 * std::exp(-dd * inv2l2);
            Ksonly(a, b) = Ksonly(b, a) = ks;
            D2obs(a, b) = D2obs(b, a) = dd;
        }
    }
    Eigen::MatrixXd Kfull(n, n);
    for (int a = 0; a < n; ++a)
        for (int b = a; b < n; ++b) {
            const double k = Ksonly(a, b) * B(obs[static_cast<size_t>(a)].output,
                                              obs[static_cast<size_t>(b)].output);
            Kfull(a, b) = Kfull(b, a) = k;
        }

    const double diag_mean = Kfull.diagonal().mean() + p.sigma_n2;
    Eigen::LLT<Eigen::MatrixXd> llt;
    for (double scale : {0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4}) {
        Eigen::MatrixXd Sigma = Kfull;
        Sigma.diagonal().array() += p.sigma_n2 + scale * diag_mean;
        llt.compute(Sigma);
        if (llt.info() == Eigen::Success) break;
    }
    if (llt.info() != Eigen::Success) return {};

    const Eigen::VectorXd alpha = llt.solve(ycent);
    double logdet = 0.0;
    for (int i = 0; i < n; ++i) logdet += std::log(llt.matrixLLT()(i, i));
    LmlEval res;
    res.value = -0.5 * ycent.dot(alpha) - logdet - 0.5 * n * kLog2Pi;
    res.ok = std::isfinite(res.value);
    if (!res.ok) return res;

    if (cache_out) {
        cache_out->kronecker = false;
        cache_out->chol_lower = llt.matrixL();
        cache_out->alpha = alpha;
    }
    if (!want_grad) return res;

    const Eigen::MatrixXd Sinv = llt.solve(Eigen::MatrixXd::Identity(n, n));
    const Eigen::MatrixXd G = alpha * alpha.transpose() - Sinv;
    const Eigen::MatrixXd GK = G.cwiseProduct(Kfull);
    const Eigen::MatrixXd GKs = G.cwiseProduct(Ksonly);  // kernel part without B

    Eigen::VectorXd g(packed_size(m, r));
    g(0) = 0.5 * GK.sum();
    g(1) = 0.5 * (GK.cwiseProduct(D2obs)).sum() / (p.length_scale * p.length_scale);

    // Group-sum G.*Ks rows by output, then contract with the factor:
    // dLML/dA(u,v) = sum_{a,b} (G.*Ks)_{ab} [1(o_a=u) A(o_b,v)]  (symmetric pair folded)
    Eigen::MatrixXd R = Eigen::MatrixXd::Zero(m, n);
    for (int a = 0; a < n; ++a) R.row(obs[static_cast<size_t>(a)].output) += GKs.row(a);
    Eigen::MatrixXd OA(n, r);
    for (int b = 0; b < n; ++b) OA.row(b) = p.factor.row(obs[static_cast<size_t>(b)].output);
    const Eigen::MatrixXd gA = R * OA;  // the 0.5 * 2 factor cancels
    int k = 2;
    for (int j = 0; j < r; ++j)
        for (int i = 0; i < m; ++i) g(k++) = gA(i, j);

    for (int u = 0; u < m; ++u) {
        double s = 0.0;
        for (int b = 0; b < n; ++b)
            if (obs[static_cast<size_t>(b)].output == u) s += R(u, b);
        g(k++) = 0.5 * p.kappa(u) * s;
    }
    g(k) = 0.5 * p.sigma_n2 * G.trace();

    res.gradient = std::move(g);
    return res;
}

LmlEval evaluate_lml(const MogpModel& model, const HyperParams& p, bool want_grad,
                     MogpModel::Cache* cache_out) {
    const Eigen::MatrixXd d2 = squared_distances(model.locations());
    if (model.isotopic()) {
        Eigen::MatrixXd Ycent(model.num_locations(), model.num_outputs());
        for (const auto& o : model.observations())
            Ycent(o.location, o.output) = o.value_dbm - model.output_mean()(o.output);
        return lml_kronecker(d2, Ycent, p, want_grad, cache_out);
    }
    Eigen::VectorXd ycent(model.num_observations());
    for (size_t i = 0; i < model.observations().size(); ++i)
        ycent(static_cast<int>(i)) =
            model.observations()[i].value_dbm - model.output_mean()(model.observations()[i].output);
    return lml_stacked(d2, model.observations(), ycent, p, want_grad, cache_out);
}

}  // namespace

double lml_at(const MogpModel& model, const Eigen::VectorXd& packed, Eigen::VectorXd* gradient) {
    const int m = model.num_outputs();
    const int r = static_cast<int>((packed.size() - 3 - m) / m);
    const HyperParams p = unpack(packed, m, r);
    const LmlEval eval = evaluate_lml(model, p, gradient != nullptr, nullptr);
    if (gradient) *gradient = eval.ok ? eval.gradient : Eigen::VectorXd::Zero(packed.size());
    return eval.ok ? eval.value : -std::numeric_limits<double>::infinity();
}

Eigen::VectorXd pack_hyperparameters(const MogpModel& model) {
    HyperParams p;
    p.sigma_f2 = model.kernel_.signal_variance;
    p.length_scale = model.kernel_.length_scale;
    p.factor = model.coreg_.factor;
    p.kappa = model.coreg_.diag;
    p.sigma_n2 = model.noise_variance_;
    return pack(p);
}

void MogpModel::rebuild_cache() {
    HyperParams p;
    p.sigma_f2 = kernel_.signal_variance;
    p.length_scale = kernel_.length_scale;
    p.factor = coreg_.factor;
    p.kappa = coreg_.diag;
    p.sigma_n2 = noise_variance_;

    auto cache = std::make_shared<Cache>();
    const LmlEval eval = evaluate_lml(*this, p, false, cache.get());
    if (!eval.ok)
        throw std::runtime_error(
            "MogpModel: covariance not positive definite after jitter escalation");
    cache->lml = eval.value;
    cache_ = std::move(cache);
}

double log_marginal_likelihood(const MogpModel& model) {
    if (!model.cache_) throw std::runtime_error("MogpModel: no factorization");
    return model.cache_->lml;
}

namespace {

HyperParams initial_guess(const Eigen::MatrixXd& X, const Eigen::VectorXd& out_std, int rank) {
    const int m = static_cast<int>(out_std.size());
    HyperParams p;
    p.sigma_f2 = 1.0;
    const double span_x = X.col(0).maxCoeff() - X.col(0).minCoeff();
    const double span_y = X.col(1).maxCoeff() - X.col(1).minCoeff();
    p.length_scale = std::max(0.3, 0.25 * std::max(span_x, span_y));
    p.factor = Eigen::MatrixXd::Zero(m, rank);
    for (int i = 0; i < m; ++i) {
        p.factor(i, 0) = std::max(out_std(i), 1e-2);
        for (int j = 1; j < rank; ++j) p.factor(i, j) = 0.1 * p.factor(i, 0);
    }
    p.kappa = (0.1 * out_std.array().square() + 1e-4).matrix();
    p.sigma_n2 = std::max(1e-4, 0.05 * out_std.array().square().mean());
    return p;
}

void clamp_params(Eigen::VectorXd& v, int m, int r, const FitOptions& opts) {
    v(0) = std::clamp(v(0), opts.log_param_min, opts.log_param_max);
    v(1) = std::clamp(v(1), opts.log_param_min, opts.log_param_max);
    for (int k = 2; k < 2 + m * r; ++k) v(k) = std::clamp(v(k), -1e3, 1e3);
    for (int k = 2 + m * r; k < static_cast<int>(v.size()); ++k)
        v(k) = std::clamp(v(k), opts.log_param_min, opts.log_param_max);
}

struct OptResult {
    Eigen::VectorXd theta;
    double lml = -std::numeric_limits<double>::infinity();
    bool converged = false;
};

OptResult maximize_adam(const MogpModel& model, Eigen::VectorXd theta, const FitOptions& opts,
                        int m, int r) {
    OptResult best;
    best.theta = theta;
    Eigen::VectorXd madam = Eigen::VectorXd::Zero(theta.size());
    Eigen::VectorXd vadam = Eigen::VectorXd::Zero(theta.size());
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    double lr = opts.learning_rate;
    double prev = -std::numeric_limits<double>::infinity();
    int stall = 0;

    for (int t = 1; t <= opts.max_iters; ++t) {
        Eigen::VectorXd grad;
        const double f = lml_at(model, theta, &grad);
        if (!std::isfinite(f)) {
            theta = best.theta;
            lr *= 0.5;
            if (lr < 1e-6) break;
            continue;
        }
        if (f > best.lml) {
            best.lml = f;
            best.theta = theta;
        }
        if (std::abs(f - prev) < 1e-10 * (1.0 + std::abs(f))) {
            if (++stall >= 8) {
                best.converged = true;
                break;
            }
        } else {
            stall = 0;
        }
        prev = f;

        madam = b1 * madam + (1.0 - b1) * grad;
        vadam = b2 * vadam + (1.0 - b2) * grad.cwiseProduct(grad);
        const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
        for (int i = 0; i < theta.size(); ++i)
            theta(i) += lr * (madam(i) / c1) / (std::sqrt(vadam(i) / c2) + eps);
        clamp_params(theta, m, r, opts);
    }
    return best;
}

OptResult maximize_compass(const MogpModel& model, Eigen::VectorXd theta, const FitOptions& opts,
                           int m, int r) {
    OptResult best;
    best.theta = theta;
    best.lml = lml_at(model, theta, nullptr);
    double step = 0.5;
    int evals = 0;
    const int budget = opts.max_iters * static_cast<int>(theta.size());
    while (step > 1e-3 && evals < budget) {
        bool improved = false;
        for (int i = 0; i < theta.size() && evals < budget; ++i) {
            for (double dir : {1.0, -1.0}) {
                Eigen::VectorXd cand = best.theta;
                cand(i) += dir * step;
                clamp_params(cand, m, r, opts);
                const double f = lml_at(model, cand, nullptr);
                ++evals;
                if (f > best.lml) {
                    best.lml = f;
                    best.theta = cand;
                    improved = true;
                    break;
                }
            }
        }
        if (!improved) step *= 0.6;
    }
    best.converged = step <= 1e-3;
    return best;
}

// Multi-restart maximization over one or more initial points; restarts beyond
// the given inits perturb the first one.
OptResult optimize_hyperparameters(const MogpModel& model, const std::vector<HyperParams>& inits,
                                   int restarts, const FitOptions& opts, uint64_t seed) {
    const int m = static_cast<int>(inits.front().kappa.size());
    const int r = static_cast<int>(inits.front().factor.cols());
    Rng rng(derive_seed(seed, "hyperopt"));

    OptResult best;
    best.theta = pack(inits.front());
    for (int restart = 0; restart < std::max(restarts, 1); ++restart) {
        Eigen::VectorXd theta;
        if (restart < static_cast<int>(inits.size())) {
            theta = pack(inits[static_cast<size_t>(restart)]);
        } else {
            theta = pack(inits.front());
            theta(0) += rng.gaussian(0.0, 0.8);
            theta(1) += rng.gaussian(0.0, 0.8);
            for (int k = 2; k < 2 + m * r; ++k) theta(k) *= std::exp(rng.gaussian(0.0, 0.4));
            for (int k = 2 + m * r; k < theta.size(); ++k) theta(k) += rng.gaussian(0.0, 0.8);
        }
        clamp_params(theta, m, r, opts);
        const OptResult res = opts.use_gradients ? maximize_adam(model, theta, opts, m, r)
                                                 : maximize_compass(model, theta, opts, m, r);
        if (res.lml > best.lml) best = res;
    }
    return best;
}

Eigen::VectorXd output_std(const MogpModel& model) {
    const int m = model.num_outputs();
    Eigen::VectorXd out_std = Eigen::VectorXd::Zero(m);
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(m);
    for (const auto& o : model.observations()) {
        const double c = o.value_dbm - model.output_mean()(o.output);
        out_std(o.output) += c * c;
        counts(o.output) += 1.0;
    }
    for (int i = 0; i < m; ++i) out_std(i) = std::sqrt(out_std(i) / std::max(counts(i), 1.0));
    return out_std;
}

void apply_packed(const Eigen::VectorXd& theta, int m, int r, SeKernelParams& kernel,
                  Coregionalization& coreg, double& noise) {
    const HyperParams p = unpack(theta, m, r);
    kernel.signal_variance = p.sigma_f2;
    kernel.length_scale = p.length_scale;
    coreg.factor = p.factor;
    coreg.diag = p.kappa;
    noise = p.sigma_n2;
}

int output_index_of(const std::vector<std::string>& outputs, const std::string& ap_id) {
    for (size_t i = 0; i < outputs.size(); ++i)
        if (outputs[i] == ap_id) return static_cast<int>(i);
    throw std::out_of_range("mogp: sample references unknown AP '" + ap_id + "'");
}

void ingest_samples(Eigen::MatrixXd& X, std::vector<MogpObservation>& obs,
                    const std::vector<std::string>& outputs,
                    const std::vector<RssiSample>& samples,
                    std::map<std::pair<double, double>, int>& loc_index) {
    std::vector<Eigen::Vector2d> new_locations;
    const int old = static_cast<int>(X.rows());
    for (const auto& s : samples) {
        if (!std::isfinite(s.location.x) || !std::isfinite(s.location.y) ||
            !std::isfinite(s.value_dbm))
            throw std::invalid_argument("mogp: sample with non-finite location or value");
        const int out = output_index_of(outputs, s.ap_id);
        const std::pair<double, double> key{s.location.x, s.location.y};
        auto it = loc_index.find(key);
        int loc;
        if (it == loc_index.end()) {
            loc = old + static_cast<int>(new_locations.size());
            loc_index.emplace(key, loc);
            new_locations.emplace_back(s.location.x, s.location.y);
        } else {
            loc = it->second;
        }
        obs.push_back({loc, out, s.value_dbm});
    }
    if (!new_locations.empty()) {
        X.conservativeResize(old + static_cast<int>(new_locations.size()), 2);
        for (size_t i = 0; i < new_locations.size(); ++i)
            X.row(old + static_cast<int>(i)) = new_locations[i].transpose();
    }
}

}  // namespace

MogpModel fit(const std::vector<RssiSample>& samples, const std::vector<std::string>& ap_ids,
              const FitOptions& opts) {
    if (ap_ids.empty()) throw std::invalid_argument("fit: no outputs given");
    if (samples.empty()) throw std::invalid_argument("fit: no samples");

    MogpModel model;
    model.outputs_ = ap_ids;
    model.locations_.resize(0, 2);
    model.fit_opts_ = opts;
    std::map<std::pair<double, double>, int> loc_index;
    ingest_samples(model.locations_, model.observations_, model.outputs_, samples, loc_index);
    model.rebuild_dataset_flags();

    const int m = model.num_outputs();
    const int gamma = model.num_locations();
    const int rank = std::max(1, opts.coreg_rank);
    const Eigen::VectorXd out_std = output_std(model);

    if (gamma == 1) {
        if (model.num_observations() > m)
            throw std::invalid_argument("fit: all samples co-located; hyperparameters unidentifiable");
        // Prior-dominated model: keep the heuristic hyperparameters.
        const HyperParams init = initial_guess(model.locations_, out_std, rank);
        apply_packed(pack(init), m, rank, model.kernel_, model.coreg_, model.noise_variance_);
        model.rebuild_cache();
        return model;
    }

    const HyperParams init = initial_guess(model.locations_, out_std, rank);
    if (opts.restarts <= 0 || opts.max_iters <= 0) {
        apply_packed(pack(init), m, rank, model.kernel_, model.coreg_, model.noise_variance_);
        model.rebuild_cache();
        return model;
    }

    const OptResult best = optimize_hyperparameters(model, {init}, opts.restarts, opts, opts.seed);
    model.fit_warning_ = !best.converged || !std::isfinite(best.lml);
    apply_packed(best.theta, m, rank, model.kernel_, model.coreg_, model.noise_variance_);
    model.rebuild_cache();
    return model;
}

MogpModel update(const MogpModel& model, const std::vector<RssiSample>& new_samples) {
    if (new_samples.empty()) return model;

    MogpModel next = model;
    std::map<std::pair<double, double>, int> loc_index;
    for (int i = 0; i < next.num_locations(); ++i)
        loc_index.emplace(std::make_pair(next.locations_(i, 0), next.locations_(i, 1)), i);
    ingest_samples(next.locations_, next.observations_, next.outputs_, new_samples, loc_index);
    next.rebuild_dataset_flags();

    next.updates_since_refit_ = model.updates_since_refit_ + 1;
    if (next.updates_since_refit_ >= next.fit_opts_.refit_cadence && next.num_locations() > 1) {
        // Restart from the current optimum and from a fresh data-informed
        // initialization; warm starts alone stay stuck in optima inherited
        // from the small initial fit.
        HyperParams cur;
        cur.sigma_f2 = next.kernel_.signal_variance;
        cur.length_scale = next.kernel_.length_scale;
        cur.factor = next.coreg_.factor;
        cur.kappa = next.coreg_.diag;
        cur.sigma_n2 = next.noise_variance_;
        const int rank = static_cast<int>(next.coreg_.factor.cols());
        const HyperParams fresh = initial_guess(next.locations_, output_std(next), rank);
        const uint64_t seed = derive_seed(next.fit_opts_.seed, "update",
                                          static_cast<uint64_t>(next.num_observations()));
        const OptResult best =
            optimize_hyperparameters(next, {cur, fresh}, std::max(next.fit_opts_.update_restarts, 2),
                                     next.fit_opts_, seed);
        if (std::isfinite(best.lml))
            apply_packed(best.theta, next.num_outputs(), rank, next.kernel_, next.coreg_,
                         next.noise_variance_);
        next.updates_since_refit_ = 0;
    }
    next.rebuild_cache();
    return next;
}

MogpModel with_hyperparameters(const MogpModel& model, const SeKernelParams& kernel,
                               const Coregionalization& coreg, double noise_variance) {
    kernel.validate();
    if (coreg.outputs() != model.num_outputs())
        throw std::invalid_argument("with_hyperparameters: coregionalization size mismatch");
    if ((coreg.diag.array() < 0.0).any())
        throw std::invalid_argument("with_hyperparameters: kappa must be nonnegative");
    if (noise_variance < 0.0)
        throw std::invalid_argument("with_hyperparameters: noise variance must be >= 0");
    MogpModel next = model;
    next.kernel_ = kernel;
    next.coreg_ = coreg;
    next.noise_variance_ = noise_variance;
    next.rebuild_cache();
    return next;
}

void predict(const MogpModel& model, std::span<const Vec2> queries, const std::string& ap_id,
             std::vector<double>& mean, std::vector<double>& variance) {
    if (!model.cache_) throw std::runtime_error("MogpModel: no factorization");
    for (const auto& q : queries)
        if (!std::isfinite(q.x) || !std::isfinite(q.y))
            throw std::invalid_argument("predict: non-finite query coordinate");

    const int j = model.output_index(ap_id);
    const auto& c = *model.cache_;
    const int gamma = model.num_locations();
    const double prior_mean = model.output_mean_(j);
    const int nq = static_cast<int>(queries.size());
    mean.assign(static_cast<size_t>(nq), 0.0);
    variance.assign(static_cast<size_t>(nq), 0.0);
    const double inv2l2 =
        1.0 / (2.0 * model.kernel_.length_scale * model.kernel_.length_scale);
    const double sf2 = model.kernel_.signal_variance;

    if (c.kronecker) {
        const double kss = sf2 * c.B(j, j);
        const Eigen::VectorXd bj = c.Qb.transpose() * c.B.col(j);          // m
        const Eigen::VectorXd t = c.Dinv * bj.cwiseProduct(bj);            // gamma
        const Eigen::VectorXd& wj = c.W.col(j);

#pragma omp parallel for schedule(static)
        for (int qi = 0; qi < nq; ++qi) {
            Eigen::VectorXd ks(gamma);
            for (int i = 0; i < gamma; ++i) {
                const double dx = queries[static_cast<size_t>(qi)].x - model.locations_(i, 0);
                const double dy = queries[static_cast<size_t>(qi)].y - model.locations_(i, 1);
                ks(i) = sf2 * std::exp(-(dx * dx + dy * dy) * inv2l2);
            }
            const Eigen::VectorXd a = c.Qs.transpose() * ks;
            const double var = kss - a.cwiseProduct(a).dot(t);
            mean[static_cast<size_t>(qi)] = prior_mean + ks.dot(wj);
            variance[static_cast<size_t>(qi)] = std::max(var, 0.0);
        }
        return;
    }

    const int n = model.num_observations();
    const Eigen::MatrixXd B = model.coreg_.matrix();
    const double kss = sf2 * B(j, j);
    const auto& obs = model.observations_;

#pragma omp parallel for schedule(static)
    for (int qi = 0; qi < nq; ++qi) {
        Eigen::VectorXd kstar(n);
        for (int a = 0; a < n; ++a) {
            const double dx =
                queries[static_cast<size_t>(qi)].x - model.locations_(obs[static_cast<size_t>(a)].location, 0);
            const double dy =
                queries[static_cast<size_t>(qi)].y - model.locations_(obs[static_cast<size_t>(a)].location, 1);
            kstar(a) = sf2 * std::exp(-(dx * dx + dy * dy) * inv2l2) *
                       B(obs[static_cast<size_t>(a)].output, j);
        }
        const double mu = prior_mean + kstar.dot(c.alpha);
        Eigen::VectorXd v = kstar;
        c.chol_lower.triangularView<Eigen::Lower>().solveInPlace(v);
        mean[static_cast<size_t>(qi)] = mu;
        variance[static_cast<size_t>(qi)] = std::max(kss - v.squaredNorm(), 0.0);
    }
}

void predict_field(const MogpModel& model, const GridSpec& grid, const std::string& ap_id,
                   ScalarField& mean, ScalarField& variance) {
    std::vector<Vec2> centers;
    centers.reserve(static_cast<size_t>(grid.cell_count()));
    for (int j = 0; j < grid.height; ++j)
        for (int i = 0; i < grid.width; ++i) centers.push_back(grid_cell_center(grid, i, j));
    std::vector<double> mu, var;
    predict(model, centers, ap_id, mu, var);
    mean = ScalarField(grid);
    variance = ScalarField(grid);
    mean.values = std::move(mu);
    variance.values = std::move(var);
}

std::string model_to_json_text(const MogpModel& model) {
    json j;
    j["format"] = "mgprl-mogp/1";
    j["outputs"] = model.outputs_;
    json locs = json::array();
    for (int i = 0; i < model.num_locations(); ++i)
        locs.push_back({model.locations_(i, 0), model.locations_(i, 1)});
    j["locations"] = std::move(locs);
    json obs = json::array();
    for (const auto& o : model.observations_) obs.push_back({o.location, o.output, o.value_dbm});
    j["observations"] = std::move(obs);
    j["kernel"] = {{"signal_variance", model.kernel_.signal_variance},
                   {"length_scale", model.kernel_.length_scale}};
    json factor = json::array();
    for (int i = 0; i < model.coreg_.factor.rows(); ++i) {
        json row = json::array();
        for (int k = 0; k < model.coreg_.factor.cols(); ++k) row.push_back(model.coreg_.factor(i, k));
        factor.push_back(std::move(row));
    }
    j["coregionalization"] = {{"factor", std::move(factor)},
                              {"diag", std::vector<double>(model.coreg_.diag.data(),
                                                           model.coreg_.diag.data() +
                                                               model.coreg_.diag.size())}};
    j["noise_variance"] = model.noise_variance_;
    j["fit_warning"] = model.fit_warning_;
    j["updates_since_refit"] = model.updates_since_refit_;
    j["fit_options"] = {{"restarts", model.fit_opts_.restarts},
                        {"update_restarts", model.fit_opts_.update_restarts},
                        {"max_iters", model.fit_opts_.max_iters},
                        {"learning_rate", model.fit_opts_.learning_rate},
                        {"use_gradients", model.fit_opts_.use_gradients},
                        {"coreg_rank", model.fit_opts_.coreg_rank},
                        {"refit_cadence", model.fit_opts_.refit_cadence},
                        {"seed", model.fit_opts_.seed}};
    return j.dump(2) + "\n";
}

MogpModel model_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const std::exception& e) {
        throw std::invalid_argument(std::string("model file: invalid JSON: ") + e.what());
    }
    if (!j.contains("format") || j["format"] != "mgprl-mogp/1")
        throw std::invalid_argument("model file: missing or unsupported 'format'");

    MogpModel model;
    model.outputs_ = j["outputs"].get<std::vector<std::string>>();
    const auto& locs = j["locations"];
    model.locations_.resize(static_cast<int>(locs.size()), 2);
    for (int i = 0; i < static_cast<int>(locs.size()); ++i) {
        model.locations_(i, 0) = locs[static_cast<size_t>(i)][0].get<double>();
        model.locations_(i, 1) = locs[static_cast<size_t>(i)][1].get<double>();
    }
    for (const auto& o : j["observations"])
        model.observations_.push_back({o[0].get<int>(), o[1].get<int>(), o[2].get<double>()});
    model.kernel_.signal_variance = j["kernel"]["signal_variance"].get<double>();
    model.kernel_.length_scale = j["kernel"]["length_scale"].get<double>();
    const auto& factor = j["coregionalization"]["factor"];
    const int m = static_cast<int>(factor.size());
    const int r = m > 0 ? static_cast<int>(factor[0].size()) : 1;
    model.coreg_.factor.resize(m, r);
    for (int i = 0; i < m; ++i)
        for (int k = 0; k < r; ++k)
            model.coreg_.factor(i, k) = factor[static_cast<size_t>(i)][static_cast<size_t>(k)].get<double>();
    const auto diag = j["coregionalization"]["diag"].get<std::vector<double>>();
    model.coreg_.diag = Eigen::Map<const Eigen::VectorXd>(diag.data(), static_cast<int>(diag.size()));
    model.noise_variance_ = j["noise_variance"].get<double>();
    model.fit_warning_ = j["fit_warning"].get<bool>();
    model.updates_since_refit_ = j["updates_since_refit"].get<int>();
    const auto& fo = j["fit_options"];
    model.fit_opts_.restarts = fo["restarts"].get<int>();
    model.fit_opts_.update_restarts = fo["update_restarts"].get<int>();
    model.fit_opts_.max_iters = fo["max_iters"].get<int>();
    model.fit_opts_.learning_rate = fo["learning_rate"].get<double>();
    model.fit_opts_.use_gradients = fo["use_gradients"].get<bool>();
    model.fit_opts_.coreg_rank = fo["coreg_rank"].get<int>();
    model.fit_opts_.refit_cadence = fo["refit_cadence"].get<int>();
    model.fit_opts_.seed = fo["seed"].get<uint64_t>();

    model.rebuild_dataset_flags();
    model.rebuild_cache();
    return model;
}

void save_model(const MogpModel& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("model file: cannot write '" + path + "'");
    out << model_to_json_text(model);
}

MogpModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("model file: cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return model_from_json_text(ss.str());
}

}  // namespace mgprl
