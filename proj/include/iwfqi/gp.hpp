#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <utility>

#include "core.hpp"

namespace iwfqi {

/// Anisotropic squared-exponential kernel with additive observation noise:
/// k(a, b) = signal_variance * exp(-0.5 * sum_d ((a_d - b_d) / length_scales_d)^2).
struct KernelParams {
    double signal_variance = 1.0;
    Vec length_scales;
    double noise_variance = 0.1;

    void validate(Eigen::Index dim) const {
        if (length_scales.size() != dim)
            throw std::invalid_argument("KernelParams: length_scales size does not match input dimension");
        if (!(signal_variance > 0.0))
            throw std::invalid_argument("KernelParams: signal_variance must be positive");
        if (!(noise_variance > 0.0))
            throw std::invalid_argument("KernelParams: noise_variance must be positive");
        for (Eigen::Index d = 0; d < length_scales.size(); ++d)
            if (!(length_scales[d] > 0.0))
                throw std::invalid_argument("KernelParams: length scales must be positive");
    }

    static KernelParams isotropic(Eigen::Index dim, double signal, double length, double noise) {
        KernelParams k;
        k.signal_variance = signal;
        k.length_scales = Vec::Constant(dim, length);
        k.noise_variance = noise;
        return k;
    }
};

struct GpFitOptions {
    bool optimize = false;       ///< maximize the log marginal likelihood
    bool optimize_noise = true;  ///< include noise_variance in the search
    int restarts = 5;
    int max_iterations = 60;
    std::uint64_t seed = 0;
};

/// Posterior of the latent (noise-free) function at a query point.
/// variance excludes noise_variance.
struct GpPrediction {
    double mean = 0.0;
    double variance = 0.0;
};

/// Gaussian-process regressor with a squared-exponential kernel.
///
/// The prior mean is zero. Fitting factorizes K + noise_variance * I once;
/// if the factorization fails, a jitter of 1e-8 * signal_variance is added
/// to the diagonal and escalated by factors of 10 up to 1e-2 * signal_variance
/// before giving up.
class GpModel {
public:
    /// Prior-only model (no training data); every prediction is
    /// (0, signal_variance).
    static GpModel prior(const KernelParams& kernel, Eigen::Index dim) {
        kernel.validate(dim);
        GpModel m;
        m.kernel_ = kernel;
        m.X_ = Mat(0, dim);
        m.y_ = Vec(0);
        m.log_marginal_ = 0.0;
        return m;
    }

    static GpModel fit(const Mat& X, const Vec& y, const KernelParams& kernel_init,
                       const GpFitOptions& options = {}) {
        if (X.rows() < 1) throw std::invalid_argument("GpModel::fit: need at least one training row");
        if (X.rows() != y.size()) throw std::invalid_argument("GpModel::fit: X rows and y size differ");
        kernel_init.validate(X.cols());
        if (!y.allFinite() || !X.allFinite())
            throw std::invalid_argument("GpModel::fit: non-finite training data");

        KernelParams kernel = kernel_init;
        if (options.optimize) kernel = optimize_kernel(X, y, kernel_init, options);

        GpModel m;
        m.kernel_ = kernel;
        m.X_ = X;
        m.y_ = y;
        m.factorize();
        return m;
    }

    GpPrediction predict(const Vec& x) const {
        if (x.size() != X_.cols())
            throw std::invalid_argument("GpModel::predict: query dimension mismatch");
        if (X_.rows() == 0) return {0.0, kernel_.signal_variance};
        Vec ks(X_.rows());
        for (Eigen::Index i = 0; i < X_.rows(); ++i) ks[i] = kernel_value(X_.row(i).transpose(), x);
        double mean = ks.dot(alpha_);
        Vec v = L_.triangularView<Eigen::Lower>().solve(ks);
        double var = kernel_.signal_variance - v.squaredNorm();
        return {mean, std::max(var, 0.0)};
    }

    double log_marginal_likelihood() const { return log_marginal_; }
    const KernelParams& kernel() const { return kernel_; }
    const Mat& train_inputs() const { return X_; }
    const Vec& train_targets() const { return y_; }
    double jitter() const { return jitter_; }
    Eigen::Index input_dim() const { return X_.cols(); }

private:
    GpModel() = default;

    double kernel_value(const Vec& a, const Vec& b) const {
        double q = 0.0;
        for (Eigen::Index d = 0; d < a.size(); ++d) {
            double u = (a[d] - b[d]) / kernel_.length_scales[d];
            q += u * u;
        }
        return kernel_.signal_variance * std::exp(-0.5 * q);
    }

    static Mat kernel_matrix(const Mat& X, const KernelParams& k) {
        const Eigen::Index n = X.rows();
        Mat K(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            K(i, i) = k.signal_variance;
            for (Eigen::Index j = 0; j < i; ++j) {
                double q = 0.0;
                for (Eigen::Index d = 0; d < X.cols(); ++d) {
                    double u = (X(i, d) - X(j, d)) / k.length_scales[d];
                    q += u * u;
                }
                K(i, j) = K(j, i) = k.signal_variance * std::exp(-0.5 * q);
            }
        }
        return K;
    }

    /// Cholesky of K + (noise + jitter) I with the escalation policy.
    /// Returns (L, jitter used); throws std::runtime_error on failure.
    static std::pair<Mat, double> factorize_matrix(Mat K, const KernelParams& k) {
        const Eigen::Index n = K.rows();
        K.diagonal().array() += k.noise_variance;
        double jitter = 0.0;
        for (;;) {
            Mat Kj = K;
            if (jitter > 0.0) Kj.diagonal().array() += jitter;
            Eigen::LLT<Mat> llt(Kj);
            if (llt.info() == Eigen::Success) return {Mat(llt.matrixL()), jitter};
            if (jitter == 0.0)
                jitter = 1e-8 * k.signal_variance;
            else if (jitter < 1e-2 * k.signal_variance)
                jitter *= 10.0;
            else
                throw std::runtime_error("GpModel: Cholesky factorization failed at maximum jitter");
        }
        (void)n;
    }

    void factorize() {
        auto [L, jitter] = factorize_matrix(kernel_matrix(X_, kernel_), kernel_);
        L_ = std::move(L);
        jitter_ = jitter;
        alpha_ = L_.triangularView<Eigen::Lower>().solve(y_);
        double quad = alpha_.squaredNorm();  // y^T (K+sI)^-1 y
        double logdet_half = L_.diagonal().array().log().sum();
        L_.triangularView<Eigen::Lower>().transpose().solveInPlace(alpha_);
        const double n = static_cast<double>(X_.rows());
        log_marginal_ = -0.5 * quad - logdet_half - 0.5 * n * std::log(2.0 * M_PI);
    }

    // -- maximum-likelihood search over log-parameters ------------------------

    /// Packs (log signal, log lengths..., [log noise]) for the optimizer.
    static Vec pack(const KernelParams& k, bool with_noise) {
        Vec t(k.length_scales.size() + 1 + (with_noise ? 1 : 0));
        t[0] = std::log(k.signal_variance);
        for (Eigen::Index d = 0; d < k.length_scales.size(); ++d) t[d + 1] = std::log(k.length_scales[d]);
        if (with_noise) t[t.size() - 1] = std::log(k.noise_variance);
        return t;
    }

    static KernelParams unpack(const Vec& t, const KernelParams& base, bool with_noise) {
        KernelParams k = base;
        k.signal_variance = std::exp(t[0]);
        for (Eigen::Index d = 0; d < k.length_scales.size(); ++d) k.length_scales[d] = std::exp(t[d + 1]);
        if (with_noise) k.noise_variance = std::exp(t[t.size() - 1]);
        return k;
    }

    /// Log marginal likelihood and its gradient in the packed coordinates.
    static std::pair<double, Vec> lml_and_gradient(const Mat& X, const Vec& y,
                                                   const KernelParams& k, bool with_noise) {
        const Eigen::Index n = X.rows();
        const Eigen::Index dim = X.cols();
        Mat Kf = kernel_matrix(X, k);
        auto [L, jitter] = factorize_matrix(Kf, k);
        Vec alpha = L.triangularView<Eigen::Lower>().solve(y);
        double quad = alpha.squaredNorm();
        double logdet_half = L.diagonal().array().log().sum();
        L.triangularView<Eigen::Lower>().transpose().solveInPlace(alpha);
        double lml = -0.5 * quad - logdet_half - 0.5 * n * std::log(2.0 * M_PI);

        Mat Pinv = Mat::Identity(n, n);
        L.triangularView<Eigen::Lower>().solveInPlace(Pinv);
        L.triangularView<Eigen::Lower>().transpose().solveInPlace(Pinv);
        Mat A = alpha * alpha.transpose() - Pinv;  // d lml = 0.5 tr(A dK)

        Vec grad(1 + dim + (with_noise ? 1 : 0));
        grad[0] = 0.5 * A.cwiseProduct(Kf).sum();
        for (Eigen::Index d = 0; d < dim; ++d) {
            double g = 0.0;
            for (Eigen::Index i = 0; i < n; ++i)
                for (Eigen::Index j = 0; j < n; ++j) {
                    double u = (X(i, d) - X(j, d)) / k.length_scales[d];
                    g += A(i, j) * Kf(i, j) * u * u;
                }
            grad[d + 1] = 0.5 * g;
        }
        if (with_noise) grad[grad.size() - 1] = 0.5 * k.noise_variance * A.trace();
        (void)jitter;
        return {lml, grad};
    }

    /// Multi-restart Rprop ascent on the log marginal likelihood.
    static KernelParams optimize_kernel(const Mat& X, const Vec& y, const KernelParams& init,
                                        const GpFitOptions& options) {
        const bool with_noise = options.optimize_noise;
        const double lo = -12.0, hi = 12.0;
        Rng rng = make_rng(options.seed, {stream::gp});
        std::uniform_real_distribution<double> perturb(-1.5, 1.5);

        Vec best_theta = pack(init, with_noise);
        double best_lml = -std::numeric_limits<double>::infinity();
        try {
            best_lml = lml_and_gradient(X, y, init, with_noise).first;
        } catch (const std::runtime_error&) {
        }

        for (int r = 0; r < std::max(1, options.restarts); ++r) {
            Vec theta = pack(init, with_noise);
            if (r > 0)
                for (Eigen::Index i = 0; i < theta.size(); ++i) theta[i] += perturb(rng);
            Vec step = Vec::Constant(theta.size(), 0.1);
            Vec prev_grad = Vec::Zero(theta.size());
            Vec prev_theta = theta;
            int failures = 0;
            for (int it = 0; it < options.max_iterations; ++it) {
                double lml;
                Vec grad;
                try {
                    std::tie(lml, grad) = lml_and_gradient(X, y, unpack(theta, init, with_noise), with_noise);
                } catch (const std::runtime_error&) {
                    theta = prev_theta;
                    step *= 0.5;
                    prev_grad.setZero();
                    if (++failures > 6) break;
                    continue;
                }
                failures = 0;
                if (lml > best_lml) {
                    best_lml = lml;
                    best_theta = theta;
                }
                prev_theta = theta;
                for (Eigen::Index i = 0; i < theta.size(); ++i) {
                    double s = grad[i] * prev_grad[i];
                    if (s > 0.0)
                        step[i] = std::min(step[i] * 1.2, 1.0);
                    else if (s < 0.0)
                        step[i] = std::max(step[i] * 0.5, 1e-6);
                    if (grad[i] > 0.0)
                        theta[i] += step[i];
                    else if (grad[i] < 0.0)
                        theta[i] -= step[i];
                    theta[i] = std::clamp(theta[i], lo, hi);
                }
                prev_grad = grad;
            }
        }
        return unpack(best_theta, init, with_noise);
    }

    KernelParams kernel_;
    Mat X_;
    Vec y_;
    Mat L_;
    Vec alpha_;
    double jitter_ = 0.0;
    double log_marginal_ = 0.0;
};

}  // namespace iwfqi
