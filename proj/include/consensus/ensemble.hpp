#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

#include "consensus/objectives.hpp"

namespace consensus {

// J particles in R^d, one row per particle; the empirical measure mu^J.
struct ParticleEnsemble {
    Eigen::MatrixXd positions;  // J x d

    ParticleEnsemble() = default;
    explicit ParticleEnsemble(Eigen::MatrixXd p) : positions(std::move(p)) {
        if (positions.rows() < 1)
            throw std::invalid_argument("ParticleEnsemble: J >= 1 required");
        if (!positions.allFinite())
            throw std::invalid_argument("ParticleEnsemble: non-finite position");
    }

    Eigen::Index count() const { return positions.rows(); }
    Eigen::Index dim() const { return positions.cols(); }
};

// Gibbs log-weights, normalized so that logsumexp = 0.  The max of -beta*f
// is subtracted before exponentiation, so large beta cannot underflow all
// weights; the result is invariant under adding a constant to f.
inline Eigen::VectorXd compute_weights(const ParticleEnsemble& ensemble,
                                       const ObjectiveSpec& objective,
                                       double beta) {
    if (!(beta >= 0) || !std::isfinite(beta))
        throw std::invalid_argument("compute_weights: beta must be finite, >= 0");
    const Eigen::Index n = ensemble.count();
    Eigen::VectorXd logw(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const double fx = objective(ensemble.positions.row(j).transpose());
        if (!std::isfinite(fx))
            throw std::runtime_error("compute_weights: objective returned non-finite value");
        logw[j] = -beta * fx;
    }
    const double shift = logw.maxCoeff();
    double total = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) total += std::exp(logw[j] - shift);
    const double log_norm = shift + std::log(total);
    logw.array() -= log_norm;
    return logw;
}

inline Eigen::VectorXd weighted_mean(const ParticleEnsemble& ensemble,
                                     const Eigen::VectorXd& log_weights) {
    const Eigen::Index n = ensemble.count();
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(ensemble.dim());
    for (Eigen::Index j = 0; j < n; ++j)
        mean += std::exp(log_weights[j]) * ensemble.positions.row(j).transpose();
    return mean;
}

// Centered accumulation: subtracting the mean first avoids the cancellation
// of the raw second-moment formula.
inline Eigen::MatrixXd weighted_covariance(const ParticleEnsemble& ensemble,
                                           const Eigen::VectorXd& log_weights,
                                           const Eigen::VectorXd& mean) {
    const Eigen::Index n = ensemble.count();
    const Eigen::Index d = ensemble.dim();
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
    for (Eigen::Index j = 0; j < n; ++j) {
        const Eigen::VectorXd delta =
            ensemble.positions.row(j).transpose() - mean;
        cov += std::exp(log_weights[j]) * (delta * delta.transpose());
    }
    return cov;
}

inline Eigen::MatrixXd weighted_covariance(const ParticleEnsemble& ensemble,
                                           const Eigen::VectorXd& log_weights) {
    return weighted_covariance(ensemble, log_weights,
                               weighted_mean(ensemble, log_weights));
}

// Symmetric PSD square root via eigendecomposition.  Negative eigenvalues
// (roundoff) are clamped to exactly 0, so a collapsed ensemble yields zero
// diffusion rather than a spurious epsilon.
inline Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& cov,
                                double symmetry_tol = 1e-8) {
    if (cov.rows() != cov.cols())
        throw std::invalid_argument("sqrt_psd: matrix must be square");
    if ((cov - cov.transpose()).cwiseAbs().maxCoeff() >
        symmetry_tol * std::max(1.0, cov.cwiseAbs().maxCoeff()))
        throw std::invalid_argument("sqrt_psd: matrix not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
        0.5 * (cov + cov.transpose()));
    Eigen::VectorXd roots = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * roots.asDiagonal() * es.eigenvectors().transpose();
}

inline double effective_sample_size(const Eigen::VectorXd& log_weights) {
    double sum_sq = 0.0;
    for (Eigen::Index j = 0; j < log_weights.size(); ++j)
        sum_sq += std::exp(2.0 * log_weights[j]);
    return 1.0 / sum_sq;
}

// (1/J) sum_j |X_j|^p
inline double raw_moment(const ParticleEnsemble& ensemble, double p) {
    if (!(p > 0)) throw std::invalid_argument("raw_moment: p > 0 required");
    double acc = 0.0;
    for (Eigen::Index j = 0; j < ensemble.count(); ++j)
        acc += std::pow(ensemble.positions.row(j).norm(), p);
    return acc / static_cast<double>(ensemble.count());
}

// Weighted mean, covariance and its PSD root, shared by all particles of one
// time step.
struct WeightedSummary {
    Eigen::VectorXd log_weights;
    Eigen::VectorXd mean;       // M_beta
    Eigen::MatrixXd cov;        // C_beta
    Eigen::MatrixXd sqrt_cov;   // PSD root of C_beta
    double ess = 0.0;
};

inline WeightedSummary summarize(const ParticleEnsemble& ensemble,
                                 const ObjectiveSpec& objective, double beta,
                                 bool need_sqrt_cov = true) {
    WeightedSummary s;
    s.log_weights = compute_weights(ensemble, objective, beta);
    s.mean = weighted_mean(ensemble, s.log_weights);
    s.cov = weighted_covariance(ensemble, s.log_weights, s.mean);
    if (need_sqrt_cov) s.sqrt_cov = sqrt_psd(s.cov);
    s.ess = effective_sample_size(s.log_weights);
    return s;
}

// Debug snapshot: one particle per row, d comma-separated columns.
inline void write_ensemble_csv(const ParticleEnsemble& ensemble,
                               std::ostream& out) {
    out.precision(17);
    for (Eigen::Index j = 0; j < ensemble.count(); ++j) {
        for (Eigen::Index i = 0; i < ensemble.dim(); ++i) {
            if (i) out << ',';
            out << ensemble.positions(j, i);
        }
        out << '\n';
    }
}

}  // namespace consensus
