#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

#include "consensus/ensemble.hpp"

namespace consensus {

enum class Method {
    CboIsotropic,    // S(u) = sqrt(2 theta) |u| I_d
    CboAnisotropic,  // S(u) = sqrt(2 theta) diag(u)
    CbsSampling,     // lambda = (1 + beta)^-1, targets exp(-f)
    CbsOptimization, // lambda = 1
};

inline Method method_from_string(const std::string& s) {
    if (s == "cbo-iso") return Method::CboIsotropic;
    if (s == "cbo-aniso") return Method::CboAnisotropic;
    if (s == "cbs-sample") return Method::CbsSampling;
    if (s == "cbs-opt") return Method::CbsOptimization;
    throw std::invalid_argument("unknown method: " + s);
}

inline std::string method_to_string(Method m) {
    switch (m) {
        case Method::CboIsotropic: return "cbo-iso";
        case Method::CboAnisotropic: return "cbo-aniso";
        case Method::CbsSampling: return "cbs-sample";
        case Method::CbsOptimization: return "cbs-opt";
    }
    throw std::logic_error("unreachable");
}

struct DynamicsSpec {
    Method method = Method::CboIsotropic;
    double beta = 3.0;
    double theta = 0.02;  // diffusion strength for CBO; sigma = sqrt(2 theta)

    DynamicsSpec() = default;
    DynamicsSpec(Method method_, double beta_, double theta_ = 0.02)
        : method(method_), beta(beta_), theta(theta_) {
        if (!(beta > 0) || !std::isfinite(beta))
            throw std::invalid_argument("DynamicsSpec: beta must be positive");
        if (is_cbo() && !(theta > 0))
            throw std::invalid_argument("DynamicsSpec: theta must be positive");
    }

    bool is_cbo() const {
        return method == Method::CboIsotropic || method == Method::CboAnisotropic;
    }
    bool is_cbs() const { return !is_cbo(); }

    double lambda() const {
        return method == Method::CbsSampling ? 1.0 / (1.0 + beta) : 1.0;
    }

    bool needs_sqrt_cov() const { return is_cbs(); }
};

// b(x, mu) = -(x - M_beta); shared by CBO and CBS.  The drift prefactor is
// fixed to 1 (it can be absorbed into a time rescaling).
inline Eigen::VectorXd drift(const Eigen::VectorXd& x,
                             const WeightedSummary& summary) {
    return summary.mean - x;
}

// Diffusion term applied to a noise increment dW:
//   CBO isotropic:   sqrt(2 theta) |x - M_beta| dW
//   CBO anisotropic: sqrt(2 theta) diag(x - M_beta) dW
//   CBS:             sqrt(2 / lambda) sqrt(C_beta) dW   (position-independent)
inline Eigen::VectorXd apply_diffusion(const Eigen::VectorXd& x,
                                       const WeightedSummary& summary,
                                       const Eigen::VectorXd& dW,
                                       const DynamicsSpec& spec) {
    switch (spec.method) {
        case Method::CboIsotropic:
            return std::sqrt(2.0 * spec.theta) * (x - summary.mean).norm() * dW;
        case Method::CboAnisotropic:
            return std::sqrt(2.0 * spec.theta) *
                   (x - summary.mean).cwiseProduct(dW);
        case Method::CbsSampling:
        case Method::CbsOptimization:
            return std::sqrt(2.0 / spec.lambda()) * (summary.sqrt_cov * dW);
    }
    throw std::logic_error("unreachable");
}

}  // namespace consensus
