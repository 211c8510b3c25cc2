#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "consensus/noise.hpp"

namespace consensus {

// Growth-class metadata of an objective: local Lipschitz exponent s and
// polynomial envelopes of orders ell (below) and u (above), with the
// associated exponents p_M and p_C controlling the validity range of the
// weighted-moment stability estimates.
struct GrowthClass {
    double s = 0.0;
    double ell = 0.0;
    double u = 0.0;
    double lipschitz = 1.0;  // L_f
    double c_ell = 1.0, C_ell = 1.0;
    double c_u = 1.0, C_u = 1.0;

    GrowthClass() = default;
    GrowthClass(double s_, double ell_, double u_, double lipschitz_,
                double c_ell_ = 1.0, double C_ell_ = 1.0, double c_u_ = 1.0,
                double C_u_ = 1.0)
        : s(s_), ell(ell_), u(u_), lipschitz(lipschitz_), c_ell(c_ell_),
          C_ell(C_ell_), c_u(c_u_), C_u(C_u_) {
        if (s < 0 || ell < 0 || u < ell)
            throw std::invalid_argument("GrowthClass: need s >= 0, 0 <= ell <= u");
        if (lipschitz <= 0)
            throw std::invalid_argument("GrowthClass: L_f must be positive");
        if (ell > s + 1.0)
            throw std::invalid_argument("GrowthClass: ell > s + 1 is infeasible");
    }

    double p_mean() const { return ell == 0.0 ? s + 2.0 : 1.0; }
    double p_cov() const { return ell == 0.0 ? s + 3.0 : 1.0; }
};

struct ObjectiveSpec {
    std::string name;
    int dimension = 0;
    std::function<double(const Eigen::VectorXd&)> evaluator;
    GrowthClass growth;
    std::optional<std::pair<Eigen::VectorXd, double>> known_minimum;

    double operator()(const Eigen::VectorXd& x) const { return evaluator(x); }
};

inline double eval_ackley(const Eigen::VectorXd& x) {
    const double d = static_cast<double>(x.size());
    double sum_sq = 0.0, sum_cos = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        sum_sq += x[i] * x[i];
        sum_cos += std::cos(2.0 * std::numbers::pi * x[i]);
    }
    return -20.0 * std::exp(-0.2 * std::sqrt(sum_sq / d)) -
           std::exp(sum_cos / d) + std::numbers::e + 20.0;
}

// Registered benchmark objectives, referenced by name in CLI configs.
inline ObjectiveSpec make_objective(const std::string& name, int dimension) {
    if (dimension < 1)
        throw std::invalid_argument("objective dimension must be >= 1");
    ObjectiveSpec spec;
    spec.name = name;
    spec.dimension = dimension;
    if (name == "ackley") {
        spec.evaluator = eval_ackley;
        // Globally Lipschitz and bounded; constants below are a valid
        // (not tight) envelope in any dimension.
        spec.growth = GrowthClass(0.0, 0.0, 0.0, /*L_f=*/10.0,
                                  1.0, 1.0, 1.0, 25.0);
        spec.known_minimum = {Eigen::VectorXd::Zero(dimension), 0.0};
    } else if (name == "quadratic") {
        spec.evaluator = [](const Eigen::VectorXd& x) {
            return x.squaredNorm();
        };
        spec.growth = GrowthClass(1.0, 2.0, 2.0, /*L_f=*/2.0,
                                  1.0, 1.0, 1.0, 1.0);
        spec.known_minimum = {Eigen::VectorXd::Zero(dimension), 0.0};
    } else if (name == "quadratic-shifted") {
        Eigen::VectorXd shift = Eigen::VectorXd::Constant(dimension, 1.0);
        spec.evaluator = [shift](const Eigen::VectorXd& x) {
            return (x - shift).squaredNorm();
        };
        spec.growth = GrowthClass(1.0, 2.0, 2.0, /*L_f=*/4.0,
                                  0.5, 2.0, 2.0, 2.0);
        spec.known_minimum = {shift, 0.0};
    } else {
        throw std::invalid_argument("unknown objective: " + name);
    }
    return spec;
}

inline std::vector<std::string> objective_names() {
    return {"ackley", "quadratic", "quadratic-shifted"};
}

// One observed violation of the declared growth-class constants.
struct GrowthViolation {
    std::string which;  // "lipschitz", "lower", "upper"
    double ratio;       // observed / allowed
};

struct ValidationReport {
    std::vector<GrowthViolation> violations;
    double worst_lipschitz_ratio = 0.0;
    double worst_lower_ratio = 0.0;  // required lower envelope / observed f
    double worst_upper_ratio = 0.0;
    std::size_t samples = 0;
    bool ok() const { return violations.empty(); }
};

// Sample-based audit of the declared (H1)/(H2) constants inside a ball.
// Advisory: passing does not prove the constants, failing disproves them.
inline ValidationReport validate_growth_class(const ObjectiveSpec& spec,
                                              std::size_t sample_count,
                                              double radius,
                                              std::uint64_t rng_seed) {
    if (sample_count < 2)
        throw std::invalid_argument("validate_growth_class: sample_count >= 2");
    if (!(radius > 0))
        throw std::invalid_argument("validate_growth_class: radius > 0");

    NoiseStream rng(rng_seed);
    const int d = spec.dimension;
    const GrowthClass& g = spec.growth;

    // f_star estimated as the sample minimum (exact if known_minimum given).
    double f_star = spec.known_minimum ? spec.known_minimum->second
                                       : std::numeric_limits<double>::infinity();

    std::vector<Eigen::VectorXd> pts(sample_count);
    std::vector<double> vals(sample_count);
    for (std::size_t n = 0; n < sample_count; ++n) {
        Eigen::VectorXd x(d);
        for (int i = 0; i < d; ++i)
            x[i] = radius * (2.0 * rng.uniform(0, static_cast<std::uint32_t>(n),
                                               0, i) - 1.0);
        const double fx = spec.evaluator(x);
        if (!std::isfinite(fx))
            throw std::runtime_error("validate_growth_class: non-finite f at sample");
        pts[n] = std::move(x);
        vals[n] = fx;
        f_star = std::min(f_star, fx);
    }

    ValidationReport report;
    report.samples = sample_count;
    for (std::size_t n = 0; n + 1 < sample_count; ++n) {
        const Eigen::VectorXd& x = pts[n];
        const Eigen::VectorXd& y = pts[n + 1];
        const double diff = std::abs(vals[n] - vals[n + 1]);
        const double envelope =
            g.lipschitz *
            std::pow(1.0 + x.norm() + y.norm(), g.s) * (x - y).norm();
        if (envelope > 0) {
            const double ratio = diff / envelope;
            report.worst_lipschitz_ratio =
                std::max(report.worst_lipschitz_ratio, ratio);
            if (ratio > 1.0)
                report.violations.push_back({"lipschitz", ratio});
        }
    }
    for (std::size_t n = 0; n < sample_count; ++n) {
        const double r = pts[n].norm();
        const double excess = vals[n] - f_star;
        const double lower = g.c_ell * std::pow(r, g.ell) - g.C_ell;
        const double upper = g.c_u * std::pow(r, g.u) + g.C_u;
        if (excess < lower) {
            const double ratio = lower / std::max(excess, 1e-300);
            report.worst_lower_ratio = std::max(report.worst_lower_ratio, ratio);
            report.violations.push_back({"lower", ratio});
        }
        if (excess > upper) {
            const double ratio = excess / upper;
            report.worst_upper_ratio = std::max(report.worst_upper_ratio, ratio);
            report.violations.push_back({"upper", ratio});
        }
    }
    return report;
}

}  // namespace consensus
