#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "consensus/ensemble.hpp"
#include "consensus/integrator.hpp"
#include "consensus/meanfield.hpp"
#include "consensus/noise.hpp"
#include "consensus/objectives.hpp"

namespace consensus {

// ---------------------------------------------------------------------------
// Wasserstein distances between equal-size empirical measures
// ---------------------------------------------------------------------------

// Exact in d = 1: match sorted samples.
inline double wasserstein_p_1d(std::vector<double> mu, std::vector<double> nu,
                               double p) {
    if (p < 1) throw std::invalid_argument("wasserstein_p_1d: p >= 1 required");
    if (mu.size() != nu.size())
        throw std::invalid_argument("wasserstein_p_1d: equal sample counts required");
    std::sort(mu.begin(), mu.end());
    std::sort(nu.begin(), nu.end());
    double acc = 0.0;
    for (std::size_t j = 0; j < mu.size(); ++j)
        acc += std::pow(std::abs(mu[j] - nu[j]), p);
    return std::pow(acc / static_cast<double>(mu.size()), 1.0 / p);
}

namespace detail {

// Hungarian algorithm (Jonker-Volgenant potentials), O(n^3), square cost.
inline double assignment_min_cost(const Eigen::MatrixXd& cost) {
    const int n = static_cast<int>(cost.rows());
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> match(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        match[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, false);
        std::vector<int> way(n + 1, 0);
        do {
            used[j0] = true;
            const int i0 = match[j0];
            double delta = inf;
            int j1 = 0;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[match[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (match[j0] != 0);
        do {
            const int j1 = way[j0];
            match[j0] = match[j1];
            j0 = j1;
        } while (j0);
    }
    double total = 0.0;
    for (int j = 1; j <= n; ++j) total += cost(match[j] - 1, j - 1);
    return total;
}

}  // namespace detail

inline constexpr int kMaxExactWassersteinSize = 64;

// Minimal matching over index permutations; exact for empirical measures of
// equal size.  Restricted to J <= 64; beyond that use coupling_upper_bound.
inline double wasserstein_p_exact(const ParticleEnsemble& mu,
                                  const ParticleEnsemble& nu, double p) {
    if (p < 1) throw std::invalid_argument("wasserstein_p_exact: p >= 1 required");
    if (mu.count() != nu.count() || mu.dim() != nu.dim())
        throw std::invalid_argument("wasserstein_p_exact: shape mismatch");
    const int n = static_cast<int>(mu.count());
    if (n > kMaxExactWassersteinSize)
        throw std::invalid_argument(
            "wasserstein_p_exact: J > 64; use coupling_upper_bound instead");
    Eigen::MatrixXd cost(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            cost(i, j) =
                std::pow((mu.positions.row(i) - nu.positions.row(j)).norm(), p);
    return std::pow(detail::assignment_min_cost(cost) / n, 1.0 / p);
}

// Same-index coupling bound ((1/J) sum_j |x_j - y_j|^p)^(1/p) >= exact W_p.
inline double coupling_upper_bound(const ParticleEnsemble& mu,
                                   const ParticleEnsemble& nu, double p) {
    if (mu.count() != nu.count() || mu.dim() != nu.dim())
        throw std::invalid_argument("coupling_upper_bound: shape mismatch");
    double acc = 0.0;
    for (Eigen::Index j = 0; j < mu.count(); ++j)
        acc += std::pow((mu.positions.row(j) - nu.positions.row(j)).norm(), p);
    return std::pow(acc / static_cast<double>(mu.count()), 1.0 / p);
}

// ---------------------------------------------------------------------------
// Stability stress tests for the weighted mean and sqrt-covariance
// ---------------------------------------------------------------------------

enum class SampleLaw { Gaussian, UniformBox, HeavyTail };

namespace detail {

// One scalar draw for stress-test ensembles; the heavy-tailed option is a
// truncated Student-like ratio probing weak-moment edge cases.
inline double stress_draw(const NoiseStream& rng, SampleLaw law,
                          std::uint32_t trial, std::uint32_t particle,
                          std::uint32_t coord) {
    switch (law) {
        case SampleLaw::Gaussian:
            return rng.normal(trial, particle, coord, 0);
        case SampleLaw::UniformBox:
            return 2.0 * rng.uniform(trial, particle, coord, 0) - 1.0;
        case SampleLaw::HeavyTail: {
            const double z0 = rng.normal(trial, particle, coord, 0);
            const double z1 = rng.normal(trial, particle, coord, 1);
            const double z2 = rng.normal(trial, particle, coord, 2);
            const double t = z0 / std::sqrt((z1 * z1 + z2 * z2) / 2.0);
            return std::clamp(t, -50.0, 50.0);
        }
    }
    throw std::logic_error("unreachable");
}

inline ParticleEnsemble stress_ensemble(const NoiseStream& rng, SampleLaw law,
                                        std::uint32_t trial, int count, int dim,
                                        double scale, double shift) {
    Eigen::MatrixXd positions(count, dim);
    for (int j = 0; j < count; ++j)
        for (int i = 0; i < dim; ++i)
            positions(j, i) =
                scale * stress_draw(rng, law, trial, j, i) + shift;
    return ParticleEnsemble(std::move(positions));
}

// Rescales an ensemble into P_{p,R}: empirical p-th moment <= R^p.
inline void clamp_moment(ParticleEnsemble& e, double p, double radius) {
    const double moment = raw_moment(e, p);
    const double bound = std::pow(radius, p);
    if (moment > bound)
        e.positions *= std::pow(bound / moment, 1.0 / p) * (1.0 - 1e-12);
}

}  // namespace detail

struct StabilityReport {
    double max_ratio = 0.0;
    double moment_radius = 0.0;
    double exponent = 0.0;  // p of the Wasserstein distance
    int trials = 0;
    int evaluated = 0;  // pairs with W_p > 0
};

namespace detail {

template <typename Numerator>
StabilityReport stability_stress(const ObjectiveSpec& objective, double p,
                                 double radius, int trials,
                                 std::uint64_t seed, Numerator&& numerator) {
    if (!(radius > 0))
        throw std::invalid_argument("stability_stress: R > 0 required");
    const NoiseStream rng(seed);
    const int dim = objective.dimension;
    StabilityReport report;
    report.moment_radius = radius;
    report.exponent = p;
    report.trials = trials;
    constexpr int kPairSize = 16;  // exact W_p stays cheap
    for (int t = 0; t < trials; ++t) {
        const std::uint32_t t_mu = static_cast<std::uint32_t>(2 * t);
        const std::uint32_t t_nu = static_cast<std::uint32_t>(2 * t + 1);
        const double scale_mu = 0.2 + 2.0 * rng.uniform(t_mu, 0xFFFF, 0, 3);
        const double scale_nu = 0.2 + 2.0 * rng.uniform(t_nu, 0xFFFF, 0, 3);
        const double shift_nu = 2.0 * rng.normal(t_nu, 0xFFFE, 0, 3);
        ParticleEnsemble mu(Eigen::MatrixXd::Zero(kPairSize, dim));
        ParticleEnsemble nu = mu;
        if (t % 2 == 0) {
            // Independent pair: probes well-separated measures.
            mu = stress_ensemble(rng, SampleLaw::Gaussian, t_mu, kPairSize,
                                 dim, scale_mu, 0.0);
            detail::clamp_moment(mu, p, radius);  // mu in P_{p,R}
            nu = stress_ensemble(rng, SampleLaw::Gaussian, t_nu, kPairSize, dim,
                                 scale_nu, shift_nu);
        } else {
            // Perturbation probe from a fixed grid: a handful of frozen base
            // clouds times single-coordinate displacements.  This samples the
            // local Lipschitz constant, where the extremal ratios live, and
            // the grid is exhausted within the first cycle so the running
            // maximum saturates instead of creeping with the trial count.
            const int directions = kPairSize * dim * 2;
            const int combo = (t / 2) % (4 * directions);
            const int base = combo / directions;
            const int dir = combo % directions;
            const double scale = 0.7 + 0.5 * base;
            mu = stress_ensemble(rng, SampleLaw::Gaussian,
                                 static_cast<std::uint32_t>(base), kPairSize,
                                 dim, scale, 0.0);
            detail::clamp_moment(mu, p, radius);
            nu = mu;
            nu.positions(dir / (dim * 2), (dir / 2) % dim) +=
                (dir % 2) ? 0.01 : -0.01;
        }
        detail::clamp_moment(nu, p, radius);  // both measures in P_{p,R}
        const double distance = wasserstein_p_exact(mu, nu, p);
        if (!(distance > 0)) continue;  // degenerate pair
        const double ratio = numerator(mu, nu) / distance;
        if (!std::isfinite(ratio))
            throw std::runtime_error("stability_stress: non-finite ratio");
        ++report.evaluated;
        report.max_ratio = std::max(report.max_ratio, ratio);
    }
    return report;
}

}  // namespace detail

// Max of |M_beta(mu) - M_beta(nu)| / W_p(mu, nu) over sampled pairs.
inline StabilityReport stability_stress_mean(const ObjectiveSpec& objective,
                                             double beta, double p,
                                             double radius, int trials,
                                             std::uint64_t seed) {
    if (p < objective.growth.p_mean())
        throw std::invalid_argument("stability_stress_mean: p >= p_M required");
    return detail::stability_stress(
        objective, p, radius, trials, seed,
        [&](const ParticleEnsemble& mu, const ParticleEnsemble& nu) {
            const Eigen::VectorXd m_mu =
                weighted_mean(mu, compute_weights(mu, objective, beta));
            const Eigen::VectorXd m_nu =
                weighted_mean(nu, compute_weights(nu, objective, beta));
            return (m_mu - m_nu).norm();
        });
}

// Max of ||sqrt(C_beta(mu)) - sqrt(C_beta(nu))||_F / W_p(mu, nu).
inline StabilityReport stability_stress_sqrtcov(const ObjectiveSpec& objective,
                                                double beta, double p,
                                                double radius, int trials,
                                                std::uint64_t seed) {
    if (p < 2.0 * objective.growth.p_mean())
        throw std::invalid_argument(
            "stability_stress_sqrtcov: p >= 2 p_M required");
    return detail::stability_stress(
        objective, p, radius, trials, seed,
        [&](const ParticleEnsemble& mu, const ParticleEnsemble& nu) {
            const Eigen::MatrixXd s_mu = sqrt_psd(
                weighted_covariance(mu, compute_weights(mu, objective, beta)));
            const Eigen::MatrixXd s_nu = sqrt_psd(
                weighted_covariance(nu, compute_weights(nu, objective, beta)));
            return (s_mu - s_nu).norm();
        });
}

// ---------------------------------------------------------------------------
// Matrix inequality audits
// ---------------------------------------------------------------------------

struct MatrixAuditReport {
    int trials = 0;
    int araki_yamagami_violations = 0;
    int van_hemmen_ando_violations = 0;
    double max_araki_yamagami_ratio = 0.0;  // lhs / rhs, should stay <= 1
    double max_van_hemmen_ando_ratio = 0.0;
};

// Araki-Yamagami: ||sqrt(A^T A) - sqrt(B^T B)||_F <= sqrt(2) ||A - B||_F.
// van Hemmen-Ando: for A, B >= eta I, ||sqrt A - sqrt B||_F <=
// eta^(-1/2) ||A - B||_F.  Both audited with slack 1 + 1e-9.
inline MatrixAuditReport matrix_inequality_checks(int trials,
                                                  const std::vector<int>& dims,
                                                  std::uint64_t seed) {
    if (trials < 1)
        throw std::invalid_argument("matrix_inequality_checks: trials >= 1");
    const NoiseStream rng(seed);
    constexpr double kSlack = 1.0 + 1e-9;
    MatrixAuditReport report;
    report.trials = trials;
    for (int t = 0; t < trials; ++t) {
        const int d = dims[t % dims.size()];
        Eigen::MatrixXd a(d, d), b(d, d);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) {
                a(i, j) = rng.normal(t, i, j, 0);
                b(i, j) = rng.normal(t, i, j, 1);
            }
        {
            const Eigen::MatrixXd lhs_a = sqrt_psd(a.transpose() * a);
            const Eigen::MatrixXd lhs_b = sqrt_psd(b.transpose() * b);
            const double lhs = (lhs_a - lhs_b).norm();
            const double rhs = std::sqrt(2.0) * (a - b).norm();
            if (rhs > 0) {
                const double ratio = lhs / rhs;
                report.max_araki_yamagami_ratio =
                    std::max(report.max_araki_yamagami_ratio, ratio);
                if (ratio > kSlack) ++report.araki_yamagami_violations;
            }
        }
        {
            const double eta = 0.1 + 1.9 * rng.uniform(t, 0, 0, 7);
            const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d);
            const Eigen::MatrixXd pa = eta * eye + a.transpose() * a;
            const Eigen::MatrixXd pb = eta * eye + b.transpose() * b;
            const double lhs = (sqrt_psd(pa) - sqrt_psd(pb)).norm();
            const double rhs = (pa - pb).norm() / std::sqrt(eta);
            if (rhs > 0) {
                const double ratio = lhs / rhs;
                report.max_van_hemmen_ando_ratio =
                    std::max(report.max_van_hemmen_ando_ratio, ratio);
                if (ratio > kSlack) ++report.van_hemmen_ando_violations;
            }
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// i.i.d. weighted-moment convergence rate
// ---------------------------------------------------------------------------

enum class WeightedStatistic { Mean, SqrtCov };

struct IidRateReport {
    std::vector<int> sample_sizes;
    std::vector<double> errors;  // Monte Carlo estimate of E||T(mu^J)-T(mu)||^p
    double fitted_slope = 0.0;   // expected ~ -p/2
    long long reference_samples = 0;
    std::string reference_kind;  // which mean-field proxy was used
};

namespace detail {

inline ParticleEnsemble iid_ensemble(const NoiseStream& rng, SampleLaw law,
                                     std::uint32_t tag, long long first,
                                     int count, int dim) {
    Eigen::MatrixXd positions(count, dim);
    for (int j = 0; j < count; ++j) {
        const std::uint32_t idx = static_cast<std::uint32_t>(first + j);
        for (int i = 0; i < dim; ++i)
            positions(j, i) = stress_draw(rng, law, tag, idx, i);
    }
    return ParticleEnsemble(std::move(positions));
}

}  // namespace detail

// Monte Carlo estimate of E||T(empirical from J iid samples) - T(mu)||^p for
// T the weighted mean or sqrt-covariance, with the reference T(mu) realized
// as a high-J empirical proxy.
inline IidRateReport iid_weighted_moment_rate(
    const ObjectiveSpec& objective, double beta, SampleLaw law,
    const std::vector<int>& sample_sizes, int replicates, double p,
    WeightedStatistic which, std::uint64_t seed,
    long long reference_samples = 10'000'000, int threads = 0) {
    if (sample_sizes.size() < 2)
        throw std::invalid_argument(
            "iid_weighted_moment_rate: need >= 2 sample sizes to fit a rate");
    const NoiseStream rng(seed);
    const int dim = objective.dimension;
    constexpr std::uint32_t kReferenceTag = 0xFFFFFFF0u;

    // Reference statistic from one large i.i.d. draw.
    Eigen::VectorXd ref_mean;
    Eigen::MatrixXd ref_sqrt;
    {
        const int chunk = 1 << 20;
        // Streamed accumulation of sum(w), sum(w x), sum(w x x^T) with a
        // fixed weight shift; the law is light enough that -beta f stays
        // in range after shifting by the objective minimum.
        // Weight shift anchored at the objective minimum when known.
        double shift = 0.0;
        if (objective.known_minimum) shift = -beta * objective.known_minimum->second;
        long double total_w = 0.0L;
        Eigen::VectorXd sum_wx = Eigen::VectorXd::Zero(dim);
        Eigen::MatrixXd sum_wxx = Eigen::MatrixXd::Zero(dim, dim);
        for (long long base = 0; base < reference_samples; base += chunk) {
            const int n = static_cast<int>(
                std::min<long long>(chunk, reference_samples - base));
            for (int j = 0; j < n; ++j) {
                Eigen::VectorXd x(dim);
                const std::uint32_t idx = static_cast<std::uint32_t>(base + j);
                for (int i = 0; i < dim; ++i)
                    x[i] = detail::stress_draw(rng, law, kReferenceTag, idx, i);
                const double w = std::exp(-beta * objective(x) - shift);
                total_w += w;
                sum_wx += w * x;
                sum_wxx += w * (x * x.transpose());
            }
        }
        ref_mean = sum_wx / static_cast<double>(total_w);
        Eigen::MatrixXd ref_cov =
            sum_wxx / static_cast<double>(total_w) -
            ref_mean * ref_mean.transpose();
        if (which == WeightedStatistic::SqrtCov) {
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(ref_cov);
            if (es.eigenvalues().minCoeff() <= 1e-12)
                throw std::invalid_argument(
                    "iid_weighted_moment_rate: reference C_beta not positive definite");
        }
        ref_sqrt = sqrt_psd(0.5 * (ref_cov + ref_cov.transpose()));
    }

    IidRateReport report;
    report.sample_sizes = sample_sizes;
    report.reference_samples = reference_samples;
    report.reference_kind =
        "empirical proxy, " + std::to_string(reference_samples) + " iid samples";
    report.errors.assign(sample_sizes.size(), 0.0);
    for (std::size_t a = 0; a < sample_sizes.size(); ++a) {
        const int count = sample_sizes[a];
        std::vector<double> per_replicate(replicates, 0.0);
        detail::parallel_for_index(replicates, threads, [&](int r) {
            // Disjoint sample indices per replicate within tag a.
            const ParticleEnsemble e = detail::iid_ensemble(
                rng, law, static_cast<std::uint32_t>(a),
                static_cast<long long>(r) * count, count, dim);
            const Eigen::VectorXd lw = compute_weights(e, objective, beta);
            double err;
            if (which == WeightedStatistic::Mean) {
                err = (weighted_mean(e, lw) - ref_mean).norm();
            } else {
                err = (sqrt_psd(weighted_covariance(e, lw)) - ref_sqrt).norm();
            }
            per_replicate[r] = std::pow(err, p);
        });
        double acc = 0.0;
        for (double v : per_replicate) acc += v;
        report.errors[a] = acc / replicates;
    }

    std::vector<ConvergenceRow> rows;
    for (std::size_t a = 0; a < sample_sizes.size(); ++a)
        rows.push_back({sample_sizes[a], report.errors[a], 0.0});
    report.fitted_slope = fit_loglog_slope(rows, 0);
    return report;
}

// ---------------------------------------------------------------------------
// Excursion probabilities
// ---------------------------------------------------------------------------

struct ExcursionReport {
    std::vector<int> sample_sizes;
    std::vector<double> probabilities;  // P[(1/J) sum Z_j >= R]
    double mean_estimate = 0.0;         // estimated E|Z_1|
    double empirical_exponent = 0.0;    // slope of log P vs log J (P > 0 only)
    bool monotone_decay = true;
};

// Empirical tail of the sample mean of i.i.d. draws Z_j = |N(0,1)|^2 scaled
// by `moment_exponent` (Z = |N|^p).  The lemma needs R > E|Z_1|, which is
// estimated first and enforced.
inline ExcursionReport excursion_probability(double moment_exponent, double R,
                                             const std::vector<int>& sample_sizes,
                                             int replicates, std::uint64_t seed,
                                             int threads = 0) {
    if (!(moment_exponent > 0))
        throw std::invalid_argument("excursion_probability: p > 0 required");
    const NoiseStream rng(seed);
    auto draw = [&](std::uint32_t tag, std::uint32_t idx) {
        return std::pow(std::abs(rng.normal(tag, idx, 0, 0)), moment_exponent);
    };

    ExcursionReport report;
    report.sample_sizes = sample_sizes;
    {
        constexpr int kMeanSamples = 200'000;
        double acc = 0.0;
        for (int j = 0; j < kMeanSamples; ++j) acc += draw(0xFFFFFFF1u, j);
        report.mean_estimate = acc / kMeanSamples;
    }
    if (!(R > report.mean_estimate))
        throw std::invalid_argument(
            "excursion_probability: R must exceed E|Z_1| (hypothesis of the "
            "large-excursion bound); estimated E|Z_1| = " +
            std::to_string(report.mean_estimate));

    report.probabilities.assign(sample_sizes.size(), 0.0);
    for (std::size_t a = 0; a < sample_sizes.size(); ++a) {
        const int count = sample_sizes[a];
        std::vector<int> hits_per_replicate(replicates, 0);
        detail::parallel_for_index(replicates, threads, [&](int m) {
            double acc = 0.0;
            for (int j = 0; j < count; ++j)
                acc += draw(static_cast<std::uint32_t>(a),
                            static_cast<std::uint32_t>(
                                static_cast<long long>(m) * count + j));
            hits_per_replicate[m] = (acc / count >= R) ? 1 : 0;
        });
        long long hits = 0;
        for (int h : hits_per_replicate) hits += h;
        report.probabilities[a] =
            static_cast<double>(hits) / static_cast<double>(replicates);
    }
    for (std::size_t a = 0; a + 1 < report.probabilities.size(); ++a)
        if (report.probabilities[a + 1] > report.probabilities[a])
            report.monotone_decay = false;
    std::vector<ConvergenceRow> rows;
    for (std::size_t a = 0; a < sample_sizes.size(); ++a)
        if (report.probabilities[a] > 0)
            rows.push_back({sample_sizes[a], report.probabilities[a], 0.0});
    if (rows.size() >= 2)
        report.empirical_exponent = fit_loglog_slope(rows, 0);
    return report;
}

// ---------------------------------------------------------------------------
// CBS no-collapse bound
// ---------------------------------------------------------------------------

struct NoCollapseReport {
    std::vector<char> eigen_bound_ok;  // per realization
    double worst_eigen_margin = std::numeric_limits<double>::infinity();
    // lambda_min(C(t)) / (lambda_min(C(0)) e^{-2t}), minimum over t and runs
    double worst_residual = 0.0;  // on the realization-averaged trace
    int residual_stride = 0;
    std::string proxy;
    bool ok(double tol) const {
        for (char c : eigen_bound_ok)
            if (!c) return false;
        return worst_residual <= tol;
    }
};

// Checks lambda_min(C(t)) >= (1 - tol) lambda_min(C(0)) e^{-2t} along a
// recorded plain-covariance trace.
inline bool check_min_eigenvalue_trace(const std::vector<double>& times,
                                       const std::vector<Eigen::MatrixXd>& covs,
                                       double tol, double* worst_margin = nullptr) {
    if (times.size() != covs.size() || covs.empty())
        throw std::invalid_argument("check_min_eigenvalue_trace: bad trace");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es0(covs.front());
    const double lambda0 = es0.eigenvalues().minCoeff();
    if (!(lambda0 > 0))
        throw std::invalid_argument(
            "check_min_eigenvalue_trace: degenerate initial covariance");
    bool ok = true;
    for (std::size_t k = 0; k < covs.size(); ++k) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(covs[k]);
        const double bound = lambda0 * std::exp(-2.0 * times[k]);
        const double margin = es.eigenvalues().minCoeff() / bound;
        if (worst_margin) *worst_margin = std::min(*worst_margin, margin);
        if (margin < 1.0 - tol) ok = false;
    }
    return ok;
}

// Simulates CBS with a plain-covariance trace over several realizations.
// The exponential eigenvalue bound is checked per realization; the
// covariance-ODE residual ||dC/dt + 2C - 2/lambda C_beta||_F / ||C||_F is
// measured on the realization-averaged trace (the empirical proxy of the
// mean-field law), with the difference quotient taken over a window of
// `residual_stride` steps to tame the 1/dt amplification of sampling noise.
inline NoCollapseReport no_collapse_check(const ObjectiveSpec& objective,
                                          const DynamicsSpec& spec, int count,
                                          const TimeGrid& grid,
                                          const InitSpec& init,
                                          int realizations, std::uint64_t seed,
                                          double eigen_tol = 0.15,
                                          int residual_stride = 5,
                                          int threads = 0) {
    if (!spec.is_cbs())
        throw std::invalid_argument("no_collapse_check: CBS dynamics required");
    if (init.kind == InitSpec::Kind::Gaussian &&
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(init.cov)
                .eigenvalues()
                .minCoeff() <= 0)
        throw std::invalid_argument(
            "no_collapse_check: initial covariance must be positive definite");

    const NoiseStream stream(seed);
    RecordOptions opts;
    opts.record_plain_cov = true;

    NoCollapseReport report;
    report.residual_stride = residual_stride;
    report.proxy = "empirical, J=" + std::to_string(count) + ", M=" +
                   std::to_string(realizations) + " realizations";
    report.eigen_bound_ok.assign(realizations, 0);
    std::vector<TrajectoryRecord> records(realizations);
    detail::parallel_for_index(realizations, threads, [&](int m) {
        records[m] = simulate(count, spec, objective, grid, init, stream,
                              static_cast<std::uint32_t>(m), opts);
    });
    for (int m = 0; m < realizations; ++m)
        report.eigen_bound_ok[m] = check_min_eigenvalue_trace(
            records[m].times, records[m].plain_covs, eigen_tol,
            &report.worst_eigen_margin);

    // Realization-averaged traces.
    const std::size_t len = records[0].times.size();
    std::vector<Eigen::MatrixXd> cov(len), wcov(len);
    for (std::size_t k = 0; k < len; ++k) {
        cov[k] = Eigen::MatrixXd::Zero(objective.dimension, objective.dimension);
        wcov[k] = cov[k];
        for (int m = 0; m < realizations; ++m) {
            cov[k] += records[m].plain_covs[k];
            wcov[k] += records[m].weighted_covs[k];
        }
        cov[k] /= realizations;
        wcov[k] /= realizations;
    }
    const double inv_lambda = 1.0 / spec.lambda();
    for (std::size_t k = 0; k + residual_stride < len; ++k) {
        const double h = residual_stride * grid.dt;
        const Eigen::MatrixXd quotient = (cov[k + residual_stride] - cov[k]) / h;
        Eigen::MatrixXd mid_cov = Eigen::MatrixXd::Zero(cov[k].rows(), cov[k].cols());
        Eigen::MatrixXd mid_wcov = mid_cov;
        for (int s = 0; s < residual_stride; ++s) {
            mid_cov += cov[k + s];
            mid_wcov += wcov[k + s];
        }
        mid_cov /= residual_stride;
        mid_wcov /= residual_stride;
        const double residual =
            (quotient + 2.0 * mid_cov - 2.0 * inv_lambda * mid_wcov).norm() /
            mid_cov.norm();
        report.worst_residual = std::max(report.worst_residual, residual);
    }
    return report;
}

}  // namespace consensus
