#include <catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "consensus/analysis.hpp"

using namespace consensus;

namespace {

ParticleEnsemble random_ensemble(int count, int dim, std::uint64_t seed,
                                 double scale = 1.0, double shift = 0.0) {
    NoiseStream rng(seed);
    Eigen::MatrixXd p(count, dim);
    for (int j = 0; j < count; ++j)
        for (int i = 0; i < dim; ++i)
            p(j, i) = scale * rng.normal(0, j, 0, i) + shift;
    return ParticleEnsemble(std::move(p));
}

// Exhaustive permutation scan, exact for tiny J.
double brute_force_wp(const ParticleEnsemble& mu, const ParticleEnsemble& nu,
                      double p) {
    const int n = static_cast<int>(mu.count());
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        double cost = 0;
        for (int j = 0; j < n; ++j)
            cost += std::pow(
                (mu.positions.row(j) - nu.positions.row(perm[j])).norm(), p);
        best = std::min(best, cost);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return std::pow(best / n, 1.0 / p);
}

}  // namespace

TEST_CASE("1d wasserstein anchors") {
    REQUIRE(wasserstein_p_1d({1, 2, 3}, {3, 1, 2}, 2.0) == 0.0);
    REQUIRE(wasserstein_p_1d({0}, {1}, 1.0) == 1.0);
    REQUIRE(wasserstein_p_1d({0}, {1}, 3.0) == Catch::Approx(1.0).margin(1e-15));
    REQUIRE_THROWS_AS(wasserstein_p_1d({0}, {1}, 0.5), std::invalid_argument);
    REQUIRE_THROWS_AS(wasserstein_p_1d({0, 1}, {1}, 1.0), std::invalid_argument);
}

TEST_CASE("1d sort formula equals the assignment solve") {
    NoiseStream rng(6);
    for (int t = 0; t < 50; ++t) {
        const int n = 2 + t % 15;
        std::vector<double> a(n), b(n);
        Eigen::MatrixXd pa(n, 1), pb(n, 1);
        for (int j = 0; j < n; ++j) {
            a[j] = rng.normal(t, j, 0, 0);
            b[j] = 2.0 * rng.normal(t, j, 1, 0) + 0.5;
            pa(j, 0) = a[j];
            pb(j, 0) = b[j];
        }
        const double p = 1.0 + (t % 3);
        REQUIRE(wasserstein_p_1d(a, b, p) ==
                Catch::Approx(wasserstein_p_exact(ParticleEnsemble{pa},
                                                  ParticleEnsemble{pb}, p))
                    .margin(1e-10));
    }
}

TEST_CASE("exact wasserstein vanishes on permuted ensembles") {
    Eigen::MatrixXd a(2, 2), b(2, 2);
    a << 0, 0, 1, 0;
    b << 1, 0, 0, 0;
    REQUIRE(wasserstein_p_exact(ParticleEnsemble{a}, ParticleEnsemble{b}, 2.0) ==
            0.0);
}

TEST_CASE("exact wasserstein equals the factorial brute force") {
    for (int t = 0; t < 20; ++t) {
        const auto mu = random_ensemble(5, 2, 100 + t);
        const auto nu = random_ensemble(5, 2, 200 + t, 1.5, 0.3);
        for (double p : {1.0, 2.0})
            REQUIRE(wasserstein_p_exact(mu, nu, p) ==
                    Catch::Approx(brute_force_wp(mu, nu, p)).margin(1e-10));
    }
}

TEST_CASE("exact wasserstein refuses oversized inputs") {
    const auto mu = random_ensemble(65, 1, 1);
    const auto nu = random_ensemble(65, 1, 2);
    REQUIRE_THROWS_AS(wasserstein_p_exact(mu, nu, 2.0), std::invalid_argument);
}

TEST_CASE("same-index coupling dominates the exact distance") {
    REQUIRE(coupling_upper_bound(random_ensemble(8, 2, 1),
                                 random_ensemble(8, 2, 1), 2.0) == 0.0);
    for (int t = 0; t < 20; ++t) {
        const auto mu = random_ensemble(8, 2, 300 + t);
        const auto nu = random_ensemble(8, 2, 400 + t, 0.8, -0.2);
        REQUIRE(coupling_upper_bound(mu, nu, 2.0) >=
                wasserstein_p_exact(mu, nu, 2.0) - 1e-12);
    }
    // swapped indices of identical sorted ensembles: bound strictly positive,
    // exact distance zero
    Eigen::MatrixXd a(2, 1), b(2, 1);
    a << 0, 1;
    b << 1, 0;
    REQUIRE(wasserstein_p_exact(ParticleEnsemble{a}, ParticleEnsemble{b}, 2.0) ==
            0.0);
    REQUIRE(coupling_upper_bound(ParticleEnsemble{a}, ParticleEnsemble{b}, 2.0) >
            0.0);
}

TEST_CASE("matrix inequalities hold on trivial cases") {
    const auto report = matrix_inequality_checks(100, {2, 3}, 7);
    REQUIRE(report.araki_yamagami_violations == 0);
    REQUIRE(report.van_hemmen_ando_violations == 0);
    REQUIRE(report.max_araki_yamagami_ratio <= 1.0 + 1e-9);
    REQUIRE(report.max_van_hemmen_ando_ratio <= 1.0 + 1e-9);
    // A = 4I, B = I with eta = 1: ||2I - I||_F <= ||3I||_F
    Eigen::MatrixXd a = 4 * Eigen::MatrixXd::Identity(2, 2);
    Eigen::MatrixXd b = Eigen::MatrixXd::Identity(2, 2);
    REQUIRE((sqrt_psd(a) - sqrt_psd(b)).norm() <= (a - b).norm());
}

TEST_CASE("stability stress reports bounded ratios") {
    const ObjectiveSpec quadratic = make_objective("quadratic", 2);
    const auto report = stability_stress_mean(quadratic, 1.0, 1.0, 5.0, 500, 3);
    REQUIRE(report.evaluated > 0);
    REQUIRE(report.max_ratio > 0.0);
    REQUIRE(std::isfinite(report.max_ratio));
    const auto cov_report =
        stability_stress_sqrtcov(quadratic, 1.0, 2.0, 5.0, 500, 3);
    REQUIRE(cov_report.evaluated > 0);
    REQUIRE(std::isfinite(cov_report.max_ratio));
}

TEST_CASE("stability stress enforces the exponent ranges") {
    const ObjectiveSpec ackley = make_objective("ackley", 2);  // p_M = 2
    REQUIRE_THROWS_AS(stability_stress_mean(ackley, 1.0, 1.0, 5.0, 10, 0),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(stability_stress_sqrtcov(ackley, 1.0, 2.0, 5.0, 10, 0),
                      std::invalid_argument);
}

TEST_CASE("identical sqrt-covariances give zero numerator") {
    const ObjectiveSpec quadratic = make_objective("quadratic", 2);
    const auto mu = random_ensemble(8, 2, 50);
    ParticleEnsemble nu = mu;
    // permute rows
    nu.positions.row(0).swap(nu.positions.row(5));
    const auto lw_mu = compute_weights(mu, quadratic, 1.0);
    const auto lw_nu = compute_weights(nu, quadratic, 1.0);
    REQUIRE((sqrt_psd(weighted_covariance(mu, lw_mu)) -
             sqrt_psd(weighted_covariance(nu, lw_nu)))
                .norm() < 1e-10);
}

TEST_CASE("iid weighted mean converges at the CLT rate when beta = 0") {
    const ObjectiveSpec quadratic = make_objective("quadratic", 2);
    const auto report = iid_weighted_moment_rate(
        quadratic, 0.0, SampleLaw::Gaussian, {100, 1000, 10000}, 150, 2.0,
        WeightedStatistic::Mean, 11, 2'000'000, 1);
    REQUIRE(report.fitted_slope == Catch::Approx(-1.0).margin(0.25));
}

TEST_CASE("iid rate requires at least two sizes") {
    const ObjectiveSpec quadratic = make_objective("quadratic", 2);
    REQUIRE_THROWS_AS(
        iid_weighted_moment_rate(quadratic, 1.0, SampleLaw::Gaussian, {100}, 10,
                                 2.0, WeightedStatistic::Mean, 0, 1000, 1),
        std::invalid_argument);
}

TEST_CASE("iid sqrt-covariance mode runs and decays") {
    const ObjectiveSpec quadratic = make_objective("quadratic", 2);
    const auto report = iid_weighted_moment_rate(
        quadratic, 1.0, SampleLaw::Gaussian, {50, 500}, 100, 2.0,
        WeightedStatistic::SqrtCov, 12, 1'000'000, 1);
    REQUIRE(report.errors[1] < report.errors[0]);
}

TEST_CASE("excursion probabilities") {
    // R far above the mean: all empirical probabilities vanish
    const auto quiet = excursion_probability(2.0, 50.0, {10, 100}, 2000, 1, 1);
    for (double p : quiet.probabilities) REQUIRE(p == 0.0);
    // hypothesis check: R below E|Z|
    REQUIRE_THROWS_AS(excursion_probability(2.0, 0.5, {10}, 100, 1, 1),
                      std::invalid_argument);
}

TEST_CASE("min-eigenvalue trace check and negative control") {
    std::vector<double> times = {0.0, 0.5, 1.0};
    std::vector<Eigen::MatrixXd> good, collapsed;
    for (double t : times) {
        good.push_back(std::exp(-2.0 * t) * Eigen::MatrixXd::Identity(2, 2));
        collapsed.push_back(good.back());
    }
    REQUIRE(check_min_eigenvalue_trace(times, good, 0.15));
    // equality margin at t = 0
    double margin = std::numeric_limits<double>::infinity();
    check_min_eigenvalue_trace({0.0}, {good[0]}, 0.15, &margin);
    REQUIRE(margin == Catch::Approx(1.0).margin(1e-12));
    // inject an artificial collapse
    collapsed.back() *= 1e-4;
    REQUIRE_FALSE(check_min_eigenvalue_trace(times, collapsed, 0.15));
    // degenerate start rejected
    REQUIRE_THROWS_AS(
        check_min_eigenvalue_trace({0.0}, {Eigen::MatrixXd::Zero(2, 2)}, 0.15),
        std::invalid_argument);
}

TEST_CASE("no-collapse audit on a small cbs run") {
    const ObjectiveSpec quadratic = make_objective("quadratic", 2);
    const DynamicsSpec spec(Method::CbsOptimization, 3.0);
    const auto report =
        no_collapse_check(quadratic, spec, 2048, TimeGrid(0.01, 50),
                          InitSpec::standard_gaussian(2), 3, 21, 0.15, 5, 1);
    for (char ok : report.eigen_bound_ok) REQUIRE(ok);
    REQUIRE(report.worst_residual < 0.5);
    REQUIRE_THROWS_AS(
        no_collapse_check(quadratic,
                          DynamicsSpec(Method::CboIsotropic, 3.0, 0.02), 64,
                          TimeGrid(0.01, 5), InitSpec::standard_gaussian(2), 1,
                          0),
        std::invalid_argument);
    REQUIRE_THROWS_AS(
        no_collapse_check(
            quadratic, spec, 64, TimeGrid(0.01, 5),
            InitSpec::gaussian(Eigen::VectorXd::Zero(2),
                               Eigen::MatrixXd::Zero(2, 2)),
            1, 0),
        std::invalid_argument);
}
