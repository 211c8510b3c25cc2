#include <catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>

#include "consensus/ensemble.hpp"
#include "consensus/noise.hpp"
#include "consensus/objectives.hpp"

using namespace consensus;

namespace {

ParticleEnsemble make1d(std::initializer_list<double> xs) {
    Eigen::MatrixXd p(static_cast<Eigen::Index>(xs.size()), 1);
    Eigen::Index j = 0;
    for (double x : xs) p(j++, 0) = x;
    return ParticleEnsemble(std::move(p));
}

ParticleEnsemble random_ensemble(int count, int dim, std::uint64_t seed,
                                 double scale = 1.0) {
    NoiseStream rng(seed);
    Eigen::MatrixXd p(count, dim);
    for (int j = 0; j < count; ++j)
        for (int i = 0; i < dim; ++i) p(j, i) = scale * rng.normal(0, j, 0, i);
    return ParticleEnsemble(std::move(p));
}

const ObjectiveSpec kQuadratic1d = make_objective("quadratic", 1);

// Frozen arbitrary-precision values for positions {0, 1}, f = x^2, beta = 1.
constexpr double kW0 = 0.7310585786300048792511592;
constexpr double kW1 = 0.2689414213699951207488408;
constexpr double kMean01 = 0.2689414213699951207488408;
constexpr double kVar01 = 0.1966119332414818525374247;

}  // namespace

TEST_CASE("single particle carries weight one") {
    const auto lw = compute_weights(make1d({3.0}), kQuadratic1d, 2.0);
    REQUIRE(lw.size() == 1);
    REQUIRE(lw[0] == 0.0);
}

TEST_CASE("constant objective gives uniform weights") {
    ObjectiveSpec flat = kQuadratic1d;
    flat.evaluator = [](const Eigen::VectorXd&) { return 42.0; };
    const auto lw = compute_weights(make1d({0, 1, 2, 3, 4}), flat, 7.0);
    for (Eigen::Index j = 0; j < 5; ++j)
        REQUIRE(std::exp(lw[j]) == Catch::Approx(0.2).margin(1e-15));
}

TEST_CASE("weights on {0,1} match the arbitrary-precision oracle") {
    const auto e = make1d({0.0, 1.0});
    const auto lw = compute_weights(e, kQuadratic1d, 1.0);
    REQUIRE(std::exp(lw[0]) == Catch::Approx(kW0).margin(1e-15));
    REQUIRE(std::exp(lw[1]) == Catch::Approx(kW1).margin(1e-15));
    REQUIRE(weighted_mean(e, lw)[0] == Catch::Approx(kMean01).margin(1e-12));
    REQUIRE(weighted_covariance(e, lw)(0, 0) ==
            Catch::Approx(kVar01).margin(1e-12));
}

TEST_CASE("weights are invariant under constant objective shifts") {
    const auto e = make1d({-1.0, 0.5, 2.0, 3.5});
    ObjectiveSpec shifted = kQuadratic1d;
    shifted.evaluator = [](const Eigen::VectorXd& x) {
        return x.squaredNorm() + 1234.5;
    };
    const auto lw_base = compute_weights(e, kQuadratic1d, 2.5);
    const auto lw_shift = compute_weights(e, shifted, 2.5);
    for (Eigen::Index j = 0; j < e.count(); ++j)
        REQUIRE(lw_base[j] == Catch::Approx(lw_shift[j]).margin(1e-12));
}

TEST_CASE("weights survive large beta without underflow") {
    const auto lw = compute_weights(make1d({0.0, 1.0, 10.0}), kQuadratic1d, 1e4);
    double total = 0;
    for (Eigen::Index j = 0; j < 3; ++j) total += std::exp(lw[j]);
    REQUIRE(total == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(std::exp(lw[0]) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("non-finite objective values are rejected") {
    ObjectiveSpec broken = kQuadratic1d;
    broken.evaluator = [](const Eigen::VectorXd&) {
        return std::numeric_limits<double>::quiet_NaN();
    };
    REQUIRE_THROWS_AS(compute_weights(make1d({0.0}), broken, 1.0),
                      std::runtime_error);
}

TEST_CASE("weighted mean basics") {
    Eigen::MatrixXd p(1, 2);
    p << 1.0, 2.0;
    const ParticleEnsemble single(p);
    const auto lw1 = compute_weights(single, make_objective("quadratic", 2), 1.0);
    REQUIRE(weighted_mean(single, lw1).isApprox(p.row(0).transpose()));

    Eigen::MatrixXd q(2, 2);
    q << 0, 0, 2, 0;
    const ParticleEnsemble pair(q);
    Eigen::VectorXd uniform(2);
    uniform << std::log(0.5), std::log(0.5);
    const Eigen::VectorXd m = weighted_mean(pair, uniform);
    REQUIRE(m[0] == Catch::Approx(1.0).margin(1e-15));
    REQUIRE(m[1] == 0.0);
}

TEST_CASE("weighted mean lies in the convex hull (d=1)") {
    const auto e = random_ensemble(32, 1, 5);
    const auto lw = compute_weights(e, kQuadratic1d, 2.0);
    const double m = weighted_mean(e, lw)[0];
    REQUIRE(m >= e.positions.minCoeff());
    REQUIRE(m <= e.positions.maxCoeff());
}

TEST_CASE("weighted covariance basics") {
    const auto single = make1d({5.0});
    const auto lw1 = compute_weights(single, kQuadratic1d, 1.0);
    REQUIRE(weighted_covariance(single, lw1)(0, 0) == 0.0);

    const auto pair = make1d({-1.0, 1.0});
    Eigen::VectorXd uniform(2);
    uniform << std::log(0.5), std::log(0.5);
    REQUIRE(weighted_covariance(pair, uniform)(0, 0) ==
            Catch::Approx(1.0).margin(1e-15));
}

TEST_CASE("beta = 0 reduces to plain moments") {
    const auto e = random_ensemble(100, 3, 11);
    const auto lw = compute_weights(e, make_objective("quadratic", 3), 0.0);
    const Eigen::VectorXd plain_mean =
        e.positions.colwise().mean().transpose();
    const Eigen::MatrixXd centered =
        e.positions.rowwise() - plain_mean.transpose();
    const Eigen::MatrixXd plain_cov =
        centered.transpose() * centered / static_cast<double>(e.count());
    REQUIRE((weighted_mean(e, lw) - plain_mean).norm() < 1e-14);
    REQUIRE((weighted_covariance(e, lw) - plain_cov).norm() < 1e-14);
}

TEST_CASE("for fixed weights, translation shifts the mean and fixes the covariance") {
    const auto e = random_ensemble(20, 2, 13);
    const auto lw = compute_weights(e, make_objective("quadratic", 2), 1.0);
    Eigen::VectorXd v(2);
    v << 3.0, -1.5;
    ParticleEnsemble shifted = e;
    shifted.positions.rowwise() += v.transpose();
    REQUIRE((weighted_mean(shifted, lw) - weighted_mean(e, lw) - v).norm() <
            1e-12);
    REQUIRE((weighted_covariance(shifted, lw) - weighted_covariance(e, lw))
                .norm() < 1e-12);
}

TEST_CASE("psd square root basics") {
    REQUIRE(sqrt_psd(Eigen::MatrixXd::Identity(3, 3))
                .isApprox(Eigen::MatrixXd::Identity(3, 3)));
    Eigen::MatrixXd d(2, 2);
    d << 4, 0, 0, 9;
    Eigen::MatrixXd expected(2, 2);
    expected << 2, 0, 0, 3;
    REQUIRE(sqrt_psd(d).isApprox(expected, 1e-14));
}

TEST_CASE("psd square root multiplies back, random matrices") {
    NoiseStream rng(23);
    for (int t = 0; t < 200; ++t) {
        const int dim = 2 + t % 4;
        Eigen::MatrixXd a(dim, dim);
        for (int i = 0; i < dim; ++i)
            for (int j = 0; j < dim; ++j) a(i, j) = rng.normal(t, i, j, 0);
        const Eigen::MatrixXd c = a.transpose() * a;
        const Eigen::MatrixXd s = sqrt_psd(c);
        REQUIRE((s - s.transpose()).norm() < 1e-12);
        REQUIRE((s * s - c).norm() < 1e-8);
    }
}

TEST_CASE("psd square root rejects asymmetric input") {
    Eigen::MatrixXd m(2, 2);
    m << 1, 5, 0, 1;
    REQUIRE_THROWS_AS(sqrt_psd(m), std::invalid_argument);
}

TEST_CASE("effective sample size anchors") {
    Eigen::VectorXd uniform8 = Eigen::VectorXd::Constant(8, std::log(1.0 / 8));
    REQUIRE(effective_sample_size(uniform8) == Catch::Approx(8.0).margin(1e-12));
    Eigen::VectorXd onehot(4);
    onehot << 0.0, -745.0, -745.0, -745.0;
    REQUIRE(effective_sample_size(onehot) == Catch::Approx(1.0).margin(1e-12));
    Eigen::VectorXd two(2);
    two << std::log(2.0 / 3.0), std::log(1.0 / 3.0);
    REQUIRE(effective_sample_size(two) == Catch::Approx(1.8).margin(1e-12));
}

TEST_CASE("raw moments") {
    Eigen::MatrixXd z = Eigen::MatrixXd::Zero(5, 2);
    REQUIRE(raw_moment(ParticleEnsemble(z), 2.0) == 0.0);
    Eigen::MatrixXd one(1, 2);
    one << 2.0, 0.0;
    REQUIRE(raw_moment(ParticleEnsemble(one), 2.0) == 4.0);
    const auto e = random_ensemble(50, 3, 31);
    double naive = 0;
    for (int j = 0; j < 50; ++j)
        naive += std::pow(e.positions.row(j).norm(), 1.7);
    REQUIRE(raw_moment(e, 1.7) == Catch::Approx(naive / 50).margin(1e-12));
}

TEST_CASE("weighted-moment bound with the explicit constant") {
    // Ratio sum(w y^p)/sum(w), w = exp(-beta y), y >= 0, against
    // C(q,p,beta) (1 + mean(y^q))^(p/q) with
    // C = (1 - 2^-q)^-1 (p/beta)^p e^(2 beta - p).
    NoiseStream rng(77);
    for (int t = 0; t < 500; ++t) {
        const double p = 0.5 + 3.5 * rng.uniform(t, 1000, 0, 0);
        const double q = 0.5 + 3.5 * rng.uniform(t, 1001, 0, 0);
        const double beta = 0.2 + 2.8 * rng.uniform(t, 1002, 0, 0);
        const int count = 2 + t % 30;
        double num = 0, den = 0, qmom = 0;
        for (int j = 0; j < count; ++j) {
            const double y = std::abs(3.0 * rng.normal(t, j, 0, 0));
            const double w = std::exp(-beta * y);
            num += w * std::pow(y, p);
            den += w;
            qmom += std::pow(y, q);
        }
        const double ratio = num / den;
        const double constant = 1.0 / (1.0 - std::pow(2.0, -q)) *
                                std::pow(p / beta, p) *
                                std::exp(2.0 * beta - p);
        const double bound =
            constant * std::pow(1.0 + qmom / count, p / q);
        REQUIRE(ratio <= bound * (1.0 + 1e-12));
    }
}

TEST_CASE("ensemble rejects invalid construction") {
    Eigen::MatrixXd bad(1, 1);
    bad << std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_AS(ParticleEnsemble(bad), std::invalid_argument);
}

TEST_CASE("summarize ties the pieces together") {
    const auto e = random_ensemble(64, 2, 41);
    const auto s = summarize(e, make_objective("ackley", 2), 3.0);
    double total = 0;
    for (Eigen::Index j = 0; j < 64; ++j) total += std::exp(s.log_weights[j]);
    REQUIRE(total == Catch::Approx(1.0).margin(1e-12));
    REQUIRE((s.cov - s.cov.transpose()).norm() < 1e-12);
    REQUIRE((s.sqrt_cov * s.sqrt_cov - s.cov).norm() < 1e-8);
    REQUIRE(s.ess >= 1.0);
    REQUIRE(s.ess <= 64.0);
}
