#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "consensus/dynamics.hpp"
#include "consensus/ensemble.hpp"
#include "consensus/noise.hpp"
#include "consensus/objectives.hpp"

namespace consensus {

struct TimeGrid {
    double dt = 0.01;
    int steps = 100;

    TimeGrid() = default;
    TimeGrid(double dt_, int steps_) : dt(dt_), steps(steps_) {
        if (!(dt > 0)) throw std::invalid_argument("TimeGrid: dt > 0 required");
        if (steps < 0) throw std::invalid_argument("TimeGrid: steps >= 0");
    }

    double final_time() const { return dt * steps; }
};

struct InitSpec {
    enum class Kind { Gaussian, UniformBox } kind = Kind::Gaussian;
    Eigen::VectorXd mean;       // Gaussian
    Eigen::MatrixXd cov;        // Gaussian, PSD
    Eigen::VectorXd box_lo, box_hi;  // UniformBox

    static InitSpec gaussian(Eigen::VectorXd mean, Eigen::MatrixXd cov) {
        InitSpec s;
        s.kind = Kind::Gaussian;
        s.mean = std::move(mean);
        s.cov = std::move(cov);
        return s;
    }
    static InitSpec standard_gaussian(int d) {
        return gaussian(Eigen::VectorXd::Zero(d),
                        Eigen::MatrixXd::Identity(d, d));
    }
    static InitSpec uniform_box(Eigen::VectorXd lo, Eigen::VectorXd hi) {
        InitSpec s;
        s.kind = Kind::UniformBox;
        s.box_lo = std::move(lo);
        s.box_hi = std::move(hi);
        return s;
    }
};

// Any coordinate beyond this magnitude means the run blew up; the mean-field
// moment bounds rule this out for a sane configuration.
inline constexpr double kBlowUpThreshold = 1e12;

struct BlowUpError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void check_finite(const Eigen::MatrixXd& positions, int step) {
    for (Eigen::Index j = 0; j < positions.rows(); ++j)
        for (Eigen::Index i = 0; i < positions.cols(); ++i) {
            const double v = positions(j, i);
            if (!std::isfinite(v) || std::abs(v) > kBlowUpThreshold)
                throw BlowUpError("blow-up at step " + std::to_string(step) +
                                  ", particle " + std::to_string(j) +
                                  ", coordinate " + std::to_string(i));
        }
}

// One explicit Euler-Maruyama step.  The summary is formed once from the
// pre-step ensemble; `noise` must already carry the sqrt(dt) scaling.
inline ParticleEnsemble em_step(const ParticleEnsemble& ensemble,
                                const DynamicsSpec& spec,
                                const ObjectiveSpec& objective, double dt,
                                const Eigen::MatrixXd& noise) {
    const WeightedSummary summary =
        summarize(ensemble, objective, spec.beta, spec.needs_sqrt_cov());
    ParticleEnsemble next = ensemble;
    for (Eigen::Index j = 0; j < ensemble.count(); ++j) {
        const Eigen::VectorXd x = ensemble.positions.row(j).transpose();
        const Eigen::VectorXd dW = noise.row(j).transpose();
        next.positions.row(j) =
            (x + drift(x, summary) * dt + apply_diffusion(x, summary, dW, spec))
                .transpose();
    }
    check_finite(next.positions, -1);
    return next;
}

// Initial conditions draw from addresses (m, j, step = kInitStep, i), so the
// first J particles coincide across systems of different sizes.
inline ParticleEnsemble sample_initial(int count, const InitSpec& init,
                                       const NoiseStream& noise,
                                       std::uint32_t realization) {
    if (count < 1) throw std::invalid_argument("sample_initial: J >= 1");
    if (init.kind == InitSpec::Kind::Gaussian) {
        const int d = static_cast<int>(init.mean.size());
        const Eigen::MatrixXd root = sqrt_psd(init.cov);
        Eigen::MatrixXd positions(count, d);
        for (int j = 0; j < count; ++j) {
            Eigen::VectorXd z(d);
            for (int i = 0; i < d; ++i)
                z[i] = noise.normal(realization, j, NoiseStream::kInitStep, i);
            positions.row(j) = (init.mean + root * z).transpose();
        }
        return ParticleEnsemble(std::move(positions));
    }
    const int d = static_cast<int>(init.box_lo.size());
    Eigen::MatrixXd positions(count, d);
    for (int j = 0; j < count; ++j)
        for (int i = 0; i < d; ++i) {
            const double u =
                noise.uniform(realization, j, NoiseStream::kInitStep, i);
            positions(j, i) = init.box_lo[i] + u * (init.box_hi[i] - init.box_lo[i]);
        }
    return ParticleEnsemble(std::move(positions));
}

struct RecordOptions {
    int ensemble_stride = 0;   // 0 = do not record ensembles
    bool record_plain_cov = false;
};

struct TrajectoryRecord {
    ParticleEnsemble final_ensemble;
    std::vector<double> times;               // per recorded step, length K+1
    std::vector<Eigen::VectorXd> means;      // M_beta trace
    std::vector<double> ess;                 // effective sample size trace
    std::vector<Eigen::MatrixXd> weighted_covs;  // C_beta trace
    std::vector<Eigen::MatrixXd> plain_covs;     // C(mu^J) trace, optional
    std::vector<std::pair<double, ParticleEnsemble>> snapshots;  // thinned
};

namespace detail {

inline Eigen::MatrixXd plain_covariance(const ParticleEnsemble& e) {
    const Eigen::VectorXd mean =
        e.positions.colwise().mean().transpose();
    const Eigen::MatrixXd centered = e.positions.rowwise() - mean.transpose();
    return centered.transpose() * centered / static_cast<double>(e.count());
}

inline void fill_step_noise(Eigen::MatrixXd& noise, const NoiseStream& stream,
                            std::uint32_t m, std::uint32_t k, double sqrt_dt) {
    for (Eigen::Index j = 0; j < noise.rows(); ++j)
        for (Eigen::Index i = 0; i < noise.cols(); ++i)
            noise(j, i) = sqrt_dt * stream.normal(m, static_cast<std::uint32_t>(j),
                                                  k, static_cast<std::uint32_t>(i));
}

// In-place EM update from a precomputed summary and sqrt(dt)-scaled noise.
inline void advance(ParticleEnsemble& ensemble, const WeightedSummary& summary,
                    const DynamicsSpec& spec, double dt,
                    const Eigen::MatrixXd& noise) {
    const Eigen::Index n = ensemble.count();
    for (Eigen::Index j = 0; j < n; ++j) {
        const Eigen::VectorXd x = ensemble.positions.row(j).transpose();
        const Eigen::VectorXd dW = noise.row(j).transpose();
        ensemble.positions.row(j) +=
            (drift(x, summary) * dt + apply_diffusion(x, summary, dW, spec))
                .transpose();
    }
}

}  // namespace detail

inline TrajectoryRecord simulate(int count, const DynamicsSpec& spec,
                                 const ObjectiveSpec& objective,
                                 const TimeGrid& grid, const InitSpec& init,
                                 const NoiseStream& stream,
                                 std::uint32_t realization,
                                 const RecordOptions& opts = {}) {
    ParticleEnsemble ensemble = sample_initial(count, init, stream, realization);
    const int d = static_cast<int>(ensemble.dim());
    const double sqrt_dt = std::sqrt(grid.dt);

    TrajectoryRecord record;
    Eigen::MatrixXd noise(count, d);
    auto record_state = [&](int k, const WeightedSummary& summary) {
        record.times.push_back(k * grid.dt);
        record.means.push_back(summary.mean);
        record.ess.push_back(summary.ess);
        record.weighted_covs.push_back(summary.cov);
        if (opts.record_plain_cov)
            record.plain_covs.push_back(detail::plain_covariance(ensemble));
        if (opts.ensemble_stride > 0 && k % opts.ensemble_stride == 0)
            record.snapshots.emplace_back(k * grid.dt, ensemble);
    };

    for (int k = 0; k < grid.steps; ++k) {
        const WeightedSummary summary =
            summarize(ensemble, objective, spec.beta, spec.needs_sqrt_cov());
        record_state(k, summary);
        detail::fill_step_noise(noise, stream, realization,
                                static_cast<std::uint32_t>(k), sqrt_dt);
        detail::advance(ensemble, summary, spec, grid.dt, noise);
        check_finite(ensemble.positions, k);
    }
    record_state(grid.steps, summarize(ensemble, objective, spec.beta,
                                       spec.needs_sqrt_cov()));
    record.final_ensemble = std::move(ensemble);
    return record;
}

// Synchronous coupling: the size-J_inf system and each size-J subsystem start
// from the same positions and consume identical noise addresses for shared
// (j, k).  Returns, for each J, the per-particle running maximum over grid
// times of the squared displacement against the large system.
struct CoupledResult {
    std::vector<int> subsystem_sizes;
    // sup_displacements[a][j] = sup_t |X^{(j/J_a)}_t - X^{(j/J_inf)}_t|^2
    std::vector<std::vector<double>> sup_displacements;
};

inline CoupledResult simulate_coupled(const std::vector<int>& subsystem_sizes,
                                      int count_inf, const DynamicsSpec& spec,
                                      const ObjectiveSpec& objective,
                                      const TimeGrid& grid,
                                      const InitSpec& init,
                                      const NoiseStream& stream,
                                      std::uint32_t realization) {
    for (std::size_t a = 0; a + 1 < subsystem_sizes.size(); ++a)
        if (subsystem_sizes[a] > subsystem_sizes[a + 1])
            throw std::invalid_argument("simulate_coupled: J_list must ascend");
    if (!subsystem_sizes.empty() && subsystem_sizes.back() > count_inf)
        throw std::invalid_argument("simulate_coupled: max(J_list) <= J_inf");

    ParticleEnsemble large = sample_initial(count_inf, init, stream, realization);
    const int d = static_cast<int>(large.dim());
    const double sqrt_dt = std::sqrt(grid.dt);

    std::vector<ParticleEnsemble> systems;
    systems.reserve(subsystem_sizes.size());
    for (int J : subsystem_sizes)
        systems.emplace_back(Eigen::MatrixXd(large.positions.topRows(J)));

    CoupledResult result;
    result.subsystem_sizes = subsystem_sizes;
    result.sup_displacements.resize(subsystem_sizes.size());
    for (std::size_t a = 0; a < systems.size(); ++a)
        result.sup_displacements[a].assign(subsystem_sizes[a], 0.0);

    auto update_sups = [&] {
        for (std::size_t a = 0; a < systems.size(); ++a)
            for (int j = 0; j < subsystem_sizes[a]; ++j) {
                const double disp = (systems[a].positions.row(j) -
                                     large.positions.row(j)).squaredNorm();
                if (disp > result.sup_displacements[a][j])
                    result.sup_displacements[a][j] = disp;
            }
    };

    update_sups();  // t = 0: all zero by construction
    Eigen::MatrixXd noise(count_inf, d);
    for (int k = 0; k < grid.steps; ++k) {
        // One noise table per step, shared by every system.
        detail::fill_step_noise(noise, stream, realization,
                                static_cast<std::uint32_t>(k), sqrt_dt);
        try {
            const WeightedSummary summary =
                summarize(large, objective, spec.beta, spec.needs_sqrt_cov());
            detail::advance(large, summary, spec, grid.dt, noise);
            check_finite(large.positions, k);
        } catch (const BlowUpError& e) {
            throw BlowUpError("J_inf system: " + std::string(e.what()));
        }
        for (std::size_t a = 0; a < systems.size(); ++a) {
            try {
                const WeightedSummary summary = summarize(
                    systems[a], objective, spec.beta, spec.needs_sqrt_cov());
                detail::advance(systems[a], summary, spec, grid.dt,
                                noise.topRows(subsystem_sizes[a]));
                check_finite(systems[a].positions, k);
            } catch (const BlowUpError& e) {
                throw BlowUpError("J=" + std::to_string(subsystem_sizes[a]) +
                                  " system: " + std::string(e.what()));
            }
        }
        update_sups();
    }
    return result;
}

}  // namespace consensus
