#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "consensus/integrator.hpp"

namespace consensus {

struct ConvergenceConfig {
    std::vector<int> subsystem_sizes;  // J_list, ascending
    int count_inf = 32768;             // J_inf
    int realizations = 20;             // M
    double moment_exponent = 2.0;      // p
    TimeGrid grid;
    DynamicsSpec spec;
    std::string objective_name = "ackley";
    int dimension = 2;
    InitSpec init = InitSpec::standard_gaussian(2);
    std::uint64_t seed = 0;
    int fit_min_size = 160;  // slope fitted over J >= this
    int threads = 0;         // 0 = hardware concurrency

    void validate() const {
        if (subsystem_sizes.empty())
            throw std::invalid_argument("ConvergenceConfig: empty J_list");
        for (std::size_t a = 0; a + 1 < subsystem_sizes.size(); ++a)
            if (subsystem_sizes[a] > subsystem_sizes[a + 1])
                throw std::invalid_argument("ConvergenceConfig: J_list must ascend");
        if (subsystem_sizes.front() < 1 || count_inf < 1)
            throw std::invalid_argument("ConvergenceConfig: J >= 1");
        if (subsystem_sizes.back() > count_inf)
            throw std::invalid_argument("ConvergenceConfig: max(J_list) <= J_inf");
        if (realizations < 1)
            throw std::invalid_argument("ConvergenceConfig: M >= 1");
        if (!(moment_exponent > 0))
            throw std::invalid_argument("ConvergenceConfig: p > 0");
    }

    // max(J_list) << J_inf is what the estimator assumes.
    bool scale_separation_ok() const {
        return subsystem_sizes.back() <= count_inf / 4;
    }
};

struct ConvergenceRow {
    int subsystem_size;   // J
    double error;         // E_hat(J)
    double stderr_error;  // sample std of per-m means / sqrt(M)
};

struct ConvergenceReport {
    std::vector<ConvergenceRow> rows;
    double fitted_slope = std::numeric_limits<double>::quiet_NaN();
    int fit_min_size = 0;
    int realizations = 0;
    double moment_exponent = 2.0;
    std::string method;
    std::uint64_t seed = 0;
};

// E_hat = (1/(MJ)) sum_m sum_j sup_t |...|^2, with the spread across
// realizations measured on the per-m averages (particles within one
// realization are exchangeable but correlated).
inline std::pair<double, double> estimate_error(
    const std::vector<std::vector<double>>& sup_per_realization, int count) {
    const int m_total = static_cast<int>(sup_per_realization.size());
    if (m_total == 0) throw std::invalid_argument("estimate_error: no realizations");
    std::vector<double> per_m(m_total);
    for (int m = 0; m < m_total; ++m) {
        if (static_cast<int>(sup_per_realization[m].size()) != count)
            throw std::invalid_argument("estimate_error: shape mismatch");
        double acc = 0.0;
        for (double v : sup_per_realization[m]) acc += v;
        per_m[m] = acc / count;
    }
    double mean = 0.0;
    for (double v : per_m) mean += v;
    mean /= m_total;
    double var = 0.0;
    if (m_total > 1) {
        for (double v : per_m) var += (v - mean) * (v - mean);
        var /= (m_total - 1);
    }
    return {mean, std::sqrt(var / m_total)};
}

// Least-squares slope of log E vs log J over J >= min_size; zero values are
// excluded (log undefined), which callers should treat as a warning.
inline double fit_loglog_slope(const std::vector<ConvergenceRow>& rows,
                               int min_size) {
    std::vector<double> xs, ys;
    for (const auto& row : rows) {
        if (row.subsystem_size < min_size) continue;
        if (!(row.error > 0)) continue;
        xs.push_back(std::log(static_cast<double>(row.subsystem_size)));
        ys.push_back(std::log(row.error));
    }
    if (xs.size() < 2)
        throw std::invalid_argument("fit_loglog_slope: need >= 2 positive points in range");
    const double n = static_cast<double>(xs.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sx += xs[i];
        sy += ys[i];
        sxx += xs[i] * xs[i];
        sxy += xs[i] * ys[i];
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

namespace detail {

// Runs fn(m) for m in [0, total) on `threads` workers.  Outputs are stored
// per-m by the callee, so the aggregation order is fixed regardless of the
// thread count.
template <typename Fn>
void parallel_for_index(int total, int threads, Fn&& fn) {
    if (threads <= 0)
        threads = static_cast<int>(std::thread::hardware_concurrency());
    threads = std::max(1, std::min(threads, total));
    if (threads == 1) {
        for (int m = 0; m < total; ++m) fn(m);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr error;
    std::mutex error_mutex;
    for (int t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            for (int m = next.fetch_add(1); m < total; m = next.fetch_add(1)) {
                try {
                    fn(m);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace detail

inline ConvergenceReport run_convergence_study(const ConvergenceConfig& config) {
    config.validate();
    const ObjectiveSpec objective =
        make_objective(config.objective_name, config.dimension);
    const NoiseStream stream(config.seed);

    // raw[m][a][j]: sup displacement of particle j in subsystem a, run m.
    std::vector<CoupledResult> raw(config.realizations);
    detail::parallel_for_index(config.realizations, config.threads, [&](int m) {
        raw[m] = simulate_coupled(config.subsystem_sizes, config.count_inf,
                                  config.spec, objective, config.grid,
                                  config.init, stream,
                                  static_cast<std::uint32_t>(m));
    });

    ConvergenceReport report;
    report.realizations = config.realizations;
    report.moment_exponent = config.moment_exponent;
    report.method = method_to_string(config.spec.method);
    report.seed = config.seed;
    report.fit_min_size = config.fit_min_size;
    for (std::size_t a = 0; a < config.subsystem_sizes.size(); ++a) {
        std::vector<std::vector<double>> per_m(config.realizations);
        for (int m = 0; m < config.realizations; ++m)
            per_m[m] = raw[m].sup_displacements[a];
        auto [error, se] = estimate_error(per_m, config.subsystem_sizes[a]);
        report.rows.push_back({config.subsystem_sizes[a], error, se});
    }
    try {
        report.fitted_slope = fit_loglog_slope(report.rows, config.fit_min_size);
    } catch (const std::invalid_argument&) {
        // Not enough positive points in range; slope stays NaN.
    }
    return report;
}

}  // namespace consensus
