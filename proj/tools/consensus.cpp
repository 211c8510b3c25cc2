// consensus: CLI front end for consensus-based optimization and sampling.
//
//   consensus optimize|sample --config cfg.json [--out prefix] [--seed N]
//   consensus converge --config cfg.json [--out results.csv] [--dump raw.csv]
//   consensus verify [--suite all] [--out report.json]
//
// CONSENSUS_LOG=off|info|debug controls verbosity.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "consensus/analysis.hpp"
#include "consensus/config.hpp"
#include "consensus/report_io.hpp"
#include "consensus/ensemble.hpp"
#include "consensus/integrator.hpp"
#include "consensus/meanfield.hpp"
#include "consensus/objectives.hpp"

namespace {

int log_level() {
    const char* env = std::getenv("CONSENSUS_LOG");
    if (!env) return 1;
    const std::string v(env);
    if (v == "off") return 0;
    if (v == "debug") return 2;
    return 1;
}

void log_info(const std::string& msg) {
    if (log_level() >= 1) std::cerr << "[consensus] " << msg << "\n";
}

using consensus::file_header;
constexpr auto fmt = consensus::format_double;

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Results are staged in memory and written in one shot, so a bad output path
// fails before any simulation work and never leaves partial files.
void write_file(const std::string& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open output file: " + path);
    out << contents;
    if (!out) throw std::runtime_error("write failed: " + path);
}

void check_writable(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) throw std::runtime_error("cannot open output file: " + path);
}

int run_converge(const consensus::RunConfig& config, const std::string& out_path,
                 const std::string& dump_path) {
    check_writable(out_path);
    if (!dump_path.empty()) check_writable(dump_path);
    consensus::ConvergenceConfig cc = config.convergence();
    if (!cc.scale_separation_ok())
        log_info("warning: max(J_list) > J_inf/4; estimator bias likely");

    const consensus::ObjectiveSpec objective =
        consensus::make_objective(cc.objective_name, cc.dimension);
    const consensus::NoiseStream stream(cc.seed);
    std::vector<consensus::CoupledResult> raw(cc.realizations);
    consensus::detail::parallel_for_index(
        cc.realizations, cc.threads, [&](int m) {
            raw[m] = consensus::simulate_coupled(
                cc.subsystem_sizes, cc.count_inf, cc.spec, objective, cc.grid,
                cc.init, stream, static_cast<std::uint32_t>(m));
        });

    consensus::ConvergenceReport report;
    report.realizations = cc.realizations;
    report.moment_exponent = cc.moment_exponent;
    report.method = consensus::method_to_string(cc.spec.method);
    report.seed = cc.seed;
    report.fit_min_size = cc.fit_min_size;
    for (std::size_t a = 0; a < cc.subsystem_sizes.size(); ++a) {
        std::vector<std::vector<double>> per_m(cc.realizations);
        for (int m = 0; m < cc.realizations; ++m)
            per_m[m] = raw[m].sup_displacements[a];
        auto [error, se] =
            consensus::estimate_error(per_m, cc.subsystem_sizes[a]);
        report.rows.push_back({cc.subsystem_sizes[a], error, se});
    }
    try {
        report.fitted_slope =
            consensus::fit_loglog_slope(report.rows, cc.fit_min_size);
    } catch (const std::invalid_argument&) {
        log_info("warning: not enough positive points to fit a slope");
    }

    write_file(out_path, consensus::render_convergence_csv(config, report));

    if (!dump_path.empty()) {
        std::ostringstream dump;
        dump << file_header(config) << "m,J,j,sup_sq_displacement\n";
        for (int m = 0; m < cc.realizations; ++m)
            for (std::size_t a = 0; a < cc.subsystem_sizes.size(); ++a)
                for (int j = 0; j < cc.subsystem_sizes[a]; ++j)
                    dump << m << ',' << cc.subsystem_sizes[a] << ',' << j << ','
                         << fmt(raw[m].sup_displacements[a][j]) << '\n';
        write_file(dump_path, dump.str());
    }

    std::cout << "converge: wrote " << report.rows.size() << " rows to "
              << out_path << "; fitted slope (J >= " << cc.fit_min_size
              << ") = " << fmt(report.fitted_slope) << "\n";
    return 0;
}

int run_simulate(const consensus::RunConfig& config,
                 const std::string& out_prefix) {
    const std::string final_path = out_prefix + "_final.csv";
    const std::string trace_path = out_prefix + "_trace.csv";
    check_writable(final_path);
    check_writable(trace_path);

    const consensus::ObjectiveSpec objective =
        consensus::make_objective(config.objective, config.dimension);
    const consensus::NoiseStream stream(config.seed);
    consensus::RecordOptions opts;
    opts.ensemble_stride = config.thin_stride;
    const consensus::TrajectoryRecord record = consensus::simulate(
        config.particle_count, config.dynamics(), objective, config.grid(),
        config.init(), stream, 0, opts);

    std::ostringstream final_csv;
    final_csv << file_header(config);
    consensus::write_ensemble_csv(record.final_ensemble, final_csv);
    write_file(final_path, final_csv.str());

    std::ostringstream trace;
    trace << file_header(config) << "t";
    for (int i = 0; i < config.dimension; ++i) trace << ",mean_" << i;
    trace << ",ess";
    for (int i = 0; i < config.dimension; ++i)
        for (int l = 0; l <= i; ++l) trace << ",cov_" << i << "_" << l;
    trace << "\n";
    for (std::size_t k = 0; k < record.times.size(); ++k) {
        trace << fmt(record.times[k]);
        for (int i = 0; i < config.dimension; ++i)
            trace << ',' << fmt(record.means[k][i]);
        trace << ',' << fmt(record.ess[k]);
        for (int i = 0; i < config.dimension; ++i)
            for (int l = 0; l <= i; ++l)
                trace << ',' << fmt(record.weighted_covs[k](i, l));
        trace << '\n';
    }
    write_file(trace_path, trace.str());

    const consensus::WeightedSummary summary = consensus::summarize(
        record.final_ensemble, objective, config.beta, false);
    std::cout << (config.command == consensus::Command::Optimize ? "optimize"
                                                                 : "sample")
              << ": J=" << config.particle_count << " T=" << fmt(config.final_time)
              << " final M_beta=(";
    for (int i = 0; i < config.dimension; ++i)
        std::cout << (i ? "," : "") << fmt(summary.mean[i]);
    std::cout << ") ess=" << fmt(summary.ess) << " -> " << out_prefix
              << "_{final,trace}.csv\n";
    return 0;
}

struct VerifyEntry {
    std::string name;
    bool pass;
    nlohmann::json details;
};

void verify_stability(std::vector<VerifyEntry>& entries, std::uint64_t seed,
                      int threads) {
    (void)threads;
    const consensus::ObjectiveSpec quadratic =
        consensus::make_objective("quadratic", 2);
    const auto small = consensus::stability_stress_mean(quadratic, 1.0, 1.0,
                                                        5.0, 1000, seed);
    const auto large = consensus::stability_stress_mean(quadratic, 1.0, 1.0,
                                                        5.0, 10000, seed);
    const double growth = large.max_ratio / small.max_ratio - 1.0;
    entries.push_back(
        {"stability_mean", growth < 0.10,
         {{"max_ratio_1e3", small.max_ratio},
          {"max_ratio_1e4", large.max_ratio},
          {"relative_growth", growth}}});
    const auto small_c = consensus::stability_stress_sqrtcov(quadratic, 1.0, 2.0,
                                                             5.0, 1000, seed);
    const auto large_c = consensus::stability_stress_sqrtcov(quadratic, 1.0, 2.0,
                                                             5.0, 10000, seed);
    const double growth_c = large_c.max_ratio / small_c.max_ratio - 1.0;
    entries.push_back(
        {"stability_sqrtcov", growth_c < 0.10,
         {{"max_ratio_1e3", small_c.max_ratio},
          {"max_ratio_1e4", large_c.max_ratio},
          {"relative_growth", growth_c}}});
}

void verify_matrix(std::vector<VerifyEntry>& entries, std::uint64_t seed,
                   int threads) {
    (void)threads;
    const auto report =
        consensus::matrix_inequality_checks(10000, {2, 3, 5}, seed);
    entries.push_back({"matrix_araki_yamagami",
                       report.araki_yamagami_violations == 0,
                       {{"trials", report.trials},
                        {"violations", report.araki_yamagami_violations},
                        {"max_ratio", report.max_araki_yamagami_ratio}}});
    entries.push_back({"matrix_van_hemmen_ando",
                       report.van_hemmen_ando_violations == 0,
                       {{"trials", report.trials},
                        {"violations", report.van_hemmen_ando_violations},
                        {"max_ratio", report.max_van_hemmen_ando_ratio}}});
}

void verify_iid(std::vector<VerifyEntry>& entries, std::uint64_t seed,
                int threads) {
    const consensus::ObjectiveSpec quadratic =
        consensus::make_objective("quadratic", 2);
    const auto report = consensus::iid_weighted_moment_rate(
        quadratic, 1.0, consensus::SampleLaw::Gaussian, {100, 1000, 10000}, 200,
        2.0, consensus::WeightedStatistic::Mean, seed, 10'000'000, threads);
    entries.push_back({"iid_weighted_mean_rate",
                       report.fitted_slope > -1.2 && report.fitted_slope < -0.8,
                       {{"fitted_slope", report.fitted_slope},
                        {"errors", report.errors},
                        {"reference", report.reference_kind}}});
}

void verify_excursion(std::vector<VerifyEntry>& entries, std::uint64_t seed,
                      int threads) {
    const auto report = consensus::excursion_probability(
        2.0, 3.0, {10, 100, 1000}, 100000, seed, threads);
    entries.push_back({"excursion_decay", report.monotone_decay,
                       {{"probabilities", report.probabilities},
                        {"mean_estimate", report.mean_estimate},
                        {"empirical_exponent", report.empirical_exponent}}});
}

void verify_nocollapse(std::vector<VerifyEntry>& entries, std::uint64_t seed,
                       int threads) {
    const consensus::ObjectiveSpec quadratic =
        consensus::make_objective("quadratic", 2);
    const consensus::DynamicsSpec spec(consensus::Method::CbsOptimization, 3.0);
    const auto report = consensus::no_collapse_check(
        quadratic, spec, 8192, consensus::TimeGrid(0.01, 100),
        consensus::InitSpec::standard_gaussian(2), 10, seed, 0.15, 5, threads);
    bool eigen_all = true;
    for (char c : report.eigen_bound_ok) eigen_all = eigen_all && c;
    entries.push_back({"no_collapse", eigen_all && report.worst_residual <= 0.1,
                       {{"eigen_bound_all_runs", eigen_all},
                        {"worst_eigen_margin", report.worst_eigen_margin},
                        {"worst_ode_residual", report.worst_residual},
                        {"proxy", report.proxy}}});
}

int run_verify(const std::string& suite, const std::string& out_path,
               std::uint64_t seed, int threads) {
    if (!out_path.empty()) check_writable(out_path);
    std::vector<VerifyEntry> entries;
    const bool all = suite == "all";
    if (all || suite == "stability") verify_stability(entries, seed, threads);
    if (all || suite == "matrix") verify_matrix(entries, seed, threads);
    if (all || suite == "iid") verify_iid(entries, seed, threads);
    if (all || suite == "excursion") verify_excursion(entries, seed, threads);
    if (all || suite == "nocollapse") verify_nocollapse(entries, seed, threads);
    if (entries.empty()) {
        std::cerr << "unknown suite: " << suite << "\n";
        return 2;
    }

    nlohmann::json out = nlohmann::json::array();
    bool all_pass = true;
    for (const auto& e : entries) {
        nlohmann::json item = e.details;
        item["name"] = e.name;
        item["pass"] = e.pass;
        out.push_back(item);
        all_pass = all_pass && e.pass;
        std::cout << (e.pass ? "PASS " : "FAIL ") << e.name << "\n";
    }
    if (!out_path.empty()) {
        nlohmann::json doc;
        doc["seed"] = seed;
        doc["suite"] = suite;
        doc["checks"] = out;
        write_file(out_path, doc.dump(2) + "\n");
        log_info("wrote " + out_path);
    }
    return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Consensus-based optimization and sampling"};
    app.require_subcommand(1);

    std::string config_path, out_path, dump_path, suite = "all";
    std::uint64_t seed_override = 0;
    bool seed_given = false;
    int threads = -1;

    auto add_common = [&](CLI::App* cmd, bool needs_config) {
        auto* opt = cmd->add_option("--config", config_path, "JSON config file");
        if (needs_config) opt->required();
        cmd->add_option("--seed", seed_override, "override config seed")
            ->each([&](const std::string&) { seed_given = true; });
        cmd->add_option("--threads", threads, "worker threads (0 = auto)");
    };

    auto* optimize = app.add_subcommand("optimize", "run CBO toward a minimum");
    add_common(optimize, true);
    optimize->add_option("--out", out_path, "output prefix");
    auto* sample = app.add_subcommand("sample", "run CBS");
    add_common(sample, true);
    sample->add_option("--out", out_path, "output prefix");
    auto* converge = app.add_subcommand("converge", "coupled mean-field study");
    add_common(converge, true);
    converge->add_option("--out", out_path, "results CSV path");
    converge->add_option("--dump", dump_path, "raw displacement dump path");
    auto* verify = app.add_subcommand("verify", "run the verification suite");
    add_common(verify, false);
    verify->add_option("--suite", suite,
                       "stability|matrix|iid|excursion|nocollapse|all");
    verify->add_option("--out", out_path, "JSON report path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (verify->parsed())
            return run_verify(suite, out_path, seed_given ? seed_override : 0,
                              threads < 0 ? 0 : threads);

        const consensus::Command command =
            optimize->parsed() ? consensus::Command::Optimize
            : sample->parsed() ? consensus::Command::Sample
                               : consensus::Command::Converge;
        consensus::RunConfig config =
            consensus::parse_config(read_file(config_path), command);
        if (seed_given) config.seed = seed_override;
        if (threads >= 0) config.threads = threads;
        log_info("config hash " + file_header(config).substr(2));

        if (command == consensus::Command::Converge)
            return run_converge(config, out_path.empty() ? "results.csv" : out_path,
                                dump_path);
        return run_simulate(config, out_path.empty() ? "run" : out_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
