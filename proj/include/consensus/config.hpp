#pragma once

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "consensus/dynamics.hpp"
#include "consensus/integrator.hpp"
#include "consensus/meanfield.hpp"

namespace consensus {

enum class Command { Optimize, Sample, Converge, Verify };

inline Command command_from_string(const std::string& s) {
    if (s == "optimize") return Command::Optimize;
    if (s == "sample") return Command::Sample;
    if (s == "converge") return Command::Converge;
    if (s == "verify") return Command::Verify;
    throw std::invalid_argument("unknown command: " + s);
}

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Fully validated run configuration.  The diffusion strength is exposed as
// sigma = sqrt(2 theta); theta is derived.
struct RunConfig {
    Command command = Command::Optimize;
    std::string objective = "ackley";
    int dimension = 2;
    Method method = Method::CboIsotropic;
    double beta = 3.0;
    double sigma = 0.2;
    double dt = 0.01;
    double final_time = 1.0;
    int particle_count = 200;  // J, for optimize/sample
    std::uint64_t seed = 0;
    int thin_stride = 0;
    int threads = 0;
    // converge-specific
    std::vector<int> subsystem_sizes;
    int count_inf = 32768;
    int realizations = 20;
    double moment_exponent = 2.0;
    int fit_min_size = 160;

    double theta() const { return 0.5 * sigma * sigma; }
    DynamicsSpec dynamics() const { return DynamicsSpec(method, beta, theta()); }
    TimeGrid grid() const {
        const double raw = final_time / dt;
        const int steps = static_cast<int>(std::lround(raw));
        if (std::abs(steps * dt - final_time) > 1e-9)
            throw ConfigError("T must be an integer multiple of dt");
        return TimeGrid(dt, steps);
    }
    InitSpec init() const { return InitSpec::standard_gaussian(dimension); }

    ConvergenceConfig convergence() const {
        ConvergenceConfig c;
        c.subsystem_sizes = subsystem_sizes;
        c.count_inf = count_inf;
        c.realizations = realizations;
        c.moment_exponent = moment_exponent;
        c.grid = grid();
        c.spec = dynamics();
        c.objective_name = objective;
        c.dimension = dimension;
        c.init = init();
        c.seed = seed;
        c.fit_min_size = fit_min_size;
        c.threads = threads;
        return c;
    }
};

namespace detail {

inline double require_positive(const nlohmann::json& j, const std::string& key,
                               double fallback) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_number())
        throw ConfigError("config key \"" + key + "\": expected a number");
    const double v = j[key].get<double>();
    if (!(v > 0) || !std::isfinite(v))
        throw ConfigError("config key \"" + key + "\": must be positive");
    return v;
}

inline int require_positive_int(const nlohmann::json& j, const std::string& key,
                                int fallback) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_number_integer())
        throw ConfigError("config key \"" + key + "\": expected an integer");
    const long long v = j[key].get<long long>();
    if (v <= 0) throw ConfigError("config key \"" + key + "\": must be positive");
    return static_cast<int>(v);
}

}  // namespace detail

inline RunConfig parse_config(const std::string& text, Command command) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config must be a JSON object");

    static const std::set<std::string> known = {
        "objective", "d", "method", "beta", "sigma", "dt", "T", "J",
        "seed", "thin", "threads", "J_list", "J_inf", "M", "p", "fit_min_J"};
    for (const auto& [key, value] : j.items())
        if (!known.count(key))
            throw ConfigError("unknown config key \"" + key + "\"");

    RunConfig c;
    c.command = command;
    if (j.contains("objective")) {
        if (!j["objective"].is_string())
            throw ConfigError("config key \"objective\": expected a string");
        c.objective = j["objective"].get<std::string>();
    } else if (command == Command::Sample) {
        c.objective = "quadratic";
    }
    c.dimension = detail::require_positive_int(j, "d", 2);
    if (j.contains("method")) {
        if (!j["method"].is_string())
            throw ConfigError("config key \"method\": expected a string");
        try {
            c.method = method_from_string(j["method"].get<std::string>());
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("config key \"method\": ") + e.what());
        }
    } else if (command == Command::Sample) {
        c.method = Method::CbsSampling;
    }
    c.beta = detail::require_positive(j, "beta", 3.0);
    c.sigma = detail::require_positive(j, "sigma", 0.2);
    c.dt = detail::require_positive(j, "dt", 0.01);
    c.final_time = detail::require_positive(j, "T", 1.0);
    c.particle_count = detail::require_positive_int(j, "J", 200);
    if (j.contains("seed")) {
        if (!j["seed"].is_number_integer() || j["seed"].get<long long>() < 0)
            throw ConfigError("config key \"seed\": expected a non-negative integer");
        c.seed = j["seed"].get<std::uint64_t>();
    }
    if (j.contains("thin")) {
        if (!j["thin"].is_number_integer() || j["thin"].get<long long>() < 0)
            throw ConfigError("config key \"thin\": expected a non-negative integer");
        c.thin_stride = j["thin"].get<int>();
    }
    if (j.contains("threads")) {
        if (!j["threads"].is_number_integer() || j["threads"].get<long long>() < 0)
            throw ConfigError("config key \"threads\": expected a non-negative integer");
        c.threads = j["threads"].get<int>();
    }
    if (j.contains("J_list")) {
        if (!j["J_list"].is_array() || j["J_list"].empty())
            throw ConfigError("config key \"J_list\": expected a non-empty array");
        for (const auto& v : j["J_list"]) {
            if (!v.is_number_integer() || v.get<long long>() <= 0)
                throw ConfigError("config key \"J_list\": entries must be positive integers");
            c.subsystem_sizes.push_back(v.get<int>());
        }
        for (std::size_t a = 0; a + 1 < c.subsystem_sizes.size(); ++a)
            if (c.subsystem_sizes[a] > c.subsystem_sizes[a + 1])
                throw ConfigError("config key \"J_list\": must be ascending");
    } else {
        for (int k = 0; k < 10; ++k) c.subsystem_sizes.push_back(10 << k);
    }
    c.count_inf = detail::require_positive_int(j, "J_inf", 32768);
    c.realizations = detail::require_positive_int(j, "M", 20);
    c.moment_exponent = detail::require_positive(j, "p", 2.0);
    c.fit_min_size = detail::require_positive_int(j, "fit_min_J", 160);
    if (command == Command::Converge &&
        c.subsystem_sizes.back() > c.count_inf)
        throw ConfigError("config key \"J_list\": max entry exceeds J_inf");

    // Eagerly reject unknown objective names.
    make_objective(c.objective, c.dimension);
    return c;
}

// Canonical JSON form (sorted keys, every field explicit); parsing its own
// output is the identity.
inline std::string serialize_config(const RunConfig& c) {
    nlohmann::json j;
    j["objective"] = c.objective;
    j["d"] = c.dimension;
    j["method"] = method_to_string(c.method);
    j["beta"] = c.beta;
    j["sigma"] = c.sigma;
    j["dt"] = c.dt;
    j["T"] = c.final_time;
    j["J"] = c.particle_count;
    j["seed"] = c.seed;
    j["thin"] = c.thin_stride;
    // "threads" is deliberately excluded: it must not affect results, so it
    // is not part of the configuration identity.
    j["J_list"] = c.subsystem_sizes;
    j["J_inf"] = c.count_inf;
    j["M"] = c.realizations;
    j["p"] = c.moment_exponent;
    j["fit_min_J"] = c.fit_min_size;
    return j.dump();
}

// FNV-1a over the canonical serialization; embedded in output headers so a
// result file identifies the exact configuration that produced it.
inline std::uint64_t config_hash(const RunConfig& c) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char byte : serialize_config(c)) {
        h ^= byte;
        h *= 0x100000001B3ull;
    }
    return h;
}

}  // namespace consensus
