#pragma once

#include <cstdio>
#include <sstream>
#include <string>

#include "consensus/config.hpp"
#include "consensus/meanfield.hpp"

namespace consensus {

// Fixed-format rendering so identical results produce identical bytes.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string file_header(const RunConfig& config) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(config_hash(config)));
    return "# config_hash=" + std::string(buf) +
           " seed=" + std::to_string(config.seed) + "\n";
}

inline std::string render_convergence_csv(const RunConfig& config,
                                          const ConvergenceReport& report) {
    std::ostringstream csv;
    csv << file_header(config) << "J,E_hat,stderr,M,p,method,seed\n";
    for (const auto& row : report.rows)
        csv << row.subsystem_size << ',' << format_double(row.error) << ','
            << format_double(row.stderr_error) << ',' << report.realizations
            << ',' << format_double(report.moment_exponent) << ','
            << report.method << ',' << report.seed << '\n';
    return csv.str();
}

}  // namespace consensus
