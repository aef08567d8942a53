#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "bsvie/chaos.hpp"
#include "bsvie/config.hpp"
#include "bsvie/particles.hpp"
#include "bsvie/solver.hpp"

namespace bsvie {

/// Shortest-stable textual form of a double ("%.17g"; inf/nan spelled out).
std::string fmt_double(double v);

/// JSON value for a double: a number when finite, a string otherwise
/// (nlohmann would silently turn non-finite numbers into null).
nlohmann::ordered_json json_number(double v);

nlohmann::ordered_json bounds_to_json(const BoundsRecord& bounds);
nlohmann::ordered_json assumption_report_to_json(const AssumptionReport& report);
nlohmann::ordered_json diagnostics_to_json(const SolutionField& solution,
                                           const RunConfig& config);
nlohmann::ordered_json chaos_report_to_json(const ConvergenceReport& report,
                                            const RunConfig& config);

void write_text_file(const std::string& path, const std::string& content);

void write_solution_csv(const std::string& path, const SolutionField& solution,
                        const TimeGrid& grid, const RunConfig& config);
void write_diagnostics_json(const std::string& path, const SolutionField& solution,
                            const RunConfig& config);

void write_particles_csv(const std::string& path, const ParticleSolution& solution,
                         const TimeGrid& grid, const RunConfig& config);
void write_particles_manifest(const std::string& path, const ParticleSolution& solution,
                              const RunConfig& config);

/// The four study artifacts: raw errors CSV, summary CSV, report JSON, and a
/// plot-ready two-column log-log file.
void write_chaos_artifacts(const std::string& out_dir, const ConvergenceReport& report,
                           const RunConfig& config);

} // namespace bsvie
