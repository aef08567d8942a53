#include "bsvie/artifacts.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "bsvie/numeric.hpp"

namespace bsvie {

namespace {

using nlohmann::ordered_json;

constexpr const char* kEol = "\r\n"; // RFC 4180 line ends for CSV output

struct WeightedStats {
    double mean = 0.0;
    double sd = 0.0;
};

WeightedStats measure_stats(const EmpiricalMeasure& m, bool absolute) {
    WeightedStats s;
    double mean = 0.0, meansq = 0.0;
    for (int i = 0; i < m.size(); ++i) {
        double v;
        if (m.dim() == 1 && !absolute) {
            v = m.point(i)[0];
        } else {
            double n2 = 0.0;
            for (double c : m.point(i)) n2 += c * c;
            v = std::sqrt(n2);
        }
        mean += m.weight(i) * v;
        meansq += m.weight(i) * v * v;
    }
    s.mean = mean;
    s.sd = std::sqrt(std::max(0.0, meansq - mean * mean));
    return s;
}

} // namespace

std::string fmt_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

ordered_json json_number(double v) {
    if (std::isfinite(v)) return v;
    return fmt_double(v);
}

ordered_json bounds_to_json(const BoundsRecord& b) {
    ordered_json j;
    j["growth_class"] = b.growth_class == GrowthClass::quadratic_bounded_law
                            ? "quadratic-bounded-law"
                            : "quadratic-unbounded-law";
    const auto put = [&](const char* key, const std::optional<double>& v) {
        j[key] = v ? json_number(*v) : ordered_json(nullptr);
    };
    put("r1_local", b.r1_local);
    put("r2_local", b.r2_local);
    put("l_tilde", b.l_tilde);
    put("theta0", b.theta0);
    put("m1_hat", b.m1_hat);
    put("m1_bar", b.m1_bar);
    put("m2_bar", b.m2_bar);
    put("theta0_log10", b.theta0_log10);
    put("m1_bar_log10", b.m1_bar_log10);
    put("m2_bar_log10", b.m2_bar_log10);
    put("L1", b.L1);
    put("L2_delta", b.L2_delta);
    put("L2_gamma0", b.L2_gamma0);
    put("L3", b.L3);
    put("L4", b.L4);
    put("L5", b.L5);
    put("L6", b.L6);
    put("L7", b.L7);
    put("m1_global", b.m1_global);
    put("m2_global", b.m2_global);
    j["eps0"] = b.eps0;
    put("delta", b.delta);
    put("L0", b.L0);
    ordered_json prov = ordered_json::object();
    for (const auto& [field, note] : b.provenance) prov[field] = note;
    j["provenance"] = prov;
    return j;
}

ordered_json assumption_report_to_json(const AssumptionReport& r) {
    ordered_json j;
    j["generator"] = r.generator_id;
    j["growth_class"] = r.growth_class;
    j["uses_law_of_y"] = r.uses_law_of_y;
    j["uses_law_of_z"] = r.uses_law_of_z;
    j["chaos_supported"] = r.chaos_supported;
    ordered_json c = ordered_json::object();
    const auto put = [&](const char* key, const std::optional<double>& v) {
        if (v) c[key] = json_number(*v);
    };
    put("L", r.constants.L);
    put("beta", r.constants.beta);
    put("beta0", r.constants.beta0);
    put("gamma", r.constants.gamma);
    put("gamma0", r.constants.gamma0);
    put("gamma_tilde", r.constants.gamma_tilde);
    put("alpha", r.constants.alpha);
    put("K1", r.constants.K1);
    put("K2", r.constants.K2);
    put("K3", r.constants.K3);
    j["constants"] = c;
    j["notes"] = r.notes;
    return j;
}

ordered_json diagnostics_to_json(const SolutionField& solution, const RunConfig& config) {
    const auto& d = solution.diagnostics;
    ordered_json j;
    j["schema_version"] = 1;
    j["config_hash"] = config.hash_hex();
    j["seed"] = config.seed;
    j["backend"] = config.backend_mode;
    j["converged"] = d.converged;
    j["iterations"] = d.iterations;
    ordered_json trail = ordered_json::array();
    for (double v : d.norm_trail) trail.push_back(json_number(v));
    j["norm_trail"] = trail;
    j["beta"] = json_number(d.beta_used);
    j["tolerance"] = json_number(d.tolerance_used);
    j["z_clamp"] = json_number(d.z_clamp_used);
    j["damping_engaged"] = d.damping_engaged;
    if (d.monitors.enabled) {
        ordered_json m;
        m["y_bound"] = json_number(d.monitors.y_bound);
        m["max_abs_y"] = json_number(d.monitors.max_abs_y);
        m["y_breached"] = d.monitors.y_breached;
        m["bmo_bound"] = json_number(d.monitors.bmo_bound);
        m["bmo_value"] = json_number(d.monitors.bmo_value);
        m["bmo_breached"] = d.monitors.bmo_breached;
        j["monitors"] = m;
    } else {
        j["monitors"] = nullptr;
    }
    j["bounds"] = d.bounds ? bounds_to_json(*d.bounds) : ordered_json(nullptr);
    return j;
}

ordered_json chaos_report_to_json(const ConvergenceReport& r, const RunConfig& config) {
    ordered_json j;
    j["schema_version"] = 1;
    j["config_hash"] = config.hash_hex();
    j["seed"] = config.seed;
    j["variant"] = r.variant;
    j["p"] = r.p;
    j["d"] = r.dimension;
    j["z_term"] = r.z_term;
    j["reference_backend"] = r.reference_backend;
    j["reference_scenarios"] = r.reference_scenarios;
    ordered_json summary = ordered_json::array();
    for (const auto& s : r.summary) {
        ordered_json row;
        row["N"] = s.particles;
        row["mean"] = json_number(s.mean);
        row["stderr"] = json_number(s.stderr_mean);
        summary.push_back(row);
    }
    j["summary"] = summary;
    j["insufficient_points"] = r.insufficient_points;
    j["slope"] = r.slope ? json_number(*r.slope) : ordered_json(nullptr);
    j["half_width"] = r.half_width ? json_number(*r.half_width) : ordered_json(nullptr);
    j["theory_exponent"] =
        r.theory_exponent ? json_number(*r.theory_exponent) : ordered_json(nullptr);
    j["lambda_hat"] = r.lambda_hat ? json_number(*r.lambda_hat) : ordered_json(nullptr);
    ordered_json seeds = ordered_json::array();
    for (std::uint64_t s : r.job_seeds) seeds.push_back(s);
    j["job_seeds"] = seeds;
    return j;
}

void write_text_file(const std::string& path, const std::string& content) {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write '" + path + "'");
    out << content;
}

void write_solution_csv(const std::string& path, const SolutionField& solution,
                        const TimeGrid& grid, const RunConfig& config) {
    const TriangularIndex tri(solution.steps);
    std::string csv;
    csv += "t_row,t_col,y_mean,y_sd,z_abs_mean,z_abs_sd,config_hash,seed";
    csv += kEol;
    const std::string tail = config.hash_hex() + "," + std::to_string(config.seed);
    for (int i = 0; i <= solution.steps; ++i) {
        const auto ystats = measure_stats(solution.laws.y_laws[static_cast<std::size_t>(i)], false);
        for (int k = i; k <= solution.steps; ++k) {
            const auto zstats = measure_stats(solution.laws.z_laws[tri.flat(i, k)], true);
            csv += fmt_double(grid.nodes[static_cast<std::size_t>(i)]);
            csv += ',';
            csv += fmt_double(grid.nodes[static_cast<std::size_t>(k)]);
            csv += ',';
            csv += fmt_double(ystats.mean);
            csv += ',';
            csv += fmt_double(ystats.sd);
            csv += ',';
            csv += fmt_double(zstats.mean);
            csv += ',';
            csv += fmt_double(zstats.sd);
            csv += ',';
            csv += tail;
            csv += kEol;
        }
    }
    write_text_file(path, csv);
}

void write_diagnostics_json(const std::string& path, const SolutionField& solution,
                            const RunConfig& config) {
    write_text_file(path, diagnostics_to_json(solution, config).dump(2) + "\n");
}

void write_particles_csv(const std::string& path, const ParticleSolution& solution,
                         const TimeGrid& grid, const RunConfig& config) {
    std::string csv;
    csv += "particle,t,y_mean,y_sd,y_min,y_max,config_hash,seed";
    csv += kEol;
    const std::string tail = config.hash_hex() + "," + std::to_string(config.seed);
    for (int i = 0; i < solution.particles; ++i) {
        for (int k = 0; k <= solution.steps; ++k) {
            const auto& v = solution.Y[static_cast<std::size_t>(i)].values[static_cast<std::size_t>(k)];
            double mean = 0.0, meansq = 0.0, lo = v[0], hi = v[0];
            for (double x : v) {
                mean += x;
                meansq += x * x;
                lo = std::min(lo, x);
                hi = std::max(hi, x);
            }
            mean /= static_cast<double>(v.size());
            meansq /= static_cast<double>(v.size());
            csv += std::to_string(i);
            csv += ',';
            csv += fmt_double(grid.nodes[static_cast<std::size_t>(k)]);
            csv += ',';
            csv += fmt_double(mean);
            csv += ',';
            csv += fmt_double(std::sqrt(std::max(0.0, meansq - mean * mean)));
            csv += ',';
            csv += fmt_double(lo);
            csv += ',';
            csv += fmt_double(hi);
            csv += ',';
            csv += tail;
            csv += kEol;
        }
    }
    write_text_file(path, csv);
}

void write_particles_manifest(const std::string& path, const ParticleSolution& solution,
                              const RunConfig& config) {
    ordered_json j;
    j["schema_version"] = 1;
    j["config_hash"] = config.hash_hex();
    j["seed"] = config.seed;
    j["particles"] = solution.particles;
    j["scenarios"] = solution.scenarios;
    j["steps"] = solution.steps;
    j["stream_ids"] = solution.stream_ids;
    j["offdiagonals"] = solution.has_offdiagonals;
    write_text_file(path, j.dump(2) + "\n");
}

void write_chaos_artifacts(const std::string& out_dir, const ConvergenceReport& report,
                           const RunConfig& config) {
    const std::filesystem::path dir(out_dir);
    const std::string tail = config.hash_hex() + "," + std::to_string(config.seed);

    std::string raw;
    raw += "N,replication,particle,error,config_hash,seed";
    raw += kEol;
    for (const auto& r : report.raw) {
        raw += std::to_string(r.particles);
        raw += ',';
        raw += std::to_string(r.replication);
        raw += ',';
        raw += std::to_string(r.particle);
        raw += ',';
        raw += fmt_double(r.error);
        raw += ',';
        raw += tail;
        raw += kEol;
    }
    write_text_file((dir / "raw_errors.csv").string(), raw);

    std::string summary;
    summary += "N,mean,stderr,config_hash,seed";
    summary += kEol;
    for (const auto& s : report.summary) {
        summary += std::to_string(s.particles);
        summary += ',';
        summary += fmt_double(s.mean);
        summary += ',';
        summary += fmt_double(s.stderr_mean);
        summary += ',';
        summary += tail;
        summary += kEol;
    }
    write_text_file((dir / "summary.csv").string(), summary);

    write_text_file((dir / "report.json").string(),
                    chaos_report_to_json(report, config).dump(2) + "\n");

    std::string loglog;
    for (const auto& s : report.summary) {
        loglog += fmt_double(std::log10(static_cast<double>(s.particles)));
        loglog += ' ';
        loglog += fmt_double(std::log10(s.mean));
        loglog += '\n';
    }
    write_text_file((dir / "loglog.dat").string(), loglog);
}

} // namespace bsvie
