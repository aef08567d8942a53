#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "bsvie/chaos.hpp"
#include "bsvie/solver.hpp"

namespace bsvie {

/// Strict subset of TOML: [table] headers (dots allowed), key = value pairs
/// with string / integer / float / boolean / homogeneous array values, and
/// '#' comments. Everything else is rejected with a line number.
namespace toml {

using Scalar = std::variant<std::int64_t, double, bool, std::string>;
struct Value {
    bool is_array = false;
    Scalar scalar;
    std::vector<Scalar> array;
};
using Table = std::map<std::string, Value>;
using Document = std::map<std::string, Table>;

Document parse(const std::string& text);
Document parse_file(const std::string& path);

} // namespace toml

struct RunConfig {
    // [grid]
    double horizon = 1.0;
    int steps = 32;

    // [backend]
    std::string backend_mode = "lattice"; // lattice | regression
    int scenarios = 4096;                 // P
    int degree = 3;
    double ridge = 1e-8;
    int dimension = 1;
    int lattice_cap = kDefaultLatticeCap;

    // [generator], [generator.constants]
    std::string generator_family = "zero";
    std::map<std::string, double> generator_coeffs;
    std::map<std::string, double> generator_constants;

    // [free_term]
    std::string free_term_family = "constant";
    std::map<std::string, double> free_term_coeffs;

    // [picard]
    std::optional<double> tolerance;
    int max_iterations = 50;
    double damping = 1.0;
    std::optional<double> beta;
    std::optional<double> z_clamp;
    double z_clamp_cap = 1e6;

    // [study] (optional)
    bool has_study = false;
    std::vector<int> study_counts;
    int study_replications = 1;
    double study_p = 1.5;
    std::string study_variant = "integral";
    int reference_scenarios = 16384;
    std::string reference_backend;
    bool study_offdiagonals = false;

    // [particles] (optional)
    bool has_particles = false;
    int particle_count = 8;
    int particle_scenarios = 0; // 0 -> backend P
    bool particle_offdiagonals = false;

    // top level
    std::uint64_t seed = 0;
    std::string output_dir = "out";

    /// Canonical "table.key=value" serialization (sorted), the basis of the
    /// config hash.
    std::string canonical() const;
    std::uint64_t hash() const;
    std::string hash_hex() const;
};

RunConfig load_run_config(const std::string& path);
RunConfig run_config_from_document(const toml::Document& doc);

Problem make_problem(const RunConfig& config);
PicardConfig make_picard_config(const RunConfig& config);
StudyConfig make_study_config(const RunConfig& config);

} // namespace bsvie
