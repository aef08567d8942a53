#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "bsvie/artifacts.hpp"
#include "bsvie/chaos.hpp"
#include "bsvie/config.hpp"
#include "bsvie/parallel.hpp"
#include "bsvie/particles.hpp"

namespace {

using namespace bsvie;

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    int threads = 0;
    std::optional<std::uint64_t> seed_override;
};

RunConfig load_effective_config(const CommonArgs& args) {
    RunConfig cfg = load_run_config(args.config_path);
    if (args.seed_override) cfg.seed = *args.seed_override;
    if (!args.out_dir.empty()) cfg.output_dir = args.out_dir;
    if (args.threads > 0) set_worker_count(args.threads);
    return cfg;
}

int cmd_solve(const CommonArgs& args) {
    const RunConfig cfg = load_effective_config(args);
    const Problem problem = make_problem(cfg);
    const PicardConfig picard = make_picard_config(cfg);
    const std::filesystem::path dir(cfg.output_dir);

    int status = 0;
    SolutionField solution;
    try {
        solution = picard_solve(problem, picard);
    } catch (const NonConvergenceError& e) {
        std::cerr << "warning: " << e.what() << "\n";
        solution = e.partial();
        status = 2;
    }
    write_solution_csv((dir / "solution.csv").string(), solution, problem.grid, cfg);
    write_diagnostics_json((dir / "diagnostics.json").string(), solution, cfg);
    std::cout << "solve: " << (solution.diagnostics.converged ? "converged" : "NOT converged")
              << " after " << solution.diagnostics.iterations << " iterations; artifacts in "
              << cfg.output_dir << "\n";
    return status;
}

int cmd_particles(const CommonArgs& args) {
    const RunConfig cfg = load_effective_config(args);
    if (!cfg.has_particles)
        throw ValidationError("the particles command needs a [particles] table");
    RunConfig run = cfg;
    run.backend_mode = "regression"; // the joint filtration rules out the lattice
    const Problem problem = make_problem(run);
    const PicardConfig picard = make_picard_config(run);

    ParticleSolveOptions opts;
    opts.scenarios = cfg.particle_scenarios > 0 ? cfg.particle_scenarios : cfg.scenarios;
    opts.offdiagonals = cfg.particle_offdiagonals;
    const ParticleSolution solution =
        solve_particles(cfg.particle_count, problem, picard, cfg.seed, opts);

    const std::filesystem::path dir(cfg.output_dir);
    write_particles_csv((dir / "particles.csv").string(), solution, problem.grid, cfg);
    write_particles_manifest((dir / "manifest.json").string(), solution, cfg);
    std::cout << "particles: solved N=" << cfg.particle_count << " over P=" << opts.scenarios
              << " scenarios; artifacts in " << cfg.output_dir << "\n";
    return 0;
}

int cmd_chaos(const CommonArgs& args) {
    const RunConfig cfg = load_effective_config(args);
    if (!cfg.has_study) throw ValidationError("the chaos command needs a [study] table");
    RunConfig run = cfg;
    run.backend_mode = "regression";
    const Problem problem = make_problem(run);
    const PicardConfig picard = make_picard_config(run);
    StudyConfig study = make_study_config(run);

    ConvergenceReport report = run_study(study, problem, picard);
    report.config_hash = cfg.hash_hex();
    write_chaos_artifacts(cfg.output_dir, report, cfg);

    if (report.insufficient_points || !report.slope) {
        std::cout << "verdict: insufficient points (" << report.summary.size()
                  << " N value)\n";
    } else {
        const std::string theory =
            report.theory_exponent ? fmt_double(*report.theory_exponent) : std::string("n/a");
        std::cout << "slope=" << fmt_double(*report.slope) << " ± "
                  << fmt_double(report.half_width.value_or(0.0)) << " vs theory=" << theory;
        if (report.lambda_hat) std::cout << " lambda_hat=" << fmt_double(*report.lambda_hat);
        std::cout << "\n";
    }
    return 0;
}

int cmd_validate(const CommonArgs& args) {
    const RunConfig cfg = load_effective_config(args);
    const auto family = GeneratorSpec::family_from_name(cfg.generator_family);
    GeneratorSpec gen = GeneratorSpec::builtin(family, cfg.generator_coeffs);
    for (const auto& [k, v] : cfg.generator_constants) gen.override_constant(k, v);
    const FreeTermSpec psi = FreeTermSpec::builtin(
        FreeTermSpec::family_from_name(cfg.free_term_family), cfg.free_term_coeffs);

    const AssumptionReport report = assumption_report(gen, cfg.horizon);

    nlohmann::ordered_json j;
    j["schema_version"] = 1;
    j["config_hash"] = cfg.hash_hex();
    j["seed"] = cfg.seed;
    j["assumptions"] = assumption_report_to_json(report);
    if (gen.growth_class() != GrowthClass::linear) {
        GeneratorConstants constants = gen.constants(cfg.horizon);
        if (!constants.K1 && psi.bounded()) constants.K1 = psi.k1();
        j["bounds"] = bounds_to_json(a_priori_bounds(constants, gen.growth_class(), cfg.horizon));
    } else {
        j["bounds"] = nullptr;
    }
    std::cout << j.dump(2) << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mean-field backward Volterra solver and particle-system laboratory"};
    app.require_subcommand(1);

    CommonArgs args;
    const auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", args.config_path, "TOML run configuration")->required();
        sub->add_option("--out", args.out_dir, "output directory (overrides the config)");
        sub->add_option("--threads", args.threads, "worker pool size (default: cores)");
        sub->add_option("--seed-override", args.seed_override, "replace the config seed");
    };

    auto* solve = app.add_subcommand("solve", "solve the mean-field equation");
    auto* particles = app.add_subcommand("particles", "solve the N-particle system");
    auto* chaos = app.add_subcommand("chaos", "run a particle-count convergence study");
    auto* validate = app.add_subcommand("validate", "print assumption and bound reports");
    add_common(solve);
    add_common(particles);
    add_common(chaos);
    add_common(validate);

    CLI11_PARSE(app, argc, argv);

    try {
        if (solve->parsed()) return cmd_solve(args);
        if (particles->parsed()) return cmd_particles(args);
        if (chaos->parsed()) return cmd_chaos(args);
        if (validate->parsed()) return cmd_validate(args);
    } catch (const bsvie::NonConvergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const bsvie::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
