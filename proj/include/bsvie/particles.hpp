#pragma once

#include <cstdint>
#include <vector>

#include "bsvie/solver.hpp"

namespace bsvie {

struct ParticleSolveOptions {
    int scenarios = 256;          // joint Monte Carlo paths P
    bool offdiagonals = false;    // also regress Z^{i,j}, j != i (costs N x)
    int max_sweeps = 5;           // per-step fixed-point cap
    double sweep_tol = 1e-8;      // relative stopping tolerance of the sweeps
    std::vector<int> stream_ids;  // particle -> driver block (defaults to identity)
};

/// Solution of the N-coupled system: per-particle Y on nodes, the own-driver
/// Z field on the triangle, optional cross-driver Z fields, and the stored
/// empirical interaction flow (per scenario, per node, over particles).
struct ParticleSolution {
    int particles = 0;
    int scenarios = 0;
    int steps = 0;
    double horizon = 0.0;
    int dimension = 1;
    std::uint64_t seed = 0;
    std::vector<int> stream_ids;

    std::vector<NodeField> Y;        // [particle]
    std::vector<TriField> Z;         // [particle], own-driver integrand
    bool has_offdiagonals = false;
    std::vector<std::vector<TriField>> Z_off; // [particle][driver], empty diagonal slots

    /// mu_flow[k][p * N + j] = Y^{N,j}(t_k) in scenario p.
    std::vector<std::vector<double>> mu_flow;

    /// Uniform empirical measure over particles at (node k, scenario p).
    EmpiricalMeasure empirical_mu(int k, int scenario) const;
    /// Uniform empirical measure over the particles' own-driver Z at
    /// (row i, node k, scenario p), rebuilt from the stored fields.
    EmpiricalMeasure empirical_nu(int i, int k, int scenario) const;
};

/// Mean-field copies driven by the same particle streams but with the law
/// flows frozen to a reference solution.
struct CoupledCopies {
    int particles = 0;
    int scenarios = 0;
    int steps = 0;
    double horizon = 0.0;
    int dimension = 1;
    std::uint64_t seed = 0;
    std::vector<int> stream_ids;

    std::vector<NodeField> Y; // [particle]
    std::vector<TriField> Z;  // [particle]
};

ParticleSolution solve_particles(int particles, const Problem& problem,
                                 const PicardConfig& config, std::uint64_t seed,
                                 const ParticleSolveOptions& options = {});

CoupledCopies solve_coupled_copies(const SolutionField& reference, int particles,
                                   const Problem& problem, const PicardConfig& config,
                                   std::uint64_t seed, const ParticleSolveOptions& options = {});

/// Time-integrated cross-driver energy of particle i:
/// E int_0^T int_t^T sum_{j != i} |Z^{i,j}(t,s)|^2 ds dt on the grid weights.
double offdiag_energy(const ParticleSolution& solution, int particle);

} // namespace bsvie
