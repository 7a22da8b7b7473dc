#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msgode/rng.hpp"
#include "msgode/tensor.hpp"

namespace msgode::sim {

enum class SystemKind { Spring, Charged };

const char* to_string(SystemKind k);
SystemKind system_kind_from_string(const std::string& s);

struct SystemConfig {
    SystemKind kind = SystemKind::Spring;
    int n_particles = 5;
    double box_size = 5.0;          // half-width of the square domain
    double interaction_strength = 0.1;  // spring constant k or charge coefficient c
    int sim_steps = 6000;
    int sample_every = 100;
    double sim_dt = 0.001;

    int n_sampled() const { return sim_steps / sample_every; }
    void validate() const;  // throws ConfigError naming the offending field
};

// Everything the integrator needs at t=0. Sampled from an RNG stream for
// dataset generation; constructed directly in tests.
struct InitialState {
    Matrix positions;   // [n, 2]
    Matrix velocities;  // [n, 2]
    Matrix adjacency;   // [n, n] 0/1; symmetric zero-diagonal (Spring), full off-diagonal (Charged)
    Vector charges;     // [n] entries in {-1,+1} for Charged, empty for Spring
};

struct Trajectory {
    std::vector<Matrix> positions;   // n_sampled entries of [n, 2]
    std::vector<Matrix> velocities;  // same shape
    Matrix adjacency;                // interaction graph, as in InitialState
    Vector charges;                  // empty for Spring
    std::vector<double> sample_times;  // simulation-time stamps of the samples
    int wall_bounces = 0;            // total reflection events over the run
};

// Net force on every particle at the given positions; unit masses.
// Spring: F_i = sum over connected j of -k (p_i - p_j).
// Charged: F_i = sum over j != i of c sign(q_i q_j) (p_i - p_j) / (|p_i - p_j|^3 + 0.1).
Matrix forces(const SystemConfig& config, const Matrix& positions,
              const Matrix& adjacency, const Vector& charges);

// Connectivity/charges, uniform positions in the inner half-box, and
// isotropic velocities rescaled to speed 0.5, drawn in that fixed order.
InitialState sample_initial_state(const SystemConfig& config, Rng& rng);

// Velocity-Verlet at sim_dt with elastic per-axis wall reflection, recording
// the state after every sample_every-th step.
Trajectory simulate_from(const SystemConfig& config, const InitialState& init);

Trajectory simulate(const SystemConfig& config, std::uint64_t seed);

// Independent trajectories; trajectory i runs on derive_seed(seed, {kTrajectory, i}).
std::vector<Trajectory> generate_dataset(const SystemConfig& config, int n_trajectories,
                                         std::uint64_t seed);

}  // namespace msgode::sim
