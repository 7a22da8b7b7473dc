#include "msgode/sim.hpp"

#include <cassert>
#include <cmath>
#include <string>

#include "msgode/errors.hpp"

namespace msgode::sim {

namespace {
constexpr double kSofteningEps = 0.1;  // Coulomb close-approach softening
constexpr double kInitialSpeed = 0.5;

void reflect_axis(double& p, double& v, double box, int& bounces) {
    // mirror until inside; a fast particle can traverse more than once
    while (p < -box || p > box) {
        p = (p < -box) ? (-2.0 * box - p) : (2.0 * box - p);
        v = -v;
        ++bounces;
    }
}
}  // namespace

const char* to_string(SystemKind k) {
    return k == SystemKind::Spring ? "spring" : "charged";
}

SystemKind system_kind_from_string(const std::string& s) {
    if (s == "spring") return SystemKind::Spring;
    if (s == "charged") return SystemKind::Charged;
    throw ConfigError("unknown system kind: " + s);
}

void SystemConfig::validate() const {
    if (n_particles < 1) throw ConfigError("n_particles must be >= 1");
    if (!(box_size > 0.0)) throw ConfigError("box_size must be positive");
    if (!(interaction_strength > 0.0))
        throw ConfigError("interaction_strength must be positive");
    if (sim_steps < 1) throw ConfigError("sim_steps must be >= 1");
    if (sample_every < 1) throw ConfigError("sample_every must be >= 1");
    if (sim_steps % sample_every != 0)
        throw ConfigError("sim_steps must be divisible by sample_every");
    if (!(sim_dt > 0.0)) throw ConfigError("sim_dt must be positive");
}

Matrix forces(const SystemConfig& config, const Matrix& positions,
              const Matrix& adjacency, const Vector& charges) {
    const Eigen::Index n = positions.rows();
    Matrix f = Matrix::Zero(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            if (adjacency(i, j) == 0.0) continue;
            const double dx = positions(i, 0) - positions(j, 0);
            const double dy = positions(i, 1) - positions(j, 1);
            double fx, fy;
            if (config.kind == SystemKind::Spring) {
                fx = -config.interaction_strength * dx;
                fy = -config.interaction_strength * dy;
            } else {
                const double r = std::sqrt(dx * dx + dy * dy);
                const double sign = charges[i] * charges[j] > 0.0 ? 1.0 : -1.0;
                const double scale =
                    config.interaction_strength * sign / (r * r * r + kSofteningEps);
                fx = scale * dx;
                fy = scale * dy;
            }
            // applying the pair force with opposite signs keeps the third law
            // exact in floating point
            f(i, 0) += fx;
            f(i, 1) += fy;
            f(j, 0) -= fx;
            f(j, 1) -= fy;
        }
    }
#ifndef NDEBUG
    assert(f.colwise().sum().cwiseAbs().maxCoeff() <
           1e-12 * std::max(1.0, f.cwiseAbs().maxCoeff()));
#endif
    return f;
}

InitialState sample_initial_state(const SystemConfig& config, Rng& rng) {
    const int n = config.n_particles;
    InitialState s;
    s.adjacency = Matrix::Zero(n, n);
    if (config.kind == SystemKind::Spring) {
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j)
                if (rng.bernoulli(0.5)) s.adjacency(i, j) = s.adjacency(j, i) = 1.0;
    } else {
        s.charges = Vector(n);
        for (int i = 0; i < n; ++i) s.charges[i] = rng.bernoulli(0.5) ? 1.0 : -1.0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                if (i != j) s.adjacency(i, j) = 1.0;
    }
    s.positions = Matrix(n, 2);
    const double half = config.box_size / 2.0;
    for (int i = 0; i < n; ++i) {
        s.positions(i, 0) = rng.uniform(-half, half);
        s.positions(i, 1) = rng.uniform(-half, half);
    }
    s.velocities = Matrix(n, 2);
    for (int i = 0; i < n; ++i) {
        double vx, vy, norm;
        do {
            vx = rng.normal();
            vy = rng.normal();
            norm = std::sqrt(vx * vx + vy * vy);
        } while (norm < 1e-12);
        s.velocities(i, 0) = vx / norm * kInitialSpeed;
        s.velocities(i, 1) = vy / norm * kInitialSpeed;
    }
    return s;
}

Trajectory simulate_from(const SystemConfig& config, const InitialState& init) {
    config.validate();
    const Eigen::Index n = config.n_particles;
    if (init.positions.rows() != n || init.positions.cols() != 2 ||
        init.velocities.rows() != n || init.velocities.cols() != 2 ||
        init.adjacency.rows() != n || init.adjacency.cols() != n)
        throw ConfigError("initial state shape does not match n_particles");
    if (config.kind == SystemKind::Charged && init.charges.size() != n)
        throw ConfigError("charged system requires one charge per particle");

    Trajectory traj;
    traj.adjacency = init.adjacency;
    traj.charges = init.charges;
    traj.positions.reserve(config.n_sampled());
    traj.velocities.reserve(config.n_sampled());
    traj.sample_times.reserve(config.n_sampled());

    Matrix p = init.positions, v = init.velocities;
    Matrix a = forces(config, p, init.adjacency, init.charges);
    const double dt = config.sim_dt;
    for (int step = 1; step <= config.sim_steps; ++step) {
        v += (dt / 2.0) * a;
        p += dt * v;
        for (Eigen::Index i = 0; i < n; ++i) {
            reflect_axis(p(i, 0), v(i, 0), config.box_size, traj.wall_bounces);
            reflect_axis(p(i, 1), v(i, 1), config.box_size, traj.wall_bounces);
        }
        a = forces(config, p, init.adjacency, init.charges);
        v += (dt / 2.0) * a;
        if (step % config.sample_every == 0) {
            traj.positions.push_back(p);
            traj.velocities.push_back(v);
            traj.sample_times.push_back(step * dt);
        }
    }
    return traj;
}

Trajectory simulate(const SystemConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    return simulate_from(config, sample_initial_state(config, rng));
}

std::vector<Trajectory> generate_dataset(const SystemConfig& config, int n_trajectories,
                                         std::uint64_t seed) {
    if (n_trajectories < 1) throw ConfigError("n_trajectories must be >= 1");
    std::vector<Trajectory> out;
    out.reserve(n_trajectories);
    for (int i = 0; i < n_trajectories; ++i)
        out.push_back(simulate(
            config, derive_seed(seed, {seed_tag::kTrajectory, static_cast<std::uint64_t>(i)})));
    return out;
}

}  // namespace msgode::sim
