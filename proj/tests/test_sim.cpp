#include <cmath>

#include "doctest.h"
#include "msgode/errors.hpp"
#include "msgode/sim.hpp"

using namespace msgode;
using namespace msgode::sim;

namespace {
SystemConfig s1_config() {
    SystemConfig c;
    c.kind = SystemKind::Spring;
    c.n_particles = 5;
    c.box_size = 10.0;
    c.interaction_strength = 0.01;
    return c;
}

double spring_energy(const SystemConfig& c, const Matrix& p, const Matrix& v,
                     const Matrix& adj) {
    double e = 0.5 * v.squaredNorm();  // unit masses
    for (Eigen::Index i = 0; i < p.rows(); ++i)
        for (Eigen::Index j = i + 1; j < p.rows(); ++j)
            if (adj(i, j) != 0.0)
                e += 0.5 * c.interaction_strength * (p.row(i) - p.row(j)).squaredNorm();
    return e;
}
}  // namespace

TEST_SUITE("sim") {

TEST_CASE("config validation names the offending field") {
    SystemConfig c = s1_config();
    c.n_particles = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = s1_config();
    c.box_size = -1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = s1_config();
    c.interaction_strength = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = s1_config();
    c.sim_steps = 150;  // not divisible by sample_every=100
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = s1_config();
    c.sim_dt = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK_NOTHROW(s1_config().validate());
    CHECK(s1_config().n_sampled() == 60);
}

TEST_CASE("free particle moves linearly and reflects off the wall") {
    SystemConfig c;
    c.kind = SystemKind::Spring;
    c.n_particles = 1;
    c.box_size = 0.5;
    c.interaction_strength = 1.0;
    c.sim_steps = 10000;
    c.sample_every = 100;
    c.sim_dt = 0.001;

    InitialState init;
    init.positions = Matrix::Zero(1, 2);
    init.velocities = Matrix::Zero(1, 2);
    init.velocities(0, 0) = 0.1;
    init.adjacency = Matrix::Zero(1, 1);

    Trajectory t = simulate_from(c, init);
    REQUIRE(t.positions.size() == 100);
    // linear advance before the wall: x(t) = 0.1 t
    CHECK(t.positions[9](0, 0) == doctest::Approx(0.1 * 1.0).epsilon(1e-9));
    CHECK(t.positions[9](0, 1) == 0.0);
    CHECK(t.velocities[9](0, 0) == doctest::Approx(0.1));
    // wall at x=0.5 reached at t=5; afterwards the x-velocity is flipped
    CHECK(t.velocities[60](0, 0) == doctest::Approx(-0.1));
    CHECK(t.wall_bounces == 1);
    // mirrored return: x(8) = 0.5 - 0.1*(8-5)
    CHECK(t.positions[79](0, 0) == doctest::Approx(0.5 - 0.1 * 3.0).epsilon(1e-9));
    for (const Matrix& p : t.positions) CHECK(std::abs(p(0, 0)) <= c.box_size);
}

TEST_CASE("two connected particles keep their center of mass fixed") {
    SystemConfig c;
    c.kind = SystemKind::Spring;
    c.n_particles = 2;
    c.box_size = 5.0;
    c.interaction_strength = 0.5;

    InitialState init;
    init.positions = Matrix::Zero(2, 2);
    init.positions(0, 0) = -1.0;
    init.positions(1, 0) = 1.0;
    init.velocities = Matrix::Zero(2, 2);
    init.adjacency = Matrix::Zero(2, 2);
    init.adjacency(0, 1) = init.adjacency(1, 0) = 1.0;

    Trajectory t = simulate_from(c, init);
    REQUIRE(t.wall_bounces == 0);
    bool oscillated = false;
    for (size_t s = 0; s < t.positions.size(); ++s) {
        double com_x = 0.5 * (t.positions[s](0, 0) + t.positions[s](1, 0));
        double com_y = 0.5 * (t.positions[s](0, 1) + t.positions[s](1, 1));
        CHECK(std::abs(com_x) < 1e-10 * c.sim_steps);
        CHECK(std::abs(com_y) < 1e-10 * c.sim_steps);
        // released from rest, the pair contracts first
        if (t.positions[s](0, 0) > -0.99) oscillated = true;
    }
    CHECK(oscillated);
}

TEST_CASE("spring system energy drifts less than 0.1% without wall contact") {
    SystemConfig c = s1_config();
    // pick the first seed whose run never touches a wall so the spring
    // potential is smooth throughout
    for (std::uint64_t seed = 0;; ++seed) {
        REQUIRE(seed < 50);
        Rng rng(seed);
        InitialState init = sample_initial_state(c, rng);
        Trajectory t = simulate_from(c, init);
        if (t.wall_bounces != 0) continue;
        double e0 = spring_energy(c, init.positions, init.velocities, init.adjacency);
        REQUIRE(e0 > 0.0);
        for (size_t s = 0; s < t.positions.size(); ++s) {
            double e = spring_energy(c, t.positions[s], t.velocities[s], t.adjacency);
            CHECK(std::abs(e - e0) / e0 < 1e-3);
        }
        break;
    }
}

TEST_CASE("simulate is deterministic and seed-sensitive") {
    SystemConfig c = s1_config();
    Trajectory a = simulate(c, 42), b = simulate(c, 42), d = simulate(c, 43);
    REQUIRE(a.positions.size() == b.positions.size());
    for (size_t s = 0; s < a.positions.size(); ++s) {
        CHECK((a.positions[s] - b.positions[s]).cwiseAbs().maxCoeff() == 0.0);
        CHECK((a.velocities[s] - b.velocities[s]).cwiseAbs().maxCoeff() == 0.0);
    }
    CHECK((a.adjacency - b.adjacency).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.positions[0] - d.positions[0]).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("all recorded positions stay inside the box") {
    SystemConfig c = s1_config();
    c.box_size = 1.0;  // force plenty of reflections
    c.interaction_strength = 0.01;
    Trajectory t = simulate(c, 7);
    CHECK(t.wall_bounces > 0);
    for (const Matrix& p : t.positions) CHECK(p.cwiseAbs().maxCoeff() <= c.box_size);
}

TEST_CASE("spring connection density is near one half") {
    SystemConfig c = s1_config();
    c.sim_steps = 100;  // connectivity is drawn before integration; keep runs cheap
    auto data = generate_dataset(c, 100, 11);
    REQUIRE(data.size() == 100);
    int connected = 0, pairs = 0;
    for (const Trajectory& t : data) {
        CHECK((t.adjacency - t.adjacency.transpose()).cwiseAbs().maxCoeff() == 0.0);
        CHECK(t.adjacency.diagonal().cwiseAbs().maxCoeff() == 0.0);
        for (int i = 0; i < c.n_particles; ++i)
            for (int j = i + 1; j < c.n_particles; ++j) {
                ++pairs;
                connected += t.adjacency(i, j) != 0.0 ? 1 : 0;
            }
    }
    double density = static_cast<double>(connected) / pairs;
    CHECK(std::abs(density - 0.5) < 0.1);
}

TEST_CASE("dataset generation is reproducible and per-trajectory independent") {
    SystemConfig c = s1_config();
    c.sim_steps = 200;
    auto a = generate_dataset(c, 3, 5), b = generate_dataset(c, 3, 5);
    for (int i = 0; i < 3; ++i)
        CHECK((a[i].positions[0] - b[i].positions[0]).cwiseAbs().maxCoeff() == 0.0);
    // trajectory 1 alone reproduces entry 1 of the batch
    Trajectory solo = simulate(c, derive_seed(5, {seed_tag::kTrajectory, 1}));
    CHECK((solo.positions[0] - a[1].positions[0]).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a[0].positions[0] - a[1].positions[0]).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("equal charges repel and opposite charges attract") {
    SystemConfig c;
    c.kind = SystemKind::Charged;
    c.n_particles = 2;
    c.box_size = 5.0;
    c.interaction_strength = 0.1;

    Matrix pos(2, 2);
    pos << -1.0, 0.0, 1.0, 0.0;
    Matrix adj(2, 2);
    adj << 0, 1, 1, 0;
    Vector q(2);

    q << 1.0, 1.0;
    Matrix f_same = forces(c, pos, adj, q);
    CHECK(f_same(0, 0) < 0.0);  // particle at x=-1 pushed towards -x
    CHECK(f_same(1, 0) > 0.0);

    q << 1.0, -1.0;
    Matrix f_opp = forces(c, pos, adj, q);
    CHECK(f_opp(0, 0) > 0.0);  // pulled towards the other particle
    CHECK(f_opp(1, 0) < 0.0);

    // softened magnitude: c * d / (|d|^3 + 0.1) with d = 2
    CHECK(std::abs(f_same(0, 0)) == doctest::Approx(0.1 * 2.0 / (8.0 + 0.1)));
}

TEST_CASE("pairwise forces obey the third law") {
    SystemConfig spring = s1_config();
    Rng rng(3);
    InitialState is = sample_initial_state(spring, rng);
    Matrix f = forces(spring, is.positions, is.adjacency, is.charges);
    CHECK(f.colwise().sum().cwiseAbs().maxCoeff() < 1e-12);

    SystemConfig charged;
    charged.kind = SystemKind::Charged;
    charged.n_particles = 5;
    charged.box_size = 3.0;
    charged.interaction_strength = 0.5;
    Rng rng2(4);
    InitialState ic = sample_initial_state(charged, rng2);
    Matrix fc = forces(charged, ic.positions, ic.adjacency, ic.charges);
    CHECK(fc.colwise().sum().cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("charged systems sample balanced unit charges") {
    SystemConfig c;
    c.kind = SystemKind::Charged;
    c.n_particles = 5;
    c.box_size = 3.0;
    c.interaction_strength = 0.1;
    c.sim_steps = 100;
    int plus = 0, total = 0;
    for (std::uint64_t s = 0; s < 200; ++s) {
        Rng rng(derive_seed(21, {seed_tag::kTrajectory, s}));
        InitialState init = sample_initial_state(c, rng);
        for (int i = 0; i < c.n_particles; ++i) {
            REQUIRE(std::abs(init.charges[i]) == 1.0);
            plus += init.charges[i] > 0 ? 1 : 0;
            ++total;
        }
        // initial speed is exactly 0.5 per particle
        for (int i = 0; i < c.n_particles; ++i)
            CHECK(init.velocities.row(i).norm() == doctest::Approx(0.5).epsilon(1e-12));
    }
    double frac = static_cast<double>(plus) / total;
    CHECK(std::abs(frac - 0.5) < 3.0 * std::sqrt(0.25 / total));
}

}  // TEST_SUITE
