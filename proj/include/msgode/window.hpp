#pragma once

#include <cstdint>
#include <vector>

#include "msgode/sim.hpp"
#include "msgode/tensor.hpp"

namespace msgode::data {

inline constexpr int kFeatureDim = 4;  // (px, py, vx, vy)

// One training/evaluation example: irregular observations over [0, t1] and
// prediction targets beyond t1, all on the normalized time axis where the
// full sampled trajectory spans [0, 1]. State-node rows are grouped by
// object with times ascending inside each group.
struct ObservationWindow {
    int n_objects = 0;
    Matrix adjacency;              // [n, n] interaction graph
    std::vector<int> obs_obj;      // observed state-node -> object id
    std::vector<double> obs_time;  // observed state-node -> normalized time
    Matrix obs_x;                  // [n_obs_nodes, 4]
    std::vector<int> tgt_obj;      // target entries, same layout as observations
    std::vector<double> tgt_time;
    Matrix tgt_x;                  // [n_tgt_nodes, 4]
    double t1 = 0.0;               // end of the observation span
    double grid_step = 0.0;        // normalized spacing of the sample grid
};

// First observe_fraction of the sampled steps become observation candidates;
// each candidate except an object's earliest is dropped independently with
// probability drop_rate; every remaining step becomes a target for every
// object. drop_rate == 0 consumes no randomness.
ObservationWindow make_window(const sim::Trajectory& traj, double observe_fraction,
                              double drop_rate, std::uint64_t seed);

// Mode-selection probe: observations before t_mid stay observations, observed
// entries at or after t_mid become the targets. Original targets are dropped
// and t1 becomes t_mid.
ObservationWindow split_window_at(const ObservationWindow& w, double t_mid);

struct SpatioTemporalGraph {
    Eigen::Index n_nodes = 0;
    std::vector<int> src, dst;  // edge k: state node src[k] -> dst[k]
    std::vector<double> dt;     // source time minus destination time
};

// Edge (u,q) -> (v,t) exists iff |q - t| < delta and either u != v with
// e_{u,v} in the interaction graph, or u == v with q != t (own history) when
// self_edges is on. Edges are emitted grouped by destination node.
SpatioTemporalGraph build_st_graph(const ObservationWindow& w, double delta,
                                   bool self_edges = true);

// Per-feature max-abs scaling fitted on training windows (observations and
// targets); denormalize(normalize(x)) == x and training data maps into [-1,1].
struct Normalizer {
    Vector max_abs;  // [kFeatureDim]

    static Normalizer fit(const std::vector<ObservationWindow>& windows);
    Matrix normalize(const Matrix& x) const;
    Matrix denormalize(const Matrix& x) const;
    void apply(ObservationWindow& w) const;  // normalizes obs_x and tgt_x in place
};

}  // namespace msgode::data
