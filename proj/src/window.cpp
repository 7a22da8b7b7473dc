#include "msgode/window.hpp"

#include <cmath>

#include "msgode/errors.hpp"
#include "msgode/rng.hpp"

namespace msgode::data {

ObservationWindow make_window(const sim::Trajectory& traj, double observe_fraction,
                              double drop_rate, std::uint64_t seed) {
    if (!(observe_fraction > 0.0 && observe_fraction < 1.0))
        throw ConfigError("observe_fraction must be in (0, 1)");
    if (!(drop_rate >= 0.0 && drop_rate < 1.0))
        throw ConfigError("drop_rate must be in [0, 1)");
    const int T = static_cast<int>(traj.sample_times.size());
    const int n = static_cast<int>(traj.adjacency.rows());
    if (T < 2) throw ConfigError("trajectory too short to window");

    const int n_obs_steps = static_cast<int>(std::llround(observe_fraction * T));
    if (n_obs_steps < 1) throw ConfigError("window leaves an object with zero observations");
    if (n_obs_steps >= T) throw ConfigError("window leaves no prediction targets");

    // normalized time: the sampled span maps onto [0, 1]
    const double t_first = traj.sample_times.front();
    const double span = traj.sample_times.back() - t_first;
    if (!(span > 0.0)) throw ConfigError("trajectory sample times must increase");
    auto norm_time = [&](int s) { return (traj.sample_times[s] - t_first) / span; };

    ObservationWindow w;
    w.n_objects = n;
    w.adjacency = traj.adjacency;
    w.grid_step = norm_time(1) - norm_time(0);
    w.t1 = norm_time(n_obs_steps - 1);

    Rng rng(seed);
    std::vector<std::pair<int, int>> kept;  // (object, step)
    for (int v = 0; v < n; ++v) {
        kept.emplace_back(v, 0);  // the earliest candidate is never dropped
        for (int s = 1; s < n_obs_steps; ++s) {
            bool drop = drop_rate > 0.0 && rng.bernoulli(drop_rate);
            if (!drop) kept.emplace_back(v, s);
        }
    }

    w.obs_obj.reserve(kept.size());
    w.obs_time.reserve(kept.size());
    w.obs_x = Matrix(static_cast<Eigen::Index>(kept.size()), kFeatureDim);
    for (std::size_t k = 0; k < kept.size(); ++k) {
        auto [v, s] = kept[k];
        w.obs_obj.push_back(v);
        w.obs_time.push_back(norm_time(s));
        w.obs_x(k, 0) = traj.positions[s](v, 0);
        w.obs_x(k, 1) = traj.positions[s](v, 1);
        w.obs_x(k, 2) = traj.velocities[s](v, 0);
        w.obs_x(k, 3) = traj.velocities[s](v, 1);
    }

    const int n_tgt_steps = T - n_obs_steps;
    w.tgt_obj.reserve(static_cast<std::size_t>(n) * n_tgt_steps);
    w.tgt_time.reserve(static_cast<std::size_t>(n) * n_tgt_steps);
    w.tgt_x = Matrix(static_cast<Eigen::Index>(n) * n_tgt_steps, kFeatureDim);
    Eigen::Index row = 0;
    for (int v = 0; v < n; ++v) {
        for (int s = n_obs_steps; s < T; ++s, ++row) {
            w.tgt_obj.push_back(v);
            w.tgt_time.push_back(norm_time(s));
            w.tgt_x(row, 0) = traj.positions[s](v, 0);
            w.tgt_x(row, 1) = traj.positions[s](v, 1);
            w.tgt_x(row, 2) = traj.velocities[s](v, 0);
            w.tgt_x(row, 3) = traj.velocities[s](v, 1);
        }
    }
    return w;
}

ObservationWindow split_window_at(const ObservationWindow& w, double t_mid) {
    ObservationWindow out;
    out.n_objects = w.n_objects;
    out.adjacency = w.adjacency;
    out.grid_step = w.grid_step;

    std::vector<Eigen::Index> keep_obs, keep_tgt;
    for (std::size_t k = 0; k < w.obs_time.size(); ++k) {
        if (w.obs_time[k] < t_mid) keep_obs.push_back(static_cast<Eigen::Index>(k));
        else keep_tgt.push_back(static_cast<Eigen::Index>(k));
    }
    if (keep_tgt.empty()) throw ConfigError("split point leaves no target observations");

    out.obs_x = Matrix(static_cast<Eigen::Index>(keep_obs.size()), kFeatureDim);
    std::vector<bool> seen(static_cast<std::size_t>(w.n_objects), false);
    for (std::size_t k = 0; k < keep_obs.size(); ++k) {
        Eigen::Index i = keep_obs[k];
        out.obs_obj.push_back(w.obs_obj[i]);
        out.obs_time.push_back(w.obs_time[i]);
        out.obs_x.row(static_cast<Eigen::Index>(k)) = w.obs_x.row(i);
        seen[static_cast<std::size_t>(w.obs_obj[i])] = true;
    }
    for (bool s : seen)
        if (!s) throw ConfigError("split point leaves an object with zero observations");
    // integration starts at the split point itself so probes from different
    // windows share a start time and can be batched together
    out.t1 = t_mid;

    out.tgt_x = Matrix(static_cast<Eigen::Index>(keep_tgt.size()), kFeatureDim);
    for (std::size_t k = 0; k < keep_tgt.size(); ++k) {
        Eigen::Index i = keep_tgt[k];
        out.tgt_obj.push_back(w.obs_obj[i]);
        out.tgt_time.push_back(w.obs_time[i]);
        out.tgt_x.row(static_cast<Eigen::Index>(k)) = w.obs_x.row(i);
    }
    return out;
}

SpatioTemporalGraph build_st_graph(const ObservationWindow& w, double delta,
                                   bool self_edges) {
    if (!(delta > 0.0)) throw ConfigError("delta must be positive");
    SpatioTemporalGraph g;
    g.n_nodes = static_cast<Eigen::Index>(w.obs_obj.size());
    for (Eigen::Index t = 0; t < g.n_nodes; ++t) {
        const int v = w.obs_obj[t];
        for (Eigen::Index q = 0; q < g.n_nodes; ++q) {
            if (q == t) continue;
            const int u = w.obs_obj[q];
            const double off = w.obs_time[q] - w.obs_time[t];
            if (!(std::abs(off) < delta)) continue;
            bool connected = (u != v) ? (w.adjacency(u, v) != 0.0)
                                      : (self_edges && w.obs_time[q] != w.obs_time[t]);
            if (!connected) continue;
            g.src.push_back(static_cast<int>(q));
            g.dst.push_back(static_cast<int>(t));
            g.dt.push_back(off);
        }
    }
    return g;
}

Normalizer Normalizer::fit(const std::vector<ObservationWindow>& windows) {
    Normalizer n;
    n.max_abs = Vector::Zero(kFeatureDim);
    for (const ObservationWindow& w : windows) {
        for (int f = 0; f < kFeatureDim; ++f) {
            if (w.obs_x.rows() > 0)
                n.max_abs[f] = std::max(n.max_abs[f], w.obs_x.col(f).cwiseAbs().maxCoeff());
            if (w.tgt_x.rows() > 0)
                n.max_abs[f] = std::max(n.max_abs[f], w.tgt_x.col(f).cwiseAbs().maxCoeff());
        }
    }
    for (int f = 0; f < kFeatureDim; ++f)
        if (n.max_abs[f] == 0.0) n.max_abs[f] = 1.0;  // constant zero feature
    return n;
}

Matrix Normalizer::normalize(const Matrix& x) const {
    if (x.cols() != kFeatureDim) throw NumericError("normalize: wrong feature dimension");
    return (x.array().rowwise() / max_abs.transpose().array()).matrix();
}

Matrix Normalizer::denormalize(const Matrix& x) const {
    if (x.cols() != kFeatureDim) throw NumericError("denormalize: wrong feature dimension");
    return (x.array().rowwise() * max_abs.transpose().array()).matrix();
}

void Normalizer::apply(ObservationWindow& w) const {
    w.obs_x = normalize(w.obs_x);
    w.tgt_x = normalize(w.tgt_x);
}

}  // namespace msgode::data
