#include "msgode/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "msgode/errors.hpp"
#include "msgode/ode.hpp"

namespace msgode::model {

void ModelConfig::validate() const {
    auto positive = [](int v, const char* name) {
        if (v <= 0) throw ConfigError(std::string(name) + " must be positive");
    };
    positive(feature_dim, "feature_dim");
    positive(d_h, "d_h");
    positive(n_enc_layers, "n_enc_layers");
    positive(d_z, "d_z");
    positive(d_edge, "d_edge");
    positive(f_int_hidden, "f_int_hidden");
    positive(posterior_hidden, "posterior_hidden");
    if (d_h % 2 != 0) throw ConfigError("d_h must be even for the temporal encoding");
    if (!(te_scale > 0.0)) throw ConfigError("te_scale must be positive");
    if (delta_steps <= 0) throw ConfigError("delta_steps must be positive");
    if (!(h_int > 0.0)) throw ConfigError("h_int must be positive");
    if (!(sigma_obs > 0.0)) throw ConfigError("sigma_obs must be positive");
    if (beta_kl < 0.0) throw ConfigError("beta_kl must be non-negative");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
}

std::vector<subnet::LayerShape> layer_shapes(const ModelConfig& cfg) {
    cfg.validate();
    using subnet::LayerShape;
    std::vector<LayerShape> s(kLayerCount);
    s[kEncLift] = {"enc_lift", cfg.d_h, cfg.feature_dim, 'E'};
    s[kEncTmp] = {"enc_tmp", cfg.d_h, cfg.d_h + 1, 'E'};
    s[kEncMsg] = {"enc_msg", cfg.d_h, cfg.d_h, 'E'};
    s[kEncAvg] = {"enc_avg", cfg.d_h, cfg.d_h, 'E'};
    s[kPostHidden] = {"post_hidden", cfg.posterior_hidden, cfg.d_h, 'G'};
    s[kPostOut] = {"post_out", 2 * cfg.d_z, cfg.posterior_hidden, 'G'};
    s[kOdeEdge1] = {"ode_edge1", cfg.f_int_hidden, 2 * cfg.d_z, 'G'};
    s[kOdeEdge2] = {"ode_edge2", cfg.d_edge, cfg.f_int_hidden, 'G'};
    s[kOdeNode1] = {"ode_node1", cfg.f_int_hidden, cfg.d_z + cfg.d_edge, 'G'};
    s[kOdeNode2] = {"ode_node2", cfg.d_z, cfg.f_int_hidden, 'G'};
    s[kDecOut] = {"dec_out", cfg.feature_dim, cfg.d_z, 'D'};
    return s;
}

Vector temporal_encoding(double dt_scaled, int d) {
    if (d <= 0 || d % 2 != 0) throw ConfigError("temporal encoding dimension must be even");
    Vector out(d);
    for (int i = 0; 2 * i < d; ++i) {
        double freq = std::pow(10000.0, (2.0 * i) / d);
        out[2 * i] = std::sin(dt_scaled / freq);
        out[2 * i + 1] = std::cos(dt_scaled / freq);
    }
    return out;
}

Matrix temporal_encoding_rows(const Matrix& dt_scaled_col, int d) {
    Matrix out(dt_scaled_col.rows(), d);
    for (Eigen::Index r = 0; r < dt_scaled_col.rows(); ++r)
        out.row(r) = temporal_encoding(dt_scaled_col(r, 0), d).transpose();
    return out;
}

PreparedWindow prepare_window(const data::ObservationWindow& w, const ModelConfig& cfg) {
    cfg.validate();
    if (w.grid_step <= 0.0) throw ConfigError("window has no sample-grid spacing");

    PreparedWindow pw;
    pw.n_objects = w.n_objects;
    pw.node_obj = w.obs_obj;
    pw.obs_x = w.obs_x;
    pw.tgt_obj = w.tgt_obj;
    pw.tgt_time = w.tgt_time;
    pw.tgt_x = w.tgt_x;
    pw.t1 = w.t1;

    data::SpatioTemporalGraph g =
        data::build_st_graph(w, cfg.delta_steps * w.grid_step, cfg.self_edges);
    pw.src = std::move(g.src);
    pw.dst = std::move(g.dst);
    pw.edge_dt = Matrix(static_cast<Eigen::Index>(g.dt.size()), 1);
    for (std::size_t k = 0; k < g.dt.size(); ++k)
        pw.edge_dt(static_cast<Eigen::Index>(k), 0) = g.dt[k] * cfg.te_scale;
    pw.te_edge = temporal_encoding_rows(pw.edge_dt, cfg.d_h);

    const auto n_nodes = static_cast<Eigen::Index>(w.obs_time.size());
    pw.pool_dt = Matrix(n_nodes, 1);
    for (Eigen::Index k = 0; k < n_nodes; ++k)
        pw.pool_dt(k, 0) = w.obs_time[static_cast<std::size_t>(k)] * cfg.te_scale;
    pw.te_pool = temporal_encoding_rows(pw.pool_dt, cfg.d_h);

    for (int v = 0; v < w.n_objects; ++v)
        for (int u = 0; u < w.n_objects; ++u)
            if (u != v && w.adjacency(u, v) != 0.0) {
                pw.sp_src.push_back(u);
                pw.sp_dst.push_back(v);
            }
    return pw;
}

namespace {

Matrix vstack(const std::vector<const PreparedWindow*>& ws, Matrix PreparedWindow::*field) {
    Eigen::Index rows = 0, cols = 0;
    for (const auto* w : ws) {
        rows += (w->*field).rows();
        cols = (w->*field).cols();
    }
    Matrix out(rows, cols);
    Eigen::Index at = 0;
    for (const auto* w : ws) {
        out.middleRows(at, (w->*field).rows()) = w->*field;
        at += (w->*field).rows();
    }
    return out;
}

}  // namespace

PreparedBatch collate(const std::vector<const PreparedWindow*>& windows,
                      const ModelConfig& cfg) {
    (void)cfg;
    if (windows.empty()) throw ConfigError("cannot collate an empty batch");
    PreparedBatch b;
    b.n_windows = static_cast<int>(windows.size());
    b.t1 = windows.front()->t1;
    for (const auto* w : windows)
        if (std::abs(w->t1 - b.t1) > 1e-9)
            throw ConfigError("batched windows must share the integration start time");

    // union grid of target times
    std::vector<double> grid;
    for (const auto* w : windows) grid.insert(grid.end(), w->tgt_time.begin(), w->tgt_time.end());
    std::sort(grid.begin(), grid.end());
    for (double t : grid)
        if (b.target_times.empty() || t - b.target_times.back() > 1e-9)
            b.target_times.push_back(t);
    auto grid_index = [&](double t) {
        auto it = std::lower_bound(b.target_times.begin(), b.target_times.end(), t - 1e-9);
        return static_cast<int>(it - b.target_times.begin());
    };

    Eigen::Index node_off = 0, obj_off = 0;
    for (const auto* w : windows) {
        for (int o : w->node_obj) b.node_obj.push_back(o + static_cast<int>(obj_off));
        for (int s : w->src) b.src.push_back(s + static_cast<int>(node_off));
        for (int d : w->dst) b.dst.push_back(d + static_cast<int>(node_off));
        for (int s : w->sp_src) b.sp_src.push_back(s + static_cast<int>(obj_off));
        for (int d : w->sp_dst) b.sp_dst.push_back(d + static_cast<int>(obj_off));
        node_off += static_cast<Eigen::Index>(w->node_obj.size());
        obj_off += w->n_objects;
    }
    b.n_nodes = node_off;
    b.n_objects = obj_off;
    b.obs_x = vstack(windows, &PreparedWindow::obs_x);
    b.edge_dt = vstack(windows, &PreparedWindow::edge_dt);
    b.te_edge = vstack(windows, &PreparedWindow::te_edge);
    b.pool_dt = vstack(windows, &PreparedWindow::pool_dt);
    b.te_pool = vstack(windows, &PreparedWindow::te_pool);
    b.tgt_x = vstack(windows, &PreparedWindow::tgt_x);

    b.inv_obs_count = Vector::Zero(b.n_objects);
    for (int o : b.node_obj) b.inv_obs_count[o] += 1.0;
    for (Eigen::Index o = 0; o < b.n_objects; ++o) {
        if (b.inv_obs_count[o] == 0.0)
            throw ConfigError("batched window has an object with zero observations");
        b.inv_obs_count[o] = 1.0 / b.inv_obs_count[o];
    }

    obj_off = 0;
    int entry = 0;
    for (const auto* w : windows) {
        int begin = entry;
        for (std::size_t k = 0; k < w->tgt_obj.size(); ++k) {
            int g = grid_index(w->tgt_time[k]);
            b.tgt_row.push_back(g * static_cast<int>(b.n_objects) +
                                static_cast<int>(obj_off) + w->tgt_obj[k]);
            ++entry;
        }
        b.window_targets.emplace_back(begin, entry);
        obj_off += w->n_objects;
    }
    return b;
}

ad::Var kl_standard_normal(const ad::Var& mu, const ad::Var& sigma) {
    ad::Var t = ad::add(ad::square(sigma), ad::square(mu));
    t = ad::add_scalar(t, -1.0);
    t = ad::sub(t, ad::scale(ad::log_v(sigma), 2.0));
    return ad::scale(ad::sum(t), 0.5);
}

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

ad::Var Model::message(const ad::Var& h, const Matrix& dt_col, const Matrix& te,
                       const subnet::ParamView& p) const {
    ad::Var in = ad::concat_cols(h, ad::Var::constant(Tensor::from_matrix(dt_col)));
    ad::Var lin = ad::tanh_v(subnet::masked_linear(in, p, kEncTmp));
    return ad::add(lin, ad::Var::constant(Tensor::from_matrix(te)));
}

Model::LayerOut Model::encoder_layer(const ad::Var& h, const PreparedBatch& b,
                                     const subnet::ParamView& p) const {
    ad::Var h_src = ad::gather_rows(h, b.src);
    ad::Var m = message(h_src, b.edge_dt, b.te_edge, p);
    ad::Var logits = ad::row_dot(m, ad::gather_rows(h, b.dst));
    ad::Var att = ad::segment_softmax(logits, b.dst, b.n_nodes);
    ad::Var proj = subnet::masked_linear(m, p, kEncMsg);
    ad::Var agg = ad::scatter_sum_rows(ad::mul_rows(proj, att), b.dst, b.n_nodes);
    return {ad::add(h, ad::tanh_v(agg)), att};
}

ad::Var Model::temporal_pool(const ad::Var& h, const PreparedBatch& b,
                             const subnet::ParamView& p) const {
    ad::Var inv = ad::Var::constant(Tensor::from_vector(b.inv_obs_count));
    ad::Var m = message(h, b.pool_dt, b.te_pool, p);
    ad::Var mean_m = ad::mul_rows(ad::scatter_sum_rows(m, b.node_obj, b.n_objects), inv);
    ad::Var h_bar = ad::tanh_v(subnet::masked_linear(mean_m, p, kEncAvg));
    ad::Var gate = ad::tanh_v(ad::row_dot(ad::gather_rows(h_bar, b.node_obj), m));
    ad::Var wsum = ad::scatter_sum_rows(ad::mul_rows(m, gate), b.node_obj, b.n_objects);
    return ad::mul_rows(wsum, inv);
}

Posterior Model::infer_posterior(const ad::Var& h_final, const subnet::ParamView& p) const {
    ad::Var hid = ad::tanh_v(subnet::masked_linear(h_final, p, kPostHidden));
    ad::Var out = subnet::masked_linear(hid, p, kPostOut);
    ad::Var mu = ad::slice_cols(out, 0, cfg_.d_z);
    ad::Var log_sigma =
        ad::clamp(ad::slice_cols(out, cfg_.d_z, cfg_.d_z), std::log(1e-4), std::log(10.0));
    return {mu, ad::exp_v(log_sigma)};
}

ad::Var Model::sample_initial(const Posterior& q, const Tensor* eps, Rng* rng) const {
    if (eps == nullptr && rng == nullptr) return q.mu;
    Tensor noise;
    if (eps != nullptr) {
        noise = *eps;
    } else {
        Matrix e(q.mu.value().rows(), q.mu.value().cols());
        for (Eigen::Index r = 0; r < e.rows(); ++r)
            for (Eigen::Index c = 0; c < e.cols(); ++c) e(r, c) = rng->normal();
        noise = Tensor::from_matrix(e);
    }
    if (!noise.same_shape(q.mu.value()))
        throw ConfigError("reparameterization noise shape does not match the posterior");
    return ad::add(q.mu, ad::mul(q.sigma, ad::Var::constant(noise)));
}

ad::Var Model::interaction_derivative(const ad::Var& z, const PreparedBatch& b,
                                      const subnet::ParamView& p) const {
    if (b.sp_src.empty())
        return ad::Var::constant(Tensor::zeros_like(z.value()));
    ad::Var pair = ad::concat_cols(ad::gather_rows(z, b.sp_src), ad::gather_rows(z, b.sp_dst));
    ad::Var e = ad::tanh_v(subnet::masked_linear(pair, p, kOdeEdge1));
    e = ad::tanh_v(subnet::masked_linear(e, p, kOdeEdge2));
    ad::Var agg = ad::scatter_sum_rows(e, b.sp_dst, b.n_objects);
    ad::Var in = ad::concat_cols(z, agg);
    ad::Var d1 = ad::tanh_v(subnet::masked_linear(in, p, kOdeNode1));
    return ad::tanh_v(subnet::masked_linear(d1, p, kOdeNode2));
}

ad::Var Model::decode(const ad::Var& z, const subnet::ParamView& p) const {
    return subnet::masked_linear(z, p, kDecOut);
}

Forward Model::predict(const PreparedBatch& b, const subnet::ParamView& p,
                       const PredictOptions& opt) const {
    Forward f;
    ad::Var h_final;
    {
        ad::ScopedStage stage("encoder");
        auto drop = [&](const ad::Var& x) {
            if (!opt.training || cfg_.dropout == 0.0) return x;
            if (opt.dropout_rng == nullptr)
                throw ConfigError("dropout requires a noise source during training");
            return subnet::apply_dropout(x, cfg_.dropout, *opt.dropout_rng, true);
        };
        ad::Var h = subnet::masked_linear(ad::Var::constant(Tensor::from_matrix(b.obs_x)),
                                          p, kEncLift);
        h = drop(h);
        for (int l = 0; l < cfg_.n_enc_layers; ++l) h = drop(encoder_layer(h, b, p).h);
        h_final = temporal_pool(h, b, p);
    }
    {
        ad::ScopedStage stage("posterior");
        Posterior q = infer_posterior(h_final, p);
        f.mu = q.mu;
        f.sigma = q.sigma;
        f.z0 = opt.sample ? sample_initial(q, opt.epsilon, opt.rng)
                          : sample_initial(q, nullptr, nullptr);
    }
    std::vector<ad::Var> states;
    {
        ad::ScopedStage stage("latent integration");
        auto deriv = [&](const ad::Var& z, double) { return interaction_derivative(z, b, p); };
        states = ode::integrate(deriv, f.z0, b.t1, b.target_times, cfg_.h_int);
    }
    {
        ad::ScopedStage stage("decoder");
        ad::Var stacked = ad::stack_rows(states);
        f.pred = ad::gather_rows(decode(stacked, p), b.tgt_row);
    }
    return f;
}

ad::Var Model::elbo_loss(const Forward& f, const PreparedBatch& b) const {
    ad::Var diff = ad::sub(f.pred, ad::Var::constant(Tensor::from_matrix(b.tgt_x)));
    ad::Var recon = ad::scale(ad::sum(ad::square(diff)),
                              1.0 / (2.0 * cfg_.sigma_obs * cfg_.sigma_obs));
    ad::Var kl = kl_standard_normal(f.mu, f.sigma);
    ad::Var total = ad::add(recon, ad::scale(kl, cfg_.beta_kl));
    return ad::scale(total, 1.0 / b.n_windows);
}

double mse(const Tensor& pred, const Matrix& target) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols())
        throw ConfigError("prediction and target shapes do not match");
    if (target.size() == 0) throw ConfigError("cannot score an empty target set");
    return (pred.mat() - target).squaredNorm() / static_cast<double>(target.size());
}

}  // namespace msgode::model
