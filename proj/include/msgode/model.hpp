#pragma once

#include <cstdint>
#include <vector>

#include "msgode/autodiff.hpp"
#include "msgode/masks.hpp"
#include "msgode/rng.hpp"
#include "msgode/tensor.hpp"
#include "msgode/window.hpp"

namespace msgode::model {

struct ModelConfig {
    int feature_dim = data::kFeatureDim;
    int d_h = 64;              // encoder hidden width; even (temporal encoding dim)
    int n_enc_layers = 2;
    int d_z = 16;              // latent dimension per object
    int d_edge = 16;           // interaction edge-feature dimension
    int f_int_hidden = 128;    // hidden width of the interaction MLPs
    int posterior_hidden = 64;
    double te_scale = 100.0;   // normalized time offsets are scaled by this
                               // before the sinusoid and the message input
    int delta_steps = 5;       // temporal window, in sample-grid steps
    double h_int = 0.05;       // RK4 step in normalized time
    double sigma_obs = 0.1;    // observation noise of the reconstruction term
    double beta_kl = 1.0;
    double dropout = 0.0;      // encoder dropout during training
    bool self_edges = true;    // own-history edges in the st-graph

    void validate() const;
};

// Backbone layer order; shapes come from ModelConfig.
enum LayerId : std::size_t {
    kEncLift = 0,  // feature lift [d_h, feature_dim]
    kEncTmp,       // message transform [d_h, d_h + 1]
    kEncMsg,       // aggregation projection [d_h, d_h]
    kEncAvg,       // temporal-average projection [d_h, d_h]
    kPostHidden,   // posterior MLP hidden [posterior_hidden, d_h]
    kPostOut,      // posterior MLP out [2 d_z, posterior_hidden]
    kOdeEdge1,     // interaction edge MLP [f_int_hidden, 2 d_z]
    kOdeEdge2,     // [d_edge, f_int_hidden]
    kOdeNode1,     // interaction node MLP [f_int_hidden, d_z + d_edge]
    kOdeNode2,     // [d_z, f_int_hidden]
    kDecOut,       // decoder [feature_dim, d_z]
    kLayerCount
};

std::vector<subnet::LayerShape> layer_shapes(const ModelConfig& cfg);

// Sinusoidal temporal encoding of an already-scaled offset:
// out[2i] = sin(dt / 10000^{2i/d}), out[2i+1] = cos(same). d must be even.
Vector temporal_encoding(double dt_scaled, int d);
Matrix temporal_encoding_rows(const Matrix& dt_scaled_col, int d);

// Window with its spatio-temporal graph and cached temporal encodings;
// built once per window, reused every epoch.
struct PreparedWindow {
    int n_objects = 0;
    std::vector<int> node_obj;  // observed state-node -> local object
    Matrix obs_x;               // [n_nodes, feature_dim] (normalized upstream)
    std::vector<int> src, dst;  // st-graph edges over local node ids
    Matrix edge_dt;             // [n_edges, 1] scaled source-minus-target offsets
    Matrix te_edge;             // [n_edges, d_h]
    Matrix pool_dt;             // [n_nodes, 1] scaled t - t0
    Matrix te_pool;             // [n_nodes, d_h]
    std::vector<int> sp_src, sp_dst;  // spatial interaction edges (local objects)
    std::vector<int> tgt_obj;
    std::vector<double> tgt_time;
    Matrix tgt_x;               // [n_targets, feature_dim]
    double t1 = 0.0;
};

PreparedWindow prepare_window(const data::ObservationWindow& w, const ModelConfig& cfg);

// Block-diagonal collation of windows sharing the same integration start t1:
// state nodes, objects and edges are concatenated with offsets, and latent
// integration runs once over the union of all target times.
struct PreparedBatch {
    int n_windows = 0;
    Eigen::Index n_nodes = 0;
    Eigen::Index n_objects = 0;
    std::vector<int> node_obj;   // global object ids
    Matrix obs_x;
    std::vector<int> src, dst;   // global node ids
    Matrix edge_dt, te_edge;
    Matrix pool_dt, te_pool;
    Vector inv_obs_count;        // [n_objects] 1/|T_v|
    std::vector<int> sp_src, sp_dst;  // global object ids
    double t1 = 0.0;
    std::vector<double> target_times;    // ascending union grid
    std::vector<int> tgt_row;            // target entry -> row of the decoded stack
    Matrix tgt_x;                        // stacked targets, rows align with tgt_row
    std::vector<std::pair<int, int>> window_targets;  // [begin,end) per window
};

PreparedBatch collate(const std::vector<const PreparedWindow*>& windows,
                      const ModelConfig& cfg);

struct Posterior {
    ad::Var mu, sigma;  // [n_objects, d_z]
};

struct Forward {
    ad::Var mu, sigma;
    ad::Var z0;
    ad::Var pred;  // [n_target_entries, feature_dim], rows align with batch.tgt_x
};

struct PredictOptions {
    bool sample = false;            // false: z0 = mu
    const Tensor* epsilon = nullptr;  // fixed reparameterization noise [n_objects, d_z]
    Rng* rng = nullptr;             // noise source when sampling without epsilon
    bool training = false;          // enables dropout
    Rng* dropout_rng = nullptr;
};

// KL(N(mu, diag sigma^2) || N(0, I)) summed over all entries.
ad::Var kl_standard_normal(const ad::Var& mu, const ad::Var& sigma);

class Model {
public:
    explicit Model(ModelConfig cfg);
    const ModelConfig& config() const { return cfg_; }

    // msg(h, dt) = tanh(W_tmp concat(h, dt)) + TE(dt); offsets pre-scaled
    ad::Var message(const ad::Var& h, const Matrix& dt_col, const Matrix& te,
                    const subnet::ParamView& p) const;

    struct LayerOut {
        ad::Var h;
        ad::Var attention;  // per-edge weights, rank-1; simplex per destination
    };
    // residual attention update over the st-edges
    LayerOut encoder_layer(const ad::Var& h, const PreparedBatch& b,
                           const subnet::ParamView& p) const;

    // gated temporal averaging to one vector per object
    ad::Var temporal_pool(const ad::Var& h, const PreparedBatch& b,
                          const subnet::ParamView& p) const;

    Posterior infer_posterior(const ad::Var& h_final, const subnet::ParamView& p) const;

    // z0 = mu + sigma (.) eps; eps == nullptr draws from rng; both absent: mu
    ad::Var sample_initial(const Posterior& q, const Tensor* eps, Rng* rng) const;

    // NRI step over the spatial edges; bounded output keeps integration stable
    ad::Var interaction_derivative(const ad::Var& z, const PreparedBatch& b,
                                   const subnet::ParamView& p) const;

    ad::Var decode(const ad::Var& z, const subnet::ParamView& p) const;

    Forward predict(const PreparedBatch& b, const subnet::ParamView& p,
                    const PredictOptions& opt = {}) const;

    // batch-mean ELBO: reconstruction / (2 sigma_obs^2) + beta_kl * KL
    ad::Var elbo_loss(const Forward& f, const PreparedBatch& b) const;

private:
    ModelConfig cfg_;
};

// mean squared error over all prediction entries
double mse(const Tensor& pred, const Matrix& target);

}  // namespace msgode::model
