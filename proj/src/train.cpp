#include "msgode/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include "json.hpp"
#include "msgode/container.hpp"
#include "msgode/errors.hpp"

namespace msgode::train {

using json = nlohmann::json;

void TrainConfig::validate() const {
    if (epochs <= 0) throw ConfigError("epochs must be positive");
    if (batch_size <= 0) throw ConfigError("batch_size must be positive");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
    if (!(beta1 > 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must be in (0, 1)");
    if (!(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must be in (0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
    if (!(observe_fraction > 0.0 && observe_fraction < 1.0))
        throw ConfigError("observe_fraction must be in (0, 1)");
    if (drop_rate < 0.0 || drop_rate >= 1.0) throw ConfigError("drop_rate must be in [0, 1)");
    if (eval_chunk <= 0) throw ConfigError("eval_chunk must be positive");
}

const char* to_string(Method m) {
    switch (m) {
        case Method::MSGODE: return "msgode";
        case Method::FineTune: return "finetune";
        case Method::Joint: return "joint";
    }
    throw ConfigError("unknown method");
}

const char* to_string(Selection s) {
    return s == Selection::ModeSwitching ? "mode-switching" : "oracle";
}

Method method_from_string(const std::string& s) {
    if (s == "msgode") return Method::MSGODE;
    if (s == "finetune") return Method::FineTune;
    if (s == "joint") return Method::Joint;
    throw ConfigError("unknown method '" + s + "' (expected msgode, finetune or joint)");
}

Selection selection_from_string(const std::string& s) {
    if (s == "mode-switching") return Selection::ModeSwitching;
    if (s == "oracle") return Selection::Oracle;
    throw ConfigError("unknown selection '" + s +
                      "' (expected mode-switching or oracle)");
}

AdamW::AdamW(std::vector<ad::Var> params, const TrainConfig& tc)
    : params_(std::move(params)),
      lr_(tc.lr),
      wd_(tc.weight_decay),
      b1_(tc.beta1),
      b2_(tc.beta2),
      eps_(tc.adam_eps) {
    for (const ad::Var& p : params_) {
        m_.push_back(Tensor::zeros_like(p.value()));
        v_.push_back(Tensor::zeros_like(p.value()));
    }
}

void AdamW::step() {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const Matrix g = params_[i].grad().mat();
        Matrix& m = m_[i].mat();
        Matrix& v = v_[i].mat();
        m = b1_ * m + (1.0 - b1_) * g;
        v = (b2_ * v.array() + (1.0 - b2_) * g.array().square()).matrix();
        const Matrix mhat = m / c1;
        const Matrix vhat = v / c2;
        Matrix p = params_[i].value().mat();
        p.array() -= lr_ * (mhat.array() / (vhat.array().sqrt() + eps_)) + lr_ * wd_ * p.array();
        Tensor next = params_[i].value();
        next.mat() = p;
        next.check_finite("optimizer update");
        params_[i].set_value(std::move(next));
    }
}

void AdamW::zero_grad() {
    for (ad::Var& p : params_) p.zero_grad();
}

namespace {

// deterministic Fisher-Yates over indices
std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i)
        std::swap(idx[i - 1], idx[static_cast<std::size_t>(
                                  rng.uniform_int(static_cast<std::uint64_t>(i)))]);
    return idx;
}

// total squared error and entry count over all windows
std::pair<double, double> evaluate_sums(const model::Model& m,
                                        const subnet::ParamView& view,
                                        const std::vector<const model::PreparedWindow*>& windows,
                                        int chunk) {
    double sq = 0.0, count = 0.0;
    ad::NoGradGuard ng;
    for (std::size_t at = 0; at < windows.size(); at += static_cast<std::size_t>(chunk)) {
        std::vector<const model::PreparedWindow*> part(
            windows.begin() + static_cast<std::ptrdiff_t>(at),
            windows.begin() +
                static_cast<std::ptrdiff_t>(std::min(at + static_cast<std::size_t>(chunk),
                                                     windows.size())));
        model::PreparedBatch b = model::collate(part, m.config());
        model::Forward f = m.predict(b, view);
        sq += (f.pred.value().mat() - b.tgt_x).squaredNorm();
        count += static_cast<double>(b.tgt_x.size());
    }
    return {sq, count};
}

}  // namespace

TrainLog train_system(const model::Model& m, const subnet::Backbone& bb,
                      subnet::ScoreSet& scores,
                      const std::vector<const model::PreparedWindow*>& windows,
                      const TrainConfig& tc, std::uint64_t seed, int system_index,
                      BatchScheme scheme) {
    tc.validate();
    if (windows.empty()) throw ConfigError("no training windows supplied");

    subnet::ParamView view = subnet::ParamView::trainable(bb, scores, tc.strategy);
    AdamW opt(scores.all(), tc);
    Rng order_rng(derive_seed(seed, {1}));
    Rng noise_rng(derive_seed(seed, {2}));

    TrainLog log;
    log.system_index = system_index;
    const std::size_t n = windows.size();
    const auto bs = static_cast<std::size_t>(tc.batch_size);
    const std::size_t batches_per_epoch = (n + bs - 1) / bs;

    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        std::vector<std::size_t> order;
        if (scheme == BatchScheme::Shuffle) order = shuffled_indices(n, order_rng);
        double loss_sum = 0.0;
        for (std::size_t batch = 0; batch < batches_per_epoch; ++batch) {
            std::vector<const model::PreparedWindow*> part;
            if (scheme == BatchScheme::Shuffle) {
                for (std::size_t k = batch * bs; k < std::min((batch + 1) * bs, n); ++k)
                    part.push_back(windows[order[k]]);
            } else {
                for (std::size_t k = 0; k < std::min(bs, n); ++k)
                    part.push_back(windows[static_cast<std::size_t>(
                        order_rng.uniform_int(static_cast<std::uint64_t>(n)))]);
            }
            try {
                model::PreparedBatch b = model::collate(part, m.config());
                model::PredictOptions opt_fwd;
                opt_fwd.sample = true;
                opt_fwd.rng = &noise_rng;
                opt_fwd.training = true;
                opt_fwd.dropout_rng = &noise_rng;
                model::Forward f = m.predict(b, view, opt_fwd);
                ad::Var loss = m.elbo_loss(f, b);
                opt.zero_grad();
                ad::backward(loss);
                opt.step();
                loss_sum += loss.value().value();
            } catch (const NumericError& e) {
                throw NumericError("training diverged (system " +
                                   std::to_string(system_index) + ", epoch " +
                                   std::to_string(epoch + 1) + ", batch " +
                                   std::to_string(batch + 1) + "): " + e.what());
            }
        }
        log.epoch_loss.push_back(loss_sum / static_cast<double>(batches_per_epoch));
    }
    return log;
}

double evaluate(const model::Model& m, const subnet::ParamView& view,
                const std::vector<const model::PreparedWindow*>& windows, int chunk) {
    if (windows.empty()) throw ConfigError("no evaluation windows supplied");
    if (chunk <= 0) throw ConfigError("eval_chunk must be positive");
    auto [sq, count] = evaluate_sums(m, view, windows, chunk);
    return sq / count;
}

std::vector<int> select_masks(const model::Model& m, const subnet::Backbone& bb,
                              const subnet::MaskPool& pool,
                              const std::vector<data::ObservationWindow>& windows,
                              int chunk) {
    if (pool.size() == 0) throw ConfigError("mask pool is empty");
    if (windows.empty()) return {};
    if (chunk <= 0) throw ConfigError("eval_chunk must be positive");

    std::vector<model::PreparedWindow> probes;
    probes.reserve(windows.size());
    for (const auto& w : windows) {
        try {
            probes.push_back(model::prepare_window(data::split_window_at(w, w.t1 / 2.0),
                                                   m.config()));
        } catch (const ConfigError& e) {
            throw ConfigError(std::string("selection window too narrow: ") + e.what() +
                              "; widen the observation window");
        }
    }

    // error of every (window, pool entry) pair
    Matrix err(static_cast<Eigen::Index>(windows.size()),
               static_cast<Eigen::Index>(pool.size()));
    ad::NoGradGuard ng;
    for (std::size_t entry = 0; entry < pool.size(); ++entry) {
        subnet::ParamView view = subnet::ParamView::frozen(bb, pool.masks_of(entry));
        for (std::size_t at = 0; at < probes.size(); at += static_cast<std::size_t>(chunk)) {
            std::vector<const model::PreparedWindow*> part;
            for (std::size_t k = at;
                 k < std::min(at + static_cast<std::size_t>(chunk), probes.size()); ++k)
                part.push_back(&probes[k]);
            model::PreparedBatch b = model::collate(part, m.config());
            model::Forward f = m.predict(b, view);
            for (std::size_t k = 0; k < part.size(); ++k) {
                auto [begin, end] = b.window_targets[k];
                const auto rows = static_cast<Eigen::Index>(end - begin);
                double sq = (f.pred.value().mat().middleRows(begin, rows) -
                             b.tgt_x.middleRows(begin, rows))
                                .squaredNorm();
                err(static_cast<Eigen::Index>(at + k), static_cast<Eigen::Index>(entry)) =
                    sq / static_cast<double>(rows * b.tgt_x.cols());
            }
        }
    }

    std::vector<int> chosen(windows.size());
    for (std::size_t w = 0; w < windows.size(); ++w) {
        double best = err(static_cast<Eigen::Index>(w), 0);
        int best_sys = pool.system_of(0);
        for (std::size_t entry = 1; entry < pool.size(); ++entry) {
            double e = err(static_cast<Eigen::Index>(w), static_cast<Eigen::Index>(entry));
            int sys = pool.system_of(entry);
            if (e < best || (e == best && sys < best_sys)) {
                best = e;
                best_sys = sys;
            }
        }
        chosen[w] = best_sys;
    }
    return chosen;
}

int select_mask(const model::Model& m, const subnet::Backbone& bb,
                const subnet::MaskPool& pool, const data::ObservationWindow& window) {
    return select_masks(m, bb, pool, {window}, 1).front();
}

double average_performance(const PerformanceMatrix& m) {
    if (m.n() == 0) throw ConfigError("performance matrix is empty");
    const auto& last = m.rows.back();
    if (static_cast<int>(last.size()) != m.n())
        throw ConfigError("last matrix row is not fully populated");
    double s = 0.0;
    for (double v : last) s += v;
    return s / static_cast<double>(m.n());
}

std::optional<double> average_forgetting(const PerformanceMatrix& m) {
    const int n = m.n();
    if (n <= 1) return std::nullopt;
    const auto& last = m.rows.back();
    if (static_cast<int>(last.size()) != n)
        throw ConfigError("last matrix row is not fully populated");
    double s = 0.0;
    for (int j = 0; j + 1 < n; ++j) {
        if (static_cast<int>(m.rows[static_cast<std::size_t>(j)].size()) <= j)
            return std::nullopt;  // diagonal never filled (joint training)
        s += last[static_cast<std::size_t>(j)] -
             m.rows[static_cast<std::size_t>(j)][static_cast<std::size_t>(j)];
    }
    return s / static_cast<double>(n - 1);
}

SystemData prepare_system_data(const sim::SystemConfig& sc,
                               const std::vector<sim::Trajectory>& train,
                               const std::vector<sim::Trajectory>& test,
                               const TrainConfig& tc, std::uint64_t seed) {
    tc.validate();
    if (train.empty() || test.empty())
        throw ConfigError("need at least one training and one test trajectory");
    SystemData d;
    d.config = sc;
    for (std::size_t i = 0; i < train.size(); ++i)
        d.train_windows.push_back(
            data::make_window(train[i], tc.observe_fraction, tc.drop_rate,
                              derive_seed(seed, {seed_tag::kWindow, i})));
    for (std::size_t i = 0; i < test.size(); ++i)
        d.test_windows.push_back(
            data::make_window(test[i], tc.observe_fraction, tc.drop_rate,
                              derive_seed(seed, {seed_tag::kTestSet, i})));
    d.normalizer = data::Normalizer::fit(d.train_windows);
    for (auto& w : d.train_windows) d.normalizer.apply(w);
    for (auto& w : d.test_windows) d.normalizer.apply(w);
    return d;
}

namespace {

std::vector<const model::PreparedWindow*> ptrs(const std::vector<model::PreparedWindow>& v) {
    std::vector<const model::PreparedWindow*> p;
    p.reserve(v.size());
    for (const auto& w : v) p.push_back(&w);
    return p;
}

}  // namespace

SequenceResult run_sequence(const model::ModelConfig& mc, const TrainConfig& tc,
                            Method method, Selection selection,
                            const std::vector<SystemData>& systems,
                            std::uint64_t seed) {
    tc.validate();
    if (systems.empty()) throw ConfigError("sequence has no systems");
    const int n = static_cast<int>(systems.size());

    SequenceResult out;
    out.backbone_seed = derive_seed(seed, {seed_tag::kBackbone});
    subnet::Backbone bb(model::layer_shapes(mc), out.backbone_seed);
    model::Model m(mc);

    std::vector<std::vector<model::PreparedWindow>> train_pw(static_cast<std::size_t>(n));
    std::vector<std::vector<model::PreparedWindow>> test_pw(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const auto& d = systems[static_cast<std::size_t>(i)];
        if (d.train_windows.empty() || d.test_windows.empty())
            throw ConfigError("system " + std::to_string(i) + " has no windows");
        for (const auto& w : d.train_windows)
            train_pw[static_cast<std::size_t>(i)].push_back(model::prepare_window(w, mc));
        for (const auto& w : d.test_windows)
            test_pw[static_cast<std::size_t>(i)].push_back(model::prepare_window(w, mc));
    }

    out.matrix.rows.assign(static_cast<std::size_t>(n), {});

    auto eval_with = [&](const subnet::ParamView& view, int j) {
        return evaluate(m, view, ptrs(test_pw[static_cast<std::size_t>(j)]), tc.eval_chunk);
    };

    if (method == Method::MSGODE) {
        for (int i = 0; i < n; ++i) {
            subnet::ScoreSet scores(bb, derive_seed(seed, {seed_tag::kScores,
                                                           static_cast<std::uint64_t>(i)}));
            out.logs.push_back(train_system(
                m, bb, scores, ptrs(train_pw[static_cast<std::size_t>(i)]), tc,
                derive_seed(seed, {seed_tag::kTrain, static_cast<std::uint64_t>(i)}), i));
            out.pool.append(i, subnet::snapshot_masks(scores, tc.strategy));

            auto& row = out.matrix.rows[static_cast<std::size_t>(i)];
            row.resize(static_cast<std::size_t>(i) + 1);
            for (int j = 0; j <= i; ++j) {
                if (selection == Selection::Oracle) {
                    subnet::ParamView view = subnet::ParamView::frozen(
                        bb, out.pool.masks_of(static_cast<std::size_t>(j)));
                    row[static_cast<std::size_t>(j)] = eval_with(view, j);
                } else {
                    const auto& d = systems[static_cast<std::size_t>(j)];
                    std::vector<int> sel =
                        select_masks(m, bb, out.pool, d.test_windows, tc.eval_chunk);
                    double sq = 0.0, count = 0.0;
                    for (std::size_t entry = 0; entry < out.pool.size(); ++entry) {
                        std::vector<const model::PreparedWindow*> part;
                        for (std::size_t k = 0; k < sel.size(); ++k)
                            if (sel[k] == out.pool.system_of(entry))
                                part.push_back(&test_pw[static_cast<std::size_t>(j)][k]);
                        if (part.empty()) continue;
                        subnet::ParamView view =
                            subnet::ParamView::frozen(bb, out.pool.masks_of(entry));
                        auto [s, c] = evaluate_sums(m, view, part, tc.eval_chunk);
                        sq += s;
                        count += c;
                    }
                    row[static_cast<std::size_t>(j)] = sq / count;
                }
            }
            if (i == n - 1) out.final_scores = std::move(scores);
        }
    } else if (method == Method::FineTune) {
        subnet::ScoreSet scores(bb, derive_seed(seed, {seed_tag::kScores, 0}));
        for (int i = 0; i < n; ++i) {
            out.logs.push_back(train_system(
                m, bb, scores, ptrs(train_pw[static_cast<std::size_t>(i)]), tc,
                derive_seed(seed, {seed_tag::kTrain, static_cast<std::uint64_t>(i)}), i));
            subnet::MaskSet current = subnet::snapshot_masks(scores, tc.strategy);
            subnet::ParamView view = subnet::ParamView::frozen(bb, current);
            auto& row = out.matrix.rows[static_cast<std::size_t>(i)];
            row.resize(static_cast<std::size_t>(i) + 1);
            for (int j = 0; j <= i; ++j) row[static_cast<std::size_t>(j)] = eval_with(view, j);
        }
        out.final_scores = std::move(scores);
    } else {  // Joint
        subnet::ScoreSet scores(bb, derive_seed(seed, {seed_tag::kScores, 0}));
        std::vector<const model::PreparedWindow*> all;
        for (auto& v : train_pw)
            for (const auto& w : v) all.push_back(&w);
        out.logs.push_back(train_system(m, bb, scores, all, tc,
                                        derive_seed(seed, {seed_tag::kTrain, 0}), -1,
                                        BatchScheme::Uniform));
        subnet::MaskSet final_mask = subnet::snapshot_masks(scores, tc.strategy);
        subnet::ParamView view = subnet::ParamView::frozen(bb, final_mask);
        auto& row = out.matrix.rows[static_cast<std::size_t>(n) - 1];
        row.resize(static_cast<std::size_t>(n));
        for (int j = 0; j < n; ++j) row[static_cast<std::size_t>(j)] = eval_with(view, j);
        out.final_scores = std::move(scores);
    }
    return out;
}

void save_checkpoint(const std::string& path, std::uint64_t backbone_seed,
                     const std::string& method, const subnet::ScoreSet& scores,
                     const subnet::MaskPool& pool) {
    json cfg;
    cfg["container"] = "checkpoint";
    cfg["schema_version"] = 1;
    cfg["backbone_seed"] = backbone_seed;
    cfg["method"] = method;
    io::Writer w;
    scores.serialize(w);
    pool.serialize(w);
    io::write_container(path, cfg.dump(), w.buffer());
}

Checkpoint load_checkpoint(const std::string& path, const subnet::Backbone& backbone) {
    io::Container c = io::read_container(path);
    json cfg;
    try {
        cfg = json::parse(c.config_json);
    } catch (const json::parse_error& e) {
        throw DataError("malformed checkpoint header in " + path + ": " + e.what());
    }
    if (cfg.value("container", "") != std::string("checkpoint"))
        throw DataError("not a checkpoint container: " + path);
    io::Reader r(c.payload);
    subnet::ScoreSet scores = subnet::ScoreSet::deserialize(r, backbone);
    subnet::MaskPool pool = subnet::MaskPool::deserialize(r, backbone);
    if (!r.at_end()) throw DataError("trailing bytes in checkpoint " + path);
    return Checkpoint{cfg["backbone_seed"].get<std::uint64_t>(),
                      cfg.value("method", ""), std::move(scores), std::move(pool)};
}

}  // namespace msgode::train
