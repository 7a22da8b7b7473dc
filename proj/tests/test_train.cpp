#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "doctest.h"
#include "msgode/container.hpp"
#include "msgode/train.hpp"
#include "test_util.hpp"

using namespace msgode;
using train::Method;
using train::Selection;

namespace {

model::ModelConfig tiny_model() {
    model::ModelConfig c;
    c.d_h = 8;
    c.n_enc_layers = 2;
    c.d_z = 3;
    c.d_edge = 4;
    c.f_int_hidden = 6;
    c.posterior_hidden = 5;
    return c;
}

train::TrainConfig tiny_train() {
    train::TrainConfig t;
    t.epochs = 2;
    t.batch_size = 2;
    t.eval_chunk = 4;
    return t;
}

sim::SystemConfig tiny_system(sim::SystemKind kind, double strength) {
    sim::SystemConfig sc;
    sc.kind = kind;
    sc.n_particles = 3;
    sc.box_size = 5.0;
    sc.interaction_strength = strength;
    sc.sim_steps = 600;
    sc.sample_every = 10;
    return sc;
}

train::SystemData tiny_data(const sim::SystemConfig& sc, std::uint64_t seed,
                            int n_train = 4, int n_test = 3) {
    auto train_t = sim::generate_dataset(sc, n_train, derive_seed(seed, {1}));
    auto test_t = sim::generate_dataset(sc, n_test, derive_seed(seed, {2}));
    return train::prepare_system_data(sc, train_t, test_t, tiny_train(), seed);
}

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) : path("/tmp/msgode_train_" + name) {}
    ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_SUITE_BEGIN("train");

TEST_CASE("kl matches a monte-carlo estimate of the divergence") {
    const double mu = 0.7, sg = 0.6;
    ad::Var kl = model::kl_standard_normal(
        ad::Var::constant(Tensor::from_matrix(Matrix::Constant(1, 1, mu))),
        ad::Var::constant(Tensor::from_matrix(Matrix::Constant(1, 1, sg))));

    Rng rng(2024);
    const int n = 1000000;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        double z = mu + sg * rng.normal();
        double log_q = -std::log(sg) - (z - mu) * (z - mu) / (2.0 * sg * sg);
        double log_p = -z * z / 2.0;
        acc += log_q - log_p;
    }
    acc /= n;
    CHECK(kl.value().value() == doctest::Approx(acc).epsilon(0.01));
    CHECK(kl.value().value() >= 0.0);
}

TEST_CASE("average performance and forgetting formulas") {
    train::PerformanceMatrix m;
    m.rows = {{0.1}, {0.15, 0.1}, {0.3, 0.2, 0.1}};
    CHECK(train::average_performance(m) == doctest::Approx(0.2).epsilon(1e-12));
    REQUIRE(train::average_forgetting(m).has_value());
    CHECK(*train::average_forgetting(m) == doctest::Approx(0.15).epsilon(1e-12));

    train::PerformanceMatrix c;
    c.rows = {{0.4}, {0.4, 0.4}, {0.4, 0.4, 0.4}};
    CHECK(train::average_performance(c) == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(*train::average_forgetting(c) == doctest::Approx(0.0).epsilon(1e-12));

    // loop oracle on a random 5x5 lower triangle
    Rng rng(7);
    train::PerformanceMatrix r;
    for (int i = 0; i < 5; ++i) {
        r.rows.emplace_back();
        for (int j = 0; j <= i; ++j) r.rows.back().push_back(rng.uniform(0.0, 1.0));
    }
    double ap = 0.0;
    for (int j = 0; j < 5; ++j) ap += r.rows[4][static_cast<std::size_t>(j)];
    ap /= 5.0;
    double af = 0.0;
    for (int j = 0; j < 4; ++j)
        af += r.rows[4][static_cast<std::size_t>(j)] -
              r.rows[static_cast<std::size_t>(j)][static_cast<std::size_t>(j)];
    af /= 4.0;
    CHECK(train::average_performance(r) == doctest::Approx(ap).epsilon(1e-12));
    CHECK(*train::average_forgetting(r) == doctest::Approx(af).epsilon(1e-12));

    train::PerformanceMatrix single;
    single.rows = {{0.2}};
    CHECK(train::average_performance(single) == doctest::Approx(0.2));
    CHECK_FALSE(train::average_forgetting(single).has_value());

    // joint shape: only the last row exists
    train::PerformanceMatrix joint;
    joint.rows = {{}, {}, {0.1, 0.2, 0.3}};
    CHECK(train::average_performance(joint) == doctest::Approx(0.2).epsilon(1e-12));
    CHECK_FALSE(train::average_forgetting(joint).has_value());

    train::PerformanceMatrix incomplete;
    incomplete.rows = {{0.1}, {0.1}};
    CHECK_THROWS_AS(train::average_performance(incomplete), ConfigError);
}

TEST_CASE("optimizer step matches the closed form and minimizes a quadratic") {
    train::TrainConfig tc;
    tc.lr = 0.1;
    tc.weight_decay = 0.01;
    ad::Var p = ad::Var::leaf(Tensor::scalar(1.0));
    train::AdamW opt({p}, tc);
    ad::Var loss = ad::scale(p, 2.0);
    ad::backward(loss);
    opt.step();
    const double expect =
        1.0 - 0.1 * (2.0 / (2.0 + tc.adam_eps)) - 0.1 * 0.01 * 1.0;
    CHECK(p.value().value() == doctest::Approx(expect).epsilon(1e-14));

    train::TrainConfig tq;
    tq.lr = 0.05;
    tq.weight_decay = 0.0;
    ad::Var q = ad::Var::leaf(Tensor::from_vector((Vector(2) << 1.0, -2.0).finished()));
    train::AdamW opt2({q}, tq);
    for (int i = 0; i < 400; ++i) {
        opt2.zero_grad();
        ad::Var l = ad::sum(ad::square(ad::add_scalar(q, -3.0)));
        ad::backward(l);
        opt2.step();
    }
    CHECK((q.value().mat().array() - 3.0).abs().maxCoeff() < 0.05);
    CHECK(opt2.steps_taken() == 400);
}

TEST_CASE("evaluation equals a flat loop over every target entry") {
    model::ModelConfig mc = tiny_model();
    model::Model m(mc);
    subnet::Backbone bb(model::layer_shapes(mc), 5);
    subnet::ScoreSet scores(bb, 6);
    subnet::MaskSet masks = subnet::snapshot_masks(scores, subnet::MaskStrategy::fast());
    subnet::ParamView view = subnet::ParamView::frozen(bb, masks);

    train::SystemData d = tiny_data(tiny_system(sim::SystemKind::Spring, 0.1), 31);
    std::vector<model::PreparedWindow> pw;
    for (const auto& w : d.test_windows) pw.push_back(model::prepare_window(w, mc));
    std::vector<const model::PreparedWindow*> ptrs;
    for (const auto& w : pw) ptrs.push_back(&w);

    double sq = 0.0, count = 0.0;
    {
        ad::NoGradGuard ng;
        for (const auto* w : ptrs) {
            model::PreparedBatch b = model::collate({w}, mc);
            model::Forward f = m.predict(b, view);
            for (Eigen::Index r = 0; r < b.tgt_x.rows(); ++r)
                for (Eigen::Index c = 0; c < b.tgt_x.cols(); ++c) {
                    double e = f.pred.value()(r, c) - b.tgt_x(r, c);
                    sq += e * e;
                    count += 1.0;
                }
        }
    }
    double flat = sq / count;
    CHECK(train::evaluate(m, view, ptrs, 1) == doctest::Approx(flat).epsilon(1e-12));
    CHECK(train::evaluate(m, view, ptrs, 2) == doctest::Approx(flat).epsilon(1e-12));

    std::vector<const model::PreparedWindow*> rev(ptrs.rbegin(), ptrs.rend());
    CHECK(train::evaluate(m, view, rev, 2) == doctest::Approx(flat).epsilon(1e-12));
}

TEST_CASE("mask selection: singleton pools, ties and narrow windows") {
    model::ModelConfig mc = tiny_model();
    model::Model m(mc);
    subnet::Backbone bb(model::layer_shapes(mc), 15);
    subnet::ScoreSet s1(bb, 16), s2(bb, 17);
    subnet::MaskSet m1 = subnet::snapshot_masks(s1, subnet::MaskStrategy::fast());
    subnet::MaskSet m2 = subnet::snapshot_masks(s2, subnet::MaskStrategy::fast());

    train::SystemData d = tiny_data(tiny_system(sim::SystemKind::Spring, 0.1), 33);

    subnet::MaskPool solo;
    solo.append(4, m1);
    for (const auto& w : d.test_windows) CHECK(train::select_mask(m, bb, solo, w) == 4);

    subnet::MaskPool dup;
    dup.append(2, m1);
    dup.append(0, m1);  // identical masks: equal errors, lowest system index wins
    for (const auto& w : d.test_windows) CHECK(train::select_mask(m, bb, dup, w) == 0);

    subnet::MaskPool pair;
    pair.append(0, m1);
    pair.append(1, m2);
    std::vector<int> a = train::select_masks(m, bb, pair, d.test_windows, 2);
    std::vector<int> b = train::select_masks(m, bb, pair, d.test_windows, 2);
    CHECK(a == b);
    REQUIRE(a.size() == d.test_windows.size());
    for (int x : a) CHECK((x == 0 || x == 1));

    subnet::MaskPool empty;
    CHECK_THROWS_AS(train::select_mask(m, bb, empty, d.test_windows[0]), ConfigError);

    data::ObservationWindow narrow;
    narrow.n_objects = 2;
    narrow.adjacency = Matrix::Zero(2, 2);
    narrow.adjacency(0, 1) = narrow.adjacency(1, 0) = 1.0;
    narrow.obs_obj = {0, 0, 1};
    narrow.obs_time = {0.0, 0.5, 0.5};  // object 1 has nothing before t1/2
    narrow.obs_x = testutil::rand_dense(3, 4, 8);
    narrow.tgt_obj = {0, 1};
    narrow.tgt_time = {0.8, 0.8};
    narrow.tgt_x = testutil::rand_dense(2, 4, 9);
    narrow.t1 = 0.6;
    narrow.grid_step = 0.1;
    try {
        train::select_mask(m, bb, solo, narrow);
        FAIL("expected a ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("widen") != std::string::npos);
    }
}

TEST_CASE("score training is deterministic and leaves the backbone untouched") {
    model::ModelConfig mc = tiny_model();
    model::Model m(mc);
    subnet::Backbone bb(model::layer_shapes(mc), 25);
    const std::uint32_t checksum = bb.weights_checksum();

    train::SystemData d = tiny_data(tiny_system(sim::SystemKind::Spring, 0.1), 35);
    std::vector<model::PreparedWindow> pw;
    for (const auto& w : d.train_windows) pw.push_back(model::prepare_window(w, mc));
    std::vector<const model::PreparedWindow*> ptrs;
    for (const auto& w : pw) ptrs.push_back(&w);

    train::TrainConfig tc = tiny_train();
    auto run = [&](std::uint64_t seed) {
        subnet::ScoreSet scores(bb, 26);
        train::TrainLog log = train::train_system(m, bb, scores, ptrs, tc, seed, 0);
        return std::make_pair(log, subnet::snapshot_masks(scores, tc.strategy));
    };
    auto [log1, mask1] = run(99);
    auto [log2, mask2] = run(99);
    REQUIRE(log1.epoch_loss.size() == 2);
    CHECK(log1.epoch_loss == log2.epoch_loss);
    for (std::size_t l = 0; l < mask1.masks.size(); ++l)
        CHECK((mask1.masks[l].mat() - mask2.masks[l].mat()).cwiseAbs().maxCoeff() == 0.0);

    auto [log3, mask3] = run(100);
    CHECK(log1.epoch_loss != log3.epoch_loss);

    CHECK(bb.weights_checksum() == checksum);
    for (double v : log1.epoch_loss) CHECK(std::isfinite(v));

    // scores moved away from their initialization
    subnet::ScoreSet fresh(bb, 26);
    subnet::ScoreSet trained(bb, 26);
    train::train_system(m, bb, trained, ptrs, tc, 99, 0);
    bool moved = false;
    for (std::size_t l = 0; l < fresh.size(); ++l)
        if ((fresh.score(l).value().mat() - trained.score(l).value().mat())
                .cwiseAbs()
                .maxCoeff() > 0.0)
            moved = true;
    CHECK(moved);
}

TEST_CASE("training reduces the loss on a small overfit set") {
    model::ModelConfig mc = tiny_model();
    model::Model m(mc);
    subnet::Backbone bb(model::layer_shapes(mc), 45);
    subnet::ScoreSet scores(bb, 46);

    train::SystemData d = tiny_data(tiny_system(sim::SystemKind::Spring, 0.1), 47, 6, 1);
    std::vector<model::PreparedWindow> pw;
    for (const auto& w : d.train_windows) pw.push_back(model::prepare_window(w, mc));
    std::vector<const model::PreparedWindow*> ptrs;
    for (const auto& w : pw) ptrs.push_back(&w);

    train::TrainConfig tc = tiny_train();
    tc.epochs = 8;
    tc.batch_size = 3;
    tc.lr = 2e-3;
    train::TrainLog log = train::train_system(m, bb, scores, ptrs, tc, 48, 0);
    REQUIRE(log.epoch_loss.size() == 8);
    CHECK(log.epoch_loss.back() < log.epoch_loss.front());
}

TEST_CASE("non-finite training losses abort with the batch named") {
    model::ModelConfig mc = tiny_model();
    model::Model m(mc);
    subnet::Backbone bb(model::layer_shapes(mc), 55);
    subnet::ScoreSet scores(bb, 56);

    train::SystemData d = tiny_data(tiny_system(sim::SystemKind::Spring, 0.1), 57);
    d.train_windows[1].obs_x(0, 0) = std::numeric_limits<double>::infinity();
    std::vector<model::PreparedWindow> pw;
    for (const auto& w : d.train_windows) pw.push_back(model::prepare_window(w, mc));
    std::vector<const model::PreparedWindow*> ptrs;
    for (const auto& w : pw) ptrs.push_back(&w);

    try {
        train::train_system(m, bb, scores, ptrs, tiny_train(), 58, 3);
        FAIL("expected a NumericError");
    } catch (const NumericError& e) {
        std::string msg = e.what();
        CHECK(msg.find("system 3") != std::string::npos);
        CHECK(msg.find("epoch") != std::string::npos);
        CHECK(msg.find("batch") != std::string::npos);
    }
}

TEST_CASE("sequence runs: oracle forgetting is zero bit for bit") {
    model::ModelConfig mc = tiny_model();
    train::TrainConfig tc = tiny_train();
    std::vector<train::SystemData> systems{
        tiny_data(tiny_system(sim::SystemKind::Spring, 0.01), 61),
        tiny_data(tiny_system(sim::SystemKind::Charged, 1.0), 62)};

    train::SequenceResult r =
        train::run_sequence(mc, tc, Method::MSGODE, Selection::Oracle, systems, 63);
    REQUIRE(r.matrix.n() == 2);
    REQUIRE(r.matrix.rows[0].size() == 1);
    REQUIRE(r.matrix.rows[1].size() == 2);
    CHECK(r.matrix.rows[1][0] == r.matrix.rows[0][0]);  // frozen mask, frozen weights
    REQUIRE(train::average_forgetting(r.matrix).has_value());
    CHECK(*train::average_forgetting(r.matrix) == 0.0);
    CHECK(r.pool.size() == 2);
    REQUIRE(r.logs.size() == 2);
    CHECK(r.logs[0].system_index == 0);
    for (const auto& row : r.matrix.rows)
        for (double v : row) {
            CHECK(std::isfinite(v));
            CHECK(v >= 0.0);
        }

    train::SequenceResult r2 =
        train::run_sequence(mc, tc, Method::MSGODE, Selection::Oracle, systems, 63);
    CHECK(r.matrix.rows == r2.matrix.rows);

    train::SequenceResult ms =
        train::run_sequence(mc, tc, Method::MSGODE, Selection::ModeSwitching, systems, 63);
    REQUIRE(ms.matrix.rows[1].size() == 2);
    for (double v : ms.matrix.rows[1]) CHECK(std::isfinite(v));
    // after the first system the pool has one mask, selection is forced and
    // mode switching coincides with the oracle exactly
    CHECK(ms.matrix.rows[0][0] == r.matrix.rows[0][0]);
}

TEST_CASE("sequence runs: fine-tune and joint shapes") {
    model::ModelConfig mc = tiny_model();
    train::TrainConfig tc = tiny_train();
    std::vector<train::SystemData> systems{
        tiny_data(tiny_system(sim::SystemKind::Spring, 0.01), 71),
        tiny_data(tiny_system(sim::SystemKind::Charged, 1.0), 72)};

    train::SequenceResult ft =
        train::run_sequence(mc, tc, Method::FineTune, Selection::Oracle, systems, 73);
    REQUIRE(ft.matrix.rows[0].size() == 1);
    REQUIRE(ft.matrix.rows[1].size() == 2);
    CHECK(ft.pool.size() == 0);
    CHECK(train::average_forgetting(ft.matrix).has_value());

    train::SequenceResult jt =
        train::run_sequence(mc, tc, Method::Joint, Selection::Oracle, systems, 74);
    CHECK(jt.matrix.rows[0].empty());
    REQUIRE(jt.matrix.rows[1].size() == 2);
    CHECK_FALSE(train::average_forgetting(jt.matrix).has_value());
    CHECK(train::average_performance(jt.matrix) >= 0.0);
    REQUIRE(jt.logs.size() == 1);

    // single-system sequence degenerates to one evaluation
    std::vector<train::SystemData> one{systems[0]};
    train::SequenceResult single =
        train::run_sequence(mc, tc, Method::MSGODE, Selection::Oracle, one, 75);
    CHECK(single.matrix.n() == 1);
    REQUIRE(single.matrix.rows[0].size() == 1);
    CHECK_FALSE(train::average_forgetting(single.matrix).has_value());
}

TEST_CASE("checkpoints round-trip scores and pooled masks") {
    model::ModelConfig mc = tiny_model();
    subnet::Backbone bb(model::layer_shapes(mc), 81);
    subnet::ScoreSet scores(bb, 82);
    subnet::MaskPool pool;
    pool.append(0, subnet::snapshot_masks(scores, subnet::MaskStrategy::fast()));
    subnet::ScoreSet other(bb, 83);
    pool.append(1, subnet::snapshot_masks(other, subnet::MaskStrategy::topk(0.3)));

    TempFile f("ckpt.cdl");
    train::save_checkpoint(f.path, 81, "msgode", scores, pool);
    train::Checkpoint ck = train::load_checkpoint(f.path, bb);
    CHECK(ck.backbone_seed == 81);
    CHECK(ck.method == "msgode");
    REQUIRE(ck.scores.size() == scores.size());
    for (std::size_t l = 0; l < scores.size(); ++l)
        CHECK((ck.scores.score(l).value().mat() - scores.score(l).value().mat())
                  .cwiseAbs()
                  .maxCoeff() == 0.0);
    REQUIRE(ck.pool.size() == 2);
    CHECK(ck.pool.system_of(1) == 1);
    for (std::size_t l = 0; l < pool.masks_of(1).masks.size(); ++l)
        CHECK((ck.pool.masks_of(1).masks[l].mat() - pool.masks_of(1).masks[l].mat())
                  .cwiseAbs()
                  .maxCoeff() == 0.0);

    // a dataset container is refused as a checkpoint
    TempFile g("not_ckpt.cdl");
    sim::SystemConfig sc = tiny_system(sim::SystemKind::Spring, 0.1);
    io::save_dataset(g.path, sc, sim::generate_dataset(sc, 1, 1));
    CHECK_THROWS_AS(train::load_checkpoint(g.path, bb), DataError);
}

TEST_SUITE_END();
