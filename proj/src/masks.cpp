#include "msgode/masks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "msgode/errors.hpp"

namespace msgode::subnet {

Backbone::Backbone(std::vector<LayerShape> shapes, std::uint64_t seed)
    : shapes_(std::move(shapes)) {
    Rng rng(seed);
    weights_.reserve(shapes_.size());
    for (const LayerShape& s : shapes_) {
        if (s.out_dim < 1 || s.in_dim < 1)
            throw ConfigError("layer " + s.name + " has empty shape");
        const double std = std::sqrt(2.0 / static_cast<double>(s.in_dim));
        Tensor w = Tensor::zeros(s.out_dim, s.in_dim);
        for (Eigen::Index i = 0; i < s.out_dim; ++i)
            for (Eigen::Index j = 0; j < s.in_dim; ++j)
                w(i, j) = rng.bernoulli(0.5) ? std : -std;
        weights_.push_back(std::move(w));
    }
}

std::size_t Backbone::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < shapes_.size(); ++i)
        if (shapes_[i].name == name) return i;
    throw ConfigError("unknown backbone layer: " + name);
}

std::uint32_t Backbone::weights_checksum() const {
    io::Writer w;
    for (const Tensor& t : weights_)
        w.bytes(t.mat().data(), static_cast<std::size_t>(t.size()) * sizeof(double));
    return io::crc32_bytes(w.buffer().data(), w.buffer().size());
}

ScoreSet::ScoreSet(const Backbone& backbone, std::uint64_t seed) {
    Rng rng(seed);
    scores_.reserve(backbone.n_layers());
    for (const LayerShape& s : backbone.shapes()) {
        const double bound = std::sqrt(6.0 / static_cast<double>(s.in_dim));
        Tensor t = Tensor::zeros(s.out_dim, s.in_dim);
        for (Eigen::Index i = 0; i < s.out_dim; ++i)
            for (Eigen::Index j = 0; j < s.in_dim; ++j) t(i, j) = rng.uniform(-bound, bound);
        scores_.push_back(ad::Var::leaf(std::move(t)));
    }
}

void ScoreSet::serialize(io::Writer& w) const {
    w.u64(scores_.size());
    for (const ad::Var& v : scores_) {
        const Tensor& t = v.value();
        w.u64(static_cast<std::uint64_t>(t.rows()));
        w.u64(static_cast<std::uint64_t>(t.cols()));
        w.f64_array(t.mat().data(), static_cast<std::size_t>(t.size()));
    }
}

ScoreSet ScoreSet::deserialize(io::Reader& r, const Backbone& backbone) {
    std::uint64_t n = r.u64();
    if (n != backbone.n_layers()) throw DataError("score set layer count mismatch");
    std::vector<ad::Var> scores;
    scores.reserve(n);
    for (std::uint64_t k = 0; k < n; ++k) {
        Eigen::Index rows = static_cast<Eigen::Index>(r.u64());
        Eigen::Index cols = static_cast<Eigen::Index>(r.u64());
        const LayerShape& s = backbone.shapes()[k];
        if (rows != s.out_dim || cols != s.in_dim)
            throw DataError("score shape mismatch for layer " + s.name);
        std::vector<double> flat = r.f64_array();
        if (flat.size() != static_cast<std::size_t>(rows * cols))
            throw DataError("score payload size mismatch for layer " + s.name);
        Tensor t = Tensor::zeros(rows, cols);
        std::copy(flat.begin(), flat.end(), t.mat().data());
        scores.push_back(ad::Var::leaf(std::move(t)));
    }
    return ScoreSet(std::move(scores));
}

Tensor binarize_fast(const Tensor& scores) {
    Tensor m = Tensor::zeros_like(scores);
    m.mat() = (scores.mat().array() > 0.0).cast<double>().matrix();
    return m;
}

Tensor binarize_topk(const Tensor& scores, double ratio) {
    if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("top-k ratio must be in (0, 1]");
    const Eigen::Index n = scores.size();
    const Eigen::Index k =
        static_cast<Eigen::Index>(std::ceil(ratio * static_cast<double>(n)));
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    // row-major flat order; ties go to the lower flat index
    const double* flat = scores.mat().data();
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(),
                      [flat](Eigen::Index a, Eigen::Index b) {
                          if (flat[a] != flat[b]) return flat[a] > flat[b];
                          return a < b;
                      });
    Tensor m = Tensor::zeros_like(scores);
    double* out = m.mat().data();
    for (Eigen::Index i = 0; i < k; ++i) out[idx[static_cast<std::size_t>(i)]] = 1.0;
    return m;
}

Tensor binarize(const Tensor& scores, const MaskStrategy& strategy) {
    return strategy.kind == BinarizeKind::Fast ? binarize_fast(scores)
                                               : binarize_topk(scores, strategy.ratio);
}

Eigen::Index popcount(const Tensor& mask) {
    return static_cast<Eigen::Index>(std::llround(mask.mat().sum()));
}

void MaskSet::serialize(io::Writer& w) const {
    w.u64(masks.size());
    for (const Tensor& m : masks) {
        w.u64(static_cast<std::uint64_t>(m.rows()));
        w.u64(static_cast<std::uint64_t>(m.cols()));
        std::vector<bool> bits(static_cast<std::size_t>(m.size()));
        const double* flat = m.mat().data();
        for (Eigen::Index i = 0; i < m.size(); ++i) bits[static_cast<std::size_t>(i)] = flat[i] != 0.0;
        w.bits(bits);
    }
}

MaskSet MaskSet::deserialize(io::Reader& r, const Backbone& backbone) {
    std::uint64_t n = r.u64();
    if (n != backbone.n_layers()) throw DataError("mask set layer count mismatch");
    MaskSet out;
    out.masks.reserve(n);
    for (std::uint64_t k = 0; k < n; ++k) {
        Eigen::Index rows = static_cast<Eigen::Index>(r.u64());
        Eigen::Index cols = static_cast<Eigen::Index>(r.u64());
        const LayerShape& s = backbone.shapes()[k];
        if (rows != s.out_dim || cols != s.in_dim)
            throw DataError("mask shape mismatch for layer " + s.name);
        std::vector<bool> bits = r.bits();
        if (bits.size() != static_cast<std::size_t>(rows * cols))
            throw DataError("mask payload size mismatch for layer " + s.name);
        Tensor m = Tensor::zeros(rows, cols);
        double* flat = m.mat().data();
        for (std::size_t i = 0; i < bits.size(); ++i) flat[i] = bits[i] ? 1.0 : 0.0;
        out.masks.push_back(std::move(m));
    }
    return out;
}

MaskSet snapshot_masks(const ScoreSet& scores, const MaskStrategy& strategy) {
    MaskSet out;
    out.masks.reserve(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i)
        out.masks.push_back(binarize(scores.score(i).value(), strategy));
    return out;
}

void MaskPool::append(int system_index, MaskSet masks) {
    entries_.emplace_back(system_index, std::move(masks));
}

void MaskPool::serialize(io::Writer& w) const {
    w.u64(entries_.size());
    for (const auto& [system, masks] : entries_) {
        w.u32(static_cast<std::uint32_t>(system));
        masks.serialize(w);
    }
}

MaskPool MaskPool::deserialize(io::Reader& r, const Backbone& backbone) {
    MaskPool pool;
    std::uint64_t n = r.u64();
    for (std::uint64_t k = 0; k < n; ++k) {
        int system = static_cast<int>(r.u32());
        pool.append(system, MaskSet::deserialize(r, backbone));
    }
    return pool;
}

ParamView ParamView::trainable(const Backbone& b, ScoreSet& s, MaskStrategy strategy) {
    ParamView v;
    v.backbone_ = &b;
    v.mode_ = Mode::Trainable;
    v.scores_ = &s;
    v.strategy_ = strategy;
    return v;
}

ParamView ParamView::frozen(const Backbone& b, const MaskSet& m) {
    if (m.masks.size() != b.n_layers()) throw ConfigError("mask set does not match backbone");
    ParamView v;
    v.backbone_ = &b;
    v.mode_ = Mode::Frozen;
    v.masks_ = &m;
    return v;
}

ParamView ParamView::multiplier(const Backbone& b, const std::vector<Tensor>& mult) {
    if (mult.size() != b.n_layers()) throw ConfigError("multiplier list does not match backbone");
    ParamView v;
    v.backbone_ = &b;
    v.mode_ = Mode::Multiplier;
    v.mult_ = &mult;
    return v;
}

ad::Var ParamView::effective(std::size_t layer) const {
    const Tensor& w = backbone_->weight(layer);
    switch (mode_) {
        case Mode::Trainable: {
            ad::Var& s = scores_->score(layer);
            Tensor mask = binarize(s.value(), strategy_);
            return ad::mul(ad::straight_through(s, std::move(mask)), ad::Var::constant(w));
        }
        case Mode::Frozen: {
            const Tensor& m = masks_->masks.at(layer);
            if (!m.same_shape(w)) throw NumericError("mask shape mismatch");
            Tensor eff(w);
            eff.mat().array() *= m.mat().array();
            return ad::Var::constant(std::move(eff));
        }
        case Mode::Multiplier: {
            const Tensor& m = mult_->at(layer);
            if (!m.same_shape(w)) throw NumericError("multiplier shape mismatch");
            Tensor eff(w);
            eff.mat().array() *= m.mat().array();
            return ad::Var::constant(std::move(eff));
        }
    }
    throw NumericError("invalid parameter view");
}

ad::Var masked_linear(const ad::Var& x, const ParamView& params, std::size_t layer) {
    return ad::matmul(x, params.effective(layer), false, true);
}

ad::Var apply_dropout(const ad::Var& x, double rate, Rng& rng, bool training) {
    if (!training || rate == 0.0) return x;
    if (!(rate > 0.0 && rate < 1.0)) throw ConfigError("dropout rate must be in [0, 1)");
    Tensor keep = Tensor::zeros_like(x.value());
    const double scale = 1.0 / (1.0 - rate);
    for (Eigen::Index i = 0; i < keep.rows(); ++i)
        for (Eigen::Index j = 0; j < keep.cols(); ++j)
            if (!rng.bernoulli(rate)) keep(i, j) = scale;
    return ad::mul(x, ad::Var::constant(std::move(keep)));
}

}  // namespace msgode::subnet
