#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msgode/autodiff.hpp"
#include "msgode/container.hpp"
#include "msgode/rng.hpp"
#include "msgode/tensor.hpp"

namespace msgode::subnet {

// Weight matrices are stored [out_dim, in_dim]; a layer computes x W^T on
// row-major batches. component tags a layer as encoder/generator/decoder.
struct LayerShape {
    std::string name;
    Eigen::Index out_dim = 0;
    Eigen::Index in_dim = 0;
    char component = 'E';  // 'E', 'G' or 'D'
};

// Fixed random weights shared by every system; never mutated after
// construction. Entries are signed-constant Kaiming: magnitude
// sqrt(2/fan_in), sign drawn uniformly.
class Backbone {
public:
    Backbone(std::vector<LayerShape> shapes, std::uint64_t seed);

    const std::vector<LayerShape>& shapes() const { return shapes_; }
    std::size_t n_layers() const { return shapes_.size(); }
    const Tensor& weight(std::size_t layer) const { return weights_.at(layer); }
    std::size_t index_of(const std::string& name) const;

    // CRC of all weight bytes in layer order; proves immutability in tests
    std::uint32_t weights_checksum() const;

private:
    std::vector<LayerShape> shapes_;
    std::vector<Tensor> weights_;
};

// Trainable continuous scores, one tensor per backbone layer, initialized
// Kaiming-uniform with bound sqrt(6/fan_in).
class ScoreSet {
public:
    ScoreSet(const Backbone& backbone, std::uint64_t seed);

    ad::Var& score(std::size_t layer) { return scores_.at(layer); }
    const ad::Var& score(std::size_t layer) const { return scores_.at(layer); }
    std::vector<ad::Var>& all() { return scores_; }
    std::size_t size() const { return scores_.size(); }

    void serialize(io::Writer& w) const;
    static ScoreSet deserialize(io::Reader& r, const Backbone& backbone);

private:
    explicit ScoreSet(std::vector<ad::Var> scores) : scores_(std::move(scores)) {}
    std::vector<ad::Var> scores_;
};

enum class BinarizeKind { Fast, TopK };

struct MaskStrategy {
    BinarizeKind kind = BinarizeKind::Fast;
    double ratio = 0.5;  // TopK only

    static MaskStrategy fast() { return {BinarizeKind::Fast, 0.0}; }
    static MaskStrategy topk(double ratio) { return {BinarizeKind::TopK, ratio}; }
};

// mask = 1 where score > 0 (strictly), else 0
Tensor binarize_fast(const Tensor& scores);

// exactly ceil(ratio * n) ones at the largest entries of this layer; ties
// resolved towards the lowest flat (row-major) index
Tensor binarize_topk(const Tensor& scores, double ratio);

Tensor binarize(const Tensor& scores, const MaskStrategy& strategy);

Eigen::Index popcount(const Tensor& mask);

// Frozen binary masks for one learned system, aligned with backbone layers.
struct MaskSet {
    std::vector<Tensor> masks;

    void serialize(io::Writer& w) const;
    static MaskSet deserialize(io::Reader& r, const Backbone& backbone);
};

MaskSet snapshot_masks(const ScoreSet& scores, const MaskStrategy& strategy);

// Append-only pool of per-system masks; entries are value-frozen copies.
class MaskPool {
public:
    void append(int system_index, MaskSet masks);
    std::size_t size() const { return entries_.size(); }
    int system_of(std::size_t entry) const { return entries_.at(entry).first; }
    const MaskSet& masks_of(std::size_t entry) const { return entries_.at(entry).second; }

    void serialize(io::Writer& w) const;
    static MaskPool deserialize(io::Reader& r, const Backbone& backbone);

private:
    std::vector<std::pair<int, MaskSet>> entries_;
};

// How the model reads its parameters. Three modes:
//  trainable  — effective weight w (.) h(s) with the straight-through
//               estimator, so score gradients are dL/dW_eff (.) w for every
//               entry;
//  frozen     — fixed binary mask, no gradients (pool evaluation);
//  multiplier — fixed continuous per-entry multiplier m in w (.) m, used by
//               finite-difference probes at a binary operating point.
class ParamView {
public:
    static ParamView trainable(const Backbone& b, ScoreSet& s, MaskStrategy strategy);
    static ParamView frozen(const Backbone& b, const MaskSet& m);
    static ParamView multiplier(const Backbone& b, const std::vector<Tensor>& mult);

    // fresh graph node for layer's effective weight; call once per forward pass
    ad::Var effective(std::size_t layer) const;
    const Backbone& backbone() const { return *backbone_; }
    std::size_t index_of(const std::string& name) const { return backbone_->index_of(name); }

private:
    enum class Mode { Trainable, Frozen, Multiplier };
    const Backbone* backbone_ = nullptr;
    Mode mode_ = Mode::Frozen;
    ScoreSet* scores_ = nullptr;
    MaskStrategy strategy_;
    const MaskSet* masks_ = nullptr;
    const std::vector<Tensor>* mult_ = nullptr;
};

// y = x W_eff^T for the named layer of the view
ad::Var masked_linear(const ad::Var& x, const ParamView& params, std::size_t layer);

// Inverted dropout: scales kept activations by 1/(1-rate) during training;
// identity in evaluation or at rate 0.
ad::Var apply_dropout(const ad::Var& x, double rate, Rng& rng, bool training);

}  // namespace msgode::subnet
