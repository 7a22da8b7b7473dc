#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "msgode/masks.hpp"
#include "msgode/model.hpp"
#include "msgode/sim.hpp"
#include "msgode/window.hpp"

namespace msgode::train {

struct TrainConfig {
    int epochs = 20;
    int batch_size = 10;
    double lr = 5e-4;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double observe_fraction = 0.6;  // window split when preparing system data
    double drop_rate = 0.2;         // per-candidate observation dropout
    int eval_chunk = 25;            // windows per collated evaluation pass
    subnet::MaskStrategy strategy = subnet::MaskStrategy::fast();

    void validate() const;
};

enum class Method { MSGODE, FineTune, Joint };
enum class Selection { ModeSwitching, Oracle };

const char* to_string(Method m);
const char* to_string(Selection s);
Method method_from_string(const std::string& s);
Selection selection_from_string(const std::string& s);

// Adaptive-moment updates with decoupled weight decay, applied to the
// gradients accumulated on the given leaves.
class AdamW {
public:
    AdamW(std::vector<ad::Var> params, const TrainConfig& tc);
    void step();
    void zero_grad();
    long steps_taken() const { return t_; }

private:
    std::vector<ad::Var> params_;
    std::vector<Tensor> m_, v_;
    double lr_, wd_, b1_, b2_, eps_;
    long t_ = 0;
};

struct TrainLog {
    int system_index = -1;
    std::vector<double> epoch_loss;  // mean batch loss per epoch
};

// Shuffle: permute the windows each epoch and take consecutive batches.
// Uniform: draw each batch uniformly from the pool (joint training).
enum class BatchScheme { Shuffle, Uniform };

// Optimizes the scores only; the backbone stays frozen. Non-finite losses
// abort with the epoch and batch named in the error.
TrainLog train_system(const model::Model& m, const subnet::Backbone& bb,
                      subnet::ScoreSet& scores,
                      const std::vector<const model::PreparedWindow*>& windows,
                      const TrainConfig& tc, std::uint64_t seed, int system_index,
                      BatchScheme scheme = BatchScheme::Shuffle);

// Mean squared prediction error per scalar feature component over every
// target entry of every window; deterministic latents, no gradients.
double evaluate(const model::Model& m, const subnet::ParamView& view,
                const std::vector<const model::PreparedWindow*>& windows, int chunk);

// Mode switching: feed the first half of the observation span, score each
// pooled mask by reconstruction of the observed second half, return the
// system index with the lowest error (ties to the lowest index).
int select_mask(const model::Model& m, const subnet::Backbone& bb,
                const subnet::MaskPool& pool, const data::ObservationWindow& window);
std::vector<int> select_masks(const model::Model& m, const subnet::Backbone& bb,
                              const subnet::MaskPool& pool,
                              const std::vector<data::ObservationWindow>& windows,
                              int chunk);

// Lower-triangular grid of test MSE values; rows[i] is empty until the model
// has been evaluated after learning system i, then holds entries j = 0..i.
struct PerformanceMatrix {
    std::vector<std::vector<double>> rows;

    int n() const { return static_cast<int>(rows.size()); }
};

// mean of the last row
double average_performance(const PerformanceMatrix& m);
// mean of last-row-minus-diagonal over the first N-1 systems; absent for a
// single system or when earlier diagonal entries were never filled
std::optional<double> average_forgetting(const PerformanceMatrix& m);

// Windows cut from trajectories and normalized with statistics fitted on the
// training windows of the same system.
struct SystemData {
    sim::SystemConfig config;
    std::vector<data::ObservationWindow> train_windows;
    std::vector<data::ObservationWindow> test_windows;
    data::Normalizer normalizer;
};

SystemData prepare_system_data(const sim::SystemConfig& sc,
                               const std::vector<sim::Trajectory>& train,
                               const std::vector<sim::Trajectory>& test,
                               const TrainConfig& tc, std::uint64_t seed);

struct SequenceResult {
    PerformanceMatrix matrix;
    std::vector<TrainLog> logs;
    subnet::MaskPool pool;  // one entry per system under MSGODE, else empty
    std::uint64_t backbone_seed = 0;
    std::optional<subnet::ScoreSet> final_scores;
};

// Trains the systems in order with the chosen method and fills the
// performance matrix: after system i every learned system j <= i is scored.
// FineTune keeps one evolving score set; Joint trains once on the union and
// fills only the last row.
SequenceResult run_sequence(const model::ModelConfig& mc, const TrainConfig& tc,
                            Method method, Selection selection,
                            const std::vector<SystemData>& systems,
                            std::uint64_t seed);

struct Checkpoint {
    std::uint64_t backbone_seed = 0;
    std::string method;
    subnet::ScoreSet scores;
    subnet::MaskPool pool;
};

void save_checkpoint(const std::string& path, std::uint64_t backbone_seed,
                     const std::string& method, const subnet::ScoreSet& scores,
                     const subnet::MaskPool& pool);
Checkpoint load_checkpoint(const std::string& path, const subnet::Backbone& backbone);

}  // namespace msgode::train
