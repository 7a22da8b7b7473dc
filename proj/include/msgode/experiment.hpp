#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "msgode/model.hpp"
#include "msgode/sim.hpp"
#include "msgode/train.hpp"

namespace msgode::exp {

// A fully expanded experiment: the sequence of systems with display labels,
// model and training settings, data sizes and seeding.
struct ExperimentConfig {
    int schema_version = 1;
    std::string name = "experiment";
    std::string data_dir = "data";        // where generate puts datasets
    std::string output_dir = "results";   // where run puts artifacts
    std::vector<std::string> labels;  // e.g. "S1", "C4"; may repeat
    std::vector<sim::SystemConfig> systems;
    model::ModelConfig model;
    train::TrainConfig training;
    train::Method method = train::Method::MSGODE;
    train::Selection selection = train::Selection::ModeSwitching;
    int train_trajectories = 100;
    int test_trajectories = 100;
    int repeats = 1;
    std::uint64_t master_seed = 20240101;

    void validate() const;
};

// Named spring systems S1..S10 and charged systems C1..C4 with the published
// box sizes and interaction strengths; 5 particles each.
sim::SystemConfig system_by_label(const std::string& label);

// seq1, seq2, seq2-amended, seq3 and the 3-system smoke sequence.
// seq2 ends S5 -> S5 exactly as published; seq2-amended replaces the
// duplicate with the presumably intended S4 -> S5 tail.
std::vector<std::string> preset_names();
std::vector<std::string> preset_sequence(const std::string& preset);
ExperimentConfig default_config(const std::string& preset);

std::string to_json(const ExperimentConfig& cfg);
ExperimentConfig from_json(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// stable hash of the canonical config serialization
std::uint32_t config_hash(const ExperimentConfig& cfg);

// One dataset container per system (training trajectories first, then test;
// the split is recorded in manifest.json).
struct GenerateResult {
    std::vector<std::string> dataset_paths;
    std::string manifest_path;
};
GenerateResult cmd_generate(const ExperimentConfig& cfg, const std::string& out_dir,
                            bool overwrite);

struct RepeatResult {
    train::PerformanceMatrix matrix;
    double ap = 0.0;
    std::optional<double> af;
};

struct RunResult {
    std::vector<RepeatResult> repeats;
    std::string out_dir;
};

// Loads the generated datasets, executes every repeat with derived seeds and
// writes matrix_<r>.csv, trainlog_<i>_<label>.csv, summary.json, heatmap.txt
// and checkpoint.cdl into out_dir.
RunResult cmd_run(const ExperimentConfig& cfg, const std::string& data_dir,
                  const std::string& out_dir, bool overwrite);

// Prints the AP/AF summary recomputed from the matrix CSVs plus the mean
// heatmap. Returns the recomputed mean AP (tests compare it to summary.json).
double cmd_report(const std::string& results_dir, std::ostream& os);

// helpers shared by the run/report paths and their tests
std::string format_matrix_csv(const train::PerformanceMatrix& m,
                              const std::vector<std::string>& labels);
train::PerformanceMatrix parse_matrix_csv(const std::string& text);
std::string format_heatmap(const std::vector<train::PerformanceMatrix>& repeats,
                           const std::vector<std::string>& labels);

}  // namespace msgode::exp
