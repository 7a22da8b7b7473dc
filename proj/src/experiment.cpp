#include "msgode/experiment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "msgode/container.hpp"
#include "msgode/errors.hpp"
#include "msgode/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace msgode::exp {
namespace {

// Published system catalogue: ten spring systems and four charged systems,
// five particles each, ordered by label.
struct SystemRow {
    const char* label;
    sim::SystemKind kind;
    double box;
    double strength;
};

constexpr SystemRow kCatalogue[] = {
    {"S1", sim::SystemKind::Spring, 10.0, 0.01},
    {"S2", sim::SystemKind::Spring, 5.0, 0.01},
    {"S3", sim::SystemKind::Spring, 3.0, 0.01},
    {"S4", sim::SystemKind::Spring, 1.0, 0.01},
    {"S5", sim::SystemKind::Spring, 0.5, 0.01},
    {"S6", sim::SystemKind::Spring, 0.5, 0.1},
    {"S7", sim::SystemKind::Spring, 0.5, 0.5},
    {"S8", sim::SystemKind::Spring, 0.5, 1.0},
    {"S9", sim::SystemKind::Spring, 3.0, 0.1},
    {"S10", sim::SystemKind::Spring, 1.0, 0.5},
    {"C1", sim::SystemKind::Charged, 10.0, 0.01},
    {"C2", sim::SystemKind::Charged, 3.0, 0.1},
    {"C3", sim::SystemKind::Charged, 1.0, 0.5},
    {"C4", sim::SystemKind::Charged, 0.5, 1.0},
};

const std::map<std::string, std::vector<std::string>>& preset_table() {
    static const std::map<std::string, std::vector<std::string>> t = {
        {"seq1", {"S1", "S2", "S3", "S4", "S5", "S6", "S7", "S8"}},
        // published listing, which ends S5 -> S5
        {"seq2", {"S1", "S8", "S2", "S7", "S3", "S6", "S5", "S5"}},
        // same but with the duplicate replaced by the missing S4
        {"seq2-amended", {"S1", "S8", "S2", "S7", "S3", "S6", "S4", "S5"}},
        {"seq3", {"S1", "C1", "S9", "C2", "S10", "C3", "S8", "C4"}},
        {"smoke", {"S1", "C4", "S8"}},
    };
    return t;
}

json system_to_json(const sim::SystemConfig& sc) {
    json j;
    j["kind"] = sim::to_string(sc.kind);
    j["n_particles"] = sc.n_particles;
    j["box_size"] = sc.box_size;
    j["interaction_strength"] = sc.interaction_strength;
    j["sim_steps"] = sc.sim_steps;
    j["sample_every"] = sc.sample_every;
    j["sim_dt"] = sc.sim_dt;
    return j;
}

sim::SystemConfig system_from_json(const json& j) {
    sim::SystemConfig sc;
    sc.kind = sim::system_kind_from_string(j.value("kind", std::string("spring")));
    sc.n_particles = j.value("n_particles", sc.n_particles);
    sc.box_size = j.value("box_size", sc.box_size);
    sc.interaction_strength = j.value("interaction_strength", sc.interaction_strength);
    sc.sim_steps = j.value("sim_steps", sc.sim_steps);
    sc.sample_every = j.value("sample_every", sc.sample_every);
    sc.sim_dt = j.value("sim_dt", sc.sim_dt);
    return sc;
}

json model_to_json(const model::ModelConfig& mc) {
    json j;
    j["feature_dim"] = mc.feature_dim;
    j["d_h"] = mc.d_h;
    j["n_enc_layers"] = mc.n_enc_layers;
    j["d_z"] = mc.d_z;
    j["d_edge"] = mc.d_edge;
    j["f_int_hidden"] = mc.f_int_hidden;
    j["posterior_hidden"] = mc.posterior_hidden;
    j["te_scale"] = mc.te_scale;
    j["delta_steps"] = mc.delta_steps;
    j["h_int"] = mc.h_int;
    j["sigma_obs"] = mc.sigma_obs;
    j["beta_kl"] = mc.beta_kl;
    j["dropout"] = mc.dropout;
    j["self_edges"] = mc.self_edges;
    return j;
}

model::ModelConfig model_from_json(const json& j) {
    model::ModelConfig mc;
    mc.feature_dim = j.value("feature_dim", mc.feature_dim);
    mc.d_h = j.value("d_h", mc.d_h);
    mc.n_enc_layers = j.value("n_enc_layers", mc.n_enc_layers);
    mc.d_z = j.value("d_z", mc.d_z);
    mc.d_edge = j.value("d_edge", mc.d_edge);
    mc.f_int_hidden = j.value("f_int_hidden", mc.f_int_hidden);
    mc.posterior_hidden = j.value("posterior_hidden", mc.posterior_hidden);
    mc.te_scale = j.value("te_scale", mc.te_scale);
    mc.delta_steps = j.value("delta_steps", mc.delta_steps);
    mc.h_int = j.value("h_int", mc.h_int);
    mc.sigma_obs = j.value("sigma_obs", mc.sigma_obs);
    mc.beta_kl = j.value("beta_kl", mc.beta_kl);
    mc.dropout = j.value("dropout", mc.dropout);
    mc.self_edges = j.value("self_edges", mc.self_edges);
    return mc;
}

json training_to_json(const train::TrainConfig& tc) {
    json j;
    j["epochs"] = tc.epochs;
    j["batch_size"] = tc.batch_size;
    j["lr"] = tc.lr;
    j["weight_decay"] = tc.weight_decay;
    j["beta1"] = tc.beta1;
    j["beta2"] = tc.beta2;
    j["adam_eps"] = tc.adam_eps;
    j["observe_fraction"] = tc.observe_fraction;
    j["drop_rate"] = tc.drop_rate;
    j["eval_chunk"] = tc.eval_chunk;
    json s;
    if (tc.strategy.kind == subnet::BinarizeKind::Fast) {
        s["kind"] = "fast";
    } else {
        s["kind"] = "topk";
        s["ratio"] = tc.strategy.ratio;
    }
    j["strategy"] = s;
    return j;
}

train::TrainConfig training_from_json(const json& j) {
    train::TrainConfig tc;
    tc.epochs = j.value("epochs", tc.epochs);
    tc.batch_size = j.value("batch_size", tc.batch_size);
    tc.lr = j.value("lr", tc.lr);
    tc.weight_decay = j.value("weight_decay", tc.weight_decay);
    tc.beta1 = j.value("beta1", tc.beta1);
    tc.beta2 = j.value("beta2", tc.beta2);
    tc.adam_eps = j.value("adam_eps", tc.adam_eps);
    tc.observe_fraction = j.value("observe_fraction", tc.observe_fraction);
    tc.drop_rate = j.value("drop_rate", tc.drop_rate);
    tc.eval_chunk = j.value("eval_chunk", tc.eval_chunk);
    if (j.contains("strategy")) {
        const json& s = j.at("strategy");
        std::string kind = s.value("kind", std::string("fast"));
        if (kind == "fast") {
            tc.strategy = subnet::MaskStrategy::fast();
        } else if (kind == "topk") {
            tc.strategy = subnet::MaskStrategy::topk(s.value("ratio", 0.5));
        } else {
            throw ConfigError("unknown mask strategy '" + kind + "' (expected fast or topk)");
        }
    }
    return tc;
}

std::string dataset_file_name(int index, const std::string& label) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "sys%02d_", index);
    return std::string(buf) + label + ".cdl";
}

std::string trainlog_file_name(int index, const std::string& label) {
    if (index < 0) return "trainlog_joint.csv";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "trainlog_%02d_", index);
    return std::string(buf) + label + ".csv";
}

std::string matrix_file_name(int repeat) {
    return "matrix_" + std::to_string(repeat) + ".csv";
}

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + path.string());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!os) throw DataError("short write: " + path.string());
}

std::string read_text_file(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open: " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

// shortest decimal form that round-trips the double
std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    double back = std::strtod(buf, nullptr);
    if (back == v) {
        for (int prec = 1; prec < 17; ++prec) {
            char shorter[40];
            std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
            if (std::strtod(shorter, nullptr) == v) return shorter;
        }
    }
    return buf;
}

double sample_mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double m = sample_mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

void refuse_existing(const std::vector<fs::path>& paths, bool overwrite) {
    if (overwrite) return;
    for (const fs::path& p : paths) {
        if (fs::exists(p)) {
            throw ConfigError("output already exists: " + p.string() +
                              " (pass --overwrite to replace it)");
        }
    }
}

}  // namespace

sim::SystemConfig system_by_label(const std::string& label) {
    for (const SystemRow& row : kCatalogue) {
        if (label == row.label) {
            sim::SystemConfig sc;
            sc.kind = row.kind;
            sc.n_particles = 5;
            sc.box_size = row.box;
            sc.interaction_strength = row.strength;
            return sc;
        }
    }
    throw ConfigError("unknown system label '" + label + "' (expected S1..S10 or C1..C4)");
}

std::vector<std::string> preset_names() {
    std::vector<std::string> names;
    for (const auto& [name, seq] : preset_table()) names.push_back(name);
    return names;
}

std::vector<std::string> preset_sequence(const std::string& preset) {
    auto it = preset_table().find(preset);
    if (it == preset_table().end()) {
        std::string valid;
        for (const auto& name : preset_names()) {
            if (!valid.empty()) valid += ", ";
            valid += name;
        }
        throw ConfigError("unknown preset '" + preset + "' (valid presets: " + valid + ")");
    }
    return it->second;
}

ExperimentConfig default_config(const std::string& preset) {
    ExperimentConfig cfg;
    cfg.name = preset;
    cfg.labels = preset_sequence(preset);
    for (const std::string& label : cfg.labels) cfg.systems.push_back(system_by_label(label));
    return cfg;
}

void ExperimentConfig::validate() const {
    if (schema_version != 1) {
        throw ConfigError("unsupported config schema_version " + std::to_string(schema_version) +
                          " (this build reads version 1)");
    }
    if (systems.empty()) throw ConfigError("config field 'sequence': no systems listed");
    if (labels.size() != systems.size()) {
        throw ConfigError("config field 'sequence': " + std::to_string(labels.size()) +
                          " labels for " + std::to_string(systems.size()) + " systems");
    }
    for (std::size_t i = 0; i < systems.size(); ++i) {
        try {
            systems[i].validate();
        } catch (const ConfigError& e) {
            throw ConfigError("system " + std::to_string(i) + " (" + labels[i] + "): " + e.what());
        }
    }
    model.validate();
    training.validate();
    if (train_trajectories < 1) throw ConfigError("config field 'train_trajectories': must be >= 1");
    if (test_trajectories < 1) throw ConfigError("config field 'test_trajectories': must be >= 1");
    if (repeats < 1) throw ConfigError("config field 'repeats': must be >= 1");
    if (data_dir.empty()) throw ConfigError("config field 'data_dir': must not be empty");
    if (output_dir.empty()) throw ConfigError("config field 'output_dir': must not be empty");
}

std::string to_json(const ExperimentConfig& cfg) {
    json j;
    j["schema_version"] = cfg.schema_version;
    j["name"] = cfg.name;
    j["data_dir"] = cfg.data_dir;
    j["output_dir"] = cfg.output_dir;
    json systems = json::array();
    for (std::size_t i = 0; i < cfg.systems.size(); ++i) {
        json s = system_to_json(cfg.systems[i]);
        s["label"] = cfg.labels[i];
        systems.push_back(std::move(s));
    }
    j["sequence"] = json{{"systems", std::move(systems)}};
    j["model"] = model_to_json(cfg.model);
    j["training"] = training_to_json(cfg.training);
    j["method"] = train::to_string(cfg.method);
    j["selection"] = train::to_string(cfg.selection);
    j["train_trajectories"] = cfg.train_trajectories;
    j["test_trajectories"] = cfg.test_trajectories;
    j["repeats"] = cfg.repeats;
    j["master_seed"] = cfg.master_seed;
    return j.dump(2) + "\n";
}

ExperimentConfig from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    ExperimentConfig cfg;
    try {
        if (!j.is_object()) throw ConfigError("config root must be a JSON object");
        if (!j.contains("schema_version")) {
            throw ConfigError("config field 'schema_version' is required");
        }
        cfg.schema_version = j.at("schema_version").get<int>();
        cfg.name = j.value("name", cfg.name);
        cfg.data_dir = j.value("data_dir", cfg.data_dir);
        cfg.output_dir = j.value("output_dir", cfg.output_dir);

        if (!j.contains("sequence")) throw ConfigError("config field 'sequence' is required");
        const json& seq = j.at("sequence");
        if (seq.contains("preset") && seq.contains("systems")) {
            throw ConfigError("config field 'sequence': give either 'preset' or 'systems', not both");
        }
        if (seq.contains("preset")) {
            cfg.labels = preset_sequence(seq.at("preset").get<std::string>());
            for (const std::string& label : cfg.labels)
                cfg.systems.push_back(system_by_label(label));
            if (cfg.name == "experiment") cfg.name = seq.at("preset").get<std::string>();
        } else if (seq.contains("systems")) {
            for (const json& s : seq.at("systems")) {
                if (s.contains("label")) {
                    cfg.labels.push_back(s.at("label").get<std::string>());
                } else {
                    cfg.labels.push_back("sys" + std::to_string(cfg.labels.size()));
                }
                cfg.systems.push_back(system_from_json(s));
            }
        } else {
            throw ConfigError("config field 'sequence': needs 'preset' or 'systems'");
        }

        if (j.contains("model")) cfg.model = model_from_json(j.at("model"));
        if (j.contains("training")) cfg.training = training_from_json(j.at("training"));
        if (j.contains("method")) cfg.method = train::method_from_string(j.at("method").get<std::string>());
        if (j.contains("selection"))
            cfg.selection = train::selection_from_string(j.at("selection").get<std::string>());
        cfg.train_trajectories = j.value("train_trajectories", cfg.train_trajectories);
        cfg.test_trajectories = j.value("test_trajectories", cfg.test_trajectories);
        cfg.repeats = j.value("repeats", cfg.repeats);
        cfg.master_seed = j.value("master_seed", cfg.master_seed);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    if (!fs::exists(path)) throw ConfigError("config file not found: " + path);
    return from_json(read_text_file(path));
}

std::uint32_t config_hash(const ExperimentConfig& cfg) {
    std::string canon = to_json(cfg);
    return io::crc32_bytes(canon.data(), canon.size());
}

GenerateResult cmd_generate(const ExperimentConfig& cfg, const std::string& out_dir,
                            bool overwrite) {
    cfg.validate();
    fs::create_directories(out_dir);
    const fs::path dir(out_dir);

    std::vector<fs::path> outputs;
    for (std::size_t i = 0; i < cfg.systems.size(); ++i)
        outputs.push_back(dir / dataset_file_name(static_cast<int>(i), cfg.labels[i]));
    const fs::path manifest_path = dir / "manifest.json";
    outputs.push_back(manifest_path);
    refuse_existing(outputs, overwrite);

    json manifest;
    manifest["schema_version"] = 1;
    manifest["name"] = cfg.name;
    manifest["master_seed"] = cfg.master_seed;
    manifest["config_hash"] = config_hash(cfg);
    manifest["train_trajectories"] = cfg.train_trajectories;
    manifest["test_trajectories"] = cfg.test_trajectories;
    json entries = json::array();

    GenerateResult result;
    for (std::size_t i = 0; i < cfg.systems.size(); ++i) {
        const sim::SystemConfig& sc = cfg.systems[i];
        std::uint64_t sys_seed =
            derive_seed(cfg.master_seed, {seed_tag::kSystem, static_cast<std::uint64_t>(i)});
        std::vector<sim::Trajectory> all = sim::generate_dataset(
            sc, cfg.train_trajectories, derive_seed(sys_seed, {seed_tag::kTrain}));
        std::vector<sim::Trajectory> test = sim::generate_dataset(
            sc, cfg.test_trajectories, derive_seed(sys_seed, {seed_tag::kTestSet}));
        for (auto& t : test) all.push_back(std::move(t));

        const fs::path path = outputs[i];
        io::save_dataset(path.string(), sc, all);
        result.dataset_paths.push_back(path.string());

        json sys_json = system_to_json(sc);
        std::string sys_canon = sys_json.dump();
        json entry;
        entry["index"] = i;
        entry["label"] = cfg.labels[i];
        entry["file"] = path.filename().string();
        entry["seed"] = sys_seed;
        entry["config"] = std::move(sys_json);
        entry["config_hash"] = io::crc32_bytes(sys_canon.data(), sys_canon.size());
        entries.push_back(std::move(entry));
    }
    manifest["systems"] = std::move(entries);
    write_text_file(manifest_path, manifest.dump(2) + "\n");
    result.manifest_path = manifest_path.string();
    return result;
}

std::string format_matrix_csv(const train::PerformanceMatrix& m,
                              const std::vector<std::string>& labels) {
    std::ostringstream os;
    os << "after";
    for (const std::string& label : labels) os << ',' << label;
    os << '\n';
    static const std::vector<double> kEmptyRow;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        os << labels[i];
        const std::vector<double>& row = i < m.rows.size() ? m.rows[i] : kEmptyRow;
        for (std::size_t jj = 0; jj < labels.size(); ++jj) {
            os << ',';
            if (jj < row.size()) os << format_double(row[jj]);
        }
        os << '\n';
    }
    return os.str();
}

train::PerformanceMatrix parse_matrix_csv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line)) throw DataError("matrix CSV is empty");
    train::PerformanceMatrix m;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream row_stream(line);
        std::string cell;
        std::vector<double> row;
        bool first = true;
        while (std::getline(row_stream, cell, ',')) {
            if (first) {  // row label column
                first = false;
                continue;
            }
            if (cell.empty()) break;  // filled cells form a prefix
            try {
                row.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw DataError("matrix CSV cell is not a number: '" + cell + "'");
            }
        }
        m.rows.push_back(std::move(row));
    }
    return m;
}

std::string format_heatmap(const std::vector<train::PerformanceMatrix>& repeats,
                           const std::vector<std::string>& labels) {
    const std::size_t n = labels.size();
    // cellwise mean over the repeats that filled the cell
    std::vector<std::vector<std::string>> cells(n, std::vector<std::string>(n, "-"));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t jj = 0; jj < n; ++jj) {
            double sum = 0.0;
            int count = 0;
            for (const train::PerformanceMatrix& m : repeats) {
                if (i < m.rows.size() && jj < m.rows[i].size()) {
                    sum += m.rows[i][jj];
                    ++count;
                }
            }
            if (count > 0) {
                char buf[32];
                std::snprintf(buf, sizeof(buf), "%.6f", sum / count);
                cells[i][jj] = buf;
            }
        }
    }
    std::size_t width = 8;
    for (const std::string& label : labels) width = std::max(width, label.size());
    for (const auto& row : cells)
        for (const std::string& c : row) width = std::max(width, c.size());
    width += 2;

    std::ostringstream os;
    auto pad = [&](const std::string& s) {
        os << s;
        for (std::size_t k = s.size(); k < width; ++k) os << ' ';
    };
    pad("after");
    for (const std::string& label : labels) pad(label);
    os << '\n';
    for (std::size_t i = 0; i < n; ++i) {
        pad(labels[i]);
        for (std::size_t jj = 0; jj < n; ++jj) pad(cells[i][jj]);
        os << '\n';
    }
    return os.str();
}

RunResult cmd_run(const ExperimentConfig& cfg, const std::string& data_dir,
                  const std::string& out_dir, bool overwrite) {
    cfg.validate();
    const fs::path data(data_dir);
    const fs::path manifest_path = data / "manifest.json";
    if (!fs::exists(manifest_path)) {
        throw DataError("missing dataset manifest: " + manifest_path.string() +
                        " (run generate first)");
    }
    json manifest;
    try {
        manifest = json::parse(read_text_file(manifest_path));
    } catch (const json::exception& e) {
        throw DataError("malformed manifest " + manifest_path.string() + ": " + e.what());
    }

    const std::size_t n = cfg.systems.size();
    std::vector<fs::path> dataset_paths(n);
    try {
        const json& entries = manifest.at("systems");
        if (entries.size() != n) {
            throw DataError("manifest lists " + std::to_string(entries.size()) +
                            " systems but the config has " + std::to_string(n));
        }
        std::string missing;
        for (std::size_t i = 0; i < n; ++i) {
            const json& entry = entries.at(i);
            std::string label = entry.at("label").get<std::string>();
            if (label != cfg.labels[i]) {
                throw DataError("manifest system " + std::to_string(i) + " is '" + label +
                                "' but the config expects '" + cfg.labels[i] + "'");
            }
            dataset_paths[i] = data / entry.at("file").get<std::string>();
            if (!fs::exists(dataset_paths[i])) {
                if (!missing.empty()) missing += ", ";
                missing += dataset_paths[i].string();
            }
        }
        if (!missing.empty()) throw DataError("missing dataset files: " + missing);
    } catch (const json::exception& e) {
        throw DataError("malformed manifest " + manifest_path.string() + ": " + e.what());
    }

    struct SystemSplit {
        sim::SystemConfig config;
        std::vector<sim::Trajectory> train;
        std::vector<sim::Trajectory> test;
    };
    std::vector<SystemSplit> splits(n);
    for (std::size_t i = 0; i < n; ++i) {
        io::LoadedDataset ds = io::load_dataset(dataset_paths[i].string());
        const std::size_t need =
            static_cast<std::size_t>(cfg.train_trajectories + cfg.test_trajectories);
        if (ds.trajectories.size() < need) {
            throw DataError(dataset_paths[i].string() + " holds " +
                            std::to_string(ds.trajectories.size()) + " trajectories but " +
                            std::to_string(need) + " are required");
        }
        splits[i].config = ds.config;
        auto mid = ds.trajectories.begin() + cfg.train_trajectories;
        auto end = mid + cfg.test_trajectories;
        splits[i].train.assign(std::make_move_iterator(ds.trajectories.begin()),
                               std::make_move_iterator(mid));
        splits[i].test.assign(std::make_move_iterator(mid), std::make_move_iterator(end));
    }

    fs::create_directories(out_dir);
    const fs::path dir(out_dir);
    std::vector<fs::path> outputs;
    outputs.push_back(dir / "config.json");
    for (int r = 0; r < cfg.repeats; ++r) outputs.push_back(dir / matrix_file_name(r));
    outputs.push_back(dir / "summary.json");
    outputs.push_back(dir / "heatmap.txt");
    outputs.push_back(dir / "checkpoint.cdl");
    refuse_existing(outputs, overwrite);
    // the expanded config (with any CLI overrides applied) makes the run
    // reproducible from its artifacts alone
    write_text_file(dir / "config.json", to_json(cfg));

    RunResult result;
    result.out_dir = dir.string();
    std::vector<train::PerformanceMatrix> matrices;
    std::vector<double> ap_values;
    std::vector<double> af_values;
    bool af_present = true;
    // trainlog file name -> rows of (repeat, epoch, loss)
    std::map<std::string, std::vector<std::array<double, 3>>> trainlogs;

    for (int r = 0; r < cfg.repeats; ++r) {
        std::uint64_t repeat_seed =
            derive_seed(cfg.master_seed, {seed_tag::kRepeat, static_cast<std::uint64_t>(r)});
        std::vector<train::SystemData> systems;
        systems.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            systems.push_back(train::prepare_system_data(
                splits[i].config, splits[i].train, splits[i].test, cfg.training,
                derive_seed(repeat_seed, {seed_tag::kSystem, static_cast<std::uint64_t>(i)})));
        }
        train::SequenceResult res = train::run_sequence(cfg.model, cfg.training, cfg.method,
                                                        cfg.selection, systems, repeat_seed);

        write_text_file(dir / matrix_file_name(r), format_matrix_csv(res.matrix, cfg.labels));
        for (const train::TrainLog& log : res.logs) {
            std::string fname = trainlog_file_name(
                log.system_index,
                log.system_index >= 0 ? cfg.labels[static_cast<std::size_t>(log.system_index)]
                                      : std::string());
            auto& rows = trainlogs[fname];
            for (std::size_t e = 0; e < log.epoch_loss.size(); ++e) {
                rows.push_back({static_cast<double>(r), static_cast<double>(e), log.epoch_loss[e]});
            }
        }

        RepeatResult rep;
        rep.ap = train::average_performance(res.matrix);
        rep.af = train::average_forgetting(res.matrix);
        rep.matrix = res.matrix;
        ap_values.push_back(rep.ap);
        if (rep.af.has_value()) {
            af_values.push_back(*rep.af);
        } else {
            af_present = false;
        }
        matrices.push_back(res.matrix);
        result.repeats.push_back(std::move(rep));

        if (r == cfg.repeats - 1 && res.final_scores.has_value()) {
            train::save_checkpoint((dir / "checkpoint.cdl").string(), res.backbone_seed,
                                   train::to_string(cfg.method), *res.final_scores, res.pool);
        }
    }

    for (const auto& [fname, rows] : trainlogs) {
        std::ostringstream os;
        os << "repeat,epoch,loss\n";
        for (const auto& row : rows) {
            os << static_cast<int>(row[0]) << ',' << static_cast<int>(row[1]) << ','
               << format_double(row[2]) << '\n';
        }
        write_text_file(dir / fname, os.str());
    }

    json summary;
    summary["schema_version"] = 1;
    summary["name"] = cfg.name;
    summary["method"] = train::to_string(cfg.method);
    summary["selection"] = train::to_string(cfg.selection);
    summary["labels"] = cfg.labels;
    summary["repeats"] = cfg.repeats;
    summary["ap"] = json{{"values", ap_values},
                         {"mean", sample_mean(ap_values)},
                         {"std", sample_std(ap_values)}};
    if (af_present && !af_values.empty()) {
        summary["af"] = json{{"values", af_values},
                             {"mean", sample_mean(af_values)},
                             {"std", sample_std(af_values)}};
    } else {
        summary["af"] = nullptr;
    }
    write_text_file(dir / "summary.json", summary.dump(2) + "\n");
    write_text_file(dir / "heatmap.txt", format_heatmap(matrices, cfg.labels));
    return result;
}

double cmd_report(const std::string& results_dir, std::ostream& os) {
    const fs::path dir(results_dir);
    const fs::path summary_path = dir / "summary.json";
    if (!fs::exists(summary_path)) {
        throw DataError("no summary.json in " + dir.string() + "; run the experiment first");
    }
    json summary;
    try {
        summary = json::parse(read_text_file(summary_path));
    } catch (const json::exception& e) {
        throw DataError("malformed summary " + summary_path.string() + ": " + e.what());
    }

    std::string name, method, selection;
    std::vector<std::string> labels;
    int repeats = 0;
    try {
        name = summary.at("name").get<std::string>();
        method = summary.at("method").get<std::string>();
        selection = summary.at("selection").get<std::string>();
        labels = summary.at("labels").get<std::vector<std::string>>();
        repeats = summary.at("repeats").get<int>();
    } catch (const json::exception& e) {
        throw DataError("malformed summary " + summary_path.string() + ": " + e.what());
    }
    if (repeats < 1) throw DataError("summary reports no repeats");

    // AP/AF are recomputed from the matrix CSVs, not echoed from the summary
    std::vector<train::PerformanceMatrix> matrices;
    std::vector<double> ap_values;
    std::vector<double> af_values;
    bool af_present = true;
    for (int r = 0; r < repeats; ++r) {
        const fs::path mpath = dir / matrix_file_name(r);
        if (!fs::exists(mpath)) throw DataError("missing matrix CSV: " + mpath.string());
        train::PerformanceMatrix m = parse_matrix_csv(read_text_file(mpath));
        ap_values.push_back(train::average_performance(m));
        std::optional<double> af = train::average_forgetting(m);
        if (af.has_value()) {
            af_values.push_back(*af);
        } else {
            af_present = false;
        }
        matrices.push_back(std::move(m));
    }

    char line[128];
    os << "experiment: " << name << '\n';
    os << "method: " << method << "    selection: " << selection
       << "    repeats: " << repeats << '\n';
    os << '\n';
    os << "metric    mean        std\n";
    double ap_mean = sample_mean(ap_values);
    std::snprintf(line, sizeof(line), "AP        %-10.6f  %-10.6f\n", ap_mean,
                  sample_std(ap_values));
    os << line;
    if (af_present && !af_values.empty()) {
        std::snprintf(line, sizeof(line), "AF        %-10.6f  %-10.6f\n",
                      sample_mean(af_values), sample_std(af_values));
        os << line;
    } else {
        os << "AF        -\n";
    }
    os << '\n';
    os << "mean test MSE after each system (rows: just-learned system):\n";
    os << format_heatmap(matrices, labels);
    return ap_mean;
}

}  // namespace msgode::exp
