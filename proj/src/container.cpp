#include "msgode/container.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

#include "json.hpp"

namespace msgode::io {

using nlohmann::json;

std::uint32_t crc32_bytes(const void* data, std::size_t n) {
    return static_cast<std::uint32_t>(
        ::crc32(0L, static_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

namespace {
// container files are written and read on the same host; store explicitly as
// little-endian so files are portable anyway
void put_le32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_le64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
std::uint32_t get_le32(const char* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
}
std::uint64_t get_le64(const char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
}
}  // namespace

void Writer::u32(std::uint32_t v) { put_le32(buf_, v); }
void Writer::u64(std::uint64_t v) { put_le64(buf_, v); }

void Writer::f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    put_le64(buf_, bits);
}

void Writer::f64_array(const double* data, std::size_t n) {
    u64(n);
    for (std::size_t i = 0; i < n; ++i) f64(data[i]);
}

void Writer::bits(const std::vector<bool>& v) {
    u64(v.size());
    unsigned char byte = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i]) byte |= static_cast<unsigned char>(1u << (i % 8));
        if (i % 8 == 7) {
            buf_.push_back(static_cast<char>(byte));
            byte = 0;
        }
    }
    if (v.size() % 8 != 0) buf_.push_back(static_cast<char>(byte));
}

void Writer::bytes(const void* data, std::size_t n) {
    buf_.append(static_cast<const char*>(data), n);
}

const char* Reader::take(std::size_t n) {
    if (pos_ + n > buf_.size()) throw DataError("truncated container payload");
    const char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
}

std::uint32_t Reader::u32() { return get_le32(take(4)); }
std::uint64_t Reader::u64() { return get_le64(take(8)); }

double Reader::f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
}

std::vector<double> Reader::f64_array() {
    std::uint64_t n = u64();
    if (n > (buf_.size() - pos_) / 8) throw DataError("truncated container payload");
    std::vector<double> out(n);
    for (std::uint64_t i = 0; i < n; ++i) out[i] = f64();
    return out;
}

std::vector<bool> Reader::bits() {
    std::uint64_t n = u64();
    std::size_t n_bytes = static_cast<std::size_t>((n + 7) / 8);
    const char* p = take(n_bytes);
    std::vector<bool> out(n);
    for (std::uint64_t i = 0; i < n; ++i)
        out[i] = (static_cast<unsigned char>(p[i / 8]) >> (i % 8)) & 1u;
    return out;
}

void write_container(const std::string& path, const std::string& config_json,
                     const std::string& payload) {
    std::string file;
    file.reserve(16 + config_json.size() + payload.size());
    file.append(kMagic, 4);
    put_le32(file, kFormatVersion);
    put_le64(file, config_json.size());
    file += config_json;
    file += payload;
    std::uint32_t crc = crc32_bytes(file.data() + 8, file.size() - 8);
    put_le32(file, crc);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + path);
    out.write(file.data(), static_cast<std::streamsize>(file.size()));
    if (!out) throw DataError("write failed: " + path);
}

Container read_container(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    std::string file((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (file.size() < 20 || std::memcmp(file.data(), kMagic, 4) != 0)
        throw DataError("not a CDL1 container: " + path);
    std::uint32_t version = get_le32(file.data() + 4);
    if (version != kFormatVersion)
        throw DataError("unsupported container version " + std::to_string(version) +
                        " (this build reads version " + std::to_string(kFormatVersion) + ")");
    std::uint32_t stored = get_le32(file.data() + file.size() - 4);
    std::uint32_t actual = crc32_bytes(file.data() + 8, file.size() - 12);
    if (stored != actual) throw DataError("checksum mismatch in " + path);

    std::uint64_t json_len = get_le64(file.data() + 8);
    if (16 + json_len + 4 > file.size()) throw DataError("truncated container header");
    Container c;
    c.config_json = file.substr(16, json_len);
    c.payload = file.substr(16 + json_len, file.size() - 20 - json_len);
    return c;
}

// ---- dataset --------------------------------------------------------------

void save_dataset(const std::string& path, const sim::SystemConfig& config,
                  const std::vector<sim::Trajectory>& trajectories) {
    json cfg{{"container", "dataset"},
             {"system",
              {{"kind", sim::to_string(config.kind)},
               {"n_particles", config.n_particles},
               {"box_size", config.box_size},
               {"interaction_strength", config.interaction_strength},
               {"sim_steps", config.sim_steps},
               {"sample_every", config.sample_every},
               {"sim_dt", config.sim_dt}}},
             {"n_trajectories", trajectories.size()}};

    Writer w;
    for (const sim::Trajectory& t : trajectories) {
        const Eigen::Index n = config.n_particles;
        std::vector<double> flat;
        flat.reserve(t.positions.size() * n * 2);
        for (const Matrix& m : t.positions)
            for (Eigen::Index i = 0; i < n; ++i)
                for (Eigen::Index j = 0; j < 2; ++j) flat.push_back(m(i, j));
        w.f64_array(flat);
        flat.clear();
        for (const Matrix& m : t.velocities)
            for (Eigen::Index i = 0; i < n; ++i)
                for (Eigen::Index j = 0; j < 2; ++j) flat.push_back(m(i, j));
        w.f64_array(flat);
        w.f64_array(t.sample_times);
        std::vector<bool> adj(n * n);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j) adj[i * n + j] = t.adjacency(i, j) != 0.0;
        w.bits(adj);
        w.f64_array(t.charges.data(), static_cast<std::size_t>(t.charges.size()));
        w.u32(static_cast<std::uint32_t>(t.wall_bounces));
    }
    write_container(path, cfg.dump(), w.buffer());
}

LoadedDataset load_dataset(const std::string& path) {
    Container c = read_container(path);
    json cfg;
    try {
        cfg = json::parse(c.config_json);
    } catch (const json::parse_error& e) {
        throw DataError("bad container config JSON: " + std::string(e.what()));
    }
    if (cfg.value("container", "") != "dataset")
        throw DataError("container is not a dataset: " + path);

    LoadedDataset d;
    const json& sys = cfg.at("system");
    d.config.kind = sim::system_kind_from_string(sys.at("kind").get<std::string>());
    d.config.n_particles = sys.at("n_particles").get<int>();
    d.config.box_size = sys.at("box_size").get<double>();
    d.config.interaction_strength = sys.at("interaction_strength").get<double>();
    d.config.sim_steps = sys.at("sim_steps").get<int>();
    d.config.sample_every = sys.at("sample_every").get<int>();
    d.config.sim_dt = sys.at("sim_dt").get<double>();
    d.config.validate();

    const std::size_t n_traj = cfg.at("n_trajectories").get<std::size_t>();
    const Eigen::Index n = d.config.n_particles;
    Reader r(std::move(c.payload));
    d.trajectories.reserve(n_traj);
    for (std::size_t k = 0; k < n_traj; ++k) {
        sim::Trajectory t;
        std::vector<double> pos = r.f64_array();
        std::vector<double> vel = r.f64_array();
        t.sample_times = r.f64_array();
        const std::size_t T = t.sample_times.size();
        if (pos.size() != T * n * 2 || vel.size() != T * n * 2)
            throw DataError("dataset payload has inconsistent array sizes");
        t.positions.reserve(T);
        t.velocities.reserve(T);
        for (std::size_t s = 0; s < T; ++s) {
            Matrix p(n, 2), v(n, 2);
            for (Eigen::Index i = 0; i < n; ++i)
                for (Eigen::Index j = 0; j < 2; ++j) {
                    p(i, j) = pos[(s * n + i) * 2 + j];
                    v(i, j) = vel[(s * n + i) * 2 + j];
                }
            t.positions.push_back(std::move(p));
            t.velocities.push_back(std::move(v));
        }
        std::vector<bool> adj = r.bits();
        if (adj.size() != static_cast<std::size_t>(n * n))
            throw DataError("dataset payload has inconsistent adjacency size");
        t.adjacency = Matrix::Zero(n, n);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j)
                if (adj[i * n + j]) t.adjacency(i, j) = 1.0;
        std::vector<double> q = r.f64_array();
        t.charges = Eigen::Map<const Vector>(q.data(), static_cast<Eigen::Index>(q.size()));
        t.wall_bounces = static_cast<int>(r.u32());
        d.trajectories.push_back(std::move(t));
    }
    if (!r.at_end()) throw DataError("dataset payload has trailing bytes");
    return d;
}

}  // namespace msgode::io
