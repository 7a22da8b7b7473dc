#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msgode/errors.hpp"
#include "msgode/sim.hpp"

namespace msgode::io {

// On-disk layout shared by datasets and checkpoints:
//   "CDL1" | version u32 LE | json_len u64 LE | config JSON | payload | crc32 u32 LE
// The CRC (IEEE polynomial, as in zlib) covers everything between the version
// field and the checksum itself.
inline constexpr char kMagic[4] = {'C', 'D', 'L', '1'};
inline constexpr std::uint32_t kFormatVersion = 1;

std::uint32_t crc32_bytes(const void* data, std::size_t n);

// Little-endian byte-stream builder for container payloads.
class Writer {
public:
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f64(double v);
    // length-prefixed (u64 count) raw little-endian doubles
    void f64_array(const double* data, std::size_t n);
    void f64_array(const std::vector<double>& v) { f64_array(v.data(), v.size()); }
    // length-prefixed (u64 bit count) LSB-first packed bits
    void bits(const std::vector<bool>& v);
    void bytes(const void* data, std::size_t n);

    const std::string& buffer() const { return buf_; }

private:
    std::string buf_;
};

// Mirror of Writer; throws DataError on any read past the end.
class Reader {
public:
    explicit Reader(std::string data) : buf_(std::move(data)) {}

    std::uint32_t u32();
    std::uint64_t u64();
    double f64();
    std::vector<double> f64_array();
    std::vector<bool> bits();
    bool at_end() const { return pos_ == buf_.size(); }

private:
    const char* take(std::size_t n);
    std::string buf_;
    std::size_t pos_ = 0;
};

struct Container {
    std::string config_json;
    std::string payload;
};

// Atomically-ish write: builds the full byte string then writes in one pass.
void write_container(const std::string& path, const std::string& config_json,
                     const std::string& payload);

// Validates magic, version and checksum in that order, so a future version is
// reported as such even when its checksum would also fail.
Container read_container(const std::string& path);

// Dataset persistence on top of the container.
void save_dataset(const std::string& path, const sim::SystemConfig& config,
                  const std::vector<sim::Trajectory>& trajectories);

struct LoadedDataset {
    sim::SystemConfig config;
    std::vector<sim::Trajectory> trajectories;
};

LoadedDataset load_dataset(const std::string& path);

}  // namespace msgode::io
