#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace pathgt {

/// FNV-1a 64-bit digest, rendered as 16 lowercase hex digits.
std::string fnv1a_hex(std::span<const unsigned char> bytes);

struct NamedTensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<float> data;
};

/// On-disk layout:
///   8 bytes   magic "PATHGTC1"
///   8 bytes   manifest length (uint64, little-endian)
///   N bytes   JSON manifest {format_version, ..., tensors:[{name, shape, offset, checksum}]}
///   payload   float32 little-endian, offsets relative to payload start
struct TensorContainer {
    nlohmann::json manifest;
    std::vector<NamedTensor> tensors;

    const NamedTensor& get(const std::string& name) const;
    bool contains(const std::string& name) const;
};

inline constexpr int kTensorFormatVersion = 1;

void write_tensor_container(const std::filesystem::path& path, const nlohmann::json& extra,
                            std::span<const NamedTensor> tensors);

/// Verifies magic, format version and per-tensor checksums.
TensorContainer read_tensor_container(const std::filesystem::path& path);

namespace detail {
void put_u64_le(std::vector<unsigned char>& out, std::uint64_t v);
void put_f32_le(std::vector<unsigned char>& out, float v);
void put_f64_le(std::vector<unsigned char>& out, double v);
std::uint64_t get_u64_le(const unsigned char* p);
float get_f32_le(const unsigned char* p);
double get_f64_le(const unsigned char* p);
} // namespace detail

} // namespace pathgt
