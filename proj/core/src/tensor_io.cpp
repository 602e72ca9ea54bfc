#include "pathgt/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "pathgt/error.hpp"

namespace pathgt {

namespace {
constexpr char kMagic[8] = {'P', 'A', 'T', 'H', 'G', 'T', 'C', '1'};
}

std::string fnv1a_hex(std::span<const unsigned char> bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[h & 0xF];
        h >>= 4;
    }
    return out;
}

namespace detail {

void put_u64_le(std::vector<unsigned char>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

void put_f32_le(std::vector<unsigned char>& out, float v) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((bits >> (8 * i)) & 0xFF));
}

void put_f64_le(std::vector<unsigned char>& out, double v) { put_u64_le(out, std::bit_cast<std::uint64_t>(v)); }

std::uint64_t get_u64_le(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

float get_f32_le(const unsigned char* p) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
    return std::bit_cast<float>(v);
}

double get_f64_le(const unsigned char* p) { return std::bit_cast<double>(get_u64_le(p)); }

} // namespace detail

const NamedTensor& TensorContainer::get(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return t;
    }
    throw input_error("tensor container has no tensor named '" + name + "'");
}

bool TensorContainer::contains(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return true;
    }
    return false;
}

void write_tensor_container(const std::filesystem::path& path, const nlohmann::json& extra,
                            std::span<const NamedTensor> tensors) {
    std::vector<unsigned char> payload;
    nlohmann::json table = nlohmann::json::array();
    for (const auto& t : tensors) {
        std::size_t expected = 1;
        for (auto s : t.shape) expected *= s;
        if (expected != t.data.size()) throw runtime_error("tensor '" + t.name + "' shape does not match its data");
        const std::size_t offset = payload.size();
        for (float v : t.data) detail::put_f32_le(payload, v);
        std::span<const unsigned char> bytes(payload.data() + offset, payload.size() - offset);
        table.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}, {"checksum", fnv1a_hex(bytes)}});
    }
    nlohmann::json manifest = extra;
    manifest["format_version"] = kTensorFormatVersion;
    manifest["tensors"] = table;
    const std::string text = manifest.dump();

    std::vector<unsigned char> out(std::begin(kMagic), std::end(kMagic));
    detail::put_u64_le(out, text.size());
    out.insert(out.end(), text.begin(), text.end());
    out.insert(out.end(), payload.begin(), payload.end());

    std::ofstream f(path, std::ios::binary);
    if (!f) throw runtime_error("cannot write " + path.string());
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

TensorContainer read_tensor_container(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw input_error("cannot open " + path.string());
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 16 || std::memcmp(buf.data(), kMagic, 8) != 0) {
        throw input_error(path.string() + ": not a tensor container");
    }
    const std::uint64_t len = detail::get_u64_le(buf.data() + 8);
    if (16 + len > buf.size()) throw input_error(path.string() + ": truncated manifest");
    TensorContainer c;
    c.manifest = nlohmann::json::parse(buf.begin() + 16, buf.begin() + 16 + static_cast<std::ptrdiff_t>(len));
    if (c.manifest.value("format_version", 0) != kTensorFormatVersion) {
        throw input_error(path.string() + ": unsupported format_version");
    }
    const unsigned char* payload = buf.data() + 16 + len;
    const std::size_t payload_size = buf.size() - 16 - len;
    for (const auto& entry : c.manifest.at("tensors")) {
        NamedTensor t;
        t.name = entry.at("name").get<std::string>();
        t.shape = entry.at("shape").get<std::vector<std::size_t>>();
        std::size_t count = 1;
        for (auto s : t.shape) count *= s;
        const auto offset = entry.at("offset").get<std::size_t>();
        if (offset + 4 * count > payload_size) throw input_error(path.string() + ": tensor '" + t.name + "' out of range");
        std::span<const unsigned char> bytes(payload + offset, 4 * count);
        if (fnv1a_hex(bytes) != entry.at("checksum").get<std::string>()) {
            throw input_error(path.string() + ": checksum mismatch for tensor '" + t.name + "'");
        }
        t.data.resize(count);
        for (std::size_t i = 0; i < count; ++i) t.data[i] = detail::get_f32_le(payload + offset + 4 * i);
        c.tensors.push_back(std::move(t));
    }
    return c;
}

} // namespace pathgt
