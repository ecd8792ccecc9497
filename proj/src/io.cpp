#include "causalab/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace causalab::io {

uint64_t fnv1a64(const void* bytes, size_t len) {
    const auto* p = static_cast<const uint8_t*>(bytes);
    uint64_t h = 0xcbf29ce484222325ull;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

uint64_t fnv1a64(const std::string& s) {
    return fnv1a64(s.data(), s.size());
}

std::string hex64(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open file: " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& contents) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write file: " + path.string());
    }
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) {
        throw std::runtime_error("short write: " + path.string());
    }
}

uint64_t hash_file(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    return fnv1a64(bytes.data(), bytes.size());
}

static_assert(std::endian::native == std::endian::little,
              "f64le payloads assume a little-endian host");

void append_f64le(std::string& out, const double* values, size_t count) {
    const size_t offset = out.size();
    out.resize(offset + count * sizeof(double));
    std::memcpy(out.data() + offset, values, count * sizeof(double));
}

void read_f64le(const std::string& in, size_t offset, double* values, size_t count) {
    if (offset + count * sizeof(double) > in.size()) {
        throw std::runtime_error("f64le payload truncated");
    }
    std::memcpy(values, in.data() + offset, count * sizeof(double));
}

}  // namespace causalab::io
