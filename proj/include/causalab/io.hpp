#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace causalab::io {

uint64_t fnv1a64(const void* bytes, size_t len);
uint64_t fnv1a64(const std::string& s);
std::string hex64(uint64_t v);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& contents);
uint64_t hash_file(const std::filesystem::path& path);

// Little-endian float64 blobs used by checkpoints and dictionaries.
void append_f64le(std::string& out, const double* values, size_t count);
void read_f64le(const std::string& in, size_t offset, double* values, size_t count);

}  // namespace causalab::io
