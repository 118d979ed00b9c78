#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ttcap/image.hpp"

namespace ttcap {

// Binary PPM (P6), the lossless on-disk format for corrupted outputs.
void write_ppm(const ImageInput& image, const std::string& path);
ImageInput read_ppm(const std::string& path, const std::string& id);

std::string sha256_hex(const void* data, size_t len);
std::string sha256_hex(const std::string& s);
std::string sha256_file(const std::string& path);

// write-temp-then-rename; a crash never leaves a half-written artifact.
void atomic_write_file(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);
bool file_exists(const std::string& path);
void ensure_dir(const std::string& path);

}  // namespace ttcap
