#pragma once

#include <string>

#include "ipldm/tensor.hpp"

namespace ipldm {

// 8-bit grayscale image I/O. PGM is the primary format (binary P5,
// maxval 255); PNG is supported for convenience. write_image/read_image
// dispatch on the file extension.
void write_pgm(const std::string& path, const Tensor& image);
Tensor read_pgm(const std::string& path);

void write_png(const std::string& path, const Tensor& image);
Tensor read_png(const std::string& path);

void write_image(const std::string& path, const Tensor& image);
Tensor read_image(const std::string& path);

struct ManifestEntry {
    int64_t subject_id = 0;
    double age = 0.0;
    std::string filename;
};

// CSV with header subject_id,age,filename.
void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::string& path);

}  // namespace ipldm
