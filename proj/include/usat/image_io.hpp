#pragma once

#include <filesystem>
#include <vector>

#include "usat/mat.hpp"

namespace usat {

/// 8-bit binary PGM (P5). Values are mapped linearly from [lo, hi] to
/// [0, 255] and clamped.
void write_pgm(const std::filesystem::path& path, const Mat& img, double lo, double hi);

/// 8-bit binary PPM (P6) from three equal-shaped channel planes.
void write_ppm(const std::filesystem::path& path, const Mat& r, const Mat& g, const Mat& b,
               double lo, double hi);

struct PnmInfo {
    std::string magic; // "P5" or "P6"
    int width = 0;
    int height = 0;
    int maxval = 0;
    size_t payload_bytes = 0;
};

/// Parses the header and verifies the payload size; used by tests.
PnmInfo read_pnm_info(const std::filesystem::path& path);

} // namespace usat
