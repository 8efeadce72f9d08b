#pragma once

#include "orthus/common.hpp"

#include <string>
#include <vector>

namespace orthus {

// Binary PGM (P5, maxval 255). Pixel values are clamped from [0,1] floats.
void write_pgm(const std::string& path, const MatrixX<float>& image);
MatrixX<float> read_pgm(const std::string& path);

// Tile images left-to-right into one row image with 1-pixel separators.
MatrixX<float> tile_images(const std::vector<MatrixX<float>>& images);

}  // namespace orthus
