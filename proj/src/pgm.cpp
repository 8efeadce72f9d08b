#include "orthus/pgm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace orthus {

void write_pgm(const std::string& path, const MatrixX<float>& image) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("cannot open ", path, " for writing");
    out << "P5\n" << image.cols() << ' ' << image.rows() << "\n255\n";
    for (Index i = 0; i < image.rows(); ++i)
        for (Index j = 0; j < image.cols(); ++j) {
            float v = std::clamp(image(i, j), 0.0f, 1.0f);
            out.put(char(std::lround(v * 255.0f)));
        }
    if (!out) fail("write failed for ", path);
}

MatrixX<float> read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("cannot open ", path);
    std::string magic;
    long w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P5" || w <= 0 || h <= 0 || maxval != 255) fail(path, " is not a maxval-255 P5 PGM");
    in.get();  // single whitespace after the header
    MatrixX<float> img(h, w);
    for (Index i = 0; i < img.rows(); ++i)
        for (Index j = 0; j < img.cols(); ++j) {
            int c = in.get();
            if (c == EOF) fail(path, " is truncated");
            img(i, j) = float(c) / 255.0f;
        }
    return img;
}

MatrixX<float> tile_images(const std::vector<MatrixX<float>>& images) {
    if (images.empty()) fail("no images to tile");
    Index rows = images[0].rows();
    Index cols = 0;
    for (const auto& im : images) {
        if (im.rows() != rows) fail("tile_images: inconsistent heights");
        cols += im.cols() + 1;
    }
    MatrixX<float> out = MatrixX<float>::Zero(rows, cols - 1);
    Index off = 0;
    for (size_t k = 0; k < images.size(); ++k) {
        out.middleCols(off, images[k].cols()) = images[k];
        off += images[k].cols() + 1;
    }
    return out;
}

}  // namespace orthus
