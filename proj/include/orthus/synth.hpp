#pragma once

#include "orthus/rng.hpp"
#include "orthus/shape_spec.hpp"

#include <string>
#include <vector>

namespace orthus {

constexpr Index kImageSize = 16;
constexpr Index kPatchSize = 4;
constexpr Index kPatchCount = 16;   // (16/4)^2
constexpr Index kPatchPixels = 16;  // 4*4

using Image = MatrixX<float>;  // kImageSize x kImageSize, values in [0,1]

struct RenderParams {
    double center_r = 0, center_c = 0;
    double radius = 0;
    double intensity = 0;
    double background = 0.1;
};

// Canonical geometry for a spec: quadrant centers at +-(3.5, 11.5),
// radius 1.8 (small) / 2.8 (large), intensity 0.45 (dark) / 0.9 (bright).
RenderParams canonical_params(const ShapeSpec& spec);

// Deterministic antialiased rasterisation; same spec + params => same pixels.
Image render_with_params(ShapeKind shape, const RenderParams& p);
Image render(const ShapeSpec& spec);

struct JitterConfig {
    double pos = 1.5;
    double scale = 0.15;
    double intensity = 0.08;
    double pixel_noise = 0.015;
};

struct CorpusItem {
    ShapeSpec spec;
    Image image;
    std::vector<int> caption;
};

using Corpus = std::vector<CorpusItem>;

// Specs cycle through the 64-cell attribute grid (exactly uniform when count
// is a multiple of 64); each item gets independent continuous jitter drawn
// from the CorpusJitter stream, so corpora produced from one generator in
// sequence use disjoint draws.
Corpus make_corpus(Rng& rng, int64_t count, const JitterConfig& jitter = {});

// Binary corpus file ("ORTSYN1\0", little-endian).
void write_corpus(const std::string& path, const Corpus& corpus);
Corpus read_corpus(const std::string& path);

// Rearrange between image pixels and per-patch rows (patches and pixels both
// raster order): out is kPatchCount x kPatchPixels.
MatrixX<float> patchify(const Image& image);
Image unpatchify(const MatrixX<float>& patches);

// Peak-signal-to-noise ratio for unit-range images, capped at 100 dB.
double psnr(const Image& a, const Image& b);

// Mean SSIM over dense 8x8 windows, uniform weighting, unit dynamic range.
double ssim(const Image& a, const Image& b);

}  // namespace orthus
