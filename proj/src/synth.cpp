#include "orthus/synth.hpp"

#include "orthus/vocab.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace orthus {

namespace {

// Signed-distance-style boundary functions; negative inside. The exact
// falloff only needs to be continuous for the 1-pixel antialiasing band.
double boundary(ShapeKind shape, double dr, double dc, double r) {
    switch (shape) {
        case ShapeKind::Circle:
            return std::sqrt(dr * dr + dc * dc) - r;
        case ShapeKind::Square:
            return std::max(std::abs(dr), std::abs(dc)) - r;
        case ShapeKind::Triangle: {
            // apex up: full width at the base row, zero width at the apex
            double half_w = (dr + r) * 0.5;
            return std::max(std::abs(dr) - r, std::abs(dc) - half_w);
        }
        case ShapeKind::Cross: {
            double t = std::max(0.9, 0.35 * r);
            double horiz = std::max(std::abs(dr) - t, std::abs(dc) - r);
            double vert = std::max(std::abs(dc) - t, std::abs(dr) - r);
            return std::min(horiz, vert);
        }
    }
    fail("unknown shape kind");
}

template <class T>
void write_raw(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_raw(std::istream& is, const char* what) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) fail("corpus file truncated while reading ", what);
    return v;
}

}  // namespace

RenderParams canonical_params(const ShapeSpec& spec) {
    RenderParams p;
    bool top = spec.position == PositionKind::TopLeft || spec.position == PositionKind::TopRight;
    bool left = spec.position == PositionKind::TopLeft || spec.position == PositionKind::BottomLeft;
    p.center_r = top ? 3.5 : 11.5;
    p.center_c = left ? 3.5 : 11.5;
    p.radius = spec.size == SizeKind::Small ? 1.8 : 2.8;
    p.intensity = spec.intensity == IntensityKind::Dark ? 0.45 : 0.9;
    return p;
}

Image render_with_params(ShapeKind shape, const RenderParams& p) {
    Image img(kImageSize, kImageSize);
    for (Index i = 0; i < kImageSize; ++i)
        for (Index j = 0; j < kImageSize; ++j) {
            double d = boundary(shape, double(i) - p.center_r, double(j) - p.center_c, p.radius);
            double coverage = std::clamp(0.5 - d, 0.0, 1.0);
            img(i, j) = float(p.background + (p.intensity - p.background) * coverage);
        }
    return img;
}

Image render(const ShapeSpec& spec) { return render_with_params(spec.shape, canonical_params(spec)); }

Corpus make_corpus(Rng& rng, int64_t count, const JitterConfig& jitter) {
    if (count <= 0) fail("corpus size must be positive, got ", count);
    Corpus corpus;
    corpus.reserve(size_t(count));
    for (int64_t i = 0; i < count; ++i) {
        CorpusItem item;
        item.spec = spec_from_index(int(i % kSpecCount));
        RenderParams p = canonical_params(item.spec);
        p.center_r += (rng.uniform(Stream::CorpusJitter) * 2 - 1) * jitter.pos;
        p.center_c += (rng.uniform(Stream::CorpusJitter) * 2 - 1) * jitter.pos;
        p.radius *= 1.0 + (rng.uniform(Stream::CorpusJitter) * 2 - 1) * jitter.scale;
        p.intensity += (rng.uniform(Stream::CorpusJitter) * 2 - 1) * jitter.intensity;
        item.image = render_with_params(item.spec.shape, p);
        if (jitter.pixel_noise > 0)
            for (Index r = 0; r < kImageSize; ++r)
                for (Index c = 0; c < kImageSize; ++c)
                    item.image(r, c) = float(std::clamp(
                        double(item.image(r, c)) + rng.gaussian(Stream::CorpusJitter) * jitter.pixel_noise,
                        0.0, 1.0));
        item.caption = vocab::caption_tokens(item.spec);
        corpus.push_back(std::move(item));
    }
    return corpus;
}

void write_corpus(const std::string& path, const Corpus& corpus) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("cannot open ", path, " for writing");
    out.write("ORTSYN1\0", 8);
    write_raw(out, uint32_t(corpus.size()));
    for (const CorpusItem& item : corpus) {
        uint8_t attrs[4] = {uint8_t(item.spec.shape), uint8_t(item.spec.size),
                            uint8_t(item.spec.intensity), uint8_t(item.spec.position)};
        out.write(reinterpret_cast<const char*>(attrs), 4);
        if (item.image.rows() != kImageSize || item.image.cols() != kImageSize)
            fail("corpus image must be ", kImageSize, 'x', kImageSize);
        out.write(reinterpret_cast<const char*>(item.image.data()), sizeof(float) * item.image.size());
        write_raw(out, uint16_t(item.caption.size()));
        for (int t : item.caption) write_raw(out, uint16_t(t));
    }
    if (!out) fail("write failed for ", path);
}

Corpus read_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("cannot open ", path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, "ORTSYN1\0", 8) != 0) fail(path, " is not a corpus file");
    uint32_t count = read_raw<uint32_t>(in, "item count");
    Corpus corpus;
    corpus.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        CorpusItem item;
        uint8_t attrs[4];
        in.read(reinterpret_cast<char*>(attrs), 4);
        if (!in) fail(path, " truncated at item ", i);
        if (attrs[0] > 3 || attrs[1] > 1 || attrs[2] > 1 || attrs[3] > 3)
            fail(path, ": invalid spec attributes at item ", i);
        item.spec = {ShapeKind(attrs[0]), SizeKind(attrs[1]), IntensityKind(attrs[2]),
                     PositionKind(attrs[3])};
        item.image.resize(kImageSize, kImageSize);
        in.read(reinterpret_cast<char*>(item.image.data()), sizeof(float) * item.image.size());
        if (!in) fail(path, " truncated at item ", i);
        uint16_t len = read_raw<uint16_t>(in, "caption length");
        item.caption.resize(len);
        for (uint16_t k = 0; k < len; ++k) item.caption[k] = read_raw<uint16_t>(in, "caption token");
        corpus.push_back(std::move(item));
    }
    return corpus;
}

MatrixX<float> patchify(const Image& image) {
    if (image.rows() != kImageSize || image.cols() != kImageSize)
        throw ShapeError("patchify expects a " + std::to_string(kImageSize) + "-pixel square image");
    MatrixX<float> out(kPatchCount, kPatchPixels);
    Index per_side = kImageSize / kPatchSize;
    for (Index p = 0; p < kPatchCount; ++p) {
        Index pr = (p / per_side) * kPatchSize, pc = (p % per_side) * kPatchSize;
        for (Index r = 0; r < kPatchSize; ++r)
            for (Index c = 0; c < kPatchSize; ++c) out(p, r * kPatchSize + c) = image(pr + r, pc + c);
    }
    return out;
}

Image unpatchify(const MatrixX<float>& patches) {
    if (patches.rows() != kPatchCount || patches.cols() != kPatchPixels)
        throw ShapeError("unpatchify expects " + std::to_string(kPatchCount) + "x" +
                         std::to_string(kPatchPixels) + " patches");
    Image img(kImageSize, kImageSize);
    Index per_side = kImageSize / kPatchSize;
    for (Index p = 0; p < kPatchCount; ++p) {
        Index pr = (p / per_side) * kPatchSize, pc = (p % per_side) * kPatchSize;
        for (Index r = 0; r < kPatchSize; ++r)
            for (Index c = 0; c < kPatchSize; ++c) img(pr + r, pc + c) = patches(p, r * kPatchSize + c);
    }
    return img;
}

double psnr(const Image& a, const Image& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("psnr: image size mismatch");
    double mse = (a - b).cast<double>().array().square().mean();
    if (mse == 0) return 100.0;
    return std::min(10.0 * std::log10(1.0 / mse), 100.0);
}

double ssim(const Image& a, const Image& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("ssim: image size mismatch");
    constexpr Index kWin = 8;
    constexpr double kC1 = 1e-4;  // (0.01 * range)^2
    constexpr double kC2 = 9e-4;  // (0.03 * range)^2
    if (a.rows() < kWin || a.cols() < kWin) throw ShapeError("ssim: image smaller than the 8x8 window");
    double total = 0;
    int windows = 0;
    for (Index i = 0; i + kWin <= a.rows(); ++i)
        for (Index j = 0; j + kWin <= a.cols(); ++j) {
            auto wa = a.block(i, j, kWin, kWin).cast<double>().array();
            auto wb = b.block(i, j, kWin, kWin).cast<double>().array();
            double ma = wa.mean(), mb = wb.mean();
            double va = (wa - ma).square().mean();
            double vb = (wb - mb).square().mean();
            double cov = ((wa - ma) * (wb - mb)).mean();
            total += ((2 * ma * mb + kC1) * (2 * cov + kC2)) /
                     ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
            ++windows;
        }
    return total / windows;
}

}  // namespace orthus
