#include "orthus/vocab.hpp"

#include <array>
#include <sstream>
#include <unordered_map>

namespace orthus::vocab {

namespace {

std::array<std::string, kSize> build_words() {
    std::array<std::string, kSize> w;
    w[kPad] = "[PAD]";
    w[kEos] = "[EOS]";
    w[kSep] = "[SEP]";
    w[kBoi] = "[BOI]";
    w[kEoi] = "[EOI]";
    int next = 5;
    w[next++] = "a";
    w[next++] = "at";
    for (int k = 0; k < 2; ++k) w[next++] = size_word(SizeKind(k));
    for (int k = 0; k < 2; ++k) w[next++] = intensity_word(IntensityKind(k));
    for (int k = 0; k < 4; ++k) w[next++] = shape_word(ShapeKind(k));
    for (int k = 0; k < 4; ++k) w[next++] = position_word(PositionKind(k));
    for (; next < kSize; ++next) w[next] = "<reserved" + std::to_string(next) + ">";
    return w;
}

const std::array<std::string, kSize>& words() {
    static const std::array<std::string, kSize> w = build_words();
    return w;
}

const std::unordered_map<std::string, int>& index() {
    static const std::unordered_map<std::string, int> idx = [] {
        std::unordered_map<std::string, int> m;
        for (int i = 0; i < kSize; ++i) m[words()[i]] = i;
        return m;
    }();
    return idx;
}

}  // namespace

const std::string& word(int id) {
    if (id < 0 || id >= kSize) fail("token id ", id, " out of range [0, ", kSize, ')');
    return words()[size_t(id)];
}

int id(const std::string& w) {
    auto it = index().find(w);
    return it == index().end() ? -1 : it->second;
}

std::vector<int> caption_tokens(const ShapeSpec& s) {
    return {id("a"), id(size_word(s.size)), id(intensity_word(s.intensity)), id(shape_word(s.shape)),
            id("at"), id(position_word(s.position))};
}

std::optional<ShapeSpec> parse_caption(std::span<const int> t) {
    if (t.size() != kCaptionLen) return std::nullopt;
    if (t[0] != id("a") || t[4] != id("at")) return std::nullopt;
    ShapeSpec s;
    bool ok = false;
    for (int k = 0; k < 2; ++k)
        if (t[1] == id(size_word(SizeKind(k)))) s.size = SizeKind(k), ok = true;
    if (!ok) return std::nullopt;
    ok = false;
    for (int k = 0; k < 2; ++k)
        if (t[2] == id(intensity_word(IntensityKind(k)))) s.intensity = IntensityKind(k), ok = true;
    if (!ok) return std::nullopt;
    ok = false;
    for (int k = 0; k < 4; ++k)
        if (t[3] == id(shape_word(ShapeKind(k)))) s.shape = ShapeKind(k), ok = true;
    if (!ok) return std::nullopt;
    ok = false;
    for (int k = 0; k < 4; ++k)
        if (t[5] == id(position_word(PositionKind(k)))) s.position = PositionKind(k), ok = true;
    if (!ok) return std::nullopt;
    return s;
}

std::vector<int> tokenize(const std::string& text) {
    std::vector<int> out;
    std::istringstream is(text);
    std::string w;
    while (is >> w) {
        int t = id(w);
        if (t < 0) fail("word \"", w, "\" is not in the vocabulary");
        out.push_back(t);
    }
    return out;
}

std::string detokenize(std::span<const int> tokens) {
    std::string out;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += word(tokens[i]);
    }
    return out;
}

}  // namespace orthus::vocab
