#pragma once

#include "orthus/shape_spec.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace orthus::vocab {

// Fixed 32-entry vocabulary: control tokens, caption words, reserved filler.
constexpr int kPad = 0;
constexpr int kEos = 1;
constexpr int kSep = 2;  // separates the two modalities of one example
constexpr int kBoi = 3;  // begin image
constexpr int kEoi = 4;  // end image
constexpr int kSize = 32;

constexpr int kCaptionLen = 6;  // "a <size> <intensity> <shape> at <position>"

const std::string& word(int id);
int id(const std::string& word);  // -1 if unknown

std::vector<int> caption_tokens(const ShapeSpec& spec);
std::optional<ShapeSpec> parse_caption(std::span<const int> tokens);

// Whitespace tokenization; throws Error on words outside the vocabulary.
std::vector<int> tokenize(const std::string& text);
std::string detokenize(std::span<const int> tokens);

}  // namespace orthus::vocab
