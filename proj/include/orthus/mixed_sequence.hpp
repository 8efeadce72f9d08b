#pragma once

#include "orthus/tensor.hpp"
#include "orthus/vocab.hpp"

#include <variant>

namespace orthus {

// Interleaved token/patch sequences. Segments store only payload; the image
// control tokens are implied by structure and inserted by flatten(), so every
// image segment is bracketed by [BOI]/[EOI] by construction.
struct TextSegment {
    std::vector<int> ids;
};

template <class S>
struct ImageSegment {
    MatrixX<S> patches;  // patch_count x latent_dim feature rows
    bool open = false;   // still being generated: no closing bracket yet
};

template <class S>
struct MixedSequence {
    std::vector<std::variant<TextSegment, ImageSegment<S>>> segments;

    void append_text(std::vector<int> ids) { segments.push_back(TextSegment{std::move(ids)}); }
    void append_token(int id) {
        if (!segments.empty() && std::holds_alternative<TextSegment>(segments.back()))
            std::get<TextSegment>(segments.back()).ids.push_back(id);
        else
            append_text({id});
    }
    void append_image(MatrixX<S> patches, bool open = false) {
        segments.push_back(ImageSegment<S>{std::move(patches), open});
    }
};

// One flattened position: either a token id or a patch row of an image segment.
struct PosItem {
    bool is_patch = false;
    int token = -1;        // valid when !is_patch
    int image_index = -1;  // which image segment (counting image segments only)
    int patch_row = -1;    // row within that segment
};

template <class S>
std::vector<PosItem> flatten(const MixedSequence<S>& seq) {
    std::vector<PosItem> out;
    int image_index = 0;
    for (const auto& seg : seq.segments) {
        if (const auto* text = std::get_if<TextSegment>(&seg)) {
            for (int id : text->ids) {
                if (id < 0 || id >= vocab::kSize) fail("token id ", id, " out of vocabulary range");
                out.push_back({false, id, -1, -1});
            }
        } else {
            const auto& img = std::get<ImageSegment<S>>(seg);
            out.push_back({false, vocab::kBoi, -1, -1});
            for (Index r = 0; r < img.patches.rows(); ++r)
                out.push_back({true, -1, image_index, int(r)});
            if (!img.open) out.push_back({false, vocab::kEoi, -1, -1});
            ++image_index;
        }
    }
    return out;
}

template <class S>
Index flat_length(const MixedSequence<S>& seq) {
    return Index(flatten(seq).size());
}

// Standard training layouts. SEP separates the two modalities of an example.
template <class S>
MixedSequence<S> caption_to_image_sequence(const std::vector<int>& caption, MatrixX<S> patches) {
    MixedSequence<S> seq;
    std::vector<int> head = caption;
    head.push_back(vocab::kSep);
    seq.append_text(std::move(head));
    seq.append_image(std::move(patches));
    seq.append_text({vocab::kEos});
    return seq;
}

template <class S>
MixedSequence<S> image_to_caption_sequence(MatrixX<S> patches, const std::vector<int>& caption) {
    MixedSequence<S> seq;
    seq.append_image(std::move(patches));
    std::vector<int> tail{vocab::kSep};
    tail.insert(tail.end(), caption.begin(), caption.end());
    tail.push_back(vocab::kEos);
    seq.append_text(std::move(tail));
    return seq;
}

template <class S>
MixedSequence<S> image_only_sequence(MatrixX<S> patches) {
    MixedSequence<S> seq;
    seq.append_image(std::move(patches));
    return seq;
}

}  // namespace orthus
