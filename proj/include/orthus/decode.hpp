#pragma once

#include "orthus/model.hpp"

namespace orthus {

// --- generation trace -------------------------------------------------------

struct TraceEntry {
    int step = 0;            // emission index, 0-based
    bool patch_mode = false; // machine mode when the item was emitted
    bool is_patch = false;   // emitted kind
    int value = 0;           // token id, or patch index within its image
};

using GenerationTrace = std::vector<TraceEntry>;

inline std::string trace_tsv(const GenerationTrace& trace) {
    std::string out = "# step\tmode\tkind\tvalue\n";
    for (const TraceEntry& e : trace) {
        out += std::to_string(e.step);
        out += '\t';
        out += e.patch_mode ? "patch" : "text";
        out += '\t';
        out += e.is_patch ? "patch" : "token";
        out += '\t';
        out += std::to_string(e.value);
        out += '\n';
    }
    return out;
}

// Checks the bracket protocol over a trace: every begin-image token is
// followed by exactly `n` patch emissions (indices 0..n-1, patch mode) and a
// closing end-image token; outside a bracket nothing may emit in patch mode.
struct ProtocolReport {
    int images = 0;
    int violations = 0;
    std::string detail;  // first violation, for the log
};

inline ProtocolReport check_trace_protocol(const GenerationTrace& trace, Index n) {
    ProtocolReport rep;
    auto flag = [&rep](int step, const std::string& what) {
        ++rep.violations;
        if (rep.detail.empty()) rep.detail = "step " + std::to_string(step) + ": " + what;
    };
    Index in_image = -1;  // patches seen so far, -1 = outside a bracket
    for (const TraceEntry& e : trace) {
        if (in_image < 0) {
            if (e.is_patch || e.patch_mode) flag(e.step, "patch-mode emission outside an image");
            if (!e.is_patch && e.value == vocab::kEoi) flag(e.step, "end bracket without begin bracket");
            if (!e.is_patch && e.value == vocab::kBoi) in_image = 0;
            continue;
        }
        if (e.is_patch) {
            if (!e.patch_mode) flag(e.step, "patch emitted in text mode");
            if (e.value != in_image)
                flag(e.step, "patch index " + std::to_string(e.value) + ", expected " +
                                 std::to_string(in_image));
            ++in_image;
            continue;
        }
        // a token inside a bracket must be the closing bracket after n patches
        if (e.value != vocab::kEoi) flag(e.step, "token " + std::to_string(e.value) + " inside an image");
        else if (in_image != n)
            flag(e.step, "image closed after " + std::to_string(in_image) + " of " + std::to_string(n) +
                             " patches");
        ++rep.images;
        in_image = -1;
    }
    if (in_image >= 0) flag(trace.empty() ? 0 : trace.back().step, "trace ends inside an image");
    return rep;
}

// --- the interleaved decoding state machine ---------------------------------

// Next-item providers. The state machine is written against this interface so
// the protocol can be exercised with scripted stand-ins, independent of any
// trained parameters.
template <class S>
struct DecodePolicy {
    virtual ~DecodePolicy() = default;
    virtual int next_token(const MixedSequence<S>& so_far) = 0;
    virtual MatrixX<S> next_patch(const MixedSequence<S>& so_far) = 0;  // 1 x latent_dim row
};

template <class S>
struct GenerationResult {
    MixedSequence<S> sequence;
    GenerationTrace trace;
};

// Alternates token and patch emission. Text mode asks for tokens; a begin
// image token opens a patch block. Patch mode emits exactly
// `patches_per_image` feature rows, then the closing bracket is appended
// unconditionally and text mode resumes. Every emission, brackets included,
// consumes one unit of budget; running out of budget inside an image is an
// error because a partial image is undecodable.
template <class S>
GenerationResult<S> generate_with_policy(DecodePolicy<S>& policy, const MixedSequence<S>& prompt,
                                         Index patches_per_image, Index budget) {
    if (patches_per_image <= 0) fail("patches_per_image must be positive");
    if (budget < 0) fail("generation budget must be nonnegative");
    GenerationResult<S> out;
    out.sequence = prompt;

    bool patch_mode = false;
    Index patches_done = 0;
    if (!out.sequence.segments.empty()) {
        if (auto* img = std::get_if<ImageSegment<S>>(&out.sequence.segments.back()); img && img->open) {
            patch_mode = true;
            patches_done = img->patches.rows();
            if (patches_done >= patches_per_image)
                fail("open image segment in the prompt already has ", patches_done, " patches");
        }
    }

    int step = 0;
    while (step < budget) {
        if (patch_mode) {
            MatrixX<S> row = policy.next_patch(out.sequence);
            if (row.rows() != 1) throw ShapeError("patch provider must return a single row");
            auto& img = std::get<ImageSegment<S>>(out.sequence.segments.back());
            if (img.patches.size() == 0) {
                img.patches = row;
            } else {
                if (row.cols() != img.patches.cols())
                    throw ShapeError("patch width changed mid-image");
                img.patches.conservativeResize(img.patches.rows() + 1, Eigen::NoChange);
                img.patches.row(img.patches.rows() - 1) = row;
            }
            out.trace.push_back({step, true, true, int(patches_done)});
            ++patches_done;
            ++step;
            if (patches_done == patches_per_image) {
                if (step >= budget)
                    throw DecodeError("generation budget exhausted before the image could be closed");
                img.open = false;  // closing the segment emits the end bracket
                out.trace.push_back({step, true, false, vocab::kEoi});
                ++step;
                patch_mode = false;
                patches_done = 0;
            }
            continue;
        }
        int tok = policy.next_token(out.sequence);
        if (tok < 0 || tok >= vocab::kSize) fail("policy emitted token ", tok, " outside the vocabulary");
        if (tok == vocab::kBoi) {
            out.sequence.append_image(MatrixX<S>(0, 0), /*open=*/true);
            out.trace.push_back({step, false, false, vocab::kBoi});
            ++step;
            patch_mode = true;
            patches_done = 0;
            continue;
        }
        out.sequence.append_token(tok);
        out.trace.push_back({step, false, false, tok});
        ++step;
        if (tok == vocab::kEos) break;
    }
    if (patch_mode)
        throw DecodeError("generation budget exhausted mid-image (" + std::to_string(patches_done) +
                          " of " + std::to_string(patches_per_image) + " patches)");
    return out;
}

// Trained-model policy: greedy tokens from the linear head, patches from the
// sampler (or the regression head, which is deterministic by construction).
template <class S>
class ModelPolicy : public DecodePolicy<S> {
  public:
    ModelPolicy(const OrthusModel<S>& model, Rng& rng, double cfg_scale)
        : model_(model), rng_(rng), cfg_scale_(cfg_scale) {}

    int next_token(const MixedSequence<S>& so_far) override {
        MatrixX<S> states = forward_states(model_, so_far);
        MatrixX<S> logits = states.row(states.rows() - 1) * model_.store.at("lm.W");
        return greedy_token<S>(logits);
    }

    MatrixX<S> next_patch(const MixedSequence<S>& so_far) override {
        MatrixX<S> states = forward_states(model_, so_far);
        MatrixX<S> f = states.row(states.rows() - 1);
        if (model_.head_kind == HeadKind::Mse) return mse_head_predict(model_.store, model_.head, f);
        return ddim_sample(model_.store, model_.head, model_.sched, model_.t_table, &f, cfg_scale_, rng_);
    }

  private:
    const OrthusModel<S>& model_;
    Rng& rng_;
    double cfg_scale_;
};

template <class S>
GenerationResult<S> generate(const OrthusModel<S>& model, const MixedSequence<S>& prompt, Rng& rng,
                             Index budget = -1, double cfg_scale = -1) {
    if (budget < 0) budget = Index(model.cfg.decode_budget);
    if (cfg_scale < 0) cfg_scale = model.cfg.diff_cfg_scale;
    ModelPolicy<S> policy(model, rng, cfg_scale);
    return generate_with_policy<S>(policy, prompt, kPatchCount, budget);
}

// Caption an image: prompt [image][SEP], read tokens until EOS.
template <class S>
std::vector<int> generate_caption(const OrthusModel<S>& model, const Image& image, Rng& rng) {
    MixedSequence<S> prompt;
    prompt.append_image(encode_features<S>(model.store, image));
    prompt.append_token(vocab::kSep);
    GenerationResult<S> res = generate(model, prompt, rng);
    std::vector<int> tokens;
    for (const TraceEntry& e : res.trace)
        if (!e.is_patch && e.value != vocab::kEos && e.value != vocab::kBoi && e.value != vocab::kEoi)
            tokens.push_back(e.value);
    return tokens;
}

// Render a caption: prompt [caption tokens][SEP]; the model is expected to
// open an image itself.
template <class S>
GenerationResult<S> generate_from_caption(const OrthusModel<S>& model, const std::vector<int>& caption,
                                          Rng& rng) {
    MixedSequence<S> prompt;
    std::vector<int> head = caption;
    head.push_back(vocab::kSep);
    prompt.append_text(std::move(head));
    return generate(model, prompt, rng);
}

// --- turning sequences back into pixels -------------------------------------

// Every image segment must be closed and carry exactly `n` patches; stray
// bracket tokens inside text are rejected. Positions refer to the flattened
// sequence.
template <class S>
std::vector<Image> decode_image_segments(const MixedSequence<S>& seq, const ParamStore<S>& store,
                                         Index n = kPatchCount) {
    std::vector<Image> out;
    Index pos = 0;
    for (const auto& seg : seq.segments) {
        if (const auto* text = std::get_if<TextSegment>(&seg)) {
            for (int id : text->ids) {
                if (id == vocab::kBoi || id == vocab::kEoi)
                    throw DecodeError("stray image bracket token at position " + std::to_string(pos));
                ++pos;
            }
            continue;
        }
        const auto& img = std::get<ImageSegment<S>>(seg);
        if (img.open)
            throw DecodeError("unterminated image segment at position " + std::to_string(pos));
        if (img.patches.rows() != n)
            throw DecodeError("image segment at position " + std::to_string(pos) + " has " +
                              std::to_string(img.patches.rows()) + " patches, expected " +
                              std::to_string(n));
        out.push_back(decode_features(store, img.patches));
        pos += 1 + n + 1;  // begin bracket, patches, end bracket
    }
    return out;
}

}  // namespace orthus
