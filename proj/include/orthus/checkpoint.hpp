#pragma once

#include "orthus/adamw.hpp"
#include "orthus/config.hpp"
#include "orthus/param_store.hpp"

#include <cstring>
#include <fstream>

namespace orthus {

// CRC-32 (reflected, polynomial 0xEDB88320) over a byte range.
uint32_t crc32(const unsigned char* data, size_t n, uint32_t crc = 0);

namespace ckpt {

constexpr char kMagic[8] = {'O', 'R', 'T', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kVersion = 1;

inline void put_u32(std::string& b, uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& b, uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_bytes(std::string& b, const void* p, size_t n) {
    b.append(reinterpret_cast<const char*>(p), n);
}

// Bounds-checked little-endian reader; any overrun is a checkpoint error.
struct Cursor {
    const unsigned char* p;
    size_t n, at = 0;

    void need(size_t k) const {
        if (at + k > n) throw CheckpointError("checkpoint file ends unexpectedly");
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= uint32_t(p[at + size_t(i)]) << (8 * i);
        at += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= uint64_t(p[at + size_t(i)]) << (8 * i);
        at += 8;
        return v;
    }
    std::string bytes(size_t k) {
        need(k);
        std::string s(reinterpret_cast<const char*>(p + at), k);
        at += k;
        return s;
    }
};

template <class S>
constexpr uint8_t dtype_code() {
    static_assert(std::is_same_v<S, float> || std::is_same_v<S, double>,
                  "checkpoints carry float or double tensors");
    return std::is_same_v<S, float> ? 0 : 1;
}

template <class S>
void put_tensor(std::string& b, const std::string& name, const MatrixX<S>& m, bool trainable) {
    put_u32(b, uint32_t(name.size()));
    put_bytes(b, name.data(), name.size());
    b.push_back(char(dtype_code<S>()));
    b.push_back(char(trainable ? 1 : 0));
    put_u64(b, uint64_t(m.rows()));
    put_u64(b, uint64_t(m.cols()));
    put_bytes(b, m.data(), sizeof(S) * size_t(m.size()));  // row-major, little-endian host
}

template <class S>
struct TensorRecord {
    std::string name;
    bool trainable = false;
    MatrixX<S> value;
};

template <class S>
TensorRecord<S> get_tensor(Cursor& c) {
    TensorRecord<S> r;
    uint32_t name_len = c.u32();
    r.name = c.bytes(name_len);
    uint8_t dtype = uint8_t(c.bytes(1)[0]);
    if (dtype != dtype_code<S>())
        throw CheckpointError("tensor \"" + r.name + "\" has dtype code " + std::to_string(dtype) +
                              ", expected " + std::to_string(dtype_code<S>()));
    r.trainable = c.bytes(1)[0] != 0;
    uint64_t rows = c.u64(), cols = c.u64();
    if (rows > (1ull << 32) || cols > (1ull << 32))
        throw CheckpointError("tensor \"" + r.name + "\" has implausible shape");
    r.value.resize(Index(rows), Index(cols));
    std::string payload = c.bytes(sizeof(S) * size_t(rows * cols));
    std::memcpy(r.value.data(), payload.data(), payload.size());
    return r;
}

}  // namespace ckpt

// Everything a resumed run needs: parameters with trainability flags, the
// optimizer moments, the RNG state, and the exact config text.
template <class S>
struct LoadedCheckpoint {
    Config config;
    std::string config_text;
    ParamStore<S> store;
    AdamWState<S> opt;
    Rng rng{0};
};

// Layout: magic, version, config text, RNG (seed + per-stream counters),
// optimizer step count, tensor table (parameters, then first/second moments
// as opt.m./opt.v. records), CRC-32 of everything before the trailer.
template <class S>
void save_checkpoint(const std::string& path, const std::string& config_text,
                     const ParamStore<S>& store, const AdamWState<S>& opt, const Rng& rng) {
    using namespace ckpt;
    if (!opt.m.empty() && opt.m.size() != store.size())
        fail("optimizer state tracks ", opt.m.size(), " tensors, store has ", store.size());

    std::string b;
    put_bytes(b, kMagic, sizeof kMagic);
    put_u32(b, kVersion);
    put_u64(b, uint64_t(config_text.size()));
    put_bytes(b, config_text.data(), config_text.size());
    put_u64(b, rng.seed());
    auto counters = rng.counters();
    put_u32(b, uint32_t(counters.size()));
    for (uint64_t c : counters) put_u64(b, c);
    put_u64(b, uint64_t(opt.t));

    uint64_t records = store.size() * (opt.m.empty() ? 1 : 3);
    put_u64(b, records);
    for (const auto& e : store.entries()) put_tensor(b, e.name, e.value, e.trainable);
    for (size_t i = 0; i < opt.m.size(); ++i) {
        put_tensor(b, "opt.m." + store.entries()[i].name, opt.m[i], false);
        put_tensor(b, "opt.v." + store.entries()[i].name, opt.v[i], false);
    }

    uint32_t crc = crc32(reinterpret_cast<const unsigned char*>(b.data()), b.size());
    put_u32(b, crc);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) fail("cannot open ", path, " for writing");
    f.write(b.data(), std::streamsize(b.size()));
    if (!f) fail("short write to ", path);
}

template <class S>
LoadedCheckpoint<S> load_checkpoint(const std::string& path) {
    using namespace ckpt;
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open " + path);
    std::string b((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    if (b.size() < sizeof kMagic + 8) throw CheckpointError("file too short to be a checkpoint");
    const auto* raw = reinterpret_cast<const unsigned char*>(b.data());
    uint32_t stored = 0;
    for (int i = 0; i < 4; ++i) stored |= uint32_t(raw[b.size() - 4 + size_t(i)]) << (8 * i);
    if (crc32(raw, b.size() - 4) != stored)
        throw CheckpointError("checksum mismatch: checkpoint is corrupt or truncated");

    Cursor c{raw, b.size() - 4};
    if (c.bytes(sizeof kMagic) != std::string(kMagic, sizeof kMagic))
        throw CheckpointError("not a checkpoint file (bad magic)");
    uint32_t version = c.u32();
    if (version != kVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));

    LoadedCheckpoint<S> out;
    out.config_text = c.bytes(c.u64());
    out.config.apply_text(out.config_text);
    uint64_t seed = c.u64();
    uint32_t nstreams = c.u32();
    if (nstreams != kStreamCount)
        throw CheckpointError("checkpoint has " + std::to_string(nstreams) + " RNG streams, expected " +
                              std::to_string(kStreamCount));
    std::array<uint64_t, kStreamCount> counters;
    for (auto& v : counters) v = c.u64();
    out.rng.restore(seed, counters);
    out.opt.t = int64_t(c.u64());

    uint64_t records = c.u64();
    std::vector<ckpt::TensorRecord<S>> moments;
    for (uint64_t i = 0; i < records; ++i) {
        auto r = get_tensor<S>(c);
        if (r.name.rfind("opt.m.", 0) == 0 || r.name.rfind("opt.v.", 0) == 0)
            moments.push_back(std::move(r));
        else
            out.store.add(r.name, std::move(r.value), r.trainable);
    }
    if (c.at != c.n) throw CheckpointError("trailing bytes after the tensor table");

    if (!moments.empty()) {
        if (moments.size() != 2 * out.store.size())
            throw CheckpointError("optimizer records do not pair up with the parameters");
        out.opt.m.resize(out.store.size());
        out.opt.v.resize(out.store.size());
        size_t found = 0;
        for (auto& r : moments) {
            bool is_m = r.name.rfind("opt.m.", 0) == 0;
            std::string base = r.name.substr(6);
            if (!out.store.has(base))
                throw CheckpointError("optimizer record \"" + r.name + "\" has no parameter");
            size_t slot = 0;
            while (out.store.entries()[slot].name != base) ++slot;
            (is_m ? out.opt.m : out.opt.v)[slot] = std::move(r.value);
            ++found;
        }
        if (found != moments.size()) throw CheckpointError("optimizer records do not pair up");
    }
    return out;
}

}  // namespace orthus
