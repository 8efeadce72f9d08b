#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "orthus/checkpoint.hpp"
#include "orthus/training.hpp"
#include "test_util.hpp"

#include <filesystem>
#include <fstream>

using namespace orthus;
using namespace orthus::testutil;

namespace {

std::string tmp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(bool(f));
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(bytes.data(), std::streamsize(bytes.size()));
}

// Rewrites the trailing checksum so structural tampering tests reach the parser.
std::string refreshed_crc(std::string bytes) {
    uint32_t crc = crc32(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size() - 4);
    for (int i = 0; i < 4; ++i) bytes[bytes.size() - 4 + size_t(i)] = char((crc >> (8 * i)) & 0xff);
    return bytes;
}

Config tiny_config() {
    Config cfg;
    cfg.ae_latent_dim = 4;
    cfg.ae_codebook_size = 8;
    cfg.model_layers = 1;
    cfg.model_dim = 8;
    cfg.model_heads = 2;
    cfg.model_mlp_mult = 2;
    cfg.model_max_len = 40;
    cfg.diff_timesteps = 50;
    cfg.diff_sample_steps = 10;
    cfg.diff_head_width = 8;
    cfg.diff_head_blocks = 1;
    cfg.train_base_batch = 2;
    cfg.train_post_batch = 2;
    return cfg;
}

OrthusModel<double> tiny_model(const Config& cfg, uint64_t seed = 42) {
    Rng rng(seed);
    AutoencoderConfig acfg;
    acfg.latent_dim = cfg.ae_latent_dim;
    acfg.codebook = cfg.ae_codebook_size;
    ParamStore<double> ae;
    init_autoencoder_params(ae, acfg, rng);
    ae.at("ae.vq.codes") = random_matrix<double>(rng, cfg.ae_codebook_size, cfg.ae_latent_dim, 0.5);
    return make_model(cfg, EmbedKind::Softmax, HeadKind::Diffusion, ae, rng);
}

}  // namespace

TEST_CASE("checksum matches the reference vector and chains over splits") {
    const unsigned char check[] = "123456789";
    CHECK(crc32(check, 9) == 0xCBF43926u);
    CHECK(crc32(check, 0) == 0u);
    // incremental use equals one pass over the concatenation
    CHECK(crc32(check + 4, 5, crc32(check, 4)) == 0xCBF43926u);
}

TEST_CASE("a checkpoint round-trips every piece of training state") {
    std::string path = tmp_path("orthus_ckpt_roundtrip.bin");

    ParamStore<double> store;
    Rng init(9);
    store.add("alpha", random_matrix<double>(init, 3, 4), true);
    store.add("beta", random_matrix<double>(init, 1, 5), false);
    store.add("gamma", random_matrix<double>(init, 2, 2), true);

    AdamWState<double> opt;
    opt.match(store);
    opt.t = 17;
    opt.m[0] = random_matrix<double>(init, 3, 4);
    opt.v[2] = random_matrix<double>(init, 2, 2);

    Rng rng(123);
    rng.gaussian(Stream::DiffNoise);
    rng.below(Stream::DataOrder, 10);
    rng.uniform(Stream::CondDrop);

    Config cfg = tiny_config();
    std::string cfg_text = cfg.serialize();
    save_checkpoint(path, cfg_text, store, opt, rng);

    auto loaded = load_checkpoint<double>(path);
    CHECK(loaded.config_text == cfg_text);
    CHECK(loaded.config.model_dim == cfg.model_dim);
    CHECK(loaded.config.ae_latent_dim == cfg.ae_latent_dim);

    REQUIRE(loaded.store.size() == store.size());
    for (size_t i = 0; i < store.size(); ++i) {
        const auto& a = store.entries()[i];
        const auto& b = loaded.store.entries()[i];
        CHECK(a.name == b.name);
        CHECK(a.trainable == b.trainable);
        CHECK(bitwise_equal(a.value, b.value));
    }

    CHECK(loaded.opt.t == 17);
    REQUIRE(loaded.opt.m.size() == 3);
    CHECK(bitwise_equal(loaded.opt.m[0], opt.m[0]));
    CHECK(bitwise_equal(loaded.opt.v[2], opt.v[2]));
    CHECK(bitwise_equal(loaded.opt.m[1], opt.m[1]));  // untouched zero moments survive too

    CHECK(loaded.rng.seed() == 123);
    CHECK(loaded.rng.counters() == rng.counters());

    // saving what was loaded reproduces the file byte for byte
    std::string path2 = tmp_path("orthus_ckpt_roundtrip2.bin");
    save_checkpoint(path2, loaded.config_text, loaded.store, loaded.opt, loaded.rng);
    CHECK(slurp(path) == slurp(path2));

    // the restored generator continues the same stream
    Rng fresh(123);
    fresh.gaussian(Stream::DiffNoise);
    fresh.below(Stream::DataOrder, 10);
    fresh.uniform(Stream::CondDrop);
    CHECK(loaded.rng.gaussian(Stream::DiffNoise) == fresh.gaussian(Stream::DiffNoise));

    std::filesystem::remove(path);
    std::filesystem::remove(path2);
}

TEST_CASE("optimizer moments are optional in the file") {
    std::string path = tmp_path("orthus_ckpt_nomoments.bin");
    ParamStore<double> store;
    Rng init(9);
    store.add("alpha", random_matrix<double>(init, 2, 3));
    AdamWState<double> opt;  // never matched: no moment records
    save_checkpoint(path, "", store, opt, Rng(0));

    auto loaded = load_checkpoint<double>(path);
    CHECK(loaded.store.size() == 1);
    CHECK(loaded.opt.m.empty());
    CHECK(loaded.opt.t == 0);
    CHECK(loaded.config_text.empty());
    std::filesystem::remove(path);
}

TEST_CASE("corruption anywhere in the file is caught by the checksum") {
    std::string path = tmp_path("orthus_ckpt_corrupt.bin");
    ParamStore<double> store;
    Rng init(9);
    store.add("alpha", random_matrix<double>(init, 3, 3));
    AdamWState<double> opt;
    save_checkpoint(path, "seed = 7", store, opt, Rng(7));
    std::string good = slurp(path);

    auto expect_error = [&](std::string bytes, const char* needle) {
        spit(path, bytes);
        try {
            load_checkpoint<double>(path);
            FAIL("expected a checkpoint error containing: ", needle);
        } catch (const CheckpointError& e) {
            CHECK(std::string(e.what()).find(needle) != std::string::npos);
        }
    };

    std::string flipped = good;
    flipped[good.size() / 2] = char(flipped[good.size() / 2] ^ 0x40);
    expect_error(flipped, "checksum mismatch");

    expect_error(good.substr(0, good.size() - 9), "checksum mismatch");  // truncated
    expect_error(good.substr(0, 8), "file too short");

    std::string bad_magic = good;
    bad_magic[0] = 'X';
    expect_error(refreshed_crc(bad_magic), "bad magic");

    std::string bad_version = good;
    bad_version[8] = 9;  // version field follows the magic
    expect_error(refreshed_crc(bad_version), "unsupported checkpoint version");

    std::filesystem::remove(path);
}

TEST_CASE("float and double tensor payloads do not cross-load") {
    std::string path = tmp_path("orthus_ckpt_dtype.bin");
    ParamStore<float> store;
    store.add("alpha", MatrixX<float>::Constant(2, 2, 0.5f));
    AdamWState<float> opt;
    save_checkpoint(path, "", store, opt, Rng(0));

    CHECK(load_checkpoint<float>(path).store.at("alpha")(0, 0) == 0.5f);
    try {
        load_checkpoint<double>(path);
        FAIL("expected a dtype error");
    } catch (const CheckpointError& e) {
        CHECK(std::string(e.what()).find("dtype") != std::string::npos);
    }
    std::filesystem::remove(path);
}

TEST_CASE("a resumed run reproduces continued training bit for bit") {
    std::string path = tmp_path("orthus_ckpt_resume.bin");
    Config cfg = tiny_config();
    Rng corpus_rng(99);
    Corpus corpus = make_corpus(corpus_rng, 4);

    // reference: six uninterrupted steps
    auto ref = tiny_model(cfg);
    Rng ref_rng(1);
    AdamWState<double> ref_opt;
    train_base(ref, corpus, ref_rng, ref_opt, 3);
    TrainReport ref_tail = train_base(ref, corpus, ref_rng, ref_opt, 3);

    // interrupted: three steps, a save/load cycle, three more
    auto m = tiny_model(cfg);
    Rng rng(1);
    AdamWState<double> opt;
    train_base(m, corpus, rng, opt, 3);
    save_checkpoint(path, m.cfg.serialize(), m.store, opt, rng);

    auto loaded = load_checkpoint<double>(path);
    auto resumed = model_from_store(loaded.config, std::move(loaded.store));
    TrainReport tail = train_base(resumed, corpus, loaded.rng, loaded.opt, 3);

    CHECK(resumed.store.hash_group() == ref.store.hash_group());
    REQUIRE(tail.curve.size() == ref_tail.curve.size());
    for (size_t i = 0; i < tail.curve.size(); ++i) {
        CHECK(tail.curve[i].total == ref_tail.curve[i].total);
        CHECK(tail.curve[i].patch_loss == ref_tail.curve[i].patch_loss);
    }
    std::filesystem::remove(path);
}

TEST_CASE("a model rebuilt from a store must be complete and consistent") {
    Config cfg = tiny_config();
    auto m = tiny_model(cfg);

    ParamStore<double> missing;
    for (const auto& e : m.store.entries())
        if (e.name != "lm.W") missing.add(e.name, e.value, e.trainable);
    try {
        model_from_store(cfg, std::move(missing));
        FAIL("expected a missing-parameter error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("lm.W") != std::string::npos);
    }

    Config wrong = cfg;
    wrong.ae_latent_dim = 6;
    ParamStore<double> copy;
    for (const auto& e : m.store.entries()) copy.add(e.name, e.value, e.trainable);
    try {
        model_from_store(wrong, std::move(copy));
        FAIL("expected a latent dim mismatch error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("latent dim") != std::string::npos);
    }
}
