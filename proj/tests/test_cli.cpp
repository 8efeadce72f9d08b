// End-to-end exercises of the command-line binary: exit-code contract, the
// staged pipeline at smoke scale, deterministic generation, and the error
// surface for bad configs and prompts. Each invocation is a real subprocess.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "orthus/common.hpp"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    f << text;
}

const fs::path& work_dir() {
    static fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / "orthus_cli_test";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

RunResult run(const std::string& args) {
    fs::path out = work_dir() / "stdout.txt";
    fs::path err = work_dir() / "stderr.txt";
    std::string cmd = std::string(ORTHUS_CLI_PATH) + " " + args + " >" + out.string() + " 2>" +
                      err.string();
    int status = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

// Small model, few steps: enough to exercise every command end to end.
const char* kTinyConfig =
    "synth_train_size = 64\n"
    "synth_heldout_size = 16\n"
    "ae_latent_dim = 4\n"
    "ae_codebook_size = 8\n"
    "ae_steps = 30\n"
    "ae_finetune_steps = 15\n"
    "model_layers = 1\n"
    "model_dim = 8\n"
    "model_heads = 2\n"
    "model_mlp_mult = 2\n"
    "diff_timesteps = 50\n"
    "diff_sample_steps = 10\n"
    "diff_head_width = 8\n"
    "diff_head_blocks = 1\n"
    "train_base_steps = 20\n"
    "train_post_steps = 20\n"
    "train_base_batch = 2\n"
    "train_post_batch = 2\n";

std::string tiny_cfg() {
    fs::path p = work_dir() / "tiny.cfg";
    if (!fs::exists(p)) spit(p, kTinyConfig);
    return p.string();
}

}  // namespace

TEST_CASE("usage errors exit 2 with help text") {
    RunResult unknown_cmd = run("no-such-command");
    CHECK(unknown_cmd.exit_code == 2);
    CHECK(unknown_cmd.err.find("Subcommands") != std::string::npos);

    RunResult unknown_flag = run("synth-data --no-such-flag");
    CHECK(unknown_flag.exit_code == 2);

    RunResult bare = run("");
    CHECK(bare.exit_code == 2);

    RunResult help = run("--help");
    CHECK(help.exit_code == 0);
    CHECK(help.out.find("gradcheck") != std::string::npos);
}

TEST_CASE("misspelled config keys are rejected with a single-line error") {
    fs::path bad = work_dir() / "bad.cfg";
    spit(bad, "model_dimm = 8\n");
    RunResult r = run("synth-data --config " + bad.string() + " --out " +
                      (work_dir() / "never").string());
    CHECK(r.exit_code == 1);
    CHECK(r.err.find("error: ") == 0);
    CHECK(r.err.find("model_dimm") != std::string::npos);
    CHECK(r.err.find('\n') == r.err.size() - 1);  // exactly one line
    CHECK_FALSE(fs::exists(work_dir() / "never"));
}

TEST_CASE("staged pipeline runs end to end at smoke scale") {
    std::string cfg = " --config " + tiny_cfg();
    std::string out = " --out " + (work_dir() / "w").string();

    RunResult synth = run("synth-data" + cfg + out);
    REQUIRE(synth.exit_code == 0);
    CHECK(fs::exists(work_dir() / "w" / "train.ortsyn"));
    CHECK(fs::exists(work_dir() / "w" / "heldout.ortsyn"));
    CHECK(fs::exists(work_dir() / "w" / "corpus_preview.pgm"));

    RunResult vae = run("train-vae" + cfg + out + " --jsonl");
    REQUIRE(vae.exit_code == 0);
    CHECK(fs::exists(work_dir() / "w" / "ae.ckpt"));

    RunResult ft = run("finetune-decoder" + cfg + out);
    REQUIRE(ft.exit_code == 0);
    CHECK(fs::exists(work_dir() / "w" / "ae_finetuned.ckpt"));

    RunResult base = run("train-base" + cfg + out);
    REQUIRE(base.exit_code == 0);
    CHECK(fs::exists(work_dir() / "w" / "base.ckpt"));

    RunResult post = run("post-train" + cfg + out);
    REQUIRE(post.exit_code == 0);
    CHECK(fs::exists(work_dir() / "w" / "post.ckpt"));

    // resuming appends more steps and exits cleanly
    RunResult resume = run("post-train" + cfg + out + " --resume --steps 5");
    REQUIRE(resume.exit_code == 0);

    RunResult ev = run("eval" + cfg + out + " --captions 4");
    REQUIRE(ev.exit_code == 0);
    for (const char* key : {"recon_psnr_continuous", "recon_ssim_continuous", "token_loss",
                            "patch_loss", "combined_loss", "caption_valid_rate"})
        CHECK(ev.out.find(key) != std::string::npos);

    // metrics log is append-only: one tagged block per stage that ran
    std::string log = slurp(work_dir() / "w" / "metrics.log");
    for (const char* tag : {"# train-vae", "# finetune-decoder", "# train-base", "# post-train"})
        CHECK(log.find(tag) != std::string::npos);
    std::string jsonl = slurp(work_dir() / "w" / "metrics.jsonl");
    CHECK(jsonl.find("\"stage\":\"train-vae\"") != std::string::npos);
}

TEST_CASE("generate is byte-identical for a repeated seed") {
    std::string cfg = " --config " + tiny_cfg();
    std::string out = " --out " + (work_dir() / "w").string();
    std::string prompt = " --prompt \"a small bright circle at top-left\" --seed 7";

    RunResult first = run("generate" + cfg + out + prompt);
    REQUIRE(first.exit_code == 0);
    fs::path trace = work_dir() / "w" / "gen_s7_0.trace.tsv";
    fs::path text = work_dir() / "w" / "gen_s7_0.txt";
    REQUIRE(fs::exists(trace));
    std::string trace1 = slurp(trace), text1 = slurp(text);

    RunResult second = run("generate" + cfg + out + prompt);
    REQUIRE(second.exit_code == 0);
    CHECK(slurp(trace) == trace1);
    CHECK(slurp(text) == text1);

    // a different seed writes different files
    RunResult other = run("generate" + cfg + out +
                          " --prompt \"a small bright circle at top-left\" --seed 8");
    REQUIRE(other.exit_code == 0);
    CHECK(fs::exists(work_dir() / "w" / "gen_s8_0.trace.tsv"));

    RunResult bad_word = run("generate" + cfg + out + " --prompt \"a purple dinosaur\" --seed 3");
    CHECK(bad_word.exit_code == 1);
    CHECK(bad_word.err.find("error: ") == 0);
    CHECK(bad_word.err.find("purple") != std::string::npos);

    RunResult no_prompt = run("generate" + cfg + out);
    CHECK(no_prompt.exit_code == 2);  // missing required flag is a usage error
}

TEST_CASE("gradcheck prints a per-kernel table and passes") {
    RunResult r = run("gradcheck --shapes 2");
    REQUIRE(r.exit_code == 0);
    for (const char* kernel : {"matmul", "layer_norm", "cross_entropy", "sequence_loss"})
        CHECK(r.out.find(kernel) != std::string::npos);
    CHECK(r.out.find("FAIL") == std::string::npos);
}

TEST_CASE("ablate writes the comparison table even at smoke scale") {
    std::string cfg = " --config " + tiny_cfg();
    std::string out = " --out " + (work_dir() / "w").string();
    fs::path abl_cfg = work_dir() / "abl.cfg";
    spit(abl_cfg, std::string(kTinyConfig) + "abl_base_steps = 6\nabl_post_steps = 6\n");

    RunResult r = run("ablate --config " + abl_cfg.string() + out + " --kind head");
    REQUIRE(r.exit_code == 0);
    CHECK(r.out.find("diffusion") != std::string::npos);
    CHECK(r.out.find("mse") != std::string::npos);
    CHECK(fs::exists(work_dir() / "w" / "ablation_head.txt"));

    RunResult bad = run("ablate" + cfg + out + " --kind nonsense");
    CHECK(bad.exit_code == 1);
    CHECK(bad.err.find("unknown ablation kind") != std::string::npos);
}
