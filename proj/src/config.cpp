#include "orthus/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace orthus {

namespace {

struct Field {
    const char* key;
    std::function<void(Config&, const std::string&)> set;
    std::function<std::string(const Config&)> get;
};

template <class T>
T parse_number(const std::string& key, const std::string& text) {
    T out;
    if constexpr (std::is_same_v<T, double>) {
        size_t pos = 0;
        try {
            out = std::stod(text, &pos);
        } catch (const std::exception&) {
            throw ConfigError("config key \"" + key + "\": cannot parse \"" + text + "\" as a number");
        }
        if (pos != text.size())
            throw ConfigError("config key \"" + key + "\": trailing characters in \"" + text + '"');
    } else {
        auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
        if (ec != std::errc() || p != text.data() + text.size())
            throw ConfigError("config key \"" + key + "\": cannot parse \"" + text + "\" as an integer");
    }
    return out;
}

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

#define FIELD(name)                                                                       \
    Field {                                                                               \
        #name,                                                                            \
            [](Config& c, const std::string& v) {                                         \
                c.name = parse_number<decltype(c.name)>(#name, v);                        \
            },                                                                            \
            [](const Config& c) {                                                         \
                if constexpr (std::is_same_v<decltype(c.name), double>)                   \
                    return format_double(c.name);                                         \
                else                                                                      \
                    return std::to_string(c.name);                                        \
            }                                                                             \
    }

const std::vector<Field>& fields() {
    static const std::vector<Field> f = {
        FIELD(synth_train_size),
        FIELD(synth_heldout_size),
        FIELD(synth_jitter_pos),
        FIELD(synth_jitter_scale),
        FIELD(synth_jitter_intensity),
        FIELD(synth_pixel_noise),
        FIELD(ae_latent_dim),
        FIELD(ae_codebook_size),
        FIELD(ae_commit_weight),
        FIELD(ae_lr),
        FIELD(ae_batch),
        FIELD(ae_steps),
        FIELD(ae_finetune_lr),
        FIELD(ae_finetune_steps),
        FIELD(embed_tau),
        FIELD(model_embed_kind),
        FIELD(model_head_kind),
        FIELD(train_objective),
        FIELD(model_layers),
        FIELD(model_dim),
        FIELD(model_heads),
        FIELD(model_mlp_mult),
        FIELD(model_max_len),
        FIELD(model_init_std),
        FIELD(model_rope_base),
        FIELD(diff_timesteps),
        FIELD(diff_beta_start),
        FIELD(diff_beta_end),
        FIELD(diff_sample_steps),
        FIELD(diff_head_width),
        FIELD(diff_head_blocks),
        FIELD(diff_cfg_scale),
        FIELD(diff_cond_drop),
        FIELD(train_lambda),
        FIELD(train_base_lr),
        FIELD(train_base_batch),
        FIELD(train_base_steps),
        FIELD(train_post_lr),
        FIELD(train_post_batch),
        FIELD(train_post_steps),
        FIELD(train_weight_decay),
        FIELD(train_adam_beta1),
        FIELD(train_adam_beta2),
        FIELD(train_adam_eps),
        FIELD(abl_base_steps),
        FIELD(abl_post_steps),
        FIELD(decode_budget),
        FIELD(seed),
    };
    return f;
}

#undef FIELD

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

}  // namespace

void Config::apply_text(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (size_t hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value, got \"" +
                              line + '"');
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        bool found = false;
        for (const Field& f : fields())
            if (key == f.key) {
                f.set(*this, value);
                found = true;
                break;
            }
        if (!found) throw ConfigError("unknown config key \"" + key + '"');
    }
    validate();
}

void Config::apply_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::ostringstream os;
    os << in.rdbuf();
    apply_text(os.str());
}

std::string Config::serialize() const {
    std::ostringstream os;
    for (const Field& f : fields()) os << f.key << " = " << f.get(*this) << '\n';
    return os.str();
}

void Config::apply_reference_preset() {
    train_base_lr = 1e-4;
    train_base_batch = 32;
    train_base_steps = 15000;
    train_post_lr = 1e-5;
    train_post_batch = 16;
    train_post_steps = 35000;
}

void Config::validate() const {
    auto positive = [](const char* key, auto v) {
        if (v <= 0) throw ConfigError(std::string("config key \"") + key + "\" must be positive");
    };
    positive("synth_train_size", synth_train_size);
    positive("synth_heldout_size", synth_heldout_size);
    positive("ae_latent_dim", ae_latent_dim);
    positive("ae_codebook_size", ae_codebook_size);
    positive("embed_tau", embed_tau);
    positive("model_layers", model_layers);
    positive("model_dim", model_dim);
    positive("model_heads", model_heads);
    positive("model_max_len", model_max_len);
    positive("diff_timesteps", diff_timesteps);
    positive("diff_sample_steps", diff_sample_steps);
    positive("diff_head_width", diff_head_width);
    positive("diff_head_blocks", diff_head_blocks);
    positive("train_base_steps", train_base_steps);
    positive("train_post_steps", train_post_steps);
    positive("train_base_batch", train_base_batch);
    positive("train_post_batch", train_post_batch);
    positive("decode_budget", decode_budget);
    if (model_dim % model_heads != 0) throw ConfigError("model_dim must be divisible by model_heads");
    if ((model_dim / model_heads) % 2 != 0)
        throw ConfigError("head dimension must be even for rotary embedding");
    if (diff_sample_steps > diff_timesteps)
        throw ConfigError("diff_sample_steps cannot exceed diff_timesteps");
    if (!(diff_beta_start > 0) || !(diff_beta_end > diff_beta_start) || !(diff_beta_end < 1))
        throw ConfigError("noise schedule needs 0 < diff_beta_start < diff_beta_end < 1");
    if (diff_cond_drop < 0 || diff_cond_drop >= 1)
        throw ConfigError("diff_cond_drop must be in [0, 1)");
    if (model_embed_kind < 0 || model_embed_kind > 2)
        throw ConfigError("model_embed_kind must be 0 (softmax), 1 (argmin) or 2 (linear)");
    if (model_head_kind < 0 || model_head_kind > 1)
        throw ConfigError("model_head_kind must be 0 (diffusion) or 1 (mse)");
    if (train_objective < 0 || train_objective > 2)
        throw ConfigError("train_objective must be 0 (unified), 1 (understanding) or 2 (generation)");
}

}  // namespace orthus
