// Copyright (c) 2026, The lfs-gan authors
// SPDX-License-Identifier: Apache-2.0
//

#include "lfs/run_config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace lfs {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::string join(const std::vector<std::string>& v) {
    std::string out;
    for (std::size_t j = 0; j < v.size(); ++j) out += (j ? "," : "") + v[j];
    return out;
}

std::uint64_t to_u64(const std::string& v) {
    std::size_t used = 0;
    if (v.empty() || v[0] == '-') throw std::invalid_argument("expected a nonnegative integer");
    const unsigned long long x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument("expected a nonnegative integer");
    return x;
}

double to_double(const std::string& v) {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("expected a number");
    return x;
}

bool to_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::invalid_argument("expected true or false");
}

std::string from_bool(bool b) { return b ? "true" : "false"; }

std::string from_double(double d) {
    std::ostringstream s;
    s.precision(17);
    s << d;
    return s.str();
}

struct Key {
    const char* name;
    const char* description;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define LFS_SIZE_KEY(NAME, FIELD, DESC)                                                          \
    Key{NAME, DESC, [](RunConfig& c, const std::string& v) { c.FIELD = static_cast<std::size_t>(to_u64(v)); }, \
        [](const RunConfig& c) { return std::to_string(c.FIELD); }}
#define LFS_U64_KEY(NAME, FIELD, DESC) \
    Key{NAME, DESC, [](RunConfig& c, const std::string& v) { c.FIELD = to_u64(v); }, [](const RunConfig& c) { return std::to_string(c.FIELD); }}
#define LFS_DOUBLE_KEY(NAME, FIELD, DESC) \
    Key{NAME, DESC, [](RunConfig& c, const std::string& v) { c.FIELD = to_double(v); }, [](const RunConfig& c) { return from_double(c.FIELD); }}
#define LFS_BOOL_KEY(NAME, FIELD, DESC) \
    Key{NAME, DESC, [](RunConfig& c, const std::string& v) { c.FIELD = to_bool(v); }, [](const RunConfig& c) { return from_bool(c.FIELD); }}
#define LFS_STRING_KEY(NAME, FIELD, DESC) \
    Key{NAME, DESC, [](RunConfig& c, const std::string& v) { c.FIELD = v; }, [](const RunConfig& c) { return std::string(c.FIELD); }}

const std::vector<Key>& keys() {
    static const std::vector<Key> table = {
        LFS_U64_KEY("seed", train.seed, "training seed (overridden by --seed)"),
        LFS_U64_KEY("base_seed", base_seed, "seed of the frozen base generator weights"),
        LFS_STRING_KEY("data_dir", data_dir, "directory holding one sub-directory of PNGs per task"),
        LFS_STRING_KEY("out_dir", out_dir, "run directory for base weights, checkpoints, logs and metrics"),
        Key{"tasks", "comma-separated task ids; empty means every sub-directory of data_dir",
            [](RunConfig& c, const std::string& v) { c.tasks = split_list(v); }, [](const RunConfig& c) { return join(c.tasks); }},
        LFS_STRING_KEY("source", source, "domain the ordering starts from; empty starts from the first task alphabetically"),
        LFS_STRING_KEY("distance_matrix", distance_matrix, "CSV distance matrix for ordering; empty computes one from the task folders"),
        LFS_BOOL_KEY("order_tasks", order_tasks, "train tasks in greedy max-distance order instead of the listed order"),
        LFS_SIZE_KEY("z_dim", generator.z_dim, "latent size"),
        LFS_SIZE_KEY("w_dim", generator.w_dim, "intermediate latent size"),
        LFS_SIZE_KEY("mapping_layers", generator.mapping_layers, "mapping network depth"),
        LFS_SIZE_KEY("base_resolution", generator.base_resolution, "side of the constant input"),
        LFS_SIZE_KEY("resolution", generator.target_resolution, "output side: 16, 32 or 64"),
        LFS_SIZE_KEY("const_channels", generator.const_channels, "channels of the constant input"),
        Key{"channels", "comma-separated channels per synthesis block",
            [](RunConfig& c, const std::string& v) {
                c.generator.channels.clear();
                for (const auto& s : split_list(v)) c.generator.channels.push_back(static_cast<std::size_t>(to_u64(s)));
            },
            [](const RunConfig& c) {
                std::vector<std::string> s;
                for (auto ch : c.generator.channels) s.push_back(std::to_string(ch));
                return join(s);
            }},
        LFS_BOOL_KEY("noise_injection", generator.noise_injection, "per-pixel noise after each synthesis conv"),
        LFS_BOOL_KEY("modulate_affine", generator.modulate_affine, "also attach modulators to the style affine layers"),
        LFS_DOUBLE_KEY("lr", train.lr, "Adam learning rate for generator modulators and discriminator"),
        LFS_DOUBLE_KEY("beta1", train.beta1, "Adam first-moment decay"),
        LFS_DOUBLE_KEY("beta2", train.beta2, "Adam second-moment decay"),
        LFS_SIZE_KEY("batch_size", train.batch_size, "real images per step (also the number of cms anchors)"),
        LFS_SIZE_KEY("iterations", train.iterations, "training steps per task"),
        LFS_SIZE_KEY("d_steps", train.d_steps, "discriminator updates per generator update"),
        LFS_DOUBLE_KEY("lambda", train.cms.lambda, "weight of the cluster-wise mode seeking loss"),
        LFS_BOOL_KEY("use_dw", train.cms.targets.use_dw, "include the latent-level ratio in the cms loss"),
        LFS_BOOL_KEY("use_dF", train.cms.targets.use_dF, "include the feature-level ratio in the cms loss"),
        LFS_BOOL_KEY("use_dI", train.cms.targets.use_dI, "include the image-level ratio in the cms loss"),
        LFS_DOUBLE_KEY("epsilon", train.cms.epsilon, "denominator guard of the cms loss"),
        LFS_SIZE_KEY("oversample", train.cms.oversample_factor, "generated samples per anchor in the cms loss"),
        LFS_SIZE_KEY("rank", train.rank, "modulator rank r"),
        LFS_BOOL_KEY("with_bias", train.with_bias, "train the A1 path of conv modulators"),
        Key{"activation", "modulator activation: identity, sigmoid, tanh, leaky_relu, gelu, silu or relu",
            [](RunConfig& c, const std::string& v) { c.train.act = parse_activation(v); },
            [](const RunConfig& c) { return std::string(activation_name(c.train.act)); }},
        LFS_STRING_KEY("distance", train.distance, "perceptual distance: downsampled_l1 or random_conv"),
        LFS_SIZE_KEY("toy_tasks", toy_tasks, "tasks rendered by make-toy"),
        LFS_SIZE_KEY("toy_k", toy_k, "images per toy task"),
        LFS_SIZE_KEY("eval_diversity_n", eval_diversity_n, "generated images for B-LPIPS and I-LPIPS"),
        LFS_SIZE_KEY("eval_frechet_n", eval_frechet_n, "generated images for the Frechet embedding distance"),
        LFS_U64_KEY("eval_seed", eval_seed, "latent seed for evaluation"),
        LFS_STRING_KEY("embedding", embedding, "Frechet embedding: pooled_color or random_conv"),
        LFS_SIZE_KEY("log_every", log_every, "iterations between progress lines during training"),
    };
    return table;
}

}  // namespace

void RunConfig::validate() const {
    generator.validate();
    TrainConfig t = train;
    t.iterations = std::max<std::size_t>(t.iterations, 1);
    t.validate();
    (void)make_distance(train.distance);
    (void)make_embedding(embedding);
    if (toy_tasks == 0 || toy_k == 0) throw std::invalid_argument("toy_tasks and toy_k must be >= 1");
    if (eval_diversity_n < 2 || eval_frechet_n < 2) throw std::invalid_argument("evaluation counts must be >= 2");
    if (log_every == 0) throw std::invalid_argument("log_every must be >= 1");
}

RunConfig RunConfig::parse(const std::string& text) {
    RunConfig cfg;
    std::stringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected key = value");
        }
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        const auto& table = keys();
        const auto it = std::find_if(table.begin(), table.end(), [&](const Key& k) { return key == k.name; });
        if (it == table.end()) throw std::invalid_argument("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
        try {
            it->set(cfg, value);
        } catch (const std::exception& e) {
            throw std::invalid_argument("config line " + std::to_string(line_no) + ": bad value '" + value + "' for " + key + " (" + e.what() + ")");
        }
    }
    cfg.validate();
    return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

std::string RunConfig::to_text() const {
    std::string out;
    for (const auto& k : keys()) out += std::string(k.name) + " = " + k.get(*this) + "\n";
    return out;
}

std::vector<RunConfig::KeyDoc> RunConfig::documented_keys() {
    const RunConfig defaults;
    std::vector<KeyDoc> out;
    for (const auto& k : keys()) out.push_back({k.name, k.get(defaults), k.description});
    return out;
}

}  // namespace lfs
