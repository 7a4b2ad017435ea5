// Copyright (c) 2026, The lfs-gan authors
// SPDX-License-Identifier: Apache-2.0
//
// lfs: command-line driver for toy data, task ordering, lifelong training,
// generation, evaluation and parameter accounting.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "lfs/checkpoint.hpp"
#include "lfs/lifelong.hpp"
#include "lfs/metrics.hpp"
#include "lfs/run_config.hpp"
#include "lfs/toy.hpp"

namespace fs = std::filesystem;
using namespace lfs;

namespace {

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string task;
    std::string out;
    std::optional<std::size_t> n;
    std::string matrix;
    std::string source;
};

RunConfig load_config(const Options& o) {
    RunConfig cfg = o.config.empty() ? RunConfig{} : RunConfig::load(o.config);
    if (o.seed) cfg.train.seed = *o.seed;
    return cfg;
}

fs::path base_path(const RunConfig& cfg) { return cfg.out_dir / "base.lfsb"; }
ModulatorRegistry registry_of(const RunConfig& cfg) { return ModulatorRegistry(cfg.out_dir / "modulators"); }

// Loads the run's base generator, creating it from base_seed on first use.
GeneratorWeights<float> base_weights(const RunConfig& cfg, bool create) {
    const fs::path p = base_path(cfg);
    if (fs::exists(p)) {
        GeneratorWeights<float> w = GeneratorWeights<float>::deserialize(read_file(p));
        const GeneratorConfig& a = w.config;
        const GeneratorConfig& b = cfg.generator;
        if (a.z_dim != b.z_dim || a.w_dim != b.w_dim || a.mapping_layers != b.mapping_layers ||
            a.base_resolution != b.base_resolution || a.target_resolution != b.target_resolution ||
            a.const_channels != b.const_channels || a.channels != b.channels || a.noise_injection != b.noise_injection) {
            throw std::invalid_argument(p.string() + " was created with a different generator configuration");
        }
        w.config.modulate_affine = b.modulate_affine;
        return w;
    }
    if (!create) throw std::runtime_error("no base generator at " + p.string() + "; run `lfs train` first");
    GeneratorWeights<double> w = GeneratorWeights<double>::init(cfg.generator, cfg.base_seed);
    GeneratorWeights<float> f = w.cast<float>();
    write_file(p, f.serialize());
    return f;
}

std::vector<std::string> task_names(const RunConfig& cfg) {
    if (!cfg.tasks.empty()) return cfg.tasks;
    if (!fs::is_directory(cfg.data_dir)) throw std::runtime_error("data directory " + cfg.data_dir.string() + " not found");
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(cfg.data_dir)) {
        if (e.is_directory()) out.push_back(e.path().filename().string());
    }
    std::sort(out.begin(), out.end());
    if (out.empty()) throw std::runtime_error("data directory " + cfg.data_dir.string() + " has no task folders");
    return out;
}

TaskSpec task_spec(const RunConfig& cfg, const std::string& id) {
    return load_task(cfg.data_dir / id, id, cfg.generator.target_resolution);
}

std::vector<std::string> sequence(const RunConfig& cfg, const std::string& matrix_file, const std::string& source_override) {
    const std::string source = source_override.empty() ? cfg.source : source_override;
    const fs::path mpath = matrix_file.empty() ? cfg.distance_matrix : fs::path(matrix_file);
    if (!mpath.empty()) {
        const DistanceMatrix m = DistanceMatrix::read_csv(mpath);
        if (source.empty()) {
            std::vector<std::string> names = m.names;
            std::sort(names.begin(), names.end());
            std::vector<std::string> out{names.front()};
            for (auto& t : order_tasks(m, names.front())) out.push_back(t);
            return out;
        }
        return order_tasks(m, source);
    }
    const std::vector<std::string> names = task_names(cfg);
    std::vector<TaskSpec> domains;
    for (const auto& id : names) domains.push_back(task_spec(cfg, id));
    const DistanceMatrix m = domain_distances(domains, *make_distance(cfg.train.distance));
    const std::string start = source.empty() ? names.front() : source;
    std::vector<std::string> out;
    if (source.empty()) out.push_back(start);
    for (auto& t : order_tasks(m, start)) out.push_back(t);
    return out;
}

int cmd_make_toy(const Options& o) {
    RunConfig cfg = load_config(o);
    const fs::path out = o.out.empty() ? cfg.data_dir : fs::path(o.out);
    const std::size_t n_tasks = o.n.value_or(cfg.toy_tasks);
    const auto names = make_toy_tasks(out, n_tasks, cfg.toy_k, cfg.generator.target_resolution, cfg.train.seed);
    for (const auto& n : names) std::cout << (out / n).string() << "\n";
    return 0;
}

int cmd_order(const Options& o) {
    const RunConfig cfg = load_config(o);
    const auto seq = sequence(cfg, o.matrix, o.source);
    for (std::size_t j = 0; j < seq.size(); ++j) std::cout << (j ? " -> " : "") << seq[j];
    std::cout << "\n";
    return 0;
}

void write_log(const fs::path& path, const std::vector<TrainLogEntry>& log) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path);
    out.precision(9);
    out << "iteration,d_loss,g_adv,cms,g_total,cms_clusters\n";
    for (const auto& e : log) {
        out << e.iteration << ',' << e.d_loss << ',' << e.g_adv << ',' << e.cms << ',' << e.g_total << ','
            << e.cms_clusters << '\n';
    }
}

int cmd_train(const Options& o) {
    RunConfig cfg = load_config(o);
    if (!o.out.empty()) cfg.out_dir = o.out;
    const Generator<float> gen(base_weights(cfg, true));
    const std::string hash = base_weights_hash(gen.base());
    std::vector<std::string> tasks;
    if (!o.task.empty()) {
        tasks.push_back(o.task);
    } else {
        tasks = cfg.order_tasks ? sequence(cfg, o.matrix, o.source) : task_names(cfg);
    }
    std::ofstream(cfg.out_dir / "sequence.txt") << [&] {
        std::string s;
        for (const auto& t : tasks) s += t + "\n";
        return s;
    }();
    const ModulatorRegistry registry = registry_of(cfg);
    for (const auto& id : tasks) {
        const TaskSpec task = task_spec(cfg, id);
        std::cerr << "training " << id << " (" << task.images.size() << " images, " << cfg.train.iterations
                  << " iterations)\n";
        const TrainResult r = train_task(gen, task, cfg.train, [&](const TrainLogEntry& e) {
            if ((e.iteration + 1) % cfg.log_every == 0) {
                std::fprintf(stderr, "  [%s] it %zu  d=%.4f  g_adv=%.4f  cms=%.4f\n", id.c_str(), e.iteration + 1,
                             e.d_loss, e.g_adv, e.cms);
            }
        });
        registry.store(r.modulators);
        write_log(cfg.out_dir / "logs" / (id + ".csv"), r.log);
        if (base_weights_hash(gen.base()) != hash) throw ContractError("base weights changed");
        std::cout << id << " -> " << registry.path_for(id).string() << "\n";
    }
    std::cout << "base_sha256=" << hash << "\n";
    return 0;
}

int cmd_gen(const Options& o) {
    const RunConfig cfg = load_config(o);
    const Generator<float> gen(base_weights(cfg, false));
    const std::size_t n = o.n.value_or(16);
    const std::uint64_t seed = o.seed.value_or(cfg.eval_seed);
    const std::vector<Image> images =
        o.task.empty() ? generate(gen, nullptr, seed, n) : generate_for_task(gen, registry_of(cfg), o.task, seed, n);
    const fs::path out = o.out.empty() ? cfg.out_dir / "samples" / (o.task.empty() ? "base" : o.task) : fs::path(o.out);
    fs::create_directories(out);
    for (std::size_t j = 0; j < images.size(); ++j) {
        char name[32];
        std::snprintf(name, sizeof(name), "sample_%04zu.png", j);
        write_png(out / name, images[j]);
    }
    if (!images.empty()) {
        std::size_t cols = 1;
        while (cols * cols < images.size()) ++cols;
        write_png(out / "grid.png", make_grid(images, cols));
    }
    std::cout << images.size() << " images written to " << out.string() << "\n";
    return 0;
}

int cmd_eval(const Options& o) {
    const RunConfig cfg = load_config(o);
    if (o.task.empty()) throw std::invalid_argument("eval needs --task");
    const Generator<float> gen(base_weights(cfg, false));
    const ModulatorRegistry registry = registry_of(cfg);
    const TaskSpec task = task_spec(cfg, o.task);
    const std::uint64_t seed = o.seed.value_or(cfg.eval_seed);
    const std::size_t n_div = o.n.value_or(cfg.eval_diversity_n);
    const std::size_t n_fid = std::max(cfg.eval_frechet_n, n_div);
    const std::vector<Image> fake = generate_for_task(gen, registry, o.task, seed, n_fid);
    const std::span<const Image> div(fake.data(), n_div);

    const auto dist = make_distance(cfg.train.distance);
    const ClusterAssignment a = assign_clusters(div, task.images, *dist);
    const std::vector<double> p = cluster_p_values(a, div, *dist);
    MetricsReport report;
    report.add("b_lpips", b_lpips(a, p));
    report.add("i_lpips", i_lpips(a, p));
    report.add("frechet", frechet_embedding_distance(task.images, std::span<const Image>(fake.data(), cfg.eval_frechet_n),
                                                     *make_embedding(cfg.embedding)));
    std::cout << report.text();
    report.append_csv(cfg.out_dir / "metrics.csv", o.task);
    return 0;
}

int cmd_count_params(const Options& o) {
    const RunConfig cfg = load_config(o);
    const auto layers = modulated_layers(cfg.generator);
    const ParamBudget budget = param_count(layers, cfg.train.rank, cfg.train.with_bias);
    const std::size_t base = GeneratorWeights<double>::init(cfg.generator, cfg.base_seed).param_count();
    for (const auto& l : budget.layers) std::printf("%-24s %zu\n", l.name.c_str(), l.count);
    std::printf("total=%zu\nbase=%zu\npercent=%.4f\n", budget.total, base,
                100.0 * static_cast<double>(budget.total) / static_cast<double>(base));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Lifelong few-shot generation with factorized weight modulators"};
    app.require_subcommand(1);
    Options o;
    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "key = value run configuration file");
        sub->add_option("--seed", o.seed, "seed override");
        sub->add_option("--out", o.out, "output directory");
    };
    auto* make_toy = app.add_subcommand("make-toy", "render procedural few-shot tasks as PNG folders");
    common(make_toy);
    make_toy->add_option("-n", o.n, "number of tasks");
    auto* order = app.add_subcommand("order", "print the greedy max-distance task sequence");
    common(order);
    order->add_option("--matrix", o.matrix, "CSV distance matrix (overrides distance_matrix)");
    order->add_option("--source", o.source, "starting domain (overrides source)");
    auto* train = app.add_subcommand("train", "train modulators for every task in sequence");
    common(train);
    train->add_option("--task", o.task, "train only this task");
    train->add_option("--matrix", o.matrix, "CSV distance matrix used for ordering");
    train->add_option("--source", o.source, "starting domain for ordering");
    auto* gen = app.add_subcommand("gen", "generate PNG samples and a grid for one task");
    common(gen);
    gen->add_option("--task", o.task, "task id; omit for the unmodulated base generator");
    gen->add_option("-n", o.n, "number of images");
    auto* eval = app.add_subcommand("eval", "report B-LPIPS, I-LPIPS and the Frechet embedding distance");
    common(eval);
    eval->add_option("--task", o.task, "task id")->required();
    eval->add_option("-n", o.n, "generated images for the diversity metrics");
    auto* count = app.add_subcommand("count-params", "per-layer and total modulator parameter counts");
    common(count);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "lfs: error: " << e.what() << "\n";
        return 2;
    }
    try {
        if (*make_toy) return cmd_make_toy(o);
        if (*order) return cmd_order(o);
        if (*train) return cmd_train(o);
        if (*gen) return cmd_gen(o);
        if (*eval) return cmd_eval(o);
        if (*count) return cmd_count_params(o);
    } catch (const std::exception& e) {
        std::string msg = e.what();
        for (char& c : msg) {
            if (c == '\n') c = ' ';
        }
        std::cerr << "lfs: error: " << msg << "\n";
        return 1;
    }
    return 1;
}
