// Copyright (c) 2026, The lfs-gan authors
// SPDX-License-Identifier: Apache-2.0
//
// Lifelong harness: task ordering, per-task training of modulators over a
// frozen base generator, and the on-disk modulator registry.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lfs/image.hpp"
#include "lfs/losses.hpp"
#include "lfs/metrics.hpp"
#include "lfs/modulator_set.hpp"
#include "lfs/netlab.hpp"

namespace lfs {

struct TaskSpec {
    std::string task_id;
    std::vector<Image> images;
    std::size_t resolution = 32;

    void validate() const;
};

// Reads every PNG in dir (sorted by file name), resized to resolution.
TaskSpec load_task(const std::filesystem::path& dir, const std::string& task_id, std::size_t resolution);

struct TrainConfig {
    double lr = 0.002;
    double beta1 = 0.0;
    double beta2 = 0.99;
    std::size_t batch_size = 4;
    std::size_t iterations = 2000;
    CmsConfig cms;
    std::uint64_t seed = 0;
    std::size_t rank = 1;
    bool with_bias = true;
    ActivationKind act = ActivationKind::ReLU;
    std::string distance = "downsampled_l1";
    DiscriminatorConfig discriminator;
    // Discriminator updates per generator update.
    std::size_t d_steps = 1;

    void validate() const;
};

struct TrainLogEntry {
    std::size_t iteration = 0;
    double d_loss = 0.0;
    double g_adv = 0.0;
    double cms = 0.0;
    double g_total = 0.0;
    std::size_t cms_clusters = 0;
};

struct TrainResult {
    ModulatorSet<float> modulators;
    std::vector<TrainLogEntry> log;
    std::string base_hash;
};

using TrainCallback = std::function<void(const TrainLogEntry&)>;

// Trains a fresh identity-initialized modulator set (and a fresh discriminator)
// on one task. The base generator is never modified.
TrainResult train_task(const Generator<float>& gen, const TaskSpec& task, const TrainConfig& cfg,
                       const TrainCallback& on_step = {});

std::string base_weights_hash(const GeneratorWeights<float>& weights);

// Seeded latents -> images, evaluated in fixed-size chunks.
std::vector<Image> generate(const Generator<float>& gen, const ModulatorSet<float>* mods, std::uint64_t seed,
                            std::size_t n);

// One checkpoint per task, stored as <dir>/<task_id>.left.
class ModulatorRegistry {
public:
    explicit ModulatorRegistry(std::filesystem::path dir);

    const std::filesystem::path& dir() const { return dir_; }
    std::filesystem::path path_for(const std::string& task_id) const;
    bool contains(const std::string& task_id) const;
    void store(const ModulatorSet<float>& set) const;
    ModulatorSet<float> load(const std::string& task_id) const;
    std::vector<std::string> tasks() const;

private:
    std::filesystem::path dir_;
};

std::vector<Image> generate_for_task(const Generator<float>& gen, const ModulatorRegistry& registry,
                                     const std::string& task_id, std::uint64_t seed, std::size_t n);

// Symmetric pairwise domain distances with named rows and columns.
struct DistanceMatrix {
    std::vector<std::string> names;
    Eigen::MatrixXd values;

    std::size_t index_of(const std::string& name) const;
    void validate() const;

    // CSV with a header row and a leading name column. Missing cells in a
    // triangular file are filled from their mirror entry.
    static DistanceMatrix read_csv(const std::filesystem::path& path);
    static DistanceMatrix parse_csv(const std::string& text);
    std::string to_csv() const;
};

// Mean cross-domain perceptual distance between every pair of image sets.
DistanceMatrix domain_distances(const std::vector<TaskSpec>& domains, const PerceptualDistance& dist);

// Greedy sequence: from the current domain pick the unvisited candidate at
// maximal distance, ties broken alphabetically. Candidates default to every
// domain other than the source.
std::vector<std::string> order_tasks(const DistanceMatrix& m, const std::string& source,
                                     std::optional<std::vector<std::string>> candidates = std::nullopt);

}  // namespace lfs
