// Copyright (c) 2026, The lfs-gan authors
// SPDX-License-Identifier: Apache-2.0
//
// Diversity and fidelity metrics. Perceptual distances are pluggable; the
// two built-in variants are cheap stand-ins for a learned perceptual metric.

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "lfs/image.hpp"

namespace lfs {

class PerceptualDistance {
public:
    virtual ~PerceptualDistance() = default;
    virtual std::string name() const = 0;
    virtual double distance(const Image& a, const Image& b) const = 0;

    // rows x cols matrix of distance(rows[i], cols[j]).
    virtual Eigen::MatrixXd cross(std::span<const Image> rows, std::span<const Image> cols) const;
    // Symmetric matrix with a zero diagonal.
    virtual Eigen::MatrixXd pairwise(std::span<const Image> images) const;
};

// Mean absolute difference after bilinear resampling to side x side.
class DownsampledL1 final : public PerceptualDistance {
public:
    explicit DownsampledL1(std::size_t side = 16) : side_(side) {}
    std::string name() const override { return "downsampled_l1"; }
    double distance(const Image& a, const Image& b) const override;
    Eigen::MatrixXd cross(std::span<const Image> rows, std::span<const Image> cols) const override;
    Eigen::MatrixXd pairwise(std::span<const Image> images) const override;

private:
    std::vector<float> reduce(const Image& img) const;
    std::size_t side_;
};

// Fixed random two-layer conv bank. Per layer, features are unit-normalized
// over channels at every position; the distance is the spatial mean squared
// difference, averaged over the two layers.
class RandomConvFeatures final : public PerceptualDistance {
public:
    explicit RandomConvFeatures(std::uint64_t seed = 7, std::size_t width1 = 8, std::size_t width2 = 16);
    std::string name() const override { return "random_conv"; }
    double distance(const Image& a, const Image& b) const override;
    Eigen::MatrixXd cross(std::span<const Image> rows, std::span<const Image> cols) const override;
    Eigen::MatrixXd pairwise(std::span<const Image> images) const override;

    struct Features {
        std::vector<std::vector<float>> layers;  // unit-normalized, C x H x W
        std::vector<std::size_t> positions;      // H * W per layer
    };
    Features features(const Image& img) const;
    static double feature_distance(const Features& a, const Features& b);

private:
    std::size_t width1_, width2_;
    std::vector<float> w1_, b1_, w2_, b2_;
};

std::unique_ptr<PerceptualDistance> make_distance(const std::string& name, std::uint64_t seed = 7);

struct ClusterAssignment {
    std::size_t anchor_count = 0;
    std::vector<std::vector<std::size_t>> members;  // per anchor, generated indices
    std::size_t total = 0;
};

// Nearest anchor per generated image; ties go to the lowest anchor index.
ClusterAssignment assign_clusters(std::span<const Image> generated, std::span<const Image> anchors,
                                  const PerceptualDistance& dist);
ClusterAssignment assign_from_distances(const Eigen::MatrixXd& generated_to_anchor);

// Mean distance over unordered pairs; 0 for fewer than two images.
double p_lpips(std::span<const Image> cluster, const PerceptualDistance& dist);
double p_lpips_from_matrix(const Eigen::MatrixXd& pairwise, std::span<const std::size_t> members);

// Per-cluster P values for an assignment over `generated`.
std::vector<double> cluster_p_values(const ClusterAssignment& a, std::span<const Image> generated,
                                     const PerceptualDistance& dist);

// Unweighted mean of P over clusters with at least two members.
double i_lpips(const ClusterAssignment& a, std::span<const double> p_values);
double i_lpips(const ClusterAssignment& a, std::span<const Image> generated, const PerceptualDistance& dist);

// Entropy weight -p log10 p of one cluster, 0 for an empty cluster.
double cluster_weight(std::size_t size, std::size_t total);
double b_lpips(const ClusterAssignment& a, std::span<const double> p_values);
double b_lpips(const ClusterAssignment& a, std::span<const Image> generated, const PerceptualDistance& dist);

// Embeddings for the Frechet distance.
class Embedding {
public:
    virtual ~Embedding() = default;
    virtual std::string name() const = 0;
    virtual std::vector<double> embed(const Image& img) const = 0;
};

// Per-channel average over a side x side grid of cells.
class PooledColorEmbedding final : public Embedding {
public:
    explicit PooledColorEmbedding(std::size_t side = 4) : side_(side) {}
    std::string name() const override { return "pooled_color"; }
    std::vector<double> embed(const Image& img) const override;

private:
    std::size_t side_;
};

// Global-average-pooled random conv features (both layers concatenated).
class RandomConvEmbedding final : public Embedding {
public:
    explicit RandomConvEmbedding(std::uint64_t seed = 7) : bank_(seed) {}
    std::string name() const override { return "random_conv"; }
    std::vector<double> embed(const Image& img) const override;

private:
    RandomConvFeatures bank_;
};

std::unique_ptr<Embedding> make_embedding(const std::string& name, std::uint64_t seed = 7);

// Rows are samples.
double frechet_distance(const Eigen::MatrixXd& real, const Eigen::MatrixXd& fake);
double frechet_embedding_distance(std::span<const Image> real, std::span<const Image> fake, const Embedding& embed);

// Flat metric report: `metric=value` text plus (task_id, metric, value) CSV rows.
class MetricsReport {
public:
    void add(std::string metric, double value) { entries_.emplace_back(std::move(metric), value); }
    const std::vector<std::pair<std::string, double>>& entries() const { return entries_; }
    double value(const std::string& metric) const;
    std::string text() const;
    std::string csv_rows(const std::string& task_id) const;
    // Appends rows, writing the header when the file is new.
    void append_csv(const std::filesystem::path& path, const std::string& task_id) const;

private:
    std::vector<std::pair<std::string, double>> entries_;
};

}  // namespace lfs
