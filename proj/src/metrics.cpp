// Copyright (c) 2026, The lfs-gan authors
// SPDX-License-Identifier: Apache-2.0
//

#include "lfs/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <stdexcept>

#include "lfs/parallel.hpp"

namespace lfs {

namespace {

void require_same_shape(std::span<const Image> a, std::span<const Image> b) {
    const Image* ref = !a.empty() ? &a.front() : (!b.empty() ? &b.front() : nullptr);
    if (ref == nullptr) return;
    for (const auto& img : a) {
        if (!img.same_shape(*ref)) throw std::invalid_argument("image resolution mismatch");
    }
    for (const auto& img : b) {
        if (!img.same_shape(*ref)) throw std::invalid_argument("image resolution mismatch");
    }
}

template <typename Feature, typename Extract, typename Dist>
Eigen::MatrixXd cross_with(std::span<const Image> rows, std::span<const Image> cols, Extract extract, Dist dist) {
    require_same_shape(rows, cols);
    std::vector<Feature> fr(rows.size()), fc(cols.size());
    parallel_for(rows.size(), [&](std::size_t i) { fr[i] = extract(rows[i]); });
    parallel_for(cols.size(), [&](std::size_t j) { fc[j] = extract(cols[j]); });
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    parallel_for(rows.size(), [&](std::size_t i) {
        for (std::size_t j = 0; j < cols.size(); ++j) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = dist(fr[i], fc[j]);
    });
    return out;
}

template <typename Feature, typename Extract, typename Dist>
Eigen::MatrixXd pairwise_with(std::span<const Image> images, Extract extract, Dist dist) {
    require_same_shape(images, {});
    std::vector<Feature> f(images.size());
    parallel_for(images.size(), [&](std::size_t i) { f[i] = extract(images[i]); });
    const auto n = static_cast<Eigen::Index>(images.size());
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, n);
    parallel_for(images.size(), [&](std::size_t i) {
        for (std::size_t j = i + 1; j < images.size(); ++j) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = dist(f[i], f[j]);
    });
    out.triangularView<Eigen::StrictlyLower>() = out.transpose();
    return out;
}

double mean_abs(const std::vector<float>& a, const std::vector<float>& b) {
    double acc = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) acc += std::abs(static_cast<double>(a[j]) - static_cast<double>(b[j]));
    return acc / static_cast<double>(a.size());
}

// Same-padded 3x3 conv + ReLU on a CHW buffer.
std::vector<float> conv3x3_relu(const std::vector<float>& x, std::size_t c_in, std::size_t h, std::size_t w,
                                const std::vector<float>& weight, const std::vector<float>& bias, std::size_t c_out) {
    std::vector<float> y(c_out * h * w);
    for (std::size_t o = 0; o < c_out; ++o) {
        for (std::size_t yy = 0; yy < h; ++yy) {
            for (std::size_t xx = 0; xx < w; ++xx) {
                float acc = bias[o];
                for (std::size_t c = 0; c < c_in; ++c) {
                    for (std::size_t u = 0; u < 3; ++u) {
                        const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(yy + u) - 1;
                        if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t v = 0; v < 3; ++v) {
                            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + v) - 1;
                            if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
                            acc += weight[((o * c_in + c) * 3 + u) * 3 + v] *
                                   x[(c * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)];
                        }
                    }
                }
                y[(o * h + yy) * w + xx] = std::max(acc, 0.0f);
            }
        }
    }
    return y;
}

std::vector<float> avgpool(const std::vector<float>& x, std::size_t c, std::size_t h, std::size_t w) {
    std::vector<float> y(c * (h / 2) * (w / 2), 0.0f);
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t yy = 0; yy < (h / 2) * 2; ++yy) {
            for (std::size_t xx = 0; xx < (w / 2) * 2; ++xx) {
                y[(ch * (h / 2) + yy / 2) * (w / 2) + xx / 2] += 0.25f * x[(ch * h + yy) * w + xx];
            }
        }
    }
    return y;
}

void unit_normalize(std::vector<float>& x, std::size_t c, std::size_t hw) {
    for (std::size_t p = 0; p < hw; ++p) {
        double norm = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) norm += static_cast<double>(x[ch * hw + p]) * x[ch * hw + p];
        const auto scale = static_cast<float>(1.0 / (std::sqrt(norm) + 1e-10));
        for (std::size_t ch = 0; ch < c; ++ch) x[ch * hw + p] *= scale;
    }
}

}  // namespace

// ---- distances -------------------------------------------------------------

Eigen::MatrixXd PerceptualDistance::cross(std::span<const Image> rows, std::span<const Image> cols) const {
    return cross_with<const Image*>(
        rows, cols, [](const Image& img) { return &img; },
        [this](const Image* a, const Image* b) { return distance(*a, *b); });
}

Eigen::MatrixXd PerceptualDistance::pairwise(std::span<const Image> images) const {
    return pairwise_with<const Image*>(
        images, [](const Image& img) { return &img; }, [this](const Image* a, const Image* b) { return distance(*a, *b); });
}

std::vector<float> DownsampledL1::reduce(const Image& img) const {
    return resize_bilinear(img, side_, side_).data;
}

double DownsampledL1::distance(const Image& a, const Image& b) const {
    if (!a.same_shape(b)) throw std::invalid_argument("image resolution mismatch");
    return mean_abs(reduce(a), reduce(b));
}

Eigen::MatrixXd DownsampledL1::cross(std::span<const Image> rows, std::span<const Image> cols) const {
    return cross_with<std::vector<float>>(
        rows, cols, [this](const Image& img) { return reduce(img); }, mean_abs);
}

Eigen::MatrixXd DownsampledL1::pairwise(std::span<const Image> images) const {
    return pairwise_with<std::vector<float>>(
        images, [this](const Image& img) { return reduce(img); }, mean_abs);
}

RandomConvFeatures::RandomConvFeatures(std::uint64_t seed, std::size_t width1, std::size_t width2)
    : width1_(width1), width2_(width2) {
    std::mt19937_64 rng(seed);
    auto fill = [&](std::vector<float>& v, std::size_t n, double std) {
        std::normal_distribution<double> nd(0.0, std);
        v.resize(n);
        for (auto& x : v) x = static_cast<float>(nd(rng));
    };
    fill(w1_, width1 * 3 * 9, std::sqrt(2.0 / 27.0));
    fill(b1_, width1, 0.1);
    fill(w2_, width2 * width1 * 9, std::sqrt(2.0 / static_cast<double>(width1 * 9)));
    fill(b2_, width2, 0.1);
}

RandomConvFeatures::Features RandomConvFeatures::features(const Image& img) const {
    if (img.channels != 3) throw std::invalid_argument("random conv features expect RGB images");
    const std::size_t h = img.height, w = img.width;
    Features f;
    std::vector<float> l1 = conv3x3_relu(img.data, 3, h, w, w1_, b1_, width1_);
    std::vector<float> pooled = avgpool(l1, width1_, h, w);
    std::vector<float> l2 = conv3x3_relu(pooled, width1_, h / 2, w / 2, w2_, b2_, width2_);
    unit_normalize(l1, width1_, h * w);
    unit_normalize(l2, width2_, (h / 2) * (w / 2));
    f.layers.push_back(std::move(l1));
    f.layers.push_back(std::move(l2));
    f.positions = {h * w, (h / 2) * (w / 2)};
    return f;
}

double RandomConvFeatures::feature_distance(const Features& a, const Features& b) {
    double total = 0.0;
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
        const auto& x = a.layers[l];
        const auto& y = b.layers[l];
        double acc = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j) {
            const double d = static_cast<double>(x[j]) - static_cast<double>(y[j]);
            acc += d * d;
        }
        total += acc / static_cast<double>(a.positions[l]);
    }
    return total / static_cast<double>(a.layers.size());
}

double RandomConvFeatures::distance(const Image& a, const Image& b) const {
    if (!a.same_shape(b)) throw std::invalid_argument("image resolution mismatch");
    return feature_distance(features(a), features(b));
}

Eigen::MatrixXd RandomConvFeatures::cross(std::span<const Image> rows, std::span<const Image> cols) const {
    return cross_with<Features>(
        rows, cols, [this](const Image& img) { return features(img); }, feature_distance);
}

Eigen::MatrixXd RandomConvFeatures::pairwise(std::span<const Image> images) const {
    return pairwise_with<Features>(
        images, [this](const Image& img) { return features(img); }, feature_distance);
}

std::unique_ptr<PerceptualDistance> make_distance(const std::string& name, std::uint64_t seed) {
    if (name == "downsampled_l1") return std::make_unique<DownsampledL1>();
    if (name == "random_conv") return std::make_unique<RandomConvFeatures>(seed);
    throw std::invalid_argument("unknown perceptual distance '" + name + "'");
}

// ---- clusters --------------------------------------------------------------

ClusterAssignment assign_from_distances(const Eigen::MatrixXd& d) {
    if (d.cols() == 0) throw std::invalid_argument("assign_clusters: need at least one anchor");
    ClusterAssignment a;
    a.anchor_count = static_cast<std::size_t>(d.cols());
    a.members.resize(a.anchor_count);
    a.total = static_cast<std::size_t>(d.rows());
    for (Eigen::Index i = 0; i < d.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index j = 1; j < d.cols(); ++j) {
            if (d(i, j) < d(i, best)) best = j;
        }
        a.members[static_cast<std::size_t>(best)].push_back(static_cast<std::size_t>(i));
    }
    return a;
}

ClusterAssignment assign_clusters(std::span<const Image> generated, std::span<const Image> anchors,
                                  const PerceptualDistance& dist) {
    if (generated.empty()) throw std::invalid_argument("assign_clusters: need at least one generated image");
    if (anchors.empty()) throw std::invalid_argument("assign_clusters: need at least one anchor");
    return assign_from_distances(dist.cross(generated, anchors));
}

double p_lpips_from_matrix(const Eigen::MatrixXd& pairwise, std::span<const std::size_t> members) {
    if (members.size() < 2) return 0.0;
    double acc = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < members.size(); ++i) {
        for (std::size_t j = i + 1; j < members.size(); ++j) {
            acc += pairwise(static_cast<Eigen::Index>(members[i]), static_cast<Eigen::Index>(members[j]));
            ++pairs;
        }
    }
    return acc / static_cast<double>(pairs);
}

double p_lpips(std::span<const Image> cluster, const PerceptualDistance& dist) {
    if (cluster.size() < 2) return 0.0;
    std::vector<std::size_t> all(cluster.size());
    for (std::size_t j = 0; j < all.size(); ++j) all[j] = j;
    return p_lpips_from_matrix(dist.pairwise(cluster), all);
}

std::vector<double> cluster_p_values(const ClusterAssignment& a, std::span<const Image> generated,
                                     const PerceptualDistance& dist) {
    std::vector<double> p(a.anchor_count, 0.0);
    for (std::size_t c = 0; c < a.anchor_count; ++c) {
        const auto& m = a.members[c];
        if (m.size() < 2) continue;
        std::vector<Image> imgs;
        imgs.reserve(m.size());
        for (std::size_t idx : m) imgs.push_back(generated[idx]);
        p[c] = p_lpips(imgs, dist);
    }
    return p;
}

double i_lpips(const ClusterAssignment& a, std::span<const double> p_values) {
    if (p_values.size() != a.anchor_count) throw std::invalid_argument("i_lpips: one P value per cluster expected");
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t c = 0; c < a.anchor_count; ++c) {
        if (a.members[c].size() < 2) continue;
        acc += p_values[c];
        ++n;
    }
    return n == 0 ? 0.0 : acc / static_cast<double>(n);
}

double i_lpips(const ClusterAssignment& a, std::span<const Image> generated, const PerceptualDistance& dist) {
    return i_lpips(a, cluster_p_values(a, generated, dist));
}

double cluster_weight(std::size_t size, std::size_t total) {
    if (size == 0 || total == 0) return 0.0;
    const double p = static_cast<double>(size) / static_cast<double>(total);
    return -p * std::log10(p);
}

double b_lpips(const ClusterAssignment& a, std::span<const double> p_values) {
    if (p_values.size() != a.anchor_count) throw std::invalid_argument("b_lpips: one P value per cluster expected");
    if (a.total == 0) throw std::invalid_argument("b_lpips: empty assignment");
    double acc = 0.0;
    for (std::size_t c = 0; c < a.anchor_count; ++c) {
        // Clusters with fewer than two members have P = 0.
        const double p = a.members[c].size() < 2 ? 0.0 : p_values[c];
        acc += cluster_weight(a.members[c].size(), a.total) * p;
    }
    return acc;
}

double b_lpips(const ClusterAssignment& a, std::span<const Image> generated, const PerceptualDistance& dist) {
    return b_lpips(a, cluster_p_values(a, generated, dist));
}

// ---- embeddings and Frechet distance ---------------------------------------

std::vector<double> PooledColorEmbedding::embed(const Image& img) const {
    std::vector<double> out(img.channels * side_ * side_, 0.0);
    std::vector<std::size_t> counts(side_ * side_, 0);
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x) {
            const std::size_t cell = (y * side_ / img.height) * side_ + x * side_ / img.width;
            ++counts[cell];
            for (std::size_t c = 0; c < img.channels; ++c) out[c * side_ * side_ + cell] += img.at(c, y, x);
        }
    }
    for (std::size_t c = 0; c < img.channels; ++c) {
        for (std::size_t cell = 0; cell < side_ * side_; ++cell) {
            if (counts[cell] > 0) out[c * side_ * side_ + cell] /= static_cast<double>(counts[cell]);
        }
    }
    return out;
}

std::vector<double> RandomConvEmbedding::embed(const Image& img) const {
    auto f = bank_.features(img);
    std::vector<double> out;
    std::size_t res = img.height * img.width;
    for (const auto& layer : f.layers) {
        const std::size_t channels = layer.size() / res;
        for (std::size_t c = 0; c < channels; ++c) {
            double acc = 0.0;
            for (std::size_t p = 0; p < res; ++p) acc += layer[c * res + p];
            out.push_back(acc / static_cast<double>(res));
        }
        res /= 4;
    }
    return out;
}

std::unique_ptr<Embedding> make_embedding(const std::string& name, std::uint64_t seed) {
    if (name == "pooled_color") return std::make_unique<PooledColorEmbedding>();
    if (name == "random_conv") return std::make_unique<RandomConvEmbedding>(seed);
    throw std::invalid_argument("unknown embedding '" + name + "'");
}

double frechet_distance(const Eigen::MatrixXd& real, const Eigen::MatrixXd& fake) {
    if (real.cols() != fake.cols()) throw std::invalid_argument("frechet distance: embedding dimension mismatch");
    if (real.rows() < 2 || fake.rows() < 2) throw std::invalid_argument("frechet distance: need at least two samples per set");
    auto stats = [](const Eigen::MatrixXd& x) {
        Eigen::VectorXd mu = x.colwise().mean().transpose();
        Eigen::MatrixXd centered = x.rowwise() - mu.transpose();
        Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(x.rows() - 1);
        return std::make_pair(mu, cov);
    };
    auto psd_sqrt = [](const Eigen::MatrixXd& m) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
        Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
        return Eigen::MatrixXd(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
    };
    auto [mu_r, cov_r] = stats(real);
    auto [mu_f, cov_f] = stats(fake);
    // Tr((S_r S_f)^1/2) == Tr((S_r^1/2 S_f S_r^1/2)^1/2), which stays symmetric.
    Eigen::MatrixXd root_r = psd_sqrt(cov_r);
    Eigen::MatrixXd inner = root_r * cov_f * root_r;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
    const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    const double value = (mu_r - mu_f).squaredNorm() + cov_r.trace() + cov_f.trace() - 2.0 * tr_sqrt;
    return std::max(value, 0.0);
}

double frechet_embedding_distance(std::span<const Image> real, std::span<const Image> fake, const Embedding& embed) {
    require_same_shape(real, fake);
    auto to_matrix = [&](std::span<const Image> imgs) {
        std::vector<std::vector<double>> rows(imgs.size());
        parallel_for(imgs.size(), [&](std::size_t i) { rows[i] = embed.embed(imgs[i]); });
        const std::size_t dim = rows.empty() ? 0 : rows.front().size();
        Eigen::MatrixXd m(static_cast<Eigen::Index>(imgs.size()), static_cast<Eigen::Index>(dim));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            for (std::size_t j = 0; j < dim; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
        }
        return m;
    };
    return frechet_distance(to_matrix(real), to_matrix(fake));
}

// ---- reports ---------------------------------------------------------------

double MetricsReport::value(const std::string& metric) const {
    for (const auto& [k, v] : entries_) {
        if (k == metric) return v;
    }
    throw std::out_of_range("metric '" + metric + "' not in report");
}

std::string MetricsReport::text() const {
    std::ostringstream out;
    out << std::setprecision(10);
    for (const auto& [k, v] : entries_) out << k << '=' << v << '\n';
    return out.str();
}

std::string MetricsReport::csv_rows(const std::string& task_id) const {
    std::ostringstream out;
    out << std::setprecision(10);
    for (const auto& [k, v] : entries_) out << task_id << ',' << k << ',' << v << '\n';
    return out.str();
}

void MetricsReport::append_csv(const std::filesystem::path& path, const std::string& task_id) const {
    const bool fresh = !std::filesystem::exists(path);
    std::ofstream out(path, std::ios::app);
    if (!out) throw std::runtime_error("cannot open " + path.string());
    if (fresh) out << "task_id,metric,value\n";
    out << csv_rows(task_id);
}

}  // namespace lfs
