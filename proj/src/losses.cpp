// Copyright (c) 2026, The lfs-gan authors
// SPDX-License-Identifier: Apache-2.0
//

#include "lfs/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace lfs {

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

void check_batch(std::span<const double> logits, const char* what) {
    if (logits.empty()) throw std::invalid_argument(std::string(what) + ": empty batch");
    for (double v : logits) {
        if (!std::isfinite(v)) throw std::invalid_argument(std::string(what) + ": non-finite logit");
    }
}

// Accumulates scale * d mean|a - b| / d a into ga and its negation into gb.
void add_abs_diff_grad(std::span<const double> a, std::span<const double> b, double scale, std::vector<double>& ga,
                       std::vector<double>& gb) {
    const double s = scale / static_cast<double>(a.size());
    for (std::size_t j = 0; j < a.size(); ++j) {
        const double g = s * sign(a[j] - b[j]);
        ga[j] += g;
        gb[j] -= g;
    }
}

RecordGrad zero_grad(const ForwardRecord& r) {
    RecordGrad g;
    g.d_w.assign(r.w.size(), 0.0);
    g.d_features.reserve(r.features.size());
    for (const auto& f : r.features) g.d_features.emplace_back(f.size(), 0.0);
    g.d_image.assign(r.image.size(), 0.0);
    return g;
}

}  // namespace

void CmsConfig::validate() const {
    if (!(lambda >= 0.0)) throw std::invalid_argument("cms: lambda must be >= 0");
    if (!(epsilon > 0.0)) throw std::invalid_argument("cms: epsilon must be > 0");
    if (oversample_factor < 1) throw std::invalid_argument("cms: oversample_factor must be >= 1");
    if (enabled() && !targets.any()) throw std::invalid_argument("cms: at least one target flag must be set");
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

AdversarialLoss adv_g_loss(std::span<const double> fake_logits) {
    check_batch(fake_logits, "adv_g_loss");
    AdversarialLoss out;
    const double n = static_cast<double>(fake_logits.size());
    out.d_fake.resize(fake_logits.size());
    for (std::size_t i = 0; i < fake_logits.size(); ++i) {
        out.value += softplus(-fake_logits[i]) / n;
        out.d_fake[i] = -sigmoid(-fake_logits[i]) / n;
    }
    return out;
}

AdversarialLoss adv_d_loss(std::span<const double> real_logits, std::span<const double> fake_logits) {
    check_batch(real_logits, "adv_d_loss");
    check_batch(fake_logits, "adv_d_loss");
    AdversarialLoss out;
    const double nr = static_cast<double>(real_logits.size());
    const double nf = static_cast<double>(fake_logits.size());
    out.d_real.resize(real_logits.size());
    out.d_fake.resize(fake_logits.size());
    for (std::size_t i = 0; i < fake_logits.size(); ++i) {
        out.value += softplus(fake_logits[i]) / nf;
        out.d_fake[i] = sigmoid(fake_logits[i]) / nf;
    }
    for (std::size_t i = 0; i < real_logits.size(); ++i) {
        out.value += softplus(-real_logits[i]) / nr;
        out.d_real[i] = -sigmoid(-real_logits[i]) / nr;
    }
    return out;
}

double mean_abs_diff(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("mean_abs_diff: size mismatch");
    if (a.empty()) return 0.0;
    double acc = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) acc += std::abs(a[j] - b[j]);
    return acc / static_cast<double>(a.size());
}

double ms_loss_original(const ForwardRecord& a, const ForwardRecord& b, double epsilon) {
    return mean_abs_diff(a.z, b.z) / (mean_abs_diff(a.image, b.image) + epsilon);
}

CmsResult cms_loss_assigned(std::span<const ForwardRecord> records, const ClusterAssignment& assignment,
                            const CmsConfig& cfg, bool want_grads) {
    cfg.validate();
    if (assignment.anchor_count == 0) throw std::invalid_argument("cms_loss: need at least one anchor");
    if (assignment.total != records.size()) throw std::invalid_argument("cms_loss: assignment does not cover records");
    const double eps = cfg.epsilon;
    const auto& t = cfg.targets;

    CmsResult out;
    out.assignment = assignment;

    // Per-pair value and its partial derivatives w.r.t. the three distances.
    struct PairTerm {
        std::size_t a, b;
        double weight;  // 1 / (pairs in cluster)
        double d_dw;    // d value / d Δw
        double d_dF;    // d value / d ΔF_l (same for every l)
        double d_dI;    // d value / d ΔI
    };
    std::vector<PairTerm> terms;
    double sum = 0.0;
    for (const auto& members : assignment.members) {
        if (members.size() < 2) continue;
        const double pairs = static_cast<double>(members.size() * (members.size() - 1) / 2);
        double cluster_sum = 0.0;
        for (std::size_t i = 0; i < members.size(); ++i) {
            for (std::size_t j = i + 1; j < members.size(); ++j) {
                const ForwardRecord& ra = records[members[i]];
                const ForwardRecord& rb = records[members[j]];
                const double dz = mean_abs_diff(ra.z, rb.z);
                const double dw = mean_abs_diff(ra.w, rb.w);
                const double L = static_cast<double>(ra.features.size());
                double dF = 0.0;
                for (std::size_t l = 0; l < ra.features.size(); ++l) dF += mean_abs_diff(ra.features[l], rb.features[l]);
                const double dI = mean_abs_diff(ra.image, rb.image);
                PairTerm term{members[i], members[j], 1.0 / pairs, 0.0, 0.0, 0.0};
                double v = 0.0;
                const double gw = dw + eps;
                if (t.use_dw) {
                    v += dw / (dz + eps);
                    term.d_dw += 1.0 / (dz + eps);
                }
                if (t.use_dF && L > 0) {
                    v += dF / L / gw;
                    term.d_dF = 1.0 / (L * gw);
                    term.d_dw -= dF / L / (gw * gw);
                }
                if (t.use_dI) {
                    v += dI / gw;
                    term.d_dI = 1.0 / gw;
                    term.d_dw -= dI / (gw * gw);
                }
                cluster_sum += v;
                terms.push_back(term);
            }
        }
        sum += cluster_sum / pairs;
        ++out.contributing_clusters;
    }
    if (out.contributing_clusters == 0) return out;

    const double clusters = static_cast<double>(out.contributing_clusters);
    out.mean_ratio = sum / clusters;
    out.value = 1.0 / (out.mean_ratio + eps);
    if (!want_grads) return out;

    out.grads.reserve(records.size());
    for (const auto& r : records) out.grads.push_back(zero_grad(r));
    const double d_mean = -out.value * out.value / clusters;
    for (const auto& term : terms) {
        const double s = d_mean * term.weight;
        const ForwardRecord& ra = records[term.a];
        const ForwardRecord& rb = records[term.b];
        RecordGrad& ga = out.grads[term.a];
        RecordGrad& gb = out.grads[term.b];
        if (term.d_dw != 0.0) add_abs_diff_grad(ra.w, rb.w, s * term.d_dw, ga.d_w, gb.d_w);
        if (term.d_dF != 0.0) {
            for (std::size_t l = 0; l < ra.features.size(); ++l) {
                add_abs_diff_grad(ra.features[l], rb.features[l], s * term.d_dF, ga.d_features[l], gb.d_features[l]);
            }
        }
        if (term.d_dI != 0.0) add_abs_diff_grad(ra.image, rb.image, s * term.d_dI, ga.d_image, gb.d_image);
    }
    return out;
}

CmsResult cms_loss(std::span<const ForwardRecord> records, std::span<const Image> anchors,
                   const PerceptualDistance& dist, const CmsConfig& cfg, bool want_grads) {
    if (anchors.empty()) throw std::invalid_argument("cms_loss: need at least one anchor");
    if (records.empty()) throw std::invalid_argument("cms_loss: need at least one record");
    std::vector<Image> generated;
    generated.reserve(records.size());
    for (const auto& r : records) {
        if (r.resolution != anchors.front().height || r.resolution != anchors.front().width) {
            throw std::invalid_argument("cms_loss: record and anchor resolutions differ");
        }
        generated.push_back(image_from_chw(r.image, 3, r.resolution));
    }
    for (const auto& a : anchors) {
        if (!a.same_shape(anchors.front())) throw std::invalid_argument("cms_loss: anchors differ in shape");
    }
    return cms_loss_assigned(records, assign_from_distances(dist.cross(generated, anchors)), cfg, want_grads);
}

double total_g_loss(double adv, double cms, const CmsConfig& cfg) { return adv + cfg.lambda * cms; }

}  // namespace lfs
