// Copyright (c) 2026, The lfs-gan authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <span>
#include <vector>

#include "lfs/image.hpp"
#include "lfs/metrics.hpp"
#include "lfs/netlab.hpp"

namespace lfs {

struct CmsTargets {
    bool use_dw = true;
    bool use_dF = true;
    bool use_dI = true;

    bool any() const { return use_dw || use_dF || use_dI; }
};

struct CmsConfig {
    double lambda = 1.0;
    CmsTargets targets;
    double epsilon = 1e-5;
    std::size_t oversample_factor = 4;

    bool enabled() const { return lambda > 0.0; }
    void validate() const;
};

struct AdversarialLoss {
    double value = 0.0;
    std::vector<double> d_real;  // dL / d logit, per real sample
    std::vector<double> d_fake;  // dL / d logit, per fake sample
};

double softplus(double x);

// Non-saturating losses: L_G = mean softplus(-D(fake)),
// L_D = mean softplus(D(fake)) + mean softplus(-D(real)).
AdversarialLoss adv_g_loss(std::span<const double> fake_logits);
AdversarialLoss adv_d_loss(std::span<const double> real_logits, std::span<const double> fake_logits);

double mean_abs_diff(std::span<const double> a, std::span<const double> b);

// Latent distance over image distance for one pair of samples.
double ms_loss_original(const ForwardRecord& a, const ForwardRecord& b, double epsilon = 1e-5);

struct RecordGrad {
    std::vector<double> d_w;
    std::vector<std::vector<double>> d_features;
    std::vector<double> d_image;
};

struct CmsResult {
    double value = 0.0;
    ClusterAssignment assignment;
    std::size_t contributing_clusters = 0;
    double mean_ratio = 0.0;       // the averaged ratio the loss inverts
    std::vector<RecordGrad> grads;  // empty unless requested
};

// Cluster-wise mode seeking loss with records already assigned to clusters.
CmsResult cms_loss_assigned(std::span<const ForwardRecord> records, const ClusterAssignment& assignment,
                            const CmsConfig& cfg, bool want_grads = false);

// Assigns records to their perceptually nearest anchor, then evaluates the loss.
CmsResult cms_loss(std::span<const ForwardRecord> records, std::span<const Image> anchors,
                   const PerceptualDistance& dist, const CmsConfig& cfg, bool want_grads = false);

double total_g_loss(double adv, double cms, const CmsConfig& cfg);

}  // namespace lfs
