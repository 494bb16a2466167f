// Copyright Contributors to the artsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Adaptive density control: template initialization, KL-gated split/clone, merge of
// near-duplicate pairs and pruning against the skinned template.
//
#pragma once

#include "artsplat/gaussian.hpp"
#include "artsplat/kinematics.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace artsplat {

struct DensifyConfig {
    double gradThreshold = 2e-4;      // mean screen-space position-gradient norm (NDC units)
    double klSplitCloneMin = 0.4;     // split/clone only when KL to the nearest neighbour exceeds this
    double klMergeMax = 0.1;          // merge only below this
    double scaleSplitFraction = 0.01; // "large" Gaussian: max scale above this fraction of the scene extent
    double opacityPruneMin = 0.005;
    double maxScaleFraction = 0.1;    // prune Gaussians larger than this fraction of the scene extent
    double templateDistanceMax = 0.1; // meters from the nearest template vertex
    int interval = 100;
    int start = 100;
    int stop = -1; // -1: 60% of the training iterations
    double mergeScaleFactor = 1.25;
    double splitScaleDivisor = 1.6;
    bool enableMerge = true;
    bool opacityReset = false;
    int opacityResetInterval = 3000;
    Eigen::Index maxGaussians = 50000;

    /// Throws std::invalid_argument when thresholds are inconsistent.
    void validate() const;
};

/// One row per densification event.
struct DensifyStats {
    std::int64_t step = 0;
    Eigen::Index countBefore = 0;
    Eigen::Index split = 0;
    Eigen::Index clone = 0;
    Eigen::Index merge = 0;
    Eigen::Index prune = 0;
    Eigen::Index countAfter = 0;
};

struct DensifyResult {
    GaussianCloudd cloud;
    /// Source row in the input cloud whose optimizer state a row inherits; -1 for new Gaussians.
    std::vector<Eigen::Index> provenance;
    DensifyStats stats;
};

inline constexpr double kInitOpacity = 0.1;

/// One Gaussian per template vertex: identity rotation, isotropic scale from the mean distance to
/// the three nearest vertices (defaultScale without neighbours), opacity 0.1, neutral gray.
GaussianCloudd initFromTemplate(const SkinnedTemplate &rig, int shDegree, double defaultScale = 0.01);

/// `count` Gaussians uniform in the template's bounding box, otherwise initialized like initFromTemplate.
GaussianCloudd initRandom(const SkinnedTemplate &rig, Eigen::Index count, std::uint64_t seed, int shDegree,
                          double defaultScale = 0.01);

struct NearestPairs {
    std::vector<Eigen::Index> neighbor;
    Eigen::VectorXd kl; // KL(g_i || g_neighbor(i))
};

/// Center-distance nearest neighbour of every Gaussian (k-d tree) and one fast KL per pair.
NearestPairs nearestPairs(const GaussianCloudd &cloud);

/// Two children sampled from the parent density, scales divided by `divisor`.
std::pair<Gaussian3d, Gaussian3d> splitGaussian(const Gaussian3d &g, std::mt19937_64 &rng, double divisor = 1.6);

/// Copy nudged by 0.01 * max scale along `direction` (unnormalized; zero leaves it in place).
Gaussian3d cloneGaussian(const Gaussian3d &g, const Eigen::Vector3d &direction);

/// Mean position, opacity logit and SH; g0's rotation; g0's scales multiplied by `scaleFactor`.
Gaussian3d mergeGaussians(const Gaussian3d &g0, const Gaussian3d &g1, double scaleFactor = 1.25);

struct PruneResult {
    GaussianCloudd cloud;
    std::vector<Eigen::Index> kept;
};

/// Drops low-opacity, oversized, and off-template Gaussians. Throws std::runtime_error if none remain.
PruneResult prune(const GaussianCloudd &cloud, const SkinnedTemplate &rig, const DensifyConfig &cfg,
                  double sceneExtent);

/// Gradient gate, KL-gated split/clone, merge, then prune; statistics are reset on the result.
DensifyResult densifyStep(const GaussianCloudd &cloud, const SkinnedTemplate &rig, const DensifyConfig &cfg,
                          double sceneExtent, std::uint64_t seed, std::int64_t step = 0);

} // namespace artsplat
