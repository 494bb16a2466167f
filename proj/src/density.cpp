// Copyright Contributors to the artsplat Project
// SPDX-License-Identifier: Apache-2.0
//
#include "artsplat/density.hpp"

#include "artsplat/spatial_index.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace artsplat {

void DensifyConfig::validate() const {
    if (!(klMergeMax < klSplitCloneMin) && klSplitCloneMin > 0) {
        throw std::invalid_argument("densify: kl_merge_max must be below kl_split_clone_min");
    }
    if (gradThreshold < 0 || klMergeMax < 0 || scaleSplitFraction <= 0 || opacityPruneMin < 0 ||
        maxScaleFraction <= 0 || templateDistanceMax <= 0 || interval <= 0 || mergeScaleFactor <= 0 ||
        splitScaleDivisor <= 0 || maxGaussians <= 0) {
        throw std::invalid_argument("densify: thresholds must be positive");
    }
}

namespace {

GaussianCloudd initAt(const PointMatrix &points, int shDegree, double defaultScale) {
    GaussianCloudd cloud(shDegree);
    cloud.resize(points.rows(), shDegree);
    cloud.positions = points;
    const KdTree tree(points);
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        const auto nn = tree.kNearest(points.row(i).transpose(), 3, i);
        double scale = defaultScale;
        if (!nn.empty()) {
            double sum = 0;
            for (const auto &n : nn) {
                sum += std::sqrt(n.squaredDistance);
            }
            scale = std::max(sum / double(nn.size()), kMinScale);
        }
        cloud.logScales.row(i).setConstant(std::log(scale));
    }
    cloud.rawOpacities.setConstant(logit(kInitOpacity));
    return cloud;
}

} // namespace

GaussianCloudd initFromTemplate(const SkinnedTemplate &rig, int shDegree, double defaultScale) {
    return initAt(rig.vertices(), shDegree, defaultScale);
}

GaussianCloudd initRandom(const SkinnedTemplate &rig, Eigen::Index count, std::uint64_t seed, int shDegree,
                          double defaultScale) {
    const Eigen::Vector3d lo = rig.vertices().colwise().minCoeff().transpose();
    const Eigen::Vector3d hi = rig.vertices().colwise().maxCoeff().transpose();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    PointMatrix points(count, 3);
    for (Eigen::Index i = 0; i < count; ++i) {
        for (int c = 0; c < 3; ++c) {
            points(i, c) = lo[c] + (hi[c] - lo[c]) * unit(rng);
        }
    }
    return initAt(points, shDegree, defaultScale);
}

NearestPairs nearestPairs(const GaussianCloudd &cloud) {
    if (cloud.size() < 2) {
        throw std::invalid_argument("nearestPairs: needs at least two Gaussians");
    }
    NearestPairs out;
    const PointMatrix points = cloud.positions;
    const KdTree tree(points);
    out.neighbor.resize(static_cast<std::size_t>(cloud.size()));
    out.kl.resize(cloud.size());
    for (Eigen::Index i = 0; i < cloud.size(); ++i) {
        const Eigen::Index j = tree.nearest(points.row(i).transpose(), i).index;
        out.neighbor[static_cast<std::size_t>(i)] = j;
        out.kl[i] = klDivergenceFast(cloud.gaussian(i), cloud.gaussian(j));
    }
    return out;
}

std::pair<Gaussian3d, Gaussian3d> splitGaussian(const Gaussian3d &g, std::mt19937_64 &rng, double divisor) {
    std::normal_distribution<double> normal(0.0, 1.0);
    const Eigen::Matrix3d r = quaternionToMatrix(g.rotation);
    const Eigen::Vector3d s = g.scale();
    std::pair<Gaussian3d, Gaussian3d> children{g, g};
    for (Gaussian3d *child : {&children.first, &children.second}) {
        Eigen::Vector3d z;
        for (int c = 0; c < 3; ++c) {
            z[c] = normal(rng);
        }
        child->position = g.position + r * s.cwiseProduct(z);
        child->logScale = g.logScale.array() - std::log(divisor);
    }
    return children;
}

Gaussian3d cloneGaussian(const Gaussian3d &g, const Eigen::Vector3d &direction) {
    Gaussian3d copy = g;
    const double n = direction.norm();
    if (n > 0 && std::isfinite(n)) {
        copy.position += (0.01 * g.scale().maxCoeff() / n) * direction;
    }
    return copy;
}

Gaussian3d mergeGaussians(const Gaussian3d &g0, const Gaussian3d &g1, double scaleFactor) {
    Gaussian3d out = g0;
    out.position = 0.5 * (g0.position + g1.position);
    out.rawOpacity = 0.5 * (g0.rawOpacity + g1.rawOpacity);
    out.sh = 0.5 * (g0.sh + g1.sh);
    out.logScale = g0.logScale.array() + std::log(scaleFactor);
    return out;
}

PruneResult prune(const GaussianCloudd &cloud, const SkinnedTemplate &rig, const DensifyConfig &cfg,
                  double sceneExtent) {
    PruneResult out;
    const double maxScale = cfg.maxScaleFraction * sceneExtent;
    for (Eigen::Index i = 0; i < cloud.size(); ++i) {
        const double opacity = sigmoid(cloud.rawOpacities[i]);
        const double scale = activateScale<double>(cloud.logScales.row(i).transpose()).maxCoeff();
        const double dist = distanceToTemplate(rig, cloud.positions.row(i).transpose());
        if (opacity < cfg.opacityPruneMin || scale > maxScale || dist > cfg.templateDistanceMax) {
            continue;
        }
        out.kept.push_back(i);
    }
    if (out.kept.empty()) {
        throw std::runtime_error("prune: every Gaussian was removed; training cannot continue");
    }
    out.cloud = cloud.select(out.kept);
    return out;
}

DensifyResult densifyStep(const GaussianCloudd &cloud, const SkinnedTemplate &rig, const DensifyConfig &cfg,
                          double sceneExtent, std::uint64_t seed, std::int64_t step) {
    enum class Action { Keep, Split, Clone, Merged };
    const Eigen::Index n = cloud.size();
    DensifyResult result;
    result.stats.step = step;
    result.stats.countBefore = n;

    std::vector<Action> action(static_cast<std::size_t>(n), Action::Keep);
    std::vector<std::pair<Eigen::Index, Eigen::Index>> merges;

    if (n >= 2) {
        const NearestPairs pairs = nearestPairs(cloud);
        const double splitScale = cfg.scaleSplitFraction * sceneExtent;
        std::vector<bool> candidate(static_cast<std::size_t>(n), false);
        std::vector<bool> large(static_cast<std::size_t>(n), false);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double meanGrad = cloud.gradCount[i] > 0 ? cloud.gradAccum[i] / cloud.gradCount[i] : 0.0;
            candidate[i] = meanGrad > cfg.gradThreshold;
            large[i] = activateScale<double>(cloud.logScales.row(i).transpose()).maxCoeff() > splitScale;
        }
        Eigen::Index budget = std::max<Eigen::Index>(0, cfg.maxGaussians - n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const bool klGate = cfg.klSplitCloneMin <= 0 || pairs.kl[i] > cfg.klSplitCloneMin;
            if (!candidate[i] || !klGate || budget == 0) {
                continue;
            }
            action[i] = large[i] ? Action::Split : Action::Clone;
            --budget;
        }
        if (cfg.enableMerge) {
            for (Eigen::Index i = 0; i < n; ++i) {
                const Eigen::Index j = pairs.neighbor[static_cast<std::size_t>(i)];
                if (!candidate[i] || large[i] || !(pairs.kl[i] < cfg.klMergeMax) || action[i] != Action::Keep ||
                    action[j] != Action::Keep) {
                    continue;
                }
                action[i] = action[j] = Action::Merged;
                merges.emplace_back(std::min(i, j), std::max(i, j));
            }
        }
    }

    // Survivors keep their order; new Gaussians follow.
    std::vector<Eigen::Index> rows;
    rows.reserve(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        if (action[i] == Action::Keep || action[i] == Action::Clone) {
            rows.push_back(i);
        }
    }
    GaussianCloudd grown = cloud.select(rows);
    std::vector<Eigen::Index> provenance = rows;

    std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(step + 1)));
    for (Eigen::Index i = 0; i < n; ++i) {
        if (action[i] == Action::Clone) {
            grown.append(cloneGaussian(cloud.gaussian(i), -cloud.posGradAccum.row(i).transpose()));
            provenance.push_back(-1);
            ++result.stats.clone;
        }
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        if (action[i] == Action::Split) {
            auto [a, b] = splitGaussian(cloud.gaussian(i), rng, cfg.splitScaleDivisor);
            grown.append(a);
            grown.append(b);
            provenance.push_back(-1);
            provenance.push_back(-1);
            ++result.stats.split;
        }
    }
    for (const auto &[i, j] : merges) {
        grown.append(mergeGaussians(cloud.gaussian(i), cloud.gaussian(j), cfg.mergeScaleFactor));
        provenance.push_back(-1);
        ++result.stats.merge;
    }

    PruneResult pruned = prune(grown, rig, cfg, sceneExtent);
    result.stats.prune = grown.size() - pruned.cloud.size();
    result.provenance.reserve(pruned.kept.size());
    for (Eigen::Index k : pruned.kept) {
        result.provenance.push_back(provenance[static_cast<std::size_t>(k)]);
    }
    result.cloud = std::move(pruned.cloud);
    result.cloud.resetStats();
    result.stats.countAfter = result.cloud.size();
    return result;
}

} // namespace artsplat
