// Copyright Contributors to the artsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// The articulated render path: pose refinement, forward kinematics, skinning-weight field,
// linear blend skinning of canonical Gaussians, rasterization, and the reverse pass that carries
// image gradients back to canonical parameters and both networks.
//
#pragma once

#include "artsplat/deform.hpp"
#include "artsplat/gaussian.hpp"
#include "artsplat/kinematics.hpp"
#include "artsplat/rasterizer.hpp"

#include <vector>

namespace artsplat {

/// The two learned deformation heads and their switches.
struct DeformModel {
    Mlp lbsNet;
    Mlp poseNet;
    bool useLbsOffsets = true;
    bool usePoseRefine = true;
    /// When set, skinning-offset gradients also reach canonical positions through the encoding.
    bool lbsGradToPositions = false;

    static DeformModel make(int jointCount, std::uint64_t seed) {
        DeformModel m;
        m.lbsNet = makeLbsOffsetNet(jointCount, seed * 2 + 1);
        // A single-joint rig has no non-root rotation to refine.
        if (jointCount > 1) {
            m.poseNet = makePoseRefineNet(jointCount, seed * 2 + 2);
        } else {
            m.usePoseRefine = false;
        }
        return m;
    }
};

/// Intermediates of one articulated forward pass.
struct ArticulatedForward {
    Pose inputPose;
    PoseRefinement refinement; // refined pose and local rotations
    JointTransforms joints;
    RowMatrixXd baseWeights; // U x K, nearest template vertex
    Eigen::MatrixXd encoded;  // (3 + 6L) x U
    Mlp::Cache lbsCache;
    RowMatrixXd weights; // U x K, final skinning weights
    std::vector<BlendedTransform> blended;
    std::vector<Eigen::Matrix3d> canonicalCovariances;
    Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> viewDirections;
    Eigen::VectorXd viewDistances;
    RasterInputs<double> raster;
    RenderOutput<double> render;
    int shDegree = 0;
};

struct ArticulatedGradients {
    RowMatrixXd positions;   // U x 3
    RowMatrixXd rotations;   // U x 4
    RowMatrixXd logScales;   // U x 3
    Eigen::VectorXd rawOpacities;
    RowMatrixXd sh;          // U x 3B
    Eigen::VectorXd lbsNet;  // empty when offsets are disabled
    Eigen::VectorXd poseNet; // empty when refinement is disabled
    RowMatrixXd weights;     // dL/d(final skinning weights), U x K
    RowMatrixXd lbsOffsets;  // dL/d(network offsets), U x K
    Eigen::VectorXd screenGradNorm; // |dL/dmean2d| in NDC units, 0 for culled Gaussians
    std::vector<bool> visible;
};

/// Skinning weights per Gaussian from the nearest template vertex and the offset network.
RowMatrixXd skinningWeights(const GaussianCloudd &cloud, const SkinnedTemplate &rig, const DeformModel &model);

/// Full forward pass. `cachedWeights`, when given, replaces the weight field (no network is run);
/// `applyPoseNet` = false renders the pose as given.
ArticulatedForward articulatedForward(const GaussianCloudd &cloud, const SkinnedTemplate &rig,
                                      const DeformModel &model, const Pose &pose, const Camerad &cam,
                                      const Eigen::Vector3d &background, int shDegree,
                                      const RowMatrixXd *cachedWeights = nullptr, bool applyPoseNet = true);

ArticulatedGradients articulatedBackward(const GaussianCloudd &cloud, const SkinnedTemplate &rig,
                                         const DeformModel &model, const Camerad &cam,
                                         const Eigen::Vector3d &background, const ArticulatedForward &fwd,
                                         const ImageD &dColor, const ImageD &dAlpha);

/// Precomputed data that lets rendering skip every network evaluation.
struct InferenceCache {
    RowMatrixXd weights;       // U x K
    std::vector<Pose> refined; // one per training frame
};

InferenceCache cacheInferenceArtifacts(const GaussianCloudd &cloud, const SkinnedTemplate &rig,
                                       const DeformModel &model, const std::vector<Pose> &poses);

/// Render with cached weights and an already-refined pose.
RenderOutput<double> renderCached(const GaussianCloudd &cloud, const SkinnedTemplate &rig,
                                  const RowMatrixXd &weights, const Pose &refinedPose, const Camerad &cam,
                                  const Eigen::Vector3d &background, int shDegree);

} // namespace artsplat
