// Copyright Contributors to the artsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Skinned templates, forward kinematics and linear blend skinning of Gaussians.
//
#pragma once

#include "artsplat/gaussian.hpp"
#include "artsplat/spatial_index.hpp"

#include <Eigen/Dense>

#include <array>
#include <utility>
#include <vector>

namespace artsplat {

using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Skeleton plus template vertices with per-vertex skinning weights.
class SkinnedTemplate {
  public:
    SkinnedTemplate() = default;

    /// Validates the rig; throws std::invalid_argument on cyclic parents, missing/multiple roots,
    /// or weight rows that are negative or do not sum to one.
    SkinnedTemplate(std::vector<int> parents, PointMatrix restJoints, PointMatrix vertices, RowMatrixXd weights);

    int jointCount() const { return static_cast<int>(mParents.size()); }
    Eigen::Index vertexCount() const { return mVertices.rows(); }
    int root() const { return mRoot; }

    const std::vector<int> &parents() const { return mParents; }
    /// Parents before children.
    const std::vector<int> &topologicalOrder() const { return mOrder; }
    const PointMatrix &restJoints() const { return mRestJoints; }
    const PointMatrix &vertices() const { return mVertices; }
    const RowMatrixXd &weights() const { return mWeights; }
    const KdTree &vertexIndex() const { return mIndex; }

    /// Center and radius of the bounding sphere of the vertices (radius scaled by 1.1).
    std::pair<Eigen::Vector3d, double> extent() const;

  private:
    std::vector<int> mParents;
    std::vector<int> mOrder;
    int mRoot = -1;
    PointMatrix mRestJoints;
    PointMatrix mVertices;
    RowMatrixXd mWeights;
    KdTree mIndex;
};

/// Axis-angle joint rotations (K x 3, radians) plus a root translation.
struct Pose {
    PointMatrix jointRotations;
    Eigen::Vector3d rootTranslation = Eigen::Vector3d::Zero();

    static Pose zero(int jointCount) {
        Pose p;
        p.jointRotations.setZero(jointCount, 3);
        return p;
    }
    int jointCount() const { return static_cast<int>(jointRotations.rows()); }
};

/// Per-joint world transforms x -> rotations[k] * x + translations[k] (canonical to posed).
struct JointTransforms {
    std::vector<Eigen::Matrix3d> rotations;
    std::vector<Eigen::Vector3d> translations;

    std::size_t size() const { return rotations.size(); }
};

struct BlendedTransform {
    Eigen::Matrix3d linear = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();
};

Eigen::Matrix3d axisAngleToMatrix(const Eigen::Vector3d &aa);
Eigen::Vector3d matrixToAxisAngle(const Eigen::Matrix3d &r);

/// d(exp(v))/dv_i for i = 0..2.
std::array<Eigen::Matrix3d, 3> axisAngleJacobian(const Eigen::Vector3d &v);

/// Pulls dL/dR back through R = exp(v).
Eigen::Vector3d axisAngleToMatrixBackward(const Eigen::Vector3d &v, const Eigen::Matrix3d &dR);

/// Local joint rotations as matrices, one per joint.
std::vector<Eigen::Matrix3d> poseRotationMatrices(const Pose &pose);

JointTransforms forwardKinematics(const SkinnedTemplate &rig, const Pose &pose);

/// Kinematic-chain composition from per-joint local rotation matrices (each about its rest joint).
JointTransforms forwardKinematics(const SkinnedTemplate &rig, const std::vector<Eigen::Matrix3d> &localRotations,
                                  const Eigen::Vector3d &rootTranslation);

/// Reverse-mode companion of forwardKinematics over local rotation matrices.
void forwardKinematicsBackward(const SkinnedTemplate &rig, const std::vector<Eigen::Matrix3d> &localRotations,
                               const JointTransforms &world, std::vector<Eigen::Matrix3d> dWorldRotations,
                               std::vector<Eigen::Vector3d> dWorldTranslations,
                               std::vector<Eigen::Matrix3d> &dLocalRotations, Eigen::Vector3d &dRootTranslation);

/// G = sum_k w_k G_k, b = sum_k w_k b_k. Throws when weights are negative or do not sum to 1 (1e-6).
BlendedTransform blendTransforms(const Eigen::Ref<const Eigen::VectorXd> &weights, const JointTransforms &jt);

/// Same as blendTransforms without validation; used on the hot path after weights are produced by softmax.
BlendedTransform blendTransformsUnchecked(const Eigen::Ref<const Eigen::VectorXd> &weights,
                                          const JointTransforms &jt);

struct PosedGaussian {
    Eigen::Vector3d position;
    Eigen::Matrix3d covariance;
};

/// p' = G p + b, Sigma' = G Sigma G^T. The posed covariance stays a full symmetric matrix.
PosedGaussian lbsTransformGaussian(const Eigen::Vector3d &position, const Eigen::Matrix3d &covariance,
                                   const BlendedTransform &t);
PosedGaussian lbsTransformGaussian(const Gaussian3d &g, const BlendedTransform &t);

/// Skinning weights of the Euclidean-nearest template vertex (lowest index on ties).
std::pair<Eigen::VectorXd, Eigen::Index> nearestVertexWeights(const SkinnedTemplate &rig, const Eigen::Vector3d &p);

double distanceToTemplate(const SkinnedTemplate &rig, const Eigen::Vector3d &p);

} // namespace artsplat
