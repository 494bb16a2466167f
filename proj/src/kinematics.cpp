// Copyright Contributors to the artsplat Project
// SPDX-License-Identifier: Apache-2.0
//
#include "artsplat/kinematics.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace artsplat {

namespace {

Eigen::Matrix3d skew(const Eigen::Vector3d &v) {
    Eigen::Matrix3d m;
    m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
    return m;
}

} // namespace

SkinnedTemplate::SkinnedTemplate(std::vector<int> parents, PointMatrix restJoints, PointMatrix vertices,
                                 RowMatrixXd weights)
    : mParents(std::move(parents)), mRestJoints(std::move(restJoints)), mVertices(std::move(vertices)),
      mWeights(std::move(weights)) {
    const int k = jointCount();
    if (k < 1) {
        throw std::invalid_argument("template: needs at least one joint");
    }
    if (mRestJoints.rows() != k) {
        throw std::invalid_argument("template: rest_joints has " + std::to_string(mRestJoints.rows()) +
                                    " rows, expected " + std::to_string(k));
    }
    if (mVertices.rows() < 1) {
        throw std::invalid_argument("template: needs at least one vertex");
    }
    if (mWeights.rows() != mVertices.rows() || mWeights.cols() != k) {
        throw std::invalid_argument("template: weights must be V x K");
    }
    if (!mRestJoints.allFinite() || !mVertices.allFinite() || !mWeights.allFinite()) {
        throw std::invalid_argument("template: non-finite values");
    }
    for (int j = 0; j < k; ++j) {
        const int p = mParents[j];
        if (p < 0) {
            if (mRoot >= 0) {
                throw std::invalid_argument("template: more than one root (joints " + std::to_string(mRoot) +
                                            " and " + std::to_string(j) + ")");
            }
            mRoot = j;
        } else if (p >= k || p == j) {
            throw std::invalid_argument("template: invalid parent " + std::to_string(p) + " for joint " +
                                        std::to_string(j));
        }
    }
    if (mRoot < 0) {
        throw std::invalid_argument("template: no root joint");
    }
    // Breadth-first from the root; anything unreached sits on a cycle.
    std::vector<std::vector<int>> children(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) {
        if (mParents[j] >= 0) {
            children[mParents[j]].push_back(j);
        }
    }
    mOrder.reserve(static_cast<std::size_t>(k));
    mOrder.push_back(mRoot);
    for (std::size_t head = 0; head < mOrder.size(); ++head) {
        for (int c : children[mOrder[head]]) {
            mOrder.push_back(c);
        }
    }
    if (static_cast<int>(mOrder.size()) != k) {
        throw std::invalid_argument("template: parent array contains a cycle");
    }
    for (Eigen::Index v = 0; v < mWeights.rows(); ++v) {
        if ((mWeights.row(v).array() < 0).any() || std::abs(mWeights.row(v).sum() - 1.0) > 1e-6) {
            throw std::invalid_argument("template: weight row " + std::to_string(v) +
                                        " is negative or does not sum to 1");
        }
    }
    mIndex = KdTree(mVertices);
}

std::pair<Eigen::Vector3d, double> SkinnedTemplate::extent() const {
    const Eigen::Vector3d center = mVertices.colwise().mean().transpose();
    double radius = 0;
    for (Eigen::Index i = 0; i < mVertices.rows(); ++i) {
        radius = std::max(radius, (mVertices.row(i).transpose() - center).norm());
    }
    return {center, 1.1 * radius};
}

Eigen::Matrix3d axisAngleToMatrix(const Eigen::Vector3d &aa) {
    const double angle = aa.norm();
    if (angle == 0.0) {
        return Eigen::Matrix3d::Identity();
    }
    return Eigen::AngleAxisd(angle, aa / angle).toRotationMatrix();
}

Eigen::Vector3d matrixToAxisAngle(const Eigen::Matrix3d &r) {
    const Eigen::AngleAxisd aa(r);
    return aa.angle() * aa.axis();
}

std::array<Eigen::Matrix3d, 3> axisAngleJacobian(const Eigen::Vector3d &v) {
    std::array<Eigen::Matrix3d, 3> out;
    const double theta2 = v.squaredNorm();
    if (theta2 < 1e-16) {
        // First-order expansion around the identity.
        const Eigen::Matrix3d vx = skew(v);
        for (int i = 0; i < 3; ++i) {
            const Eigen::Matrix3d ex = skew(Eigen::Vector3d::Unit(i));
            out[i] = ex + 0.5 * (ex * vx + vx * ex);
        }
        return out;
    }
    const Eigen::Matrix3d r = axisAngleToMatrix(v);
    const Eigen::Matrix3d vx = skew(v);
    const Eigen::Matrix3d iMinusR = Eigen::Matrix3d::Identity() - r;
    for (int i = 0; i < 3; ++i) {
        const Eigen::Vector3d c = v.cross(iMinusR.col(i));
        out[i] = ((v[i] * vx + skew(c)) / theta2) * r;
    }
    return out;
}

Eigen::Vector3d axisAngleToMatrixBackward(const Eigen::Vector3d &v, const Eigen::Matrix3d &dR) {
    const auto jac = axisAngleJacobian(v);
    return {jac[0].cwiseProduct(dR).sum(), jac[1].cwiseProduct(dR).sum(), jac[2].cwiseProduct(dR).sum()};
}

std::vector<Eigen::Matrix3d> poseRotationMatrices(const Pose &pose) {
    std::vector<Eigen::Matrix3d> out(static_cast<std::size_t>(pose.jointCount()));
    for (int k = 0; k < pose.jointCount(); ++k) {
        out[k] = axisAngleToMatrix(pose.jointRotations.row(k).transpose());
    }
    return out;
}

JointTransforms forwardKinematics(const SkinnedTemplate &rig, const Pose &pose) {
    if (pose.jointCount() != rig.jointCount()) {
        throw std::invalid_argument("forwardKinematics: pose has " + std::to_string(pose.jointCount()) +
                                    " joints, template has " + std::to_string(rig.jointCount()));
    }
    return forwardKinematics(rig, poseRotationMatrices(pose), pose.rootTranslation);
}

JointTransforms forwardKinematics(const SkinnedTemplate &rig, const std::vector<Eigen::Matrix3d> &localRotations,
                                  const Eigen::Vector3d &rootTranslation) {
    const auto k = static_cast<std::size_t>(rig.jointCount());
    JointTransforms jt;
    jt.rotations.resize(k);
    jt.translations.resize(k);
    for (int j : rig.topologicalOrder()) {
        const Eigen::Vector3d rest = rig.restJoints().row(j).transpose();
        const Eigen::Matrix3d &local = localRotations[j];
        const int p = rig.parents()[j];
        if (p < 0) {
            jt.rotations[j] = local;
            jt.translations[j] = rootTranslation + rest - local * rest;
        } else {
            jt.rotations[j] = jt.rotations[p] * local;
            jt.translations[j] = jt.rotations[p] * (rest - local * rest) + jt.translations[p];
        }
    }
    return jt;
}

void forwardKinematicsBackward(const SkinnedTemplate &rig, const std::vector<Eigen::Matrix3d> &localRotations,
                               const JointTransforms &world, std::vector<Eigen::Matrix3d> dG,
                               std::vector<Eigen::Vector3d> db, std::vector<Eigen::Matrix3d> &dLocalRotations,
                               Eigen::Vector3d &dRootTranslation) {
    const auto &order = rig.topologicalOrder();
    dLocalRotations.assign(order.size(), Eigen::Matrix3d::Zero());
    dRootTranslation.setZero();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const int j = *it;
        const Eigen::Vector3d rest = rig.restJoints().row(j).transpose();
        const Eigen::Matrix3d &local = localRotations[j];
        const int p = rig.parents()[j];
        if (p < 0) {
            dLocalRotations[j] = dG[j] - db[j] * rest.transpose();
            dRootTranslation = db[j];
            continue;
        }
        const Eigen::Matrix3d &gp = world.rotations[p];
        dLocalRotations[j] = gp.transpose() * dG[j] - gp.transpose() * db[j] * rest.transpose();
        dG[p] += dG[j] * local.transpose() + db[j] * (rest - local * rest).transpose();
        db[p] += db[j];
    }
}

BlendedTransform blendTransformsUnchecked(const Eigen::Ref<const Eigen::VectorXd> &weights,
                                          const JointTransforms &jt) {
    BlendedTransform out;
    out.linear.setZero();
    out.translation.setZero();
    for (std::size_t k = 0; k < jt.size(); ++k) {
        const double w = weights[static_cast<Eigen::Index>(k)];
        out.linear += w * jt.rotations[k];
        out.translation += w * jt.translations[k];
    }
    return out;
}

BlendedTransform blendTransforms(const Eigen::Ref<const Eigen::VectorXd> &weights, const JointTransforms &jt) {
    if (weights.size() != static_cast<Eigen::Index>(jt.size())) {
        throw std::invalid_argument("blendTransforms: weight count does not match joint count");
    }
    if ((weights.array() < 0).any() || std::abs(weights.sum() - 1.0) > 1e-6) {
        throw std::invalid_argument("blendTransforms: weights must be nonnegative and sum to 1");
    }
    return blendTransformsUnchecked(weights, jt);
}

PosedGaussian lbsTransformGaussian(const Eigen::Vector3d &position, const Eigen::Matrix3d &covariance,
                                   const BlendedTransform &t) {
    return {t.linear * position + t.translation, t.linear * covariance * t.linear.transpose()};
}

PosedGaussian lbsTransformGaussian(const Gaussian3d &g, const BlendedTransform &t) {
    return lbsTransformGaussian(g.position, buildCovariance(g), t);
}

std::pair<Eigen::VectorXd, Eigen::Index> nearestVertexWeights(const SkinnedTemplate &rig,
                                                              const Eigen::Vector3d &p) {
    const auto nn = rig.vertexIndex().nearest(p);
    return {rig.weights().row(nn.index).transpose(), nn.index};
}

double distanceToTemplate(const SkinnedTemplate &rig, const Eigen::Vector3d &p) {
    return std::sqrt(rig.vertexIndex().nearest(p).squaredDistance);
}

} // namespace artsplat
