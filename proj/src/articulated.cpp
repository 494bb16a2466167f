// Copyright Contributors to the artsplat Project
// SPDX-License-Identifier: Apache-2.0
//
#include "artsplat/articulated.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace artsplat {

namespace {

RowMatrixXd baseSkinningWeights(const GaussianCloudd &cloud, const SkinnedTemplate &rig) {
    RowMatrixXd base(cloud.size(), rig.jointCount());
    for (Eigen::Index i = 0; i < cloud.size(); ++i) {
        base.row(i) = nearestVertexWeights(rig, cloud.positions.row(i).transpose()).first.transpose();
    }
    return base;
}

RowMatrixXd blendWithOffsets(const RowMatrixXd &base, const Eigen::MatrixXd *offsets) {
    RowMatrixXd weights(base.rows(), base.cols());
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(base.cols());
    for (Eigen::Index i = 0; i < base.rows(); ++i) {
        weights.row(i) =
            computeLbsWeights(base.row(i).transpose(), offsets ? Eigen::VectorXd(offsets->col(i)) : zero).transpose();
    }
    return weights;
}

PoseRefinement passThrough(const Pose &pose) {
    PoseRefinement r;
    r.refined = pose;
    r.localRotations = poseRotationMatrices(pose);
    return r;
}

} // namespace

RowMatrixXd skinningWeights(const GaussianCloudd &cloud, const SkinnedTemplate &rig, const DeformModel &model) {
    const RowMatrixXd base = baseSkinningWeights(cloud, rig);
    if (!model.useLbsOffsets) {
        return blendWithOffsets(base, nullptr);
    }
    const Eigen::MatrixXd encoded = encodePositions(cloud.positions.transpose(), kPositionFrequencies);
    const Eigen::MatrixXd offsets = model.lbsNet.forward(encoded);
    return blendWithOffsets(base, &offsets);
}

ArticulatedForward articulatedForward(const GaussianCloudd &cloud, const SkinnedTemplate &rig,
                                      const DeformModel &model, const Pose &pose, const Camerad &cam,
                                      const Eigen::Vector3d &background, int shDegree,
                                      const RowMatrixXd *cachedWeights, bool applyPoseNet) {
    if (pose.jointCount() != rig.jointCount()) {
        throw std::invalid_argument("articulatedForward: pose and template joint counts differ");
    }
    ArticulatedForward f;
    f.inputPose = pose;
    f.shDegree = std::min(shDegree, cloud.shDegree);
    f.refinement = (applyPoseNet && model.usePoseRefine) ? refinePose(pose, rig.root(), model.poseNet)
                                                         : passThrough(pose);
    f.joints = forwardKinematics(rig, f.refinement.localRotations, pose.rootTranslation);

    const Eigen::Index n = cloud.size();
    if (cachedWeights) {
        if (cachedWeights->rows() != n || cachedWeights->cols() != rig.jointCount()) {
            throw std::invalid_argument("articulatedForward: cached weights have the wrong shape");
        }
        f.weights = *cachedWeights;
    } else {
        f.baseWeights = baseSkinningWeights(cloud, rig);
        if (model.useLbsOffsets) {
            f.encoded = encodePositions(cloud.positions.transpose(), kPositionFrequencies);
            const Eigen::MatrixXd offsets = model.lbsNet.forward(f.encoded, &f.lbsCache);
            f.weights = blendWithOffsets(f.baseWeights, &offsets);
        } else {
            f.weights = blendWithOffsets(f.baseWeights, nullptr);
        }
    }

    const Eigen::Vector3d camCenter = cam.center();
    f.blended.resize(static_cast<std::size_t>(n));
    f.canonicalCovariances.resize(static_cast<std::size_t>(n));
    f.viewDirections.resize(n, 3);
    f.viewDistances.resize(n);
    f.raster.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        f.blended[ui] = blendTransformsUnchecked(f.weights.row(i).transpose(), f.joints);
        f.canonicalCovariances[ui] =
            buildCovariance<double>(cloud.rotations.row(i).transpose(), cloud.logScales.row(i).transpose());
        const PosedGaussian posed =
            lbsTransformGaussian(cloud.positions.row(i).transpose(), f.canonicalCovariances[ui], f.blended[ui]);
        f.raster.positions.row(i) = posed.position.transpose();
        f.raster.covariances[ui] = posed.covariance;
        f.raster.opacities[i] = sigmoid(cloud.rawOpacities[i]);

        const Eigen::Vector3d v = posed.position - camCenter;
        const double dist = v.norm();
        const Eigen::Vector3d dir = dist > 0 ? Eigen::Vector3d(v / dist) : Eigen::Vector3d::UnitZ();
        f.viewDirections.row(i) = dir.transpose();
        f.viewDistances[i] = dist;
        const Gaussian3d g = cloud.gaussian(i);
        f.raster.colors.row(i) = evalShColor<double>(g.sh, dir, f.shDegree).transpose();
    }
    f.render = rasterize(f.raster, cam, background);
    return f;
}

ArticulatedGradients articulatedBackward(const GaussianCloudd &cloud, const SkinnedTemplate &rig,
                                         const DeformModel &model, const Camerad &cam,
                                         const Eigen::Vector3d &background, const ArticulatedForward &f,
                                         const ImageD &dColor, const ImageD &dAlpha) {
    const auto rg = rasterizeBackward(f.raster, cam, background, f.render, dColor, dAlpha);
    const Eigen::Index n = cloud.size();
    const int k = rig.jointCount();

    ArticulatedGradients g;
    g.positions.setZero(n, 3);
    g.rotations.setZero(n, 4);
    g.logScales.setZero(n, 3);
    g.rawOpacities.setZero(n);
    g.sh.setZero(n, cloud.sh.cols());
    g.weights.setZero(n, k);
    g.screenGradNorm.setZero(n);
    g.visible = rg.visible;

    std::vector<Eigen::Matrix3d> dJointRot(static_cast<std::size_t>(k), Eigen::Matrix3d::Zero());
    std::vector<Eigen::Vector3d> dJointTrans(static_cast<std::size_t>(k), Eigen::Vector3d::Zero());

    for (Eigen::Index i = 0; i < n; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        if (!rg.visible[ui]) {
            continue;
        }
        Eigen::Vector3d dPosed = rg.positions.row(i).transpose();
        const Eigen::Matrix3d &dPosedCov = rg.covariances[ui];

        // color -> SH coefficients and view direction
        const Gaussian3d gauss = cloud.gaussian(i);
        const Eigen::Vector3d dir = f.viewDirections.row(i).transpose();
        ShMatrix<double> dSh;
        Eigen::Vector3d dDir;
        evalShColorBackward<double>(gauss.sh, dir, f.shDegree, rg.colors.row(i).transpose(), dSh, dDir);
        for (Eigen::Index c = 0; c < dSh.cols(); ++c) {
            for (int ch = 0; ch < 3; ++ch) {
                g.sh(i, 3 * c + ch) = dSh(ch, c);
            }
        }
        if (f.viewDistances[i] > 0) {
            dPosed += (dDir - dir * dir.dot(dDir)) / f.viewDistances[i];
        }

        const double o = f.raster.opacities[i];
        g.rawOpacities[i] = rg.opacities[i] * o * (1 - o);

        // p' = G p + b, Sigma' = G Sigma G^T
        const BlendedTransform &t = f.blended[ui];
        const Eigen::Matrix3d &cov = f.canonicalCovariances[ui];
        const Eigen::Vector3d p = cloud.positions.row(i).transpose();
        g.positions.row(i) = (t.linear.transpose() * dPosed).transpose();
        const Eigen::Matrix3d dCov = t.linear.transpose() * dPosedCov * t.linear;
        const Eigen::Matrix3d dLinear = dPosed * p.transpose() + (dPosedCov + dPosedCov.transpose()) * t.linear * cov;
        const Eigen::Vector3d &dTrans = dPosed;

        Eigen::Vector4d dq;
        Eigen::Vector3d dls;
        buildCovarianceBackward<double>(cloud.rotations.row(i).transpose(), cloud.logScales.row(i).transpose(), dCov,
                                        dq, dls);
        g.rotations.row(i) = dq.transpose();
        g.logScales.row(i) = dls.transpose();

        for (int j = 0; j < k; ++j) {
            const double w = f.weights(i, j);
            g.weights(i, j) = dLinear.cwiseProduct(f.joints.rotations[j]).sum() + dTrans.dot(f.joints.translations[j]);
            dJointRot[j] += w * dLinear;
            dJointTrans[j] += w * dTrans;
        }

        const Eigen::Vector2d m2(rg.means2d(i, 0) * 0.5 * cam.width, rg.means2d(i, 1) * 0.5 * cam.height);
        g.screenGradNorm[i] = m2.norm();
    }

    if (model.useLbsOffsets && f.encoded.size() > 0) {
        Eigen::MatrixXd dOffsets(k, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            dOffsets.col(i) = computeLbsWeightsBackward(f.weights.row(i).transpose(), g.weights.row(i).transpose());
        }
        g.lbsOffsets = dOffsets.transpose();
        const auto netGrads = model.lbsNet.backward(f.lbsCache, dOffsets);
        g.lbsNet = netGrads.parameters;
        if (model.lbsGradToPositions) {
            // d(encoding)/dp: identity rows, then f cos(f p) and -f sin(f p) per frequency.
            for (Eigen::Index i = 0; i < n; ++i) {
                Eigen::Vector3d dp = netGrads.input.col(i).head<3>();
                double freq = std::numbers::pi;
                for (int l = 0; l < kPositionFrequencies; ++l, freq *= 2) {
                    for (int c = 0; c < 3; ++c) {
                        const double x = freq * cloud.positions(i, c);
                        dp[c] += netGrads.input(3 + 6 * l + c, i) * freq * std::cos(x) -
                                 netGrads.input(6 + 6 * l + c, i) * freq * std::sin(x);
                    }
                }
                g.positions.row(i) += dp.transpose();
            }
        }
    }

    if (model.usePoseRefine && f.refinement.correction.size() > 0) {
        std::vector<Eigen::Matrix3d> dLocal;
        Eigen::Vector3d dRoot;
        forwardKinematicsBackward(rig, f.refinement.localRotations, f.joints, dJointRot, dJointTrans, dLocal, dRoot);
        g.poseNet = refinePoseBackward(f.refinement, f.inputPose, rig.root(), model.poseNet, dLocal);
    }
    return g;
}

InferenceCache cacheInferenceArtifacts(const GaussianCloudd &cloud, const SkinnedTemplate &rig,
                                       const DeformModel &model, const std::vector<Pose> &poses) {
    InferenceCache cache;
    cache.weights = skinningWeights(cloud, rig, model);
    cache.refined.reserve(poses.size());
    for (const Pose &p : poses) {
        cache.refined.push_back(model.usePoseRefine ? refinePose(p, rig.root(), model.poseNet).refined : p);
    }
    return cache;
}

RenderOutput<double> renderCached(const GaussianCloudd &cloud, const SkinnedTemplate &rig,
                                  const RowMatrixXd &weights, const Pose &refinedPose, const Camerad &cam,
                                  const Eigen::Vector3d &background, int shDegree) {
    static const DeformModel kNoNetworks = [] {
        DeformModel m;
        m.useLbsOffsets = false;
        m.usePoseRefine = false;
        return m;
    }();
    return articulatedForward(cloud, rig, kNoNetworks, refinedPose, cam, background, shDegree, &weights, false)
        .render;
}

} // namespace artsplat
