// Copyright Contributors to the artsplat Project
// SPDX-License-Identifier: Apache-2.0
//
#include "artsplat/deform.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace artsplat {

Mlp::Mlp(std::vector<int> widths, std::uint64_t seed, bool zeroOutput) : mWidths(std::move(widths)) {
    if (mWidths.size() < 2) {
        throw std::invalid_argument("Mlp: needs at least input and output widths");
    }
    Eigen::Index total = 0;
    for (int l = 0; l < layerCount(); ++l) {
        if (mWidths[l] <= 0 || mWidths[l + 1] <= 0) {
            throw std::invalid_argument("Mlp: widths must be positive");
        }
        mOffsets.push_back(total);
        total += static_cast<Eigen::Index>(mWidths[l]) * mWidths[l + 1] + mWidths[l + 1];
    }
    mParams.setZero(total);
    std::mt19937_64 rng(seed);
    for (int l = 0; l < layerCount(); ++l) {
        if (zeroOutput && l == layerCount() - 1) {
            break;
        }
        const double bound = 1.0 / std::sqrt(double(mWidths[l]));
        std::uniform_real_distribution<double> dist(-bound, bound);
        auto w = weight(l);
        for (Eigen::Index j = 0; j < w.cols(); ++j) {
            for (Eigen::Index i = 0; i < w.rows(); ++i) {
                w(i, j) = dist(rng);
            }
        }
        auto b = bias(l);
        for (Eigen::Index i = 0; i < b.size(); ++i) {
            b[i] = dist(rng);
        }
    }
}

Eigen::Map<const Eigen::MatrixXd> Mlp::weight(int layer) const {
    return {mParams.data() + weightOffset(layer), mWidths[layer + 1], mWidths[layer]};
}

Eigen::Map<const Eigen::VectorXd> Mlp::bias(int layer) const {
    return {mParams.data() + weightOffset(layer) + static_cast<Eigen::Index>(mWidths[layer]) * mWidths[layer + 1],
            mWidths[layer + 1]};
}

Eigen::Map<Eigen::MatrixXd> Mlp::weight(int layer) {
    return {mParams.data() + weightOffset(layer), mWidths[layer + 1], mWidths[layer]};
}

Eigen::Map<Eigen::VectorXd> Mlp::bias(int layer) {
    return {mParams.data() + weightOffset(layer) + static_cast<Eigen::Index>(mWidths[layer]) * mWidths[layer + 1],
            mWidths[layer + 1]};
}

Eigen::MatrixXd Mlp::forward(const Eigen::Ref<const Eigen::MatrixXd> &x, Cache *cache) const {
    if (x.rows() != inputWidth()) {
        throw std::invalid_argument("Mlp::forward: input has " + std::to_string(x.rows()) + " rows, expected " +
                                    std::to_string(inputWidth()));
    }
    if (cache) {
        cache->activations.clear();
        cache->activations.reserve(static_cast<std::size_t>(layerCount()));
    }
    Eigen::MatrixXd h = x;
    for (int l = 0; l < layerCount(); ++l) {
        Eigen::MatrixXd z = weight(l) * h;
        z.colwise() += bias(l);
        if (l + 1 < layerCount()) {
            z = z.cwiseMax(0.0);
        }
        if (cache) {
            cache->activations.push_back(std::move(h));
        }
        h = std::move(z);
    }
    return h;
}

Mlp::Gradients Mlp::backward(const Cache &cache, const Eigen::Ref<const Eigen::MatrixXd> &dy) const {
    if (static_cast<int>(cache.activations.size()) != layerCount() || dy.rows() != outputWidth()) {
        throw std::invalid_argument("Mlp::backward: cache or gradient does not match the network");
    }
    Gradients grads;
    grads.parameters.setZero(parameterCount());
    Eigen::MatrixXd delta = dy;
    for (int l = layerCount() - 1; l >= 0; --l) {
        const Eigen::MatrixXd &in = cache.activations[l];
        Eigen::Map<Eigen::MatrixXd>(grads.parameters.data() + weightOffset(l), mWidths[l + 1], mWidths[l]) =
            delta * in.transpose();
        Eigen::Map<Eigen::VectorXd>(grads.parameters.data() + weightOffset(l) +
                                        static_cast<Eigen::Index>(mWidths[l]) * mWidths[l + 1],
                                    mWidths[l + 1]) = delta.rowwise().sum();
        Eigen::MatrixXd prev = weight(l).transpose() * delta;
        if (l > 0) {
            // `in` is a ReLU output; its derivative is 1 exactly where it is positive.
            prev.array() *= (in.array() > 0.0).cast<double>();
        }
        delta = std::move(prev);
    }
    grads.input = std::move(delta);
    return grads;
}

Eigen::VectorXd encodePosition(const Eigen::Vector3d &p, int frequencies) {
    return encodePositions(p, frequencies);
}

Eigen::MatrixXd encodePositions(const Eigen::Ref<const Eigen::MatrixXd> &points, int frequencies) {
    if (points.rows() != 3 || frequencies < 0) {
        throw std::invalid_argument("encodePositions: expected 3 x N points and L >= 0");
    }
    Eigen::MatrixXd out(3 + 6 * frequencies, points.cols());
    out.topRows(3) = points;
    double freq = std::numbers::pi;
    for (int i = 0; i < frequencies; ++i, freq *= 2.0) {
        const Eigen::ArrayXXd arg = freq * points.array();
        out.middleRows(3 + 6 * i, 3) = arg.sin().matrix();
        out.middleRows(6 + 6 * i, 3) = arg.cos().matrix();
    }
    return out;
}

Eigen::VectorXd computeLbsWeights(const Eigen::Ref<const Eigen::VectorXd> &base,
                                  const Eigen::Ref<const Eigen::VectorXd> &offsets) {
    const Eigen::ArrayXd logits = (base.array() + kLbsWeightEpsilon).log() + offsets.array();
    const Eigen::ArrayXd e = (logits - logits.maxCoeff()).exp();
    return (e / e.sum()).matrix();
}

Eigen::VectorXd computeLbsWeightsBackward(const Eigen::Ref<const Eigen::VectorXd> &weights,
                                          const Eigen::Ref<const Eigen::VectorXd> &dWeights) {
    return weights.cwiseProduct(dWeights.array().matrix() - Eigen::VectorXd::Constant(weights.size(),
                                                                                       weights.dot(dWeights)));
}

Mlp makeLbsOffsetNet(int jointCount, std::uint64_t seed) {
    return Mlp({3 + 6 * kPositionFrequencies, kHiddenWidth, kHiddenWidth, kHiddenWidth, jointCount}, seed, true);
}

Mlp makePoseRefineNet(int jointCount, std::uint64_t seed) {
    const int dim = 3 * (jointCount - 1);
    if (dim <= 0) {
        throw std::invalid_argument("makePoseRefineNet: needs at least one non-root joint");
    }
    return Mlp({dim, kHiddenWidth, kHiddenWidth, dim}, seed, true);
}

Eigen::VectorXd flattenNonRootRotations(const Pose &pose, int root) {
    Eigen::VectorXd flat(3 * (pose.jointCount() - 1));
    int slot = 0;
    for (int k = 0; k < pose.jointCount(); ++k) {
        if (k == root) {
            continue;
        }
        flat.segment<3>(3 * slot++) = pose.jointRotations.row(k).transpose();
    }
    return flat;
}

PoseRefinement refinePose(const Pose &theta, int root, const Mlp &net) {
    PoseRefinement out;
    const Eigen::VectorXd input = flattenNonRootRotations(theta, root);
    out.correction = net.forward(input, &out.cache);
    out.refined = theta;
    out.localRotations.resize(static_cast<std::size_t>(theta.jointCount()));
    int slot = 0;
    for (int k = 0; k < theta.jointCount(); ++k) {
        const Eigen::Vector3d aa = theta.jointRotations.row(k).transpose();
        if (k != root) {
            const Eigen::Vector3d c = out.correction.segment<3>(3 * slot++);
            // An exactly-zero correction keeps the input bit for bit.
            if (!c.isZero(0.0)) {
                out.refined.jointRotations.row(k) =
                    matrixToAxisAngle(axisAngleToMatrix(c) * axisAngleToMatrix(aa)).transpose();
            }
        }
        out.localRotations[k] = axisAngleToMatrix(out.refined.jointRotations.row(k).transpose());
    }
    return out;
}

Eigen::VectorXd refinePoseBackward(const PoseRefinement &refinement, const Pose &theta, int root, const Mlp &net,
                                   const std::vector<Eigen::Matrix3d> &dLocalRotations) {
    Eigen::VectorXd dCorrection(refinement.correction.size());
    int slot = 0;
    for (int k = 0; k < theta.jointCount(); ++k) {
        if (k == root) {
            continue;
        }
        // R' = exp(c) exp(theta); exp(log(R')) is the identity map.
        const Eigen::Matrix3d rTheta = axisAngleToMatrix(theta.jointRotations.row(k).transpose());
        const Eigen::Vector3d c = refinement.correction.segment<3>(3 * slot);
        dCorrection.segment<3>(3 * slot) = axisAngleToMatrixBackward(c, dLocalRotations[k] * rTheta.transpose());
        ++slot;
    }
    return net.backward(refinement.cache, dCorrection).parameters;
}

} // namespace artsplat
