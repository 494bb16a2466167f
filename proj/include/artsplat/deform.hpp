// Copyright Contributors to the artsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Small fully connected networks with hand-written backpropagation, the skinning-weight
// offset field and the pose refinement head.
//
#pragma once

#include "artsplat/kinematics.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace artsplat {

/// Fully connected ReLU network with a linear output layer. Parameters live in one flat
/// vector; layer l stores its column-major weight (out x in) followed by its bias.
class Mlp {
  public:
    Mlp() = default;

    /// widths = {in, hidden..., out}. Hidden layers use uniform(+-1/sqrt(fan_in)) initialization;
    /// the output layer is zero when zeroOutput is set.
    Mlp(std::vector<int> widths, std::uint64_t seed, bool zeroOutput = true);

    const std::vector<int> &widths() const { return mWidths; }
    int inputWidth() const { return mWidths.front(); }
    int outputWidth() const { return mWidths.back(); }
    int layerCount() const { return static_cast<int>(mWidths.size()) - 1; }
    Eigen::Index parameterCount() const { return mParams.size(); }

    Eigen::VectorXd &parameters() { return mParams; }
    const Eigen::VectorXd &parameters() const { return mParams; }

    Eigen::Map<const Eigen::MatrixXd> weight(int layer) const;
    Eigen::Map<const Eigen::VectorXd> bias(int layer) const;
    Eigen::Map<Eigen::MatrixXd> weight(int layer);
    Eigen::Map<Eigen::VectorXd> bias(int layer);

    struct Cache {
        std::vector<Eigen::MatrixXd> activations; // input to each layer, column per sample
    };

    /// Batched forward; x is in x N. Throws std::invalid_argument on a width mismatch.
    Eigen::MatrixXd forward(const Eigen::Ref<const Eigen::MatrixXd> &x, Cache *cache = nullptr) const;

    struct Gradients {
        Eigen::VectorXd parameters; // same layout as parameters()
        Eigen::MatrixXd input;      // dL/dx, in x N
    };

    /// Exact reverse-mode gradients given dL/dy (out x N) and the matching forward cache.
    Gradients backward(const Cache &cache, const Eigen::Ref<const Eigen::MatrixXd> &dy) const;

  private:
    Eigen::Index weightOffset(int layer) const { return mOffsets[static_cast<std::size_t>(layer)]; }

    std::vector<int> mWidths;
    std::vector<Eigen::Index> mOffsets;
    Eigen::VectorXd mParams;
};

/// p followed by sin(2^i pi p), cos(2^i pi p) for i < frequencies; length 3 + 6 * frequencies.
Eigen::VectorXd encodePosition(const Eigen::Vector3d &p, int frequencies);

/// Column-wise encodePosition of a 3 x N matrix.
Eigen::MatrixXd encodePositions(const Eigen::Ref<const Eigen::MatrixXd> &points, int frequencies);

inline constexpr int kPositionFrequencies = 10;
inline constexpr int kHiddenWidth = 128;
inline constexpr double kLbsWeightEpsilon = 1e-8;

/// softmax_k(log(base_k + 1e-8) + offsets_k)
Eigen::VectorXd computeLbsWeights(const Eigen::Ref<const Eigen::VectorXd> &base,
                                  const Eigen::Ref<const Eigen::VectorXd> &offsets);

/// dL/doffsets given the softmax output and dL/dweights.
Eigen::VectorXd computeLbsWeightsBackward(const Eigen::Ref<const Eigen::VectorXd> &weights,
                                          const Eigen::Ref<const Eigen::VectorXd> &dWeights);

/// Network 3 + 6L -> 128 -> 128 -> 128 -> K predicting skinning-weight offsets.
Mlp makeLbsOffsetNet(int jointCount, std::uint64_t seed);

/// Network 3(K-1) -> 128 -> 128 -> 3(K-1) predicting per-joint axis-angle corrections.
Mlp makePoseRefineNet(int jointCount, std::uint64_t seed);

/// Non-root joint rotations flattened in joint-index order.
Eigen::VectorXd flattenNonRootRotations(const Pose &pose, int root);

struct PoseRefinement {
    Pose refined;
    std::vector<Eigen::Matrix3d> localRotations; // exp of refined rotations, fed to forward kinematics
    Eigen::VectorXd correction;                  // raw network output
    Mlp::Cache cache;
};

/// theta'_j = log(exp(correction_j) exp(theta_j)) for every non-root joint; root rotation and
/// translation pass through.
PoseRefinement refinePose(const Pose &theta, int root, const Mlp &net);

/// Gradient of the pose network parameters given dL/d(local rotation matrix) per joint.
Eigen::VectorXd refinePoseBackward(const PoseRefinement &refinement, const Pose &theta, int root, const Mlp &net,
                                   const std::vector<Eigen::Matrix3d> &dLocalRotations);

} // namespace artsplat
