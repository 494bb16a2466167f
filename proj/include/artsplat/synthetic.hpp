// Copyright Contributors to the artsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Procedural articulated scenes with known ground truth: a skinned template, Gaussians placed
// on it, a pose trajectory, and renders from one training camera plus held-out cameras.
//
#pragma once

#include "artsplat/io.hpp"

#include <map>
#include <string>
#include <vector>

namespace artsplat {

struct SyntheticSpec {
    std::string preset = "biped-15"; // or chain-N
    int gaussiansPerBone = 60;
    int verticesPerBone = 24;
    int frames = 30;
    int width = 128;
    int height = 128;
    double amplitude = 0.4; // joint-angle amplitude, radians
    double turn = 6.283185307179586; // root yaw swept over the sequence, radians
    double noise = 0.0;     // std-dev of the perturbation added to written joint angles
    std::uint64_t seed = 1;
    int evalCameras = 4;
    double cameraDistance = 3.5;
    double focal = 0; // 0: fit the template into the frame

    /// Throws std::invalid_argument for non-positive counts or amplitude >= pi/2.
    void validate() const;
};

SyntheticSpec parseSyntheticSpec(const std::string &text, const fs::path &origin = "<spec>");
std::string formatSyntheticSpec(const SyntheticSpec &spec);

/// One segment carrying geometry, rigidly attached to `joint`.
struct Bone {
    int joint = 0;
    Eigen::Vector3d from = Eigen::Vector3d::Zero();
    Eigen::Vector3d to = Eigen::Vector3d::Zero();
    double radius = 0.05;
};

struct Skeleton {
    std::vector<int> parents;
    PointMatrix joints;
    std::vector<Bone> bones;
};

/// "biped-15" or "chain-N" (N >= 1). Throws std::invalid_argument for unknown names.
Skeleton makeSkeleton(const std::string &preset);

/// Template with vertices on rings around each bone; weights are inverse distances to the two
/// nearest joints, normalized.
SkinnedTemplate makeTemplate(const Skeleton &skel, int verticesPerBone);

struct SyntheticScene {
    SyntheticSpec spec;
    SkinnedTemplate rig;
    GaussianCloudd groundTruth;
    std::vector<Pose> cleanPoses;
    std::vector<Pose> givenPoses; // clean poses plus noise on the non-root joints
    std::map<int, Camerad> cameras; // 0 trains, the rest are held out
    /// views[frame][camera]: 8-bit quantized render and (alpha > 0.5) mask.
    std::vector<std::vector<TrainFrame>> views;

    std::vector<TrainFrame> trainFrames() const;
    std::vector<TrainFrame> testFrames() const;
};

/// Deterministic in the spec (including its seed).
SyntheticScene generateSynthetic(const SyntheticSpec &spec);

/// Ground-truth render with nearest-vertex skinning and no networks.
RenderOutput<double> renderGroundTruth(const GaussianCloudd &cloud, const SkinnedTemplate &rig, const Pose &pose,
                                       const Camerad &cam, const Eigen::Vector3d &background = Eigen::Vector3d::Zero());

/// dataset.json, split.json, template.json, images/, masks/, poses/ and ground_truth/ under dir.
void writeSynthetic(const fs::path &dir, const SyntheticScene &scene);

} // namespace artsplat
