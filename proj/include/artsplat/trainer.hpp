// Copyright Contributors to the artsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Optimization loop over monocular frames: articulated render, loss, reverse pass, per-group
// Adam, scheduled density control, and the frozen model used for rendering afterwards.
//
#pragma once

#include "artsplat/adam.hpp"
#include "artsplat/articulated.hpp"
#include "artsplat/density.hpp"
#include "artsplat/losses.hpp"

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

namespace artsplat {

/// Raised when the loss or the parameters stop being finite.
class NumericError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct LearningRates {
    double position = 1.6e-4; // decays exponentially to positionFinal; multiplied by the template radius
    double positionFinal = 1.6e-6;
    double rotation = 1e-3;
    double logScale = 5e-3;
    double opacity = 5e-2;
    double sh = 2.5e-3;
    double shRestDivisor = 20; // higher-order SH bands use sh / shRestDivisor
    double networks = 1e-5;     // skinning-offset network
    double poseNetwork = 1e-5;  // pose-refinement network
};

enum class InitMode { Template, Random };

struct TrainConfig {
    int iterations = 3000;
    LearningRates lr;
    DensifyConfig densify;
    int maxShDegree = 3;
    int shPromotionInterval = 500;
    std::uint64_t seed = 0;
    Eigen::Vector3d background = Eigen::Vector3d::Zero();
    LossWeights loss;
    bool usePoseRefine = true;
    bool useLbsOffsets = true;
    bool lbsGradToPositions = false;
    InitMode init = InitMode::Template;
    Eigen::Index randomInitCount = 0; // 0: as many as template vertices

    /// Throws std::invalid_argument for non-positive iteration counts or rates.
    void validate() const;
    int densifyStop() const { return densify.stop >= 0 ? densify.stop : (iterations * 3) / 5; }
};

/// One supervised view: image, foreground mask, calibrated camera and the given pose.
struct TrainFrame {
    ImageD image;
    ImageD mask;
    Camerad camera;
    Pose pose;
    int frame = 0; // pose index shared by all views of the same time step
};

enum ParamGroup : int { Positions, Rotations, LogScales, Opacities, ShDc, ShRest, LbsNet, PoseNet, GroupCount };

/// Everything needed to continue training bit-for-bit.
struct TrainerState {
    std::int64_t iteration = 0;
    GaussianCloudd cloud;
    DeformModel model;
    std::array<AdamState, GroupCount> adam;
};

struct LogRow {
    std::int64_t iteration = 0;
    double loss = 0;
    double psnr = 0;
    Eigen::Index count = 0;
    double msPerIter = 0;
};

/// Frozen result of training: quantized parameters plus cached inference data.
struct TrainedModel {
    GaussianCloudd cloud;
    DeformModel model;
    SkinnedTemplate rig;
    int shDegree = 0;
    Eigen::Vector3d background = Eigen::Vector3d::Zero();
    RowMatrixXd weights;           // skinning weights per Gaussian
    std::vector<int> frames;       // frame ids with cached poses
    std::vector<Pose> inputPoses;  // as given
    std::vector<Pose> refinedPoses; // after the pose network
};

class Trainer {
  public:
    /// Initializes the cloud from the template (or randomly) and both networks from cfg.seed.
    Trainer(SkinnedTemplate rig, std::vector<TrainFrame> frames, TrainConfig cfg);

    /// One optimization step on frame (iteration mod frame count). Returns the loss before the update.
    double step();

    /// Steps until cfg.iterations.
    void run();

    bool done() const { return mState.iteration >= mCfg.iterations; }
    std::int64_t iteration() const { return mState.iteration; }
    int activeShDegree() const;
    double positionLr() const;

    const SkinnedTemplate &rig() const { return mRig; }
    const TrainConfig &config() const { return mCfg; }
    const std::vector<TrainFrame> &frames() const { return mFrames; }
    const GaussianCloudd &cloud() const { return mState.cloud; }
    const DeformModel &model() const { return mState.model; }
    const TrainerState &state() const { return mState; }
    void restore(TrainerState state);

    const std::vector<LogRow> &log() const { return mLog; }
    const std::vector<DensifyStats> &densifyLog() const { return mDensifyLog; }

    /// Quantizes parameters to float32 precision and caches weights and refined poses.
    TrainedModel finalize() const;

  private:
    void applyGradients(const ArticulatedGradients &g);
    void maybeDensify();

    SkinnedTemplate mRig;
    std::vector<TrainFrame> mFrames;
    TrainConfig mCfg;
    double mExtent = 1;
    TrainerState mState;
    std::vector<LogRow> mLog;
    std::vector<DensifyStats> mDensifyLog;
};

/// Rounds every stored parameter through float32.
void quantizeToFloat(GaussianCloudd &cloud);
void quantizeToFloat(DeformModel &model);

/// Refined pose for `pose` from the model's cache when the frame's input pose matches exactly,
/// otherwise by evaluating the pose network.
Pose lookupRefinedPose(const TrainedModel &m, const Pose &pose);

/// Render through cached skinning weights.
RenderOutput<double> renderModel(const TrainedModel &m, const Pose &pose, const Camerad &cam);

struct ViewScore {
    int frame = 0;
    double psnr = 0;
    double ssim = 0;
};

std::vector<ViewScore> evaluate(const TrainedModel &m, const std::vector<TrainFrame> &views);

/// Same protocol on a model still being trained (no quantization, networks evaluated live).
std::vector<ViewScore> evaluateLive(const GaussianCloudd &cloud, const SkinnedTemplate &rig, const DeformModel &model,
                                    int shDegree, const Eigen::Vector3d &background,
                                    const std::vector<TrainFrame> &views);

double meanPsnr(const std::vector<ViewScore> &scores);
double meanSsim(const std::vector<ViewScore> &scores);

} // namespace artsplat
