// Copyright Contributors to the artsplat Project
// SPDX-License-Identifier: Apache-2.0
//
#include "artsplat/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace artsplat {

void TrainConfig::validate() const {
    if (iterations <= 0) {
        throw std::invalid_argument("config: iterations must be positive");
    }
    const double rates[] = {lr.position, lr.positionFinal, lr.rotation, lr.logScale,
                            lr.opacity,  lr.sh,            lr.shRestDivisor, lr.networks, lr.poseNetwork};
    for (double r : rates) {
        if (!(r >= 0) || !std::isfinite(r)) {
            throw std::invalid_argument("config: learning rates must be finite and non-negative");
        }
    }
    if (maxShDegree < 0 || maxShDegree > kMaxShDegree || shPromotionInterval <= 0) {
        throw std::invalid_argument("config: sh degree must be in [0, 3] with a positive promotion interval");
    }
    if (init == InitMode::Random && randomInitCount < 0) {
        throw std::invalid_argument("config: random init count must be non-negative");
    }
    densify.validate();
}

namespace {

constexpr int kGroupWidth[] = {3, 4, 3, 1, 3, -1}; // per-Gaussian widths; ShRest depends on the degree

void remapMoments(AdamState &s, const std::vector<Eigen::Index> &provenance, Eigen::Index width) {
    if (s.m.size() == 0) {
        return;
    }
    Eigen::ArrayXd m = Eigen::ArrayXd::Zero(Eigen::Index(provenance.size()) * width);
    Eigen::ArrayXd v = m;
    for (std::size_t i = 0; i < provenance.size(); ++i) {
        const Eigen::Index src = provenance[i];
        if (src >= 0) {
            m.segment(Eigen::Index(i) * width, width) = s.m.segment(src * width, width);
            v.segment(Eigen::Index(i) * width, width) = s.v.segment(src * width, width);
        }
    }
    s.m = std::move(m);
    s.v = std::move(v);
}

template <typename Block> void adamOnBlock(Block &&block, const RowMatrixXd &grad, AdamState &s, double lr) {
    RowMatrixXd p = block;
    adamStep(flat(p), flat(grad), s, lr);
    block = p;
}

// Renormalizes only rows that are not already unit length, so untouched quaternions keep their bits.
void renormalize(GaussianCloudd &cloud) {
    for (Eigen::Index i = 0; i < cloud.size(); ++i) {
        const double n2 = cloud.rotations.row(i).squaredNorm();
        if (n2 != 1.0) {
            cloud.rotations.row(i) /= std::sqrt(n2);
        }
    }
}

double roundFloat(double x) { return double(float(x)); }

} // namespace

Trainer::Trainer(SkinnedTemplate rig, std::vector<TrainFrame> frames, TrainConfig cfg)
    : mRig(std::move(rig)), mFrames(std::move(frames)), mCfg(std::move(cfg)) {
    mCfg.validate();
    if (mFrames.empty()) {
        throw std::invalid_argument("trainer: dataset has no frames");
    }
    for (const auto &f : mFrames) {
        if (f.pose.jointCount() != mRig.jointCount()) {
            throw std::invalid_argument("trainer: frame pose joint count differs from the template");
        }
        if (f.image.width != f.camera.width || f.image.height != f.camera.height || f.image.channels != 3 ||
            !f.mask.sameShape(f.image.channel(0))) {
            throw std::invalid_argument("trainer: image or mask size differs from the camera resolution");
        }
    }
    mExtent = mRig.extent().second;
    if (mCfg.init == InitMode::Template) {
        mState.cloud = initFromTemplate(mRig, mCfg.maxShDegree);
    } else {
        const Eigen::Index n = mCfg.randomInitCount > 0 ? mCfg.randomInitCount : mRig.vertexCount();
        mState.cloud = initRandom(mRig, n, mCfg.seed, mCfg.maxShDegree);
    }
    mState.model = DeformModel::make(mRig.jointCount(), mCfg.seed);
    mState.model.useLbsOffsets = mCfg.useLbsOffsets;
    mState.model.usePoseRefine = mCfg.usePoseRefine && mRig.jointCount() > 1;
    mState.model.lbsGradToPositions = mCfg.lbsGradToPositions;
}

int Trainer::activeShDegree() const {
    return static_cast<int>(std::min<std::int64_t>(mCfg.maxShDegree, mState.iteration / mCfg.shPromotionInterval));
}

double Trainer::positionLr() const {
    const double a = mCfg.lr.position, b = mCfg.lr.positionFinal;
    if (a <= 0 || b <= 0) {
        return a * mExtent;
    }
    const double t = std::clamp(double(mState.iteration) / double(mCfg.iterations), 0.0, 1.0);
    return std::exp((1 - t) * std::log(a) + t * std::log(b)) * mExtent;
}

void Trainer::restore(TrainerState state) {
    if (state.model.lbsNet.parameterCount() != mState.model.lbsNet.parameterCount() ||
        state.model.poseNet.parameterCount() != mState.model.poseNet.parameterCount()) {
        throw std::invalid_argument("trainer: restored networks do not match the template");
    }
    mState = std::move(state);
}

double Trainer::step() {
    const auto start = std::chrono::steady_clock::now();
    const TrainFrame &frame = mFrames[static_cast<std::size_t>(mState.iteration % std::int64_t(mFrames.size()))];
    const int degree = activeShDegree();

    const ArticulatedForward fwd = articulatedForward(mState.cloud, mRig, mState.model, frame.pose, frame.camera,
                                                      mCfg.background, degree);
    const LossResult loss = totalLoss(fwd.render.color, fwd.render.alpha, frame.image, frame.mask, mCfg.loss);
    if (!std::isfinite(loss.total)) {
        throw NumericError("training: non-finite loss at iteration " + std::to_string(mState.iteration));
    }
    const ArticulatedGradients grads = articulatedBackward(mState.cloud, mRig, mState.model, frame.camera,
                                                           mCfg.background, fwd, loss.dColor, loss.dAlpha);
    applyGradients(grads);

    auto &cloud = mState.cloud;
    for (Eigen::Index i = 0; i < cloud.size(); ++i) {
        if (grads.visible[static_cast<std::size_t>(i)]) {
            cloud.gradAccum[i] += grads.screenGradNorm[i];
            cloud.gradCount[i] += 1;
            cloud.posGradAccum.row(i) += grads.positions.row(i);
        }
    }
    if (!cloud.parametersFinite()) {
        throw NumericError("training: parameters became non-finite at iteration " +
                           std::to_string(mState.iteration));
    }

    LogRow row;
    row.iteration = mState.iteration;
    row.loss = loss.total;
    row.psnr = psnr(fwd.render.color, frame.image);

    ++mState.iteration;
    maybeDensify();

    row.count = cloud.size();
    row.msPerIter =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    mLog.push_back(row);
    return loss.total;
}

void Trainer::run() {
    while (!done()) {
        step();
    }
}

void Trainer::applyGradients(const ArticulatedGradients &g) {
    auto &c = mState.cloud;
    auto &adam = mState.adam;
    const auto &lr = mCfg.lr;
    adamStep(flat(c.positions), flat(g.positions), adam[Positions], positionLr());
    adamStep(flat(c.rotations), flat(g.rotations), adam[Rotations], lr.rotation);
    adamStep(flat(c.logScales), flat(g.logScales), adam[LogScales], lr.logScale);
    adamStep(flat(c.rawOpacities), flat(g.rawOpacities), adam[Opacities], lr.opacity);
    adamOnBlock(c.sh.leftCols(3), g.sh.leftCols(3), adam[ShDc], lr.sh);
    if (c.sh.cols() > 3) {
        const Eigen::Index rest = c.sh.cols() - 3;
        adamOnBlock(c.sh.rightCols(rest), g.sh.rightCols(rest), adam[ShRest], lr.sh / lr.shRestDivisor);
    }
    if (mState.model.useLbsOffsets && g.lbsNet.size() > 0) {
        adamStep(flat(mState.model.lbsNet.parameters()), flat(g.lbsNet), adam[LbsNet], lr.networks);
    }
    if (mState.model.usePoseRefine && g.poseNet.size() > 0) {
        adamStep(flat(mState.model.poseNet.parameters()), flat(g.poseNet), adam[PoseNet], lr.poseNetwork);
    }
    renormalize(c);
}

void Trainer::maybeDensify() {
    const auto &d = mCfg.densify;
    const std::int64_t it = mState.iteration;
    const bool inWindow = it >= d.start && it <= mCfg.densifyStop();
    if (inWindow && it % d.interval == 0) {
        DensifyResult r = densifyStep(mState.cloud, mRig, d, mExtent, mCfg.seed, it);
        const Eigen::Index restWidth = r.cloud.sh.cols() - 3;
        for (int grp = Positions; grp <= ShRest; ++grp) {
            remapMoments(mState.adam[grp], r.provenance, grp == ShRest ? restWidth : kGroupWidth[grp]);
        }
        mState.cloud = std::move(r.cloud);
        mDensifyLog.push_back(r.stats);
    }
    if (d.opacityReset && inWindow && it % d.opacityResetInterval == 0) {
        const double cap = logit(0.01);
        auto &c = mState.cloud;
        c.rawOpacities = c.rawOpacities.cwiseMin(cap);
        mState.adam[Opacities].m.setZero();
        mState.adam[Opacities].v.setZero();
    }
}

void quantizeToFloat(GaussianCloudd &cloud) {
    cloud.positions = cloud.positions.unaryExpr(&roundFloat);
    cloud.rotations = cloud.rotations.unaryExpr(&roundFloat);
    cloud.logScales = cloud.logScales.unaryExpr(&roundFloat);
    cloud.rawOpacities = cloud.rawOpacities.unaryExpr(&roundFloat);
    cloud.sh = cloud.sh.unaryExpr(&roundFloat);
}

void quantizeToFloat(DeformModel &model) {
    model.lbsNet.parameters() = model.lbsNet.parameters().unaryExpr(&roundFloat);
    model.poseNet.parameters() = model.poseNet.parameters().unaryExpr(&roundFloat);
}

TrainedModel Trainer::finalize() const {
    TrainedModel m;
    m.cloud = mState.cloud;
    m.cloud.resetStats();
    quantizeToFloat(m.cloud);
    m.model = mState.model;
    quantizeToFloat(m.model);
    m.rig = mRig;
    m.shDegree = activeShDegree();
    m.background = mCfg.background;
    m.weights = skinningWeights(m.cloud, mRig, m.model).unaryExpr(&roundFloat);

    for (const auto &f : mFrames) {
        if (std::find(m.frames.begin(), m.frames.end(), f.frame) != m.frames.end()) {
            continue;
        }
        m.frames.push_back(f.frame);
        m.inputPoses.push_back(f.pose);
    }
    m.refinedPoses = cacheInferenceArtifacts(m.cloud, mRig, m.model, m.inputPoses).refined;
    return m;
}

Pose lookupRefinedPose(const TrainedModel &m, const Pose &pose) {
    for (std::size_t i = 0; i < m.inputPoses.size(); ++i) {
        const Pose &p = m.inputPoses[i];
        if (p.jointRotations == pose.jointRotations && p.rootTranslation == pose.rootTranslation) {
            return m.refinedPoses[i];
        }
    }
    return m.model.usePoseRefine ? refinePose(pose, m.rig.root(), m.model.poseNet).refined : pose;
}

RenderOutput<double> renderModel(const TrainedModel &m, const Pose &pose, const Camerad &cam) {
    return renderCached(m.cloud, m.rig, m.weights, lookupRefinedPose(m, pose), cam, m.background, m.shDegree);
}

namespace {

ViewScore score(const TrainFrame &view, const ImageD &color) {
    ViewScore s;
    s.frame = view.frame;
    s.psnr = psnr(color, view.image);
    s.ssim = ssim(color, view.image);
    return s;
}

} // namespace

std::vector<ViewScore> evaluate(const TrainedModel &m, const std::vector<TrainFrame> &views) {
    std::vector<ViewScore> out;
    out.reserve(views.size());
    for (const auto &v : views) {
        out.push_back(score(v, renderModel(m, v.pose, v.camera).color));
    }
    return out;
}

std::vector<ViewScore> evaluateLive(const GaussianCloudd &cloud, const SkinnedTemplate &rig, const DeformModel &model,
                                    int shDegree, const Eigen::Vector3d &background,
                                    const std::vector<TrainFrame> &views) {
    const RowMatrixXd weights = skinningWeights(cloud, rig, model);
    std::vector<ViewScore> out;
    out.reserve(views.size());
    for (const auto &v : views) {
        const Pose refined = model.usePoseRefine ? refinePose(v.pose, rig.root(), model.poseNet).refined : v.pose;
        out.push_back(score(v, renderCached(cloud, rig, weights, refined, v.camera, background, shDegree).color));
    }
    return out;
}

double meanPsnr(const std::vector<ViewScore> &scores) {
    double s = 0;
    for (const auto &v : scores) {
        s += v.psnr;
    }
    return scores.empty() ? 0 : s / double(scores.size());
}

double meanSsim(const std::vector<ViewScore> &scores) {
    double s = 0;
    for (const auto &v : scores) {
        s += v.ssim;
    }
    return scores.empty() ? 0 : s / double(scores.size());
}

} // namespace artsplat
