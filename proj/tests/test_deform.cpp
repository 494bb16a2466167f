// Copyright Contributors to the artsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// MLP forward/backward, positional encoding, skinning-weight softmax and pose refinement.
//
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <numbers>

using namespace artsplat;
using namespace artsplat::testing;

namespace {

// Scalar loop over the flat parameter layout: per layer, column-major weight then bias.
Eigen::VectorXd naiveMlp(const Mlp &net, const Eigen::VectorXd &x) {
    const Eigen::VectorXd &p = net.parameters();
    std::vector<double> act(x.data(), x.data() + x.size());
    Eigen::Index offset = 0;
    for (int l = 0; l < net.layerCount(); ++l) {
        const int in = net.widths()[std::size_t(l)], out = net.widths()[std::size_t(l) + 1];
        std::vector<double> next(std::size_t(out), 0.0);
        for (int o = 0; o < out; ++o) {
            double s = p[offset + Eigen::Index(in) * out + o];
            for (int i = 0; i < in; ++i) {
                s += p[offset + Eigen::Index(i) * out + o] * act[std::size_t(i)];
            }
            next[std::size_t(o)] = (l + 1 < net.layerCount()) ? std::max(0.0, s) : s;
        }
        offset += Eigen::Index(in) * out + out;
        act = next;
    }
    return Eigen::Map<Eigen::VectorXd>(act.data(), Eigen::Index(act.size()));
}

TEST(Mlp, ForwardMatchesNaiveLoop) {
    const Mlp net({7, 16, 16, 5}, 3, false);
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(7, 9);
    const Eigen::MatrixXd y = net.forward(x);
    for (Eigen::Index n = 0; n < x.cols(); ++n) {
        EXPECT_LT((y.col(n) - naiveMlp(net, x.col(n))).cwiseAbs().maxCoeff(), 1e-13);
    }
}

TEST(Mlp, ZeroOutputLayerGivesZero) {
    const Mlp net = makeLbsOffsetNet(15, 1);
    EXPECT_EQ(net.inputWidth(), 63);
    EXPECT_EQ(net.outputWidth(), 15);
    EXPECT_EQ(net.widths(), (std::vector<int>{63, 128, 128, 128, 15}));
    EXPECT_EQ(net.forward(Eigen::MatrixXd::Random(63, 4)).cwiseAbs().maxCoeff(), 0.0);
    const Mlp pose = makePoseRefineNet(15, 2);
    EXPECT_EQ(pose.widths(), (std::vector<int>{42, 128, 128, 42}));
}

TEST(Mlp, BackwardMatchesFiniteDifference) {
    Mlp net({6, 12, 10, 4}, 5, false);
    const Eigen::MatrixXd x0 = Eigen::MatrixXd::Random(6, 3);
    const Eigen::MatrixXd w = Eigen::MatrixXd::Random(4, 3);
    Mlp::Cache cache;
    net.forward(x0, &cache);
    const Mlp::Gradients g = net.backward(cache, w);
    const Eigen::VectorXd fdP = centralDifference([&] { return net.forward(x0).cwiseProduct(w).sum(); },
                                                  net.parameters().data(), net.parameterCount(), 1e-6);
    EXPECT_LT(relativeError(g.parameters, fdP), 1e-6);
    Eigen::MatrixXd x = x0;
    const Eigen::VectorXd fdX =
        centralDifference([&] { return net.forward(x).cwiseProduct(w).sum(); }, x.data(), x.size(), 1e-6);
    EXPECT_LT(relativeError(Eigen::Map<const Eigen::VectorXd>(g.input.data(), g.input.size()), fdX), 1e-6);
}

TEST(Mlp, RejectsWidthMismatch) {
    const Mlp net({3, 4, 2}, 1);
    EXPECT_THROW(net.forward(Eigen::MatrixXd::Zero(4, 1)), std::invalid_argument);
    EXPECT_THROW(Mlp({3}, 1), std::invalid_argument);
}

TEST(Encoding, LayoutAndSize) {
    const Eigen::Vector3d p(0.1, -0.25, 0.7);
    const Eigen::VectorXd e = encodePosition(p, kPositionFrequencies);
    ASSERT_EQ(e.size(), 63);
    EXPECT_EQ(e.head<3>(), p);
    // Each frequency band holds sin then cos of 2^i pi p, both per axis.
    for (int i = 0; i < kPositionFrequencies; ++i) {
        const double f = std::ldexp(std::numbers::pi, i);
        for (int a = 0; a < 3; ++a) {
            EXPECT_NEAR(e[3 + 6 * i + a], std::sin(f * p[a]), 1e-12);
            EXPECT_NEAR(e[3 + 6 * i + 3 + a], std::cos(f * p[a]), 1e-12);
        }
    }
    const Eigen::MatrixXd pts = Eigen::MatrixXd::Random(3, 5);
    const Eigen::MatrixXd batch = encodePositions(pts, kPositionFrequencies);
    for (Eigen::Index n = 0; n < 5; ++n) {
        EXPECT_EQ(batch.col(n), encodePosition(pts.col(n), kPositionFrequencies));
    }
}

TEST(LbsWeights, ZeroOffsetsReproduceBase) {
    Eigen::VectorXd base(4);
    base << 0.1, 0.6, 0.3, 0.0;
    const Eigen::VectorXd w = computeLbsWeights(base, Eigen::VectorXd::Zero(4));
    EXPECT_LT((w - base).cwiseAbs().maxCoeff(), 1e-7);
    EXPECT_NEAR(w.sum(), 1.0, 1e-15);
    // Direct softmax oracle on a random offset.
    const Eigen::VectorXd off = Eigen::VectorXd::Random(4);
    const Eigen::ArrayXd logits = (base.array() + kLbsWeightEpsilon).log() + off.array();
    const Eigen::ArrayXd e = logits.exp();
    EXPECT_LT((computeLbsWeights(base, off).array() - e / e.sum()).abs().maxCoeff(), 1e-15);
}

TEST(LbsWeights, BackwardMatchesFiniteDifference) {
    Eigen::VectorXd base(5);
    base << 0.2, 0.1, 0.3, 0.4, 0.0;
    Eigen::VectorXd off = Eigen::VectorXd::Random(5);
    const Eigen::VectorXd w = Eigen::VectorXd::Random(5);
    const Eigen::VectorXd an = computeLbsWeightsBackward(computeLbsWeights(base, off), w);
    const Eigen::VectorXd fd =
        centralDifference([&] { return computeLbsWeights(base, off).dot(w); }, off.data(), off.size(), 1e-6);
    EXPECT_LT(relativeError(an, fd), 1e-6);
}

TEST(PoseRefine, ZeroNetworkKeepsPoseBitwise) {
    const SkinnedTemplate rig = makeTemplate(makeSkeleton("biped-15"), 6);
    std::mt19937_64 rng(31);
    const Pose pose = randomPose(rig.jointCount(), rng, 0.5);
    const PoseRefinement r = refinePose(pose, rig.root(), makePoseRefineNet(rig.jointCount(), 4));
    EXPECT_EQ(r.refined.jointRotations, pose.jointRotations);
    EXPECT_EQ(r.refined.rootTranslation, pose.rootTranslation);
}

TEST(PoseRefine, ComposesCorrectionOnTheLeft) {
    const SkinnedTemplate rig = smallChain(3);
    std::mt19937_64 rng(32);
    const Pose pose = randomPose(rig.jointCount(), rng, 0.5);
    Mlp net({6, 8, 6}, 1, true);
    Eigen::VectorXd corr(6);
    corr << 0.05, -0.02, 0.01, 0.03, 0.0, -0.04;
    net.bias(1) = corr;
    const PoseRefinement r = refinePose(pose, rig.root(), net);
    EXPECT_EQ(r.refined.jointRotations.row(rig.root()), pose.jointRotations.row(rig.root()));
    int slot = 0;
    for (int k = 0; k < rig.jointCount(); ++k) {
        if (k == rig.root()) {
            continue;
        }
        const Eigen::Vector3d c = corr.segment<3>(3 * slot++);
        const Eigen::Vector3d t = pose.jointRotations.row(k).transpose();
        const Eigen::Matrix3d oracle = Eigen::AngleAxisd(c.norm(), c.normalized()).toRotationMatrix() *
                                       Eigen::AngleAxisd(t.norm(), t.normalized()).toRotationMatrix();
        EXPECT_LT((axisAngleToMatrix(r.refined.jointRotations.row(k).transpose()) - oracle).cwiseAbs().maxCoeff(),
                  1e-12);
    }
}

TEST(PoseRefine, BackwardMatchesFiniteDifference) {
    const SkinnedTemplate rig = smallChain(4);
    std::mt19937_64 rng(33);
    const Pose pose = randomPose(rig.jointCount(), rng, 0.5);
    Mlp net = makePoseRefineNet(rig.jointCount(), 6);
    net = Mlp(net.widths(), 6, false);
    net.parameters() *= 0.3;
    std::vector<Eigen::Matrix3d> w(static_cast<std::size_t>(rig.jointCount()));
    for (auto &m : w) {
        m = Eigen::Matrix3d::Random();
    }
    auto f = [&] {
        const PoseRefinement r = refinePose(pose, rig.root(), net);
        double s = 0;
        for (std::size_t k = 0; k < w.size(); ++k) {
            s += r.localRotations[k].cwiseProduct(w[k]).sum();
        }
        return s;
    };
    const PoseRefinement r = refinePose(pose, rig.root(), net);
    const Eigen::VectorXd an = refinePoseBackward(r, pose, rig.root(), net, w);
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < net.parameterCount(); i += 37) {
        idx.push_back(i);
    }
    Eigen::VectorXd fd(Eigen::Index(idx.size())), sub(Eigen::Index(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) {
        fd[Eigen::Index(k)] = centralDifference(f, net.parameters().data() + idx[k], 1, 1e-6)[0];
        sub[Eigen::Index(k)] = an[idx[k]];
    }
    EXPECT_GT(sub.norm(), 0.0);
    EXPECT_LT(relativeError(sub, fd), 1e-6);
}

} // namespace
