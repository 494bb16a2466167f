// Copyright Contributors to the artsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Projection, binning, compositing and the reverse pass, each against an independent oracle.
//
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace artsplat;
using namespace artsplat::testing;

namespace {

TEST(Projection, OnAxisIsotropic) {
    const Camerad cam = axisCamera(64, 50);
    const double sigma = 0.1, z = 4.0;
    const auto s = projectGaussian<double>(Eigen::Vector3d(0, 0, z), sigma * sigma * Eigen::Matrix3d::Identity(), 0.9,
                                           Eigen::Vector3d::Ones(), cam);
    ASSERT_TRUE(s.has_value());
    const double expected = std::pow(50 * sigma / z, 2) + 0.3;
    EXPECT_LT((s->cov - expected * Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((s->mean - Eigen::Vector2d(32, 32)).norm(), 1e-12);
    EXPECT_DOUBLE_EQ(s->depth, z);
}

TEST(Projection, DepthScalingAndCulling) {
    const Camerad cam = axisCamera(64, 50);
    const Eigen::Matrix3d cov = 0.01 * Eigen::Matrix3d::Identity();
    const auto near = projectGaussian<double>(Eigen::Vector3d(0, 0, 2), cov, 0.9, Eigen::Vector3d::Ones(), cam);
    const auto far = projectGaussian<double>(Eigen::Vector3d(0, 0, 4), cov, 0.9, Eigen::Vector3d::Ones(), cam);
    const double r1 = std::sqrt(near->cov(0, 0) - 0.3), r2 = std::sqrt(far->cov(0, 0) - 0.3);
    EXPECT_NEAR(r2 / r1, 0.5, 1e-6);
    EXPECT_FALSE(projectGaussian<double>(Eigen::Vector3d(0, 0, -1), cov, 0.9, Eigen::Vector3d::Ones(), cam));
    EXPECT_FALSE(projectGaussian<double>(Eigen::Vector3d(50, 0, 2), cov, 0.9, Eigen::Vector3d::Ones(), cam));
    EXPECT_FALSE(projectGaussian<double>(Eigen::Vector3d(0, 0, 2), cov, 0.003, Eigen::Vector3d::Ones(), cam));
}

TEST(Binning, TileCountsAndOrder) {
    Splat2D<double> inside;
    inside.mean = Eigen::Vector2d(8, 8);
    inside.extent = Eigen::Vector2d(3, 3);
    inside.depth = 2;
    inside.source = 0;
    Splat2D<double> corner = inside;
    corner.mean = Eigen::Vector2d(16, 16);
    corner.depth = 1;
    corner.source = 1;
    Splat2D<double> tie = inside;
    tie.source = 2;
    const TileBins bins = binTiles<double>({inside, corner, tie}, 64, 64);
    auto tile = [&](int t) {
        return std::vector<std::uint32_t>(bins.entries.begin() + bins.offsets[std::size_t(t)],
                                          bins.entries.begin() + bins.offsets[std::size_t(t) + 1]);
    };
    EXPECT_EQ(tile(0), (std::vector<std::uint32_t>{1, 0, 2}));
    EXPECT_EQ(tile(1), (std::vector<std::uint32_t>{1}));
    EXPECT_EQ(tile(4), (std::vector<std::uint32_t>{1}));
    EXPECT_EQ(tile(5), (std::vector<std::uint32_t>{1}));
    EXPECT_EQ(bins.entries.size(), 6u);
}

TEST(Binning, UnionEqualsOverlappingSplats) {
    std::mt19937_64 rng(41);
    const Camerad cam = axisCamera(64, 60);
    const RasterInputs<double> in = randomScene(rng, 40, 1.2);
    std::vector<Splat2D<double>> splats;
    for (Eigen::Index i = 0; i < in.size(); ++i) {
        if (auto s = projectGaussian<double>(in.positions.row(i).transpose(), in.covariances[std::size_t(i)],
                                             in.opacities[i], in.colors.row(i).transpose(), cam, i)) {
            splats.push_back(*s);
        }
    }
    const TileBins bins = binTiles(splats, 64, 64);
    std::set<std::uint32_t> binned(bins.entries.begin(), bins.entries.end());
    EXPECT_EQ(binned.size(), splats.size());
    // Every tile a splat's box overlaps lists it.
    for (std::size_t i = 0; i < splats.size(); ++i) {
        const auto &s = splats[i];
        for (int t = 0; t < bins.tileCount(); ++t) {
            const double x0 = (t % bins.tilesX) * 16.0, y0 = (t / bins.tilesX) * 16.0;
            const bool overlaps = s.mean.x() + s.extent.x() >= x0 && s.mean.x() - s.extent.x() < x0 + 16 &&
                                  s.mean.y() + s.extent.y() >= y0 && s.mean.y() - s.extent.y() < y0 + 16;
            const auto b = bins.entries.begin() + bins.offsets[std::size_t(t)];
            const auto e = bins.entries.begin() + bins.offsets[std::size_t(t) + 1];
            if (overlaps) {
                EXPECT_NE(std::find(b, e, std::uint32_t(i)), e);
            }
        }
    }
}

TEST(Composite, EmptyAndSingleCenteredSplat) {
    const Eigen::Vector3d bg(0.2, 0.4, 0.6);
    const auto [c0, a0] = compositePixel<double>({}, Eigen::Vector2d(3, 3), bg);
    EXPECT_EQ(c0, bg);
    EXPECT_EQ(a0, 0.0);
    Splat2D<double> s;
    s.mean = Eigen::Vector2d(3.5, 3.5);
    s.conic = Eigen::Vector3d(0.4, 0.1, 0.3);
    s.opacity = sigmoid(std::log(9.0));
    s.color = Eigen::Vector3d(1, 0.5, 0);
    const auto [c1, a1] = compositePixel<double>({s}, Eigen::Vector2d(3.5, 3.5), bg);
    EXPECT_NEAR(a1, 0.9, 1e-15);
    EXPECT_LT((c1 - (0.9 * s.color + 0.1 * bg)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Composite, TwoSplatsMatchDirectSumAndOrderMatters) {
    Splat2D<double> a, b;
    a.mean = Eigen::Vector2d(4, 4);
    a.conic = Eigen::Vector3d(0.2, 0.05, 0.3);
    a.opacity = 0.7;
    a.color = Eigen::Vector3d(1, 0, 0);
    b.mean = Eigen::Vector2d(5, 3.5);
    b.conic = Eigen::Vector3d(0.1, -0.02, 0.15);
    b.opacity = 0.8;
    b.color = Eigen::Vector3d(0, 0, 1);
    const Eigen::Vector2d x(4.5, 4.5);
    const Eigen::Vector3d bg(0.1, 0.1, 0.1);
    auto alphaOf = [&](const Splat2D<double> &s) {
        const Eigen::Vector2d d = x - s.mean;
        const double q = s.conic[0] * d.x() * d.x() + 2 * s.conic[1] * d.x() * d.y() + s.conic[2] * d.y() * d.y();
        return s.opacity * std::exp(-0.5 * q);
    };
    const double aa = alphaOf(a), ab = alphaOf(b);
    const Eigen::Vector3d direct = a.color * aa + b.color * ab * (1 - aa) + bg * (1 - aa) * (1 - ab);
    const auto [c, alpha] = compositePixel<double>({a, b}, x, bg);
    EXPECT_LT((c - direct).cwiseAbs().maxCoeff(), 1e-7);
    EXPECT_NEAR(alpha, 1 - (1 - aa) * (1 - ab), 1e-7);
    const auto [cr, alphar] = compositePixel<double>({b, a}, x, bg);
    EXPECT_GT((cr - c).cwiseAbs().maxCoeff(), 1e-3);
    EXPECT_NEAR(alphar, alpha, 1e-15);
}

TEST(Render, TiledMatchesNaiveOnRandomScenes) {
    std::mt19937_64 rng(42);
    const Camerad cam = axisCamera(64, 70);
    const Eigen::Vector3d bg(0.05, 0.1, 0.15);
    double worst = 0;
    for (int scene = 0; scene < 20; ++scene) {
        const RasterInputs<double> in = randomScene(rng, 10);
        const RenderOutput<double> r = rasterize(in, cam, bg);
        const auto [color, alpha] = naiveRender(in, cam, bg);
        worst = std::max({worst, (r.color.data - color.data).abs().maxCoeff(),
                          (r.alpha.data - alpha.data).abs().maxCoeff()});
        EXPECT_GE(r.alpha.data.minCoeff(), 0.0);
        EXPECT_LE(r.alpha.data.maxCoeff(), 1.0);
    }
    EXPECT_LT(worst, 1e-6);
}

TEST(Render, EmptyCloudAndDeterminism) {
    const Camerad cam = axisCamera(32, 30);
    const Eigen::Vector3d bg(0.3, 0.2, 0.1);
    RasterInputs<double> empty;
    empty.resize(0);
    const RenderOutput<double> r = rasterize(empty, cam, bg);
    EXPECT_EQ(r.alpha.data.abs().maxCoeff(), 0.0);
    for (int c = 0; c < 3; ++c) {
        EXPECT_EQ(r.color.channel(c).data.maxCoeff(), bg[c]);
        EXPECT_EQ(r.color.channel(c).data.minCoeff(), bg[c]);
    }
    std::mt19937_64 rng(43);
    const RasterInputs<double> in = randomScene(rng, 30);
    const RenderOutput<double> a = rasterize(in, cam, bg), b = rasterize(in, cam, bg);
    EXPECT_TRUE((a.color.data == b.color.data).all());
    EXPECT_TRUE((a.alpha.data == b.alpha.data).all());
}

TEST(Render, AlphaMonotoneInOpacity) {
    std::mt19937_64 rng(44);
    const Camerad cam = axisCamera(32, 40);
    RasterInputs<double> in = randomScene(rng, 8);
    const ImageD before = rasterize(in, cam, Eigen::Vector3d::Zero().eval()).alpha;
    in.opacities[3] = std::min(0.98, in.opacities[3] + 0.2);
    const ImageD after = rasterize(in, cam, Eigen::Vector3d::Zero().eval()).alpha;
    EXPECT_GE((after.data - before.data).minCoeff(), -1e-15);
}

class RasterBackward : public ::testing::Test {
  protected:
    std::mt19937_64 rng{45};
    Camerad cam = axisCamera(32, 40);
    Eigen::Vector3d bg{0.2, 0.3, 0.1};
    RasterInputs<double> in = randomScene(rng, 3, 0.3);
    ImageD wColor = randomImage(32, 32, 3, rng);
    ImageD wAlpha = randomImage(32, 32, 1, rng);

    double loss() const {
        const RenderOutput<double> r = rasterize(in, cam, bg);
        return (r.color.data * wColor.data).sum() + (r.alpha.data * wAlpha.data).sum();
    }
};

TEST_F(RasterBackward, AllInputsMatchFiniteDifference) {
    const RenderOutput<double> r = rasterize(in, cam, bg);
    const RasterGradients<double> g = rasterizeBackward(in, cam, bg, r, wColor, wAlpha);
    auto f = [this] { return loss(); };
    const double h = 1e-6;
    EXPECT_LT(relativeError(Eigen::Map<const Eigen::VectorXd>(g.positions.data(), g.positions.size()),
                            centralDifference(f, in.positions.data(), in.positions.size(), h)),
              1e-4);
    EXPECT_LT(relativeError(g.opacities, centralDifference(f, in.opacities.data(), in.opacities.size(), h)), 1e-4);
    EXPECT_LT(relativeError(Eigen::Map<const Eigen::VectorXd>(g.colors.data(), g.colors.size()),
                            centralDifference(f, in.colors.data(), in.colors.size(), h)),
              1e-4);
    // Symmetric perturbation of each covariance entry pair.
    Eigen::VectorXd an(6 * in.size()), fd(6 * in.size());
    int k = 0;
    for (std::size_t i = 0; i < in.covariances.size(); ++i) {
        for (int a = 0; a < 3; ++a) {
            for (int b = a; b < 3; ++b, ++k) {
                Eigen::Matrix3d &c = in.covariances[i];
                const double saved = c(a, b);
                auto set = [&](double v) { c(a, b) = c(b, a) = v; };
                set(saved + 1e-7);
                const double fp = loss();
                set(saved - 1e-7);
                const double fm = loss();
                set(saved);
                fd[k] = (fp - fm) / 2e-7;
                an[k] = a == b ? g.covariances[i](a, a) : g.covariances[i](a, b) + g.covariances[i](b, a);
            }
        }
    }
    EXPECT_LT(relativeError(an, fd), 1e-4);
}

TEST_F(RasterBackward, ZeroUpstreamGivesZero) {
    const RenderOutput<double> r = rasterize(in, cam, bg);
    const ImageD z3(32, 32, 3), z1(32, 32, 1);
    const RasterGradients<double> g = rasterizeBackward(in, cam, bg, r, z3, z1);
    EXPECT_EQ(g.positions.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(g.opacities.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(g.colors.cwiseAbs().maxCoeff(), 0.0);
}

TEST(RasterBackwardSign, ShiftRightTowardTarget) {
    const Camerad cam = axisCamera(32, 40);
    RasterInputs<double> in;
    in.resize(1);
    in.positions.row(0) << 0, 0, 3;
    in.covariances[0] = 0.01 * Eigen::Matrix3d::Identity();
    in.opacities[0] = 0.9;
    in.colors.row(0) << 1, 1, 1;
    RasterInputs<double> target = in;
    target.positions(0, 0) = -0.15;
    const ImageD goal = rasterize(target, cam, Eigen::Vector3d::Zero().eval()).color;
    const RenderOutput<double> r = rasterize(in, cam, Eigen::Vector3d::Zero().eval());
    ImageD dColor = r.color;
    dColor.data = 2 * (r.color.data - goal.data);
    const RasterGradients<double> g = rasterizeBackward(in, cam, Eigen::Vector3d::Zero().eval(), r, dColor, ImageD(32, 32, 1));
    EXPECT_GT(g.positions(0, 0), 0.0);
}

} // namespace
