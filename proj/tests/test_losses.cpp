// Copyright Contributors to the artsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Color, mask and SSIM losses, their gradients, and PSNR.
//
#include "oracles.hpp"

#include "artsplat/losses.hpp"

#include <gtest/gtest.h>

using namespace artsplat;
using namespace artsplat::testing;

namespace {

ImageD constant(int w, int h, int c, double v) { return ImageD(w, h, c, v); }

TEST(ColorLoss, ValuesAndGradient) {
    std::mt19937_64 rng(51);
    ImageD a = randomImage(9, 7, 3, rng);
    const ImageD b = randomImage(9, 7, 3, rng);
    EXPECT_EQ(colorLoss(a, a), 0.0);
    EXPECT_NEAR(colorLoss(constant(4, 4, 3, 0.6), constant(4, 4, 3, 0.5)), 0.01, 1e-15);
    ImageD g;
    colorLoss(a, b, &g);
    const Eigen::VectorXd fd = centralDifference([&] { return colorLoss(a, b); }, a.data.data(), a.data.size(), 1e-6);
    EXPECT_LT(relativeError(g.data.matrix(), fd), 1e-8);
    EXPECT_THROW(colorLoss(a, ImageD(8, 7, 3)), std::invalid_argument);
}

TEST(MaskLoss, ValuesAndGradient) {
    ImageD mask(4, 4, 1);
    for (int y = 0; y < 2; ++y) {
        for (int x = 0; x < 4; ++x) {
            mask(x, y) = 1;
        }
    }
    EXPECT_DOUBLE_EQ(maskLoss(ImageD(4, 4, 1), mask), 0.5);
    EXPECT_EQ(maskLoss(mask, mask), 0.0);
    std::mt19937_64 rng(52);
    ImageD alpha = randomImage(4, 4, 1, rng);
    ImageD g;
    maskLoss(alpha, mask, &g);
    const Eigen::VectorXd fd =
        centralDifference([&] { return maskLoss(alpha, mask); }, alpha.data.data(), alpha.data.size(), 1e-6);
    EXPECT_LT(relativeError(g.data.matrix(), fd), 1e-8);
}

TEST(Ssim, IdenticalIsOne) {
    std::mt19937_64 rng(53);
    const ImageD a = randomImage(20, 17, 3, rng);
    EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
}

TEST(Ssim, NegativeImageScoresBelowZero) {
    std::mt19937_64 rng(54);
    const ImageD a = randomImage(24, 24, 1, rng);
    ImageD neg = a;
    neg.data = 1.0 - a.data;
    EXPECT_LT(ssim(a, neg), 0.0);
}

TEST(Ssim, MatchesDirectWindowedReference) {
    std::mt19937_64 rng(55);
    for (int i = 0; i < 10; ++i) {
        const ImageD a = randomImage(23, 19, 3, rng);
        ImageD b = a;
        std::normal_distribution<double> n(0.0, 0.1 * (i + 1) / 10.0);
        for (Eigen::Index k = 0; k < b.data.size(); ++k) {
            b.data[k] = std::clamp(b.data[k] + n(rng), 0.0, 1.0);
        }
        EXPECT_NEAR(ssim(a, b), referenceSsim(a, b), 1e-4);
        EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-12);
    }
}

TEST(Ssim, GradientMatchesFiniteDifference) {
    std::mt19937_64 rng(56);
    ImageD a = randomImage(13, 12, 2, rng);
    const ImageD b = randomImage(13, 12, 2, rng);
    ImageD g;
    ssim(a, b, &g);
    const Eigen::VectorXd fd = centralDifference([&] { return ssim(a, b); }, a.data.data(), a.data.size(), 1e-6);
    EXPECT_LT(relativeError(g.data.matrix(), fd), 1e-6);
}

TEST(Ssim, RejectsImagesSmallerThanWindow) {
    EXPECT_THROW(ssim(ImageD(10, 20, 1), ImageD(10, 20, 1)), std::invalid_argument);
}

TEST(TotalLoss, CompositionAndGradients) {
    std::mt19937_64 rng(57);
    ImageD color = randomImage(12, 12, 3, rng);
    ImageD alpha = randomImage(12, 12, 1, rng);
    const ImageD target = randomImage(12, 12, 3, rng);
    ImageD mask = randomImage(12, 12, 1, rng);
    mask.data = (mask.data > 0.5).cast<double>();
    const LossResult l = totalLoss(color, alpha, target, mask);
    EXPECT_NEAR(l.total, colorLoss(color, target) + 0.5 * maskLoss(alpha, mask) + 0.01 * (1 - ssim(color, target)),
                1e-15);
    EXPECT_NEAR(totalLoss(color, alpha, target, mask, {0, 0}).total, colorLoss(color, target), 1e-15);
    EXPECT_NEAR(totalLoss(target, mask, target, mask).total, 0.0, 1e-15);
    auto f = [&] { return totalLoss(color, alpha, target, mask).total; };
    EXPECT_LT(relativeError(l.dColor.data.matrix(), centralDifference(f, color.data.data(), color.data.size(), 1e-6)),
              1e-6);
    EXPECT_LT(relativeError(l.dAlpha.data.matrix(), centralDifference(f, alpha.data.data(), alpha.data.size(), 1e-6)),
              1e-6);
}

TEST(Psnr, OffsetIdenticalAndReference) {
    EXPECT_NEAR(psnr(constant(8, 8, 3, 0.1), constant(8, 8, 3, 0.0)), 20.0, 1e-12);
    EXPECT_EQ(psnr(constant(8, 8, 3, 0.3), constant(8, 8, 3, 0.3)), kPsnrCap);
    std::mt19937_64 rng(58);
    const ImageD a = randomImage(10, 10, 3, rng), b = randomImage(10, 10, 3, rng);
    double sq = 0;
    for (Eigen::Index i = 0; i < a.data.size(); ++i) {
        sq += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
    }
    EXPECT_NEAR(psnr(a, b), -10 * std::log10(sq / double(a.data.size())), 1e-9);
}

} // namespace
