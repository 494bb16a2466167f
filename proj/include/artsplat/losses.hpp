// Copyright Contributors to the artsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Photometric, mask and structural-similarity losses with analytic gradients, plus PSNR.
//
#pragma once

#include "artsplat/image.hpp"

namespace artsplat {

struct LossWeights {
    double mask = 0.5;
    double ssim = 0.01;
};

/// Mean squared error over every pixel and channel; optional gradient 2 (pred - target) / N.
double colorLoss(const ImageD &pred, const ImageD &target, ImageD *grad = nullptr);

/// Mean squared error between the accumulated-alpha map and a binary mask.
double maskLoss(const ImageD &alpha, const ImageD &mask, ImageD *grad = nullptr);

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

/// Mean SSIM (11x11 Gaussian window, sigma 1.5, k1 = 0.01, k2 = 0.03, range 1) averaged over
/// channels, zero padding at the borders. gradA receives dSSIM/da when given.
double ssim(const ImageD &a, const ImageD &b, ImageD *gradA = nullptr);

struct LossResult {
    double total = 0;
    double color = 0;
    double mask = 0;
    double ssim = 0;
    ImageD dColor;
    ImageD dAlpha;
};

/// color + w.mask * mask + w.ssim * (1 - ssim), with gradients for the color and alpha images.
LossResult totalLoss(const ImageD &predColor, const ImageD &predAlpha, const ImageD &target, const ImageD &mask,
                     const LossWeights &w = {});

inline constexpr double kPsnrCap = 100.0;

/// 10 log10(1 / MSE), capped at 100 dB (also returned for identical images).
double psnr(const ImageD &pred, const ImageD &target);

} // namespace artsplat
