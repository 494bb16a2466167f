// Copyright Contributors to the artsplat Project
// SPDX-License-Identifier: Apache-2.0
//
#include "artsplat/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace artsplat {

namespace {

constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, kSsimWindow> gaussianWindow() {
    std::array<double, kSsimWindow> w{};
    double sum = 0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = i - kSsimWindow / 2;
        w[i] = std::exp(-d * d / (2 * kSsimSigma * kSsimSigma));
        sum += w[i];
    }
    for (double &v : w) {
        v /= sum;
    }
    return w;
}

/// Separable "same" Gaussian filter with zero padding on a single-channel plane.
Eigen::ArrayXXd blur(const Eigen::ArrayXXd &in) {
    static const auto w = gaussianWindow();
    constexpr int r = kSsimWindow / 2;
    const Eigen::Index rows = in.rows(), cols = in.cols();
    Eigen::ArrayXXd tmp = Eigen::ArrayXXd::Zero(rows, cols);
    for (int k = -r; k <= r; ++k) {
        const Eigen::Index x0 = std::max<Eigen::Index>(0, -k), x1 = std::min<Eigen::Index>(cols, cols - k);
        if (x1 > x0) {
            tmp.middleCols(x0, x1 - x0) += w[k + r] * in.middleCols(x0 + k, x1 - x0);
        }
    }
    Eigen::ArrayXXd out = Eigen::ArrayXXd::Zero(rows, cols);
    for (int k = -r; k <= r; ++k) {
        const Eigen::Index y0 = std::max<Eigen::Index>(0, -k), y1 = std::min<Eigen::Index>(rows, rows - k);
        if (y1 > y0) {
            out.middleRows(y0, y1 - y0) += w[k + r] * tmp.middleRows(y0 + k, y1 - y0);
        }
    }
    return out;
}

Eigen::ArrayXXd plane(const ImageD &img, int c) {
    Eigen::ArrayXXd p(img.height, img.width);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            p(y, x) = img(x, y, c);
        }
    }
    return p;
}

double meanSquaredError(const ImageD &pred, const ImageD &target, ImageD *grad, const char *what) {
    requireSameShape(pred, target, what);
    if (pred.data.size() == 0) {
        throw std::invalid_argument(std::string(what) + ": empty image");
    }
    const Eigen::ArrayXd diff = pred.data - target.data;
    const double n = static_cast<double>(diff.size());
    if (grad) {
        *grad = ImageD(pred.width, pred.height, pred.channels);
        grad->data = 2.0 * diff / n;
    }
    return diff.square().sum() / n;
}

} // namespace

double colorLoss(const ImageD &pred, const ImageD &target, ImageD *grad) {
    return meanSquaredError(pred, target, grad, "colorLoss");
}

double maskLoss(const ImageD &alpha, const ImageD &mask, ImageD *grad) {
    return meanSquaredError(alpha, mask, grad, "maskLoss");
}

double ssim(const ImageD &a, const ImageD &b, ImageD *gradA) {
    requireSameShape(a, b, "ssim");
    if (a.width < kSsimWindow || a.height < kSsimWindow) {
        throw std::invalid_argument("ssim: image smaller than the 11x11 window");
    }
    if (gradA) {
        *gradA = ImageD(a.width, a.height, a.channels);
    }
    const double scale = 1.0 / (static_cast<double>(a.pixelCount()) * a.channels);
    double total = 0;
    for (int c = 0; c < a.channels; ++c) {
        const Eigen::ArrayXXd x = plane(a, c), y = plane(b, c);
        const Eigen::ArrayXXd mx = blur(x), my = blur(y);
        const Eigen::ArrayXXd sxx = blur(x * x) - mx * mx;
        const Eigen::ArrayXXd syy = blur(y * y) - my * my;
        const Eigen::ArrayXXd sxy = blur(x * y) - mx * my;
        const Eigen::ArrayXXd a1 = 2 * mx * my + kC1, a2 = 2 * sxy + kC2;
        const Eigen::ArrayXXd b1 = mx * mx + my * my + kC1, b2 = sxx + syy + kC2;
        const Eigen::ArrayXXd s = (a1 * a2) / (b1 * b2);
        total += s.sum() * scale;
        if (!gradA) {
            continue;
        }
        const Eigen::ArrayXXd dMu = s * (2 * my / a1 - 2 * mx / b1);
        const Eigen::ArrayXXd dVar = -s / b2;
        const Eigen::ArrayXXd dCov = s * 2 / a2;
        // Back through sigma_x^2 = E[x^2] - mu_x^2 and sigma_xy = E[xy] - mu_x mu_y.
        const Eigen::ArrayXXd dMx = (dMu - 2 * mx * dVar - my * dCov) * scale;
        const Eigen::ArrayXXd dMxx = dVar * scale;
        const Eigen::ArrayXXd dMxy = dCov * scale;
        const Eigen::ArrayXXd g = blur(dMx) + 2 * x * blur(dMxx) + y * blur(dMxy);
        for (int yy = 0; yy < a.height; ++yy) {
            for (int xx = 0; xx < a.width; ++xx) {
                (*gradA)(xx, yy, c) = g(yy, xx);
            }
        }
    }
    return total;
}

LossResult totalLoss(const ImageD &predColor, const ImageD &predAlpha, const ImageD &target, const ImageD &mask,
                     const LossWeights &w) {
    LossResult r;
    ImageD dSsim;
    r.color = colorLoss(predColor, target, &r.dColor);
    r.mask = maskLoss(predAlpha, mask, &r.dAlpha);
    r.dAlpha.data *= w.mask;
    if (w.ssim != 0.0) {
        r.ssim = ssim(predColor, target, &dSsim);
        r.dColor.data -= w.ssim * dSsim.data;
    } else {
        r.ssim = 1.0;
    }
    r.total = r.color + w.mask * r.mask + w.ssim * (1.0 - r.ssim);
    return r;
}

double psnr(const ImageD &pred, const ImageD &target) {
    requireSameShape(pred, target, "psnr");
    const double mse = (pred.data - target.data).square().mean();
    if (mse <= 0.0) {
        return kPsnrCap;
    }
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

} // namespace artsplat
