// Copyright Contributors to the artsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Pinhole projection of posed 3D Gaussians to screen-space splats, tile binning,
// front-to-back alpha compositing and its exact reverse pass.
//
#pragma once

#include "artsplat/gaussian.hpp"
#include "artsplat/image.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

namespace artsplat {

inline constexpr int kTileSize = 16;
inline constexpr double kCov2dRegularizer = 0.3;
inline constexpr double kMaxAlpha = 0.99;
inline constexpr double kMinAlpha = 1.0 / 255.0;
inline constexpr double kMinTransmittance = 1e-4;

/// Pinhole camera; world_to_camera maps x to rotation * x + translation.
template <typename Scalar> struct Camera {
    Scalar fx = 1, fy = 1, cx = 0, cy = 0;
    int width = 1, height = 1;
    Mat3<Scalar> rotation = Mat3<Scalar>::Identity();
    Vec3<Scalar> translation = Vec3<Scalar>::Zero();
    Scalar nearClip = Scalar(0.01);

    Vec3<Scalar> toCamera(const Vec3<Scalar> &p) const { return rotation * p + translation; }
    Vec3<Scalar> center() const { return -(rotation.transpose() * translation); }

    template <typename Other> Camera<Other> cast() const {
        Camera<Other> c;
        c.fx = Other(fx);
        c.fy = Other(fy);
        c.cx = Other(cx);
        c.cy = Other(cy);
        c.width = width;
        c.height = height;
        c.rotation = rotation.template cast<Other>();
        c.translation = translation.template cast<Other>();
        c.nearClip = Other(nearClip);
        return c;
    }

    /// Camera at `eye` looking at `target` with +y of the image pointing along -up.
    static Camera lookAt(const Vec3<Scalar> &eye, const Vec3<Scalar> &target, const Vec3<Scalar> &up, Scalar focal,
                         int w, int h) {
        Camera c;
        const Vec3<Scalar> forward = (target - eye).normalized();
        const Vec3<Scalar> right = forward.cross(up).normalized();
        const Vec3<Scalar> down = forward.cross(right);
        c.rotation.row(0) = right.transpose();
        c.rotation.row(1) = down.transpose();
        c.rotation.row(2) = forward.transpose();
        c.translation = -(c.rotation * eye);
        c.fx = c.fy = focal;
        c.cx = Scalar(w) / 2;
        c.cy = Scalar(h) / 2;
        c.width = w;
        c.height = h;
        return c;
    }
};

using Camerad = Camera<double>;
using Cameraf = Camera<float>;

/// Posed Gaussians ready for rasterization; colors are already evaluated RGB.
template <typename Scalar> struct RasterInputs {
    Eigen::Matrix<Scalar, Eigen::Dynamic, 3, Eigen::RowMajor> positions;
    std::vector<Mat3<Scalar>> covariances;
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> opacities; // activated, in (0, 1)
    Eigen::Matrix<Scalar, Eigen::Dynamic, 3, Eigen::RowMajor> colors;

    Eigen::Index size() const { return positions.rows(); }
    void resize(Eigen::Index n) {
        positions.resize(n, 3);
        covariances.resize(static_cast<std::size_t>(n));
        opacities.resize(n);
        colors.resize(n, 3);
    }
};

template <typename Scalar> struct Splat2D {
    Vec2<Scalar> mean;
    Mat2<Scalar> cov;   // regularized screen covariance, pixels^2
    Vec3<Scalar> conic; // inverse of cov as (a, b, c) for [[a, b], [b, c]]
    Scalar depth = 0;
    Scalar opacity = 0;
    Vec3<Scalar> color;
    Vec2<Scalar> extent; // half-widths of the axis-aligned box holding every pixel the splat can touch
    Eigen::Index source = -1;
    /// Exponents below this give alpha < 1/255 with margin; lets the raster loops skip exp().
    Scalar skipPower = -std::numeric_limits<Scalar>::infinity();
};

/// Opacity-aware cutoff: the splat's alpha drops below 1/255 outside Mahalanobis radius
/// sqrt(2 ln(255 o)). Zero for splats that can never reach the threshold.
template <typename Scalar> Scalar splatCutoffRadius(Scalar opacity) {
    const Scalar arg = Scalar(255) * opacity;
    return arg > Scalar(1) ? std::sqrt(2 * std::log(arg)) : Scalar(0);
}

/// EWA projection. Returns nullopt when the Gaussian is culled (behind the near plane, never
/// visible, or its footprint misses the image).
template <typename Scalar>
std::optional<Splat2D<Scalar>> projectGaussian(const Vec3<Scalar> &position, const Mat3<Scalar> &covariance,
                                               Scalar opacity, const Vec3<Scalar> &color, const Camera<Scalar> &cam,
                                               Eigen::Index source = -1) {
    const Vec3<Scalar> q = cam.toCamera(position);
    if (!(q.z() > cam.nearClip)) {
        return std::nullopt;
    }
    const Scalar invZ = Scalar(1) / q.z();
    Eigen::Matrix<Scalar, 2, 3> jac;
    jac << cam.fx * invZ, 0, -cam.fx * q.x() * invZ * invZ, 0, cam.fy * invZ, -cam.fy * q.y() * invZ * invZ;
    const Mat3<Scalar> camCov = cam.rotation * covariance * cam.rotation.transpose();
    Mat2<Scalar> cov2 = jac * camCov * jac.transpose();
    cov2(0, 1) = cov2(1, 0) = Scalar(0.5) * (cov2(0, 1) + cov2(1, 0));
    cov2.diagonal().array() += Scalar(kCov2dRegularizer);
    const Scalar det = cov2.determinant();
    if (!(det > Scalar(0)) || !std::isfinite(det)) {
        return std::nullopt;
    }
    const Scalar radius = splatCutoffRadius(opacity);
    if (radius <= Scalar(0)) {
        return std::nullopt;
    }
    Splat2D<Scalar> s;
    s.mean = Vec2<Scalar>(cam.fx * q.x() * invZ + cam.cx, cam.fy * q.y() * invZ + cam.cy);
    s.cov = cov2;
    s.conic = Vec3<Scalar>(cov2(1, 1) / det, -cov2(0, 1) / det, cov2(0, 0) / det);
    s.depth = q.z();
    s.opacity = opacity;
    s.color = color;
    s.extent = Vec2<Scalar>(radius * std::sqrt(cov2(0, 0)), radius * std::sqrt(cov2(1, 1)));
    s.source = source;
    s.skipPower = std::log(Scalar(kMinAlpha) / opacity) - Scalar(1e-3);
    if (s.mean.x() + s.extent.x() < 0 || s.mean.x() - s.extent.x() > Scalar(cam.width) ||
        s.mean.y() + s.extent.y() < 0 || s.mean.y() - s.extent.y() > Scalar(cam.height)) {
        return std::nullopt;
    }
    return s;
}

/// Alpha of a splat at pixel center x, before the 1/255 skip test.
template <typename Scalar> Scalar splatAlpha(const Splat2D<Scalar> &s, const Vec2<Scalar> &x) {
    const Vec2<Scalar> d = x - s.mean;
    const Scalar power = Scalar(-0.5) * (s.conic[0] * d.x() * d.x() + 2 * s.conic[1] * d.x() * d.y() +
                                         s.conic[2] * d.y() * d.y());
    return std::min(Scalar(kMaxAlpha), s.opacity * std::exp(power));
}

/// Front-to-back compositing of pre-sorted splats at one pixel center. Returns RGB and alpha.
template <typename Scalar>
std::pair<Vec3<Scalar>, Scalar> compositePixel(const std::vector<Splat2D<Scalar>> &ordered, const Vec2<Scalar> &x,
                                               const Vec3<Scalar> &background) {
    Vec3<Scalar> color = Vec3<Scalar>::Zero();
    Scalar t = 1;
    for (const auto &s : ordered) {
        const Scalar alpha = splatAlpha(s, x);
        if (alpha < Scalar(kMinAlpha)) {
            continue;
        }
        color += s.color * (alpha * t);
        t *= Scalar(1) - alpha;
        if (t < Scalar(kMinTransmittance)) {
            break;
        }
    }
    return {color + t * background, Scalar(1) - t};
}

/// Per-tile splat lists, each sorted by (depth, source index).
struct TileBins {
    int tilesX = 0, tilesY = 0;
    std::vector<std::uint32_t> entries; // splat indices, grouped by tile
    std::vector<std::uint32_t> offsets; // tile t owns entries[offsets[t], offsets[t + 1])

    int tileCount() const { return tilesX * tilesY; }
};

template <typename Scalar>
TileBins binTiles(const std::vector<Splat2D<Scalar>> &splats, int width, int height, int tileSize = kTileSize) {
    TileBins bins;
    bins.tilesX = (width + tileSize - 1) / tileSize;
    bins.tilesY = (height + tileSize - 1) / tileSize;
    struct Key {
        std::uint32_t tile;
        Scalar depth;
        Eigen::Index source;
        std::uint32_t splat;
    };
    std::vector<Key> keys;
    keys.reserve(splats.size() * 2);
    for (std::size_t i = 0; i < splats.size(); ++i) {
        const auto &s = splats[i];
        const auto tileOf = [&](Scalar v, int limit) {
            return std::clamp(static_cast<int>(std::floor(v / Scalar(tileSize))), 0, limit - 1);
        };
        const int x0 = tileOf(s.mean.x() - s.extent.x(), bins.tilesX);
        const int x1 = tileOf(s.mean.x() + s.extent.x(), bins.tilesX);
        const int y0 = tileOf(s.mean.y() - s.extent.y(), bins.tilesY);
        const int y1 = tileOf(s.mean.y() + s.extent.y(), bins.tilesY);
        for (int ty = y0; ty <= y1; ++ty) {
            for (int tx = x0; tx <= x1; ++tx) {
                keys.push_back({static_cast<std::uint32_t>(ty * bins.tilesX + tx), s.depth, s.source,
                                static_cast<std::uint32_t>(i)});
            }
        }
    }
    std::sort(keys.begin(), keys.end(), [](const Key &a, const Key &b) {
        if (a.tile != b.tile) {
            return a.tile < b.tile;
        }
        if (a.depth != b.depth) {
            return a.depth < b.depth;
        }
        return a.source < b.source;
    });
    bins.entries.resize(keys.size());
    bins.offsets.assign(static_cast<std::size_t>(bins.tileCount()) + 1, 0);
    for (std::size_t i = 0; i < keys.size(); ++i) {
        bins.entries[i] = keys[i].splat;
        ++bins.offsets[keys[i].tile + 1];
    }
    for (int t = 0; t < bins.tileCount(); ++t) {
        bins.offsets[t + 1] += bins.offsets[t];
    }
    return bins;
}

/// Forward intermediates kept for the reverse pass.
template <typename Scalar> struct RasterState {
    std::vector<Splat2D<Scalar>> splats;
    TileBins bins;
    Image<Scalar> finalTransmittance; // 1 channel
    Eigen::VectorXi lastEntry;         // per pixel: entries processed in its tile list
};

template <typename Scalar> struct RenderOutput {
    Image<Scalar> color; // 3 channels
    Image<Scalar> alpha; // 1 channel
    RasterState<Scalar> state;
};

/// Gradients with respect to the rasterizer inputs.
template <typename Scalar> struct RasterGradients {
    Eigen::Matrix<Scalar, Eigen::Dynamic, 3, Eigen::RowMajor> positions;
    std::vector<Mat3<Scalar>> covariances;
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> opacities;
    Eigen::Matrix<Scalar, Eigen::Dynamic, 3, Eigen::RowMajor> colors;
    Eigen::Matrix<Scalar, Eigen::Dynamic, 2, Eigen::RowMajor> means2d; // pixel units
    std::vector<bool> visible;
};

template <typename Scalar>
RenderOutput<Scalar> rasterize(const RasterInputs<Scalar> &in, const Camera<Scalar> &cam,
                               const Vec3<Scalar> &background);

template <typename Scalar>
RasterGradients<Scalar> rasterizeBackward(const RasterInputs<Scalar> &in, const Camera<Scalar> &cam,
                                          const Vec3<Scalar> &background, const RenderOutput<Scalar> &forward,
                                          const Image<Scalar> &dColor, const Image<Scalar> &dAlpha);

extern template RenderOutput<float> rasterize(const RasterInputs<float> &, const Camera<float> &, const Vec3<float> &);
extern template RenderOutput<double> rasterize(const RasterInputs<double> &, const Camera<double> &,
                                               const Vec3<double> &);
extern template RasterGradients<double> rasterizeBackward(const RasterInputs<double> &, const Camera<double> &,
                                                          const Vec3<double> &, const RenderOutput<double> &,
                                                          const Image<double> &, const Image<double> &);
extern template RasterGradients<float> rasterizeBackward(const RasterInputs<float> &, const Camera<float> &,
                                                         const Vec3<float> &, const RenderOutput<float> &,
                                                         const Image<float> &, const Image<float> &);

} // namespace artsplat
