// Copyright Contributors to the artsplat Project
// SPDX-License-Identifier: Apache-2.0
//
#include "artsplat/rasterizer.hpp"

#include <stdexcept>

namespace artsplat {

template <typename Scalar>
RenderOutput<Scalar> rasterize(const RasterInputs<Scalar> &in, const Camera<Scalar> &cam,
                               const Vec3<Scalar> &background) {
    RenderOutput<Scalar> out;
    auto &st = out.state;
    st.splats.reserve(static_cast<std::size_t>(in.size()));
    for (Eigen::Index i = 0; i < in.size(); ++i) {
        auto s = projectGaussian<Scalar>(in.positions.row(i).transpose(), in.covariances[static_cast<std::size_t>(i)],
                                         in.opacities[i], in.colors.row(i).transpose(), cam, i);
        if (s) {
            st.splats.push_back(*s);
        }
    }
    st.bins = binTiles(st.splats, cam.width, cam.height);

    out.color = Image<Scalar>(cam.width, cam.height, 3);
    out.alpha = Image<Scalar>(cam.width, cam.height, 1);
    st.finalTransmittance = Image<Scalar>(cam.width, cam.height, 1, Scalar(1));
    st.lastEntry.setZero(out.alpha.pixelCount());

    const auto &bins = st.bins;
#pragma omp parallel for schedule(dynamic)
    for (int tile = 0; tile < bins.tileCount(); ++tile) {
        const int tx = tile % bins.tilesX, ty = tile / bins.tilesX;
        const std::uint32_t begin = bins.offsets[tile], end = bins.offsets[tile + 1];
        for (int py = ty * kTileSize; py < std::min(cam.height, (ty + 1) * kTileSize); ++py) {
            for (int px = tx * kTileSize; px < std::min(cam.width, (tx + 1) * kTileSize); ++px) {
                const Vec2<Scalar> x(Scalar(px) + Scalar(0.5), Scalar(py) + Scalar(0.5));
                Vec3<Scalar> color = Vec3<Scalar>::Zero();
                Scalar t = 1;
                std::uint32_t e = begin;
                for (; e < end; ++e) {
                    const auto &s = st.splats[bins.entries[e]];
                    const Vec2<Scalar> d = x - s.mean;
                    const Scalar power = Scalar(-0.5) * (s.conic[0] * d.x() * d.x() + 2 * s.conic[1] * d.x() * d.y() +
                                                         s.conic[2] * d.y() * d.y());
                    if (power < s.skipPower) {
                        continue;
                    }
                    const Scalar alpha = std::min(Scalar(kMaxAlpha), s.opacity * std::exp(power));
                    if (alpha < Scalar(kMinAlpha)) {
                        continue;
                    }
                    color += s.color * (alpha * t);
                    t *= Scalar(1) - alpha;
                    if (t < Scalar(kMinTransmittance)) {
                        ++e;
                        break;
                    }
                }
                const Eigen::Index pix = static_cast<Eigen::Index>(py) * cam.width + px;
                st.lastEntry[pix] = static_cast<int>(e - begin);
                st.finalTransmittance.data[pix] = t;
                for (int c = 0; c < 3; ++c) {
                    out.color(px, py, c) = color[c] + t * background[c];
                }
                out.alpha.data[pix] = Scalar(1) - t;
            }
        }
    }
    return out;
}

namespace {

/// Per tile-entry screen-space gradients, reduced per splat afterwards.
template <typename Scalar> struct EntryGrad {
    Vec2<Scalar> mean = Vec2<Scalar>::Zero();
    Vec3<Scalar> conic = Vec3<Scalar>::Zero(); // d/d(a, b, c); b counted once
    Scalar opacity = 0;
    Vec3<Scalar> color = Vec3<Scalar>::Zero();
};

} // namespace

template <typename Scalar>
RasterGradients<Scalar> rasterizeBackward(const RasterInputs<Scalar> &in, const Camera<Scalar> &cam,
                                          const Vec3<Scalar> &background, const RenderOutput<Scalar> &forward,
                                          const Image<Scalar> &dColor, const Image<Scalar> &dAlpha) {
    const auto &st = forward.state;
    const auto &bins = st.bins;
    if (dColor.width != cam.width || dColor.height != cam.height || dColor.channels != 3 ||
        dAlpha.width != cam.width || dAlpha.height != cam.height || dAlpha.channels != 1) {
        throw std::invalid_argument("rasterizeBackward: gradient images do not match the camera");
    }
    std::vector<EntryGrad<Scalar>> entryGrads(bins.entries.size());

#pragma omp parallel for schedule(dynamic)
    for (int tile = 0; tile < bins.tileCount(); ++tile) {
        const int tx = tile % bins.tilesX, ty = tile / bins.tilesX;
        const std::uint32_t begin = bins.offsets[tile];
        for (int py = ty * kTileSize; py < std::min(cam.height, (ty + 1) * kTileSize); ++py) {
            for (int px = tx * kTileSize; px < std::min(cam.width, (tx + 1) * kTileSize); ++px) {
                const Eigen::Index pix = static_cast<Eigen::Index>(py) * cam.width + px;
                const Vec3<Scalar> gC(dColor(px, py, 0), dColor(px, py, 1), dColor(px, py, 2));
                const Scalar gA = dAlpha.data[pix];
                const Scalar tFinal = st.finalTransmittance.data[pix];
                const Vec2<Scalar> x(Scalar(px) + Scalar(0.5), Scalar(py) + Scalar(0.5));
                Vec3<Scalar> behind = tFinal * background; // color composited behind the current splat
                Scalar tAfter = tFinal;
                for (int k = st.lastEntry[pix] - 1; k >= 0; --k) {
                    const std::uint32_t e = begin + static_cast<std::uint32_t>(k);
                    const auto &s = st.splats[bins.entries[e]];
                    const Vec2<Scalar> d = x - s.mean;
                    const Scalar power = Scalar(-0.5) * (s.conic[0] * d.x() * d.x() + 2 * s.conic[1] * d.x() * d.y() +
                                                         s.conic[2] * d.y() * d.y());
                    if (power < s.skipPower) {
                        continue;
                    }
                    const Scalar g = std::exp(power);
                    const Scalar raw = s.opacity * g;
                    const Scalar alpha = std::min(Scalar(kMaxAlpha), raw);
                    if (alpha < Scalar(kMinAlpha)) {
                        continue;
                    }
                    const Scalar oneMinus = Scalar(1) - alpha;
                    const Scalar tBefore = tAfter / oneMinus;
                    auto &eg = entryGrads[e];
                    eg.color += gC * (alpha * tBefore);
                    const Scalar dAlphaLocal =
                        gC.dot(s.color * tBefore - behind / oneMinus) + gA * tFinal / oneMinus;
                    behind += s.color * (alpha * tBefore);
                    tAfter = tBefore;
                    if (raw > Scalar(kMaxAlpha)) {
                        continue; // clamped: alpha is locally constant
                    }
                    eg.opacity += dAlphaLocal * g;
                    const Scalar dPower = dAlphaLocal * alpha;
                    // power = -0.5 (a dx^2 + 2 b dx dy + c dy^2), d = x - mean
                    eg.conic += Vec3<Scalar>(Scalar(-0.5) * d.x() * d.x(), -d.x() * d.y(), Scalar(-0.5) * d.y() * d.y()) *
                                dPower;
                    eg.mean += Vec2<Scalar>(s.conic[0] * d.x() + s.conic[1] * d.y(),
                                            s.conic[1] * d.x() + s.conic[2] * d.y()) *
                               dPower;
                }
            }
        }
    }

    // Tile-major reduction keeps the summation order fixed.
    const std::size_t nSplats = st.splats.size();
    std::vector<EntryGrad<Scalar>> splatGrads(nSplats);
    for (std::size_t e = 0; e < bins.entries.size(); ++e) {
        auto &sg = splatGrads[bins.entries[e]];
        const auto &eg = entryGrads[e];
        sg.mean += eg.mean;
        sg.conic += eg.conic;
        sg.opacity += eg.opacity;
        sg.color += eg.color;
    }

    RasterGradients<Scalar> grads;
    const Eigen::Index n = in.size();
    grads.positions.setZero(n, 3);
    grads.covariances.assign(static_cast<std::size_t>(n), Mat3<Scalar>::Zero());
    grads.opacities.setZero(n);
    grads.colors.setZero(n, 3);
    grads.means2d.setZero(n, 2);
    grads.visible.assign(static_cast<std::size_t>(n), false);

    for (std::size_t si = 0; si < nSplats; ++si) {
        const auto &s = st.splats[si];
        const auto &sg = splatGrads[si];
        const Eigen::Index i = s.source;
        grads.visible[static_cast<std::size_t>(i)] = true;
        grads.opacities[i] = sg.opacity;
        grads.colors.row(i) = sg.color.transpose();
        grads.means2d.row(i) = sg.mean.transpose();

        // conic -> regularized 2D covariance: dCov = -Q dQ Q with symmetric dQ.
        const Mat2<Scalar> q = (Mat2<Scalar>() << s.conic[0], s.conic[1], s.conic[1], s.conic[2]).finished();
        const Mat2<Scalar> dQ =
            (Mat2<Scalar>() << sg.conic[0], Scalar(0.5) * sg.conic[1], Scalar(0.5) * sg.conic[1], sg.conic[2])
                .finished();
        const Mat2<Scalar> dCov2 = -(q * dQ * q);

        const Vec3<Scalar> p = in.positions.row(i).transpose();
        const Vec3<Scalar> qc = cam.toCamera(p);
        const Scalar invZ = Scalar(1) / qc.z();
        const Scalar invZ2 = invZ * invZ;
        Eigen::Matrix<Scalar, 2, 3> jac;
        jac << cam.fx * invZ, 0, -cam.fx * qc.x() * invZ2, 0, cam.fy * invZ, -cam.fy * qc.y() * invZ2;
        const Mat3<Scalar> &cov = in.covariances[static_cast<std::size_t>(i)];
        const Mat3<Scalar> camCov = cam.rotation * cov * cam.rotation.transpose();

        // cov2 = J V J^T (+ const)
        const Mat3<Scalar> dCamCov = jac.transpose() * dCov2 * jac;
        const Eigen::Matrix<Scalar, 2, 3> dJac = (dCov2 + dCov2.transpose()) * jac * camCov;
        grads.covariances[static_cast<std::size_t>(i)] = cam.rotation.transpose() * dCamCov * cam.rotation;

        Vec3<Scalar> dq;
        dq.x() = sg.mean.x() * cam.fx * invZ - dJac(0, 2) * cam.fx * invZ2;
        dq.y() = sg.mean.y() * cam.fy * invZ - dJac(1, 2) * cam.fy * invZ2;
        dq.z() = -sg.mean.x() * cam.fx * qc.x() * invZ2 - sg.mean.y() * cam.fy * qc.y() * invZ2 -
                 dJac(0, 0) * cam.fx * invZ2 + dJac(0, 2) * 2 * cam.fx * qc.x() * invZ2 * invZ -
                 dJac(1, 1) * cam.fy * invZ2 + dJac(1, 2) * 2 * cam.fy * qc.y() * invZ2 * invZ;
        grads.positions.row(i) = (cam.rotation.transpose() * dq).transpose();
    }
    (void)background;
    return grads;
}

template RenderOutput<float> rasterize(const RasterInputs<float> &, const Camera<float> &, const Vec3<float> &);
template RenderOutput<double> rasterize(const RasterInputs<double> &, const Camera<double> &, const Vec3<double> &);
template RasterGradients<double> rasterizeBackward(const RasterInputs<double> &, const Camera<double> &,
                                                   const Vec3<double> &, const RenderOutput<double> &,
                                                   const Image<double> &, const Image<double> &);
template RasterGradients<float> rasterizeBackward(const RasterInputs<float> &, const Camera<float> &,
                                                  const Vec3<float> &, const RenderOutput<float> &,
                                                  const Image<float> &, const Image<float> &);

} // namespace artsplat
