// Copyright Contributors to the artsplat Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>

namespace artsplat {

/// Interleaved row-major image: value (x, y, c) at ((y * width) + x) * channels + c.
template <typename Scalar> struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    Eigen::Array<Scalar, Eigen::Dynamic, 1> data;

    Image() = default;
    Image(int w, int h, int c, Scalar fill = Scalar(0)) : width(w), height(h), channels(c) {
        data.setConstant(static_cast<Eigen::Index>(w) * h * c, fill);
    }

    Scalar &operator()(int x, int y, int c = 0) { return data[index(x, y, c)]; }
    Scalar operator()(int x, int y, int c = 0) const { return data[index(x, y, c)]; }

    Eigen::Index index(int x, int y, int c) const {
        return (static_cast<Eigen::Index>(y) * width + x) * channels + c;
    }
    Eigen::Index pixelCount() const { return static_cast<Eigen::Index>(width) * height; }

    bool sameShape(const Image &o) const { return width == o.width && height == o.height && channels == o.channels; }

    /// One channel extracted as its own single-channel image.
    Image channel(int c) const {
        Image out(width, height, 1);
        for (Eigen::Index i = 0; i < pixelCount(); ++i) {
            out.data[i] = data[i * channels + c];
        }
        return out;
    }

    template <typename Other> Image<Other> cast() const {
        Image<Other> out;
        out.width = width;
        out.height = height;
        out.channels = channels;
        out.data = data.template cast<Other>();
        return out;
    }
};

using ImageD = Image<double>;
using ImageF = Image<float>;

template <typename Scalar> void requireSameShape(const Image<Scalar> &a, const Image<Scalar> &b, const char *what) {
    if (!a.sameShape(b)) {
        throw std::invalid_argument(std::string(what) + ": image shapes differ");
    }
}

} // namespace artsplat
