// Copyright Contributors to the artsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// The 3D Gaussian primitive: covariance assembly from quaternion and log-scale
// factors, density evaluation, KL divergence and spherical-harmonic color.
//
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace artsplat {

template <typename Scalar> using Vec2 = Eigen::Matrix<Scalar, 2, 1>;
template <typename Scalar> using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar> using Vec4 = Eigen::Matrix<Scalar, 4, 1>;
template <typename Scalar> using Mat2 = Eigen::Matrix<Scalar, 2, 2>;
template <typename Scalar> using Mat3 = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar> using ShMatrix = Eigen::Matrix<Scalar, 3, Eigen::Dynamic>;

/// Smallest activated standard deviation; keeps every covariance invertible.
inline constexpr double kMinScale = 1e-6;

/// SH degree-0 basis constant.
inline constexpr double kShC0 = 0.28209479177387814;

inline constexpr int kMaxShDegree = 3;

constexpr int shBasisCount(int degree) { return (degree + 1) * (degree + 1); }

template <typename Scalar> Scalar sigmoid(Scalar x) { return Scalar(1) / (Scalar(1) + std::exp(-x)); }

template <typename Scalar> Scalar logit(Scalar p) { return std::log(p / (Scalar(1) - p)); }

/// exp(log_scale) floored at kMinScale, componentwise.
template <typename Scalar> Vec3<Scalar> activateScale(const Vec3<Scalar> &logScale) {
    return logScale.array().exp().max(Scalar(kMinScale)).matrix();
}

/// A single canonical-space Gaussian. rotation is (w, x, y, z).
template <typename Scalar> struct Gaussian3D {
    Vec3<Scalar> position = Vec3<Scalar>::Zero();
    Vec4<Scalar> rotation = Vec4<Scalar>(1, 0, 0, 0);
    Vec3<Scalar> logScale = Vec3<Scalar>::Zero();
    Scalar rawOpacity = 0;
    ShMatrix<Scalar> sh = ShMatrix<Scalar>::Zero(3, 1);

    Vec3<Scalar> scale() const { return activateScale<Scalar>(logScale); }
    Scalar opacity() const { return sigmoid(rawOpacity); }
    int shDegree() const { return static_cast<int>(std::lround(std::sqrt(double(sh.cols())))) - 1; }
};

using Gaussian3d = Gaussian3D<double>;
using Gaussian3f = Gaussian3D<float>;

template <typename Derived> bool allFinite(const Eigen::MatrixBase<Derived> &m) { return m.allFinite(); }

/// Rotation matrix of the normalized quaternion (w, x, y, z).
template <typename Scalar> Mat3<Scalar> quaternionToMatrix(const Vec4<Scalar> &q) {
    const Vec4<Scalar> u = q.normalized();
    const Scalar w = u[0], x = u[1], y = u[2], z = u[3];
    Mat3<Scalar> r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

/// Pulls dL/dR back to the raw (unnormalized) quaternion.
template <typename Scalar>
Vec4<Scalar> quaternionToMatrixBackward(const Vec4<Scalar> &q, const Mat3<Scalar> &dR) {
    const Scalar n = q.norm();
    const Vec4<Scalar> u = q / n;
    const Scalar w = u[0], x = u[1], y = u[2], z = u[3];
    const auto &g = dR;
    Vec4<Scalar> du;
    du[0] = 2 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    du[1] = 2 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) +
                 w * g(2, 1) - 2 * x * g(2, 2));
    du[2] = 2 * (-2 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) +
                 z * g(2, 1) - 2 * y * g(2, 2));
    du[3] = 2 * (-2 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2 * z * g(1, 1) + y * g(1, 2) +
                 x * g(2, 0) + y * g(2, 1));
    return (du - u * u.dot(du)) / n;
}

/// Sigma = R S S^T R^T with S = diag(max(exp(logScale), kMinScale)).
template <typename Scalar>
Mat3<Scalar> buildCovariance(const Vec4<Scalar> &rotation, const Vec3<Scalar> &logScale) {
    if (!rotation.allFinite() || !logScale.allFinite()) {
        throw std::invalid_argument("buildCovariance: non-finite rotation or log-scale");
    }
    if (rotation.norm() == Scalar(0)) {
        throw std::invalid_argument("buildCovariance: zero quaternion");
    }
    const Mat3<Scalar> r = quaternionToMatrix(rotation);
    const Vec3<Scalar> s = activateScale(logScale);
    const Mat3<Scalar> rs = r * s.asDiagonal();
    Mat3<Scalar> cov = rs * rs.transpose();
    // Exact symmetry; the product is only symmetric up to rounding.
    cov = Scalar(0.5) * (cov + cov.transpose()).eval();
    return cov;
}

template <typename Scalar> Mat3<Scalar> buildCovariance(const Gaussian3D<Scalar> &g) {
    return buildCovariance(g.rotation, g.logScale);
}

/// Gradients of Sigma = R diag(s^2) R^T with respect to the raw quaternion and log-scale.
template <typename Scalar>
void buildCovarianceBackward(const Vec4<Scalar> &rotation, const Vec3<Scalar> &logScale,
                             const Mat3<Scalar> &dCov, Vec4<Scalar> &dRotation, Vec3<Scalar> &dLogScale) {
    const Mat3<Scalar> r = quaternionToMatrix(rotation);
    const Vec3<Scalar> s = activateScale(logScale);
    const Vec3<Scalar> s2 = s.cwiseProduct(s);
    const Mat3<Scalar> sym = dCov + dCov.transpose();
    const Mat3<Scalar> dR = sym * r * s2.asDiagonal();
    dRotation = quaternionToMatrixBackward(rotation, dR);
    const Mat3<Scalar> inner = r.transpose() * dCov * r;
    for (int i = 0; i < 3; ++i) {
        const bool floored = std::exp(logScale[i]) < Scalar(kMinScale);
        dLogScale[i] = floored ? Scalar(0) : inner(i, i) * 2 * s2[i];
    }
}

/// Normalized Gaussian density at x.
template <typename Scalar>
Scalar evalDensity(const Gaussian3D<Scalar> &g, const Vec3<Scalar> &x, std::int64_t index = -1) {
    Mat3<Scalar> cov;
    try {
        cov = buildCovariance(g);
    } catch (const std::invalid_argument &) {
        cov.setConstant(std::numeric_limits<Scalar>::quiet_NaN());
    }
    const Eigen::LLT<Mat3<Scalar>> llt(cov);
    const Scalar det = cov.allFinite() ? cov.determinant() : Scalar(0);
    if (!cov.allFinite() || llt.info() != Eigen::Success || !(det > Scalar(0)) || !std::isfinite(det)) {
        throw std::domain_error("evalDensity: gaussian " + std::to_string(index) +
                                " has a singular or non-finite covariance");
    }
    const Vec3<Scalar> d = x - g.position;
    const Scalar mahalanobis = d.dot(llt.solve(d));
    const Scalar norm = std::pow(2 * std::numbers::pi_v<Scalar>, Scalar(1.5)) * std::sqrt(det);
    return std::exp(Scalar(-0.5) * mahalanobis) / norm;
}

/// True when both Gaussians carry bitwise-identical geometry; KL is exactly 0 for such pairs.
template <typename Scalar> bool sameGeometry(const Gaussian3D<Scalar> &g0, const Gaussian3D<Scalar> &g1) {
    return g0.position == g1.position && g0.rotation == g1.rotation && g0.logScale == g1.logScale;
}

/// KL(g0 || g1) computed with a general LU inverse and determinant.
template <typename Scalar> Scalar klDivergence(const Gaussian3D<Scalar> &g0, const Gaussian3D<Scalar> &g1) {
    const Mat3<Scalar> cov0 = buildCovariance(g0);
    const Mat3<Scalar> cov1 = buildCovariance(g1);
    if (sameGeometry(g0, g1)) {
        return Scalar(0);
    }
    const Eigen::FullPivLU<Mat3<Scalar>> lu1(cov1);
    if (!lu1.isInvertible()) {
        throw std::domain_error("klDivergence: singular covariance for the second gaussian");
    }
    const Mat3<Scalar> inv1 = lu1.inverse();
    const Vec3<Scalar> dp = g1.position - g0.position;
    const Scalar trace = (inv1 * cov0).trace();
    const Scalar logDetRatio = std::log(lu1.determinant() / Eigen::FullPivLU<Mat3<Scalar>>(cov0).determinant());
    return Scalar(0.5) * (trace + logDetRatio + dp.dot(inv1 * dp) - 3);
}

/// KL(g0 || g1) from the rotation/scale factors: Sigma1^-1 = R1 S1^-2 R1^T, det Sigma = det(S)^2.
template <typename Scalar>
Scalar klDivergenceFast(const Gaussian3D<Scalar> &g0, const Gaussian3D<Scalar> &g1) {
    if (!g0.position.allFinite() || !g1.position.allFinite() || !g0.logScale.allFinite() ||
        !g1.logScale.allFinite() || !g0.rotation.allFinite() || !g1.rotation.allFinite()) {
        throw std::domain_error("klDivergenceFast: non-finite gaussian parameters");
    }
    if (sameGeometry(g0, g1)) {
        return Scalar(0);
    }
    const Mat3<Scalar> r0 = quaternionToMatrix(g0.rotation);
    const Mat3<Scalar> r1 = quaternionToMatrix(g1.rotation);
    const Vec3<Scalar> s0 = activateScale(g0.logScale);
    const Vec3<Scalar> s1 = activateScale(g1.logScale);
    const Vec3<Scalar> invS1 = s1.cwiseInverse();

    // tr(Sigma1^-1 Sigma0) = || S1^-1 R1^T R0 S0 ||_F^2
    const Mat3<Scalar> m = invS1.asDiagonal() * (r1.transpose() * r0) * s0.asDiagonal();
    const Scalar trace = m.squaredNorm();
    const Vec3<Scalar> v = invS1.asDiagonal() * (r1.transpose() * (g1.position - g0.position));
    const Scalar logDetRatio = 2 * (s1.array().log().sum() - s0.array().log().sum());
    return Scalar(0.5) * (trace + logDetRatio + v.squaredNorm() - 3);
}

/// Real SH basis values up to `degree` for a unit direction, plus d(basis)/d(direction).
template <typename Scalar>
void shBasis(int degree, const Vec3<Scalar> &dir, Eigen::Matrix<Scalar, Eigen::Dynamic, 1> &basis,
             Eigen::Matrix<Scalar, Eigen::Dynamic, 3> *jacobian = nullptr) {
    constexpr Scalar c1 = Scalar(0.4886025119029199);
    constexpr Scalar c2[] = {Scalar(1.0925484305920792), Scalar(-1.0925484305920792), Scalar(0.31539156525252005),
                             Scalar(-1.0925484305920792), Scalar(0.5462742152960396)};
    constexpr Scalar c3[] = {Scalar(-0.5900435899266435), Scalar(2.890611442640554), Scalar(-0.4570457994644658),
                             Scalar(0.3731763325901154),  Scalar(-0.4570457994644658), Scalar(1.445305721320277),
                             Scalar(-0.5900435899266435)};
    const int n = shBasisCount(degree);
    basis.resize(n);
    if (jacobian) {
        jacobian->setZero(n, 3);
    }
    const Scalar x = dir[0], y = dir[1], z = dir[2];
    basis[0] = Scalar(kShC0);
    if (degree < 1) {
        return;
    }
    basis[1] = -c1 * y;
    basis[2] = c1 * z;
    basis[3] = -c1 * x;
    if (jacobian) {
        auto &j = *jacobian;
        j(1, 1) = -c1;
        j(2, 2) = c1;
        j(3, 0) = -c1;
    }
    if (degree < 2) {
        return;
    }
    const Scalar xx = x * x, yy = y * y, zz = z * z;
    basis[4] = c2[0] * x * y;
    basis[5] = c2[1] * y * z;
    basis[6] = c2[2] * (2 * zz - xx - yy);
    basis[7] = c2[3] * x * z;
    basis[8] = c2[4] * (xx - yy);
    if (jacobian) {
        auto &j = *jacobian;
        j.row(4) << c2[0] * y, c2[0] * x, 0;
        j.row(5) << 0, c2[1] * z, c2[1] * y;
        j.row(6) << -2 * c2[2] * x, -2 * c2[2] * y, 4 * c2[2] * z;
        j.row(7) << c2[3] * z, 0, c2[3] * x;
        j.row(8) << 2 * c2[4] * x, -2 * c2[4] * y, 0;
    }
    if (degree < 3) {
        return;
    }
    basis[9] = c3[0] * y * (3 * xx - yy);
    basis[10] = c3[1] * x * y * z;
    basis[11] = c3[2] * y * (4 * zz - xx - yy);
    basis[12] = c3[3] * z * (2 * zz - 3 * xx - 3 * yy);
    basis[13] = c3[4] * x * (4 * zz - xx - yy);
    basis[14] = c3[5] * z * (xx - yy);
    basis[15] = c3[6] * x * (xx - 3 * yy);
    if (jacobian) {
        auto &j = *jacobian;
        j.row(9) << c3[0] * 6 * x * y, c3[0] * (3 * xx - 3 * yy), 0;
        j.row(10) << c3[1] * y * z, c3[1] * x * z, c3[1] * x * y;
        j.row(11) << c3[2] * (-2 * x * y), c3[2] * (4 * zz - xx - 3 * yy), c3[2] * 8 * y * z;
        j.row(12) << c3[3] * (-6 * x * z), c3[3] * (-6 * y * z), c3[3] * (6 * zz - 3 * xx - 3 * yy);
        j.row(13) << c3[4] * (4 * zz - 3 * xx - yy), c3[4] * (-2 * x * y), c3[4] * 8 * x * z;
        j.row(14) << c3[5] * 2 * x * z, c3[5] * (-2 * y * z), c3[5] * (xx - yy);
        j.row(15) << c3[6] * (3 * xx - 3 * yy), c3[6] * (-6 * x * y), 0;
    }
}

/// RGB = 0.5 + sum_k basis_k(dir) * sh_k using the first (degree+1)^2 coefficient columns.
/// Not clamped; clamping happens when an image is written.
template <typename Scalar>
Vec3<Scalar> evalShColor(const ShMatrix<Scalar> &sh, const Vec3<Scalar> &viewDirection, int degree = -1) {
    const int available = static_cast<int>(std::lround(std::sqrt(double(sh.cols())))) - 1;
    const int d = degree < 0 ? available : std::min(degree, available);
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> basis;
    shBasis(d, viewDirection, basis);
    return (sh.leftCols(basis.size()) * basis).array() + Scalar(0.5);
}

/// Backward of evalShColor. Returns dL/dsh (same shape as sh) and dL/d(unit direction).
template <typename Scalar>
void evalShColorBackward(const ShMatrix<Scalar> &sh, const Vec3<Scalar> &viewDirection, int degree,
                         const Vec3<Scalar> &dColor, ShMatrix<Scalar> &dSh, Vec3<Scalar> &dDirection) {
    const int available = static_cast<int>(std::lround(std::sqrt(double(sh.cols())))) - 1;
    const int d = degree < 0 ? available : std::min(degree, available);
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> basis;
    Eigen::Matrix<Scalar, Eigen::Dynamic, 3> jac;
    shBasis(d, viewDirection, basis, &jac);
    const int n = static_cast<int>(basis.size());
    dSh.setZero(3, sh.cols());
    dSh.leftCols(n) = dColor * basis.transpose();
    // d(color)/d(dir) = sh[:, :n] * jac
    dDirection = (dColor.transpose() * sh.leftCols(n) * jac).transpose();
}

/// Structure-of-arrays collection of canonical Gaussians plus densification statistics.
template <typename Scalar> struct GaussianCloud {
    using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    int shDegree = 0; // storage degree; coefficient count per channel is (shDegree+1)^2
    RowMat positions;  // U x 3
    RowMat rotations;  // U x 4 (w, x, y, z)
    RowMat logScales;  // U x 3
    Vector rawOpacities;
    RowMat sh; // U x 3B, coefficient k of channel c at column 3k + c

    // Densification statistics.
    Vector gradAccum;
    Eigen::VectorXi gradCount;
    RowMat posGradAccum; // U x 3, canonical position gradient sum

    GaussianCloud() { resize(0, 0); }
    explicit GaussianCloud(int shDegree_) { resize(0, shDegree_); }

    Eigen::Index size() const { return positions.rows(); }
    int shCoeffCount() const { return shBasisCount(shDegree); }

    void resize(Eigen::Index n, int degree) {
        shDegree = degree;
        positions.setZero(n, 3);
        rotations.setZero(n, 4);
        rotations.col(0).setOnes();
        logScales.setZero(n, 3);
        rawOpacities.setZero(n);
        sh.setZero(n, 3 * shBasisCount(degree));
        resetStats();
    }

    void resetStats() {
        gradAccum.setZero(size());
        gradCount.setZero(size());
        posGradAccum.setZero(size(), 3);
    }

    Gaussian3D<Scalar> gaussian(Eigen::Index i) const {
        Gaussian3D<Scalar> g;
        g.position = positions.row(i).transpose();
        g.rotation = rotations.row(i).transpose();
        g.logScale = logScales.row(i).transpose();
        g.rawOpacity = rawOpacities[i];
        const int b = shCoeffCount();
        g.sh.resize(3, b);
        for (int k = 0; k < b; ++k) {
            for (int c = 0; c < 3; ++c) {
                g.sh(c, k) = sh(i, 3 * k + c);
            }
        }
        return g;
    }

    void set(Eigen::Index i, const Gaussian3D<Scalar> &g) {
        positions.row(i) = g.position.transpose();
        rotations.row(i) = g.rotation.transpose();
        logScales.row(i) = g.logScale.transpose();
        rawOpacities[i] = g.rawOpacity;
        const int b = shCoeffCount();
        sh.row(i).setZero();
        for (int k = 0; k < std::min<int>(b, static_cast<int>(g.sh.cols())); ++k) {
            for (int c = 0; c < 3; ++c) {
                sh(i, 3 * k + c) = g.sh(c, k);
            }
        }
    }

    /// Appends g with zeroed statistics.
    void append(const Gaussian3D<Scalar> &g) {
        const Eigen::Index n = size();
        positions.conservativeResize(n + 1, Eigen::NoChange);
        rotations.conservativeResize(n + 1, Eigen::NoChange);
        logScales.conservativeResize(n + 1, Eigen::NoChange);
        rawOpacities.conservativeResize(n + 1);
        sh.conservativeResize(n + 1, Eigen::NoChange);
        gradAccum.conservativeResize(n + 1);
        gradCount.conservativeResize(n + 1);
        posGradAccum.conservativeResize(n + 1, Eigen::NoChange);
        gradAccum[n] = 0;
        gradCount[n] = 0;
        posGradAccum.row(n).setZero();
        set(n, g);
    }

    /// Rows gathered by index, statistics included.
    GaussianCloud select(const std::vector<Eigen::Index> &rows) const {
        GaussianCloud out;
        out.shDegree = shDegree;
        const auto n = static_cast<Eigen::Index>(rows.size());
        out.positions.resize(n, 3);
        out.rotations.resize(n, 4);
        out.logScales.resize(n, 3);
        out.rawOpacities.resize(n);
        out.sh.resize(n, sh.cols());
        out.gradAccum.resize(n);
        out.gradCount.resize(n);
        out.posGradAccum.resize(n, 3);
        for (Eigen::Index j = 0; j < n; ++j) {
            const Eigen::Index i = rows[static_cast<std::size_t>(j)];
            out.positions.row(j) = positions.row(i);
            out.rotations.row(j) = rotations.row(i);
            out.logScales.row(j) = logScales.row(i);
            out.rawOpacities[j] = rawOpacities[i];
            out.sh.row(j) = sh.row(i);
            out.gradAccum[j] = gradAccum[i];
            out.gradCount[j] = gradCount[i];
            out.posGradAccum.row(j) = posGradAccum.row(i);
        }
        return out;
    }

    void normalizeRotations() {
        for (Eigen::Index i = 0; i < size(); ++i) {
            rotations.row(i).normalize();
        }
    }

    bool parametersFinite() const {
        return positions.allFinite() && rotations.allFinite() && logScales.allFinite() && rawOpacities.allFinite() &&
               sh.allFinite();
    }

    /// Throws std::runtime_error when a Gaussian3D invariant is violated.
    void checkInvariants() const {
        if (rotations.rows() != size() || logScales.rows() != size() || rawOpacities.size() != size() ||
            sh.rows() != size() || gradAccum.size() != size() || gradCount.size() != size() ||
            posGradAccum.rows() != size()) {
            throw std::runtime_error("GaussianCloud: array lengths disagree");
        }
        if (!parametersFinite()) {
            throw std::runtime_error("GaussianCloud: non-finite parameters");
        }
        for (Eigen::Index i = 0; i < size(); ++i) {
            if (std::abs(rotations.row(i).norm() - Scalar(1)) > Scalar(1e-6)) {
                throw std::runtime_error("GaussianCloud: quaternion " + std::to_string(i) + " is not unit length");
            }
        }
    }
};

using GaussianCloudd = GaussianCloud<double>;

} // namespace artsplat
