// Copyright Contributors to the artsplat Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <Eigen/Core>

#include <cstdint>

namespace artsplat {

/// Moments for one parameter group, stored flat.
struct AdamState {
    Eigen::ArrayXd m;
    Eigen::ArrayXd v;
    std::int64_t step = 0;
    std::int64_t skippedSteps = 0; // non-finite gradients

    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-15;

    void reset(Eigen::Index n) {
        m.setZero(n);
        v.setZero(n);
        step = 0;
    }
};

/// One bias-corrected Adam update of a flat parameter block. Returns false (and leaves both
/// parameters and state untouched) when the gradient holds a non-finite value.
bool adamStep(Eigen::Ref<Eigen::ArrayXd> params, const Eigen::Ref<const Eigen::ArrayXd> &grads, AdamState &state,
              double lr);

/// Flat view over a dense Eigen object's storage.
template <typename Derived> Eigen::Map<Eigen::ArrayXd> flat(Eigen::PlainObjectBase<Derived> &m) {
    return {m.data(), m.size()};
}
template <typename Derived> Eigen::Map<const Eigen::ArrayXd> flat(const Eigen::PlainObjectBase<Derived> &m) {
    return {m.data(), m.size()};
}

} // namespace artsplat
