// Copyright Contributors to the artsplat Project
// SPDX-License-Identifier: Apache-2.0
//
#include "artsplat/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace artsplat {

bool adamStep(Eigen::Ref<Eigen::ArrayXd> params, const Eigen::Ref<const Eigen::ArrayXd> &grads, AdamState &state,
              double lr) {
    if (params.size() != grads.size()) {
        throw std::invalid_argument("adamStep: parameter and gradient sizes differ");
    }
    if (state.m.size() != params.size()) {
        state.reset(params.size());
    }
    if (!grads.allFinite()) {
        ++state.skippedSteps;
        return false;
    }
    ++state.step;
    state.m = state.beta1 * state.m + (1 - state.beta1) * grads;
    state.v = state.beta2 * state.v + (1 - state.beta2) * grads.square();
    const double c1 = 1 - std::pow(state.beta1, double(state.step));
    const double c2 = 1 - std::pow(state.beta2, double(state.step));
    params -= lr * (state.m / c1) / ((state.v / c2).sqrt() + state.epsilon);
    return true;
}

} // namespace artsplat
