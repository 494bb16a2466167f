// Copyright Contributors to the artsplat Project
// SPDX-License-Identifier: Apache-2.0
//
#include "artsplat/spatial_index.hpp"

#include <algorithm>
#include <numeric>

namespace artsplat {

namespace {

constexpr int kLeafSize = 8;

bool closer(const KdTree::Neighbor &a, const KdTree::Neighbor &b) {
    return a.squaredDistance < b.squaredDistance ||
           (a.squaredDistance == b.squaredDistance && a.index < b.index);
}

} // namespace

KdTree::KdTree(const PointMatrix &points) : mPoints(points) {
    mOrder.resize(static_cast<std::size_t>(points.rows()));
    std::iota(mOrder.begin(), mOrder.end(), Eigen::Index{0});
    if (!mOrder.empty()) {
        mNodes.reserve(2 * mOrder.size() / kLeafSize + 2);
        build(0, static_cast<int>(mOrder.size()), 0);
    }
}

int KdTree::build(int begin, int end, int depth) {
    const int id = static_cast<int>(mNodes.size());
    mNodes.push_back({});
    if (end - begin <= kLeafSize) {
        mNodes[id].begin = begin;
        mNodes[id].end = end;
        return id;
    }
    // Split along the widest extent.
    Eigen::Vector3d lo = Eigen::Vector3d::Constant(1e300), hi = Eigen::Vector3d::Constant(-1e300);
    for (int i = begin; i < end; ++i) {
        const Eigen::Vector3d p = mPoints.row(mOrder[i]).transpose();
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    (void)depth;
    const int mid = (begin + end) / 2;
    std::nth_element(mOrder.begin() + begin, mOrder.begin() + mid, mOrder.begin() + end,
                     [&](Eigen::Index a, Eigen::Index b) {
                         const double va = mPoints(a, axis), vb = mPoints(b, axis);
                         return va < vb || (va == vb && a < b);
                     });
    const double split = mPoints(mOrder[mid], axis);
    const int left = build(begin, mid, depth + 1);
    const int right = build(mid, end, depth + 1);
    mNodes[id].axis = axis;
    mNodes[id].split = split;
    mNodes[id].left = left;
    mNodes[id].right = right;
    return id;
}

void KdTree::search(int node, const Eigen::Vector3d &q, Eigen::Index exclude, std::vector<Neighbor> &heap,
                    int k) const {
    const Node &n = mNodes[node];
    const auto full = [&] { return static_cast<int>(heap.size()) == k; };
    if (n.axis < 0) {
        for (int i = n.begin; i < n.end; ++i) {
            const Eigen::Index idx = mOrder[i];
            if (idx == exclude) {
                continue;
            }
            const Neighbor cand{idx, (mPoints.row(idx).transpose() - q).squaredNorm()};
            if (!full()) {
                heap.push_back(cand);
                std::push_heap(heap.begin(), heap.end(), closer);
            } else if (closer(cand, heap.front())) {
                std::pop_heap(heap.begin(), heap.end(), closer);
                heap.back() = cand;
                std::push_heap(heap.begin(), heap.end(), closer);
            }
        }
        return;
    }
    const double delta = q[n.axis] - n.split;
    const int nearChild = delta < 0 ? n.left : n.right;
    const int farChild = delta < 0 ? n.right : n.left;
    search(nearChild, q, exclude, heap, k);
    // Points equal to the split value may sit on either side; <= keeps ties reachable.
    if (!full() || delta * delta <= heap.front().squaredDistance) {
        search(farChild, q, exclude, heap, k);
    }
}

KdTree::Neighbor KdTree::nearest(const Eigen::Vector3d &q, Eigen::Index exclude) const {
    const auto result = kNearest(q, 1, exclude);
    return result.empty() ? Neighbor{} : result.front();
}

std::vector<KdTree::Neighbor> KdTree::kNearest(const Eigen::Vector3d &q, int k, Eigen::Index exclude) const {
    std::vector<Neighbor> heap;
    if (mNodes.empty() || k <= 0) {
        return heap;
    }
    heap.reserve(static_cast<std::size_t>(k));
    search(0, q, exclude, heap, k);
    std::sort(heap.begin(), heap.end(), closer);
    return heap;
}

} // namespace artsplat
