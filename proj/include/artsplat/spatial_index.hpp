// Copyright Contributors to the artsplat Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace artsplat {

using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// Static 3D k-d tree. Queries are exact and ties on distance resolve to the lowest index.
class KdTree {
  public:
    struct Neighbor {
        Eigen::Index index = -1;
        double squaredDistance = 0;
    };

    KdTree() = default;
    explicit KdTree(const PointMatrix &points);

    Eigen::Index size() const { return mPoints.rows(); }
    bool empty() const { return mPoints.rows() == 0; }

    /// Nearest point to q, skipping `exclude` (pass -1 to skip nothing).
    Neighbor nearest(const Eigen::Vector3d &q, Eigen::Index exclude = -1) const;

    /// The k nearest points ordered by (distance, index).
    std::vector<Neighbor> kNearest(const Eigen::Vector3d &q, int k, Eigen::Index exclude = -1) const;

  private:
    struct Node {
        std::int32_t begin = 0, end = 0; // range in mOrder (leaf) or split index
        std::int32_t left = -1, right = -1;
        int axis = -1;
        double split = 0;
    };

    int build(int begin, int end, int depth);
    void search(int node, const Eigen::Vector3d &q, Eigen::Index exclude, std::vector<Neighbor> &heap,
                int k) const;

    PointMatrix mPoints;
    std::vector<Eigen::Index> mOrder;
    std::vector<Node> mNodes;
};

} // namespace artsplat
