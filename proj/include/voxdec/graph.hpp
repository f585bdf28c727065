#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "voxdec/gridlayout.hpp"

namespace voxdec {

// Symmetric adjacency (no self-loops stored; layers add them on the fly).
struct GraphSpec {
    enum class Kind { voxel_knn6, sensor_knn5 };
    Kind kind = Kind::voxel_knn6;
    std::vector<std::vector<int>> adjacency;

    int n_nodes() const { return static_cast<int>(adjacency.size()); }
    double average_degree() const;
    int degree(int node) const { return static_cast<int>(adjacency[static_cast<std::size_t>(node)].size()); }
};

// Lattice 6-adjacency between inside voxels.
GraphSpec build_voxel_graph(const GridLayout& grid);

// Directed 5-nearest-neighbours by Euclidean distance, then symmetrized.
GraphSpec build_sensor_graph(const Eigen::MatrixX3d& positions);

GraphSpec build_graph(GraphSpec::Kind kind, const GridLayout* grid, const Eigen::MatrixX3d* positions);

}  // namespace voxdec
