#pragma once

#include <Eigen/Dense>
#include <vector>

#include "voxdec/sim.hpp"

namespace voxdec {

// Dense lattice view of an anatomy: the bounding box of the inside voxels,
// index maps in both directions, and positional channel values normalized to
// [-1, 1] per axis across the brain-bounding voxels.
struct GridLayout {
    Eigen::Vector3i dims = Eigen::Vector3i::Zero();
    Eigen::Vector3i cell_min = Eigen::Vector3i::Zero();  // anatomy lattice coord of cell (0,0,0)
    std::vector<int> cell_of_voxel;
    std::vector<int> voxel_of_cell;       // -1 outside the brain
    Eigen::MatrixX3d positions_norm;      // per voxel

    int n_cells() const { return dims.x() * dims.y() * dims.z(); }
    int n_voxels() const { return static_cast<int>(cell_of_voxel.size()); }
    int flat(int x, int y, int z) const { return (x * dims.y() + y) * dims.z() + z; }
};

GridLayout make_grid_layout(const Anatomy& anatomy);

}  // namespace voxdec
