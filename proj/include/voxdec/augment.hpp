#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "voxdec/gridlayout.hpp"
#include "voxdec/rng.hpp"
#include "voxdec/sampleset.hpp"

namespace voxdec {

// Batch of source samples inscribed into the bounding box: 6 channels
// (3 vector components, then 3 positional), cells outside the brain zero.
// Column layout: ((channel * nx + x) * ny + y) * nz + z.
struct DenseBatch {
    int nx = 0, ny = 0, nz = 0;
    Eigen::MatrixXd values;  // samples x (6 * n_cells)

    int n_cells() const { return nx * ny * nz; }
    Eigen::Index col(int channel, int x, int y, int z) const {
        return (static_cast<Eigen::Index>(channel) * nx + x) * ny * nz +
               static_cast<Eigen::Index>(y) * nz + z;
    }
};

DenseBatch inscribe_to_box(const Eigen::MatrixXd& flat_rows, const GridLayout& grid);

// Vector channels gathered back to flat (voxels * 3) features.
Eigen::MatrixXd gather_from_box(const DenseBatch& batch, const GridLayout& grid);

// --- mixup ------------------------------------------------------------------

// x'_i = l_i x_i + (1 - l_i) x_{pair(i)}, same for labels.
void mixup_pairs(Eigen::MatrixXd& features, Eigen::VectorXd& labels, const std::vector<int>& pair,
                 const Eigen::VectorXd& lambda);

void mixup(Eigen::MatrixXd& features, Eigen::VectorXd& labels, double alpha, std::uint64_t seed);

// --- spatial masking --------------------------------------------------------

// Zero vector channels of one lattice plane (axis in {0,1,2} = x,y,z).
void zero_plane(DenseBatch& batch, Eigen::Index sample, int axis, int index);

// Zero vector channels of the inclusive box spanned by two lattice cells.
void zero_box(DenseBatch& batch, Eigen::Index sample, const Eigen::Vector3i& c1, const Eigen::Vector3i& c2);

// Each plane along each axis dropped independently with probability p, per
// sample. Survivors are not rescaled; positional channels untouched.
void slice_dropout(DenseBatch& batch, double p, std::uint64_t seed);

// Each sample masked with probability p_apply by the box spanned by two
// uniformly chosen cells of the full bounding lattice.
void cube_mask(DenseBatch& batch, double p_apply, std::uint64_t seed);

// --- region masking ----------------------------------------------------------

// Voxels of one atlas region plus a lattice buffer (Chebyshev radius in
// voxels). Regions with fewer than 5 voxels before buffering are rejected.
std::vector<int> region_mask_voxels(const Anatomy& anatomy, int region_id, int buffer_voxels);

// Zero the 3 vector components of the given voxels in flat features.
void apply_voxel_mask(Eigen::MatrixXd& flat_rows, const std::vector<int>& voxels);
void apply_voxel_mask(DenseBatch& batch, const GridLayout& grid, const std::vector<int>& voxels);

}  // namespace voxdec
