#pragma once

#include <Eigen/Dense>
#include <vector>

#include "voxdec/inverse.hpp"
#include "voxdec/sim.hpp"

namespace voxdec {

// Per-voxel PCA over the 3 vector components, fit on training data only.
struct VoxelPcaBasis {
    int n_components = 3;
    std::vector<Eigen::Matrix3d> basis;  // rows = principal axes (descending variance)
    std::vector<Eigen::Vector3d> mean;
};

VoxelPcaBasis fit_voxel_pca(const SourceEstimate& train_vec, int n_components);

// (n_voxels * n_components) x samples projected features.
Eigen::MatrixXd apply_voxel_pca(const VoxelPcaBasis& pca, const SourceEstimate& est);

// Back-projection to the full 3-component space, for reconstruction checks.
Eigen::MatrixXd reconstruct_voxel_pca(const VoxelPcaBasis& pca, const Eigen::MatrixXd& projected);

// Mean, std, max, min of member voxel activities per axis: 12 features per
// parcel. Empty parcels are excluded (with a warning).
struct ParcelFeatures {
    Eigen::MatrixXd data;         // (n_parcels * 12) x samples
    std::vector<int> parcel_ids;  // region id per parcel row block
};

ParcelFeatures parcel_features(const SourceEstimate& est, const Anatomy& anatomy);

}  // namespace voxdec
