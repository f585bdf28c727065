#include "voxdec/features.hpp"

#include <algorithm>
#include <cmath>

namespace voxdec {

VoxelPcaBasis fit_voxel_pca(const SourceEstimate& train_vec, int n_components) {
    if (train_vec.type != VoxelType::vec) throw InputError("voxel PCA expects a vec estimate");
    if (n_components < 1 || n_components > 3) throw ConfigError("n_components must be 1, 2 or 3");
    if (train_vec.data.cols() < 2) throw InputError("voxel PCA needs at least 2 training samples");

    VoxelPcaBasis pca;
    pca.n_components = n_components;
    pca.basis.resize(static_cast<std::size_t>(train_vec.n_voxels));
    pca.mean.resize(static_cast<std::size_t>(train_vec.n_voxels));
    for (int v = 0; v < train_vec.n_voxels; ++v) {
        const Eigen::MatrixXd block = train_vec.data.middleRows(3 * v, 3);
        const Eigen::Vector3d mean = block.rowwise().mean();
        const Eigen::MatrixXd centered = block.colwise() - mean;
        const Eigen::Matrix3d cov = (centered * centered.transpose()) / static_cast<double>(block.cols());
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
        // eigenvalues ascend; store axes by descending variance
        Eigen::Matrix3d axes;
        for (int i = 0; i < 3; ++i) axes.row(i) = eig.eigenvectors().col(2 - i).transpose();
        pca.basis[static_cast<std::size_t>(v)] = axes;
        pca.mean[static_cast<std::size_t>(v)] = mean;
    }
    return pca;
}

Eigen::MatrixXd apply_voxel_pca(const VoxelPcaBasis& pca, const SourceEstimate& est) {
    if (est.type != VoxelType::vec) throw InputError("voxel PCA expects a vec estimate");
    if (static_cast<std::size_t>(est.n_voxels) != pca.basis.size())
        throw InputError("estimate voxel count does not match PCA basis");
    const int nc = pca.n_components;
    Eigen::MatrixXd out(static_cast<Eigen::Index>(est.n_voxels) * nc, est.data.cols());
    for (int v = 0; v < est.n_voxels; ++v) {
        const Eigen::MatrixXd centered =
            est.data.middleRows(3 * v, 3).colwise() - pca.mean[static_cast<std::size_t>(v)];
        out.middleRows(static_cast<Eigen::Index>(v) * nc, nc) =
            pca.basis[static_cast<std::size_t>(v)].topRows(nc) * centered;
    }
    return out;
}

Eigen::MatrixXd reconstruct_voxel_pca(const VoxelPcaBasis& pca, const Eigen::MatrixXd& projected) {
    const int nc = pca.n_components;
    const auto n_voxels = static_cast<Eigen::Index>(pca.basis.size());
    if (projected.rows() != n_voxels * nc) throw InputError("projected rows do not match PCA basis");
    Eigen::MatrixXd out(3 * n_voxels, projected.cols());
    for (Eigen::Index v = 0; v < n_voxels; ++v) {
        out.middleRows(3 * v, 3) =
            pca.basis[static_cast<std::size_t>(v)].topRows(nc).transpose() * projected.middleRows(v * nc, nc);
        out.middleRows(3 * v, 3).colwise() += pca.mean[static_cast<std::size_t>(v)];
    }
    return out;
}

ParcelFeatures parcel_features(const SourceEstimate& est, const Anatomy& anatomy) {
    if (est.type != VoxelType::vec) throw InputError("parcel features expect a vec estimate");
    if (est.n_voxels != anatomy.n_voxels()) throw InputError("estimate does not match anatomy");

    ParcelFeatures out;
    for (int region = 1; region <= anatomy.n_regions; ++region) {
        if (anatomy.region_voxels(region).empty()) {
            log_warn("parcel " + std::to_string(region) + " has no voxels on this grid; excluded");
            continue;
        }
        out.parcel_ids.push_back(region);
    }

    const Eigen::Index T = est.data.cols();
    out.data.resize(static_cast<Eigen::Index>(out.parcel_ids.size()) * 12, T);
    for (std::size_t p = 0; p < out.parcel_ids.size(); ++p) {
        const auto members = anatomy.region_voxels(out.parcel_ids[p]);
        const auto n = static_cast<double>(members.size());
        for (int axis = 0; axis < 3; ++axis) {
            Eigen::MatrixXd vals(static_cast<Eigen::Index>(members.size()), T);
            for (std::size_t i = 0; i < members.size(); ++i)
                vals.row(static_cast<Eigen::Index>(i)) = est.data.row(3 * members[i] + axis);
            const Eigen::Index row0 = static_cast<Eigen::Index>(p) * 12 + axis * 4;
            const Eigen::RowVectorXd mean = vals.colwise().mean();
            out.data.row(row0) = mean;
            out.data.row(row0 + 1) =
                ((vals.rowwise() - mean).array().square().colwise().sum() / n).sqrt();  // population std
            out.data.row(row0 + 2) = vals.colwise().maxCoeff();
            out.data.row(row0 + 3) = vals.colwise().minCoeff();
        }
    }
    return out;
}

}  // namespace voxdec
