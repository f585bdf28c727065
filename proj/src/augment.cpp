#include "voxdec/augment.hpp"

#include <algorithm>
#include <set>

namespace voxdec {

DenseBatch inscribe_to_box(const Eigen::MatrixXd& flat_rows, const GridLayout& grid) {
    if (flat_rows.cols() != 3 * grid.n_voxels())
        throw InputError("inscribe_to_box expects source features of size 3 * n_voxels");
    DenseBatch batch;
    batch.nx = grid.dims.x();
    batch.ny = grid.dims.y();
    batch.nz = grid.dims.z();
    const Eigen::Index cells = grid.n_cells();
    batch.values = Eigen::MatrixXd::Zero(flat_rows.rows(), 6 * cells);
    for (int v = 0; v < grid.n_voxels(); ++v) {
        const Eigen::Index cell = grid.cell_of_voxel[static_cast<std::size_t>(v)];
        for (int c = 0; c < 3; ++c) {
            batch.values.col(c * cells + cell) = flat_rows.col(3 * v + c);
            batch.values.col((3 + c) * cells + cell).setConstant(grid.positions_norm(v, c));
        }
    }
    return batch;
}

Eigen::MatrixXd gather_from_box(const DenseBatch& batch, const GridLayout& grid) {
    if (batch.n_cells() != grid.n_cells()) throw InputError("batch grid does not match layout");
    const Eigen::Index cells = grid.n_cells();
    Eigen::MatrixXd flat(batch.values.rows(), 3 * grid.n_voxels());
    for (int v = 0; v < grid.n_voxels(); ++v) {
        const Eigen::Index cell = grid.cell_of_voxel[static_cast<std::size_t>(v)];
        for (int c = 0; c < 3; ++c) flat.col(3 * v + c) = batch.values.col(c * cells + cell);
    }
    return flat;
}

void mixup_pairs(Eigen::MatrixXd& features, Eigen::VectorXd& labels, const std::vector<int>& pair,
                 const Eigen::VectorXd& lambda) {
    const Eigen::Index n = features.rows();
    if (static_cast<Eigen::Index>(pair.size()) != n || lambda.size() != n)
        throw InputError("mixup pairing does not match batch size");
    const Eigen::MatrixXd fx = features;
    const Eigen::VectorXd fy = labels;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double l = lambda(i);
        features.row(i) = l * fx.row(i) + (1.0 - l) * fx.row(pair[static_cast<std::size_t>(i)]);
        labels(i) = l * fy(i) + (1.0 - l) * fy(pair[static_cast<std::size_t>(i)]);
    }
}

void mixup(Eigen::MatrixXd& features, Eigen::VectorXd& labels, double alpha, std::uint64_t seed) {
    if (alpha <= 0.0) throw ConfigError("mixup alpha must be positive");
    const Eigen::Index n = features.rows();
    if (n < 2) throw InputError("mixup needs a batch of at least 2 samples");
    Rng rng(Rng::derive(seed, "mixup"));
    const std::vector<int> pair = rng.permutation(static_cast<int>(n));
    Eigen::VectorXd lambda(n);
    for (Eigen::Index i = 0; i < n; ++i) lambda(i) = rng.beta(alpha, alpha);
    mixup_pairs(features, labels, pair, lambda);
}

void zero_plane(DenseBatch& batch, Eigen::Index sample, int axis, int index) {
    for (int c = 0; c < 3; ++c)
        for (int x = 0; x < batch.nx; ++x)
            for (int y = 0; y < batch.ny; ++y)
                for (int z = 0; z < batch.nz; ++z) {
                    const int coord = axis == 0 ? x : axis == 1 ? y : z;
                    if (coord == index) batch.values(sample, batch.col(c, x, y, z)) = 0.0;
                }
}

void zero_box(DenseBatch& batch, Eigen::Index sample, const Eigen::Vector3i& c1, const Eigen::Vector3i& c2) {
    const Eigen::Vector3i lo = c1.cwiseMin(c2);
    const Eigen::Vector3i hi = c1.cwiseMax(c2);
    for (int c = 0; c < 3; ++c)
        for (int x = lo.x(); x <= hi.x(); ++x)
            for (int y = lo.y(); y <= hi.y(); ++y)
                for (int z = lo.z(); z <= hi.z(); ++z)
                    batch.values(sample, batch.col(c, x, y, z)) = 0.0;
}

void slice_dropout(DenseBatch& batch, double p, std::uint64_t seed) {
    if (p < 0.0 || p > 1.0) throw ConfigError("slice dropout probability must be in [0, 1]");
    if (p == 0.0) return;
    Rng rng(Rng::derive(seed, "slice-dropout"));
    const int sizes[3] = {batch.nx, batch.ny, batch.nz};
    for (Eigen::Index s = 0; s < batch.values.rows(); ++s)
        for (int axis = 0; axis < 3; ++axis)
            for (int idx = 0; idx < sizes[axis]; ++idx)
                if (rng.uniform() < p) zero_plane(batch, s, axis, idx);
}

void cube_mask(DenseBatch& batch, double p_apply, std::uint64_t seed) {
    if (p_apply < 0.0 || p_apply > 1.0) throw ConfigError("cube mask probability must be in [0, 1]");
    if (p_apply == 0.0) return;
    Rng rng(Rng::derive(seed, "cube-mask"));
    for (Eigen::Index s = 0; s < batch.values.rows(); ++s) {
        if (rng.uniform() >= p_apply) continue;
        const Eigen::Vector3i c1(static_cast<int>(rng.uniform_int(0, batch.nx - 1)),
                                 static_cast<int>(rng.uniform_int(0, batch.ny - 1)),
                                 static_cast<int>(rng.uniform_int(0, batch.nz - 1)));
        const Eigen::Vector3i c2(static_cast<int>(rng.uniform_int(0, batch.nx - 1)),
                                 static_cast<int>(rng.uniform_int(0, batch.ny - 1)),
                                 static_cast<int>(rng.uniform_int(0, batch.nz - 1)));
        zero_box(batch, s, c1, c2);
    }
}

std::vector<int> region_mask_voxels(const Anatomy& anatomy, int region_id, int buffer_voxels) {
    if (region_id < 1 || region_id > anatomy.n_regions)
        throw ConfigError("region " + std::to_string(region_id) + " does not exist in the atlas");
    if (buffer_voxels < 0) throw ConfigError("buffer_voxels must be non-negative");
    const auto base = anatomy.region_voxels(region_id);
    if (base.size() < 5)
        throw InputError("region " + std::to_string(region_id) + " has " + std::to_string(base.size()) +
                         " voxels on this grid (need >= 5)");

    std::set<int> masked(base.begin(), base.end());
    std::vector<int> frontier(base);
    for (int step = 0; step < buffer_voxels; ++step) {
        std::vector<int> next;
        for (int v : frontier) {
            const Eigen::Vector3i& cv = anatomy.cells[static_cast<std::size_t>(v)];
            for (int u = 0; u < anatomy.n_voxels(); ++u) {
                if (masked.count(u)) continue;
                if ((anatomy.cells[static_cast<std::size_t>(u)] - cv).cwiseAbs().maxCoeff() <= 1) {
                    masked.insert(u);
                    next.push_back(u);
                }
            }
        }
        frontier = std::move(next);
    }
    return {masked.begin(), masked.end()};
}

void apply_voxel_mask(Eigen::MatrixXd& flat_rows, const std::vector<int>& voxels) {
    for (int v : voxels) {
        if (3 * v + 2 >= flat_rows.cols()) throw InputError("mask voxel out of range");
        flat_rows.middleCols(3 * v, 3).setZero();
    }
}

void apply_voxel_mask(DenseBatch& batch, const GridLayout& grid, const std::vector<int>& voxels) {
    const Eigen::Index cells = grid.n_cells();
    for (int v : voxels) {
        const Eigen::Index cell = grid.cell_of_voxel.at(static_cast<std::size_t>(v));
        for (int c = 0; c < 3; ++c) batch.values.col(c * cells + cell).setZero();
    }
}

}  // namespace voxdec
