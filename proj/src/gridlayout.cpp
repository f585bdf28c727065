#include "voxdec/gridlayout.hpp"

namespace voxdec {

GridLayout make_grid_layout(const Anatomy& anatomy) {
    if (anatomy.n_voxels() == 0) throw InputError("anatomy has no inside voxels");

    GridLayout g;
    Eigen::Vector3i lo = anatomy.cells.front();
    Eigen::Vector3i hi = anatomy.cells.front();
    for (const auto& c : anatomy.cells) {
        lo = lo.cwiseMin(c);
        hi = hi.cwiseMax(c);
    }
    g.cell_min = lo;
    g.dims = hi - lo + Eigen::Vector3i::Ones();

    g.voxel_of_cell.assign(static_cast<std::size_t>(g.n_cells()), -1);
    g.cell_of_voxel.resize(static_cast<std::size_t>(anatomy.n_voxels()));
    for (int v = 0; v < anatomy.n_voxels(); ++v) {
        const Eigen::Vector3i c = anatomy.cells[static_cast<std::size_t>(v)] - lo;
        const int flat = g.flat(c.x(), c.y(), c.z());
        g.cell_of_voxel[static_cast<std::size_t>(v)] = flat;
        g.voxel_of_cell[static_cast<std::size_t>(flat)] = v;
    }

    // positional channels: voxel centers scaled to [-1, 1] per axis
    Eigen::Vector3d clo = anatomy.centers.front();
    Eigen::Vector3d chi = anatomy.centers.front();
    for (const auto& c : anatomy.centers) {
        clo = clo.cwiseMin(c);
        chi = chi.cwiseMax(c);
    }
    g.positions_norm.resize(anatomy.n_voxels(), 3);
    for (int v = 0; v < anatomy.n_voxels(); ++v)
        for (int a = 0; a < 3; ++a) {
            const double span = chi[a] - clo[a];
            g.positions_norm(v, a) =
                span > 0 ? 2.0 * (anatomy.centers[static_cast<std::size_t>(v)][a] - clo[a]) / span - 1.0 : 0.0;
        }
    return g;
}

}  // namespace voxdec
