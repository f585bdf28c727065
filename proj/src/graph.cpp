#include "voxdec/graph.hpp"

#include <algorithm>
#include <numeric>

namespace voxdec {

double GraphSpec::average_degree() const {
    if (adjacency.empty()) return 0.0;
    std::size_t edges = 0;
    for (const auto& n : adjacency) edges += n.size();
    return static_cast<double>(edges) / static_cast<double>(adjacency.size());
}

GraphSpec build_voxel_graph(const GridLayout& grid) {
    if (grid.n_voxels() < 6) throw InputError("voxel graph needs at least 6 nodes");
    GraphSpec g;
    g.kind = GraphSpec::Kind::voxel_knn6;
    g.adjacency.resize(static_cast<std::size_t>(grid.n_voxels()));
    const Eigen::Vector3i steps[6] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    for (int v = 0; v < grid.n_voxels(); ++v) {
        const int flat = grid.cell_of_voxel[static_cast<std::size_t>(v)];
        const int z = flat % grid.dims.z();
        const int y = (flat / grid.dims.z()) % grid.dims.y();
        const int x = flat / (grid.dims.y() * grid.dims.z());
        for (const auto& s : steps) {
            const int nx = x + s.x(), ny = y + s.y(), nz = z + s.z();
            if (nx < 0 || ny < 0 || nz < 0 || nx >= grid.dims.x() || ny >= grid.dims.y() ||
                nz >= grid.dims.z())
                continue;
            const int u = grid.voxel_of_cell[static_cast<std::size_t>(grid.flat(nx, ny, nz))];
            if (u >= 0) g.adjacency[static_cast<std::size_t>(v)].push_back(u);
        }
        std::sort(g.adjacency[static_cast<std::size_t>(v)].begin(), g.adjacency[static_cast<std::size_t>(v)].end());
    }
    return g;
}

GraphSpec build_sensor_graph(const Eigen::MatrixX3d& positions) {
    const int n = static_cast<int>(positions.rows());
    if (n < 6) throw InputError("sensor graph needs at least 6 nodes");
    GraphSpec g;
    g.kind = GraphSpec::Kind::sensor_knn5;
    g.adjacency.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        std::vector<int> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            const double da = (positions.row(a) - positions.row(i)).squaredNorm();
            const double db = (positions.row(b) - positions.row(i)).squaredNorm();
            if (da != db) return da < db;
            return a < b;
        });
        int added = 0;
        for (int j : order) {
            if (j == i) continue;
            g.adjacency[static_cast<std::size_t>(i)].push_back(j);
            if (++added == 5) break;
        }
    }
    // symmetrize
    for (int i = 0; i < n; ++i)
        for (int j : g.adjacency[static_cast<std::size_t>(i)]) {
            auto& back = g.adjacency[static_cast<std::size_t>(j)];
            if (std::find(back.begin(), back.end(), i) == back.end()) back.push_back(i);
        }
    for (auto& nbrs : g.adjacency) std::sort(nbrs.begin(), nbrs.end());
    return g;
}

GraphSpec build_graph(GraphSpec::Kind kind, const GridLayout* grid, const Eigen::MatrixX3d* positions) {
    switch (kind) {
        case GraphSpec::Kind::voxel_knn6:
            if (!grid) throw InputError("voxel graph needs a grid layout");
            return build_voxel_graph(*grid);
        case GraphSpec::Kind::sensor_knn5:
            if (!positions) throw InputError("sensor graph needs sensor positions");
            return build_sensor_graph(*positions);
    }
    throw ConfigError("unknown graph kind");
}

}  // namespace voxdec
