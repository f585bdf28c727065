#include "voxdec/morph.hpp"

#include <cmath>

namespace voxdec {

namespace {

// voxel index at a lattice cell, or -1
int voxel_at(const Anatomy& a, const Eigen::Vector3i& cell) {
    if ((cell.array() < 0).any() || (cell.array() >= a.lattice_dims.array()).any()) return -1;
    if (!a.inside_mask[a.flat_cell(cell)]) return -1;
    // cells are generated in x-major order, so binary search the cell list
    auto less = [](const Eigen::Vector3i& l, const Eigen::Vector3i& r) {
        if (l.x() != r.x()) return l.x() < r.x();
        if (l.y() != r.y()) return l.y() < r.y();
        return l.z() < r.z();
    };
    auto it = std::lower_bound(a.cells.begin(), a.cells.end(), cell, less);
    if (it == a.cells.end() || (*it - cell).cwiseAbs().sum() != 0) return -1;
    return static_cast<int>(it - a.cells.begin());
}

}  // namespace

MorphOperator build_morph(const Anatomy& from, const Anatomy& to) {
    // position map: to frame -> template -> from frame
    const Affine to_from = from.subject_affine.compose(to.subject_affine.inverse());
    // vector map: from frame -> to frame
    const Eigen::Matrix3d rot = to.subject_affine.compose(from.subject_affine.inverse()).rotation();

    MorphOperator m;
    m.n_from = from.n_voxels();
    m.n_to = to.n_voxels();
    m.outside.assign(static_cast<std::size_t>(m.n_to), 0);

    std::vector<Eigen::Triplet<double>> vec_trip;
    std::vector<Eigen::Triplet<double>> sca_trip;

    for (int t = 0; t < m.n_to; ++t) {
        const Eigen::Vector3d p = to_from.apply(to.centers[static_cast<std::size_t>(t)]);
        const Eigen::Vector3d u = (p - from.lattice_origin) / from.voxel_size_mm;

        // gather the 8 surrounding cells for trilinear interpolation
        Eigen::Vector3i base(static_cast<int>(std::floor(u.x())), static_cast<int>(std::floor(u.y())),
                             static_cast<int>(std::floor(u.z())));
        const Eigen::Vector3d f = u - base.cast<double>();
        struct Corner {
            int voxel;
            double w;
        };
        std::vector<Corner> corners;
        bool all_inside = true;
        for (int dx = 0; dx < 2; ++dx)
            for (int dy = 0; dy < 2; ++dy)
                for (int dz = 0; dz < 2; ++dz) {
                    const double w = (dx ? f.x() : 1.0 - f.x()) * (dy ? f.y() : 1.0 - f.y()) *
                                     (dz ? f.z() : 1.0 - f.z());
                    const int v = voxel_at(from, base + Eigen::Vector3i(dx, dy, dz));
                    if (v < 0)
                        all_inside = false;
                    else
                        corners.push_back({v, w});
                }

        if (!all_inside) {
            // nearest-neighbour fallback within half a voxel of the boundary
            const Eigen::Vector3i nearest(static_cast<int>(std::llround(u.x())),
                                          static_cast<int>(std::llround(u.y())),
                                          static_cast<int>(std::llround(u.z())));
            const int v = voxel_at(from, nearest);
            if (v >= 0) {
                corners.assign(1, {v, 1.0});
            } else {
                m.outside[static_cast<std::size_t>(t)] = 1;  // maps outside the source brain: zeros
                continue;
            }
        }

        for (const auto& c : corners) {
            sca_trip.emplace_back(t, c.voxel, c.w);
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j)
                    vec_trip.emplace_back(3 * t + i, 3 * c.voxel + j, c.w * rot(i, j));
        }
    }

    m.vec_op.resize(3 * m.n_to, 3 * m.n_from);
    m.vec_op.setFromTriplets(vec_trip.begin(), vec_trip.end());
    m.scalar_op.resize(m.n_to, m.n_from);
    m.scalar_op.setFromTriplets(sca_trip.begin(), sca_trip.end());
    return m;
}

SourceEstimate apply_morph(const MorphOperator& m, const SourceEstimate& est) {
    SourceEstimate out;
    out.type = est.type;
    out.sampling_rate_hz = est.sampling_rate_hz;
    out.subject_id = est.subject_id;
    out.n_voxels = m.n_to;
    if (est.type == VoxelType::vec) {
        if (est.data.rows() != 3 * m.n_from) throw InputError("estimate does not match morph source grid");
        out.data = m.vec_op * est.data;
    } else {
        if (est.data.rows() != m.n_from) throw InputError("estimate does not match morph source grid");
        out.data = m.scalar_op * est.data;
    }
    return out;
}

SourceEstimate morph_estimate(const SourceEstimate& est, const Anatomy& from, const Anatomy& to) {
    return apply_morph(build_morph(from, to), est);
}

EvalKind eval_kind_from_string(const std::string& s) {
    if (s == "in_domain") return EvalKind::in_domain;
    if (s == "to_template") return EvalKind::to_template;
    if (s == "to_subject") return EvalKind::to_subject;
    throw ConfigError("unknown eval kind: " + s + " (expected in_domain|to_template|to_subject)");
}

MorphPlan morph_direction_for_eval(EvalKind kind, const std::string& eval_subject,
                                   const std::string& target_subject) {
    MorphPlan plan;
    plan.from_anatomy = eval_subject;
    switch (kind) {
        case EvalKind::in_domain:
            plan.to_anatomy = eval_subject;
            plan.identity = true;
            break;
        case EvalKind::to_template:
            plan.to_anatomy = "template";
            break;
        case EvalKind::to_subject:
            if (target_subject.empty()) throw ConfigError("to_subject morph needs a target subject");
            plan.to_anatomy = target_subject;
            break;
    }
    return plan;
}

}  // namespace voxdec
