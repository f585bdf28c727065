#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <string>
#include <vector>

#include "voxdec/inverse.hpp"
#include "voxdec/sim.hpp"

namespace voxdec {

// Linear resampling operator between two voxel grids. Vector components are
// rotated by the rotation factor of the frame map so dipole fields turn with
// the anatomy.
struct MorphOperator {
    Eigen::SparseMatrix<double> vec_op;     // (3 * n_to) x (3 * n_from)
    Eigen::SparseMatrix<double> scalar_op;  // n_to x n_from, for mag fields
    std::vector<std::uint8_t> outside;      // per target voxel: mapped outside the source brain
    int n_from = 0;
    int n_to = 0;
};

MorphOperator build_morph(const Anatomy& from, const Anatomy& to);

SourceEstimate apply_morph(const MorphOperator& m, const SourceEstimate& est);

SourceEstimate morph_estimate(const SourceEstimate& est, const Anatomy& from, const Anatomy& to);

enum class EvalKind { in_domain, to_template, to_subject };
EvalKind eval_kind_from_string(const std::string& s);

struct MorphPlan {
    std::string from_anatomy;  // subject whose estimate is being mapped
    std::string to_anatomy;    // "template" or a subject id
    bool identity = false;
};

// Routing for cross-dataset evaluation: estimates are mapped either into the
// template grid or into a specific subject's grid; in-domain needs no morph.
MorphPlan morph_direction_for_eval(EvalKind kind, const std::string& eval_subject,
                                   const std::string& target_subject = "");

}  // namespace voxdec
