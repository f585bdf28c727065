#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "voxdec/morph.hpp"
#include "voxdec/rng.hpp"
#include "voxdec/sim.hpp"

using namespace voxdec;

namespace {

SourceEstimate smooth_field(const Anatomy& a, double scale_mm) {
    SourceEstimate est;
    est.type = VoxelType::vec;
    est.n_voxels = a.n_voxels();
    est.sampling_rate_hz = 1.0;
    est.data.resize(3 * a.n_voxels(), 2);
    for (int v = 0; v < a.n_voxels(); ++v) {
        const Eigen::Vector3d& c = a.centers[static_cast<std::size_t>(v)];
        est.data(3 * v + 0, 0) = std::sin(c.x() / scale_mm);
        est.data(3 * v + 1, 0) = std::cos(c.y() / scale_mm);
        est.data(3 * v + 2, 0) = std::sin(c.z() / scale_mm + 0.5);
        est.data(3 * v + 0, 1) = std::cos(c.x() / scale_mm - 0.2);
        est.data(3 * v + 1, 1) = std::sin(c.y() / scale_mm + 0.1);
        est.data(3 * v + 2, 1) = std::cos(c.z() / scale_mm);
    }
    return est;
}

}  // namespace

TEST_CASE("identity morph is the identity") {
    const Anatomy a = build_template_anatomy(15.0, 75.0, 7);
    const SourceEstimate est = smooth_field(a, 40.0);
    const SourceEstimate out = morph_estimate(est, a, a);
    REQUIRE(out.data.rows() == est.data.rows());
    CHECK((out.data - est.data).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("translation by one voxel shifts the lattice") {
    const Anatomy a = build_template_anatomy(15.0, 75.0, 7);
    Anatomy shifted = a;
    shifted.subject_id = "shifted";
    shifted.subject_affine =
        Affine::from_parts(Eigen::Matrix3d::Identity(), Eigen::Vector3d(a.voxel_size_mm, 0.0, 0.0));

    const SourceEstimate est = smooth_field(a, 40.0);
    const MorphOperator m = build_morph(a, shifted);
    const SourceEstimate out = apply_morph(m, est);

    // target voxel at cell (i,j,k) should carry the source value at (i-1,j,k)
    int checked = 0;
    for (int t = 0; t < shifted.n_voxels(); ++t) {
        if (m.outside[static_cast<std::size_t>(t)]) continue;
        const Eigen::Vector3i src_cell = shifted.cells[static_cast<std::size_t>(t)] - Eigen::Vector3i(1, 0, 0);
        int src = -1;
        for (int v = 0; v < a.n_voxels(); ++v)
            if (a.cells[static_cast<std::size_t>(v)] == src_cell) {
                src = v;
                break;
            }
        if (src < 0) continue;
        for (int c = 0; c < 3; ++c)
            CHECK(out.data(3 * t + c, 0) == doctest::Approx(est.data(3 * src + c, 0)).epsilon(1e-9));
        ++checked;
    }
    CHECK(checked > 100);
}

TEST_CASE("morph flags exactly the voxels that map outside") {
    const Anatomy a = build_template_anatomy(15.0, 75.0, 7);
    Anatomy shifted = a;
    shifted.subject_affine =
        Affine::from_parts(Eigen::Matrix3d::Identity(), Eigen::Vector3d(3.0 * a.voxel_size_mm, 0.0, 0.0));
    const MorphOperator m = build_morph(a, shifted);
    int flagged = 0;
    for (int t = 0; t < shifted.n_voxels(); ++t) {
        const bool outside = m.outside[static_cast<std::size_t>(t)] != 0;
        if (outside) ++flagged;
        // flagged voxels produce exact zeros
        if (outside) {
            const SourceEstimate est = smooth_field(a, 30.0);
            const SourceEstimate out = apply_morph(m, est);
            CHECK(out.data.middleRows(3 * t, 3).cwiseAbs().maxCoeff() == 0.0);
            break;
        }
    }
    CHECK(flagged > 0);
}

TEST_CASE("round trip through a subject grid keeps smooth fields") {
    const Anatomy tmpl = build_template_anatomy(15.0, 75.0, 7);
    const Anatomy subj = derive_subject_anatomy(tmpl, 5, 0.1);
    const SourceEstimate est = smooth_field(subj, 60.0);

    const MorphOperator fwd = build_morph(subj, tmpl);
    const MorphOperator bwd = build_morph(tmpl, subj);
    const SourceEstimate back = apply_morph(bwd, apply_morph(fwd, est));

    // interior voxels only: skip anything near the boundary of either grid
    double num = 0.0, den = 0.0;
    for (int v = 0; v < subj.n_voxels(); ++v) {
        if (subj.centers[static_cast<std::size_t>(v)].norm() > 0.6 * subj.head_radius_mm) continue;
        num += (back.data.middleRows(3 * v, 3) - est.data.middleRows(3 * v, 3)).squaredNorm();
        den += est.data.middleRows(3 * v, 3).squaredNorm();
    }
    REQUIRE(den > 0.0);
    CHECK(std::sqrt(num / den) < 0.05);
}

TEST_CASE("morph is linear in the field") {
    const Anatomy tmpl = build_template_anatomy(15.0, 75.0, 7);
    const Anatomy subj = derive_subject_anatomy(tmpl, 5, 0.1);
    const MorphOperator m = build_morph(subj, tmpl);

    Rng rng(3);
    SourceEstimate f = smooth_field(subj, 40.0);
    SourceEstimate g = smooth_field(subj, 25.0);
    const Eigen::MatrixXd lhs = apply_morph(m, [&] {
                                    SourceEstimate combo = f;
                                    combo.data = 2.0 * f.data + 3.0 * g.data;
                                    return combo;
                                }()).data;
    const Eigen::MatrixXd rhs = 2.0 * apply_morph(m, f).data + 3.0 * apply_morph(m, g).data;
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("vector components rotate with the anatomy") {
    const Anatomy a = build_template_anatomy(15.0, 75.0, 7);
    Anatomy rotated = a;
    rotated.subject_id = "rotated";
    const Eigen::Matrix3d rot = Eigen::AngleAxisd(0.1, Eigen::Vector3d::UnitZ()).toRotationMatrix();
    rotated.subject_affine = Affine::from_parts(rot, Eigen::Vector3d::Zero());

    // constant vector field: interpolation cannot blur it, so the morphed
    // value must be exactly the rotated vector wherever defined
    SourceEstimate est;
    est.type = VoxelType::vec;
    est.n_voxels = a.n_voxels();
    est.sampling_rate_hz = 1.0;
    est.data.resize(3 * a.n_voxels(), 1);
    const Eigen::Vector3d v0(1.0, -2.0, 0.5);
    for (int v = 0; v < a.n_voxels(); ++v) est.data.block<3, 1>(3 * v, 0) = v0;

    const MorphOperator m = build_morph(a, rotated);
    const SourceEstimate out = apply_morph(m, est);
    const Eigen::Vector3d expect = rot * v0;
    for (int t = 0; t < rotated.n_voxels(); ++t) {
        if (m.outside[static_cast<std::size_t>(t)]) continue;
        CHECK((out.data.block<3, 1>(3 * t, 0) - expect).cwiseAbs().maxCoeff() <= 1e-9);
    }

    // magnitudes are unaffected by the rotation
    SourceEstimate mag = vec_to_mag(est);
    const SourceEstimate mag_out = apply_morph(m, mag);
    for (int t = 0; t < rotated.n_voxels(); ++t) {
        if (m.outside[static_cast<std::size_t>(t)]) continue;
        CHECK(mag_out.data(t, 0) == doctest::Approx(v0.norm()).epsilon(1e-9));
    }
}

TEST_CASE("morph routing for cross-dataset evaluation") {
    const MorphPlan tpl = morph_direction_for_eval(EvalKind::to_template, "b01");
    CHECK(tpl.to_anatomy == "template");
    CHECK(tpl.from_anatomy == "b01");
    CHECK(!tpl.identity);

    const MorphPlan subj = morph_direction_for_eval(EvalKind::to_subject, "b01", "a02");
    CHECK(subj.to_anatomy == "a02");
    CHECK(!subj.identity);

    const MorphPlan in_domain = morph_direction_for_eval(EvalKind::in_domain, "b01");
    CHECK(in_domain.identity);

    CHECK_THROWS_AS(morph_direction_for_eval(EvalKind::to_subject, "b01"), ConfigError);
    CHECK_THROWS_AS(eval_kind_from_string("sideways"), ConfigError);
}

TEST_CASE("non-invertible affine is rejected") {
    const Anatomy a = build_template_anatomy(15.0, 75.0, 7);
    Anatomy degenerate = a;
    Eigen::Matrix3d lin = Eigen::Matrix3d::Identity();
    lin(2, 2) = 0.0;
    degenerate.subject_affine = Affine::from_parts(lin, Eigen::Vector3d::Zero());
    CHECK_THROWS_AS(build_morph(a, degenerate), InputError);
}
