#include <doctest.h>

#include <Eigen/Dense>

#include "voxdec/features.hpp"
#include "voxdec/rng.hpp"
#include "voxdec/sim.hpp"

using namespace voxdec;

namespace {

SourceEstimate random_vec_estimate(int n_voxels, int samples, std::uint64_t seed) {
    SourceEstimate est;
    est.type = VoxelType::vec;
    est.n_voxels = n_voxels;
    est.sampling_rate_hz = 100.0;
    est.data.resize(3 * n_voxels, samples);
    Rng rng(seed);
    for (Eigen::Index i = 0; i < est.data.size(); ++i) est.data.data()[i] = rng.normal();
    return est;
}

}  // namespace

TEST_CASE("full-rank voxel PCA reconstructs exactly") {
    const SourceEstimate est = random_vec_estimate(5, 50, 3);
    const VoxelPcaBasis pca = fit_voxel_pca(est, 3);
    for (const auto& b : pca.basis)
        CHECK((b * b.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= 1e-9);
    const Eigen::MatrixXd proj = apply_voxel_pca(pca, est);
    const Eigen::MatrixXd recon = reconstruct_voxel_pca(pca, proj);
    CHECK((recon - est.data).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("planar activity is captured by two components") {
    SourceEstimate est;
    est.type = VoxelType::vec;
    est.n_voxels = 1;
    est.sampling_rate_hz = 100.0;
    est.data.resize(3, 200);
    Rng rng(5);
    const Eigen::Vector3d u = Eigen::Vector3d(1.0, 2.0, -1.0).normalized();
    const Eigen::Vector3d v = Eigen::Vector3d(0.5, -0.25, 0.0).normalized();
    for (Eigen::Index t = 0; t < 200; ++t)
        est.data.col(t) = rng.normal() * u + rng.normal() * v;

    const VoxelPcaBasis pca = fit_voxel_pca(est, 2);
    const Eigen::MatrixXd recon = reconstruct_voxel_pca(pca, apply_voxel_pca(pca, est));
    CHECK((recon - est.data).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("one component of isotropic noise captures about a third of variance") {
    const SourceEstimate est = random_vec_estimate(40, 3000, 11);
    const VoxelPcaBasis pca = fit_voxel_pca(est, 1);
    const Eigen::MatrixXd proj = apply_voxel_pca(pca, est);
    double captured = 0.0;
    double total = 0.0;
    for (int v = 0; v < est.n_voxels; ++v) {
        const Eigen::MatrixXd block = est.data.middleRows(3 * v, 3);
        const Eigen::Vector3d mean = block.rowwise().mean();
        total += (block.colwise() - mean).squaredNorm();
        captured += proj.row(v).squaredNorm();
    }
    const double ratio = captured / total;
    CHECK(ratio > 1.0 / 3.0 - 0.05);
    CHECK(ratio < 1.0 / 3.0 + 0.05);
}

TEST_CASE("voxel PCA validates its inputs") {
    const SourceEstimate est = random_vec_estimate(2, 10, 3);
    CHECK_THROWS_AS(fit_voxel_pca(est, 0), ConfigError);
    CHECK_THROWS_AS(fit_voxel_pca(est, 4), ConfigError);
    SourceEstimate mag = vec_to_mag(est);
    CHECK_THROWS_AS(fit_voxel_pca(mag, 2), InputError);
}

TEST_CASE("parcel features: hand-computed values") {
    Anatomy a = build_template_anatomy(15.0, 75.0, 7);
    // carve a two-voxel parcel with known values
    for (auto& label : a.atlas) label = 0;
    a.atlas[0] = 1;
    a.atlas[1] = 1;
    a.n_regions = 1;

    SourceEstimate est;
    est.type = VoxelType::vec;
    est.n_voxels = a.n_voxels();
    est.sampling_rate_hz = 1.0;
    est.data = Eigen::MatrixXd::Zero(3 * a.n_voxels(), 1);
    est.data(0, 0) = 1.0;  // voxel 0, x axis
    est.data(3, 0) = 3.0;  // voxel 1, x axis

    const ParcelFeatures pf = parcel_features(est, a);
    REQUIRE(pf.parcel_ids == std::vector<int>{1});
    REQUIRE(pf.data.rows() == 12);
    CHECK(pf.data(0, 0) == doctest::Approx(2.0));  // mean x
    CHECK(pf.data(1, 0) == doctest::Approx(1.0));  // population std x
    CHECK(pf.data(2, 0) == doctest::Approx(3.0));  // max x
    CHECK(pf.data(3, 0) == doctest::Approx(1.0));  // min x
    CHECK(pf.data(4, 0) == doctest::Approx(0.0));  // mean y
}

TEST_CASE("parcel features: singleton parcel and permutation invariance") {
    Anatomy a = build_template_anatomy(15.0, 75.0, 7);
    for (auto& label : a.atlas) label = 0;
    a.atlas[7] = 1;
    a.n_regions = 1;

    SourceEstimate est = random_vec_estimate(a.n_voxels(), 4, 9);
    const ParcelFeatures pf = parcel_features(est, a);
    for (int axis = 0; axis < 3; ++axis) {
        for (Eigen::Index t = 0; t < 4; ++t) {
            const double value = est.data(3 * 7 + axis, t);
            CHECK(pf.data(axis * 4 + 0, t) == doctest::Approx(value));
            CHECK(pf.data(axis * 4 + 1, t) == doctest::Approx(0.0));
            CHECK(pf.data(axis * 4 + 2, t) == doctest::Approx(value));
            CHECK(pf.data(axis * 4 + 3, t) == doctest::Approx(value));
        }
    }
}

TEST_CASE("parcel features cover parcels x 12 and swap-invariance") {
    const Anatomy a = build_template_anatomy(15.0, 75.0, 7);
    SourceEstimate est = random_vec_estimate(a.n_voxels(), 6, 13);
    const ParcelFeatures pf = parcel_features(est, a);
    CHECK(pf.data.rows() == static_cast<Eigen::Index>(pf.parcel_ids.size()) * 12);
    CHECK(static_cast<int>(pf.parcel_ids.size()) == a.n_regions);

    // permuting voxel values within a parcel leaves the features unchanged
    const auto members = a.region_voxels(pf.parcel_ids[0]);
    REQUIRE(members.size() >= 2);
    SourceEstimate swapped = est;
    swapped.data.middleRows(3 * members[0], 3).swap(swapped.data.middleRows(3 * members[1], 3));
    const ParcelFeatures pf2 = parcel_features(swapped, a);
    CHECK((pf.data - pf2.data).cwiseAbs().maxCoeff() <= 1e-12);
}
