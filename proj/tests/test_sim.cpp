#include <doctest.h>

#include <Eigen/Dense>
#include <set>

#include "voxdec/dsp.hpp"
#include "voxdec/rng.hpp"
#include "voxdec/sim.hpp"

using namespace voxdec;

namespace {

// 26-connectivity check used to verify atlas regions are contiguous
bool region_connected(const Anatomy& a, int region) {
    const auto vs = a.region_voxels(region);
    if (vs.empty()) return false;
    std::set<int> remaining(vs.begin(), vs.end());
    std::vector<int> stack{*remaining.begin()};
    remaining.erase(remaining.begin());
    while (!stack.empty()) {
        const int v = stack.back();
        stack.pop_back();
        for (auto it = remaining.begin(); it != remaining.end();) {
            const Eigen::Vector3i d = (a.cells[static_cast<std::size_t>(*it)] - a.cells[static_cast<std::size_t>(v)]).cwiseAbs();
            if (d.maxCoeff() <= 1) {
                stack.push_back(*it);
                it = remaining.erase(it);
            } else {
                ++it;
            }
        }
    }
    return remaining.empty();
}

}  // namespace

TEST_CASE("template anatomy default band and determinism") {
    const Anatomy a = build_template_anatomy(15.0, 75.0, 7);
    CHECK(a.n_voxels() >= 400);
    CHECK(a.n_voxels() <= 900);
    for (const auto& c : a.centers) CHECK(c.norm() < 75.0);

    const Anatomy b = build_template_anatomy(15.0, 75.0, 7);
    REQUIRE(b.n_voxels() == a.n_voxels());
    for (int v = 0; v < a.n_voxels(); ++v) {
        CHECK(a.centers[static_cast<std::size_t>(v)] == b.centers[static_cast<std::size_t>(v)]);
        CHECK(a.atlas[static_cast<std::size_t>(v)] == b.atlas[static_cast<std::size_t>(v)]);
    }
}

TEST_CASE("template anatomy atlas structure") {
    const Anatomy a = build_template_anatomy(15.0, 75.0, 7);
    CHECK(a.n_regions >= 8);
    int unassigned = 0;
    for (int label : a.atlas)
        if (label == 0) ++unassigned;
    const double frac = static_cast<double>(unassigned) / a.n_voxels();
    CHECK(frac > 0.2);
    CHECK(frac < 0.45);
    for (int r = 1; r <= a.n_regions; ++r) {
        CHECK(!a.region_voxels(r).empty());
        CHECK(region_connected(a, r));
    }
}

TEST_CASE("template anatomy rejects degenerate configs") {
    CHECK_THROWS_AS(build_template_anatomy(15.0, 15.0, 0), ConfigError);
    CHECK_THROWS_AS(build_template_anatomy(30.0, 61.0, 0), ConfigError);  // < 50 voxels
    CHECK_THROWS_AS(build_template_anatomy(2.0, 75.0, 0), ConfigError);
}

TEST_CASE("subject anatomy identity at zero distortion") {
    const Anatomy tmpl = build_template_anatomy(15.0, 75.0, 7);
    const Anatomy s = derive_subject_anatomy(tmpl, 3, 0.0);
    CHECK(s.subject_affine.is_identity());
    REQUIRE(s.n_voxels() == tmpl.n_voxels());
    for (int v = 0; v < s.n_voxels(); ++v) {
        CHECK(s.centers[static_cast<std::size_t>(v)] == tmpl.centers[static_cast<std::size_t>(v)]);
        CHECK(s.atlas[static_cast<std::size_t>(v)] == tmpl.atlas[static_cast<std::size_t>(v)]);
    }
}

TEST_CASE("subject anatomy varies with seed and affine inverts") {
    const Anatomy tmpl = build_template_anatomy(15.0, 75.0, 7);
    int differing = 0;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        const Anatomy s1 = derive_subject_anatomy(tmpl, 2 * seed, 0.1);
        const Anatomy s2 = derive_subject_anatomy(tmpl, 2 * seed + 1, 0.1);
        if (s1.n_voxels() != s2.n_voxels()) ++differing;
        const Eigen::Matrix4d roundtrip = s1.subject_affine.inverse().m * s1.subject_affine.m;
        CHECK((roundtrip - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff() < 1e-10);
    }
    CHECK(differing >= 1);
    CHECK_THROWS_AS(derive_subject_anatomy(tmpl, 1, 0.5), ConfigError);
}

TEST_CASE("sensor arrays: geometry, determinism, layouts") {
    const SensorArray a = build_sensor_array("A", 269, 90.0, 11, 75.0);
    const SensorArray b = build_sensor_array("B", 273, 90.0, 11, 75.0);
    REQUIRE(a.n_sensors() == 269);
    REQUIRE(b.n_sensors() == 273);
    for (int s = 0; s < a.n_sensors(); ++s) {
        CHECK(a.positions.row(s).norm() == doctest::Approx(90.0).epsilon(1e-9));
        CHECK(a.orientations.row(s).norm() == doctest::Approx(1.0).epsilon(1e-12));
    }
    // distinct geometries for distinct layout ids
    const SensorArray a2 = build_sensor_array("A", 269, 90.0, 11, 75.0);
    CHECK(a.positions == a2.positions);
    const SensorArray c = build_sensor_array("B", 269, 90.0, 11, 75.0);
    CHECK((a.positions - c.positions).cwiseAbs().maxCoeff() > 1.0);

    CHECK_THROWS_AS(build_sensor_array("A", 8, 90.0, 11, 75.0), ConfigError);
    CHECK_THROWS_AS(build_sensor_array("A", 32, 70.0, 11, 75.0), ConfigError);
}

TEST_CASE("dipole field symmetries are exact") {
    const Eigen::Vector3d sensor_pos(0.0, 30.0, 85.0);
    const Eigen::Vector3d sensor_ori = sensor_pos.normalized();

    // center dipole: zero field for any moment
    CHECK(dipole_field(Eigen::Vector3d::Zero(), Eigen::Vector3d(1, 2, 3), sensor_pos, sensor_ori) == 0.0);
    // radial dipole: zero field
    const Eigen::Vector3d r0(21.0, -14.0, 35.0);
    CHECK(dipole_field(r0, r0, sensor_pos, sensor_ori) == 0.0);
    CHECK(dipole_field(r0, r0.normalized(), sensor_pos, sensor_ori) == 0.0);
}

TEST_CASE("lead field columns: zero for radial combinations, decay with distance") {
    const Anatomy a = build_template_anatomy(15.0, 75.0, 7);
    const SensorArray sensors = build_sensor_array("A", 32, 90.0, 11, 75.0);
    const LeadField lf = compute_lead_field(a, sensors);
    REQUIRE(lf.matrix.cols() == 3 * a.n_voxels());

    for (int v = 0; v < a.n_voxels(); v += 37) {
        const Eigen::Vector3d radial = a.centers[static_cast<std::size_t>(v)];
        const Eigen::VectorXd field = lf.matrix.middleCols(3 * v, 3) * radial;
        CHECK(field.cwiseAbs().maxCoeff() <= 1e-12);
    }

    // tangential dipole near cortex: magnitude decreases along a radial probe line
    const Eigen::Vector3d r0(0.0, 55.0, 20.0);
    Eigen::Vector3d tang = Eigen::Vector3d::UnitX();
    tang = (tang - tang.dot(r0.normalized()) * r0.normalized()).normalized();
    double prev = std::numeric_limits<double>::max();
    for (int k = 0; k < 6; ++k) {
        const Eigen::Vector3d pos = r0.normalized() * (80.0 + 15.0 * k);
        const double fx = dipole_field(r0, tang, pos, Eigen::Vector3d::UnitX());
        const double fy = dipole_field(r0, tang, pos, Eigen::Vector3d::UnitY());
        const double fz = dipole_field(r0, tang, pos, Eigen::Vector3d::UnitZ());
        const double mag = std::sqrt(fx * fx + fy * fy + fz * fz);
        CHECK(mag < prev);
        CHECK(mag > 0.0);
        prev = mag;
    }
}

TEST_CASE("lead field zeroes columns of a voxel at the sphere center") {
    Anatomy a = build_template_anatomy(15.0, 75.0, 7);
    a.centers[0] = Eigen::Vector3d::Zero();
    const SensorArray sensors = build_sensor_array("A", 16, 90.0, 11, 75.0);
    const LeadField lf = compute_lead_field(a, sensors);
    CHECK(lf.matrix.middleCols(0, 3).cwiseAbs().maxCoeff() == 0.0);
    CHECK(lf.matrix.middleCols(3, 3).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("stimulus track statistics and determinism") {
    const StimulusTrack t = make_stimulus_track(600.0, 100.0, 0.5, 2.5, 5);
    CHECK(t.n_samples() == 60000);
    CHECK(t.speech_fraction() > 0.4);
    CHECK(t.speech_fraction() < 0.6);
    for (std::size_t on : t.onsets) {
        CHECK(t.labels[on] == 1);
        CHECK(t.labels[on - 1] == 0);
    }

    const StimulusTrack t2 = make_stimulus_track(600.0, 100.0, 0.5, 2.5, 5);
    CHECK(t.labels == t2.labels);

    const StimulusTrack empty = make_stimulus_track(0.0, 100.0, 0.5, 2.5, 5);
    CHECK(empty.n_samples() == 0);
    CHECK(empty.onsets.empty());

    CHECK_THROWS_AS(make_stimulus_track(10.0, 100.0, 0.0, 2.5, 5), ConfigError);
}

TEST_CASE("simulated recording: zero configuration gives zeros") {
    const Anatomy a = build_template_anatomy(15.0, 75.0, 7);
    const SensorArray sensors = build_sensor_array("A", 24, 90.0, 11, 75.0);
    const LeadField lf = compute_lead_field(a, sensors);
    const StimulusTrack stim = make_stimulus_track(10.0, 100.0, 0.5, 1.0, 5);
    NoiseConfig noise;
    noise.source_noise_std = 0.0;
    noise.sensor_noise_rel = 0.0;
    ResponseConfig resp;
    resp.region_ids = {1};
    resp.evoked_amplitude = 0.0;
    resp.sustained_amplitude = 0.0;
    const SensorRecording rec = simulate_recording(a, lf, sensors, stim, noise, resp, 3);
    rec.validate();
    CHECK(rec.data.cwiseAbs().maxCoeff() == 0.0);

    ResponseConfig bad = resp;
    bad.region_ids = {99};
    CHECK_THROWS_AS(simulate_recording(a, lf, sensors, stim, noise, bad, 3), ConfigError);
}

TEST_CASE("noiseless recording from one voxel has rank <= 2") {
    const Anatomy a = build_template_anatomy(15.0, 75.0, 7);
    const SensorArray sensors = build_sensor_array("A", 24, 90.0, 11, 75.0);
    const LeadField lf = compute_lead_field(a, sensors);
    const StimulusTrack stim = make_stimulus_track(5.0, 100.0, 0.5, 1.0, 5);
    const auto T = static_cast<Eigen::Index>(stim.n_samples());

    const int v0 = 42;
    const Eigen::Vector3d r_hat = a.centers[42].normalized();
    Eigen::Vector3d t1 = Eigen::Vector3d::UnitX();
    t1 = (t1 - t1.dot(r_hat) * r_hat).normalized();
    const Eigen::Vector3d t2 = r_hat.cross(t1);

    Eigen::MatrixXd src = Eigen::MatrixXd::Zero(3 * a.n_voxels(), T);
    for (Eigen::Index t = 0; t < T; ++t)
        src.block<3, 1>(3 * v0, t) = t1 * std::sin(0.07 * t) + t2 * std::cos(0.13 * t);

    NoiseConfig noise;
    noise.sensor_noise_rel = 0.0;
    const SensorRecording rec = project_to_sensors(lf, sensors, src, stim, noise, 3);

    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(rec.data);
    REQUIRE(svd.singularValues()(0) > 0.0);
    CHECK(svd.singularValues()(2) <= 1e-9 * svd.singularValues()(0));
}

TEST_CASE("forward projection is linear") {
    const Anatomy a = build_template_anatomy(15.0, 75.0, 7);
    const SensorArray sensors = build_sensor_array("A", 24, 90.0, 11, 75.0);
    const LeadField lf = compute_lead_field(a, sensors);
    const StimulusTrack stim = make_stimulus_track(1.0, 50.0, 0.5, 0.2, 5);
    const auto T = static_cast<Eigen::Index>(stim.n_samples());

    Rng rng(9);
    Eigen::MatrixXd s1(3 * a.n_voxels(), T), s2(3 * a.n_voxels(), T);
    for (Eigen::Index i = 0; i < s1.size(); ++i) s1.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < s2.size(); ++i) s2.data()[i] = rng.normal();

    NoiseConfig noise;
    noise.sensor_noise_rel = 0.0;
    const Eigen::MatrixXd r1 = project_to_sensors(lf, sensors, s1, stim, noise, 0).data;
    const Eigen::MatrixXd r2 = project_to_sensors(lf, sensors, s2, stim, noise, 0).data;
    const Eigen::MatrixXd r12 = project_to_sensors(lf, sensors, s1 + s2, stim, noise, 0).data;
    const double scale = r12.cwiseAbs().maxCoeff();
    CHECK((r12 - r1 - r2).cwiseAbs().maxCoeff() <= 1e-9 * std::max(1.0, scale));
}

TEST_CASE("epoch-averaged evoked response peaks near the configured latency") {
    const Anatomy a = build_template_anatomy(15.0, 75.0, 7);
    const SensorArray sensors = build_sensor_array("A", 32, 90.0, 11, 75.0);
    const LeadField lf = compute_lead_field(a, sensors);
    const StimulusTrack stim = make_stimulus_track(120.0, 200.0, 0.5, 2.5, 5);
    NoiseConfig noise;
    noise.source_noise_std = 0.3;
    noise.sensor_noise_rel = 0.05;
    ResponseConfig resp;
    resp.region_ids = {1, 2};
    resp.evoked_amplitude = 5.0;
    resp.sustained_amplitude = 0.0;
    const SensorRecording rec = simulate_recording(a, lf, sensors, stim, noise, resp, 3);

    const double pre = 0.2, post = 0.6;
    const Eigen::MatrixXd evoked = epoch_average(rec, pre, post);
    const auto pre_n = static_cast<Eigen::Index>(pre * rec.sampling_rate_hz);

    // strongest channel: largest post-onset deviation relative to its baseline
    int best_c = 0;
    double best_ratio = 0.0;
    Eigen::Index best_t = 0;
    for (int c = 0; c < rec.n_channels(); ++c) {
        const Eigen::VectorXd base = evoked.row(c).head(pre_n);
        const double bmean = base.mean();
        const double bstd = std::sqrt((base.array() - bmean).square().mean());
        Eigen::Index tmax = pre_n;
        double vmax = 0.0;
        for (Eigen::Index t = pre_n; t < evoked.cols(); ++t) {
            const double v = std::abs(evoked(c, t) - bmean);
            if (v > vmax) {
                vmax = v;
                tmax = t;
            }
        }
        const double ratio = vmax / (bstd > 0 ? bstd : 1e-30);
        if (ratio > best_ratio) {
            best_ratio = ratio;
            best_c = c;
            best_t = tmax;
        }
    }
    const double latency = static_cast<double>(best_t - pre_n) / rec.sampling_rate_hz;
    INFO("channel ", best_c, " latency ", latency, " ratio ", best_ratio);
    CHECK(latency >= 0.15);
    CHECK(latency <= 0.35);
    CHECK(best_ratio > 3.0);
}
