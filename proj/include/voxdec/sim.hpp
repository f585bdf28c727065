#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "voxdec/affine.hpp"
#include "voxdec/core.hpp"

namespace voxdec {

// Per-subject cubic voxel lattice clipped to the brain, with atlas labels and
// the affine relating the subject frame to the template frame.
struct Anatomy {
    double voxel_size_mm = 0.0;
    double head_radius_mm = 0.0;
    Eigen::Vector3i lattice_dims = Eigen::Vector3i::Zero();  // bounding lattice of the head sphere
    Eigen::Vector3d lattice_origin = Eigen::Vector3d::Zero();  // center of cell (0,0,0), subject frame
    std::vector<std::uint8_t> inside_mask;                   // per bounding-lattice cell, x-major flat index
    std::vector<Eigen::Vector3i> cells;                      // lattice coords of inside voxels
    std::vector<Eigen::Vector3d> centers;                    // centers of inside voxels, subject frame (mm)
    std::vector<int> atlas;                                  // region id per inside voxel, 0 = unassigned
    int n_regions = 0;                                       // labeled region ids run 1..n_regions
    Affine subject_affine;                                   // template coords -> subject coords
    std::string subject_id = "template";

    int n_voxels() const { return static_cast<int>(centers.size()); }
    std::size_t flat_cell(const Eigen::Vector3i& c) const {
        return (static_cast<std::size_t>(c.x()) * static_cast<std::size_t>(lattice_dims.y()) +
                static_cast<std::size_t>(c.y())) *
                   static_cast<std::size_t>(lattice_dims.z()) +
               static_cast<std::size_t>(c.z());
    }
    Eigen::Vector3d cell_center(const Eigen::Vector3i& c) const {
        return lattice_origin + voxel_size_mm * c.cast<double>();
    }
    std::vector<int> region_voxels(int region_id) const;
    Eigen::Vector3d region_centroid(int region_id) const;
};

struct SensorArray {
    Eigen::MatrixX3d positions;     // mm, head frame
    Eigen::MatrixX3d orientations;  // unit vectors, radial by default
    std::string layout_id;

    int n_sensors() const { return static_cast<int>(positions.rows()); }
};

// sensors x (3 * n_voxels); column block [3v, 3v+3) holds the x/y/z dipole
// components of voxel v.
struct LeadField {
    Eigen::MatrixXd matrix;
    int n_voxels = 0;

    int sensor_of_row(int r) const { return r; }
    std::pair<int, int> source_of_col(int c) const { return {c / 3, c % 3}; }
};

struct StimulusTrack {
    std::vector<std::uint8_t> labels;  // 1 = speech
    double sampling_rate_hz = 0.0;
    std::vector<std::size_t> onsets;   // sample indices of 0 -> 1 transitions

    std::size_t n_samples() const { return labels.size(); }
    double speech_fraction() const;
    static std::vector<std::size_t> onsets_from_labels(const std::vector<std::uint8_t>& labels);
};

struct SensorRecording {
    Eigen::MatrixXd data;  // channels x samples
    double sampling_rate_hz = 0.0;
    std::string subject_id;
    std::string session_id;
    std::string dataset_id;
    StimulusTrack stimulus;
    SensorArray sensors;

    int n_channels() const { return static_cast<int>(data.rows()); }
    std::size_t n_samples() const { return static_cast<std::size_t>(data.cols()); }
    void validate() const;
};

// --- generators ------------------------------------------------------------

Anatomy build_template_anatomy(double voxel_size_mm, double head_radius_mm, std::uint64_t seed,
                               int n_atlas_regions = 12, double unassigned_fraction = 1.0 / 3.0);

Anatomy derive_subject_anatomy(const Anatomy& tmpl, std::uint64_t subject_seed, double distortion_scale);

SensorArray build_sensor_array(const std::string& layout_id, int n_sensors, double shell_radius_mm,
                               std::uint64_t seed, double head_radius_mm = 0.0);

LeadField compute_lead_field(const Anatomy& anatomy, const SensorArray& sensors);

// Magnetic field of a current dipole in a homogeneous conducting sphere
// centered at the origin (Sarvas 1987), projected on a sensor orientation.
// Radial and center dipoles give an exact zero.
double dipole_field(const Eigen::Vector3d& dipole_pos, const Eigen::Vector3d& moment,
                    const Eigen::Vector3d& sensor_pos, const Eigen::Vector3d& sensor_ori);

StimulusTrack make_stimulus_track(double duration_s, double rate_hz, double speech_fraction,
                                  double mean_segment_s, std::uint64_t seed);

enum class Lateralization { bilateral, left, right };
Lateralization lateralization_from_string(const std::string& s);

struct NoiseConfig {
    double ar_coeff = 0.95;         // AR(1) coefficient of the source background
    double source_noise_std = 1.0;  // stationary std of the background, per component
    double sensor_noise_rel = 0.1;  // sensor white-noise std relative to clean-signal RMS
};

struct ResponseConfig {
    std::vector<int> region_ids;        // atlas regions carrying the stimulus response
    double evoked_amplitude = 1.0;      // transient kernel peak
    double sustained_amplitude = 1.0;   // amplitude of the smoothed stimulus drive
    double peak_s = 0.25;               // transient peak latency after onset
    Lateralization lateralization = Lateralization::bilateral;
    // Seed for per-voxel dipole orientations. When a template anatomy is
    // passed to simulate_sources, orientations are keyed to template voxels so
    // all subjects share the same response structure after morphing.
    std::uint64_t orientation_seed = 0;
};

// Stimulus-locked transient, peak 1 at t = peak_s.
double evoked_kernel(double t_s, double peak_s);

// Voxels driven by the response for this anatomy/config (after lateralization).
std::vector<int> active_voxels(const Anatomy& anatomy, const ResponseConfig& response);

// (3 * n_voxels) x samples source activity: AR(1) background everywhere plus
// the stimulus-locked response in the configured regions.
Eigen::MatrixXd simulate_sources(const Anatomy& anatomy, const StimulusTrack& stimulus,
                                 const NoiseConfig& noise, const ResponseConfig& response,
                                 std::uint64_t seed, const Anatomy* template_anatomy = nullptr);

SensorRecording project_to_sensors(const LeadField& leadfield, const SensorArray& sensors,
                                   const Eigen::MatrixXd& sources, const StimulusTrack& stimulus,
                                   const NoiseConfig& noise, std::uint64_t seed);

SensorRecording simulate_recording(const Anatomy& anatomy, const LeadField& leadfield,
                                   const SensorArray& sensors, const StimulusTrack& stimulus,
                                   const NoiseConfig& noise, const ResponseConfig& response,
                                   std::uint64_t seed, const Anatomy* template_anatomy = nullptr);

}  // namespace voxdec
