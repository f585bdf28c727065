#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "voxdec/sim.hpp"

namespace voxdec {

enum class CovForm { regular, diagonal, scalar };
CovForm cov_form_from_string(const std::string& s);
std::string to_string(CovForm f);

struct NoiseCovariance {
    Eigen::MatrixXd matrix;  // sensors x sensors, symmetric PSD
    CovForm form = CovForm::diagonal;
};

// Empirical covariance over silence samples (population convention, mean
// removed), reduced to the requested form.
NoiseCovariance estimate_noise_covariance(const Eigen::MatrixXd& data,
                                          const std::vector<std::uint8_t>& silence_mask, CovForm form);
NoiseCovariance estimate_noise_covariance(const SensorRecording& rec, CovForm form);

// Full-recording covariance (speech + silence), used by the LCMV beamformer.
Eigen::MatrixXd estimate_data_covariance(const Eigen::MatrixXd& data);

// Symmetric inverse square root; eigenvalues below 1e-10 * max are truncated,
// so W * cov * W^T is the identity on the retained eigenspace.
Eigen::MatrixXd build_whitener(const NoiseCovariance& cov);

enum class InverseMethod { min_norm, dspm, sloreta, lcmv };
InverseMethod inverse_method_from_string(const std::string& s);
std::string to_string(InverseMethod m);

struct InverseOperator {
    Eigen::MatrixXd weights;  // (3 * voxels) x sensors, applies to raw sensor data
    InverseMethod method = InverseMethod::min_norm;
    double snr = 3.0;
    double lambda2 = 1.0 / 9.0;
    std::string subject_id;
    Eigen::VectorXd normalization;        // per-row scale vs the min-norm operator
    std::vector<std::uint8_t> degenerate;  // per source component, flagged zero sources (lcmv)

    int n_voxels() const { return static_cast<int>(weights.rows()) / 3; }
};

// data_cov (raw sensor frame) is required for lcmv and ignored otherwise.
InverseOperator make_inverse_operator(const LeadField& leadfield, const NoiseCovariance& cov, double snr,
                                      InverseMethod method,
                                      const std::optional<Eigen::MatrixXd>& data_cov = std::nullopt,
                                      const std::string& subject_id = "");

enum class VoxelType { vec, mag };
VoxelType voxel_type_from_string(const std::string& s);
std::string to_string(VoxelType t);

struct SourceEstimate {
    Eigen::MatrixXd data;  // vec: (3 * voxels) x samples; mag: voxels x samples
    VoxelType type = VoxelType::vec;
    int n_voxels = 0;
    double sampling_rate_hz = 0.0;
    std::string subject_id;
};

SourceEstimate apply_inverse(const InverseOperator& op, const SensorRecording& rec, VoxelType type);
SourceEstimate apply_inverse(const InverseOperator& op, const Eigen::MatrixXd& data, double rate_hz,
                             VoxelType type);

// Euclidean norm over the three components per voxel.
SourceEstimate vec_to_mag(const SourceEstimate& est);

}  // namespace voxdec
