#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "voxdec/sim.hpp"

namespace voxdec {

struct FilterSpec {
    std::optional<double> highpass_hz;
    std::optional<double> lowpass_hz;
    std::optional<double> notch_hz;

    void validate(double sampling_rate_hz) const;
};

// Symmetric windowed-sinc FIR kernels (odd length, Hamming window).
std::vector<double> design_lowpass_fir(double cutoff_hz, double fs_hz, double transition_hz,
                                       std::size_t max_len = 0);
std::vector<double> design_highpass_fir(double cutoff_hz, double fs_hz, double transition_hz,
                                        std::size_t max_len = 0);
std::vector<double> design_notch_fir(double freq_hz, double fs_hz);

// Forward-backward application of a symmetric FIR (zero phase), reflect
// padding of one filter length at both ends. One row per channel.
Eigen::MatrixXd filter_rows_zero_phase(const Eigen::MatrixXd& data, const std::vector<double>& kernel);

SensorRecording bandpass_filter(const SensorRecording& rec, const FilterSpec& spec);
SensorRecording notch_filter(const SensorRecording& rec, double freq_hz);
SensorRecording resample(const SensorRecording& rec, double target_hz);

struct Standardized {
    Eigen::MatrixXd data;
    Eigen::VectorXd mean;
    Eigen::VectorXd std;
};

// Channelwise zero-mean unit-std (population convention); dead channels
// (std < 1e-12) map to zeros.
Standardized standardize(const Eigen::MatrixXd& data);

// Mean over onset-aligned windows [-pre_s, post_s); channels x window samples.
Eigen::MatrixXd epoch_average(const SensorRecording& rec, double pre_s, double post_s);

enum class Stage { bandpass, notch, resample, standardize };

// The pipeline order is fixed: bandpass -> (notch) -> resample -> standardize.
// Scrambled or duplicated stages are rejected.
void validate_stage_order(const std::vector<Stage>& stages);

struct PreprocConfig {
    std::optional<double> highpass_hz = 0.1;
    std::optional<double> lowpass_hz = 48.0;
    bool notch = false;
    double notch_hz = 50.0;
    std::optional<double> downsample_hz = 150.0;
};

struct PreprocResult {
    SensorRecording rec;     // standardized output
    Eigen::VectorXd mean;    // per-channel statistics, reusable downstream
    Eigen::VectorXd std;
};

PreprocResult preprocess(const SensorRecording& rec, const PreprocConfig& cfg);

}  // namespace voxdec
