#pragma once

#include <Eigen/Dense>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "voxdec/gridlayout.hpp"

namespace voxdec {

enum class Representation { sensor, source };
Representation representation_from_string(const std::string& s);
std::string to_string(Representation r);

struct SessionKey {
    std::string dataset;
    std::string subject;
    std::string session;

    std::string str() const { return dataset + "/" + subject + "/" + session; }
    auto operator<=>(const SessionKey&) const = default;
};

// One session's per-time-slice features after the full pipeline (standardized
// channelwise within the session).
struct SessionFeatures {
    SessionKey key;
    Representation repr = Representation::sensor;
    Eigen::MatrixXd features;          // dim x samples
    std::vector<std::uint8_t> labels;  // one per time slice
};

// Per-time-slice supervised samples. Rows are samples; labels may become soft
// under mixup.
struct SampleSet {
    Eigen::MatrixXd features;  // n x dim
    Eigen::VectorXd labels;
    std::vector<int> subject_index;  // -1 = unknown subject (mean embedding at eval)
    std::string split;
    Representation repr = Representation::sensor;
    std::shared_ptr<const GridLayout> grid;  // source sets only
    Eigen::MatrixX3d sensor_positions;       // sensor sets only (sensor graph geometry)

    Eigen::Index size() const { return features.rows(); }
};

struct SplitPlan {
    enum class Mode { single_subject, inter_subject };
    Mode mode = Mode::inter_subject;
    std::map<std::string, std::vector<SessionKey>> splits;  // split tag -> sessions
    std::map<std::string, int> subject_index;               // training subjects -> embedding slot

    int n_subjects() const { return static_cast<int>(subject_index.size()); }
};

// Builds one SampleSet per split. Throws on any session shared between splits
// and, for inter-subject plans, on any subject shared between splits.
std::map<std::string, SampleSet> assemble(const SplitPlan& plan, Representation repr,
                                          const std::vector<SessionFeatures>& sessions,
                                          std::shared_ptr<const GridLayout> grid = nullptr);

}  // namespace voxdec
