#pragma once

#include <filesystem>
#include <json.hpp>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "voxdec/dsp.hpp"
#include "voxdec/inverse.hpp"
#include "voxdec/morph.hpp"
#include "voxdec/sampleset.hpp"
#include "voxdec/sim.hpp"
#include "voxdec/train.hpp"

namespace voxdec {

using Json = nlohmann::json;

enum class Structurals { subject, template_grid, subject_to_template };
Structurals structurals_from_string(const std::string& s);
std::string to_string(Structurals s);

struct DatasetScenarioConfig {
    std::string id;
    std::string layout_id;
    int n_sensors = 48;
    double shell_radius_mm = 91.0;
    SplitPlan::Mode split_mode = SplitPlan::Mode::inter_subject;
    int n_subjects = 5;
    int sessions_per_subject = 1;
    int train_subjects = 3, val_subjects = 1, test_subjects = 1;  // inter-subject
    int train_sessions = 2, val_sessions = 1, test_sessions = 1;  // single-subject
    double session_duration_s = 150.0;
    double raw_rate_hz = 100.0;
    double speech_fraction = 0.45;
    double mean_segment_s = 3.0;
    std::vector<std::string> lateralization = {"right"};  // cycled per subject
    double distortion_scale = 0.08;
    Structurals structurals = Structurals::subject_to_template;
};

struct FamilyTrainConfig {
    int hidden = 0;
    long target_params = 0;
    double lr = 1e-3;
    int batch_size = 128;
    int max_epochs = 15;
    int patience = 5;
    double min_delta = 1e-4;
    double dropout = 0.1;
    double weight_decay = 1e-4;
};

struct ScenarioConfig {
    std::string name = "paper_final";
    std::uint64_t seed = 7;
    // anatomy (Table-1-style defaults)
    double voxel_size_mm = 15.0;
    double head_radius_mm = 75.0;
    int atlas_regions = 10;
    double unassigned_fraction = 1.0 / 3.0;
    // response
    int response_regions = 1;
    double evoked_amplitude = 1.5;
    double sustained_amplitude = 1.0;
    double peak_s = 0.25;
    NoiseConfig noise;
    PreprocConfig preproc;
    // source reconstruction
    InverseMethod method = InverseMethod::min_norm;
    double snr = 3.0;
    CovForm cov_form = CovForm::diagonal;
    VoxelType voxel_type = VoxelType::vec;
    std::string dimred = "none";  // none | pca1 | pca2 | pca3 | parcels
    std::vector<DatasetScenarioConfig> datasets;
    // training
    int n_seeds = 3;
    std::map<std::string, FamilyTrainConfig> train;  // keyed by family name
    // combined-dataset experiment
    std::vector<std::string> combined_subjects = {"b01"};
    int combined_sessions = 1;

    const FamilyTrainConfig& family_cfg(Family f) const;
};

ScenarioConfig scenario_from_json(const Json& j);
Json scenario_to_json(const ScenarioConfig& cfg);

// Built-in configurations.
Json default_config_json();                 // paper-final parameter values
Json preset_config(const std::string& name);  // paper_final | paper_search_space | desk | desk_tiny
Json load_config_file(const std::filesystem::path& path);
void apply_override(Json& config, const std::string& key_equals_value);

// --- built scenario -----------------------------------------------------------

struct SessionData {
    SessionKey key;
    SensorRecording preprocessed;   // standardized sensor recording
    SessionFeatures sensor;
    SessionFeatures source_native;    // grid per dataset structurals
    SessionFeatures source_template;  // always on the template grid
};

struct SubjectScenarioData {
    std::string id;
    Anatomy anatomy;        // the subject's own anatomy
    Anatomy recon_anatomy;  // anatomy the inverse operator lives on
    InverseOperator op;
    std::vector<SessionData> sessions;
};

struct DatasetScenario {
    DatasetScenarioConfig cfg;
    SensorArray sensors;
    std::vector<SubjectScenarioData> subjects;

    const SubjectScenarioData& subject(const std::string& id) const;
};

struct BuiltScenario {
    ScenarioConfig cfg;
    Anatomy template_anatomy;
    std::shared_ptr<const GridLayout> template_grid;
    std::vector<int> response_region_ids;  // on the template atlas
    std::vector<DatasetScenario> datasets;

    const DatasetScenario& dataset(const std::string& id) const;
    std::shared_ptr<const GridLayout> subject_grid(const std::string& dataset_id,
                                                   const std::string& subject_id) const;

  private:
    friend BuiltScenario build_scenario(const ScenarioConfig&, const std::filesystem::path&, bool);
    mutable std::map<std::string, std::shared_ptr<const GridLayout>> grid_cache_;
};

enum class PipelineStage { simulate, preprocess, reconstruct, assemble };
PipelineStage stage_from_string(const std::string& s);

// Runs the full pipeline with per-session tensor caching under cache_root.
// force recomputes everything, ignoring existing cache entries.
BuiltScenario build_scenario(const ScenarioConfig& cfg, const std::filesystem::path& cache_root,
                             bool force = false);

// Runs the pipeline up to a stage for its caching side effects; returns the
// number of sessions processed (cache hits included).
int run_pipeline_stage(const ScenarioConfig& cfg, PipelineStage stage,
                       const std::filesystem::path& cache_root, bool force);

// --- split plans ----------------------------------------------------------------

SplitPlan inter_subject_plan(const DatasetScenario& ds);
SplitPlan single_subject_plan(const DatasetScenario& ds, const std::string& subject_id);

std::map<std::string, SampleSet> sample_sets_inter(const BuiltScenario& sc, const std::string& dataset_id,
                                                   Representation repr);
std::map<std::string, SampleSet> sample_sets_single(const BuiltScenario& sc, const std::string& dataset_id,
                                                    const std::string& subject_id, Representation repr);
// dataset A training plus the first combined sessions of the configured
// dataset-B subjects, all on the template grid; validation/test stay fixed.
std::map<std::string, SampleSet> sample_sets_combined(const BuiltScenario& sc, const std::string& id_a,
                                                      const std::string& id_b);

// Cache root resolution: explicit path, else VOXDEC_CACHE_DIR, else ./cache.
std::filesystem::path resolve_cache_root(const std::string& cli_value = "");

}  // namespace voxdec
