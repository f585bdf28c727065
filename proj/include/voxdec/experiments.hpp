#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "voxdec/report.hpp"
#include "voxdec/scenario.hpp"

namespace voxdec {

struct ExperimentOptions {
    int n_seeds = 0;          // > 0 overrides the scenario's n_seeds
    std::uint64_t seed = 1;   // base seed for model training
    int workers = 1;          // parallel workers over independent seeds
};

// Desk-scale reproductions of the paper-style experiments. Trained models are
// cached by (dataset, family, representation, augmentation) so experiments
// that share baselines reuse them.
class Experiments {
  public:
    Experiments(const BuiltScenario& sc, ExperimentOptions opt);

    Report compare_spaces();
    Report inductive_bias();
    Report augmentations();
    Report region_masking();
    Report cross_dataset();
    Report combined();

    Report run(const std::string& name);
    static std::vector<std::string> names();

    struct Runs {
        std::vector<double> val;
        std::vector<double> test;
        std::vector<std::shared_ptr<Model>> models;
    };

    const Runs& inter_runs(const std::string& dataset_id, Family family, Representation repr,
                           const AugmentConfig& aug = {});
    const Runs& single_runs(const std::string& dataset_id, const std::string& subject_id, Family family,
                            Representation repr);
    const Runs& combined_runs(Family family);

    // dataset-B test sessions on the template grid; subject_index -1 unless an
    // embedding slot is given.
    SampleSet cross_dataset_test_set(const std::string& dataset_id, const std::string& subject_id,
                                     int subject_embedding_index = -1) const;
    // dataset-A test subjects morphed into a dataset-B subject's anatomy.
    SampleSet to_subject_test_set(const std::string& id_a, const std::string& id_b,
                                  const std::string& b_subject) const;

    // Throws InputError when the sensor layouts differ (fixed-domain models).
    void check_sensor_cross_dataset(const std::string& from_id, const std::string& to_id) const;

    const std::map<std::string, SampleSet>& inter_sets(const std::string& dataset_id, Representation repr);
    const BuiltScenario& scenario() const { return sc_; }
    int n_seeds() const { return n_seeds_; }

    // evaluation helper with optional region masking (source sets)
    double eval(Model& model, const SampleSet& set, const std::vector<int>& masked_voxels = {}) const;

    // resolved model spec for a family on a given training set
    ModelSpec spec_for(Family family, const SampleSet& train_set) const { return make_spec(family, train_set); }

  private:
    ModelSpec make_spec(Family family, const SampleSet& train_set) const;
    TrainConfig make_train_config(Family family, std::uint64_t seed) const;
    Runs train_runs(const std::string& tag, Family family,
                    const std::map<std::string, SampleSet>& sets, const AugmentConfig& aug);
    nlohmann::json base_provenance(const std::string& experiment) const;

    const BuiltScenario& sc_;
    ExperimentOptions opt_;
    int n_seeds_ = 3;
    std::map<std::string, Runs> runs_;
    std::map<std::string, std::map<std::string, SampleSet>> sets_;
};

}  // namespace voxdec
