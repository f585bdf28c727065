#pragma once

#include <memory>
#include <vector>

#include "voxdec/augment.hpp"
#include "voxdec/models.hpp"
#include "voxdec/sampleset.hpp"
#include "voxdec/stats.hpp"

namespace voxdec {

struct TrainConfig {
    int batch_size = 128;
    double lr = 1e-5;
    double weight_decay = 0.0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int max_epochs = 100;
    int patience = 10;
    double min_delta = 1e-4;  // 0.01% validation balanced accuracy
    std::uint64_t seed = 0;
};

struct AugmentConfig {
    enum class Kind { none, mixup, slice_dropout, cube_mask };
    Kind kind = Kind::none;
    double param = 0.0;  // mixup alpha or masking probability

    static AugmentConfig none() { return {}; }
};
AugmentConfig::Kind augment_kind_from_string(const std::string& s);
std::string to_string(AugmentConfig::Kind k);

struct TrainHistory {
    std::vector<double> train_loss;
    std::vector<double> val_balacc;
    int best_epoch = -1;   // 0-based index into val_balacc
    double best_val = 0.0;
    bool aborted = false;  // non-finite loss
};

struct TrainResult {
    std::unique_ptr<Model> model;  // parameters of the best-validation epoch
    TrainHistory history;
};

// Mini-batch AdamW with shuffling, per-epoch validation balanced accuracy,
// early stopping, and best-epoch checkpointing. Augmentation applies to
// training batches only.
TrainResult train_model(const ModelSpec& spec, const SampleSet& train, const SampleSet& val,
                        const TrainConfig& cfg, const AugmentConfig& aug = {});

// Balanced accuracy of a trained model on a sample set (optionally with a set
// of masked voxels zeroed in the features).
double evaluate_balanced_accuracy(Model& model, const SampleSet& set,
                                  const std::vector<int>& masked_voxels = {});

// --- random hyperparameter search --------------------------------------------

struct SearchSpace {
    std::vector<double> dropout = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
    double lr_log10_lo = -7.0, lr_log10_hi = -3.0;
    std::vector<int> batch_sizes = {16, 32, 64, 128, 256, 512, 1024};
    double wd_log10_lo = -5.0, wd_log10_hi = -0.5;
    int max_epochs = 100;
    int patience = 10;
    double min_delta = 1e-4;
};

struct SearchTrial {
    int index = 0;
    double dropout = 0.0;
    double lr = 0.0;
    int batch_size = 0;
    double weight_decay = 0.0;
    double val_balacc = 0.0;
};

SearchTrial draw_trial(const SearchSpace& space, int index, std::uint64_t seed);

struct SearchResult {
    std::vector<SearchTrial> trials;
    int best_index = -1;

    const SearchTrial& best() const { return trials.at(static_cast<std::size_t>(best_index)); }
};

SearchResult random_search(const SearchSpace& space, const ModelSpec& spec, const SampleSet& train,
                           const SampleSet& val, int n_trials, std::uint64_t seed,
                           const AugmentConfig& aug = {});

}  // namespace voxdec
