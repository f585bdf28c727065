#include "voxdec/train.hpp"

#include <algorithm>
#include <cmath>

namespace voxdec {

AugmentConfig::Kind augment_kind_from_string(const std::string& s) {
    if (s == "none") return AugmentConfig::Kind::none;
    if (s == "mixup") return AugmentConfig::Kind::mixup;
    if (s == "slice_dropout") return AugmentConfig::Kind::slice_dropout;
    if (s == "cube_mask") return AugmentConfig::Kind::cube_mask;
    throw ConfigError("unknown augmentation: " + s + " (expected none|mixup|slice_dropout|cube_mask)");
}

std::string to_string(AugmentConfig::Kind k) {
    switch (k) {
        case AugmentConfig::Kind::none: return "none";
        case AugmentConfig::Kind::mixup: return "mixup";
        case AugmentConfig::Kind::slice_dropout: return "slice_dropout";
        case AugmentConfig::Kind::cube_mask: return "cube_mask";
    }
    return "?";
}

namespace {

// Family-specific model input from flat feature rows, with optional spatial
// masking on the inscribed grid.
Eigen::MatrixXd prepare_input(const ModelSpec& spec, const SampleSet& set, Eigen::MatrixXd rows,
                              const AugmentConfig& aug, std::uint64_t aug_seed) {
    const bool spatial = aug.kind == AugmentConfig::Kind::slice_dropout ||
                         aug.kind == AugmentConfig::Kind::cube_mask;
    if (spatial && set.repr != Representation::source)
        throw ConfigError("spatial augmentations need source-space grids");
    if (spatial || spec.family == Family::cnn_se) {
        if (!set.grid) throw InputError("sample set has no grid layout");
        DenseBatch dense = inscribe_to_box(rows, *set.grid);
        if (aug.kind == AugmentConfig::Kind::slice_dropout) slice_dropout(dense, aug.param, aug_seed);
        if (aug.kind == AugmentConfig::Kind::cube_mask) cube_mask(dense, aug.param, aug_seed);
        if (spec.family == Family::cnn_se) return dense.values;
        rows = gather_from_box(dense, *set.grid);
    }
    if (spec.family == Family::gat) {
        if (set.repr == Representation::source) {
            if (!set.grid) throw InputError("sample set has no grid layout");
            return gat_voxel_features(rows, *set.grid);
        }
        if (set.sensor_positions.rows() == 0) throw InputError("sample set has no sensor positions");
        return gat_sensor_features(rows, set.sensor_positions);
    }
    return rows;
}

std::vector<int> predictions(Model& model, const SampleSet& set, const Eigen::MatrixXd& rows,
                             const std::vector<int>& subjects) {
    const Eigen::MatrixXd x = prepare_input(model.spec(), set, rows, AugmentConfig::none(), 0);
    const Eigen::VectorXd logits = model.forward(x, subjects, false, 0);
    std::vector<int> preds(static_cast<std::size_t>(logits.size()));
    for (Eigen::Index i = 0; i < logits.size(); ++i) preds[static_cast<std::size_t>(i)] = logits(i) > 0 ? 1 : 0;
    return preds;
}

}  // namespace

double evaluate_balanced_accuracy(Model& model, const SampleSet& set,
                                  const std::vector<int>& masked_voxels) {
    std::vector<int> preds;
    std::vector<int> labels;
    preds.reserve(static_cast<std::size_t>(set.size()));
    labels.reserve(static_cast<std::size_t>(set.size()));
    const Eigen::Index chunk = 1024;
    for (Eigen::Index start = 0; start < set.size(); start += chunk) {
        const Eigen::Index n = std::min(chunk, set.size() - start);
        Eigen::MatrixXd rows = set.features.middleRows(start, n);
        if (!masked_voxels.empty()) {
            if (set.repr != Representation::source)
                throw InputError("voxel masking applies to source-space sets only");
            apply_voxel_mask(rows, masked_voxels);
        }
        std::vector<int> subjects(set.subject_index.begin() + start,
                                  set.subject_index.begin() + start + n);
        const auto p = predictions(model, set, rows, subjects);
        preds.insert(preds.end(), p.begin(), p.end());
        for (Eigen::Index i = 0; i < n; ++i)
            labels.push_back(set.labels(start + i) >= 0.5 ? 1 : 0);
    }
    return balanced_accuracy(preds, labels);
}

TrainResult train_model(const ModelSpec& spec, const SampleSet& train, const SampleSet& val,
                        const TrainConfig& cfg, const AugmentConfig& aug) {
    if (train.features.cols() != val.features.cols())
        throw InputError("train and validation sets have different feature dimensions");
    if (train.size() < 1 || val.size() < 1) throw InputError("empty split");
    {
        bool has0 = false, has1 = false;
        for (Eigen::Index i = 0; i < val.size(); ++i) (val.labels(i) >= 0.5 ? has1 : has0) = true;
        if (!has0 || !has1)
            throw InputError("validation split has a single class; balanced accuracy is undefined");
    }

    TrainResult result;
    result.model = build_model(spec, Rng::derive(cfg.seed, "model-init"));
    Model& model = *result.model;

    Eigen::VectorXd best_params = model.store().params;
    double best_tracked = -1.0;  // for patience accounting (min_delta applies)
    int since_improvement = 0;

    const auto n = static_cast<int>(train.size());
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        Rng shuffle_rng(Rng::derive(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        double epoch_loss = 0.0;
        int n_batches = 0;
        bool aborted = false;
        for (int start = 0; start < n; start += cfg.batch_size) {
            const int b = std::min(cfg.batch_size, n - start);
            Eigen::MatrixXd rows(b, train.features.cols());
            Eigen::VectorXd labels(b);
            std::vector<int> subjects(static_cast<std::size_t>(b));
            for (int i = 0; i < b; ++i) {
                const int src = order[static_cast<std::size_t>(start + i)];
                rows.row(i) = train.features.row(src);
                labels(i) = train.labels(src);
                subjects[static_cast<std::size_t>(i)] = train.subject_index[static_cast<std::size_t>(src)];
            }
            const std::uint64_t batch_seed =
                Rng::derive(cfg.seed, "batch", static_cast<std::uint64_t>(epoch) * 1000003ull +
                                                   static_cast<std::uint64_t>(start));
            if (aug.kind == AugmentConfig::Kind::mixup && b >= 2)
                mixup(rows, labels, aug.param, batch_seed);
            const Eigen::MatrixXd x = prepare_input(spec, train, std::move(rows), aug, batch_seed);

            model.store().zero_grad();
            double loss;
            try {
                loss = model.loss_and_grad(x, subjects, labels, batch_seed);
            } catch (const NumericError&) {
                result.history.aborted = true;
                aborted = true;
                break;
            }
            adamw_step(model.store(), cfg.lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps);
            epoch_loss += loss;
            ++n_batches;
        }
        if (aborted) break;
        result.history.train_loss.push_back(n_batches ? epoch_loss / n_batches : 0.0);

        const double val_acc = evaluate_balanced_accuracy(model, val);
        result.history.val_balacc.push_back(val_acc);

        if (val_acc > result.history.best_val || result.history.best_epoch < 0) {
            result.history.best_val = val_acc;
            result.history.best_epoch = epoch;
            best_params = model.store().params;
        }
        if (val_acc > best_tracked + cfg.min_delta) {
            best_tracked = val_acc;
            since_improvement = 0;
        } else {
            ++since_improvement;
        }
        if (since_improvement >= cfg.patience) break;
    }

    model.store().params = best_params;
    return result;
}

SearchTrial draw_trial(const SearchSpace& space, int index, std::uint64_t seed) {
    Rng rng(Rng::derive(seed, "search-trial", static_cast<std::uint64_t>(index)));
    SearchTrial t;
    t.index = index;
    t.dropout = space.dropout[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(space.dropout.size()) - 1))];
    t.lr = std::pow(10.0, rng.uniform(space.lr_log10_lo, space.lr_log10_hi));
    t.batch_size = space.batch_sizes[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(space.batch_sizes.size()) - 1))];
    t.weight_decay = std::pow(10.0, rng.uniform(space.wd_log10_lo, space.wd_log10_hi));
    return t;
}

SearchResult random_search(const SearchSpace& space, const ModelSpec& spec, const SampleSet& train,
                           const SampleSet& val, int n_trials, std::uint64_t seed,
                           const AugmentConfig& aug) {
    if (n_trials < 1) throw ConfigError("random search needs at least one trial");
    SearchResult result;
    for (int i = 0; i < n_trials; ++i) {
        SearchTrial t = draw_trial(space, i, seed);
        ModelSpec s = spec;
        s.dropout = t.dropout;
        TrainConfig cfg;
        cfg.batch_size = t.batch_size;
        cfg.lr = t.lr;
        cfg.weight_decay = t.weight_decay;
        cfg.max_epochs = space.max_epochs;
        cfg.patience = space.patience;
        cfg.min_delta = space.min_delta;
        cfg.seed = Rng::derive(seed, "search-train", static_cast<std::uint64_t>(i));
        const TrainResult r = train_model(s, train, val, cfg, aug);
        t.val_balacc = r.history.best_val;
        result.trials.push_back(t);
        if (result.best_index < 0 ||
            t.val_balacc > result.trials[static_cast<std::size_t>(result.best_index)].val_balacc)
            result.best_index = i;
    }
    return result;
}

}  // namespace voxdec
