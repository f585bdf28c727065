#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "voxdec/rng.hpp"
#include "voxdec/train.hpp"

using namespace voxdec;

namespace {

// linearly separable 2-d blobs
SampleSet separable_set(int n, std::uint64_t seed, const std::string& split) {
    SampleSet s;
    s.split = split;
    s.repr = Representation::sensor;
    s.features.resize(n, 2);
    s.labels.resize(n);
    s.subject_index.assign(static_cast<std::size_t>(n), 0);
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        const int y = i % 2;
        s.features(i, 0) = rng.normal(y ? 2.0 : -2.0, 0.4);
        s.features(i, 1) = rng.normal(y ? -1.0 : 1.0, 0.4);
        s.labels(i) = y;
    }
    return s;
}

}  // namespace

TEST_CASE("balanced accuracy oracles") {
    CHECK(balanced_accuracy({1, 0, 1, 0}, {1, 0, 1, 0}) == 1.0);
    CHECK(balanced_accuracy({1, 0, 0, 0}, {1, 1, 0, 0}) == doctest::Approx(0.75));

    // constant predictor on imbalanced labels sits at chance
    std::vector<int> labels(100, 0);
    for (int i = 0; i < 10; ++i) labels[static_cast<std::size_t>(i)] = 1;
    const std::vector<int> constant(100, 1);
    CHECK(balanced_accuracy(constant, labels) == doctest::Approx(0.5));

    CHECK_THROWS_AS(balanced_accuracy({1, 1}, {1, 1}), InputError);

    // invariant to label-preserving permutations
    std::vector<int> preds{1, 0, 0, 1, 1};
    std::vector<int> labs{1, 1, 0, 0, 1};
    const double base = balanced_accuracy(preds, labs);
    std::swap(preds[0], preds[4]);
    std::swap(labs[0], labs[4]);
    CHECK(balanced_accuracy(preds, labs) == doctest::Approx(base));
}

TEST_CASE("probability of improvement oracles") {
    CHECK(probability_of_improvement({1, 2, 3}, {0, 0, 0}) == 1.0);
    CHECK(probability_of_improvement({1, 2, 3}, {1, 2, 3}) == 0.5);
    CHECK(probability_of_improvement({1, 3}, {2, 2}) == doctest::Approx(0.5));

    // complement identity holds exactly with the tie rule
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> a, b;
        for (int i = 0; i < 50; ++i) {
            a.push_back(std::round(rng.uniform(0.0, 10.0)));
            b.push_back(std::round(rng.uniform(0.0, 10.0)));
        }
        CHECK(probability_of_improvement(a, b) + probability_of_improvement(b, a) == 1.0);
    }
}

TEST_CASE("report stats rules") {
    const RunStats ones = report_stats({1.0, 1.0, 1.0});
    CHECK(ones.mean == 1.0);
    REQUIRE(ones.stddev.has_value());
    CHECK(*ones.stddev == 0.0);

    const RunStats two = report_stats({0.0, 1.0});
    CHECK(two.mean == doctest::Approx(0.5));
    CHECK(!two.stddev.has_value());  // +/- suppressed below 3 runs

    // hand-computed sample std on paper-style accuracies
    const std::vector<double> runs{66.33, 66.40, 67.54};
    const RunStats stats = report_stats(runs);
    const double mean = (66.33 + 66.40 + 67.54) / 3.0;
    double ss = 0.0;
    for (double r : runs) ss += (r - mean) * (r - mean);
    CHECK(stats.mean == doctest::Approx(mean).epsilon(1e-12));
    CHECK(*stats.stddev == doctest::Approx(std::sqrt(ss / 2.0)).epsilon(1e-12));
}

TEST_CASE("logistic training solves a separable problem") {
    const SampleSet train = separable_set(400, 3, "train");
    const SampleSet val = separable_set(100, 4, "val");

    ModelSpec spec;
    spec.family = Family::logistic;
    spec.input_dim = 2;
    spec.hidden = 1;
    TrainConfig cfg;
    cfg.batch_size = 32;
    cfg.lr = 0.05;
    cfg.max_epochs = 100;
    cfg.seed = 5;

    const TrainResult r = train_model(spec, train, val, cfg);
    CHECK(!r.history.aborted);
    const double train_acc = evaluate_balanced_accuracy(*r.model, train);
    CHECK(train_acc >= 0.99);
}

TEST_CASE("early stopping: frozen metric stops within patience+1 epochs") {
    // lr = 0 freezes the model, so validation accuracy never changes
    const SampleSet train = separable_set(64, 3, "train");
    const SampleSet val = separable_set(64, 4, "val");
    ModelSpec spec;
    spec.family = Family::logistic;
    spec.input_dim = 2;
    spec.hidden = 1;
    TrainConfig cfg;
    cfg.batch_size = 32;
    cfg.lr = 0.0;
    cfg.max_epochs = 100;
    cfg.patience = 10;
    cfg.seed = 5;
    const TrainResult r = train_model(spec, train, val, cfg);
    CHECK(r.history.val_balacc.size() <= 11);
}

TEST_CASE("returned model is the validation argmax checkpoint") {
    const SampleSet train = separable_set(200, 3, "train");
    const SampleSet val = separable_set(80, 4, "val");
    ModelSpec spec;
    spec.family = Family::mlp;
    spec.input_dim = 2;
    spec.hidden = 6;
    spec.n_subjects = 1;
    TrainConfig cfg;
    cfg.batch_size = 32;
    cfg.lr = 0.01;
    cfg.max_epochs = 12;
    cfg.patience = 12;
    cfg.seed = 7;
    const TrainResult r = train_model(spec, train, val, cfg);
    REQUIRE(!r.history.val_balacc.empty());
    double best = -1.0;
    for (double v : r.history.val_balacc) best = std::max(best, v);
    CHECK(r.history.best_val == doctest::Approx(best));
    // early stopping never returns a checkpoint below any earlier epoch
    CHECK(evaluate_balanced_accuracy(*r.model, val) == doctest::Approx(best));
}

TEST_CASE("single-class validation split is rejected") {
    const SampleSet train = separable_set(64, 3, "train");
    SampleSet val = separable_set(64, 4, "val");
    val.labels.setZero();
    ModelSpec spec;
    spec.family = Family::logistic;
    spec.input_dim = 2;
    spec.hidden = 1;
    CHECK_THROWS_AS(train_model(spec, train, val, TrainConfig{}), InputError);
}

TEST_CASE("search draws respect the table ranges and are deterministic") {
    const SearchSpace space;
    std::vector<double> log_lrs;
    for (int i = 0; i < 1000; ++i) {
        const SearchTrial t = draw_trial(space, i, 99);
        CHECK(t.lr >= 1e-7);
        CHECK(t.lr <= 1e-3);
        CHECK(t.weight_decay >= 1e-5);
        CHECK(t.weight_decay <= std::pow(10.0, -0.5));
        CHECK(std::count(space.dropout.begin(), space.dropout.end(), t.dropout) == 1);
        CHECK(std::count(space.batch_sizes.begin(), space.batch_sizes.end(), t.batch_size) == 1);
        log_lrs.push_back(std::log10(t.lr));
    }
    const SearchTrial again = draw_trial(space, 123, 99);
    const SearchTrial ref = draw_trial(space, 123, 99);
    CHECK(again.lr == ref.lr);
    CHECK(again.dropout == ref.dropout);
    CHECK(again.batch_size == ref.batch_size);
    CHECK(again.weight_decay == ref.weight_decay);

    // Kolmogorov-Smirnov sanity: log10(lr) uniform on [-7, -3]
    std::sort(log_lrs.begin(), log_lrs.end());
    double ks = 0.0;
    const auto n = static_cast<double>(log_lrs.size());
    for (std::size_t i = 0; i < log_lrs.size(); ++i) {
        const double cdf = (log_lrs[i] + 7.0) / 4.0;
        ks = std::max(ks, std::abs(cdf - static_cast<double>(i + 1) / n));
        ks = std::max(ks, std::abs(cdf - static_cast<double>(i) / n));
    }
    // critical value at p = 0.01 for n = 1000
    CHECK(ks < 1.63 / std::sqrt(n));
}

TEST_CASE("random search trains trials and returns the best") {
    const SampleSet train = separable_set(120, 3, "train");
    const SampleSet val = separable_set(60, 4, "val");
    ModelSpec spec;
    spec.family = Family::logistic;
    spec.input_dim = 2;
    spec.hidden = 1;
    SearchSpace space;
    space.max_epochs = 5;
    const SearchResult r = random_search(space, spec, train, val, 4, 11);
    REQUIRE(r.trials.size() == 4);
    for (const auto& t : r.trials) CHECK(r.best().val_balacc >= t.val_balacc);

    const SearchResult r2 = random_search(space, spec, train, val, 4, 11);
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(r.trials[i].val_balacc == r2.trials[i].val_balacc);  // fixed seed, identical sequence
}
