#include "voxdec/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <thread>

#include "voxdec/augment.hpp"
#include "voxdec/cache.hpp"
#include "voxdec/graph.hpp"

namespace voxdec {

Experiments::Experiments(const BuiltScenario& sc, ExperimentOptions opt) : sc_(sc), opt_(opt) {
    n_seeds_ = opt.n_seeds > 0 ? opt.n_seeds : sc.cfg.n_seeds;
}

std::vector<std::string> Experiments::names() {
    return {"compare_spaces", "inductive_bias", "augmentations", "region_masking", "cross_dataset",
            "combined"};
}

Report Experiments::run(const std::string& name) {
    if (name == "compare_spaces") return compare_spaces();
    if (name == "inductive_bias") return inductive_bias();
    if (name == "augmentations") return augmentations();
    if (name == "region_masking") return region_masking();
    if (name == "cross_dataset") return cross_dataset();
    if (name == "combined") return combined();
    std::string known;
    for (const auto& n : names()) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("unknown experiment '" + name + "'; valid names: " + known);
}

const std::map<std::string, SampleSet>& Experiments::inter_sets(const std::string& dataset_id,
                                                                Representation repr) {
    const std::string key = dataset_id + "/" + to_string(repr);
    auto it = sets_.find(key);
    if (it == sets_.end()) it = sets_.emplace(key, sample_sets_inter(sc_, dataset_id, repr)).first;
    return it->second;
}

ModelSpec Experiments::make_spec(Family family, const SampleSet& train_set) const {
    const FamilyTrainConfig& fam = sc_.cfg.family_cfg(family);
    ModelSpec spec;
    spec.family = family;
    spec.hidden = fam.hidden;
    spec.target_params = fam.target_params;
    spec.dropout = fam.dropout;
    int max_index = -1;
    for (int s : train_set.subject_index) max_index = std::max(max_index, s);
    spec.n_subjects = max_index + 1;

    switch (family) {
        case Family::logistic:
        case Family::mlp:
            spec.input_dim = static_cast<int>(train_set.features.cols());
            break;
        case Family::cnn_se: {
            if (train_set.repr != Representation::source || !train_set.grid)
                throw ConfigError("cnn_se needs source-space samples with a grid");
            spec.grid_dims = train_set.grid->dims;
            break;
        }
        case Family::gat: {
            if (train_set.repr == Representation::source) {
                if (!train_set.grid) throw ConfigError("gat needs a grid for source samples");
                spec.graph = std::make_shared<GraphSpec>(build_voxel_graph(*train_set.grid));
                spec.node_features = 6;
            } else {
                if (train_set.sensor_positions.rows() == 0)
                    throw ConfigError("gat needs sensor positions for sensor samples");
                spec.graph = std::make_shared<GraphSpec>(build_sensor_graph(train_set.sensor_positions));
                spec.node_features = 4;
            }
            break;
        }
    }
    return spec;
}

TrainConfig Experiments::make_train_config(Family family, std::uint64_t seed) const {
    const FamilyTrainConfig& fam = sc_.cfg.family_cfg(family);
    TrainConfig cfg;
    cfg.batch_size = fam.batch_size;
    cfg.lr = fam.lr;
    cfg.weight_decay = fam.weight_decay;
    cfg.max_epochs = fam.max_epochs;
    cfg.patience = fam.patience;
    cfg.min_delta = fam.min_delta;
    cfg.seed = seed;
    return cfg;
}

Experiments::Runs Experiments::train_runs(const std::string& tag, Family family,
                                          const std::map<std::string, SampleSet>& sets,
                                          const AugmentConfig& aug) {
    Runs runs;
    const SampleSet& train = sets.at("train");
    const SampleSet& val = sets.at("val");
    const SampleSet& test = sets.at("test");
    const ModelSpec spec = make_spec(family, train);
    runs.val.resize(static_cast<std::size_t>(n_seeds_));
    runs.test.resize(static_cast<std::size_t>(n_seeds_));
    runs.models.resize(static_cast<std::size_t>(n_seeds_));

    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto run_seed = [&](int s) {
        try {
            const std::uint64_t seed = Rng::derive(opt_.seed, tag, static_cast<std::uint64_t>(s));
            TrainResult r = train_model(spec, train, val, make_train_config(family, seed), aug);
            runs.val[static_cast<std::size_t>(s)] = r.history.best_val;
            runs.test[static_cast<std::size_t>(s)] = evaluate_balanced_accuracy(*r.model, test);
            runs.models[static_cast<std::size_t>(s)] = std::move(r.model);
        } catch (...) {
            std::lock_guard<std::mutex> lock(failure_mutex);
            if (!failure) failure = std::current_exception();
        }
    };

    const int workers = std::max(1, std::min(opt_.workers, n_seeds_));
    if (workers == 1) {
        for (int s = 0; s < n_seeds_; ++s) run_seed(s);
    } else {
        std::atomic<int> next{0};
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (int s = next.fetch_add(1); s < n_seeds_; s = next.fetch_add(1)) run_seed(s);
            });
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);
    return runs;
}

const Experiments::Runs& Experiments::inter_runs(const std::string& dataset_id, Family family,
                                                 Representation repr, const AugmentConfig& aug) {
    const std::string key = "inter/" + dataset_id + "/" + to_string(family) + "/" + to_string(repr) +
                            "/" + to_string(aug.kind) + "/" + format_double(aug.param, 3);
    auto it = runs_.find(key);
    if (it != runs_.end()) return it->second;
    const auto& sets = inter_sets(dataset_id, repr);
    return runs_.emplace(key, train_runs(key, family, sets, aug)).first->second;
}

const Experiments::Runs& Experiments::single_runs(const std::string& dataset_id,
                                                  const std::string& subject_id, Family family,
                                                  Representation repr) {
    const std::string key =
        "single/" + dataset_id + "/" + subject_id + "/" + to_string(family) + "/" + to_string(repr);
    auto it = runs_.find(key);
    if (it != runs_.end()) return it->second;
    const auto sets = sample_sets_single(sc_, dataset_id, subject_id, repr);
    return runs_.emplace(key, train_runs(key, family, sets, AugmentConfig{})).first->second;
}

const Experiments::Runs& Experiments::combined_runs(Family family) {
    const std::string key = "combined/" + to_string(family);
    auto it = runs_.find(key);
    if (it != runs_.end()) return it->second;
    const auto sets = sample_sets_combined(sc_, "A", "B");
    return runs_.emplace(key, train_runs(key, family, sets, AugmentConfig{})).first->second;
}

SampleSet Experiments::cross_dataset_test_set(const std::string& dataset_id,
                                              const std::string& subject_id,
                                              int subject_embedding_index) const {
    const DatasetScenario& ds = sc_.dataset(dataset_id);
    const auto& sub = ds.subject(subject_id);
    const int first_test = ds.cfg.split_mode == SplitPlan::Mode::single_subject
                               ? ds.cfg.train_sessions + ds.cfg.val_sessions
                               : 0;
    SampleSet set;
    set.split = "test";
    set.repr = Representation::source;
    set.grid = sc_.template_grid;
    Eigen::Index total = 0;
    for (std::size_t j = static_cast<std::size_t>(first_test); j < sub.sessions.size(); ++j)
        total += sub.sessions[j].source_template.features.cols();
    if (total == 0) throw InputError("subject " + subject_id + " has no test sessions");
    set.features.resize(total, sub.sessions.front().source_template.features.rows());
    set.labels.resize(total);
    set.subject_index.assign(static_cast<std::size_t>(total), subject_embedding_index);
    Eigen::Index row = 0;
    for (std::size_t j = static_cast<std::size_t>(first_test); j < sub.sessions.size(); ++j) {
        const auto& f = sub.sessions[j].source_template;
        for (Eigen::Index t = 0; t < f.features.cols(); ++t, ++row) {
            set.features.row(row) = f.features.col(t).transpose();
            set.labels(row) = f.labels[static_cast<std::size_t>(t)];
        }
    }
    return set;
}

SampleSet Experiments::to_subject_test_set(const std::string& id_a, const std::string& id_b,
                                           const std::string& b_subject) const {
    const DatasetScenario& a = sc_.dataset(id_a);
    const DatasetScenario& b = sc_.dataset(id_b);
    const auto& target = b.subject(b_subject);
    const auto target_grid = sc_.subject_grid(id_b, b_subject);

    SampleSet set;
    set.split = "test";
    set.repr = Representation::source;
    set.grid = target_grid;

    std::vector<Eigen::MatrixXd> blocks;
    std::vector<std::uint8_t> labels;
    const int first_test = a.cfg.train_subjects + a.cfg.val_subjects;
    for (int i = first_test; i < a.cfg.n_subjects; ++i) {
        const auto& sub = a.subjects[static_cast<std::size_t>(i)];
        const MorphOperator morph = build_morph(sub.recon_anatomy, target.recon_anatomy);
        for (const auto& sd : sub.sessions) {
            const SourceEstimate est = apply_inverse(sub.op, sd.preprocessed, VoxelType::vec);
            const SourceEstimate moved = apply_morph(morph, est);
            blocks.push_back(standardize(moved.data).data);
            labels.insert(labels.end(), sd.preprocessed.stimulus.labels.begin(),
                          sd.preprocessed.stimulus.labels.end());
        }
    }
    if (blocks.empty()) throw InputError("dataset " + id_a + " has no test subjects");
    Eigen::Index total = 0;
    for (const auto& bl : blocks) total += bl.cols();
    set.features.resize(total, blocks.front().rows());
    set.labels.resize(total);
    set.subject_index.assign(static_cast<std::size_t>(total), -1);
    Eigen::Index row = 0;
    for (const auto& bl : blocks)
        for (Eigen::Index t = 0; t < bl.cols(); ++t, ++row) set.features.row(row) = bl.col(t).transpose();
    for (Eigen::Index i = 0; i < total; ++i) set.labels(i) = labels[static_cast<std::size_t>(i)];
    return set;
}

void Experiments::check_sensor_cross_dataset(const std::string& from_id, const std::string& to_id) const {
    const auto& from = sc_.dataset(from_id);
    const auto& to = sc_.dataset(to_id);
    if (from.cfg.n_sensors != to.cfg.n_sensors || from.cfg.layout_id != to.cfg.layout_id)
        throw InputError("sensor layouts differ between datasets " + from_id + " (" +
                         std::to_string(from.cfg.n_sensors) + " channels, layout " + from.cfg.layout_id +
                         ") and " + to_id + " (" + std::to_string(to.cfg.n_sensors) + " channels, layout " +
                         to.cfg.layout_id + "); fixed-domain sensor models cannot cross datasets");
}

double Experiments::eval(Model& model, const SampleSet& set, const std::vector<int>& masked_voxels) const {
    return evaluate_balanced_accuracy(model, set, masked_voxels);
}

nlohmann::json Experiments::base_provenance(const std::string& experiment) const {
    nlohmann::json j;
    j["experiment"] = experiment;
    j["config"] = scenario_to_json(sc_.cfg);
    j["n_seeds"] = n_seeds_;
    j["base_seed"] = opt_.seed;
    j["content_hash"] = param_hash(scenario_to_json(sc_.cfg).dump() + "/" + std::to_string(opt_.seed));
    return j;
}

namespace {

std::string stat_cell(const std::vector<double>& runs) {
    const RunStats s = report_stats(runs);
    return format_accuracy(s.mean, s.stddev.value_or(0.0), s.n);
}

}  // namespace

Report Experiments::compare_spaces() {
    Report report;
    report.name = "compare_spaces";
    report.columns = {"setting", "representation", "family", "seeds", "val", "test"};
    report.provenance = base_provenance(report.name);

    for (Representation repr : {Representation::sensor, Representation::source}) {
        const Runs& runs = inter_runs("A", Family::mlp, repr);
        report.add_row({"inter:A", to_string(repr), "mlp", std::to_string(n_seeds_), stat_cell(runs.val),
                        stat_cell(runs.test)});
        report.provenance["raw"]["inter/" + to_string(repr)] = runs.test;
    }
    for (const auto& sub : sc_.dataset("B").subjects) {
        for (Representation repr : {Representation::sensor, Representation::source}) {
            const Runs& runs = single_runs("B", sub.id, Family::mlp, repr);
            report.add_row({"single:B/" + sub.id, to_string(repr), "mlp", std::to_string(n_seeds_),
                            stat_cell(runs.val), stat_cell(runs.test)});
            report.provenance["raw"]["single/" + sub.id + "/" + to_string(repr)] = runs.test;
        }
    }
    const double poi = probability_of_improvement(inter_runs("A", Family::mlp, Representation::sensor).test,
                                                  inter_runs("A", Family::mlp, Representation::source).test);
    report.add_row({"inter:A", "P(sensor > source)", "mlp", std::to_string(n_seeds_), "",
                    format_double(poi)});
    return report;
}

Report Experiments::inductive_bias() {
    Report report;
    report.name = "inductive_bias";
    report.columns = {"representation", "family", "seeds", "val", "test"};
    report.provenance = base_provenance(report.name);

    const std::vector<std::pair<Representation, Family>> cells = {
        {Representation::sensor, Family::mlp}, {Representation::sensor, Family::gat},
        {Representation::source, Family::mlp}, {Representation::source, Family::cnn_se},
        {Representation::source, Family::gat}};
    for (const auto& [repr, family] : cells) {
        const Runs& runs = inter_runs("A", family, repr);
        report.add_row({to_string(repr), to_string(family), std::to_string(n_seeds_), stat_cell(runs.val),
                        stat_cell(runs.test)});
        report.provenance["raw"][to_string(repr) + "/" + to_string(family)] = runs.test;
    }
    return report;
}

Report Experiments::augmentations() {
    Report report;
    report.name = "augmentations";
    report.columns = {"augmentation", "sensor mlp", "source mlp", "source cnn_se"};
    report.provenance = base_provenance(report.name);

    struct Row {
        std::string label;
        AugmentConfig aug;
        bool sensor_ok;
    };
    const std::vector<Row> rows = {
        {"baseline", {}, true},
        {"mixup a=1", {AugmentConfig::Kind::mixup, 1.0}, true},
        {"mixup a=0.1", {AugmentConfig::Kind::mixup, 0.1}, true},
        {"slice dropout p=0.05", {AugmentConfig::Kind::slice_dropout, 0.05}, false},
        {"slice dropout p=0.1", {AugmentConfig::Kind::slice_dropout, 0.1}, false},
        {"cube mask p=0.5", {AugmentConfig::Kind::cube_mask, 0.5}, false},
    };

    std::map<std::string, std::vector<std::vector<double>>> per_column;  // column -> rows of test accs
    for (const auto& row : rows) {
        std::vector<std::string> cells{row.label};
        // sensor mlp
        if (row.sensor_ok) {
            const Runs& r = inter_runs("A", Family::mlp, Representation::sensor, row.aug);
            cells.push_back(stat_cell(r.test));
            per_column["sensor mlp"].push_back(r.test);
        } else {
            cells.push_back("-");
        }
        const Runs& rm = inter_runs("A", Family::mlp, Representation::source, row.aug);
        cells.push_back(stat_cell(rm.test));
        per_column["source mlp"].push_back(rm.test);
        const Runs& rc = inter_runs("A", Family::cnn_se, Representation::source, row.aug);
        cells.push_back(stat_cell(rc.test));
        per_column["source cnn_se"].push_back(rc.test);
        report.add_row(std::move(cells));
        report.provenance["raw"][row.label] = {{"source mlp", rm.test}, {"source cnn_se", rc.test}};
    }

    // probability of improvement of the best augmentation over the baseline
    std::vector<std::string> poi_row{"P(best aug > baseline)"};
    for (const std::string col : {"sensor mlp", "source mlp", "source cnn_se"}) {
        const auto& column = per_column[col];
        if (column.empty()) {
            poi_row.push_back("-");
            continue;
        }
        const std::vector<double>& baseline = column.front();
        double best_mean = -1.0;
        const std::vector<double>* best = nullptr;
        for (std::size_t i = 1; i < column.size(); ++i) {
            const double mean = report_stats(column[i]).mean;
            if (mean > best_mean) {
                best_mean = mean;
                best = &column[i];
            }
        }
        poi_row.push_back(best ? format_double(probability_of_improvement(*best, baseline)) : "-");
    }
    report.add_row(std::move(poi_row));
    return report;
}

Report Experiments::region_masking() {
    Report report;
    report.name = "region_masking";
    report.columns = {"region", "voxels", "masked voxels", "source mlp", "source cnn_se"};
    report.provenance = base_provenance(report.name);

    const Runs& mlp = inter_runs("A", Family::mlp, Representation::source);
    const Runs& cnn = inter_runs("A", Family::cnn_se, Representation::source);
    const SampleSet& test = inter_sets("A", Representation::source).at("test");
    const Anatomy& anatomy = sc_.template_anatomy;

    auto eval_all = [&](const Runs& runs, const std::vector<int>& mask) {
        std::vector<double> accs;
        for (const auto& m : runs.models) accs.push_back(eval(*m, test, mask));
        return accs;
    };

    const std::vector<double> base_mlp = eval_all(mlp, {});
    const std::vector<double> base_cnn = eval_all(cnn, {});
    report.add_row({"baseline", "-", "0", stat_cell(base_mlp), stat_cell(base_cnn)});
    report.provenance["raw"]["baseline"] = {{"source mlp", base_mlp}, {"source cnn_se", base_cnn}};
    report.provenance["plot_data"]["baseline"] = {{"mlp_mean", report_stats(base_mlp).mean},
                                                  {"cnn_mean", report_stats(base_cnn).mean}};

    for (int region = 1; region <= anatomy.n_regions; ++region) {
        const std::string label = "region " + std::to_string(region);
        std::vector<int> mask;
        try {
            mask = region_mask_voxels(anatomy, region, 1);
        } catch (const InputError& e) {
            report.add_row({label, std::to_string(anatomy.region_voxels(region).size()), "skipped", "-", "-"});
            report.provenance["skipped"][label] = e.what();
            continue;
        }
        const std::vector<double> am = eval_all(mlp, mask);
        const std::vector<double> ac = eval_all(cnn, mask);
        report.add_row({label, std::to_string(anatomy.region_voxels(region).size()),
                        std::to_string(mask.size()), stat_cell(am), stat_cell(ac)});
        report.provenance["raw"][label] = {{"source mlp", am}, {"source cnn_se", ac}};
        report.provenance["plot_data"][label] = {{"mlp_mean", report_stats(am).mean},
                                                 {"mlp_std", report_stats(am).stddev.value_or(0.0)},
                                                 {"cnn_mean", report_stats(ac).mean},
                                                 {"cnn_std", report_stats(ac).stddev.value_or(0.0)}};
    }
    report.provenance["response_regions"] = sc_.response_region_ids;
    return report;
}

Report Experiments::cross_dataset() {
    Report report;
    report.name = "cross_dataset";
    report.columns = {"direction", "subject", "family", "seeds", "test"};
    report.provenance = base_provenance(report.name);

    // inter-subject models from A evaluated zero-shot on B subjects, morphed
    // into the template grid
    for (Family family : {Family::mlp, Family::cnn_se}) {
        const Runs& runs = inter_runs("A", family, Representation::source);
        for (const auto& sub : sc_.dataset("B").subjects) {
            const SampleSet set = cross_dataset_test_set("B", sub.id, -1);
            std::vector<double> accs;
            for (const auto& m : runs.models) accs.push_back(eval(*m, set));
            report.add_row({"A->B", sub.id, to_string(family), std::to_string(n_seeds_), stat_cell(accs)});
            report.provenance["raw"]["A->B/" + sub.id + "/" + to_string(family)] = accs;
        }
    }

    // single-subject models from B evaluated on A test subjects morphed into
    // the B subject's anatomy
    for (const auto& sub : sc_.dataset("B").subjects) {
        const Runs& runs = single_runs("B", sub.id, Family::mlp, Representation::source);
        const SampleSet set = to_subject_test_set("A", "B", sub.id);
        std::vector<double> accs;
        for (const auto& m : runs.models) accs.push_back(eval(*m, set));
        report.add_row({"B->A", sub.id, "mlp", std::to_string(n_seeds_), stat_cell(accs)});
        report.provenance["raw"]["B->A/" + sub.id + "/mlp"] = accs;
    }

    // sensor-space models are fixed-domain: layouts differ, so the request is
    // refused with a structured note
    try {
        check_sensor_cross_dataset("A", "B");
        report.add_row({"A->B", "-", "sensor mlp", "-", "layouts match (unexpected)"});
    } catch (const InputError& e) {
        report.add_row({"A->B", "-", "sensor mlp", "-", "refused: incompatible sensor layouts"});
        report.provenance["sensor_refusal"] = e.what();
    }
    return report;
}

Report Experiments::combined() {
    Report report;
    report.name = "combined";
    report.columns = {"training data", "family", "evaluation", "seeds", "test"};
    report.provenance = base_provenance(report.name);

    const auto combined_sets = sample_sets_combined(sc_, "A", "B");
    // embedding slots of the combined B subjects
    std::map<std::string, int> b_index;
    {
        const SplitPlan plan = inter_subject_plan(sc_.dataset("A"));
        int next = plan.n_subjects();
        for (const auto& id : sc_.cfg.combined_subjects) b_index[id] = next++;
    }

    for (Family family : {Family::mlp, Family::cnn_se}) {
        const Runs& single = inter_runs("A", family, Representation::source);
        const Runs& comb = combined_runs(family);

        report.add_row({"A only", to_string(family), "A test", std::to_string(n_seeds_),
                        stat_cell(single.test)});
        std::vector<double> comb_a;
        for (const auto& m : comb.models)
            comb_a.push_back(eval(*m, inter_sets("A", Representation::source).at("test")));
        report.add_row({"A + B sessions", to_string(family), "A test", std::to_string(n_seeds_),
                        stat_cell(comb_a)});
        report.provenance["raw"][to_string(family) + "/A-test/single"] = single.test;
        report.provenance["raw"][to_string(family) + "/A-test/combined"] = comb_a;

        // per-B-subject evaluation, including subjects held out of the
        // combined training set
        std::vector<double> single_b_pooled(static_cast<std::size_t>(n_seeds_), 0.0);
        std::vector<double> comb_b_pooled(static_cast<std::size_t>(n_seeds_), 0.0);
        const auto& b_subjects = sc_.dataset("B").subjects;
        for (const auto& sub : b_subjects) {
            const int emb = b_index.count(sub.id) ? b_index.at(sub.id) : -1;
            const SampleSet unknown_set = cross_dataset_test_set("B", sub.id, -1);
            const SampleSet known_set = emb >= 0 ? cross_dataset_test_set("B", sub.id, emb) : unknown_set;
            std::vector<double> single_acc, comb_acc;
            for (int s = 0; s < n_seeds_; ++s) {
                single_acc.push_back(eval(*single.models[static_cast<std::size_t>(s)], unknown_set));
                comb_acc.push_back(eval(*comb.models[static_cast<std::size_t>(s)], known_set));
                single_b_pooled[static_cast<std::size_t>(s)] += single_acc.back() / static_cast<double>(b_subjects.size());
                comb_b_pooled[static_cast<std::size_t>(s)] += comb_acc.back() / static_cast<double>(b_subjects.size());
            }
            const std::string held = b_index.count(sub.id) ? "" : " (held out)";
            report.add_row({"A only", to_string(family), "B test " + sub.id + held,
                            std::to_string(n_seeds_), stat_cell(single_acc)});
            report.add_row({"A + B sessions", to_string(family), "B test " + sub.id + held,
                            std::to_string(n_seeds_), stat_cell(comb_acc)});
            report.provenance["raw"][to_string(family) + "/B-test/" + sub.id + "/single"] = single_acc;
            report.provenance["raw"][to_string(family) + "/B-test/" + sub.id + "/combined"] = comb_acc;
        }
        const double poi = probability_of_improvement(comb_b_pooled, single_b_pooled);
        report.add_row({"P(combined > single)", to_string(family), "B test (pooled)",
                        std::to_string(n_seeds_), format_double(poi)});
        report.provenance["poi"][to_string(family)] = poi;
    }
    return report;
}

}  // namespace voxdec
