#include "voxdec/cli.hpp"

#include <CLI11.hpp>
#include <fstream>
#include <iostream>

#include "voxdec/cache.hpp"
#include "voxdec/experiments.hpp"
#include "voxdec/scenario.hpp"

namespace voxdec::cli {

namespace {

struct CommonOpts {
    std::string config_file;
    std::string preset;
    std::vector<std::string> overrides;
    std::string cache_dir;
    std::string out_dir = "reports";
    bool force = false;
    int workers = 1;
    int seeds = 0;
    std::uint64_t seed = 1;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("-c,--config", opts.config_file, "JSON scenario config file");
    cmd->add_option("--preset", opts.preset, "built-in preset: paper_final|desk|desk_tiny");
    cmd->add_option("--set", opts.overrides, "override config keys, e.g. --set inverse.snr=5");
    cmd->add_option("--cache", opts.cache_dir, "cache root (default $VOXDEC_CACHE_DIR or ./cache)");
    cmd->add_option("--out", opts.out_dir, "report output directory");
    cmd->add_flag("--force", opts.force, "recompute cached stages");
    cmd->add_option("--workers", opts.workers, "parallel training workers (default 1, deterministic)");
    cmd->add_option("--seeds", opts.seeds, "number of training seeds (overrides config)");
    cmd->add_option("--seed", opts.seed, "base seed for model training");
}

void deep_merge(Json& base, const Json& overlay) {
    if (!overlay.is_object() || !base.is_object()) {
        base = overlay;
        return;
    }
    for (const auto& [key, value] : overlay.items()) {
        if (base.contains(key) && base[key].is_object() && value.is_object())
            deep_merge(base[key], value);
        else
            base[key] = value;
    }
}

Json resolve_config(const CommonOpts& opts) {
    Json config = default_config_json();
    if (!opts.preset.empty()) deep_merge(config, preset_config(opts.preset));
    if (!opts.config_file.empty()) deep_merge(config, load_config_file(opts.config_file));
    for (const auto& o : opts.overrides) apply_override(config, o);
    return config;
}

void print_provenance(const Json& config, const std::string& command) {
    Json head;
    head["command"] = command;
    head["resolved_config"] = config;
    head["content_hash"] = param_hash(config.dump());
    std::cout << head.dump(2) << "\n";
}

int run_stage(const CommonOpts& opts, PipelineStage stage, const std::string& name) {
    const Json config = resolve_config(opts);
    const ScenarioConfig cfg = scenario_from_json(config);
    print_provenance(config, name);
    const int sessions = run_pipeline_stage(cfg, stage, resolve_cache_root(opts.cache_dir), opts.force);
    std::cout << name << ": " << sessions << " sessions processed (cache at "
              << resolve_cache_root(opts.cache_dir).string() << ")\n";
    return 0;
}

ExperimentOptions experiment_options(const CommonOpts& opts) {
    ExperimentOptions eopt;
    eopt.n_seeds = opts.seeds;
    eopt.seed = opts.seed;
    eopt.workers = opts.workers;
    return eopt;
}

struct CheckpointMeta {
    ModelSpec spec;
    Representation repr = Representation::source;
    std::string dataset = "A";
    std::string subject;
};

void save_checkpoint(const std::filesystem::path& dir, const std::string& stem, const Model& model,
                     Representation repr, const std::string& dataset, const std::string& subject) {
    std::filesystem::create_directories(dir);
    Tensor params;
    params.shape = {static_cast<std::size_t>(model.store().params.size())};
    params.data.assign(model.store().params.data(),
                       model.store().params.data() + model.store().params.size());
    const ModelSpec& s = model.spec();
    Json meta{{"family", to_string(s.family)},
              {"hidden", s.hidden},
              {"n_subjects", s.n_subjects},
              {"embedding_dim", s.embedding_dim},
              {"dropout", s.dropout},
              {"input_dim", s.input_dim},
              {"grid_dims", {s.grid_dims.x(), s.grid_dims.y(), s.grid_dims.z()}},
              {"node_features", s.node_features},
              {"repr", to_string(repr)},
              {"dataset", dataset},
              {"subject", subject}};
    cache_store(dir / (stem + ".tns"), meta.dump(), params);
    std::ofstream f(dir / (stem + ".json"), std::ios::trunc);
    f << meta.dump(2) << "\n";
}

CheckpointMeta load_checkpoint_meta(const std::filesystem::path& json_file) {
    std::ifstream f(json_file);
    if (!f) throw ConfigError("cannot open checkpoint metadata: " + json_file.string());
    const Json meta = Json::parse(f);
    CheckpointMeta out;
    out.spec.family = family_from_string(meta.at("family").get<std::string>());
    out.spec.hidden = meta.at("hidden").get<int>();
    out.spec.n_subjects = meta.at("n_subjects").get<int>();
    out.spec.embedding_dim = meta.at("embedding_dim").get<int>();
    out.spec.dropout = meta.at("dropout").get<double>();
    out.spec.input_dim = meta.at("input_dim").get<int>();
    const auto dims = meta.at("grid_dims");
    out.spec.grid_dims = Eigen::Vector3i(dims[0].get<int>(), dims[1].get<int>(), dims[2].get<int>());
    out.spec.node_features = meta.at("node_features").get<int>();
    out.repr = representation_from_string(meta.at("repr").get<std::string>());
    out.dataset = meta.at("dataset").get<std::string>();
    out.subject = meta.at("subject").get<std::string>();
    return out;
}

int cmd_train(const CommonOpts& opts, const std::string& family_name, const std::string& repr_name,
              const std::string& dataset, const std::string& subject) {
    const Json config = resolve_config(opts);
    const ScenarioConfig cfg = scenario_from_json(config);
    print_provenance(config, "train");
    const BuiltScenario sc = build_scenario(cfg, resolve_cache_root(opts.cache_dir), opts.force);
    Experiments ex(sc, experiment_options(opts));

    const Family family = family_from_string(family_name);
    const Representation repr = representation_from_string(repr_name);
    const Experiments::Runs& runs = subject.empty() ? ex.inter_runs(dataset, family, repr)
                                                    : ex.single_runs(dataset, subject, family, repr);

    Report report;
    report.name = "train_" + family_name + "_" + repr_name;
    report.columns = {"seed", "val", "test"};
    for (int s = 0; s < ex.n_seeds(); ++s) {
        report.add_row({std::to_string(s), format_double(runs.val[static_cast<std::size_t>(s)]),
                        format_double(runs.test[static_cast<std::size_t>(s)])});
        save_checkpoint(opts.out_dir, report.name + "_seed" + std::to_string(s),
                        *runs.models[static_cast<std::size_t>(s)], repr, dataset, subject);
    }
    report.provenance = Json{{"config", config}, {"content_hash", param_hash(config.dump())}};
    report.write(opts.out_dir);
    std::cout << report.to_text();
    return 0;
}

int cmd_search(const CommonOpts& opts, const std::string& family_name, const std::string& repr_name,
               const std::string& dataset, const std::string& subject, int trials) {
    const Json config = resolve_config(opts);
    const ScenarioConfig cfg = scenario_from_json(config);
    print_provenance(config, "search");
    const BuiltScenario sc = build_scenario(cfg, resolve_cache_root(opts.cache_dir), opts.force);

    const Family family = family_from_string(family_name);
    const Representation repr = representation_from_string(repr_name);
    const auto sets = subject.empty() ? sample_sets_inter(sc, dataset, repr)
                                      : sample_sets_single(sc, dataset, subject, repr);

    Experiments ex(sc, experiment_options(opts));
    const ModelSpec spec = ex.spec_for(family, sets.at("train"));

    SearchSpace space;
    SearchResult result = random_search(space, spec, sets.at("train"), sets.at("val"), trials, opts.seed);

    Report report;
    report.name = "search_" + family_name + "_" + repr_name;
    report.columns = {"trial", "dropout", "lr", "batch", "weight decay", "val"};
    for (const auto& t : result.trials)
        report.add_row({std::to_string(t.index), format_double(t.dropout, 2), format_double(t.lr, 8),
                        std::to_string(t.batch_size), format_double(t.weight_decay, 8),
                        format_double(t.val_balacc)});
    report.provenance =
        Json{{"config", config}, {"best_trial", result.best_index}, {"content_hash", param_hash(config.dump())}};
    report.write(opts.out_dir);
    std::cout << report.to_text();
    std::cout << "best trial: " << result.best_index << " (val " << format_double(result.best().val_balacc)
              << ", lr " << result.best().lr << ", batch " << result.best().batch_size << ", dropout "
              << result.best().dropout << ", wd " << result.best().weight_decay << ")\n";
    return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& checkpoint, const std::string& split,
             int mask_region, int buffer) {
    const Json config = resolve_config(opts);
    const ScenarioConfig cfg = scenario_from_json(config);
    print_provenance(config, "eval");
    const BuiltScenario sc = build_scenario(cfg, resolve_cache_root(opts.cache_dir), opts.force);

    const std::filesystem::path meta_file = checkpoint + ".json";
    const std::filesystem::path tensor_file = checkpoint + ".tns";
    CheckpointMeta meta = load_checkpoint_meta(meta_file);

    const auto sets = meta.subject.empty()
                          ? sample_sets_inter(sc, meta.dataset, meta.repr)
                          : sample_sets_single(sc, meta.dataset, meta.subject, meta.repr);
    const SampleSet& set = sets.at(split);

    if (meta.spec.family == Family::gat) {
        if (meta.repr == Representation::source)
            meta.spec.graph = std::make_shared<GraphSpec>(build_voxel_graph(*set.grid));
        else
            meta.spec.graph = std::make_shared<GraphSpec>(build_sensor_graph(set.sensor_positions));
    }
    auto model = build_model(meta.spec, 0);
    Json meta_json;
    {
        std::ifstream f(meta_file);
        meta_json = Json::parse(f);
    }
    const Tensor params = cache_load(tensor_file, meta_json.dump());
    if (params.data.size() != static_cast<std::size_t>(model->store().params.size()))
        throw InputError("checkpoint parameter count does not match the model spec");
    for (Eigen::Index i = 0; i < model->store().params.size(); ++i)
        model->store().params(i) = params.data[static_cast<std::size_t>(i)];

    std::vector<int> mask;
    if (mask_region > 0) {
        const Anatomy& mask_anatomy = meta.subject.empty()
                                          ? sc.template_anatomy
                                          : sc.dataset(meta.dataset).subject(meta.subject).recon_anatomy;
        mask = region_mask_voxels(mask_anatomy, mask_region, buffer);
    }
    const double acc = evaluate_balanced_accuracy(*model, set, mask);
    std::cout << "balanced accuracy on " << split << ": " << format_double(acc) << "\n";
    return 0;
}

int cmd_experiment(const CommonOpts& opts, const std::string& name) {
    const Json config = resolve_config(opts);
    const ScenarioConfig cfg = scenario_from_json(config);
    print_provenance(config, "experiment " + name);
    const BuiltScenario sc = build_scenario(cfg, resolve_cache_root(opts.cache_dir), opts.force);
    Experiments ex(sc, experiment_options(opts));

    std::vector<std::string> todo;
    if (name == "all")
        todo = Experiments::names();
    else
        todo.push_back(name);
    for (const auto& n : todo) {
        const Report report = ex.run(n);
        report.write(opts.out_dir);
        std::cout << report.to_text() << "\n";
    }
    return 0;
}

struct AblateAxis {
    std::string config_path;       // dotted json path
    std::vector<std::string> default_values;
};

const std::map<std::string, AblateAxis>& ablate_axes() {
    static const std::map<std::string, AblateAxis> axes = {
        {"highpass", {"preproc.highpass_hz", {"null", "0.1", "0.5", "1"}}},
        {"lowpass", {"preproc.lowpass_hz", {"25", "48", "60", "100", "150"}}},
        {"downsample", {"preproc.downsample_hz", {"100", "150", "300"}}},
        {"notch", {"preproc.notch", {"true", "false"}}},
        {"snr", {"inverse.snr", {"0.5", "1", "3", "5"}}},
        {"cov_form", {"inverse.cov_form", {"regular", "diagonal", "scalar"}}},
        {"method", {"inverse.method", {"min_norm", "dspm", "sloreta", "lcmv"}}},
        {"structurals", {"datasets.1.structurals", {"template", "subject", "subject_to_template"}}},
        {"voxel_size", {"anatomy.voxel_size_mm", {"10", "15", "20"}}},
        {"voxel_type", {"inverse.voxel_type", {"vec", "mag"}}},
        {"dimred", {"dimred", {"none", "pca1", "pca2", "parcels"}}},
    };
    return axes;
}

int cmd_ablate(const CommonOpts& opts, const std::string& axis, std::vector<std::string> values,
               const std::string& family_name, const std::string& dataset, const std::string& subject) {
    const auto it = ablate_axes().find(axis);
    if (it == ablate_axes().end()) {
        std::string known;
        for (const auto& [k, v] : ablate_axes()) known += (known.empty() ? "" : ", ") + k;
        throw ConfigError("unknown ablation axis '" + axis + "'; valid axes: " + known);
    }
    if (values.empty()) values = it->second.default_values;

    const Json base_config = resolve_config(opts);
    print_provenance(base_config, "ablate " + axis);
    const std::string default_value = [&] {
        Json probe = base_config;
        Json* node = &probe;
        std::string path = it->second.config_path;
        std::size_t start = 0;
        while (true) {
            const auto dot = path.find('.', start);
            const std::string part = path.substr(start, dot == std::string::npos ? dot : dot - start);
            const bool is_index = part.find_first_not_of("0123456789") == std::string::npos;
            if (is_index && node->is_array())
                node = &(*node)[std::stoul(part)];
            else
                node = &(*node)[part];
            if (dot == std::string::npos) break;
            start = dot + 1;
        }
        return node->dump();
    }();

    Report report;
    report.name = "ablate_" + axis;
    report.columns = {"value", "default", "seeds", "val", "test"};
    report.provenance = Json{{"axis", axis}, {"config", base_config}};

    const Family family = family_from_string(family_name);
    for (const auto& value : values) {
        Json config = base_config;
        apply_override(config, it->second.config_path + "=" + value);
        const ScenarioConfig cfg = scenario_from_json(config);
        const BuiltScenario sc = build_scenario(cfg, resolve_cache_root(opts.cache_dir), opts.force);
        Experiments ex(sc, experiment_options(opts));
        const Experiments::Runs& runs =
            subject.empty() ? ex.inter_runs(dataset, family, Representation::source)
                            : ex.single_runs(dataset, subject, family, Representation::source);
        const RunStats val = report_stats(runs.val);
        const RunStats test = report_stats(runs.test);
        const bool is_default = Json::parse(value, nullptr, false).dump() == default_value;
        report.add_row({value, is_default ? "*" : "", std::to_string(ex.n_seeds()),
                        format_accuracy(val.mean, val.stddev.value_or(0), val.n),
                        format_accuracy(test.mean, test.stddev.value_or(0), test.n)});
        report.provenance["raw"][value] = runs.test;
    }
    report.write(opts.out_dir);
    std::cout << report.to_text();
    return 0;
}

int cmd_report(const std::string& file) {
    std::ifstream f(file);
    if (!f) throw ConfigError("cannot open report file: " + file);
    // minimal CSV rendering (fields in our own reports never embed commas)
    Report report;
    report.name = std::filesystem::path(file).stem().string();
    std::string line;
    bool first = true;
    while (std::getline(f, line)) {
        std::vector<std::string> cells;
        std::size_t start = 0;
        while (true) {
            const auto comma = line.find(',', start);
            cells.push_back(line.substr(start, comma == std::string::npos ? comma : comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (first) {
            report.columns = cells;
            first = false;
        } else {
            report.add_row(cells);
        }
    }
    std::cout << report.to_text();
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"source-space decoding toolkit"};
    app.require_subcommand(1);

    CommonOpts opts;

    auto* simulate = app.add_subcommand("simulate", "generate and cache synthetic recordings");
    add_common(simulate, opts);
    auto* preprocess = app.add_subcommand("preprocess", "filter, resample and standardize recordings");
    add_common(preprocess, opts);
    auto* reconstruct = app.add_subcommand("reconstruct", "build inverse operators and source features");
    add_common(reconstruct, opts);
    auto* assemble = app.add_subcommand("assemble", "assemble per-split sample sets (full pipeline)");
    add_common(assemble, opts);

    std::string family = "mlp", repr = "source", dataset = "A", subject;
    auto* train = app.add_subcommand("train", "train a model on the configured scenario");
    add_common(train, opts);
    train->add_option("--family", family, "logistic|mlp|cnn_se|gat");
    train->add_option("--repr", repr, "sensor|source");
    train->add_option("--dataset", dataset, "dataset id");
    train->add_option("--subject", subject, "train single-subject on this subject");

    int trials = 8;
    auto* search = app.add_subcommand("search", "random hyperparameter search");
    add_common(search, opts);
    search->add_option("--family", family, "logistic|mlp|cnn_se|gat");
    search->add_option("--repr", repr, "sensor|source");
    search->add_option("--dataset", dataset, "dataset id");
    search->add_option("--subject", subject, "single-subject search on this subject");
    search->add_option("--trials", trials, "number of trials");

    std::string checkpoint, split = "test";
    int mask_region = 0, buffer = 1;
    auto* eval = app.add_subcommand("eval", "evaluate a saved checkpoint");
    add_common(eval, opts);
    eval->add_option("--checkpoint", checkpoint, "checkpoint path stem (without .tns/.json)")->required();
    eval->add_option("--split", split, "train|val|test");
    eval->add_option("--mask-region", mask_region, "atlas region to mask during evaluation");
    eval->add_option("--buffer", buffer, "mask buffer in voxels");

    std::string experiment_name;
    auto* experiment = app.add_subcommand("experiment", "run a paper-style experiment");
    add_common(experiment, opts);
    experiment
        ->add_option("--name,name", experiment_name,
                     "compare_spaces|inductive_bias|augmentations|region_masking|cross_dataset|combined|all")
        ->required();

    std::string axis;
    std::vector<std::string> values;
    std::string ablate_family = "logistic", ablate_dataset = "B", ablate_subject = "b01";
    auto* ablate = app.add_subcommand("ablate", "sweep one pipeline axis");
    add_common(ablate, opts);
    ablate->add_option("--axis", axis, "pipeline axis to sweep")->required();
    ablate->add_option("--values", values, "values to sweep (defaults per axis)");
    ablate->add_option("--family", ablate_family, "model family for the sweep");
    ablate->add_option("--dataset", ablate_dataset, "dataset id");
    ablate->add_option("--subject", ablate_subject, "subject (single-subject datasets)");

    std::string report_file;
    auto* report = app.add_subcommand("report", "render a saved CSV report as text");
    report->add_option("--file,file", report_file, "report CSV file")->required();

    std::vector<const char*> argv;
    argv.push_back("voxdec");
    for (const auto& a : args) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (simulate->parsed()) return run_stage(opts, PipelineStage::simulate, "simulate");
        if (preprocess->parsed()) return run_stage(opts, PipelineStage::preprocess, "preprocess");
        if (reconstruct->parsed()) return run_stage(opts, PipelineStage::reconstruct, "reconstruct");
        if (assemble->parsed()) return run_stage(opts, PipelineStage::assemble, "assemble");
        if (train->parsed()) return cmd_train(opts, family, repr, dataset, subject);
        if (search->parsed()) return cmd_search(opts, family, repr, dataset, subject, trials);
        if (eval->parsed()) return cmd_eval(opts, checkpoint, split, mask_region, buffer);
        if (experiment->parsed()) return cmd_experiment(opts, experiment_name);
        if (ablate->parsed()) return cmd_ablate(opts, axis, values, ablate_family, ablate_dataset, ablate_subject);
        if (report->parsed()) return cmd_report(report_file);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

int run(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args);
}

}  // namespace voxdec::cli
