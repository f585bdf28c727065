#include "voxdec/scenario.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>

#include "voxdec/cache.hpp"
#include "voxdec/features.hpp"

namespace voxdec {

Structurals structurals_from_string(const std::string& s) {
    if (s == "subject") return Structurals::subject;
    if (s == "template") return Structurals::template_grid;
    if (s == "subject_to_template") return Structurals::subject_to_template;
    throw ConfigError("unknown structurals: " + s + " (expected subject|template|subject_to_template)");
}

std::string to_string(Structurals s) {
    switch (s) {
        case Structurals::subject: return "subject";
        case Structurals::template_grid: return "template";
        case Structurals::subject_to_template: return "subject_to_template";
    }
    return "?";
}

const FamilyTrainConfig& ScenarioConfig::family_cfg(Family f) const {
    const auto it = train.find(to_string(f));
    if (it == train.end()) throw ConfigError("no training configuration for family " + to_string(f));
    return it->second;
}

// --- json <-> config -------------------------------------------------------------

namespace {

template <class T>
T get_field(const Json& j, const std::string& key, const T& fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const Json::exception&) {
        throw ConfigError("config field '" + key + "' has the wrong type");
    }
}

template <class T>
T need_field(const Json& j, const std::string& key, const std::string& context) {
    if (!j.contains(key)) throw ConfigError("missing required config field '" + context + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const Json::exception&) {
        throw ConfigError("config field '" + context + key + "' has the wrong type");
    }
}

FamilyTrainConfig family_from_json(const Json& j) {
    FamilyTrainConfig f;
    f.hidden = get_field(j, "hidden", f.hidden);
    f.target_params = get_field(j, "target_params", f.target_params);
    f.lr = get_field(j, "lr", f.lr);
    f.batch_size = get_field(j, "batch_size", f.batch_size);
    f.max_epochs = get_field(j, "max_epochs", f.max_epochs);
    f.patience = get_field(j, "patience", f.patience);
    f.min_delta = get_field(j, "min_delta", f.min_delta);
    f.dropout = get_field(j, "dropout", f.dropout);
    f.weight_decay = get_field(j, "weight_decay", f.weight_decay);
    return f;
}

Json family_to_json(const FamilyTrainConfig& f) {
    return Json{{"hidden", f.hidden},       {"target_params", f.target_params},
                {"lr", f.lr},               {"batch_size", f.batch_size},
                {"max_epochs", f.max_epochs}, {"patience", f.patience},
                {"min_delta", f.min_delta}, {"dropout", f.dropout},
                {"weight_decay", f.weight_decay}};
}

}  // namespace

ScenarioConfig scenario_from_json(const Json& j) {
    ScenarioConfig c;
    c.name = get_field<std::string>(j, "name", c.name);
    c.seed = get_field<std::uint64_t>(j, "seed", c.seed);

    const Json anatomy = get_field<Json>(j, "anatomy", Json::object());
    c.voxel_size_mm = get_field(anatomy, "voxel_size_mm", c.voxel_size_mm);
    c.head_radius_mm = get_field(anatomy, "head_radius_mm", c.head_radius_mm);
    c.atlas_regions = get_field(anatomy, "atlas_regions", c.atlas_regions);
    c.unassigned_fraction = get_field(anatomy, "unassigned_fraction", c.unassigned_fraction);

    const Json response = get_field<Json>(j, "response", Json::object());
    c.response_regions = get_field(response, "n_regions", c.response_regions);
    c.evoked_amplitude = get_field(response, "evoked_amplitude", c.evoked_amplitude);
    c.sustained_amplitude = get_field(response, "sustained_amplitude", c.sustained_amplitude);
    c.peak_s = get_field(response, "peak_s", c.peak_s);

    const Json noise = get_field<Json>(j, "noise", Json::object());
    c.noise.ar_coeff = get_field(noise, "ar_coeff", c.noise.ar_coeff);
    c.noise.source_noise_std = get_field(noise, "source_noise_std", c.noise.source_noise_std);
    c.noise.sensor_noise_rel = get_field(noise, "sensor_noise_rel", c.noise.sensor_noise_rel);

    const Json preproc = get_field<Json>(j, "preproc", Json::object());
    if (preproc.contains("highpass_hz") && preproc.at("highpass_hz").is_null())
        c.preproc.highpass_hz.reset();
    else
        c.preproc.highpass_hz = get_field(preproc, "highpass_hz", *c.preproc.highpass_hz);
    if (preproc.contains("lowpass_hz") && preproc.at("lowpass_hz").is_null())
        c.preproc.lowpass_hz.reset();
    else
        c.preproc.lowpass_hz = get_field(preproc, "lowpass_hz", *c.preproc.lowpass_hz);
    if (preproc.contains("downsample_hz") && preproc.at("downsample_hz").is_null())
        c.preproc.downsample_hz.reset();
    else
        c.preproc.downsample_hz = get_field(preproc, "downsample_hz", *c.preproc.downsample_hz);
    c.preproc.notch = get_field(preproc, "notch", c.preproc.notch);
    c.preproc.notch_hz = get_field(preproc, "notch_hz", c.preproc.notch_hz);

    const Json inverse = get_field<Json>(j, "inverse", Json::object());
    c.method = inverse_method_from_string(get_field<std::string>(inverse, "method", to_string(c.method)));
    c.snr = get_field(inverse, "snr", c.snr);
    c.cov_form = cov_form_from_string(get_field<std::string>(inverse, "cov_form", to_string(c.cov_form)));
    c.voxel_type =
        voxel_type_from_string(get_field<std::string>(inverse, "voxel_type", to_string(c.voxel_type)));
    c.dimred = get_field<std::string>(j, "dimred", c.dimred);

    if (j.contains("datasets")) {
        c.datasets.clear();
        for (const auto& dj : j.at("datasets")) {
            DatasetScenarioConfig d;
            d.id = need_field<std::string>(dj, "id", "datasets.");
            d.layout_id = get_field<std::string>(dj, "layout_id", d.id);
            d.n_sensors = get_field(dj, "n_sensors", d.n_sensors);
            d.shell_radius_mm = get_field(dj, "shell_radius_mm", d.shell_radius_mm);
            const std::string mode = get_field<std::string>(dj, "split_mode", "inter_subject");
            if (mode == "inter_subject")
                d.split_mode = SplitPlan::Mode::inter_subject;
            else if (mode == "single_subject")
                d.split_mode = SplitPlan::Mode::single_subject;
            else
                throw ConfigError("datasets.split_mode must be inter_subject or single_subject");
            d.n_subjects = get_field(dj, "n_subjects", d.n_subjects);
            d.sessions_per_subject = get_field(dj, "sessions_per_subject", d.sessions_per_subject);
            d.train_subjects = get_field(dj, "train_subjects", d.train_subjects);
            d.val_subjects = get_field(dj, "val_subjects", d.val_subjects);
            d.test_subjects = get_field(dj, "test_subjects", d.test_subjects);
            d.train_sessions = get_field(dj, "train_sessions", d.train_sessions);
            d.val_sessions = get_field(dj, "val_sessions", d.val_sessions);
            d.test_sessions = get_field(dj, "test_sessions", d.test_sessions);
            d.session_duration_s = get_field(dj, "session_duration_s", d.session_duration_s);
            d.raw_rate_hz = get_field(dj, "raw_rate_hz", d.raw_rate_hz);
            d.speech_fraction = get_field(dj, "speech_fraction", d.speech_fraction);
            d.mean_segment_s = get_field(dj, "mean_segment_s", d.mean_segment_s);
            d.lateralization = get_field(dj, "lateralization", d.lateralization);
            d.distortion_scale = get_field(dj, "distortion_scale", d.distortion_scale);
            d.structurals =
                structurals_from_string(get_field<std::string>(dj, "structurals", to_string(d.structurals)));
            c.datasets.push_back(std::move(d));
        }
    }

    const Json train = get_field<Json>(j, "train", Json::object());
    c.n_seeds = get_field(train, "n_seeds", c.n_seeds);
    for (const std::string fam : {"logistic", "mlp", "cnn_se", "gat"}) {
        FamilyTrainConfig f = family_from_json(get_field<Json>(train, fam, Json::object()));
        c.train[fam] = f;
    }

    const Json combined = get_field<Json>(j, "combined", Json::object());
    c.combined_subjects = get_field(combined, "subjects", c.combined_subjects);
    c.combined_sessions = get_field(combined, "sessions", c.combined_sessions);
    return c;
}

Json scenario_to_json(const ScenarioConfig& c) {
    Json j;
    j["name"] = c.name;
    j["seed"] = c.seed;
    j["anatomy"] = {{"voxel_size_mm", c.voxel_size_mm},
                    {"head_radius_mm", c.head_radius_mm},
                    {"atlas_regions", c.atlas_regions},
                    {"unassigned_fraction", c.unassigned_fraction}};
    j["response"] = {{"n_regions", c.response_regions},
                     {"evoked_amplitude", c.evoked_amplitude},
                     {"sustained_amplitude", c.sustained_amplitude},
                     {"peak_s", c.peak_s}};
    j["noise"] = {{"ar_coeff", c.noise.ar_coeff},
                  {"source_noise_std", c.noise.source_noise_std},
                  {"sensor_noise_rel", c.noise.sensor_noise_rel}};
    j["preproc"] = {{"highpass_hz", c.preproc.highpass_hz ? Json(*c.preproc.highpass_hz) : Json()},
                    {"lowpass_hz", c.preproc.lowpass_hz ? Json(*c.preproc.lowpass_hz) : Json()},
                    {"downsample_hz", c.preproc.downsample_hz ? Json(*c.preproc.downsample_hz) : Json()},
                    {"notch", c.preproc.notch},
                    {"notch_hz", c.preproc.notch_hz}};
    j["inverse"] = {{"method", to_string(c.method)},
                    {"snr", c.snr},
                    {"cov_form", to_string(c.cov_form)},
                    {"voxel_type", to_string(c.voxel_type)}};
    j["dimred"] = c.dimred;
    j["datasets"] = Json::array();
    for (const auto& d : c.datasets) {
        j["datasets"].push_back(
            {{"id", d.id},
             {"layout_id", d.layout_id},
             {"n_sensors", d.n_sensors},
             {"shell_radius_mm", d.shell_radius_mm},
             {"split_mode", d.split_mode == SplitPlan::Mode::inter_subject ? "inter_subject" : "single_subject"},
             {"n_subjects", d.n_subjects},
             {"sessions_per_subject", d.sessions_per_subject},
             {"train_subjects", d.train_subjects},
             {"val_subjects", d.val_subjects},
             {"test_subjects", d.test_subjects},
             {"train_sessions", d.train_sessions},
             {"val_sessions", d.val_sessions},
             {"test_sessions", d.test_sessions},
             {"session_duration_s", d.session_duration_s},
             {"raw_rate_hz", d.raw_rate_hz},
             {"speech_fraction", d.speech_fraction},
             {"mean_segment_s", d.mean_segment_s},
             {"lateralization", d.lateralization},
             {"distortion_scale", d.distortion_scale},
             {"structurals", to_string(d.structurals)}});
    }
    j["train"]["n_seeds"] = c.n_seeds;
    for (const auto& [fam, f] : c.train) j["train"][fam] = family_to_json(f);
    j["combined"] = {{"subjects", c.combined_subjects}, {"sessions", c.combined_sessions}};
    return j;
}

Json default_config_json() { return scenario_to_json(ScenarioConfig{}); }

Json preset_config(const std::string& name) {
    if (name == "paper_final") {
        // final pipeline parameter values: bandpass 0.1-48 Hz, downsample
        // 150 Hz, no notch, min-norm at SNR 3, diagonal covariance, 15 mm vec
        // voxels, 0.25M/0.5M parameter budgets, batch 128, lr 1e-5
        Json j = default_config_json();
        j["train"]["mlp"] = {{"hidden", 0},     {"target_params", 250000}, {"lr", 1e-5},
                             {"batch_size", 128}, {"max_epochs", 100},       {"patience", 10},
                             {"min_delta", 1e-4}, {"dropout", 0.1},          {"weight_decay", 1e-4}};
        return j;
    }
    if (name == "paper_search_space") {
        // random-search distributions: dropout {0..0.6}, lr 10^U(-7,-3),
        // batch {16..1024}, 100 epochs max, patience 10, min delta 0.01%,
        // weight decay 10^U(-5,-0.5)
        return Json{{"dropout", {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6}},
                    {"lr_log10", {-7.0, -3.0}},
                    {"batch_sizes", {16, 32, 64, 128, 256, 512, 1024}},
                    {"max_epochs", 100},
                    {"patience", 10},
                    {"min_delta", 1e-4},
                    {"wd_log10", {-5.0, -0.5}}};
    }
    if (name == "desk") {
        Json j = default_config_json();
        j["name"] = "desk";
        j["seed"] = 20260701;
        j["anatomy"] = {{"voxel_size_mm", 20.0},
                        {"head_radius_mm", 75.0},
                        {"atlas_regions", 10},
                        {"unassigned_fraction", 0.3333333333333333}};
        j["response"] = {{"n_regions", 1},
                         {"evoked_amplitude", 1.0},
                         {"sustained_amplitude", 10.0},
                         {"peak_s", 0.25}};
        j["noise"] = {{"ar_coeff", 0.95}, {"source_noise_std", 0.35}, {"sensor_noise_rel", 0.1}};
        j["preproc"] = {{"highpass_hz", 0.05},
                        {"lowpass_hz", 8.0},
                        {"downsample_hz", 25.0},
                        {"notch", false},
                        {"notch_hz", 50.0}};
        j["datasets"] = Json::array(
            {Json{{"id", "A"},
                  {"layout_id", "A"},
                  {"n_sensors", 48},
                  {"shell_radius_mm", 91.0},
                  {"split_mode", "inter_subject"},
                  {"n_subjects", 5},
                  {"sessions_per_subject", 1},
                  {"train_subjects", 3},
                  {"val_subjects", 1},
                  {"test_subjects", 1},
                  {"session_duration_s", 120.0},
                  {"raw_rate_hz", 100.0},
                  {"speech_fraction", 0.45},
                  {"mean_segment_s", 2.0},
                  {"lateralization", {"right"}},
                  {"distortion_scale", 0.08},
                  {"structurals", "subject_to_template"}},
             Json{{"id", "B"},
                  {"layout_id", "B"},
                  {"n_sensors", 56},
                  {"shell_radius_mm", 93.0},
                  {"split_mode", "single_subject"},
                  {"n_subjects", 2},
                  {"sessions_per_subject", 4},
                  {"train_sessions", 2},
                  {"val_sessions", 1},
                  {"test_sessions", 1},
                  {"session_duration_s", 120.0},
                  {"raw_rate_hz", 100.0},
                  {"speech_fraction", 0.45},
                  {"mean_segment_s", 2.0},
                  {"lateralization", {"right", "bilateral"}},
                  {"distortion_scale", 0.08},
                  {"structurals", "subject"}}});
        j["train"] = Json{
            {"n_seeds", 3},
            {"logistic", {{"hidden", 1}, {"lr", 1e-2}, {"batch_size", 256}, {"max_epochs", 20}, {"patience", 5}}},
            {"mlp",
             {{"hidden", 64},
              {"lr", 1e-3},
              {"batch_size", 128},
              {"max_epochs", 15},
              {"patience", 5},
              {"dropout", 0.1},
              {"weight_decay", 1e-4}}},
            {"cnn_se",
             {{"hidden", 8},
              {"lr", 3e-3},
              {"batch_size", 128},
              {"max_epochs", 8},
              {"patience", 4},
              {"dropout", 0.1},
              {"weight_decay", 1e-4}}},
            {"gat",
             {{"hidden", 16},
              {"lr", 3e-3},
              {"batch_size", 128},
              {"max_epochs", 8},
              {"patience", 4},
              {"dropout", 0.1},
              {"weight_decay", 1e-4}}}};
        j["combined"] = {{"subjects", {"b01"}}, {"sessions", 1}};
        return j;
    }
    if (name == "desk_tiny") {
        Json j = preset_config("desk");
        j["name"] = "desk_tiny";
        j["datasets"][0]["session_duration_s"] = 40.0;
        j["datasets"][1]["session_duration_s"] = 40.0;
        j["datasets"][1]["sessions_per_subject"] = 3;
        j["datasets"][1]["train_sessions"] = 1;
        j["train"]["n_seeds"] = 1;
        j["train"]["mlp"]["max_epochs"] = 4;
        j["train"]["cnn_se"]["max_epochs"] = 3;
        j["train"]["gat"]["max_epochs"] = 2;
        return j;
    }
    throw ConfigError("unknown preset: " + name +
                      " (expected paper_final|paper_search_space|desk|desk_tiny)");
}

Json load_config_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path.string());
    try {
        return Json::parse(f);
    } catch (const Json::exception& e) {
        throw ConfigError("config parse error in " + path.string() + ": " + e.what());
    }
}

void apply_override(Json& config, const std::string& key_equals_value) {
    const auto eq = key_equals_value.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override must look like key.path=value, got: " + key_equals_value);
    const std::string path = key_equals_value.substr(0, eq);
    const std::string raw = key_equals_value.substr(eq + 1);

    Json* node = &config;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string part = path.substr(start, dot == std::string::npos ? dot : dot - start);
        if (part.empty()) throw ConfigError("empty path segment in override: " + path);
        const bool is_index = !part.empty() && part.find_first_not_of("0123456789") == std::string::npos;
        if (dot == std::string::npos) {
            Json value;
            try {
                value = Json::parse(raw);
            } catch (const Json::exception&) {
                value = raw;  // plain string
            }
            if (is_index && node->is_array())
                (*node)[std::stoul(part)] = value;
            else
                (*node)[part] = value;
            return;
        }
        if (is_index && node->is_array())
            node = &(*node)[std::stoul(part)];
        else
            node = &(*node)[part];
        start = dot + 1;
    }
}

// --- scenario build -----------------------------------------------------------

namespace {

std::string subject_name(const std::string& dataset_id, int index) {
    std::string lower = dataset_id;
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%02d", index + 1);
    return lower + buf;
}

std::string session_name(int index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "s%02d", index + 1);
    return buf;
}

std::vector<std::uint8_t> labels_from_tensor(const Tensor& t) {
    std::vector<std::uint8_t> labels(t.data.size());
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = t.data[i] >= 0.5 ? 1 : 0;
    return labels;
}

Tensor labels_to_tensor(const std::vector<std::uint8_t>& labels) {
    Tensor t;
    t.shape = {1, labels.size()};
    t.data.resize(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) t.data[i] = labels[i];
    return t;
}

struct KeyParts {
    Json sim, pre, feat;
    std::string sim_hash, pre_hash, feat_hash;
};

}  // namespace

const SubjectScenarioData& DatasetScenario::subject(const std::string& id) const {
    for (const auto& s : subjects)
        if (s.id == id) return s;
    throw InputError("unknown subject " + id + " in dataset " + cfg.id);
}

const DatasetScenario& BuiltScenario::dataset(const std::string& id) const {
    for (const auto& d : datasets)
        if (d.cfg.id == id) return d;
    throw InputError("unknown dataset " + id);
}

std::shared_ptr<const GridLayout> BuiltScenario::subject_grid(const std::string& dataset_id,
                                                              const std::string& subject_id) const {
    const std::string key = dataset_id + "/" + subject_id;
    auto it = grid_cache_.find(key);
    if (it != grid_cache_.end()) return it->second;
    auto grid = std::make_shared<GridLayout>(make_grid_layout(dataset(dataset_id).subject(subject_id).recon_anatomy));
    grid_cache_[key] = grid;
    return grid;
}

PipelineStage stage_from_string(const std::string& s) {
    if (s == "simulate") return PipelineStage::simulate;
    if (s == "preprocess") return PipelineStage::preprocess;
    if (s == "reconstruct") return PipelineStage::reconstruct;
    if (s == "assemble") return PipelineStage::assemble;
    throw ConfigError("unknown stage: " + s);
}

namespace {

struct Builder {
    const ScenarioConfig& cfg;
    std::filesystem::path cache_root;
    bool force;
    PipelineStage upto;
    int sessions_processed = 0;

    Json anatomy_json() const {
        return Json{{"voxel_size_mm", cfg.voxel_size_mm},
                    {"head_radius_mm", cfg.head_radius_mm},
                    {"atlas_regions", cfg.atlas_regions},
                    {"unassigned_fraction", cfg.unassigned_fraction},
                    {"seed", cfg.seed}};
    }

    BuiltScenario run() {
        BuiltScenario sc;
        sc.cfg = cfg;
        sc.template_anatomy = build_template_anatomy(cfg.voxel_size_mm, cfg.head_radius_mm, cfg.seed,
                                                     cfg.atlas_regions, cfg.unassigned_fraction);
        sc.template_grid = std::make_shared<GridLayout>(make_grid_layout(sc.template_anatomy));

        // response regions: best-covered under the sensor cap (highest
        // centroid), and straddling the midline so every lateralization mode
        // keeps active voxels
        std::vector<std::pair<double, int>> by_z;
        for (int r = 1; r <= sc.template_anatomy.n_regions; ++r) {
            const auto voxels = sc.template_anatomy.region_voxels(r);
            if (voxels.size() < 5) continue;
            int left = 0, right = 0;
            for (int v : voxels)
                (sc.template_anatomy.centers[static_cast<std::size_t>(v)].x() > 0.0 ? right : left)++;
            if (left < 3 || right < 3) continue;
            by_z.emplace_back(-sc.template_anatomy.region_centroid(r).z(), r);
        }
        std::sort(by_z.begin(), by_z.end());
        for (int i = 0; i < cfg.response_regions && i < static_cast<int>(by_z.size()); ++i)
            sc.response_region_ids.push_back(by_z[static_cast<std::size_t>(i)].second);
        if (sc.response_region_ids.empty()) throw ConfigError("no usable response region in the atlas");

        for (const auto& dcfg : cfg.datasets) sc.datasets.push_back(build_dataset(sc, dcfg));
        return sc;
    }

    DatasetScenario build_dataset(const BuiltScenario& sc, const DatasetScenarioConfig& dcfg) {
        DatasetScenario ds;
        ds.cfg = dcfg;
        ds.sensors = build_sensor_array(dcfg.layout_id, dcfg.n_sensors, dcfg.shell_radius_mm,
                                        Rng::derive(cfg.seed, "layout/" + dcfg.id), cfg.head_radius_mm);
        if (dcfg.split_mode == SplitPlan::Mode::inter_subject &&
            dcfg.train_subjects + dcfg.val_subjects + dcfg.test_subjects != dcfg.n_subjects)
            throw ConfigError("dataset " + dcfg.id + ": subject split counts must sum to n_subjects");
        if (dcfg.split_mode == SplitPlan::Mode::single_subject &&
            dcfg.train_sessions + dcfg.val_sessions + dcfg.test_sessions != dcfg.sessions_per_subject)
            throw ConfigError("dataset " + dcfg.id + ": session split counts must sum to sessions_per_subject");

        for (int i = 0; i < dcfg.n_subjects; ++i) ds.subjects.push_back(build_subject(sc, ds, dcfg, i));
        return ds;
    }

    SubjectScenarioData build_subject(const BuiltScenario& sc, const DatasetScenario& ds,
                                      const DatasetScenarioConfig& dcfg, int index) {
        SubjectScenarioData sub;
        sub.id = subject_name(dcfg.id, index);
        const std::uint64_t subject_seed = Rng::derive(cfg.seed, dcfg.id + "/subject", static_cast<std::uint64_t>(index));
        sub.anatomy = derive_subject_anatomy(sc.template_anatomy, subject_seed, dcfg.distortion_scale);
        sub.anatomy.subject_id = sub.id;
        sub.recon_anatomy = dcfg.structurals == Structurals::template_grid ? sc.template_anatomy : sub.anatomy;

        const LeadField lf_sim = compute_lead_field(sub.anatomy, ds.sensors);
        const LeadField lf_recon = dcfg.structurals == Structurals::template_grid
                                       ? compute_lead_field(sc.template_anatomy, ds.sensors)
                                       : lf_sim;

        ResponseConfig response;
        response.region_ids = sc.response_region_ids;
        response.evoked_amplitude = cfg.evoked_amplitude;
        response.sustained_amplitude = cfg.sustained_amplitude;
        response.peak_s = cfg.peak_s;
        response.lateralization = lateralization_from_string(
            dcfg.lateralization[static_cast<std::size_t>(index) % dcfg.lateralization.size()]);
        response.orientation_seed = Rng::derive(cfg.seed, "orientation");

        const Json dataset_json{{"id", dcfg.id},
                                {"layout", dcfg.layout_id},
                                {"n_sensors", dcfg.n_sensors},
                                {"shell", dcfg.shell_radius_mm},
                                {"duration", dcfg.session_duration_s},
                                {"rate", dcfg.raw_rate_hz},
                                {"speech_fraction", dcfg.speech_fraction},
                                {"mean_segment", dcfg.mean_segment_s},
                                {"distortion", dcfg.distortion_scale}};
        const Json response_json{{"regions", sc.response_region_ids},
                                 {"evoked", cfg.evoked_amplitude},
                                 {"sustained", cfg.sustained_amplitude},
                                 {"peak_s", cfg.peak_s},
                                 {"lateralization", dcfg.lateralization[static_cast<std::size_t>(index) %
                                                                        dcfg.lateralization.size()]}};
        const Json noise_json{{"ar", cfg.noise.ar_coeff},
                              {"source", cfg.noise.source_noise_std},
                              {"sensor_rel", cfg.noise.sensor_noise_rel}};

        // per-session pipeline with caching
        MorphOperator to_template;
        const bool native_is_template = dcfg.structurals == Structurals::template_grid;
        bool morph_built = false;

        for (int j = 0; j < dcfg.sessions_per_subject; ++j) {
            SessionData sd;
            sd.key = {dcfg.id, sub.id, session_name(j)};
            const std::uint64_t session_seed = Rng::derive(subject_seed, "session", static_cast<std::uint64_t>(j));

            Json sim_key = {{"anatomy", anatomy_json()}, {"dataset", dataset_json},
                            {"subject", index},          {"session", j},
                            {"noise", noise_json},       {"response", response_json}};
            const std::string sim_hash = param_hash(sim_key.dump());
            const auto raw_file = cache_path(cache_root, dcfg.id, sub.id, sd.key.session, sim_hash, "raw");
            const auto raw_labels_file =
                cache_path(cache_root, dcfg.id, sub.id, sd.key.session, sim_hash, "raw-labels");

            SensorRecording raw;
            raw.sensors = ds.sensors;
            raw.sampling_rate_hz = dcfg.raw_rate_hz;
            raw.subject_id = sub.id;
            raw.session_id = sd.key.session;
            raw.dataset_id = dcfg.id;
            if (!force && cache_exists(raw_file) && cache_exists(raw_labels_file)) {
                raw.data = cache_load(raw_file, sim_key.dump()).to_matrix();
                raw.stimulus.labels = labels_from_tensor(cache_load(raw_labels_file, sim_key.dump()));
                raw.stimulus.sampling_rate_hz = dcfg.raw_rate_hz;
                raw.stimulus.onsets = StimulusTrack::onsets_from_labels(raw.stimulus.labels);
            } else {
                const StimulusTrack stim =
                    make_stimulus_track(dcfg.session_duration_s, dcfg.raw_rate_hz, dcfg.speech_fraction,
                                        dcfg.mean_segment_s, session_seed);
                SensorRecording fresh = simulate_recording(sub.anatomy, lf_sim, ds.sensors, stim,
                                                           cfg.noise, response, session_seed,
                                                           &sc.template_anatomy);
                fresh.subject_id = sub.id;
                fresh.session_id = sd.key.session;
                fresh.dataset_id = dcfg.id;
                cache_store(raw_file, sim_key.dump(), Tensor::from_matrix(fresh.data));
                cache_store(raw_labels_file, sim_key.dump(), labels_to_tensor(fresh.stimulus.labels));
                raw = std::move(fresh);
            }
            ++sessions_processed;
            if (upto == PipelineStage::simulate) continue;

            Json pre_key = sim_key;
            pre_key["preproc"] = {{"hp", cfg.preproc.highpass_hz ? Json(*cfg.preproc.highpass_hz) : Json()},
                                  {"lp", cfg.preproc.lowpass_hz ? Json(*cfg.preproc.lowpass_hz) : Json()},
                                  {"ds", cfg.preproc.downsample_hz ? Json(*cfg.preproc.downsample_hz) : Json()},
                                  {"notch", cfg.preproc.notch},
                                  {"notch_hz", cfg.preproc.notch_hz}};
            const std::string pre_hash = param_hash(pre_key.dump());
            const auto pre_file = cache_path(cache_root, dcfg.id, sub.id, sd.key.session, pre_hash, "pre");
            const auto pre_labels_file =
                cache_path(cache_root, dcfg.id, sub.id, sd.key.session, pre_hash, "pre-labels");

            const double final_rate =
                cfg.preproc.downsample_hz ? *cfg.preproc.downsample_hz : dcfg.raw_rate_hz;
            if (!force && cache_exists(pre_file) && cache_exists(pre_labels_file)) {
                sd.preprocessed = SensorRecording{};
                sd.preprocessed.data = cache_load(pre_file, pre_key.dump()).to_matrix();
                sd.preprocessed.stimulus.labels = labels_from_tensor(cache_load(pre_labels_file, pre_key.dump()));
                sd.preprocessed.stimulus.sampling_rate_hz = final_rate;
                sd.preprocessed.stimulus.onsets =
                    StimulusTrack::onsets_from_labels(sd.preprocessed.stimulus.labels);
                sd.preprocessed.sampling_rate_hz = final_rate;
                sd.preprocessed.sensors = ds.sensors;
                sd.preprocessed.subject_id = sub.id;
                sd.preprocessed.session_id = sd.key.session;
                sd.preprocessed.dataset_id = dcfg.id;
            } else {
                sd.preprocessed = preprocess(raw, cfg.preproc).rec;
                cache_store(pre_file, pre_key.dump(), Tensor::from_matrix(sd.preprocessed.data));
                cache_store(pre_labels_file, pre_key.dump(), labels_to_tensor(sd.preprocessed.stimulus.labels));
            }

            sd.sensor.key = sd.key;
            sd.sensor.repr = Representation::sensor;
            sd.sensor.features = sd.preprocessed.data;
            sd.sensor.labels = sd.preprocessed.stimulus.labels;

            sub.sessions.push_back(std::move(sd));
        }
        if (upto == PipelineStage::simulate || upto == PipelineStage::preprocess) return sub;

        // inverse operator: noise covariance from the first session's silence
        if (sub.sessions.empty()) throw ConfigError("dataset " + dcfg.id + " has no sessions");
        const Json op_key = {{"anatomy", anatomy_json()},
                             {"dataset", dataset_json},
                             {"subject", index},
                             {"noise", noise_json},
                             {"inverse",
                              {{"method", to_string(cfg.method)},
                               {"snr", cfg.snr},
                               {"cov", to_string(cfg.cov_form)},
                               {"structurals", to_string(dcfg.structurals)}}}};
        const auto op_file =
            cache_path(cache_root, dcfg.id, sub.id, "subject", param_hash(op_key.dump()), "invop");
        const SensorRecording& cov_session = sub.sessions.front().preprocessed;
        if (!force && cache_exists(op_file)) {
            sub.op.weights = cache_load(op_file, op_key.dump()).to_matrix();
            sub.op.method = cfg.method;
            sub.op.snr = cfg.snr;
            sub.op.lambda2 = 1.0 / (cfg.snr * cfg.snr);
            sub.op.subject_id = sub.id;
        } else {
            const NoiseCovariance cov = estimate_noise_covariance(cov_session, cfg.cov_form);
            std::optional<Eigen::MatrixXd> data_cov;
            if (cfg.method == InverseMethod::lcmv) data_cov = estimate_data_covariance(cov_session.data);
            sub.op = make_inverse_operator(lf_recon, cov, cfg.snr, cfg.method, data_cov, sub.id);
            cache_store(op_file, op_key.dump(), Tensor::from_matrix(sub.op.weights));
        }

        // per-session source features (native grid + template grid)
        std::optional<VoxelPcaBasis> pca;
        for (int j = 0; j < static_cast<int>(sub.sessions.size()); ++j) {
            SessionData& sd = sub.sessions[static_cast<std::size_t>(j)];
            Json feat_key = {{"op", op_key}, {"session", j}, {"voxel_type", to_string(cfg.voxel_type)},
                             {"dimred", cfg.dimred},
                             {"preproc", pre_key_of(dataset_json, index, j)}};
            const std::string feat_hash = param_hash(feat_key.dump());
            const auto native_file =
                cache_path(cache_root, dcfg.id, sub.id, sd.key.session, feat_hash, "src-native");
            const auto tmpl_file =
                cache_path(cache_root, dcfg.id, sub.id, sd.key.session, feat_hash, "src-template");

            sd.source_native.key = sd.key;
            sd.source_native.repr = Representation::source;
            sd.source_native.labels = sd.sensor.labels;
            sd.source_template = sd.source_native;

            if (!force && cache_exists(native_file) && cache_exists(tmpl_file)) {
                sd.source_native.features = cache_load(native_file, feat_key.dump()).to_matrix();
                sd.source_template.features = cache_load(tmpl_file, feat_key.dump()).to_matrix();
                continue;
            }

            const SourceEstimate est = apply_inverse(sub.op, sd.preprocessed, VoxelType::vec);

            Eigen::MatrixXd native;
            if (cfg.dimred == "none") {
                native = cfg.voxel_type == VoxelType::mag ? vec_to_mag(est).data : est.data;
            } else if (cfg.dimred == "parcels") {
                if (dcfg.split_mode != SplitPlan::Mode::single_subject)
                    throw ConfigError("dimred applies to single-subject datasets only");
                native = parcel_features(est, sub.recon_anatomy).data;
            } else if (cfg.dimred == "pca1" || cfg.dimred == "pca2" || cfg.dimred == "pca3") {
                if (dcfg.split_mode != SplitPlan::Mode::single_subject)
                    throw ConfigError("dimred applies to single-subject datasets only");
                if (!pca) {
                    // fit on the training sessions only to avoid leakage
                    Eigen::MatrixXd train_data(est.data.rows(), 0);
                    for (int t = 0; t < dcfg.train_sessions; ++t) {
                        const SourceEstimate e =
                            apply_inverse(sub.op, sub.sessions[static_cast<std::size_t>(t)].preprocessed,
                                          VoxelType::vec);
                        Eigen::MatrixXd merged(est.data.rows(), train_data.cols() + e.data.cols());
                        merged << train_data, e.data;
                        train_data = std::move(merged);
                    }
                    SourceEstimate train_est = est;
                    train_est.data = train_data;
                    pca = fit_voxel_pca(train_est, cfg.dimred.back() - '0');
                }
                native = apply_voxel_pca(*pca, est);
            } else {
                throw ConfigError("unknown dimred: " + cfg.dimred);
            }
            sd.source_native.features = standardize(native).data;

            if (cfg.dimred != "none" || cfg.voxel_type == VoxelType::mag) {
                // reduced or magnitude features stay on their native grid
                sd.source_template.features = sd.source_native.features;
            } else if (native_is_template) {
                sd.source_template.features = sd.source_native.features;
            } else {
                if (!morph_built) {
                    to_template = build_morph(sub.recon_anatomy, sc.template_anatomy);
                    morph_built = true;
                }
                const SourceEstimate morphed = apply_morph(to_template, est);
                sd.source_template.features = standardize(morphed.data).data;
            }
            cache_store(native_file, feat_key.dump(), Tensor::from_matrix(sd.source_native.features));
            cache_store(tmpl_file, feat_key.dump(), Tensor::from_matrix(sd.source_template.features));
        }
        return sub;
    }

    Json pre_key_of(const Json& dataset_json, int subject, int session) const {
        return Json{{"dataset", dataset_json},
                    {"subject", subject},
                    {"session", session},
                    {"hp", cfg.preproc.highpass_hz ? Json(*cfg.preproc.highpass_hz) : Json()},
                    {"lp", cfg.preproc.lowpass_hz ? Json(*cfg.preproc.lowpass_hz) : Json()},
                    {"ds", cfg.preproc.downsample_hz ? Json(*cfg.preproc.downsample_hz) : Json()}};
    }
};

}  // namespace

BuiltScenario build_scenario(const ScenarioConfig& cfg, const std::filesystem::path& cache_root,
                             bool force) {
    Builder b{cfg, cache_root, force, PipelineStage::assemble};
    return b.run();
}

int run_pipeline_stage(const ScenarioConfig& cfg, PipelineStage stage,
                       const std::filesystem::path& cache_root, bool force) {
    Builder b{cfg, cache_root, force, stage};
    b.run();
    return b.sessions_processed;
}

// --- plans and sample sets -------------------------------------------------------

SplitPlan inter_subject_plan(const DatasetScenario& ds) {
    if (ds.cfg.split_mode != SplitPlan::Mode::inter_subject)
        throw ConfigError("dataset " + ds.cfg.id + " is not an inter-subject dataset");
    SplitPlan plan;
    plan.mode = SplitPlan::Mode::inter_subject;
    int idx = 0;
    for (int i = 0; i < ds.cfg.n_subjects; ++i) {
        const std::string split = i < ds.cfg.train_subjects
                                      ? "train"
                                      : (i < ds.cfg.train_subjects + ds.cfg.val_subjects ? "val" : "test");
        const auto& sub = ds.subjects[static_cast<std::size_t>(i)];
        for (const auto& sd : sub.sessions) plan.splits[split].push_back(sd.key);
        if (split == "train") plan.subject_index[sub.id] = idx++;
    }
    return plan;
}

SplitPlan single_subject_plan(const DatasetScenario& ds, const std::string& subject_id) {
    if (ds.cfg.split_mode != SplitPlan::Mode::single_subject)
        throw ConfigError("dataset " + ds.cfg.id + " is not a single-subject dataset");
    const auto& sub = ds.subject(subject_id);
    SplitPlan plan;
    plan.mode = SplitPlan::Mode::single_subject;
    plan.subject_index[sub.id] = 0;
    for (int j = 0; j < static_cast<int>(sub.sessions.size()); ++j) {
        const std::string split =
            j < ds.cfg.train_sessions
                ? "train"
                : (j < ds.cfg.train_sessions + ds.cfg.val_sessions ? "val" : "test");
        plan.splits[split].push_back(sub.sessions[static_cast<std::size_t>(j)].key);
    }
    return plan;
}

namespace {

std::vector<SessionFeatures> collect_features(const BuiltScenario& sc, const std::string& dataset_id,
                                              Representation repr, bool template_grid) {
    std::vector<SessionFeatures> out;
    for (const auto& sub : sc.dataset(dataset_id).subjects)
        for (const auto& sd : sub.sessions)
            out.push_back(repr == Representation::sensor ? sd.sensor
                                                         : (template_grid ? sd.source_template : sd.source_native));
    return out;
}

}  // namespace

std::map<std::string, SampleSet> sample_sets_inter(const BuiltScenario& sc, const std::string& dataset_id,
                                                   Representation repr) {
    const DatasetScenario& ds = sc.dataset(dataset_id);
    const SplitPlan plan = inter_subject_plan(ds);
    auto sets = assemble(plan, repr, collect_features(sc, dataset_id, repr, true),
                         repr == Representation::source ? sc.template_grid : nullptr);
    for (auto& [split, set] : sets)
        if (repr == Representation::sensor) set.sensor_positions = ds.sensors.positions;
    return sets;
}

std::map<std::string, SampleSet> sample_sets_single(const BuiltScenario& sc, const std::string& dataset_id,
                                                    const std::string& subject_id, Representation repr) {
    const DatasetScenario& ds = sc.dataset(dataset_id);
    const SplitPlan plan = single_subject_plan(ds, subject_id);
    std::vector<SessionFeatures> features;
    for (const auto& sd : ds.subject(subject_id).sessions)
        features.push_back(repr == Representation::sensor ? sd.sensor : sd.source_native);
    auto sets = assemble(plan, repr, features,
                         repr == Representation::source ? sc.subject_grid(dataset_id, subject_id) : nullptr);
    for (auto& [split, set] : sets)
        if (repr == Representation::sensor) set.sensor_positions = ds.sensors.positions;
    return sets;
}

std::map<std::string, SampleSet> sample_sets_combined(const BuiltScenario& sc, const std::string& id_a,
                                                      const std::string& id_b) {
    const DatasetScenario& a = sc.dataset(id_a);
    const DatasetScenario& b = sc.dataset(id_b);
    SplitPlan plan = inter_subject_plan(a);
    int next_index = plan.n_subjects();
    if (sc.cfg.combined_sessions > b.cfg.train_sessions)
        throw ConfigError("combined sessions must come from dataset " + id_b + "'s training sessions");
    for (const auto& subject_id : sc.cfg.combined_subjects) {
        const auto& sub = b.subject(subject_id);
        for (int j = 0; j < sc.cfg.combined_sessions; ++j)
            plan.splits["train"].push_back(sub.sessions[static_cast<std::size_t>(j)].key);
        plan.subject_index[sub.id] = next_index++;
    }
    std::vector<SessionFeatures> features = collect_features(sc, id_a, Representation::source, true);
    const auto more = collect_features(sc, id_b, Representation::source, true);
    features.insert(features.end(), more.begin(), more.end());
    return assemble(plan, Representation::source, features, sc.template_grid);
}

std::filesystem::path resolve_cache_root(const std::string& cli_value) {
    if (!cli_value.empty()) return cli_value;
    if (const char* env = std::getenv("VOXDEC_CACHE_DIR"); env && *env) return env;
    return "cache";
}

}  // namespace voxdec
