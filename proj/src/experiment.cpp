#include "nvfg/experiment.hpp"

#include <fstream>

#include "nvfg/errors.hpp"

namespace nvfg {

namespace {

std::filesystem::path resolve_existing(const Json& j, const char* key, const std::filesystem::path& base) {
    if (!j.contains(key) || !j.at(key).is_string()) {
        throw ConfigError(std::string("data source needs a '") + key + "' path");
    }
    std::filesystem::path p = j.at(key).get<std::string>();
    if (p.is_relative()) p = base / p;
    if (!std::filesystem::exists(p)) throw IoError("dataset file '" + p.string() + "' does not exist");
    return p;
}

DataSource parse_source(const Json& j, const std::filesystem::path& base) {
    DataSource src;
    src.format = j.value("format", std::string("csv"));
    if (src.format == "csv") {
        src.path = resolve_existing(j, "path", base);
    } else if (src.format == "idx") {
        src.images = resolve_existing(j, "images", base);
        src.labels = resolve_existing(j, "labels", base);
    } else {
        throw ConfigError("unknown data format '" + src.format + "'");
    }
    return src;
}

Dataset load_source(const DataSource& src) {
    return src.format == "idx" ? load_idx(src.images, src.labels) : load_csv(src.path);
}

BenchmarkSource parse_benchmark(const Json& j) {
    BenchmarkSource b;
    b.seed = j.value("seed", std::uint64_t{0});
    BenchmarkLayout& l = b.layout;
    l.dimension = j.value("dimension", l.dimension);
    l.known_clusters = j.value("known_clusters", l.known_clusters);
    l.novel_clusters = j.value("novel_clusters", l.novel_clusters);
    l.reference_clusters = j.value("reference_clusters", l.reference_clusters);
    l.samples_per_cluster = j.value("samples_per_cluster", l.samples_per_cluster);
    l.stddev = j.value("stddev", l.stddev);
    l.known_radius = j.value("known_radius", l.known_radius);
    l.novel_radius = j.value("novel_radius", l.novel_radius);
    l.reference_radius = j.value("reference_radius", l.reference_radius);
    return b;
}

}  // namespace

ExperimentConfig parse_experiment_config(const Json& doc, const std::filesystem::path& base_dir) {
    if (!doc.is_object()) throw ConfigError("experiment config must be a JSON object");
    for (const char* section : {"dataset", "model", "training"}) {
        if (!doc.contains(section)) throw ConfigError(std::string("missing '") + section + "' section");
    }
    ExperimentConfig cfg;
    try {
        const Json& ds = doc.at("dataset");
        DatasetSection& d = cfg.dataset;
        if (ds.contains("synthetic")) {
            const Json& s = ds.at("synthetic");
            if (s.contains("benchmark")) {
                d.benchmark = parse_benchmark(s.at("benchmark"));
            } else {
                d.synthetic = synthetic_spec_from_json(s);
            }
        }
        if (ds.contains("labeled")) d.labeled = parse_source(ds.at("labeled"), base_dir);
        if (ds.contains("known")) d.known = parse_source(ds.at("known"), base_dir);
        if (ds.contains("novel")) d.novel = parse_source(ds.at("novel"), base_dir);
        if (ds.contains("reference")) d.reference = parse_source(ds.at("reference"), base_dir);
        if (ds.contains("split")) d.split = split_spec_from_json(ds.at("split"));

        const int origins = (d.synthetic || d.benchmark) + d.labeled.has_value() +
                            (d.known.has_value() || d.novel.has_value());
        if (origins != 1) {
            throw ConfigError("dataset section needs exactly one of synthetic, labeled, or known+novel");
        }
        if (d.known.has_value() != d.novel.has_value()) {
            throw ConfigError("known and novel sources must be given together");
        }

        cfg.backbone = network_spec_from_json(doc.at("model").contains("backbone")
                                                  ? doc.at("model").at("backbone")
                                                  : doc.at("model"));
        cfg.training = training_config_from_json(doc.at("training"));

        if (doc.contains("evaluation")) {
            const Json& ev = doc.at("evaluation");
            EvaluationSection& e = cfg.evaluation;
            e.target_fnr = ev.value("target_fnr", e.target_fnr);
            e.calibration_split = ev.value("calibration_split", e.calibration_split);
            if (e.calibration_split != "train" && e.calibration_split != "test") {
                throw ConfigError("calibration_split must be 'train' or 'test'");
            }
            if (ev.contains("ablation_modes")) {
                e.ablation_modes.clear();
                for (const Json& m : ev.at("ablation_modes")) {
                    e.ablation_modes.push_back(training_mode_from_string(m.get<std::string>()));
                }
            }
            e.ablation_seeds = ev.value("ablation_seeds", e.ablation_seeds);
        }
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("malformed experiment config: ") + e.what());
    }
    return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path.string() + "'");
    Json doc;
    try {
        doc = Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw ParseError("config '" + path.string() + "': " + e.what());
    }
    return parse_experiment_config(doc, path.parent_path());
}

ExperimentData assemble_experiment(const DatasetSection& section) {
    section.split.validate();
    Dataset known;
    ExperimentData data;
    if (section.synthetic || section.benchmark) {
        const SyntheticSpec spec = section.synthetic ? *section.synthetic
                                                     : benchmark_spec(section.benchmark->seed,
                                                                      section.benchmark->layout);
        spec.validate_for_novelty();
        SyntheticData synth = synth_gaussian(spec);
        known = std::move(synth.known);
        data.novel = std::move(synth.novel);
        if (!synth.reference.empty()) data.reference = std::move(synth.reference);
    } else if (section.labeled) {
        KnownNovelSplit split = split_known_novel(load_source(*section.labeled), section.split);
        known = std::move(split.known);
        data.novel = std::move(split.novel);
    } else if (section.known && section.novel) {
        known = load_source(*section.known);
        data.novel = load_source(*section.novel);
    } else {
        throw ConfigError("dataset section names no known/novel data");
    }
    if (section.reference) {
        if (data.reference) throw ConfigError("reference data given twice");
        data.reference = load_source(*section.reference);
    }
    if (data.reference) {
        require_disjoint_classes(known, *data.reference);
        if (data.reference->samples.front().numel() != known.samples.front().numel()) {
            throw ConfigError("reference samples differ in size from known samples");
        }
    }
    TrainTestSplit halves = split_train_test(known, section.split.seed, section.split.train_fraction);
    data.train = std::move(halves.train);
    data.test = std::move(halves.test);
    return data;
}

Evaluation evaluate(const DualBranchModel& model, const Dataset& known_test, const Dataset& novel) {
    if (novel.empty()) throw ProtocolError("no novel samples: AUC is undefined");
    if (known_test.empty()) throw ProtocolError("no known test samples");
    if (known_test.num_classes() != model.known_classes) {
        throw ProtocolError("checkpoint has " + std::to_string(model.known_classes) +
                            " known classes, test data has " + std::to_string(known_test.num_classes()));
    }
    Evaluation ev;
    ev.records = score_dataset(model, known_test, false, 0);
    const auto novel_records = score_dataset(model, novel, true, known_test.size());
    ev.accuracy = closed_set_accuracy(ev.records);

    std::vector<double> known_scores, novel_scores;
    for (const auto& r : ev.records) known_scores.push_back(r.score);
    for (const auto& r : novel_records) novel_scores.push_back(r.score);
    ev.roc = roc_auc(known_scores, novel_scores);
    ev.records.insert(ev.records.end(), novel_records.begin(), novel_records.end());
    return ev;
}

TrainingRun train_experiment(const ExperimentData& data, const NetworkSpec& backbone,
                             const TrainingConfig& cfg, const EpochCallback& on_epoch) {
    const bool wants_reference = uses_reference(cfg.mode);
    if (wants_reference && !data.reference) {
        throw ConfigError(to_string(cfg.mode) + " needs reference data");
    }
    const std::size_t reference_classes = wants_reference ? data.reference->num_classes() : 0;
    DualBranchModel model = build_model_for_mode(cfg.mode, backbone, data.train.num_classes(),
                                                 reference_classes, cfg.seed);
    return train(std::move(model), data.train, wants_reference ? &*data.reference : nullptr, cfg,
                 on_epoch);
}

std::uint64_t ablation_seed(std::uint64_t base, std::size_t seed_index, std::size_t mode_index) {
    return base + 100 * seed_index + mode_index;
}

std::vector<AblationRow> run_ablation(const ExperimentData& data, const NetworkSpec& backbone,
                                      const TrainingConfig& base, std::span<const TrainingMode> modes,
                                      std::size_t seeds) {
    if (seeds == 0) throw ConfigError("ablation needs at least one seed");
    for (TrainingMode m : modes) {
        if (uses_reference(m) && !data.reference) {
            throw ConfigError(to_string(m) + " needs reference data");
        }
    }
    std::vector<AblationRow> rows;
    for (std::size_t s = 0; s < seeds; ++s) {
        for (TrainingMode mode : modes) {
            TrainingConfig cfg = base;
            cfg.mode = mode;
            cfg.seed = ablation_seed(base.seed, s, static_cast<std::size_t>(mode));
            const TrainingRun run = train_experiment(data, backbone, cfg);
            const Evaluation ev = evaluate(run.model, data.test, data.novel);
            rows.push_back({s, cfg.seed, mode, ev.roc.auc, ev.accuracy});
        }
    }
    return rows;
}

}  // namespace nvfg
