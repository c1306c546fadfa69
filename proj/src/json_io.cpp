#include "nvfg/json_io.hpp"

#include "nvfg/errors.hpp"

namespace nvfg {

namespace {

template <typename T>
T get_or(const Json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("field '") + key + "': " + e.what());
    }
}

template <typename T>
T require(const Json& j, const char* key) {
    if (!j.is_object() || !j.contains(key)) throw ConfigError(std::string("missing field '") + key + "'");
    return get_or<T>(j, key, T{});
}

}  // namespace

Json to_json(const NetworkSpec& spec) {
    Json layers = Json::array();
    for (const LayerSpec& l : spec.layers) {
        Json entry{{"kind", to_string(l.kind)}};
        if (l.kind == LayerKind::dense) {
            entry["in"] = l.in;
            entry["out"] = l.out;
        } else if (l.kind == LayerKind::conv2d) {
            entry["in"] = l.in;
            entry["filters"] = l.out;
            entry["kernel"] = l.kernel;
            entry["stride"] = l.stride;
        }
        layers.push_back(std::move(entry));
    }
    return Json{{"input_shape", spec.input_shape}, {"layers", std::move(layers)}};
}

NetworkSpec network_spec_from_json(const Json& j) {
    NetworkSpec spec;
    spec.input_shape = require<Shape>(j, "input_shape");
    const Json layers = require<Json>(j, "layers");
    if (!layers.is_array()) throw ConfigError("'layers' must be an array");
    Shape current = spec.input_shape;
    for (const Json& entry : layers) {
        LayerSpec l;
        l.kind = layer_kind_from_string(require<std::string>(entry, "kind"));
        const std::size_t inferred = current.empty() ? 0 : current[0];
        switch (l.kind) {
            case LayerKind::dense:
                l.in = get_or<std::size_t>(entry, "in", inferred);
                l.out = require<std::size_t>(entry, "out");
                current = {l.out};
                break;
            case LayerKind::conv2d:
                l.in = get_or<std::size_t>(entry, "in", inferred);
                l.out = require<std::size_t>(entry, "filters");
                l.kernel = require<std::size_t>(entry, "kernel");
                l.stride = get_or<std::size_t>(entry, "stride", 1);
                if (current.size() == 3 && l.stride > 0 && l.kernel <= current[1] && l.kernel <= current[2]) {
                    current = {l.out, (current[1] - l.kernel) / l.stride + 1,
                               (current[2] - l.kernel) / l.stride + 1};
                } else {
                    current = {l.out};
                }
                break;
            case LayerKind::relu:
                break;
            case LayerKind::global_avg_pool:
                current = {inferred};
                break;
        }
        spec.layers.push_back(l);
    }
    spec.validate();
    return spec;
}

Json to_json(const TrainingConfig& cfg) {
    return Json{{"lambda", cfg.lambda},
                {"alpha1", cfg.alpha1},
                {"alpha2", cfg.alpha2},
                {"learning_rate", cfg.learning_rate},
                {"momentum", cfg.momentum},
                {"epochs", cfg.epochs},
                {"batch_size_known", cfg.batch_size_known},
                {"batch_size_reference", cfg.batch_size_reference},
                {"seed", cfg.seed},
                {"mode", to_string(cfg.mode)}};
}

TrainingConfig training_config_from_json(const Json& j) {
    TrainingConfig cfg;
    if (!j.is_object()) throw ConfigError("training section must be an object");
    cfg.lambda = get_or(j, "lambda", cfg.lambda);
    cfg.alpha1 = get_or(j, "alpha1", cfg.alpha1);
    cfg.alpha2 = get_or(j, "alpha2", cfg.alpha2);
    cfg.learning_rate = get_or(j, "learning_rate", cfg.learning_rate);
    cfg.momentum = get_or(j, "momentum", cfg.momentum);
    cfg.epochs = get_or(j, "epochs", cfg.epochs);
    cfg.batch_size_known = get_or(j, "batch_size_known", cfg.batch_size_known);
    cfg.batch_size_reference = get_or(j, "batch_size_reference", cfg.batch_size_reference);
    cfg.seed = get_or(j, "seed", cfg.seed);
    cfg.mode = training_mode_from_string(get_or<std::string>(j, "mode", to_string(cfg.mode)));
    cfg.validate();
    return cfg;
}

Json to_json(const SyntheticSpec& spec) {
    Json clusters = Json::array();
    for (const ClusterSpec& c : spec.clusters) {
        clusters.push_back({{"name", c.name},
                            {"mean", c.mean},
                            {"stddev", c.stddev},
                            {"count", c.count},
                            {"role", to_string(c.role)}});
    }
    return Json{{"dimension", spec.dimension}, {"seed", spec.seed}, {"clusters", std::move(clusters)}};
}

SyntheticSpec synthetic_spec_from_json(const Json& j) {
    SyntheticSpec spec;
    spec.dimension = require<std::size_t>(j, "dimension");
    spec.seed = get_or<std::uint64_t>(j, "seed", 0);
    for (const Json& c : require<Json>(j, "clusters")) {
        ClusterSpec cluster;
        cluster.name = require<std::string>(c, "name");
        cluster.mean = require<std::vector<double>>(c, "mean");
        cluster.stddev = require<double>(c, "stddev");
        cluster.count = require<std::size_t>(c, "count");
        cluster.role = cluster_role_from_string(require<std::string>(c, "role"));
        spec.clusters.push_back(std::move(cluster));
    }
    spec.validate();
    return spec;
}

Json to_json(const SplitSpec& spec) {
    return Json{{"known_fraction", spec.known_fraction},
                {"train_fraction", spec.train_fraction},
                {"seed", spec.seed},
                {"ordering", "alphabetical"}};
}

SplitSpec split_spec_from_json(const Json& j) {
    SplitSpec spec;
    if (j.is_null()) return spec;
    spec.known_fraction = get_or(j, "known_fraction", spec.known_fraction);
    spec.train_fraction = get_or(j, "train_fraction", spec.train_fraction);
    spec.seed = get_or(j, "seed", spec.seed);
    const auto ordering = get_or<std::string>(j, "ordering", "alphabetical");
    if (ordering != "alphabetical") throw ConfigError("only alphabetical class ordering is supported");
    spec.validate();
    return spec;
}

Json to_json(const NoveltyThreshold& t) {
    return Json{{"gamma", t.gamma},
                {"percentile", t.percentile},
                {"target_fnr", t.target_fnr},
                {"realized_fnr", t.realized_fnr},
                {"sample_count", t.sample_count}};
}

Json to_json(const FilterReport& report) {
    Json classes = Json::array();
    for (std::size_t i = 0; i < report.classes.size(); ++i) {
        classes.push_back({{"class", i},
                           {"positive", report.classes[i].positive},
                           {"negative", report.classes[i].negative}});
    }
    Json weights = Json::array();
    const std::size_t k = report.num_filters;
    for (std::size_t i = 0; i < report.classes.size(); ++i) {
        weights.push_back(std::vector<double>(report.weights.values().begin() + static_cast<std::ptrdiff_t>(i * k),
                                              report.weights.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * k)));
    }
    return Json{{"num_filters", k},
                {"num_classes", report.classes.size()},
                {"classes", std::move(classes)},
                {"globally_negative", report.globally_negative},
                {"weights", std::move(weights)}};
}

}  // namespace nvfg
