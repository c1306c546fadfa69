#include "nvfg/data_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "nvfg/errors.hpp"
#include "nvfg/rng.hpp"

namespace nvfg {

void Dataset::validate() const {
    if (samples.size() != labels.size()) {
        throw DatasetError("sample and label counts differ");
    }
    if (class_names.empty()) {
        if (!samples.empty()) throw DatasetError("samples present but no classes named");
        return;
    }
    std::vector<std::size_t> counts(class_names.size(), 0);
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= class_names.size()) {
            throw DatasetError("label " + std::to_string(y) + " outside [0, " +
                               std::to_string(class_names.size()) + ")");
        }
        ++counts[static_cast<std::size_t>(y)];
    }
    for (std::size_t c = 0; c < counts.size(); ++c) {
        if (counts[c] == 0) throw DatasetError("class '" + class_names[c] + "' has no samples");
    }
    for (const Tensor& s : samples) {
        if (s.shape() != samples.front().shape()) {
            throw DatasetError("samples do not share a shape");
        }
    }
}

Tensor Dataset::batch(std::span<const std::size_t> indices, const Shape& sample_shape) const {
    std::vector<Tensor> picked;
    picked.reserve(indices.size());
    for (std::size_t i : indices) {
        if (i >= samples.size()) throw DimensionError("sample index out of range");
        picked.push_back(samples[i].reshaped(sample_shape));
    }
    return stack(picked);
}

std::vector<int> Dataset::batch_labels(std::span<const std::size_t> indices) const {
    std::vector<int> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(labels.at(i));
    return out;
}

std::vector<std::size_t> Dataset::indices_of(int label) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == label) out.push_back(i);
    }
    return out;
}

// ---------------------------------------------------------------------------
// IDX

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                        const std::filesystem::path& path) {
    if (offset + 4 > bytes.size()) throw CorruptionError("'" + path.string() + "' header truncated");
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
    const auto image_bytes = read_file(images);
    const auto label_bytes = read_file(labels);

    if (read_be32(image_bytes, 0, images) != 0x00000803) {
        throw FormatError("'" + images.string() + "' is not an IDX image file (magic 0x00000803)");
    }
    if (read_be32(label_bytes, 0, labels) != 0x00000801) {
        throw FormatError("'" + labels.string() + "' is not an IDX label file (magic 0x00000801)");
    }
    const std::size_t count = read_be32(image_bytes, 4, images);
    const std::size_t rows = read_be32(image_bytes, 8, images);
    const std::size_t cols = read_be32(image_bytes, 12, images);
    const std::size_t label_count = read_be32(label_bytes, 4, labels);
    if (count != label_count) {
        throw ConsistencyError(std::to_string(count) + " images but " + std::to_string(label_count) +
                               " labels");
    }
    const std::size_t pixels = rows * cols;
    if (image_bytes.size() < 16 + count * pixels) {
        throw CorruptionError("'" + images.string() + "' payload truncated");
    }
    if (label_bytes.size() < 8 + count) {
        throw CorruptionError("'" + labels.string() + "' payload truncated");
    }

    // Raw label values are remapped densely; class names are their decimal text.
    std::set<int> present(label_bytes.begin() + 8,
                          label_bytes.begin() + 8 + static_cast<std::ptrdiff_t>(count));
    std::map<int, int> dense;
    Dataset ds;
    for (int raw : present) {
        dense[raw] = static_cast<int>(ds.class_names.size());
        ds.class_names.push_back(std::to_string(raw));
    }
    ds.samples.reserve(count);
    ds.labels.reserve(count);
    for (std::size_t n = 0; n < count; ++n) {
        Tensor img(Shape{1, rows, cols});
        const unsigned char* src = image_bytes.data() + 16 + n * pixels;
        for (std::size_t p = 0; p < pixels; ++p) img[p] = static_cast<double>(src[p]) / 255.0;
        ds.samples.push_back(std::move(img));
        ds.labels.push_back(dense.at(label_bytes[8 + n]));
    }
    ds.provenance = "idx:" + images.string() + "," + labels.string();
    ds.validate();
    return ds;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_cells(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

double parse_number(const std::string& cell, std::size_t line_no) {
    const std::string text = trim(cell);
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (text.empty() || ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(value)) {
        throw ParseError("line " + std::to_string(line_no) + ": '" + text + "' is not a number");
    }
    return value;
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "'");

    std::string line;
    if (!std::getline(in, line)) throw DatasetError("'" + path.string() + "' is empty");
    const auto header = split_cells(trim(line));
    if (header.size() < 2 || trim(header[0]) != "label") {
        throw FormatError("'" + path.string() + "' header must be label,f0,f1,...");
    }
    const std::size_t features = header.size() - 1;

    std::vector<std::string> names;
    std::vector<std::vector<double>> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty()) continue;
        const auto cells = split_cells(line);
        if (cells.size() != header.size()) {
            throw FormatError("line " + std::to_string(line_no) + " has " +
                              std::to_string(cells.size()) + " cells, header has " +
                              std::to_string(header.size()));
        }
        names.push_back(trim(cells[0]));
        std::vector<double> values(features);
        for (std::size_t j = 0; j < features; ++j) values[j] = parse_number(cells[j + 1], line_no);
        rows.push_back(std::move(values));
    }
    if (rows.empty()) throw DatasetError("'" + path.string() + "' has no data rows");

    Dataset ds;
    std::set<std::string> unique(names.begin(), names.end());
    ds.class_names.assign(unique.begin(), unique.end());
    std::map<std::string, int> index;
    for (std::size_t i = 0; i < ds.class_names.size(); ++i) {
        index[ds.class_names[i]] = static_cast<int>(i);
    }
    for (std::size_t r = 0; r < rows.size(); ++r) {
        ds.samples.emplace_back(Shape{features}, std::move(rows[r]));
        ds.labels.push_back(index.at(names[r]));
    }
    ds.provenance = "csv:" + path.string();
    ds.validate();
    return ds;
}

void write_csv(const Dataset& dataset, const std::filesystem::path& path) {
    dataset.validate();
    if (dataset.empty()) throw DatasetError("refusing to write an empty dataset");
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    const std::size_t features = dataset.samples.front().numel();
    out << "label";
    for (std::size_t j = 0; j < features; ++j) out << ",f" << j;
    out << '\n';
    char buf[40];
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        out << dataset.class_names[static_cast<std::size_t>(dataset.labels[i])];
        for (double v : dataset.samples[i].data()) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            out << ',' << buf;
        }
        out << '\n';
    }
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Synthetic clusters

std::string to_string(ClusterRole role) {
    switch (role) {
        case ClusterRole::known: return "known";
        case ClusterRole::novel: return "novel";
        case ClusterRole::reference: return "reference";
    }
    return "unknown";
}

ClusterRole cluster_role_from_string(const std::string& name) {
    if (name == "known") return ClusterRole::known;
    if (name == "novel") return ClusterRole::novel;
    if (name == "reference") return ClusterRole::reference;
    throw ConfigError("unknown cluster role '" + name + "'");
}

void SyntheticSpec::validate() const {
    if (dimension == 0) throw ConfigError("synthetic dimension must be positive");
    if (clusters.empty()) throw ConfigError("synthetic spec has no clusters");
    std::set<std::string> seen;
    for (const ClusterSpec& c : clusters) {
        if (c.mean.size() != dimension) {
            throw ConfigError("cluster '" + c.name + "' mean has " + std::to_string(c.mean.size()) +
                              " entries, expected " + std::to_string(dimension));
        }
        if (!(c.stddev > 0.0) || !std::isfinite(c.stddev)) {
            throw ConfigError("cluster '" + c.name + "' stddev must be positive");
        }
        if (c.count == 0) throw ConfigError("cluster '" + c.name + "' has zero samples");
        if (!seen.insert(c.name).second) throw ConfigError("duplicate cluster name '" + c.name + "'");
    }
}

void SyntheticSpec::validate_for_novelty() const {
    validate();
    std::size_t known = 0, novel = 0;
    for (const ClusterSpec& c : clusters) {
        known += c.role == ClusterRole::known;
        novel += c.role == ClusterRole::novel;
    }
    if (known < 2) throw ConfigError("a novelty experiment needs at least 2 known clusters");
    if (novel < 1) throw ConfigError("a novelty experiment needs at least 1 novel cluster");
}

SyntheticData synth_gaussian(const SyntheticSpec& spec) {
    spec.validate();
    SyntheticData out;
    auto route = [&](ClusterRole role) -> Dataset& {
        switch (role) {
            case ClusterRole::known: return out.known;
            case ClusterRole::novel: return out.novel;
            case ClusterRole::reference: break;
        }
        return out.reference;
    };
    for (std::size_t k = 0; k < spec.clusters.size(); ++k) {
        const ClusterSpec& cluster = spec.clusters[k];
        Dataset& ds = route(cluster.role);
        const int label = static_cast<int>(ds.class_names.size());
        ds.class_names.push_back(cluster.name);
        Rng rng = Rng::stream(spec.seed, k);
        for (std::size_t n = 0; n < cluster.count; ++n) {
            Tensor x(Shape{spec.dimension});
            for (std::size_t d = 0; d < spec.dimension; ++d) {
                x[d] = cluster.mean[d] + cluster.stddev * rng.normal();
            }
            ds.samples.push_back(std::move(x));
            ds.labels.push_back(label);
        }
    }
    const std::string origin = "synthetic:seed=" + std::to_string(spec.seed);
    for (Dataset* ds : {&out.known, &out.novel, &out.reference}) {
        ds->provenance = origin;
        ds->validate();
    }
    return out;
}

SyntheticSpec benchmark_spec(std::uint64_t seed, const BenchmarkLayout& layout) {
    if (layout.known_clusters < 2) throw ConfigError("the benchmark needs at least 2 known clusters");
    SyntheticSpec spec;
    spec.dimension = layout.dimension;
    spec.seed = seed;
    Rng placement = Rng::stream(seed, 0xbe9c4);

    auto on_sphere = [&](std::vector<double> v, double radius) {
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (norm == 0.0) throw ConfigError("benchmark cluster mean collapsed to the origin");
        for (double& x : v) x *= radius / norm;
        return v;
    };
    auto random_direction = [&](double radius) {
        std::vector<double> v(layout.dimension);
        for (double& x : v) x = placement.normal();
        return on_sphere(std::move(v), radius);
    };
    auto add = [&](const char* prefix, std::size_t i, std::vector<double> mean, ClusterRole role) {
        char name[32];
        std::snprintf(name, sizeof name, "%s_%02zu", prefix, i);
        spec.clusters.push_back({name, std::move(mean), layout.stddev, layout.samples_per_cluster, role});
    };

    for (std::size_t i = 0; i < layout.known_clusters; ++i) {
        add("known", i, random_direction(layout.known_radius), ClusterRole::known);
    }
    // Known pairs in lexicographic order, cycled when there are more novel
    // clusters than pairs.
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t a = 0; a < layout.known_clusters; ++a) {
        for (std::size_t b = a + 1; b < layout.known_clusters; ++b) pairs.emplace_back(a, b);
    }
    for (std::size_t i = 0; i < layout.novel_clusters; ++i) {
        const auto [a, b] = pairs[i % pairs.size()];
        std::vector<double> blend(layout.dimension);
        for (std::size_t d = 0; d < layout.dimension; ++d) {
            blend[d] = spec.clusters[a].mean[d] + spec.clusters[b].mean[d];
        }
        add("novel", i, on_sphere(std::move(blend), layout.novel_radius), ClusterRole::novel);
    }
    for (std::size_t i = 0; i < layout.reference_clusters; ++i) {
        add("reference", i, random_direction(layout.reference_radius), ClusterRole::reference);
    }
    return spec;
}

// ---------------------------------------------------------------------------
// Splits

void SplitSpec::validate() const {
    if (!(known_fraction > 0.0 && known_fraction < 1.0)) {
        throw ConfigError("known fraction must lie in (0, 1)");
    }
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw ConfigError("train fraction must lie in (0, 1)");
    }
}

namespace {

// Keeps samples whose label is in `chosen` (old label -> new label).
Dataset select_classes(const Dataset& ds, const std::vector<int>& old_labels,
                       const std::string& tag) {
    Dataset out;
    std::map<int, int> remap;
    for (int old : old_labels) {
        remap[old] = static_cast<int>(out.class_names.size());
        out.class_names.push_back(ds.class_names[static_cast<std::size_t>(old)]);
    }
    for (std::size_t i = 0; i < ds.size(); ++i) {
        auto it = remap.find(ds.labels[i]);
        if (it == remap.end()) continue;
        out.samples.push_back(ds.samples[i]);
        out.labels.push_back(it->second);
    }
    out.provenance = ds.provenance + "|" + tag;
    return out;
}

}  // namespace

KnownNovelSplit split_known_novel(const Dataset& dataset, const SplitSpec& spec) {
    spec.validate();
    dataset.validate();
    const std::size_t total = dataset.num_classes();
    if (total < 2) throw ProtocolError("known/novel split needs at least 2 classes");
    const auto known_count =
        static_cast<std::size_t>(std::floor(spec.known_fraction * static_cast<double>(total)));
    if (known_count == 0 || known_count >= total) {
        throw ProtocolError("known fraction " + std::to_string(spec.known_fraction) + " of " +
                            std::to_string(total) + " classes leaves one side empty");
    }
    std::vector<int> order(total);
    for (std::size_t i = 0; i < total; ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return dataset.class_names[static_cast<std::size_t>(a)] <
               dataset.class_names[static_cast<std::size_t>(b)];
    });
    const auto mid = order.begin() + static_cast<std::ptrdiff_t>(known_count);
    return {select_classes(dataset, {order.begin(), mid}, "known"),
            select_classes(dataset, {mid, order.end()}, "novel")};
}

TrainTestSplit split_train_test(const Dataset& known, std::uint64_t seed, double train_fraction) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw ConfigError("train fraction must lie in (0, 1)");
    }
    known.validate();
    std::vector<bool> to_train(known.size(), false);
    for (std::size_t c = 0; c < known.num_classes(); ++c) {
        std::vector<std::size_t> members = known.indices_of(static_cast<int>(c));
        if (members.size() < 2) {
            throw ProtocolError("class '" + known.class_names[c] + "' has fewer than 2 samples");
        }
        Rng rng = Rng::stream(seed, c);
        rng.shuffle(members);
        auto n_train = static_cast<std::size_t>(
            std::ceil(train_fraction * static_cast<double>(members.size()) - 1e-9));
        n_train = std::clamp<std::size_t>(n_train, 1, members.size() - 1);
        for (std::size_t i = 0; i < n_train; ++i) to_train[members[i]] = true;
    }
    TrainTestSplit out;
    out.train.class_names = out.test.class_names = known.class_names;
    out.train.provenance = known.provenance + "|train";
    out.test.provenance = known.provenance + "|test";
    for (std::size_t i = 0; i < known.size(); ++i) {
        Dataset& dst = to_train[i] ? out.train : out.test;
        dst.samples.push_back(known.samples[i]);
        dst.labels.push_back(known.labels[i]);
    }
    return out;
}

void require_disjoint_classes(const Dataset& known, const Dataset& reference) {
    std::set<std::string> names(known.class_names.begin(), known.class_names.end());
    for (const std::string& r : reference.class_names) {
        if (names.contains(r)) {
            throw ConfigError("reference class '" + r + "' also appears among the known classes");
        }
    }
}

}  // namespace nvfg
