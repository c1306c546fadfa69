#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "nvfg/tensor.hpp"

namespace nvfg {

/// Labeled samples with dense labels in [0, class_names.size()).
struct Dataset {
    std::vector<Tensor> samples;
    std::vector<int> labels;
    std::vector<std::string> class_names;
    std::string provenance;

    std::size_t size() const { return samples.size(); }
    std::size_t num_classes() const { return class_names.size(); }
    bool empty() const { return samples.empty(); }

    /// Throws DatasetError on sparse labels, empty classes or mixed sample shapes.
    /// A dataset with no classes and no samples is valid.
    void validate() const;

    /// Stacks the selected samples, each reshaped to `sample_shape`.
    Tensor batch(std::span<const std::size_t> indices, const Shape& sample_shape) const;
    std::vector<int> batch_labels(std::span<const std::size_t> indices) const;

    /// Indices of all samples carrying `label`.
    std::vector<std::size_t> indices_of(int label) const;
};

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Header `label,f0,f1,...`; label cells are class names, mapped to dense
/// indices in lexicographic name order.
Dataset load_csv(const std::filesystem::path& path);

/// Writes the CSV layout read by load_csv with 17 significant digits.
void write_csv(const Dataset& dataset, const std::filesystem::path& path);

enum class ClusterRole { known, novel, reference };

std::string to_string(ClusterRole role);
ClusterRole cluster_role_from_string(const std::string& name);

struct ClusterSpec {
    std::string name;
    std::vector<double> mean;
    double stddev = 1.0;
    std::size_t count = 0;
    ClusterRole role = ClusterRole::known;
};

struct SyntheticSpec {
    std::size_t dimension = 0;
    std::vector<ClusterSpec> clusters;
    std::uint64_t seed = 0;

    void validate() const;
    /// Additionally requires >= 2 known clusters and >= 1 novel cluster.
    void validate_for_novelty() const;
};

struct SyntheticData {
    Dataset known;
    Dataset novel;
    Dataset reference;
};

/// Isotropic Gaussian clusters routed by role. Deterministic given spec.seed.
SyntheticData synth_gaussian(const SyntheticSpec& spec);

/// Placement of the bundled Gaussian benchmark.
struct BenchmarkLayout {
    std::size_t dimension = 8;
    std::size_t known_clusters = 4;
    std::size_t novel_clusters = 4;
    std::size_t reference_clusters = 8;
    std::size_t samples_per_cluster = 200;
    double stddev = 1.0;
    // Known and reference means sit on spheres around the origin in uniformly
    // random directions. Each novel mean points along the average of two
    // known means, so novel samples resemble several known classes at once,
    // and lies on a shell just outside the known one.
    double known_radius = 6.0;
    double novel_radius = 8.0;
    double reference_radius = 12.0;
};

SyntheticSpec benchmark_spec(std::uint64_t seed, const BenchmarkLayout& layout = {});

struct SplitSpec {
    double known_fraction = 0.5;
    double train_fraction = 0.5;
    std::uint64_t seed = 0;

    void validate() const;
};

struct KnownNovelSplit {
    Dataset known;
    Dataset novel;
};

/// Sorts class names lexicographically and assigns the first
/// floor(known_fraction * K) classes to the known set.
KnownNovelSplit split_known_novel(const Dataset& dataset, const SplitSpec& spec);

struct TrainTestSplit {
    Dataset train;
    Dataset test;
};

/// Per-class random split; train receives ceil(train_fraction * n) samples,
/// clamped so both halves hold every class.
TrainTestSplit split_train_test(const Dataset& known, std::uint64_t seed, double train_fraction = 0.5);

/// Rejects reference data whose class names overlap the known classes.
void require_disjoint_classes(const Dataset& known, const Dataset& reference);

}  // namespace nvfg
