#include "nvfg/novelty_eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include "nvfg/errors.hpp"
#include "nvfg/file_util.hpp"

namespace nvfg {

ScoreRecord score_logits(std::span<const double> logits, std::size_t known_classes) {
    if (known_classes == 0 || known_classes > logits.size()) {
        throw DimensionError("cannot score " + std::to_string(known_classes) + " classes from " +
                             std::to_string(logits.size()) + " activations");
    }
    ScoreRecord r;
    std::size_t best = 0;
    for (std::size_t i = 1; i < known_classes; ++i) {
        if (logits[i] > logits[best]) best = i;
    }
    r.score = logits[best];
    r.predicted_class = static_cast<int>(best);
    return r;
}

ScoreRecord novelty_score(const DualBranchModel& model, const Tensor& sample) {
    const Shape& input = model.backbone.spec.input_shape;
    if (sample.numel() != shape_numel(input)) {
        throw DimensionError("sample shape " + shape_to_string(sample.shape()) +
                             " does not fit backbone input " + shape_to_string(input));
    }
    Shape batched{1};
    batched.insert(batched.end(), input.begin(), input.end());
    const Tensor f = model.known_logits(sample.reshaped(batched));
    return score_logits(f.data(), model.known_classes);
}

std::vector<ScoreRecord> score_dataset(const DualBranchModel& model, const Dataset& data,
                                       bool novel, std::size_t first_id) {
    std::vector<ScoreRecord> out;
    out.reserve(data.size());
    if (data.empty()) return out;

    const Shape& input = model.backbone.spec.input_shape;
    constexpr std::size_t kChunk = 256;
    for (std::size_t start = 0; start < data.size(); start += kChunk) {
        const std::size_t stop = std::min(data.size(), start + kChunk);
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < stop; ++i) idx.push_back(i);
        const Tensor f = model.known_logits(data.batch(idx, input));
        const std::size_t width = f.dim(1);
        for (std::size_t n = 0; n < idx.size(); ++n) {
            ScoreRecord r = score_logits(f.data().subspan(n * width, width), model.known_classes);
            r.sample_id = first_id + idx[n];
            r.is_novel = novel;
            r.true_class = novel ? -1 : data.labels[idx[n]];
            out.push_back(r);
        }
    }
    return out;
}

Decision decide(double score, double gamma) {
    return score < gamma ? Decision::novel : Decision::known;
}

NoveltyThreshold calibrate_threshold(std::span<const double> matched_scores, double target_fnr) {
    if (matched_scores.empty()) throw CalibrationError("no matched scores to calibrate on");
    if (!(target_fnr > 0.0 && target_fnr < 1.0)) {
        throw ConfigError("target false negative rate must lie in (0, 1), got " +
                          std::to_string(target_fnr));
    }
    std::vector<double> sorted(matched_scores.begin(), matched_scores.end());
    for (double s : sorted) {
        if (!std::isfinite(s)) throw CalibrationError("non-finite matched score");
    }
    std::sort(sorted.begin(), sorted.end());

    const double n = static_cast<double>(sorted.size());
    const double product = target_fnr * n;
    // Snap products that are integers up to rounding (0.07 * 100 = 7.000000000000001).
    double rank = std::ceil(product);
    if (rank - product > 0.0 && product - std::floor(product) < 1e-9 * std::max(1.0, product)) {
        rank = std::floor(product);
    }
    const auto k = std::clamp<std::size_t>(static_cast<std::size_t>(rank), 1, sorted.size());

    NoveltyThreshold t;
    t.gamma = sorted[k - 1];
    t.target_fnr = target_fnr;
    t.percentile = 1.0 - target_fnr;
    t.sample_count = sorted.size();
    const auto below = std::lower_bound(sorted.begin(), sorted.end(), t.gamma) - sorted.begin();
    t.realized_fnr = static_cast<double>(below) / n;
    return t;
}

namespace {

void require_non_empty(std::span<const double> known, std::span<const double> novel) {
    if (known.empty() || novel.empty()) {
        throw EvaluationError("AUC needs at least one known and one novel score");
    }
}

}  // namespace

RocResult roc_auc(std::span<const double> known_scores, std::span<const double> novel_scores) {
    require_non_empty(known_scores, novel_scores);
    std::vector<double> known(known_scores.begin(), known_scores.end());
    std::vector<double> novel(novel_scores.begin(), novel_scores.end());
    std::sort(known.begin(), known.end(), std::greater<>());
    std::sort(novel.begin(), novel.end(), std::greater<>());

    std::vector<double> thresholds = known;
    thresholds.insert(thresholds.end(), novel.begin(), novel.end());
    std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

    const double nk = static_cast<double>(known.size());
    const double nn = static_cast<double>(novel.size());
    RocResult roc;
    roc.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});

    // Integer counts keep the trapezoid sum exact until the final division.
    std::size_t ki = 0, ni = 0;
    std::size_t prev_k = 0, prev_n = 0;
    long double twice_area = 0.0L;
    for (double t : thresholds) {
        while (ki < known.size() && known[ki] >= t) ++ki;
        while (ni < novel.size() && novel[ni] >= t) ++ni;
        twice_area += static_cast<long double>(ni - prev_n) * static_cast<long double>(ki + prev_k);
        roc.points.push_back({t, static_cast<double>(ni) / nn, static_cast<double>(ki) / nk});
        prev_k = ki;
        prev_n = ni;
    }
    roc.auc = static_cast<double>(twice_area / (2.0L * static_cast<long double>(nk) *
                                                static_cast<long double>(nn)));
    return roc;
}

double auc_pairwise_oracle(std::span<const double> known_scores, std::span<const double> novel_scores) {
    require_non_empty(known_scores, novel_scores);
    std::uint64_t twice_wins = 0;
    for (double k : known_scores) {
        for (double n : novel_scores) {
            if (k > n) twice_wins += 2;
            else if (k == n) twice_wins += 1;
        }
    }
    return static_cast<double>(twice_wins) /
           (2.0 * static_cast<double>(known_scores.size()) * static_cast<double>(novel_scores.size()));
}

double closed_set_accuracy(std::span<const ScoreRecord> records) {
    if (records.empty()) throw EvaluationError("accuracy over an empty test set");
    std::size_t correct = 0;
    for (const ScoreRecord& r : records) {
        if (r.is_novel || r.true_class < 0) {
            throw ProtocolError("novel sample " + std::to_string(r.sample_id) +
                                " in a closed-set accuracy evaluation");
        }
        correct += r.predicted_class == r.true_class;
    }
    return static_cast<double>(correct) / static_cast<double>(records.size());
}

double closed_set_accuracy(const DualBranchModel& model, const Dataset& known_test) {
    for (int y : known_test.labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= model.known_classes) {
            throw ProtocolError("label " + std::to_string(y) + " is not a known class");
        }
    }
    const auto records = score_dataset(model, known_test, false);
    return closed_set_accuracy(records);
}

// ---------------------------------------------------------------------------

void write_score_report(std::span<const ScoreRecord> records, const std::filesystem::path& path) {
    std::ostringstream out;
    out << "sample_id,score,predicted_class,true_class,is_novel\n";
    for (const ScoreRecord& r : records) {
        out << r.sample_id << ',' << format_double(r.score) << ',' << r.predicted_class << ','
            << r.true_class << ',' << (r.is_novel ? 1 : 0) << '\n';
    }
    write_file_atomic(path, out.str());
}

std::vector<ScoreRecord> read_score_report(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line) || line != "sample_id,score,predicted_class,true_class,is_novel") {
        throw FormatError("'" + path.string() + "' is not a score report");
    }
    std::vector<ScoreRecord> records;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        ScoreRecord r;
        std::string cell;
        try {
            std::getline(row, cell, ',');
            r.sample_id = std::stoull(cell);
            std::getline(row, cell, ',');
            r.score = std::stod(cell);
            std::getline(row, cell, ',');
            r.predicted_class = std::stoi(cell);
            std::getline(row, cell, ',');
            r.true_class = std::stoi(cell);
            std::getline(row, cell, ',');
            r.is_novel = std::stoi(cell) != 0;
        } catch (const std::logic_error&) {
            throw ParseError("bad score report row '" + line + "'");
        }
        records.push_back(r);
    }
    return records;
}

void write_roc(const RocResult& roc, const std::filesystem::path& path) {
    std::ostringstream out;
    out << "threshold,fpr,tpr\n";
    for (const RocPoint& p : roc.points) {
        out << (std::isinf(p.threshold) ? std::string("inf") : format_double(p.threshold)) << ','
            << format_double(p.fpr) << ',' << format_double(p.tpr) << '\n';
    }
    out << "auc," << format_double(roc.auc) << '\n';
    write_file_atomic(path, out.str());
}

}  // namespace nvfg
