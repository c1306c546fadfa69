#include "nvfg/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "nvfg/errors.hpp"
#include "nvfg/file_util.hpp"
#include "nvfg/json_io.hpp"

namespace nvfg {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put(std::string& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    out.append(reinterpret_cast<const char*>(raw), sizeof(T));
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    template <typename T>
    T get(const char* what) {
        need(sizeof(T), what);
        unsigned char raw[sizeof(T)];
        std::memcpy(raw, bytes_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
        pos_ += sizeof(T);
        T value;
        std::memcpy(&value, raw, sizeof(T));
        return value;
    }

    std::string take(std::size_t n, const char* what) {
        need(n, what);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n) throw CorruptionError(std::string("checkpoint truncated in ") + what);
    }

    const std::string& bytes_;
    std::size_t pos_ = 0;
};

void put_params(std::string& out, const std::string& prefix, const ParamSet& params) {
    for (const auto& [name, t] : params) {
        const std::string full = prefix + "/" + name;
        put<std::uint32_t>(out, static_cast<std::uint32_t>(full.size()));
        out += full;
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
        for (double v : t.data()) put<double>(out, v);
    }
}

std::vector<std::string> param_names(const std::string& prefix, const ParamSet& params) {
    std::vector<std::string> names;
    for (const auto& [name, t] : params) names.push_back(prefix + "/" + name);
    return names;
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
    const DualBranchModel& m = ckpt.model;
    std::vector<std::string> names = param_names("backbone", m.backbone.params);
    for (auto& n : param_names("head_known", m.head_known.params)) names.push_back(n);
    if (m.head_reference) {
        for (auto& n : param_names("head_reference", m.head_reference->params)) names.push_back(n);
    }
    Json meta{{"backbone", to_json(m.backbone.spec)},
              {"head_known", to_json(m.head_known.spec)},
              {"head_reference", m.head_reference ? to_json(m.head_reference->spec) : Json(nullptr)},
              {"known_classes", m.known_classes},
              {"reference_classes", m.reference_classes},
              {"config", to_json(ckpt.config)},
              {"epoch", ckpt.epoch},
              {"metrics", ckpt.metrics},
              {"parameters", names}};
    const std::string meta_text = meta.dump();

    std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, meta_text.size());
    out += meta_text;
    put_params(out, "backbone", m.backbone.params);
    put_params(out, "head_known", m.head_known.params);
    if (m.head_reference) put_params(out, "head_reference", m.head_reference->params);
    return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
    Reader in(bytes);
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
        throw FormatError("not a checkpoint (bad magic)");
    }
    in.take(4, "magic");
    const auto version = in.get<std::uint32_t>("version");
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    }
    const auto meta_len = in.get<std::uint64_t>("metadata length");
    if (meta_len > bytes.size()) throw CorruptionError("checkpoint truncated in metadata");
    Json meta;
    try {
        meta = Json::parse(in.take(static_cast<std::size_t>(meta_len), "metadata"));
    } catch (const Json::parse_error& e) {
        throw CorruptionError(std::string("checkpoint metadata unreadable: ") + e.what());
    }

    Checkpoint ckpt;
    try {
        DualBranchModel& m = ckpt.model;
        m.backbone.spec = network_spec_from_json(meta.at("backbone"));
        m.head_known.spec = network_spec_from_json(meta.at("head_known"));
        if (!meta.at("head_reference").is_null()) {
            m.head_reference = Branch{network_spec_from_json(meta.at("head_reference")), {}};
        }
        m.known_classes = meta.at("known_classes").get<std::size_t>();
        m.reference_classes = meta.at("reference_classes").get<std::size_t>();
        ckpt.config = training_config_from_json(meta.at("config"));
        ckpt.epoch = meta.at("epoch").get<std::size_t>();
        ckpt.metrics = meta.at("metrics");
    } catch (const Json::exception& e) {
        throw FormatError(std::string("checkpoint metadata incomplete: ") + e.what());
    }

    std::vector<std::string> expected;
    try {
        expected = meta.at("parameters").get<std::vector<std::string>>();
    } catch (const Json::exception& e) {
        throw FormatError(std::string("checkpoint parameter list unreadable: ") + e.what());
    }
    for (const std::string& want : expected) {
        const auto name_len = in.get<std::uint32_t>("parameter name length");
        const std::string name = in.take(name_len, "parameter name");
        if (name != want) throw CorruptionError("parameter '" + name + "' where '" + want + "' was expected");
        const auto rank = in.get<std::uint32_t>("parameter rank");
        if (rank > 8) throw CorruptionError("implausible rank for '" + name + "'");
        Shape shape;
        for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<std::size_t>(in.get<std::uint64_t>("dims")));
        const std::size_t count = shape_numel(shape);
        if (count > bytes.size() / sizeof(double)) throw CorruptionError("checkpoint truncated in '" + name + "'");
        std::vector<double> values(count);
        for (double& v : values) v = in.get<double>("parameter data");

        const auto slash = name.find('/');
        const std::string part = name.substr(0, slash);
        const std::string local = name.substr(slash + 1);
        ParamSet* target = part == "backbone"     ? &ckpt.model.backbone.params
                           : part == "head_known" ? &ckpt.model.head_known.params
                           : (part == "head_reference" && ckpt.model.head_reference)
                               ? &ckpt.model.head_reference->params
                               : nullptr;
        if (!target) throw CorruptionError("unexpected parameter '" + name + "'");
        (*target)[local] = Tensor(std::move(shape), std::move(values));
    }
    if (!in.done()) throw CorruptionError("trailing bytes after the last parameter");

    check_params(ckpt.model.backbone.spec, ckpt.model.backbone.params);
    check_params(ckpt.model.head_known.spec, ckpt.model.head_known.params);
    if (ckpt.model.head_reference) {
        check_params(ckpt.model.head_reference->spec, ckpt.model.head_reference->params);
    }
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
    const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return decode_checkpoint(bytes);
}

}  // namespace nvfg
