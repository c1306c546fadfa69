#pragma once

#include <stdexcept>
#include <string>

namespace nvfg {

// Every failure raised by the library derives from Error so callers (the CLI
// in particular) can report a single-line diagnostic regardless of origin.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(kind + " error: " + what), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define NVFG_DEFINE_ERROR(Name, label)                                     \
    class Name : public Error {                                            \
    public:                                                                \
        explicit Name(const std::string& what) : Error(label, what) {}     \
    }

NVFG_DEFINE_ERROR(ConfigError, "configuration");
NVFG_DEFINE_ERROR(DimensionError, "dimension");
NVFG_DEFINE_ERROR(UsageError, "usage");
NVFG_DEFINE_ERROR(DivergenceError, "training-divergence");
NVFG_DEFINE_ERROR(LabelError, "label");
NVFG_DEFINE_ERROR(FormatError, "format");
NVFG_DEFINE_ERROR(CorruptionError, "corruption");
NVFG_DEFINE_ERROR(ConsistencyError, "consistency");
NVFG_DEFINE_ERROR(ParseError, "parse");
NVFG_DEFINE_ERROR(DatasetError, "dataset");
NVFG_DEFINE_ERROR(ProtocolError, "protocol");
NVFG_DEFINE_ERROR(CalibrationError, "calibration");
NVFG_DEFINE_ERROR(EvaluationError, "evaluation");
NVFG_DEFINE_ERROR(IndexError, "index");
NVFG_DEFINE_ERROR(UnsupportedArchitectureError, "unsupported-architecture");
NVFG_DEFINE_ERROR(IoError, "io");

#undef NVFG_DEFINE_ERROR

}  // namespace nvfg
