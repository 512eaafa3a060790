#pragma once

#include <stdexcept>
#include <string>

namespace dynamar {

enum class Errc {
    // tokenizer
    EmptyCorpus,
    VocabTooSmall,
    UnknownId,
    // templating
    NoMask,
    MultipleMasks,
    BadSlots,
    ArityMismatch,
    TemplateTooLong,
    NotEnoughCandidates,
    EmptyValidation,
    // encoder
    InvalidConfig,
    ShapeMismatch,
    MissingMaskIndex,
    EmptyTargets,
    // finetune
    InferenceTemplateUnset,
    EmptyData,
    MetricTaskMismatch,
    // metrics
    NoPositives,
    LengthMismatch,
    ZeroBaseline,
    // data
    ParseError,
    SchemaViolation,
    NotClassification,
    InvalidFraction,
    InvalidParams,
    // harness
    MissingBaseline,
    DatasetError,
    ConfigError,
    IoError,
};

const char* errc_name(Errc c);

/// All recoverable failures surface as this exception; `code()` identifies
/// the condition so callers and tests can dispatch without string matching.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message)
        : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& message) {
    throw Error(code, message);
}

} // namespace dynamar
