#include "dynamar/error.hpp"

namespace dynamar {

const char* errc_name(Errc c) {
    switch (c) {
    case Errc::EmptyCorpus: return "EmptyCorpus";
    case Errc::VocabTooSmall: return "VocabTooSmall";
    case Errc::UnknownId: return "UnknownId";
    case Errc::NoMask: return "NoMask";
    case Errc::MultipleMasks: return "MultipleMasks";
    case Errc::BadSlots: return "BadSlots";
    case Errc::ArityMismatch: return "ArityMismatch";
    case Errc::TemplateTooLong: return "TemplateTooLong";
    case Errc::NotEnoughCandidates: return "NotEnoughCandidates";
    case Errc::EmptyValidation: return "EmptyValidation";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::MissingMaskIndex: return "MissingMaskIndex";
    case Errc::EmptyTargets: return "EmptyTargets";
    case Errc::InferenceTemplateUnset: return "InferenceTemplateUnset";
    case Errc::EmptyData: return "EmptyData";
    case Errc::MetricTaskMismatch: return "MetricTaskMismatch";
    case Errc::NoPositives: return "NoPositives";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::ZeroBaseline: return "ZeroBaseline";
    case Errc::ParseError: return "ParseError";
    case Errc::SchemaViolation: return "SchemaViolation";
    case Errc::NotClassification: return "NotClassification";
    case Errc::InvalidFraction: return "InvalidFraction";
    case Errc::InvalidParams: return "InvalidParams";
    case Errc::MissingBaseline: return "MissingBaseline";
    case Errc::DatasetError: return "DatasetError";
    case Errc::ConfigError: return "ConfigError";
    case Errc::IoError: return "IoError";
    }
    return "UnknownError";
}

} // namespace dynamar
