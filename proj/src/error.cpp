#include "tpl/error.hpp"

namespace tpl {

const char* errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::invalid_argument: return "InvalidArgument";
    case Errc::not_symmetric: return "NotSymmetric";
    case Errc::not_positive_definite: return "NotPositiveDefinite";
    case Errc::empty_input: return "EmptyInput";
    case Errc::non_positive_temperature: return "NonPositiveTemperature";
    case Errc::dimension_mismatch: return "DimensionMismatch";
    case Errc::parse_error: return "ParseError";
    case Errc::overlapping_label_sets: return "OverlappingLabelSets";
    case Errc::no_density_available: return "NoDensityAvailable";
    case Errc::unknown_task: return "UnknownTask";
    case Errc::shape_mismatch: return "ShapeMismatch";
    case Errc::empty_training_set: return "EmptyTrainingSet";
    case Errc::empty_buffer_view: return "EmptyBufferView";
    case Errc::empty_test_set: return "EmptyTestSet";
    case Errc::empty_class_list: return "EmptyClassList";
    case Errc::degenerate_variance: return "DegenerateVariance";
    case Errc::degenerate_covariance: return "DegenerateCovariance";
    case Errc::missing_ncl_prefix: return "MissingNclPrefix";
    case Errc::integration_failure: return "IntegrationFailure";
    case Errc::no_variance: return "NoVariance";
    case Errc::config_error: return "ConfigError";
    case Errc::io_error: return "IoError";
  }
  return "Unknown";
}

Error::Error(Errc code, const std::string& message)
    : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

}  // namespace tpl
