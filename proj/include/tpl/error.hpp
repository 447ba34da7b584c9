#pragma once

#include <stdexcept>
#include <string>

namespace tpl {

enum class Errc {
  invalid_argument,
  not_symmetric,
  not_positive_definite,
  empty_input,
  non_positive_temperature,
  dimension_mismatch,
  parse_error,
  overlapping_label_sets,
  no_density_available,
  unknown_task,
  shape_mismatch,
  empty_training_set,
  empty_buffer_view,
  empty_test_set,
  empty_class_list,
  degenerate_variance,
  degenerate_covariance,
  missing_ncl_prefix,
  integration_failure,
  no_variance,
  config_error,
  io_error,
};

const char* errc_name(Errc code) noexcept;

// Every failure surfaced by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message);
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace tpl
