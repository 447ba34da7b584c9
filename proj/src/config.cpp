#include "tpl/config.hpp"

#include <cmath>

#include "tpl/error.hpp"

namespace tpl {

std::string_view to_string(ScoreVariant variant) noexcept {
  return variant == ScoreVariant::canonical ? "canonical" : "algorithm1";
}

ScoreVariant parse_score_variant(std::string_view text) {
  if (text == "canonical") return ScoreVariant::canonical;
  if (text == "algorithm1") return ScoreVariant::algorithm1;
  throw Error(Errc::config_error, "score_variant must be \"canonical\" or \"algorithm1\"");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(Errc::config_error, what); };
  if (hidden.empty()) fail("hidden must list at least one layer width");
  for (std::size_t w : hidden) {
    if (w == 0) fail("hidden widths must be positive");
  }
  if (epochs == 0) fail("epochs must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must lie in [0, 1)");
  if (!(mu_reg >= 0.0) || !std::isfinite(mu_reg)) fail("mu_reg must be >= 0");
  if (!(s_max > 0.0) || !std::isfinite(s_max)) fail("s_max must be > 0");
  if (k == 0) fail("k must be at least 1");
  if (!(gamma > 0.0) || !std::isfinite(gamma)) fail("gamma must be > 0");
  if (!(ridge >= 0.0) || !std::isfinite(ridge)) fail("ridge must be >= 0");
  if (calibration.batch_size == 0) fail("calibration.batch_size must be positive");
  if (!(calibration.learning_rate > 0.0) || !std::isfinite(calibration.learning_rate)) {
    fail("calibration.learning_rate must be > 0");
  }
}

}  // namespace tpl
