#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace tpl {

// canonical: log(e^{β1·MLS} + e^{β2·MD + d_knn}); algorithm1: the sign-flipped soft-min form.
enum class ScoreVariant { canonical, algorithm1 };

std::string_view to_string(ScoreVariant variant) noexcept;
ScoreVariant parse_score_variant(std::string_view text);

struct CalibrationConfig {
  bool enabled = false;
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double learning_rate = 0.01;
};

struct TrainConfig {
  std::vector<std::size_t> hidden{64, 64};
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  double learning_rate = 0.005;
  double momentum = 0.9;
  double mu_reg = 0.75;
  double s_max = 400.0;
  std::size_t buffer_capacity = 200;
  std::size_t k = 5;
  double gamma = 0.05;
  double ridge = 1e-6;
  ScoreVariant score_variant = ScoreVariant::canonical;
  CalibrationConfig calibration;
  std::uint64_t seed = 0;

  // Throws ConfigError naming the offending field.
  void validate() const;
};

}  // namespace tpl
