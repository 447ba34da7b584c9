#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "tpl/numerics.hpp"
#include "tpl/rng.hpp"

namespace tpl {

struct Sample {
  Vector features;
  int label = 0;
};

struct TaskDataset {
  int task_id = 1;              // 1-based position in the stream
  std::vector<int> class_list;  // label space of the task, in head order
  std::vector<Sample> train;
  std::vector<Sample> test;

  bool owns(int label) const noexcept;
  // Index of `label` within class_list, or -1.
  int local_index(int label) const noexcept;
  std::size_t class_count() const noexcept { return class_list.size(); }
};

// Diagonal Gaussian describing one synthetic class.
struct ClassDensity {
  int label = 0;
  Vector mean;
  Vector variance;
};

// Immutable, validated task sequence.
class TaskStream {
 public:
  TaskStream(std::vector<TaskDataset> tasks, std::size_t dim,
             std::optional<std::vector<ClassDensity>> densities = std::nullopt);

  std::size_t task_count() const noexcept { return tasks_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  const TaskDataset& task(std::size_t index) const;
  std::span<const TaskDataset> tasks() const noexcept { return tasks_; }

  // Index of the task owning `label`; throws InvalidArgument if none.
  std::size_t task_of_label(int label) const;

  bool has_densities() const noexcept { return densities_.has_value(); }
  const ClassDensity& density(int label) const;

 private:
  std::vector<TaskDataset> tasks_;
  std::size_t dim_;
  std::optional<std::vector<ClassDensity>> densities_;
};

struct GaussianStreamSpec {
  std::size_t tasks = 5;
  std::size_t classes_per_task = 2;
  std::size_t dim = 16;
  double separation = 6.0;
  std::size_t train_per_class = 200;
  std::size_t test_per_class = 100;
  // Shared per-dimension variance for every class; identity when absent.
  std::optional<Vector> covariance_diagonal;
};

TaskStream generate_gaussian_stream(const GaussianStreamSpec& spec, const Rng& rng);

// CSV rows `label,f0,...,f{d-1}`. `expected_dim` of nullopt infers from the first row.
std::vector<Sample> read_feature_csv(const std::filesystem::path& path,
                                     std::optional<std::size_t> expected_dim);

TaskStream load_feature_stream(const std::filesystem::path& manifest_path);

// log of the equal-weight Gaussian mixture density of task `task_index` at x.
double true_log_density(const TaskStream& stream, std::size_t task_index,
                        std::span<const double> x);

double gaussian_log_density(std::span<const double> x, const ClassDensity& density);

}  // namespace tpl
