#include "tpl/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "tpl/error.hpp"
#include "tpl/json_util.hpp"

namespace tpl {

bool TaskDataset::owns(int label) const noexcept { return local_index(label) >= 0; }

int TaskDataset::local_index(int label) const noexcept {
  const auto it = std::find(class_list.begin(), class_list.end(), label);
  return it == class_list.end() ? -1 : static_cast<int>(it - class_list.begin());
}

TaskStream::TaskStream(std::vector<TaskDataset> tasks, std::size_t dim,
                       std::optional<std::vector<ClassDensity>> densities)
    : tasks_(std::move(tasks)), dim_(dim), densities_(std::move(densities)) {
  if (dim_ == 0) throw Error(Errc::invalid_argument, "stream dimension must be positive");
  std::set<int> seen;
  for (std::size_t t = 0; t < tasks_.size(); ++t) {
    const TaskDataset& task = tasks_[t];
    if (task.class_list.empty()) {
      throw Error(Errc::invalid_argument, "task " + std::to_string(t + 1) + " has no classes");
    }
    for (int label : task.class_list) {
      if (!seen.insert(label).second) {
        throw Error(Errc::overlapping_label_sets,
                    "class " + std::to_string(label) + " belongs to more than one task");
      }
    }
    for (const auto* split : {&task.train, &task.test}) {
      for (const Sample& s : *split) {
        if (s.features.size() != dim_) {
          throw Error(Errc::dimension_mismatch,
                      "sample of dimension " + std::to_string(s.features.size()) +
                          " in a stream of dimension " + std::to_string(dim_));
        }
        if (!task.owns(s.label)) {
          throw Error(Errc::invalid_argument, "sample label " + std::to_string(s.label) +
                                                  " not in the label set of task " +
                                                  std::to_string(t + 1));
        }
        if (!std::all_of(s.features.begin(), s.features.end(),
                         [](double v) { return std::isfinite(v); })) {
          throw Error(Errc::invalid_argument, "non-finite feature value");
        }
      }
    }
  }
  if (densities_) {
    std::set<int> described;
    for (const ClassDensity& d : *densities_) {
      if (!seen.count(d.label) || !described.insert(d.label).second) {
        throw Error(Errc::invalid_argument, "density descriptors must cover each class once");
      }
      if (d.mean.size() != dim_ || d.variance.size() != dim_) {
        throw Error(Errc::dimension_mismatch, "density descriptor dimension mismatch");
      }
      for (double v : d.variance) {
        if (!(v > 0.0)) throw Error(Errc::invalid_argument, "variances must be positive");
      }
    }
    if (described.size() != seen.size()) {
      throw Error(Errc::invalid_argument, "every class needs a density descriptor");
    }
  }
}

const TaskDataset& TaskStream::task(std::size_t index) const {
  if (index >= tasks_.size()) {
    throw Error(Errc::unknown_task, "task index " + std::to_string(index) + " out of range");
  }
  return tasks_[index];
}

std::size_t TaskStream::task_of_label(int label) const {
  for (std::size_t t = 0; t < tasks_.size(); ++t) {
    if (tasks_[t].owns(label)) return t;
  }
  throw Error(Errc::invalid_argument, "label " + std::to_string(label) + " not in any task");
}

const ClassDensity& TaskStream::density(int label) const {
  if (!densities_) throw Error(Errc::no_density_available, "stream has no density descriptors");
  for (const ClassDensity& d : *densities_) {
    if (d.label == label) return d;
  }
  throw Error(Errc::invalid_argument, "no density for label " + std::to_string(label));
}

namespace {

std::vector<Vector> place_means(std::size_t count, std::size_t dim, double separation,
                                Rng& rng) {
  std::vector<Vector> means;
  if (dim == 1) {
    // The 0-sphere holds only two points, so use an evenly spaced lattice.
    for (std::size_t c = 0; c < count; ++c) {
      means.push_back({(static_cast<double>(c) - 0.5 * static_cast<double>(count - 1)) *
                       separation});
    }
    return means;
  }
  const double min_sq = separation * separation;
  double radius = separation;
  constexpr int kAttemptsPerClass = 2000;
  for (;;) {
    means.clear();
    bool failed = false;
    for (std::size_t c = 0; c < count && !failed; ++c) {
      bool placed = false;
      for (int attempt = 0; attempt < kAttemptsPerClass && !placed; ++attempt) {
        Vector candidate(dim);
        double norm_sq = 0.0;
        for (double& v : candidate) {
          v = rng.normal();
          norm_sq += v * v;
        }
        if (norm_sq == 0.0) continue;
        const double scale = radius / std::sqrt(norm_sq);
        for (double& v : candidate) v *= scale;
        const bool far_enough = std::all_of(means.begin(), means.end(), [&](const Vector& m) {
          return squared_distance(m, candidate) >= min_sq;
        });
        if (far_enough) {
          means.push_back(std::move(candidate));
          placed = true;
        }
      }
      failed = !placed;
    }
    if (!failed) return means;
    radius *= 1.25;
  }
}

std::vector<Sample> draw_samples(const ClassDensity& density, std::size_t n, Rng rng) {
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.label = density.label;
    s.features.resize(density.mean.size());
    for (std::size_t j = 0; j < density.mean.size(); ++j) {
      s.features[j] = density.mean[j] + std::sqrt(density.variance[j]) * rng.normal();
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TaskStream generate_gaussian_stream(const GaussianStreamSpec& spec, const Rng& rng) {
  if (spec.tasks == 0 || spec.classes_per_task == 0 || spec.dim == 0 ||
      spec.train_per_class == 0 || spec.test_per_class == 0) {
    throw Error(Errc::invalid_argument, "stream counts must be at least 1");
  }
  if (!(spec.separation > 0.0)) {
    throw Error(Errc::invalid_argument, "separation must be positive");
  }
  Vector variance(spec.dim, 1.0);
  if (spec.covariance_diagonal) {
    if (spec.covariance_diagonal->size() != spec.dim) {
      throw Error(Errc::dimension_mismatch, "covariance diagonal length differs from dim");
    }
    variance = *spec.covariance_diagonal;
  }

  const std::size_t class_total = spec.tasks * spec.classes_per_task;
  Rng mean_rng = rng.split("class-means");
  const std::vector<Vector> means = place_means(class_total, spec.dim, spec.separation, mean_rng);

  const Rng train_root = rng.split("train");
  const Rng test_root = rng.split("test");
  std::vector<TaskDataset> tasks;
  std::vector<ClassDensity> densities;
  for (std::size_t t = 0; t < spec.tasks; ++t) {
    TaskDataset task;
    task.task_id = static_cast<int>(t + 1);
    for (std::size_t c = 0; c < spec.classes_per_task; ++c) {
      const int label = static_cast<int>(t * spec.classes_per_task + c);
      task.class_list.push_back(label);
      ClassDensity density{label, means[static_cast<std::size_t>(label)], variance};
      auto train = draw_samples(density, spec.train_per_class,
                                train_root.split(static_cast<std::uint64_t>(label)));
      auto test = draw_samples(density, spec.test_per_class,
                               test_root.split(static_cast<std::uint64_t>(label)));
      task.train.insert(task.train.end(), train.begin(), train.end());
      task.test.insert(task.test.end(), test.begin(), test.end());
      densities.push_back(std::move(density));
    }
    tasks.push_back(std::move(task));
  }
  return TaskStream(std::move(tasks), spec.dim, std::move(densities));
}

namespace {

bool parse_double(std::string_view token, double& out) {
  while (!token.empty() && (token.front() == ' ' || token.front() == '\t')) token.remove_prefix(1);
  while (!token.empty() && (token.back() == ' ' || token.back() == '\t' || token.back() == '\r'))
    token.remove_suffix(1);
  if (token.empty()) return false;
  if (token.front() == '+') token.remove_prefix(1);
  const auto res = std::from_chars(token.data(), token.data() + token.size(), out);
  return res.ec == std::errc() && res.ptr == token.data() + token.size() && std::isfinite(out);
}

std::string line_error(const std::filesystem::path& path, std::size_t line,
                       const std::string& what) {
  return path.string() + ":" + std::to_string(line) + ": " + what;
}

}  // namespace

std::vector<Sample> read_feature_csv(const std::filesystem::path& path,
                                     std::optional<std::size_t> expected_dim) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
  std::vector<Sample> samples;
  std::optional<std::size_t> dim = expected_dim;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<double> values;
    std::string_view rest(line);
    for (;;) {
      const auto comma = rest.find(',');
      double v = 0.0;
      if (!parse_double(rest.substr(0, comma), v)) {
        throw Error(Errc::parse_error, line_error(path, line_no, "malformed number"));
      }
      values.push_back(v);
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (values.size() < 2) {
      throw Error(Errc::parse_error, line_error(path, line_no, "expected label and features"));
    }
    const double label = values.front();
    if (label != std::floor(label) || std::abs(label) > 2e9) {
      throw Error(Errc::parse_error, line_error(path, line_no, "label is not an integer"));
    }
    Sample s;
    s.label = static_cast<int>(label);
    s.features.assign(values.begin() + 1, values.end());
    if (!dim) dim = s.features.size();
    if (s.features.size() != *dim) {
      throw Error(Errc::dimension_mismatch,
                  line_error(path, line_no,
                             "row has " + std::to_string(s.features.size()) +
                                 " features, expected " + std::to_string(*dim)));
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

TaskStream load_feature_stream(const std::filesystem::path& manifest_path) {
  const nlohmann::json manifest = json_util::parse_file(manifest_path);
  if (!manifest.is_object() || !manifest.contains("tasks") || !manifest["tasks"].is_array()) {
    throw Error(Errc::parse_error, manifest_path.string() + ": manifest needs a \"tasks\" array");
  }
  for (const auto& [key, value] : manifest.items()) {
    if (key != "dim" && key != "tasks") {
      throw Error(Errc::parse_error, manifest_path.string() + ": unknown key \"" + key + "\"");
    }
  }
  std::optional<std::size_t> dim;
  if (manifest.contains("dim")) {
    if (!manifest["dim"].is_number_unsigned() || manifest["dim"].get<std::size_t>() == 0) {
      throw Error(Errc::parse_error, manifest_path.string() + ": \"dim\" must be a positive int");
    }
    dim = manifest["dim"].get<std::size_t>();
  }
  const auto base = manifest_path.parent_path();

  std::map<int, TaskDataset> by_id;
  std::set<int> all_classes;
  for (const auto& entry : manifest["tasks"]) {
    if (!entry.is_object() || !entry.contains("task_id") || !entry.contains("classes") ||
        !entry.contains("train") || !entry.contains("test")) {
      throw Error(Errc::parse_error, manifest_path.string() +
                                         ": each task needs task_id, classes, train, test");
    }
    TaskDataset task;
    try {
      task.task_id = entry["task_id"].get<int>();
      task.class_list = entry["classes"].get<std::vector<int>>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::parse_error, manifest_path.string() + ": " + e.what());
    }
    for (int label : task.class_list) {
      if (!all_classes.insert(label).second) {
        throw Error(Errc::overlapping_label_sets,
                    "class " + std::to_string(label) + " is assigned to more than one task");
      }
    }
    const auto train_path = base / entry["train"].get<std::string>();
    const auto test_path = base / entry["test"].get<std::string>();
    task.train = read_feature_csv(train_path, dim);
    if (!dim && !task.train.empty()) dim = task.train.front().features.size();
    task.test = read_feature_csv(test_path, dim);
    if (!dim && !task.test.empty()) dim = task.test.front().features.size();
    for (const auto* split : {&task.train, &task.test}) {
      for (const Sample& s : *split) {
        if (!task.owns(s.label)) {
          throw Error(Errc::parse_error, "label " + std::to_string(s.label) +
                                             " not listed in the classes of task " +
                                             std::to_string(task.task_id));
        }
      }
    }
    if (!by_id.emplace(task.task_id, std::move(task)).second) {
      throw Error(Errc::parse_error, manifest_path.string() + ": duplicate task_id");
    }
  }
  if (by_id.empty()) throw Error(Errc::parse_error, manifest_path.string() + ": no tasks");
  if (!dim) throw Error(Errc::parse_error, manifest_path.string() + ": no samples to infer dim");

  std::vector<TaskDataset> tasks;
  int expected = 1;
  for (auto& [id, task] : by_id) {
    if (id != expected++) {
      throw Error(Errc::parse_error, manifest_path.string() + ": task ids must be 1..T");
    }
    tasks.push_back(std::move(task));
  }
  return TaskStream(std::move(tasks), *dim);
}

double gaussian_log_density(std::span<const double> x, const ClassDensity& density) {
  double acc = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double d = x[j] - density.mean[j];
    acc -= 0.5 * (d * d / density.variance[j] +
                  std::log(2.0 * std::numbers::pi * density.variance[j]));
  }
  return acc;
}

double true_log_density(const TaskStream& stream, std::size_t task_index,
                        std::span<const double> x) {
  if (!stream.has_densities()) {
    throw Error(Errc::no_density_available, "ingested streams carry no ground-truth density");
  }
  if (x.size() != stream.dim()) throw Error(Errc::dimension_mismatch, "query dimension mismatch");
  const TaskDataset& task = stream.task(task_index);
  Vector terms;
  terms.reserve(task.class_list.size());
  for (int label : task.class_list) terms.push_back(gaussian_log_density(x, stream.density(label)));
  return log_sum_exp(terms) - std::log(static_cast<double>(terms.size()));
}

}  // namespace tpl
