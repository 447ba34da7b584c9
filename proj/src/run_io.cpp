#include "tpl/run_io.hpp"

#include <bit>
#include <fstream>
#include <set>
#include <sstream>

#include "tpl/error.hpp"
#include "tpl/json_util.hpp"

namespace tpl {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Strict object reader: every key must be consumed.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) fail(where_, "expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const json& raw(const std::string& key) { return j_.at(key); }

  void count(const std::string& key, std::size_t& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_unsigned()) fail(path(key), "expected a nonnegative integer");
    out = v.get<std::size_t>();
  }
  void u64(const std::string& key, std::uint64_t& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_unsigned()) fail(path(key), "expected a nonnegative integer");
    out = v.get<std::uint64_t>();
  }
  void real(const std::string& key, double& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number()) fail(path(key), "expected a number");
    out = v.get<double>();
  }
  void boolean(const std::string& key, bool& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_boolean()) fail(path(key), "expected true or false");
    out = v.get<bool>();
  }
  void text(const std::string& key, std::string& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_string()) fail(path(key), "expected a string");
    out = v.get<std::string>();
  }
  void counts(const std::string& key, std::vector<std::size_t>& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_array()) fail(path(key), "expected an array of integers");
    out.clear();
    for (const json& e : v) {
      if (!e.is_number_unsigned()) fail(path(key), "expected an array of nonnegative integers");
      out.push_back(e.get<std::size_t>());
    }
  }
  void reals(const std::string& key, std::optional<Vector>& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (v.is_null()) {
      out.reset();
      return;
    }
    if (!v.is_array()) fail(path(key), "expected an array of numbers");
    Vector r;
    for (const json& e : v) {
      if (!e.is_number()) fail(path(key), "expected an array of numbers");
      r.push_back(e.get<double>());
    }
    out = std::move(r);
  }

  std::string path(const std::string& key) const { return where_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) fail(path(key), "unknown key");
    }
  }

  [[noreturn]] static void fail(const std::string& where, const std::string& what) {
    throw Error(Errc::config_error, where + ": " + what);
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace

RunConfig parse_run_config(const json& j, const fs::path& base_dir) {
  RunConfig cfg;
  ObjectReader top(j, "config");
  if (!top.has("schema_version")) ObjectReader::fail("config.schema_version", "missing");
  const json& version = top.raw("schema_version");
  if (!version.is_number_integer() || version.get<long long>() != kRunConfigSchema) {
    ObjectReader::fail("config.schema_version",
                       "unsupported, expected " + std::to_string(kRunConfigSchema));
  }

  if (top.has("dataset")) {
    ObjectReader ds(top.raw("dataset"), "config.dataset");
    std::string kind = "synthetic";
    ds.text("kind", kind);
    if (kind == "synthetic") {
      GaussianStreamSpec& g = cfg.dataset.synthetic;
      ds.count("tasks", g.tasks);
      ds.count("classes_per_task", g.classes_per_task);
      ds.count("dim", g.dim);
      ds.real("separation", g.separation);
      ds.count("train_per_class", g.train_per_class);
      ds.count("test_per_class", g.test_per_class);
      ds.reals("covariance_diagonal", g.covariance_diagonal);
      if (g.tasks == 0 || g.classes_per_task == 0 || g.dim == 0 || g.train_per_class == 0 ||
          g.test_per_class == 0) {
        ObjectReader::fail("config.dataset", "counts must be at least 1");
      }
      if (!(g.separation > 0.0)) ObjectReader::fail("config.dataset.separation", "must be positive");
      if (g.covariance_diagonal && g.covariance_diagonal->size() != g.dim) {
        ObjectReader::fail("config.dataset.covariance_diagonal", "length must equal dim");
      }
    } else if (kind == "manifest") {
      cfg.dataset.kind = DatasetSpec::Kind::manifest;
      std::string path;
      ds.text("path", path);
      if (path.empty()) ObjectReader::fail("config.dataset.path", "required for a manifest dataset");
      fs::path p(path);
      cfg.dataset.manifest = p.is_absolute() ? p : fs::absolute(base_dir / p).lexically_normal();
    } else {
      ObjectReader::fail("config.dataset.kind", "must be \"synthetic\" or \"manifest\"");
    }
    ds.finish();
  }

  TrainConfig& t = cfg.train;
  if (top.has("train")) {
    ObjectReader tr(top.raw("train"), "config.train");
    tr.counts("hidden", t.hidden);
    tr.count("epochs", t.epochs);
    tr.count("batch_size", t.batch_size);
    tr.real("learning_rate", t.learning_rate);
    tr.real("momentum", t.momentum);
    tr.real("mu_reg", t.mu_reg);
    tr.real("s_max", t.s_max);
    tr.count("buffer_capacity", t.buffer_capacity);
    tr.count("k", t.k);
    tr.real("gamma", t.gamma);
    tr.real("ridge", t.ridge);
    tr.finish();
  }
  std::string variant(to_string(t.score_variant));
  top.text("score_variant", variant);
  try {
    t.score_variant = parse_score_variant(variant);
  } catch (const Error& e) {
    ObjectReader::fail("config.score_variant", e.what());
  }
  if (top.has("calibration")) {
    ObjectReader cal(top.raw("calibration"), "config.calibration");
    cal.boolean("enabled", t.calibration.enabled);
    cal.count("epochs", t.calibration.epochs);
    cal.count("batch_size", t.calibration.batch_size);
    cal.real("learning_rate", t.calibration.learning_rate);
    cal.finish();
  }
  top.u64("seed", t.seed);
  std::string out = cfg.output_dir.string();
  top.text("output_dir", out);
  cfg.output_dir = fs::path(out).is_absolute() ? fs::path(out) : base_dir / out;
  top.finish();
  t.validate();
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  return parse_run_config(json_util::parse_file(path), path.parent_path());
}

json to_json(const RunConfig& c) {
  json j;
  j["schema_version"] = kRunConfigSchema;
  if (c.dataset.kind == DatasetSpec::Kind::synthetic) {
    const GaussianStreamSpec& g = c.dataset.synthetic;
    j["dataset"] = {{"kind", "synthetic"},
                    {"tasks", g.tasks},
                    {"classes_per_task", g.classes_per_task},
                    {"dim", g.dim},
                    {"separation", g.separation},
                    {"train_per_class", g.train_per_class},
                    {"test_per_class", g.test_per_class},
                    {"covariance_diagonal",
                     g.covariance_diagonal ? json(*g.covariance_diagonal) : json(nullptr)}};
  } else {
    j["dataset"] = {{"kind", "manifest"}, {"path", c.dataset.manifest.string()}};
  }
  const TrainConfig& t = c.train;
  j["train"] = {{"hidden", t.hidden},
                {"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"learning_rate", t.learning_rate},
                {"momentum", t.momentum},
                {"mu_reg", t.mu_reg},
                {"s_max", t.s_max},
                {"buffer_capacity", t.buffer_capacity},
                {"k", t.k},
                {"gamma", t.gamma},
                {"ridge", t.ridge}};
  j["score_variant"] = std::string(to_string(t.score_variant));
  j["calibration"] = {{"enabled", t.calibration.enabled},
                      {"epochs", t.calibration.epochs},
                      {"batch_size", t.calibration.batch_size},
                      {"learning_rate", t.calibration.learning_rate}};
  j["seed"] = t.seed;
  j["output_dir"] = c.output_dir.string();
  return j;
}

TaskStream load_dataset(const RunConfig& config) {
  if (config.dataset.kind == DatasetSpec::Kind::manifest) {
    return load_feature_stream(config.dataset.manifest);
  }
  return generate_gaussian_stream(config.dataset.synthetic, Rng(config.train.seed).split("data"));
}

namespace {

constexpr char kMagic[8] = {'T', 'P', 'L', 'M', 'O', 'D', 'E', 'L'};

class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& out) : out_(out) {}
  void u64(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out_.write(reinterpret_cast<const char*>(b), 8);
  }
  void u32(std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out_.write(reinterpret_cast<const char*>(b), 4);
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void reals(std::span<const double> v) {
    u64(v.size());
    for (double x : v) f64(x);
  }
  void raw(const char* p, std::size_t n) { out_.write(p, static_cast<std::streamsize>(n)); }

 private:
  std::ostream& out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::istream& in) : in_(in) {}
  std::uint64_t u64() {
    unsigned char b[8];
    read(b, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  std::uint32_t u32() {
    unsigned char b[4];
    read(b, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  void reals_into(std::span<double> out) {
    if (u64() != out.size()) throw Error(Errc::parse_error, "model.bin: array length mismatch");
    for (double& x : out) x = f64();
  }
  Vector reals(std::size_t expected) {
    Vector v(expected);
    reals_into(v);
    return v;
  }
  void read(unsigned char* p, std::size_t n) {
    in_.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in_) throw Error(Errc::parse_error, "model.bin: truncated");
  }

 private:
  std::istream& in_;
};

}  // namespace

void write_model(std::ostream& out, const HatMlp& net, const std::vector<TaskHead>& heads) {
  BinaryWriter w(out);
  w.raw(kMagic, sizeof kMagic);
  w.u32(kModelFormatVersion);
  w.u64(net.input_dim());
  w.u64(net.layer_count());
  for (std::size_t width : net.widths()) w.u64(width);
  w.f64(net.s_max());
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    w.reals(net.layer(l).weight.entries());
    w.reals(net.layer(l).bias);
  }
  for (const Vector& c : net.cumulative_mask()) w.reals(c);
  w.u64(net.task_count());
  for (std::size_t t = 0; t < net.task_count(); ++t) {
    for (std::size_t l = 0; l < net.layer_count(); ++l) w.reals(net.embedding(t, l));
    const bool consolidated = net.is_consolidated(t);
    w.u64(consolidated ? 1 : 0);
    if (consolidated) {
      for (const Vector& m : net.task_mask(t)) w.reals(m);
    }
  }
  w.u64(heads.size());
  for (const TaskHead& h : heads) {
    w.u64(h.class_count);
    w.reals(h.weight.entries());
    w.reals(h.bias);
  }
  if (!out) throw Error(Errc::io_error, "model write failed");
}

void read_model(std::istream& in, HatMlp& net, std::vector<TaskHead>& heads) {
  BinaryReader r(in);
  unsigned char magic[8];
  r.read(magic, 8);
  if (!std::equal(magic, magic + 8, reinterpret_cast<const unsigned char*>(kMagic))) {
    throw Error(Errc::parse_error, "model.bin: bad magic");
  }
  const std::uint32_t version = r.u32();
  if (version != kModelFormatVersion) {
    throw Error(Errc::parse_error, "model.bin: unsupported version " + std::to_string(version));
  }
  const std::size_t input_dim = r.u64();
  const std::size_t layers = r.u64();
  if (layers == 0 || layers > 1024) throw Error(Errc::parse_error, "model.bin: bad layer count");
  std::vector<std::size_t> widths;
  for (std::size_t l = 0; l < layers; ++l) widths.push_back(r.u64());
  const double s_max = r.f64();
  Rng scratch(0);
  HatMlp loaded(input_dim, widths, s_max, scratch);
  for (std::size_t l = 0; l < layers; ++l) {
    r.reals_into(loaded.layer(l).weight.entries());
    r.reals_into(loaded.layer(l).bias);
  }
  LayerMasks cumulative;
  for (std::size_t l = 0; l < layers; ++l) cumulative.push_back(r.reals(widths[l]));
  loaded.set_cumulative_mask(std::move(cumulative));
  const std::size_t tasks = r.u64();
  for (std::size_t t = 0; t < tasks; ++t) {
    loaded.add_task(scratch);
    for (std::size_t l = 0; l < layers; ++l) r.reals_into(loaded.embedding(t, l));
    if (r.u64() == 1) {
      LayerMasks mask;
      for (std::size_t l = 0; l < layers; ++l) mask.push_back(r.reals(widths[l]));
      loaded.set_task_mask(t, std::move(mask));
    }
  }
  const std::size_t head_count = r.u64();
  std::vector<TaskHead> loaded_heads;
  for (std::size_t h = 0; h < head_count; ++h) {
    TaskHead head;
    head.class_count = r.u64();
    head.weight = Matrix(head.class_count + 1, loaded.feature_dim());
    r.reals_into(head.weight.entries());
    head.bias = r.reals(head.class_count + 1);
    loaded_heads.push_back(std::move(head));
  }
  net = std::move(loaded);
  heads = std::move(loaded_heads);
}

namespace {

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    rows.push_back(Vector(row.begin(), row.end()));
  }
  return rows;
}

Matrix matrix_from_json(const json& j) {
  const auto rows = j.get<std::vector<Vector>>();
  if (rows.empty()) return {};
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != m.cols()) throw Error(Errc::parse_error, "ragged matrix");
    std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
  }
  return m;
}

template <typename F>
auto parse_guard(const std::string& what, F f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw Error(Errc::parse_error, what + ": " + e.what());
  }
}

}  // namespace

json to_json(const TaskStats& s, int task_id, const std::vector<int>& classes) {
  return {{"task_id", task_id},
          {"classes", classes},
          {"centroids", s.centroids},
          {"covariance", matrix_json(s.covariance)},
          {"covariance_inverse", matrix_json(s.covariance_inverse)},
          {"ridge_used", s.ridge_used},
          {"beta1", s.beta1},
          {"beta2", s.beta2}};
}

TaskStats task_stats_from_json(const json& j, std::vector<int>* classes) {
  return parse_guard("task statistics", [&] {
    TaskStats s;
    s.task_index = j.at("task_id").get<std::size_t>() - 1;
    s.centroids = j.at("centroids").get<std::vector<Vector>>();
    s.covariance = matrix_from_json(j.at("covariance"));
    s.covariance_inverse = matrix_from_json(j.at("covariance_inverse"));
    s.ridge_used = j.at("ridge_used").get<double>();
    s.beta1 = j.at("beta1").get<double>();
    s.beta2 = j.at("beta2").get<double>();
    if (classes) *classes = j.at("classes").get<std::vector<int>>();
    return s;
  });
}

json to_json(const Checkpoint& cp) {
  return {{"tasks_learned", cp.tasks_learned},
          {"accuracy", cp.accuracy},
          {"task_accuracy", cp.task_accuracy},
          {"til_accuracy", cp.til_accuracy},
          {"task_test_sizes", cp.task_test_sizes}};
}

Checkpoint checkpoint_from_json(const json& j) {
  return parse_guard("trajectory", [&] {
    Checkpoint cp;
    cp.tasks_learned = j.at("tasks_learned").get<std::size_t>();
    cp.accuracy = j.at("accuracy").get<double>();
    cp.task_accuracy = j.at("task_accuracy").get<Vector>();
    cp.til_accuracy = j.at("til_accuracy").get<Vector>();
    cp.task_test_sizes = j.at("task_test_sizes").get<std::vector<std::size_t>>();
    return cp;
  });
}

json calibration_json(const CalibrationParams& p) {
  json arr = json::array();
  for (std::size_t t = 0; t < p.task_count(); ++t) {
    arr.push_back({{"task_id", t + 1}, {"sigma1", p.sigma1[t]}, {"sigma2", p.sigma2[t]}});
  }
  return arr;
}

CalibrationParams calibration_from_json(const json& j) {
  return parse_guard("calibration", [&] {
    CalibrationParams p;
    for (const json& e : j) {
      if (e.at("task_id").get<std::size_t>() != p.sigma1.size() + 1) {
        throw Error(Errc::parse_error, "calibration task ids must be 1..T in order");
      }
      p.sigma1.push_back(e.at("sigma1").get<double>());
      p.sigma2.push_back(e.at("sigma2").get<double>());
    }
    return p;
  });
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(Errc::io_error, "write failed for " + path.string());
}

void write_buffer_csv(const fs::path& path, const ReplayBuffer& buffer) {
  const auto entries = buffer.entries();
  std::ostringstream out;
  out << "task,label";
  const std::size_t d = entries.empty() ? 0 : entries.front()->sample.features.size();
  for (std::size_t i = 0; i < d; ++i) out << ",f" << i;
  out << '\n';
  for (const BufferEntry* e : entries) {
    out << e->task_index + 1 << ',' << e->sample.label;
    for (double v : e->sample.features) out << ',' << json_util::format_double(v);
    out << '\n';
  }
  write_text(path, out.str());
}

ReplayBuffer read_buffer_csv(const fs::path& path, std::size_t capacity) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
  ReplayBuffer buffer(capacity);
  std::string line;
  std::size_t line_no = 0;
  std::getline(in, line);  // header
  ++line_no;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    const auto where = path.string() + ":" + std::to_string(line_no);
    if (cells.size() < 3) throw Error(Errc::parse_error, where + ": too few columns");
    try {
      BufferEntry e;
      std::size_t pos = 0;
      const long task = std::stol(cells[0], &pos);
      if (pos != cells[0].size() || task < 1) throw std::invalid_argument("task");
      e.task_index = static_cast<std::size_t>(task - 1);
      e.sample.label = std::stoi(cells[1], &pos);
      if (pos != cells[1].size()) throw std::invalid_argument("label");
      for (std::size_t i = 2; i < cells.size(); ++i) {
        e.sample.features.push_back(std::stod(cells[i], &pos));
        if (pos != cells[i].size()) throw std::invalid_argument("feature");
      }
      buffer.restore(std::move(e));
    } catch (const std::logic_error&) {
      throw Error(Errc::parse_error, where + ": malformed buffer row");
    }
  }
  return buffer;
}

void save_run(const fs::path& dir, const RunConfig& config, const RunArtifacts& run) {
  fs::create_directories(dir / "stats");
  json_util::write_file(dir / "config.json", to_json(config));
  {
    std::ostringstream model;
    write_model(model, run.net, run.heads);
    write_text(dir / "model.bin", model.str());
  }
  for (std::size_t t = 0; t < run.stats.size(); ++t) {
    json_util::write_file(dir / "stats" / ("task_" + std::to_string(t + 1) + ".json"),
                          to_json(run.stats[t], static_cast<int>(t + 1), run.class_lists.at(t)));
  }
  write_buffer_csv(dir / "buffer.csv", run.buffer);
  json_util::write_file(dir / "calibration.json", calibration_json(run.calibration));
  json traj = json::array();
  for (const Checkpoint& cp : run.trajectory) traj.push_back(to_json(cp));
  json_util::write_file(dir / "trajectory.json", traj);
  json_util::write_file(dir / "losses.json", {{"epoch_losses", run.epoch_losses}});
}

LoadedRun load_run(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(Errc::io_error, dir.string() + " is not a run directory");
  LoadedRun loaded;
  loaded.config = load_run_config(dir / "config.json");
  RunArtifacts& run = loaded.artifacts;
  run.config = loaded.config.train;
  {
    std::ifstream in(dir / "model.bin", std::ios::binary);
    if (!in) throw Error(Errc::io_error, "cannot open " + (dir / "model.bin").string());
    read_model(in, run.net, run.heads);
  }
  for (std::size_t t = 0; t < run.heads.size(); ++t) {
    std::vector<int> classes;
    run.stats.push_back(task_stats_from_json(
        json_util::parse_file(dir / "stats" / ("task_" + std::to_string(t + 1) + ".json")),
        &classes));
    run.class_lists.push_back(std::move(classes));
  }
  run.buffer = read_buffer_csv(dir / "buffer.csv", run.config.buffer_capacity);
  run.calibration = calibration_from_json(json_util::parse_file(dir / "calibration.json"));
  for (const json& cp : json_util::parse_file(dir / "trajectory.json")) {
    run.trajectory.push_back(checkpoint_from_json(cp));
  }
  const json losses = json_util::parse_file(dir / "losses.json");
  run.epoch_losses = parse_guard("losses", [&] {
    return losses.at("epoch_losses").get<std::vector<std::vector<double>>>();
  });
  return loaded;
}

}  // namespace tpl
