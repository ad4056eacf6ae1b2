// SPDX-License-Identifier: Apache-2.0
#include "clmoe/task_stream.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string_view>

#include <fmt/format.h>

#include "clmoe/error.hpp"
#include "clmoe/fs_util.hpp"
#include "clmoe/seed.hpp"

namespace clmoe {
namespace {

constexpr std::string_view kHeaderTag = "clmoe-dataset";
constexpr std::string_view kHeaderVersion = "v1";

Vector random_direction(std::size_t dim, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Vector v(static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = n01(rng);
  return v / v.norm();
}

// Hands out unit directions orthogonal to every earlier one while the space
// allows; after that they are merely random.
class DirectionPool {
 public:
  DirectionPool(std::size_t dim, Rng& rng) : dim_(dim), rng_(rng) {}

  Vector next() {
    if (basis_.size() >= dim_) return random_direction(dim_, rng_);
    while (true) {
      Vector v = random_direction(dim_, rng_);
      for (const auto& q : basis_) v -= v.dot(q) * q;
      if (v.norm() < 1e-6) continue;
      basis_.push_back(v / v.norm());
      return basis_.back();
    }
  }

 private:
  std::size_t dim_;
  Rng& rng_;
  std::vector<Vector> basis_;
};

// Pairwise distances are at least `separation`: mutually orthogonal centers
// at radius separation / sqrt(2) when they fit, rejection sampling otherwise.
std::vector<Vector> task_centers(const SyntheticStreamSpec& spec, DirectionPool& pool, Rng& rng) {
  std::vector<Vector> centers;
  const double radius = spec.cluster_separation / std::sqrt(2.0) * (1.0 + 1e-9);
  if (spec.n_tasks <= spec.feature_dim) {
    for (std::size_t t = 0; t < spec.n_tasks; ++t) centers.push_back(radius * pool.next());
    return centers;
  }
  const double wide = spec.cluster_separation * (1.0 + 1e-9);
  for (int attempt = 0; centers.size() < spec.n_tasks; ++attempt) {
    if (attempt > 100000) throw ValidationError("cannot place task centers at the requested separation");
    Vector c = wide * random_direction(spec.feature_dim, rng);
    const bool ok = std::all_of(centers.begin(), centers.end(), [&](const Vector& o) {
      return (c - o).norm() >= spec.cluster_separation;
    });
    if (ok) centers.push_back(std::move(c));
  }
  return centers;
}

std::vector<int> distinct_labels(std::size_t count, std::size_t vocab, Rng& rng) {
  std::vector<int> all(vocab);
  std::iota(all.begin(), all.end(), 0);
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, vocab - 1);
    std::swap(all[i], all[pick(rng)]);
  }
  all.resize(count);
  return all;
}

std::string format_record(int task_id, std::string_view split, const Instance& inst) {
  std::string line = fmt::format("{}\t{}\t", task_id, split);
  for (std::size_t j = 0; j < inst.target.tokens.size(); ++j) {
    if (j) line += ',';
    line += std::to_string(inst.target.tokens[j]);
  }
  line += '\t';
  for (Eigen::Index i = 0; i < inst.features.size(); ++i) {
    if (i) line += ',';
    line += fmt::format("{}", inst.features[i]);
  }
  line += '\n';
  return line;
}

std::string format_stream(const TaskStream& stream, const std::vector<const TaskData*>& tasks) {
  std::string out = fmt::format("{} {} {} {} {}\n", kHeaderTag, kHeaderVersion, stream.n_tasks(),
                                stream.feature_dim, stream.vocab_size);
  for (const auto* task : tasks) {
    for (const auto& inst : task->train) out += format_record(task->task_id, "train", inst);
    for (const auto& inst : task->test) out += format_record(task->task_id, "test", inst);
  }
  return out;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    parts.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

struct Header {
  std::size_t n_tasks = 0;
  std::size_t feature_dim = 0;
  std::size_t vocab_size = 0;
};

Header parse_header(std::string_view line, const std::string& source) {
  const auto parts = split(line, ' ');
  Header h;
  if (parts.size() != 5 || parts[0] != kHeaderTag || parts[1] != kHeaderVersion ||
      !parse_number(parts[2], h.n_tasks) || !parse_number(parts[3], h.feature_dim) ||
      !parse_number(parts[4], h.vocab_size)) {
    throw ParseError(source, 1, "expected header 'clmoe-dataset v1 <M> <feature_dim> <vocab_size>'");
  }
  if (h.n_tasks == 0 || h.feature_dim == 0 || h.vocab_size == 0) {
    throw ParseError(source, 1, "header values must be positive");
  }
  return h;
}

}  // namespace

std::size_t TaskStream::sequence_length() const {
  std::size_t len = 0;
  for (const auto& t : tasks) {
    for (const auto* split : {&t.train, &t.test}) {
      for (const auto& inst : *split) {
        if (len == 0) len = inst.target.tokens.size();
        if (inst.target.tokens.size() != len) {
          throw ValidationError("all targets in a stream must have the same length");
        }
      }
    }
  }
  if (len == 0) throw ValidationError("stream has no instances");
  return len;
}

void TaskStream::validate() const {
  if (tasks.empty()) throw ValidationError("stream has no tasks");
  if (feature_dim == 0 || vocab_size == 0) throw ValidationError("stream dimensions must be positive");
  for (const auto& t : tasks) {
    if (t.train.empty() || t.test.empty()) {
      throw ValidationError(fmt::format("task {} has an empty train or test split", t.task_id));
    }
    for (const auto* split : {&t.train, &t.test}) {
      for (const auto& inst : *split) {
        if (static_cast<std::size_t>(inst.features.size()) != feature_dim) {
          throw ValidationError(fmt::format("task {} instance {} has {} features, expected {}", t.task_id,
                                            inst.id, inst.features.size(), feature_dim));
        }
        if (!inst.features.allFinite()) {
          throw ValidationError(fmt::format("task {} instance {} has non-finite features", t.task_id, inst.id));
        }
        if (inst.target.tokens.empty()) throw ValidationError("empty target sequence");
        for (int tok : inst.target.tokens) {
          if (tok < 0 || static_cast<std::size_t>(tok) >= vocab_size) {
            throw ValidationError(fmt::format("label {} outside vocabulary of size {}", tok, vocab_size));
          }
        }
      }
    }
  }
  sequence_length();
}

TaskStream TaskStream::reversed() const {
  TaskStream r = *this;
  std::reverse(r.tasks.begin(), r.tasks.end());
  return r;
}

void SyntheticStreamSpec::validate() const {
  const auto fail = [](const std::string& m) { throw ValidationError("invalid stream spec: " + m); };
  if (n_tasks == 0) fail("n_tasks must be positive");
  if (feature_dim == 0) fail("feature_dim must be positive");
  if (vocab_size < 2) fail("vocab_size must be at least 2");
  if (train_per_task == 0 || test_per_task == 0) fail("train_per_task and test_per_task must be positive");
  if (!(cluster_separation > 0.0)) fail("cluster_separation must be positive");
  if (!(noise_sigma >= 0.0)) fail("noise_sigma must be non-negative");
  if (subclusters_per_task < 2) fail("subclusters_per_task must be at least 2");
  if (subclusters_per_task > vocab_size) fail("subclusters_per_task cannot exceed vocab_size");
  if (!(subcluster_scale >= 0.0)) fail("subcluster_scale must be non-negative");
  if (!(shared_scale >= 0.0)) fail("shared_scale must be non-negative");
  if (!(subcluster_sharing >= 0.0 && subcluster_sharing <= 1.0)) fail("subcluster_sharing must lie in [0, 1]");
  if (sequence_length == 0) fail("sequence_length must be positive");
}

nlohmann::json to_json(const SyntheticStreamSpec& spec) {
  return {{"n_tasks", spec.n_tasks},
          {"feature_dim", spec.feature_dim},
          {"vocab_size", spec.vocab_size},
          {"train_per_task", spec.train_per_task},
          {"test_per_task", spec.test_per_task},
          {"cluster_separation", spec.cluster_separation},
          {"noise_sigma", spec.noise_sigma},
          {"seed", spec.seed},
          {"subclusters_per_task", spec.subclusters_per_task},
          {"subcluster_scale", spec.subcluster_scale},
          {"shared_scale", spec.shared_scale},
          {"subcluster_sharing", spec.subcluster_sharing},
          {"sequence_length", spec.sequence_length}};
}

TaskStream generate_stream(const SyntheticStreamSpec& spec) {
  spec.validate();
  Rng rng = make_rng(spec.seed, "stream");
  const std::size_t d = spec.feature_dim;
  const std::size_t subs = spec.subclusters_per_task;

  // Centers, the shared offset and the sub-cluster directions are mutually
  // orthogonal when the feature space is wide enough, so tasks overlap only
  // through the components the spec asks for.
  DirectionPool pool(d, rng);
  const auto centers = task_centers(spec, pool, rng);
  const Vector shared = spec.shared_scale * pool.next();
  std::vector<Vector> common_dirs;
  for (std::size_t k = 0; k < subs; ++k) common_dirs.push_back(pool.next());

  TaskStream stream;
  stream.feature_dim = d;
  stream.vocab_size = spec.vocab_size;
  std::uint64_t next_id = 0;
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick_sub(0, subs - 1);

  for (std::size_t t = 0; t < spec.n_tasks; ++t) {
    std::vector<Vector> means;
    for (std::size_t k = 0; k < subs; ++k) {
      Vector dir = (1.0 - spec.subcluster_sharing) * pool.next() +
                   spec.subcluster_sharing * common_dirs[k];
      if (dir.norm() > 0.0) dir /= dir.norm();
      means.push_back(shared + centers[t] + spec.subcluster_scale * dir);
    }
    // labels[j][k]: token at position j for sub-cluster k. Labels are reused
    // across tasks with unrelated assignments.
    std::vector<std::vector<int>> labels;
    for (std::size_t j = 0; j < spec.sequence_length; ++j) {
      labels.push_back(distinct_labels(subs, spec.vocab_size, rng));
    }

    TaskData task;
    task.task_id = static_cast<int>(t + 1);
    for (auto [split, count] : {std::pair{&task.train, spec.train_per_task},
                                std::pair{&task.test, spec.test_per_task}}) {
      split->reserve(count);
      for (std::size_t n = 0; n < count; ++n) {
        Instance inst;
        inst.id = next_id++;
        inst.true_task = task.task_id;
        inst.subcluster = static_cast<int>(pick_sub(rng));
        inst.noise = Vector(static_cast<Eigen::Index>(d));
        for (Eigen::Index i = 0; i < inst.noise.size(); ++i) inst.noise[i] = spec.noise_sigma * noise(rng);
        inst.features = means[static_cast<std::size_t>(inst.subcluster)] + inst.noise;
        for (std::size_t j = 0; j < spec.sequence_length; ++j) {
          inst.target.tokens.push_back(labels[j][static_cast<std::size_t>(inst.subcluster)]);
        }
        split->push_back(std::move(inst));
      }
    }
    stream.tasks.push_back(std::move(task));
  }
  return stream;
}

void save_dataset(const TaskStream& stream, const std::filesystem::path& dir,
                  const nlohmann::json& generator) {
  stream.validate();
  ensure_directory(dir);
  nlohmann::json manifest;
  manifest["format"] = fmt::format("{} {}", kHeaderTag, kHeaderVersion);
  manifest["n_tasks"] = stream.n_tasks();
  manifest["feature_dim"] = stream.feature_dim;
  manifest["vocab_size"] = stream.vocab_size;
  manifest["files"] = nlohmann::json::array();
  manifest["counts"] = nlohmann::json::array();
  for (const auto& task : stream.tasks) {
    const auto name = fmt::format("task_{}.tsv", task.task_id);
    write_file_atomic(dir / name, format_stream(stream, {&task}));
    manifest["files"].push_back(name);
    manifest["counts"].push_back(
        {{"task_id", task.task_id}, {"train", task.train.size()}, {"test", task.test.size()}});
  }
  if (!generator.is_null()) manifest["generator"] = generator;
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

void save_dataset_file(const TaskStream& stream, const std::filesystem::path& file) {
  stream.validate();
  std::vector<const TaskData*> tasks;
  for (const auto& t : stream.tasks) tasks.push_back(&t);
  write_file_atomic(file, format_stream(stream, tasks));
}

TaskStream parse_dataset(const std::string& text, const std::string& source_name) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  std::optional<Header> header;
  std::map<int, TaskData> by_task;
  std::uint64_t next_id = 0;

  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string_view line(text.data() + pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!header) {
      header = parse_header(line, source_name);
      continue;
    }
    if (line.empty()) continue;

    const auto fields = split(line, '\t');
    if (fields.size() != 4) throw ParseError(source_name, line_no, "expected 4 tab-separated fields");
    int task_id = 0;
    if (!parse_number(fields[0], task_id) || task_id < 1 ||
        static_cast<std::size_t>(task_id) > header->n_tasks) {
      throw ParseError(source_name, line_no, fmt::format("task id '{}' outside 1..{}", fields[0], header->n_tasks));
    }
    const bool is_train = fields[1] == "train";
    if (!is_train && fields[1] != "test") {
      throw ParseError(source_name, line_no, fmt::format("unknown split '{}'", fields[1]));
    }
    Instance inst;
    inst.true_task = task_id;
    for (auto tok : split(fields[2], ',')) {
      int label = 0;
      if (!parse_number(tok, label)) throw ParseError(source_name, line_no, fmt::format("bad label '{}'", tok));
      if (label < 0 || static_cast<std::size_t>(label) >= header->vocab_size) {
        throw ValidationError(fmt::format("{}:{}: label {} outside vocabulary of size {}", source_name,
                                          line_no, label, header->vocab_size));
      }
      inst.target.tokens.push_back(label);
    }
    const auto values = split(fields[3], ',');
    if (values.size() != header->feature_dim) {
      throw ValidationError(fmt::format("{}:{}: {} features, header declares {}", source_name, line_no,
                                        values.size(), header->feature_dim));
    }
    inst.features = Vector(static_cast<Eigen::Index>(values.size()));
    for (std::size_t i = 0; i < values.size(); ++i) {
      double v = 0.0;
      if (!parse_number(values[i], v)) {
        throw ParseError(source_name, line_no, fmt::format("bad feature value '{}'", values[i]));
      }
      inst.features[static_cast<Eigen::Index>(i)] = v;
    }
    inst.id = next_id++;
    auto& task = by_task[task_id];
    task.task_id = task_id;
    (is_train ? task.train : task.test).push_back(std::move(inst));
  }
  if (!header) throw ParseError(source_name, 1, "missing header");
  if (by_task.empty()) throw ValidationError(fmt::format("{}: dataset has no records", source_name));

  TaskStream stream;
  stream.feature_dim = header->feature_dim;
  stream.vocab_size = header->vocab_size;
  for (auto& [id, task] : by_task) stream.tasks.push_back(std::move(task));
  stream.validate();
  return stream;
}

TaskStream load_dataset(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  if (!fs::exists(path)) throw IoError(fmt::format("dataset path {} does not exist", path.string()));
  if (!fs::is_directory(path)) return parse_dataset(read_file(path), path.string());

  std::vector<fs::path> files;
  const auto manifest_path = path / "manifest.json";
  if (fs::exists(manifest_path)) {
    nlohmann::json manifest;
    try {
      manifest = nlohmann::json::parse(read_file(manifest_path));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(fmt::format("{}: {}", manifest_path.string(), e.what()));
    }
    for (const auto& f : manifest.at("files")) files.push_back(path / f.get<std::string>());
  } else {
    for (const auto& entry : fs::directory_iterator(path)) {
      if (entry.path().extension() == ".tsv") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
  }
  if (files.empty()) throw ValidationError(fmt::format("no dataset files in {}", path.string()));

  TaskStream merged;
  std::uint64_t next_id = 0;
  std::map<int, TaskData> by_task;
  for (const auto& f : files) {
    auto part = parse_dataset(read_file(f), f.string());
    if (merged.feature_dim == 0) {
      merged.feature_dim = part.feature_dim;
      merged.vocab_size = part.vocab_size;
    } else if (merged.feature_dim != part.feature_dim || merged.vocab_size != part.vocab_size) {
      throw ValidationError(fmt::format("{} disagrees with the other dataset files on dimensions", f.string()));
    }
    for (auto& t : part.tasks) {
      auto& dst = by_task[t.task_id];
      dst.task_id = t.task_id;
      for (auto& i : t.train) dst.train.push_back(std::move(i));
      for (auto& i : t.test) dst.test.push_back(std::move(i));
    }
  }
  for (auto& [id, t] : by_task) {
    for (auto* split : {&t.train, &t.test}) {
      for (auto& inst : *split) inst.id = next_id++;
    }
    merged.tasks.push_back(std::move(t));
  }
  merged.validate();
  return merged;
}

}  // namespace clmoe
