// SPDX-License-Identifier: Apache-2.0
#include "clmoe/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <map>
#include <string_view>

#include <fmt/format.h>
#include <zlib.h>

#include "clmoe/error.hpp"
#include "clmoe/fs_util.hpp"

namespace clmoe {
namespace {

constexpr std::string_view kMagic = "CLMOECKP";

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

class Writer {
 public:
  void block(const std::string& name, const Matrix& m) {
    ++count_;
    put_le<std::uint32_t>(body_, static_cast<std::uint32_t>(name.size()));
    body_ += name;
    put_le<std::uint64_t>(body_, static_cast<std::uint64_t>(m.rows()));
    put_le<std::uint64_t>(body_, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) put_le<std::uint64_t>(body_, std::bit_cast<std::uint64_t>(m(r, c)));
    }
  }
  void row(const std::string& name, const std::vector<double>& v) {
    block(name, Eigen::Map<const Eigen::RowVectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  }
  void row(const std::string& name, const Vector& v) { block(name, v.transpose()); }

  std::string finish(const nlohmann::json& manifest) const {
    std::string out(kMagic);
    put_le<std::uint32_t>(out, kCheckpointFormatVersion);
    const std::string m = manifest.dump();
    put_le<std::uint64_t>(out, m.size());
    out += m;
    put_le<std::uint32_t>(out, count_);
    out += body_;
    const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(out.data()), static_cast<uInt>(out.size()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(crc));
    return out;
  }

 private:
  std::string body_;
  std::uint32_t count_ = 0;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes) : b_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<T>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return v;
  }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw IntegrityError("checkpoint is truncated");
  }
  std::string_view b_;
  std::size_t pos_ = 0;
};

std::string layer_key(std::size_t l) { return fmt::format("layer{}", l); }

class Blocks {
 public:
  void add(std::string name, Matrix m) {
    if (!blocks_.emplace(std::move(name), std::move(m)).second) throw IntegrityError("duplicate checkpoint block");
  }
  const Matrix& get(const std::string& name) const {
    auto it = blocks_.find(name);
    if (it == blocks_.end()) throw IntegrityError(fmt::format("checkpoint lacks block '{}'", name));
    return it->second;
  }
  Vector vec(const std::string& name) const { return get(name).transpose(); }
  std::vector<double> list(const std::string& name) const {
    const auto& m = get(name);
    return std::vector<double>(m.data(), m.data() + m.size());
  }

 private:
  std::map<std::string, Matrix> blocks_;
};

}  // namespace

std::string encode_checkpoint(const ContinualState& s) {
  Writer w;
  nlohmann::json manifest;
  manifest["format"] = "clmoe-checkpoint";
  manifest["config"] = to_json(s.config);
  manifest["mode"] = to_string(s.mode);
  manifest["seed"] = s.config.seed;
  manifest["stream"] = {{"n_tasks", s.n_tasks},
                        {"feature_dim", s.feature_dim},
                        {"vocab_size", s.vocab_size},
                        {"sequence_length", s.sequence_length}};
  manifest["completed_task_count"] = s.completed();
  manifest["task_order"] = s.task_order;
  manifest["floored_tokens"] = s.loss_diagnostics.floored_tokens;

  auto layers = nlohmann::json::array();
  for (std::size_t l = 0; l < s.stack.size(); ++l) {
    const auto& layer = s.stack.layer(l);
    const auto& c = layer.config();
    layers.push_back({{"in_dim", c.in_dim},
                      {"out_dim", c.out_dim},
                      {"n_experts", c.n_experts},
                      {"total_rank", c.total_rank},
                      {"scale_alpha", c.scale_alpha}});
    w.block(layer_key(l) + "/base", layer.base_weight());
    for (std::size_t i = 0; i < c.n_experts; ++i) {
      w.block(fmt::format("{}/expert{}/a", layer_key(l), i), layer.expert(i).a);
      w.block(fmt::format("{}/expert{}/b", layer_key(l), i), layer.expert(i).b);
    }
    w.block(layer_key(l) + "/gate", layer.gate().w_gate);
  }
  manifest["layers"] = layers;

  auto registry = nlohmann::json::array();
  for (const auto& rec : s.registry.records()) {
    registry.push_back({{"task_id", rec.task_id}, {"top_k", rec.top_k}});
    for (std::size_t l = 0; l < rec.task_weights.size(); ++l) {
      w.row(fmt::format("registry/task{}/{}", rec.task_id, layer_key(l)), rec.task_weights[l].values());
    }
  }
  manifest["registry"] = registry;
  manifest["anchor_dim"] = s.anchors.feature_dim();
  manifest["anchor_count"] = s.anchors.size();
  for (std::size_t t = 0; t < s.anchors.size(); ++t) w.row(fmt::format("anchors/task{}", t + 1), s.anchors.anchors()[t]);

  manifest["matrix"] = {{"joint", s.matrix.is_joint()}, {"rows", s.matrix.rows()}};
  for (std::size_t a = 0; a < s.matrix.rows(); ++a) w.row(fmt::format("metrics/row{}", a + 1), s.matrix.data()[a]);
  w.row("metrics/diag_pre_merge", s.diag_pre_merge);
  w.row("metrics/diag_post_merge", s.diag_post_merge);
  return w.finish(manifest);
}

ContinualState decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < kMagic.size() + 4 + 8 + 4 + 4 || std::string_view(bytes).substr(0, kMagic.size()) != kMagic) {
    throw IntegrityError("not a checkpoint file");
  }
  const std::string_view body(bytes.data(), bytes.size() - 4);
  Reader tail(std::string_view(bytes).substr(bytes.size() - 4));
  const auto stored = tail.get<std::uint32_t>();
  const auto actual =
      static_cast<std::uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size())));
  if (stored != actual) throw IntegrityError(fmt::format("checkpoint checksum mismatch ({:08x} != {:08x})", stored, actual));

  Reader r(body);
  r.take(kMagic.size());
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointFormatVersion) {
    throw IntegrityError(fmt::format("unsupported checkpoint format version {}", version));
  }
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(r.take(r.get<std::uint64_t>()));
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(fmt::format("checkpoint manifest is not valid JSON: {}", e.what()));
  }
  Blocks blocks;
  const auto n_blocks = r.get<std::uint32_t>();
  for (std::uint32_t k = 0; k < n_blocks; ++k) {
    std::string name(r.take(r.get<std::uint32_t>()));
    const auto rows = r.get<std::uint64_t>();
    const auto cols = r.get<std::uint64_t>();
    if (rows > (1u << 24) || cols > (1u << 24)) throw IntegrityError("checkpoint block is implausibly large");
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = std::bit_cast<double>(r.get<std::uint64_t>());
    }
    blocks.add(std::move(name), std::move(m));
  }
  if (!r.done()) throw IntegrityError("trailing bytes in checkpoint");

  try {
    ContinualState s;
    s.config = train_config_from_json(manifest.at("config"));
    s.mode = parse_train_mode(manifest.at("mode").get<std::string>());
    const auto& st = manifest.at("stream");
    s.n_tasks = st.at("n_tasks").get<std::size_t>();
    s.feature_dim = st.at("feature_dim").get<std::size_t>();
    s.vocab_size = st.at("vocab_size").get<std::size_t>();
    s.sequence_length = st.at("sequence_length").get<std::size_t>();
    s.task_order = manifest.at("task_order").get<std::vector<int>>();
    s.loss_diagnostics.floored_tokens = manifest.at("floored_tokens").get<std::size_t>();

    std::vector<AdapterLayer> layers;
    const auto& lj = manifest.at("layers");
    for (std::size_t l = 0; l < lj.size(); ++l) {
      LayerConfig c{lj[l].at("in_dim").get<std::size_t>(), lj[l].at("out_dim").get<std::size_t>(),
                    lj[l].at("n_experts").get<std::size_t>(), lj[l].at("total_rank").get<std::size_t>(),
                    lj[l].at("scale_alpha").get<double>()};
      std::vector<ExpertParams> experts;
      for (std::size_t i = 0; i < c.n_experts; ++i) {
        experts.push_back({blocks.get(fmt::format("{}/expert{}/a", layer_key(l), i)),
                           blocks.get(fmt::format("{}/expert{}/b", layer_key(l), i))});
      }
      layers.emplace_back(c, blocks.get(layer_key(l) + "/base"), std::move(experts),
                          GateParams{blocks.get(layer_key(l) + "/gate")});
    }
    s.stack = AdapterStack(std::move(layers));

    s.registry = TaskExpertRegistry(s.stack.size());
    for (const auto& rec : manifest.at("registry")) {
      TaskExpertRecord tr;
      tr.task_id = rec.at("task_id").get<int>();
      tr.top_k = rec.at("top_k").get<std::vector<std::vector<std::size_t>>>();
      for (std::size_t l = 0; l < s.stack.size(); ++l) {
        tr.task_weights.emplace_back(blocks.vec(fmt::format("registry/task{}/{}", tr.task_id, layer_key(l))));
      }
      s.registry.update(std::move(tr));
    }
    s.anchors = TaskAnchorStore(manifest.at("anchor_dim").get<std::size_t>());
    const auto n_anchors = manifest.at("anchor_count").get<std::size_t>();
    for (std::size_t t = 1; t <= n_anchors; ++t) {
      s.anchors.add(static_cast<int>(t), blocks.vec(fmt::format("anchors/task{}", t)));
    }

    const auto& mj = manifest.at("matrix");
    const auto n_rows = mj.at("rows").get<std::size_t>();
    if (mj.at("joint").get<bool>()) {
      if (n_rows != 1) throw IntegrityError("joint checkpoint must hold one metrics row");
      s.matrix = PerformanceMatrix::joint(blocks.list("metrics/row1"));
    } else {
      s.matrix = PerformanceMatrix(s.n_tasks);
      for (std::size_t a = 1; a <= n_rows; ++a) s.matrix.append_row(blocks.list(fmt::format("metrics/row{}", a)));
    }
    s.diag_pre_merge = blocks.list("metrics/diag_pre_merge");
    s.diag_post_merge = blocks.list("metrics/diag_post_merge");
    if (manifest.at("completed_task_count").get<std::size_t>() != s.completed()) {
      throw IntegrityError("checkpoint task count disagrees with its task order");
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(fmt::format("checkpoint manifest is malformed: {}", e.what()));
  } catch (const IntegrityError&) {
    throw;
  } catch (const Error& e) {
    throw IntegrityError(fmt::format("checkpoint content is inconsistent: {}", e.what()));
  }
}

void save_checkpoint(const ContinualState& state, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(state));
}

ContinualState load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace clmoe
