// SPDX-License-Identifier: Apache-2.0
#include "clmoe/config.hpp"

#include <charconv>
#include <functional>
#include <string_view>

#include <fmt/format.h>

#include "clmoe/error.hpp"
#include "clmoe/fs_util.hpp"

namespace clmoe {
namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool valid_key(std::string_view k) {
  if (k.empty()) return false;
  for (char c : k) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
  }
  return true;
}

// Strips a trailing comment that is not inside a string.
std::string_view strip_comment(std::string_view s) {
  bool in_string = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) in_string = !in_string;
    if (s[i] == '#' && !in_string) return s.substr(0, i);
  }
  return s;
}

ConfigValue parse_value(std::string_view v, const std::string& source, std::size_t line) {
  if (v.empty()) throw ParseError(source, line, "missing value");
  if (v == "true") return true;
  if (v == "false") return false;
  if (v.front() == '"') {
    if (v.size() < 2 || v.back() != '"') throw ParseError(source, line, "unterminated string");
    std::string out;
    for (std::size_t i = 1; i + 1 < v.size(); ++i) {
      if (v[i] == '\\' && i + 2 < v.size()) {
        const char n = v[++i];
        out.push_back(n == 'n' ? '\n' : n == 't' ? '\t' : n);
      } else {
        out.push_back(v[i]);
      }
    }
    return out;
  }
  std::string cleaned;
  for (char c : v) {
    if (c != '_') cleaned.push_back(c);
  }
  const char* b = cleaned.data();
  const char* e = b + cleaned.size();
  if (*b == '+') ++b;
  std::int64_t i = 0;
  if (auto [p, ec] = std::from_chars(b, e, i); ec == std::errc() && p == e) return i;
  double d = 0.0;
  if (auto [p, ec] = std::from_chars(b, e, d); ec == std::errc() && p == e) return d;
  throw ParseError(source, line, fmt::format("cannot parse value '{}'", v));
}

class Applier {
 public:
  Applier(const FlatConfig& f, const std::string& key) : file_(f), key_(key), entry_(f.entries.at(key)) {}

  std::size_t to_size() const {
    if (const auto* i = std::get_if<std::int64_t>(&entry_.value); i && *i >= 0) return static_cast<std::size_t>(*i);
    fail("a non-negative integer");
  }
  std::uint64_t to_u64() const { return static_cast<std::uint64_t>(to_size()); }
  double to_double() const {
    if (const auto* d = std::get_if<double>(&entry_.value)) return *d;
    if (const auto* i = std::get_if<std::int64_t>(&entry_.value)) return static_cast<double>(*i);
    fail("a number");
  }
  std::string to_string() const {
    if (const auto* s = std::get_if<std::string>(&entry_.value)) return *s;
    fail("a string");
  }

 private:
  [[noreturn]] void fail(std::string_view expected) const {
    throw ValidationError(fmt::format("{}:{}: '{}' must be {}", file_.source, entry_.line, key_, expected));
  }
  const FlatConfig& file_;
  const std::string& key_;
  const ConfigEntry& entry_;
};

}  // namespace

FlatConfig parse_flat_toml(const std::string& text, const std::string& source) {
  FlatConfig out;
  out.source = source;
  std::string section;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const auto line = trim(strip_comment(std::string_view(text).substr(pos, end - pos)));
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError(source, line_no, "malformed section header");
      const auto name = trim(line.substr(1, line.size() - 2));
      if (name != "stream") throw ParseError(source, line_no, fmt::format("unknown section [{}]", name));
      section = std::string(name);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(source, line_no, "expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    if (!valid_key(key)) throw ParseError(source, line_no, fmt::format("invalid key '{}'", key));
    const std::string full = section.empty() ? std::string(key) : section + "." + std::string(key);
    auto value = parse_value(trim(line.substr(eq + 1)), source, line_no);
    if (!out.entries.emplace(full, ConfigEntry{std::move(value), line_no}).second) {
      throw ParseError(source, line_no, fmt::format("duplicate key '{}'", full));
    }
  }
  return out;
}

FlatConfig load_flat_toml(const std::filesystem::path& path) {
  return parse_flat_toml(read_file(path), path.string());
}

void apply_config(const FlatConfig& file, TrainConfig& c, SyntheticStreamSpec* spec) {
  using Setter = std::function<void(const Applier&)>;
  const std::map<std::string, Setter> train = {
      {"n_experts", [&](const Applier& a) { c.n_experts = a.to_size(); }},
      {"top_k", [&](const Applier& a) { c.top_k = a.to_size(); }},
      {"rank", [&](const Applier& a) { c.rank = a.to_size(); }},
      {"alpha", [&](const Applier& a) { c.alpha = a.to_double(); }},
      {"gamma", [&](const Applier& a) { c.gamma = a.to_double(); }},
      {"beta", [&](const Applier& a) { c.beta = a.to_double(); }},
      {"epochs_per_task", [&](const Applier& a) { c.epochs_per_task = a.to_size(); }},
      {"batch_size", [&](const Applier& a) { c.batch_size = a.to_size(); }},
      {"learning_rate", [&](const Applier& a) { c.learning_rate = a.to_double(); }},
      {"lr_schedule",
       [&](const Applier& a) {
         const auto s = a.to_string();
         if (s != "cosine" && s != "constant") throw ValidationError(fmt::format("unknown lr_schedule '{}'", s));
         c.lr_schedule = s == "cosine" ? LrSchedule::Cosine : LrSchedule::Constant;
       }},
      {"optimizer", [&](const Applier& a) { c.optimizer = parse_optimizer(a.to_string()); }},
      {"weight_decay", [&](const Applier& a) { c.weight_decay = a.to_double(); }},
      {"gate_lr_scale", [&](const Applier& a) { c.gate_lr_scale = a.to_double(); }},
      {"seed", [&](const Applier& a) { c.seed = a.to_u64(); }},
      {"a_init_range", [&](const Applier& a) { c.a_init_range = a.to_double(); }},
      {"gate_init_std", [&](const Applier& a) { c.gate_init_std = a.to_double(); }},
      {"base_init_std", [&](const Applier& a) { c.base_init_std = a.to_double(); }},
      {"adapter_layers", [&](const Applier& a) { c.adapter_layers = a.to_size(); }},
      {"hidden_dim", [&](const Applier& a) { c.hidden_dim = a.to_size(); }},
      {"projection_dim", [&](const Applier& a) { c.projection_dim = a.to_size(); }},
  };
  SyntheticStreamSpec scratch;
  SyntheticStreamSpec& s = spec ? *spec : scratch;
  const std::map<std::string, Setter> stream = {
      {"stream.n_tasks", [&](const Applier& a) { s.n_tasks = a.to_size(); }},
      {"stream.feature_dim", [&](const Applier& a) { s.feature_dim = a.to_size(); }},
      {"stream.vocab_size", [&](const Applier& a) { s.vocab_size = a.to_size(); }},
      {"stream.train_per_task", [&](const Applier& a) { s.train_per_task = a.to_size(); }},
      {"stream.test_per_task", [&](const Applier& a) { s.test_per_task = a.to_size(); }},
      {"stream.cluster_separation", [&](const Applier& a) { s.cluster_separation = a.to_double(); }},
      {"stream.noise_sigma", [&](const Applier& a) { s.noise_sigma = a.to_double(); }},
      {"stream.seed", [&](const Applier& a) { s.seed = a.to_u64(); }},
      {"stream.subclusters_per_task", [&](const Applier& a) { s.subclusters_per_task = a.to_size(); }},
      {"stream.subcluster_scale", [&](const Applier& a) { s.subcluster_scale = a.to_double(); }},
      {"stream.shared_scale", [&](const Applier& a) { s.shared_scale = a.to_double(); }},
      {"stream.subcluster_sharing", [&](const Applier& a) { s.subcluster_sharing = a.to_double(); }},
      {"stream.sequence_length", [&](const Applier& a) { s.sequence_length = a.to_size(); }},
  };
  for (const auto& [key, entry] : file.entries) {
    const Applier a(file, key);
    if (auto it = train.find(key); it != train.end()) {
      it->second(a);
    } else if (auto st = stream.find(key); st != stream.end()) {
      st->second(a);
    } else {
      throw ValidationError(fmt::format("{}:{}: unknown config key '{}'", file.source, entry.line, key));
    }
  }
}

}  // namespace clmoe
