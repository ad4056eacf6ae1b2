// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <map>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "clmoe/checkpoint.hpp"
#include "clmoe/config.hpp"
#include "clmoe/continual_trainer.hpp"
#include "clmoe/error.hpp"
#include "clmoe/fs_util.hpp"
#include "clmoe/metrics.hpp"
#include "clmoe/task_stream.hpp"

namespace clmoe::cli {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

constexpr const char* kCheckpointName = "checkpoint.clmoe";

struct Globals {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> config;
  bool quiet = false;
};

// Same-named overrides for every TrainConfig field; unset ones keep the
// config-file value.
struct TrainFlags {
  std::optional<std::size_t> n_experts, top_k, rank, epochs_per_task, batch_size, adapter_layers, hidden_dim,
      projection_dim;
  std::optional<double> alpha, gamma, beta, learning_rate, weight_decay, gate_lr_scale, a_init_range, gate_init_std, base_init_std;
  std::optional<std::string> lr_schedule, optimizer;

  void add_to(CLI::App* app) {
    const auto both = [](const char* name) {
      std::string dashed = name;
      std::replace(dashed.begin(), dashed.end(), '_', '-');
      return dashed == name ? fmt::format("--{}", name) : fmt::format("--{},--{}", name, dashed);
    };
    app->add_option(both("n_experts"), n_experts, "Experts per adapter layer");
    app->add_option(both("top_k"), top_k, "Experts recorded per task");
    app->add_option(both("rank"), rank, "Total adapter rank r");
    app->add_option(both("alpha"), alpha, "Adapter scale alpha (applied as alpha/r)");
    app->add_option(both("gamma"), gamma, "Momentum coefficient in [0.5, 1]");
    app->add_option(both("beta"), beta, "Instance/task router balance in [0, 1]");
    app->add_option(both("epochs_per_task"), epochs_per_task);
    app->add_option(both("batch_size"), batch_size);
    app->add_option(both("learning_rate"), learning_rate);
    app->add_option(both("lr_schedule"), lr_schedule, "cosine or constant");
    app->add_option(both("optimizer"), optimizer, "adamw or sgd");
    app->add_option(both("weight_decay"), weight_decay);
    app->add_option(both("gate_lr_scale"), gate_lr_scale);
    app->add_option(both("a_init_range"), a_init_range);
    app->add_option(both("gate_init_std"), gate_init_std);
    app->add_option(both("base_init_std"), base_init_std);
    app->add_option(both("adapter_layers"), adapter_layers);
    app->add_option(both("hidden_dim"), hidden_dim);
    app->add_option(both("projection_dim"), projection_dim);
  }

  void apply(TrainConfig& c) const {
    const auto set = [](auto& dst, const auto& src) {
      if (src) dst = *src;
    };
    set(c.n_experts, n_experts);
    set(c.top_k, top_k);
    set(c.rank, rank);
    set(c.alpha, alpha);
    set(c.gamma, gamma);
    set(c.beta, beta);
    set(c.epochs_per_task, epochs_per_task);
    set(c.batch_size, batch_size);
    set(c.learning_rate, learning_rate);
    set(c.weight_decay, weight_decay);
    set(c.gate_lr_scale, gate_lr_scale);
    set(c.a_init_range, a_init_range);
    set(c.gate_init_std, gate_init_std);
    set(c.base_init_std, base_init_std);
    set(c.adapter_layers, adapter_layers);
    set(c.hidden_dim, hidden_dim);
    set(c.projection_dim, projection_dim);
    if (optimizer) c.optimizer = parse_optimizer(*optimizer);
    if (lr_schedule) {
      if (*lr_schedule == "cosine") {
        c.lr_schedule = LrSchedule::Cosine;
      } else if (*lr_schedule == "constant") {
        c.lr_schedule = LrSchedule::Constant;
      } else {
        throw ValidationError(fmt::format("unknown lr_schedule '{}'", *lr_schedule));
      }
    }
  }
};

struct StreamFlags {
  std::optional<std::size_t> tasks, feature_dim, vocab_size, train_per_task, test_per_task, subclusters,
      sequence_length;
  std::optional<double> separation, noise, subcluster_scale, shared_scale, subcluster_sharing;

  void add_to(CLI::App* app) {
    app->add_option("--tasks", tasks, "Number of tasks M");
    app->add_option("--feature-dim", feature_dim);
    app->add_option("--vocab-size", vocab_size);
    app->add_option("--train-per-task", train_per_task);
    app->add_option("--test-per-task", test_per_task);
    app->add_option("--separation", separation, "Minimum distance between task centers");
    app->add_option("--noise", noise, "Isotropic noise standard deviation");
    app->add_option("--subclusters", subclusters, "Latent sub-clusters (labels) per task");
    app->add_option("--subcluster-scale", subcluster_scale);
    app->add_option("--shared-scale", shared_scale);
    app->add_option("--subcluster-sharing", subcluster_sharing);
    app->add_option("--sequence-length", sequence_length);
  }

  void apply(SyntheticStreamSpec& s) const {
    const auto set = [](auto& dst, const auto& src) {
      if (src) dst = *src;
    };
    set(s.n_tasks, tasks);
    set(s.feature_dim, feature_dim);
    set(s.vocab_size, vocab_size);
    set(s.train_per_task, train_per_task);
    set(s.test_per_task, test_per_task);
    set(s.subclusters_per_task, subclusters);
    set(s.sequence_length, sequence_length);
    set(s.cluster_separation, separation);
    set(s.noise_sigma, noise);
    set(s.subcluster_scale, subcluster_scale);
    set(s.shared_scale, shared_scale);
    set(s.subcluster_sharing, subcluster_sharing);
  }
};

class Console {
 public:
  Console(std::ostream& out, bool quiet) : out_(out), quiet_(quiet) {}
  template <typename... Args>
  void info(fmt::format_string<Args...> f, Args&&... args) {
    if (!quiet_) out_ << fmt::format(f, std::forward<Args>(args)...) << '\n';
  }
  template <typename... Args>
  void result(fmt::format_string<Args...> f, Args&&... args) {
    out_ << fmt::format(f, std::forward<Args>(args)...) << '\n';
  }

 private:
  std::ostream& out_;
  bool quiet_;
};

fs::path require_out(const Globals& g) {
  if (!g.out || g.out->empty()) throw UsageError("--out is required for this command");
  return *g.out;
}

// Defaults, then the config file, then flags.
void resolve_config(const Globals& g, const TrainFlags* tf, const StreamFlags* sf, TrainConfig& config,
                    SyntheticStreamSpec& spec) {
  if (g.config) apply_config(load_flat_toml(*g.config), config, &spec);
  if (tf) tf->apply(config);
  if (sf) sf->apply(spec);
  if (g.seed) {
    config.seed = *g.seed;
    spec.seed = *g.seed;
  }
}

TaskStream ordered(const TaskStream& s, const std::string& order) {
  if (order == "forward") return s;
  if (order == "reverse") return s.reversed();
  throw ValidationError(fmt::format("unknown order '{}' (expected forward or reverse)", order));
}

// Loaded datasets come back sorted by task id; rearrange them into the
// training order recorded in a checkpoint.
TaskStream reorder(const TaskStream& s, const std::vector<int>& order) {
  TaskStream r;
  r.feature_dim = s.feature_dim;
  r.vocab_size = s.vocab_size;
  std::vector<bool> used(s.tasks.size(), false);
  for (int id : order) {
    auto it = std::find_if(s.tasks.begin(), s.tasks.end(), [id](const TaskData& t) { return t.task_id == id; });
    if (it == s.tasks.end()) throw ConsistencyError(fmt::format("dataset lacks task {} used by the checkpoint", id));
    used[static_cast<std::size_t>(it - s.tasks.begin())] = true;
    r.tasks.push_back(*it);
  }
  for (std::size_t i = 0; i < s.tasks.size(); ++i) {
    if (!used[i]) r.tasks.push_back(s.tasks[i]);
  }
  return r;
}

TaskStream obtain_stream(const std::optional<std::string>& data, const SyntheticStreamSpec& spec) {
  return data ? load_dataset(*data) : generate_stream(spec);
}

std::string format_row(const std::vector<double>& row) {
  std::string s;
  for (double v : row) s += fmt::format("{}{:.2f}", s.empty() ? "" : " ", v);
  return s;
}

std::string format_af(const PerformanceMatrix& m) {
  const auto af = compute_af(m);
  return af.value ? fmt::format("{:.2f}", *af.value) : std::string("null");
}

// ---------------------------------------------------------------- generate

struct GenerateArgs {
  StreamFlags stream;
  bool single_file = false;
};

int cmd_generate(const GenerateArgs& a, const Globals& g, Console& con) {
  TrainConfig unused;
  SyntheticStreamSpec spec;
  resolve_config(g, nullptr, &a.stream, unused, spec);
  spec.validate();
  const auto out = require_out(g);
  const auto stream = generate_stream(spec);
  if (a.single_file) {
    save_dataset_file(stream, out);
  } else {
    DirectoryLock lock(out);
    save_dataset(stream, out, to_json(spec));
  }
  for (const auto& t : stream.tasks) con.info("task {}: {} train, {} test", t.task_id, t.train.size(), t.test.size());
  con.result("wrote {} tasks to {}", stream.n_tasks(), out.string());
  return kExitOk;
}

// ------------------------------------------------------------------- train

struct TrainArgs {
  TrainFlags flags;
  StreamFlags stream;
  std::optional<std::string> data;
  std::optional<std::string> mode;
  std::string order = "forward";
  std::optional<std::string> resume;
  bool resume_flag = false;
  std::optional<std::size_t> stop_after;
};

int cmd_train(const TrainArgs& a, const Globals& g, Console& con) {
  const auto out = require_out(g);
  DirectoryLock lock(out);
  const auto start = Clock::now();

  TrainConfig config;
  SyntheticStreamSpec spec;
  resolve_config(g, &a.flags, &a.stream, config, spec);

  ContinualState state;
  TaskStream stream;
  const fs::path ckpt_path = out / kCheckpointName;
  if (a.resume || a.resume_flag) {
    const fs::path from = a.resume ? fs::path(*a.resume) : ckpt_path;
    state = load_checkpoint(from);
    if (a.mode && parse_train_mode(*a.mode) != state.mode) {
      throw ValidationError(fmt::format("--mode {} does not match the checkpoint mode {}", *a.mode,
                                        to_string(state.mode)));
    }
    stream = reorder(ordered(obtain_stream(a.data, spec), a.order), state.task_order);
    con.info("resuming {} run after {} of {} stages", to_string(state.mode), state.completed(), state.n_tasks);
  } else {
    config.validate();
    stream = ordered(obtain_stream(a.data, spec), a.order);
    state = initial_state(config, parse_train_mode(a.mode.value_or("full")), stream);
  }

  RunOptions opts;
  opts.stop_after = a.stop_after;
  opts.on_stage = [&](const ContinualState& s) {
    save_checkpoint(s, ckpt_path);
    if (s.matrix.is_joint()) {
      con.info("joint training done: {}", format_row(s.matrix.final_row()));
    } else {
      con.info("stage {}/{} (task {}): {}", s.completed(), s.n_tasks, s.task_order.back(),
               format_row(s.matrix.data().back()));
    }
  };
  run_stream(state, stream, opts);

  if (!state.matrix.complete()) {
    con.result("stopped after {} of {} stages; checkpoint at {}", state.completed(), state.n_tasks,
               ckpt_path.string());
    return kExitOk;
  }
  if (state.completed() == state.n_tasks && !fs::exists(ckpt_path)) save_checkpoint(state, ckpt_path);
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  auto report = make_report(state, secs);
  emit_report(report, out);
  if (state.loss_diagnostics.floored_tokens > 0) {
    con.info("warning: {} target probabilities were floored at 1e-12", state.loss_diagnostics.floored_tokens);
  }
  con.result("mode {}  AP {:.2f}  AF {}", report.mode, compute_ap(state.matrix), format_af(state.matrix));
  return kExitOk;
}

// -------------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint;
  std::optional<std::string> data;
  StreamFlags stream;
  bool oracle_task_id = false;
};

int cmd_eval(const EvalArgs& a, const Globals& g, Console& con) {
  const auto state = load_checkpoint(a.checkpoint);
  TrainConfig unused;
  SyntheticStreamSpec spec;
  resolve_config(g, nullptr, &a.stream, unused, spec);
  if (!g.seed && !a.data) spec.seed = state.config.seed;
  const auto stream = reorder(obtain_stream(a.data, spec), state.task_order);
  if (stream.feature_dim != state.feature_dim || stream.vocab_size != state.vocab_size) {
    throw ConsistencyError("dataset shape does not match the checkpoint");
  }

  nlohmann::json j;
  j["checkpoint"] = a.checkpoint;
  j["mode"] = to_string(state.mode);
  j["oracle_task_id"] = a.oracle_task_id;
  j["task_order"] = state.task_order;
  std::vector<double> row;
  if (state.mode == TrainMode::Multitask) {
    std::vector<TaskData> tasks(stream.tasks.begin(), stream.tasks.begin() + static_cast<long>(state.completed()));
    for (const auto& t : tasks) {
      row.push_back(instance_accuracy(state.stack, t.test, state.sequence_length, state.vocab_size));
    }
  } else {
    EvalOptions opts;
    opts.oracle_task_id = a.oracle_task_id;
    const auto r = evaluate(state, std::span(stream.tasks).first(state.completed()), opts);
    row = r.accuracy;
    j["task_id_accuracy"] = r.task_id_accuracy;
    j["confusion"] = r.confusion;
    con.info("task-id accuracy {:.4f}", r.task_id_accuracy);
  }
  j["row"] = row;
  double mean = 0.0;
  for (double v : row) mean += v;
  j["mean_accuracy"] = row.empty() ? 0.0 : mean / static_cast<double>(row.size());
  if (g.out) {
    ensure_directory(*g.out);
    write_file_atomic(fs::path(*g.out) / "eval.json", j.dump(2) + "\n");
  }
  con.result("row: {}", format_row(row));
  return kExitOk;
}

// ------------------------------------------------------------------- sweep

struct SweepArgs {
  TrainFlags flags;
  StreamFlags stream;
  std::optional<std::string> data;
  std::vector<std::string> modes{"full"};
  std::vector<double> gammas, betas;
  std::vector<std::size_t> n_experts, top_k;
  std::vector<std::string> orders{"forward"};
  std::vector<std::uint64_t> seeds;
};

int cmd_sweep(const SweepArgs& a, const Globals& g, Console& con) {
  const auto out = require_out(g);
  DirectoryLock lock(out);
  TrainConfig base;
  SyntheticStreamSpec spec;
  resolve_config(g, &a.flags, &a.stream, base, spec);

  const auto or_base = [](auto list, auto value) {
    if (list.empty()) list.push_back(value);
    return list;
  };
  const auto gammas = or_base(a.gammas, base.gamma);
  const auto betas = or_base(a.betas, base.beta);
  const auto ns = or_base(a.n_experts, base.n_experts);
  const auto ks = or_base(a.top_k, base.top_k);
  const auto seeds = or_base(a.seeds, base.seed);
  for (const auto& m : a.modes) parse_train_mode(m);
  for (const auto& o : a.orders) {
    if (o != "forward" && o != "reverse") throw ValidationError(fmt::format("unknown order '{}'", o));
  }

  std::optional<TaskStream> loaded;
  if (a.data) loaded = load_dataset(*a.data);
  std::map<std::uint64_t, TaskStream> generated;

  nlohmann::json summary = nlohmann::json::array();
  std::string tsv = "point\tmode\tgamma\tbeta\tn_experts\ttop_k\torder\tseed\tap\taf\tstatus\n";
  std::size_t index = 0, failures = 0;
  for (const auto& mode : a.modes)
    for (double gamma : gammas)
      for (double beta : betas)
        for (std::size_t n : ns)
          for (std::size_t k : ks)
            for (const auto& order : a.orders)
              for (std::uint64_t seed : seeds) {
                const auto name = fmt::format("p{:03}_{}_g{}_b{}_n{}_k{}_{}_s{}", index++, mode, gamma, beta, n, k,
                                              order, seed);
                nlohmann::json row = {{"point", name}, {"mode", mode}, {"gamma", gamma}, {"beta", beta},
                                      {"n_experts", n}, {"top_k", k},  {"order", order}, {"seed", seed}};
                // A point's rank follows its expert count so that r/n stays
                // what the base config implies.
                TrainConfig c = base;
                c.gamma = gamma;
                c.beta = beta;
                c.rank = base.rank / base.n_experts * n;
                c.n_experts = n;
                c.top_k = k;
                c.seed = seed;
                try {
                  c.validate();
                  if (!loaded && !generated.count(seed)) {
                    auto s = spec;
                    s.seed = seed;
                    generated.emplace(seed, generate_stream(s));
                  }
                  const auto stream = ordered(loaded ? *loaded : generated.at(seed), order);
                  const auto start = Clock::now();
                  auto state = initial_state(c, parse_train_mode(mode), stream);
                  run_stream(state, stream);
                  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
                  emit_report(make_report(state, secs), out / name);
                  const auto af = compute_af(state.matrix);
                  row["ap"] = compute_ap(state.matrix);
                  row["af"] = af.value ? nlohmann::json(*af.value) : nlohmann::json(nullptr);
                  row["status"] = "ok";
                  con.info("{}: AP {:.2f} AF {}", name, compute_ap(state.matrix), format_af(state.matrix));
                } catch (const Error& e) {
                  ++failures;
                  row["ap"] = nullptr;
                  row["af"] = nullptr;
                  row["status"] = "failed";
                  row["error"] = e.what();
                  row["exit_code"] = exit_code(e);
                  con.info("{}: failed: {}", name, e.what());
                }
                const auto num = [](const nlohmann::json& v) {
                  return v.is_null() ? std::string("null") : fmt::format("{}", v.get<double>());
                };
                tsv += fmt::format("{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n", name, mode, gamma, beta, n, k, order,
                                   seed, num(row["ap"]), num(row["af"]), row["status"].get<std::string>());
                summary.push_back(std::move(row));
              }
  write_file_atomic(out / "summary.json", summary.dump(2) + "\n");
  write_file_atomic(out / "summary.tsv", tsv);
  con.result("{} points, {} failed; summary in {}", summary.size(), failures, (out / "summary.tsv").string());
  return kExitOk;
}

// ------------------------------------------------------------------ report

struct ReportArgs {
  std::vector<std::string> metrics;
};

int cmd_report(const ReportArgs& a, const Globals& g, Console& con) {
  for (const auto& path : a.metrics) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(fmt::format("{}: {}", path, e.what()));
    }
    RunReport r;
    r.matrix = matrix_from_json(j);
    r.mode = j.value("mode", "");
    r.seed = j.value("seed", std::uint64_t{0});
    r.task_order = j.value("task_order", std::vector<int>{});
    r.config = j.value("config", nlohmann::json::object());
    r.diag_pre_merge = j.value("diag_pre_merge", std::vector<double>{});
    r.diag_post_merge = j.value("diag_post_merge", std::vector<double>{});
    r.runtime_seconds = j.value("runtime_seconds", 0.0);

    const double ap = compute_ap(r.matrix);
    const auto af = compute_af(r.matrix);
    const double stored_ap = j.at("ap").get<double>();
    const bool af_ok = j.at("af").is_null() ? !af.value : (af.value && std::abs(*af.value - j["af"].get<double>()) <= 1e-9);
    if (std::abs(ap - stored_ap) > 1e-9 || !af_ok) {
      throw IntegrityError(fmt::format("{}: stored AP/AF disagree with the stored matrix", path));
    }
    con.result("{}", path);
    con.result("{}", format_table(r));
    if (g.out) {
      const fs::path dir = a.metrics.size() == 1 ? fs::path(*g.out) : fs::path(*g.out) / fs::path(path).parent_path().filename();
      ensure_directory(dir);
      write_file_atomic(dir / "metrics.txt", format_table(r));
      write_file_atomic(dir / "accuracy_curve.csv", format_plot_csv(r.matrix));
    }
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Continual learning with gated low-rank expert adapters", "clmoe"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Root seed for streams and training");
  app.add_option("--out", g.out, "Output path (directory, or file for generate --single-file)");
  app.add_option("--config", g.config, "TOML config file; explicit flags override it");
  app.add_flag("--quiet", g.quiet, "Only print final results");

  GenerateArgs gen;
  auto* gen_cmd = app.add_subcommand("generate", "Write a synthetic task stream");
  gen_cmd->fallthrough();
  gen.stream.add_to(gen_cmd);
  gen_cmd->add_flag("--single-file", gen.single_file, "Write one dataset file instead of a directory");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train over a task stream");
  train_cmd->fallthrough();
  train.flags.add_to(train_cmd);
  train.stream.add_to(train_cmd);
  train_cmd->add_option("--data", train.data, "Dataset directory or file (default: generate from --seed)");
  train_cmd->add_option("--mode", train.mode, "vanilla, mmoe, rmoe, full or multitask")
      ->check(CLI::IsMember({"vanilla", "mmoe", "rmoe", "full", "multitask"}));
  train_cmd->add_option("--order", train.order, "forward or reverse")->check(CLI::IsMember({"forward", "reverse"}));
  auto* resume_path = train_cmd->add_option("--resume-from", train.resume, "Resume from this checkpoint file");
  train_cmd->add_flag("--resume", train.resume_flag, "Resume from <out>/checkpoint.clmoe")->excludes(resume_path);
  train_cmd->add_option("--stop-after", train.stop_after, "Stop once this many tasks are done");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on every trained task");
  eval_cmd->fallthrough();
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--data", ev.data, "Dataset directory or file (default: regenerate)");
  ev.stream.add_to(eval_cmd);
  eval_cmd->add_flag("--oracle-task-id", ev.oracle_task_id, "Route with the true task instead of the inferred one");

  SweepArgs sw;
  auto* sweep_cmd = app.add_subcommand("sweep", "Run a grid of independent seeded runs");
  sweep_cmd->fallthrough();
  sw.flags.add_to(sweep_cmd);
  sw.stream.add_to(sweep_cmd);
  sweep_cmd->add_option("--data", sw.data, "Dataset directory or file (default: generate per seed)");
  sweep_cmd->add_option("--modes", sw.modes, "Modes to run")->delimiter(',');
  sweep_cmd->add_option("--gammas", sw.gammas)->delimiter(',');
  sweep_cmd->add_option("--betas", sw.betas)->delimiter(',');
  sweep_cmd->add_option("--n-experts-list", sw.n_experts)->delimiter(',');
  sweep_cmd->add_option("--top-k-list", sw.top_k)->delimiter(',');
  sweep_cmd->add_option("--orders", sw.orders, "forward, reverse or both")->delimiter(',');
  sweep_cmd->add_option("--seeds", sw.seeds)->delimiter(',');

  ReportArgs rep;
  auto* report_cmd = app.add_subcommand("report", "Re-check and print metrics files");
  report_cmd->fallthrough();
  report_cmd->add_option("metrics", rep.metrics, "metrics.json files")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  Console con(out, g.quiet);
  try {
    if (*gen_cmd) return cmd_generate(gen, g, con);
    if (*train_cmd) return cmd_train(train, g, con);
    if (*eval_cmd) return cmd_eval(ev, g, con);
    if (*sweep_cmd) return cmd_sweep(sw, g, con);
    if (*report_cmd) return cmd_report(rep, g, con);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e);
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return 1;
  }
  return kExitValidation;
}

}  // namespace clmoe::cli
