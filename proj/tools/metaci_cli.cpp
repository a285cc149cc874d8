// Command-line front end: generate task pools, train meta-initializations,
// run full evaluations, and re-emit or validate reports.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "metaci/metaci.hpp"

namespace {

namespace fs = std::filesystem;
using namespace metaci;

int cmd_generate(const std::string& config_path, std::uint64_t seed, bool seed_given,
                 const std::string& out_dir, bool ground_truth) {
  Scenario sc = load_scenario(config_path);
  const std::uint64_t use_seed = seed_given ? seed : sc.seeds.front();

  const std::vector<DgpHandle> family = scenario_dgp_family(sc);
  RngStream root(use_seed, 0);
  const Dataset population =
      generate_dataset(family[0], root.child(detail::kScenarioPopulation));
  TaskSet ts;
  if (sc.shift) {
    ts = build_taskset(population, sc.omega, sc.k, sc.scheme,
                       root.child(detail::kScenarioTasks), &family, &sc.shift->chunk_map);
  } else {
    ts = build_taskset(population, sc.omega, sc.k, sc.scheme,
                       root.child(detail::kScenarioTasks));
  }

  fs::create_directories(out_dir);
  write_dataset_csv(population, (fs::path(out_dir) / "population.csv").string(), ground_truth);

  json manifest = ts.manifest();
  manifest["kind"] = "taskset-manifest";
  manifest["scenario"] = sc.id;
  manifest["seed"] = use_seed;
  atomic_write_file((fs::path(out_dir) / "manifest.json").string(), manifest.dump(2) + "\n");

  std::cout << "wrote " << out_dir << "/population.csv (" << population.n() << " rows) and "
            << out_dir << "/manifest.json (" << ts.tasks.size() << " tasks of " << ts.n_omega
            << " rows)\n";
  return 0;
}

int cmd_train(const std::string& config_path, std::uint64_t seed, bool seed_given,
              const std::string& method_name, std::size_t test_task,
              const std::string& out_dir, bool force) {
  Scenario sc = load_scenario(config_path);
  const std::uint64_t use_seed = seed_given ? seed : sc.seeds.front();
  if (test_task >= sc.omega) {
    throw std::invalid_argument("train: --test-task must be below omega");
  }
  const Method method = method_from_string(method_name);
  if (method == Method::oracle) {
    throw std::invalid_argument("train: 'oracle' has nothing to train");
  }
  std::size_t method_index = sc.methods.size();
  for (std::size_t i = 0; i < sc.methods.size(); ++i) {
    if (sc.methods[i] == method_name) method_index = i;
  }
  if (method_index == sc.methods.size()) {
    throw std::invalid_argument("train: method '" + method_name +
                                "' is not listed in the scenario");
  }

  const TaskSet ts = build_scenario_taskset(sc, use_seed);
  RngStream root(use_seed, 0);
  RngStream job = root.child(detail::kScenarioJobs).child(test_task).child(method_index);

  const bool plain_net = method == Method::metann4 || method == Method::randomnn4;
  const CIConfig inner = plain_net ? build_nn4(sc.inner) : sc.inner;
  const std::size_t input_dim = ts.tasks.front().data.p();

  std::vector<MetaCheckpoint> checkpoints;
  MetaState state;
  if (method == Method::randomci || method == Method::randomnn4) {
    checkpoints.push_back(
        MetaCheckpoint{0, init_net(inner, input_dim, job.child(0).child(0))});
  } else {
    MetaConfig mc = sc.meta;
    if (method == Method::ci_omega) {
      mc.eps_phi = 1.0;
      mc.eps_head = 1.0;
      mc.decay = false;
      mc.order = MetaConfig::Order::round_robin;
    }
    std::vector<TrainTaskView> views;
    for (std::size_t v = 0; v < ts.tasks.size(); ++v) {
      if (v == test_task) continue;
      views.push_back(TrainTaskView{&ts.tasks[v].data, train_role_split(ts.tasks[v]),
                                    ts.tasks[v].id});
    }
    state = meta_train(inner, mc, views, input_dim, job.child(0));
    checkpoints = state.checkpoints;
  }

  fs::create_directories(out_dir);
  json files = json::array();
  for (const auto& ck : checkpoints) {
    Checkpoint rec{ck.params, inner, SeedRecord{use_seed, job.stream_id()}, ck.iteration};
    const std::string name = "checkpoint_" + std::to_string(ck.iteration) + ".json";
    save_checkpoint(rec, (fs::path(out_dir) / name).string(), force);
    files.push_back(name);
  }
  if (!state.curve.empty()) {
    std::string curve = "iteration,task_id,objective\n";
    for (const auto& p : state.curve) {
      curve += std::to_string(p.iteration) + ',' + std::to_string(p.task_id) + ',' +
               format_double(p.objective) + '\n';
    }
    atomic_write_file((fs::path(out_dir) / "curve.csv").string(), curve);
  }
  json meta{{"kind", "train-run"},
            {"scenario", sc.id},
            {"method", method_name},
            {"seed", use_seed},
            {"test_task", test_task},
            {"checkpoints", files},
            {"skipped_batches", state.skipped_batches}};
  atomic_write_file((fs::path(out_dir) / "train_meta.json").string(), meta.dump(2) + "\n");

  std::cout << "wrote " << files.size() << " checkpoint(s) to " << out_dir << "\n";
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& out_dir,
             const std::string& format, std::size_t jobs,
             const std::vector<std::string>& methods, const std::vector<std::uint64_t>& seeds) {
  Scenario sc = load_scenario(config_path);
  if (!seeds.empty()) {
    sc.seeds = seeds;
    sc.raw["seeds"] = seeds;
  }
  EvalReport rep = run_scenario(sc, jobs, methods.empty() ? nullptr : &methods);
  emit_report(rep, out_dir, format);
  std::cout << "evaluated " << rep.rows.size() << " (seed, task, method) cells into "
            << out_dir << " [" << format << "]\n";
  for (const auto& a : rep.aggregates) {
    if (!a.seed) {
      std::cout << "  " << a.method << ": mean mape " << format_double(a.mean_mape) << " over "
                << a.rows << " cells\n";
    }
  }
  return 0;
}

int cmd_report(const std::string& in_path, const std::string& format,
               const std::string& out_dir, bool validate) {
  json doc;
  try {
    doc = json::parse(read_file(in_path));
  } catch (const json::parse_error& e) {
    throw std::runtime_error(std::string("report: ") + e.what());
  }
  if (validate) {
    const std::vector<std::string> problems = validate_report_json(doc);
    if (!problems.empty()) {
      for (const auto& p : problems) std::cerr << "report: " << p << "\n";
      return 1;
    }
    std::cout << "report is structurally valid\n";
  }
  EvalReport rep = report_from_json(doc);
  if (!out_dir.empty()) {
    emit_report(rep, out_dir, format);
    std::cout << "re-emitted report to " << out_dir << " [" << format << "]\n";
  } else if (!validate) {
    for (const auto& a : rep.aggregates) {
      if (!a.seed) {
        std::cout << a.method << ": mean mape " << format_double(a.mean_mape) << " over "
                  << a.rows << " cells\n";
      }
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta-initialized counterfactual inference pipeline"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", format = "json", method_name, in_path;
  std::uint64_t seed = 0;
  std::size_t test_task = 0, jobs = 1;
  bool ground_truth = false, force = false, validate = false;
  std::vector<std::string> methods;
  std::vector<std::uint64_t> seeds;

  auto* gen = app.add_subcommand("generate", "Write a population CSV and task manifest");
  gen->add_option("--config", config_path, "Scenario JSON")->required();
  auto* gen_seed = gen->add_option("--seed", seed, "Seed (default: first scenario seed)");
  gen->add_option("--out", out_dir, "Output directory");
  gen->add_flag("--ground-truth", ground_truth, "Include mu0/mu1 columns");

  auto* train = app.add_subcommand("train", "Train and save checkpoints for one fold");
  train->add_option("--config", config_path, "Scenario JSON")->required();
  auto* train_seed = train->add_option("--seed", seed, "Seed (default: first scenario seed)");
  train->add_option("--method", method_name, "Method to train")->required();
  train->add_option("--test-task", test_task, "Held-out task id");
  train->add_option("--out", out_dir, "Output directory");
  train->add_flag("--force", force, "Overwrite existing checkpoints");

  auto* ev = app.add_subcommand("eval", "Run the full leave-one-task-out evaluation");
  ev->add_option("--config", config_path, "Scenario JSON")->required();
  ev->add_option("--out", out_dir, "Output directory");
  ev->add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
  ev->add_option("--jobs", jobs, "Worker threads")->check(CLI::Range(std::size_t{1}, std::size_t{256}));
  ev->add_option("--method", methods, "Restrict to these methods (repeatable)");
  ev->add_option("--seed", seeds, "Override scenario seeds (repeatable)");

  auto* rep = app.add_subcommand("report", "Validate or re-emit a JSON report");
  rep->add_option("--in", in_path, "report.json path")->required();
  rep->add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
  rep->add_option("--out", out_dir, "Output directory for re-emission")->default_val("");
  rep->add_flag("--validate", validate, "Check report structure");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) {
      return cmd_generate(config_path, seed, gen_seed->count() > 0, out_dir, ground_truth);
    }
    if (train->parsed()) {
      return cmd_train(config_path, seed, train_seed->count() > 0, method_name, test_task,
                       out_dir, force);
    }
    if (ev->parsed()) return cmd_eval(config_path, out_dir, format, jobs, methods, seeds);
    if (rep->parsed()) return cmd_report(in_path, format, out_dir, validate);
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
