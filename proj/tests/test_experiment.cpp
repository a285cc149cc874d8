#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "metaci/experiment.hpp"

using namespace metaci;
namespace fs = std::filesystem;

namespace {

json smoke_doc() {
  return json{
      {"id", "smoke"},
      {"dataset", {{"kind", "ad"}, {"params", {{"sample_count", 240}}}}},
      {"omega", 3},
      {"k", 1},
      {"scheme", {{"kind", "single"}, {"feature", 0}}},
      {"inner",
       {{"phi_sizes", {6}},
        {"head_sizes", {4}},
        {"epochs", 2},
        {"batch_size", 16},
        {"learning_rate", 0.02},
        {"alpha", 0.2},
        {"gamma", 1e-3}}},
      {"meta", {{"iterations", 3}, {"checkpoint_every", 2}, {"eps_phi", 1.0}, {"eps_head", 1.0}}},
      {"methods", {"metaci", "randomci", "oracle"}},
      {"seeds", {1}},
  };
}

fs::path temp_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("metaci_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("effect estimate from predictions matches hand arithmetic") {
  const std::vector<int> t{1, 0};
  const std::vector<double> y{3.0, 1.0};
  const std::vector<double> yhat0{2.0, 7.0};  // control entry unused
  const std::vector<double> yhat1{9.0, 4.0};  // treated entry unused
  // treated half: (3-2)/2 = 0.5; control half: (4-1)/2 = 1.5
  REQUIRE(ate_from_predictions(t, y, yhat0, yhat1) == Catch::Approx(2.0).margin(1e-15));

  REQUIRE_THROWS_AS(ate_from_predictions({1, 1}, y, yhat0, yhat1), std::invalid_argument);
  REQUIRE_THROWS_AS(ate_from_predictions({0, 0}, y, yhat0, yhat1), std::invalid_argument);
  REQUIRE_THROWS_AS(ate_from_predictions({1, 0, 1}, y, yhat0, yhat1), std::invalid_argument);
}

TEST_CASE("mape definition and guards") {
  REQUIRE(mape(3.0, 2.0) == Catch::Approx(0.5).margin(1e-15));
  REQUIRE(mape(1.0, -2.0) == Catch::Approx(1.5).margin(1e-15));
  REQUIRE(mape(2.0, 2.0) == 0.0);
  REQUIRE_THROWS_AS(mape(1.0, 0.0), std::invalid_argument);
}

TEST_CASE("method names round trip") {
  for (const auto& [name, m] : method_names()) {
    REQUIRE(method_from_string(name) == m);
    REQUIRE(method_to_string(m) == name);
  }
  REQUIRE_THROWS_WITH(method_from_string("gradientboost"),
                      Catch::Matchers::ContainsSubstring("valid:"));
}

TEST_CASE("scenario parsing applies defaults and rejects malformed documents") {
  const json doc = smoke_doc();
  const Scenario sc = parse_scenario(doc);
  REQUIRE(sc.id == "smoke");
  REQUIRE(sc.dataset_kind == "ad");
  REQUIRE(sc.omega == 3);
  REQUIRE(sc.k == 1);
  REQUIRE(sc.scheme.kind == ChunkScheme::Kind::single_feature);
  REQUIRE_FALSE(sc.shift.has_value());
  REQUIRE(sc.inner.phi_sizes == std::vector<std::size_t>{6});
  REQUIRE(sc.meta.iterations == 3);
  REQUIRE(sc.grid.size() == 1);  // defaults to the inner configuration
  REQUIRE(sc.methods == std::vector<std::string>{"metaci", "randomci", "oracle"});
  REQUIRE(sc.seeds == std::vector<std::uint64_t>{1});
  REQUIRE(sc.raw == doc);

  SECTION("missing required keys") {
    for (const char* key : {"id", "dataset", "omega", "k", "methods", "seeds"}) {
      json broken = smoke_doc();
      broken.erase(key);
      REQUIRE_THROWS_AS(parse_scenario(broken), std::invalid_argument);
    }
  }
  SECTION("unknown keys anywhere are rejected") {
    json broken = smoke_doc();
    broken["surprise"] = 1;
    REQUIRE_THROWS_WITH(parse_scenario(broken),
                        Catch::Matchers::ContainsSubstring("surprise"));
    broken = smoke_doc();
    broken["dataset"]["params"]["n"] = 100;
    REQUIRE_THROWS_AS(parse_scenario(broken), std::invalid_argument);
  }
  SECTION("method and k validation") {
    json broken = smoke_doc();
    broken["methods"] = {"metaci", "mystery"};
    REQUIRE_THROWS_WITH(parse_scenario(broken), Catch::Matchers::ContainsSubstring("mystery"));
    broken = smoke_doc();
    broken["k"] = 3;  // omega - 1 is the ceiling
    REQUIRE_THROWS_AS(parse_scenario(broken), std::invalid_argument);
    broken["k"] = 0;
    REQUIRE_THROWS_AS(parse_scenario(broken), std::invalid_argument);
    broken = smoke_doc();
    broken["omega"] = 1;
    REQUIRE_THROWS_AS(parse_scenario(broken), std::invalid_argument);
  }
  SECTION("grid entries tune hyperparameters but never the architecture") {
    json doc2 = smoke_doc();
    doc2["grid"] = {{{"learning_rate", 0.1}}, {{"learning_rate", 0.01}, {"epochs", 4}}};
    const Scenario sc2 = parse_scenario(doc2);
    REQUIRE(sc2.grid.size() == 2);
    REQUIRE(sc2.grid[0].learning_rate == 0.1);
    REQUIRE(sc2.grid[0].phi_sizes == sc2.inner.phi_sizes);
    REQUIRE(sc2.grid[1].epochs == 4);

    doc2["grid"] = {{{"phi_sizes", {3}}}};
    REQUIRE_THROWS_WITH(parse_scenario(doc2),
                        Catch::Matchers::ContainsSubstring("architecture"));
  }
  SECTION("dataset kind must be known") {
    json broken = smoke_doc();
    broken["dataset"]["kind"] = "synthetic";
    REQUIRE_THROWS_AS(parse_scenario(broken), std::invalid_argument);
  }
}

TEST_CASE("concept shift block validates and defaults its chunk map") {
  json doc = smoke_doc();
  doc["omega"] = 4;
  doc["dataset"]["params"]["sample_count"] = 320;
  doc["concept_shift"] = {{"dgp_count", 2},
                          {"overrides", {json::object(), {{"theta", 4.0}}}}};
  const Scenario sc = parse_scenario(doc);
  REQUIRE(sc.shift.has_value());
  REQUIRE(sc.shift->dgp_count == 2);
  REQUIRE(sc.shift->chunk_map == std::vector<std::size_t>{0, 0, 1, 1});

  json with_map = doc;
  with_map["concept_shift"]["chunk_map"] = {1, 0, 1, 0};
  REQUIRE(parse_scenario(with_map).shift->chunk_map == std::vector<std::size_t>{1, 0, 1, 0});

  SECTION("uneven omega gives the leading members the extra chunk") {
    json odd = doc;
    odd["omega"] = 5;
    odd["k"] = 2;
    odd["dataset"]["params"]["sample_count"] = 400;
    REQUIRE(parse_scenario(odd).shift->chunk_map == std::vector<std::size_t>{0, 0, 0, 1, 1});
  }
  SECTION("bad blocks are rejected") {
    json broken = doc;
    broken["concept_shift"]["dgp_count"] = 1;
    REQUIRE_THROWS_AS(parse_scenario(broken), std::invalid_argument);
    broken = doc;
    broken["concept_shift"]["overrides"] = {json::object()};
    REQUIRE_THROWS_AS(parse_scenario(broken), std::invalid_argument);
    broken = doc;
    broken["concept_shift"]["chunk_map"] = {0, 1};
    REQUIRE_THROWS_AS(parse_scenario(broken), std::invalid_argument);
    broken = doc;
    broken["concept_shift"]["chunk_map"] = {0, 0, 1, 2};
    REQUIRE_THROWS_AS(parse_scenario(broken), std::invalid_argument);
    broken = doc;
    broken["concept_shift"]["overrides"] = {json::object(), {{"theta", "big"}}};
    REQUIRE_THROWS_AS(parse_scenario(broken), std::invalid_argument);
  }
}

TEST_CASE("scenarios load from disk") {
  const fs::path dir = temp_dir("scenario");
  const fs::path path = dir / "scenario.json";
  {
    std::ofstream out(path);
    out << smoke_doc().dump(2);
  }
  const Scenario sc = load_scenario(path.string());
  REQUIRE(sc.id == "smoke");

  {
    std::ofstream out(path);
    out << "{ not json";
  }
  REQUIRE_THROWS_AS(load_scenario(path.string()), std::invalid_argument);
  REQUIRE_THROWS_AS(load_scenario((dir / "absent.json").string()), std::exception);
}

TEST_CASE("scenario materialization builds the expected task pool") {
  const Scenario sc = parse_scenario(smoke_doc());
  const TaskSet ts = build_scenario_taskset(sc, 1);
  REQUIRE(ts.omega == 3);
  REQUIRE(ts.k == 1);
  REQUIRE(ts.n_omega == 80);
  REQUIRE(ts.tasks.size() == 3);
  for (const auto& task : ts.tasks) {
    REQUIRE(task.data.n() == 80);
    REQUIRE(task.data.has_ground_truth());
    REQUIRE(task.prov.dgp_id == "ad");
  }
  // same seed reproduces, different seed does not
  const TaskSet again = build_scenario_taskset(sc, 1);
  REQUIRE(again.tasks[0].data.y == ts.tasks[0].data.y);
  const TaskSet other = build_scenario_taskset(sc, 2);
  REQUIRE(other.tasks[0].data.y != ts.tasks[0].data.y);
}

TEST_CASE("checkpoint files round trip bitwise and detect tampering") {
  CIConfig cfg;
  cfg.phi_sizes = {5};
  cfg.head_sizes = {3};
  Checkpoint ck;
  ck.params = init_net(cfg, 7, RngStream(99, 0));
  ck.config = cfg;
  ck.seed = SeedRecord{42, 7};
  ck.meta_iteration = 123;

  const fs::path dir = temp_dir("checkpoint");
  const std::string path = (dir / "ck.json").string();
  save_checkpoint(ck, path);
  const Checkpoint back = load_checkpoint(path);
  REQUIRE(flatten_params(back.params) == flatten_params(ck.params));
  REQUIRE(back.params.input_dim == 7);
  REQUIRE(back.config.to_json() == cfg.to_json());
  REQUIRE(back.seed.seed == 42);
  REQUIRE(back.seed.stream_id == 7);
  REQUIRE(back.meta_iteration == 123);

  SECTION("existing files are protected unless forced") {
    REQUIRE_THROWS_WITH(save_checkpoint(ck, path), Catch::Matchers::ContainsSubstring("force"));
    ck.meta_iteration = 124;
    save_checkpoint(ck, path, true);
    REQUIRE(load_checkpoint(path).meta_iteration == 124);
  }
  SECTION("hash mismatch against the embedded config is caught") {
    json doc = json::parse(read_file(path));
    doc["config"]["learning_rate"] = 0.123;  // config edited, hash left stale
    atomic_write_file(path, doc.dump(2));
    REQUIRE_THROWS_WITH(load_checkpoint(path),
                        Catch::Matchers::ContainsSubstring("config_hash"));
  }
  SECTION("corrupt and foreign documents are rejected") {
    atomic_write_file(path, "]]not json[[");
    REQUIRE_THROWS_AS(load_checkpoint(path), std::runtime_error);
    atomic_write_file(path, json{{"kind", "eval-report"}}.dump());
    REQUIRE_THROWS_AS(load_checkpoint(path), std::runtime_error);
    json doc = checkpoint_to_json(ck);
    doc["format_version"] = 99;
    atomic_write_file(path, doc.dump());
    REQUIRE_THROWS_AS(load_checkpoint(path), std::runtime_error);
  }
}

TEST_CASE("aggregates pool per seed and across seeds") {
  Scenario sc;
  sc.methods = {"m"};
  sc.seeds = {1, 2};
  std::vector<EvalRow> rows(4);
  rows[0].method = rows[1].method = rows[2].method = rows[3].method = "m";
  rows[0].seed = rows[1].seed = 1;
  rows[2].seed = rows[3].seed = 2;
  rows[0].mape = 0.1;
  rows[1].mape = 0.3;
  rows[2].mape = 0.5;
  rows[3].mape = 0.7;
  const auto aggs = aggregate_rows(sc, rows);
  REQUIRE(aggs.size() == 3);
  REQUIRE(aggs[0].seed == std::uint64_t{1});
  REQUIRE(aggs[0].mean_mape == Catch::Approx(0.2).margin(1e-15));
  REQUIRE(aggs[1].seed == std::uint64_t{2});
  REQUIRE(aggs[1].mean_mape == Catch::Approx(0.6).margin(1e-15));
  REQUIRE_FALSE(aggs[2].seed.has_value());
  REQUIRE(aggs[2].mean_mape == Catch::Approx(0.4).margin(1e-15));
  REQUIRE(aggs[2].rows == 4);
}

TEST_CASE("scenario run produces one row per seed fold and method") {
  const Scenario sc = parse_scenario(smoke_doc());
  const EvalReport rep = run_scenario(sc);
  REQUIRE(rep.rows.size() == 1 * 3 * 3);
  for (const auto& r : rep.rows) {
    REQUIRE(r.scenario_id == "smoke");
    REQUIRE(r.test_task < 3);
    REQUIRE(std::isfinite(r.ate_estimate));
    REQUIRE(std::isfinite(r.ate_truth));
    REQUIRE(r.mape >= 0.0);
    REQUIRE(r.dgp_id == "ad");
  }
  // oracle rows sit within noise of the truth; its estimate uses the true
  // surfaces so only outcome noise separates the two
  for (const auto& r : rep.rows) {
    if (r.method == "oracle") REQUIRE(r.mape < 1.0);
  }
  // per-method aggregates: 1 per seed + 1 pooled, for each of 3 methods
  REQUIRE(rep.aggregates.size() == 6);
  // metaci trains, so its jobs carry learning curves; oracle never does
  std::size_t metaci_curves = 0;
  for (const auto& c : rep.curves) {
    REQUIRE(c.method != "oracle");
    REQUIRE(c.method != "randomci");
    if (c.method == "metaci") ++metaci_curves;
    REQUIRE(c.points.size() == 3);  // one point per outer iteration
  }
  REQUIRE(metaci_curves == 3);
  REQUIRE(rep.concept_shift_summary.is_null());
}

TEST_CASE("scenario runs are deterministic and worker-count independent") {
  const Scenario sc = parse_scenario(smoke_doc());
  const std::string a = report_to_json(run_scenario(sc, 1)).dump();
  const std::string b = report_to_json(run_scenario(sc, 1)).dump();
  const std::string c = report_to_json(run_scenario(sc, 2)).dump();
  REQUIRE(a == b);
  REQUIRE(a == c);
}

TEST_CASE("method restriction narrows the run and its echo") {
  const Scenario sc = parse_scenario(smoke_doc());
  const std::vector<std::string> only{"oracle"};
  const EvalReport rep = run_scenario(sc, 1, &only);
  REQUIRE(rep.rows.size() == 3);
  for (const auto& r : rep.rows) REQUIRE(r.method == "oracle");
  REQUIRE(rep.scenario.raw["methods"] == json{"oracle"});
  const auto problems = validate_report_json(report_to_json(rep));
  for (const auto& p : problems) UNSCOPED_INFO(p);
  REQUIRE(problems.empty());
}

TEST_CASE("concept shift runs summarize per family member") {
  json doc = smoke_doc();
  doc["id"] = "shifted";
  doc["omega"] = 4;
  doc["dataset"]["params"]["sample_count"] = 320;
  doc["concept_shift"] = {{"dgp_count", 2},
                          {"overrides", {json::object(), {{"theta", 4.0}, {"eta", 3.0}}}}};
  doc["methods"] = {"oracle"};
  const Scenario sc = parse_scenario(doc);
  const EvalReport rep = run_scenario(sc);
  REQUIRE(rep.rows.size() == 4);
  std::size_t shifted_rows = 0;
  for (const auto& r : rep.rows) {
    if (r.dgp_id == "ad-dgp1") {
      ++shifted_rows;
      REQUIRE(r.ate_truth == Catch::Approx(3.0).margin(0.5));
    } else {
      REQUIRE(r.dgp_id == "ad-dgp0");
      REQUIRE(r.ate_truth == Catch::Approx(1.0).margin(0.5));
    }
  }
  REQUIRE(shifted_rows == 2);
  REQUIRE(rep.concept_shift_summary.is_array());
  REQUIRE(rep.concept_shift_summary.size() == 2);
  for (const auto& entry : rep.concept_shift_summary) {
    REQUIRE(entry["rows"] == 2);
    REQUIRE(std::isfinite(entry["mean_ate_truth"].get<double>()));
    REQUIRE(std::isfinite(entry["var_ate_truth"].get<double>()));
    REQUIRE(std::isfinite(entry["mean_mape"].get<double>()));
  }
}

TEST_CASE("reports serialize to files and reload unchanged") {
  const Scenario sc = parse_scenario(smoke_doc());
  const EvalReport rep = run_scenario(sc);
  const fs::path dir = temp_dir("report");

  emit_report(rep, dir.string(), "json");
  REQUIRE(fs::exists(dir / "report.json"));
  emit_report(rep, dir.string(), "csv");
  REQUIRE(fs::exists(dir / "report.csv"));
  REQUIRE(fs::exists(dir / "summary.csv"));
  REQUIRE(fs::exists(dir / "curves.csv"));
  REQUIRE_THROWS_AS(emit_report(rep, dir.string(), "xml"), std::invalid_argument);

  const json doc = json::parse(read_file((dir / "report.json").string()));
  const EvalReport back = report_from_json(doc);
  REQUIRE(report_to_json(back) == report_to_json(rep));
  REQUIRE(back.rows.size() == rep.rows.size());
  REQUIRE_THROWS_AS(report_from_json(json{{"kind", "checkpoint"}}), std::runtime_error);

  SECTION("csv outputs carry one line per row") {
    const std::string rows_csv = read_file((dir / "report.csv").string());
    REQUIRE(std::count(rows_csv.begin(), rows_csv.end(), '\n') == 1 + 9);
    REQUIRE(rows_csv.rfind("scenario,omega,k,", 0) == 0);
    const std::string summary = read_file((dir / "summary.csv").string());
    REQUIRE(summary.find(",all,") != std::string::npos);
  }
}

TEST_CASE("report validation accepts sound documents and flags broken ones") {
  const Scenario sc = parse_scenario(smoke_doc());
  const EvalReport rep = run_scenario(sc);
  json doc = report_to_json(rep);
  const auto problems = validate_report_json(doc);
  for (const auto& p : problems) UNSCOPED_INFO(p);
  REQUIRE(problems.empty());

  SECTION("row count mismatch") {
    json broken = doc;
    broken["rows"].erase(0);
    REQUIRE_FALSE(validate_report_json(broken).empty());
  }
  SECTION("foreign method in a row") {
    json broken = doc;
    broken["rows"][0]["method"] = "mystery";
    REQUIRE_FALSE(validate_report_json(broken).empty());
  }
  SECTION("aggregate drift") {
    json broken = doc;
    for (auto& a : broken["aggregates"]) {
      if (a["seed"].is_null() && a["method"] == "metaci") {
        a["mean_mape"] = a["mean_mape"].get<double>() + 0.25;
      }
    }
    REQUIRE_FALSE(validate_report_json(broken).empty());
  }
  SECTION("missing learning curves for a meta method") {
    json broken = doc;
    broken["curves"] = json::array();
    REQUIRE_FALSE(validate_report_json(broken).empty());
  }
  SECTION("non-finite values") {
    json broken = doc;
    broken["rows"][0]["mape"] = -1.0;
    REQUIRE_FALSE(validate_report_json(broken).empty());
  }
  SECTION("wrong kind") {
    json broken = doc;
    broken["kind"] = "checkpoint";
    REQUIRE_FALSE(validate_report_json(broken).empty());
  }
}
