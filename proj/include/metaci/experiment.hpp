#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "metaci/checkpoint.hpp"
#include "metaci/cinet.hpp"
#include "metaci/dgp.hpp"
#include "metaci/io.hpp"
#include "metaci/meta.hpp"
#include "metaci/tasking.hpp"

namespace metaci {

// ---------------------------------------------------------------------------
// Effect estimation
// ---------------------------------------------------------------------------

// Treated rows pair their factual outcome with the predicted untreated one,
// control rows the other way around; each group contributes half.
inline double ate_from_predictions(const std::vector<int>& t, const std::vector<double>& y,
                                   const std::vector<double>& yhat0,
                                   const std::vector<double>& yhat1) {
  const std::size_t n = t.size();
  if (y.size() != n || yhat0.size() != n || yhat1.size() != n) {
    throw std::invalid_argument("ate_from_predictions: length mismatch");
  }
  std::size_t n1 = 0;
  for (int ti : t) n1 += static_cast<std::size_t>(ti);
  const std::size_t n0 = n - n1;
  if (n1 == 0 || n0 == 0) {
    throw std::invalid_argument("ate_from_predictions: need both treatment groups");
  }
  double treated = 0.0, control = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (t[i] == 1) {
      treated += y[i] - yhat0[i];
    } else {
      control += yhat1[i] - y[i];
    }
  }
  return treated / (2.0 * static_cast<double>(n1)) + control / (2.0 * static_cast<double>(n0));
}

inline double ate_estimate(const NetParams& net, const Dataset& data,
                           const std::vector<std::size_t>& rows) {
  const Matrix X = detail::gather_rows(data.X, rows);
  const std::vector<int> t = detail::gather(data.t, rows);
  const std::vector<double> y = detail::gather(data.y, rows);
  const std::vector<int> zeros(rows.size(), 0);
  const std::vector<int> ones(rows.size(), 1);
  return ate_from_predictions(t, y, predict(net, X, zeros), predict(net, X, ones));
}

inline double mape(double estimate, double truth) {
  if (!(std::abs(truth) > 0.0)) {
    throw std::invalid_argument("mape: ground-truth effect is zero");
  }
  return std::abs(truth - estimate) / std::abs(truth);
}

// ---------------------------------------------------------------------------
// Methods
// ---------------------------------------------------------------------------

enum class Method { metaci, randomci, ci_omega, metann4, randomnn4, oracle };

inline const std::vector<std::pair<std::string, Method>>& method_names() {
  static const std::vector<std::pair<std::string, Method>> names = {
      {"metaci", Method::metaci},       {"randomci", Method::randomci},
      {"ci_omega", Method::ci_omega},   {"metann4", Method::metann4},
      {"randomnn4", Method::randomnn4}, {"oracle", Method::oracle},
  };
  return names;
}

inline Method method_from_string(const std::string& s) {
  for (const auto& [name, m] : method_names()) {
    if (name == s) return m;
  }
  std::string valid;
  for (const auto& [name, m] : method_names()) valid += " " + name;
  throw std::invalid_argument("unknown method '" + s + "' (valid:" + valid + ")");
}

inline std::string method_to_string(Method m) {
  for (const auto& [name, mm] : method_names()) {
    if (mm == m) return name;
  }
  throw std::logic_error("method_to_string: unmapped method");
}

// ---------------------------------------------------------------------------
// Scenario configuration
// ---------------------------------------------------------------------------

struct ConceptShiftSpec {
  std::size_t dgp_count = 0;
  std::vector<ParamOverride> overrides;   // one per family member
  std::vector<std::size_t> chunk_map;     // empty selects contiguous blocks
};

struct Scenario {
  std::string id;
  std::string dataset_kind;  // "ad" | "ihdp"
  json dataset_params = json::object();
  std::size_t omega = 0;
  std::size_t k = 0;
  ChunkScheme scheme;
  std::optional<ConceptShiftSpec> shift;
  CIConfig inner;
  MetaConfig meta;
  std::vector<CIConfig> grid;  // fine-tune configurations, same architecture
  std::vector<std::string> methods;
  std::vector<std::uint64_t> seeds;
  json raw = json::object();   // parsed document, echoed into reports
};

namespace detail {

inline void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed,
                                const std::string& where) {
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (!allowed.contains(key)) {
      throw std::invalid_argument(where + ": unknown key '" + key + "'");
    }
  }
}

inline AdDgpParams ad_params_from_json(const json& p) {
  reject_unknown_keys(p, {"sample_count", "feature_count", "eta", "theta"}, "dataset.params");
  AdDgpParams a;
  a.sample_count = p.value("sample_count", a.sample_count);
  a.feature_count = p.value("feature_count", a.feature_count);
  a.eta = p.value("eta", a.eta);
  a.theta = p.value("theta", a.theta);
  a.validate();
  return a;
}

inline IhdpDgpParams ihdp_params_from_json(const json& p) {
  reject_unknown_keys(p, {"sample_count", "tau", "noise_scale", "csv_path"}, "dataset.params");
  IhdpDgpParams a;
  a.sample_count = p.value("sample_count", a.sample_count);
  a.tau = p.value("tau", a.tau);
  a.noise_scale = p.value("noise_scale", a.noise_scale);
  if (p.contains("csv_path")) a.csv_path = p["csv_path"].get<std::string>();
  a.validate();
  return a;
}

inline std::vector<std::size_t> default_chunk_map(std::size_t omega, std::size_t dgp_count) {
  std::vector<std::size_t> map;
  const std::size_t base = omega / dgp_count;
  const std::size_t extra = omega % dgp_count;
  for (std::size_t d = 0; d < dgp_count; ++d) {
    const std::size_t size = base + (d < extra ? 1 : 0);
    for (std::size_t i = 0; i < size; ++i) map.push_back(d);
  }
  return map;
}

inline ParamOverride override_from_json(const json& j) {
  ParamOverride ov;
  for (const auto& [key, value] : j.items()) {
    if (!value.is_number()) {
      throw std::invalid_argument("concept_shift override '" + key + "' must be numeric");
    }
    ov[key] = value.get<double>();
  }
  return ov;
}

}  // namespace detail

inline Scenario parse_scenario(const json& doc) {
  if (!doc.is_object()) throw std::invalid_argument("scenario: document must be an object");
  detail::reject_unknown_keys(doc,
                              {"id", "dataset", "omega", "k", "scheme", "concept_shift",
                               "inner", "meta", "grid", "methods", "seeds"},
                              "scenario");
  for (const char* key : {"id", "dataset", "omega", "k", "methods", "seeds"}) {
    if (!doc.contains(key)) {
      throw std::invalid_argument(std::string("scenario: missing key '") + key + "'");
    }
  }

  Scenario sc;
  sc.raw = doc;
  sc.id = doc["id"].get<std::string>();
  const json& ds = doc["dataset"];
  detail::reject_unknown_keys(ds, {"kind", "params"}, "dataset");
  sc.dataset_kind = ds.at("kind").get<std::string>();
  if (sc.dataset_kind != "ad" && sc.dataset_kind != "ihdp") {
    throw std::invalid_argument("scenario: dataset.kind must be 'ad' or 'ihdp'");
  }
  sc.dataset_params = ds.value("params", json::object());
  // parse once so bad parameters fail here, not mid-run
  if (sc.dataset_kind == "ad") {
    detail::ad_params_from_json(sc.dataset_params);
  } else {
    detail::ihdp_params_from_json(sc.dataset_params);
  }

  sc.omega = doc["omega"].get<std::size_t>();
  sc.k = doc["k"].get<std::size_t>();
  if (sc.omega < 2) throw std::invalid_argument("scenario: omega must be >= 2");
  if (sc.k < 1 || sc.k > sc.omega - 1) {
    throw std::invalid_argument("scenario: k must lie in [1, omega-1]");
  }
  if (doc.contains("scheme")) sc.scheme = ChunkScheme::from_json(doc["scheme"]);

  if (doc.contains("concept_shift") && !doc["concept_shift"].is_null()) {
    const json& cs = doc["concept_shift"];
    detail::reject_unknown_keys(cs, {"dgp_count", "overrides", "chunk_map"}, "concept_shift");
    ConceptShiftSpec spec;
    spec.dgp_count = cs.at("dgp_count").get<std::size_t>();
    if (spec.dgp_count < 2) {
      throw std::invalid_argument("concept_shift: dgp_count must be >= 2");
    }
    if (!cs.contains("overrides")) {
      throw std::invalid_argument("concept_shift: overrides array required");
    }
    for (const auto& ov : cs["overrides"]) {
      spec.overrides.push_back(detail::override_from_json(ov));
    }
    if (spec.overrides.size() != spec.dgp_count) {
      throw std::invalid_argument("concept_shift: overrides length must equal dgp_count");
    }
    if (cs.contains("chunk_map")) {
      spec.chunk_map = cs["chunk_map"].get<std::vector<std::size_t>>();
      if (spec.chunk_map.size() != sc.omega) {
        throw std::invalid_argument("concept_shift: chunk_map length must equal omega");
      }
      for (std::size_t d : spec.chunk_map) {
        if (d >= spec.dgp_count) {
          throw std::invalid_argument("concept_shift: chunk_map entry out of range");
        }
      }
    } else {
      spec.chunk_map = detail::default_chunk_map(sc.omega, spec.dgp_count);
    }
    sc.shift = std::move(spec);
  }

  if (doc.contains("inner")) sc.inner = CIConfig::from_json(doc["inner"]);
  if (doc.contains("meta")) sc.meta = MetaConfig::from_json(doc["meta"]);

  if (doc.contains("grid")) {
    for (const auto& entry : doc["grid"]) {
      for (const auto& [key, value] : entry.items()) {
        (void)value;
        if (key == "phi_sizes" || key == "head_sizes") {
          throw std::invalid_argument("scenario: grid entries cannot change the architecture");
        }
      }
      json merged = sc.inner.to_json();
      merged.update(entry);
      sc.grid.push_back(CIConfig::from_json(merged));
    }
  }
  if (sc.grid.empty()) sc.grid.push_back(sc.inner);

  for (const auto& m : doc["methods"]) {
    const std::string name = m.get<std::string>();
    method_from_string(name);
    sc.methods.push_back(name);
  }
  if (sc.methods.empty()) throw std::invalid_argument("scenario: methods must be nonempty");

  sc.seeds = doc["seeds"].get<std::vector<std::uint64_t>>();
  if (sc.seeds.empty()) throw std::invalid_argument("scenario: seeds must be nonempty");
  return sc;
}

inline Scenario load_scenario(const std::string& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("scenario: ") + e.what());
  }
  return parse_scenario(doc);
}

// ---------------------------------------------------------------------------
// Scenario materialization
// ---------------------------------------------------------------------------

namespace detail {
// Substream tags under RngStream(seed, 0).
inline constexpr std::uint64_t kScenarioPopulation = 1;
inline constexpr std::uint64_t kScenarioTasks = 2;
inline constexpr std::uint64_t kScenarioJobs = 1000;
}  // namespace detail

inline std::vector<DgpHandle> scenario_dgp_family(const Scenario& sc) {
  if (sc.dataset_kind == "ad") {
    const AdDgpParams base = detail::ad_params_from_json(sc.dataset_params);
    if (!sc.shift) return {DgpHandle{"ad", base}};
    return make_concept_shift_family(base, sc.shift->overrides);
  }
  const IhdpDgpParams base = detail::ihdp_params_from_json(sc.dataset_params);
  if (!sc.shift) return {DgpHandle{"ihdp", base}};
  return make_concept_shift_family(base, sc.shift->overrides);
}

// Population drawn from the first family member; under concept shift the
// chunk map then reassigns task outcomes.
inline TaskSet build_scenario_taskset(const Scenario& sc, std::uint64_t seed) {
  const std::vector<DgpHandle> family = scenario_dgp_family(sc);
  RngStream root(seed, 0);
  const Dataset population = generate_dataset(family[0], root.child(detail::kScenarioPopulation));
  if (sc.shift) {
    return build_taskset(population, sc.omega, sc.k, sc.scheme,
                         root.child(detail::kScenarioTasks), &family, &sc.shift->chunk_map);
  }
  return build_taskset(population, sc.omega, sc.k, sc.scheme,
                       root.child(detail::kScenarioTasks));
}

// ---------------------------------------------------------------------------
// Evaluation rows and reports
// ---------------------------------------------------------------------------

struct EvalRow {
  std::string scenario_id;
  std::size_t omega = 0, k = 0, n_omega = 0;
  std::string method;
  std::uint64_t seed = 0;
  std::size_t test_task = 0;
  std::string dgp_id;
  std::uint64_t checkpoint_iteration = 0;
  std::size_t grid_index = 0;
  double ate_estimate = 0.0;
  double ate_truth = 0.0;
  double mape = 0.0;
};

struct CurveSeries {
  std::string method;
  std::uint64_t seed = 0;
  std::size_t test_task = 0;
  std::vector<CurvePoint> points;
};

struct AggregateRow {
  std::string method;
  std::optional<std::uint64_t> seed;  // absent = pooled over seeds
  double mean_mape = 0.0;
  std::size_t rows = 0;
};

struct EvalReport {
  Scenario scenario;
  std::vector<EvalRow> rows;
  std::vector<AggregateRow> aggregates;
  std::vector<CurveSeries> curves;
  json concept_shift_summary;  // null without shift
};

// ---------------------------------------------------------------------------
// Single job: one (seed, fold, method)
// ---------------------------------------------------------------------------

namespace detail {

struct JobOutput {
  EvalRow row;
  std::vector<CurvePoint> curve;
};

inline JobOutput run_job(const Scenario& sc, const TaskSet& ts, std::uint64_t seed,
                         std::size_t fold, std::size_t method_index) {
  const Method method = method_from_string(sc.methods[method_index]);
  const Task& test = ts.tasks[fold];
  const Split tsplit = test_role_split(test);

  RngStream root(seed, 0);
  RngStream job = root.child(kScenarioJobs).child(fold).child(method_index);

  JobOutput out;
  out.row.scenario_id = sc.id;
  out.row.omega = ts.omega;
  out.row.k = ts.k;
  out.row.n_omega = ts.n_omega;
  out.row.method = sc.methods[method_index];
  out.row.seed = seed;
  out.row.test_task = fold;
  out.row.dgp_id = test.prov.dgp_id;

  const std::vector<std::size_t>& eval_rows = tsplit.test;
  double truth = 0.0;
  if (!test.data.has_ground_truth()) {
    throw std::runtime_error("run_job: test task carries no ground truth");
  }
  for (std::size_t r : eval_rows) truth += test.data.mu1[r] - test.data.mu0[r];
  truth /= static_cast<double>(eval_rows.size());
  out.row.ate_truth = truth;

  if (method == Method::oracle) {
    const std::vector<int> t = gather(test.data.t, eval_rows);
    const std::vector<double> y = gather(test.data.y, eval_rows);
    out.row.ate_estimate = ate_from_predictions(t, y, gather(test.data.mu0, eval_rows),
                                                gather(test.data.mu1, eval_rows));
    out.row.mape = mape(out.row.ate_estimate, truth);
    return out;
  }

  const bool plain_net = method == Method::metann4 || method == Method::randomnn4;
  const CIConfig inner = plain_net ? build_nn4(sc.inner) : sc.inner;
  std::vector<CIConfig> grid;
  for (const auto& g : sc.grid) grid.push_back(plain_net ? build_nn4(g) : g);

  const std::size_t input_dim = test.data.p();
  std::vector<MetaCheckpoint> checkpoints;

  if (method == Method::randomci || method == Method::randomnn4) {
    checkpoints.push_back(MetaCheckpoint{0, init_net(inner, input_dim, job.child(0).child(0))});
  } else {
    MetaConfig mc = sc.meta;
    if (method == Method::ci_omega) {
      // sequential training over the pool with the same total epoch budget
      mc.eps_phi = 1.0;
      mc.eps_head = 1.0;
      mc.decay = false;
      mc.order = MetaConfig::Order::round_robin;
    }
    std::vector<TrainTaskView> views;
    for (std::size_t v = 0; v < ts.tasks.size(); ++v) {
      if (v == fold) continue;
      views.push_back(TrainTaskView{&ts.tasks[v].data, train_role_split(ts.tasks[v]),
                                    ts.tasks[v].id});
    }
    MetaState state = meta_train(inner, mc, views, input_dim, job.child(0));
    checkpoints = std::move(state.checkpoints);
    out.curve = std::move(state.curve);
  }

  SelectionOutcome sel = select_best(checkpoints, grid, test.data, tsplit, job.child(1));
  out.row.checkpoint_iteration = sel.checkpoint_iteration;
  out.row.grid_index = sel.grid_index;
  out.row.ate_estimate = ate_estimate(sel.best_params, test.data, eval_rows);
  out.row.mape = mape(out.row.ate_estimate, truth);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Full scenario run
// ---------------------------------------------------------------------------

inline std::vector<AggregateRow> aggregate_rows(const Scenario& sc,
                                                const std::vector<EvalRow>& rows) {
  std::vector<AggregateRow> out;
  for (const auto& method : sc.methods) {
    for (std::uint64_t seed : sc.seeds) {
      AggregateRow a;
      a.method = method;
      a.seed = seed;
      for (const auto& r : rows) {
        if (r.method == method && r.seed == seed) {
          a.mean_mape += r.mape;
          ++a.rows;
        }
      }
      if (a.rows > 0) a.mean_mape /= static_cast<double>(a.rows);
      out.push_back(a);
    }
    AggregateRow pooled;
    pooled.method = method;
    for (const auto& r : rows) {
      if (r.method == method) {
        pooled.mean_mape += r.mape;
        ++pooled.rows;
      }
    }
    if (pooled.rows > 0) pooled.mean_mape /= static_cast<double>(pooled.rows);
    out.push_back(pooled);
  }
  return out;
}

// Per-family-member spread of task-level ground truth and estimates.
inline json concept_shift_summary(const std::vector<EvalRow>& rows) {
  std::map<std::string, std::vector<const EvalRow*>> by_dgp;
  for (const auto& r : rows) by_dgp[r.dgp_id].push_back(&r);
  json arr = json::array();
  for (const auto& [dgp, group] : by_dgp) {
    double mt = 0.0, me = 0.0, mm = 0.0;
    for (const auto* r : group) {
      mt += r->ate_truth;
      me += r->ate_estimate;
      mm += r->mape;
    }
    const double n = static_cast<double>(group.size());
    mt /= n;
    me /= n;
    mm /= n;
    double vt = 0.0;
    for (const auto* r : group) vt += (r->ate_truth - mt) * (r->ate_truth - mt);
    vt /= n;
    arr.push_back(json{{"dgp_id", dgp},
                       {"rows", group.size()},
                       {"mean_ate_truth", mt},
                       {"var_ate_truth", vt},
                       {"mean_ate_estimate", me},
                       {"mean_mape", mm}});
  }
  return arr;
}

// Jobs are enumerated (seed, fold, method) in scenario order; each derives its
// randomness from that triple alone, so the result is identical for any
// worker count.
inline EvalReport run_scenario(const Scenario& sc, std::size_t jobs = 1,
                               const std::vector<std::string>* only_methods = nullptr) {
  Scenario scenario = sc;
  if (only_methods != nullptr && !only_methods->empty()) {
    for (const auto& m : *only_methods) method_from_string(m);
    scenario.methods = *only_methods;
    scenario.raw["methods"] = scenario.methods;  // keep the echo consistent
  }

  std::vector<TaskSet> tasksets;
  tasksets.reserve(scenario.seeds.size());
  for (std::uint64_t seed : scenario.seeds) {
    tasksets.push_back(build_scenario_taskset(scenario, seed));
  }

  struct JobSpec {
    std::size_t seed_index, fold, method_index;
  };
  std::vector<JobSpec> specs;
  for (std::size_t si = 0; si < scenario.seeds.size(); ++si) {
    for (std::size_t fold = 0; fold < scenario.omega; ++fold) {
      for (std::size_t mi = 0; mi < scenario.methods.size(); ++mi) {
        specs.push_back(JobSpec{si, fold, mi});
      }
    }
  }

  std::vector<detail::JobOutput> outputs(specs.size());
  std::vector<std::exception_ptr> errors(specs.size());
  const std::size_t workers = std::max<std::size_t>(1, std::min(jobs, specs.size()));

  auto body = [&](std::size_t idx) {
    const JobSpec& js = specs[idx];
    try {
      outputs[idx] = detail::run_job(scenario, tasksets[js.seed_index],
                                     scenario.seeds[js.seed_index], js.fold, js.method_index);
    } catch (...) {
      errors[idx] = std::current_exception();
    }
  };

  if (workers == 1) {
    for (std::size_t i = 0; i < specs.size(); ++i) body(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= specs.size()) return;
          body(i);
        }
      });
    }
    for (auto& th : pool) th.join();
  }
  for (const auto& err : errors) {
    if (err) std::rethrow_exception(err);
  }

  EvalReport report;
  report.scenario = scenario;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    report.rows.push_back(std::move(outputs[i].row));
    if (!outputs[i].curve.empty()) {
      CurveSeries cs;
      cs.method = scenario.methods[specs[i].method_index];
      cs.seed = scenario.seeds[specs[i].seed_index];
      cs.test_task = specs[i].fold;
      cs.points = std::move(outputs[i].curve);
      report.curves.push_back(std::move(cs));
    }
  }
  report.aggregates = aggregate_rows(scenario, report.rows);
  report.concept_shift_summary =
      scenario.shift ? concept_shift_summary(report.rows) : json();
  return report;
}

// ---------------------------------------------------------------------------
// Report serialization
// ---------------------------------------------------------------------------

inline constexpr int kReportFormatVersion = 1;

inline json report_to_json(const EvalReport& rep) {
  json rows = json::array();
  for (const auto& r : rep.rows) {
    rows.push_back(json{{"scenario", r.scenario_id},
                        {"omega", r.omega},
                        {"k", r.k},
                        {"n_omega", r.n_omega},
                        {"method", r.method},
                        {"seed", r.seed},
                        {"test_task", r.test_task},
                        {"dgp_id", r.dgp_id},
                        {"checkpoint_iteration", r.checkpoint_iteration},
                        {"grid_index", r.grid_index},
                        {"ate_estimate", r.ate_estimate},
                        {"ate_truth", r.ate_truth},
                        {"mape", r.mape}});
  }
  json aggs = json::array();
  for (const auto& a : rep.aggregates) {
    json entry{{"method", a.method},
               {"mean_mape", a.mean_mape},
               {"rows", a.rows}};
    if (a.seed) {
      entry["seed"] = *a.seed;
    } else {
      entry["seed"] = nullptr;
    }
    aggs.push_back(entry);
  }
  json curves = json::array();
  for (const auto& c : rep.curves) {
    json pts = json::array();
    for (const auto& p : c.points) {
      pts.push_back(json{{"iteration", p.iteration},
                         {"task_id", p.task_id},
                         {"objective", p.objective}});
    }
    curves.push_back(json{{"method", c.method},
                          {"seed", c.seed},
                          {"test_task", c.test_task},
                          {"points", pts}});
  }
  return json{{"format_version", kReportFormatVersion},
              {"kind", "eval-report"},
              {"scenario", rep.scenario.raw},
              {"rows", rows},
              {"aggregates", aggs},
              {"curves", curves},
              {"concept_shift", rep.concept_shift_summary.is_null()
                                    ? json()
                                    : rep.concept_shift_summary}};
}

inline std::string report_rows_csv(const EvalReport& rep) {
  std::string out =
      "scenario,omega,k,n_omega,method,seed,test_task,dgp_id,"
      "checkpoint_iteration,grid_index,ate_estimate,ate_truth,mape\n";
  for (const auto& r : rep.rows) {
    out += r.scenario_id;
    out += ',' + std::to_string(r.omega) + ',' + std::to_string(r.k) + ',' +
           std::to_string(r.n_omega) + ',' + r.method + ',' + std::to_string(r.seed) + ',' +
           std::to_string(r.test_task) + ',' + r.dgp_id + ',' +
           std::to_string(r.checkpoint_iteration) + ',' + std::to_string(r.grid_index) + ',' +
           format_double(r.ate_estimate) + ',' + format_double(r.ate_truth) + ',' +
           format_double(r.mape) + '\n';
  }
  return out;
}

inline std::string report_summary_csv(const EvalReport& rep) {
  std::string out = "method,seed,mean_mape,rows\n";
  for (const auto& a : rep.aggregates) {
    out += a.method;
    out += ',';
    out += a.seed ? std::to_string(*a.seed) : std::string("all");
    out += ',' + format_double(a.mean_mape) + ',' + std::to_string(a.rows) + '\n';
  }
  return out;
}

inline std::string report_curves_csv(const EvalReport& rep) {
  std::string out = "method,seed,test_task,iteration,task_id,objective\n";
  for (const auto& c : rep.curves) {
    for (const auto& p : c.points) {
      out += c.method + ',' + std::to_string(c.seed) + ',' + std::to_string(c.test_task) +
             ',' + std::to_string(p.iteration) + ',' + std::to_string(p.task_id) + ',' +
             format_double(p.objective) + '\n';
    }
  }
  return out;
}

// json format: <dir>/report.json. csv format: report.csv, summary.csv,
// curves.csv in <dir>.
inline void emit_report(const EvalReport& rep, const std::string& out_dir,
                        const std::string& format) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  if (format == "json") {
    atomic_write_file((fs::path(out_dir) / "report.json").string(),
                      report_to_json(rep).dump(2) + "\n");
  } else if (format == "csv") {
    atomic_write_file((fs::path(out_dir) / "report.csv").string(), report_rows_csv(rep));
    atomic_write_file((fs::path(out_dir) / "summary.csv").string(), report_summary_csv(rep));
    atomic_write_file((fs::path(out_dir) / "curves.csv").string(), report_curves_csv(rep));
  } else {
    throw std::invalid_argument("emit_report: format must be 'csv' or 'json'");
  }
}

inline EvalReport report_from_json(const json& doc) {
  if (!doc.is_object() || doc.value("kind", "") != "eval-report") {
    throw std::runtime_error("report_from_json: not an eval-report document");
  }
  if (doc.value("format_version", -1) != kReportFormatVersion) {
    throw std::runtime_error("report_from_json: unsupported format_version");
  }
  EvalReport rep;
  rep.scenario = parse_scenario(doc.at("scenario"));
  for (const auto& r : doc.at("rows")) {
    EvalRow row;
    row.scenario_id = r.at("scenario").get<std::string>();
    row.omega = r.at("omega").get<std::size_t>();
    row.k = r.at("k").get<std::size_t>();
    row.n_omega = r.at("n_omega").get<std::size_t>();
    row.method = r.at("method").get<std::string>();
    row.seed = r.at("seed").get<std::uint64_t>();
    row.test_task = r.at("test_task").get<std::size_t>();
    row.dgp_id = r.at("dgp_id").get<std::string>();
    row.checkpoint_iteration = r.at("checkpoint_iteration").get<std::uint64_t>();
    row.grid_index = r.at("grid_index").get<std::size_t>();
    row.ate_estimate = r.at("ate_estimate").get<double>();
    row.ate_truth = r.at("ate_truth").get<double>();
    row.mape = r.at("mape").get<double>();
    rep.rows.push_back(std::move(row));
  }
  for (const auto& a : doc.at("aggregates")) {
    AggregateRow agg;
    agg.method = a.at("method").get<std::string>();
    if (!a.at("seed").is_null()) agg.seed = a.at("seed").get<std::uint64_t>();
    agg.mean_mape = a.at("mean_mape").get<double>();
    agg.rows = a.at("rows").get<std::size_t>();
    rep.aggregates.push_back(std::move(agg));
  }
  for (const auto& c : doc.at("curves")) {
    CurveSeries cs;
    cs.method = c.at("method").get<std::string>();
    cs.seed = c.at("seed").get<std::uint64_t>();
    cs.test_task = c.at("test_task").get<std::size_t>();
    for (const auto& p : c.at("points")) {
      cs.points.push_back(CurvePoint{p.at("iteration").get<std::uint64_t>(),
                                     p.at("task_id").get<std::size_t>(),
                                     p.at("objective").get<double>()});
    }
    rep.curves.push_back(std::move(cs));
  }
  if (doc.contains("concept_shift")) rep.concept_shift_summary = doc["concept_shift"];
  return rep;
}

// ---------------------------------------------------------------------------
// Report validation
// ---------------------------------------------------------------------------

// Structural checks over a serialized report; returns human-readable
// problems, empty when the document is sound.
inline std::vector<std::string> validate_report_json(const json& doc) {
  std::vector<std::string> problems;
  auto bad = [&](const std::string& msg) { problems.push_back(msg); };

  if (!doc.is_object()) {
    bad("document is not an object");
    return problems;
  }
  if (doc.value("kind", "") != "eval-report") bad("kind is not 'eval-report'");
  if (doc.value("format_version", -1) != kReportFormatVersion) bad("bad format_version");
  for (const char* key : {"scenario", "rows", "aggregates", "curves"}) {
    if (!doc.contains(key)) bad(std::string("missing key '") + key + "'");
  }
  if (!problems.empty()) return problems;

  Scenario sc;
  try {
    sc = parse_scenario(doc["scenario"]);
  } catch (const std::exception& e) {
    bad(std::string("scenario echo does not parse: ") + e.what());
    return problems;
  }

  const auto& rows = doc["rows"];
  const std::size_t expected = sc.seeds.size() * sc.omega * sc.methods.size();
  if (rows.size() != expected) {
    bad("row count " + std::to_string(rows.size()) + " != seeds*omega*methods = " +
        std::to_string(expected));
  }
  std::set<std::string> method_set(sc.methods.begin(), sc.methods.end());
  std::map<std::string, std::pair<double, std::size_t>> mape_by_method;
  for (const auto& r : rows) {
    for (const char* key : {"method", "seed", "test_task", "mape", "ate_estimate", "ate_truth"}) {
      if (!r.contains(key)) {
        bad(std::string("row missing key '") + key + "'");
        return problems;
      }
    }
    const std::string m = r["method"].get<std::string>();
    if (!method_set.contains(m)) bad("row method '" + m + "' not in scenario methods");
    if (r["test_task"].get<std::size_t>() >= sc.omega) bad("row test_task out of range");
    const double mp = r["mape"].get<double>();
    if (!std::isfinite(mp) || mp < 0.0) bad("row mape not finite and nonnegative");
    if (!std::isfinite(r["ate_truth"].get<double>())) bad("row ate_truth not finite");
    if (!std::isfinite(r["ate_estimate"].get<double>())) bad("row ate_estimate not finite");
    auto& acc = mape_by_method[m];
    acc.first += mp;
    ++acc.second;
  }
  for (const auto& a : doc["aggregates"]) {
    if (!a.contains("method") || !a.contains("mean_mape") || !a.contains("rows")) {
      bad("aggregate row missing keys");
      continue;
    }
    if (a["seed"].is_null()) {
      const std::string m = a["method"].get<std::string>();
      const auto it = mape_by_method.find(m);
      if (it == mape_by_method.end()) continue;
      const double mean = it->second.first / static_cast<double>(it->second.second);
      if (std::abs(mean - a["mean_mape"].get<double>()) > 1e-9) {
        bad("aggregate mean_mape for '" + m + "' disagrees with rows");
      }
    }
  }
  std::set<std::string> curve_methods;
  for (const auto& c : doc["curves"]) {
    if (!c.contains("method") || !c.contains("points")) {
      bad("curve series missing keys");
      continue;
    }
    curve_methods.insert(c["method"].get<std::string>());
    for (const auto& p : c["points"]) {
      if (!p.contains("iteration") || !p.contains("objective")) {
        bad("curve point missing keys");
        break;
      }
      if (!std::isfinite(p["objective"].get<double>())) bad("curve objective not finite");
    }
  }
  for (const auto& m : sc.methods) {
    const Method mm = method_from_string(m);
    if (mm == Method::metaci || mm == Method::ci_omega || mm == Method::metann4) {
      if (!curve_methods.contains(m)) bad("no learning curve for meta method '" + m + "'");
    }
  }
  return problems;
}

}  // namespace metaci
