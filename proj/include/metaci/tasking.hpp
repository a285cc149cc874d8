#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "metaci/dgp.hpp"
#include "metaci/rng.hpp"

namespace metaci {

// ---------------------------------------------------------------------------
// Chunking
// ---------------------------------------------------------------------------

// How rows are ordered before quantile chunking: either one confounding
// feature directly, or the equal-weight sum over the confounding block
// (first five columns) as a one-dimensional proxy.
struct ChunkScheme {
  enum class Kind { single_feature, joint_proxy };
  Kind kind = Kind::single_feature;
  std::size_t feature_index = 0;

  std::string describe() const {
    if (kind == Kind::joint_proxy) return "joint";
    return "single:" + std::to_string(feature_index);
  }

  json to_json() const {
    json j;
    j["kind"] = kind == Kind::joint_proxy ? "joint" : "single";
    if (kind == Kind::single_feature) j["feature"] = feature_index;
    return j;
  }

  static ChunkScheme from_json(const json& j) {
    ChunkScheme s;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "joint") {
      s.kind = Kind::joint_proxy;
    } else if (kind == "single") {
      s.kind = Kind::single_feature;
      s.feature_index = j.value("feature", 0);
    } else {
      throw std::invalid_argument("ChunkScheme: unknown kind '" + kind + "'");
    }
    return s;
  }
};

struct ChunkAssignment {
  std::vector<std::size_t> chunk_of;              // per population row
  std::vector<std::vector<std::size_t>> members;  // per chunk, ascending score order
};

// Equal-frequency chunks over the scheme's score, ties broken by row index so
// the assignment is a pure function of (dataset, scheme). The first
// N mod omega chunks absorb the remainder rows.
inline ChunkAssignment chunk_population(const Dataset& ds, std::size_t omega,
                                        const ChunkScheme& scheme) {
  const std::size_t n = ds.n();
  if (omega < 2) throw std::invalid_argument("chunk_population: omega must be >= 2");
  if (n < omega) throw std::invalid_argument("chunk_population: fewer rows than chunks");
  if (scheme.kind == ChunkScheme::Kind::single_feature && scheme.feature_index >= ds.p()) {
    throw std::invalid_argument("chunk_population: feature_index out of range");
  }

  std::vector<double> score(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (scheme.kind == ChunkScheme::Kind::single_feature) {
      score[i] = ds.X(i, scheme.feature_index);
    } else {
      const std::size_t block = std::min<std::size_t>(5, ds.p());
      double s = 0.0;
      for (std::size_t j = 0; j < block; ++j) s += ds.X(i, j);
      score[i] = s;
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });

  ChunkAssignment asg;
  asg.chunk_of.resize(n);
  asg.members.resize(omega);
  const std::size_t base = n / omega;
  const std::size_t extra = n % omega;
  std::size_t pos = 0;
  for (std::size_t c = 0; c < omega; ++c) {
    const std::size_t size = base + (c < extra ? 1 : 0);
    for (std::size_t s = 0; s < size; ++s, ++pos) {
      asg.chunk_of[order[pos]] = c;
      asg.members[c].push_back(order[pos]);
    }
  }
  return asg;
}

// ---------------------------------------------------------------------------
// Tasks
// ---------------------------------------------------------------------------

struct TaskProvenance {
  std::size_t own_chunk = 0;
  std::vector<std::size_t> donor_chunks;
  std::size_t own_count = 0;         // includes the refill remainder
  std::size_t donor_count_each = 0;
  std::vector<std::size_t> rows;     // population row ids, own block first
  std::string dgp_id;
};

struct Task {
  std::size_t id = 0;
  Dataset data;                    // rows copied out of the population
  std::vector<std::size_t> perm;   // fixed local shuffle that splits read from
  TaskProvenance prov;
};

struct Split {
  std::vector<std::size_t> train, valid, test;  // local row indices
};

namespace detail {
inline Split split_from_perm(const Task& task, std::size_t n_train, std::size_t n_valid,
                             std::size_t n_test) {
  Split sp;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n_train; ++i) sp.train.push_back(task.perm[pos++]);
  for (std::size_t i = 0; i < n_valid; ++i) sp.valid.push_back(task.perm[pos++]);
  for (std::size_t i = 0; i < n_test; ++i) sp.test.push_back(task.perm[pos++]);
  return sp;
}
}  // namespace detail

// 1:1 train/validation; an odd row goes to train.
inline Split train_role_split(const Task& task) {
  const std::size_t n = task.data.n();
  const std::size_t n_train = (n + 1) / 2;
  return detail::split_from_perm(task, n_train, n - n_train, 0);
}

// 2:1:1 train/validation/test; remainder rows go to train (501 -> 251/125/125).
inline Split test_role_split(const Task& task) {
  const std::size_t n = task.data.n();
  const std::size_t n_valid = n / 4;
  const std::size_t n_test = n / 4;
  return detail::split_from_perm(task, n - n_valid - n_test, n_valid, n_test);
}

// ---------------------------------------------------------------------------
// TaskSet
// ---------------------------------------------------------------------------

struct TaskSet {
  std::size_t omega = 0;
  std::size_t k = 0;
  ChunkScheme scheme;
  std::size_t n_omega = 0;
  std::vector<std::size_t> chunk_sizes;
  std::vector<std::size_t> chunk_map;  // chunk -> family index; empty without shift
  std::vector<Task> tasks;

  json manifest() const {
    json m;
    m["omega"] = omega;
    m["k"] = k;
    m["scheme"] = scheme.to_json();
    m["n_omega"] = n_omega;
    m["chunk_sizes"] = chunk_sizes;
    if (chunk_map.empty()) {
      m["concept_shift"] = nullptr;
    } else {
      m["concept_shift"] = json{{"chunk_map", chunk_map}};
    }
    json arr = json::array();
    for (const auto& t : tasks) {
      arr.push_back(json{{"task_id", t.id},
                         {"own_chunk", t.prov.own_chunk},
                         {"donor_chunks", t.prov.donor_chunks},
                         {"own_count", t.prov.own_count},
                         {"donor_count_each", t.prov.donor_count_each},
                         {"dgp_id", t.prov.dgp_id},
                         {"rows", t.prov.rows}});
    }
    m["tasks"] = arr;
    return m;
  }
};

namespace detail {

// Without-replacement draw: shuffle a scratch copy, take a prefix.
inline std::vector<std::size_t> draw_rows(const std::vector<std::size_t>& pool,
                                          std::size_t count, RngStream& rng) {
  if (count > pool.size()) {
    throw std::logic_error("draw_rows: chunk too small for requested draw");
  }
  std::vector<std::size_t> scratch = pool;
  rng.shuffle(scratch);
  scratch.resize(count);
  return scratch;
}

}  // namespace detail

// Builds |Ω| tasks of n_omega = floor(N/Ω) rows each. Task w owns chunk w and
// draws floor(0.6 n) rows from it, floor(0.4 n / k) from each of the k
// cyclically following chunks, and refills the rounding remainder from its own
// chunk, all without replacement inside a task. Under a chunk_map the task's
// outcomes (y, mu0, mu1) are regenerated by the family member its own chunk is
// mapped to; X and t always stay as sampled from the population.
inline TaskSet build_taskset(const Dataset& population, std::size_t omega, std::size_t k,
                             const ChunkScheme& scheme, RngStream rng,
                             const std::vector<DgpHandle>* family = nullptr,
                             const std::vector<std::size_t>* chunk_map = nullptr) {
  validate_dataset(population);
  if (omega < 2) throw std::invalid_argument("build_taskset: omega must be >= 2");
  if (k < 1 || k > omega - 1) {
    throw std::invalid_argument("build_taskset: k must lie in [1, omega-1]");
  }
  const std::size_t n = population.n() / omega;
  if (n < 20) throw std::invalid_argument("build_taskset: task size below 20 rows");
  if ((chunk_map != nullptr) != (family != nullptr)) {
    throw std::invalid_argument("build_taskset: chunk_map and family go together");
  }
  if (chunk_map) {
    if (chunk_map->size() != omega) {
      throw std::invalid_argument("build_taskset: chunk_map length must equal omega");
    }
    for (std::size_t d : *chunk_map) {
      if (d >= family->size()) {
        throw std::invalid_argument("build_taskset: chunk_map entry out of family range");
      }
    }
  }

  const ChunkAssignment asg = chunk_population(population, omega, scheme);

  TaskSet ts;
  ts.omega = omega;
  ts.k = k;
  ts.scheme = scheme;
  ts.n_omega = n;
  ts.chunk_sizes.reserve(omega);
  for (const auto& m : asg.members) ts.chunk_sizes.push_back(m.size());
  if (chunk_map) ts.chunk_map = *chunk_map;

  const std::size_t own_quota = (n * 6) / 10;
  const std::size_t donor_quota = (n * 4) / 10 / k;
  const std::size_t remainder = n - own_quota - k * donor_quota;

  for (std::size_t w = 0; w < omega; ++w) {
    RngStream samp = rng.child(2 * w);
    RngStream outc = rng.child(2 * w + 1);

    Task task;
    task.id = w;
    task.prov.own_chunk = w;
    task.prov.own_count = own_quota + remainder;
    task.prov.donor_count_each = donor_quota;

    task.prov.rows = detail::draw_rows(asg.members[w], own_quota + remainder, samp);
    for (std::size_t d = 1; d <= k; ++d) {
      const std::size_t donor = (w + d) % omega;
      task.prov.donor_chunks.push_back(donor);
      auto drawn = detail::draw_rows(asg.members[donor], donor_quota, samp);
      task.prov.rows.insert(task.prov.rows.end(), drawn.begin(), drawn.end());
    }

    task.data.X = Matrix(n, population.p());
    task.data.t.resize(n);
    task.data.y.resize(n);
    const bool gt = population.has_ground_truth();
    if (gt) {
      task.data.mu0.resize(n);
      task.data.mu1.resize(n);
    }
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t src = task.prov.rows[i];
      for (std::size_t j = 0; j < population.p(); ++j) task.data.X(i, j) = population.X(src, j);
      task.data.t[i] = population.t[src];
      task.data.y[i] = population.y[src];
      if (gt) {
        task.data.mu0[i] = population.mu0[src];
        task.data.mu1[i] = population.mu1[src];
      }
    }
    task.data.meta = population.meta;

    if (chunk_map) {
      const DgpHandle& h = (*family)[(*chunk_map)[w]];
      Outcomes oc = outcomes_for(h, task.data.X, task.data.t, outc);
      task.data.y = std::move(oc.y);
      task.data.mu0 = std::move(oc.mu0);
      task.data.mu1 = std::move(oc.mu1);
      task.data.meta.dgp_id = h.id;
      task.prov.dgp_id = h.id;
    } else {
      task.prov.dgp_id = population.meta.dgp_id;
    }

    task.perm.resize(n);
    std::iota(task.perm.begin(), task.perm.end(), 0);
    samp.shuffle(task.perm);

    ts.tasks.push_back(std::move(task));
  }
  return ts;
}

// ---------------------------------------------------------------------------
// Leave-one-task-out folds
// ---------------------------------------------------------------------------

struct LooFold {
  std::size_t test_task_id = 0;
  std::vector<std::size_t> train_task_ids;
};

inline std::vector<LooFold> leave_one_out(const TaskSet& ts) {
  std::vector<LooFold> folds;
  for (std::size_t w = 0; w < ts.tasks.size(); ++w) {
    LooFold f;
    f.test_task_id = w;
    for (std::size_t v = 0; v < ts.tasks.size(); ++v) {
      if (v != w) f.train_task_ids.push_back(v);
    }
    folds.push_back(std::move(f));
  }
  return folds;
}

}  // namespace metaci
