#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "metaci/cinet.hpp"
#include "metaci/tasking.hpp"

namespace metaci {

// ---------------------------------------------------------------------------
// Outer-loop configuration
// ---------------------------------------------------------------------------

struct MetaConfig {
  std::size_t iterations = 1000;      // outer steps (R)
  double eps_phi = 0.1;               // representation-block outer rate
  double eps_head = 0.1;              // hypothesis-block outer rate
  std::size_t checkpoint_every = 100;
  bool decay = true;                  // eps_r = eps * (1 - r/R), r = completed steps
  enum class Order { random, round_robin };
  Order order = Order::random;

  void validate() const {
    if (iterations == 0) throw std::invalid_argument("MetaConfig: iterations must be > 0");
    if (checkpoint_every == 0) {
      throw std::invalid_argument("MetaConfig: checkpoint_every must be > 0");
    }
    for (double e : {eps_phi, eps_head}) {
      if (e < 0.0 || e > 1.0) {
        throw std::invalid_argument("MetaConfig: outer rates must lie in [0, 1]");
      }
    }
  }

  json to_json() const {
    return json{{"iterations", iterations},
                {"eps_phi", eps_phi},
                {"eps_head", eps_head},
                {"checkpoint_every", checkpoint_every},
                {"decay", decay},
                {"order", order == Order::round_robin ? "round_robin" : "random"}};
  }

  static MetaConfig from_json(const json& j) {
    MetaConfig m;
    m.iterations = j.value("iterations", m.iterations);
    m.eps_phi = j.value("eps_phi", m.eps_phi);
    m.eps_head = j.value("eps_head", m.eps_head);
    m.checkpoint_every = j.value("checkpoint_every", m.checkpoint_every);
    m.decay = j.value("decay", m.decay);
    const std::string ord = j.value("order", "random");
    if (ord == "round_robin") {
      m.order = Order::round_robin;
    } else if (ord == "random") {
      m.order = Order::random;
    } else {
      throw std::invalid_argument("MetaConfig: unknown order '" + ord + "'");
    }
    m.validate();
    return m;
  }
};

// ---------------------------------------------------------------------------
// Outer update
// ---------------------------------------------------------------------------

// Interpolation toward the inner result with separate rates per block.
// eps = 1 copies the inner block bit-for-bit; intermediate rates clamp each
// coordinate to the segment between its endpoints so rounding can never
// overshoot either one.
inline NetParams reptile_step(const NetParams& current, const NetParams& inner,
                              double eps_phi, double eps_head) {
  check_same_shape(current, inner, "reptile_step");
  for (double e : {eps_phi, eps_head}) {
    if (e < 0.0 || e > 1.0) {
      throw std::invalid_argument("reptile_step: rates must lie in [0, 1]");
    }
  }
  NetParams out = current;

  auto blend = [](double c, double i, double e) {
    const double v = c + e * (i - c);
    return std::clamp(v, std::min(c, i), std::max(c, i));
  };
  auto step_block = [&](std::vector<DenseLayer>& dst, const std::vector<DenseLayer>& cur,
                        const std::vector<DenseLayer>& inn, double e) {
    if (e == 1.0) {
      dst = inn;
      return;
    }
    if (e == 0.0) return;
    for (std::size_t l = 0; l < dst.size(); ++l) {
      for (std::size_t i = 0; i < dst[l].W.size(); ++i) {
        dst[l].W.data()[i] = blend(cur[l].W.data()[i], inn[l].W.data()[i], e);
      }
      for (std::size_t i = 0; i < dst[l].b.size(); ++i) {
        dst[l].b[i] = blend(cur[l].b[i], inn[l].b[i], e);
      }
    }
  };
  step_block(out.phi, current.phi, inner.phi, eps_phi);
  step_block(out.head, current.head, inner.head, eps_head);
  return out;
}

// ---------------------------------------------------------------------------
// Meta-training
// ---------------------------------------------------------------------------

struct TrainTaskView {
  const Dataset* data = nullptr;
  Split split;
  std::size_t task_id = 0;
};

struct MetaCheckpoint {
  std::uint64_t iteration = 0;  // completed outer steps when taken
  NetParams params;
};

struct CurvePoint {
  std::uint64_t iteration = 0;
  std::size_t task_id = 0;
  double objective = 0.0;  // validation loss on the visited task, post-update
};

struct MetaState {
  std::vector<MetaCheckpoint> checkpoints;
  std::vector<CurvePoint> curve;
  std::size_t skipped_batches = 0;
};

// Substream layout under the meta stream; exposed so callers can reproduce
// any single iteration independently.
inline RngStream meta_init_stream(const RngStream& rng) { return rng.child(0); }
inline RngStream meta_sampler_stream(const RngStream& rng) { return rng.child(1); }
inline RngStream meta_inner_stream(const RngStream& rng, std::uint64_t iteration) {
  return rng.child(2 + iteration);
}

inline double meta_rate_at(const MetaConfig& cfg, double eps0, std::uint64_t completed) {
  if (!cfg.decay) return eps0;
  return eps0 * (1.0 - static_cast<double>(completed) / static_cast<double>(cfg.iterations));
}

// One task per outer step (sampled or round-robin); the inner update runs
// inner_cfg.epochs of SGD from the current initialization, then the outer
// step pulls toward the result. Checkpoints land after every
// checkpoint_every-th step and always at the end.
inline MetaState meta_train(const CIConfig& inner_cfg, const MetaConfig& meta_cfg,
                            const std::vector<TrainTaskView>& tasks, std::size_t input_dim,
                            RngStream rng) {
  inner_cfg.validate();
  meta_cfg.validate();
  if (tasks.empty()) throw std::invalid_argument("meta_train: no tasks");
  for (const auto& tv : tasks) {
    if (tv.data == nullptr) throw std::invalid_argument("meta_train: null task data");
    if (tv.split.train.empty()) throw std::invalid_argument("meta_train: empty train split");
  }

  NetParams params = init_net(inner_cfg, input_dim, meta_init_stream(rng));
  RngStream sampler = meta_sampler_stream(rng);

  MetaState state;
  for (std::uint64_t r = 0; r < meta_cfg.iterations; ++r) {
    const std::size_t ti = meta_cfg.order == MetaConfig::Order::round_robin
                               ? static_cast<std::size_t>(r % tasks.size())
                               : static_cast<std::size_t>(sampler.uniform_below(tasks.size()));
    const TrainTaskView& tv = tasks[ti];

    UpdateResult inner =
        update_operator(params, inner_cfg, *tv.data, tv.split.train, meta_inner_stream(rng, r));
    state.skipped_batches += inner.skipped_batches;

    const double ep = meta_rate_at(meta_cfg, meta_cfg.eps_phi, r);
    const double eh = meta_rate_at(meta_cfg, meta_cfg.eps_head, r);
    params = reptile_step(params, inner.params, ep, eh);

    if (!tv.split.valid.empty()) {
      state.curve.push_back(
          CurvePoint{r + 1, tv.task_id, validation_objective(params, inner_cfg, *tv.data,
                                                             tv.split.valid)});
    }
    if ((r + 1) % meta_cfg.checkpoint_every == 0) {
      state.checkpoints.push_back(MetaCheckpoint{r + 1, params});
    }
  }
  if (state.checkpoints.empty() ||
      state.checkpoints.back().iteration != meta_cfg.iterations) {
    state.checkpoints.push_back(MetaCheckpoint{meta_cfg.iterations, params});
  }
  return state;
}

// ---------------------------------------------------------------------------
// Test-task adaptation and model selection
// ---------------------------------------------------------------------------

inline UpdateResult fine_tune(const NetParams& start, const CIConfig& cfg, const Dataset& data,
                              const std::vector<std::size_t>& train_rows, RngStream rng) {
  return update_operator(start, cfg, data, train_rows, rng);
}

struct SelectionRow {
  std::uint64_t checkpoint_iteration = 0;
  std::size_t checkpoint_index = 0;
  std::size_t grid_index = 0;
  double objective = std::numeric_limits<double>::quiet_NaN();
};

struct SelectionOutcome {
  NetParams best_params;  // fine-tuned winner
  std::size_t checkpoint_index = 0;
  std::uint64_t checkpoint_iteration = 0;
  std::size_t grid_index = 0;
  double best_objective = std::numeric_limits<double>::infinity();
  std::vector<SelectionRow> table;
};

// Fine-tunes every (checkpoint, grid point) pair on the test task's train
// rows and keeps the pair with the lowest validation objective; ties keep the
// earliest pair in (checkpoint, grid) order. Grid entries must describe the
// same architecture the checkpoints were trained with.
inline SelectionOutcome select_best(const std::vector<MetaCheckpoint>& checkpoints,
                                    const std::vector<CIConfig>& grid, const Dataset& data,
                                    const Split& split, RngStream rng) {
  if (checkpoints.empty()) throw std::invalid_argument("select_best: no checkpoints");
  if (grid.empty()) throw std::invalid_argument("select_best: empty hyper grid");
  if (split.train.empty() || split.valid.empty()) {
    throw std::invalid_argument("select_best: need train and valid rows");
  }
  for (const auto& cfg : grid) {
    cfg.validate();
    NetParams probe = init_net(cfg, checkpoints.front().params.input_dim, RngStream(0, 0));
    check_same_shape(probe, checkpoints.front().params, "select_best grid");
  }

  SelectionOutcome out;
  for (std::size_t ci = 0; ci < checkpoints.size(); ++ci) {
    for (std::size_t gi = 0; gi < grid.size(); ++gi) {
      RngStream pair_rng = rng.child(ci * grid.size() + gi);
      UpdateResult ft = fine_tune(checkpoints[ci].params, grid[gi], data, split.train, pair_rng);
      const double obj = validation_objective(ft.params, grid[gi], data, split.valid);
      out.table.push_back(SelectionRow{checkpoints[ci].iteration, ci, gi, obj});
      if (obj < out.best_objective) {
        out.best_objective = obj;
        out.best_params = std::move(ft.params);
        out.checkpoint_index = ci;
        out.checkpoint_iteration = checkpoints[ci].iteration;
        out.grid_index = gi;
      }
    }
  }
  return out;
}

}  // namespace metaci
