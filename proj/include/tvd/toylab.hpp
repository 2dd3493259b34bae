#pragma once

// End-to-end toy scenarios: train sources, decompose their task vectors and
// sweep the components over a coefficient grid.

#include <cstdint>
#include <string>
#include <vector>

#include "tvd/decompose.hpp"
#include "tvd/toy.hpp"

namespace tvd::toy {

struct Component {
  std::string name;
  TaskVector delta;
};

struct ScenarioConfig {
  ToyWorld world;
  int hidden = 16;
  int steps = 100;
  double lr = 0.5;
  std::vector<double> grid = default_grid();
  DecomposeOptions decomposition = default_decomposition();

  // Toy deltas are full rank through sampling noise; only the leading
  // directions of each layer carry task structure.
  static DecomposeOptions default_decomposition() {
    DecomposeOptions opt;
    opt.rank_tol = 0.1;
    opt.max_rank = 6;  // shared_latent + unique_latent
    return opt;
  }
};

/// One evaluation task with the sweep of every component on it.
struct TaskSweep {
  std::string task;
  Evaluation base;
  SweepCurve curve;
};

struct ScenarioRun {
  std::uint64_t seed = 0;
  std::vector<Component> components;
  std::vector<TaskSweep> sweeps;
  std::vector<LayerSummary> layers;

  std::size_t component_index(const std::string& name) const {
    for (std::size_t i = 0; i < components.size(); ++i) {
      if (components[i].name == name) return i;
    }
    throw Error(ErrorCode::InvalidArgument, "no component '" + name + "'");
  }
};

namespace detail {

inline ToyModel init_for(const ScenarioConfig& cfg, std::uint64_t seed) {
  const int sizes[] = {cfg.world.features, cfg.hidden, cfg.world.classes};
  return init_model(std::span<const int>(sizes), seed);
}

inline TaskSweep sweep_on(const ToyModel& base, const std::vector<Component>& comps, const ToyTask& task,
                          const ScenarioConfig& cfg) {
  std::vector<TaskVector> deltas;
  for (const Component& c : comps) deltas.push_back(c.delta);
  return TaskSweep{task.name, evaluate(base, task), coefficient_sweep(base, deltas, cfg.grid, task)};
}

inline void add_decomposition(std::vector<Component>& comps, const DecompositionResult& dec,
                              const std::vector<std::string>& names) {
  comps.push_back({"merged_shared", dec.merged_shared});
  for (std::size_t i = 0; i < names.size(); ++i) comps.push_back({"unique." + names[i], dec.unique[i]});
}

}  // namespace detail

/// Two shared-structure sources are fine-tuned from a random base; the base
/// is then edited with each decomposed component and with each full task
/// vector, and evaluated on a held-out target and its corrupted variant.
/// The world is re-drawn per seed.
inline ScenarioRun transfer_scenario(std::uint64_t seed, const ScenarioConfig& cfg = {}) {
  ToyWorld world = cfg.world;
  world.world_seed = cfg.world.world_seed + seed;
  const std::uint64_t task_seed = seed * 1000;
  const ToyTask sources[2] = {make_task(TaskKind::shared_structure, task_seed + 1, world),
                              make_task(TaskKind::shared_structure, task_seed + 2, world)};
  ToyTask target = make_task(TaskKind::target, task_seed + 3, world);
  ToyTask corrupted = make_task(TaskKind::corrupted, task_seed + 3, world);
  target.name = "target";
  corrupted.name = "corrupted";

  const ToyModel base = detail::init_for(cfg, seed);
  std::vector<TaskVector> vectors;
  for (const ToyTask& s : sources) vectors.push_back(task_vector(train(base, s, cfg.steps, cfg.lr), base));

  DecomposeOptions opt = cfg.decomposition;
  opt.seed = seed;
  const DecompositionResult dec = decompose_set(vectors, opt);

  ScenarioRun run;
  run.seed = seed;
  run.layers = dec.layers;
  detail::add_decomposition(run.components, dec, {"source_a", "source_b"});
  run.components.push_back({"task.source_a", vectors[0]});
  run.components.push_back({"task.source_b", vectors[1]});
  run.sweeps.push_back(detail::sweep_on(base, run.components, target, cfg));
  run.sweeps.push_back(detail::sweep_on(base, run.components, corrupted, cfg));
  return run;
}

/// A base trained on a "forget" task and a control task (disjoint unique
/// subspaces, common shared structure). Each task is fine-tuned further; the
/// forget task's vector and its unique component are swept, negative
/// lambdas being the negation edit, on both tasks.
inline ScenarioRun negation_scenario(std::uint64_t seed, const ScenarioConfig& cfg = {}) {
  ToyWorld world = cfg.world;
  world.world_seed = cfg.world.world_seed + seed;
  const std::uint64_t task_seed = seed * 1000;
  ToyTask forget = make_task(TaskKind::shared_structure, task_seed + 11, world);
  ToyTask control = make_task(TaskKind::shared_structure, task_seed + 12, world);
  forget.name = "forget";
  control.name = "control";

  ToyTask mixed = forget;
  mixed.name = "mixed";
  mixed.inputs.conservativeResize(forget.samples() + control.samples(), Eigen::NoChange);
  mixed.inputs.bottomRows(control.samples()) = control.inputs;
  mixed.labels.insert(mixed.labels.end(), control.labels.begin(), control.labels.end());

  const ToyModel pre = train(detail::init_for(cfg, seed), mixed, cfg.steps, cfg.lr);
  const std::vector<TaskVector> vectors = {task_vector(train(pre, forget, cfg.steps, cfg.lr), pre),
                                           task_vector(train(pre, control, cfg.steps, cfg.lr), pre)};
  DecomposeOptions opt = cfg.decomposition;
  opt.seed = seed;
  const DecompositionResult dec = decompose_set(vectors, opt);

  ScenarioRun run;
  run.seed = seed;
  run.layers = dec.layers;
  detail::add_decomposition(run.components, dec, {"forget", "control"});
  run.components.push_back({"task.forget", vectors[0]});
  run.sweeps.push_back(detail::sweep_on(pre, run.components, forget, cfg));
  run.sweeps.push_back(detail::sweep_on(pre, run.components, control, cfg));
  return run;
}

}  // namespace tvd::toy
