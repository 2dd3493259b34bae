#pragma once

// Tiny tanh MLPs trained on synthetic Gaussian-cluster tasks: enough to
// produce real fine-tuning deltas and replay task arithmetic on them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tvd/error.hpp"
#include "tvd/linalg.hpp"
#include "tvd/tensor.hpp"

namespace tvd::toy {

struct ToyTask {
  Matrix inputs;  // samples x features
  std::vector<int> labels;
  int num_classes = 0;
  std::string name;

  Eigen::Index samples() const { return inputs.rows(); }
  Eigen::Index features() const { return inputs.cols(); }

  void validate() const {
    if (features() == 0) throw Error(ErrorCode::InvalidSpec, "task has no features");
    if (num_classes < 2) throw Error(ErrorCode::InvalidSpec, "need at least two classes");
    if (samples() < num_classes) throw Error(ErrorCode::InvalidSpec, "fewer samples than classes");
    if (static_cast<Eigen::Index>(labels.size()) != samples()) throw Error(ErrorCode::InvalidSpec, "label count mismatch");
    for (int y : labels) {
      if (y < 0 || y >= num_classes) throw Error(ErrorCode::InvalidSpec, "label out of range");
    }
    require_finite(inputs, "task inputs");
  }
};

/// Parameters of the synthetic task family. Class c of task t has mean
/// shared_basis * a_c + unique_basis_t * b_{t,c}: the a_c codes and the
/// shared basis come from world_seed and are common to every task, the
/// unique part is drawn per task and kept orthogonal to the shared basis.
struct ToyWorld {
  int features = 32;
  int classes = 8;  // more classes than latent dims, so class means span both bases
  int shared_latent = 3;
  int unique_latent = 3;
  int samples_per_class = 40;
  double shared_strength = 1.5;
  double unique_strength = 1.5;
  double noise = 0.2;
  double corruption_shift = 1.0;
  double corruption_noise = 0.3;
  std::uint64_t world_seed = 2024;
};

enum class TaskKind { shared_structure, target, corrupted };

inline std::string_view to_string(TaskKind k) {
  switch (k) {
    case TaskKind::shared_structure: return "shared-structure";
    case TaskKind::target: return "target";
    case TaskKind::corrupted: return "corrupted";
  }
  return "unknown";
}

namespace detail {

inline Matrix gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
  return m;
}

inline Matrix orthonormal_columns(Eigen::Index n, Eigen::Index k, std::mt19937_64& rng) {
  Eigen::HouseholderQR<Matrix> qr(gaussian(n, k, rng));
  return qr.householderQ() * Matrix::Identity(n, k);
}

// Class codes scaled to a common norm so every class is equally separable.
inline Matrix class_codes(Eigen::Index dim, int classes, double strength, std::mt19937_64& rng) {
  Matrix codes = gaussian(dim, classes, rng);
  for (Eigen::Index c = 0; c < codes.cols(); ++c) codes.col(c) *= strength / codes.col(c).norm();
  return codes;
}

}  // namespace detail

/// Deterministic in (kind, seed, world). Classes are balanced and samples
/// are interleaved by class.
inline ToyTask make_task(TaskKind kind, std::uint64_t seed, const ToyWorld& world = {}) {
  if (world.features < 1 || world.classes < 2 || world.samples_per_class < 1 ||
      world.shared_latent + world.unique_latent > world.features) {
    throw Error(ErrorCode::InvalidSpec, "invalid toy world");
  }
  const Eigen::Index f = world.features;
  std::mt19937_64 world_rng(world.world_seed);
  const Matrix shared = detail::orthonormal_columns(f, world.shared_latent, world_rng);
  const Matrix shared_codes = detail::class_codes(world.shared_latent, world.classes, world.shared_strength, world_rng);

  std::mt19937_64 rng(seed);
  Matrix unique = detail::gaussian(f, world.unique_latent, rng);
  unique -= shared * (shared.transpose() * unique);
  unique = Eigen::HouseholderQR<Matrix>(unique).householderQ() * Matrix::Identity(f, world.unique_latent);
  const Matrix unique_codes = detail::class_codes(world.unique_latent, world.classes, world.unique_strength, rng);
  const Matrix means = shared * shared_codes + unique * unique_codes;  // f x classes

  ToyTask task;
  task.num_classes = world.classes;
  task.name = std::string(to_string(kind)) + "-" + std::to_string(seed);
  const Eigen::Index n = static_cast<Eigen::Index>(world.samples_per_class) * world.classes;
  task.inputs = world.noise * detail::gaussian(n, f, rng);
  task.labels.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % world.classes);
    task.labels[static_cast<std::size_t>(i)] = c;
    task.inputs.row(i) += means.col(c).transpose();
  }

  if (kind == TaskKind::corrupted) {
    // Fixed perturbation, independent of the task seed.
    std::mt19937_64 corrupt_rng(world.world_seed ^ 0x9e3779b97f4a7c15ULL);
    Vector shift = detail::gaussian(f, 1, corrupt_rng).col(0);
    shift *= world.corruption_shift / shift.norm();
    const Matrix jitter = world.corruption_noise * detail::gaussian(n, f, corrupt_rng);
    task.inputs = (task.inputs + jitter).rowwise() + shift.transpose();
  }
  task.validate();
  return task;
}

/// Weight is stored inputs x outputs (activations are row vectors, h' = h W + b),
/// so a weight delta's column space lives in the layer's input space.
struct DenseLayer {
  Matrix weight;
  Vector bias;
};

struct ToyModel {
  std::vector<DenseLayer> layers;

  Eigen::Index input_dim() const { return layers.front().weight.rows(); }
  Eigen::Index output_dim() const { return layers.back().weight.cols(); }
};

/// Random init: weights N(0, 1/fan_in), zero biases.
inline ToyModel init_model(std::span<const int> sizes, std::uint64_t seed) {
  if (sizes.size() < 2) throw Error(ErrorCode::ArchitectureMismatch, "need at least input and output sizes");
  for (int s : sizes) {
    if (s < 1) throw Error(ErrorCode::ArchitectureMismatch, "layer sizes must be positive");
  }
  std::mt19937_64 rng(seed);
  ToyModel m;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    DenseLayer layer{detail::gaussian(sizes[i], sizes[i + 1], rng) / std::sqrt(static_cast<double>(sizes[i])),
                     Vector::Zero(sizes[i + 1])};
    m.layers.push_back(std::move(layer));
  }
  return m;
}

inline ToyModel init_model(std::initializer_list<int> sizes, std::uint64_t seed) {
  return init_model(std::span<const int>(sizes.begin(), sizes.size()), seed);
}

inline std::string weight_name(std::size_t i) { return "layer" + std::to_string(i) + ".weight"; }
inline std::string bias_name(std::size_t i) { return "layer" + std::to_string(i) + ".bias"; }

inline TaskVector to_task_vector(const ToyModel& m) {
  TaskVector out;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    out.emplace(weight_name(i), Tensor::from_matrix(m.layers[i].weight));
    const Vector& b = m.layers[i].bias;
    out.emplace(bias_name(i), Tensor({static_cast<std::uint64_t>(b.size())}, std::vector<double>(b.data(), b.data() + b.size())));
  }
  return out;
}

/// Rebuilds a model with the architecture of `like` from named parameters.
inline ToyModel from_task_vector(const TaskVector& params, const ToyModel& like) {
  if (params.size() != 2 * like.layers.size()) throw Error(ErrorCode::ArchitectureMismatch, "parameter count differs");
  ToyModel out = like;
  for (std::size_t i = 0; i < like.layers.size(); ++i) {
    auto w = params.find(weight_name(i));
    auto b = params.find(bias_name(i));
    if (w == params.end() || b == params.end()) throw Error(ErrorCode::ArchitectureMismatch, "missing layer " + std::to_string(i));
    const DenseLayer& ref = like.layers[i];
    if (w->second.shape != Shape{static_cast<std::uint64_t>(ref.weight.rows()), static_cast<std::uint64_t>(ref.weight.cols())} ||
        b->second.shape != Shape{static_cast<std::uint64_t>(ref.bias.size())}) {
      throw Error(ErrorCode::ArchitectureMismatch, "layer " + std::to_string(i) + " shape differs");
    }
    out.layers[i].weight = w->second.as_matrix();
    out.layers[i].bias = Eigen::Map<const Vector>(b->second.values.data(), ref.bias.size());
  }
  return out;
}

inline void check_same_architecture(const ToyModel& a, const ToyModel& b) {
  if (a.layers.size() != b.layers.size()) throw Error(ErrorCode::ArchitectureMismatch, "layer counts differ");
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    if (a.layers[i].weight.rows() != b.layers[i].weight.rows() || a.layers[i].weight.cols() != b.layers[i].weight.cols() ||
        a.layers[i].bias.size() != b.layers[i].bias.size()) {
      throw Error(ErrorCode::ArchitectureMismatch, "layer " + std::to_string(i) + " shapes differ");
    }
  }
}

/// Per-layer difference ft - pre. Biases are included; the decomposition
/// passes them through as undecomposed.
inline TaskVector task_vector(const ToyModel& ft, const ToyModel& pre) {
  check_same_architecture(ft, pre);
  return difference(to_task_vector(ft), to_task_vector(pre));
}

struct ModelEditTerm {
  const TaskVector* component = nullptr;
  double lambda = 0.0;
};

inline ToyModel apply_edit(const ToyModel& base, std::span<const ModelEditTerm> recipe) {
  EditRecipe generic;
  for (const ModelEditTerm& t : recipe) generic.push_back(EditTerm{t.component, t.lambda});
  return from_task_vector(tvd::apply_edit(to_task_vector(base), generic), base);
}

inline ToyModel apply_edit(const ToyModel& base, std::initializer_list<ModelEditTerm> recipe) {
  return apply_edit(base, std::span<const ModelEditTerm>(recipe.begin(), recipe.size()));
}

namespace detail {

struct ForwardPass {
  std::vector<Matrix> activations;  // activations[0] = inputs, back() = logits
};

inline ForwardPass forward(const ToyModel& m, const Matrix& x) {
  ForwardPass pass;
  pass.activations.push_back(x);
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    Matrix z = (pass.activations.back() * m.layers[i].weight).rowwise() + m.layers[i].bias.transpose();
    if (i + 1 < m.layers.size()) z = z.array().tanh().matrix();
    pass.activations.push_back(std::move(z));
  }
  return pass;
}

// Row-wise softmax probabilities and mean cross-entropy.
inline std::pair<Matrix, double> softmax_loss(const Matrix& logits, std::span<const int> labels) {
  Matrix probs(logits.rows(), logits.cols());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double top = logits.row(i).maxCoeff();
    const Eigen::ArrayXd e = (logits.row(i).array() - top).exp().transpose();
    const double sum = e.sum();
    probs.row(i) = (e / sum).transpose();
    loss += std::log(sum) + top - logits(i, labels[static_cast<std::size_t>(i)]);
  }
  return {probs, loss / static_cast<double>(logits.rows())};
}

inline void check_input(const ToyModel& m, const ToyTask& task) {
  if (task.features() != m.input_dim()) {
    throw Error(ErrorCode::DimensionMismatch, "task has " + std::to_string(task.features()) + " features, model expects " +
                                                  std::to_string(m.input_dim()));
  }
  if (task.num_classes != m.output_dim()) throw Error(ErrorCode::DimensionMismatch, "class count differs from model outputs");
}

}  // namespace detail

/// Mean softmax cross-entropy of the model on the task.
inline double loss(const ToyModel& m, const ToyTask& task) {
  detail::check_input(m, task);
  return detail::softmax_loss(detail::forward(m, task.inputs).activations.back(), task.labels).second;
}

/// Analytic gradient of the mean cross-entropy, shaped like the model.
inline ToyModel gradient(const ToyModel& m, const ToyTask& task, double* loss_out = nullptr) {
  detail::check_input(m, task);
  const detail::ForwardPass pass = detail::forward(m, task.inputs);
  auto [probs, value] = detail::softmax_loss(pass.activations.back(), task.labels);
  if (loss_out != nullptr) *loss_out = value;

  Matrix delta = std::move(probs);
  for (std::size_t i = 0; i < task.labels.size(); ++i) delta(static_cast<Eigen::Index>(i), task.labels[i]) -= 1.0;
  delta /= static_cast<double>(task.samples());

  ToyModel grad = m;
  for (std::size_t l = m.layers.size(); l-- > 0;) {
    const Matrix& in = pass.activations[l];
    grad.layers[l].weight = in.transpose() * delta;
    grad.layers[l].bias = delta.colwise().sum().transpose();
    if (l > 0) {
      delta = ((delta * m.layers[l].weight.transpose()).array() * (1.0 - in.array().square())).matrix();
    }
  }
  return grad;
}

/// Full-batch gradient descent on softmax cross-entropy.
inline ToyModel train(const ToyModel& init, const ToyTask& task, int steps, double lr) {
  if (!(lr > 0.0)) throw Error(ErrorCode::InvalidArgument, "learning rate must be positive");
  if (steps < 1) throw Error(ErrorCode::InvalidArgument, "need at least one step");
  task.validate();
  ToyModel m = init;
  for (int step = 0; step < steps; ++step) {
    double value = 0.0;
    const ToyModel g = gradient(m, task, &value);
    if (!std::isfinite(value)) {
      throw Error(ErrorCode::DivergedTraining, "non-finite loss at step " + std::to_string(step));
    }
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
      m.layers[l].weight -= lr * g.layers[l].weight;
      m.layers[l].bias -= lr * g.layers[l].bias;
    }
  }
  return m;
}

/// Max over parameters of |analytic - numeric| / max(|analytic|, |numeric|, floor),
/// numeric being the central difference with step eps. Its roundoff is about
/// 1e-16 * loss / eps, so gradients below the floor are judged by absolute error.
inline double gradient_check(ToyModel m, const ToyTask& task, double eps = 1e-5, double floor = 1e-5) {
  const ToyModel g = gradient(m, task);
  double worst = 0.0;
  auto check = [&](double& param, double analytic) {
    const double saved = param;
    param = saved + eps;
    const double up = loss(m, task);
    param = saved - eps;
    const double down = loss(m, task);
    param = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
    worst = std::max(worst, std::abs(analytic - numeric) / scale);
  };
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    for (Eigen::Index i = 0; i < m.layers[l].weight.size(); ++i) check(m.layers[l].weight.data()[i], g.layers[l].weight.data()[i]);
    for (Eigen::Index i = 0; i < m.layers[l].bias.size(); ++i) check(m.layers[l].bias(i), g.layers[l].bias(i));
  }
  return worst;
}

struct Evaluation {
  double accuracy = 0.0;
  double loss = 0.0;
};

/// Argmax accuracy (ties go to the lowest class index) and mean cross-entropy.
inline Evaluation evaluate(const ToyModel& m, const ToyTask& task) {
  detail::check_input(m, task);
  const Matrix logits = detail::forward(m, task.inputs).activations.back();
  Evaluation ev;
  ev.loss = detail::softmax_loss(logits, task.labels).second;
  Eigen::Index correct = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < logits.cols(); ++c) {
      if (logits(i, c) > logits(i, best)) best = c;
    }
    if (best == task.labels[static_cast<std::size_t>(i)]) ++correct;
  }
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(logits.rows());
  return ev;
}

/// lambda in {-2, -1.75, ..., 2}.
inline std::vector<double> default_grid() {
  std::vector<double> grid;
  for (int i = -8; i <= 8; ++i) grid.push_back(0.25 * i);
  return grid;
}

struct CurvePoint {
  std::size_t component = 0;
  double lambda = 0.0;
  double accuracy = 0.0;
  double loss = 0.0;
};

struct SweepCurve {
  std::vector<CurvePoint> points;  // component-major, grid order within a component

  /// Highest accuracy reached by one component; the earliest grid point wins ties.
  CurvePoint best(std::size_t component) const {
    const CurvePoint* top = nullptr;
    for (const CurvePoint& p : points) {
      if (p.component == component && (top == nullptr || p.accuracy > top->accuracy)) top = &p;
    }
    if (top == nullptr) throw Error(ErrorCode::InvalidArgument, "component not in sweep");
    return *top;
  }
};

/// Evaluates base + lambda * component for every component and grid point.
inline SweepCurve coefficient_sweep(const ToyModel& base, std::span<const TaskVector> components,
                                    std::span<const double> grid, const ToyTask& task) {
  if (grid.empty()) throw Error(ErrorCode::InvalidArgument, "empty coefficient grid");
  SweepCurve curve;
  for (std::size_t c = 0; c < components.size(); ++c) {
    for (double lambda : grid) {
      const ModelEditTerm term{&components[c], lambda};
      const Evaluation ev = evaluate(apply_edit(base, std::span<const ModelEditTerm>(&term, 1)), task);
      curve.points.push_back(CurvePoint{c, lambda, ev.accuracy, ev.loss});
    }
  }
  return curve;
}

}  // namespace tvd::toy
