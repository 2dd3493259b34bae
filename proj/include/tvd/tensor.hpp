#pragma once

// Named dense tensors and task vectors (per-layer weight deltas).

#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "tvd/error.hpp"
#include "tvd/linalg.hpp"

namespace tvd {

using Shape = std::vector<std::uint64_t>;

inline std::uint64_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::uint64_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

/// Row-major f64 tensor of any rank (rank 0 is a scalar).
struct Tensor {
  Shape shape;
  std::vector<double> values;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
    if (element_count(shape) != values.size()) {
      throw Error(ErrorCode::DimensionMismatch,
                  "tensor shape " + shape_string(shape) + " needs " + std::to_string(element_count(shape)) +
                      " values, got " + std::to_string(values.size()));
    }
  }

  static Tensor zeros(const Shape& s) { return Tensor(s, std::vector<double>(element_count(s), 0.0)); }

  static Tensor from_matrix(const Matrix& m) {
    return Tensor({static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())},
                  row_major_entries(m));
  }

  /// Tensors of rank >= 2 take part in the subspace decomposition.
  bool decomposable() const { return shape.size() >= 2; }

  /// Flattens to (shape[0]) x (product of the remaining dims).
  Matrix as_matrix() const {
    if (!decomposable()) throw Error(ErrorCode::DimensionMismatch, "tensor of rank < 2 has no matrix view");
    const auto rows = static_cast<Eigen::Index>(shape[0]);
    const auto cols = static_cast<Eigen::Index>(values.size() / shape[0]);
    return Eigen::Map<const RowMajorMatrix>(values.data(), rows, cols);
  }

  /// Inverse of as_matrix for a matrix of the flattened shape.
  Tensor with_matrix(const Matrix& m) const {
    if (static_cast<std::uint64_t>(m.size()) != values.size() || static_cast<std::uint64_t>(m.rows()) != shape[0]) {
      throw Error(ErrorCode::DimensionMismatch, "matrix does not match tensor shape " + shape_string(shape));
    }
    return Tensor(shape, row_major_entries(m));
  }

  bool operator==(const Tensor&) const = default;
};

/// Layer name -> delta tensor. Ordered map so every traversal is deterministic.
using TaskVector = std::map<std::string, Tensor>;

inline TaskVector zeros_like(const TaskVector& v) {
  TaskVector out;
  for (const auto& [name, t] : v) out.emplace(name, Tensor::zeros(t.shape));
  return out;
}

/// One term of an edit: base += lambda * component.
struct EditTerm {
  const TaskVector* component = nullptr;
  double lambda = 0.0;
};

using EditRecipe = std::vector<EditTerm>;

/// base + sum_t lambda_t * component_t. Terms with lambda == 0 are skipped,
/// so a recipe of zero coefficients returns the base bitwise.
inline TaskVector apply_edit(const TaskVector& base, const EditRecipe& recipe) {
  TaskVector out = base;
  for (const EditTerm& term : recipe) {
    if (term.component == nullptr) throw Error(ErrorCode::InvalidArgument, "edit term without a component");
    for (const auto& [name, delta] : *term.component) {
      auto it = out.find(name);
      if (it == out.end()) throw Error(ErrorCode::ArchitectureMismatch, "component layer '" + name + "' not in base");
      if (it->second.shape != delta.shape) {
        throw Error(ErrorCode::ArchitectureMismatch, "layer '" + name + "' shape " + shape_string(delta.shape) +
                                                         " vs base " + shape_string(it->second.shape));
      }
    }
    if (term.lambda == 0.0) continue;
    for (const auto& [name, delta] : *term.component) {
      auto& dst = out.at(name).values;
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += term.lambda * delta.values[i];
    }
  }
  return out;
}

/// Elementwise a - b over identical layer sets.
inline TaskVector difference(const TaskVector& a, const TaskVector& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::ArchitectureMismatch, "layer counts differ");
  TaskVector out;
  for (const auto& [name, ta] : a) {
    auto it = b.find(name);
    if (it == b.end()) throw Error(ErrorCode::ArchitectureMismatch, "layer '" + name + "' missing");
    if (it->second.shape != ta.shape) throw Error(ErrorCode::ArchitectureMismatch, "layer '" + name + "' shape differs");
    std::vector<double> v(ta.values.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = ta.values[i] - it->second.values[i];
    out.emplace(name, Tensor(ta.shape, std::move(v)));
  }
  return out;
}

}  // namespace tvd
