#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "funnel/params.hpp"

namespace funnel {

// Row-major [rows x cols] features plus optional class labels. Pure test
// functions take an empty batch.
struct Batch {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> features;
  std::vector<int> labels;

  [[nodiscard]] const double* row(std::size_t r) const { return features.data() + r * cols; }
  [[nodiscard]] bool empty() const { return rows == 0; }
};

// A differentiable objective over named parameter groups. Implementations are
// immutable after construction and safe to evaluate concurrently.
class Problem {
 public:
  virtual ~Problem() = default;

  [[nodiscard]] virtual std::string name() const = 0;
  [[nodiscard]] virtual GroupShapes shapes() const = 0;
  [[nodiscard]] virtual double loss(const ParamGroups& w, const Batch& batch) const = 0;
  [[nodiscard]] virtual ParamGroups grad(const ParamGroups& w, const Batch& batch) const = 0;
  [[nodiscard]] virtual ParamGroups initial_params() const = 0;

  // Loss and gradient in one pass; the default calls loss() and grad().
  [[nodiscard]] virtual std::pair<double, ParamGroups> value_and_grad(const ParamGroups& w,
                                                                      const Batch& batch) const {
    return {loss(w, batch), grad(w, batch)};
  }

  // Top-1 accuracy on the batch, for classification problems only.
  [[nodiscard]] virtual std::optional<double> top1(const ParamGroups& /*w*/,
                                                   const Batch& /*batch*/) const {
    return std::nullopt;
  }
  // Whether loss/grad read the batch at all.
  [[nodiscard]] virtual bool uses_data() const { return false; }
};

using ProblemPtr = std::shared_ptr<const Problem>;

// 1/2 w'Aw - b'w for a symmetric [n x n] row-major A. Starts from all ones.
ProblemPtr quadratic_problem(std::vector<double> a, std::vector<double> b);
// Diagonal quadratic with eigenvalues spaced geometrically from 4 down to 1;
// dim = 2 gives diag(4, 1).
ProblemPtr diagonal_quadratic_problem(std::size_t dim);
// Chained Rosenbrock, starting from (-1.2, 1, -1.2, 1, ...).
ProblemPtr rosenbrock_problem(std::size_t dim);
// Softmax regression with groups "weight" [features x classes] and "bias"
// [classes]; mean cross-entropy over the batch. Starts from zero.
ProblemPtr logistic_regression_problem(std::size_t features, std::size_t classes);

// Central differences (L(w + h e_i) - L(w - h e_i)) / 2h per coordinate.
ParamGroups finite_difference_grad(const Problem& problem, const ParamGroups& w,
                                   const Batch& batch, double h = 1e-6);

// max_i |a_i - b_i| / max(1, |a|_inf, |b|_inf) over all groups.
double max_relative_error(const ParamGroups& a, const ParamGroups& b);

}  // namespace funnel
