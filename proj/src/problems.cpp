#include "funnel/problems.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "funnel/errors.hpp"

namespace funnel {

namespace {

class QuadraticProblem final : public Problem {
 public:
  QuadraticProblem(std::vector<double> a, std::vector<double> b)
      : n_(b.size()), a_(std::move(a)), b_(std::move(b)) {
    if (n_ == 0) throw DimensionError("quadratic: empty b");
    if (a_.size() != n_ * n_) {
      throw DimensionError("quadratic: A must be " + std::to_string(n_) + "x" +
                           std::to_string(n_) + " to match b");
    }
    for (std::size_t i = 0; i < n_; ++i) {
      for (std::size_t j = 0; j < i; ++j) {
        if (a_[i * n_ + j] != a_[j * n_ + i]) throw InputError("quadratic: A is not symmetric");
      }
    }
  }

  std::string name() const override { return "quadratic"; }
  GroupShapes shapes() const override { return {{"w", n_}}; }

  double loss(const ParamGroups& w, const Batch&) const override {
    require_shapes(w, shapes(), "quadratic loss");
    const auto x = w.values(0);
    double total = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
      double ax = 0.0;
      for (std::size_t j = 0; j < n_; ++j) ax += a_[i * n_ + j] * x[j];
      total += 0.5 * x[i] * ax - b_[i] * x[i];
    }
    return total;
  }

  ParamGroups grad(const ParamGroups& w, const Batch&) const override {
    require_shapes(w, shapes(), "quadratic grad");
    const auto x = w.values(0);
    ParamGroups out = ParamGroups::zeros(shapes());
    auto g = out.values(0);
    for (std::size_t i = 0; i < n_; ++i) {
      double ax = 0.0;
      for (std::size_t j = 0; j < n_; ++j) ax += a_[i * n_ + j] * x[j];
      g[i] = ax - b_[i];
    }
    return out;
  }

  ParamGroups initial_params() const override { return ParamGroups::filled(shapes(), 1.0); }

 private:
  std::size_t n_;
  std::vector<double> a_;
  std::vector<double> b_;
};

class RosenbrockProblem final : public Problem {
 public:
  explicit RosenbrockProblem(std::size_t dim) : dim_(dim) {
    if (dim_ < 2) throw DimensionError("rosenbrock: dim must be >= 2");
  }

  std::string name() const override { return "rosenbrock"; }
  GroupShapes shapes() const override { return {{"w", dim_}}; }

  double loss(const ParamGroups& w, const Batch&) const override {
    require_shapes(w, shapes(), "rosenbrock loss");
    const auto x = w.values(0);
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < dim_; ++i) {
      const double r = x[i + 1] - x[i] * x[i];
      const double q = 1.0 - x[i];
      total += 100.0 * r * r + q * q;
    }
    return total;
  }

  ParamGroups grad(const ParamGroups& w, const Batch&) const override {
    require_shapes(w, shapes(), "rosenbrock grad");
    const auto x = w.values(0);
    ParamGroups out = ParamGroups::zeros(shapes());
    auto g = out.values(0);
    for (std::size_t i = 0; i + 1 < dim_; ++i) {
      const double r = x[i + 1] - x[i] * x[i];
      g[i] += -400.0 * x[i] * r - 2.0 * (1.0 - x[i]);
      g[i + 1] += 200.0 * r;
    }
    return out;
  }

  ParamGroups initial_params() const override {
    ParamGroups w = ParamGroups::zeros(shapes());
    auto x = w.values(0);
    for (std::size_t i = 0; i < dim_; ++i) x[i] = (i % 2 == 0) ? -1.2 : 1.0;
    return w;
  }

 private:
  std::size_t dim_;
};

class LogisticRegressionProblem final : public Problem {
 public:
  LogisticRegressionProblem(std::size_t features, std::size_t classes)
      : d_(features), k_(classes) {
    if (d_ < 1) throw DimensionError("logistic regression: need at least one feature");
    if (k_ < 2) throw DimensionError("logistic regression: need at least two classes");
  }

  std::string name() const override { return "logistic_regression"; }
  GroupShapes shapes() const override { return {{"weight", d_ * k_}, {"bias", k_}}; }
  ParamGroups initial_params() const override { return ParamGroups::zeros(shapes()); }
  bool uses_data() const override { return true; }

  double loss(const ParamGroups& w, const Batch& batch) const override {
    check(w, batch);
    std::vector<double> z(k_);
    double total = 0.0;
    for (std::size_t r = 0; r < batch.rows; ++r) {
      logits(w, batch.row(r), z);
      const double lse = log_sum_exp(z);
      total += lse - z[static_cast<std::size_t>(batch.labels[r])];
    }
    return total / static_cast<double>(batch.rows);
  }

  ParamGroups grad(const ParamGroups& w, const Batch& batch) const override {
    return value_and_grad(w, batch).second;
  }

  std::pair<double, ParamGroups> value_and_grad(const ParamGroups& w, const Batch& batch) const override {
    check(w, batch);
    double total = 0.0;
    ParamGroups out = ParamGroups::zeros(shapes());
    auto gw = out.values(0);
    auto gb = out.values(1);
    std::vector<double> z(k_);
    const double inv_n = 1.0 / static_cast<double>(batch.rows);
    for (std::size_t r = 0; r < batch.rows; ++r) {
      const double* x = batch.row(r);
      logits(w, x, z);
      const double lse = log_sum_exp(z);
      const auto label = static_cast<std::size_t>(batch.labels[r]);
      total += lse - z[label];
      for (std::size_t c = 0; c < k_; ++c) {
        z[c] = std::exp(z[c] - lse) * inv_n;
      }
      z[label] -= inv_n;
      for (std::size_t j = 0; j < d_; ++j) {
        const double xj = x[j];
        if (xj == 0.0) continue;
        double* row = gw.data() + j * k_;
        for (std::size_t c = 0; c < k_; ++c) row[c] += xj * z[c];
      }
      for (std::size_t c = 0; c < k_; ++c) gb[c] += z[c];
    }
    return {total * inv_n, std::move(out)};
  }

  std::optional<double> top1(const ParamGroups& w, const Batch& batch) const override {
    check(w, batch);
    std::vector<double> z(k_);
    std::size_t correct = 0;
    for (std::size_t r = 0; r < batch.rows; ++r) {
      logits(w, batch.row(r), z);
      const auto best = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
      if (best == static_cast<std::size_t>(batch.labels[r])) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(batch.rows);
  }

 private:
  void check(const ParamGroups& w, const Batch& batch) const {
    require_shapes(w, shapes(), "logistic regression");
    if (batch.rows == 0) throw InputError("logistic regression: empty batch");
    if (batch.cols != d_) {
      throw DimensionError("logistic regression: batch has " + std::to_string(batch.cols) +
                           " features, model expects " + std::to_string(d_));
    }
    if (batch.labels.size() != batch.rows || batch.features.size() != batch.rows * batch.cols) {
      throw DimensionError("logistic regression: malformed batch");
    }
    for (int y : batch.labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= k_) {
        throw InputError("logistic regression: label " + std::to_string(y) + " out of range [0, " +
                         std::to_string(k_) + ")");
      }
    }
  }

  void logits(const ParamGroups& w, const double* x, std::vector<double>& z) const {
    const auto wv = w.values(0);
    const auto bv = w.values(1);
    std::copy(bv.begin(), bv.end(), z.begin());
    for (std::size_t j = 0; j < d_; ++j) {
      const double xj = x[j];
      if (xj == 0.0) continue;
      const double* row = wv.data() + j * k_;
      for (std::size_t c = 0; c < k_; ++c) z[c] += xj * row[c];
    }
  }

  static double log_sum_exp(const std::vector<double>& z) {
    const double hi = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - hi);
    return hi + std::log(sum);
  }

  std::size_t d_;
  std::size_t k_;
};

}  // namespace

ProblemPtr quadratic_problem(std::vector<double> a, std::vector<double> b) {
  return std::make_shared<QuadraticProblem>(std::move(a), std::move(b));
}

ProblemPtr diagonal_quadratic_problem(std::size_t dim) {
  if (dim < 1) throw DimensionError("quadratic: dim must be >= 1");
  std::vector<double> a(dim * dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) {
    const double frac = dim == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(dim - 1);
    a[i * dim + i] = std::pow(4.0, 1.0 - frac);
  }
  return quadratic_problem(std::move(a), std::vector<double>(dim, 0.0));
}

ProblemPtr rosenbrock_problem(std::size_t dim) { return std::make_shared<RosenbrockProblem>(dim); }

ProblemPtr logistic_regression_problem(std::size_t features, std::size_t classes) {
  return std::make_shared<LogisticRegressionProblem>(features, classes);
}

ParamGroups finite_difference_grad(const Problem& problem, const ParamGroups& w,
                                   const Batch& batch, double h) {
  if (!(h > 0.0)) throw InputError("finite_difference_grad: h must be > 0");
  ParamGroups out = ParamGroups::zeros(w.shapes());
  ParamGroups probe = w;
  for (std::size_t gi = 0; gi < w.size(); ++gi) {
    auto x = probe.values(gi);
    auto g = out.values(gi);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double orig = x[i];
      x[i] = orig + h;
      const double up = problem.loss(probe, batch);
      x[i] = orig - h;
      const double down = problem.loss(probe, batch);
      x[i] = orig;
      g[i] = (up - down) / (2.0 * h);
    }
  }
  return out;
}

double max_relative_error(const ParamGroups& a, const ParamGroups& b) {
  require_shapes(b, a.shapes(), "max_relative_error");
  double scale = 1.0;
  double worst = 0.0;
  for (std::size_t gi = 0; gi < a.size(); ++gi) {
    const auto av = a.values(gi);
    const auto bv = b.values(gi);
    for (std::size_t i = 0; i < av.size(); ++i) {
      scale = std::max({scale, std::abs(av[i]), std::abs(bv[i])});
      worst = std::max(worst, std::abs(av[i] - bv[i]));
    }
  }
  return worst / scale;
}

}  // namespace funnel
