#pragma once

#include <span>
#include <vector>

namespace funnel {

// Elementwise nonnegative, finite vector.
class NonNegVector {
 public:
  NonNegVector() = default;
  // Throws InputError on a negative or non-finite element.
  explicit NonNegVector(std::vector<double> values);
  static NonNegVector ones(std::size_t n) { return NonNegVector(std::vector<double>(n, 1.0)); }

  [[nodiscard]] std::size_t size() const { return values_.size(); }
  [[nodiscard]] double operator[](std::size_t i) const { return values_[i]; }
  [[nodiscard]] std::span<const double> values() const { return values_; }
  [[nodiscard]] const std::vector<double>& vector() const { return values_; }

 private:
  std::vector<double> values_;
};

struct ExponentClamp {
  double max_abs_exponent = 50.0;

  [[nodiscard]] double apply(double exponent) const;
};

// theta * exp(clamp(-eta * grad)). Outputs for strictly positive inputs are
// floored at the smallest normal double so positivity survives underflow.
NonNegVector egu_update(const NonNegVector& theta, std::span<const double> grad, double eta,
                        ExponentClamp clamp = {});

// The log-parameter variant theta * exp(-eta * theta * grad).
NonNegVector incorrect_egu_update(const NonNegVector& theta, std::span<const double> grad,
                                  double eta, ExponentClamp clamp = {});

// Unnormalized relative entropy sum(u log(u/v) - u + v), with 0 log 0 = 0.
double relative_entropy(const NonNegVector& u, const NonNegVector& v);

// Multiplies `value` by exp(clamped exponent) and keeps a strictly positive
// value strictly positive. Shared by every multiplicative update.
double multiplicative_step(double value, double exponent, ExponentClamp clamp);

}  // namespace funnel
