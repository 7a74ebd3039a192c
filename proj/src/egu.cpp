#include "funnel/egu.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "funnel/errors.hpp"

namespace funnel {

namespace {

void check_inputs(const NonNegVector& theta, std::span<const double> grad, double eta) {
  if (theta.size() != grad.size()) {
    throw DimensionError("egu: theta has " + std::to_string(theta.size()) +
                         " elements, grad has " + std::to_string(grad.size()));
  }
  if (!std::isfinite(eta)) throw InputError("egu: learning rate is not finite");
  if (eta < 0.0) throw InputError("egu: negative learning rate");
  for (double g : grad) {
    if (!std::isfinite(g)) throw InputError("egu: non-finite gradient");
  }
}

}  // namespace

NonNegVector::NonNegVector(std::vector<double> values) : values_(std::move(values)) {
  for (double v : values_) {
    if (!std::isfinite(v) || v < 0.0) {
      throw InputError("NonNegVector: element " + std::to_string(v) + " is negative or not finite");
    }
  }
}

double ExponentClamp::apply(double exponent) const {
  return std::clamp(exponent, -max_abs_exponent, max_abs_exponent);
}

double multiplicative_step(double value, double exponent, ExponentClamp clamp) {
  const double out = value * std::exp(clamp.apply(exponent));
  if (value > 0.0 && out < std::numeric_limits<double>::min()) {
    return std::numeric_limits<double>::min();
  }
  return out;
}

NonNegVector egu_update(const NonNegVector& theta, std::span<const double> grad, double eta,
                        ExponentClamp clamp) {
  check_inputs(theta, grad, eta);
  std::vector<double> out(theta.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = multiplicative_step(theta[i], -eta * grad[i], clamp);
  }
  return NonNegVector(std::move(out));
}

NonNegVector incorrect_egu_update(const NonNegVector& theta, std::span<const double> grad,
                                  double eta, ExponentClamp clamp) {
  check_inputs(theta, grad, eta);
  std::vector<double> out(theta.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = multiplicative_step(theta[i], -eta * theta[i] * grad[i], clamp);
  }
  return NonNegVector(std::move(out));
}

double relative_entropy(const NonNegVector& u, const NonNegVector& v) {
  if (u.size() != v.size()) {
    throw DimensionError("relative_entropy: length mismatch " + std::to_string(u.size()) +
                         " vs " + std::to_string(v.size()));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double ui = u[i];
    const double vi = v[i];
    if (vi == 0.0) {
      if (ui > 0.0) throw DomainError("relative_entropy: v_i = 0 with u_i > 0 (divergence is infinite)");
      continue;
    }
    const double log_term = ui == 0.0 ? 0.0 : ui * std::log(ui / vi);
    total += log_term - ui + vi;
  }
  // Rounding can leave a tiny negative residue when u is close to v.
  return std::max(total, 0.0);
}

}  // namespace funnel
