#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "funnel/params.hpp"

namespace funnel {

enum class PreconditionerTag { identity_sgd, adagrad, adagrad_ema, rmsprop, adam };

std::string_view to_string(PreconditionerTag tag);
// Throws ConfigError on an unknown name.
PreconditionerTag parse_preconditioner_tag(std::string_view name);

struct PreconditionerKind {
  PreconditionerTag tag = PreconditionerTag::identity_sgd;
  double epsilon = 1e-8;
  double second_moment_decay = 0.999;  // rmsprop, adam
  double first_moment_decay = 0.9;     // adam
  double ema_decay = 0.9;              // adagrad_ema

  // Throws ConfigError unless epsilon > 0 and every decay is in [0, 1).
  void validate() const;
};

// The internal optimizer: turns raw gradients into pre-conditioned gradients.
// Only the accumulators the chosen kind needs are allocated.
class Preconditioner {
 public:
  Preconditioner(PreconditionerKind kind, const GroupShapes& shapes);

  // Mutates the accumulators and returns g~ for gradient g.
  ParamGroups precondition(const ParamGroups& gradient);

  [[nodiscard]] const PreconditionerKind& kind() const { return kind_; }
  [[nodiscard]] const GroupShapes& shapes() const { return shapes_; }
  [[nodiscard]] std::int64_t step() const { return step_; }

  // adagrad / adagrad_ema sum of squares.
  [[nodiscard]] const ParamGroups& sum_of_squares() const { return sum_sq_; }
  // rmsprop / adam second moment.
  [[nodiscard]] const ParamGroups& second_moment() const { return second_; }
  // adam first moment.
  [[nodiscard]] const ParamGroups& first_moment() const { return first_; }
  // adagrad_ema EMA of the adagrad output (not bias corrected).
  [[nodiscard]] const ParamGroups& output_ema() const { return output_ema_; }

 private:
  PreconditionerKind kind_;
  GroupShapes shapes_;
  std::int64_t step_ = 0;
  ParamGroups sum_sq_;
  ParamGroups second_;
  ParamGroups first_;
  ParamGroups output_ema_;
};

}  // namespace funnel
