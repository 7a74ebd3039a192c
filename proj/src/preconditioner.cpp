#include "funnel/preconditioner.hpp"

#include <cmath>
#include <string>

#include "funnel/errors.hpp"

namespace funnel {

std::string_view to_string(PreconditionerTag tag) {
  switch (tag) {
    case PreconditionerTag::identity_sgd: return "identity_sgd";
    case PreconditionerTag::adagrad: return "adagrad";
    case PreconditionerTag::adagrad_ema: return "adagrad_ema";
    case PreconditionerTag::rmsprop: return "rmsprop";
    case PreconditionerTag::adam: return "adam";
  }
  return "unknown";
}

PreconditionerTag parse_preconditioner_tag(std::string_view name) {
  for (auto tag : {PreconditionerTag::identity_sgd, PreconditionerTag::adagrad,
                   PreconditionerTag::adagrad_ema, PreconditionerTag::rmsprop,
                   PreconditionerTag::adam}) {
    if (name == to_string(tag)) return tag;
  }
  throw ConfigError("unknown internal optimizer '" + std::string(name) + "'");
}

void PreconditionerKind::validate() const {
  auto check_decay = [](double d, const char* what) {
    if (!(d >= 0.0 && d < 1.0)) {
      throw ConfigError(std::string(what) + " must be in [0, 1), got " + std::to_string(d));
    }
  };
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ConfigError("epsilon must be > 0");
  check_decay(second_moment_decay, "second_moment_decay");
  check_decay(first_moment_decay, "first_moment_decay");
  check_decay(ema_decay, "ema_decay");
}

Preconditioner::Preconditioner(PreconditionerKind kind, const GroupShapes& shapes)
    : kind_(kind), shapes_(shapes) {
  kind_.validate();
  if (shapes_.empty()) throw DimensionError("preconditioner: no parameter groups");
  switch (kind_.tag) {
    case PreconditionerTag::identity_sgd:
      break;
    case PreconditionerTag::adagrad:
      sum_sq_ = ParamGroups::zeros(shapes_);
      break;
    case PreconditionerTag::adagrad_ema:
      sum_sq_ = ParamGroups::zeros(shapes_);
      output_ema_ = ParamGroups::zeros(shapes_);
      break;
    case PreconditionerTag::rmsprop:
      second_ = ParamGroups::zeros(shapes_);
      break;
    case PreconditionerTag::adam:
      second_ = ParamGroups::zeros(shapes_);
      first_ = ParamGroups::zeros(shapes_);
      break;
  }
}

ParamGroups Preconditioner::precondition(const ParamGroups& gradient) {
  require_shapes(gradient, shapes_, "precondition");
  ++step_;
  ParamGroups out = gradient;
  const double eps = kind_.epsilon;

  for (std::size_t gi = 0; gi < shapes_.size(); ++gi) {
    const auto g = gradient.values(gi);
    auto o = out.values(gi);
    switch (kind_.tag) {
      case PreconditionerTag::identity_sgd:
        break;
      case PreconditionerTag::adagrad:
      case PreconditionerTag::adagrad_ema: {
        auto acc = sum_sq_.values(gi);
        for (std::size_t i = 0; i < g.size(); ++i) {
          acc[i] += g[i] * g[i];
          o[i] = g[i] / (std::sqrt(acc[i]) + eps);
        }
        if (kind_.tag == PreconditionerTag::adagrad_ema) {
          const double beta = kind_.ema_decay;
          const double correction = 1.0 - std::pow(beta, static_cast<double>(step_));
          auto ema = output_ema_.values(gi);
          for (std::size_t i = 0; i < g.size(); ++i) {
            ema[i] = beta * ema[i] + (1.0 - beta) * o[i];
            o[i] = ema[i] / correction;
          }
        }
        break;
      }
      case PreconditionerTag::rmsprop: {
        const double rho = kind_.second_moment_decay;
        auto v = second_.values(gi);
        for (std::size_t i = 0; i < g.size(); ++i) {
          v[i] = rho * v[i] + (1.0 - rho) * g[i] * g[i];
          o[i] = g[i] / (std::sqrt(v[i]) + eps);
        }
        break;
      }
      case PreconditionerTag::adam: {
        const double b1 = kind_.first_moment_decay;
        const double b2 = kind_.second_moment_decay;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
        auto m = first_.values(gi);
        auto v = second_.values(gi);
        for (std::size_t i = 0; i < g.size(); ++i) {
          m[i] = b1 * m[i] + (1.0 - b1) * g[i];
          v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
          o[i] = (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
        break;
      }
    }
  }
  return out;
}

}  // namespace funnel
