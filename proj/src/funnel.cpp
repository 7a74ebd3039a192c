#include "funnel/funnel.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "funnel/errors.hpp"

namespace funnel {

namespace {

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw DimensionError(std::string(what) + ": length mismatch " + std::to_string(a) + " vs " +
                         std::to_string(b));
  }
}

// gamma * x, with 0 * inf treated as "no update" instead of NaN.
double scaled_exponent(double gamma, double x) {
  if (gamma == 0.0 || x == 0.0) return 0.0;
  const double e = gamma * x;
  if (std::isnan(e)) throw NumericalError("funnel: NaN exponent");
  return e;
}

double cap(double value, double clip_max) { return std::min(value, clip_max); }

}  // namespace

std::string_view to_string(ScaleScope scope) {
  return scope == ScaleScope::global ? "global" : "per_group";
}

std::string_view to_string(FunnelVariant variant) {
  return variant == FunnelVariant::hypergrad_baseline ? "hypergrad_baseline" : "egu";
}

ScaleScope parse_scale_scope(std::string_view name) {
  if (name == "per_group") return ScaleScope::per_group;
  if (name == "global") return ScaleScope::global;
  throw ConfigError("unknown scale_scope '" + std::string(name) + "'");
}

FunnelVariant parse_funnel_variant(std::string_view name) {
  if (name == "egu") return FunnelVariant::egu;
  if (name == "hypergrad_baseline") return FunnelVariant::hypergrad_baseline;
  throw ConfigError("unknown funnel variant '" + std::string(name) + "'");
}

void FunnelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("funnel config: " + msg); };
  if (!(eta > 0.0) || !std::isfinite(eta)) fail("eta must be > 0");
  if (!(mu >= 0.0 && mu < 1.0)) fail("mu must be in [0, 1)");
  if (!(beta >= 0.0 && beta < 1.0)) fail("beta must be in [0, 1)");
  if (!(gamma_p >= 0.0) || !std::isfinite(gamma_p)) fail("gamma_p must be >= 0");
  if (!(gamma_s >= 0.0) || !std::isfinite(gamma_s)) fail("gamma_s must be >= 0");
  if (!(clip_max > 0.0) || !std::isfinite(clip_max)) fail("clip_max must be > 0");
  if (!(clamp.max_abs_exponent > 0.0)) fail("max_abs_exponent must be > 0");
}

FunnelState funnel_init(const FunnelConfig& config, const GroupShapes& shapes) {
  config.validate();
  if (shapes.empty()) throw DimensionError("funnel_init: no parameter groups");
  FunnelState state;
  state.scope = config.scale_scope;
  state.groups.reserve(shapes.size());
  for (const auto& shape : shapes) {
    state.groups.push_back({std::vector<double>(shape.size, 0.0),
                            std::vector<double>(shape.size, 0.0), NonNegVector::ones(shape.size)});
  }
  state.scales.assign(config.scale_scope == ScaleScope::global ? 1 : shapes.size(), 1.0);
  return state;
}

std::vector<double> bias_corrected_ema(std::span<const double> m, double beta, std::int64_t t_next) {
  if (!(beta >= 0.0 && beta < 1.0)) throw ConfigError("bias_corrected_ema: beta must be in [0, 1)");
  if (t_next < 1) throw DomainError("bias_corrected_ema: t_next must be >= 1");
  const double correction = 1.0 - std::pow(beta, static_cast<double>(t_next));
  std::vector<double> out(m.begin(), m.end());
  for (double& x : out) x /= correction;
  return out;
}

NonNegVector gain_update(const NonNegVector& p, std::span<const double> g,
                         std::span<const double> m_hat, double gamma_p, bool normalized,
                         double clip_max, ExponentClamp clamp) {
  require_same_length(p.size(), g.size(), "gain_update");
  require_same_length(p.size(), m_hat.size(), "gain_update");
  std::vector<double> out(p.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double agreement = normalized ? sign(g[i]) * sign(m_hat[i]) : g[i] * m_hat[i];
    out[i] = cap(multiplicative_step(p[i], scaled_exponent(gamma_p, agreement), clamp), clip_max);
  }
  return NonNegVector(std::move(out));
}

NonNegVector dbd_gain_update(const NonNegVector& p, std::span<const double> g,
                             std::span<const double> m_hat, double gamma_p, double clip_max) {
  require_same_length(p.size(), g.size(), "dbd_gain_update");
  require_same_length(p.size(), m_hat.size(), "dbd_gain_update");
  std::vector<double> out(p.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double factor = 1.0 + gamma_p * sign(g[i]) * sign(m_hat[i]);
    out[i] = std::clamp(p[i] * factor, kFirstOrderFloor, clip_max);
  }
  return NonNegVector(std::move(out));
}

void Alignment::accumulate(std::span<const double> g, std::span<const double> nu) {
  require_same_length(g.size(), nu.size(), "scale update");
  for (std::size_t i = 0; i < g.size(); ++i) {
    dot += g[i] * nu[i];
    g_sq += g[i] * g[i];
    nu_sq += nu[i] * nu[i];
  }
}

double Alignment::cosine() const {
  const double denom = std::sqrt(g_sq) * std::sqrt(nu_sq);
  if (denom == 0.0 || !std::isfinite(denom)) return 0.0;
  // Rounding can push |cos| marginally past 1.
  return std::clamp(dot / denom, -1.0, 1.0);
}

double scale_update(double s, const Alignment& a, double gamma_s, bool normalized,
                    double clip_max, ExponentClamp clamp) {
  const double alignment = normalized ? a.cosine() : a.dot;
  return cap(multiplicative_step(s, scaled_exponent(gamma_s, alignment), clamp), clip_max);
}

double scale_update(double s, std::span<const double> g, std::span<const double> nu,
                    double gamma_s, bool normalized, double clip_max, ExponentClamp clamp) {
  Alignment a;
  a.accumulate(g, nu);
  return scale_update(s, a, gamma_s, normalized, clip_max, clamp);
}

double hypergrad_scale_update(double s, const Alignment& a, double gamma_s, double clip_max) {
  return std::clamp(s * (1.0 + gamma_s * a.cosine()), kFirstOrderFloor, clip_max);
}

double hypergrad_scale_update(double s, std::span<const double> g, std::span<const double> nu,
                              double gamma_s, double clip_max) {
  Alignment a;
  a.accumulate(g, nu);
  return hypergrad_scale_update(s, a, gamma_s, clip_max);
}

void funnel_step(FunnelState& state, const FunnelConfig& config, const ParamGroups& g,
                 const ParamGroups& g_tilde, ParamGroups& w) {
  const GroupShapes shapes = w.shapes();
  if (shapes.size() != state.groups.size()) {
    throw DimensionError("funnel_step: state has " + std::to_string(state.groups.size()) +
                         " groups, parameters have " + std::to_string(shapes.size()));
  }
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    require_same_length(state.groups[i].p.size(), shapes[i].size, "funnel_step state");
  }
  require_shapes(g, shapes, "funnel_step gradient");
  require_shapes(g_tilde, shapes, "funnel_step pre-conditioned gradient");
  if (!g.all_finite() || !g_tilde.all_finite()) {
    throw InputError("funnel_step: non-finite gradient at step " + std::to_string(state.t));
  }

  FunnelState next = state;

  // Gains from the current gradient and the bias-corrected EMA of past
  // pre-conditioned gradients (m_hat^0 = 0).
  for (std::size_t gi = 0; gi < shapes.size(); ++gi) {
    auto& gs = next.groups[gi];
    const std::vector<double> m_hat =
        state.t == 0 ? std::vector<double>(gs.m.size(), 0.0)
                     : bias_corrected_ema(gs.m, config.beta, state.t);
    gs.p = gain_update(gs.p, g.values(gi), m_hat, config.gamma_p, config.normalized,
                       config.clip_max, config.clamp);
  }

  // Scales from the current gradient and the previous momentum buffer.
  auto update_scale = [&](double s, const Alignment& a) {
    return config.variant == FunnelVariant::hypergrad_baseline
               ? hypergrad_scale_update(s, a, config.gamma_s, config.clip_max)
               : scale_update(s, a, config.gamma_s, config.normalized, config.clip_max,
                              config.clamp);
  };
  if (next.scope == ScaleScope::global) {
    Alignment pooled;
    for (std::size_t gi = 0; gi < shapes.size(); ++gi) {
      pooled.accumulate(g.values(gi), state.groups[gi].nu);
    }
    next.scales.front() = update_scale(state.scales.front(), pooled);
  } else {
    for (std::size_t gi = 0; gi < shapes.size(); ++gi) {
      Alignment a;
      a.accumulate(g.values(gi), state.groups[gi].nu);
      next.scales[gi] = update_scale(state.scales[gi], a);
    }
  }

  ParamGroups w_next = w;
  for (std::size_t gi = 0; gi < shapes.size(); ++gi) {
    auto& gs = next.groups[gi];
    const auto gt = g_tilde.values(gi);
    const double s = next.scale_of(gi);
    auto wv = w_next.values(gi);
    for (std::size_t i = 0; i < gt.size(); ++i) {
      gs.m[i] = config.beta * gs.m[i] + (1.0 - config.beta) * gt[i];
      gs.nu[i] = config.mu * gs.nu[i] + config.eta * (gs.p[i] * gt[i]);
      wv[i] = wv[i] - s * gs.nu[i];
    }
  }
  if (!w_next.all_finite()) {
    throw NumericalError("funnel_step: parameters became non-finite at step " +
                         std::to_string(state.t));
  }
  ++next.t;

  state = std::move(next);
  w = std::move(w_next);
}

HeavyBall::HeavyBall(const GroupShapes& shapes, double eta, double mu)
    : nu_(ParamGroups::zeros(shapes)), eta_(eta), mu_(mu) {
  if (shapes.empty()) throw DimensionError("HeavyBall: no parameter groups");
  if (!(eta > 0.0) || !std::isfinite(eta)) throw ConfigError("HeavyBall: eta must be > 0");
  if (!(mu >= 0.0 && mu < 1.0)) throw ConfigError("HeavyBall: mu must be in [0, 1)");
}

void HeavyBall::step(const ParamGroups& g_tilde, ParamGroups& w) {
  const GroupShapes shapes = nu_.shapes();
  require_shapes(g_tilde, shapes, "HeavyBall gradient");
  require_shapes(w, shapes, "HeavyBall parameters");
  if (!g_tilde.all_finite()) throw InputError("HeavyBall: non-finite gradient");
  for (std::size_t gi = 0; gi < shapes.size(); ++gi) {
    auto nu = nu_.values(gi);
    auto wv = w.values(gi);
    const auto gt = g_tilde.values(gi);
    for (std::size_t i = 0; i < nu.size(); ++i) {
      nu[i] = mu_ * nu[i] + eta_ * gt[i];
      wv[i] = wv[i] - nu[i];
    }
  }
}

}  // namespace funnel
