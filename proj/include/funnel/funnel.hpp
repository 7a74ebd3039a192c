#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "funnel/egu.hpp"
#include "funnel/params.hpp"

namespace funnel {

enum class ScaleScope { per_group, global };
enum class FunnelVariant { egu, hypergrad_baseline };

std::string_view to_string(ScaleScope scope);
std::string_view to_string(FunnelVariant variant);
ScaleScope parse_scale_scope(std::string_view name);
FunnelVariant parse_funnel_variant(std::string_view name);

// Floor applied by the first-order (1 + x) updates, which can otherwise reach
// zero or go negative.
inline constexpr double kFirstOrderFloor = 1e-12;

struct FunnelConfig {
  double eta = 0.1;      // base learning rate
  double mu = 0.9;       // heavy-ball momentum
  double beta = 0.9;     // decay of the pre-conditioned gradient EMA
  double gamma_p = 0.0;  // gain learning rate
  double gamma_s = 0.0;  // scale learning rate
  bool normalized = false;
  double clip_max = 1e3;
  ScaleScope scale_scope = ScaleScope::per_group;
  FunnelVariant variant = FunnelVariant::egu;
  ExponentClamp clamp{};

  // Throws ConfigError on out-of-range values.
  void validate() const;
};

struct FunnelGroupState {
  std::vector<double> nu;  // momentum buffer
  std::vector<double> m;   // EMA of pre-conditioned gradients
  NonNegVector p;          // per-coordinate gains
};

struct FunnelState {
  std::int64_t t = 0;
  std::vector<FunnelGroupState> groups;
  // One entry per group for ScaleScope::per_group, a single entry for global.
  std::vector<double> scales;
  ScaleScope scope = ScaleScope::per_group;

  [[nodiscard]] double scale_of(std::size_t group) const {
    return scope == ScaleScope::global ? scales.front() : scales[group];
  }
};

FunnelState funnel_init(const FunnelConfig& config, const GroupShapes& shapes);

// m / (1 - beta^t_next). Throws ConfigError for beta outside [0, 1) and
// DomainError for t_next < 1.
std::vector<double> bias_corrected_ema(std::span<const double> m, double beta, std::int64_t t_next);

// p * exp(gamma_p * g * m_hat), or with sign(g) * sign(m_hat) when normalized;
// capped at clip_max.
NonNegVector gain_update(const NonNegVector& p, std::span<const double> g,
                         std::span<const double> m_hat, double gamma_p, bool normalized,
                         double clip_max, ExponentClamp clamp = {});

// First-order (1 + x) form of the normalized gain update, the multiplicative
// delta-bar-delta rule. Floored at kFirstOrderFloor, capped at clip_max.
NonNegVector dbd_gain_update(const NonNegVector& p, std::span<const double> g,
                             std::span<const double> m_hat, double gamma_p, double clip_max);

// s * exp(gamma_s * g.nu), or with the cosine of the angle between g and nu
// when normalized (zero when either norm is zero); capped at clip_max.
double scale_update(double s, std::span<const double> g, std::span<const double> nu,
                    double gamma_s, bool normalized, double clip_max, ExponentClamp clamp = {});

// Hypergradient-descent scale rule s * (1 + gamma_s * cos(g, nu)), clipped to
// [kFirstOrderFloor, clip_max].
double hypergrad_scale_update(double s, std::span<const double> g, std::span<const double> nu,
                              double gamma_s, double clip_max = 1e3);

// Alignment statistics used by the scale rules. Kept separate so a global
// scale can pool them over every group.
struct Alignment {
  double dot = 0.0;
  double g_sq = 0.0;
  double nu_sq = 0.0;

  void accumulate(std::span<const double> g, std::span<const double> nu);
  [[nodiscard]] double cosine() const;
};

double scale_update(double s, const Alignment& a, double gamma_s, bool normalized,
                    double clip_max, ExponentClamp clamp = {});
double hypergrad_scale_update(double s, const Alignment& a, double gamma_s, double clip_max);

// One iteration of funnelled SGD with momentum. `g` is the raw gradient and
// `g_tilde` the internal optimizer's output, both taken at `w` on the same
// batch. On any error neither `state` nor `w` is modified.
void funnel_step(FunnelState& state, const FunnelConfig& config, const ParamGroups& g,
                 const ParamGroups& g_tilde, ParamGroups& w);

// Plain heavy-ball momentum on pre-conditioned gradients: the bare baseline
// the funnel wraps. nu <- mu nu + eta g~, w <- w - nu.
class HeavyBall {
 public:
  HeavyBall(const GroupShapes& shapes, double eta, double mu);

  void step(const ParamGroups& g_tilde, ParamGroups& w);
  [[nodiscard]] const ParamGroups& momentum() const { return nu_; }

 private:
  ParamGroups nu_;
  double eta_;
  double mu_;
};

}  // namespace funnel
