#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "funnel/errors.hpp"
#include "funnel/funnel.hpp"
#include "funnel/preconditioner.hpp"
#include "funnel/problems.hpp"
#include "funnel/rng.hpp"
#include "json.hpp"

using funnel::FunnelConfig;
using funnel::NonNegVector;
using funnel::ParamGroup;
using funnel::ParamGroups;

namespace {

double rel_diff(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace

TEST_SUITE("funnel") {
  TEST_CASE("init matches the algorithm's starting point") {
    const auto state = funnel::funnel_init(FunnelConfig{}, {{"w", 2}});
    CHECK(state.t == 0);
    REQUIRE(state.groups.size() == 1);
    CHECK(state.groups[0].p.vector() == std::vector{1.0, 1.0});
    CHECK(state.groups[0].nu == std::vector{0.0, 0.0});
    CHECK(state.groups[0].m == std::vector{0.0, 0.0});
    CHECK(state.scales == std::vector{1.0});

    const auto two = funnel::funnel_init(FunnelConfig{}, {{"a", 2}, {"b", 3}});
    CHECK(two.scales.size() == 2);
    FunnelConfig global;
    global.scale_scope = funnel::ScaleScope::global;
    const auto shared = funnel::funnel_init(global, {{"a", 2}, {"b", 3}});
    CHECK(shared.scales.size() == 1);
    CHECK(shared.scale_of(1) == 1.0);
  }

  TEST_CASE("config validation") {
    FunnelConfig c;
    c.mu = 1.0;
    CHECK_THROWS_AS(funnel::funnel_init(c, {{"w", 1}}), funnel::ConfigError);
    c = {};
    c.clip_max = 0.0;
    CHECK_THROWS_AS(c.validate(), funnel::ConfigError);
    c = {};
    c.gamma_p = -1.0;
    CHECK_THROWS_AS(c.validate(), funnel::ConfigError);
    c = {};
    c.eta = 0.0;
    CHECK_THROWS_AS(c.validate(), funnel::ConfigError);
    CHECK_THROWS_AS(funnel::funnel_init(FunnelConfig{}, {}), funnel::DimensionError);
  }

  TEST_CASE("bias corrected EMA") {
    CHECK(funnel::bias_corrected_ema(std::vector{0.1}, 0.9, 1)[0] == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(funnel::bias_corrected_ema(std::vector{0.19}, 0.9, 2)[0] == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(funnel::bias_corrected_ema(std::vector{0.0, 0.0}, 0.9, 7) == std::vector{0.0, 0.0});
    CHECK_THROWS_AS(funnel::bias_corrected_ema(std::vector{1.0}, 1.0, 1), funnel::ConfigError);
    CHECK_THROWS_AS(funnel::bias_corrected_ema(std::vector{1.0}, 0.9, 0), funnel::DomainError);
  }

  TEST_CASE("gain update") {
    const NonNegVector p({1.5, 0.2});
    SUBCASE("zero EMA leaves gains unchanged") {
      for (bool normalized : {false, true}) {
        const auto out = funnel::gain_update(p, std::vector{3.0, -2.0}, std::vector{0.0, 0.0}, 0.1,
                                             normalized, 1e3);
        CHECK(out.vector() == p.vector());
      }
    }
    SUBCASE("normalized: agreeing coordinates speed up, disagreeing slow down") {
      const auto out = funnel::gain_update(NonNegVector::ones(2), std::vector{0.3, -4.0},
                                           std::vector{2.0, 0.5}, 0.01, true, 1e3);
      CHECK(std::abs(out[0] - 1.0100501670841680575) <= 1e-15);
      CHECK(std::abs(out[1] - 0.99004983374916805357) <= 1e-15);
    }
    SUBCASE("unnormalized closed form") {
      const auto out = funnel::gain_update(NonNegVector({2.0}), std::vector{0.5}, std::vector{0.4},
                                           1e-4, false, 1e3);
      CHECK(std::abs(out[0] - 2.0000400004000026667) <= 1e-15);
    }
    SUBCASE("capped at clip_max") {
      const auto out = funnel::gain_update(NonNegVector({900.0}), std::vector{10.0},
                                           std::vector{10.0}, 1.0, false, 1e3);
      CHECK(out[0] == 1e3);
    }
    SUBCASE("shape mismatch") {
      CHECK_THROWS_AS(funnel::gain_update(p, std::vector{1.0}, std::vector{1.0, 2.0}, 0.1, false, 1e3),
                      funnel::DimensionError);
    }
  }

  TEST_CASE("dbd-style first-order gain update") {
    const auto out = funnel::dbd_gain_update(NonNegVector::ones(3), std::vector{1.0, -1.0, 0.0},
                                             std::vector{2.0, 2.0, 2.0}, 0.01, 1e3);
    CHECK(out[0] == doctest::Approx(1.01).epsilon(1e-15));
    CHECK(out[1] == doctest::Approx(0.99).epsilon(1e-15));
    CHECK(out[2] == 1.0);
    const auto floored = funnel::dbd_gain_update(NonNegVector({1.0}), std::vector{1.0},
                                                 std::vector{-1.0}, 2.0, 1e3);
    CHECK(floored[0] == funnel::kFirstOrderFloor);
  }

  TEST_CASE("scale update") {
    CHECK(funnel::scale_update(1.3, std::vector{1.0, 2.0}, std::vector{0.0, 0.0}, 0.5, false, 1e3) == 1.3);
    CHECK(funnel::scale_update(1.3, std::vector{1.0, 2.0}, std::vector{0.0, 0.0}, 0.5, true, 1e3) == 1.3);
    // parallel: cosine = 1
    CHECK(std::abs(funnel::scale_update(1.0, std::vector{1.0, 2.0}, std::vector{3.0, 6.0}, 1e-3, true, 1e3) -
                   1.0010005001667083417) <= 1e-15);
    // orthogonal: cosine = 0
    CHECK(funnel::scale_update(2.0, std::vector{1.0, 0.0}, std::vector{0.0, 5.0}, 1e-3, true, 1e3) == 2.0);
    // unnormalized uses the raw inner product
    CHECK(funnel::scale_update(1.0, std::vector{1.0, 2.0}, std::vector{0.5, 0.25}, 0.1, false, 1e3) ==
          doctest::Approx(std::exp(0.1)).epsilon(1e-15));
    CHECK(funnel::scale_update(999.0, std::vector{1.0}, std::vector{1.0}, 1.0, false, 1e3) == 1e3);
    CHECK_THROWS_AS(funnel::scale_update(1.0, std::vector{1.0}, std::vector{1.0, 2.0}, 0.1, true, 1e3),
                    funnel::DimensionError);
  }

  TEST_CASE("hypergradient scale update") {
    CHECK(funnel::hypergrad_scale_update(1.7, std::vector{1.0, 0.0}, std::vector{0.0, 2.0}, 1e-3) == 1.7);
    CHECK(funnel::hypergrad_scale_update(1.0, std::vector{2.0}, std::vector{5.0}, 1e-3) ==
          doctest::Approx(1.001).epsilon(1e-15));
    CHECK(funnel::hypergrad_scale_update(1.0, std::vector{2.0}, std::vector{-5.0}, 2.0) ==
          funnel::kFirstOrderFloor);
    funnel::Rng rng(3);
    for (double gamma : {1e-4, 1e-3, 1e-2}) {
      for (int i = 0; i < 200; ++i) {
        std::vector<double> g(5), nu(5);
        for (std::size_t j = 0; j < 5; ++j) {
          g[j] = rng.normal();
          nu[j] = rng.normal();
        }
        const double s = std::exp(rng.uniform(-3.0, 3.0));
        const double egu = funnel::scale_update(s, g, nu, gamma, true, 1e3);
        const double hg = funnel::hypergrad_scale_update(s, g, nu, gamma, 1e3);
        CHECK(std::abs(egu - hg) <= gamma * gamma * s);
      }
    }
  }

  TEST_CASE("normalization invariances") {
    funnel::Rng rng(11);
    for (int i = 0; i < 200; ++i) {
      std::vector<double> g(6), nu(6), m(6), g_scaled(6), nu_scaled(6), g_elem(6);
      const double c = std::exp(rng.uniform(-5.0, 5.0));
      const double d = std::exp(rng.uniform(-5.0, 5.0));
      for (std::size_t j = 0; j < 6; ++j) {
        g[j] = rng.normal();
        nu[j] = rng.normal();
        m[j] = rng.normal();
        g_scaled[j] = c * g[j];
        nu_scaled[j] = d * nu[j];
        g_elem[j] = std::exp(rng.uniform(-5.0, 5.0)) * g[j];
      }
      const double s0 = funnel::scale_update(1.0, g, nu, 1e-2, true, 1e3);
      const double s1 = funnel::scale_update(1.0, g_scaled, nu_scaled, 1e-2, true, 1e3);
      CHECK(std::abs(s0 - s1) <= 1e-15);
      const NonNegVector p(std::vector<double>(6, 0.7));
      CHECK(funnel::gain_update(p, g, m, 0.05, true, 1e3).vector() ==
            funnel::gain_update(p, g_elem, m, 0.05, true, 1e3).vector());
    }
  }

  TEST_CASE("first step from init is a plain step") {
    FunnelConfig c;
    c.eta = 0.1;
    c.gamma_p = 0.5;
    c.gamma_s = 0.5;
    auto state = funnel::funnel_init(c, {{"w", 2}});
    ParamGroups w({ParamGroup{"w", {1.0, -2.0}}});
    const ParamGroups g({ParamGroup{"w", {3.0, 4.0}}});
    const ParamGroups gt({ParamGroup{"w", {0.5, -0.25}}});
    funnel::funnel_step(state, c, g, gt, w);
    CHECK(state.t == 1);
    CHECK(state.groups[0].p.vector() == std::vector{1.0, 1.0});
    CHECK(state.scales[0] == 1.0);
    CHECK(w[0].values[0] == doctest::Approx(1.0 - 0.1 * 0.5).epsilon(1e-15));
    CHECK(w[0].values[1] == doctest::Approx(-2.0 + 0.1 * 0.25).epsilon(1e-15));
  }

  TEST_CASE("golden three-step trace") {
    std::ifstream in(std::string(FUNNEL_FIXTURES) + "/golden_trace.json");
    REQUIRE(in);
    const auto fixture = nlohmann::json::parse(in);
    FunnelConfig c;
    c.eta = 0.1;
    c.mu = 0.9;
    c.beta = 0.9;
    c.gamma_p = 0.01;
    c.gamma_s = 0.01;
    const auto problem = funnel::quadratic_problem({4.0, 0.0, 0.0, 1.0}, {0.0, 0.0});
    ParamGroups w = problem->initial_params();
    auto state = funnel::funnel_init(c, problem->shapes());
    funnel::Preconditioner inner({funnel::PreconditionerTag::identity_sgd}, problem->shapes());
    for (const auto& step : fixture["steps"]) {
      const auto g = problem->grad(w, {});
      funnel::funnel_step(state, c, g, inner.precondition(g), w);
      CHECK(state.t == step["t"].get<int>());
      auto expect = [](const nlohmann::json& j) { return std::stod(j.get<std::string>()); };
      for (std::size_t i = 0; i < 2; ++i) {
        CHECK(rel_diff(state.groups[0].p[i], expect(step["p"][i])) <= 1e-12);
        CHECK(rel_diff(state.groups[0].m[i], expect(step["m"][i])) <= 1e-12);
        CHECK(rel_diff(state.groups[0].nu[i], expect(step["nu"][i])) <= 1e-12);
        CHECK(rel_diff(w[0].values[i], expect(step["w"][i])) <= 1e-12);
      }
      CHECK(rel_diff(state.scales[0], expect(step["s"])) <= 1e-12);
    }
  }

  TEST_CASE("zero hyper learning rates reproduce heavy-ball momentum") {
    FunnelConfig c;
    const auto problem = funnel::diagonal_quadratic_problem(2);
    ParamGroups w_f = problem->initial_params();
    ParamGroups w_h = w_f;
    auto state = funnel::funnel_init(c, problem->shapes());
    funnel::HeavyBall hb(problem->shapes(), c.eta, c.mu);
    for (int t = 0; t < 100; ++t) {
      const auto gf = problem->grad(w_f, {});
      funnel::funnel_step(state, c, gf, gf, w_f);
      hb.step(problem->grad(w_h, {}), w_h);
      CHECK(w_f[0].values == w_h[0].values);
    }
  }

  TEST_CASE("global scope pools the alignment over groups") {
    FunnelConfig c;
    c.gamma_s = 0.1;
    c.scale_scope = funnel::ScaleScope::global;
    auto state = funnel::funnel_init(c, {{"a", 1}, {"b", 1}});
    state.groups[0].nu = {1.0};
    state.groups[1].nu = {2.0};
    ParamGroups w({{"a", {0.0}}, {"b", {0.0}}});
    const ParamGroups g({{"a", {3.0}}, {"b", {-1.0}}});
    funnel::funnel_step(state, c, g, g, w);
    CHECK(state.scales[0] == doctest::Approx(std::exp(0.1 * (3.0 - 2.0))).epsilon(1e-15));

    c.scale_scope = funnel::ScaleScope::per_group;
    auto per = funnel::funnel_init(c, {{"a", 1}, {"b", 1}});
    per.groups[0].nu = {1.0};
    per.groups[1].nu = {2.0};
    ParamGroups w2({{"a", {0.0}}, {"b", {0.0}}});
    funnel::funnel_step(per, c, g, g, w2);
    CHECK(per.scales[0] == doctest::Approx(std::exp(0.3)).epsilon(1e-15));
    CHECK(per.scales[1] == doctest::Approx(std::exp(-0.2)).epsilon(1e-15));
  }

  TEST_CASE("non-finite gradient is refused without touching state") {
    FunnelConfig c;
    c.gamma_p = c.gamma_s = 0.01;
    auto state = funnel::funnel_init(c, {{"w", 2}});
    ParamGroups w({ParamGroup{"w", {1.0, 1.0}}});
    const ParamGroups good({ParamGroup{"w", {1.0, 1.0}}});
    funnel::funnel_step(state, c, good, good, w);
    const auto before_state = state;
    const auto before_w = w;
    const ParamGroups bad({ParamGroup{"w", {NAN, 1.0}}});
    CHECK_THROWS_AS(funnel::funnel_step(state, c, bad, good, w), funnel::InputError);
    CHECK_THROWS_AS(funnel::funnel_step(state, c, good, bad, w), funnel::InputError);
    CHECK(state.t == before_state.t);
    CHECK(state.groups[0].nu == before_state.groups[0].nu);
    CHECK(w[0].values == before_w[0].values);
    const ParamGroups short_g({ParamGroup{"w", {1.0}}});
    CHECK_THROWS_AS(funnel::funnel_step(state, c, short_g, short_g, w), funnel::DimensionError);
  }

  TEST_CASE("monotone gain response to agreement") {
    funnel::Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
      const NonNegVector p(std::vector<double>{0.5, 1.0, 2.0});
      std::vector<double> g(3), m(3), neg(3);
      for (std::size_t i = 0; i < 3; ++i) {
        m[i] = rng.normal();
        g[i] = m[i] * std::exp(rng.uniform(-2.0, 2.0));
        neg[i] = -g[i];
      }
      for (bool normalized : {false, true}) {
        const auto up = funnel::gain_update(p, g, m, 0.01, normalized, 1e3);
        const auto down = funnel::gain_update(p, neg, m, 0.01, normalized, 1e3);
        for (std::size_t i = 0; i < 3; ++i) {
          CHECK(up[i] >= p[i]);
          CHECK(down[i] <= p[i]);
        }
      }
    }
  }
}
