#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "steerkit/elastic.hpp"
#include "steerkit/error.hpp"
#include "support.hpp"

using namespace steerkit;
using testsupport::axis_setup;
using testsupport::saturating_world;

namespace {

oracle::SearchParams params_of(const ElasticConfig& c) {
  oracle::SearchParams l;
  l.a_min = c.a_min;
  l.target_gap = c.target_gap;
  l.iterations = c.max_iterations;
  l.texpand = c.expand_threshold;
  l.over_target = c.expand_rule == ExpandRule::over_target;
  l.n0 = c.n_initial;
  l.nmax = c.n_max;
  l.lam = c.lam;
  l.eps = c.eps;
  l.move_fraction = c.move_fraction;
  l.sim_min = c.sim_min;
  l.sim_max = c.sim_max;
  return l;
}

void expect_band_shape(const CalibrationResult& r, const ElasticConfig& cfg) {
  const auto& x = r.band.points;
  EXPECT_LE(x.size(), static_cast<std::size_t>(cfg.n_max));
  EXPECT_LE(r.band.iterations_used, cfg.max_iterations);
  EXPECT_EQ(r.band.gaps.size() + 1, x.size());
  for (std::size_t i = 0; i + 1 < x.size(); ++i) EXPECT_GE(x[i + 1] - x[i], cfg.eps - 1e-12);
}

}  // namespace

TEST(Elastic, Presets) {
  EXPECT_EQ(elastic_preset("local").sim_min, 0.05);
  EXPECT_EQ(elastic_preset("local").sim_max, 0.15);
  for (const char* n : {"global", "stylization"}) {
    EXPECT_EQ(elastic_preset(n).sim_min, 0.15);
    EXPECT_EQ(elastic_preset(n).sim_max, 0.30);
  }
  EXPECT_EQ(elastic_preset("runtime-local").sim_min, 0.15);
  EXPECT_EQ(elastic_preset("runtime-local").sim_max, 0.40);
  EXPECT_EQ(elastic_preset("runtime-global").sim_min, 0.25);
  EXPECT_EQ(elastic_preset(EditType::stylization).sim_max, 0.30);
  EXPECT_THROW((void)elastic_preset("huge"), Error);
  const ElasticConfig d;
  EXPECT_EQ(d.max_iterations, 25);
  EXPECT_EQ(d.n_max, 10);
  EXPECT_EQ(d.target_gap, 0.25);
}

TEST(Elastic, ConfigJsonAndValidation) {
  ElasticConfig c = elastic_preset("global");
  c.eta0 = 0.3;
  c.expand_rule = ExpandRule::over_target;
  const auto j = to_json(c);
  for (const char* key : {"T", "Texpand", "N0", "Nmax", "eta0", "expand_rule"}) EXPECT_TRUE(j.contains(key)) << key;
  const auto back = elastic_config_from_json(j);
  EXPECT_EQ(to_json(back), j);
  EXPECT_EQ(elastic_config_from_json(nlohmann::json{{"Nmax", 6}}, c).n_max, 6);
  EXPECT_THROW((void)elastic_config_from_json(nlohmann::json{{"bogus", 1}}), Error);

  auto bad = [](auto mutate) {
    ElasticConfig x;
    mutate(x);
    EXPECT_THROW(validate(x), Error);
  };
  bad([](ElasticConfig& x) { x.a_min = 100.0; });
  bad([](ElasticConfig& x) { x.n_initial = 11; });
  bad([](ElasticConfig& x) { x.n_initial = 1; });
  bad([](ElasticConfig& x) { x.move_fraction = 0.0; });
  bad([](ElasticConfig& x) { x.sim_min = 0.2; });
  bad([](ElasticConfig& x) { x.max_iterations = 0; });
}

TEST(Elastic, EtaSchedule) {
  ElasticConfig c;
  const double e0 = resolve_eta0(c, 3.0);
  EXPECT_DOUBLE_EQ(e0, 0.5);
  EXPECT_DOUBLE_EQ(eta(1, c, e0), e0);
  const double last = eta(c.max_iterations, c, e0);
  EXPECT_GT(last, 0.0);
  EXPECT_NEAR(last, e0 * 0.5 * (1.0 + std::cos(M_PI * 24.0 / 25.0)), 1e-15);
  for (int t = 1; t < c.max_iterations; ++t) EXPECT_GE(eta(t, c, e0), eta(t + 1, c, e0));
  EXPECT_THROW((void)eta(0, c, e0), Error);
  EXPECT_THROW((void)eta(26, c, e0), Error);
  c.eta0 = 0.125;
  EXPECT_EQ(resolve_eta0(c, 3.0), 0.125);
}

TEST(Elastic, InitAlphaMax) {
  ElasticConfig c;
  const Vector s{1.0, 0.0};
  std::vector<Vector> pools{{1.0, 0.0}, {2.5, 7.0}};
  EXPECT_DOUBLE_EQ(init_alpha_max(s, pools, c), 2.5);
  std::vector<Vector> neg{{-1.0, 0.0}, {0.0, 1.0}};
  try {
    (void)init_alpha_max(s, neg, c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::non_positive_projection);
  }
  std::vector<Vector> big{{250.0, 0.0}};
  EXPECT_DOUBLE_EQ(init_alpha_max(s, big, c), 100.0);

  SteeringVector v;
  v.direction = {1.0};
  EXPECT_THROW((void)init_alpha_max(v, c), Error);
  v.max_projection = 4.0;
  EXPECT_DOUBLE_EQ(init_alpha_max(v, c), 4.0);
}

TEST(Elastic, RendererCachesAndCounts) {
  auto s = axis_setup(saturating_world());
  auto r = s.renderer();
  const double alphas[] = {0.0, 1.0, 1.0, 2.0};
  const auto refs = r.render(alphas);
  EXPECT_EQ(r.generations(), 3u);
  EXPECT_EQ(refs[1], refs[2]);
  EXPECT_EQ(refs[3].alpha, 2.0);
  EXPECT_EQ(r.distance(1.0, 1.0), 0.0);
  EXPECT_EQ(r.distance(0.0, 2.0), r.distance(2.0, 0.0));
  EXPECT_NEAR(r.distance(0.0, 2.0), oracle::saturating(2.0, 15.0, 0.5), 1e-12);
  (void)r.render(1.0 + 1e-12);  // same key after rounding
  EXPECT_EQ(r.generations(), 3u);
}

TEST(Elastic, ExtrapolationTakesThreeStepsBelowPlateau) {
  // D = 0.1 sits below sim_max = 0.15, so every doubling is accepted.
  auto w = saturating_world(15.0, 0.1);
  auto s = axis_setup(w);
  auto r = s.renderer();
  const auto ext = extrapolate_alpha_max(r, 2.0, elastic_preset("local"));
  EXPECT_EQ(ext.steps, 3);
  EXPECT_DOUBLE_EQ(ext.alpha_max, 16.0);

  auto many = elastic_preset("local");
  many.max_extrapolation_steps = 7;
  auto r2 = s.renderer();
  EXPECT_EQ(extrapolate_alpha_max(r2, 0.5, many).steps, 7);
}

TEST(Elastic, ExtrapolationStopsWhenTooFar) {
  auto s = axis_setup(saturating_world(15.0, 0.5));
  auto r = s.renderer();
  ElasticConfig tight = elastic_preset("local");
  tight.sim_max = 0.06;
  tight.sim_min = 0.01;
  // r(20) = 0.368 > 0.06
  const auto ext = extrapolate_alpha_max(r, 10.0, tight);
  EXPECT_EQ(ext.steps, 0);
  EXPECT_EQ(ext.alpha_max, 10.0);

  ElasticConfig capped = elastic_preset("local");
  capped.a_max_cap = 20.0;
  auto low = axis_setup(saturating_world(15.0, 0.1));
  auto r2 = low.renderer();
  EXPECT_EQ(extrapolate_alpha_max(r2, 6.0, capped).steps, 1);  // 12 fits, 24 is over the cap
}

TEST(Elastic, SaturatingWorldMatchesReferenceSimulator) {
  const auto w = saturating_world(15.0, 0.5);
  for (ExpandRule rule : {ExpandRule::literal, ExpandRule::over_target}) {
    for (double a_max : {6.8, 8.0, 12.0}) {
      ElasticConfig cfg = elastic_preset("local");
      cfg.expand_rule = rule;
      auto s = axis_setup(w);
      auto r = s.renderer();
      const auto res = elastic_band_search(r, a_max, cfg);
      const auto ref = oracle::run_search(
          [](double a, double b) { return std::abs(oracle::saturating(a, 15.0, 0.5) - oracle::saturating(b, 15.0, 0.5)); },
          a_max, params_of(cfg));

      ASSERT_EQ(res.history.size(), ref.history.size()) << a_max;
      for (std::size_t i = 0; i < ref.history.size(); ++i) {
        ASSERT_EQ(res.history[i].size(), ref.history[i].size());
        for (std::size_t k = 0; k < ref.history[i].size(); ++k) EXPECT_NEAR(res.history[i][k], ref.history[i][k], 1e-9);
      }
      EXPECT_EQ(res.band.iterations_used, ref.iterations);
      ASSERT_EQ(res.valid_points.size(), ref.valid.size());
      for (std::size_t i = 0; i < ref.valid.size(); ++i) EXPECT_NEAR(res.valid_points[i], ref.valid[i], 1e-9);

      expect_band_shape(res, cfg);
      const auto& g = res.band.normalized_gaps;
      EXPECT_LT(*std::max_element(g.begin(), g.end()) / *std::min_element(g.begin(), g.end()), 2.0);
      for (std::size_t i = 0; i < res.valid_points.size(); ++i) {
        const double d = r.distance(0.0, res.valid_points[i]);
        EXPECT_GE(d, cfg.sim_min);
        EXPECT_LE(d, cfg.sim_max);
        EXPECT_EQ(d, res.valid_distances[i]);
      }
      EXPECT_EQ(res.band.generations_used, r.generations());
    }
  }
}

TEST(Elastic, EveryIterationKeepsPointsOrdered) {
  auto s = axis_setup(saturating_world());
  auto r = s.renderer();
  ElasticConfig cfg = elastic_preset("global");
  const auto res = elastic_band_search(r, 20.0, cfg);
  for (const auto& x : res.history) {
    ASSERT_LE(x.size(), 10u);
    for (std::size_t i = 0; i + 1 < x.size(); ++i) EXPECT_GE(x[i + 1] - x[i], cfg.eps - 1e-12);
  }
}

TEST(Elastic, LinearWorldEquispacedIsFixedPoint) {
  const auto w = saturating_world();
  auto s = axis_setup(std::make_unique<testsupport::LinearBackend>(w, 1.0 / 128.0), w);
  auto r = s.renderer();
  const auto res = elastic_band_search(r, 3.0, ElasticConfig{});
  ASSERT_EQ(res.history.size(), 1u);
  EXPECT_EQ(res.band.iterations_used, 1);
  EXPECT_EQ(res.band.points, (std::vector<double>{0.0, 1.0, 2.0, 3.0}));
  for (double g : res.band.normalized_gaps) EXPECT_EQ(g, 1.0 / 32.0);
  EXPECT_EQ(res.band.generations_used, 4u);

  // With a larger slope the search expands first, then settles.
  auto s2 = axis_setup(std::make_unique<testsupport::LinearBackend>(w, 0.25), w);
  auto r2 = s2.renderer();
  const auto big = elastic_band_search(r2, 3.0, ElasticConfig{});
  const auto ref = oracle::run_search([](double a, double b) { return 0.25 * std::abs(a - b); }, 3.0, {});
  EXPECT_EQ(big.history.size(), ref.history.size());
  EXPECT_EQ(big.band.points.size(), ref.points.size());
  for (std::size_t i = 0; i < ref.points.size(); ++i) EXPECT_NEAR(big.band.points[i], ref.points[i], 1e-12);
}

TEST(Elastic, DegenerateRangeDoesNotCrash) {
  auto s = axis_setup(saturating_world());
  auto r = s.renderer();
  ElasticConfig cfg;
  const auto res = elastic_band_search(r, cfg.a_min + cfg.eps, cfg);
  EXPECT_EQ(res.band.points.size(), 4u);
  EXPECT_TRUE(res.valid_points.empty());
  EXPECT_FALSE(res.diagnostics.empty());
  EXPECT_THROW((void)elastic_band_search(r, cfg.a_min, cfg), Error);
}

TEST(Elastic, Deterministic) {
  const auto w = saturating_world();
  std::vector<CalibrationResult> runs;
  for (int i = 0; i < 3; ++i) {
    auto s = axis_setup(w);
    auto r = s.renderer(7);
    runs.push_back(calibrate(r, 6.8, elastic_preset("local")));
  }
  for (int i = 1; i < 3; ++i) {
    EXPECT_EQ(runs[i].valid_points, runs[0].valid_points);
    EXPECT_EQ(runs[i].band.points, runs[0].band.points);
    EXPECT_EQ(runs[i].history, runs[0].history);
    EXPECT_EQ(runs[i].generations_total, runs[0].generations_total);
  }
  EXPECT_LE(runs[0].extrapolation_steps_taken, 3);
}

TEST(Elastic, ControlPointSetJson) {
  ControlPointSet b{{0, 1, 2}, {0.1, 0.2}, {0.4, 0.8}, 5, 12};
  const auto back = control_point_set_from_json(to_json(b));
  EXPECT_EQ(back.points, b.points);
  EXPECT_EQ(back.normalized_gaps, b.normalized_gaps);
  EXPECT_EQ(back.iterations_used, 5);
  EXPECT_EQ(back.generations_used, 12u);
}
