#pragma once

// Elastic range search over steering magnitudes.
//
// Control points on [a_min, alpha_max] are rendered, neighbouring renders
// are compared with the backend's perceptual distance, and the points are
// expanded (midpoint insertion) and moved until the gaps even out. The
// surviving points whose distance to the unsteered render lies inside
// [sim_min, sim_max] form the slider.

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "steerkit/backend.hpp"
#include "steerkit/tensor.hpp"
#include "steerkit/token_select.hpp"

namespace steerkit {

enum class ExpandRule {
  literal,      // expand when gap / target_gap > expand_threshold
  over_target,  // expand when gap / target_gap > 1 + expand_threshold
};

std::string_view expand_rule_name(ExpandRule r);
ExpandRule parse_expand_rule(std::string_view name);

struct ElasticConfig {
  double a_min = 0.0;
  double a_max_cap = 100.0;
  double target_gap = 0.25;
  int max_iterations = 25;
  double expand_threshold = 0.1;
  int n_initial = 4;
  int n_max = 10;
  double lam = 1.0;
  double eps = 0.01;
  double move_fraction = 0.5;
  double sim_min = 0.05;
  double sim_max = 0.15;
  // Unset: half the initial spacing, (alpha_max - a_min) / (2 (n_initial - 1)).
  std::optional<double> eta0;
  int max_extrapolation_steps = 3;
  ExpandRule expand_rule = ExpandRule::literal;
};

// Throws Validation naming the first violated constraint.
void validate(const ElasticConfig& cfg);

// "local", "global", "stylization" use the search-hyperparameter bands;
// "runtime-local", "runtime-global", "runtime-stylization" the bands used
// for the timing runs.
ElasticConfig elastic_preset(std::string_view name);
ElasticConfig elastic_preset(EditType edit_type);
std::vector<std::string> elastic_preset_names();

nlohmann::json to_json(const ElasticConfig& cfg);
// Fields absent from `j` keep their value in `base`; unknown keys are
// rejected.
ElasticConfig elastic_config_from_json(const nlohmann::json& j, ElasticConfig base = {});

double resolve_eta0(const ElasticConfig& cfg, double alpha_max);
// Cosine-decayed step size for iteration t in [1, max_iterations].
double eta(int t, const ElasticConfig& cfg, double eta0);

// max_j <s_raw, pool_j>, clamped to a_max_cap with a warning. Throws
// NonPositiveProjection when the maximum is <= 0.
double init_alpha_max(std::span<const double> raw_s, std::span<const Vector> pos_pools,
                      const ElasticConfig& cfg);
// Same, from the projection recorded in a built vector.
double init_alpha_max(const SteeringVector& vec, const ElasticConfig& cfg);

// g(p, alpha) and dist() for one prompt, with both cached on alpha rounded
// to 1e-9. Renders are issued in batches of at most max_batch.
class Renderer {
 public:
  Renderer(Backend& backend, PromptEmbedding base, TokenSpan span, SteeringVector vec,
           std::uint64_t seed, Schedule schedule);

  ImageRef render(double alpha);
  std::vector<ImageRef> render(std::span<const double> alphas);
  double distance(double a, double b);
  // Queries missing pairs concurrently, up to max_batch at a time.
  std::vector<double> distances(std::span<const std::pair<double, double>> pairs);

  // Distinct alpha values rendered so far.
  std::size_t generations() const;
  const Schedule& schedule() const { return schedule_; }
  std::uint64_t seed() const { return seed_; }
  Backend& backend() { return backend_; }

 private:
  static std::int64_t key(double alpha);

  Backend& backend_;
  PromptEmbedding base_;
  TokenSpan span_;
  SteeringVector vec_;
  std::uint64_t seed_;
  Schedule schedule_;
  std::size_t max_batch_;

  mutable std::mutex mu_;
  std::map<std::int64_t, ImageRef> renders_;
  std::map<std::pair<std::int64_t, std::int64_t>, double> dists_;
};

struct ExtrapolationResult {
  double alpha_max = 0.0;
  int steps = 0;
};

// Doubles alpha_max while the doubled render stays within sim_max of the
// unsteered one and below a_max_cap, at most max_extrapolation_steps times.
ExtrapolationResult extrapolate_alpha_max(Renderer& renderer, double alpha_max,
                                          const ElasticConfig& cfg);

struct ControlPointSet {
  std::vector<double> points;
  std::vector<double> gaps;
  std::vector<double> normalized_gaps;
  int iterations_used = 0;
  std::size_t generations_used = 0;
};

struct CalibrationResult {
  std::vector<double> valid_points;
  // Distance of each valid point to the unsteered render.
  std::vector<double> valid_distances;
  ControlPointSet band;
  double alpha_max_initial = 0.0;
  double alpha_max_used = 0.0;
  int extrapolation_steps_taken = 0;
  std::size_t generations_total = 0;
  // Point set after every iteration, for inspection and tests.
  std::vector<std::vector<double>> history;
  std::vector<std::string> diagnostics;
};

nlohmann::json to_json(const ControlPointSet& band);
ControlPointSet control_point_set_from_json(const nlohmann::json& j);

// The band search proper, on [a_min, alpha_max]. An empty valid set is
// reported through diagnostics, not thrown.
CalibrationResult elastic_band_search(Renderer& renderer, double alpha_max,
                                      const ElasticConfig& cfg);

// init (given alpha_max) -> extrapolation -> band search.
CalibrationResult calibrate(Renderer& renderer, double alpha_max_initial,
                            const ElasticConfig& cfg);

}  // namespace steerkit
