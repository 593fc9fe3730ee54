#pragma once

// Slider continuity: how evenly semantic change tracks perceptual change
// across N equally spaced slider positions, plus the edit-strength versus
// distance-to-original curve.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "steerkit/backend.hpp"
#include "steerkit/elastic.hpp"
#include "steerkit/http_util.hpp"

namespace steerkit {

inline constexpr double kMidEpsilon = 1e-8;
inline constexpr std::size_t kDefaultTracePoints = 6;

struct SliderTrace {
  double alpha_max = 0.0;
  std::vector<double> alphas;
  std::vector<double> semantic_scores;
  std::vector<ImageRef> refs;

  std::size_t size() const { return alphas.size(); }
};

// alpha_i = i / (n - 1) * alpha_max. Throws Usage for n < 2.
std::vector<double> trace_alphas(double alpha_max, std::size_t n);
void validate(const SliderTrace& trace);

using DistanceOracle = std::function<double(const ImageRef&, const ImageRef&)>;

struct Increments {
  std::vector<double> dv;  // |score_{i+1} - score_i|
  std::vector<double> dd;  // dist(ref_{i+1}, ref_i)
};

Increments increments(const SliderTrace& trace, const DistanceOracle& dist);

struct IncrementDistributions {
  std::vector<double> p;
  std::vector<double> q;
  double epsilon_used = kMidEpsilon;
};

// Each list divided by (its sum + epsilon).
IncrementDistributions normalize_increments(std::span<const double> dv, std::span<const double> dd,
                                            double epsilon = kMidEpsilon);

// Total variation distance 0.5 * sum |p_i - q_i|.
double mid_dist(const IncrementDistributions& d);

struct CurveRow {
  double alpha = 0.0;
  double vqa = 0.0;
  double dreamsim = 0.0;
};

// Per slider position: mean score and mean distance to the position-0
// render, across traces sharing the same alphas.
std::vector<CurveRow> tradeoff_curve(std::span<const SliderTrace> traces, const DistanceOracle& dist);

// Header plus rows, reals at 9 significant digits.
std::string curve_csv(std::span<const CurveRow> rows);
std::string increments_csv(const SliderTrace& trace, const Increments& inc,
                           const IncrementDistributions& d);

nlohmann::json trace_to_json(const SliderTrace& trace);
SliderTrace trace_from_json(const nlohmann::json& j);

class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual double score(const ImageRef& image, const std::string& question) = 0;
};

struct HttpScorerConfig {
  std::string base_url;
  HttpOptions http;
};

// POST /v1/score {"image_id", "question"} -> {"score"}.
class HttpScorer final : public Scorer {
 public:
  explicit HttpScorer(HttpScorerConfig config);
  double score(const ImageRef& image, const std::string& question) override;

 private:
  HttpScorerConfig config_;
};

// gain * D * (1 - exp(-alpha / tau)) for synthetic image ids, i.e. a score
// proportional to the synthetic world's distance from the unsteered render.
class SyntheticScorer final : public Scorer {
 public:
  SyntheticScorer(double max_distance, double saturation_tau, double gain = 1.0);
  double score(const ImageRef& image, const std::string& question) override;

 private:
  double max_distance_;
  double tau_;
  double gain_;
};

// Renders the n trace positions (batched through the renderer's cache) and
// scores each render.
SliderTrace build_trace(Renderer& renderer, Scorer& scorer, const std::string& question,
                        double alpha_max, std::size_t n = kDefaultTracePoints);

}  // namespace steerkit
