#include "steerkit/metrics.hpp"

#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "steerkit/error.hpp"
#include "steerkit/synthetic_backend.hpp"

namespace steerkit {

namespace {

using nlohmann::json;

double sum(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

std::vector<double> trace_alphas(double alpha_max, std::size_t n) {
  if (n < 2) throw Error(Errc::usage, fmt::format("a slider trace needs at least 2 points, got {}", n));
  if (!std::isfinite(alpha_max)) throw Error(Errc::validation, "alpha_max must be finite");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = static_cast<double>(i) / static_cast<double>(n - 1) * alpha_max;
  }
  return out;
}

void validate(const SliderTrace& t) {
  const std::size_t n = t.alphas.size();
  if (n < 2) throw Error(Errc::validation, "trace needs at least 2 points");
  if (t.semantic_scores.size() != n || t.refs.size() != n) {
    throw Error(Errc::validation,
                fmt::format("trace has {} alphas, {} scores, {} refs", n, t.semantic_scores.size(),
                            t.refs.size()));
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double want = static_cast<double>(i) / static_cast<double>(n - 1) * t.alpha_max;
    if (std::abs(t.alphas[i] - want) > 1e-9) {
      throw Error(Errc::validation,
                  fmt::format("trace alpha {} is {}, expected {}", i, t.alphas[i], want));
    }
  }
}

Increments increments(const SliderTrace& trace, const DistanceOracle& dist) {
  validate(trace);
  Increments inc;
  for (std::size_t i = 0; i + 1 < trace.size(); ++i) {
    inc.dv.push_back(std::abs(trace.semantic_scores[i + 1] - trace.semantic_scores[i]));
    inc.dd.push_back(dist(trace.refs[i + 1], trace.refs[i]));
  }
  return inc;
}

IncrementDistributions normalize_increments(std::span<const double> dv, std::span<const double> dd,
                                            double epsilon) {
  if (dv.empty() || dv.size() != dd.size()) {
    throw Error(Errc::validation,
                fmt::format("increment lists must be equal and nonempty ({} vs {})", dv.size(),
                            dd.size()));
  }
  if (!(epsilon > 0.0)) throw Error(Errc::validation, "epsilon must be positive");
  IncrementDistributions d;
  d.epsilon_used = epsilon;
  const double sv = sum(dv) + epsilon;
  const double sd = sum(dd) + epsilon;
  for (double v : dv) d.p.push_back(v / sv);
  for (double v : dd) d.q.push_back(v / sd);
  return d;
}

double mid_dist(const IncrementDistributions& d) {
  if (d.p.size() != d.q.size()) {
    throw Error(Errc::validation,
                fmt::format("distribution lengths differ ({} vs {})", d.p.size(), d.q.size()));
  }
  double tv = 0.0;
  for (std::size_t i = 0; i < d.p.size(); ++i) tv += std::abs(d.p[i] - d.q[i]);
  return 0.5 * tv;
}

std::vector<CurveRow> tradeoff_curve(std::span<const SliderTrace> traces, const DistanceOracle& dist) {
  if (traces.empty()) throw Error(Errc::validation, "no traces");
  for (const auto& t : traces) validate(t);
  const std::size_t n = traces.front().size();
  for (const auto& t : traces) {
    if (t.size() != n) throw Error(Errc::validation, "traces differ in length");
  }
  std::vector<CurveRow> rows(n);
  for (std::size_t i = 0; i < n; ++i) {
    rows[i].alpha = traces.front().alphas[i];
    for (const auto& t : traces) {
      rows[i].vqa += t.semantic_scores[i];
      rows[i].dreamsim += i == 0 ? 0.0 : dist(t.refs[0], t.refs[i]);
    }
    rows[i].vqa /= static_cast<double>(traces.size());
    rows[i].dreamsim /= static_cast<double>(traces.size());
  }
  return rows;
}

std::string curve_csv(std::span<const CurveRow> rows) {
  std::string out = "alpha,vqa,dreamsim\n";
  for (const auto& r : rows) out += fmt::format("{:.9g},{:.9g},{:.9g}\n", r.alpha, r.vqa, r.dreamsim);
  return out;
}

std::string increments_csv(const SliderTrace& trace, const Increments& inc,
                           const IncrementDistributions& d) {
  std::string out = "step,alpha_from,alpha_to,dv,dd,p,q\n";
  for (std::size_t i = 0; i < inc.dv.size(); ++i) {
    out += fmt::format("{},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g}\n", i, trace.alphas[i],
                       trace.alphas[i + 1], inc.dv[i], inc.dd[i], d.p[i], d.q[i]);
  }
  return out;
}

json trace_to_json(const SliderTrace& t) {
  json ids = json::array();
  for (const auto& r : t.refs) ids.push_back(r.id);
  return json{{"alpha_max", t.alpha_max},
              {"N", t.size()},
              {"alphas", t.alphas},
              {"image_ids", ids},
              {"semantic_scores", t.semantic_scores}};
}

SliderTrace trace_from_json(const json& j) {
  try {
    SliderTrace t;
    t.alpha_max = j.at("alpha_max").get<double>();
    t.alphas = j.at("alphas").get<std::vector<double>>();
    t.semantic_scores = j.at("semantic_scores").get<std::vector<double>>();
    const auto alphas = t.alphas;
    std::size_t i = 0;
    for (const auto& id : j.at("image_ids")) {
      ImageRef r;
      r.id = id.get<std::string>();
      r.alpha = i < alphas.size() ? alphas[i] : 0.0;
      t.refs.push_back(std::move(r));
      ++i;
    }
    if (j.at("N").get<std::size_t>() != t.alphas.size()) {
      throw Error(Errc::validation, "trace N disagrees with its alphas");
    }
    validate(t);
    return t;
  } catch (const json::exception& e) {
    throw Error(Errc::parse, fmt::format("bad trace bundle: {}", e.what()));
  }
}

HttpScorer::HttpScorer(HttpScorerConfig config) : config_(std::move(config)) {
  split_url(config_.base_url);
}

double HttpScorer::score(const ImageRef& image, const std::string& question) {
  const json reply = post_json(join_url(config_.base_url, "/v1/score"),
                               json{{"image_id", image.id}, {"question", question}}, config_.http);
  if (!reply.contains("score") || !reply.at("score").is_number()) {
    throw Error(Errc::backend_status, fmt::format("scorer reply lacks a numeric score: {}", reply.dump()));
  }
  const double s = reply.at("score").get<double>();
  if (!std::isfinite(s)) throw Error(Errc::backend_status, "scorer returned a non-finite score");
  return s;
}

SyntheticScorer::SyntheticScorer(double max_distance, double saturation_tau, double gain)
    : max_distance_(max_distance), tau_(saturation_tau), gain_(gain) {
  if (!(tau_ > 0.0)) throw Error(Errc::validation, "saturation_tau must be positive");
}

double SyntheticScorer::score(const ImageRef& image, const std::string&) {
  const double a = SyntheticBackend::effective_alpha(image.id);
  return gain_ * max_distance_ * (1.0 - std::exp(-a / tau_));
}

SliderTrace build_trace(Renderer& renderer, Scorer& scorer, const std::string& question,
                        double alpha_max, std::size_t n) {
  SliderTrace t;
  t.alpha_max = alpha_max;
  t.alphas = trace_alphas(alpha_max, n);
  t.refs = renderer.render(t.alphas);
  for (const auto& r : t.refs) t.semantic_scores.push_back(scorer.score(r, question));
  return t;
}

}  // namespace steerkit
