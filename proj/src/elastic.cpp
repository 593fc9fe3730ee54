#include "steerkit/elastic.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numbers>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "steerkit/error.hpp"

namespace steerkit {

namespace {

using nlohmann::json;

void require(bool ok, std::string_view what) {
  if (!ok) throw Error(Errc::validation, fmt::format("elastic config: {}", what));
}

std::vector<double> linspace(double lo, double hi, int n) {
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out[i] = lo + (hi - lo) * i / (n - 1);
  out.back() = hi;
  return out;
}

std::vector<std::pair<double, double>> neighbours(const std::vector<double>& x) {
  std::vector<std::pair<double, double>> out;
  for (std::size_t i = 0; i + 1 < x.size(); ++i) out.emplace_back(x[i], x[i + 1]);
  return out;
}

}  // namespace

std::string_view expand_rule_name(ExpandRule r) {
  return r == ExpandRule::literal ? "literal" : "over_target";
}

ExpandRule parse_expand_rule(std::string_view name) {
  if (name == "literal") return ExpandRule::literal;
  if (name == "over_target") return ExpandRule::over_target;
  throw Error(Errc::usage, fmt::format("unknown expand rule '{}' (literal, over_target)", name));
}

void validate(const ElasticConfig& c) {
  require(std::isfinite(c.a_min) && std::isfinite(c.a_max_cap), "bounds must be finite");
  require(c.a_min >= 0.0 && c.a_min < c.a_max_cap, "need 0 <= a_min < a_max_cap");
  require(c.n_initial >= 2 && c.n_initial <= c.n_max, "need 2 <= N0 <= Nmax");
  require(c.move_fraction > 0.0 && c.move_fraction <= 1.0, "need 0 < move_fraction <= 1");
  require(c.sim_min >= 0.0 && c.sim_min < c.sim_max, "need 0 <= sim_min < sim_max");
  require(c.max_iterations >= 1, "need T >= 1");
  require(c.target_gap > 0.0, "target_gap must be positive");
  require(c.eps > 0.0, "eps must be positive");
  require(c.lam >= 0.0, "lam must be nonnegative");
  require(c.expand_threshold >= 0.0, "Texpand must be nonnegative");
  require(!c.eta0 || *c.eta0 > 0.0, "eta0 must be positive");
  require(c.max_extrapolation_steps >= 0, "max_extrapolation_steps must be nonnegative");
}

ElasticConfig elastic_preset(std::string_view name) {
  ElasticConfig c;
  if (name == "local") {
    c.sim_min = 0.05;
    c.sim_max = 0.15;
  } else if (name == "global" || name == "stylization") {
    c.sim_min = 0.15;
    c.sim_max = 0.30;
  } else if (name == "runtime-local") {
    c.sim_min = 0.15;
    c.sim_max = 0.40;
  } else if (name == "runtime-global" || name == "runtime-stylization") {
    c.sim_min = 0.25;
    c.sim_max = 0.40;
  } else {
    throw Error(Errc::usage, fmt::format("unknown elastic preset '{}'", name));
  }
  return c;
}

ElasticConfig elastic_preset(EditType edit_type) {
  return elastic_preset(edit_type_name(edit_type));
}

std::vector<std::string> elastic_preset_names() {
  return {"local",         "global",         "stylization",
          "runtime-local", "runtime-global", "runtime-stylization"};
}

json to_json(const ElasticConfig& c) {
  json j{{"a_min", c.a_min},
         {"a_max_cap", c.a_max_cap},
         {"target_gap", c.target_gap},
         {"T", c.max_iterations},
         {"Texpand", c.expand_threshold},
         {"N0", c.n_initial},
         {"Nmax", c.n_max},
         {"lam", c.lam},
         {"eps", c.eps},
         {"move_fraction", c.move_fraction},
         {"sim_min", c.sim_min},
         {"sim_max", c.sim_max},
         {"max_extrapolation_steps", c.max_extrapolation_steps},
         {"expand_rule", expand_rule_name(c.expand_rule)}};
  j["eta0"] = c.eta0 ? json(*c.eta0) : json(nullptr);
  return j;
}

ElasticConfig elastic_config_from_json(const json& j, ElasticConfig c) {
  if (!j.is_object()) throw Error(Errc::parse, "elastic config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "a_min") c.a_min = v.get<double>();
      else if (key == "a_max_cap") c.a_max_cap = v.get<double>();
      else if (key == "target_gap") c.target_gap = v.get<double>();
      else if (key == "T") c.max_iterations = v.get<int>();
      else if (key == "Texpand") c.expand_threshold = v.get<double>();
      else if (key == "N0") c.n_initial = v.get<int>();
      else if (key == "Nmax") c.n_max = v.get<int>();
      else if (key == "lam") c.lam = v.get<double>();
      else if (key == "eps") c.eps = v.get<double>();
      else if (key == "move_fraction") c.move_fraction = v.get<double>();
      else if (key == "sim_min") c.sim_min = v.get<double>();
      else if (key == "sim_max") c.sim_max = v.get<double>();
      else if (key == "max_extrapolation_steps") c.max_extrapolation_steps = v.get<int>();
      else if (key == "expand_rule") c.expand_rule = parse_expand_rule(v.get<std::string>());
      else if (key == "eta0") c.eta0 = v.is_null() ? std::nullopt : std::optional(v.get<double>());
      else throw Error(Errc::validation, fmt::format("unknown elastic config key '{}'", key));
    }
  } catch (const json::exception& e) {
    throw Error(Errc::parse, fmt::format("bad elastic config: {}", e.what()));
  }
  validate(c);
  return c;
}

double resolve_eta0(const ElasticConfig& cfg, double alpha_max) {
  if (cfg.eta0) return *cfg.eta0;
  return (alpha_max - cfg.a_min) / (2.0 * (cfg.n_initial - 1));
}

double eta(int t, const ElasticConfig& cfg, double eta0) {
  if (t < 1 || t > cfg.max_iterations) {
    throw Error(Errc::usage, fmt::format("iteration {} outside [1, {}]", t, cfg.max_iterations));
  }
  return eta0 * 0.5 * (1.0 + std::cos(std::numbers::pi * (t - 1) / cfg.max_iterations));
}

double init_alpha_max(std::span<const double> raw_s, std::span<const Vector> pos_pools,
                      const ElasticConfig& cfg) {
  if (pos_pools.empty()) throw Error(Errc::empty_dataset, "no positive pools to project");
  const double m = max_positive_projection(raw_s, pos_pools);
  if (!(m > 0.0)) {
    throw Error(Errc::non_positive_projection,
                fmt::format("largest projection of the positive examples is {:.6g}; the "
                            "direction does not point toward the positive pole",
                            m));
  }
  if (m > cfg.a_max_cap) {
    spdlog::warn("alpha_max {:.6g} clamped to a_max_cap {:.6g}", m, cfg.a_max_cap);
    return cfg.a_max_cap;
  }
  return m;
}

double init_alpha_max(const SteeringVector& vec, const ElasticConfig& cfg) {
  if (!vec.max_projection) {
    throw Error(Errc::validation,
                "steering vector carries no max_projection; rebuild it or pass --alpha-max");
  }
  const Vector one{*vec.max_projection};
  const std::vector<Vector> pools{{1.0}};
  return init_alpha_max(one, pools, cfg);
}

Renderer::Renderer(Backend& backend, PromptEmbedding base, TokenSpan span, SteeringVector vec,
                   std::uint64_t seed, Schedule schedule)
    : backend_(backend),
      base_(std::move(base)),
      span_(std::move(span)),
      vec_(std::move(vec)),
      seed_(seed),
      schedule_(schedule),
      max_batch_(std::max<std::size_t>(1, backend.capabilities().max_batch)) {
  span_.validate_for(base_);
}

std::int64_t Renderer::key(double alpha) { return std::llround(alpha * 1e9); }

std::vector<ImageRef> Renderer::render(std::span<const double> alphas) {
  std::vector<double> missing;
  {
    std::lock_guard lock(mu_);
    std::set<std::int64_t> queued;
    for (double a : alphas) {
      const auto k = key(a);
      if (!renders_.count(k) && queued.insert(k).second) missing.push_back(a);
    }
  }
  for (std::size_t begin = 0; begin < missing.size(); begin += max_batch_) {
    const std::size_t end = std::min(missing.size(), begin + max_batch_);
    std::vector<PromptEmbedding> embs;
    for (std::size_t i = begin; i < end; ++i) {
      embs.push_back(apply_steering(base_, span_, vec_, missing[i]));
    }
    auto refs = backend_.generate_batch(embs, seed_, schedule_);
    std::lock_guard lock(mu_);
    for (std::size_t i = begin; i < end; ++i) {
      refs[i - begin].alpha = missing[i];
      renders_.emplace(key(missing[i]), std::move(refs[i - begin]));
    }
  }
  std::lock_guard lock(mu_);
  std::vector<ImageRef> out;
  out.reserve(alphas.size());
  for (double a : alphas) out.push_back(renders_.at(key(a)));
  return out;
}

ImageRef Renderer::render(double alpha) {
  const double one[] = {alpha};
  return render(one).front();
}

double Renderer::distance(double a, double b) {
  const std::pair<double, double> one[] = {{a, b}};
  return distances(one).front();
}

std::vector<double> Renderer::distances(std::span<const std::pair<double, double>> pairs) {
  std::vector<double> alphas;
  for (const auto& [a, b] : pairs) {
    alphas.push_back(a);
    alphas.push_back(b);
  }
  render(alphas);

  using Key = std::pair<std::int64_t, std::int64_t>;
  const auto pair_key = [](double a, double b) {
    const auto ka = key(a);
    const auto kb = key(b);
    return ka <= kb ? Key{ka, kb} : Key{kb, ka};
  };

  std::vector<std::pair<Key, std::pair<ImageRef, ImageRef>>> todo;
  {
    std::lock_guard lock(mu_);
    std::set<Key> queued;
    for (const auto& [a, b] : pairs) {
      const Key k = pair_key(a, b);
      if (k.first == k.second || dists_.count(k) || !queued.insert(k).second) continue;
      todo.push_back({k, {renders_.at(k.first), renders_.at(k.second)}});
    }
  }
  for (std::size_t begin = 0; begin < todo.size(); begin += max_batch_) {
    const std::size_t end = std::min(todo.size(), begin + max_batch_);
    std::vector<std::future<double>> inflight;
    for (std::size_t i = begin; i < end; ++i) {
      inflight.push_back(std::async(std::launch::async, [this, &refs = todo[i].second] {
        return backend_.distance(refs.first, refs.second);
      }));
    }
    std::vector<double> got;
    for (auto& f : inflight) got.push_back(f.get());
    std::lock_guard lock(mu_);
    for (std::size_t i = begin; i < end; ++i) dists_[todo[i].first] = got[i - begin];
  }

  std::lock_guard lock(mu_);
  std::vector<double> out;
  out.reserve(pairs.size());
  for (const auto& [a, b] : pairs) {
    const Key k = pair_key(a, b);
    out.push_back(k.first == k.second ? 0.0 : dists_.at(k));
  }
  return out;
}

std::size_t Renderer::generations() const {
  std::lock_guard lock(mu_);
  return renders_.size();
}

ExtrapolationResult extrapolate_alpha_max(Renderer& renderer, double alpha_max,
                                          const ElasticConfig& cfg) {
  if (!(alpha_max > 0.0)) {
    throw Error(Errc::validation, fmt::format("alpha_max must be positive, got {}", alpha_max));
  }
  ExtrapolationResult r{alpha_max, 0};
  while (r.steps < cfg.max_extrapolation_steps) {
    const double candidate = 2.0 * r.alpha_max;
    if (candidate > cfg.a_max_cap) break;
    const double d = renderer.distance(0.0, candidate);
    spdlog::debug("extrapolation probe alpha={:.6g} distance={:.6g}", candidate, d);
    if (d > cfg.sim_max) break;
    r.alpha_max = candidate;
    ++r.steps;
  }
  return r;
}

json to_json(const ControlPointSet& band) {
  return json{{"points", band.points},
              {"gaps", band.gaps},
              {"normalized_gaps", band.normalized_gaps},
              {"iterations_used", band.iterations_used},
              {"generations_used", band.generations_used}};
}

ControlPointSet control_point_set_from_json(const json& j) {
  try {
    ControlPointSet b;
    b.points = j.at("points").get<std::vector<double>>();
    b.gaps = j.at("gaps").get<std::vector<double>>();
    b.normalized_gaps = j.at("normalized_gaps").get<std::vector<double>>();
    b.iterations_used = j.at("iterations_used").get<int>();
    b.generations_used = j.at("generations_used").get<std::size_t>();
    if (!b.points.empty() && b.gaps.size() + 1 != b.points.size()) {
      throw Error(Errc::validation, "band gaps must number one fewer than points");
    }
    if (!std::is_sorted(b.points.begin(), b.points.end(), std::less_equal<>())) {
      throw Error(Errc::validation, "band points must be strictly increasing");
    }
    return b;
  } catch (const json::exception& e) {
    throw Error(Errc::parse, fmt::format("bad control point set: {}", e.what()));
  }
}

CalibrationResult elastic_band_search(Renderer& renderer, double alpha_max,
                                      const ElasticConfig& cfg) {
  validate(cfg);
  if (!(alpha_max > cfg.a_min)) {
    throw Error(Errc::validation,
                fmt::format("alpha_max {} must exceed a_min {}", alpha_max, cfg.a_min));
  }
  CalibrationResult result;
  result.alpha_max_initial = alpha_max;
  result.alpha_max_used = alpha_max;
  const std::size_t generations_before = renderer.generations();

  const double eta0 = resolve_eta0(cfg, alpha_max);
  const double move_threshold = cfg.move_fraction * cfg.eps;
  const double expand_over =
      cfg.expand_rule == ExpandRule::literal ? cfg.expand_threshold : 1.0 + cfg.expand_threshold;
  const auto n_max = static_cast<std::size_t>(cfg.n_max);

  std::vector<double> x = linspace(cfg.a_min, alpha_max, cfg.n_initial);
  int t = 1;
  for (; t <= cfg.max_iterations; ++t) {
    const auto pairs = neighbours(x);
    std::vector<double> g = renderer.distances(pairs);
    for (double& v : g) v /= cfg.target_gap;

    // max_element returns the first maximum, so ties go to the lowest index.
    const auto k = static_cast<std::size_t>(std::max_element(g.begin(), g.end()) - g.begin());
    if (g[k] > expand_over && x.size() < n_max) {
      if (x[k + 1] - x[k] >= 2.0 * cfg.eps) {
        x.insert(x.begin() + static_cast<std::ptrdiff_t>(k) + 1, 0.5 * (x[k] + x[k + 1]));
        result.history.push_back(x);
        continue;
      }
      result.diagnostics.push_back(
          fmt::format("iteration {}: gap [{:.6g}, {:.6g}] too narrow to split", t, x[k], x[k + 1]));
    }

    bool moved = false;
    const double base_step = eta(t, cfg, eta0);
    for (std::size_t i = 1; i + 1 < x.size(); ++i) {
      const double left = g[i - 1];
      const double right = g[i];
      const double lo = x[i - 1] + cfg.eps;
      const double hi = x[i + 1] - cfg.eps;
      // Equal gaps are already balanced; a squeezed point has nowhere to go.
      if (left == right || lo > hi) continue;
      const double step = base_step * (1.0 + cfg.lam * std::abs(left - right));
      const double next = left > right ? std::max(lo, x[i] - step) : std::min(hi, x[i] + step);
      if (std::abs(next - x[i]) >= move_threshold) {
        x[i] = next;
        moved = true;
      }
    }
    result.history.push_back(x);
    if (!moved) break;
  }
  result.band.iterations_used = std::min(t, cfg.max_iterations);

  const auto final_pairs = neighbours(x);
  result.band.gaps = renderer.distances(final_pairs);
  for (double gap : result.band.gaps) result.band.normalized_gaps.push_back(gap / cfg.target_gap);
  result.band.points = x;

  std::vector<std::pair<double, double>> to_origin;
  for (double a : x) to_origin.emplace_back(0.0, a);
  const auto sims = renderer.distances(to_origin);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (cfg.sim_min <= sims[i] && sims[i] <= cfg.sim_max) {
      result.valid_points.push_back(x[i]);
      result.valid_distances.push_back(sims[i]);
    }
  }
  if (result.valid_points.empty()) {
    result.diagnostics.push_back(fmt::format(
        "no control point lies within [{}, {}] of the unsteered render; distances span "
        "[{:.6g}, {:.6g}]",
        cfg.sim_min, cfg.sim_max, *std::min_element(sims.begin(), sims.end()),
        *std::max_element(sims.begin(), sims.end())));
  }
  result.band.generations_used = renderer.generations() - generations_before;
  result.generations_total = renderer.generations();
  return result;
}

CalibrationResult calibrate(Renderer& renderer, double alpha_max_initial,
                            const ElasticConfig& cfg) {
  validate(cfg);
  const auto ext = extrapolate_alpha_max(renderer, alpha_max_initial, cfg);
  CalibrationResult result = elastic_band_search(renderer, ext.alpha_max, cfg);
  result.alpha_max_initial = alpha_max_initial;
  result.extrapolation_steps_taken = ext.steps;
  result.generations_total = renderer.generations();
  return result;
}

}  // namespace steerkit
