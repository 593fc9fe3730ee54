#include "steerkit/engine.hpp"

#include <algorithm>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "steerkit/codec.hpp"
#include "steerkit/error.hpp"
#include "steerkit/tensor_io.hpp"

namespace steerkit {

namespace {

using nlohmann::json;

json schedule_json(const Schedule& s) {
  return json{{"kind", schedule_name(s.mode)}, {"total_steps", s.total_steps}};
}

std::string replace_concept(std::string text, const std::string& concept_name) {
  const std::string key = "{concept}";
  for (auto pos = text.find(key); pos != std::string::npos; pos = text.find(key, pos)) {
    text.replace(pos, key.size(), concept_name);
    pos += concept_name.size();
  }
  return text;
}

std::string sanitize(const std::string& name) {
  std::string out;
  for (char c : name) {
    const auto u = static_cast<unsigned char>(c);
    out += std::isalnum(u) || c == '-' || c == '_' ? c : '_';
  }
  return out.empty() ? "concept" : out;
}

// Writes `text` unless an identical file is already there.
void write_once(const std::filesystem::path& path, const std::string& text) {
  if (std::filesystem::exists(path)) {
    if (read_text_file(path) == text) return;
    throw Error(Errc::io, fmt::format("{} exists with different content", path.string()));
  }
  write_text_file(path, text);
}

}  // namespace

std::string file_sha256(const std::filesystem::path& path) { return sha256_hex(read_text_file(path)); }

json to_json(const CalibrationProfile& p) {
  json j{{"id", p.id},
         {"concept", p.concept_name},
         {"vector", {{"path", p.vector_path}, {"sha256", p.vector_sha256}}},
         {"prompt", p.prompt},
         {"edit_type", edit_type_name(p.edit_type)},
         {"cfg", to_json(p.cfg)},
         {"valid_points", p.valid_points},
         {"valid_distances", p.valid_distances},
         {"band", to_json(p.band)},
         {"generations_used", p.generations_used},
         {"encoder_id", p.encoder_id},
         {"seed", p.seed},
         {"selection",
          {{"words", p.selected_words},
           {"source", selection_source_name(p.selection_source)},
           {"prompt_class", p.prompt_class ? json(prompt_class_name(*p.prompt_class)) : json(nullptr)}}},
         {"span", p.span},
         {"schedule", schedule_json(p.schedule)},
         {"alpha_max_initial", p.alpha_max_initial},
         {"alpha_max_used", p.alpha_max_used},
         {"extrapolation_steps", p.extrapolation_steps},
         {"diagnostics", p.diagnostics}};
  return j;
}

CalibrationProfile profile_from_json(const json& j) {
  CalibrationProfile p;
  try {
    p.id = j.at("id").get<std::string>();
    p.concept_name = j.at("concept").get<std::string>();
    p.vector_path = j.at("vector").at("path").get<std::string>();
    p.vector_sha256 = j.at("vector").at("sha256").get<std::string>();
    p.prompt = j.at("prompt").get<std::string>();
    p.edit_type = parse_edit_type(j.at("edit_type").get<std::string>());
    p.cfg = elastic_config_from_json(j.at("cfg"));
    p.valid_points = j.at("valid_points").get<std::vector<double>>();
    p.valid_distances = j.value("valid_distances", std::vector<double>{});
    p.band = control_point_set_from_json(j.at("band"));
    p.generations_used = j.at("generations_used").get<std::size_t>();
    p.encoder_id = j.at("encoder_id").get<std::string>();
    p.seed = j.at("seed").get<std::uint64_t>();
    const auto& sel = j.at("selection");
    p.selected_words = sel.at("words").get<std::vector<std::string>>();
    p.selection_source = sel.at("source").get<std::string>() == "llm" ? SelectionSource::llm
                                                                      : SelectionSource::rule_fallback;
    if (sel.contains("prompt_class") && !sel.at("prompt_class").is_null()) {
      p.prompt_class = sel.at("prompt_class").get<std::string>() == "explicit"
                           ? PromptClass::explicit_prompt
                           : PromptClass::implicit_prompt;
    }
    p.span = j.at("span").get<std::vector<std::size_t>>();
    p.schedule.mode = parse_schedule(j.at("schedule").at("kind").get<std::string>());
    p.schedule.total_steps = j.at("schedule").at("total_steps").get<int>();
    p.alpha_max_initial = j.at("alpha_max_initial").get<double>();
    p.alpha_max_used = j.at("alpha_max_used").get<double>();
    p.extrapolation_steps = j.at("extrapolation_steps").get<int>();
    p.diagnostics = j.value("diagnostics", std::vector<std::string>{});
  } catch (const json::exception& e) {
    throw Error(Errc::parse, fmt::format("bad calibration profile: {}", e.what()));
  }
  if (p.span.empty()) throw Error(Errc::validation, "profile span is empty");
  if (p.selected_words.empty()) throw Error(Errc::validation, "profile selects no words");
  for (double a : p.valid_points) {
    if (std::find(p.band.points.begin(), p.band.points.end(), a) == p.band.points.end()) {
      throw Error(Errc::validation, fmt::format("valid point {} is not a band point", a));
    }
  }
  if (!std::is_sorted(p.valid_points.begin(), p.valid_points.end(), std::less_equal<>())) {
    throw Error(Errc::validation, "valid points must be strictly increasing");
  }
  if (p.extrapolation_steps < 0 || p.extrapolation_steps > p.cfg.max_extrapolation_steps) {
    throw Error(Errc::validation, "extrapolation step count out of range");
  }
  if (compute_profile_id(p) != p.id) {
    spdlog::warn("profile {} content does not match its id; it was edited after calibration", p.id);
  }
  return p;
}

std::string compute_profile_id(const CalibrationProfile& p) {
  json j = to_json(p);
  j.erase("id");
  return sha256_hex(j.dump()).substr(0, 16);
}

json to_json(const Evaluation& e) {
  json curve = json::array();
  for (const auto& r : e.curve) {
    curve.push_back({{"alpha", r.alpha}, {"vqa", r.vqa}, {"dreamsim", r.dreamsim}});
  }
  return json{{"mid", e.mid},
              {"curve", curve},
              {"trace", trace_to_json(e.trace)},
              {"dv", e.increments.dv},
              {"dd", e.increments.dd},
              {"p", e.distributions.p},
              {"q", e.distributions.q},
              {"epsilon", e.distributions.epsilon_used},
              {"oracle", e.oracle},
              {"question", e.question}};
}

Engine::Engine(EngineConfig cfg)
    : Engine(cfg, make_backend(cfg), make_llm(cfg), make_scorer(cfg)) {}

Engine::Engine(EngineConfig cfg, std::unique_ptr<Backend> backend, std::unique_ptr<LlmClient> llm,
               std::unique_ptr<Scorer> scorer)
    : cfg_(std::move(cfg)),
      backend_(std::move(backend)),
      llm_(std::move(llm)),
      scorer_(std::move(scorer)),
      lexicon_(load_lexicon(cfg_)) {
  if (!backend_) throw Error(Errc::usage, "engine needs a backend");
  for (EditType t : {EditType::local, EditType::global, EditType::stylization}) {
    if (!cfg_.presets.count(t)) cfg_.presets[t] = elastic_preset(t);
  }
}

ContrastiveDataset Engine::generate_dataset(const std::string& concept_name, std::size_t k) {
  if (!llm_) throw Error(Errc::usage, "no LLM configured (set llm.kind in the config)");
  return steerkit::generate_dataset(concept_name, k, *llm_);
}

SteeringBuild Engine::build_vector(const ContrastiveDataset& ds) { return build_steering(ds, *backend_); }

TokenSelection Engine::select_tokens(const std::string& prompt, const std::string& concept_name,
                                     EditType edit_type, bool allow_llm) {
  const bool use_llm = allow_llm && llm_ && cfg_.token_selection != "rules";
  if (cfg_.token_selection == "llm" && !llm_) {
    throw Error(Errc::usage, "token_selection is \"llm\" but no LLM is configured");
  }
  if (use_llm) return select_tokens_llm(prompt, concept_name, edit_type, *llm_, &lexicon_);
  return select_tokens_rules(prompt, concept_name, edit_type, lexicon_);
}

Schedule Engine::schedule_for(EditType edit_type) const {
  Schedule s;
  s.total_steps = cfg_.schedule_steps;
  if (cfg_.schedule_mode) {
    s.mode = *cfg_.schedule_mode;
  } else if (backend_->capabilities().supports_image_conditioning) {
    s.mode = ScheduleMode::negated_uniform;
  } else {
    s.mode = edit_type == EditType::local ? ScheduleMode::linear_ramp : ScheduleMode::uniform;
  }
  return s;
}

ElasticConfig Engine::elastic_config_for(EditType edit_type) const { return cfg_.presets.at(edit_type); }

CalibrationProfile Engine::calibrate(const CalibrateRequest& req) {
  if (req.prompt.empty()) throw Error(Errc::usage, "prompt must be nonempty");
  ElasticConfig ecfg = req.preset ? elastic_preset(*req.preset) : elastic_config_for(req.edit_type);
  if (!req.overrides.empty()) ecfg = elastic_config_from_json(req.overrides, ecfg);
  validate(ecfg);

  const PromptEmbedding emb = backend_->encode(req.prompt);
  TokenSelection sel;
  if (req.words) {
    sel.words = *req.words;
    sel.source = SelectionSource::rule_fallback;
    sel.prompt_class = classify_prompt(req.prompt, req.vector.concept_name, lexicon_);
  } else {
    sel = select_tokens(req.prompt, req.vector.concept_name, req.edit_type);
  }
  const TokenSpan span = resolve_selection(sel.words, emb);

  Schedule schedule = schedule_for(req.edit_type);
  if (req.schedule) schedule.mode = *req.schedule;
  const std::uint64_t seed = req.seed.value_or(cfg_.seed);

  double alpha0 = 0.0;
  if (req.alpha_max) {
    alpha0 = *req.alpha_max;
    if (!(alpha0 > ecfg.a_min) || alpha0 > ecfg.a_max_cap) {
      throw Error(Errc::usage, fmt::format("alpha_max {} outside (a_min, a_max_cap]", alpha0));
    }
  } else {
    alpha0 = init_alpha_max(req.vector, ecfg);
  }

  Renderer renderer(*backend_, emb, span, req.vector, seed, schedule);
  const CalibrationResult res = steerkit::calibrate(renderer, alpha0, ecfg);

  CalibrationProfile p;
  p.concept_name = req.vector.concept_name;
  p.vector_path = req.vector_path;
  p.vector_sha256 = req.vector_path.empty() ? sha256_hex(vector_to_json(req.vector).dump())
                                            : file_sha256(req.vector_path);
  p.prompt = req.prompt;
  p.edit_type = req.edit_type;
  p.cfg = ecfg;
  p.valid_points = res.valid_points;
  p.valid_distances = res.valid_distances;
  p.band = res.band;
  p.generations_used = res.generations_total;
  p.encoder_id = emb.encoder_id();
  p.seed = seed;
  p.selected_words = sel.words;
  p.selection_source = sel.source;
  p.prompt_class = sel.prompt_class;
  p.span = span.indices();
  p.schedule = schedule;
  p.alpha_max_initial = res.alpha_max_initial;
  p.alpha_max_used = res.alpha_max_used;
  p.extrapolation_steps = res.extrapolation_steps_taken;
  p.diagnostics = res.diagnostics;
  p.id = compute_profile_id(p);
  for (const auto& d : p.diagnostics) spdlog::info("calibration: {}", d);
  return p;
}

Renderer Engine::make_renderer(const CalibrationProfile& p, const SteeringVector& vec,
                               std::optional<std::uint64_t> seed) {
  PromptEmbedding emb = backend_->encode(p.prompt);
  if (emb.encoder_id() != p.encoder_id) {
    throw Error(Errc::encoder_mismatch,
                fmt::format("profile calibrated with encoder {}, backend now serves {}", p.encoder_id,
                            emb.encoder_id()));
  }
  return Renderer(*backend_, std::move(emb), TokenSpan(p.span), vec, seed.value_or(p.seed), p.schedule);
}

ImageRef Engine::render(const CalibrationProfile& profile, const SteeringVector& vec, double alpha,
                        std::optional<std::uint64_t> seed) {
  if (!std::isfinite(alpha)) throw Error(Errc::usage, "alpha must be finite");
  return make_renderer(profile, vec, seed).render(alpha);
}

Engine::SteerResult Engine::steer(const std::string& prompt, const SteeringVector& vec, double alpha,
                                  const Schedule& schedule, std::uint64_t seed, EditType edit_type,
                                  std::optional<std::vector<std::string>> words) {
  const PromptEmbedding emb = backend_->encode(prompt);
  SteerResult out;
  if (words) {
    out.selection.words = *words;
  } else {
    out.selection = select_tokens(prompt, vec.concept_name, edit_type);
  }
  out.span = resolve_selection(out.selection.words, emb);
  out.image = backend_->generate(apply_steering(emb, out.span, vec, alpha), seed, schedule);
  out.image.alpha = alpha;
  return out;
}

Evaluation Engine::evaluate(const CalibrationProfile& profile, const SteeringVector& vec, std::size_t n) {
  if (!scorer_) throw Error(Errc::usage, "no scorer configured (set scorer.kind in the config)");
  if (n < 2) throw Error(Errc::usage, fmt::format("evaluation needs at least 2 points, got {}", n));
  double alpha_max = profile.alpha_max_used;
  if (!profile.valid_points.empty()) {
    alpha_max = profile.valid_points.back();
  } else {
    spdlog::warn("profile {} has no valid points; tracing up to alpha_max {:.6g}", profile.id, alpha_max);
  }
  Renderer renderer = make_renderer(profile, vec, std::nullopt);
  Evaluation e;
  e.question = replace_concept(cfg_.metrics.question, profile.concept_name);
  e.oracle = cfg_.metrics.oracle;
  e.trace = build_trace(renderer, *scorer_, e.question, alpha_max, n);
  const DistanceOracle dist = [&renderer](const ImageRef& a, const ImageRef& b) {
    return renderer.distance(a.alpha, b.alpha);
  };
  e.increments = increments(e.trace, dist);
  e.distributions = normalize_increments(e.increments.dv, e.increments.dd);
  e.mid = mid_dist(e.distributions);
  const SliderTrace one[] = {e.trace};
  e.curve = tradeoff_curve(one, dist);
  return e;
}

std::filesystem::path Engine::vectors_dir() const { return cfg_.storage_root / "vectors"; }
std::filesystem::path Engine::profiles_dir() const { return cfg_.storage_root / "profiles"; }
std::filesystem::path Engine::traces_dir() const { return cfg_.storage_root / "traces"; }

std::filesystem::path Engine::store_vector(const SteeringVector& vec) {
  const std::string text = vector_to_json(vec).dump(2) + "\n";
  const auto path =
      vectors_dir() / fmt::format("{}-{}.json", sanitize(vec.concept_name), sha256_hex(text).substr(0, 12));
  write_once(path, text);
  return path;
}

std::filesystem::path Engine::store_profile(const CalibrationProfile& p) {
  const auto path = profiles_dir() / fmt::format("{}.json", p.id);
  write_once(path, to_json(p).dump(2) + "\n");
  return path;
}

std::filesystem::path Engine::store_trace(const std::string& profile_id, const SliderTrace& trace) {
  const std::string text = trace_to_json(trace).dump(2) + "\n";
  const auto path = traces_dir() / fmt::format("{}-{}.json", profile_id, sha256_hex(text).substr(0, 12));
  write_once(path, text);
  return path;
}

CalibrationProfile Engine::load_profile(const std::string& id_or_path) const {
  std::filesystem::path path = id_or_path;
  if (!std::filesystem::exists(path)) path = profiles_dir() / fmt::format("{}.json", id_or_path);
  if (!std::filesystem::exists(path)) {
    throw Error(Errc::not_found, fmt::format("no profile '{}'", id_or_path));
  }
  return profile_from_json(read_json_file(path));
}

SteeringVector Engine::load_profile_vector(const CalibrationProfile& p) const {
  if (p.vector_path.empty()) throw Error(Errc::validation, "profile does not name its vector file");
  const std::string text = read_text_file(p.vector_path);
  if (sha256_hex(text) != p.vector_sha256) {
    throw Error(Errc::validation,
                fmt::format("{} changed since calibration (sha256 mismatch)", p.vector_path));
  }
  try {
    return vector_from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::parse, fmt::format("{}: {}", p.vector_path, e.what()));
  }
}

}  // namespace steerkit
