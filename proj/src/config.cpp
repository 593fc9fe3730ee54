#include "steerkit/config.hpp"

#include <cstdlib>
#include <regex>

#include <fmt/format.h>

#include "steerkit/error.hpp"
#include "steerkit/remote_backend.hpp"
#include "steerkit/tensor_io.hpp"

namespace steerkit {

namespace {

using nlohmann::json;

std::string expand(const std::string& s) {
  static const std::regex var(R"(\$\{([A-Za-z_][A-Za-z0-9_]*)\})");
  std::string out;
  auto begin = std::sregex_iterator(s.begin(), s.end(), var);
  std::size_t last = 0;
  for (auto it = begin; it != std::sregex_iterator(); ++it) {
    const auto& m = *it;
    const std::string name = m[1].str();
    const char* value = std::getenv(name.c_str());
    if (value == nullptr) {
      throw Error(Errc::validation, fmt::format("config references unset variable ${{{}}}", name));
    }
    out.append(s, last, static_cast<std::size_t>(m.position(0)) - last);
    out += value;
    last = static_cast<std::size_t>(m.position(0) + m.length(0));
  }
  out.append(s, last, std::string::npos);
  return out;
}

HttpOptions http_options(const json& j, HttpOptions o = {}) {
  if (j.contains("timeout_ms")) o.timeout = std::chrono::milliseconds(j.at("timeout_ms").get<long>());
  if (j.contains("retries")) o.retries = j.at("retries").get<int>();
  if (j.contains("backoff_ms")) o.backoff = std::chrono::milliseconds(j.at("backoff_ms").get<long>());
  if (j.contains("headers")) {
    for (const auto& [k, v] : j.at("headers").items()) o.headers.emplace_back(k, v.get<std::string>());
  }
  return o;
}

json http_json(const HttpOptions& o) {
  return json{{"timeout_ms", o.timeout.count()},
              {"retries", o.retries},
              {"backoff_ms", o.backoff.count()}};
}

void check_kind(const std::string& kind, std::initializer_list<std::string_view> allowed,
                std::string_view what) {
  for (auto a : allowed) {
    if (kind == a) return;
  }
  throw Error(Errc::validation, fmt::format("unknown {} kind '{}'", what, kind));
}

constexpr std::string_view kDefaultLexicon = R"({
  "winter": {"poles": ["winter", "summer", "snowy", "wintry"], "edit_type": "global"},
  "cartoon": {"poles": ["cartoon", "photorealistic", "cartoonish", "realistic"], "edit_type": "stylization"},
  "smile": {"poles": ["sad", "happy", "smiling", "frowning", "neutral"], "edit_type": "local"},
  "age": {"poles": ["ripe", "unripe", "young", "old", "elderly"], "edit_type": "local"}
})";

}  // namespace

json interpolate_env(const json& j) {
  if (j.is_string()) return expand(j.get<std::string>());
  if (j.is_object()) {
    json out = json::object();
    for (const auto& [k, v] : j.items()) out[k] = interpolate_env(v);
    return out;
  }
  if (j.is_array()) {
    json out = json::array();
    for (const auto& v : j) out.push_back(interpolate_env(v));
    return out;
  }
  return j;
}

json to_json(const SyntheticWorld& w) {
  return json{{"dim", w.dim},
              {"concept_axis", w.concept_axis},
              {"saturation_tau", w.saturation_tau},
              {"max_distance", w.max_distance},
              {"noise_seed", w.noise_seed},
              {"distance_noise", w.distance_noise},
              {"noise_magnitude", w.noise_magnitude},
              {"pos_words", w.pos_words},
              {"neg_words", w.neg_words},
              {"pole_strength", w.pole_strength},
              {"token_noise", w.token_noise},
              {"encoder_id", w.encoder_id},
              {"max_batch", w.max_batch}};
}

SyntheticWorld synthetic_world_from_json(const json& j, SyntheticWorld w) {
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "dim") w.dim = v.get<std::size_t>();
      else if (k == "concept_axis") w.concept_axis = v.get<Vector>();
      else if (k == "saturation_tau") w.saturation_tau = v.get<double>();
      else if (k == "max_distance") w.max_distance = v.get<double>();
      else if (k == "noise_seed") w.noise_seed = v.get<std::uint64_t>();
      else if (k == "distance_noise") w.distance_noise = v.get<bool>();
      else if (k == "noise_magnitude") w.noise_magnitude = v.get<double>();
      else if (k == "pos_words") w.pos_words = v.get<std::vector<std::string>>();
      else if (k == "neg_words") w.neg_words = v.get<std::vector<std::string>>();
      else if (k == "pole_strength") w.pole_strength = v.get<double>();
      else if (k == "token_noise") w.token_noise = v.get<double>();
      else if (k == "encoder_id") w.encoder_id = v.get<std::string>();
      else if (k == "max_batch") w.max_batch = v.get<std::size_t>();
      else throw Error(Errc::validation, fmt::format("unknown synthetic world key '{}'", k));
    }
  } catch (const json::exception& e) {
    throw Error(Errc::parse, fmt::format("bad synthetic world: {}", e.what()));
  }
  return finalize_world(std::move(w));
}

EngineConfig engine_config_from_json(const json& raw) {
  if (!raw.is_object()) throw Error(Errc::parse, "config must be a JSON object");
  const json j = interpolate_env(raw);
  EngineConfig c;
  try {
    if (j.contains("storage_root")) c.storage_root = j.at("storage_root").get<std::string>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();

    if (j.contains("backend")) {
      const auto& b = j.at("backend");
      c.backend.kind = b.value("kind", c.backend.kind);
      c.backend.url = b.value("url", c.backend.url);
      c.backend.max_batch = b.value("max_batch", c.backend.max_batch);
      c.backend.encoder_id = b.value("encoder_id", c.backend.encoder_id);
      c.backend.http = http_options(b, c.backend.http);
      if (b.contains("world")) c.backend.world = synthetic_world_from_json(b.at("world"));
    }
    check_kind(c.backend.kind, {"synthetic", "http"}, "backend");

    if (j.contains("llm")) {
      const auto& l = j.at("llm");
      c.llm.kind = l.value("kind", c.llm.kind);
      c.llm.http.endpoint = l.value("endpoint", std::string());
      c.llm.http.model = l.value("model", std::string());
      c.llm.http.api_key_env = l.value("api_key_env", std::string());
      c.llm.http.http = http_options(l);
      if (l.contains("replies")) c.llm.replies = l.at("replies").get<std::vector<std::string>>();
      if (l.contains("replies_file")) {
        const std::filesystem::path p = l.at("replies_file").get<std::string>();
        if (p.extension() == ".json") {
          const json arr = read_json_file(p);
          for (const auto& r : arr) c.llm.replies.push_back(r.get<std::string>());
        } else {
          c.llm.replies.push_back(read_text_file(p));
        }
      }
    }
    check_kind(c.llm.kind, {"none", "http", "replay"}, "llm");

    if (j.contains("scorer")) {
      const auto& s = j.at("scorer");
      c.scorer.kind = s.value("kind", c.scorer.kind);
      c.scorer.url = s.value("url", c.scorer.url);
      c.scorer.gain = s.value("gain", c.scorer.gain);
      c.scorer.http = http_options(s);
    }
    check_kind(c.scorer.kind, {"none", "http", "synthetic"}, "scorer");

    c.token_selection = j.value("token_selection", c.token_selection);
    check_kind(c.token_selection, {"auto", "llm", "rules"}, "token_selection");
    if (j.contains("lexicon") && !j.at("lexicon").is_null()) {
      c.lexicon_path = j.at("lexicon").get<std::string>();
    }

    for (EditType t : {EditType::local, EditType::global, EditType::stylization}) {
      c.presets[t] = elastic_preset(t);
    }
    if (j.contains("presets")) {
      for (const auto& [name, overrides] : j.at("presets").items()) {
        const EditType t = parse_edit_type(name);
        // Either a preset name ("runtime-local") or field overrides.
        c.presets[t] = overrides.is_string()
                           ? elastic_preset(overrides.get<std::string>())
                           : elastic_config_from_json(overrides, c.presets[t]);
      }
    }

    if (j.contains("schedule")) {
      const auto& s = j.at("schedule");
      c.schedule_steps = s.value("total_steps", c.schedule_steps);
      if (s.contains("mode") && !s.at("mode").is_null()) {
        c.schedule_mode = parse_schedule(s.at("mode").get<std::string>());
      }
    }
    if (c.schedule_steps < 1) throw Error(Errc::validation, "schedule total_steps must be >= 1");

    if (j.contains("metrics")) {
      const auto& m = j.at("metrics");
      c.metrics.points = m.value("points", c.metrics.points);
      c.metrics.question = m.value("question", c.metrics.question);
      c.metrics.oracle = m.value("oracle", c.metrics.oracle);
    }
    if (c.metrics.points < 2) throw Error(Errc::validation, "metrics points must be >= 2");

    if (j.contains("service")) {
      const auto& s = j.at("service");
      c.service_host = s.value("host", c.service_host);
      c.service_port = s.value("port", c.service_port);
    }
  } catch (const json::exception& e) {
    throw Error(Errc::parse, fmt::format("bad config: {}", e.what()));
  }
  return c;
}

EngineConfig load_engine_config(const std::filesystem::path& path) {
  return engine_config_from_json(read_json_file(path));
}

json to_json(const EngineConfig& c) {
  json presets = json::object();
  for (const auto& [t, p] : c.presets) presets[std::string(edit_type_name(t))] = to_json(p);
  json j{{"storage_root", c.storage_root.string()},
         {"seed", c.seed},
         {"backend",
          {{"kind", c.backend.kind},
           {"url", c.backend.url},
           {"max_batch", c.backend.max_batch},
           {"encoder_id", c.backend.encoder_id},
           {"world", to_json(c.backend.world)}}},
         {"llm",
          {{"kind", c.llm.kind},
           {"endpoint", c.llm.http.endpoint},
           {"model", c.llm.http.model},
           {"api_key_env", c.llm.http.api_key_env}}},
         {"scorer", {{"kind", c.scorer.kind}, {"url", c.scorer.url}, {"gain", c.scorer.gain}}},
         {"token_selection", c.token_selection},
         {"presets", presets},
         {"schedule",
          {{"total_steps", c.schedule_steps},
           {"mode", c.schedule_mode ? json(schedule_name(*c.schedule_mode)) : json(nullptr)}}},
         {"metrics",
          {{"points", c.metrics.points}, {"question", c.metrics.question}, {"oracle", c.metrics.oracle}}},
         {"service", {{"host", c.service_host}, {"port", c.service_port}}}};
  j["backend"].update(http_json(c.backend.http));
  j["llm"].update(http_json(c.llm.http.http));
  j["scorer"].update(http_json(c.scorer.http));
  j["lexicon"] = c.lexicon_path ? json(c.lexicon_path->string()) : json(nullptr);
  return j;
}

std::unique_ptr<Backend> make_backend(const EngineConfig& cfg) {
  if (cfg.backend.kind == "http") {
    RemoteBackendConfig rc;
    rc.base_url = cfg.backend.url;
    rc.max_batch = cfg.backend.max_batch;
    rc.encoder_id = cfg.backend.encoder_id;
    rc.http = cfg.backend.http;
    return std::make_unique<RemoteBackend>(std::move(rc));
  }
  return std::make_unique<SyntheticBackend>(cfg.backend.world);
}

std::unique_ptr<LlmClient> make_llm(const EngineConfig& cfg) {
  if (cfg.llm.kind == "http") return std::make_unique<HttpLlmClient>(cfg.llm.http);
  if (cfg.llm.kind == "replay") {
    if (cfg.llm.replies.empty()) throw Error(Errc::validation, "replay llm has no replies");
    return std::make_unique<ReplayLlmClient>(cfg.llm.replies);
  }
  return nullptr;
}

std::unique_ptr<Scorer> make_scorer(const EngineConfig& cfg) {
  if (cfg.scorer.kind == "http") {
    return std::make_unique<HttpScorer>(HttpScorerConfig{cfg.scorer.url, cfg.scorer.http});
  }
  if (cfg.scorer.kind == "synthetic") {
    return std::make_unique<SyntheticScorer>(cfg.backend.world.max_distance,
                                             cfg.backend.world.saturation_tau, cfg.scorer.gain);
  }
  return nullptr;
}

ConceptLexicon default_lexicon() { return ConceptLexicon::from_json(json::parse(kDefaultLexicon)); }

ConceptLexicon load_lexicon(const EngineConfig& cfg) {
  return cfg.lexicon_path ? ConceptLexicon::load(*cfg.lexicon_path) : default_lexicon();
}

}  // namespace steerkit
