#pragma once

// Engine configuration: one JSON document, ${VAR} expanded from the
// environment in every string value, command-line flags applied on top.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "steerkit/backend.hpp"
#include "steerkit/elastic.hpp"
#include "steerkit/llm.hpp"
#include "steerkit/metrics.hpp"
#include "steerkit/synthetic_backend.hpp"
#include "steerkit/token_select.hpp"

namespace steerkit {

struct BackendSettings {
  std::string kind = "synthetic";  // "synthetic" | "http"
  std::string url;
  std::size_t max_batch = 20;
  std::string encoder_id;
  HttpOptions http;
  SyntheticWorld world;
};

struct LlmSettings {
  std::string kind = "none";  // "none" | "http" | "replay"
  LlmConfig http;
  std::vector<std::string> replies;
};

struct ScorerSettings {
  std::string kind = "none";  // "none" | "http" | "synthetic"
  std::string url;
  double gain = 1.0;
  HttpOptions http;
};

struct MetricsSettings {
  std::size_t points = kDefaultTracePoints;
  // "{concept}" is replaced by the concept name.
  std::string question = "Does the image show {concept}?";
  // Label of the perceptual oracle behind the backend's distance endpoint,
  // copied into evaluation output.
  std::string oracle = "backend-distance";
};

struct EngineConfig {
  std::filesystem::path storage_root = "steerkit-data";
  std::uint64_t seed = 0;
  BackendSettings backend;
  LlmSettings llm;
  ScorerSettings scorer;
  std::string token_selection = "auto";  // "auto" | "llm" | "rules"
  std::optional<std::filesystem::path> lexicon_path;
  std::map<EditType, ElasticConfig> presets;
  int schedule_steps = 30;
  std::optional<ScheduleMode> schedule_mode;  // unset: chosen per edit type
  MetricsSettings metrics;
  std::string service_host = "127.0.0.1";
  int service_port = 8080;
};

// Replaces ${NAME} in every string of `j`. Throws Validation for unset
// variables.
nlohmann::json interpolate_env(const nlohmann::json& j);

EngineConfig engine_config_from_json(const nlohmann::json& j);
EngineConfig load_engine_config(const std::filesystem::path& path);
nlohmann::json to_json(const EngineConfig& cfg);

nlohmann::json to_json(const SyntheticWorld& world);
SyntheticWorld synthetic_world_from_json(const nlohmann::json& j, SyntheticWorld base = {});

std::unique_ptr<Backend> make_backend(const EngineConfig& cfg);
// Null when llm.kind is "none".
std::unique_ptr<LlmClient> make_llm(const EngineConfig& cfg);
// Null when scorer.kind is "none".
std::unique_ptr<Scorer> make_scorer(const EngineConfig& cfg);

// Concepts, poles and edit types of the canonical examples used by default.
ConceptLexicon default_lexicon();
ConceptLexicon load_lexicon(const EngineConfig& cfg);

}  // namespace steerkit
