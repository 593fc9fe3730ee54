#pragma once

// The pipeline shared by the command line and the slider service:
// dataset generation, vector build, token selection, calibration, steering
// and evaluation, plus the on-disk artifact store.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "steerkit/config.hpp"
#include "steerkit/dataset.hpp"
#include "steerkit/elastic.hpp"
#include "steerkit/metrics.hpp"
#include "steerkit/token_select.hpp"

namespace steerkit {

struct CalibrationProfile {
  std::string id;  // content hash of everything below
  std::string concept_name;
  std::string vector_path;
  std::string vector_sha256;
  std::string prompt;
  EditType edit_type = EditType::local;
  ElasticConfig cfg;
  std::vector<double> valid_points;
  std::vector<double> valid_distances;
  ControlPointSet band;
  std::size_t generations_used = 0;
  std::string encoder_id;
  std::uint64_t seed = 0;
  std::vector<std::string> selected_words;
  SelectionSource selection_source = SelectionSource::rule_fallback;
  std::optional<PromptClass> prompt_class;
  std::vector<std::size_t> span;
  Schedule schedule;
  double alpha_max_initial = 0.0;
  double alpha_max_used = 0.0;
  int extrapolation_steps = 0;
  std::vector<std::string> diagnostics;
};

nlohmann::json to_json(const CalibrationProfile& p);
// Checks structure and internal consistency (valid points drawn from the
// band, band strictly increasing, span nonempty).
CalibrationProfile profile_from_json(const nlohmann::json& j);
std::string compute_profile_id(const CalibrationProfile& p);

struct CalibrateRequest {
  std::string prompt;
  SteeringVector vector;
  std::string vector_path;
  EditType edit_type = EditType::local;
  // Overrides applied on top of the configured preset for edit_type.
  nlohmann::json overrides = nlohmann::json::object();
  std::optional<std::string> preset;  // named preset instead of the configured one
  std::optional<double> alpha_max;    // skip projection-based initialization
  std::optional<ScheduleMode> schedule;
  std::optional<std::uint64_t> seed;
  std::optional<std::vector<std::string>> words;  // skip token selection
};

struct Evaluation {
  SliderTrace trace;
  Increments increments;
  IncrementDistributions distributions;
  double mid = 0.0;
  std::vector<CurveRow> curve;
  std::string oracle;
  std::string question;
};

nlohmann::json to_json(const Evaluation& e);

class Engine {
 public:
  explicit Engine(EngineConfig cfg);
  // For tests: inject collaborators instead of building them from cfg.
  Engine(EngineConfig cfg, std::unique_ptr<Backend> backend, std::unique_ptr<LlmClient> llm,
         std::unique_ptr<Scorer> scorer);

  const EngineConfig& config() const { return cfg_; }
  Backend& backend() { return *backend_; }
  LlmClient* llm() { return llm_.get(); }
  Scorer* scorer() { return scorer_.get(); }
  const ConceptLexicon& lexicon() const { return lexicon_; }

  ContrastiveDataset generate_dataset(const std::string& concept_name, std::size_t k);
  SteeringBuild build_vector(const ContrastiveDataset& ds);

  // Uses the LLM when one is configured and allow_llm holds, with the rule
  // engine as fallback; otherwise rules only.
  TokenSelection select_tokens(const std::string& prompt, const std::string& concept_name,
                               EditType edit_type, bool allow_llm = true);

  // Linear ramp for local edits, uniform otherwise, negated for backends
  // conditioned on an input image; a configured mode wins.
  Schedule schedule_for(EditType edit_type) const;
  ElasticConfig elastic_config_for(EditType edit_type) const;

  CalibrationProfile calibrate(const CalibrateRequest& req);

  // Render the profile's prompt at alpha with its span and schedule.
  ImageRef render(const CalibrationProfile& profile, const SteeringVector& vec, double alpha,
                  std::optional<std::uint64_t> seed = std::nullopt);

  struct SteerResult {
    ImageRef image;
    TokenSelection selection;
    TokenSpan span;
  };
  SteerResult steer(const std::string& prompt, const SteeringVector& vec, double alpha,
                    const Schedule& schedule, std::uint64_t seed, EditType edit_type,
                    std::optional<std::vector<std::string>> words = std::nullopt);

  // Trace over [0, max valid point] with n positions. Throws Validation
  // when no scorer is configured.
  Evaluation evaluate(const CalibrationProfile& profile, const SteeringVector& vec, std::size_t n);

  // Artifact store.
  std::filesystem::path vectors_dir() const;
  std::filesystem::path profiles_dir() const;
  std::filesystem::path traces_dir() const;
  // <root>/vectors/<concept>-<hash>.json; never overwrites different content.
  std::filesystem::path store_vector(const SteeringVector& vec);
  std::filesystem::path store_profile(const CalibrationProfile& p);
  std::filesystem::path store_trace(const std::string& profile_id, const SliderTrace& trace);
  // Accepts a profile id or a path.
  CalibrationProfile load_profile(const std::string& id_or_path) const;
  // Loads the vector a profile was calibrated with and checks its hash.
  SteeringVector load_profile_vector(const CalibrationProfile& p) const;

 private:
  Renderer make_renderer(const CalibrationProfile& p, const SteeringVector& vec,
                         std::optional<std::uint64_t> seed);

  EngineConfig cfg_;
  std::unique_ptr<Backend> backend_;
  std::unique_ptr<LlmClient> llm_;
  std::unique_ptr<Scorer> scorer_;
  ConceptLexicon lexicon_;
};

// sha256 of a file's bytes.
std::string file_sha256(const std::filesystem::path& path);

}  // namespace steerkit
