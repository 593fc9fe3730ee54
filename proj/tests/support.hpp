#pragma once

#include <cstdlib>
#include <filesystem>
#include <memory>
#include <random>
#include <string>

#include "steerkit/elastic.hpp"
#include "steerkit/synthetic_backend.hpp"

namespace testsupport {

inline std::filesystem::path fixtures() { return STEERKIT_FIXTURES_DIR; }

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("steerkit-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline steerkit::SyntheticWorld saturating_world(double tau = 15.0, double d = 0.5) {
  steerkit::SyntheticWorld w;
  w.saturation_tau = tau;
  w.max_distance = d;
  return steerkit::finalize_world(w);
}

// Steering along the world's own axis, so the effective alpha equals the
// requested one under a uniform schedule.
struct AxisSetup {
  std::unique_ptr<steerkit::Backend> backend;
  steerkit::PromptEmbedding emb;
  steerkit::TokenSpan span;
  steerkit::SteeringVector vec;

  steerkit::Renderer renderer(std::uint64_t seed = 0,
                              steerkit::Schedule schedule = {steerkit::ScheduleMode::uniform, 30}) {
    return steerkit::Renderer(*backend, emb, span, vec, seed, schedule);
  }
};

inline AxisSetup axis_setup(std::unique_ptr<steerkit::Backend> backend, const steerkit::SyntheticWorld& w) {
  AxisSetup s;
  s.backend = std::move(backend);
  s.emb = s.backend->encode("a portrait of a man");
  s.span = steerkit::TokenSpan{4};
  s.vec.direction = w.concept_axis;
  s.vec.raw_norm = 1.0;
  s.vec.concept_name = "smile";
  s.vec.pair_count = 1;
  s.vec.encoder_id = w.encoder_id;
  return s;
}

inline AxisSetup axis_setup(const steerkit::SyntheticWorld& w) {
  return axis_setup(std::make_unique<steerkit::SyntheticBackend>(w), w);
}

// Synthetic renders, but distance c * |alpha_a - alpha_b|.
class LinearBackend final : public steerkit::Backend {
 public:
  LinearBackend(steerkit::SyntheticWorld w, double c) : inner_(std::move(w)), c_(c) {}
  steerkit::BackendCapabilities capabilities() const override { return inner_.capabilities(); }
  steerkit::PromptEmbedding encode(const std::string& p) override { return inner_.encode(p); }
  steerkit::ImageRef generate(const steerkit::PromptEmbedding& e, std::uint64_t seed,
                              const steerkit::Schedule& s) override {
    return inner_.generate(e, seed, s);
  }
  double distance(const steerkit::ImageRef& a, const steerkit::ImageRef& b) override {
    if (a.id == b.id) return 0.0;
    // The requested alpha, not the measured one, keeps the arithmetic exact.
    return c_ * std::abs(a.alpha - b.alpha);
  }

 private:
  steerkit::SyntheticBackend inner_;
  double c_;
};

}  // namespace testsupport
