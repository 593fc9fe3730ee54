#pragma once

// Deterministic stand-in for a real encoder/generator/distance stack.
//
// The encoder splits prompts into word and punctuation tokens and gives each
// token a seeded pseudo-random row, plus +/- pole_strength along the concept
// axis for configured pole words. The "generator" measures how far the
// steered rows moved along the concept axis relative to a fresh encoding of
// the same prompt, and the distance between two renders is
// |r(a) - r(b)| with r(alpha) = D * (1 - exp(-alpha / tau)).
//
// All state needed by distance() is carried in the image id, so the backend
// holds no mutable state and is safe to call from any thread.

#include <cstdint>
#include <string>
#include <vector>

#include "steerkit/backend.hpp"

namespace steerkit {

struct SyntheticWorld {
  std::size_t dim = 16;
  Vector concept_axis;  // unit norm; empty means derive from noise_seed
  double saturation_tau = 15.0;
  double max_distance = 0.5;
  std::uint64_t noise_seed = 0;
  bool distance_noise = false;
  double noise_magnitude = 1e-3;
  std::vector<std::string> pos_words;
  std::vector<std::string> neg_words;
  double pole_strength = 1.0;
  double token_noise = 0.25;
  std::string encoder_id = "synthetic-v1";
  std::size_t max_batch = 20;
};

// Fills in a seeded concept axis when none is given and checks invariants.
SyntheticWorld finalize_world(SyntheticWorld world);

class SyntheticBackend final : public Backend {
 public:
  explicit SyntheticBackend(SyntheticWorld world);

  BackendCapabilities capabilities() const override;
  PromptEmbedding encode(const std::string& prompt) override;
  ImageRef generate(const PromptEmbedding& emb, std::uint64_t seed,
                    const Schedule& schedule) override;
  double distance(const ImageRef& a, const ImageRef& b) override;

  const SyntheticWorld& world() const { return world_; }

  // r(alpha) = D * (1 - exp(-alpha / tau)).
  double response(double alpha) const;
  // Steering magnitude along the concept axis encoded in a synthetic id.
  // Throws UnknownRef for ids this backend did not produce.
  static double effective_alpha(const std::string& image_id);

 private:
  SyntheticWorld world_;
};

// Word-and-punctuation tokenizer used by the synthetic encoder.
std::vector<Token> synthetic_tokenize(const std::string& prompt);

}  // namespace steerkit
