#pragma once

// Uniform surface over the text encoder, the generator and the perceptual
// distance oracle. Images never reach this process; only handles do.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "steerkit/tensor.hpp"

namespace steerkit {

struct ImageRef {
  std::string id;
  double alpha = 0.0;       // steering magnitude requested by the caller
  std::string prompt_hash;  // first 16 hex digits of sha256(prompt)
  std::string url;          // optional, passed through from remote backends

  bool operator==(const ImageRef&) const = default;
};

struct Schedule {
  ScheduleMode mode = ScheduleMode::uniform;
  int total_steps = 30;

  bool operator==(const Schedule&) const = default;
};

struct BackendCapabilities {
  std::size_t max_batch = 20;
  std::string encoder_id;
  bool supports_image_conditioning = false;
};

// Implementations must tolerate up to max_batch concurrent calls.
class Backend {
 public:
  virtual ~Backend() = default;

  virtual BackendCapabilities capabilities() const = 0;
  virtual PromptEmbedding encode(const std::string& prompt) = 0;
  virtual ImageRef generate(const PromptEmbedding& emb, std::uint64_t seed,
                            const Schedule& schedule) = 0;
  // Elementwise equal to calling generate on each item; rejects batches
  // larger than max_batch. The default implementation loops.
  virtual std::vector<ImageRef> generate_batch(std::span<const PromptEmbedding> embs,
                                               std::uint64_t seed,
                                               const Schedule& schedule);
  // Symmetric, non-negative, zero on identical refs.
  virtual double distance(const ImageRef& a, const ImageRef& b) = 0;

 protected:
  void check_batch_size(std::size_t n) const;
};

std::string prompt_hash(const std::string& prompt);

struct ConformanceReport {
  bool encode_deterministic = false;
  bool self_distance_zero = false;
  bool distance_symmetric = false;
  bool batch_matches_sequential = false;
  std::vector<std::string> failures;

  bool ok() const { return failures.empty(); }
};

// Startup probe: encode twice, render a steered and an unsteered image
// one-by-one and as a batch, and query distances between them.
ConformanceReport check_backend_conformance(Backend& backend,
                                            const std::string& probe_prompt = "a photo of a cat",
                                            std::uint64_t seed = 0);

}  // namespace steerkit
