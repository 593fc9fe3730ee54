#include "steerkit/backend.hpp"

#include <cmath>

#include <fmt/format.h>

#include "steerkit/codec.hpp"
#include "steerkit/error.hpp"

namespace steerkit {

void Backend::check_batch_size(std::size_t n) const {
  const auto max_batch = capabilities().max_batch;
  if (n > max_batch) {
    throw Error(Errc::batch_too_large,
                fmt::format("batch of {} exceeds max_batch {}", n, max_batch));
  }
}

std::vector<ImageRef> Backend::generate_batch(std::span<const PromptEmbedding> embs,
                                              std::uint64_t seed,
                                              const Schedule& schedule) {
  check_batch_size(embs.size());
  std::vector<ImageRef> out;
  out.reserve(embs.size());
  for (const auto& e : embs) out.push_back(generate(e, seed, schedule));
  return out;
}

std::string prompt_hash(const std::string& prompt) {
  return sha256_hex(prompt).substr(0, 16);
}

ConformanceReport check_backend_conformance(Backend& backend,
                                            const std::string& probe_prompt,
                                            std::uint64_t seed) {
  ConformanceReport report;
  auto fail = [&](std::string what) { report.failures.push_back(std::move(what)); };

  const PromptEmbedding first = backend.encode(probe_prompt);
  const PromptEmbedding second = backend.encode(probe_prompt);
  report.encode_deterministic = first == second;
  if (!report.encode_deterministic) fail("encode is not deterministic for a fixed prompt");

  // Perturb the first token along the first axis; any direction will do.
  SteeringVector probe;
  probe.direction.assign(first.dim(), 0.0);
  probe.direction[0] = 1.0;
  probe.raw_norm = 1.0;
  probe.concept_name = "conformance-probe";
  probe.pair_count = 1;
  probe.encoder_id = first.encoder_id();
  const PromptEmbedding steered = apply_steering(first, TokenSpan{0}, probe, 1.0);

  const Schedule schedule;
  const ImageRef base = backend.generate(first, seed, schedule);
  const ImageRef moved = backend.generate(steered, seed, schedule);
  const std::vector<PromptEmbedding> items{first, steered};
  const auto batch = backend.generate_batch(items, seed, schedule);
  report.batch_matches_sequential =
      batch.size() == 2 && batch[0].id == base.id && batch[1].id == moved.id;
  if (!report.batch_matches_sequential) fail("generate_batch differs from sequential generate");

  const double self = backend.distance(base, base);
  report.self_distance_zero = self == 0.0;
  if (!report.self_distance_zero) fail(fmt::format("distance(a, a) = {} != 0", self));

  const double ab = backend.distance(base, moved);
  const double ba = backend.distance(moved, base);
  report.distance_symmetric = ab == ba && ab >= 0.0 && std::isfinite(ab);
  if (!report.distance_symmetric) {
    fail(fmt::format("distance not symmetric/non-negative: d(a,b)={} d(b,a)={}", ab, ba));
  }
  return report;
}

}  // namespace steerkit
