#pragma once

// Contrastive prompt-pair datasets: JSONL I/O, validation, LLM generation,
// and the pooled difference-of-means vector build.

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "steerkit/backend.hpp"
#include "steerkit/llm.hpp"
#include "steerkit/tensor.hpp"

namespace steerkit {

inline constexpr std::size_t kDefaultPairCount = 100;

struct ContrastivePair {
  std::string pos_style;
  std::string neg_style;
  std::string pos;
  std::string neg;

  bool operator==(const ContrastivePair&) const = default;
};

struct ContrastiveDataset {
  std::string concept_name;
  std::vector<ContrastivePair> pairs;

  std::size_t size() const { return pairs.size(); }
  bool operator==(const ContrastiveDataset&) const = default;
};

// Throws Validation when an identifier is missing from its sentence or the
// two sentences are identical.
void validate_pair(const ContrastivePair& pair);
// Per-pair checks plus: non-empty, same identifiers on every line.
void validate_dataset(const ContrastiveDataset& ds);

// One JSON object per nonblank line with exactly the keys pos_style,
// neg_style, pos, neg. Errors name the 1-based line number.
ContrastiveDataset parse_dataset_jsonl(std::string_view text, std::string concept_name);
// The concept defaults to the file stem.
ContrastiveDataset load_dataset(const std::filesystem::path& path,
                                std::string concept_name = {});

// Lines in key order pos_style, neg_style, pos, neg, each terminated by '\n'.
std::string serialize_dataset(const ContrastiveDataset& ds);
std::string serialize_pair(const ContrastivePair& pair);

// Soft findings: sentences that differ by more words than the identifiers
// account for, and identifiers occurring more than once in a sentence.
std::vector<std::string> lint_dataset(const ContrastiveDataset& ds);

std::string dataset_generation_prompt(std::string_view concept_name, std::size_t k);

struct GenerationOptions {
  int attempts = 3;
  double temperature = 0.7;
};

// Throws Usage for k == 0, CountMismatch / Validation / Parse when every
// attempt fails (the message carries the last raw reply).
ContrastiveDataset generate_dataset(const std::string& concept_name, std::size_t k,
                                    LlmClient& llm, const GenerationOptions& options = {});

// Tokens overlapping the first case-insensitive occurrence of `style`.
TokenSpan locate_style_span(const PromptEmbedding& emb, std::string_view style);

struct SteeringBuild {
  SteeringVector vector;
  Displacement raw;
  std::vector<Vector> pos_pools;
  std::vector<Vector> neg_pools;
};

// Encodes all 2K sentences (up to max_batch in flight), pools each style
// span, and reduces to a normalized direction. The vector carries
// max_projection for alpha_max initialization.
SteeringBuild build_steering(const ContrastiveDataset& ds, Backend& encoder);
SteeringVector build_steering_vector(const ContrastiveDataset& ds, Backend& encoder);

// ASCII lowercase.
std::string to_lower(std::string_view s);

}  // namespace steerkit
