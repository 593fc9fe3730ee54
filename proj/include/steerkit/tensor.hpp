#pragma once

// Embedding containers and steering-vector arithmetic.
//
// All values are held as 64-bit floats regardless of the precision the
// encoder delivered. Every function here is pure; inputs are never mutated.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace steerkit {

using Vector = std::vector<double>;

// raw_norm at or below this is treated as "no direction".
inline constexpr double kDegeneracyTolerance = 1e-10;

struct Token {
  std::string text;
  std::size_t start = 0;  // byte offset into the prompt, inclusive
  std::size_t end = 0;    // exclusive

  bool operator==(const Token&) const = default;
};

// Encoder output for one prompt: one row of `dim` values per token.
class PromptEmbedding {
 public:
  PromptEmbedding() = default;
  PromptEmbedding(std::string prompt_text, std::vector<Token> tokens,
                  std::size_t dim, Vector data, std::string encoder_id);

  const std::string& prompt_text() const { return prompt_text_; }
  const std::vector<Token>& tokens() const { return tokens_; }
  const std::string& encoder_id() const { return encoder_id_; }
  std::size_t num_tokens() const { return tokens_.size(); }
  std::size_t dim() const { return dim_; }

  std::span<const double> row(std::size_t i) const;
  std::span<double> mutable_row(std::size_t i);
  // Row-major, num_tokens() * dim() values.
  const Vector& data() const { return data_; }

  bool operator==(const PromptEmbedding&) const = default;

 private:
  std::string prompt_text_;
  std::vector<Token> tokens_;
  std::size_t dim_ = 0;
  Vector data_;
  std::string encoder_id_;
};

// Ordered, duplicate-free set of token positions.
class TokenSpan {
 public:
  TokenSpan() = default;
  explicit TokenSpan(std::vector<std::size_t> indices);
  TokenSpan(std::initializer_list<std::size_t> indices)
      : TokenSpan(std::vector<std::size_t>(indices)) {}

  const std::vector<std::size_t>& indices() const { return indices_; }
  std::size_t size() const { return indices_.size(); }
  bool empty() const { return indices_.empty(); }
  bool contains(std::size_t index) const;

  TokenSpan merged(const TokenSpan& other) const;

  // Throws InvalidSpan when empty or any index >= num_tokens.
  void validate_for(const PromptEmbedding& emb) const;

  bool operator==(const TokenSpan&) const = default;

 private:
  std::vector<std::size_t> indices_;
};

struct SteeringVector {
  Vector direction;  // unit norm
  double raw_norm = 0.0;
  std::string concept_name;
  std::size_t pair_count = 0;
  std::string encoder_id;
  // max_j <s, pos_pool_j> over the build dataset, kept so calibration can
  // seed alpha_max without the dataset at hand.
  std::optional<double> max_projection;

  std::size_t dim() const { return direction.size(); }
  bool operator==(const SteeringVector&) const = default;
};

enum class ScheduleMode { uniform, linear_ramp, negated_uniform };

std::string_view schedule_name(ScheduleMode mode);
ScheduleMode parse_schedule(std::string_view name);

struct Displacement {
  Vector s;
  double raw_norm = 0.0;
};

// Mean of the rows of `emb` addressed by `span`.
Vector pool_span(const PromptEmbedding& emb, const TokenSpan& span);

// mean(pos) - mean(neg); element i of each list belongs to pair i.
Displacement difference_of_means(std::span<const Vector> pos_pools,
                                 std::span<const Vector> neg_pools);

// Throws DegenerateDirection when raw_norm <= kDegeneracyTolerance.
SteeringVector normalize(const Vector& s, double raw_norm,
                         std::string concept_name, std::size_t pair_count,
                         std::string encoder_id);
SteeringVector normalize(const Displacement& d, std::string concept_name,
                         std::size_t pair_count, std::string encoder_id);

// Copy of `emb` with every row in `span` shifted by alpha * direction.
PromptEmbedding apply_steering(const PromptEmbedding& emb,
                               const TokenSpan& span,
                               const SteeringVector& vec, double alpha);

// Effective strength at a denoising step. linear_ramp reaches full alpha at
// the last step.
double schedule_alpha(double alpha, ScheduleMode mode, int step,
                      int total_steps);

// max_j <s_raw, pool_j>; may be negative.
double max_positive_projection(std::span<const double> s_raw,
                               std::span<const Vector> pos_pools);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);

}  // namespace steerkit
