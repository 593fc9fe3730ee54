#include "steerkit/tensor.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "steerkit/error.hpp"

namespace steerkit {

PromptEmbedding::PromptEmbedding(std::string prompt_text,
                                 std::vector<Token> tokens, std::size_t dim,
                                 Vector data, std::string encoder_id)
    : prompt_text_(std::move(prompt_text)),
      tokens_(std::move(tokens)),
      dim_(dim),
      data_(std::move(data)),
      encoder_id_(std::move(encoder_id)) {
  if (dim_ == 0) {
    throw Error(Errc::validation, "embedding dim must be positive");
  }
  if (data_.size() != tokens_.size() * dim_) {
    throw Error(Errc::validation,
                fmt::format("embedding has {} values, expected {} tokens x {} dims",
                            data_.size(), tokens_.size(), dim_));
  }
  std::size_t last_end = 0;
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    const auto& t = tokens_[i];
    if (t.start > t.end || t.start < last_end) {
      throw Error(Errc::validation,
                  fmt::format("token {} offsets [{}, {}) overlap or are out of order",
                              i, t.start, t.end));
    }
    last_end = t.end;
  }
}

std::span<const double> PromptEmbedding::row(std::size_t i) const {
  return std::span<const double>(data_).subspan(i * dim_, dim_);
}

std::span<double> PromptEmbedding::mutable_row(std::size_t i) {
  return std::span<double>(data_).subspan(i * dim_, dim_);
}

TokenSpan::TokenSpan(std::vector<std::size_t> indices)
    : indices_(std::move(indices)) {
  std::sort(indices_.begin(), indices_.end());
  indices_.erase(std::unique(indices_.begin(), indices_.end()), indices_.end());
}

bool TokenSpan::contains(std::size_t index) const {
  return std::binary_search(indices_.begin(), indices_.end(), index);
}

TokenSpan TokenSpan::merged(const TokenSpan& other) const {
  std::vector<std::size_t> all = indices_;
  all.insert(all.end(), other.indices_.begin(), other.indices_.end());
  return TokenSpan(std::move(all));
}

void TokenSpan::validate_for(const PromptEmbedding& emb) const {
  if (indices_.empty()) {
    throw Error(Errc::invalid_span, "token span is empty");
  }
  if (indices_.back() >= emb.num_tokens()) {
    throw Error(Errc::invalid_span,
                fmt::format("token index {} out of range for {} tokens",
                            indices_.back(), emb.num_tokens()));
  }
}

std::string_view schedule_name(ScheduleMode mode) {
  switch (mode) {
    case ScheduleMode::uniform: return "uniform";
    case ScheduleMode::linear_ramp: return "linear_ramp";
    case ScheduleMode::negated_uniform: return "negated_uniform";
  }
  return "uniform";
}

ScheduleMode parse_schedule(std::string_view name) {
  if (name == "uniform") return ScheduleMode::uniform;
  if (name == "linear_ramp") return ScheduleMode::linear_ramp;
  if (name == "negated_uniform") return ScheduleMode::negated_uniform;
  throw Error(Errc::usage, fmt::format("unknown schedule '{}'", name));
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(Errc::dim_mismatch,
                fmt::format("dot of dims {} and {}", a.size(), b.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

Vector pool_span(const PromptEmbedding& emb, const TokenSpan& span) {
  span.validate_for(emb);
  Vector out(emb.dim(), 0.0);
  for (std::size_t idx : span.indices()) {
    auto row = emb.row(idx);
    for (std::size_t d = 0; d < out.size(); ++d) out[d] += row[d];
  }
  const double n = static_cast<double>(span.size());
  for (double& x : out) x /= n;
  return out;
}

namespace {

Vector mean_of(std::span<const Vector> pools, std::size_t dim) {
  Vector acc(dim, 0.0);
  for (const auto& p : pools) {
    if (p.size() != dim) {
      throw Error(Errc::dim_mismatch,
                  fmt::format("pooled vector has dim {}, expected {}", p.size(), dim));
    }
    for (std::size_t d = 0; d < dim; ++d) acc[d] += p[d];
  }
  const double k = static_cast<double>(pools.size());
  for (double& x : acc) x /= k;
  return acc;
}

}  // namespace

Displacement difference_of_means(std::span<const Vector> pos_pools,
                                 std::span<const Vector> neg_pools) {
  if (pos_pools.empty()) {
    throw Error(Errc::validation, "difference of means needs at least one pair");
  }
  if (pos_pools.size() != neg_pools.size()) {
    throw Error(Errc::validation,
                fmt::format("{} positive pools but {} negative pools",
                            pos_pools.size(), neg_pools.size()));
  }
  const std::size_t dim = pos_pools.front().size();
  Vector pos_mean = mean_of(pos_pools, dim);
  Vector neg_mean = mean_of(neg_pools, dim);
  Displacement out;
  out.s.resize(dim);
  for (std::size_t d = 0; d < dim; ++d) out.s[d] = pos_mean[d] - neg_mean[d];
  out.raw_norm = l2_norm(out.s);
  return out;
}

SteeringVector normalize(const Vector& s, double raw_norm,
                         std::string concept_name, std::size_t pair_count,
                         std::string encoder_id) {
  if (!(raw_norm > kDegeneracyTolerance)) {
    throw Error(Errc::degenerate_direction,
                fmt::format("displacement norm {:.3g} is below {:.0e}; positive and "
                            "negative pools are indistinguishable",
                            raw_norm, kDegeneracyTolerance));
  }
  if (pair_count == 0) {
    throw Error(Errc::validation, "pair_count must be at least 1");
  }
  SteeringVector v;
  v.direction.resize(s.size());
  for (std::size_t d = 0; d < s.size(); ++d) v.direction[d] = s[d] / raw_norm;
  v.raw_norm = raw_norm;
  v.concept_name = std::move(concept_name);
  v.pair_count = pair_count;
  v.encoder_id = std::move(encoder_id);
  return v;
}

SteeringVector normalize(const Displacement& d, std::string concept_name,
                         std::size_t pair_count, std::string encoder_id) {
  return normalize(d.s, d.raw_norm, std::move(concept_name), pair_count,
                   std::move(encoder_id));
}

PromptEmbedding apply_steering(const PromptEmbedding& emb,
                               const TokenSpan& span,
                               const SteeringVector& vec, double alpha) {
  span.validate_for(emb);
  if (vec.encoder_id != emb.encoder_id()) {
    throw Error(Errc::encoder_mismatch,
                fmt::format("vector from encoder '{}' applied to embedding from '{}'",
                            vec.encoder_id, emb.encoder_id()));
  }
  if (vec.dim() != emb.dim()) {
    throw Error(Errc::dim_mismatch,
                fmt::format("vector dim {} vs embedding dim {}", vec.dim(), emb.dim()));
  }
  PromptEmbedding out = emb;
  // alpha == 0 must be an exact copy; x + 0*d would flip the sign of -0.0.
  if (alpha == 0.0) return out;
  for (std::size_t idx : span.indices()) {
    auto row = out.mutable_row(idx);
    for (std::size_t d = 0; d < row.size(); ++d) row[d] += alpha * vec.direction[d];
  }
  return out;
}

double schedule_alpha(double alpha, ScheduleMode mode, int step,
                      int total_steps) {
  if (total_steps < 1 || step < 0 || step >= total_steps) {
    throw Error(Errc::usage,
                fmt::format("step {} outside [0, {})", step, total_steps));
  }
  switch (mode) {
    case ScheduleMode::uniform:
      return alpha;
    case ScheduleMode::linear_ramp:
      return static_cast<double>(step + 1) / static_cast<double>(total_steps) * alpha;
    case ScheduleMode::negated_uniform:
      return -alpha;
  }
  return alpha;
}

double max_positive_projection(std::span<const double> s_raw,
                               std::span<const Vector> pos_pools) {
  if (pos_pools.empty()) {
    throw Error(Errc::validation, "projection needs at least one pooled vector");
  }
  double best = dot(s_raw, pos_pools.front());
  for (std::size_t j = 1; j < pos_pools.size(); ++j) {
    best = std::max(best, dot(s_raw, pos_pools[j]));
  }
  return best;
}

}  // namespace steerkit
