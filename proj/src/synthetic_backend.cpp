#include "steerkit/synthetic_backend.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstring>

#include <fmt/format.h>

#include "steerkit/codec.hpp"
#include "steerkit/error.hpp"

namespace steerkit {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Uniform in [-1, 1).
double unit_noise(std::uint64_t key) {
  return static_cast<double>(splitmix64(key) >> 11) * 0x1.0p-52 - 1.0;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool is_word_char(unsigned char c) {
  return std::isalnum(c) || c == '\'' || c == '-' || c >= 0x80;
}

int polarity(const SyntheticWorld& w, const std::string& token) {
  const std::string t = lower(token);
  if (std::find(w.pos_words.begin(), w.pos_words.end(), t) != w.pos_words.end()) return 1;
  if (std::find(w.neg_words.begin(), w.neg_words.end(), t) != w.neg_words.end()) return -1;
  return 0;
}

std::string embedding_hash(const PromptEmbedding& emb) {
  std::string bytes(emb.data().size() * sizeof(double), '\0');
  std::memcpy(bytes.data(), emb.data().data(), bytes.size());
  return sha256_hex(emb.encoder_id() + '\0' + bytes).substr(0, 16);
}

}  // namespace

std::vector<Token> synthetic_tokenize(const std::string& prompt) {
  std::vector<Token> tokens;
  std::size_t i = 0;
  while (i < prompt.size()) {
    const auto c = static_cast<unsigned char>(prompt[i]);
    if (std::isspace(c)) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    if (is_word_char(c)) {
      while (j < prompt.size() && is_word_char(static_cast<unsigned char>(prompt[j]))) ++j;
    }
    tokens.push_back({prompt.substr(i, j - i), i, j});
    i = j;
  }
  return tokens;
}

SyntheticWorld finalize_world(SyntheticWorld world) {
  if (world.dim == 0) throw Error(Errc::validation, "synthetic world dim must be positive");
  if (!(world.saturation_tau > 0.0)) {
    throw Error(Errc::validation, "synthetic world tau must be positive");
  }
  if (world.max_batch == 0) throw Error(Errc::validation, "max_batch must be positive");
  if (world.concept_axis.empty()) {
    world.concept_axis.resize(world.dim);
    for (std::size_t d = 0; d < world.dim; ++d) {
      world.concept_axis[d] = unit_noise(world.noise_seed * 0x51ed2705ULL + d + 0xa715ULL);
    }
  }
  if (world.concept_axis.size() != world.dim) {
    throw Error(Errc::dim_mismatch, "concept axis length differs from world dim");
  }
  const double n = l2_norm(world.concept_axis);
  if (!(n > 0.0)) throw Error(Errc::validation, "concept axis must be nonzero");
  for (double& x : world.concept_axis) x /= n;
  for (auto* words : {&world.pos_words, &world.neg_words}) {
    for (auto& w : *words) w = lower(w);
  }
  return world;
}

SyntheticBackend::SyntheticBackend(SyntheticWorld world)
    : world_(finalize_world(std::move(world))) {}

BackendCapabilities SyntheticBackend::capabilities() const {
  return {world_.max_batch, world_.encoder_id, false};
}

PromptEmbedding SyntheticBackend::encode(const std::string& prompt) {
  auto tokens = synthetic_tokenize(prompt);
  if (tokens.empty()) throw Error(Errc::validation, "cannot encode an empty prompt");
  const std::size_t dim = world_.dim;
  Vector data(tokens.size() * dim);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const std::uint64_t key =
        fnv1a(lower(tokens[t].text)) ^ splitmix64(t + 1) ^ splitmix64(world_.noise_seed);
    const int pole = polarity(world_, tokens[t].text);
    for (std::size_t d = 0; d < dim; ++d) {
      data[t * dim + d] = world_.token_noise * unit_noise(key + d * 0x632be59bd9b4e019ULL) +
                          pole * world_.pole_strength * world_.concept_axis[d];
    }
  }
  return PromptEmbedding(prompt, std::move(tokens), dim, std::move(data), world_.encoder_id);
}

double SyntheticBackend::response(double alpha) const {
  return world_.max_distance * (1.0 - std::exp(-alpha / world_.saturation_tau));
}

ImageRef SyntheticBackend::generate(const PromptEmbedding& emb, std::uint64_t seed,
                                    const Schedule& schedule) {
  if (emb.encoder_id() != world_.encoder_id) {
    throw Error(Errc::encoder_mismatch,
                fmt::format("embedding from '{}' sent to '{}'", emb.encoder_id(),
                            world_.encoder_id));
  }
  const PromptEmbedding base = encode(emb.prompt_text());
  if (base.num_tokens() != emb.num_tokens() || base.dim() != emb.dim()) {
    throw Error(Errc::validation, "embedding shape does not match its prompt");
  }
  // Mean displacement along the axis over the rows that were touched.
  double moved = 0.0;
  std::size_t touched = 0;
  for (std::size_t t = 0; t < emb.num_tokens(); ++t) {
    auto row = emb.row(t);
    auto ref = base.row(t);
    if (std::equal(row.begin(), row.end(), ref.begin())) continue;
    double proj = 0.0;
    for (std::size_t d = 0; d < row.size(); ++d) {
      proj += (row[d] - ref[d]) * world_.concept_axis[d];
    }
    moved += proj;
    ++touched;
  }
  const double measured = touched == 0 ? 0.0 : moved / static_cast<double>(touched);
  double effective = 0.0;
  for (int step = 0; step < schedule.total_steps; ++step) {
    effective += schedule_alpha(measured, schedule.mode, step, schedule.total_steps);
  }
  effective /= schedule.total_steps;
  if (touched == 0) effective = 0.0;

  ImageRef ref;
  ref.prompt_hash = prompt_hash(emb.prompt_text());
  ref.id = fmt::format("syn-{}-{}-s{}-a{:016x}", ref.prompt_hash, embedding_hash(emb), seed,
                       std::bit_cast<std::uint64_t>(effective));
  return ref;
}

double SyntheticBackend::effective_alpha(const std::string& image_id) {
  const auto pos = image_id.rfind("-a");
  if (image_id.rfind("syn-", 0) != 0 || pos == std::string::npos ||
      image_id.size() - pos - 2 != 16) {
    throw Error(Errc::unknown_ref, fmt::format("unknown image id '{}'", image_id));
  }
  std::uint64_t bits = 0;
  const char* first = image_id.data() + pos + 2;
  const char* last = image_id.data() + image_id.size();
  auto [ptr, ec] = std::from_chars(first, last, bits, 16);
  if (ec != std::errc() || ptr != last) {
    throw Error(Errc::unknown_ref, fmt::format("unknown image id '{}'", image_id));
  }
  return std::bit_cast<double>(bits);
}

double SyntheticBackend::distance(const ImageRef& a, const ImageRef& b) {
  const double ra = response(effective_alpha(a.id));
  const double rb = response(effective_alpha(b.id));
  if (a.id == b.id) return 0.0;
  double d = std::abs(ra - rb);
  if (world_.distance_noise) {
    const auto& lo = std::min(a.id, b.id);
    const auto& hi = std::max(a.id, b.id);
    const double u = 0.5 * (unit_noise(fnv1a(lo) ^ splitmix64(fnv1a(hi)) ^ world_.noise_seed) + 1.0);
    d += world_.noise_magnitude * u;
  }
  return d;
}

}  // namespace steerkit
