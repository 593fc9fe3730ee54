#include "steerkit/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <future>

#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "steerkit/error.hpp"
#include "steerkit/tensor_io.hpp"

namespace steerkit {

using nlohmann::json;

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

namespace {

bool contains_ci(std::string_view haystack, std::string_view needle) {
  return to_lower(haystack).find(to_lower(needle)) != std::string::npos;
}

std::size_t count_ci(std::string_view haystack, std::string_view needle) {
  if (needle.empty()) return 0;
  const std::string h = to_lower(haystack);
  const std::string n = to_lower(needle);
  std::size_t count = 0;
  for (auto pos = h.find(n); pos != std::string::npos; pos = h.find(n, pos + 1)) ++count;
  return count;
}

std::vector<std::string> split_words(std::string_view s) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

std::size_t word_edit_distance(const std::vector<std::string>& a,
                               const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::string line_error(std::size_t line, const std::string& what) {
  return fmt::format("line {}: {}", line, what);
}

ContrastivePair pair_from_json(const json& j, std::size_t line) {
  if (!j.is_object()) throw Error(Errc::parse, line_error(line, "not a JSON object"));
  static const std::array<const char*, 4> keys{"pos_style", "neg_style", "pos", "neg"};
  for (const char* k : keys) {
    if (!j.contains(k)) {
      throw Error(Errc::validation, line_error(line, fmt::format("missing field \"{}\"", k)));
    }
    if (!j.at(k).is_string()) {
      throw Error(Errc::validation, line_error(line, fmt::format("field \"{}\" is not a string", k)));
    }
  }
  if (j.size() != keys.size()) {
    throw Error(Errc::validation,
                line_error(line, "unexpected fields; expected exactly pos_style, neg_style, pos, neg"));
  }
  return {j["pos_style"].get<std::string>(), j["neg_style"].get<std::string>(),
          j["pos"].get<std::string>(), j["neg"].get<std::string>()};
}

}  // namespace

void validate_pair(const ContrastivePair& pair) {
  if (pair.pos_style.empty() || pair.neg_style.empty()) {
    throw Error(Errc::validation, "style identifiers must be non-empty");
  }
  if (!contains_ci(pair.pos, pair.pos_style)) {
    throw Error(Errc::validation, fmt::format("pos_style \"{}\" does not appear in \"{}\"",
                                              pair.pos_style, pair.pos));
  }
  if (!contains_ci(pair.neg, pair.neg_style)) {
    throw Error(Errc::validation, fmt::format("neg_style \"{}\" does not appear in \"{}\"",
                                              pair.neg_style, pair.neg));
  }
  if (pair.pos == pair.neg) {
    throw Error(Errc::validation, fmt::format("pos and neg are identical: \"{}\"", pair.pos));
  }
}

void validate_dataset(const ContrastiveDataset& ds) {
  if (ds.pairs.empty()) throw Error(Errc::empty_dataset, "dataset has no pairs");
  const auto& first = ds.pairs.front();
  for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
    const auto& p = ds.pairs[i];
    try {
      validate_pair(p);
    } catch (const Error& e) {
      throw Error(e.code(), line_error(i + 1, e.what()));
    }
    if (p.pos_style != first.pos_style || p.neg_style != first.neg_style) {
      throw Error(Errc::validation,
                  line_error(i + 1, fmt::format("identifiers (\"{}\", \"{}\") differ from line 1 "
                                                "(\"{}\", \"{}\")",
                                                p.pos_style, p.neg_style, first.pos_style,
                                                first.neg_style)));
    }
  }
}

ContrastiveDataset parse_dataset_jsonl(std::string_view text, std::string concept_name) {
  if (text.size() >= 3 && static_cast<unsigned char>(text[0]) == 0xEF &&
      static_cast<unsigned char>(text[1]) == 0xBB && static_cast<unsigned char>(text[2]) == 0xBF) {
    throw Error(Errc::parse, "dataset starts with a UTF-8 byte-order mark");
  }
  ContrastiveDataset ds;
  ds.concept_name = std::move(concept_name);
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error(Errc::parse, line_error(line_no, fmt::format("malformed JSON: {}", e.what())));
    }
    ContrastivePair pair = pair_from_json(j, line_no);
    try {
      validate_pair(pair);
    } catch (const Error& e) {
      throw Error(e.code(), line_error(line_no, e.what()));
    }
    ds.pairs.push_back(std::move(pair));
  }
  validate_dataset(ds);
  return ds;
}

ContrastiveDataset load_dataset(const std::filesystem::path& path, std::string concept_name) {
  if (concept_name.empty()) concept_name = path.stem().string();
  try {
    return parse_dataset_jsonl(read_text_file(path), std::move(concept_name));
  } catch (const Error& e) {
    throw Error(e.code(), fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::string serialize_pair(const ContrastivePair& p) {
  return fmt::format(R"({{"pos_style": {}, "neg_style": {}, "pos": {}, "neg": {}}})",
                     json(p.pos_style).dump(), json(p.neg_style).dump(), json(p.pos).dump(),
                     json(p.neg).dump());
}

std::string serialize_dataset(const ContrastiveDataset& ds) {
  std::string out;
  for (const auto& p : ds.pairs) {
    out += serialize_pair(p);
    out += '\n';
  }
  return out;
}

std::vector<std::string> lint_dataset(const ContrastiveDataset& ds) {
  std::vector<std::string> findings;
  for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
    const auto& p = ds.pairs[i];
    const auto pos_words = split_words(p.pos);
    const auto neg_words = split_words(p.neg);
    const std::size_t allowed =
        std::max(split_words(p.pos_style).size(), split_words(p.neg_style).size());
    const std::size_t diff = word_edit_distance(pos_words, neg_words);
    if (diff > allowed) {
      findings.push_back(line_error(
          i + 1, fmt::format("pos/neg differ by {} words, identifiers account for {}", diff,
                             allowed)));
    }
    if (count_ci(p.pos, p.pos_style) > 1) {
      findings.push_back(line_error(i + 1, fmt::format("\"{}\" occurs more than once in pos; "
                                                       "the first occurrence is pooled",
                                                       p.pos_style)));
    }
    if (count_ci(p.neg, p.neg_style) > 1) {
      findings.push_back(line_error(i + 1, fmt::format("\"{}\" occurs more than once in neg; "
                                                       "the first occurrence is pooled",
                                                       p.neg_style)));
    }
  }
  return findings;
}

namespace {

constexpr std::string_view kGenerationTemplate = R"(You are an advanced data generation assistant.

Your task is to create a contrastive dataset of {NUMBER_OF_EXAMPLES} examples for computing a steering vector.

The steering concept to focus on is: {STEER_CONCEPT}

Output exactly {NUMBER_OF_EXAMPLES} JSON objects, one per line (JSON Lines), with no list brackets, no extra commentary, and no markdown.
Each line must be:
{"pos_style": "<positive identifier>", "neg_style": "<negative identifier>", "pos": "<positive full sentence>", "neg": "<negative full sentence>"}

---
### 1. Internal Analysis (YOUR FIRST STEP)

Before generating, analyze {STEER_CONCEPT}:
* Is it an Abstract Style? (e.g., "photorealistic vs cartoon", "bright vs dark", "metal vs wood"). These can apply to any subject.
* Is it a Subject-Specific Attribute? (e.g., "smiling vs neutral" [faces], "ripe vs unripe" [fruit], "young vs old" [living beings/objects]). These are tied to a class of subjects.

Based on your analysis, you MUST follow the correct rules from Section 2.

---
### 2. Generation Guidelines (STRICT)

A. Universal Rules (Apply to ALL concepts):
* PARALLELISM: The two sentences in a pair MUST share the same syntactic skeleton and content words (subject, setting, composition, perspective).
* MINIMAL DELTA: The ONLY differences between "pos" and "neg" are the minimal tokens that express the concept contrast (e.g., "smiling" <-> "neutral").
* STYLE NEUTRALITY: Do NOT change rendering domain, lighting, camera, or layout.
* IDENTIFIERS: Use the SAME "pos_style" and "neg_style" identifiers for ALL {NUMBER_OF_EXAMPLES} lines. These identifiers MUST also appear in the corresponding sentences.

B. Content & Subject Rules (CHOOSE A or B based on your Analysis):

[RULE SET A] For ABSTRACT STYLES (e.g., cartoon, bright):
* SUBJECT: You MUST vary subjects and settings widely (e.g., objects, landscapes, animals, architecture, indoor/outdoor).
* GOAL: Decouple the style from any one context.
* SAFETY: Avoid specific identities (age, gender, race) if people/animals are used. Use neutral terms ("person", "animal").

[RULE SET B] For SUBJECT-SPECIFIC ATTRIBUTES (e.g., smiling, ripe):
* SUBJECT: You MUST focus *only* on the relevant subject class (e.g., "person" or "face" for smiling; "fruit" or "plant" for ripe). Do NOT use inanimate objects like statues for concepts like "smiling".
* GOAL: Isolate the attribute's effect on its specific subject.
* SAFETY: To avoid bias *within* the subject class, use neutral, general terms (e.g., "person," "face," "figure," "human"). Do NOT specify age, gender, race, or ethnicity unless it is the *target concept itself*.

---
### 3. Quality Checks (must pass):
* Exactly {NUMBER_OF_EXAMPLES} lines; each is valid JSON.
* "pos" and "neg" are grammatical, depictable, and differ ONLY by the minimal concept tokens.
* The rules from Section 2 (A and B) have been correctly followed.

---
### 4. Examples

* Example for "bright vs dark" (Abstract Style - Rule A):
{"pos_style": "bright", "neg_style": "dark", "pos": "A bright living room with large windows.", "neg": "A dark living room with large windows."}
* Example for "smiling vs neutral" (Subject-Specific - Rule B):
{"pos_style": "smiling", "neg_style": "neutral", "pos": "A photorealistic portrait of a person with a smiling expression.", "neg": "A photorealistic portrait of a person with a neutral expression."}

Now generate {NUMBER_OF_EXAMPLES} JSON objects that represent the {STEER_CONCEPT} contrast following these instructions, one per line.
)";

std::string replace_all(std::string text, std::string_view from, std::string_view to) {
  for (auto pos = text.find(from); pos != std::string::npos; pos = text.find(from, pos + to.size())) {
    text.replace(pos, from.size(), to);
  }
  return text;
}

}  // namespace

std::string dataset_generation_prompt(std::string_view concept_name, std::size_t k) {
  std::string text(kGenerationTemplate);
  text = replace_all(std::move(text), "{NUMBER_OF_EXAMPLES}", std::to_string(k));
  return replace_all(std::move(text), "{STEER_CONCEPT}", concept_name);
}

ContrastiveDataset generate_dataset(const std::string& concept_name, std::size_t k,
                                    LlmClient& llm, const GenerationOptions& options) {
  if (k == 0) throw Error(Errc::usage, "number of pairs must be at least 1");
  if (options.attempts < 1) throw Error(Errc::usage, "at least one generation attempt is required");
  const std::vector<ChatMessage> messages{
      {"system", dataset_generation_prompt(concept_name, k)},
      {"user", fmt::format("Generate the {} lines for \"{}\" now.", k, concept_name)}};

  std::string last_reply;
  Errc last_code = Errc::validation;
  std::string last_error;
  for (int attempt = 1; attempt <= options.attempts; ++attempt) {
    last_reply = llm.complete(messages, options.temperature);
    try {
      ContrastiveDataset ds = parse_dataset_jsonl(strip_reply_wrapping(last_reply), concept_name);
      if (ds.size() != k) {
        throw Error(Errc::count_mismatch,
                    fmt::format("asked for {} pairs, reply holds {}", k, ds.size()));
      }
      return ds;
    } catch (const Error& e) {
      last_code = e.code();
      last_error = e.what();
      spdlog::warn("dataset attempt {}/{} rejected: {}", attempt, options.attempts, last_error);
    }
  }
  throw Error(last_code, fmt::format("no valid dataset after {} attempts: {}\n--- last reply ---\n{}",
                                     options.attempts, last_error, last_reply));
}

TokenSpan locate_style_span(const PromptEmbedding& emb, std::string_view style) {
  if (style.empty()) throw Error(Errc::style_not_found, "empty style string");
  const std::string text = to_lower(emb.prompt_text());
  const std::string needle = to_lower(style);
  const auto start = text.find(needle);
  if (start == std::string::npos) {
    throw Error(Errc::style_not_found,
                fmt::format("\"{}\" not found in \"{}\"", style, emb.prompt_text()));
  }
  if (text.find(needle, start + 1) != std::string::npos) {
    spdlog::warn("\"{}\" occurs more than once in \"{}\"; using the first occurrence", style,
                 emb.prompt_text());
  }
  const std::size_t end = start + needle.size();
  std::vector<std::size_t> hits;
  for (std::size_t i = 0; i < emb.num_tokens(); ++i) {
    const auto& t = emb.tokens()[i];
    if (t.start < end && t.end > start) hits.push_back(i);
  }
  if (hits.empty()) {
    throw Error(Errc::overlap_empty,
                fmt::format("no token overlaps bytes [{}, {}) of \"{}\"", start, end,
                            emb.prompt_text()));
  }
  return TokenSpan(std::move(hits));
}

namespace {

std::vector<PromptEmbedding> encode_all(const std::vector<std::string>& sentences,
                                        Backend& encoder) {
  const std::size_t width = std::max<std::size_t>(1, encoder.capabilities().max_batch);
  std::vector<PromptEmbedding> out;
  out.reserve(sentences.size());
  for (std::size_t begin = 0; begin < sentences.size(); begin += width) {
    const std::size_t end = std::min(sentences.size(), begin + width);
    std::vector<std::future<PromptEmbedding>> inflight;
    for (std::size_t i = begin; i < end; ++i) {
      inflight.push_back(std::async(std::launch::async,
                                    [&encoder, &s = sentences[i]] { return encoder.encode(s); }));
    }
    for (auto& f : inflight) out.push_back(f.get());
  }
  return out;
}

}  // namespace

SteeringBuild build_steering(const ContrastiveDataset& ds, Backend& encoder) {
  // Pair-level validation is load_dataset's job; identical pos/neg must reach
  // normalize() and surface as DegenerateDirection.
  if (ds.pairs.empty()) throw Error(Errc::empty_dataset, "dataset has no pairs");
  std::vector<std::string> sentences;
  sentences.reserve(2 * ds.size());
  for (const auto& p : ds.pairs) {
    sentences.push_back(p.pos);
    sentences.push_back(p.neg);
  }
  const auto embeddings = encode_all(sentences, encoder);

  SteeringBuild build;
  const std::string& encoder_id = embeddings.front().encoder_id();
  const std::size_t dim = embeddings.front().dim();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& pos = embeddings[2 * i];
    const auto& neg = embeddings[2 * i + 1];
    for (const auto* e : {&pos, &neg}) {
      if (e->encoder_id() != encoder_id) {
        throw Error(Errc::encoder_mismatch,
                    fmt::format("encoder changed mid-build: '{}' vs '{}'", e->encoder_id(),
                                encoder_id));
      }
      if (e->dim() != dim) throw Error(Errc::dim_mismatch, "embedding dim changed mid-build");
    }
    try {
      build.pos_pools.push_back(pool_span(pos, locate_style_span(pos, ds.pairs[i].pos_style)));
      build.neg_pools.push_back(pool_span(neg, locate_style_span(neg, ds.pairs[i].neg_style)));
    } catch (const Error& e) {
      throw Error(e.code(), line_error(i + 1, e.what()));
    }
  }
  build.raw = difference_of_means(build.pos_pools, build.neg_pools);
  build.vector = normalize(build.raw, ds.concept_name, ds.size(), encoder_id);
  build.vector.max_projection = max_positive_projection(build.raw.s, build.pos_pools);
  return build;
}

SteeringVector build_steering_vector(const ContrastiveDataset& ds, Backend& encoder) {
  return build_steering(ds, encoder).vector;
}

}  // namespace steerkit
