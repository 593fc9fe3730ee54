#include "steerkit/token_select.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "steerkit/dataset.hpp"
#include "steerkit/error.hpp"
#include "steerkit/tensor_io.hpp"

namespace steerkit {

namespace {

using nlohmann::json;
using WordSet = std::set<std::string, std::less<>>;

const WordSet& default_stopwords() {
  static const WordSet words{
      "a",       "an",      "the",     "of",      "in",     "on",      "at",      "by",
      "for",     "with",    "without", "to",      "from",   "into",    "onto",    "near",
      "under",   "over",    "above",   "below",   "behind", "beside",  "between", "through",
      "along",   "across",  "around",  "against", "beyond", "toward",  "towards", "inside",
      "outside", "upon",    "within",  "and",     "or",     "but",     "nor",     "is",
      "are",     "was",     "were",    "be",      "being",  "been",    "it",      "its",
      "this",    "that",    "these",   "those",   "his",    "her",     "their",   "my",
      "your",    "our",     "as",      "while",   "very",   "some",    "any",     "there",
      "here",    "up",      "down",    "out",     "off",    "has",     "have",    "who",
      "which",   "whose",   "where",   "when",    "than",   "then",    "so",      "such"};
  return words;
}

// Nouns that name the picture rather than its subject.
const WordSet& default_framing() {
  static const WordSet words{"image",     "picture",      "photo",   "photograph", "portrait",
                             "shot",      "scene",        "view",    "painting",   "illustration",
                             "rendering", "render",       "drawing", "snapshot",   "depiction",
                             "sketch",    "artwork",      "frame",   "still"};
  return words;
}

const WordSet& default_animate() {
  static const WordSet words{
      "man",     "men",      "woman",   "women",    "person",   "people",  "child",
      "children", "boy",     "boys",    "girl",     "girls",    "baby",    "kid",
      "kids",    "face",     "human",   "lady",     "gentleman", "teenager", "toddler",
      "grandmother", "grandfather", "mother", "father", "son", "daughter", "family",
      "crowd",   "worker",   "chef",    "doctor",   "soldier",  "firefighter", "farmer",
      "student", "athlete",  "dancer",  "musician", "surfer",   "runner",  "rider",
      "dog",     "dogs",     "puppy",   "cat",      "cats",     "kitten",  "horse",
      "bird",    "birds",    "cow",     "sheep",    "lion",     "tiger",   "bear",
      "monkey",  "elephant", "rabbit",  "fox",      "wolf",     "deer",    "owl",
      "fish",    "animal",   "animals", "robot",    "knight",   "king",    "queen",
      "fruit"};
  return words;
}

bool is_word_byte(unsigned char c) {
  return std::isalnum(c) || c == '\'' || c == '-' || c >= 0x80;
}

std::string strip_punctuation(std::string_view w) {
  std::size_t b = 0;
  std::size_t e = w.size();
  while (b < e && !is_word_byte(static_cast<unsigned char>(w[b]))) ++b;
  while (e > b && !is_word_byte(static_cast<unsigned char>(w[e - 1]))) --e;
  return std::string(w.substr(b, e - b));
}

WordSet word_set(const json& arr, std::string_view key) {
  if (!arr.is_array()) throw Error(Errc::parse, fmt::format("lexicon key \"{}\" must be an array", key));
  WordSet out;
  for (const auto& w : arr) out.insert(to_lower(w.get<std::string>()));
  return out;
}

std::vector<std::string> word_list(const json& arr, std::string_view key) {
  if (!arr.is_array()) throw Error(Errc::parse, fmt::format("\"{}\" must be an array", key));
  std::vector<std::string> out;
  for (const auto& w : arr) out.push_back(to_lower(w.get<std::string>()));
  return out;
}

// Content words in prompt order, first occurrence only, original case.
std::vector<PromptWord> content_words(std::string_view prompt, const ConceptLexicon& lexicon) {
  std::vector<PromptWord> out;
  std::set<std::string> seen;
  for (auto& w : prompt_words(prompt)) {
    const std::string lower = to_lower(w.text);
    if (lexicon.is_stopword(lower) || !seen.insert(lower).second) continue;
    out.push_back(std::move(w));
  }
  return out;
}

std::vector<std::string> matched_poles(const std::vector<PromptWord>& words,
                                       const ConceptEntry* entry) {
  std::vector<std::string> out;
  if (entry == nullptr) return out;
  for (const auto& w : words) {
    const std::string lower = to_lower(w.text);
    if (std::find(entry->poles.begin(), entry->poles.end(), lower) != entry->poles.end()) {
      out.push_back(w.text);
    }
  }
  return out;
}

constexpr std::string_view kSelectionTemplate = R"(You are an expert token selection assistant. Your job is to identify the exact tokens from a PROMPT that should be steered, based on a steering CONCEPT.

DEFINITIONS

CONCEPT TYPE:
	•	Local Edit: A trait that applies to a specific subject (e.g., "smile", "age", "ripe", "sad").
	•	Stylization Edit: A rendering style (e.g., "photorealistic", "cartoon", "anime", "dark").
	•	Global Edit: A change to the entire scene’s context or environment (e.g., "winter", "summer", "crowded").

PROMPT TYPE:
	•	Implicit: The prompt is neutral and does not contain words related to the concept (e.g., PROMPT: "a man", CONCEPT: "smile").
	•	Explicit: The prompt contains a word related to the concept, usually a positive or negative pole (e.g., PROMPT: "a sad man", CONCEPT: "smile"; PROMPT: "a photorealistic man", CONCEPT: "cartoon").

---

RULES (Apply in order)
	1.	If the CONCEPT is a "Global Edit":
	•	-> Output all meaningful content words from the prompt that describe the scene or objects (ignore filler words and punctuation).
	•	Do not include articles, prepositions, or conjunctions unless they are semantically part of a named object or phrase.
	2.	If the CONCEPT is a "Stylization Edit":
	•	If the PROMPT is Explicit:
-> Output only the explicit style or appearance words (e.g., "photorealistic", "cinematic", "cartoon").
	•	If the PROMPT is Implicit:
-> Output only the main subject nouns that the style can logically apply to (e.g., "man", "lighthouse", "forest").
	3.	If the CONCEPT is a "Local Edit":
	•	If the PROMPT is Explicit:
-> Output only the explicit descriptive or emotional words expressing the local attribute (e.g., "sad", "old", "angry", "smiling").
	•	If the PROMPT is Implicit:
-> Output only the subject nouns that the local attribute can naturally attach to (e.g., "man", "woman", "child", "face", "fruit").
Prefer the main human, animal, or animate entity; if none, choose the most central object noun in the description.
	5.	General constraints:
	•	Exclude punctuation and purely functional words (articles, prepositions, etc.).
	•	Return only the minimal set of tokens required to attach the concept.
---

EXAMPLES

Global Edit:
	•	PROMPT: "a woman in a park", CONCEPT: "winter" (Global Edit)
	•	OUTPUT: woman park

Stylization Edit:
	•	PROMPT: "a photorealistic lighthouse on a cliff", CONCEPT: "cartoon" (Stylization Edit, Explicit)
	•	OUTPUT: photorealistic
	•	PROMPT: "a lighthouse on a cliff", CONCEPT: "cartoon" (Stylization Edit, Implicit)
	•	OUTPUT: lighthouse

Local Edit:
	•	PROMPT: "a portrait of a sad man", CONCEPT: "smile" (Local Edit, Explicit)
	•	OUTPUT: sad
	•	PROMPT: "a portrait of a man", CONCEPT: "smile" (Local Edit, Implicit)
	•	OUTPUT: man
	•	PROMPT: "a ripe tomato on the vine", CONCEPT: "age" (Local Edit, Explicit)
	•	OUTPUT: ripe
	•	PROMPT: "a tomato on the vine", CONCEPT: "age" (Local Edit, Implicit)
	•	OUTPUT: tomato

---

YOUR TASK

Analyze the following PROMPT and CONCEPT using this logic. Provide ONLY the specific tokens to steer, separated by a single space. Do not add any commentary, explanation, or punctuation.

PROMPT: "{PROMPT}"
CONCEPT: "{CONCEPT}" ({EDIT_TYPE})
OUTPUT:)";

std::string edit_type_label(EditType t) {
  switch (t) {
    case EditType::local: return "Local Edit";
    case EditType::global: return "Global Edit";
    case EditType::stylization: return "Stylization Edit";
  }
  return {};
}

// Last nonblank line of the reply, minus an "OUTPUT:" label, split on
// whitespace with quotes and trailing punctuation removed.
std::vector<std::string> parse_selection_reply(const std::string& reply) {
  const std::string body = strip_reply_wrapping(reply);
  std::string line;
  std::istringstream lines(body);
  for (std::string l; std::getline(lines, l);) {
    if (l.find_first_not_of(" \t\r") != std::string::npos) line = l;
  }
  const auto label = to_lower(line).find("output:");
  if (label != std::string::npos) line = line.substr(label + 7);
  std::vector<std::string> words;
  std::istringstream in(line);
  for (std::string w; in >> w;) {
    std::string clean = strip_punctuation(w);
    if (!clean.empty()) words.push_back(std::move(clean));
  }
  return words;
}

// First whole-word occurrence of `word` (case-insensitive), else npos.
std::size_t find_whole_word(const std::string& lower_text, const std::string& lower_word) {
  for (std::size_t pos = lower_text.find(lower_word); pos != std::string::npos;
       pos = lower_text.find(lower_word, pos + 1)) {
    const std::size_t end = pos + lower_word.size();
    const bool left_ok = pos == 0 || !is_word_byte(static_cast<unsigned char>(lower_text[pos - 1]));
    const bool right_ok =
        end == lower_text.size() || !is_word_byte(static_cast<unsigned char>(lower_text[end]));
    if (left_ok && right_ok) return pos;
  }
  return std::string::npos;
}

}  // namespace

std::string_view edit_type_name(EditType t) {
  switch (t) {
    case EditType::local: return "local";
    case EditType::global: return "global";
    case EditType::stylization: return "stylization";
  }
  return "local";
}

EditType parse_edit_type(std::string_view name) {
  const std::string lower = to_lower(name);
  if (lower == "local") return EditType::local;
  if (lower == "global") return EditType::global;
  if (lower == "stylization") return EditType::stylization;
  throw Error(Errc::usage,
              fmt::format("unknown edit type '{}' (expected local, global or stylization)", name));
}

std::string_view prompt_class_name(PromptClass c) {
  return c == PromptClass::explicit_prompt ? "explicit" : "implicit";
}

std::string_view selection_source_name(SelectionSource s) {
  return s == SelectionSource::llm ? "llm" : "rule_fallback";
}

ConceptLexicon::ConceptLexicon()
    : stopwords_(default_stopwords()), framing_(default_framing()), animate_(default_animate()) {}

ConceptLexicon ConceptLexicon::from_json(const json& j) {
  if (!j.is_object()) throw Error(Errc::parse, "lexicon must be a JSON object");
  ConceptLexicon lex;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "stopwords") {
        lex.stopwords_ = word_set(value, key);
      } else if (key == "framing_nouns") {
        lex.framing_ = word_set(value, key);
      } else if (key == "animate_nouns") {
        lex.animate_ = word_set(value, key);
      } else if (key == "attributes") {
        lex.attributes_ = word_set(value, key);
      } else {
        if (!value.is_object()) {
          throw Error(Errc::parse, fmt::format("lexicon entry \"{}\" must be an object", key));
        }
        ConceptEntry entry;
        entry.poles = word_list(value.at("poles"), key + ".poles");
        entry.edit_type = parse_edit_type(value.value("edit_type", std::string("local")));
        if (value.contains("attributes")) {
          entry.attributes = word_list(value.at("attributes"), key + ".attributes");
        }
        lex.add(key, std::move(entry));
      }
    }
  } catch (const json::exception& e) {
    throw Error(Errc::parse, fmt::format("bad lexicon: {}", e.what()));
  }
  return lex;
}

ConceptLexicon ConceptLexicon::load(const std::filesystem::path& path) {
  return from_json(read_json_file(path));
}

json ConceptLexicon::to_json() const {
  json j = json::object();
  for (const auto& [name, entry] : concepts_) {
    json e{{"poles", entry.poles}, {"edit_type", edit_type_name(entry.edit_type)}};
    if (!entry.attributes.empty()) e["attributes"] = entry.attributes;
    j[name] = std::move(e);
  }
  if (!attributes_.empty()) j["attributes"] = attributes_;
  return j;
}

void ConceptLexicon::add(std::string concept_name, ConceptEntry entry) {
  for (auto& p : entry.poles) p = to_lower(p);
  for (auto& a : entry.attributes) a = to_lower(a);
  concepts_[to_lower(concept_name)] = std::move(entry);
}

const ConceptEntry* ConceptLexicon::find(std::string_view concept_name) const {
  const auto it = concepts_.find(to_lower(concept_name));
  return it == concepts_.end() ? nullptr : &it->second;
}

bool ConceptLexicon::is_stopword(std::string_view w) const { return stopwords_.count(w) > 0; }
bool ConceptLexicon::is_framing(std::string_view w) const { return framing_.count(w) > 0; }
bool ConceptLexicon::is_animate(std::string_view w) const { return animate_.count(w) > 0; }

bool ConceptLexicon::is_attribute(std::string_view w, const ConceptEntry* entry) const {
  if (attributes_.count(w) > 0) return true;
  if (entry == nullptr) return false;
  const auto has = [w](const std::vector<std::string>& v) {
    return std::find(v.begin(), v.end(), w) != v.end();
  };
  return has(entry->attributes) || has(entry->poles);
}

std::vector<PromptWord> prompt_words(std::string_view prompt) {
  std::vector<PromptWord> out;
  std::size_t i = 0;
  while (i < prompt.size()) {
    if (!is_word_byte(static_cast<unsigned char>(prompt[i]))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < prompt.size() && is_word_byte(static_cast<unsigned char>(prompt[j]))) ++j;
    // Trim apostrophes/hyphens hanging off either end ("'hello'").
    std::size_t b = i;
    std::size_t e = j;
    while (b < e && (prompt[b] == '\'' || prompt[b] == '-')) ++b;
    while (e > b && (prompt[e - 1] == '\'' || prompt[e - 1] == '-')) --e;
    if (b < e) out.push_back({std::string(prompt.substr(b, e - b)), b, e});
    i = j;
  }
  return out;
}

PromptClass classify_prompt(std::string_view prompt, std::string_view concept_name,
                            const ConceptLexicon& lexicon) {
  const auto words = prompt_words(prompt);
  return matched_poles(words, lexicon.find(concept_name)).empty() ? PromptClass::implicit_prompt
                                                                   : PromptClass::explicit_prompt;
}

TokenSelection select_tokens_rules(std::string_view prompt, std::string_view concept_name,
                                   EditType edit_type, const ConceptLexicon& lexicon) {
  const auto content = content_words(prompt, lexicon);
  if (content.empty()) {
    throw Error(Errc::no_selectable_token,
                fmt::format("\"{}\" has no content words to steer", prompt));
  }
  const ConceptEntry* entry = lexicon.find(concept_name);
  if (entry == nullptr) {
    spdlog::warn("concept \"{}\" is not in the lexicon; treating the prompt as implicit",
                 concept_name);
  }

  TokenSelection sel;
  sel.source = SelectionSource::rule_fallback;
  if (auto poles = matched_poles(content, entry); !poles.empty()) {
    sel.prompt_class = PromptClass::explicit_prompt;
    sel.words = std::move(poles);
    return sel;
  }
  sel.prompt_class = PromptClass::implicit_prompt;

  // Picture-framing nouns ("portrait", "image") are never the subject.
  std::vector<const PromptWord*> subjects;
  for (const auto& w : content) {
    if (!lexicon.is_framing(to_lower(w.text))) subjects.push_back(&w);
  }

  if (edit_type == EditType::global) {
    if (subjects.empty()) {
      for (const auto& w : content) sel.words.push_back(w.text);
    } else {
      for (const auto* w : subjects) sel.words.push_back(w->text);
    }
    return sel;
  }

  std::vector<const PromptWord*> nouns;
  for (const auto* w : subjects) {
    if (!lexicon.is_attribute(to_lower(w->text), entry)) nouns.push_back(w);
  }
  const PromptWord* pick = nullptr;
  if (edit_type == EditType::local) {
    const auto animate = std::find_if(nouns.begin(), nouns.end(), [&](const PromptWord* w) {
      return lexicon.is_animate(to_lower(w->text));
    });
    if (animate != nouns.end()) pick = *animate;
  }
  if (pick == nullptr && !nouns.empty()) pick = nouns.front();
  if (pick == nullptr) pick = subjects.empty() ? &content.front() : subjects.front();
  sel.words.push_back(pick->text);
  return sel;
}

std::string token_selection_prompt(std::string_view prompt, std::string_view concept_name,
                                   EditType edit_type) {
  std::string text(kSelectionTemplate);
  const auto put = [&text](std::string_view key, std::string_view value) {
    const auto pos = text.find(key);
    if (pos != std::string::npos) text.replace(pos, key.size(), value);
  };
  put("{PROMPT}", prompt);
  put("{CONCEPT}", concept_name);
  put("{EDIT_TYPE}", edit_type_label(edit_type));
  return text;
}

TokenSelection select_tokens_llm(std::string_view prompt, std::string_view concept_name,
                                 EditType edit_type, LlmClient& llm,
                                 const ConceptLexicon* fallback) {
  if (prompt.empty()) throw Error(Errc::usage, "prompt must be nonempty");
  const std::string reply =
      llm.complete({{"system", token_selection_prompt(prompt, concept_name, edit_type)}}, 0.0);
  std::vector<std::string> words = parse_selection_reply(reply);

  const std::string lower_prompt = to_lower(prompt);
  std::string problem;
  if (words.empty()) problem = "empty reply";
  std::vector<std::string> kept;
  for (const auto& w : words) {
    const std::string lower = to_lower(w);
    const std::size_t at = find_whole_word(lower_prompt, lower);
    if (at == std::string::npos) {
      problem = fmt::format("\"{}\" does not occur in the prompt", w);
      break;
    }
    const bool dup = std::any_of(kept.begin(), kept.end(),
                                 [&](const std::string& k) { return to_lower(k) == lower; });
    // Report the word as the prompt spells it.
    if (!dup) kept.push_back(std::string(prompt.substr(at, lower.size())));
  }

  if (problem.empty()) {
    TokenSelection sel;
    sel.words = std::move(kept);
    sel.source = SelectionSource::llm;
    if (fallback != nullptr) sel.prompt_class = classify_prompt(prompt, concept_name, *fallback);
    return sel;
  }
  if (fallback == nullptr) {
    throw Error(Errc::validation,
                fmt::format("unusable token selection reply ({}): {}", problem, reply));
  }
  spdlog::warn("token selection reply rejected ({}); using the rule engine", problem);
  return select_tokens_rules(prompt, concept_name, edit_type, *fallback);
}

TokenSpan resolve_selection(const std::vector<std::string>& words, const PromptEmbedding& emb) {
  if (words.empty()) throw Error(Errc::no_selectable_token, "no words to resolve");
  const std::string lower_prompt = to_lower(emb.prompt_text());
  TokenSpan span;
  for (const auto& w : words) {
    const std::string lower = to_lower(w);
    const std::size_t start = find_whole_word(lower_prompt, lower);
    if (start == std::string::npos) {
      span = span.merged(locate_style_span(emb, w));
      continue;
    }
    const std::size_t end = start + lower.size();
    std::vector<std::size_t> hits;
    for (std::size_t i = 0; i < emb.num_tokens(); ++i) {
      const auto& t = emb.tokens()[i];
      if (t.start < end && t.end > start) hits.push_back(i);
    }
    if (hits.empty()) {
      throw Error(Errc::overlap_empty, fmt::format("no token overlaps \"{}\"", w));
    }
    span = span.merged(TokenSpan(std::move(hits)));
  }
  return span;
}

}  // namespace steerkit
