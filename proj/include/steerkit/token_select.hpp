#pragma once

// Which prompt tokens receive the steering vector.
//
// Edits are local, global or stylization; prompts are implicit (no concept
// pole word present) or explicit. Explicit prompts steer the pole words
// themselves. Implicit prompts steer the subject noun, except for global
// edits which steer every content word.

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "steerkit/llm.hpp"
#include "steerkit/tensor.hpp"

namespace steerkit {

enum class EditType { local, global, stylization };
enum class PromptClass { implicit_prompt, explicit_prompt };
enum class SelectionSource { llm, rule_fallback };

std::string_view edit_type_name(EditType t);
EditType parse_edit_type(std::string_view name);
std::string_view prompt_class_name(PromptClass c);
std::string_view selection_source_name(SelectionSource s);

struct ConceptEntry {
  std::vector<std::string> poles;
  EditType edit_type = EditType::local;
  // Descriptive words that are never chosen as the subject noun.
  std::vector<std::string> attributes;
};

// Lexicon file: a JSON object mapping concept name to
// {"poles": [...], "edit_type": "local"|"global"|"stylization",
//  "attributes": [...]?}. The optional array-valued keys "stopwords",
// "framing_nouns", "animate_nouns" and "attributes" at the top level
// replace the built-in word lists / add global attributes.
class ConceptLexicon {
 public:
  ConceptLexicon();

  static ConceptLexicon from_json(const nlohmann::json& j);
  static ConceptLexicon load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  void add(std::string concept_name, ConceptEntry entry);
  const ConceptEntry* find(std::string_view concept_name) const;

  bool is_stopword(std::string_view lower_word) const;
  bool is_framing(std::string_view lower_word) const;
  bool is_animate(std::string_view lower_word) const;
  bool is_attribute(std::string_view lower_word, const ConceptEntry* entry) const;

 private:
  std::map<std::string, ConceptEntry, std::less<>> concepts_;
  std::set<std::string, std::less<>> stopwords_;
  std::set<std::string, std::less<>> framing_;
  std::set<std::string, std::less<>> animate_;
  std::set<std::string, std::less<>> attributes_;
};

struct PromptWord {
  std::string text;
  std::size_t start = 0;
  std::size_t end = 0;
};

// Maximal runs of letters, digits, apostrophes and hyphens.
std::vector<PromptWord> prompt_words(std::string_view prompt);

struct TokenSelection {
  std::vector<std::string> words;
  std::optional<PromptClass> prompt_class;
  SelectionSource source = SelectionSource::rule_fallback;
  std::optional<TokenSpan> span;  // set once resolved against an embedding
};

// Deterministic rule engine. Throws NoSelectableToken when the prompt has
// no content words.
TokenSelection select_tokens_rules(std::string_view prompt, std::string_view concept_name,
                                   EditType edit_type, const ConceptLexicon& lexicon);

PromptClass classify_prompt(std::string_view prompt, std::string_view concept_name,
                            const ConceptLexicon& lexicon);

std::string token_selection_prompt(std::string_view prompt, std::string_view concept_name,
                                   EditType edit_type);

// Asks the LLM (temperature 0) and checks every returned word against the
// prompt. An unusable reply falls through to the rule engine when a
// lexicon is given, otherwise throws Validation.
TokenSelection select_tokens_llm(std::string_view prompt, std::string_view concept_name,
                                 EditType edit_type, LlmClient& llm,
                                 const ConceptLexicon* fallback = nullptr);

// Union of the token spans of each word's first occurrence. Whole-word
// matches win over substring matches.
TokenSpan resolve_selection(const std::vector<std::string>& words, const PromptEmbedding& emb);

}  // namespace steerkit
