#include <gtest/gtest.h>

#include "steerkit/config.hpp"
#include "steerkit/error.hpp"
#include "steerkit/synthetic_backend.hpp"
#include "steerkit/tensor_io.hpp"
#include "steerkit/token_select.hpp"
#include "support.hpp"

using namespace steerkit;

namespace {

struct Canonical {
  const char* prompt;
  const char* concept_name;
  EditType edit;
  PromptClass cls;
  std::vector<std::string> words;
};

const std::vector<Canonical>& canonical_examples() {
  static const std::vector<Canonical> cases{
      {"a woman in a park", "winter", EditType::global, PromptClass::implicit_prompt, {"woman", "park"}},
      {"a photorealistic lighthouse on a cliff", "cartoon", EditType::stylization, PromptClass::explicit_prompt,
       {"photorealistic"}},
      {"a lighthouse on a cliff", "cartoon", EditType::stylization, PromptClass::implicit_prompt, {"lighthouse"}},
      {"a portrait of a sad man", "smile", EditType::local, PromptClass::explicit_prompt, {"sad"}},
      {"a portrait of a man", "smile", EditType::local, PromptClass::implicit_prompt, {"man"}},
      {"a ripe tomato on the vine", "age", EditType::local, PromptClass::explicit_prompt, {"ripe"}},
      {"a tomato on the vine", "age", EditType::local, PromptClass::implicit_prompt, {"tomato"}},
  };
  return cases;
}

std::string joined(const std::vector<std::string>& w) {
  std::string out;
  for (const auto& s : w) out += (out.empty() ? "" : " ") + s;
  return out;
}

}  // namespace

class CanonicalExample : public ::testing::TestWithParam<std::size_t> {};

TEST_P(CanonicalExample, RuleEngine) {
  const auto& c = canonical_examples()[GetParam()];
  const auto lex = default_lexicon();
  ASSERT_NE(lex.find(c.concept_name), nullptr);
  EXPECT_EQ(lex.find(c.concept_name)->edit_type, c.edit);
  const auto sel = select_tokens_rules(c.prompt, c.concept_name, c.edit, lex);
  EXPECT_EQ(sel.words, c.words) << c.prompt;
  EXPECT_EQ(sel.prompt_class, c.cls);
  EXPECT_EQ(sel.source, SelectionSource::rule_fallback);
  EXPECT_EQ(classify_prompt(c.prompt, c.concept_name, lex), c.cls);
}

TEST_P(CanonicalExample, LlmPathWithReplay) {
  const auto& c = canonical_examples()[GetParam()];
  const auto lex = default_lexicon();
  ReplayLlmClient llm({"OUTPUT: " + joined(c.words)});
  const auto sel = select_tokens_llm(c.prompt, c.concept_name, c.edit, llm, &lex);
  EXPECT_EQ(sel.words, c.words);
  EXPECT_EQ(sel.source, SelectionSource::llm);
  EXPECT_EQ(sel.words, select_tokens_rules(c.prompt, c.concept_name, c.edit, lex).words);
  EXPECT_DOUBLE_EQ(llm.last_temperature(), 0.0);
  const auto req = llm.requests().at(0);
  const std::string all = req.front().content + req.back().content;
  EXPECT_NE(all.find(c.prompt), std::string::npos);
}

INSTANTIATE_TEST_SUITE_P(Canonical, CanonicalExample, ::testing::Range<std::size_t>(0, 7));

TEST(TokenSelect, ExplicitImpliesPoleWords) {
  const auto lex = default_lexicon();
  for (const auto& c : canonical_examples()) {
    const auto sel = select_tokens_rules(c.prompt, c.concept_name, c.edit, lex);
    const auto& poles = lex.find(c.concept_name)->poles;
    std::size_t hits = 0;
    for (const auto& w : sel.words) hits += std::count(poles.begin(), poles.end(), w);
    if (sel.prompt_class == PromptClass::explicit_prompt) {
      EXPECT_GE(hits, 1u) << c.prompt;
    } else {
      EXPECT_EQ(hits, 0u) << c.prompt;
    }
  }
}

TEST(TokenSelect, RuleExamplesAndErrors) {
  auto lex = default_lexicon();
  EXPECT_EQ(select_tokens_rules("a sad man", "smile", EditType::local, lex).words, std::vector<std::string>{"sad"});
  EXPECT_EQ(select_tokens_rules("a man", "smile", EditType::local, lex).words, std::vector<std::string>{"man"});
  try {
    (void)select_tokens_rules("the of a", "smile", EditType::local, lex);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::no_selectable_token);
  }
  // Deterministic.
  EXPECT_EQ(select_tokens_rules("a happy dog in snow", "smile", EditType::local, lex).words,
            select_tokens_rules("a happy dog in snow", "smile", EditType::local, lex).words);
}

TEST(TokenSelect, LlmReplyNotInPromptFallsBack) {
  const auto lex = default_lexicon();
  ReplayLlmClient llm({"OUTPUT: giraffe"});
  const auto sel = select_tokens_llm("a portrait of a man", "smile", EditType::local, llm, &lex);
  EXPECT_EQ(sel.source, SelectionSource::rule_fallback);
  EXPECT_EQ(sel.words, std::vector<std::string>{"man"});

  ReplayLlmClient bare({"giraffe"});
  EXPECT_THROW((void)select_tokens_llm("a portrait of a man", "smile", EditType::local, bare), Error);

  ReplayLlmClient chatty({"Let me think.\nOUTPUT: Man."});
  EXPECT_EQ(select_tokens_llm("a portrait of a man", "smile", EditType::local, chatty, &lex).words,
            std::vector<std::string>{"man"});
}

TEST(TokenSelect, PromptTemplate) {
  const std::string p = token_selection_prompt("a woman in a park", "winter", EditType::global);
  EXPECT_NE(p.find("PROMPT: \"a woman in a park\""), std::string::npos);
  EXPECT_NE(p.find("CONCEPT: \"winter\" (Global Edit)"), std::string::npos);
  EXPECT_EQ(p.find("{PROMPT}"), std::string::npos);
  EXPECT_EQ(p.substr(p.size() - 7), "OUTPUT:");
}

TEST(TokenSelect, ResolveSelection) {
  SyntheticBackend b(testsupport::saturating_world());
  const auto emb = b.encode("a woman in a park");
  EXPECT_EQ(resolve_selection({"woman", "park"}, emb), (TokenSpan{1, 4}));
  // "man" is inside "woman" but also a whole word later on.
  const auto both = b.encode("a woman and a man");
  EXPECT_EQ(resolve_selection({"man"}, both), (TokenSpan{4}));
  const auto one = b.encode("lighthouse");
  EXPECT_EQ(resolve_selection({"lighthouse"}, one), (TokenSpan{0}));
  EXPECT_THROW((void)resolve_selection({"giraffe"}, emb), Error);
}

TEST(TokenSelect, LexiconFileMatchesBuiltIn) {
  const auto path = std::filesystem::path(STEERKIT_DATA_DIR) / "default_lexicon.json";
  EXPECT_EQ(ConceptLexicon::load(path).to_json(), default_lexicon().to_json());
  const auto j = default_lexicon().to_json();
  EXPECT_EQ(ConceptLexicon::from_json(j).to_json(), j);
}

TEST(TokenSelect, LexiconWordListsOverride) {
  auto j = nlohmann::json::parse(R"({"smile": {"poles": ["sad", "happy"], "edit_type": "local"},
                                     "framing_nouns": ["shot"], "animate_nouns": []})");
  const auto lex = ConceptLexicon::from_json(j);
  EXPECT_TRUE(lex.is_framing("shot"));
  EXPECT_FALSE(lex.is_framing("portrait"));
  EXPECT_EQ(select_tokens_rules("a portrait of a man", "smile", EditType::local, lex).words,
            std::vector<std::string>{"portrait"});
  EXPECT_THROW((void)ConceptLexicon::from_json(nlohmann::json::parse(R"({"x": {"edit_type": "local"}})")), Error);
}

TEST(TokenSelect, PromptWordsCarryOffsets) {
  const auto w = prompt_words("a dog's day-off, ok");
  ASSERT_EQ(w.size(), 4u);
  EXPECT_EQ(w[1].text, "dog's");
  EXPECT_EQ(w[2].text, "day-off");
  EXPECT_EQ(w[2].start, 8u);
  EXPECT_EQ(w[2].end, 15u);
}
